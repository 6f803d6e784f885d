use super::render::{byte_to_unit, covers, palette, shape_box, BACKGROUND};
use super::{Color, Image, Position, SceneSpec, Shape, Size};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Background,
    Noise,
    Fg(Color),
}

fn classify(p: [f32; 3], refs: &[(Class, [f32; 3]); 7]) -> Class {
    let mut best = (Class::Background, f32::INFINITY);
    for &(class, r) in refs {
        let d: f32 = (0..3).map(|i| (p[i] - r[i]).powi(2)).sum();
        if d < best.1 {
            best = (class, d);
        }
    }
    best.0
}

fn references() -> [(Class, [f32; 3]); 7] {
    let fg = |c: Color| (Class::Fg(c), palette(c).map(byte_to_unit));
    [
        (Class::Background, [byte_to_unit(BACKGROUND); 3]),
        (Class::Noise, [0.0; 3]),
        (Class::Noise, [1.0; 3]),
        fg(Color::Red),
        fg(Color::Green),
        fg(Color::Blue),
        fg(Color::Yellow),
    ]
}

/// Foreground silhouette of a clean render.
fn silhouette(shape: Shape, size: Size, position: Position, side: usize) -> Vec<bool> {
    let mut out = vec![false; side * side];
    let (bx, x0, y0) = shape_box(size, position, side);
    for r in 0..bx {
        for c in 0..bx {
            if covers(shape, bx, c, r) {
                out[(y0 + r) * side + x0 + c] = true;
            }
        }
    }
    out
}

/// Recovers the scene spec from pixels alone, or `None` when no foreground
/// colour is present.
///
/// Colour is the most frequent palette colour. Shape, size and position come
/// from the clean silhouette with the highest intersection-over-union
/// against that colour's mask. Black and white pixels are treated as
/// unknown and excluded from the comparison.
pub fn oracle(img: &Image) -> Option<SceneSpec> {
    let side = img.side();
    let refs = references();
    let mut classes = Vec::with_capacity(side * side);
    let mut counts = [0usize; 4];
    for y in 0..side {
        for x in 0..side {
            let c = classify(img.pixel(x, y), &refs);
            if let Class::Fg(col) = c {
                counts[col as usize] += 1;
            }
            classes.push(c);
        }
    }
    let (ci, &n) = counts
        .iter()
        .enumerate()
        .max_by_key(|&(i, &n)| (n, std::cmp::Reverse(i)))?;
    if n == 0 {
        return None;
    }
    let color = Color::ALL[ci];

    let mut best: Option<(f64, SceneSpec)> = None;
    for shape in Shape::ALL {
        for size in Size::ALL {
            for position in Position::ALL {
                let sil = silhouette(shape, size, position, side);
                let (mut inter, mut union) = (0usize, 0usize);
                for (i, &s) in sil.iter().enumerate() {
                    let m = match classes[i] {
                        Class::Noise => continue,
                        c => c == Class::Fg(color),
                    };
                    inter += (m && s) as usize;
                    union += (m || s) as usize;
                }
                let iou = inter as f64 / union.max(1) as f64;
                if best.map_or(true, |(b, _)| iou > b) {
                    best = Some((iou, SceneSpec::new(shape, color, size, position)));
                }
            }
        }
    }
    best.map(|(_, s)| s)
}
