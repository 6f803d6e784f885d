use rand::Rng;

use crate::error::Result;
use crate::numkit::Tensor;

use super::{Color, Position, SceneSpec, Shape, Size};

/// Background gray level in 8-bit units.
pub const BACKGROUND: u8 = 128;

/// RGB image stored channel-major (`3×S×S`), values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    side: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(side: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * side * side);
        for ch in rgb {
            data.extend(std::iter::repeat(byte_to_unit(ch)).take(side * side));
        }
        Self { side, data }
    }

    pub fn from_data(side: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * side * side {
            return crate::error::dim_err(format!(
                "image of side {side} needs {} values, got {}",
                3 * side * side,
                data.len()
            ));
        }
        Ok(Self { side, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let p = self.side * self.side;
        let i = y * self.side + x;
        [self.data[i], self.data[p + i], self.data[2 * p + i]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let p = self.side * self.side;
        let i = y * self.side + x;
        self.data[i] = rgb[0];
        self.data[p + i] = rgb[1];
        self.data[2 * p + i] = rgb[2];
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, 3, self.side, self.side], self.data.clone()).expect("consistent shape")
    }

    /// Stacks images into an `N×3×S×S` tensor.
    pub fn batch(images: &[&Image]) -> Result<Tensor<f32>> {
        let side = images.first().map_or(0, |i| i.side);
        let mut data = Vec::with_capacity(images.len() * 3 * side * side);
        for img in images {
            if img.side != side {
                return crate::error::dim_err("images in a batch must share a side");
            }
            data.extend_from_slice(&img.data);
        }
        Tensor::new(vec![images.len(), 3, side, side], data)
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|&v| (0.0..=1.0).contains(&v))
    }
}

pub(crate) fn byte_to_unit(b: u8) -> f32 {
    b as f32 / 255.0
}

pub(crate) fn palette(color: Color) -> [u8; 3] {
    match color {
        Color::Red => [230, 26, 26],
        Color::Green => [26, 204, 26],
        Color::Blue => [26, 51, 230],
        Color::Yellow => [242, 217, 26],
    }
}

/// Side lengths (small, large) of the shape bounding box for an image side.
pub(crate) fn box_sides(side: usize) -> (usize, usize) {
    let small = side / 4;
    let large = 2 * ((side * 7 + 16) / 32);
    (small, large)
}

/// Integer box centre for a position.
pub(crate) fn box_center(side: usize, pos: Position) -> (usize, usize) {
    let (q1, q3, mid) = (side / 4, 3 * side / 4, side / 2);
    match pos {
        Position::TopLeft => (q1, q1),
        Position::TopRight => (q3, q1),
        Position::BottomLeft => (q1, q3),
        Position::BottomRight => (q3, q3),
        Position::Center => (mid, mid),
    }
}

/// Box side and top-left corner for a shape of `size` at `pos`.
pub(crate) fn shape_box(size: Size, pos: Position, side: usize) -> (usize, usize, usize) {
    let (small, large) = box_sides(side);
    let bx = match size {
        Size::Small => small,
        Size::Large => large,
    };
    let (cx, cy) = box_center(side, pos);
    (bx, cx - bx / 2, cy - bx / 2)
}

/// Arm width of the cross: closest value to 30% of the box with the same
/// parity as the box, so the arms sit symmetrically.
pub(crate) fn cross_arm(bx: usize) -> usize {
    let target = bx as f64 * 0.3;
    let mut best = bx % 2;
    let mut a = best;
    while a <= bx {
        if (a as f64 - target).abs() < (best as f64 - target).abs() || best == 0 {
            best = a;
        }
        a += 2;
    }
    best.max(1)
}

/// Whether cell `(c, r)` of a `bx×bx` box is covered by `shape`.
pub(crate) fn covers(shape: Shape, bx: usize, c: usize, r: usize) -> bool {
    let b = bx as i64;
    let (ci, ri) = (c as i64, r as i64);
    match shape {
        Shape::Square => true,
        Shape::Circle => {
            let dx = 2 * ci + 1 - b;
            let dy = 2 * ri + 1 - b;
            dx * dx + dy * dy <= b * b
        }
        Shape::Triangle => (2 * ci + 1 - b).abs() <= ri + 1,
        Shape::Cross => {
            let a = cross_arm(bx) as i64;
            let lo = (b - a) / 2;
            (ci >= lo && ci < lo + a) || (ri >= lo && ri < lo + a)
        }
    }
}

/// Rasterises `spec` on a gray `side×side` canvas. No anti-aliasing; every
/// value is an exact multiple of 1/255.
pub fn render(spec: &SceneSpec, side: usize) -> Image {
    let mut img = Image::filled(side, [BACKGROUND; 3]);
    let (bx, x0, y0) = shape_box(spec.size, spec.position, side);
    let rgb = palette(spec.color).map(byte_to_unit);
    for r in 0..bx {
        for c in 0..bx {
            if covers(spec.shape, bx, c, r) {
                img.set_pixel(x0 + c, y0 + r, rgb);
            }
        }
    }
    img
}

/// Replaces a fraction `frac` of pixels with pure black or white.
pub fn salt_and_pepper<R: Rng + ?Sized>(img: &Image, frac: f64, rng: &mut R) -> Image {
    let mut out = img.clone();
    for y in 0..img.side {
        for x in 0..img.side {
            if rng.gen_bool(frac) {
                let v = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
                out.set_pixel(x, y, [v; 3]);
            }
        }
    }
    out
}
