use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Image, Sample, SceneSpec, Splits, Vocab, NUM_TEMPLATES};

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a binary PPM (P6).
pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    let s = img.side();
    let mut buf = format!("P6\n{s} {s}\n255\n").into_bytes();
    for y in 0..s {
        for x in 0..s {
            buf.extend(img.pixel(x, y).map(to_byte));
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a square binary PPM with maxval 255.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format(format!(
                "{}: truncated PPM header",
                path.display()
            )));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    i += 1;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if fields[0] != "P6" {
        return Err(bad("not a binary PPM"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("maxval must be 255"));
    }
    if w != h {
        return Err(bad("image must be square"));
    }
    let px = bytes
        .get(i..i + 3 * w * h)
        .ok_or_else(|| bad("truncated pixel data"))?;
    let mut img = Image::filled(w, [0; 3]);
    for y in 0..h {
        for x in 0..w {
            let o = 3 * (y * w + x);
            img.set_pixel(
                x,
                y,
                [px[o], px[o + 1], px[o + 2]].map(|b| b as f32 / 255.0),
            );
        }
    }
    Ok(img)
}

fn write_split(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut meta = fs::File::create(dir.join("metadata.tsv"))?;
    for (i, s) in samples.iter().enumerate() {
        write_ppm(&dir.join(format!("{i:05}.ppm")), &s.image)?;
        writeln!(meta, "{}\t{}", s.spec.id(), s.caption)?;
    }
    Ok(())
}

fn read_split(dir: &Path, vocab: &Vocab) -> Result<Vec<Sample>> {
    let meta = fs::File::open(dir.join("metadata.tsv"))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(meta).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("{}: bad metadata line {}", dir.display(), i + 1));
        let mut parts = line.splitn(2, '\t');
        let spec = parts
            .next()
            .and_then(|p| p.parse().ok())
            .and_then(SceneSpec::from_id)
            .ok_or_else(bad)?;
        let caption = parts.next().ok_or_else(bad)?.to_string();
        let template = (0..NUM_TEMPLATES)
            .find(|&t| super::caption(&spec, t).is_ok_and(|c| c == caption))
            .ok_or_else(bad)?;
        let tokens = vocab.encode(&caption)?;
        let image = read_ppm(&dir.join(format!("{i:05}.ppm")))?;
        out.push(Sample {
            spec,
            template,
            caption,
            tokens,
            image,
        });
    }
    Ok(out)
}

/// Writes `train/` and `val/` subdirectories of PPM files plus a
/// `metadata.tsv` (spec id, caption) in each.
pub fn write_dataset_dir(dir: &Path, splits: &Splits) -> Result<()> {
    write_split(&dir.join("train"), &splits.train)?;
    write_split(&dir.join("val"), &splits.val)
}

pub fn read_dataset_dir(dir: &Path) -> Result<Splits> {
    let vocab = Vocab::new();
    let train = read_split(&dir.join("train"), &vocab)?;
    let val = read_split(&dir.join("val"), &vocab)?;
    let side = train
        .first()
        .map(|s| s.image.side())
        .ok_or_else(|| Error::Format(format!("{}: empty training split", dir.display())))?;
    Ok(Splits {
        train,
        val,
        vocab,
        side,
    })
}
