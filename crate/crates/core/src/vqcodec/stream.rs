use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::TokenSequence;

const MAGIC: [u8; 4] = *b"VQTS";
const VERSION: u16 = 1;

/// Token sequences sharing one grid shape and codebook size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenStream {
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub seqs: Vec<TokenSequence>,
}

/// Layout: magic, u16 version, u32 K, u16 h, u16 w, then every sequence as
/// little-endian u16 indices.
pub fn write_token_stream(path: &Path, stream: &TokenStream) -> Result<()> {
    if stream.k > u16::MAX as usize + 1
        || stream.h > u16::MAX as usize
        || stream.w > u16::MAX as usize
    {
        return Err(Error::Format(
            "token stream dimensions exceed the u16 format".into(),
        ));
    }
    let mut buf = Vec::with_capacity(12 + 2 * stream.h * stream.w * stream.seqs.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(stream.k as u32).to_le_bytes());
    buf.extend_from_slice(&(stream.h as u16).to_le_bytes());
    buf.extend_from_slice(&(stream.w as u16).to_le_bytes());
    for s in &stream.seqs {
        if s.h != stream.h || s.w != stream.w {
            return crate::error::dim_err("token sequence grid differs from stream header");
        }
        for &t in &s.ids {
            if t >= stream.k {
                return Err(Error::Token(format!(
                    "token {t} outside codebook of {}",
                    stream.k
                )));
            }
            buf.extend_from_slice(&(t as u16).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_token_stream(path: &Path) -> Result<TokenStream> {
    let b = fs::read(path)?;
    if b.len() < 14 {
        return Err(Error::Format(format!(
            "{}: truncated token stream header",
            path.display()
        )));
    }
    let magic: [u8; 4] = b[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes([b[4], b[5]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let k = u32::from_le_bytes(b[6..10].try_into().expect("4 bytes")) as usize;
    let h = u16::from_le_bytes([b[10], b[11]]) as usize;
    let w = u16::from_le_bytes([b[12], b[13]]) as usize;
    let body = &b[14..];
    let per = 2 * h * w;
    if per == 0 || body.len() % per != 0 {
        return Err(Error::Format(format!(
            "{}: body is not a whole number of sequences",
            path.display()
        )));
    }
    let mut seqs = Vec::with_capacity(body.len() / per);
    for chunk in body.chunks(per) {
        let ids: Vec<usize> = chunk
            .chunks(2)
            .map(|p| u16::from_le_bytes([p[0], p[1]]) as usize)
            .collect();
        if let Some(&bad) = ids.iter().find(|&&t| t >= k) {
            return Err(Error::Token(format!("token {bad} outside codebook of {k}")));
        }
        seqs.push(TokenSequence::new(h, w, ids)?);
    }
    Ok(TokenStream { k, h, w, seqs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.vqts");
        let st = TokenStream {
            k: 300,
            h: 2,
            w: 3,
            seqs: vec![
                TokenSequence::new(2, 3, vec![0, 1, 299, 4, 5, 6]).unwrap(),
                TokenSequence::new(2, 3, vec![7; 6]).unwrap(),
            ],
        };
        write_token_stream(&p, &st).unwrap();
        assert_eq!(read_token_stream(&p).unwrap(), st);
        let mut bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"VQTS");
        assert_eq!(bytes.len(), 14 + 2 * 12);
        bytes[4] = 9;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_token_stream(&p),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_token_stream(&p), Err(Error::BadMagic { .. })));
    }
}
