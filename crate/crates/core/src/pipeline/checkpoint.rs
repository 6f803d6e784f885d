use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::{ParamStore, Tensor};

use super::RunConfig;

const MAGIC: [u8; 4] = *b"CGCK";
const VERSION: u16 = 1;

/// Training stage that produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Clip,
    Vq,
    Gen,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Clip, Stage::Vq, Stage::Gen];

    /// Command that produces this stage's checkpoint.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Clip => "train-clip",
            Stage::Vq => "train-vq",
            Stage::Gen => "train-gen",
        }
    }

    /// Checkpoint file name inside a run directory.
    pub fn file_name(self) -> &'static str {
        match self {
            Stage::Clip => "clip.ckpt",
            Stage::Vq => "vq.ckpt",
            Stage::Gen => "gen.ckpt",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Stage::Clip => 0,
            Stage::Vq => 1,
            Stage::Gen => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|s| s.tag() == t)
            .ok_or_else(|| Error::Format(format!("unknown stage tag {t}")))
    }
}

/// Frozen parameters of one stage plus the config they were trained under.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub stage: Stage,
    pub config: RunConfig,
    pub params: ParamStore,
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

impl Checkpoint {
    /// Layout: magic, u16 version, u8 stage, u32-prefixed config text, u32
    /// tensor count, then per tensor a u16-prefixed UTF-8 name, u8 rank, u32
    /// dims and little-endian f32 data; finally the CRC32 of all prior bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        b.extend_from_slice(&MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(self.stage.tag());
        let cfg = self.config.to_text();
        b.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        b.extend_from_slice(cfg.as_bytes());
        b.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, name, entry) in self.params.iter() {
            let t = &entry.tensor;
            if name.len() > u16::MAX as usize || t.shape().len() > u8::MAX as usize {
                return Err(Error::Format(format!(
                    "tensor `{name}` does not fit the checkpoint format"
                )));
            }
            b.extend_from_slice(&(name.len() as u16).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.push(t.shape().len() as u8);
            for &d in t.shape() {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        Ok(b)
    }

    /// Parses and verifies a checkpoint. Loaded parameters are frozen.
    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < 4 {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let magic: [u8; 4] = b[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        if b.len() < 11 {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(Error::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let (body, tail) = b.split_at(b.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Crc { stored, computed });
        }
        let mut r = Reader { b: body, pos: 6 };
        let stage = Stage::from_tag(r.u8()?)?;
        let n = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Format("config is not UTF-8".into()))?;
        let config = RunConfig::from_text(text)?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().product::<usize>();
            let data = r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.add(name, Tensor::new(shape, data)?)?;
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after the last tensor".into()));
        }
        params.freeze_all();
        Ok(Self {
            stage,
            config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads the checkpoint of `stage` from a run directory, failing with a
    /// stage error that names the producing command when it is absent.
    pub fn load_stage(dir: &Path, stage: Stage) -> Result<Self> {
        let path = dir.join(stage.file_name());
        if !path.exists() {
            return Err(Error::Stage {
                stage: stage.command(),
                detail: format!("{} not found", path.display()),
            });
        }
        let c = Self::load(&path)?;
        if c.stage != stage {
            return Err(Error::Format(format!(
                "{} holds a {} checkpoint",
                path.display(),
                c.stage.command()
            )));
        }
        Ok(c)
    }
}
