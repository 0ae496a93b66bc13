//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PPLAB1"
//! model config      6 x u32
//! seeds             u32 count, then (str name, u64)
//! base parameters   u32 count, then (str name, u8 trainable, u8 rank, rank x u32 dims, f32 data)
//! prompts           u32 count, then (u32 task, u32 M, u32 e, u8 frozen, M*e f32)
//! heads             u32 count, then (u32 task, u32 C, u32 e, C*e f32 weight, C f32 bias)
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ClassificationHead, Encoder, ModelConfig};
use crate::numerics::{Parameter, Tensor};
use crate::prompts::SoftPrompt;

const MAGIC: &[u8; 6] = b"PPLAB1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Encoder<f32>,
    /// Training order.
    pub prompts: Vec<SoftPrompt<f32>>,
    pub heads: Vec<ClassificationHead<f32>>,
    pub seeds: Vec<(String, u64)>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn floats(&mut self, xs: &[f32]) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'b> {
    buf: &'b [u8],
    at: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 name".into()))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(MAGIC.to_vec());
        let c = &self.model.config;
        for v in [c.vocab_size, c.embed_dim, c.num_layers, c.num_heads, c.ffn_dim, c.max_seq_len] {
            w.u32(v)?;
        }
        w.u32(self.seeds.len())?;
        for (name, s) in &self.seeds {
            w.str(name)?;
            w.u64(*s);
        }
        let params = self.model.params();
        w.u32(params.len())?;
        for p in params {
            w.str(&p.name)?;
            w.u8(u8::from(p.trainable));
            let shape = p.data.shape();
            w.u8(shape.len() as u8);
            for &d in shape {
                w.u32(d)?;
            }
            w.floats(p.data.data());
        }
        w.u32(self.prompts.len())?;
        for p in &self.prompts {
            if p.reparam.is_some() {
                return Err(Error::Checkpoint(format!(
                    "prompt {} still has its MLP; fold it in before saving",
                    p.task_id
                )));
            }
            w.u32(p.task_id)?;
            w.u32(p.len())?;
            w.u32(p.embed_dim())?;
            w.u8(u8::from(p.frozen));
            w.floats(p.embeddings.data.data());
        }
        w.u32(self.heads.len())?;
        for h in &self.heads {
            w.u32(h.task_id)?;
            w.u32(h.num_classes())?;
            w.u32(h.embed_dim())?;
            w.floats(h.weight.data.data());
            w.floats(h.bias.data.data());
        }
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() || &buf[..5] != b"PPLAB" {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        if &buf[..6] != MAGIC {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {:?}",
                String::from_utf8_lossy(&buf[5..6])
            )));
        }
        let mut r = Reader { buf, at: 6 };
        let config = ModelConfig {
            vocab_size: r.u32()?,
            embed_dim: r.u32()?,
            num_layers: r.u32()?,
            num_heads: r.u32()?,
            ffn_dim: r.u32()?,
            max_seq_len: r.u32()?,
        };
        config.validate()?;
        let mut seeds = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            seeds.push((name, r.u64()?));
        }

        let mut model = Encoder::new(config.clone(), 0)?;
        let n = r.u32()?;
        let mut seen = vec![false; model.params().len()];
        for _ in 0..n {
            let name = r.str()?;
            let trainable = r.u8()? != 0;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().product();
            let data = r.floats(numel)?;
            let (i, p) = model
                .params_mut()
                .into_iter()
                .enumerate()
                .find(|(_, p)| p.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            if p.data.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {shape:?}, expected {:?}",
                    p.data.shape()
                )));
            }
            if seen[i] {
                return Err(Error::Checkpoint(format!("parameter {name} appears twice")));
            }
            seen[i] = true;
            *p = Parameter::new(name, Tensor::new(shape, data)?);
            p.set_trainable(trainable);
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Checkpoint(format!("missing parameter {}", model.params()[i].name)));
        }

        let mut prompts = Vec::new();
        for _ in 0..r.u32()? {
            let task_id = r.u32()?;
            let m = r.u32()?;
            let e = r.u32()?;
            let frozen = r.u8()? != 0;
            let data = r.floats(m * e)?;
            let mut embeddings = Parameter::new(format!("prompt{task_id}.embeddings"), Tensor::new(vec![m, e], data)?);
            embeddings.set_trainable(!frozen);
            prompts.push(SoftPrompt {
                task_id,
                embeddings,
                frozen,
                reparam: None,
            });
        }

        let mut heads = Vec::new();
        for _ in 0..r.u32()? {
            let task_id = r.u32()?;
            let c = r.u32()?;
            let e = r.u32()?;
            let mut h = ClassificationHead::zeros(task_id, c, e);
            h.weight.data = Tensor::new(vec![c, e], r.floats(c * e)?)?;
            h.bias.data = Tensor::new(vec![c], r.floats(c)?)?;
            heads.push(h);
        }
        if r.at != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.at)));
        }
        Ok(Self {
            model,
            prompts,
            heads,
            seeds,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::init_prompt;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            vocab_size: 20,
            embed_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 16,
            max_seq_len: 32,
        };
        let mut model = Encoder::new(cfg, 3).unwrap();
        model.freeze_base();
        let mut p = init_prompt(0, 3, &model.token_embedding.data, 1).unwrap();
        p.fold_in().unwrap();
        Checkpoint {
            prompts: vec![p],
            heads: vec![ClassificationHead::new(0, 3, 8, 2)],
            seeds: vec![("train".into(), 42)],
            model,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn bad_magic_and_version() {
        let err = Checkpoint::from_bytes(b"hello world").unwrap_err().to_string();
        assert!(err.contains("not a checkpoint"), "{err}");
        let mut bytes = sample().to_bytes().unwrap();
        bytes[5] = b'9';
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn truncation_detected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
