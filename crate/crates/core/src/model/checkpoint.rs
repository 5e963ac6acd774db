use std::collections::HashMap;
use std::path::Path;

use super::{Config, GbnetModel, Sgd, Trainer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GBNC";
pub const CHECKPOINT_VERSION: u32 = 1;
const VELOCITY: &str = "velocity/";

/// Everything needed to resume or evaluate a run. The random streams of
/// the training loop are functions of `(seed, epoch)`, so those two
/// numbers are the complete generator state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: Config,
    pub model: GbnetModel<f32>,
    pub opt: Sgd<f32>,
    pub seed: u64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn from_trainer(config: &Config, trainer: &Trainer) -> Self {
        Checkpoint {
            config: config.clone(),
            model: trainer.model.clone(),
            opt: trainer.opt.clone(),
            seed: trainer.cfg.seed,
            epoch: trainer.epoch,
        }
    }

    pub fn into_trainer(self) -> Trainer {
        let mut cfg = self.config.train.clone();
        cfg.seed = self.seed;
        Trainer {
            model: self.model,
            opt: self.opt,
            cfg,
            epoch: self.epoch,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        let text = self.config.to_text();
        put_u32(&mut out, text.len() as u32);
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        put_u32(&mut out, self.epoch as u32);

        let store = &self.model.store;
        let mut records: Vec<(String, &Tensor<f32>)> = store.entries().map(|(_, e)| (e.name.clone(), &e.value)).collect();
        for (id, e) in store.entries() {
            if let Some(Some(v)) = self.opt.velocity.get(id.index()) {
                records.push((format!("{VELOCITY}{}", e.name), v));
            }
        }
        put_u32(&mut out, records.len() as u32);
        for (name, t) in records {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.ndim() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses and validates a whole checkpoint before building anything.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}, expected \"GBNC\"")));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
        let config = Config::from_text(text)?;
        let seed = u64::from_le_bytes(r.take(8, "seed")?.try_into().unwrap());
        let epoch = r.u32("epoch")? as usize;
        let count = r.u32("record count")? as usize;
        let mut records = HashMap::new();
        for _ in 0..count {
            let n = r.u32("name length")? as usize;
            let name = String::from_utf8(r.take(n, "name")?.to_vec())
                .map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let ndim = r.u32("rank")? as usize;
            let shape = (0..ndim).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Format("record too large".into()))?, &name)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if records.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(Error::Format(format!("duplicate record `{name}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
        }

        let mut model = GbnetModel::<f32>::new(&config.model, 0)?;
        model.strict = config.strict;
        let mut opt = Sgd::new(config.train.momentum, model.store.len());
        let ids: Vec<_> = model.store.entries().map(|(id, _)| id).collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let t = records
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing `{name}`")))?;
            if t.shape() != model.store.get(id).shape() {
                return Err(Error::Format(format!(
                    "`{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    model.store.get(id).shape()
                )));
            }
            if let Some(v) = records.remove(&format!("{VELOCITY}{name}")) {
                if v.shape() != t.shape() {
                    return Err(Error::Format(format!("velocity of `{name}` has shape {:?}", v.shape())));
                }
                opt.velocity[id.index()] = Some(v);
            }
            *model.store.get_mut(id) = t;
        }
        if let Some(name) = records.keys().next() {
            return Err(Error::Format(format!("unexpected record `{name}`")));
        }
        Ok(Checkpoint {
            config,
            model,
            opt,
            seed,
            epoch,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("truncated checkpoint while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Writes through a temporary file so a failed save never leaves a
/// half-written checkpoint behind.
pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, checkpoint.to_bytes()?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint, optionally requiring a class count.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_classes: Option<usize>) -> Result<Checkpoint> {
    let ck = Checkpoint::from_bytes(&std::fs::read(path)?)?;
    if let Some(c) = expected_classes {
        if ck.config.model.classes != c {
            return Err(Error::ClassCount {
                expected: c,
                checkpoint: ck.config.model.classes,
            });
        }
    }
    Ok(ck)
}
