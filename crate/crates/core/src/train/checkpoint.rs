//! Binary checkpoint archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! "LDRC"  version:u32  phase:u8  step:u64  config_len:u32  config:[u8]
//! param_count:u32    { name_len:u32 name:[u8] rank:u8 dims:[u64; rank] data:[f32] }*
//! moment_count:u32   { same record layout, named "m/<param>" and "v/<param>" }*
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::arch::{ModelConfig, Networks};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::train::adam::{Adam, Moments};
use crate::train::Phase;

pub const MAGIC: &[u8; 4] = b"LDRC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    pub step: u64,
    pub model: ModelConfig,
    pub params: Vec<(String, Tensor)>,
    pub moments: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated checkpoint: {what} needs {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn record(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32("name length")? as usize;
        let name = std::str::from_utf8(self.take(len, "name")?)
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?
            .to_string();
        let rank = self.u8("rank")? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Format(format!("`{name}` has unsupported rank {rank}")));
        }
        let mut dims = [1usize; 4];
        for d in &mut dims[4 - rank..] {
            *d = usize::try_from(self.u64("dims")?).map_err(|_| Error::Format(format!("`{name}` is too large")))?;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let bytes = dims
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("`{name}` is too large")))?;
        let data = self
            .take(bytes, &name)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }

    fn records(&mut self, what: &str) -> Result<Vec<(String, Tensor)>> {
        let count = self.u32(what)?;
        (0..count).map(|_| self.record()).collect()
    }
}

fn write_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(4);
    for d in t.shape().dims() {
        out.extend((d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

impl Checkpoint {
    /// Snapshot of the networks and optimizer after `step` updates of `phase`.
    pub fn capture(nets: &Networks, adam: &Adam, phase: Phase, step: u64) -> Self {
        let params = nets.store.iter().map(|(_, n, p)| (n.to_string(), p.value.clone())).collect();
        let moments = adam
            .moments
            .iter()
            .flat_map(|(n, m)| [(format!("m/{n}"), m.m.clone()), (format!("v/{n}"), m.v.clone())])
            .collect();
        Self {
            phase,
            step,
            model: nets.config.clone(),
            params,
            moments,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.push(self.phase.tag());
        out.extend(self.step.to_le_bytes());
        let config = self.model.to_text();
        out.extend((config.len() as u32).to_le_bytes());
        out.extend(config.as_bytes());
        for records in [&self.params, &self.moments] {
            out.extend((records.len() as u32).to_le_bytes());
            for (name, t) in records.iter() {
                write_record(&mut out, name, t);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, not an LDRC checkpoint")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version} (expected {VERSION})")));
        }
        let phase = Phase::from_tag(r.u8("phase")?)?;
        let step = r.u64("step")?;
        let len = r.u32("config length")? as usize;
        let text = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| Error::Format("config blob is not UTF-8".into()))?;
        let model = ModelConfig::from_text(text)?;
        let params = r.records("parameter count")?;
        let moments = r.records("moment count")?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }
        Ok(Self {
            phase,
            step,
            model,
            params,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the networks with the stored values and the freeze mask of
    /// the checkpoint's phase, plus the optimizer state.
    pub fn restore(&self) -> Result<(Networks, Adam)> {
        let mut nets = Networks::build(&self.model, 0)?;
        if nets.store.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters, the {} variant has {}",
                self.params.len(),
                self.model.ablation,
                nets.store.len()
            )));
        }
        for (name, value) in &self.params {
            let p = nets
                .store
                .by_name_mut(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{name}` in checkpoint")))?;
            if p.value.shape() != value.shape() {
                return Err(Error::Format(format!(
                    "`{name}` has shape {} in the checkpoint, {} in the model",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value.clone();
        }
        apply_freeze_mask(&mut nets, self.phase);
        let mut moments = IndexMap::new();
        for pair in self.moments.chunks(2) {
            let [(mn, m), (vn, v)] = pair else {
                return Err(Error::Format("unpaired optimizer moment record".into()));
            };
            let name = mn
                .strip_prefix("m/")
                .filter(|n| vn.strip_prefix("v/") == Some(*n))
                .ok_or_else(|| Error::Format(format!("malformed moment records `{mn}`, `{vn}`")))?;
            let p = nets
                .store
                .by_name(name)
                .ok_or_else(|| Error::Format(format!("moments for unknown parameter `{name}`")))?;
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::Format(format!("moment shape mismatch for `{name}`")));
            }
            moments.insert(name.to_string(), Moments { m: m.clone(), v: v.clone() });
        }
        let adam = Adam {
            t: self.step,
            moments,
            ..Adam::default()
        };
        Ok((nets, adam))
    }
}

/// Freezes what `phase` does not train: the restorer while pretraining the
/// constraint, the encoder and constraint network while deraining.
pub fn apply_freeze_mask(nets: &mut Networks, phase: Phase) {
    use crate::arch::{CONSTRAINT_PREFIX, ENCODER_PREFIX, RESTORER_PREFIX};
    let s = &mut nets.store;
    s.set_frozen("", false);
    match phase {
        Phase::Constraint => {
            s.set_frozen(RESTORER_PREFIX, true);
        }
        Phase::Derain => {
            s.set_frozen(ENCODER_PREFIX, true);
            s.set_frozen(CONSTRAINT_PREFIX, true);
        }
        Phase::Joint => {}
    }
}
