//! Binary checkpoint: magic `ARDS`, `u32` version, length-prefixed canonical
//! config text, then named `f32` blobs. All integers are little-endian.
//!
//! ```text
//! "ARDS" | u32 version | u32 len, config | u32 count | { u32 len, name | u64 n | n × f32 }*
//! ```
//!
//! Parameter blobs come first in registration order, optionally followed by
//! `adam/m/<name>`, `adam/v/<name>` for every parameter and `adam.step`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{AdamState, Real, Tensor};

use super::config::ArdisConfig;
use super::model::Model;

pub const MAGIC: &[u8; 4] = b"ARDS";
pub const VERSION: u32 = 1;

const ADAM_STEP: &str = "adam.step";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ArdisConfig,
    pub blobs: Vec<(String, Vec<f32>)>,
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| corrupt(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &Model<T>, adam: Option<&AdamState<T>>) -> Self {
        let to_f32 = |t: &Tensor<T>| t.data().iter().map(|v| v.as_f64() as f32).collect::<Vec<f32>>();
        let mut blobs: Vec<(String, Vec<f32>)> = model.store.iter().map(|(_, p)| (p.name.clone(), to_f32(&p.value))).collect();
        if let Some(adam) = adam {
            for (i, (_, p)) in model.store.iter().enumerate() {
                blobs.push((format!("adam/m/{}", p.name), to_f32(&adam.m[i])));
            }
            for (i, (_, p)) in model.store.iter().enumerate() {
                blobs.push((format!("adam/v/{}", p.name), to_f32(&adam.v[i])));
            }
            blobs.push((ADAM_STEP.to_string(), vec![adam.step as f32]));
        }
        Checkpoint {
            config: model.config.clone(),
            blobs,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = self.config.to_text();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, data) in &self.blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(corrupt("bad magic, not an ARDS checkpoint"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}, expected {VERSION}")));
        }
        let config = ArdisConfig::from_text(&r.string("config")?)?;
        let count = r.u32("blob count")?;
        let mut blobs = Vec::new();
        for i in 0..count {
            let name = r.string(&format!("blob {i} name"))?;
            let n = r.u64(&format!("blob `{name}` length"))?;
            let len = usize::try_from(n).ok().and_then(|n| n.checked_mul(4));
            let len = len.ok_or_else(|| corrupt(format!("blob `{name}` length {n} overflows")))?;
            let raw = r.take(len, &format!("blob `{name}`"))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            blobs.push((name, data));
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config, blobs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model described by the stored config and fills in every
    /// blob, checking names and sizes against that architecture.
    pub fn into_model<T: Real>(self) -> Result<(Model<T>, Option<AdamState<T>>)> {
        let mut model = Model::<T>::new(self.config)?;
        let n = model.store.len();
        let mut blobs = self.blobs.into_iter();
        let mut next = |want: &str, len: usize| -> Result<Option<Vec<f32>>> {
            match blobs.next() {
                None => Ok(None),
                Some((name, data)) if name == want && data.len() == len => Ok(Some(data)),
                Some((name, data)) => Err(corrupt(format!(
                    "blob `{name}` ({} values) does not match `{want}` ({len} values) of the configured model",
                    data.len()
                ))),
            }
        };
        let specs: Vec<(String, Vec<usize>)> = model.store.iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec())).collect();
        for (i, (name, shape)) in specs.iter().enumerate() {
            let len = shape.iter().product();
            let data = next(name, len)?.ok_or_else(|| corrupt(format!("missing parameter `{name}`")))?;
            let id = model.store.iter().nth(i).map(|(id, _)| id).expect("index in range");
            *model.store.value_mut(id) = Tensor::new(shape.clone(), data.iter().map(|&v| T::lit(v as f64)).collect())?;
        }
        let mut adam = AdamState::new(&model.store);
        let mut moments = Vec::with_capacity(2 * n);
        for prefix in ["adam/m", "adam/v"] {
            for (name, shape) in &specs {
                let len = shape.iter().product();
                match next(&format!("{prefix}/{name}"), len)? {
                    Some(data) => moments.push(Tensor::new(shape.clone(), data.iter().map(|&v| T::lit(v as f64)).collect())?),
                    None if moments.is_empty() => return Ok((model, None)),
                    None => return Err(corrupt(format!("optimizer state ends before `{prefix}/{name}`"))),
                }
            }
        }
        let step = next(ADAM_STEP, 1)?.ok_or_else(|| corrupt("optimizer state has no step counter"))?;
        if next("", 0).is_err() {
            return Err(corrupt("unexpected blobs after optimizer state"));
        }
        adam.v = moments.split_off(n);
        adam.m = moments;
        adam.step = step[0] as u64;
        Ok((model, Some(adam)))
    }
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, model: &Model<T>, adam: Option<&AdamState<T>>) -> Result<()> {
    Checkpoint::from_model(model, adam).save(path)
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(Model<T>, Option<AdamState<T>>)> {
    Checkpoint::load(path)?.into_model()
}

/// Loads a checkpoint whose architecture must equal `expected`'s.
pub fn load_checkpoint_for<T: Real>(path: impl AsRef<Path>, expected: &ArdisConfig) -> Result<(Model<T>, Option<AdamState<T>>)> {
    let ck = Checkpoint::load(path)?;
    if !ck.config.same_architecture(expected) {
        return Err(corrupt(format!(
            "checkpoint architecture (cover {}x{}, {} blocks, hidden {}) differs from the configuration (cover {}x{}, {} blocks, hidden {})",
            ck.config.cover_height,
            ck.config.cover_width,
            ck.config.ihn_blocks,
            ck.config.ihn_hidden,
            expected.cover_height,
            expected.cover_width,
            expected.ihn_blocks,
            expected.ihn_hidden
        )));
    }
    ck.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(blocks: usize) -> ArdisConfig {
        ArdisConfig {
            cover_height: 16,
            cover_width: 16,
            latent_channels: 2,
            resolution_bits: 8,
            ihn_blocks: blocks,
            ihn_hidden: 4,
            detail_hidden: 4,
            feature_channels: 3,
            mlp_hidden: vec![5],
            ..Default::default()
        }
    }

    fn trained_ish() -> (Model<f32>, AdamState<f32>) {
        let mut model = Model::<f32>::new(tiny(2)).unwrap();
        model.store.randomize(1, 0.1);
        let mut adam = AdamState::new(&model.store);
        let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
        let grads = ids.iter().map(|&id| (id, model.store.get(id).value.map(|v| v * 0.5 + 0.01))).collect();
        model.store.accumulate(grads);
        adam.step(&mut model.store, 1e-3).unwrap();
        (model, adam)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (model, adam) = trained_ish();
        let dir = tempfile::tempdir().unwrap();
        for with_adam in [false, true] {
            let path = dir.path().join(format!("m{with_adam}.ards"));
            save_checkpoint(&path, &model, with_adam.then_some(&adam)).unwrap();
            let (back, back_adam) = load_checkpoint::<f32>(&path).unwrap();
            assert_eq!(back_adam.is_some(), with_adam);
            let again = Checkpoint::from_model(&back, back_adam.as_ref()).to_bytes();
            assert_eq!(again, std::fs::read(&path).unwrap());
            if let Some(a) = back_adam {
                assert_eq!(a.step, 1);
            }
        }
    }

    #[test]
    fn reloaded_model_computes_the_same_stego() {
        let (model, _) = trained_ish();
        let bytes = Checkpoint::from_model(&model, None).to_bytes();
        let (back, _) = Checkpoint::from_bytes(&bytes).unwrap().into_model::<f32>().unwrap();
        let cover = crate::pipeline::data::synthetic_image(16, 16, 1);
        let secret = crate::pipeline::data::synthetic_image(9, 7, 2);
        assert_eq!(model.hide(&cover, &secret).unwrap().stego, back.hide(&cover, &secret).unwrap().stego);
    }

    #[test]
    fn guards_reject_mutated_files() {
        let (model, adam) = trained_ish();
        let bytes = Checkpoint::from_model(&model, Some(&adam)).to_bytes();

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).unwrap_err().to_string().contains("magic"));

        let mut version = bytes.clone();
        version[4] = 2;
        assert!(Checkpoint::from_bytes(&version).unwrap_err().to_string().contains("version"));

        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err().to_string();
            assert!(err.contains("truncated") || err.contains("config"), "{cut}: {err}");
        }

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(Checkpoint::from_bytes(&trailing).is_err());

        // config claims three blocks; blobs describe two
        let mut ck = Checkpoint::from_bytes(&bytes).unwrap();
        ck.config.ihn_blocks = 3;
        assert!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap().into_model::<f32>().is_err());

        let mut ck = Checkpoint::from_bytes(&bytes).unwrap();
        ck.blobs[0].1.pop();
        assert!(ck.into_model::<f32>().is_err());
    }

    #[test]
    fn architecture_guard() {
        let (model, _) = trained_ish();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ards");
        save_checkpoint(&path, &model, None).unwrap();
        assert!(load_checkpoint_for::<f32>(&path, &tiny(2)).is_ok());
        let err = load_checkpoint_for::<f32>(&path, &tiny(4)).unwrap_err().to_string();
        assert!(err.contains("2 blocks") && err.contains("4 blocks"), "{err}");
    }
}
