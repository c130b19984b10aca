//! Directory checkpoints: `manifest.json` plus one tensor dump per entry.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::{Shape4, Tensor4};

const FORMAT: &str = "caggnet-checkpoint-1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: DType,
    pub config: ModelConfig,
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
}

impl CheckpointManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: CheckpointManifest = serde_json::from_str(&text)?;
        if m.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format '{}'", m.format)));
        }
        Ok(m)
    }
}

fn entry(name: &str, t: &Tensor4<impl Scalar>) -> TensorEntry {
    TensorEntry {
        name: name.to_string(),
        shape: t.shape().dims(),
        file: format!("{name}.bin"),
    }
}

impl<T: Scalar> Model<T> {
    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest {
            format: FORMAT.to_string(),
            dtype: T::DTYPE,
            config: self.cfg.clone(),
            params: self.store.params().map(|(n, p)| entry(n, &p.value)).collect(),
            buffers: self.store.buffers().map(|(n, b)| entry(n, b)).collect(),
        }
    }

    /// Writes the checkpoint into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        for e in &manifest.params {
            self.store.value(&e.name)?.write_dump(&dir.join(&e.file))?;
        }
        for e in &manifest.buffers {
            self.store.buffer(&e.name)?.write_dump(&dir.join(&e.file))?;
        }
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Rebuilds the network from the stored config and overwrites every
    /// parameter and buffer with the stored values.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = CheckpointManifest::read(dir)?;
        if manifest.dtype != T::DTYPE {
            return Err(Error::DType {
                expected: T::DTYPE,
                found: manifest.dtype,
            });
        }
        let mut model: Model<T> = build(&manifest.config)?;
        let expected = model.manifest();
        let names = |v: &[TensorEntry]| v.iter().map(|e| (e.name.clone(), e.shape)).collect::<BTreeSet<_>>();
        if names(&expected.params) != names(&manifest.params) || names(&expected.buffers) != names(&manifest.buffers) {
            return Err(Error::Checkpoint(
                "stored tensors do not match the architecture described by the config".into(),
            ));
        }
        for e in manifest.params.iter().chain(&manifest.buffers) {
            if e.file.contains(['/', '\\']) || e.file.starts_with('.') {
                return Err(Error::Checkpoint(format!("refusing tensor file path '{}'", e.file)));
            }
            let t = Tensor4::<T>::read_dump(&dir.join(&e.file))?;
            let want = Shape4::new(e.shape[0], e.shape[1], e.shape[2], e.shape[3])?;
            if t.shape() != want {
                return Err(Error::Checkpoint(format!(
                    "{}: file shape {} differs from manifest {want}",
                    e.name,
                    t.shape()
                )));
            }
            model.store.set(&e.name, t)?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_caggnet, Arch};

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = build_caggnet::<f32>(&ModelConfig::tiny(Arch::Caggnet)).unwrap();
        let name = m.store.param_names()[3].clone();
        let bumped = m.store.value(&name).unwrap().map("t", |v| v + 0.5).unwrap();
        m.store.set(&name, bumped).unwrap();
        m.save(dir.path()).unwrap();
        let back = Model::<f32>::load(dir.path()).unwrap();
        assert!(back.store.same_weights(&m.store));
        assert!(matches!(Model::<f64>::load(dir.path()), Err(Error::DType { .. })));
    }

    #[test]
    fn missing_tensor_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_caggnet::<f64>(&ModelConfig::tiny(Arch::Caggnet)).unwrap();
        m.save(dir.path()).unwrap();
        let first = &m.manifest().params[0].file;
        std::fs::remove_file(dir.path().join(first)).unwrap();
        assert!(Model::<f64>::load(dir.path()).is_err());
    }
}
