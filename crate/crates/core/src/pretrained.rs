//! Loading frozen pretrained weights from `.safetensors` files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use safetensors::{Dtype, SafeTensors};

use crate::error::WEIGHTS_ENV;
use crate::nn::Tensor;
use crate::{Error, Result};

/// Directory named by the weights environment variable, if set.
pub fn weights_dir() -> Option<PathBuf> {
    std::env::var_os(WEIGHTS_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Resolves `file` inside `dir`, falling back to the weights environment
/// variable, or explains how to supply it.
pub fn locate(dir: Option<&Path>, file: &str) -> Result<PathBuf> {
    let dir = dir.map(Path::to_path_buf).or_else(weights_dir).ok_or_else(|| {
        Error::MissingWeights(format!("{WEIGHTS_ENV} is not set (looking for {file})"))
    })?;
    let path = dir.join(file);
    if !path.is_file() {
        return Err(Error::MissingWeights(format!("{} does not exist", path.display())));
    }
    Ok(path)
}

/// Named tensors converted to `f64`.
#[derive(Debug, Clone, Default)]
pub struct WeightMap {
    tensors: HashMap<String, Tensor>,
    source: PathBuf,
}

impl WeightMap {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::MissingWeights(format!(
            "cannot read {}: {e}",
            path.display()
        )))?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut tensors = HashMap::new();
        for (name, view) in st.tensors() {
            let data: Vec<f64> = match view.dtype() {
                Dtype::F32 => view
                    .data()
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                    .collect(),
                Dtype::F64 => view
                    .data()
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                // counters such as `num_batches_tracked` are not needed
                Dtype::I64 | Dtype::I32 => continue,
                other => {
                    return Err(Error::Decode {
                        path: path.to_path_buf(),
                        reason: format!("tensor {name} has unsupported dtype {other:?}"),
                    })
                }
            };
            tensors.insert(name, Tensor::new(view.shape().to_vec(), data));
        }
        Ok(Self {
            tensors,
            source: path.to_path_buf(),
        })
    }

    /// Tensor `name`, checked against an expected shape.
    pub fn take(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self.tensors.remove(name).ok_or_else(|| Error::Decode {
            path: self.source.clone(),
            reason: format!("missing tensor {name}"),
        })?;
        if t.shape() != shape {
            return Err(Error::DimMismatch {
                expected: format!("{name} {shape:?}"),
                actual: format!("{:?}", t.shape()),
            });
        }
        Ok(t)
    }

    /// Tensor `name` with whatever shape the file declares.
    pub fn take_any(&mut self, name: &str) -> Result<Tensor> {
        self.tensors.remove(name).ok_or_else(|| Error::Decode {
            path: self.source.clone(),
            reason: format!("missing tensor {name}"),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn source(&self) -> &Path {
        &self.source
    }
}
