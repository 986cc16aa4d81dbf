//! A stack of linear layers to compress, plus a seeded toy generator.
//!
//! On disk a model is a directory holding `model.json`
//! (`{"batch": M, "layers": [{"name": .., "file": ..}]}`) and one ITMX file
//! per weight matrix.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dtype, LayerShape, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    /// `K × N` weight matrix.
    pub weights: Matrix,
}

impl LayerSpec {
    pub fn k(&self) -> usize {
        self.weights.rows()
    }

    pub fn n(&self) -> usize {
        self.weights.cols()
    }

    pub fn max_rank(&self) -> usize {
        self.k().min(self.n())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Batch rows `M` shared by every layer.
    pub batch: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    batch: usize,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    name: String,
    file: String,
}

pub const MODEL_FILE: &str = "model.json";

impl ModelSpec {
    pub fn new(batch: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch must be >= 1".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model has no layers".into()));
        }
        Ok(Self { batch, layers })
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers
            .iter()
            .map(|l| LayerShape {
                m: self.batch,
                k: l.k(),
                n: l.n(),
            })
            .collect()
    }

    pub fn max_ranks(&self) -> Vec<usize> {
        self.layers.iter().map(LayerSpec::max_rank).collect()
    }

    /// True when each layer's output width feeds the next layer's input.
    pub fn is_chain(&self) -> bool {
        self.layers.windows(2).all(|w| w[0].n() == w[1].k())
    }

    /// Seeded toy model: a chain of layers whose singular spectra decay at
    /// different rates, so layers differ in how much rank they need.
    pub fn toy(seed: u64, batch: usize, dims: &[usize], decay: &[f64]) -> Result<Self> {
        if dims.len() < 2 || decay.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(
                "toy model needs dims.len() >= 2 and one decay per layer".into(),
            ));
        }
        let layers = dims
            .windows(2)
            .zip(decay)
            .enumerate()
            .map(|(i, (kn, tau))| {
                let (k, n) = (kn[0], kn[1]);
                let r = k.min(n);
                let spectrum: Vec<f64> = (0..r).map(|j| (-(j as f64) / tau).exp()).collect();
                let layer_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                let base = Matrix::with_spectrum(k, n, &spectrum, layer_seed);
                let noise = Matrix::random_normal(k, n, layer_seed ^ 0xabcd).scale(0.01 / (k as f64).sqrt());
                LayerSpec {
                    name: format!("fc{i}"),
                    weights: base.add(&noise).expect("same shape"),
                }
            })
            .collect();
        Self::new(batch, layers)
    }

    /// The default three-layer toy used by examples and the CLI.
    pub fn default_toy(seed: u64) -> Self {
        Self::toy(seed, 128, &[64, 96, 80, 32], &[4.0, 10.0, 20.0]).expect("static dims are valid")
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let file = format!("{}.itmx", layer.name);
            layer.weights.save_itmx(&dir.join(&file), Dtype::F64)?;
            entries.push(LayerEntry {
                name: layer.name.clone(),
                file,
            });
        }
        let spec = ModelFile {
            batch: self.batch,
            layers: entries,
        };
        let path = dir.join(MODEL_FILE);
        fs::write(&path, serde_json::to_string_pretty(&spec)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let spec: ModelFile = serde_json::from_str(&text)?;
        let layers = spec
            .layers
            .into_iter()
            .map(|e| {
                Ok(LayerSpec {
                    weights: Matrix::load(&dir.join(&e.file))?,
                    name: e.name,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.batch, layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_is_deterministic_chain() {
        let a = ModelSpec::default_toy(3);
        assert_eq!(a, ModelSpec::default_toy(3));
        assert_ne!(a, ModelSpec::default_toy(4));
        assert!(a.is_chain());
        assert_eq!(a.max_ranks(), vec![64, 80, 32]);
    }

    #[test]
    fn dir_round_trip() {
        let m = ModelSpec::default_toy(1);
        let dir = tempfile::tempdir().unwrap();
        m.save_dir(dir.path()).unwrap();
        assert_eq!(ModelSpec::load_dir(dir.path()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_toy_args() {
        assert!(ModelSpec::toy(0, 8, &[4], &[]).is_err());
        assert!(ModelSpec::toy(0, 8, &[4, 4], &[1.0, 2.0]).is_err());
        assert!(ModelSpec::toy(0, 0, &[4, 4], &[1.0]).is_err());
    }
}
