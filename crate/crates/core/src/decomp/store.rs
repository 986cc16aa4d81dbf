//! On-disk layout for a quantized decomposition:
//!
//! ```text
//! <dir>/w1_codes.itmx       K x r integer codes (f64 payload)
//! <dir>/w2_codes.itmx       r x N integer codes (f64 payload)
//! <dir>/decomposition.json  rank, weight_wl, scales, residual_norms
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::QuantizedDecomposition;
use crate::error::{Error, Result};
use crate::quant::{qmax, QuantizedVector};
use crate::tensor::{Dtype, Matrix};

pub const W1_FILE: &str = "w1_codes.itmx";
pub const W2_FILE: &str = "w2_codes.itmx";
pub const MANIFEST_FILE: &str = "decomposition.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionManifest {
    pub rank: usize,
    pub weight_wl: u8,
    pub k: usize,
    pub n: usize,
    /// `[w1 column scale, w2 row scale]` for each rank-1 component.
    pub scales: Vec<[f64; 2]>,
    pub residual_norms: Vec<f64>,
    #[serde(default)]
    pub zero_filled_from: Option<usize>,
}

pub fn save_decomposition(d: &QuantizedDecomposition, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let w1_codes: Vec<Vec<f64>> = d.w1.iter().map(codes_f64).collect();
    let w2_codes: Vec<Vec<f64>> = d.w2.iter().map(codes_f64).collect();
    Matrix::from_columns(&w1_codes)?.save_itmx(&dir.join(W1_FILE), Dtype::F64)?;
    Matrix::from_row_vecs(&w2_codes)?.save_itmx(&dir.join(W2_FILE), Dtype::F64)?;
    let manifest = DecompositionManifest {
        rank: d.rank,
        weight_wl: d.weight_wl,
        k: d.k,
        n: d.n,
        scales: d.w1.iter().zip(&d.w2).map(|(a, b)| [a.scale, b.scale]).collect(),
        residual_norms: d.residual_norms.clone(),
        zero_filled_from: d.zero_filled_from,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_decomposition(dir: &Path) -> Result<QuantizedDecomposition> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DecompositionManifest = serde_json::from_str(&text)?;
    let w1 = Matrix::load(&dir.join(W1_FILE))?;
    let w2 = Matrix::load(&dir.join(W2_FILE))?;
    let bad = |reason: String| Error::Format {
        format: "decomposition",
        reason,
    };
    if w1.shape() != (m.k, m.rank) || w2.shape() != (m.rank, m.n) {
        return Err(bad(format!(
            "factor shapes {:?}/{:?} disagree with manifest k={} n={} rank={}",
            w1.shape(),
            w2.shape(),
            m.k,
            m.n,
            m.rank
        )));
    }
    if m.scales.len() != m.rank || m.residual_norms.len() != m.rank + 1 {
        return Err(bad("scales/residual_norms length does not match rank".into()));
    }
    let limit = qmax(m.weight_wl);
    let to_codes = |v: Vec<f64>| -> Result<Vec<i32>> {
        v.into_iter()
            .map(|x| {
                if x.fract() != 0.0 || x.abs() > limit as f64 {
                    Err(bad(format!("code {x} not an integer within ±{limit}")))
                } else {
                    Ok(x as i32)
                }
            })
            .collect()
    };
    let mut q1 = Vec::with_capacity(m.rank);
    let mut q2 = Vec::with_capacity(m.rank);
    for (k, [s1, s2]) in m.scales.iter().enumerate() {
        q1.push(QuantizedVector {
            codes: to_codes(w1.column(k))?,
            scale: *s1,
            wl: m.weight_wl,
        });
        q2.push(QuantizedVector {
            codes: to_codes(w2.row(k).to_vec())?,
            scale: *s2,
            wl: m.weight_wl,
        });
    }
    Ok(QuantizedDecomposition {
        k: m.k,
        n: m.n,
        rank: m.rank,
        weight_wl: m.weight_wl,
        w1: q1,
        w2: q2,
        residual_norms: m.residual_norms,
        zero_filled_from: m.zero_filled_from,
    })
}

fn codes_f64(q: &QuantizedVector) -> Vec<f64> {
    q.codes.iter().map(|c| *c as f64).collect()
}
