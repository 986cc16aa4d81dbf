//! Symmetric fixed-point quantization, one scale per vector.
//!
//! Codes live in `[-(2^(wl-1) - 1), 2^(wl-1) - 1]`; the most negative code is
//! never produced so negation stays in range. Rounding is half-to-even.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MIN_WL: u8 = 2;
pub const MAX_WL: u8 = 16;

/// Bits stored per scale when counting model size.
pub const SCALE_STORAGE_BITS: u64 = 16;

pub fn check_wl(wl: u8) -> Result<()> {
    if (MIN_WL..=MAX_WL).contains(&wl) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "word length {wl} outside [{MIN_WL}, {MAX_WL}]"
        )))
    }
}

/// Largest representable code magnitude for `wl` bits.
pub fn qmax(wl: u8) -> i32 {
    (1i32 << (wl - 1)) - 1
}

/// Weight/activation word lengths, the `WxAy` notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantScheme {
    pub weight_wl: u8,
    pub act_wl: u8,
}

impl QuantScheme {
    pub fn new(weight_wl: u8, act_wl: u8) -> Result<Self> {
        check_wl(weight_wl)?;
        check_wl(act_wl)?;
        Ok(Self { weight_wl, act_wl })
    }

    pub fn w4a8() -> Self {
        Self { weight_wl: 4, act_wl: 8 }
    }
}

impl std::fmt::Display for QuantScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "W{}A{}", self.weight_wl, self.act_wl)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedVector {
    pub codes: Vec<i32>,
    pub scale: f64,
    pub wl: u8,
}

impl QuantizedVector {
    /// All-zero vector in the degenerate encoding (scale 1).
    pub fn zeros(len: usize, wl: u8) -> Self {
        Self {
            codes: vec![0; len],
            scale: 1.0,
            wl,
        }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dequantize(&self) -> Vec<f64> {
        dequantize(self)
    }
}

pub fn quantize_vector(v: &[f64], wl: u8) -> Result<QuantizedVector> {
    check_wl(wl)?;
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let max_abs = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max_abs == 0.0 {
        return Ok(QuantizedVector::zeros(v.len(), wl));
    }
    let q = qmax(wl);
    let scale = max_abs / q as f64;
    let codes = v
        .iter()
        .map(|x| ((x / scale).round_ties_even() as i32).clamp(-q, q))
        .collect();
    Ok(QuantizedVector { codes, scale, wl })
}

pub fn dequantize(q: &QuantizedVector) -> Vec<f64> {
    q.codes.iter().map(|c| *c as f64 * q.scale).collect()
}

/// Quantize-dequantize in one step.
pub fn fake_quantize(v: &[f64], wl: u8) -> Result<Vec<f64>> {
    Ok(quantize_vector(v, wl)?.dequantize())
}

/// Fake-quantize each row of `m` independently at `wl` bits. Used for
/// activations, which are quantized vector-wise along the row.
pub fn fake_quantize_rows(m: &Matrix, wl: u8) -> Result<Matrix> {
    check_wl(wl)?;
    let mut out = m.clone();
    let mut err = None;
    out.map_rows(|row| match fake_quantize(row, wl) {
        Ok(q) => row.copy_from_slice(&q),
        Err(e) => err = Some(e),
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Per-row quantization step sizes for `m` at `wl` bits.
pub fn row_scales(m: &Matrix, wl: u8) -> Vec<f64> {
    (0..m.rows())
        .map(|r| {
            let max_abs = m.row(r).iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if max_abs == 0.0 {
                0.0
            } else {
                max_abs / qmax(wl) as f64
            }
        })
        .collect()
}
