//! Low-rank factorizations of weight matrices.
//!
//! Three routes produce `W ≈ W1 W2` with `W1: K×r` and `W2: r×N`:
//!
//! * [`truncated_svd`]: the unquantized Eckart–Young optimum.
//! * [`svd_baseline`]: truncated SVD followed by vector-wise quantization of
//!   the factors. Quantization error is never revisited.
//! * [`iterative_decompose`]: a closed refinement loop. Each step takes the
//!   dominant rank-1 component of the current residual, quantizes it, and
//!   subtracts the *dequantized* product so the next step sees the
//!   quantization error it has to correct.
//!
//! Factors are kept in factored form; [`forward`] multiplies through
//! `(X W1) W2` without ever forming `W`.

mod jacobi;
mod store;

pub use jacobi::{svd, Svd};
pub use store::{load_decomposition, save_decomposition, DecompositionManifest};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{self, QuantizedVector};
use crate::tensor::{norm2, Matrix};

/// Power iteration stops once the Rayleigh quotient changes by at most this
/// fraction between steps.
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 10_000;
const POWER_SEED: u64 = 0x5eed_1e55;

/// Dominant singular triple `A ≈ sigma · u vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Triple {
    pub u: Vec<f64>,
    pub sigma: f64,
    pub v: Vec<f64>,
    /// Set when `A` is the zero matrix; `u`, `v` are then arbitrary unit
    /// vectors and `sigma` is 0.
    pub degenerate: bool,
    pub iterations: usize,
    pub converged: bool,
}

/// How the singular value is distributed between the two factors before
/// quantization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSplit {
    /// `√σ` on each side.
    #[default]
    Symmetric,
    /// All of `σ` on the left factor.
    Left,
    /// All of `σ` on the right factor.
    Right,
}

impl SigmaSplit {
    fn factors(self, sigma: f64) -> (f64, f64) {
        match self {
            SigmaSplit::Symmetric => (sigma.sqrt(), sigma.sqrt()),
            SigmaSplit::Left => (sigma, 1.0),
            SigmaSplit::Right => (1.0, sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompConfig {
    pub sigma_split: SigmaSplit,
}

/// Quantized factors `W'1` (stored as columns) and `W'2` (stored as rows).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedDecomposition {
    pub k: usize,
    pub n: usize,
    pub rank: usize,
    pub weight_wl: u8,
    /// Columns of `W'1`, each of length `k`.
    pub w1: Vec<QuantizedVector>,
    /// Rows of `W'2`, each of length `n`.
    pub w2: Vec<QuantizedVector>,
    /// `‖W − Σ_{j≤i} W'1^j W'2^j‖_F` for `i = 0..=rank`.
    pub residual_norms: Vec<f64>,
    /// First step at which the residual was exactly zero and the remaining
    /// factors were zero-filled.
    pub zero_filled_from: Option<usize>,
}

impl QuantizedDecomposition {
    pub fn final_residual(&self) -> f64 {
        *self.residual_norms.last().expect("residual history is never empty")
    }

    /// Dequantized `W'1` as a `k × rank` matrix.
    pub fn w1_matrix(&self) -> Matrix {
        let cols: Vec<Vec<f64>> = self.w1.iter().map(QuantizedVector::dequantize).collect();
        Matrix::from_columns(&cols).expect("consistent factor lengths")
    }

    /// Dequantized `W'2` as a `rank × n` matrix.
    pub fn w2_matrix(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = self.w2.iter().map(QuantizedVector::dequantize).collect();
        Matrix::from_row_vecs(&rows).expect("consistent factor lengths")
    }

    /// The first `rank` components. Both the iterative loop and the baseline
    /// are prefix-consistent, so this equals decomposing directly at `rank`.
    pub fn truncated(&self, rank: usize) -> Result<Self> {
        if rank == 0 || rank > self.rank {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate rank-{} decomposition to {rank}",
                self.rank
            )));
        }
        Ok(Self {
            k: self.k,
            n: self.n,
            rank,
            weight_wl: self.weight_wl,
            w1: self.w1[..rank].to_vec(),
            w2: self.w2[..rank].to_vec(),
            residual_norms: self.residual_norms[..=rank].to_vec(),
            zero_filled_from: self.zero_filled_from.filter(|z| *z <= rank),
        })
    }
}

/// Unquantized factors from the refinement loop.
#[derive(Debug, Clone)]
pub struct LowRankFactors {
    pub w1: Matrix,
    pub w2: Matrix,
    pub residual_norms: Vec<f64>,
}

pub fn rank1_svd(a: &Matrix) -> Rank1Triple {
    let (rows, cols) = a.shape();
    if a.is_zero() {
        let mut u = vec![0.0; rows];
        let mut v = vec![0.0; cols];
        u[0] = 1.0;
        v[0] = 1.0;
        return Rank1Triple {
            u,
            sigma: 0.0,
            v,
            degenerate: true,
            iterations: 0,
            converged: true,
        };
    }

    // Retry with a fresh start vector in the vanishingly unlikely case the
    // first one is orthogonal to the row space.
    for attempt in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED + attempt);
        let mut v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n0 = norm2(&v);
        v.iter_mut().for_each(|x| *x /= n0);

        let mut av = a.mul_vec(&v);
        let mut lambda = dot_self(&av);
        if lambda == 0.0 {
            continue;
        }
        let mut iterations = 0;
        let mut converged = false;
        while iterations < POWER_MAX_ITERS {
            iterations += 1;
            let mut w = a.tr_mul_vec(&av);
            let wn = norm2(&w);
            if wn == 0.0 {
                break;
            }
            w.iter_mut().for_each(|x| *x /= wn);
            v = w;
            av = a.mul_vec(&v);
            let next = dot_self(&av);
            let change = (next - lambda).abs();
            lambda = next;
            if change <= POWER_TOL * lambda {
                converged = true;
                break;
            }
        }
        let sigma = lambda.sqrt();
        if sigma == 0.0 {
            continue;
        }
        let u = av.iter().map(|x| x / sigma).collect();
        return Rank1Triple {
            u,
            sigma,
            v,
            degenerate: false,
            iterations,
            converged,
        };
    }
    unreachable!("power iteration start vectors all orthogonal to a nonzero matrix")
}

fn dot_self(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn check_rank(w: &Matrix, r: usize) -> Result<()> {
    let max = w.rows().min(w.cols());
    if r == 0 || r > max {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside [1, {max}] for a {}x{} matrix",
            w.rows(),
            w.cols()
        )));
    }
    Ok(())
}

/// Best rank-`r` approximation split as `W1 = U_r Σ_r^½`, `W2 = Σ_r^½ V_rᵀ`.
pub fn truncated_svd(w: &Matrix, r: usize) -> Result<(Matrix, Matrix)> {
    check_rank(w, r)?;
    let full = svd(w);
    let left: Vec<Vec<f64>> = (0..r)
        .map(|k| {
            let s = full.s[k].sqrt();
            full.u.column(k).into_iter().map(|x| x * s).collect()
        })
        .collect();
    let right: Vec<Vec<f64>> = (0..r)
        .map(|k| {
            let s = full.s[k].sqrt();
            full.v.column(k).into_iter().map(|x| x * s).collect()
        })
        .collect();
    Ok((Matrix::from_columns(&left)?, Matrix::from_row_vecs(&right)?))
}

/// Truncated SVD, then each column of `W1` and each row of `W2` quantized
/// independently.
pub fn svd_baseline(w: &Matrix, r: usize, wl: u8) -> Result<QuantizedDecomposition> {
    quant::check_wl(wl)?;
    let (w1, w2) = truncated_svd(w, r)?;
    let mut residual = w.clone();
    let mut residual_norms = vec![w.frobenius_norm()];
    let mut q1 = Vec::with_capacity(r);
    let mut q2 = Vec::with_capacity(r);
    for k in 0..r {
        let a = quant::quantize_vector(&w1.column(k), wl)?;
        let b = quant::quantize_vector(w2.row(k), wl)?;
        residual.add_outer(&a.dequantize(), &b.dequantize(), -1.0);
        residual_norms.push(residual.frobenius_norm());
        q1.push(a);
        q2.push(b);
    }
    Ok(QuantizedDecomposition {
        k: w.rows(),
        n: w.cols(),
        rank: r,
        weight_wl: wl,
        w1: q1,
        w2: q2,
        residual_norms,
        zero_filled_from: None,
    })
}

/// Maps a real factor vector to what gets stored plus its dequantized value.
trait FactorCodec {
    type Stored;
    fn encode(&self, v: &[f64]) -> Result<(Self::Stored, Vec<f64>)>;
    fn zero(&self, len: usize) -> Self::Stored;
}

struct Quantizing(u8);

impl FactorCodec for Quantizing {
    type Stored = QuantizedVector;
    fn encode(&self, v: &[f64]) -> Result<(QuantizedVector, Vec<f64>)> {
        let q = quant::quantize_vector(v, self.0)?;
        let d = q.dequantize();
        Ok((q, d))
    }
    fn zero(&self, len: usize) -> QuantizedVector {
        QuantizedVector::zeros(len, self.0)
    }
}

struct Lossless;

impl FactorCodec for Lossless {
    type Stored = Vec<f64>;
    fn encode(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((v.to_vec(), v.to_vec()))
    }
    fn zero(&self, len: usize) -> Vec<f64> {
        vec![0.0; len]
    }
}

struct Refinement<S> {
    left: Vec<S>,
    right: Vec<S>,
    residual_norms: Vec<f64>,
    zero_filled_from: Option<usize>,
}

fn refine<C: FactorCodec>(w: &Matrix, r: usize, config: &DecompConfig, codec: &C) -> Result<Refinement<C::Stored>> {
    check_rank(w, r)?;
    let mut residual = w.clone();
    let mut out = Refinement {
        left: Vec::with_capacity(r),
        right: Vec::with_capacity(r),
        residual_norms: Vec::with_capacity(r + 1),
        zero_filled_from: None,
    };
    out.residual_norms.push(w.frobenius_norm());
    for step in 1..=r {
        if out.zero_filled_from.is_none() && residual.is_zero() {
            out.zero_filled_from = Some(step);
        }
        if out.zero_filled_from.is_some() {
            out.left.push(codec.zero(w.rows()));
            out.right.push(codec.zero(w.cols()));
            out.residual_norms.push(0.0);
            continue;
        }
        let t = rank1_svd(&residual);
        let (ls, rs) = config.sigma_split.factors(t.sigma);
        let a: Vec<f64> = t.u.iter().map(|x| x * ls).collect();
        let b: Vec<f64> = t.v.iter().map(|x| x * rs).collect();
        let (qa, da) = codec.encode(&a)?;
        let (qb, db) = codec.encode(&b)?;
        residual.add_outer(&da, &db, -1.0);
        out.residual_norms.push(residual.frobenius_norm());
        out.left.push(qa);
        out.right.push(qb);
    }
    Ok(out)
}

/// The quantization-aware refinement loop with the default `√σ` split.
pub fn iterative_decompose(w: &Matrix, r: usize, wl: u8) -> Result<QuantizedDecomposition> {
    iterative_decompose_with(w, r, wl, &DecompConfig::default())
}

pub fn iterative_decompose_with(w: &Matrix, r: usize, wl: u8, config: &DecompConfig) -> Result<QuantizedDecomposition> {
    quant::check_wl(wl)?;
    let out = refine(w, r, config, &Quantizing(wl))?;
    Ok(QuantizedDecomposition {
        k: w.rows(),
        n: w.cols(),
        rank: r,
        weight_wl: wl,
        w1: out.left,
        w2: out.right,
        residual_norms: out.residual_norms,
        zero_filled_from: out.zero_filled_from,
    })
}

/// The same loop with quantization replaced by the identity: plain greedy
/// deflation.
pub fn iterative_decompose_lossless(w: &Matrix, r: usize) -> Result<LowRankFactors> {
    let out = refine(w, r, &DecompConfig::default(), &Lossless)?;
    Ok(LowRankFactors {
        w1: Matrix::from_columns(&out.left)?,
        w2: Matrix::from_row_vecs(&out.right)?,
        residual_norms: out.residual_norms,
    })
}

pub fn reconstruct(d: &QuantizedDecomposition) -> Matrix {
    let mut out = Matrix::zeros(d.k, d.n);
    for (a, b) in d.w1.iter().zip(&d.w2) {
        out.add_outer(&a.dequantize(), &b.dequantize(), 1.0);
    }
    out
}

/// `(X W'1) W'2` with activations quantized row-wise at `act_wl` before each
/// multiplication.
pub fn forward(x: &Matrix, d: &QuantizedDecomposition, act_wl: u8) -> Result<Matrix> {
    if x.cols() != d.k {
        return Err(Error::Shape(format!(
            "activation has {} columns, decomposition expects K={}",
            x.cols(),
            d.k
        )));
    }
    let xq = quant::fake_quantize_rows(x, act_wl)?;
    let hidden = xq.matmul(&d.w1_matrix())?;
    let hq = quant::fake_quantize_rows(&hidden, act_wl)?;
    hq.matmul(&d.w2_matrix())
}
