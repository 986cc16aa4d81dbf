//! Accuracy functionals for rank allocation.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use super::{AccuracyEvaluator, Concurrency};
use crate::decomp::{self, QuantizedDecomposition};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::quant;
use crate::tensor::Matrix;

/// A compressed stand-in for one layer's weights.
#[derive(Debug, Clone)]
pub enum LayerApprox {
    Dense(Matrix),
    /// `W ≈ w1 · w2`, with `w1` of shape `K × r` and `w2` of shape `r × N`.
    Factored {
        w1: Matrix,
        w2: Matrix,
    },
}

impl LayerApprox {
    pub fn from_decomposition(d: &QuantizedDecomposition) -> Self {
        Self::Factored {
            w1: d.w1_matrix(),
            w2: d.w2_matrix(),
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            Self::Dense(w) => w.clone(),
            Self::Factored { w1, w2 } => w1.matmul(w2).expect("factor shapes agree"),
        }
    }

    /// `x · Ŵ`, with activations fake-quantized row-wise before every
    /// multiplication when `act_wl` is given.
    pub fn apply(&self, x: &Matrix, act_wl: Option<u8>) -> Result<Matrix> {
        let q = |m: &Matrix| match act_wl {
            Some(wl) => quant::fake_quantize_rows(m, wl),
            None => Ok(m.clone()),
        };
        match self {
            Self::Dense(w) => q(x)?.matmul(w),
            Self::Factored { w1, w2 } => q(&q(x)?.matmul(w1)?)?.matmul(w2),
        }
    }
}

/// Weight-only quantization of every layer, column by column (one scale per
/// output channel).
pub fn quantized_dense(model: &ModelSpec, wl: u8) -> Result<Vec<LayerApprox>> {
    model
        .layers
        .iter()
        .map(|l| {
            let wt = quant::fake_quantize_rows(&l.weights.transpose(), wl)?;
            Ok(LayerApprox::Dense(wt.transpose()))
        })
        .collect()
}

/// Scores a full set of compressed layers. Higher is better.
pub trait ModelScorer: Sync {
    fn score(&self, layers: &[LayerApprox]) -> Result<f64>;
}

/// `A = −Σ_i ‖W_i − Ŵ_i‖_F / ‖W_i‖_F`.
#[derive(Debug, Clone)]
pub struct ReconstructionProxy {
    weights: Vec<Matrix>,
}

impl ReconstructionProxy {
    pub fn new(model: &ModelSpec) -> Self {
        Self {
            weights: model.layers.iter().map(|l| l.weights.clone()).collect(),
        }
    }
}

impl ModelScorer for ReconstructionProxy {
    fn score(&self, layers: &[LayerApprox]) -> Result<f64> {
        if layers.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "expected {} layers, got {}",
                self.weights.len(),
                layers.len()
            )));
        }
        let mut total = 0.0;
        for (w, approx) in self.weights.iter().zip(layers) {
            let err = w.sub(&approx.to_dense())?.frobenius_norm();
            let norm = w.frobenius_norm();
            total += if norm == 0.0 { err } else { err / norm };
        }
        Ok(-total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMetric {
    /// Fraction of calibration samples whose argmax matches the teacher.
    Top1,
    /// Top-1 agreement minus a small logit-error term, which breaks the ties a
    /// pure 0/1 metric leaves between nearby allocations.
    Top1WithLogitError,
}

/// A seeded MLP classifier (ReLU between layers) whose uncompressed outputs
/// define the labels. An allocation is scored by how well the compressed
/// network agrees with them on a seeded calibration set.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    inputs: Matrix,
    labels: Vec<usize>,
    teacher_logits: Matrix,
    act_wl: Option<u8>,
    metric: TaskMetric,
}

impl SyntheticTask {
    pub fn new(model: &ModelSpec, calibration: usize, seed: u64, act_wl: Option<u8>, metric: TaskMetric) -> Result<Self> {
        if !model.is_chain() {
            return Err(Error::Shape("synthetic task needs chained layer shapes".into()));
        }
        if calibration == 0 {
            return Err(Error::InvalidArgument("calibration set is empty".into()));
        }
        if let Some(wl) = act_wl {
            quant::check_wl(wl)?;
        }
        let inputs = Matrix::random_normal(calibration, model.layers[0].k(), seed);
        let dense: Vec<LayerApprox> = model.layers.iter().map(|l| LayerApprox::Dense(l.weights.clone())).collect();
        let teacher_logits = run_mlp(&inputs, &dense, None)?;
        let labels = argmax_rows(&teacher_logits);
        Ok(Self {
            inputs,
            labels,
            teacher_logits,
            act_wl,
            metric,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

fn run_mlp(x: &Matrix, layers: &[LayerApprox], act_wl: Option<u8>) -> Result<Matrix> {
    let mut h = x.clone();
    for (i, layer) in layers.iter().enumerate() {
        h = layer.apply(&h, act_wl)?;
        if i + 1 < layers.len() {
            h = h.map(|v| v.max(0.0));
        }
    }
    Ok(h)
}

fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl ModelScorer for SyntheticTask {
    fn score(&self, layers: &[LayerApprox]) -> Result<f64> {
        let logits = run_mlp(&self.inputs, layers, self.act_wl)?;
        let pred = argmax_rows(&logits);
        let hits = pred.iter().zip(&self.labels).filter(|(a, b)| a == b).count();
        let top1 = hits as f64 / self.labels.len() as f64;
        Ok(match self.metric {
            TaskMetric::Top1 => top1,
            TaskMetric::Top1WithLogitError => {
                let err = logits.sub(&self.teacher_logits)?.frobenius_norm();
                let rel = err / self.teacher_logits.frobenius_norm().max(f64::MIN_POSITIVE);
                top1 - 1e-3 * rel
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompressionMethod {
    Iterative,
    SvdBaseline,
}

/// Decomposes each layer once at full rank and scores allocations from
/// rank prefixes of those decompositions.
pub struct DecompositionEvaluator<S> {
    model: ModelSpec,
    scorer: S,
    method: CompressionMethod,
    weight_wl: u8,
    full: Vec<OnceLock<Result<QuantizedDecomposition, String>>>,
}

impl<S: ModelScorer> DecompositionEvaluator<S> {
    pub fn new(model: ModelSpec, scorer: S, method: CompressionMethod, weight_wl: u8) -> Result<Self> {
        quant::check_wl(weight_wl)?;
        let full = (0..model.layers.len()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            model,
            scorer,
            method,
            weight_wl,
            full,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    fn full_rank(&self, i: usize) -> Result<&QuantizedDecomposition> {
        let cell = self.full[i].get_or_init(|| {
            let w = &self.model.layers[i].weights;
            let r = self.model.layers[i].max_rank();
            let d = match self.method {
                CompressionMethod::Iterative => decomp::iterative_decompose(w, r, self.weight_wl),
                CompressionMethod::SvdBaseline => decomp::svd_baseline(w, r, self.weight_wl),
            };
            d.map_err(|e| e.to_string())
        });
        cell.as_ref().map_err(|e| Error::InvalidArgument(format!("layer {i}: {e}")))
    }

    pub fn decomposition(&self, i: usize, rank: usize) -> Result<QuantizedDecomposition> {
        self.full_rank(i)?.truncated(rank)
    }

    pub fn layers_at(&self, ranks: &[usize]) -> Result<Vec<LayerApprox>> {
        if ranks.len() != self.model.layers.len() {
            return Err(Error::Shape(format!(
                "allocation has {} entries for {} layers",
                ranks.len(),
                self.model.layers.len()
            )));
        }
        ranks
            .iter()
            .enumerate()
            .map(|(i, r)| Ok(LayerApprox::from_decomposition(&self.decomposition(i, *r)?)))
            .collect()
    }

    pub fn scorer(&self) -> &S {
        &self.scorer
    }
}

impl<S: ModelScorer> AccuracyEvaluator for DecompositionEvaluator<S> {
    fn num_layers(&self) -> usize {
        self.model.layers.len()
    }

    fn max_ranks(&self) -> Vec<usize> {
        self.model.max_ranks()
    }

    fn evaluate(&self, ranks: &[usize]) -> Result<f64> {
        self.scorer.score(&self.layers_at(ranks)?)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Parallel
    }
}

/// Evaluator backed by a plain function of the rank vector.
pub struct FnEvaluator<F> {
    caps: Vec<usize>,
    f: F,
}

impl<F: Fn(&[usize]) -> f64 + Sync> FnEvaluator<F> {
    pub fn new(caps: Vec<usize>, f: F) -> Self {
        Self { caps, f }
    }
}

impl<F: Fn(&[usize]) -> f64 + Sync> AccuracyEvaluator for FnEvaluator<F> {
    fn num_layers(&self) -> usize {
        self.caps.len()
    }

    fn max_ranks(&self) -> Vec<usize> {
        self.caps.clone()
    }

    fn evaluate(&self, ranks: &[usize]) -> Result<f64> {
        Ok((self.f)(ranks))
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Parallel
    }
}

/// Memoizes scores by allocation vector. Finite-difference probes revisit the
/// same allocations across iterations.
pub struct CachedEvaluator<E> {
    inner: E,
    cache: Mutex<HashMap<Vec<usize>, f64>>,
    calls: AtomicUsize,
}

impl<E: AccuracyEvaluator> CachedEvaluator<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of times the wrapped evaluator was actually invoked.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<E: AccuracyEvaluator> AccuracyEvaluator for CachedEvaluator<E> {
    fn num_layers(&self) -> usize {
        self.inner.num_layers()
    }

    fn max_ranks(&self) -> Vec<usize> {
        self.inner.max_ranks()
    }

    fn evaluate(&self, ranks: &[usize]) -> Result<f64> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(ranks) {
            return Ok(*v);
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let v = self.inner.evaluate(ranks)?;
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "evaluator returned {v} for allocation {ranks:?}"
            )));
        }
        self.cache.lock().expect("cache lock").insert(ranks.to_vec(), v);
        Ok(v)
    }

    fn concurrency(&self) -> Concurrency {
        self.inner.concurrency()
    }
}
