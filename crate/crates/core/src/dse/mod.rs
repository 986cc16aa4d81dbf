//! Co-design search: compress the model at several word lengths and rank
//! budgets, keep the Pareto-optimal compressions, then find the fastest
//! engine for each on the target device.

mod explore;
mod pipeline;

pub use explore::{
    candidates, explore_exhaustive, explore_hw, lower_bound, prune_design_space, total_latency, DesignPoint, ExploreOptions,
    HwGrid, LayerResult, LayerWorkload, PointKind,
};
pub use pipeline::{run_pipeline, summarize, write_reports, EvaluatorKind, PipelineOutput, SweepConfig, REPORT_FILES};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::quant;
use crate::sra::{
    self, quantized_dense, AccuracyEvaluator, CompressionMethod, DecompositionEvaluator, LayerApprox, ModelScorer,
    ReconstructionProxy, SraParams, SyntheticTask,
};
use crate::tensor::LayerShape;

/// Bits per FP32 weight, the reference for compression ratios.
const FP32_BITS: f64 = 32.0;

/// `Σ 32·K·N / Σ [(K·r + r·N)·wl + 2·r·16]`; one 16-bit scale is stored per
/// factor vector.
pub fn compression_ratio(shapes: &[LayerShape], wl: u8, ranks: &[usize]) -> f64 {
    let fp32: f64 = shapes.iter().map(|s| FP32_BITS * (s.k * s.n) as f64).sum();
    let stored: f64 = shapes
        .iter()
        .zip(ranks)
        .map(|(s, r)| ((s.k * r + r * s.n) * wl as usize + 2 * r * quant::SCALE_STORAGE_BITS as usize) as f64)
        .sum();
    fp32 / stored
}

/// Ratio for plain weight quantization; per-matrix scales are ignored.
pub fn dense_compression_ratio(wl: u8) -> f64 {
    FP32_BITS / wl as f64
}

pub fn svd_nops(shapes: &[LayerShape], ranks: &[usize]) -> u64 {
    shapes.iter().zip(ranks).map(|(s, r)| (s.m * r * (s.k + s.n)) as u64).sum()
}

pub fn dense_nops(shapes: &[LayerShape]) -> u64 {
    shapes.iter().map(LayerShape::macs).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointMethod {
    /// Iterative decomposition with allocated ranks.
    Sra,
    /// Plain truncated SVD, every layer at the same rank share.
    SvdUniform,
    /// Weight quantization without factorization.
    DenseQuant,
}

impl fmt::Display for PointMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sra => "sra",
            Self::SvdUniform => "svd_uniform",
            Self::DenseQuant => "dense_quant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPoint {
    pub method: PointMethod,
    pub weight_wl: u8,
    /// Total rank budget; `None` for dense points.
    pub budget: Option<usize>,
    /// Per-layer ranks; empty for dense points.
    pub ranks: Vec<usize>,
    pub accuracy: f64,
    pub compression_ratio: f64,
    pub nops: u64,
}

impl CompressionPoint {
    pub fn is_dense(&self) -> bool {
        self.method == PointMethod::DenseQuant
    }

    pub fn ranks_label(&self) -> String {
        self.ranks.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
    }

    /// Stable identity for deduplication and ordering.
    pub fn key(&self) -> String {
        format!("{}/w{}/{}", self.method, self.weight_wl, self.ranks_label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Fewer MACs is better.
    Nops,
    /// Higher compression is better.
    Ratio,
}

impl Axis {
    fn value(&self, p: &CompressionPoint) -> f64 {
        match self {
            Axis::Nops => p.nops as f64,
            Axis::Ratio => p.compression_ratio,
        }
    }

    fn cost(&self, p: &CompressionPoint) -> f64 {
        match self {
            Axis::Nops => self.value(p),
            Axis::Ratio => -self.value(p),
        }
    }
}

/// Items not dominated on (lower `cost`, higher `gain`), in ascending cost.
/// Among exact duplicates only the first survives.
pub fn pareto_by<T: Clone>(items: &[T], cost: impl Fn(&T) -> f64, gain: impl Fn(&T) -> f64) -> Vec<T> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    // cost ascending, gain descending, then input order
    order.sort_by(|a, b| {
        cost(&items[*a])
            .total_cmp(&cost(&items[*b]))
            .then(gain(&items[*b]).total_cmp(&gain(&items[*a])))
            .then(a.cmp(b))
    });
    let mut front = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for i in order {
        let g = gain(&items[i]);
        if g > best {
            best = g;
            front.push(items[i].clone());
        }
    }
    front
}

/// Accuracy/`axis` Pareto front, sorted by the axis value ascending.
pub fn pareto_extract(points: &[CompressionPoint], axis: Axis) -> Vec<CompressionPoint> {
    let mut front = pareto_by(points, |p| axis.cost(p), |p| p.accuracy);
    front.sort_by(|a, b| axis.value(a).total_cmp(&axis.value(b)));
    front
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub weight_wl: u8,
    pub budget: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub points: Vec<CompressionPoint>,
    pub failures: Vec<SweepFailure>,
}

/// For every word length: SRA points and uniform SVD-baseline points for each
/// budget, and one dense-quantized point. Failing points are recorded and
/// skipped.
pub fn compress_sweep<S: ModelScorer + Clone>(
    model: &ModelSpec,
    wls: &[u8],
    budgets: &[usize],
    scorer: &S,
    params: &SraParams,
) -> SweepOutput {
    let shapes = model.shapes();
    let caps = model.max_ranks();
    let mut out = SweepOutput::default();
    for &wl in wls {
        let fail = |budget, e: Error| SweepFailure {
            weight_wl: wl,
            budget,
            reason: e.to_string(),
        };
        let iterative = match DecompositionEvaluator::new(model.clone(), scorer.clone(), CompressionMethod::Iterative, wl) {
            Ok(e) => e,
            Err(e) => {
                out.failures.push(fail(None, e));
                continue;
            }
        };
        let baseline = DecompositionEvaluator::new(model.clone(), scorer.clone(), CompressionMethod::SvdBaseline, wl)
            .expect("word length already validated");
        for &budget in budgets {
            let sra_point = sra::run_sra(&iterative, budget, params).map(|o| CompressionPoint {
                method: PointMethod::Sra,
                weight_wl: wl,
                budget: Some(budget),
                compression_ratio: compression_ratio(&shapes, wl, &o.best.ranks),
                nops: svd_nops(&shapes, &o.best.ranks),
                ranks: o.best.ranks,
                accuracy: o.best_score,
            });
            match sra_point {
                Ok(p) => out.points.push(p),
                Err(e) => out.failures.push(fail(Some(budget), e)),
            }
            let uniform = sra::init_allocation(shapes.len(), budget, &caps, params.r_min).and_then(|a| {
                Ok(CompressionPoint {
                    method: PointMethod::SvdUniform,
                    weight_wl: wl,
                    budget: Some(budget),
                    accuracy: baseline.evaluate(&a.ranks)?,
                    compression_ratio: compression_ratio(&shapes, wl, &a.ranks),
                    nops: svd_nops(&shapes, &a.ranks),
                    ranks: a.ranks,
                })
            });
            match uniform {
                Ok(p) => out.points.push(p),
                Err(e) => out.failures.push(fail(Some(budget), e)),
            }
        }
        let dense = quantized_dense(model, wl).and_then(|layers| scorer.score(&layers));
        match dense {
            Ok(accuracy) => out.points.push(CompressionPoint {
                method: PointMethod::DenseQuant,
                weight_wl: wl,
                budget: None,
                ranks: Vec::new(),
                accuracy,
                compression_ratio: dense_compression_ratio(wl),
                nops: dense_nops(&shapes),
            }),
            Err(e) => out.failures.push(fail(None, e)),
        }
    }
    out
}

/// Either built-in scorer behind one type.
#[derive(Debug, Clone)]
pub enum AnyScorer {
    Reconstruction(ReconstructionProxy),
    Task(SyntheticTask),
}

impl ModelScorer for AnyScorer {
    fn score(&self, layers: &[LayerApprox]) -> Result<f64> {
        match self {
            Self::Reconstruction(s) => s.score(layers),
            Self::Task(s) => s.score(layers),
        }
    }
}

/// Checks that every budget can be allocated on `model`.
pub fn check_budgets(model: &ModelSpec, budgets: &[usize], r_min: usize) -> Result<()> {
    let caps = model.max_ranks();
    for b in budgets {
        sra::init_allocation(caps.len(), *b, &caps, r_min)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
