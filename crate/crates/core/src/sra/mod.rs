//! Sensitivity-based rank allocation.
//!
//! A fixed total rank budget is shared across layers. Each iteration measures
//! the finite-difference sensitivity of the accuracy functional to every
//! layer's rank, then moves `δ` ranks from the least to the most sensitive
//! layer. `δ` decays as `round(δ₀ / (1 + αn))`, never below 1.

mod evaluators;

pub use evaluators::{
    quantized_dense, CachedEvaluator, CompressionMethod, DecompositionEvaluator, FnEvaluator, LayerApprox, ModelScorer,
    ReconstructionProxy, SyntheticTask, TaskMetric,
};

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether an evaluator tolerates concurrent `evaluate` calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Serial,
    Parallel,
}

/// Scores a rank allocation; higher is better. Must be deterministic for a
/// fixed allocation.
pub trait AccuracyEvaluator: Sync {
    fn num_layers(&self) -> usize;

    /// Upper rank bound per layer.
    fn max_ranks(&self) -> Vec<usize>;

    fn evaluate(&self, ranks: &[usize]) -> Result<f64>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }
}

impl<T: AccuracyEvaluator + ?Sized> AccuracyEvaluator for &T {
    fn num_layers(&self) -> usize {
        (**self).num_layers()
    }
    fn max_ranks(&self) -> Vec<usize> {
        (**self).max_ranks()
    }
    fn evaluate(&self, ranks: &[usize]) -> Result<f64> {
        (**self).evaluate(ranks)
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

impl<T: AccuracyEvaluator + ?Sized> AccuracyEvaluator for Box<T> {
    fn num_layers(&self) -> usize {
        (**self).num_layers()
    }
    fn max_ranks(&self) -> Vec<usize> {
        (**self).max_ranks()
    }
    fn evaluate(&self, ranks: &[usize]) -> Result<f64> {
        (**self).evaluate(ranks)
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

/// Per-layer ranks whose sum is pinned to `budget`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RankAllocation {
    pub budget: usize,
    pub ranks: Vec<usize>,
}

impl RankAllocation {
    pub fn total(&self) -> usize {
        self.ranks.iter().sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        if a.total() != a.budget {
            return Err(Error::InvalidArgument(format!(
                "ranks sum to {} but budget is {}",
                a.total(),
                a.budget
            )));
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SraParams {
    pub delta0: usize,
    pub alpha: f64,
    pub max_iters: usize,
    pub patience: usize,
    pub r_min: usize,
}

impl Default for SraParams {
    fn default() -> Self {
        Self {
            delta0: 4,
            alpha: 0.25,
            max_iters: 60,
            patience: 12,
            r_min: 1,
        }
    }
}

impl SraParams {
    pub fn validate(&self) -> Result<()> {
        if self.delta0 < 1 {
            return Err(Error::InvalidArgument("delta0 must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument("alpha must be a positive finite number".into()));
        }
        if self.r_min < 1 {
            return Err(Error::InvalidArgument("r_min must be >= 1".into()));
        }
        Ok(())
    }
}

/// Even split with the remainder going to the lowest-indexed layers. Layers
/// whose cap is below their share are clamped and the overflow handed out one
/// unit at a time, in index order, to layers with headroom.
pub fn init_allocation(layers: usize, budget: usize, caps: &[usize], r_min: usize) -> Result<RankAllocation> {
    if layers == 0 || caps.len() != layers {
        return Err(Error::InvalidArgument(format!(
            "need one cap per layer, got {} caps for {layers} layers",
            caps.len()
        )));
    }
    if let Some(i) = caps.iter().position(|c| *c < r_min) {
        return Err(Error::Infeasible(format!("layer {i} cap {} is below r_min {r_min}", caps[i])));
    }
    if budget < layers * r_min {
        return Err(Error::Infeasible(format!(
            "budget {budget} cannot give {layers} layers at least {r_min} each"
        )));
    }
    let cap_sum: usize = caps.iter().sum();
    if budget > cap_sum {
        return Err(Error::Infeasible(format!(
            "budget {budget} exceeds the sum of layer caps {cap_sum}"
        )));
    }
    let base = budget / layers;
    let rem = budget % layers;
    let mut ranks: Vec<usize> = (0..layers).map(|i| base + usize::from(i < rem)).collect();
    let mut overflow = 0;
    for (r, cap) in ranks.iter_mut().zip(caps) {
        if *r > *cap {
            overflow += *r - cap;
            *r = *cap;
        }
    }
    while overflow > 0 {
        for (r, cap) in ranks.iter_mut().zip(caps) {
            if overflow == 0 {
                break;
            }
            if *r < *cap {
                *r += 1;
                overflow -= 1;
            }
        }
    }
    Ok(RankAllocation { budget, ranks })
}

/// `round(δ₀ / (1 + αn))`, half away from zero, floored at 1.
pub fn delta_decay(delta0: usize, alpha: f64, n: usize) -> usize {
    let d = (delta0 as f64 / (1.0 + alpha * n as f64)).round();
    (d as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difference {
    Central,
    /// Only `r + δ` was feasible.
    Forward,
    /// Only `r − δ` was feasible.
    Backward,
    /// No perturbation fits inside `[r_min, cap]`; value reported as 0.
    Clipped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    pub value: f64,
    /// Perturbation actually used after shrinking to the feasible range.
    pub delta: usize,
    pub kind: Difference,
}

/// Finite-difference estimate of `∂A/∂r_i`. The perturbation shrinks
/// symmetrically to stay within `[r_min, cap_i]`; when only one side fits a
/// one-sided difference is used.
pub fn sensitivity<E: AccuracyEvaluator + ?Sized>(
    eval: &E,
    alloc: &RankAllocation,
    caps: &[usize],
    i: usize,
    delta: usize,
    r_min: usize,
) -> Result<Sensitivity> {
    let r = alloc.ranks[i];
    let up = caps[i].saturating_sub(r).min(delta);
    let down = r.saturating_sub(r_min).min(delta);
    let at = |rank: usize| -> Result<f64> {
        let mut probe = alloc.ranks.clone();
        probe[i] = rank;
        eval.evaluate(&probe)
    };
    let sym = up.min(down);
    if sym > 0 {
        let value = (at(r + sym)? - at(r - sym)?) / (2 * sym) as f64;
        return Ok(Sensitivity {
            value,
            delta: sym,
            kind: Difference::Central,
        });
    }
    if up > 0 {
        let value = (at(r + up)? - at(r)?) / up as f64;
        return Ok(Sensitivity {
            value,
            delta: up,
            kind: Difference::Forward,
        });
    }
    if down > 0 {
        let value = (at(r)? - at(r - down)?) / down as f64;
        return Ok(Sensitivity {
            value,
            delta: down,
            kind: Difference::Backward,
        });
    }
    Ok(Sensitivity {
        value: 0.0,
        delta: 0,
        kind: Difference::Clipped,
    })
}

pub fn sensitivities<E: AccuracyEvaluator + ?Sized>(
    eval: &E,
    alloc: &RankAllocation,
    caps: &[usize],
    delta: usize,
    r_min: usize,
) -> Result<Vec<Sensitivity>> {
    let layers = alloc.ranks.len();
    match eval.concurrency() {
        Concurrency::Parallel => (0..layers)
            .into_par_iter()
            .map(|i| sensitivity(eval, alloc, caps, i, delta, r_min))
            .collect(),
        Concurrency::Serial => (0..layers).map(|i| sensitivity(eval, alloc, caps, i, delta, r_min)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Moved { from: usize, to: usize, amount: usize },
    Stalled,
}

/// Move up to `delta` ranks from the least to the most sensitive layer.
///
/// Only layers below their cap may receive and only layers above `r_min` may
/// give. Ties go to the lowest index. No move is made when the best receiver
/// is not strictly more sensitive than the best giver.
pub fn apply_step(
    alloc: &RankAllocation,
    sens: &[f64],
    delta: usize,
    caps: &[usize],
    r_min: usize,
) -> (RankAllocation, StepOutcome) {
    let pick = |candidates: &mut dyn Iterator<Item = usize>, better: fn(f64, f64) -> bool| {
        let mut best: Option<usize> = None;
        for i in candidates {
            if best.is_none_or(|b| better(sens[i], sens[b])) {
                best = Some(i);
            }
        }
        best
    };
    let n = alloc.ranks.len();
    let receiver = pick(&mut (0..n).filter(|i| alloc.ranks[*i] < caps[*i]), |a, b| a > b);
    let giver = pick(&mut (0..n).filter(|i| alloc.ranks[*i] > r_min), |a, b| a < b);
    let (Some(to), Some(from)) = (receiver, giver) else {
        return (alloc.clone(), StepOutcome::Stalled);
    };
    if to == from || sens[to] <= sens[from] {
        return (alloc.clone(), StepOutcome::Stalled);
    }
    let amount = delta.min(caps[to] - alloc.ranks[to]).min(alloc.ranks[from] - r_min);
    if amount == 0 {
        return (alloc.clone(), StepOutcome::Stalled);
    }
    let mut next = alloc.clone();
    next.ranks[to] += amount;
    next.ranks[from] -= amount;
    debug_assert_eq!(next.total(), alloc.budget);
    (next, StepOutcome::Moved { from, to, amount })
}

/// One measured rebalancing step.
pub fn sra_step<E: AccuracyEvaluator + ?Sized>(
    eval: &E,
    alloc: &RankAllocation,
    delta: usize,
    r_min: usize,
) -> Result<(RankAllocation, StepOutcome)> {
    let caps = eval.max_ranks();
    let sens = sensitivities(eval, alloc, &caps, delta, r_min)?;
    let values: Vec<f64> = sens.iter().map(|s| s.value).collect();
    Ok(apply_step(alloc, &values, delta, &caps, r_min))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub delta: usize,
    pub score: f64,
    pub ranks: Vec<usize>,
    pub best_score: f64,
    pub sensitivities: Vec<f64>,
    /// Evaluations requested this iteration (objective plus probes), before
    /// caching.
    pub requested_evaluations: usize,
    pub stalled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    Patience,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct SraOutcome {
    pub best: RankAllocation,
    pub best_score: f64,
    pub trace: Vec<TraceEntry>,
    pub stop: StopReason,
    /// Distinct allocations the underlying evaluator actually scored.
    pub evaluator_calls: usize,
}

/// Full allocation loop. Keeps the best allocation seen; stops after
/// `max_iters`, after `patience` iterations without improvement, or when a
/// step stalls at `δ = 1`.
pub fn run_sra<E: AccuracyEvaluator + ?Sized>(eval: &E, budget: usize, params: &SraParams) -> Result<SraOutcome> {
    params.validate()?;
    let layers = eval.num_layers();
    let caps = eval.max_ranks();
    let cached = CachedEvaluator::new(eval);
    let mut alloc = init_allocation(layers, budget, &caps, params.r_min)?;
    let mut best = alloc.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    let mut since_improvement = 0;
    let mut stop = StopReason::MaxIters;

    for n in 0..params.max_iters {
        let delta = delta_decay(params.delta0, params.alpha, n);
        let wrap = |e: Error| Error::Evaluator {
            iteration: n,
            source: Box::new(e),
        };
        let score = cached.evaluate(&alloc.ranks).map_err(wrap)?;
        let sens = sensitivities(&cached, &alloc, &caps, delta, params.r_min).map_err(wrap)?;
        let values: Vec<f64> = sens.iter().map(|s| s.value).collect();

        if score > best_score {
            best_score = score;
            best = alloc.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        let (next, outcome) = apply_step(&alloc, &values, delta, &caps, params.r_min);
        let stalled = outcome == StepOutcome::Stalled;
        trace.push(TraceEntry {
            iteration: n,
            delta,
            score,
            ranks: alloc.ranks.clone(),
            best_score,
            sensitivities: values,
            requested_evaluations: 2 * layers + 1,
            stalled,
        });
        debug_assert_eq!(next.total(), budget);
        if since_improvement >= params.patience {
            stop = StopReason::Patience;
            break;
        }
        if stalled && delta == 1 {
            stop = StopReason::Stalled;
            break;
        }
        alloc = next;
    }
    // the last move may not have been scored yet
    let last = cached.evaluate(&alloc.ranks)?;
    if last > best_score {
        best_score = last;
        best = alloc;
    }
    Ok(SraOutcome {
        best,
        best_score,
        trace,
        stop,
        evaluator_calls: cached.calls(),
    })
}

/// `iteration,delta,score,r_1..r_L`.
pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], w: W) -> Result<()> {
    let layers = trace.first().map(|t| t.ranks.len()).unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["iteration".to_string(), "delta".into(), "score".into()];
    header.extend((1..=layers).map(|i| format!("r_{i}")));
    out.write_record(&header)?;
    for t in trace {
        let mut row = vec![t.iteration.to_string(), t.delta.to_string(), t.score.to_string()];
        row.extend(t.ranks.iter().map(usize::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
