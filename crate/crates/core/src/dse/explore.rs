use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dfsim::{self, Overlap, SimOptions};
use crate::error::{Error, Result};
use crate::hwmodel::{self, EngineConfig, EngineEstimate, EngineMode, PlatformSpec, RateMode, ResourceEstimate, TileConfig};
use crate::quant::QuantScheme;
use crate::tensor::LayerShape;

use super::CompressionPoint;

/// Tile factors to try. `r_t` tiles the rank axis in cascade stage 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HwGrid {
    pub m_t: Vec<usize>,
    pub n_t: Vec<usize>,
    pub r_t: Vec<usize>,
    pub k_f: Vec<usize>,
}

fn powers_of_two(max: usize) -> Vec<usize> {
    (0..).map(|e| 1usize << e).take_while(|v| *v <= max).collect()
}

impl Default for HwGrid {
    fn default() -> Self {
        Self {
            m_t: powers_of_two(64),
            n_t: powers_of_two(64),
            r_t: powers_of_two(64),
            k_f: powers_of_two(32),
        }
    }
}

impl HwGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m_t", &self.m_t), ("n_t", &self.n_t), ("r_t", &self.r_t), ("k_f", &self.k_f)] {
            if v.is_empty() || v.contains(&0) {
                return Err(Error::InvalidArgument(format!("grid axis {name} must be non-empty and >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Dense,
    Svd,
}

/// One layer as the hardware sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerWorkload {
    pub shape: LayerShape,
    /// `None` runs the layer dense.
    pub rank: Option<usize>,
}

impl LayerWorkload {
    pub fn from_point(shapes: &[LayerShape], point: &CompressionPoint) -> Vec<Self> {
        shapes
            .iter()
            .enumerate()
            .map(|(i, s)| LayerWorkload {
                shape: *s,
                rank: (!point.is_dense()).then(|| point.ranks[i]),
            })
            .collect()
    }
}

/// Engine templates for a point kind. SVD points may use either SVD engine;
/// the rank is filled in per layer.
pub fn candidates(kind: PointKind, grid: &HwGrid) -> Vec<EngineConfig> {
    let mut out = Vec::new();
    let tiles = |n_axis: &[usize]| -> Vec<TileConfig> {
        let mut v = Vec::new();
        for &m_t in &grid.m_t {
            for &n_t in n_axis {
                for &k_f in &grid.k_f {
                    v.push(TileConfig { m_t, n_t, k_f });
                }
            }
        }
        v
    };
    match kind {
        PointKind::Dense => out.extend(tiles(&grid.n_t).into_iter().map(EngineConfig::dense)),
        PointKind::Svd => {
            out.extend(tiles(&grid.n_t).into_iter().map(|t| EngineConfig::single(t, 1)));
            let stage1 = tiles(&grid.r_t);
            let stage2 = tiles(&grid.n_t);
            for a in &stage1 {
                for b in stage2.iter().filter(|b| b.m_t == a.m_t) {
                    out.push(EngineConfig::cascade(*a, *b, 1));
                }
            }
        }
    }
    out
}

fn layer_engine(template: &EngineConfig, layer: &LayerWorkload) -> EngineConfig {
    match layer.rank {
        Some(r) => template.with_rank(r),
        None => *template,
    }
}

fn estimates(
    template: &EngineConfig,
    layers: &[LayerWorkload],
    scheme: QuantScheme,
    platform: &PlatformSpec,
    mode: RateMode,
) -> Result<Vec<EngineEstimate>> {
    layers
        .iter()
        .map(|l| hwmodel::estimate(&layer_engine(template, l), &l.shape, scheme, platform, mode))
        .collect()
}

/// Resources of one engine serving every layer: the largest need per kind.
fn shared_resources(est: &[EngineEstimate]) -> ResourceEstimate {
    let cycles: u64 = est.iter().map(|e| e.cycles).sum();
    let bits: u64 = est.iter().map(EngineEstimate::offchip_bits).sum();
    ResourceEstimate {
        dsp: est.iter().map(|e| e.resources.dsp).max().unwrap_or(0),
        bram18: est.iter().map(|e| e.resources.bram18).max().unwrap_or(0),
        bandwidth_bits_per_cycle: if cycles == 0 { 0.0 } else { bits as f64 / cycles as f64 },
    }
}

/// Templates that fit the platform for every layer.
pub fn prune_design_space(
    platform: &PlatformSpec,
    templates: &[EngineConfig],
    layers: &[LayerWorkload],
    scheme: QuantScheme,
) -> Result<Vec<EngineConfig>> {
    let keep: Vec<EngineConfig> = templates
        .par_iter()
        .filter(|t| {
            estimates(t, layers, scheme, platform, RateMode::Corrected)
                .map(|e| shared_resources(&e).fits(platform))
                .unwrap_or(false)
        })
        .copied()
        .collect();
    if keep.is_empty() {
        return Err(no_fit(platform, templates, layers, scheme));
    }
    Ok(keep)
}

fn no_fit(platform: &PlatformSpec, templates: &[EngineConfig], layers: &[LayerWorkload], scheme: QuantScheme) -> Error {
    let mut min_dsp = u64::MAX;
    let mut min_bram = u64::MAX;
    let mut shape_errors = 0;
    for t in templates {
        match estimates(t, layers, scheme, platform, RateMode::Corrected) {
            Ok(e) => {
                let r = shared_resources(&e);
                min_dsp = min_dsp.min(r.dsp);
                min_bram = min_bram.min(r.bram18);
            }
            Err(_) => shape_errors += 1,
        }
    }
    let reason = if shape_errors == templates.len() {
        "no candidate tile is valid for these layer shapes (check K_f against K)".to_string()
    } else if min_dsp > platform.dsp_total {
        format!("smallest engine needs {min_dsp} DSP, platform has {}", platform.dsp_total)
    } else {
        format!(
            "smallest engine needs {min_bram} BRAM18K, platform has {}",
            platform.bram18_total
        )
    };
    Error::Infeasible(format!("no engine fits {}: {reason}", platform.name))
}

/// Sum of bandwidth-aware layer latencies on one engine.
pub fn total_latency(
    template: &EngineConfig,
    layers: &[LayerWorkload],
    scheme: QuantScheme,
    platform: &PlatformSpec,
    mode: RateMode,
) -> Result<u64> {
    Ok(estimates(template, layers, scheme, platform, mode)?
        .iter()
        .map(|e| e.latency_on(platform))
        .sum())
}

/// Never exceeds `total_latency`: each cycle retires at most one MAC per
/// multiplier.
pub fn lower_bound(template: &EngineConfig, layers: &[LayerWorkload]) -> u64 {
    let mults = |t: &TileConfig| (t.m_t * t.n_t * t.k_f) as u64;
    layers
        .iter()
        .map(|l| match (template.mode, l.rank) {
            (EngineMode::CascadeSvd, Some(r)) => {
                hwmodel::svd_macs(&l.shape, r).div_ceil(mults(&template.stage1) + mults(&template.stage2))
            }
            (_, Some(r)) => hwmodel::svd_macs(&l.shape, r).div_ceil(mults(&template.stage1)),
            (_, None) => l.shape.macs().div_ceil(mults(&template.stage1)),
        })
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploreOptions {
    pub rate_mode: RateMode,
    /// Re-simulate this many of the fastest engines and pick by simulated
    /// cycles; 0 trusts the analytical model.
    pub verify_top: usize,
    pub overlap: Overlap,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        Self {
            rate_mode: RateMode::Corrected,
            verify_top: 0,
            overlap: Overlap::DoubleBuffered,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerResult {
    pub rank: Option<usize>,
    pub cycles: u64,
    pub sim_cycles: Option<u64>,
    pub occupancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub compression: Option<CompressionPoint>,
    /// Shared engine; per-layer ranks come from the compression point.
    pub engine: EngineConfig,
    pub layers: Vec<LayerResult>,
    pub total_latency_cycles: u64,
    pub sim_latency_cycles: Option<u64>,
    pub resources: ResourceEstimate,
}

impl DesignPoint {
    /// Simulated cycles when available, else the analytical figure.
    pub fn latency(&self) -> u64 {
        self.sim_latency_cycles.unwrap_or(self.total_latency_cycles)
    }
}

fn design_point(
    template: &EngineConfig,
    layers: &[LayerWorkload],
    scheme: QuantScheme,
    platform: &PlatformSpec,
    mode: RateMode,
) -> Result<DesignPoint> {
    let est = estimates(template, layers, scheme, platform, mode)?;
    let per_layer: Vec<LayerResult> = est
        .iter()
        .zip(layers)
        .map(|(e, l)| LayerResult {
            rank: l.rank,
            cycles: e.latency_on(platform),
            sim_cycles: None,
            occupancy: e.occupancy,
        })
        .collect();
    Ok(DesignPoint {
        compression: None,
        engine: *template,
        total_latency_cycles: per_layer.iter().map(|l| l.cycles).sum(),
        layers: per_layer,
        sim_latency_cycles: None,
        resources: shared_resources(&est),
    })
}

fn simulate_point(
    dp: &mut DesignPoint,
    layers: &[LayerWorkload],
    scheme: QuantScheme,
    platform: &PlatformSpec,
    overlap: Overlap,
) -> Result<()> {
    let mut total = 0;
    for (res, l) in dp.layers.iter_mut().zip(layers) {
        let engine = layer_engine(&dp.engine, l);
        let sim = dfsim::simulate(&engine, &l.shape, scheme, platform, SimOptions { overlap, trace: false })?;
        res.sim_cycles = Some(sim.cycles);
        total += sim.cycles;
    }
    dp.sim_latency_cycles = Some(total);
    Ok(())
}

/// Fastest feasible engine over the whole grid, by brute force. Ties go to
/// the smaller config key.
pub fn explore_exhaustive(
    layers: &[LayerWorkload],
    kind: PointKind,
    scheme: QuantScheme,
    platform: &PlatformSpec,
    grid: &HwGrid,
    mode: RateMode,
) -> Result<DesignPoint> {
    let feasible = prune_design_space(platform, &candidates(kind, grid), layers, scheme)?;
    let best = feasible
        .iter()
        .map(|t| Ok((total_latency(t, layers, scheme, platform, mode)?, t.key(), *t)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
        .expect("pruning never returns an empty set");
    design_point(&best.2, layers, scheme, platform, mode)
}

/// Branch and bound over the pruned grid, visiting engines in order of a
/// MAC-throughput lower bound. Returns the same engine as
/// [`explore_exhaustive`] when `verify_top` is 0.
pub fn explore_hw(
    layers: &[LayerWorkload],
    kind: PointKind,
    scheme: QuantScheme,
    platform: &PlatformSpec,
    grid: &HwGrid,
    opts: &ExploreOptions,
) -> Result<DesignPoint> {
    grid.validate()?;
    if layers.is_empty() {
        return Err(Error::InvalidArgument("no layers to map".into()));
    }
    let feasible = prune_design_space(platform, &candidates(kind, grid), layers, scheme)?;
    let mut order: Vec<(u64, String, EngineConfig)> =
        feasible.into_iter().map(|t| (lower_bound(&t, layers), t.key(), t)).collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let keep = opts.verify_top.max(1);
    // (latency, key, template), kept sorted, at most `keep` long
    let mut best: Vec<(u64, String, EngineConfig)> = Vec::new();
    for (bound, key, t) in order {
        if best.len() == keep && bound > best[keep - 1].0 {
            break;
        }
        let lat = total_latency(&t, layers, scheme, platform, opts.rate_mode)?;
        let pos = best.partition_point(|b| (b.0, &b.1) < (lat, &key));
        if pos < keep {
            best.insert(pos, (lat, key, t));
            best.truncate(keep);
        }
    }
    let mut points = best
        .iter()
        .map(|(_, _, t)| design_point(t, layers, scheme, platform, opts.rate_mode))
        .collect::<Result<Vec<_>>>()?;
    if opts.verify_top == 0 {
        return Ok(points.swap_remove(0));
    }
    for p in points.iter_mut() {
        simulate_point(p, layers, scheme, platform, opts.overlap)?;
    }
    let chosen = points
        .into_iter()
        .min_by(|a, b| {
            a.latency()
                .cmp(&b.latency())
                .then_with(|| a.engine.key().cmp(&b.engine.key()))
        })
        .expect("at least one candidate");
    Ok(chosen)
}
