//! Analytical latency, resource and bandwidth models for tiled MatMul
//! engines.
//!
//! A tile of `M_t × N_t` processing elements, each a `K_f`-wide pipelined dot
//! product, walks an `M × K × N` product output-stationary: one LHS tile of
//! `M_t` rows is held while every `N_t`-column RHS tile streams past it.
//! Port rates are exact rationals; latency is the ceiling of the slowest
//! port's `words / rate`.

mod platform;

pub use platform::PlatformSpec;

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::QuantScheme;
use crate::tensor::LayerShape;

pub type Rate = Ratio<u128>;

/// `paper-literal` applies the printed LHS rate; `corrected` scales it by
/// `N_t`, which makes balanced tiles hit the loop-nest bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RateMode {
    PaperLiteral,
    #[default]
    Corrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileConfig {
    pub m_t: usize,
    pub n_t: usize,
    pub k_f: usize,
}

impl TileConfig {
    pub fn new(m_t: usize, n_t: usize, k_f: usize) -> Result<Self> {
        if m_t == 0 || n_t == 0 || k_f == 0 {
            return Err(Error::InvalidArgument(format!(
                "tile factors must be >= 1, got M_t={m_t} N_t={n_t} K_f={k_f}"
            )));
        }
        Ok(Self { m_t, n_t, k_f })
    }

    /// Padded `M'`, `N'` and the dot-product beat count `⌈K/K_f⌉`.
    pub fn padded(&self, shape: &LayerShape) -> (u128, u128, u128) {
        let m = shape.m.div_ceil(self.m_t) * self.m_t;
        let n = shape.n.div_ceil(self.n_t) * self.n_t;
        (m as u128, n as u128, shape.k.div_ceil(self.k_f) as u128)
    }

    /// Loop-nest trip count `⌈M/M_t⌉·⌈N/N_t⌉·⌈K/K_f⌉`.
    pub fn trip_count(&self, shape: &LayerShape) -> u64 {
        (shape.m.div_ceil(self.m_t) * shape.n.div_ceil(self.n_t) * shape.k.div_ceil(self.k_f)) as u64
    }

    /// Useful MACs over MACs the padded tile actually issues.
    pub fn occupancy(&self, shape: &LayerShape) -> f64 {
        let issued = self.trip_count(shape) as f64 * (self.m_t * self.n_t * self.k_f) as f64;
        shape.macs() as f64 / issued
    }
}

impl fmt::Display for TileConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.m_t, self.n_t, self.k_f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum EngineMode {
    Dense,
    SingleSvd,
    CascadeSvd,
}

impl fmt::Display for EngineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dense => "dense",
            Self::SingleSvd => "single_svd",
            Self::CascadeSvd => "cascade_svd",
        })
    }
}

/// For the cascade, `stage1.n_t` tiles the rank axis (`R_t`) and `stage2.k_f`
/// reduces over it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub mode: EngineMode,
    pub stage1: TileConfig,
    pub stage2: TileConfig,
    pub rank: usize,
}

impl EngineConfig {
    pub fn dense(tile: TileConfig) -> Self {
        Self {
            mode: EngineMode::Dense,
            stage1: tile,
            stage2: tile,
            rank: 0,
        }
    }

    pub fn single(tile: TileConfig, rank: usize) -> Self {
        Self {
            mode: EngineMode::SingleSvd,
            stage1: tile,
            stage2: tile,
            rank,
        }
    }

    pub fn cascade(stage1: TileConfig, stage2: TileConfig, rank: usize) -> Self {
        Self {
            mode: EngineMode::CascadeSvd,
            stage1,
            stage2,
            rank,
        }
    }

    /// Same engine with a different rank; used when one physical engine
    /// serves layers of different rank.
    pub fn with_rank(self, rank: usize) -> Self {
        Self { rank, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for t in [self.stage1, self.stage2] {
            TileConfig::new(t.m_t, t.n_t, t.k_f)?;
        }
        match self.mode {
            EngineMode::Dense => Ok(()),
            EngineMode::SingleSvd if self.stage1 != self.stage2 => Err(Error::InvalidArgument(
                "single SVD engine reuses one tile: stage1 must equal stage2".into(),
            )),
            EngineMode::CascadeSvd if self.stage1.m_t != self.stage2.m_t => Err(Error::InvalidArgument(format!(
                "cascade stages must share M_t, got {} and {}",
                self.stage1.m_t, self.stage2.m_t
            ))),
            _ if self.rank == 0 => Err(Error::InvalidArgument("SVD engines need rank >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Stable text key used for deterministic tie-breaking and reports.
    pub fn key(&self) -> String {
        match self.mode {
            EngineMode::Dense => format!("dense/{}", self.stage1),
            EngineMode::SingleSvd => format!("single_svd/{}", self.stage1),
            EngineMode::CascadeSvd => format!("cascade_svd/{}/{}", self.stage1, self.stage2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortRates {
    pub lhs: Rate,
    pub rhs: Rate,
    pub out: Rate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PortWorkloads {
    pub lhs: u64,
    pub rhs: u64,
    pub out: u64,
}

impl PortWorkloads {
    pub fn bits(&self, lhs_bits: u32, rhs_bits: u32, out_bits: u32) -> u64 {
        self.lhs * lhs_bits as u64 + self.rhs * rhs_bits as u64 + self.out * out_bits as u64
    }
}

fn ratio(num: u128, den: u128) -> Rate {
    Ratio::new(num, den)
}

pub fn tile_rates(cfg: &TileConfig, shape: &LayerShape, mode: RateMode) -> PortRates {
    let (_, n_pad, beats) = cfg.padded(shape);
    let (m_t, n_t, k_f) = (cfg.m_t as u128, cfg.n_t as u128, cfg.k_f as u128);
    let k = shape.k as u128;
    let lhs_num = match mode {
        RateMode::PaperLiteral => m_t * k,
        RateMode::Corrected => m_t * n_t * k,
    };
    PortRates {
        lhs: ratio(lhs_num, beats * n_pad),
        rhs: ratio(n_t * k_f, 1),
        out: ratio(m_t * n_t, beats),
    }
}

pub fn tile_workloads(cfg: &TileConfig, shape: &LayerShape) -> PortWorkloads {
    let (m_pad, n_pad, _) = cfg.padded(shape);
    let k = shape.k as u128;
    let lhs_tiles = m_pad / cfg.m_t as u128;
    PortWorkloads {
        lhs: (m_pad * k) as u64,
        rhs: (lhs_tiles * k * n_pad) as u64,
        out: (m_pad * n_pad) as u64,
    }
}

/// Exact `words / rate` per port.
pub fn port_times(cfg: &TileConfig, shape: &LayerShape, mode: RateMode) -> [Rate; 3] {
    let r = tile_rates(cfg, shape, mode);
    let w = tile_workloads(cfg, shape);
    [
        ratio(w.lhs as u128, 1) / r.lhs,
        ratio(w.rhs as u128, 1) / r.rhs,
        ratio(w.out as u128, 1) / r.out,
    ]
}

fn ceil_cycles(t: Rate) -> u64 {
    t.ceil().to_integer() as u64
}

pub fn tile_latency(cfg: &TileConfig, shape: &LayerShape, mode: RateMode) -> u64 {
    let [a, b, c] = port_times(cfg, shape, mode);
    ceil_cycles(a.max(b).max(c))
}

/// Latency when the LHS operand already sits on chip.
fn tile_latency_onchip_lhs(cfg: &TileConfig, shape: &LayerShape, mode: RateMode) -> u64 {
    let [_, b, c] = port_times(cfg, shape, mode);
    ceil_cycles(b.max(c))
}

pub fn dsp_per_pe(k_f: usize, f_packing: u64) -> u64 {
    (k_f as u64).div_ceil(f_packing.max(1))
}

pub fn dsp_usage(cfg: &TileConfig, f_packing: u64) -> u64 {
    (cfg.m_t * cfg.n_t) as u64 * dsp_per_pe(cfg.k_f, f_packing)
}

/// `(depth, width)` aspect ratios of one BRAM18K.
pub const BRAM18_ASPECTS: [(u64, u64); 6] = [(16384, 1), (8192, 2), (4096, 4), (2048, 9), (1024, 18), (512, 36)];

/// Fewest BRAM18K blocks holding `depth` words of `width` bits.
pub fn bram18(depth: u64, width: u64) -> u64 {
    let (depth, width) = (depth.max(1), width.max(1));
    BRAM18_ASPECTS
        .iter()
        .map(|(d, w)| width.div_ceil(*w) * depth.div_ceil(*d))
        .min()
        .expect("aspect table is non-empty")
}

/// One BRAM per DSP per side, each `⌈K/K_f⌉` deep.
pub fn bram_usage(cfg: &TileConfig, shape: &LayerShape, bits_lhs: u32, bits_rhs: u32, f_packing: u64) -> u64 {
    let depth = shape.k.div_ceil(cfg.k_f) as u64;
    let per_pe = |bits: u32| dsp_per_pe(cfg.k_f, f_packing) * bram18(depth, bits as u64);
    cfg.m_t as u64 * per_pe(bits_lhs) + cfg.n_t as u64 * per_pe(bits_rhs)
}

/// Average bits/cycle a dense tile needs to run at full rate.
pub fn bandwidth(cfg: &TileConfig, shape: &LayerShape, bits: [u32; 3], mode: RateMode) -> f64 {
    let w = tile_workloads(cfg, shape);
    let total = w.bits(bits[0], bits[1], bits[2]);
    if total == 0 {
        return 0.0;
    }
    total as f64 / tile_latency(cfg, shape, mode) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub dsp: u64,
    pub bram18: u64,
    pub bandwidth_bits_per_cycle: f64,
}

impl ResourceEstimate {
    /// Names the first budget the estimate exceeds.
    pub fn check(&self, platform: &PlatformSpec) -> Result<()> {
        if self.dsp > platform.dsp_total {
            return Err(Error::Infeasible(format!(
                "DSP {} exceeds {} on {}",
                self.dsp, platform.dsp_total, platform.name
            )));
        }
        if self.bram18 > platform.bram18_total {
            return Err(Error::Infeasible(format!(
                "BRAM18K {} exceeds {} on {}",
                self.bram18, platform.bram18_total, platform.name
            )));
        }
        Ok(())
    }

    pub fn fits(&self, platform: &PlatformSpec) -> bool {
        self.check(platform).is_ok()
    }
}

/// Off-chip traffic and compute time of one sequential stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageEstimate {
    pub cycles: u64,
    pub workloads: PortWorkloads,
    /// Words that actually cross the off-chip channel.
    pub offchip_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineEstimate {
    pub mode: EngineMode,
    /// Compute-bound latency, i.e. with an unlimited channel.
    pub cycles: u64,
    pub stages: Vec<StageEstimate>,
    pub resources: ResourceEstimate,
    /// Part of `resources.bram18` spent on the `XW1` buffer.
    pub intermediate_bram18: u64,
    pub occupancy: f64,
}

impl EngineEstimate {
    pub fn offchip_bits(&self) -> u64 {
        self.stages.iter().map(|s| s.offchip_bits).sum()
    }

    /// Latency under a channel of `bits_per_cycle`. Sequential stages each
    /// wait on their own traffic; the cascade streams both stages at once.
    pub fn latency_with_bandwidth(&self, bits_per_cycle: f64) -> u64 {
        let bound = |cycles: u64, bits: u64| -> u64 {
            if bits_per_cycle.is_infinite() {
                return cycles;
            }
            cycles.max((bits as f64 / bits_per_cycle).ceil() as u64)
        };
        match self.mode {
            EngineMode::CascadeSvd => bound(self.cycles, self.offchip_bits()),
            _ => self.stages.iter().map(|s| bound(s.cycles, s.offchip_bits)).sum(),
        }
    }

    pub fn latency_on(&self, platform: &PlatformSpec) -> u64 {
        self.latency_with_bandwidth(platform.bandwidth_bits_per_cycle)
    }
}

// Reductions over the rank may be narrower than K_f; they are padded to one
// beat rather than rejected, so one engine can serve layers of any rank.
fn check_fits(cfg: &TileConfig, shape: &LayerShape) -> Result<()> {
    if cfg.k_f > shape.k {
        return Err(Error::Infeasible(format!("K_f={} exceeds K={}", cfg.k_f, shape.k)));
    }
    Ok(())
}

pub fn dense_engine(
    tile: &TileConfig,
    shape: &LayerShape,
    scheme: QuantScheme,
    platform: &PlatformSpec,
    mode: RateMode,
) -> Result<EngineEstimate> {
    check_fits(tile, shape)?;
    let (a, w) = (scheme.act_wl as u32, scheme.weight_wl as u32);
    let fp = platform.f_packing(scheme.weight_wl);
    let cycles = tile_latency(tile, shape, mode);
    let workloads = tile_workloads(tile, shape);
    let bits = workloads.bits(a, w, a);
    Ok(EngineEstimate {
        mode: EngineMode::Dense,
        cycles,
        stages: vec![StageEstimate {
            cycles,
            workloads,
            offchip_bits: bits,
        }],
        resources: ResourceEstimate {
            dsp: dsp_usage(tile, fp),
            bram18: bram_usage(tile, shape, a, w, fp),
            bandwidth_bits_per_cycle: bits as f64 / cycles as f64,
        },
        intermediate_bram18: 0,
        occupancy: tile.occupancy(shape),
    })
}

fn intermediate_bram(m_t: usize, k_f2: usize, rank: usize, act_bits: u32) -> u64 {
    (m_t * k_f2) as u64 * bram18(rank.div_ceil(k_f2) as u64, act_bits as u64)
}

fn svd_shapes(shape: &LayerShape, rank: usize) -> Result<(LayerShape, LayerShape)> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be >= 1".into()));
    }
    Ok((
        LayerShape {
            m: shape.m,
            k: shape.k,
            n: rank,
        },
        LayerShape {
            m: shape.m,
            k: rank,
            n: shape.n,
        },
    ))
}

fn svd_occupancy(cfg: &EngineConfig, s1: &LayerShape, s2: &LayerShape) -> f64 {
    let issued = |t: &TileConfig, s: &LayerShape| t.trip_count(s) as f64 * (t.m_t * t.n_t * t.k_f) as f64;
    (s1.macs() + s2.macs()) as f64 / (issued(&cfg.stage1, s1) + issued(&cfg.stage2, s2))
}

/// One tile computes `XW1` then `(XW1)W2`. The intermediate stays on chip, so
/// stage 2 is not limited by its LHS port and neither stage moves it
/// off-chip.
pub fn single_engine(
    cfg: &EngineConfig,
    shape: &LayerShape,
    scheme: QuantScheme,
    platform: &PlatformSpec,
    mode: RateMode,
) -> Result<EngineEstimate> {
    cfg.validate()?;
    let (s1, s2) = svd_shapes(shape, cfg.rank)?;
    let tile = cfg.stage1;
    check_fits(&tile, &s1)?;
    let (a, w) = (scheme.act_wl as u32, scheme.weight_wl as u32);
    let fp = platform.f_packing(scheme.weight_wl);
    let l1 = tile_latency(&tile, &s1, mode);
    let l2 = tile_latency_onchip_lhs(&tile, &s2, mode);
    let w1 = tile_workloads(&tile, &s1);
    let w2 = tile_workloads(&tile, &s2);
    let b1 = w1.bits(a, w, 0);
    let b2 = w2.bits(0, w, a);
    let buffer = intermediate_bram(tile.m_t, tile.k_f, cfg.rank, a);
    let tile_bram = bram_usage(&tile, &s1, a, w, fp).max(bram_usage(&tile, &s2, a, w, fp));
    Ok(EngineEstimate {
        mode: EngineMode::SingleSvd,
        cycles: l1 + l2,
        stages: vec![
            StageEstimate {
                cycles: l1,
                workloads: w1,
                offchip_bits: b1,
            },
            StageEstimate {
                cycles: l2,
                workloads: w2,
                offchip_bits: b2,
            },
        ],
        resources: ResourceEstimate {
            dsp: dsp_usage(&tile, fp),
            bram18: tile_bram + buffer,
            bandwidth_bits_per_cycle: (b1 + b2) as f64 / (l1 + l2) as f64,
        },
        intermediate_bram18: buffer,
        occupancy: svd_occupancy(cfg, &s1, &s2),
    })
}

/// Two tiles run `XW1` and `(XW1)W2` concurrently, handing over one `M_t`-row
/// intermediate tile at a time. Latency is the slower stage plus one
/// stage-1 tile of fill.
pub fn cascade_engine(
    cfg: &EngineConfig,
    shape: &LayerShape,
    scheme: QuantScheme,
    platform: &PlatformSpec,
    mode: RateMode,
) -> Result<EngineEstimate> {
    cfg.validate()?;
    let (s1, s2) = svd_shapes(shape, cfg.rank)?;
    check_fits(&cfg.stage1, &s1)?;
    let (a, w) = (scheme.act_wl as u32, scheme.weight_wl as u32);
    let fp = platform.f_packing(scheme.weight_wl);
    let l1 = tile_latency(&cfg.stage1, &s1, mode);
    let l2 = tile_latency_onchip_lhs(&cfg.stage2, &s2, mode);
    let fill = l1.div_ceil(shape.m.div_ceil(cfg.stage1.m_t) as u64);
    let cycles = l1.max(l2) + fill;
    let w1 = tile_workloads(&cfg.stage1, &s1);
    let w2 = tile_workloads(&cfg.stage2, &s2);
    let b1 = w1.bits(a, w, 0);
    let b2 = w2.bits(0, w, a);
    let buffer = intermediate_bram(cfg.stage2.m_t, cfg.stage2.k_f, cfg.rank, a);
    Ok(EngineEstimate {
        mode: EngineMode::CascadeSvd,
        cycles,
        stages: vec![
            StageEstimate {
                cycles: l1,
                workloads: w1,
                offchip_bits: b1,
            },
            StageEstimate {
                cycles: l2,
                workloads: w2,
                offchip_bits: b2,
            },
        ],
        resources: ResourceEstimate {
            dsp: dsp_usage(&cfg.stage1, fp) + dsp_usage(&cfg.stage2, fp),
            bram18: bram_usage(&cfg.stage1, &s1, a, w, fp) + bram_usage(&cfg.stage2, &s2, a, w, fp) + buffer,
            bandwidth_bits_per_cycle: (b1 + b2) as f64 / cycles as f64,
        },
        intermediate_bram18: buffer,
        occupancy: svd_occupancy(cfg, &s1, &s2),
    })
}

pub fn estimate(
    cfg: &EngineConfig,
    shape: &LayerShape,
    scheme: QuantScheme,
    platform: &PlatformSpec,
    mode: RateMode,
) -> Result<EngineEstimate> {
    match cfg.mode {
        EngineMode::Dense => dense_engine(&cfg.stage1, shape, scheme, platform, mode),
        EngineMode::SingleSvd => single_engine(cfg, shape, scheme, platform, mode),
        EngineMode::CascadeSvd => cascade_engine(cfg, shape, scheme, platform, mode),
    }
}

/// MACs for one forward pass: `M·r·(K+N)` factored, `M·K·N` dense.
pub fn svd_macs(shape: &LayerShape, rank: usize) -> u64 {
    (shape.m * rank * (shape.k + shape.n)) as u64
}

#[cfg(test)]
mod tests;
