use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dfsim::Overlap;
use crate::error::{Error, Result};
use crate::hwmodel::{EngineMode, PlatformSpec, RateMode};
use crate::model::ModelSpec;
use crate::quant::{self, QuantScheme};
use crate::sra::{ReconstructionProxy, SraParams, SyntheticTask, TaskMetric};

use super::explore::{explore_hw, DesignPoint, ExploreOptions, HwGrid, LayerWorkload, PointKind};
use super::{compress_sweep, pareto_by, pareto_extract, AnyScorer, Axis, CompressionPoint, SweepOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorKind {
    Reconstruction,
    SyntheticTask {
        calibration: usize,
        #[serde(default)]
        logit_tiebreak: bool,
    },
}

/// Everything a `dse` run needs besides the model and platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub seed: u64,
    pub weight_wls: Vec<u8>,
    #[serde(default = "default_act_wl")]
    pub act_wl: u8,
    pub budgets: Vec<usize>,
    #[serde(default)]
    pub sra: SraParams,
    #[serde(default = "default_evaluator")]
    pub evaluator: EvaluatorKind,
    #[serde(default)]
    pub grid: HwGrid,
    #[serde(default)]
    pub rate_mode: RateMode,
    #[serde(default)]
    pub overlap: Overlap,
    /// Engines re-simulated per design point; 0 disables simulation.
    #[serde(default = "default_verify_top")]
    pub verify_top: usize,
}

fn default_act_wl() -> u8 {
    8
}

fn default_evaluator() -> EvaluatorKind {
    EvaluatorKind::Reconstruction
}

fn default_verify_top() -> usize {
    5
}

impl SweepConfig {
    /// A small sweep sized for the bundled toy model.
    pub fn toy(seed: u64) -> Self {
        Self {
            seed,
            weight_wls: vec![4, 6, 8],
            act_wl: 8,
            budgets: vec![16, 32, 64, 96],
            sra: SraParams::default(),
            evaluator: EvaluatorKind::Reconstruction,
            grid: HwGrid::default(),
            rate_mode: RateMode::Corrected,
            overlap: Overlap::DoubleBuffered,
            verify_top: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight_wls.is_empty() {
            return Err(Error::InvalidArgument("weight_wls is empty".into()));
        }
        for wl in self.weight_wls.iter().chain([&self.act_wl]) {
            quant::check_wl(*wl)?;
        }
        self.sra.validate()?;
        self.grid.validate()
    }

    fn scorer(&self, model: &ModelSpec) -> Result<AnyScorer> {
        Ok(match self.evaluator {
            EvaluatorKind::Reconstruction => AnyScorer::Reconstruction(ReconstructionProxy::new(model)),
            EvaluatorKind::SyntheticTask {
                calibration,
                logit_tiebreak,
            } => {
                let metric = if logit_tiebreak {
                    TaskMetric::Top1WithLogitError
                } else {
                    TaskMetric::Top1
                };
                AnyScorer::Task(SyntheticTask::new(model, calibration, self.seed, Some(self.act_wl), metric)?)
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub sweep: SweepOutput,
    pub front_ratio: Vec<CompressionPoint>,
    pub front_nops: Vec<CompressionPoint>,
    /// One entry per distinct point on either model front, in key order.
    pub designs: Vec<DesignPoint>,
    /// Accuracy/latency front over `designs`, by ascending latency.
    pub hw_front: Vec<DesignPoint>,
}

/// Sweep, model fronts, per-point engine search, accuracy/latency front.
pub fn run_pipeline(model: &ModelSpec, platform: &PlatformSpec, cfg: &SweepConfig) -> Result<PipelineOutput> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    platform.validate().map_err(|e| e.in_stage("config"))?;
    super::check_budgets(model, &cfg.budgets, cfg.sra.r_min).map_err(|e| e.in_stage("config"))?;

    let scorer = cfg.scorer(model).map_err(|e| e.in_stage("evaluator"))?;
    let sweep = compress_sweep(model, &cfg.weight_wls, &cfg.budgets, &scorer, &cfg.sra);
    if sweep.points.is_empty() {
        let why = sweep.failures.first().map(|f| f.reason.clone()).unwrap_or_default();
        return Err(Error::Infeasible(format!("sweep produced no points: {why}")).in_stage("compress"));
    }
    let front_ratio = pareto_extract(&sweep.points, Axis::Ratio);
    let front_nops = pareto_extract(&sweep.points, Axis::Nops);

    let mut selected: Vec<CompressionPoint> = front_ratio.iter().chain(&front_nops).cloned().collect();
    selected.sort_by_key(CompressionPoint::key);
    selected.dedup_by(|a, b| a.key() == b.key());

    let shapes = model.shapes();
    let opts = ExploreOptions {
        rate_mode: cfg.rate_mode,
        verify_top: cfg.verify_top,
        overlap: cfg.overlap,
    };
    let designs = selected
        .par_iter()
        .map(|p| {
            let kind = if p.is_dense() { PointKind::Dense } else { PointKind::Svd };
            let scheme = QuantScheme::new(p.weight_wl, cfg.act_wl)?;
            let layers = LayerWorkload::from_point(&shapes, p);
            let mut dp = explore_hw(&layers, kind, scheme, platform, &cfg.grid, &opts)?;
            dp.compression = Some(p.clone());
            Ok(dp)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("explore"))?;
    let hw_front = pareto_by(&designs, |d| d.latency() as f64, accuracy);
    Ok(PipelineOutput {
        sweep,
        front_ratio,
        front_nops,
        designs,
        hw_front,
    })
}

fn accuracy(d: &DesignPoint) -> f64 {
    d.compression.as_ref().map(|c| c.accuracy).unwrap_or(f64::NEG_INFINITY)
}

pub const REPORT_FILES: [&str; 4] = [
    "model_front_ratio.csv",
    "model_front_nops.csv",
    "hw_front.csv",
    "occupancy.csv",
];

fn create(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn budget_label(p: &CompressionPoint) -> String {
    p.budget.map(|b| b.to_string()).unwrap_or_default()
}

fn write_model_front(dir: &Path, name: &str, front: &[CompressionPoint]) -> Result<()> {
    let mut w = create(dir, name)?;
    w.write_record([
        "method",
        "weight_wl",
        "budget",
        "ranks",
        "accuracy",
        "compression_ratio",
        "nops",
    ])?;
    for p in front {
        w.write_record([
            p.method.to_string(),
            p.weight_wl.to_string(),
            budget_label(p),
            p.ranks_label(),
            p.accuracy.to_string(),
            p.compression_ratio.to_string(),
            p.nops.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the four CSV reports into `dir`.
pub fn write_reports(dir: &Path, out: &PipelineOutput, platform: &PlatformSpec) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_model_front(dir, REPORT_FILES[0], &out.front_ratio)?;
    write_model_front(dir, REPORT_FILES[1], &out.front_nops)?;

    let mut w = create(dir, REPORT_FILES[2])?;
    w.write_record([
        "accuracy",
        "latency_cycles",
        "latency_ms",
        "wl",
        "budget",
        "method",
        "engine_mode",
        "M_t",
        "N_t",
        "R_t",
        "K_f",
        "K_f2",
        "dsp",
        "bram",
        "bandwidth",
    ])?;
    for d in &out.hw_front {
        let c = d.compression.as_ref().expect("pipeline points carry their compression");
        let e = &d.engine;
        let (n_t, r_t, k_f2) = match e.mode {
            EngineMode::CascadeSvd => (e.stage2.n_t.to_string(), e.stage1.n_t.to_string(), e.stage2.k_f.to_string()),
            _ => (e.stage1.n_t.to_string(), String::new(), String::new()),
        };
        let lat = d.latency();
        w.write_record([
            c.accuracy.to_string(),
            lat.to_string(),
            format!("{:.6}", platform.cycles_to_ms(lat)),
            c.weight_wl.to_string(),
            budget_label(c),
            c.method.to_string(),
            e.mode.to_string(),
            e.stage1.m_t.to_string(),
            n_t,
            r_t,
            e.stage1.k_f.to_string(),
            k_f2,
            d.resources.dsp.to_string(),
            d.resources.bram18.to_string(),
            format!("{:.3}", d.resources.bandwidth_bits_per_cycle),
        ])?;
    }
    w.flush()?;

    let mut w = create(dir, REPORT_FILES[3])?;
    w.write_record(["point", "engine", "layer", "rank", "model_cycles", "sim_cycles", "occupancy"])?;
    for d in &out.designs {
        let key = d.compression.as_ref().map(CompressionPoint::key).unwrap_or_default();
        for (i, l) in d.layers.iter().enumerate() {
            w.write_record([
                key.clone(),
                d.engine.key(),
                i.to_string(),
                l.rank.map(|r| r.to_string()).unwrap_or_default(),
                l.cycles.to_string(),
                l.sim_cycles.map(|c| c.to_string()).unwrap_or_default(),
                format!("{:.6}", l.occupancy),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plain-text summary of a report directory.
pub fn summarize(dir: &Path, mut out: impl Write) -> Result<()> {
    for name in REPORT_FILES {
        let path = dir.join(name);
        let mut r = csv::Reader::from_path(&path)?;
        let rows = r.records().count();
        writeln!(out, "{name}: {rows} rows")?;
    }
    let mut r = csv::Reader::from_path(dir.join(REPORT_FILES[2]))?;
    let headers = r.headers()?.clone();
    for rec in r.records() {
        let rec = rec?;
        let field = |name: &str| headers.iter().position(|h| h == name).and_then(|i| rec.get(i)).unwrap_or("");
        writeln!(
            out,
            "  acc {:>10} latency {:>10} cycles  {} W{} {} dsp {} bram {}",
            field("accuracy"),
            field("latency_cycles"),
            field("method"),
            field("wl"),
            field("engine_mode"),
            field("dsp"),
            field("bram"),
        )?;
    }
    Ok(())
}
