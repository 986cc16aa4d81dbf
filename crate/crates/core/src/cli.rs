//! Command-line front end. Every command writes `manifest.json` next to its
//! artifacts with the resolved configuration and its SHA-256.
//!
//! Exit status: 0 on success, 2 for configuration errors, 1 for failures
//! while running.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decomp::{self, DecompConfig, SigmaSplit};
use crate::dfsim::{self, Overlap, SimOptions};
use crate::dse::{self, SweepConfig};
use crate::error::{Error, Result};
use crate::hwmodel::{self, EngineConfig, EngineMode, PlatformSpec, RateMode, TileConfig};
use crate::model::ModelSpec;
use crate::quant::QuantScheme;
use crate::sra::{self, CompressionMethod, DecompositionEvaluator, ReconstructionProxy, SraParams, SyntheticTask, TaskMetric};
use crate::tensor::{self, LayerShape};

#[derive(Debug, Parser)]
#[command(name = "itera", version, about = "Low-rank quantized compression and accelerator co-design")]
struct Cli {
    /// JSON config for the command; flags given explicitly override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Platform JSON; defaults to the ZCU111 preset.
    #[arg(long, global = true)]
    platform: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    rate_mode: Option<RateMode>,
    #[arg(long, global = true, value_enum)]
    overlap: Option<Overlap>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Factor one weight matrix into quantized rank-1 terms.
    Decompose(DecomposeArgs),
    /// Allocate a rank budget across the layers of a model.
    Sra(SraArgs),
    /// Evaluate the analytical engine model.
    Hwmodel(EngineArgs),
    /// Run the dataflow simulator on one layer.
    Simulate(SimulateArgs),
    /// Full sweep: compression fronts, engine search, accuracy/latency front.
    Dse(DseArgs),
    /// Summarize one or more dse report directories.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
enum DecompMethod {
    #[default]
    Iterative,
    SvdBaseline,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    /// Weight matrix, `.itmx` or `.csv`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    wl: Option<u8>,
    #[arg(long, value_enum)]
    method: Option<DecompMethod>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecomposeConfig {
    seed: u64,
    input: PathBuf,
    rank: usize,
    wl: u8,
    #[serde(default)]
    method: DecompMethod,
    #[serde(default)]
    sigma_split: SigmaSplit,
}

#[derive(Debug, Args)]
struct SraArgs {
    /// Model directory with `model.json`; the bundled toy model otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    wl: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum SraEvaluator {
    Reconstruction,
    SyntheticTask {
        calibration: usize,
        #[serde(default)]
        act_wl: Option<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SraConfig {
    seed: u64,
    #[serde(default)]
    model: Option<PathBuf>,
    budget: usize,
    #[serde(default = "default_wl")]
    weight_wl: u8,
    #[serde(default)]
    params: SraParams,
    #[serde(default = "default_sra_evaluator")]
    evaluator: SraEvaluator,
}

fn default_wl() -> u8 {
    4
}

fn default_sra_evaluator() -> SraEvaluator {
    SraEvaluator::Reconstruction
}

#[derive(Debug, Args, Clone, Default)]
struct EngineArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Required for SVD engines.
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<EngineMode>,
    #[arg(long)]
    m_t: Option<usize>,
    #[arg(long)]
    n_t: Option<usize>,
    #[arg(long)]
    k_f: Option<usize>,
    /// Cascade stage-1 tiling over the rank; defaults to `n_t`.
    #[arg(long)]
    r_t: Option<usize>,
    /// Cascade stage-2 dot-product width; defaults to `k_f`.
    #[arg(long)]
    k_f2: Option<usize>,
    /// Quantization scheme such as `W4A8`.
    #[arg(long)]
    scheme: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EngineSpec {
    #[serde(default)]
    seed: u64,
    m: usize,
    k: usize,
    n: usize,
    #[serde(default)]
    rank: Option<usize>,
    mode: EngineMode,
    m_t: usize,
    n_t: usize,
    k_f: usize,
    #[serde(default)]
    r_t: Option<usize>,
    #[serde(default)]
    k_f2: Option<usize>,
    #[serde(default = "default_scheme")]
    scheme: String,
    #[serde(default)]
    rate_mode: RateMode,
    #[serde(default)]
    overlap: Overlap,
    #[serde(default)]
    trace: bool,
}

fn default_scheme() -> String {
    "W4A8".into()
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Also write the per-phase trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
struct DseArgs {
    /// Model directory with `model.json`; the bundled toy model otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// dse output directories.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
}

/// Separates configuration problems (exit 2) from run failures (exit 1).
enum Failure {
    Config(Error),
    Run(Error),
}

fn cfg_err(e: impl Into<Error>) -> Failure {
    Failure::Config(e.into())
}

fn run_err(e: impl Into<Error>) -> Failure {
    Failure::Run(e.into())
}

type CmdResult = std::result::Result<(), Failure>;

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(threads) = std::env::var("ITERA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(Failure::Config(e)) => {
            eprintln!("itera: config error: {e}");
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("itera: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Decompose(a) => decompose(cli, a),
        Command::Sra(a) => run_sra(cli, a),
        Command::Hwmodel(a) => run_hwmodel(cli, a),
        Command::Simulate(a) => run_simulate(cli, a),
        Command::Dse(a) => run_dse(cli, a),
        Command::Report(a) => report(cli, a),
    }
}

/// Loads `--config` as a JSON object, or an empty object without one.
fn base_config(cli: &Cli) -> std::result::Result<serde_json::Map<String, serde_json::Value>, Failure> {
    let Some(path) = &cli.config else {
        return Ok(serde_json::Map::new());
    };
    let text = fs::read_to_string(path).map_err(|e| cfg_err(Error::io(path, e)))?;
    match serde_json::from_str(&text).map_err(cfg_err)? {
        serde_json::Value::Object(m) => Ok(m),
        _ => Err(cfg_err(Error::InvalidArgument(format!(
            "{}: config must be a JSON object",
            path.display()
        )))),
    }
}

fn set<T: Serialize>(map: &mut serde_json::Map<String, serde_json::Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        map.insert(key.into(), serde_json::to_value(v).expect("plain values serialize"));
    }
}

fn resolve<T: for<'de> Deserialize<'de>>(map: serde_json::Map<String, serde_json::Value>) -> std::result::Result<T, Failure> {
    serde_json::from_value(serde_json::Value::Object(map)).map_err(cfg_err)
}

fn platform(cli: &Cli) -> std::result::Result<PlatformSpec, Failure> {
    match &cli.platform {
        Some(p) => PlatformSpec::load(p).map_err(cfg_err),
        None => Ok(PlatformSpec::zcu111()),
    }
}

fn out_dir(cli: &Cli) -> std::result::Result<&Path, Failure> {
    let dir = cli
        .out
        .as_deref()
        .ok_or_else(|| cfg_err(Error::InvalidArgument("--out is required".into())))?;
    fs::create_dir_all(dir).map_err(|e| run_err(Error::io(dir, e)))?;
    Ok(dir)
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a C,
    platform: Option<&'a PlatformSpec>,
}

fn write_manifest<C: Serialize>(dir: &Path, command: &str, seed: u64, config: &C, platform: Option<&PlatformSpec>) -> Result<()> {
    let canonical = serde_json::to_vec(config)?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_sha256: hex::encode(Sha256::digest(&canonical)),
        config,
        platform,
    };
    write_text(&dir.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn decompose(cli: &Cli, a: &DecomposeArgs) -> CmdResult {
    let mut map = base_config(cli)?;
    set(&mut map, "seed", cli.seed);
    set(&mut map, "input", a.input.clone());
    set(&mut map, "rank", a.rank);
    set(&mut map, "wl", a.wl);
    set(&mut map, "method", a.method);
    let cfg: DecomposeConfig = resolve(map)?;
    let dir = out_dir(cli)?;
    let w = tensor::read_matrix_file(&cfg.input).map_err(cfg_err)?;
    let d = match cfg.method {
        DecompMethod::Iterative => decomp::iterative_decompose_with(
            &w,
            cfg.rank,
            cfg.wl,
            &DecompConfig {
                sigma_split: cfg.sigma_split,
            },
        ),
        DecompMethod::SvdBaseline => decomp::svd_baseline(&w, cfg.rank, cfg.wl),
    }
    .map_err(cfg_err)?;
    decomp::save_decomposition(&d, dir).map_err(run_err)?;
    write_manifest(dir, "decompose", cfg.seed, &cfg, None).map_err(run_err)?;
    println!(
        "rank {} W{}: residual {:.6e} -> {:.6e}",
        d.rank,
        d.weight_wl,
        d.residual_norms[0],
        d.final_residual()
    );
    Ok(())
}

fn load_model(path: Option<&Path>, seed: u64) -> std::result::Result<ModelSpec, Failure> {
    match path {
        Some(p) => ModelSpec::load_dir(p).map_err(cfg_err),
        None => Ok(ModelSpec::default_toy(seed)),
    }
}

fn run_sra(cli: &Cli, a: &SraArgs) -> CmdResult {
    let mut map = base_config(cli)?;
    set(&mut map, "seed", cli.seed);
    set(&mut map, "model", a.model.clone());
    set(&mut map, "budget", a.budget);
    set(&mut map, "weight_wl", a.wl);
    let cfg: SraConfig = resolve(map)?;
    cfg.params.validate().map_err(cfg_err)?;
    let dir = out_dir(cli)?;
    let model = load_model(cfg.model.as_deref(), cfg.seed)?;
    let outcome = match &cfg.evaluator {
        SraEvaluator::Reconstruction => {
            let scorer = ReconstructionProxy::new(&model);
            let eval =
                DecompositionEvaluator::new(model, scorer, CompressionMethod::Iterative, cfg.weight_wl).map_err(cfg_err)?;
            sra::run_sra(&eval, cfg.budget, &cfg.params)
        }
        SraEvaluator::SyntheticTask { calibration, act_wl } => {
            let task =
                SyntheticTask::new(&model, *calibration, cfg.seed, *act_wl, TaskMetric::Top1WithLogitError).map_err(cfg_err)?;
            let eval = DecompositionEvaluator::new(model, task, CompressionMethod::Iterative, cfg.weight_wl).map_err(cfg_err)?;
            sra::run_sra(&eval, cfg.budget, &cfg.params)
        }
    };
    let outcome = outcome.map_err(|e| match e {
        Error::Infeasible(_) | Error::InvalidArgument(_) => cfg_err(e),
        other => run_err(other),
    })?;
    write_text(&dir.join("allocation.json"), &outcome.best.to_json().map_err(run_err)?).map_err(run_err)?;
    let path = dir.join("trace.csv");
    let f = fs::File::create(&path).map_err(|e| run_err(Error::io(&path, e)))?;
    sra::write_trace_csv(&outcome.trace, f).map_err(run_err)?;
    write_manifest(dir, "sra", cfg.seed, &cfg, None).map_err(run_err)?;
    println!(
        "ranks {:?} score {:.6} after {} iterations",
        outcome.best.ranks,
        outcome.best_score,
        outcome.trace.len()
    );
    Ok(())
}

fn engine_spec(cli: &Cli, a: &EngineArgs, trace: bool) -> std::result::Result<EngineSpec, Failure> {
    let mut map = base_config(cli)?;
    set(&mut map, "seed", cli.seed);
    set(&mut map, "m", a.m);
    set(&mut map, "k", a.k);
    set(&mut map, "n", a.n);
    set(&mut map, "rank", a.rank);
    set(&mut map, "mode", a.mode);
    set(&mut map, "m_t", a.m_t);
    set(&mut map, "n_t", a.n_t);
    set(&mut map, "k_f", a.k_f);
    set(&mut map, "r_t", a.r_t);
    set(&mut map, "k_f2", a.k_f2);
    set(&mut map, "scheme", a.scheme.clone());
    set(&mut map, "rate_mode", cli.rate_mode);
    set(&mut map, "overlap", cli.overlap);
    if trace {
        set(&mut map, "trace", Some(true));
    }
    resolve(map)
}

fn parse_scheme(text: &str) -> Result<QuantScheme> {
    let bad = || Error::InvalidArgument(format!("scheme {text:?} is not of the form W<bits>A<bits>"));
    let rest = text.strip_prefix(['W', 'w']).ok_or_else(bad)?;
    let (w, a) = rest.split_once(['A', 'a']).ok_or_else(bad)?;
    QuantScheme::new(w.parse().map_err(|_| bad())?, a.parse().map_err(|_| bad())?)
}

impl EngineSpec {
    fn build(&self) -> Result<(EngineConfig, LayerShape, QuantScheme)> {
        let shape = LayerShape::new(self.m, self.k, self.n)?;
        let scheme = parse_scheme(&self.scheme)?;
        let tile = TileConfig::new(self.m_t, self.n_t, self.k_f)?;
        let rank = || {
            self.rank
                .ok_or_else(|| Error::InvalidArgument(format!("{} engine needs --rank", self.mode)))
        };
        let engine = match self.mode {
            EngineMode::Dense => EngineConfig::dense(tile),
            EngineMode::SingleSvd => EngineConfig::single(tile, rank()?),
            EngineMode::CascadeSvd => EngineConfig::cascade(
                TileConfig::new(self.m_t, self.r_t.unwrap_or(self.n_t), self.k_f)?,
                TileConfig::new(self.m_t, self.n_t, self.k_f2.unwrap_or(self.k_f))?,
                rank()?,
            ),
        };
        engine.validate()?;
        Ok((engine, shape, scheme))
    }
}

#[derive(Serialize)]
struct StageReport {
    shape: [usize; 3],
    tile: TileConfig,
    rates: [String; 3],
    workloads: hwmodel::PortWorkloads,
    cycles: u64,
}

#[derive(Serialize)]
struct HwReport {
    engine: EngineConfig,
    scheme: String,
    rate_mode: RateMode,
    latency_cycles: u64,
    latency_with_platform_bandwidth: u64,
    latency_ms: f64,
    resources: hwmodel::ResourceEstimate,
    intermediate_bram18: u64,
    fits_platform: bool,
    occupancy: f64,
    macs: u64,
    stages: Vec<StageReport>,
}

fn run_hwmodel(cli: &Cli, a: &EngineArgs) -> CmdResult {
    let spec = engine_spec(cli, a, false)?;
    let p = platform(cli)?;
    let (engine, shape, scheme) = spec.build().map_err(cfg_err)?;
    let est = hwmodel::estimate(&engine, &shape, scheme, &p, spec.rate_mode).map_err(cfg_err)?;
    let stage_shapes: Vec<(LayerShape, TileConfig)> = match engine.mode {
        EngineMode::Dense => vec![(shape, engine.stage1)],
        _ => vec![
            (
                LayerShape {
                    m: shape.m,
                    k: shape.k,
                    n: engine.rank,
                },
                engine.stage1,
            ),
            (
                LayerShape {
                    m: shape.m,
                    k: engine.rank,
                    n: shape.n,
                },
                engine.stage2,
            ),
        ],
    };
    let stages = stage_shapes
        .iter()
        .zip(&est.stages)
        .map(|((s, t), e)| {
            let r = hwmodel::tile_rates(t, s, spec.rate_mode);
            StageReport {
                shape: [s.m, s.k, s.n],
                tile: *t,
                rates: [r.lhs.to_string(), r.rhs.to_string(), r.out.to_string()],
                workloads: e.workloads,
                cycles: e.cycles,
            }
        })
        .collect();
    let with_bw = est.latency_on(&p);
    let report = HwReport {
        engine,
        scheme: scheme.to_string(),
        rate_mode: spec.rate_mode,
        latency_cycles: est.cycles,
        latency_with_platform_bandwidth: with_bw,
        latency_ms: p.cycles_to_ms(with_bw),
        resources: est.resources,
        intermediate_bram18: est.intermediate_bram18,
        fits_platform: est.resources.fits(&p),
        occupancy: est.occupancy,
        macs: match engine.mode {
            EngineMode::Dense => shape.macs(),
            _ => hwmodel::svd_macs(&shape, engine.rank),
        },
        stages,
    };
    let text = serde_json::to_string_pretty(&report).map_err(run_err)? + "\n";
    match &cli.out {
        Some(_) => {
            let dir = out_dir(cli)?;
            write_text(&dir.join("hwmodel.json"), &text).map_err(run_err)?;
            write_manifest(dir, "hwmodel", spec.seed, &spec, Some(&p)).map_err(run_err)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run_simulate(cli: &Cli, a: &SimulateArgs) -> CmdResult {
    let spec = engine_spec(cli, &a.engine, a.trace)?;
    let p = platform(cli)?;
    let (engine, shape, scheme) = spec.build().map_err(cfg_err)?;
    let dir = out_dir(cli)?;
    let opts = SimOptions {
        overlap: spec.overlap,
        trace: spec.trace,
    };
    let r = dfsim::simulate(&engine, &shape, scheme, &p, opts).map_err(|e| match e {
        Error::Infeasible(_) => cfg_err(e),
        other => run_err(other),
    })?;
    let path = dir.join("sim.csv");
    let mut w = csv::Writer::from_path(&path).map_err(run_err)?;
    w.write_record([
        "cycles",
        "compute_cycles",
        "channel_bits",
        "channel_stall_cycles",
        "occupancy",
        "utilization",
        "port",
        "words",
    ])
    .map_err(run_err)?;
    for (port, words) in &r.port_words {
        w.write_record([
            r.cycles.to_string(),
            r.compute_cycles.to_string(),
            r.channel_bits.to_string(),
            r.channel_stall_cycles.to_string(),
            format!("{:.6}", r.occupancy),
            format!("{:.6}", r.utilization),
            port.clone(),
            words.to_string(),
        ])
        .map_err(run_err)?;
    }
    w.flush().map_err(|e| run_err(Error::io(&path, e)))?;
    if let Some(rows) = &r.trace {
        let path = dir.join("trace.csv");
        let f = fs::File::create(&path).map_err(|e| run_err(Error::io(&path, e)))?;
        dfsim::write_trace_csv(rows, f).map_err(run_err)?;
    }
    write_manifest(dir, "simulate", spec.seed, &spec, Some(&p)).map_err(run_err)?;
    println!(
        "{} cycles ({} compute), utilization {:.3}",
        r.cycles, r.compute_cycles, r.utilization
    );
    Ok(())
}

#[derive(Serialize)]
struct DseManifestConfig<'a> {
    model: Option<&'a Path>,
    sweep: &'a SweepConfig,
}

fn run_dse(cli: &Cli, a: &DseArgs) -> CmdResult {
    let mut map = base_config(cli)?;
    let cfg: SweepConfig = if map.is_empty() {
        let seed = cli
            .seed
            .ok_or_else(|| cfg_err(Error::InvalidArgument("dse needs --seed or a --config with a seed".into())))?;
        SweepConfig::toy(seed)
    } else {
        set(&mut map, "seed", cli.seed);
        resolve(map)?
    };
    let cfg = SweepConfig {
        rate_mode: cli.rate_mode.unwrap_or(cfg.rate_mode),
        overlap: cli.overlap.unwrap_or(cfg.overlap),
        ..cfg
    };
    cfg.validate().map_err(cfg_err)?;
    let p = platform(cli)?;
    let dir = out_dir(cli)?;
    let model = load_model(a.model.as_deref(), cfg.seed)?;
    let out = dse::run_pipeline(&model, &p, &cfg).map_err(|e| match e {
        Error::Stage { stage: "config", .. } => cfg_err(e),
        other => run_err(other),
    })?;
    dse::write_reports(dir, &out, &p).map_err(run_err)?;
    let manifest = DseManifestConfig {
        model: a.model.as_deref(),
        sweep: &cfg,
    };
    write_manifest(dir, "dse", cfg.seed, &manifest, Some(&p)).map_err(run_err)?;
    for f in &out.sweep.failures {
        eprintln!("skipped W{} budget {:?}: {}", f.weight_wl, f.budget, f.reason);
    }
    println!(
        "{} compression points, {} designs, {} on the accuracy/latency front",
        out.sweep.points.len(),
        out.designs.len(),
        out.hw_front.len()
    );
    Ok(())
}

fn report(cli: &Cli, a: &ReportArgs) -> CmdResult {
    let mut text = Vec::new();
    for d in &a.dirs {
        use std::io::Write;
        writeln!(text, "== {}", d.display()).map_err(run_err)?;
        dse::summarize(d, &mut text).map_err(cfg_err)?;
    }
    let text = String::from_utf8(text).expect("summary is UTF-8");
    match &cli.out {
        Some(_) => {
            let dir = out_dir(cli)?;
            write_text(&dir.join("summary.txt"), &text).map_err(run_err)?;
            #[derive(Serialize)]
            struct ReportConfig<'a> {
                dirs: &'a [PathBuf],
            }
            write_manifest(dir, "report", cli.seed.unwrap_or(0), &ReportConfig { dirs: &a.dirs }, None).map_err(run_err)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
