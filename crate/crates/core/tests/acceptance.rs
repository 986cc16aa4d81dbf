//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use itera::decomp::{iterative_decompose, iterative_decompose_lossless, svd_baseline, truncated_svd};
use itera::dfsim::{self, fill_tolerance, SimOptions};
use itera::dse::{
    self, dense_nops, explore_exhaustive, explore_hw, svd_nops, DesignPoint, ExploreOptions, HwGrid, LayerWorkload, PointKind,
    SweepConfig, REPORT_FILES,
};
use itera::hwmodel::{self, EngineConfig, PlatformSpec, RateMode, TileConfig};
use itera::quant::QuantScheme;
use itera::sra::{self, AccuracyEvaluator, FnEvaluator, SraParams};
use itera::{LayerShape, Matrix, ModelSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn shape(m: usize, k: usize, n: usize) -> LayerShape {
    LayerShape { m, k, n }
}

fn prefix_residual(w: &Matrix, w1: &Matrix, w2: &Matrix, r: usize) -> f64 {
    let cols: Vec<Vec<f64>> = (0..r).map(|j| w1.column(j)).collect();
    let rows: Vec<Vec<f64>> = (0..r).map(|j| w2.row(j).to_vec()).collect();
    let approx = Matrix::from_columns(&cols)
        .unwrap()
        .matmul(&Matrix::from_row_vecs(&rows).unwrap())
        .unwrap();
    w.sub(&approx).unwrap().frobenius_norm()
}

fn c1_eckart_young() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let (r, c) = (rng.random_range(2..=32), rng.random_range(2..=32));
        let w = Matrix::random_normal(r, c, 10_000 + i);
        let full = r.min(c);
        let lossless = iterative_decompose_lossless(&w, full).unwrap();
        let (s1, s2) = truncated_svd(&w, full).unwrap();
        let norm = w.frobenius_norm();
        for rank in 1..=full {
            let a = lossless.residual_norms[rank];
            let b = prefix_residual(&w, &s1, &s2, rank);
            worst = worst.max((a - b).abs() / norm);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && elapsed < Duration::from_secs(10),
        format!("max |Δresidual|/‖W‖ = {worst:.2e} (≤ 1e-6), {elapsed:.2?} (< 10 s)"),
    )
}

fn c2_iterative_beats_baseline() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for wl in [4, 6] {
        let wins = (0..100)
            .filter(|i| {
                let w = Matrix::random_normal(16, 16, 20_000 + i);
                let it = iterative_decompose(&w, 8, wl).unwrap().final_residual();
                let base = svd_baseline(&w, 8, wl).unwrap().final_residual();
                it <= base
            })
            .count();
        pass &= wins >= 95;
        parts.push(format!("W{wl}: {wins}/100"));
    }
    outcome(pass, format!("{} (need ≥ 95 each)", parts.join(", ")))
}

fn c3_monotone_residuals() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for wl in [6, 8] {
        let mut clean = 0;
        for i in 0..100 {
            let w = Matrix::random_normal(16, 16, 30_000 + i);
            let d = iterative_decompose(&w, 16, wl).unwrap();
            let violations: Vec<(usize, f64)> = d
                .residual_norms
                .windows(2)
                .enumerate()
                .filter(|(_, p)| p[1] > p[0] + 1e-9)
                .map(|(k, p)| (k + 1, p[1] - p[0]))
                .collect();
            if violations.is_empty() {
                clean += 1;
            } else {
                println!("    note: W{wl} seed {} residual rose at {violations:?}", 30_000 + i);
            }
        }
        pass &= clean >= 99;
        parts.push(format!("W{wl}: {clean}/100 monotone"));
    }
    outcome(pass, format!("{} (need ≥ 99 each)", parts.join(", ")))
}

fn c4_model_vs_simulator() -> Outcome {
    let start = Instant::now();
    let platform = PlatformSpec::zcu111().with_bandwidth(f64::INFINITY);
    let (mut total, mut bad, mut worst) = (0, 0, 0u64);
    for m in [64, 128, 256] {
        for k in [64, 128, 256] {
            for n in [64, 128, 256] {
                for m_t in [2, 4, 8] {
                    for n_t in [2, 4, 8] {
                        for k_f in [4, 8] {
                            let s = shape(m, k, n);
                            let e = EngineConfig::dense(TileConfig { m_t, n_t, k_f });
                            let sim = dfsim::simulate(&e, &s, QuantScheme::w4a8(), &platform, SimOptions::default()).unwrap();
                            let model = hwmodel::tile_latency(&e.stage1, &s, RateMode::Corrected);
                            let diff = sim.cycles.abs_diff(model);
                            worst = worst.max(diff);
                            total += 1;
                            if diff > fill_tolerance(&e, &s) {
                                bad += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad == 0 && elapsed < Duration::from_secs(60),
        format!("{total} configs, {bad} outside one tile-phase fill, max |Δ| = {worst} cycles, {elapsed:.2?} (< 60 s)"),
    )
}

fn c5_balanced_identity() -> Outcome {
    let mut checked = 0;
    let mut bad = 0;
    for (m, k, n) in [(64, 64, 64), (96, 128, 48), (256, 512, 128), (512, 512, 512)] {
        for m_t in [1, 2, 4, 8, 16, 32] {
            for n_t in [1, 2, 4, 8, 16] {
                for k_f in [1, 2, 4, 8, 16, 32] {
                    if m % m_t != 0 || n % n_t != 0 || k % k_f != 0 {
                        continue;
                    }
                    let t = TileConfig { m_t, n_t, k_f };
                    let want = ((m / m_t) * (n / n_t) * (k / k_f)) as u64;
                    checked += 1;
                    if hwmodel::tile_latency(&t, &shape(m, k, n), RateMode::Corrected) != want {
                        bad += 1;
                    }
                }
            }
        }
    }
    outcome(bad == 0, format!("{checked} divisible configs, {bad} mismatches"))
}

fn toy_pipeline(seed: u64) -> dse::PipelineOutput {
    dse::run_pipeline(
        &ModelSpec::default_toy(seed),
        &PlatformSpec::zcu111(),
        &SweepConfig::toy(seed),
    )
    .unwrap()
}

fn c6_resources() -> Outcome {
    let dsp = hwmodel::dsp_usage(&TileConfig { m_t: 8, n_t: 8, k_f: 8 }, 2);
    let bram = hwmodel::bram18(64, 8);
    let out = toy_pipeline(6);
    let p = PlatformSpec::zcu111();
    let over = out
        .designs
        .iter()
        .filter(|d| d.resources.dsp > p.dsp_total || d.resources.bram18 > p.bram18_total)
        .count();
    let max_dsp = out.designs.iter().map(|d| d.resources.dsp).max().unwrap_or(0);
    let max_bram = out.designs.iter().map(|d| d.resources.bram18).max().unwrap_or(0);
    outcome(
        dsp == 256 && bram == 1 && over == 0,
        format!(
            "DSP(8×8, K_f=8, f=2) = {dsp}, bram18(64,8) = {bram}; {} dse points, {over} over budget (max DSP {max_dsp}/4272, BRAM {max_bram}/1080)",
            out.designs.len()
        ),
    )
}

fn c7_bandwidth() -> Outcome {
    let s = shape(512, 512, 512);
    let t = TileConfig { m_t: 8, n_t: 8, k_f: 8 };
    let model = hwmodel::bandwidth(&t, &s, [8, 4, 8], RateMode::Corrected);
    let p = PlatformSpec::zcu111().with_bandwidth(f64::INFINITY);
    let sim = dfsim::simulate(&EngineConfig::dense(t), &s, QuantScheme::w4a8(), &p, SimOptions::default()).unwrap();
    let measured = sim.channel_bits_per_cycle();
    let rel = (measured - 272.0).abs() / 272.0;
    outcome(
        model == 272.0 && rel < 0.01,
        format!(
            "formula {model} bits/cycle, simulator {measured:.3} ({:.3}% off, < 1%)",
            rel * 100.0
        ),
    )
}

fn c8_dse_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut agree = 0;
    let mut largest = 0;
    let axis = |rng: &mut ChaCha8Rng, n: usize, max_exp: u32| -> Vec<usize> {
        let mut v: Vec<usize> = (0..=max_exp).map(|e| 1usize << e).collect();
        while v.len() > n {
            v.remove(rng.random_range(0..v.len()));
        }
        v
    };
    for i in 0..10 {
        let k = rng.random_range(16..=600);
        let n = rng.random_range(16..=600);
        let s = shape(rng.random_range(16..=600), k, n);
        let rank = rng.random_range(1..k.min(n));
        let grid = HwGrid {
            m_t: axis(&mut rng, 3, 6),
            n_t: axis(&mut rng, 3, 6),
            r_t: axis(&mut rng, 2, 6),
            k_f: axis(&mut rng, 3, 5),
        };
        let platform = if i % 2 == 0 {
            PlatformSpec::zcu111()
        } else {
            PlatformSpec::zcu111().with_bandwidth(96.0)
        };
        let mut ok = true;
        for kind in [PointKind::Dense, PointKind::Svd] {
            largest = largest.max(dse::candidates(kind, &grid).len());
            let layers = [LayerWorkload {
                shape: s,
                rank: (kind == PointKind::Svd).then_some(rank),
            }];
            let a = explore_hw(
                &layers,
                kind,
                QuantScheme::w4a8(),
                &platform,
                &grid,
                &ExploreOptions::default(),
            )
            .unwrap();
            let b = explore_exhaustive(&layers, kind, QuantScheme::w4a8(), &platform, &grid, RateMode::Corrected).unwrap();
            ok &= a.total_latency_cycles == b.total_latency_cycles && a.engine == b.engine;
        }
        agree += usize::from(ok);
    }
    outcome(
        agree == 10 && largest <= 512,
        format!("{agree}/10 shapes match exhaustive search (largest grid {largest} configs)"),
    )
}

fn one_step_neighbors(r: &[usize], caps: &[usize], r_min: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for i in 0..r.len() {
        for j in 0..r.len() {
            if i != j && r[i] < caps[i] && r[j] > r_min {
                let mut v = r.to_vec();
                v[i] += 1;
                v[j] -= 1;
                out.push(v);
            }
        }
    }
    out
}

fn brute_force(eval: &dyn AccuracyEvaluator, budget: usize, r_min: usize) -> (f64, Vec<usize>) {
    let caps = eval.max_ranks();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut stack = vec![Vec::<usize>::new()];
    while let Some(prefix) = stack.pop() {
        let used: usize = prefix.iter().sum();
        let i = prefix.len();
        if i + 1 == caps.len() {
            let last = budget.saturating_sub(used);
            if used < budget && last >= r_min && last <= caps[i] {
                let mut full = prefix.clone();
                full.push(last);
                let v = eval.evaluate(&full).unwrap();
                if v > best.0 {
                    best = (v, full);
                }
            }
            continue;
        }
        for r in r_min..=caps[i] {
            if used + r < budget {
                let mut next = prefix.clone();
                next.push(r);
                stack.push(next);
            }
        }
    }
    best
}

fn c9_sra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = SraParams::default();
    let mut conserved = true;
    let mut within = 0;
    let cases = 40;
    for _ in 0..cases {
        let layers = rng.random_range(2..=3);
        let budget = rng.random_range(layers * 2..=48);
        let weights: Vec<f64> = (0..layers).map(|_| rng.random_range(0.5..3.0)).collect();
        let scales: Vec<f64> = (0..layers).map(|_| rng.random_range(1.0..15.0)).collect();
        let caps: Vec<usize> = (0..layers).map(|_| rng.random_range(budget / layers + 1..=32)).collect();
        let eval = FnEvaluator::new(caps.clone(), move |r: &[usize]| {
            r.iter()
                .zip(weights.iter().zip(&scales))
                .map(|(r, (w, s))| w * (1.0 - (-(*r as f64) / s).exp()))
                .sum()
        });
        let out = sra::run_sra(&eval, budget, &params).unwrap();
        conserved &= out.trace.iter().all(|t| t.ranks.iter().sum::<usize>() == budget);
        conserved &= out.best.ranks.iter().sum::<usize>() == budget;
        let (opt, at) = brute_force(&eval, budget, params.r_min);
        let floor = one_step_neighbors(&at, &caps, params.r_min)
            .iter()
            .map(|r| eval.evaluate(r).unwrap())
            .fold(opt, f64::min);
        if out.best_score >= floor - 1e-12 {
            within += 1;
        }
    }
    let model = ModelSpec::toy(9, 64, &[48, 64, 56, 40, 32], &[2.0, 6.0, 15.0, 30.0]).unwrap();
    let proxy = sra::ReconstructionProxy::new(&model);
    let eval = sra::DecompositionEvaluator::new(model, proxy, sra::CompressionMethod::Iterative, 4).unwrap();
    let out = sra::run_sra(&eval, 64, &params).unwrap();
    let uniform = eval.evaluate(&[16, 16, 16, 16]).unwrap();
    conserved &= out.trace.iter().all(|t| t.ranks.iter().sum::<usize>() == 64);
    outcome(
        conserved && within == cases && out.best_score >= uniform,
        format!(
            "budget conserved: {conserved}; {within}/{cases} concave cases within one step of brute force; 4-layer model {:.4} vs uniform {uniform:.4} (ranks {:?})",
            out.best_score, out.best.ranks
        ),
    )
}

fn best_engine(kind: PointKind, platform: &PlatformSpec) -> DesignPoint {
    let layers = [LayerWorkload {
        shape: shape(512, 512, 512),
        rank: (kind == PointKind::Svd).then_some(128),
    }];
    explore_hw(
        &layers,
        kind,
        QuantScheme::w4a8(),
        platform,
        &HwGrid::default(),
        &ExploreOptions::default(),
    )
    .unwrap()
}

/// Smallest channel at which `d` (rank filled in for SVD engines) reaches
/// `target` cycles.
fn bandwidth_to_reach(d: &DesignPoint, rank: Option<usize>, target: u64) -> f64 {
    let e = rank.map_or(d.engine, |r| d.engine.with_rank(r));
    let est = hwmodel::estimate(
        &e,
        &shape(512, 512, 512),
        QuantScheme::w4a8(),
        &PlatformSpec::zcu111(),
        RateMode::Corrected,
    )
    .unwrap();
    let (mut lo, mut hi) = (0.0, 1e7);
    for _ in 0..200 {
        let mid = (lo + hi) / 2.0;
        if est.latency_with_bandwidth(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn c10_regimes() -> Outcome {
    let full = PlatformSpec::zcu111();
    let dense = best_engine(PointKind::Dense, &full);
    let svd = best_engine(PointKind::Svd, &full);
    let a = svd.total_latency_cycles < dense.total_latency_cycles;

    let quarter = full.with_bandwidth(full.bandwidth_bits_per_cycle / 4.0);
    let dense_q = best_engine(PointKind::Dense, &quarter);
    let svd_q = best_engine(PointKind::Svd, &quarter);
    let target = dense_q.total_latency_cycles;
    let need_dense = bandwidth_to_reach(&dense_q, None, target);
    let need_svd = bandwidth_to_reach(&svd_q, Some(128), target);
    let b = svd_q.total_latency_cycles <= target && need_svd < need_dense;
    outcome(
        a && b,
        format!(
            "(a) {} bits/cycle: SVD {} < dense {} cycles: {a}; (b) {} bits/cycle: SVD meets dense {target} cycles needing {need_svd:.1} vs {need_dense:.1} bits/cycle: {b}",
            full.bandwidth_bits_per_cycle, svd.total_latency_cycles, dense.total_latency_cycles, quarter.bandwidth_bits_per_cycle
        ),
    )
}

fn c11_crossover() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bad = 0;
    for _ in 0..1000 {
        let (k, n) = (rng.random_range(1..=1024), rng.random_range(1..=1024));
        let r = rng.random_range(1..=k.min(n));
        let m = rng.random_range(1..=64);
        let s = [shape(m, k, n)];
        let fewer = svd_nops(&s, &[r]) < dense_nops(&s);
        // r < K·N/(K+N) without division
        let below = r * (k + n) < k * n;
        if fewer != below || hwmodel::svd_macs(&s[0], r) != svd_nops(&s, &[r]) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("1000 random (K, N, r), {bad} disagreements"))
}

fn c12_determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let p = PlatformSpec::zcu111();
    let a = toy_pipeline(12);
    dse::write_reports(dirs[0].path(), &a, &p).unwrap();
    // second run on a single thread
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| toy_pipeline(12));
    dse::write_reports(dirs[1].path(), &b, &p).unwrap();
    let mut same = 0;
    for name in REPORT_FILES {
        let x = std::fs::read(dirs[0].path().join(name)).unwrap();
        let y = std::fs::read(dirs[1].path().join(name)).unwrap();
        same += usize::from(!x.is_empty() && x == y);
    }
    outcome(
        same == REPORT_FILES.len(),
        format!("{same}/{} report files byte-identical across runs", REPORT_FILES.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("eckart-young equivalence", c1_eckart_young),
        ("iterative beats baseline", c2_iterative_beats_baseline),
        ("residual monotonicity", c3_monotone_residuals),
        ("model/simulator agreement", c4_model_vs_simulator),
        ("balanced-config identity", c5_balanced_identity),
        ("resource examples and budgets", c6_resources),
        ("bandwidth arithmetic", c7_bandwidth),
        ("dse optimality", c8_dse_optimality),
        ("sra correctness", c9_sra),
        ("bandwidth regimes", c10_regimes),
        ("nops crossover", c11_crossover),
        ("determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!o.pass);
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
