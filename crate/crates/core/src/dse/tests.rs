use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::hwmodel::{self, EngineConfig, PlatformSpec, RateMode, TileConfig};
use crate::quant::QuantScheme;

fn shape(m: usize, k: usize, n: usize) -> LayerShape {
    LayerShape { m, k, n }
}

fn point(x_nops: u64, ratio: f64, acc: f64) -> CompressionPoint {
    CompressionPoint {
        method: PointMethod::Sra,
        weight_wl: 4,
        budget: Some(1),
        ranks: vec![1],
        accuracy: acc,
        compression_ratio: ratio,
        nops: x_nops,
    }
}

#[test]
fn compression_ratio_examples() {
    assert_eq!(dense_compression_ratio(8), 4.0);
    let r = compression_ratio(&[shape(1, 512, 512)], 4, &[128]);
    assert_eq!(r, 8_388_608.0 / 528_384.0);
    assert!((r - 15.87).abs() < 0.01);
    assert!(compression_ratio(&[shape(1, 64, 64)], 32, &[64]) < 1.0);
}

#[test]
fn nops_examples() {
    let s = [shape(512, 512, 512)];
    assert_eq!(svd_nops(&s, &[128]), 67_108_864);
    assert_eq!(2 * svd_nops(&s, &[128]), dense_nops(&s));
    // K·N/(K+N) = 256 for K=N=512
    assert_eq!(svd_nops(&s, &[256]), dense_nops(&s));
    assert_eq!(svd_nops(&[shape(7, 30, 50)], &[1]), 7 * 80);
}

#[test]
fn pareto_examples() {
    let one = vec![point(5, 2.0, 0.3)];
    assert_eq!(pareto_extract(&one, Axis::Nops), one);
    let two = vec![point(1, 1.0, 0.9), point(2, 2.0, 0.8)];
    assert_eq!(pareto_extract(&two, Axis::Nops), vec![two[0].clone()]);
    // on the ratio axis more is better, so both survive
    assert_eq!(pareto_extract(&two, Axis::Ratio).len(), 2);
    let dup = vec![point(1, 1.0, 0.5), point(1, 1.0, 0.5), point(1, 1.0, 0.4)];
    assert_eq!(pareto_extract(&dup, Axis::Nops).len(), 1);
}

#[test]
fn pareto_matches_quadratic_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let pts: Vec<CompressionPoint> = (0..100)
            .map(|_| {
                point(
                    rng.random_range(1..40),
                    rng.random_range(1..40) as f64,
                    rng.random_range(0..30) as f64 / 30.0,
                )
            })
            .collect();
        for axis in [Axis::Nops, Axis::Ratio] {
            let front = pareto_extract(&pts, axis);
            let better = |a: &CompressionPoint, b: &CompressionPoint| {
                let (ca, cb) = (axis.cost(a), axis.cost(b));
                ca <= cb && a.accuracy >= b.accuracy && (ca < cb || a.accuracy > b.accuracy)
            };
            let mut oracle: Vec<(f64, f64)> = pts
                .iter()
                .filter(|p| !pts.iter().any(|q| better(q, p)))
                .map(|p| (axis.value(p), p.accuracy))
                .collect();
            oracle.sort_by(|a, b| a.0.total_cmp(&b.0));
            oracle.dedup();
            let got: Vec<(f64, f64)> = front.iter().map(|p| (axis.value(p), p.accuracy)).collect();
            assert_eq!(got, oracle);
        }
    }
}

fn one_layer_toy(seed: u64) -> ModelSpec {
    ModelSpec::toy(seed, 16, &[24, 20], &[5.0]).unwrap()
}

#[test]
fn sweep_cardinality_and_budget_monotonicity() {
    let model = one_layer_toy(1);
    let scorer = ReconstructionProxy::new(&model);
    let budgets = [2, 5, 9, 14];
    let out = compress_sweep(&model, &[4, 6, 8], &budgets, &scorer, &SraParams::default());
    assert!(out.failures.is_empty());
    let count = |m| out.points.iter().filter(|p| p.method == m).count();
    assert_eq!(count(PointMethod::Sra), 3 * budgets.len());
    assert_eq!(count(PointMethod::SvdUniform), 3 * budgets.len());
    assert_eq!(count(PointMethod::DenseQuant), 3);
    for wl in [4, 6, 8] {
        let accs: Vec<f64> = out
            .points
            .iter()
            .filter(|p| p.method == PointMethod::Sra && p.weight_wl == wl)
            .map(|p| p.accuracy)
            .collect();
        assert!(accs.windows(2).all(|w| w[1] >= w[0]), "wl {wl}: {accs:?}");
    }
}

#[test]
fn sweep_records_failures_and_continues() {
    let model = one_layer_toy(2);
    let scorer = ReconstructionProxy::new(&model);
    let out = compress_sweep(&model, &[1, 8], &[4, 500], &scorer, &SraParams::default());
    assert!(out.failures.iter().any(|f| f.weight_wl == 1));
    assert!(out.failures.iter().any(|f| f.budget == Some(500)));
    assert!(out.points.iter().any(|p| p.weight_wl == 8 && p.budget == Some(4)));
}

#[test]
fn iterative_points_beat_baseline_points() {
    let mut wins = 0;
    let trials = 20;
    for seed in 0..trials {
        let model = ModelSpec::toy(100 + seed, 16, &[16, 16, 12], &[3.0, 8.0]).unwrap();
        let scorer = ReconstructionProxy::new(&model);
        let out = compress_sweep(&model, &[4], &[10], &scorer, &SraParams::default());
        let get = |m| out.points.iter().find(|p| p.method == m).unwrap().accuracy;
        if get(PointMethod::Sra) >= get(PointMethod::SvdUniform) {
            wins += 1;
        }
    }
    assert!(wins * 100 >= 95 * trials, "{wins}/{trials}");
}

fn zcu() -> PlatformSpec {
    PlatformSpec::zcu111()
}

#[test]
fn pruning_examples() {
    let layers = [LayerWorkload {
        shape: shape(512, 512, 512),
        rank: None,
    }];
    let s = QuantScheme::new(8, 8).unwrap();
    // 8·8·67 = 4288 DSP at f_packing 1 for 8-bit weights
    let big = EngineConfig::dense(TileConfig { m_t: 8, n_t: 8, k_f: 67 });
    let unit = EngineConfig::dense(TileConfig { m_t: 1, n_t: 1, k_f: 1 });
    let kept = prune_design_space(&zcu(), &[big, unit], &layers, s).unwrap();
    assert_eq!(kept, vec![unit]);
    let err = prune_design_space(&zcu(), &[big], &layers, s).unwrap_err().to_string();
    assert!(err.contains("DSP"), "{err}");

    let grid = HwGrid::default();
    let all = candidates(PointKind::Dense, &grid);
    let kept = prune_design_space(&zcu(), &all, &layers, s).unwrap();
    for c in &all {
        let e = hwmodel::estimate(c, &layers[0].shape, s, &zcu(), RateMode::Corrected).unwrap();
        let fits = e.resources.dsp <= 4272 && e.resources.bram18 <= 1080;
        assert_eq!(kept.contains(c), fits, "{c:?}");
    }
}

fn small_grid(rng: &mut ChaCha8Rng) -> HwGrid {
    let pick = |rng: &mut ChaCha8Rng, n: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..7).map(|e| 1 << e).collect();
        while v.len() > n {
            v.remove(rng.random_range(0..v.len()));
        }
        v
    };
    HwGrid {
        m_t: pick(rng, 3),
        n_t: pick(rng, 3),
        r_t: pick(rng, 2),
        k_f: pick(rng, 3),
    }
}

#[test]
fn branch_and_bound_matches_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..6 {
        let grid = small_grid(&mut rng);
        let layers: Vec<LayerWorkload> = (0..2)
            .map(|_| {
                let s = shape(rng.random_range(8..200), rng.random_range(32..300), rng.random_range(8..300));
                LayerWorkload {
                    shape: s,
                    rank: Some(rng.random_range(1..s.k.min(s.n))),
                }
            })
            .collect();
        for kind in [PointKind::Dense, PointKind::Svd] {
            let ls: Vec<LayerWorkload> = layers
                .iter()
                .map(|l| LayerWorkload {
                    rank: (kind == PointKind::Svd).then_some(l.rank.unwrap()),
                    ..*l
                })
                .collect();
            let platform = if trial % 2 == 0 { zcu() } else { zcu().with_bandwidth(96.0) };
            let s = QuantScheme::w4a8();
            let a = explore_hw(&ls, kind, s, &platform, &grid, &ExploreOptions::default()).unwrap();
            let b = explore_exhaustive(&ls, kind, s, &platform, &grid, RateMode::Corrected).unwrap();
            assert_eq!(a.engine, b.engine);
            assert_eq!(a.total_latency_cycles, b.total_latency_cycles);
        }
    }
}

#[test]
fn single_config_grid_returns_it() {
    let grid = HwGrid {
        m_t: vec![4],
        n_t: vec![2],
        r_t: vec![1],
        k_f: vec![8],
    };
    let layers = [LayerWorkload {
        shape: shape(64, 64, 64),
        rank: None,
    }];
    let d = explore_hw(
        &layers,
        PointKind::Dense,
        QuantScheme::w4a8(),
        &zcu(),
        &grid,
        &ExploreOptions::default(),
    )
    .unwrap();
    let t = TileConfig { m_t: 4, n_t: 2, k_f: 8 };
    assert_eq!(d.engine, EngineConfig::dense(t));
    assert_eq!(
        d.total_latency_cycles,
        hwmodel::tile_latency(&t, &layers[0].shape, RateMode::Corrected)
    );
}

#[test]
fn lower_bound_is_admissible() {
    let layers = [
        LayerWorkload {
            shape: shape(64, 96, 48),
            rank: Some(7),
        },
        LayerWorkload {
            shape: shape(64, 48, 80),
            rank: Some(20),
        },
    ];
    for t in candidates(
        PointKind::Svd,
        &HwGrid {
            m_t: vec![1, 4, 16],
            n_t: vec![2, 8],
            r_t: vec![1, 8],
            k_f: vec![1, 4, 16],
        },
    ) {
        let lat = total_latency(&t, &layers, QuantScheme::w4a8(), &zcu(), RateMode::Corrected).unwrap();
        assert!(lower_bound(&t, &layers) <= lat, "{t:?}");
    }
}

fn tiny_sweep(seed: u64) -> SweepConfig {
    SweepConfig {
        weight_wls: vec![4, 8],
        budgets: vec![6, 16],
        verify_top: 2,
        grid: HwGrid {
            m_t: vec![1, 4, 16],
            n_t: vec![1, 4, 16],
            r_t: vec![1, 4],
            k_f: vec![1, 4, 16],
        },
        ..SweepConfig::toy(seed)
    }
}

#[test]
fn pipeline_end_to_end_is_deterministic() {
    let model = ModelSpec::toy(5, 32, &[32, 24, 16], &[3.0, 9.0]).unwrap();
    let cfg = tiny_sweep(5);
    let platform = zcu();
    let a = run_pipeline(&model, &platform, &cfg).unwrap();
    assert!(!a.hw_front.is_empty());
    for d in &a.designs {
        assert!(d.resources.fits(&platform));
        assert!(d.sim_latency_cycles.is_some());
    }
    for x in &a.hw_front {
        for y in &a.hw_front {
            let dominated = y.latency() <= x.latency()
                && accuracy(y) >= accuracy(x)
                && (y.latency() < x.latency() || accuracy(y) > accuracy(x));
            assert!(!dominated);
        }
    }
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    write_reports(dirs[0].path(), &a, &platform).unwrap();
    let b = run_pipeline(&model, &platform, &cfg).unwrap();
    write_reports(dirs[1].path(), &b, &platform).unwrap();
    for name in REPORT_FILES {
        let x = std::fs::read(dirs[0].path().join(name)).unwrap();
        let y = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name}");
    }
    let mut text = Vec::new();
    summarize(dirs[0].path(), &mut text).unwrap();
    assert!(String::from_utf8(text).unwrap().contains("hw_front.csv"));
}

fn accuracy(d: &DesignPoint) -> f64 {
    d.compression.as_ref().unwrap().accuracy
}

#[test]
fn pipeline_errors_name_their_stage() {
    let model = ModelSpec::toy(5, 32, &[32, 24], &[3.0]).unwrap();
    let cfg = SweepConfig {
        budgets: vec![1000],
        ..tiny_sweep(1)
    };
    let err = run_pipeline(&model, &zcu(), &cfg).unwrap_err();
    assert!(err.to_string().starts_with("config:"), "{err}");
}

#[test]
fn sweep_config_rejects_unknown_keys_and_needs_a_seed() {
    let ok = r#"{"seed": 3, "weight_wls": [4], "budgets": [8]}"#;
    let cfg: SweepConfig = serde_json::from_str(ok).unwrap();
    assert_eq!(cfg.verify_top, 5);
    assert!(serde_json::from_str::<SweepConfig>(r#"{"weight_wls": [4], "budgets": [8]}"#).is_err());
    assert!(serde_json::from_str::<SweepConfig>(r#"{"seed": 1, "weight_wls": [4], "budgets": [8], "extra": 1}"#).is_err());
    let task = r#"{"seed": 3, "weight_wls": [4], "budgets": [8], "evaluator": {"kind": "synthetic_task", "calibration": 64}}"#;
    let cfg: SweepConfig = serde_json::from_str(task).unwrap();
    assert_eq!(
        cfg.evaluator,
        EvaluatorKind::SyntheticTask {
            calibration: 64,
            logit_tiebreak: false
        }
    );
}
