use super::*;

fn shape(m: usize, k: usize, n: usize) -> LayerShape {
    LayerShape { m, k, n }
}

fn tile(m_t: usize, n_t: usize, k_f: usize) -> TileConfig {
    TileConfig { m_t, n_t, k_f }
}

#[test]
fn rate_examples() {
    let r = tile_rates(&tile(1, 1, 8), &shape(1, 512, 512), RateMode::PaperLiteral);
    assert_eq!(r.lhs, ratio(1, 64));
    assert_eq!(r.rhs, ratio(8, 1));
    assert_eq!(r.out, ratio(1, 64));
    let r = tile_rates(&tile(1, 1, 16), &shape(4, 16, 4), RateMode::Corrected);
    assert_eq!(r.out, ratio(1, 1));
    let r = tile_rates(&tile(8, 8, 8), &shape(512, 512, 512), RateMode::Corrected);
    assert_eq!(r.lhs, ratio(1, 1));
}

#[test]
fn workload_examples() {
    let w = tile_workloads(&tile(8, 8, 8), &shape(512, 512, 512));
    assert_eq!((w.lhs, w.rhs, w.out), (262_144, 16_777_216, 262_144));
    let w = tile_workloads(&tile(16, 4, 4), &shape(16, 32, 24));
    assert_eq!(w.rhs, 32 * 24);
    let w = tile_workloads(&tile(8, 1, 1), &shape(100, 10, 10));
    assert_eq!(w.rhs, 13 * 10 * 10);
    assert_eq!(w.lhs, 104 * 10);
}

#[test]
fn latency_examples() {
    let s = shape(512, 512, 512);
    assert_eq!(tile_latency(&tile(8, 8, 8), &s, RateMode::Corrected), 262_144);
    assert_eq!(tile_latency(&tile(8, 8, 8), &s, RateMode::PaperLiteral), 2_097_152);
    assert_eq!(tile_latency(&tile(1, 1, 1), &shape(4, 4, 4), RateMode::Corrected), 64);
}

// Independent f64 evaluation of the three port terms.
fn oracle_latency(t: &TileConfig, s: &LayerShape, literal: bool) -> f64 {
    let mp = s.m.div_ceil(t.m_t) as f64 * t.m_t as f64;
    let np = s.n.div_ceil(t.n_t) as f64 * t.n_t as f64;
    let beats = s.k.div_ceil(t.k_f) as f64;
    let (mt, nt, kf, k) = (t.m_t as f64, t.n_t as f64, t.k_f as f64, s.k as f64);
    let r_lhs = if literal {
        mt * k / (beats * np)
    } else {
        mt * nt * k / (beats * np)
    };
    let lhs = mp * k / r_lhs;
    let rhs = (mp / mt) * k * np / (nt * kf);
    let out = mp * np / (mt * nt / beats);
    lhs.max(rhs).max(out)
}

#[test]
fn latency_matches_float_oracle_on_ragged_shapes() {
    for (m, k, n) in [(100, 30, 70), (7, 9, 11), (64, 100, 3), (33, 512, 65)] {
        for (mt, nt, kf) in [(1, 1, 1), (4, 2, 8), (8, 8, 8), (3, 5, 7)] {
            let t = tile(mt, nt, kf);
            let s = shape(m, k, n);
            for (literal, mode) in [(true, RateMode::PaperLiteral), (false, RateMode::Corrected)] {
                let want = oracle_latency(&t, &s, literal);
                let got = tile_latency(&t, &s, mode) as f64;
                assert!(got >= want - 1e-6 && got < want + 1.0, "{t} {s:?}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn balanced_identity_and_monotonicity() {
    for m_t in [1, 2, 4, 8] {
        for n_t in [1, 2, 4, 8] {
            for k_f in [1, 2, 4, 8] {
                let s = shape(64, 128, 32);
                let t = tile(m_t, n_t, k_f);
                let [a, b, c] = port_times(&t, &s, RateMode::Corrected);
                assert!(a == b && b == c);
                let want = (64 / m_t) * (32 / n_t) * (128 / k_f);
                assert_eq!(tile_latency(&t, &s, RateMode::Corrected), want as u64);
                for bigger in [tile(m_t * 2, n_t, k_f), tile(m_t, n_t * 2, k_f), tile(m_t, n_t, k_f * 2)] {
                    assert!(tile_latency(&bigger, &s, RateMode::Corrected) <= want as u64);
                    assert!(dsp_usage(&bigger, 2) >= dsp_usage(&t, 2));
                    assert!(bram_usage(&bigger, &s, 8, 4, 1) >= bram_usage(&t, &s, 8, 4, 1));
                }
            }
        }
    }
}

#[test]
fn dsp_examples() {
    assert_eq!(dsp_usage(&tile(8, 8, 8), 2), 256);
    assert_eq!(dsp_usage(&tile(3, 5, 8), 1), 120);
    assert_eq!(dsp_per_pe(7, 2), 4);
}

#[test]
fn bram_examples() {
    assert_eq!(bram18(64, 8), 1);
    assert_eq!(bram18(4096, 8), 2);
    assert_eq!(bram18(1, 1), 1);
    assert_eq!(bram18(512, 36), 1);
    assert_eq!(bram18(513, 36), 2);
    let s = shape(512, 512, 512);
    assert_eq!(bram_usage(&tile(8, 8, 8), &s, 8, 8, 2), 64);
    assert_eq!(bram_usage(&tile(1, 1, 8), &shape(1, 8, 1), 8, 8, 1), 16);
    assert_eq!(bram_usage(&tile(1, 1, 1), &shape(4, 4, 4), 8, 8, 1), 2);
}

#[test]
fn bram18_matches_exhaustive_oracle() {
    // smallest block count over any aspect, checked by brute force over
    // block counts for each aspect
    for depth in [1u64, 17, 511, 512, 513, 2048, 2049, 10_000] {
        for width in [1u64, 3, 4, 8, 9, 16, 18, 36, 37] {
            let mut best = u64::MAX;
            for (d, w) in BRAM18_ASPECTS {
                let mut n = 1;
                loop {
                    let fits = (1..=n).any(|cols| cols * w >= width && (n / cols) * d >= depth);
                    if fits {
                        break;
                    }
                    n += 1;
                }
                best = best.min(n);
            }
            assert_eq!(bram18(depth, width), best, "{depth}x{width}");
        }
    }
}

#[test]
fn bandwidth_examples() {
    let s = shape(512, 512, 512);
    let t = tile(8, 8, 8);
    assert_eq!(bandwidth(&t, &s, [8, 4, 8], RateMode::Corrected), 272.0);
    let doubled = bandwidth(&t, &s, [8, 8, 8], RateMode::Corrected);
    assert_eq!(doubled - 272.0, 16_777_216.0 * 4.0 / 262_144.0);
    assert_eq!(bandwidth(&t, &s, [0, 0, 0], RateMode::Corrected), 0.0);
}

fn platform() -> PlatformSpec {
    PlatformSpec::zcu111()
}

#[test]
fn single_engine_examples() {
    let s = shape(512, 512, 512);
    let t = tile(8, 8, 8);
    let p = platform();
    let d = dense_engine(&t, &s, QuantScheme::w4a8(), &p, RateMode::Corrected).unwrap();
    let full = single_engine(
        &EngineConfig::single(t, 512),
        &s,
        QuantScheme::w4a8(),
        &p,
        RateMode::Corrected,
    )
    .unwrap();
    assert_eq!(full.cycles, 2 * d.cycles);

    let e = single_engine(
        &EngineConfig::single(t, 128),
        &s,
        QuantScheme::w4a8(),
        &p,
        RateMode::Corrected,
    )
    .unwrap();
    assert_eq!(e.stages[0].cycles, 65_536);
    assert_eq!(e.stages[1].cycles, 65_536);
    assert_eq!(e.cycles, 131_072);
    // 8·8 PEs, 4 DSPs each at 2-way packing
    assert_eq!(e.resources.dsp, 256);
    // tile: 8·4·bram18(64,8) + 8·4·bram18(64,4); buffer 8·8·bram18(16,8)
    assert_eq!(e.intermediate_bram18, 64);
    assert_eq!(e.resources.bram18, 64 + 64);
    // stage 1: lhs 512·512·8 + rhs 64·512·128·4; stage 2: rhs 64·128·512·4 + out 512·512·8
    let bits = 512 * 512 * 8 + 64 * 512 * 128 * 4 + 64 * 128 * 512 * 4 + 512 * 512 * 8;
    assert_eq!(e.offchip_bits(), bits);

    let r1 = single_engine(
        &EngineConfig::single(tile(8, 1, 8), 1),
        &s,
        QuantScheme::w4a8(),
        &p,
        RateMode::Corrected,
    )
    .unwrap();
    assert_eq!(r1.stages[0].workloads.rhs, 64 * 512);
}

#[test]
fn cascade_examples() {
    let s = shape(512, 512, 512);
    let t = tile(8, 8, 8);
    let p = platform();
    let e = cascade_engine(
        &EngineConfig::cascade(t, t, 128),
        &s,
        QuantScheme::w4a8(),
        &p,
        RateMode::Corrected,
    )
    .unwrap();
    assert_eq!(e.stages[0].cycles, e.stages[1].cycles);
    assert_eq!(e.cycles, 65_536 + 65_536 / 64);
    assert_eq!(e.resources.dsp, 512);
    assert!(EngineConfig::cascade(t, tile(4, 8, 8), 128).validate().is_err());
    assert!(cascade_engine(
        &EngineConfig::cascade(t, t, 0),
        &s,
        QuantScheme::w4a8(),
        &p,
        RateMode::Corrected
    )
    .is_err());
    assert!(EngineConfig {
        mode: EngineMode::SingleSvd,
        stage1: t,
        stage2: tile(8, 4, 8),
        rank: 4
    }
    .validate()
    .is_err());
}

#[test]
fn bandwidth_bound_latency() {
    let s = shape(512, 512, 512);
    let p = platform();
    let d = dense_engine(&tile(8, 8, 8), &s, QuantScheme::w4a8(), &p, RateMode::Corrected).unwrap();
    assert_eq!(d.latency_with_bandwidth(f64::INFINITY), d.cycles);
    assert_eq!(d.latency_with_bandwidth(272.0), d.cycles);
    assert_eq!(d.latency_with_bandwidth(136.0), 2 * d.cycles);
}

#[test]
fn resource_check_names_constraint() {
    let p = platform();
    let over = ResourceEstimate {
        dsp: 4273,
        bram18: 0,
        bandwidth_bits_per_cycle: 0.0,
    };
    let msg = over.check(&p).unwrap_err().to_string();
    assert!(msg.contains("DSP"), "{msg}");
    assert!(ResourceEstimate {
        dsp: 1,
        bram18: 1081,
        bandwidth_bits_per_cycle: 0.0
    }
    .check(&p)
    .unwrap_err()
    .to_string()
    .contains("BRAM"));
    let one = dense_engine(
        &tile(1, 1, 1),
        &shape(512, 512, 512),
        QuantScheme::w4a8(),
        &p,
        RateMode::Corrected,
    )
    .unwrap();
    assert!(one.resources.fits(&p));
}

#[test]
fn occupancy_counts_padding() {
    assert_eq!(tile(8, 8, 8).occupancy(&shape(64, 64, 64)), 1.0);
    let o = tile(8, 1, 1).occupancy(&shape(100, 10, 10));
    assert!((o - 100.0 / 104.0).abs() < 1e-12);
}
