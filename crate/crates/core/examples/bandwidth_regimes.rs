//! Dense vs SVD engines on a 512×512×512 layer at rank 128 (W4A8) on the
//! ZCU111 budget, with a generous and a quartered off-chip channel.

use itera::dse::{explore_hw, DesignPoint, ExploreOptions, HwGrid, LayerWorkload, PointKind};
use itera::hwmodel::{self, PlatformSpec};
use itera::quant::QuantScheme;
use itera::LayerShape;

fn best(kind: PointKind, platform: &PlatformSpec) -> DesignPoint {
    let shape = LayerShape::new(512, 512, 512).unwrap();
    let rank = (kind == PointKind::Svd).then_some(128);
    let layers = [LayerWorkload { shape, rank }];
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

/// Smallest channel (bits/cycle) at which `d` finishes within `target` cycles.
fn bandwidth_needed(d: &DesignPoint, rank: Option<usize>, target: u64) -> f64 {
    let shape = LayerShape::new(512, 512, 512).unwrap();
    let engine = match rank {
        Some(r) => d.engine.with_rank(r),
        None => d.engine,
    };
    let est = hwmodel::estimate(
        &engine,
        &shape,
        QuantScheme::w4a8(),
        &PlatformSpec::zcu111(),
        Default::default(),
    )
    .unwrap();
    let (mut lo, mut hi) = (1.0, 1e6);
    for _ in 0..100 {
        let mid = (lo + hi) / 2.0;
        if est.latency_with_bandwidth(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn main() {
    let full = PlatformSpec::zcu111();
    let quarter = full.with_bandwidth(full.bandwidth_bits_per_cycle / 4.0);
    for (label, p) in [
        ("unlimited", full.with_bandwidth(f64::INFINITY)),
        ("zcu111", full.clone()),
        ("quarter", quarter),
    ] {
        let d = best(PointKind::Dense, &p);
        let s = best(PointKind::Svd, &p);
        println!(
            "{label:>9} bw {:>6}: dense {:>7} cycles ({}), svd {:>7} cycles ({})",
            p.bandwidth_bits_per_cycle,
            d.total_latency_cycles,
            d.engine.key(),
            s.total_latency_cycles,
            s.engine.key()
        );
        let need_dense = bandwidth_needed(&d, None, d.total_latency_cycles);
        let need_svd = bandwidth_needed(&s, Some(128), d.total_latency_cycles);
        println!("           bandwidth to reach dense latency: dense {need_dense:.1}, svd {need_svd:.1} bits/cycle");
    }
}
