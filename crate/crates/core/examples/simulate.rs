//! Dataflow simulation of a dense engine as the off-chip channel narrows.

use itera::dfsim::{self, Overlap, SimOptions};
use itera::hwmodel::{self, EngineConfig, PlatformSpec, RateMode, TileConfig};
use itera::quant::QuantScheme;
use itera::LayerShape;

fn main() {
    let shape = LayerShape::new(256, 256, 256).unwrap();
    let e = EngineConfig::dense(TileConfig { m_t: 8, n_t: 8, k_f: 8 });
    let model = hwmodel::tile_latency(&e.stage1, &shape, RateMode::Corrected);
    println!("model: {model} cycles");
    for bw in [f64::INFINITY, 272.0, 136.0, 68.0] {
        let p = PlatformSpec::zcu111().with_bandwidth(bw);
        for overlap in [Overlap::DoubleBuffered, Overlap::Sequential] {
            let r = dfsim::simulate(&e, &shape, QuantScheme::w4a8(), &p, SimOptions { overlap, trace: false }).unwrap();
            println!(
                "bw {bw:>4} {overlap:?}: {:>7} cycles, utilization {:.3}, channel stalls {}",
                r.cycles, r.utilization, r.channel_stall_cycles
            );
        }
    }
}
