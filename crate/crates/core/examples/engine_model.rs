//! Analytical latency and resources for the three engine types on one layer.

use itera::hwmodel::{self, EngineConfig, PlatformSpec, RateMode, TileConfig};
use itera::quant::QuantScheme;
use itera::LayerShape;

fn main() {
    let p = PlatformSpec::zcu111();
    let shape = LayerShape::new(512, 512, 512).unwrap();
    let t = TileConfig { m_t: 8, n_t: 8, k_f: 8 };
    let engines = [
        EngineConfig::dense(t),
        EngineConfig::single(t, 128),
        EngineConfig::cascade(t, TileConfig { m_t: 8, n_t: 8, k_f: 8 }, 128),
    ];
    for e in engines {
        let est = hwmodel::estimate(&e, &shape, QuantScheme::w4a8(), &p, RateMode::Corrected).unwrap();
        println!(
            "{:<28} {:>7} cycles ({:>7} at {} bits/cycle)  dsp {:>4} bram18 {:>4} bw {:.0}",
            e.key(),
            est.cycles,
            est.latency_on(&p),
            p.bandwidth_bits_per_cycle,
            est.resources.dsp,
            est.resources.bram18,
            est.resources.bandwidth_bits_per_cycle
        );
    }
    let paper = hwmodel::tile_latency(&t, &LayerShape::new(500, 500, 500).unwrap(), RateMode::PaperLiteral);
    let fixed = hwmodel::tile_latency(&t, &LayerShape::new(500, 500, 500).unwrap(), RateMode::Corrected);
    println!("500³ ragged: paper-literal {paper}, corrected {fixed}");
}
