//! End-to-end sweep on the toy model; writes the four reports to a directory
//! given as the first argument (default `dse_out`).

use itera::dse::{self, SweepConfig};
use itera::hwmodel::PlatformSpec;
use itera::ModelSpec;

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "dse_out".into());
    let cfg = SweepConfig::toy(0);
    let platform = PlatformSpec::zcu111();
    let out = dse::run_pipeline(&ModelSpec::default_toy(cfg.seed), &platform, &cfg).unwrap();
    std::fs::create_dir_all(&dir).unwrap();
    dse::write_reports(dir.as_ref(), &out, &platform).unwrap();
    println!("accuracy/latency front:");
    for d in &out.hw_front {
        let c = d.compression.as_ref().unwrap();
        println!(
            "  {:.4} @ {:>7} cycles  {:?} W{} ranks [{}]  {}",
            c.accuracy,
            d.latency(),
            c.method,
            c.weight_wl,
            c.ranks_label(),
            d.engine.key()
        );
    }
    dse::summarize(dir.as_ref(), std::io::stdout()).unwrap();
}
