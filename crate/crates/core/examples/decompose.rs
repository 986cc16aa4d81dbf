//! Iterative quantized decomposition against quantize-after-SVD on a matrix
//! with a decaying spectrum.

use itera::decomp::{iterative_decompose, svd_baseline};
use itera::Matrix;

fn main() {
    let spectrum: Vec<f64> = (0..48).map(|i| (-(i as f64) / 8.0).exp()).collect();
    let w = Matrix::with_spectrum(64, 48, &spectrum, 7);
    let norm = w.frobenius_norm();
    println!("{:>4} {:>4} {:>12} {:>12}", "wl", "rank", "iterative", "svd+quant");
    for wl in [4u8, 6, 8] {
        let it = iterative_decompose(&w, 32, wl).unwrap();
        for rank in [4, 8, 16, 32] {
            let base = svd_baseline(&w, rank, wl).unwrap();
            // the iterative factors at rank r are a prefix of the rank-32 run
            println!(
                "{wl:>4} {rank:>4} {:>12.5} {:>12.5}",
                it.residual_norms[rank] / norm,
                base.final_residual() / norm
            );
        }
    }
}
