//! Symmetric per-vector quantization at a few word lengths.

use itera::quant::{fake_quantize, quantize_vector};

fn main() {
    let v = [0.91, -0.42, 0.07, -1.30, 0.55, 0.0, 0.33, -0.08];
    for wl in [2u8, 4, 6, 8] {
        let q = quantize_vector(&v, wl).unwrap();
        let back = fake_quantize(&v, wl).unwrap();
        let err: f64 = v.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        println!("W{wl}: scale {:.5} codes {:?} |v - q(v)| = {err:.4}", q.scale, q.codes);
    }
}
