//! One-sided (Hestenes) Jacobi SVD. Slow but accurate to working precision,
//! which is what the truncated-SVD baseline and the equivalence checks need.

use crate::tensor::{dot, Matrix};

/// Thin SVD `A = U diag(s) Vᵀ` with `p = min(rows, cols)` components, sorted
/// by descending singular value. Columns of `u` belonging to zero singular
/// values are left as zero vectors.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

const MAX_SWEEPS: usize = 100;
const ORTHO_TOL: f64 = 1e-15;

pub fn svd(a: &Matrix) -> Svd {
    if a.rows() >= a.cols() {
        tall_svd(a)
    } else {
        let t = tall_svd(&a.transpose());
        Svd { u: t.v, s: t.s, v: t.u }
    }
}

fn tall_svd(a: &Matrix) -> Svd {
    let n = a.cols();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| a.column(c)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = dot(&cols[i], &cols[i]);
                let beta = dot(&cols[j], &cols[j]);
                let gamma = dot(&cols[i], &cols[j]);
                if gamma == 0.0 || gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, i, j, c, s);
                rotate(&mut vcols, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = cols.iter().enumerate().map(|(i, c)| (dot(c, c).sqrt(), i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let s: Vec<f64> = order.iter().map(|(sv, _)| *sv).collect();
    let u_cols: Vec<Vec<f64>> = order
        .iter()
        .map(|(sv, i)| {
            if *sv > 0.0 {
                cols[*i].iter().map(|x| x / sv).collect()
            } else {
                vec![0.0; a.rows()]
            }
        })
        .collect();
    let v_cols: Vec<Vec<f64>> = order.iter().map(|(_, i)| vcols[*i].clone()).collect();
    Svd {
        u: Matrix::from_columns(&u_cols).expect("uniform column length"),
        s,
        v: Matrix::from_columns(&v_cols).expect("uniform column length"),
    }
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(j);
    let (ci, cj) = (&mut left[i], &mut right[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}
