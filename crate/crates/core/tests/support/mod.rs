//! Shared test oracles, independent of the library's factorization paths.
#![allow(dead_code)] // each test binary uses its own subset
#![allow(clippy::needless_range_loop)]

use caqr_core::dense::DenseMatrix;
use caqr_core::instrument::CommCounters;

/// Singular values by one-sided Jacobi: rotate column pairs until all are
/// mutually orthogonal, then read off the column norms. High relative
/// accuracy, no Gram matrix formed, no shared code with the QR kernels.
pub fn jacobi_singular_values(a: &DenseMatrix) -> Vec<f64> {
    let (m, n) = (a.rows(), a.cols());
    let mut u: Vec<Vec<f64>> = (0..n).map(|j| a.col(j).to_vec()).collect();
    let tol = 1e-14;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for (up, uq) in u[p].iter().zip(u[q].iter()) {
                    app += up * up;
                    aqq += uq * uq;
                    apq += up * uq;
                }
                if apq.abs() <= tol * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (up, uq) = (u[p][i], u[q][i]);
                    u[p][i] = c * up - s * uq;
                    u[q][i] = s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = u
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// 2-norm condition number via the Jacobi oracle.
pub fn measured_condition(a: &DenseMatrix) -> f64 {
    let sv = jacobi_singular_values(a);
    sv[0] / sv[sv.len() - 1]
}

/// ||A - Q R||_F via an explicit product.
pub fn residual(a: &DenseMatrix, q: &DenseMatrix, r: &DenseMatrix) -> f64 {
    caqr_core::fro_norm(&q.matmul(r).unwrap().sub(a).unwrap())
}

/// ||Q^T Q - I||_F.
pub fn ortho_error(q: &DenseMatrix) -> f64 {
    let n = q.cols();
    let gram = q.transpose().matmul(q).unwrap();
    caqr_core::fro_norm(&gram.sub(&DenseMatrix::identity(n)).unwrap())
}

/// Reference R from the unblocked Householder path.
pub fn reference_r(a: &DenseMatrix) -> DenseMatrix {
    let mut c = CommCounters::new(1);
    caqr_core::householder::qr_unblocked(a, &mut c).unwrap().r()
}

/// Largest entrywise difference over the upper triangles.
pub fn max_upper_diff(x: &DenseMatrix, y: &DenseMatrix) -> f64 {
    let n = x.cols().min(y.cols());
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((x.get(i, j) - y.get(i, j)).abs());
        }
    }
    worst
}
