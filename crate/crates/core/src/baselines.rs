//! Competitor thin-QR factorizations: CholeskyQR, classical Gram-Schmidt,
//! right-looking modified Gram-Schmidt, and the unblocked Householder
//! reference, all instrumented with the shared counters.

use serde::{Deserialize, Serialize};

use crate::dense::{fro_norm, DenseMatrix};
use crate::error::{Error, Result};
use crate::householder::{explicit_q, qr_unblocked};
use crate::instrument::CommCounters;

/// Explicit thin QR: Q is m x n with (approximately) orthonormal columns,
/// R is n x n upper triangular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinQR {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
}

impl ThinQR {
    /// ||Q^T Q - I||_F, the loss-of-orthogonality measure.
    pub fn ortho_error(&self) -> f64 {
        let gram = self.q.transpose().matmul(&self.q).unwrap();
        let n = self.q.cols();
        fro_norm(&gram.sub(&DenseMatrix::identity(n)).unwrap())
    }

    /// ||A - Q R||_F.
    pub fn residual(&self, a: &DenseMatrix) -> f64 {
        fro_norm(&self.q.matmul(&self.r).unwrap().sub(a).unwrap())
    }
}

/// CholeskyQR either produces a factorization or reports the Cholesky pivot
/// that broke down; breakdown is an outcome, not a crash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CholeskyQrOutcome {
    Factored(ThinQR),
    Breakdown { pivot: usize },
}

/// Q = A R^{-1} with R the Cholesky factor of A^T A.
pub fn cholesky_qr(a: &DenseMatrix, counters: &mut CommCounters) -> Result<CholeskyQrOutcome> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(Error::Underdetermined { rows: m, cols: n });
    }
    // gram = A^T A (symmetric half computed, mirrored)
    let mut gram = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let mut s = 0.0;
            for k in 0..m {
                s += a.get(k, i) * a.get(k, j);
            }
            gram.set(i, j, s);
            gram.set(j, i, s);
        }
    }
    counters.record_flops(0, (m * n * (n + 1) / 2) as u64, (m * n * (n + 1) / 2) as u64, 0);

    // upper Cholesky gram = R^T R
    let mut r = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = gram.get(j, j);
        for k in 0..j {
            d -= r.get(k, j) * r.get(k, j);
        }
        counters.record_flops(0, j as u64, j as u64, 0);
        if d <= 0.0 {
            return Ok(CholeskyQrOutcome::Breakdown { pivot: j });
        }
        let rjj = d.sqrt();
        r.set(j, j, rjj);
        for i in (j + 1)..n {
            let mut s = gram.get(j, i);
            for k in 0..j {
                s -= r.get(k, j) * r.get(k, i);
            }
            r.set(j, i, s / rjj);
            counters.record_flops(0, j as u64, j as u64, 1);
        }
    }

    // Q = A R^{-1}: back substitution per row of A
    let mut q = a.clone();
    for j in 0..n {
        for k in 0..j {
            let rkj = r.get(k, j);
            if rkj != 0.0 {
                for i in 0..m {
                    q.set(i, j, q.get(i, j) - rkj * q.get(i, k));
                }
            }
        }
        let inv = 1.0 / r.get(j, j);
        for i in 0..m {
            q.set(i, j, q.get(i, j) * inv);
        }
        counters.record_flops(0, (m * j + m) as u64, (m * j) as u64, 1);
    }
    Ok(CholeskyQrOutcome::Factored(ThinQR { q, r }))
}

/// Left-looking classical Gram-Schmidt. A zero pivot column is reported as
/// an error outcome.
pub fn cgs(a: &DenseMatrix, counters: &mut CommCounters) -> Result<ThinQR> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(Error::Underdetermined { rows: m, cols: n });
    }
    let mut q = DenseMatrix::zeros(m, n);
    let mut r = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut v: Vec<f64> = (0..m).map(|i| a.get(i, j)).collect();
        // coefficients against the original column (classical variant)
        for k in 0..j {
            let mut s = 0.0;
            for i in 0..m {
                s += q.get(i, k) * a.get(i, j);
            }
            r.set(k, j, s);
            for (i, vi) in v.iter_mut().enumerate() {
                *vi -= s * q.get(i, k);
            }
            counters.record_flops(0, (2 * m) as u64, (2 * m) as u64, 0);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        counters.record_flops(0, m as u64, m as u64, 0);
        if norm == 0.0 {
            return Err(Error::Precondition(format!(
                "column {} numerically dependent in CGS",
                j
            )));
        }
        r.set(j, j, norm);
        for (i, vi) in v.iter().enumerate() {
            q.set(i, j, vi / norm);
        }
        counters.record_flops(0, 0, 0, m as u64);
    }
    Ok(ThinQR { q, r })
}

/// Right-looking modified Gram-Schmidt.
pub fn mgs_right_looking(a: &DenseMatrix, counters: &mut CommCounters) -> Result<ThinQR> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(Error::Underdetermined { rows: m, cols: n });
    }
    let mut work = a.clone();
    let mut r = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let norm = (0..m).map(|i| work.get(i, j).powi(2)).sum::<f64>().sqrt();
        counters.record_flops(0, m as u64, m as u64, 0);
        if norm == 0.0 {
            return Err(Error::Precondition(format!(
                "column {} numerically dependent in MGS",
                j
            )));
        }
        r.set(j, j, norm);
        for i in 0..m {
            work.set(i, j, work.get(i, j) / norm);
        }
        counters.record_flops(0, 0, 0, m as u64);
        for k in (j + 1)..n {
            let mut s = 0.0;
            for i in 0..m {
                s += work.get(i, j) * work.get(i, k);
            }
            r.set(j, k, s);
            for i in 0..m {
                work.set(i, k, work.get(i, k) - s * work.get(i, j));
            }
            counters.record_flops(0, (2 * m) as u64, (2 * m) as u64, 0);
        }
    }
    Ok(ThinQR { q: work, r })
}

/// Unblocked Householder QR with the Q factor formed explicitly: the R
/// oracle against which the other algorithms are compared.
pub fn householder_reference(a: &DenseMatrix, counters: &mut CommCounters) -> Result<ThinQR> {
    let f = qr_unblocked(a, counters)?;
    let q = explicit_q(&f, counters)?;
    Ok(ThinQR { q, r: f.r() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{generate, generate_with_condition, GeneratorKind};

    fn orthonormal_input() -> DenseMatrix {
        generate_with_condition(32, 8, 1.0, 5).unwrap()
    }

    #[test]
    fn orthonormal_columns_give_identity_r() {
        let a = orthonormal_input();
        let mut c = CommCounters::new(1);
        match cholesky_qr(&a, &mut c).unwrap() {
            CholeskyQrOutcome::Factored(f) => {
                for j in 0..8 {
                    assert!((f.r.get(j, j) - 1.0).abs() <= 8.0 * 1e-14);
                }
                assert!(f.ortho_error() <= 1e-12);
            }
            CholeskyQrOutcome::Breakdown { .. } => panic!("unexpected breakdown"),
        }
        let mut c = CommCounters::new(1);
        let f = cgs(&a, &mut c).unwrap();
        assert!(f.ortho_error() <= 1e-12);
        let mut c = CommCounters::new(1);
        let f = mgs_right_looking(&a, &mut c).unwrap();
        assert!(f.ortho_error() <= 1e-12);
    }

    #[test]
    fn well_conditioned_r_matches_reference() {
        let a = generate(GeneratorKind::Uniform, 64, 8, 33).unwrap();
        let norm = fro_norm(&a);
        let mut c = CommCounters::new(1);
        let href = householder_reference(&a, &mut c).unwrap();
        assert!(href.residual(&a) <= 10.0 * 64.0 * 8.0 * f64::EPSILON * norm);

        let mut c = CommCounters::new(1);
        let f = mgs_right_looking(&a, &mut c).unwrap();
        for j in 0..8 {
            for i in 0..=j {
                assert!((f.r.get(i, j) - href.r.get(i, j)).abs() <= 1e-10 * norm);
            }
        }
        let mut c = CommCounters::new(1);
        let f = cgs(&a, &mut c).unwrap();
        for j in 0..8 {
            for i in 0..=j {
                assert!((f.r.get(i, j) - href.r.get(i, j)).abs() <= 1e-10 * norm);
            }
        }
        let mut c = CommCounters::new(1);
        if let CholeskyQrOutcome::Factored(f) = cholesky_qr(&a, &mut c).unwrap() {
            for j in 0..8 {
                for i in 0..=j {
                    assert!((f.r.get(i, j) - href.r.get(i, j)).abs() <= 1e-9 * norm);
                }
            }
        } else {
            panic!("well-conditioned CholeskyQR must not break down");
        }
    }

    #[test]
    fn cholesky_flop_count_near_model() {
        let (m, n) = (500usize, 50usize);
        let a = generate(GeneratorKind::Uniform, m, n, 3).unwrap();
        let mut c = CommCounters::new(1);
        cholesky_qr(&a, &mut c).unwrap();
        let model = 2.0 * (m * n * n) as f64 + (n * n * n) as f64 / 3.0;
        let measured = c.flops as f64;
        assert!(
            (measured - model).abs() <= 0.15 * model,
            "measured {} vs model {}",
            measured,
            model
        );
    }

    #[test]
    fn ill_conditioned_cholesky_degrades_or_breaks() {
        let a = generate_with_condition(500, 50, 1e8, 11).unwrap();
        let mut c = CommCounters::new(1);
        match cholesky_qr(&a, &mut c).unwrap() {
            CholeskyQrOutcome::Factored(f) => assert!(f.ortho_error() >= 1e-2),
            CholeskyQrOutcome::Breakdown { .. } => {}
        }
    }

    #[test]
    fn zero_column_reported_as_failure() {
        let mut a = generate(GeneratorKind::Uniform, 16, 4, 9).unwrap();
        for i in 0..16 {
            a.set(i, 2, 0.0);
        }
        let mut c = CommCounters::new(1);
        assert!(cgs(&a, &mut c).is_err());
        let mut c = CommCounters::new(1);
        assert!(mgs_right_looking(&a, &mut c).is_err());
    }
}
