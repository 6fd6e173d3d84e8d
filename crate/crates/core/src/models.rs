//! Closed-form performance models and communication/flop lower bounds.
//!
//! Every evaluator is pure and total on its stated domain, returning real
//! (not integer) counts so the formulas can be compared against measured
//! ledgers at any scale. All logarithms are base 2. Lower bounds are clipped
//! at zero where the formulas go negative on tiny inputs.

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Predicted flop/word/message counts of one algorithm configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: &'static str,
    pub flops: f64,
    pub words: f64,
    pub messages: f64,
    pub divisions: Option<f64>,
}

impl ModelReport {
    fn new(label: &'static str, flops: f64, words: f64, messages: f64) -> Self {
        ModelReport {
            label,
            flops,
            words,
            messages,
            divisions: None,
        }
    }

    /// Model-predicted time under the given machine parameters.
    pub fn predicted_time(&self, p: &crate::instrument::MachineParams) -> f64 {
        p.gamma * self.flops
            + p.gamma_d * self.divisions.unwrap_or(0.0)
            + p.beta * self.words
            + p.alpha * self.messages
    }
}

/// Block-size ansatz (Pr, Pc, b) = (K*sqrt(mP/n), sqrt(nP/m)/K, B*sqrt(mn/P)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningAnsatz {
    pub k: f64,
    pub b: f64,
}

fn log2(x: f64) -> f64 {
    x.log2()
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Precondition(msg.to_string()))
    }
}

// ---------------------------------------------------------------------------
// 1-D (tall-skinny) parallel models
// ---------------------------------------------------------------------------

/// Parallel TSQR on a binary tree over P processors, critical path counts.
pub fn model_par_tsqr(m: f64, n: f64, p: f64) -> Result<ModelReport> {
    check(m >= 1.0 && n >= 1.0 && p >= 1.0, "m, n, P >= 1")?;
    check(m / p >= n, "m/P >= n required")?;
    let lp = log2(p);
    Ok(ModelReport::new(
        "par-tsqr",
        2.0 * m * n * n / p + 2.0 / 3.0 * n * n * n * lp,
        0.5 * n * n * lp,
        lp,
    ))
}

/// Parallel Householder QR (ScaLAPACK PDGEQRF) in the same 1-D block row layout.
pub fn model_pdgeqrf_1d(m: f64, n: f64, p: f64) -> Result<ModelReport> {
    check(m / p >= n, "m/P >= n required")?;
    let lp = log2(p);
    Ok(ModelReport::new(
        "pdgeqrf-1d",
        2.0 * m * n * n / p - 2.0 * n * n * n / (3.0 * p),
        0.5 * n * n * lp,
        2.0 * n * lp,
    ))
}

/// Parallel right-looking modified Gram-Schmidt.
pub fn model_mgs_par(m: f64, n: f64, p: f64) -> Result<ModelReport> {
    check(m / p >= n, "m/P >= n required")?;
    let lp = log2(p);
    Ok(ModelReport::new(
        "mgs-par",
        2.0 * m * n * n / p,
        0.5 * n * n * lp,
        2.0 * n * lp,
    ))
}

/// Parallel left-looking classical Gram-Schmidt.
pub fn model_cgs_par(m: f64, n: f64, p: f64) -> Result<ModelReport> {
    let mut r = model_mgs_par(m, n, p)?;
    r.label = "cgs-par";
    Ok(r)
}

/// Parallel CholeskyQR.
pub fn model_choleskyqr_par(m: f64, n: f64, p: f64) -> Result<ModelReport> {
    check(m / p >= n, "m/P >= n required")?;
    let lp = log2(p);
    Ok(ModelReport::new(
        "cholqr-par",
        2.0 * m * n * n / p + n * n * n / 3.0,
        0.5 * n * n * lp,
        lp,
    ))
}

// ---------------------------------------------------------------------------
// 1-D (tall-skinny) sequential models; W is the fast memory size and
// W~ = W - n(n+1)/2.
// ---------------------------------------------------------------------------

fn w_tilde(n: f64, w: f64) -> f64 {
    w - n * (n + 1.0) / 2.0
}

/// Sequential TSQR on a flat tree.
pub fn model_seq_tsqr(m: f64, n: f64, w: f64) -> Result<ModelReport> {
    check(w >= 1.5 * n * n, "W >= (3/2) n^2 required")?;
    let wt = w_tilde(n, w);
    Ok(ModelReport::new(
        "seq-tsqr",
        2.0 * m * n * n - 2.0 / 3.0 * n * n * n,
        2.0 * m * n - n * (n + 1.0) / 2.0 + m * n * n / wt,
        2.0 * m * n / wt,
    ))
}

/// Blocked sequential Householder QR, leading terms (the m >> n summary row).
pub fn model_householder_seq(m: f64, n: f64, w: f64) -> Result<ModelReport> {
    check(w >= 2.0 * m, "W >= 2m required (two columns must fit)")?;
    Ok(ModelReport::new(
        "householder-seq",
        2.0 * m * n * n,
        m * m * n * n / (2.0 * w),
        m * n * n / (2.0 * w),
    ))
}

/// Left-looking out-of-core Householder QR (ScaLAPACK PFDGEQRF), full row.
pub fn model_pfdgeqrf(m: f64, n: f64, w: f64) -> Result<ModelReport> {
    check(w >= 2.0 * m, "W >= 2m required (two columns must fit)")?;
    Ok(ModelReport::new(
        "pfdgeqrf",
        2.0 * m * n * n - 2.0 / 3.0 * n * n * n,
        m * m * n * n / (2.0 * w) - m * n * n * n / (6.0 * w) + 1.5 * m * n - 0.75 * n * n,
        2.0 * m * n / w + m * n * n / (2.0 * w),
    ))
}

/// Sequential right-looking MGS.
pub fn model_mgs_seq(m: f64, n: f64, w: f64) -> Result<ModelReport> {
    check(w >= 1.5 * n * n, "W >= (3/2) n^2 required")?;
    let wt = w_tilde(n, w);
    Ok(ModelReport::new(
        "mgs-seq",
        2.0 * m * n * n,
        1.5 * m * n + m * m * n * n / (2.0 * wt),
        2.0 * m * n * n / wt,
    ))
}

/// Sequential CholeskyQR.
pub fn model_choleskyqr_seq(m: f64, n: f64, w: f64) -> Result<ModelReport> {
    check(w >= 1.0, "W >= 1")?;
    Ok(ModelReport::new(
        "cholqr-seq",
        2.0 * m * n * n + n * n * n / 3.0,
        3.0 * m * n,
        6.0 * m * n / w,
    ))
}

// ---------------------------------------------------------------------------
// 2-D models: block-cyclic Pr x Pc grid with b x b blocks. Counts along the
// critical path; "flops" excludes divisions, which are reported separately.
// ---------------------------------------------------------------------------

fn check_grid(m: f64, n: f64, b: f64, pr: f64, pc: f64) -> Result<()> {
    check(m >= n, "m >= n required")?;
    check(pr >= 1.0 && pc >= 1.0, "Pr, Pc >= 1")?;
    check(b >= 1.0, "b >= 1")?;
    check(b <= m / pr, "b <= m/Pr violated")?;
    check(b <= n / pc, "b <= n/Pc violated")
}

/// Parallel CAQR on a Pr x Pc block-cyclic grid.
pub fn model_par_caqr(m: f64, n: f64, b: f64, pr: f64, pc: f64) -> Result<ModelReport> {
    check_grid(m, n, b, pr, pc)?;
    let p = pr * pc;
    let (lpr, lpc) = (log2(pr), log2(pc));
    let messages = 3.0 * n / b * lpr + 2.0 * n / b * lpc;
    let words =
        (n * n / pc + b * n / 2.0) * lpr + ((m * n - n * n / 2.0) / pr + 2.0 * n) * lpc;
    let flops = 2.0 * n * n * (3.0 * m - n) / (3.0 * p)
        + b * n * n / (2.0 * pc)
        + 3.0 * b * n * (2.0 * m - n) / (2.0 * pr)
        + (4.0 * b * b * n / 3.0 + n * n * (3.0 * b + 5.0) / (2.0 * pc)) * lpr
        - b * b * n;
    let divisions = (m * n - n * n / 2.0) / pr + b * n / 2.0 * (lpr - 1.0);
    let mut r = ModelReport::new("par-caqr", flops, words, messages);
    r.divisions = Some(divisions);
    Ok(r)
}

/// ScaLAPACK PDGEQRF on the same 2-D grid.
pub fn model_pdgeqrf_2d(m: f64, n: f64, b: f64, pr: f64, pc: f64) -> Result<ModelReport> {
    check_grid(m, n, b, pr, pc)?;
    let p = pr * pc;
    let (lpr, lpc) = (log2(pr), log2(pc));
    let messages = 3.0 * n * lpr + 2.0 * n / b * lpc;
    let words = (n * n / pc + b * n) * lpr + ((m * n - n * n / 2.0) / pr + b * n / 2.0) * lpc;
    let flops = 2.0 * n * n * (3.0 * m - n) / (3.0 * p)
        + b * n * n / (2.0 * pc)
        + 3.0 * b * n * (2.0 * m - n) / (2.0 * pr)
        - b * b * n / (3.0 * pr);
    let divisions = (m * n - n * n / 2.0) / pr;
    let mut r = ModelReport::new("pdgeqrf-2d", flops, words, messages);
    r.divisions = Some(divisions);
    Ok(r)
}

/// Sequential CAQR on a Pr x Pc blocked layout (before optimizing the grid):
/// messages <= (3/2) P (Pc - 1), words <= (3/2) mn (Pc + 4/3) - n^2 Pc / 2.
pub fn model_seq_caqr(m: f64, n: f64, pr: f64, pc: f64) -> Result<ModelReport> {
    check(m >= n, "m >= n required")?;
    check(pr >= 1.0 && pc >= 1.0, "Pr, Pc >= 1")?;
    check(m / pr >= n / pc, "m/Pr >= n/Pc required")?;
    let p = pr * pc;
    Ok(ModelReport::new(
        "seq-caqr",
        2.0 * m * n * n - 2.0 / 3.0 * n * n * n,
        1.5 * m * n * (pc + 4.0 / 3.0) - 0.5 * n * n * pc,
        1.5 * p * (pc - 1.0),
    ))
}

/// Sequential CAQR with the optimal grid P = 4mn/W: words 3mn^2/sqrt(W),
/// messages 12 mn^2 / W^{3/2}.
pub fn model_seq_caqr_opt(m: f64, n: f64, w: f64) -> Result<ModelReport> {
    check(m >= n && w >= 1.0, "m >= n, W >= 1")?;
    Ok(ModelReport::new(
        "seq-caqr-opt",
        2.0 * m * n * n - 2.0 / 3.0 * n * n * n,
        3.0 * m * n * n / w.sqrt(),
        12.0 * m * n * n / w.powf(1.5),
    ))
}

/// Optimal 2-D grid for parallel CAQR: Pr = sqrt(mP/n), Pc = sqrt(nP/m),
/// b = sqrt(mn/P) * log2^{-2}(sqrt(mP/n)), i.e. the K = 1 ansatz with
/// B = log2^{-2}(sqrt(mP/n)), B capped at 1.
pub fn optimal_params_par_caqr(m: f64, n: f64, p: f64) -> Result<(f64, f64, f64, TuningAnsatz)> {
    check(m >= n && n >= 1.0, "m >= n >= 1")?;
    check(m * p >= n, "mP >= n so Pr >= 1")?;
    let pr = (m * p / n).sqrt();
    let pc = (n * p / m).sqrt();
    let log_arg = (m * p / n).sqrt();
    let l = log2(log_arg);
    let big_b = if l <= 1.0 { 1.0 } else { 1.0 / (l * l) };
    let b = big_b * (m * n / p).sqrt();
    Ok((b, pr, pc, TuningAnsatz { k: 1.0, b: big_b }))
}

/// Rounded feasible version of [`optimal_params_par_caqr`]: Pr picks the
/// divisor of P closest to the real optimum (in log space), b is clamped to
/// the grid constraints.
pub fn optimal_params_par_caqr_rounded(
    m: usize,
    n: usize,
    p: usize,
) -> Result<(usize, usize, usize)> {
    let (b_raw, pr_raw, _, _) = optimal_params_par_caqr(m as f64, n as f64, p as f64)?;
    let mut best: Option<(f64, usize)> = None;
    for d in (1..=p).filter(|d| p.is_multiple_of(*d)) {
        let dist = (d as f64 / pr_raw).ln().abs();
        if best.is_none_or(|(bd, _)| dist < bd) {
            best = Some((dist, d));
        }
    }
    let pr = best.unwrap().1;
    let pc = p / pr;
    let bmax = (m / pr).min(n / pc).max(1);
    let b = (b_raw.round() as usize).clamp(1, bmax);
    Ok((b, pr, pc))
}

/// Optimal sequential CAQR partitioning: P = 4mn/W, Pr = 2m/sqrt(W),
/// Pc = 2n/sqrt(W) (real-valued).
pub fn optimal_params_seq_caqr(m: f64, n: f64, w: f64) -> Result<(f64, f64, f64)> {
    check(w >= 1.0, "W >= 1")?;
    Ok((4.0 * m * n / w, 2.0 * m / w.sqrt(), 2.0 * n / w.sqrt()))
}

/// Rounded feasible version: ceilings, with P recomputed as Pr * Pc.
pub fn optimal_params_seq_caqr_rounded(m: usize, n: usize, w: usize) -> (usize, usize, usize) {
    let sw = (w as f64).sqrt();
    let pr = ((2.0 * m as f64 / sw).ceil() as usize).max(1);
    let pc = ((2.0 * n as f64 / sw).ceil() as usize).max(1);
    (pr * pc, pr, pc)
}

// ---------------------------------------------------------------------------
// Communication lower bounds. All are clipped at zero.
// ---------------------------------------------------------------------------

fn clip(x: f64) -> f64 {
    x.max(0.0)
}

/// Sequential square matmul lower bounds: words >= n^3/(2 sqrt(2) W^{1/2}) - W,
/// messages >= n^3/(2 sqrt(2) W^{3/2}) - 1.
pub fn lb_seq_matmul(n: f64, w: f64) -> (f64, f64) {
    let c = n * n * n / (2.0 * 2.0f64.sqrt());
    (clip(c / w.sqrt() - w), clip(c / w.powf(1.5) - 1.0))
}

/// Parallel 2-D matmul lower bounds with local memory mu * n^2 / P:
/// words >= n^2/(4 sqrt(2) (mu P)^{1/2}), messages >= P^{1/2}/(4 sqrt(2) mu^{3/2}).
pub fn lb_par_matmul_2d(n: f64, p: f64, mu: f64) -> (f64, f64) {
    let words = n * n / (4.0 * 2.0f64.sqrt() * (mu * p).sqrt());
    let messages = p.sqrt() / (4.0 * 2.0f64.sqrt() * mu.powf(1.5));
    (clip(words), clip(messages))
}

/// Rectangular parallel matmul lower bounds for C(n x m) = A(n x r) * B(r x m)
/// on P processors, with dimensions sorted so nbar >= mbar >= rbar. Requires
/// rbar >= sqrt(864 nbar mbar / P); flatter shapes are rejected.
pub fn lb_rect_matmul(m: f64, n: f64, r: f64, p: f64) -> Result<(f64, f64)> {
    let mut d = [m, n, r];
    d.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let (nbar, mbar, rbar) = (d[0], d[1], d[2]);
    if rbar < (864.0 * nbar * mbar / p).sqrt() {
        return Err(Error::TooRectangular);
    }
    let words = (nbar * mbar).sqrt() * rbar / (96.0 * p).sqrt();
    let messages = p.sqrt() * rbar / (864.0 * nbar * mbar).sqrt();
    Ok((clip(words), clip(messages)))
}

/// Sequential QR lower bounds:
/// words >= 3n^2(m - 4/3)/(16 sqrt(8W)) - W,
/// messages >= 3n^2(m - 4/3)/(16 sqrt(8W^3)) - 1.
pub fn lb_seq_qr(m: f64, n: f64, w: f64) -> (f64, f64) {
    let f = 3.0 * n * n * (m - 4.0 / 3.0) / 16.0;
    (
        clip(f / (8.0 * w).sqrt() - w),
        clip(f / (8.0 * w * w * w).sqrt() - 1.0),
    )
}

/// Parallel QR lower bounds with per-processor memory W: the sequential
/// bound divided by P.
pub fn lb_par_qr(m: f64, n: f64, p: f64, w: f64) -> (f64, f64) {
    let f = 3.0 * n * n * (m - 4.0 / 3.0) / 16.0;
    (
        clip(f / (p * (8.0 * w).sqrt()) - w),
        clip(f / (p * (8.0 * w * w * w).sqrt()) - 1.0),
    )
}

/// Parallel QR lower bounds in the W = mn/P regime with n >= 2^11 m / P:
/// words >= sqrt(mn^3/(2^11 P)), messages >= sqrt(nP/(2^11 m)).
pub fn lb_par_qr_special(m: f64, n: f64, p: f64) -> Result<(f64, f64)> {
    let c = 2048.0; // 2^11
    check(n >= c * m / p, "requires n >= 2^11 m / P")?;
    Ok(((m * n * n * n / (c * p)).sqrt(), (n * p / (c * m)).sqrt()))
}

/// Multiplication lower bound for computing column j+1 of R (1-based j):
/// m*j - j(j+1)/2.
pub fn lb_qr_flops_column(m: f64, j: f64) -> f64 {
    clip(m * j - j * (j + 1.0) / 2.0)
}

/// Aggregate multiplication lower bound over the right half of R:
/// mn^2/4 - (n^2/8)(n/2 + 1).
pub fn lb_qr_flops(m: f64, n: f64) -> Result<f64> {
    check(m >= n, "m >= n required")?;
    Ok(clip(m * n * n / 4.0 - n * n / 8.0 * (n / 2.0 + 1.0)))
}

/// Words that must cross each reduction-tree edge when combining n x n
/// R factors: n(n+1)/2.
pub fn lb_reduction_edge(n: u64) -> u64 {
    n * (n + 1) / 2
}

// ---------------------------------------------------------------------------
// Recursive QR (RGEQR3) recurrences, solved numerically with forcing
// constant 1.
// ---------------------------------------------------------------------------

/// Memory references B(m, n) of fully recursive QR:
/// B = B(m, n/2) + B(m - n/2, n/2) + mn^2/sqrt(W) while mn > W and n > 1;
/// base cases mn <= W -> mn, and n = 1 with m > W -> m.
pub fn model_rgeqr3(m: f64, n: f64, w: f64) -> Result<f64> {
    check(m >= n && n >= 1.0 && w >= 1.0, "m >= n >= 1, W >= 1")?;
    fn rec(m: f64, n: f64, w: f64) -> f64 {
        if m * n <= w {
            return m * n;
        }
        if n <= 1.0 {
            return m;
        }
        let h = (n / 2.0).ceil();
        rec(m, h, w) + rec(m - h, n - h, w) + m * n * n / w.sqrt()
    }
    Ok(rec(m, n, w))
}

/// Message recurrence of RGEQR3 applied to a single panel of sqrt(W)
/// columns: L = L(m, n/2) + L(m - n/2, n/2) + m/sqrt(W), base m/sqrt(W).
pub fn model_rgeqr3_latency_panel(m: f64, w: f64) -> Result<f64> {
    check(m >= 1.0 && w >= 1.0, "m, W >= 1")?;
    fn rec(m: f64, n: f64, w: f64) -> f64 {
        if n <= 1.0 {
            return m / w.sqrt();
        }
        let h = (n / 2.0).ceil();
        rec(m, h, w) + rec(m - h, n - h, w) + m / w.sqrt()
    }
    Ok(rec(m, w.sqrt().floor().max(1.0), w))
}

// ---------------------------------------------------------------------------
// Matmul-to-LU reduction identity.
// ---------------------------------------------------------------------------

/// Builds the 3n x 3n block matrix [[I, 0, -B], [A, I, 0], [0, 0, I]],
/// factors it with unpivoted LU, and reads A*B out of the upper factor.
/// Returns the extracted product and its Frobenius distance from the
/// triple-loop product.
pub fn gemm_via_lu_check(a: &DenseMatrix, b: &DenseMatrix) -> Result<(DenseMatrix, f64)> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n || b.cols() != n {
        return Err(Error::InvalidDimensions(
            "square conformal A and B required".into(),
        ));
    }
    let mut m = DenseMatrix::zeros(3 * n, 3 * n);
    for i in 0..3 * n {
        m.set(i, i, 1.0);
    }
    for j in 0..n {
        for i in 0..n {
            m.set(n + i, j, a.get(i, j)); // A block at (2,1)
            m.set(i, 2 * n + j, -b.get(i, j)); // -B block at (1,3)
        }
    }
    // unpivoted LU (the matrix is unit-lower-triangular-factorable by
    // construction)
    let dim = 3 * n;
    for k in 0..dim {
        let piv = m.get(k, k);
        for i in (k + 1)..dim {
            let l = m.get(i, k) / piv;
            if l != 0.0 {
                for j in (k + 1)..dim {
                    m.set(i, j, m.get(i, j) - l * m.get(k, j));
                }
            }
            m.set(i, k, l);
        }
    }
    // U's (2,3) block holds A*B
    let mut extracted = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            extracted.set(i, j, m.get(n + i, 2 * n + j));
        }
    }
    let direct = a.matmul(b)?;
    let resid = crate::dense::fro_norm(&extracted.sub(&direct)?);
    Ok((extracted, resid))
}
