//! Local QR kernels: unblocked Householder QR, compact block (Y, T)
//! representation, structured QR of stacked triangles, and application of
//! the implicit Q.
//!
//! All kernels share one structured elimination routine over a stack of row
//! segments, each tagged dense or upper triangular. Reflector j touches only
//! the rows that can be nonzero in column j of such a stack, so factoring two
//! stacked n x n triangles costs (2/3)n^3 + O(n^2) flops instead of the
//! (10/3)n^3 a dense 2n x n factorization would pay.
//!
//! Sign convention: beta = +||x||, so diag(R) >= 0 everywhere and R factors
//! of different algorithms can be compared entrywise.

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::instrument::CommCounters;

/// Shape of one row segment in a stacked factorization input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StackShape {
    Dense,
    UpperTriangular,
}

/// One row segment of the stacked input: `rows` consecutive rows of the
/// stack, dense or upper triangular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub rows: usize,
    pub shape: StackShape,
}

/// Structure tag carried by a factor, mirroring how it was built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorStructure {
    Dense,
    StackedTriangles { count: usize },
    Mixed,
}

/// Implicit QR factor: reflector vectors stored over the eliminated entries
/// (unit pivots implicit), their scaling factors tau, and the n x n upper
/// triangular R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholderFactor {
    /// Stack matrix after elimination: R on and above the diagonal of the
    /// leading rows, reflector entries in the eliminated positions.
    yr: DenseMatrix,
    tau: Vec<f64>,
    segments: Vec<Segment>,
    pub structure: FactorStructure,
}

impl HouseholderFactor {
    /// Stack height (total rows consumed by the factorization).
    pub fn stack_rows(&self) -> usize {
        self.yr.rows()
    }

    pub fn cols(&self) -> usize {
        self.yr.cols()
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// The n x n upper triangular R; entries below the diagonal are exactly zero.
    pub fn r(&self) -> DenseMatrix {
        let n = self.cols();
        let mut r = DenseMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j.min(n - 1) {
                r.set(i, j, self.yr.get(i, j));
            }
        }
        r
    }

    /// Reflector vector j over the full stack height (pivot entry 1).
    fn reflector_vec(&self, j: usize, pattern: &[usize]) -> Vec<(usize, f64)> {
        let mut v = Vec::with_capacity(pattern.len());
        v.push((pattern[0], 1.0));
        for &p in &pattern[1..] {
            v.push((p, self.yr.get(p, j)));
        }
        v
    }
}

/// Absolute stack rows touched by reflector `j`, pivot first.
fn pattern_rows(segments: &[Segment], j: usize) -> Vec<usize> {
    let mut rows = Vec::new();
    let mut base = 0usize;
    for (s, seg) in segments.iter().enumerate() {
        if s == 0 {
            match seg.shape {
                StackShape::Dense => {
                    for r in j..seg.rows {
                        rows.push(base + r);
                    }
                }
                StackShape::UpperTriangular => rows.push(base + j),
            }
        } else {
            match seg.shape {
                StackShape::Dense => {
                    for r in 0..seg.rows {
                        rows.push(base + r);
                    }
                }
                StackShape::UpperTriangular => {
                    for r in 0..=j.min(seg.rows.saturating_sub(1)) {
                        rows.push(base + r);
                    }
                }
            }
        }
        base += seg.rows;
    }
    rows
}

/// Householder reflector for x: (I - tau*v*v^T) x = (beta, 0, ..., 0)^T with
/// beta = +||x||_2 and v normalized so its first entry is 1. A zero x yields the identity
/// reflector (tau = 0, beta = 0).
pub fn reflector(x: &[f64]) -> (Vec<f64>, f64, f64) {
    assert!(!x.is_empty(), "reflector of empty vector");
    let x0 = x[0];
    let sigma: f64 = x[1..].iter().map(|v| v * v).sum();
    let mut v = vec![0.0; x.len()];
    v[0] = 1.0;
    if sigma == 0.0 {
        if x0 >= 0.0 {
            return (v, 0.0, x0);
        }
        // already reduced but negative: flip with a full reflection on e1
        return (v, 2.0, -x0);
    }
    let beta = (x0 * x0 + sigma).sqrt();
    let vraw = if x0 <= 0.0 { x0 - beta } else { -sigma / (x0 + beta) };
    let tau = -vraw / beta;
    for (vi, xi) in v[1..].iter_mut().zip(&x[1..]) {
        *vi = xi / vraw;
    }
    (v, tau, beta)
}

/// Structured QR over the given segments. `a` must have exactly the stacked
/// height and at most that many columns; the leading segment must have at
/// least `cols` rows so every pivot exists.
fn qr_structured(
    a: &DenseMatrix,
    segments: &[Segment],
    structure: FactorStructure,
    proc: usize,
    counters: &mut CommCounters,
) -> Result<HouseholderFactor> {
    let total: usize = segments.iter().map(|s| s.rows).sum();
    if total != a.rows() {
        return Err(Error::DimensionMismatch {
            expected: total,
            got: a.rows(),
        });
    }
    let n = a.cols();
    if segments[0].rows < n {
        return Err(Error::Underdetermined {
            rows: segments[0].rows,
            cols: n,
        });
    }
    let mut yr = a.clone();
    let mut tau = vec![0.0; n];
    for j in 0..n {
        let pat = pattern_rows(segments, j);
        let len = pat.len();
        let p0 = pat[0];
        let x0 = yr.get(p0, j);
        let mut sigma = 0.0;
        for &p in &pat[1..] {
            let v = yr.get(p, j);
            sigma += v * v;
        }
        counters.record_flops(proc, (len - 1) as u64, (len - 1) as u64, 0);

        let tj;
        if sigma == 0.0 {
            if x0 >= 0.0 {
                tj = 0.0;
            } else {
                tj = 2.0;
                yr.set(p0, j, -x0);
            }
        } else {
            let beta = (x0 * x0 + sigma).sqrt();
            counters.record_flops(proc, 1, 1, 0);
            let vraw;
            if x0 <= 0.0 {
                vraw = x0 - beta;
                counters.record_flops(proc, 0, 1, 0);
            } else {
                vraw = -sigma / (x0 + beta);
                counters.record_flops(proc, 0, 1, 1);
            }
            tj = -vraw / beta;
            counters.record_flops(proc, 0, 0, 1);
            for &p in &pat[1..] {
                yr.set(p, j, yr.get(p, j) / vraw);
            }
            counters.record_flops(proc, 0, 0, (len - 1) as u64);
            yr.set(p0, j, beta);
        }
        tau[j] = tj;
        if tj == 0.0 {
            continue;
        }
        for k in (j + 1)..n {
            let mut dot = yr.get(p0, k);
            for &p in &pat[1..] {
                dot += yr.get(p, j) * yr.get(p, k);
            }
            let w = tj * dot;
            yr.set(p0, k, yr.get(p0, k) - w);
            for &p in &pat[1..] {
                yr.set(p, k, yr.get(p, k) - w * yr.get(p, j));
            }
            counters.record_flops(proc, (2 * (len - 1) + 1) as u64, (2 * len - 1) as u64, 0);
        }
    }
    Ok(HouseholderFactor {
        yr,
        tau,
        segments: segments.to_vec(),
        structure,
    })
}

/// Unblocked Householder QR of a dense matrix with rows >= cols.
pub fn qr_unblocked(a: &DenseMatrix, counters: &mut CommCounters) -> Result<HouseholderFactor> {
    qr_unblocked_on(a, 0, counters)
}

/// Unblocked QR charging flops to virtual processor `proc`.
pub fn qr_unblocked_on(
    a: &DenseMatrix,
    proc: usize,
    counters: &mut CommCounters,
) -> Result<HouseholderFactor> {
    if a.rows() < a.cols() {
        return Err(Error::Underdetermined {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    qr_structured(
        a,
        &[Segment {
            rows: a.rows(),
            shape: StackShape::Dense,
        }],
        FactorStructure::Dense,
        proc,
        counters,
    )
}

/// QR of `q` stacked upper triangular n x n blocks, exploiting the zero
/// structure. Non-triangular input blocks are rejected.
pub fn qr_stacked_triangles(
    blocks: &[DenseMatrix],
    counters: &mut CommCounters,
) -> Result<HouseholderFactor> {
    qr_stacked_triangles_on(blocks, 0, counters)
}

pub fn qr_stacked_triangles_on(
    blocks: &[DenseMatrix],
    proc: usize,
    counters: &mut CommCounters,
) -> Result<HouseholderFactor> {
    if blocks.len() < 2 {
        return Err(Error::Precondition(
            "stacked-triangle QR needs at least 2 blocks".into(),
        ));
    }
    let n = blocks[0].cols();
    for (idx, b) in blocks.iter().enumerate() {
        if b.rows() != n || b.cols() != n {
            return Err(Error::InvalidDimensions(format!(
                "block {} is {}x{}, expected {}x{}",
                idx,
                b.rows(),
                b.cols(),
                n,
                n
            )));
        }
        for j in 0..n {
            for i in (j + 1)..n {
                if b.get(i, j) != 0.0 {
                    return Err(Error::NotTriangular { index: idx });
                }
            }
        }
    }
    let mut stack = DenseMatrix::zeros(n * blocks.len(), n);
    for (s, b) in blocks.iter().enumerate() {
        for j in 0..n {
            for i in 0..n {
                stack.set(s * n + i, j, b.get(i, j));
            }
        }
    }
    let segments: Vec<Segment> = blocks
        .iter()
        .map(|_| Segment {
            rows: n,
            shape: StackShape::UpperTriangular,
        })
        .collect();
    qr_structured(
        &stack,
        &segments,
        FactorStructure::StackedTriangles { count: blocks.len() },
        proc,
        counters,
    )
}

/// QR of [R; A] where R is n x n upper triangular and A is a dense block
/// with at least one row: the combine step of flat-tree sequential TSQR.
pub fn qr_triangle_on_top(
    r_top: &DenseMatrix,
    a_block: &DenseMatrix,
    proc: usize,
    counters: &mut CommCounters,
) -> Result<HouseholderFactor> {
    let n = r_top.cols();
    if r_top.rows() != n {
        return Err(Error::InvalidDimensions("R block must be square".into()));
    }
    if a_block.cols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a_block.cols(),
        });
    }
    let mut stack = DenseMatrix::zeros(n + a_block.rows(), n);
    for j in 0..n {
        for i in 0..=j {
            stack.set(i, j, r_top.get(i, j));
        }
        for i in 0..a_block.rows() {
            stack.set(n + i, j, a_block.get(i, j));
        }
    }
    qr_structured(
        &stack,
        &[
            Segment {
                rows: n,
                shape: StackShape::UpperTriangular,
            },
            Segment {
                rows: a_block.rows(),
                shape: StackShape::Dense,
            },
        ],
        FactorStructure::Mixed,
        proc,
        counters,
    )
}

/// Blocked QR in the compact (Y, T) form: per panel of width `b`, reflectors
/// are coalesced as Q_panel = I + Y T Y^T with T upper triangular (diagonal
/// -tau). Returns the factor plus the per-panel T blocks.
pub fn qr_blocked(
    a: &DenseMatrix,
    b: usize,
    counters: &mut CommCounters,
) -> Result<(HouseholderFactor, Vec<DenseMatrix>)> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(Error::Underdetermined { rows: m, cols: n });
    }
    if b == 0 || b > n {
        return Err(Error::Precondition(format!("block width {} not in 1..={}", b, n)));
    }
    let mut work = a.clone();
    let mut tau = vec![0.0; n];
    let mut t_blocks = Vec::new();
    let mut p = 0;
    while p < n {
        let w = b.min(n - p);
        let panel = work.submatrix(p, p, m - p, w);
        let pf = qr_structured(
            &panel,
            &[Segment {
                rows: m - p,
                shape: StackShape::Dense,
            }],
            FactorStructure::Dense,
            0,
            counters,
        )?;
        // write the factored panel back
        for (j, &t) in pf.tau.iter().enumerate() {
            for i in 0..(m - p) {
                work.set(p + i, p + j, pf.yr.get(i, j));
            }
            tau[p + j] = t;
        }
        let t = build_t(&pf, counters);
        // trailing update: C := C + Y * (T^T * (Y^T * C))
        if p + w < n {
            let y = materialize_y(&pf);
            let c = work.submatrix(p, p + w, m - p, n - p - w);
            let ytc = matmul_at_b(&y, &c, counters); // Y^T C
            let ttytc = matmul_at_b(&t, &ytc, counters); // T^T (Y^T C)
            let delta = matmul_counted(&y, &ttytc, counters); // Y (...)
            for j in 0..c.cols() {
                for i in 0..c.rows() {
                    work.set(p + i, p + w + j, c.get(i, j) + delta.get(i, j));
                }
            }
            counters.record_flops(0, 0, (c.rows() * c.cols()) as u64, 0);
        }
        t_blocks.push(t);
        p += w;
    }
    let factor = HouseholderFactor {
        yr: work,
        tau,
        segments: vec![Segment {
            rows: m,
            shape: StackShape::Dense,
        }],
        structure: FactorStructure::Dense,
    };
    Ok((factor, t_blocks))
}

/// T factor of a panel per the scaled Schreiber-Van Loan recurrence:
/// T starts as [-tau_1] and grows with z = -tau_j * (T (Y^T v_j)).
pub fn build_t(panel: &HouseholderFactor, counters: &mut CommCounters) -> DenseMatrix {
    let w = panel.cols();
    let rows = panel.stack_rows();
    let mut t = DenseMatrix::zeros(w, w);
    t.set(0, 0, -panel.tau[0]);
    for j in 1..w {
        // u = Y(:, 0..j)^T * v_j over the panel stack
        let mut u = vec![0.0; j];
        for (col, item) in u.iter_mut().enumerate().take(j) {
            let mut s = 0.0;
            for i in 0..rows {
                let yi = y_entry(panel, i, col);
                let vj = y_entry(panel, i, j);
                s += yi * vj;
            }
            *item = s;
        }
        counters.record_flops(0, (j * rows) as u64, (j * rows) as u64, 0);
        // z = -tau_j * (T * u)
        for row in 0..j {
            let mut s = 0.0;
            for k in row..j {
                s += t.get(row, k) * u[k];
            }
            t.set(row, j, -panel.tau[j] * s);
        }
        counters.record_flops(0, (j * j / 2 + j) as u64, (j * j / 2) as u64, 0);
        t.set(j, j, -panel.tau[j]);
    }
    t
}

/// Y entry including the implicit unit diagonal and pattern zeros.
fn y_entry(f: &HouseholderFactor, i: usize, j: usize) -> f64 {
    // dense single-segment factors (panels) take the unit-lower-trapezoid
    // fast path
    if f.segments.len() == 1 && f.segments[0].shape == StackShape::Dense {
        return match i.cmp(&j) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Greater => f.yr.get(i, j),
        };
    }
    let pat = pattern_rows(&f.segments, j);
    if i == pat[0] {
        return 1.0;
    }
    if pat[1..].contains(&i) {
        return f.yr.get(i, j);
    }
    0.0
}

/// Materializes the unit-diagonal Y of a dense-panel factor.
fn materialize_y(f: &HouseholderFactor) -> DenseMatrix {
    let rows = f.stack_rows();
    let n = f.cols();
    let mut y = DenseMatrix::zeros(rows, n);
    for j in 0..n {
        y.set(j, j, 1.0);
        for i in (j + 1)..rows {
            y.set(i, j, f.yr.get(i, j));
        }
    }
    y
}

fn matmul_counted(a: &DenseMatrix, b: &DenseMatrix, counters: &mut CommCounters) -> DenseMatrix {
    let out = a.matmul(b).expect("conformal");
    let ops = (a.rows() * a.cols() * b.cols()) as u64;
    counters.record_flops(0, ops, ops, 0);
    out
}

/// A^T * B with flop counting.
fn matmul_at_b(a: &DenseMatrix, b: &DenseMatrix, counters: &mut CommCounters) -> DenseMatrix {
    let at = a.transpose();
    matmul_counted(&at, b, counters)
}

/// Applies Q^T to C in place semantics (returns the product). C must have as
/// many rows as the factor's stack.
pub fn apply_qt(
    f: &HouseholderFactor,
    c: &DenseMatrix,
    counters: &mut CommCounters,
) -> Result<DenseMatrix> {
    apply_reflectors(f, c, true, 0, counters)
}

/// Applies Q to C.
pub fn apply_q(
    f: &HouseholderFactor,
    c: &DenseMatrix,
    counters: &mut CommCounters,
) -> Result<DenseMatrix> {
    apply_reflectors(f, c, false, 0, counters)
}

pub fn apply_qt_on(
    f: &HouseholderFactor,
    c: &DenseMatrix,
    proc: usize,
    counters: &mut CommCounters,
) -> Result<DenseMatrix> {
    apply_reflectors(f, c, true, proc, counters)
}

pub fn apply_q_on(
    f: &HouseholderFactor,
    c: &DenseMatrix,
    proc: usize,
    counters: &mut CommCounters,
) -> Result<DenseMatrix> {
    apply_reflectors(f, c, false, proc, counters)
}

fn apply_reflectors(
    f: &HouseholderFactor,
    c: &DenseMatrix,
    transpose: bool,
    proc: usize,
    counters: &mut CommCounters,
) -> Result<DenseMatrix> {
    if c.rows() != f.stack_rows() {
        return Err(Error::DimensionMismatch {
            expected: f.stack_rows(),
            got: c.rows(),
        });
    }
    let n = f.cols();
    let mut out = c.clone();
    let order: Vec<usize> = if transpose {
        (0..n).collect()
    } else {
        (0..n).rev().collect()
    };
    for j in order {
        let tj = f.tau[j];
        if tj == 0.0 {
            continue;
        }
        let pat = pattern_rows(&f.segments, j);
        let v = f.reflector_vec(j, &pat);
        let len = v.len();
        for k in 0..out.cols() {
            let mut dot = 0.0;
            for &(p, vi) in &v {
                dot += vi * out.get(p, k);
            }
            let w = tj * dot;
            for &(p, vi) in &v {
                out.set(p, k, out.get(p, k) - w * vi);
            }
            counters.record_flops(proc, (2 * len + 1) as u64, (2 * len) as u64, 0);
        }
    }
    Ok(out)
}

/// Explicit thin Q (stack_rows x n), by applying Q to identity columns.
pub fn explicit_q(f: &HouseholderFactor, counters: &mut CommCounters) -> Result<DenseMatrix> {
    let rows = f.stack_rows();
    let n = f.cols();
    let mut id = DenseMatrix::zeros(rows, n);
    for j in 0..n {
        id.set(j, j, 1.0);
    }
    apply_q(f, &id, counters)
}
