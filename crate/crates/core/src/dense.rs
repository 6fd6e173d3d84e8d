//! Dense column-major matrix storage, deterministic generators, norms,
//! and the 2-D block-cyclic index map.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-major dense real matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            for j in 0..self.cols.min(8) {
                write!(f, " {:>12.5e}", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds from a column-major slice; the length must be rows*cols.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Builds from rows listed top to bottom (convenient in tests).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged row");
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i + j * self.rows] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Plain triple-loop product; also serves as the multiplication oracle in tests.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for k in 0..self.cols {
                let b = other.get(k, j);
                if b == 0.0 {
                    continue;
                }
                for i in 0..self.rows {
                    out.set(i, j, out.get(i, j) + self.get(i, k) * b);
                }
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a -= b;
        }
        Ok(out)
    }

    /// Copies the block with top-left corner (i0, j0) and shape rows x cols.
    pub fn submatrix(&self, i0: usize, j0: usize, rows: usize, cols: usize) -> DenseMatrix {
        assert!(i0 + rows <= self.rows && j0 + cols <= self.cols);
        let mut out = DenseMatrix::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                out.set(i, j, self.get(i0 + i, j0 + j));
            }
        }
        out
    }

    /// Gathers the listed rows (in order) over the column range [j0, j0+cols).
    pub fn gather_rows(&self, row_idx: &[usize], j0: usize, cols: usize) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(row_idx.len(), cols);
        for j in 0..cols {
            for (k, &r) in row_idx.iter().enumerate() {
                out.set(k, j, self.get(r, j0 + j));
            }
        }
        out
    }

    pub fn scatter_rows(&mut self, row_idx: &[usize], j0: usize, block: &DenseMatrix) {
        assert_eq!(block.rows(), row_idx.len());
        for j in 0..block.cols() {
            for (k, &r) in row_idx.iter().enumerate() {
                self.set(r, j0 + j, block.get(k, j));
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Frobenius norm.
pub fn fro_norm(a: &DenseMatrix) -> f64 {
    a.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest absolute entry.
pub fn max_abs(a: &DenseMatrix) -> f64 {
    a.data().iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Problem shape (m rows, n cols); TSQR paths require m >= n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemShape {
    pub m: usize,
    pub n: usize,
}

impl ProblemShape {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidDimensions(format!("{}x{}", m, n)));
        }
        Ok(ProblemShape { m, n })
    }
}

/// 2-D block-cyclic layout: a Pr x Pc processor grid with square b x b blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCyclicLayout {
    pub proc_rows: usize,
    pub proc_cols: usize,
    pub block: usize,
}

impl BlockCyclicLayout {
    pub fn new(proc_rows: usize, proc_cols: usize, block: usize) -> Result<Self> {
        if proc_rows == 0 || proc_cols == 0 || block == 0 {
            return Err(Error::LayoutConstraint(
                "Pr, Pc, b must all be at least 1".into(),
            ));
        }
        Ok(BlockCyclicLayout {
            proc_rows,
            proc_cols,
            block,
        })
    }

    pub fn procs(&self) -> usize {
        self.proc_rows * self.proc_cols
    }
}

/// Owner and local slot of global block (i, j) under the cyclic map.
///
/// Returns (proc_row, proc_col, local_i, local_j). The map is a bijection
/// between global blocks and (processor, local slot) pairs.
pub fn block_owner(
    i: usize,
    j: usize,
    layout: &BlockCyclicLayout,
) -> (usize, usize, usize, usize) {
    (
        i % layout.proc_rows,
        j % layout.proc_cols,
        i / layout.proc_rows,
        j / layout.proc_cols,
    )
}

/// Matrix generator kinds. `LaplaceLike` is a structured diagonally dominant
/// stencil matrix; the rest are self-explanatory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    Uniform,
    LaplaceLike,
    Identity,
    Zero,
}

/// SplitMix64: the fixed 64-bit generator used for all seeded data.
///
/// Reference constants from Steele, Lea, and Flood's SplitMix; chosen so the
/// byte streams are reproducible from the seed alone in any language.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform double in [-1, 1), from the top 53 bits.
    pub fn next_signed_unit(&mut self) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        2.0 * u - 1.0
    }
}

/// Deterministic matrix generator; identical bytes for identical
/// (kind, m, n, seed).
pub fn generate(kind: GeneratorKind, m: usize, n: usize, seed: u64) -> Result<DenseMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidDimensions(format!("{}x{}", m, n)));
    }
    let mut out = DenseMatrix::zeros(m, n);
    match kind {
        GeneratorKind::Zero => {}
        GeneratorKind::Identity => {
            for i in 0..m.min(n) {
                out.set(i, i, 1.0);
            }
        }
        GeneratorKind::Uniform => {
            let mut rng = SplitMix64::new(seed);
            // Column-major fill order is part of the determinism contract.
            for j in 0..n {
                for i in 0..m {
                    out.set(i, j, rng.next_signed_unit());
                }
            }
        }
        GeneratorKind::LaplaceLike => {
            // Banded second-difference stencil plus a small seeded perturbation,
            // scaled into [-1, 1].
            let mut rng = SplitMix64::new(seed);
            for j in 0..n {
                for i in 0..m {
                    let base = if i == j {
                        1.0
                    } else if i.abs_diff(j) == 1 {
                        -0.5
                    } else if i.abs_diff(j) == 2 {
                        0.25
                    } else {
                        0.0
                    };
                    out.set(i, j, base + 0.01 * rng.next_signed_unit());
                }
            }
        }
    }
    debug_assert!(out.all_finite());
    Ok(out)
}

/// Generates an m x n matrix whose 2-norm condition number is within a factor
/// of two of `kappa`, as Q1 * diag(sigma) * Q2^T with log-spaced singular
/// values from 1 down to 1/kappa.
pub fn generate_with_condition(m: usize, n: usize, kappa: f64, seed: u64) -> Result<DenseMatrix> {
    if m < n || n == 0 {
        return Err(Error::InvalidDimensions(format!("{}x{} needs m >= n >= 1", m, n)));
    }
    if kappa.is_nan() || kappa < 1.0 {
        return Err(Error::Precondition(format!("kappa {} < 1", kappa)));
    }
    let q1 = random_orthonormal(m, n, seed)?;
    let q2 = random_orthonormal(n, n, seed.wrapping_add(0x51ED270B))?;
    // sigma_k log-spaced in [1/kappa, 1]
    let mut out = DenseMatrix::zeros(m, n);
    for j in 0..n {
        let t = if n == 1 { 0.0 } else { j as f64 / (n - 1) as f64 };
        let sigma = kappa.powf(-t);
        for i in 0..m {
            // out += sigma_j * q1(:,j) * q2(:,j)^T, accumulated column by column
            for k in 0..n {
                out.set(i, k, out.get(i, k) + sigma * q1.get(i, j) * q2.get(k, j));
            }
        }
    }
    debug_assert!(out.all_finite());
    Ok(out)
}

/// Thin orthonormal factor of a seeded uniform matrix.
fn random_orthonormal(m: usize, n: usize, seed: u64) -> Result<DenseMatrix> {
    let a = generate(GeneratorKind::Uniform, m, n, seed)?;
    let mut counters = crate::instrument::CommCounters::new(1);
    let f = crate::householder::qr_unblocked(&a, &mut counters)?;
    crate::householder::explicit_q(&f, &mut counters)
}

/// Writes the text format: first line `m n`, then m lines of n reals at 17
/// significant digits.
pub fn write_matrix<W: Write>(w: &mut W, a: &DenseMatrix) -> Result<()> {
    writeln!(w, "{} {}", a.rows(), a.cols())?;
    for i in 0..a.rows() {
        let mut line = String::new();
        for j in 0..a.cols() {
            if j > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{:.16e}", a.get(i, j)));
        }
        writeln!(w, "{}", line)?;
    }
    Ok(())
}

/// Reads the text format written by [`write_matrix`].
pub fn read_matrix<R: BufRead>(r: &mut R) -> Result<DenseMatrix> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let mut it = header.split_whitespace();
    let rows: usize = it
        .next()
        .ok_or_else(|| Error::Parse("missing row count".into()))?
        .parse()
        .map_err(|e| Error::Parse(format!("row count: {}", e)))?;
    let cols: usize = it
        .next()
        .ok_or_else(|| Error::Parse("missing col count".into()))?
        .parse()
        .map_err(|e| Error::Parse(format!("col count: {}", e)))?;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidDimensions(format!("{}x{}", rows, cols)));
    }
    let mut out = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Parse(format!("unexpected EOF at row {}", i)));
        }
        let mut j = 0;
        for tok in line.split_whitespace() {
            if j >= cols {
                return Err(Error::Parse(format!("row {} has more than {} entries", i, cols)));
            }
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::Parse(format!("row {} col {}: {}", i, j, e)))?;
            out.set(i, j, v);
            j += 1;
        }
        if j != cols {
            return Err(Error::Parse(format!("row {} has {} of {} entries", i, j, cols)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_zero_generators() {
        let i3 = generate(GeneratorKind::Identity, 3, 3, 0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(i3.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        let z = generate(GeneratorKind::Zero, 2, 4, 0).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert_eq!(fro_norm(&z), 0.0);
        assert!((fro_norm(&i3) - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate(GeneratorKind::Uniform, 8, 3, 42).unwrap();
        let b = generate(GeneratorKind::Uniform, 8, 3, 42).unwrap();
        assert_eq!(a.data(), b.data());
        let c = generate(GeneratorKind::Uniform, 8, 3, 43).unwrap();
        assert_ne!(a.data(), c.data());
        assert!(a.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(generate(GeneratorKind::Uniform, 0, 3, 1).is_err());
        assert!(generate(GeneratorKind::Uniform, 3, 0, 1).is_err());
        assert!(generate_with_condition(3, 4, 10.0, 1).is_err());
        assert!(generate_with_condition(8, 3, 0.5, 1).is_err());
    }

    #[test]
    fn fro_norm_matches_independent_sum() {
        let a = generate(GeneratorKind::Uniform, 3, 2, 7).unwrap();
        // independent elementwise oracle
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..2 {
                s += a.get(i, j) * a.get(i, j);
            }
        }
        assert!((fro_norm(&a) - s.sqrt()).abs() <= 1e-15 * s.sqrt());
        assert!(max_abs(&a) <= 1.0);
    }

    #[test]
    fn block_owner_examples() {
        let l = BlockCyclicLayout::new(2, 2, 1).unwrap();
        assert_eq!(block_owner(0, 0, &l), (0, 0, 0, 0));
        // direct modular arithmetic: 5 mod 2 = 1, 3 mod 2 = 1, 5/2 = 2, 3/2 = 1
        assert_eq!(block_owner(5, 3, &l), (1, 1, 2, 1));
    }

    #[test]
    fn block_owner_bijection_exhaustive() {
        // every local slot hit exactly once, all grids Pr,Pc <= 4, blocks <= 8x8
        for pr in 1..=4usize {
            for pc in 1..=4usize {
                let layout = BlockCyclicLayout::new(pr, pc, 1).unwrap();
                for gi in 1..=8usize {
                    for gj in 1..=8usize {
                        let mut seen = std::collections::HashSet::new();
                        for i in 0..gi {
                            for j in 0..gj {
                                let slot = block_owner(i, j, &layout);
                                assert!(seen.insert(slot), "duplicate slot {:?}", slot);
                            }
                        }
                        assert_eq!(seen.len(), gi * gj);
                    }
                }
            }
        }
    }

    #[test]
    fn text_io_round_trips() {
        let a = generate(GeneratorKind::Uniform, 5, 3, 11).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &a).unwrap();
        let b = read_matrix(&mut &buf[..]).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
