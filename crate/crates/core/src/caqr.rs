//! CAQR: right-looking QR of general rectangular matrices, with TSQR panel
//! factorizations.
//!
//! The parallel driver simulates a Pr x Pc processor grid over a 2-D
//! block-cyclic layout with b x b blocks; the sequential driver streams
//! square tiles through a fast memory of W words, keeping at most three
//! block payloads plus the running panel factor resident.
//!
//! Dimensions that do not divide the block grid are padded with zero rows
//! and columns; padded entries produce tau = 0 reflectors, are excluded
//! from residual norms, and block-transfer ledgers count only the unpadded
//! payload intersection of each tile.

use serde::{Deserialize, Serialize};

use crate::dense::{BlockCyclicLayout, DenseMatrix};
use crate::error::{Error, Result};
use crate::householder::{apply_qt_on, qr_stacked_triangles_on, qr_triangle_on_top, qr_unblocked_on};
use crate::instrument::{CommCounters, FastMemGauge};
use crate::tsqr::{build_tree, QrStage, ReductionTree, TreeQRFactor, TreeShape};

/// Layout descriptor attached to a finished factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CaqrLayout {
    Parallel(BlockCyclicLayout),
    Sequential { fast_mem: usize, tile: usize, tile_rows: usize, tile_cols: usize },
}

/// Ordered panel factors plus the final R.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaqrFactor {
    pub m: usize,
    pub n: usize,
    pub padded_m: usize,
    pub padded_n: usize,
    /// per panel: all local QR stages, rows indexed in the padded matrix
    pub panels: Vec<Vec<QrStage>>,
    /// n x n upper triangular R with nonnegative diagonal
    pub r: DenseMatrix,
    pub layout: CaqrLayout,
}

impl CaqrFactor {
    /// Applies the full Q^T (all panel factors in order) to C with m rows.
    pub fn apply_qt(&self, c: &DenseMatrix, counters: &mut CommCounters) -> Result<DenseMatrix> {
        if c.rows() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: c.rows(),
            });
        }
        let mut work = DenseMatrix::zeros(self.padded_m, c.cols());
        for j in 0..c.cols() {
            for i in 0..self.m {
                work.set(i, j, c.get(i, j));
            }
        }
        for panel in &self.panels {
            for stage in panel {
                let sub = work.gather_rows(&stage.rows, 0, work.cols());
                let upd = apply_qt_on(&stage.factor, &sub, stage.proc, counters)?;
                work.scatter_rows(&stage.rows, 0, &upd);
            }
        }
        Ok(work.submatrix(0, 0, self.m, c.cols()))
    }

    /// Applies Q to C with m rows.
    pub fn apply_q(&self, c: &DenseMatrix, counters: &mut CommCounters) -> Result<DenseMatrix> {
        if c.rows() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: c.rows(),
            });
        }
        let mut work = DenseMatrix::zeros(self.padded_m, c.cols());
        for j in 0..c.cols() {
            for i in 0..self.m {
                work.set(i, j, c.get(i, j));
            }
        }
        for panel in self.panels.iter().rev() {
            for stage in panel.iter().rev() {
                let sub = work.gather_rows(&stage.rows, 0, work.cols());
                let upd =
                    crate::householder::apply_q_on(&stage.factor, &sub, stage.proc, counters)?;
                work.scatter_rows(&stage.rows, 0, &upd);
            }
        }
        Ok(work.submatrix(0, 0, self.m, c.cols()))
    }

    /// Explicit thin m x n Q.
    pub fn explicit_q(&self, counters: &mut CommCounters) -> Result<DenseMatrix> {
        let mut e = DenseMatrix::zeros(self.m, self.n);
        for j in 0..self.n.min(self.m) {
            e.set(j, j, 1.0);
        }
        self.apply_q(&e, counters)
    }
}

fn round_up(x: usize, to: usize) -> usize {
    x.div_ceil(to) * to
}

fn ceil_log2(x: usize) -> u64 {
    let mut l = 0u64;
    let mut v = 1usize;
    while v < x {
        v *= 2;
        l += 1;
    }
    l
}

/// Words of a tile intersected with the real (unpadded) extent.
fn clipped_words(row0: usize, col0: usize, rows: usize, cols: usize, m: usize, n: usize) -> usize {
    let r = (row0 + rows).min(m).saturating_sub(row0);
    let c = (col0 + cols).min(n).saturating_sub(col0);
    r * c
}

/// Processor-grid topology of one trailing update.
#[derive(Debug, Clone)]
pub struct UpdateTopology {
    pub proc_rows: usize,
    pub proc_cols: usize,
    /// proc row owning each local panel row
    pub row_proc: Vec<usize>,
    /// proc column owning each trailing column
    pub col_proc: Vec<usize>,
    /// grid column holding the panel (source of Y broadcasts)
    pub panel_proc_col: usize,
}

impl UpdateTopology {
    fn proc_id(&self, row: usize, col: usize) -> usize {
        row * self.proc_cols + col
    }
}

/// Applies a panel factor's Q^T to the trailing columns, with the CAQR
/// communication pattern: leaf Householder vectors broadcast along processor
/// rows, then one pairwise exchange of b rows per reduction level, per
/// processor column. Equals the dense apply restricted to the trailing
/// columns.
pub fn trailing_update(
    panel: &TreeQRFactor,
    trailing: &mut DenseMatrix,
    topo: &UpdateTopology,
    counters: &mut CommCounters,
) -> Result<()> {
    if trailing.cols() == 0 {
        return Ok(());
    }
    if trailing.rows() != panel.m {
        return Err(Error::DimensionMismatch {
            expected: panel.m,
            got: trailing.rows(),
        });
    }
    let b = panel.n;
    let cols_of: Vec<Vec<usize>> = (0..topo.proc_cols)
        .map(|q| {
            (0..trailing.cols())
                .filter(|&c| topo.col_proc[c] == q)
                .collect()
        })
        .collect();
    let max_local_cols = cols_of.iter().map(|c| c.len()).max().unwrap_or(0) as u64;
    let leaf_count = panel.tree.leaf_count;
    let log_pc = ceil_log2(topo.proc_cols);

    // Broadcast of the leaf Y factors along processor rows (concurrent
    // across rows; the critical path pays for the largest one).
    if topo.proc_cols > 1 {
        let mut max_payload = 0u64;
        for stage in panel.stages.iter().take(leaf_count) {
            let payload = crate::tsqr::factor_storage_words(&stage.factor) as u64;
            max_payload = max_payload.max(payload);
            let owner_row = topo.row_proc[local_row_of(panel, stage)];
            binomial_broadcast(owner_row, topo, payload, counters);
        }
        counters.record_critical_path_comm(log_pc, max_payload * log_pc);
        // second wave: each reduction-level Y triangle and tau reach the
        // child row's processors; broadcasts for different levels overlap,
        // so one wave covers them
        if panel.tree.height() > 0 {
            let payload = (b * (b + 1) / 2 + b) as u64;
            for stage in panel.stages.iter().skip(leaf_count) {
                for child in 1..stage.factor.segments().len() {
                    let child_row = topo.row_proc[stage.rows[child * b]];
                    binomial_broadcast(child_row, topo, payload, counters);
                }
            }
            counters.record_critical_path_comm(log_pc, payload * log_pc);
        }
    }

    // Leaf updates: embarrassingly parallel across the whole grid, so the
    // critical path takes the single largest per-processor share.
    let mut max_flops = 0u64;
    for stage in panel.stages.iter().take(leaf_count) {
        let owner_row = topo.row_proc[local_row_of(panel, stage)];
        for (q, cols) in cols_of.iter().enumerate() {
            if cols.is_empty() {
                continue;
            }
            let mut local = CommCounters::new(1);
            apply_stage_to_cols(stage, trailing, cols, &mut local)?;
            counters.absorb_local(topo.proc_id(owner_row, q), &local);
            max_flops = max_flops.max(local.flops);
        }
    }
    counters.record_critical_path_flops(max_flops, 0);

    // Reduction levels: per child, the pair exchanges exactly b rows of the
    // local trailing columns, both directions. Merges at the same level run
    // on disjoint processor pairs, so the critical path takes the level max.
    let mut stage_idx = leaf_count;
    for level in &panel.tree.merge_levels {
        let mut level_max_flops = 0u64;
        let mut level_max_edges = 0u64;
        for _ in level {
            let stage = &panel.stages[stage_idx];
            stage_idx += 1;
            let top_row = topo.row_proc[local_row_of(panel, stage)];
            let branches = stage.factor.segments().len();
            let mut max_stage_flops = 0u64;
            for (q, cols) in cols_of.iter().enumerate() {
                if cols.is_empty() {
                    continue;
                }
                let words = (b * cols.len()) as u64;
                for child in 1..branches {
                    let child_row = topo.row_proc[stage.rows[child * b]];
                    counters.record_message(
                        topo.proc_id(top_row, q),
                        topo.proc_id(child_row, q),
                        words,
                    );
                    counters.record_message(
                        topo.proc_id(child_row, q),
                        topo.proc_id(top_row, q),
                        words,
                    );
                }
                let mut local = CommCounters::new(1);
                apply_stage_to_cols(stage, trailing, cols, &mut local)?;
                let charge_row = topo.row_proc[stage.rows[(branches - 1) * b]];
                counters.absorb_local(topo.proc_id(charge_row, q), &local);
                max_stage_flops = max_stage_flops.max(local.flops);
            }
            level_max_edges = level_max_edges.max((branches - 1) as u64);
            level_max_flops = level_max_flops.max(max_stage_flops);
        }
        counters.record_critical_path_comm(
            2 * level_max_edges,
            2 * level_max_edges * b as u64 * max_local_cols,
        );
        counters.record_critical_path_flops(level_max_flops, 0);
    }
    Ok(())
}

fn local_row_of(_panel: &TreeQRFactor, stage: &QrStage) -> usize {
    stage.rows[0]
}

fn apply_stage_to_cols(
    stage: &QrStage,
    trailing: &mut DenseMatrix,
    cols: &[usize],
    counters: &mut CommCounters,
) -> Result<()> {
    let mut sub = DenseMatrix::zeros(stage.rows.len(), cols.len());
    for (jj, &c) in cols.iter().enumerate() {
        for (ii, &r) in stage.rows.iter().enumerate() {
            sub.set(ii, jj, trailing.get(r, c));
        }
    }
    let upd = apply_qt_on(&stage.factor, &sub, 0, counters)?;
    for (jj, &c) in cols.iter().enumerate() {
        for (ii, &r) in stage.rows.iter().enumerate() {
            trailing.set(r, c, upd.get(ii, jj));
        }
    }
    Ok(())
}

fn binomial_broadcast(row: usize, topo: &UpdateTopology, payload: u64, counters: &mut CommCounters) {
    // source is the panel's processor column; spread to the other columns
    let mut have: Vec<usize> = vec![topo.panel_proc_col];
    let mut todo: Vec<usize> = (0..topo.proc_cols)
        .filter(|&q| q != topo.panel_proc_col)
        .collect();
    while !todo.is_empty() {
        let senders = have.clone();
        for s in senders {
            if let Some(t) = todo.pop() {
                counters.record_message(topo.proc_id(row, s), topo.proc_id(row, t), payload);
                have.push(t);
            }
        }
    }
}

/// Parallel CAQR over a block-cyclic grid (deterministic simulation).
pub fn caqr_parallel_factor(
    a: &DenseMatrix,
    layout: &BlockCyclicLayout,
    counters: &mut CommCounters,
) -> Result<CaqrFactor> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(Error::Underdetermined { rows: m, cols: n });
    }
    let b = layout.block;
    let (pr, pc) = (layout.proc_rows, layout.proc_cols);
    if b == 0 || pr == 0 || pc == 0 {
        return Err(Error::LayoutConstraint("Pr, Pc, b must be >= 1".into()));
    }
    if b > n {
        return Err(Error::LayoutConstraint(format!(
            "block side {} exceeds the column count {}",
            b, n
        )));
    }
    let n_pad = round_up(n, b * pc);
    let m_pad = round_up(m, b * pr).max(n_pad);
    let mut work = DenseMatrix::zeros(m_pad, n_pad);
    for j in 0..n {
        for i in 0..m {
            work.set(i, j, a.get(i, j));
        }
    }

    let panels_count = n_pad / b;
    let mut panels = Vec::with_capacity(panels_count);
    for jp in 0..panels_count {
        let col0 = jp * b;
        let row0 = jp * b;
        let panel_proc_col = (col0 / b) % pc;
        // gather per-processor-row local panel rows, starting at the
        // diagonal block's owner so the final R lands on the diagonal
        let diag_owner = (row0 / b) % pr;
        let mut leaf_rows: Vec<(usize, Vec<usize>)> = Vec::new();
        for k in 0..pr {
            let p = (diag_owner + k) % pr;
            let rows: Vec<usize> = (row0..m_pad)
                .filter(|r| (r / b) % pr == p)
                .collect();
            if !rows.is_empty() {
                leaf_rows.push((p, rows));
            }
        }
        let tree = build_tree(leaf_rows.len(), TreeShape::Binary)?;
        let panel_factor = panel_tsqr(
            &work, col0, b, &leaf_rows, &tree, pc, panel_proc_col, counters,
        )?;
        // write the panel R back onto the diagonal block
        for j in 0..b {
            for i in 0..=j {
                work.set(row0 + i, col0 + j, panel_factor.r.get(i, j));
            }
            for i in (j + 1)..b {
                work.set(row0 + i, col0 + j, 0.0);
            }
        }

        // trailing update
        let trailing_cols: Vec<usize> = ((col0 + b)..n_pad).collect();
        if !trailing_cols.is_empty() {
            // local-row indexing for the panel factor
            let local_of: std::collections::HashMap<usize, usize> = panel_row_map(&leaf_rows);
            let mut local_panel = relabel_stages(&panel_factor, &local_of);
            let panel_rows: Vec<usize> = {
                let mut v: Vec<usize> = local_of.keys().copied().collect();
                v.sort_by_key(|r| local_of[r]);
                v
            };
            let mut trailing = DenseMatrix::zeros(panel_rows.len(), trailing_cols.len());
            for (jj, &c) in trailing_cols.iter().enumerate() {
                for (ii, &r) in panel_rows.iter().enumerate() {
                    trailing.set(ii, jj, work.get(r, c));
                }
            }
            let topo = UpdateTopology {
                proc_rows: pr,
                proc_cols: pc,
                row_proc: panel_rows.iter().map(|&r| (r / b) % pr).collect(),
                col_proc: trailing_cols.iter().map(|&c| (c / b) % pc).collect(),
                panel_proc_col,
            };
            trailing_update(&local_panel, &mut trailing, &topo, counters)?;
            for (jj, &c) in trailing_cols.iter().enumerate() {
                for (ii, &r) in panel_rows.iter().enumerate() {
                    work.set(r, c, trailing.get(ii, jj));
                }
            }
            // store back with global row labels for the factor record
            relabel_stages_to_global(&mut local_panel, &panel_rows);
            panels.push(local_panel.stages);
        } else {
            panels.push(panel_factor.stages);
        }
    }

    let mut r = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            r.set(i, j, work.get(i, j));
        }
    }
    Ok(CaqrFactor {
        m,
        n,
        padded_m: m_pad,
        padded_n: n_pad,
        panels,
        r,
        layout: CaqrLayout::Parallel(*layout),
    })
}

fn panel_row_map(leaf_rows: &[(usize, Vec<usize>)]) -> std::collections::HashMap<usize, usize> {
    let mut map = std::collections::HashMap::new();
    let mut next = 0usize;
    for (_, rows) in leaf_rows {
        for &r in rows {
            map.insert(r, next);
            next += 1;
        }
    }
    map
}

fn relabel_stages(
    f: &TreeQRFactor,
    local_of: &std::collections::HashMap<usize, usize>,
) -> TreeQRFactor {
    let mut out = f.clone();
    out.m = local_of.len();
    for s in &mut out.stages {
        for r in &mut s.rows {
            *r = local_of[r];
        }
    }
    out
}

fn relabel_stages_to_global(f: &mut TreeQRFactor, panel_rows: &[usize]) {
    for s in &mut f.stages {
        for r in &mut s.rows {
            *r = panel_rows[*r];
        }
    }
}

/// TSQR over one panel: leaves are the processors' gathered cyclic rows.
#[allow(clippy::too_many_arguments)]
fn panel_tsqr(
    work: &DenseMatrix,
    col0: usize,
    b: usize,
    leaf_rows: &[(usize, Vec<usize>)],
    tree: &ReductionTree,
    pc: usize,
    panel_proc_col: usize,
    counters: &mut CommCounters,
) -> Result<TreeQRFactor> {
    let payload = (b * (b + 1) / 2) as u64;
    let proc_id = |row: usize| row * pc + panel_proc_col;

    let mut stages = Vec::new();
    let mut node_r: Vec<Option<(DenseMatrix, usize, Vec<usize>)>> = vec![None; tree.nodes.len()];
    let mut max_flops = 0u64;
    let mut max_divs = 0u64;
    for (leaf_id, (p, rows)) in leaf_rows.iter().enumerate() {
        let block = work.gather_rows(rows, col0, b);
        let mut local = CommCounters::new(1);
        let f = qr_unblocked_on(&block, 0, &mut local)?;
        counters.absorb_local(proc_id(*p), &local);
        max_flops = max_flops.max(local.flops);
        max_divs = max_divs.max(local.divisions);
        node_r[leaf_id] = Some((f.r(), *p, rows[..b].to_vec()));
        stages.push(QrStage {
            rows: rows.clone(),
            factor: f,
            proc: proc_id(*p),
        });
    }
    counters.record_critical_path_flops(max_flops, max_divs);

    for level in &tree.merge_levels {
        let mut max_flops = 0u64;
        let mut max_divs = 0u64;
        let mut max_edges = 0u64;
        for &node_id in level {
            let children = &tree.nodes[node_id].children;
            let parent_row = node_r[children[0]].as_ref().unwrap().1;
            let mut tris = Vec::new();
            let mut rows = Vec::new();
            for &c in children {
                let (tri, owner, r_rows) = node_r[c].as_ref().unwrap();
                if *owner != parent_row {
                    counters.record_message(proc_id(*owner), proc_id(parent_row), payload);
                }
                tris.push(tri.clone());
                rows.extend_from_slice(r_rows);
            }
            max_edges = max_edges.max(children.len() as u64 - 1);
            let mut local = CommCounters::new(1);
            let f = qr_stacked_triangles_on(&tris, 0, &mut local)?;
            counters.absorb_local(proc_id(parent_row), &local);
            max_flops = max_flops.max(local.flops);
            max_divs = max_divs.max(local.divisions);
            let r_rows = rows[..b].to_vec();
            node_r[node_id] = Some((f.r(), parent_row, r_rows));
            stages.push(QrStage {
                rows,
                factor: f,
                proc: proc_id(parent_row),
            });
        }
        counters.record_critical_path_comm(max_edges, max_edges * payload);
        counters.record_critical_path_flops(max_flops, max_divs);
    }

    let r = node_r[tree.root].as_ref().unwrap().0.clone();
    let m: usize = leaf_rows.iter().map(|(_, r)| r.len()).sum();
    Ok(TreeQRFactor {
        m,
        n: b,
        tree: tree.clone(),
        stages,
        r,
    })
}

/// Sequential CAQR: square tiles of side s = min(m/Pr, n/Pc) with
/// Pr = ceil(2m/sqrt(W)) and Pc = ceil(2n/sqrt(W)), streamed through fast
/// memory with at most three tile payloads plus the running panel factor
/// resident.
pub fn caqr_sequential_factor(
    a: &DenseMatrix,
    fast_mem: usize,
    counters: &mut CommCounters,
) -> Result<CaqrFactor> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(Error::Underdetermined { rows: m, cols: n });
    }
    let (_, _, tile) = seq_caqr_grid(m, n, fast_mem);
    if tile == 0 {
        return Err(Error::CapacityExceeded {
            needed: 16,
            capacity: fast_mem,
        });
    }
    // residency: 3 tiles plus the running R triangle and tau
    let panel_ws = tile * (tile + 1) / 2 + tile;
    if 3 * tile * tile + panel_ws > fast_mem {
        return Err(Error::CapacityExceeded {
            needed: 3 * tile * tile + panel_ws,
            capacity: fast_mem,
        });
    }

    counters.capacity = Some(fast_mem);
    let mut gauge = FastMemGauge::new(fast_mem);

    let m_pad = round_up(m, tile);
    let n_pad = round_up(n, tile);
    let tile_rows = m_pad / tile;
    let tile_cols = n_pad / tile;
    let mut work = DenseMatrix::zeros(m_pad, n_pad);
    for j in 0..n {
        for i in 0..m {
            work.set(i, j, a.get(i, j));
        }
    }

    let s = tile;
    let mut panels = Vec::new();
    for jp in 0..tile_cols {
        let col0 = jp * s;
        let row0 = jp * s;
        let mut stages: Vec<QrStage> = Vec::new();

        // panel factorization: flat tree down the tile column, R resident
        let diag = work.submatrix(row0, col0, s, s);
        counters.record_transfer(clipped_words(row0, col0, s, s, m, n))?;
        gauge.acquire(s * s)?;
        let mut local = CommCounters::new(1);
        let f0 = qr_unblocked_on(&diag, 0, &mut local)?;
        counters.absorb_local(0, &local);
        let mut r_cur = f0.r();
        counters.record_transfer(clipped_words(row0, col0, s, s, m, n).saturating_sub(s * (s - 1) / 2))?;
        gauge.release(s * s - s * (s + 1) / 2);
        stages.push(QrStage {
            rows: (row0..row0 + s).collect(),
            factor: f0,
            proc: 0,
        });
        for lt in (jp + 1)..tile_rows {
            let lrow0 = lt * s;
            let tile_lj = work.submatrix(lrow0, col0, s, s);
            counters.record_transfer(clipped_words(lrow0, col0, s, s, m, n))?;
            gauge.acquire(s * s)?;
            let mut local = CommCounters::new(1);
            let f = qr_triangle_on_top(&r_cur, &tile_lj, 0, &mut local)?;
            counters.absorb_local(0, &local);
            r_cur = f.r();
            counters.record_transfer(clipped_words(lrow0, col0, s, s, m, n) + s.min(n - col0.min(n)))?;
            gauge.release(s * s);
            let mut rows: Vec<usize> = (row0..row0 + s).collect();
            rows.extend(lrow0..lrow0 + s);
            stages.push(QrStage {
                rows,
                factor: f,
                proc: 0,
            });
        }
        // final panel R written back to the diagonal tile
        for j in 0..s {
            for i in 0..=j {
                work.set(row0 + i, col0 + j, r_cur.get(i, j));
            }
            for i in (j + 1)..s {
                work.set(row0 + i, col0 + j, 0.0);
            }
        }
        counters.record_transfer(s * (s + 1) / 2)?;
        gauge.release(s * (s + 1) / 2);

        // trailing updates, one tile column at a time
        for kt in (jp + 1)..tile_cols {
            let kcol0 = kt * s;
            // leaf Q block and the top tile stay resident across the column
            counters.record_transfer(clipped_words(row0, col0, s, s, m, n))?; // load Y of diag tile
            gauge.acquire(s * s)?;
            counters.record_transfer(clipped_words(row0, kcol0, s, s, m, n))?; // load A(J,K)
            gauge.acquire(s * s)?;
            apply_stage_rows(&stages[0], &mut work, kcol0, s, counters)?;
            gauge.release(s * s); // leaf Y replaced by the next Q blocks
            for (li, lt) in ((jp + 1)..tile_rows).enumerate() {
                let lrow0 = lt * s;
                counters.record_transfer(clipped_words(lrow0, col0, s, s, m, n) + s)?; // load Y(L,J)
                gauge.acquire(s * s + s)?;
                counters.record_transfer(clipped_words(lrow0, kcol0, s, s, m, n))?; // load A(L,K)
                gauge.acquire(s * s)?;
                apply_stage_rows(&stages[1 + li], &mut work, kcol0, s, counters)?;
                counters.record_transfer(clipped_words(lrow0, kcol0, s, s, m, n))?; // store A(L,K)
                gauge.release(2 * s * s + s);
            }
            counters.record_transfer(clipped_words(row0, kcol0, s, s, m, n))?; // store A(J,K)
            gauge.release(s * s);
        }
        panels.push(stages);
    }

    // residency never exceeded three tile payloads plus the panel working set
    debug_assert!(
        gauge.high_water() <= 3 * s * s + panel_ws,
        "high water {} above 3 tiles + panel factor {}",
        gauge.high_water(),
        3 * s * s + panel_ws
    );

    let mut r = DenseMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            r.set(i, j, work.get(i, j));
        }
    }
    Ok(CaqrFactor {
        m,
        n,
        padded_m: m_pad,
        padded_n: n_pad,
        panels,
        r,
        layout: CaqrLayout::Sequential {
            fast_mem,
            tile,
            tile_rows,
            tile_cols,
        },
    })
}

/// Grid chooser for sequential CAQR: Pr = ceil(2m/sqrt(W)),
/// Pc = ceil(2n/sqrt(W)), square tile side min(m/Pr, n/Pc).
pub fn seq_caqr_grid(m: usize, n: usize, fast_mem: usize) -> (usize, usize, usize) {
    let sw = (fast_mem as f64).sqrt();
    let pr = ((2.0 * m as f64 / sw).ceil() as usize).max(1);
    let pc = ((2.0 * n as f64 / sw).ceil() as usize).max(1);
    let tile = (m.div_ceil(pr)).min(n.div_ceil(pc));
    (pr, pc, tile)
}

fn apply_stage_rows(
    stage: &QrStage,
    work: &mut DenseMatrix,
    col0: usize,
    width: usize,
    counters: &mut CommCounters,
) -> Result<()> {
    let sub = work.gather_rows(&stage.rows, col0, width);
    let mut local = CommCounters::new(1);
    let upd = apply_qt_on(&stage.factor, &sub, 0, &mut local)?;
    counters.absorb_local(0, &local);
    work.scatter_rows(&stage.rows, col0, &upd);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{fro_norm, generate, GeneratorKind};
    use crate::householder::qr_unblocked;

    fn reference_r(a: &DenseMatrix) -> DenseMatrix {
        let mut c = CommCounters::new(1);
        qr_unblocked(a, &mut c).unwrap().r()
    }

    fn check_r_match(r: &DenseMatrix, want: &DenseMatrix, tol: f64) {
        for j in 0..want.cols() {
            for i in 0..=j {
                assert!(
                    (r.get(i, j) - want.get(i, j)).abs() <= tol,
                    "R[{},{}]: {} vs {}",
                    i,
                    j,
                    r.get(i, j),
                    want.get(i, j)
                );
            }
        }
    }

    #[test]
    fn single_proc_grid_degenerates() {
        let a = generate(GeneratorKind::Uniform, 16, 8, 3).unwrap();
        let layout = BlockCyclicLayout::new(1, 1, 4).unwrap();
        let mut c = CommCounters::new(1);
        let f = caqr_parallel_factor(&a, &layout, &mut c).unwrap();
        check_r_match(&f.r, &reference_r(&a), 1e-12 * fro_norm(&a));
        assert_eq!(c.messages, 0);
        assert_eq!(c.cp_messages, 0);
    }

    #[test]
    fn parallel_2x2_reconstructs() {
        let a = generate(GeneratorKind::Uniform, 64, 64, 17).unwrap();
        let layout = BlockCyclicLayout::new(2, 2, 8).unwrap();
        let mut c = CommCounters::new(4);
        let f = caqr_parallel_factor(&a, &layout, &mut c).unwrap();
        let norm = fro_norm(&a);
        check_r_match(&f.r, &reference_r(&a), 1e-10 * norm);
        let mut c2 = CommCounters::new(1);
        let q = f.explicit_q(&mut c2).unwrap();
        let resid = fro_norm(&q.matmul(&f.r).unwrap().sub(&a).unwrap());
        assert!(resid <= 1e-12 * norm, "residual {}", resid / norm);
    }

    #[test]
    fn layout_invariance_of_r() {
        let a = generate(GeneratorKind::Uniform, 48, 24, 23).unwrap();
        let norm = fro_norm(&a);
        let l1 = BlockCyclicLayout::new(2, 2, 4).unwrap();
        let l2 = BlockCyclicLayout::new(4, 2, 6).unwrap();
        let mut c1 = CommCounters::new(4);
        let mut c2 = CommCounters::new(8);
        let f1 = caqr_parallel_factor(&a, &l1, &mut c1).unwrap();
        let f2 = caqr_parallel_factor(&a, &l2, &mut c2).unwrap();
        check_r_match(&f1.r, &f2.r, 1e-10 * norm);
    }

    #[test]
    fn counters_within_window_of_model() {
        // m=n=64, b=4, Pr=Pc=4:
        // messages (3n/b) log Pr + (2n/b) log Pc = 96 + 64 = 160
        // words (n^2/Pc + bn/2) log Pr + ((mn - n^2/2)/Pr + 2n) log Pc = 3584
        let a = generate(GeneratorKind::Uniform, 64, 64, 31).unwrap();
        let layout = BlockCyclicLayout::new(4, 4, 4).unwrap();
        let mut c = CommCounters::new(16);
        caqr_parallel_factor(&a, &layout, &mut c).unwrap();
        let model = crate::models::model_par_caqr(64.0, 64.0, 4.0, 4.0, 4.0).unwrap();
        let msgs = c.cp_messages as f64;
        let words = c.cp_words as f64;
        assert!(
            (msgs - model.messages).abs() <= 0.25 * model.messages,
            "messages {} vs model {}",
            msgs,
            model.messages
        );
        assert!(
            (words - model.words).abs() <= 0.25 * model.words,
            "words {} vs model {}",
            words,
            model.words
        );
    }

    #[test]
    fn trailing_width_zero_is_noop() {
        let a = generate(GeneratorKind::Uniform, 16, 4, 3).unwrap();
        let tree = build_tree(2, TreeShape::Binary).unwrap();
        let mut c = CommCounters::new(2);
        let f = crate::tsqr::tsqr_factor(&a, 2, &tree, &mut c).unwrap();
        let before = c.clone();
        let mut empty = DenseMatrix::zeros(16, 0);
        let topo = UpdateTopology {
            proc_rows: 2,
            proc_cols: 1,
            row_proc: (0..16).map(|r| r / 8).collect(),
            col_proc: vec![],
            panel_proc_col: 0,
        };
        trailing_update(&f, &mut empty, &topo, &mut c).unwrap();
        assert_eq!(before, c);
    }

    #[test]
    fn pair_exchange_words_counted() {
        // single pair, b=4, trailing width 8: 32 words each direction
        let a = generate(GeneratorKind::Uniform, 16, 4, 5).unwrap();
        let tree = build_tree(2, TreeShape::Binary).unwrap();
        let mut c = CommCounters::new(2);
        let f = crate::tsqr::tsqr_factor(&a, 2, &tree, &mut c).unwrap();
        let words_before = c.words_moved;
        let msgs_before = c.messages;
        let mut trailing = generate(GeneratorKind::Uniform, 16, 8, 6).unwrap();
        let reference = {
            let mut cc = CommCounters::new(1);
            f.apply_qt(&trailing, &mut cc).unwrap()
        };
        let topo = UpdateTopology {
            proc_rows: 2,
            proc_cols: 1,
            row_proc: (0..16).map(|r| r / 8).collect(),
            col_proc: vec![0; 8],
            panel_proc_col: 0,
        };
        trailing_update(&f, &mut trailing, &topo, &mut c).unwrap();
        assert_eq!(c.messages - msgs_before, 2);
        assert_eq!(c.words_moved - words_before, 64); // 32 per direction
        // equals the dense apply restricted to the trailing columns
        let diff = fro_norm(&trailing.sub(&reference).unwrap());
        assert!(diff == 0.0 || diff <= 1e-13 * fro_norm(&reference));
    }

    #[test]
    fn sequential_reconstructs_and_respects_memory() {
        let a = generate(GeneratorKind::Uniform, 64, 64, 41).unwrap();
        let w = 2048;
        let mut c = CommCounters::with_capacity(1, w);
        let f = caqr_sequential_factor(&a, w, &mut c).unwrap();
        let norm = fro_norm(&a);
        check_r_match(&f.r, &reference_r(&a), 1e-10 * norm);
        let mut c2 = CommCounters::new(1);
        let q = f.explicit_q(&mut c2).unwrap();
        let resid = fro_norm(&q.matmul(&f.r).unwrap().sub(&a).unwrap());
        assert!(resid <= 1e-12 * norm);
    }

    #[test]
    fn sequential_single_tile_case() {
        let a = generate(GeneratorKind::Uniform, 8, 8, 2).unwrap();
        let w = 4 * 64 + 64;
        let mut c = CommCounters::with_capacity(1, w);
        let f = caqr_sequential_factor(&a, w, &mut c).unwrap();
        check_r_match(&f.r, &reference_r(&a), 1e-11 * fro_norm(&a));
        // single tile: read + two writes
        assert!(c.messages <= 4, "messages {}", c.messages);
    }

    #[test]
    fn sequential_rejects_small_memory() {
        let a = generate(GeneratorKind::Uniform, 64, 64, 2).unwrap();
        let mut c = CommCounters::new(1);
        assert!(caqr_sequential_factor(&a, 8, &mut c).is_err());
    }

    #[test]
    fn padded_odd_shapes_factor_correctly() {
        // 8x3 on a 4x4 grid with b=1 pads columns; padded entries excluded
        let a = generate(GeneratorKind::Uniform, 8, 3, 77).unwrap();
        let layout = BlockCyclicLayout::new(4, 4, 1).unwrap();
        let mut c = CommCounters::new(16);
        let f = caqr_parallel_factor(&a, &layout, &mut c).unwrap();
        check_r_match(&f.r, &reference_r(&a), 1e-11 * fro_norm(&a));
        let mut c2 = CommCounters::new(1);
        let q = f.explicit_q(&mut c2).unwrap();
        let resid = fro_norm(&q.matmul(&f.r).unwrap().sub(&a).unwrap());
        assert!(resid <= 1e-12 * fro_norm(&a));
    }

    #[test]
    fn padding_in_both_dimensions() {
        // 10x7 on a 3x2 grid with b=2 pads rows to 12 and columns to 8
        let a = generate(GeneratorKind::Uniform, 10, 7, 55).unwrap();
        let layout = BlockCyclicLayout::new(3, 2, 2).unwrap();
        let mut c = CommCounters::new(6);
        let f = caqr_parallel_factor(&a, &layout, &mut c).unwrap();
        assert_eq!((f.padded_m, f.padded_n), (12, 8));
        check_r_match(&f.r, &reference_r(&a), 1e-11 * fro_norm(&a));
        let mut s = CommCounters::new(1);
        let q = f.explicit_q(&mut s).unwrap();
        let resid = fro_norm(&q.matmul(&f.r).unwrap().sub(&a).unwrap());
        assert!(resid <= 1e-12 * fro_norm(&a));
    }

    #[test]
    fn words_counter_monotone_in_width() {
        let mut last = 0u64;
        for n in [16usize, 24, 32] {
            let a = generate(GeneratorKind::Uniform, 64, n, 11).unwrap();
            let mut c = CommCounters::with_capacity(1, 1024);
            caqr_sequential_factor(&a, 1024, &mut c).unwrap();
            assert!(c.words_moved >= last, "words decreased at n={}", n);
            last = c.words_moved;
        }
    }
}
