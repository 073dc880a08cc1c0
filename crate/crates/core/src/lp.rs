//! Packing linear programs `max cᵀx  s.t.  A x ≤ 1, x ≥ 0` with `A ≥ 0`.
//!
//! The constraint graph is split into connected components and each one is
//! solved by a dense tableau simplex (Dantzig pricing, Bland's rule after a
//! run of degenerate pivots). Duals come from the final reduced costs.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("column {0} appears in no constraint, LP is unbounded")]
    Unbounded(usize),
    #[error("non-finite coefficient in row {row}")]
    NonFinite { row: usize },
    #[error("objective coefficient {0} must be positive")]
    BadObjective(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    IterationLimit,
}

#[derive(Clone, Debug, Default)]
pub struct PackingLp {
    pub n_cols: usize,
    pub objective: Vec<f64>,
    /// Sparse rows `(column, coefficient)`; coefficients must be ≥ 0.
    pub rows: Vec<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// One dual value per row; zero for rows outside every component.
    pub y: Vec<f64>,
    pub primal_value: f64,
    /// Upper bound on the optimum from the (rescaled) dual vector.
    pub dual_bound: f64,
    pub status: LpStatus,
    pub pivots: usize,
    pub components: usize,
}

impl PackingLp {
    pub fn new(objective: Vec<f64>) -> Self {
        Self { n_cols: objective.len(), objective, rows: Vec::new() }
    }

    pub fn push_row(&mut self, row: Vec<(usize, f64)>) {
        self.rows.push(row);
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `A x` for every row.
    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, a)| a * x[j]).sum()).collect()
    }

    /// Plain-text dump: a header, the objective, then `row col value` triplets.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# maximize c.x subject to A x <= 1, x >= 0")?;
        writeln!(w, "rows {} cols {} nnz {}", self.rows.len(), self.n_cols, self.nnz())?;
        write!(w, "c")?;
        for c in &self.objective {
            write!(w, " {c:.17e}")?;
        }
        writeln!(w)?;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in row {
                writeln!(w, "{i} {j} {a:.17e}")?;
            }
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        solve_packing(self)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

pub fn solve_packing(lp: &PackingLp) -> Result<LpSolution, LpError> {
    let n = lp.n_cols;
    let m = lp.rows.len();
    if let Some(j) = lp.objective.iter().position(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(LpError::BadObjective(j));
    }
    for (i, row) in lp.rows.iter().enumerate() {
        if row.iter().any(|&(_, a)| !a.is_finite() || a < 0.0) {
            return Err(LpError::NonFinite { row: i });
        }
    }
    // Nodes 0..n are columns, n..n+m rows.
    let mut uf = UnionFind::new(n + m);
    let mut col_used = vec![false; n];
    for (i, row) in lp.rows.iter().enumerate() {
        for &(j, a) in row {
            if a > 0.0 {
                uf.union(j, n + i);
                col_used[j] = true;
            }
        }
    }
    if let Some(j) = col_used.iter().position(|u| !u) {
        return Err(LpError::Unbounded(j));
    }
    let mut comp_of_root = std::collections::HashMap::new();
    let mut comps: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for j in 0..n {
        let r = uf.find(j);
        let id = *comp_of_root.entry(r).or_insert_with(|| {
            comps.push((Vec::new(), Vec::new()));
            comps.len() - 1
        });
        comps[id].0.push(j);
    }
    for i in 0..m {
        if lp.rows[i].iter().any(|&(_, a)| a > 0.0) {
            let r = uf.find(n + i);
            if let Some(&id) = comp_of_root.get(&r) {
                comps[id].1.push(i);
            }
        }
    }

    let results: Vec<_> = comps
        .par_iter()
        .map(|(cols, rows)| {
            // `cols` is sorted, so local indices come from a binary search.
            let nc = cols.len();
            let mut a = vec![0.0; rows.len() * nc];
            for (r, &i) in rows.iter().enumerate() {
                for &(j, v) in &lp.rows[i] {
                    if let Ok(k) = cols.binary_search(&j) {
                        a[r * nc + k] += v;
                    }
                }
            }
            let c: Vec<f64> = cols.iter().map(|&j| lp.objective[j]).collect();
            dense_simplex(&c, &a, rows.len(), nc)
        })
        .collect();

    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m];
    let mut status = LpStatus::Optimal;
    let mut pivots = 0;
    for ((cols, rows), res) in comps.iter().zip(results) {
        let res = res.map_err(|local| LpError::Unbounded(cols[local.min(cols.len() - 1)]))?;
        for (k, &j) in cols.iter().enumerate() {
            x[j] = res.x[k];
        }
        for (k, &i) in rows.iter().enumerate() {
            y[i] = res.y[k];
        }
        if res.status != LpStatus::Optimal {
            status = res.status;
        }
        pivots += res.pivots;
    }
    let primal_value = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
    // Rescale the dual so that Aᵀy ≥ c holds exactly; Σy is then an upper bound.
    let mut aty = vec![0.0; n];
    for (i, row) in lp.rows.iter().enumerate() {
        if y[i] != 0.0 {
            for &(j, a) in row {
                aty[j] += a * y[i];
            }
        }
    }
    let worst = aty.iter().zip(&lp.objective).map(|(s, c)| s / c).fold(f64::INFINITY, f64::min);
    let ysum: f64 = y.iter().sum();
    let dual_bound = if worst > 0.0 { ysum / worst.min(1.0) } else { f64::INFINITY };
    Ok(LpSolution { x, y, primal_value, dual_bound, status, pivots, components: comps.len() })
}

/// Slack of the first Harris pass; bounds the primal infeasibility a pivot may introduce.
const HARRIS_SLACK: f64 = 1e-12;

struct DenseResult {
    x: Vec<f64>,
    y: Vec<f64>,
    status: LpStatus,
    pivots: usize,
}

/// Tableau simplex on `max cᵀx, A x ≤ 1, x ≥ 0` (A is `m × n`, row-major).
/// Returns the local index of an unbounded column on failure.
fn dense_simplex(c: &[f64], a: &[f64], m: usize, n: usize) -> Result<DenseResult, usize> {
    let mut t = a.to_vec();
    let mut b = vec![1.0f64; m];
    let mut d = c.to_vec();
    // Labels: j < n original column j, n + i slack of row i.
    let mut basic: Vec<usize> = (0..m).map(|i| n + i).collect();
    let mut nonbasic: Vec<usize> = (0..n).collect();
    let cmax = c.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let eps_d = 1e-11 * cmax;
    let eps_p = 1e-9;
    let max_pivots = 50 * (m + n) + 1000;
    let mut pivots = 0;
    let mut degenerate_run = 0;
    let mut bland = false;
    let parallel = m * n > 1 << 18;
    let mut row_r = vec![0.0; n];

    let status = loop {
        let q = if bland {
            (0..n).filter(|&j| d[j] > eps_d).min_by_key(|&j| nonbasic[j])
        } else {
            (0..n).filter(|&j| d[j] > eps_d).max_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap())
        };
        let Some(q) = q else { break LpStatus::Optimal };
        if pivots >= max_pivots {
            break LpStatus::IterationLimit;
        }
        // Two-pass (Harris) ratio test. Entries below a tolerance relative to
        // the column's largest entry are never pivots; the step is then at
        // most b_max / col_max, so skipped rows lose at most `eps_p · b_max`.
        let col_max = (0..m).map(|i| t[i * n + q]).fold(0.0f64, f64::max);
        if col_max <= 0.0 {
            return Err(nonbasic[q]);
        }
        let tol = eps_p * col_max;
        let mut theta = f64::INFINITY;
        for i in 0..m {
            let tiq = t[i * n + q];
            if tiq > tol {
                theta = theta.min((b[i].max(0.0) + HARRIS_SLACK) / tiq);
            }
        }
        let mut r_best: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let tiq = t[i * n + q];
            if tiq > tol {
                let ratio = b[i].max(0.0) / tiq;
                if ratio > theta {
                    continue;
                }
                let better = match r_best {
                    None => true,
                    Some(r) if bland => basic[i] < basic[r],
                    Some(r) => tiq > t[r * n + q],
                };
                if better {
                    r_best = Some(i);
                    best_ratio = ratio;
                }
            }
        }
        let Some(r) = r_best else {
            return Err(nonbasic[q]);
        };
        if best_ratio <= 1e-14 {
            degenerate_run += 1;
            if degenerate_run > 50 {
                bland = true;
            }
        } else {
            degenerate_run = 0;
            bland = false;
        }

        let p = t[r * n + q];
        let inv = 1.0 / p;
        for j in 0..n {
            row_r[j] = t[r * n + j] * inv;
        }
        row_r[q] = inv;
        let br = b[r] * inv;
        let update = |(i, (row, bi)): (usize, (&mut [f64], &mut f64))| {
            if i == r {
                return;
            }
            let f = row[q];
            if f == 0.0 {
                return;
            }
            row[q] = 0.0;
            for (v, &rr) in row.iter_mut().zip(row_r.iter()) {
                *v -= f * rr;
            }
            *bi -= f * br;
            if *bi < 0.0 && *bi > -1e-10 {
                *bi = 0.0;
            }
        };
        if parallel {
            t.par_chunks_mut(n).zip(b.par_iter_mut()).enumerate().for_each(update);
        } else {
            t.chunks_mut(n).zip(b.iter_mut()).enumerate().for_each(update);
        }
        let f = d[q];
        d[q] = 0.0;
        for (v, &rr) in d.iter_mut().zip(row_r.iter()) {
            *v -= f * rr;
        }
        t[r * n..(r + 1) * n].copy_from_slice(&row_r);
        b[r] = br;
        std::mem::swap(&mut basic[r], &mut nonbasic[q]);
        pivots += 1;
    };

    let mut x = vec![0.0; n];
    for (i, &lab) in basic.iter().enumerate() {
        if lab < n {
            x[lab] = b[i].max(0.0);
        }
    }
    let mut y = vec![0.0; m];
    for (j, &lab) in nonbasic.iter().enumerate() {
        if lab >= n {
            y[lab - n] = (-d[j]).max(0.0);
        }
    }
    Ok(DenseResult { x, y, status, pivots })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(c: &[f64], a: &[&[f64]]) -> PackingLp {
        let mut lp = PackingLp::new(c.to_vec());
        for row in a {
            lp.push_row(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, &v)| (j, v)).collect());
        }
        lp
    }

    /// Enumerates all vertices of the feasible region for tiny instances.
    fn brute_force(c: &[f64], a: &[&[f64]]) -> f64 {
        let n = c.len();
        let m = a.len();
        // Constraints as (coeffs, rhs) with x_j >= 0 written as -x_j <= 0.
        let mut cons: Vec<(Vec<f64>, f64)> = a.iter().map(|r| (r.to_vec(), 1.0)).collect();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = -1.0;
            cons.push((e, 0.0));
        }
        let total = m + n;
        let mut best = 0.0f64;
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let mat =
                crate::linalg::Matrix::from_rows(&idx.iter().map(|&k| cons[k].0.clone()).collect::<Vec<_>>()).unwrap();
            if let Some(inv) = mat.inverse() {
                let rhs: Vec<f64> = idx.iter().map(|&k| cons[k].1).collect();
                let x = inv.mat_vec(&rhs);
                let feasible = cons.iter().all(|(r, b)| r.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() <= b + 1e-9);
                if feasible {
                    best = best.max(c.iter().zip(&x).map(|(a, b)| a * b).sum());
                }
            }
            // next combination
            let mut i = n;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if idx[i] < total - n + i {
                    idx[i] += 1;
                    for k in i + 1..n {
                        idx[k] = idx[k - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn small_instances_match_vertex_enumeration() {
        let cases: Vec<(Vec<f64>, Vec<Vec<f64>>)> = vec![
            (vec![1.0, 1.0], vec![vec![1.0, 0.5], vec![0.5, 1.0]]),
            (
                vec![2.0, 1.0, 1.5],
                vec![vec![1.0, 0.2, 0.0], vec![0.3, 1.0, 0.4], vec![0.0, 0.6, 1.0], vec![0.5, 0.5, 0.5]],
            ),
            (vec![1.0, 1.0, 1.0], vec![vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]]),
        ];
        for (c, a) in &cases {
            let rows: Vec<&[f64]> = a.iter().map(|r| r.as_slice()).collect();
            let sol = dense(c, &rows).solve().unwrap();
            let want = brute_force(c, &rows);
            assert!((sol.primal_value - want).abs() < 1e-12, "{} vs {want}", sol.primal_value);
            assert!(sol.dual_bound >= want - 1e-12);
            assert!((sol.dual_bound - want).abs() < 1e-9);
            assert_eq!(sol.status, LpStatus::Optimal);
        }
    }

    #[test]
    fn diagonal_instance_splits_into_components() {
        let mut lp = PackingLp::new(vec![1.0; 500]);
        for j in 0..500 {
            lp.push_row(vec![(j, 0.5 + (j as f64) / 1000.0)]);
        }
        let sol = lp.solve().unwrap();
        assert_eq!(sol.components, 500);
        let want: f64 = (0..500).map(|j| 1.0 / (0.5 + j as f64 / 1000.0)).sum();
        assert!((sol.primal_value - want).abs() < 1e-10);
    }

    #[test]
    fn uncovered_column_is_unbounded() {
        let mut lp = PackingLp::new(vec![1.0, 1.0]);
        lp.push_row(vec![(0, 1.0)]);
        assert_eq!(lp.solve().unwrap_err(), LpError::Unbounded(1));
    }

    #[test]
    fn text_dump_has_every_entry() {
        let lp = dense(&[1.0, 2.0], &[&[1.0, 0.0], &[0.25, 0.5]]);
        let mut buf = Vec::new();
        lp.write_text(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("rows 2 cols 2 nnz 3"));
        assert_eq!(s.lines().count(), 3 + 3);
    }
}
