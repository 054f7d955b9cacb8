//! Dense two-phase primal simplex with bounded variables.
//!
//! Variables keep their own bounds (no bound rows); nonbasic variables rest
//! at a finite bound and may flip between bounds during the ratio test.
//! Dantzig pricing with a switch to Bland's rule after a fixed iteration
//! budget guards against cycling.

use crate::model::{MilpModel, Sense};

pub const FEAS_TOL: f64 = 1e-7;
pub const PIVOT_TOL: f64 = 1e-9;
/// Minimum pivot magnitude admitted by the ratio test; smaller entries are
/// treated as zero to keep the basis well conditioned.
const RATIO_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub status: LpStatus,
    /// Values for the model's structural variables (valid when Optimal).
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

struct Tableau {
    m: usize,
    ncols: usize,
    rows: Vec<Vec<f64>>,
    /// Current value of the basic variable of each row.
    rhs: Vec<f64>,
    basis: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Current value of each nonbasic column.
    val: Vec<f64>,
    in_basis: Vec<bool>,
    iterations: usize,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

impl Tableau {
    fn basic_value(&self, col: usize) -> f64 {
        debug_assert!(self.in_basis[col]);
        let r = self.basis.iter().position(|&b| b == col).unwrap();
        self.rhs[r]
    }

    fn value(&self, col: usize) -> f64 {
        if self.in_basis[col] {
            self.basic_value(col)
        } else {
            self.val[col]
        }
    }

    /// Reduced costs for an arbitrary cost vector over all columns.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, &bi) in self.basis.iter().enumerate() {
            let cb = cost[bi];
            if cb != 0.0 {
                for j in 0..self.ncols {
                    d[j] -= cb * self.rows[i][j];
                }
            }
        }
        d
    }

    /// One simplex step for the current reduced-cost vector.
    fn step(&mut self, d: &mut [f64], bland: bool) -> Step {
        // Entering column.
        let mut enter: Option<(usize, f64)> = None; // (col, direction)
        let mut best = PIVOT_TOL * 10.0;
        for j in 0..self.ncols {
            if self.in_basis[j] || self.lo[j] == self.hi[j] {
                continue;
            }
            let v = self.val[j];
            let at_lower = (v - self.lo[j]).abs() <= FEAS_TOL;
            let at_upper = (v - self.hi[j]).abs() <= FEAS_TOL;
            let dir = if at_lower && d[j] < -best {
                1.0
            } else if at_upper && d[j] > best {
                -1.0
            } else if !at_lower && !at_upper && d[j].abs() > best {
                // Free variable sitting strictly between bounds.
                -d[j].signum()
            } else {
                continue;
            };
            if bland {
                enter = Some((j, dir));
                break;
            }
            best = d[j].abs();
            enter = Some((j, dir));
        }
        let Some((j, dir)) = enter else {
            return Step::Optimal;
        };

        // Ratio test, two passes: the first finds the blocking step length,
        // the second picks the leaving row with the largest pivot among the
        // (near-)ties so small pivots never enter the basis.
        let flip_t = if self.lo[j].is_finite() && self.hi[j].is_finite() {
            self.hi[j] - self.lo[j]
        } else {
            f64::INFINITY
        };
        let row_limit = |tab: &Tableau, i: usize| -> Option<(f64, f64, f64)> {
            let delta = -tab.rows[i][j] * dir;
            if delta.abs() <= RATIO_TOL {
                return None;
            }
            let b = tab.basis[i];
            let (limit, bound) = if delta < 0.0 {
                if tab.lo[b].is_finite() {
                    ((tab.rhs[i] - tab.lo[b]) / (-delta), tab.lo[b])
                } else {
                    return None;
                }
            } else if tab.hi[b].is_finite() {
                ((tab.hi[b] - tab.rhs[i]) / delta, tab.hi[b])
            } else {
                return None;
            };
            Some((limit.max(0.0), bound, delta.abs()))
        };
        let mut t_rows = f64::INFINITY;
        for i in 0..self.m {
            if let Some((limit, _, _)) = row_limit(self, i) {
                t_rows = t_rows.min(limit);
            }
        }
        let t = flip_t.min(t_rows);
        if t.is_infinite() {
            return Step::Unbounded;
        }
        let mut leave: Option<(usize, f64)> = None;
        if t_rows <= flip_t {
            let tie = t_rows + 1e-9 * (1.0 + t_rows);
            let mut best_piv = 0.0;
            for i in 0..self.m {
                if let Some((limit, bound, piv)) = row_limit(self, i) {
                    if limit > tie {
                        continue;
                    }
                    let better = match leave {
                        None => true,
                        Some((r, _)) => {
                            if bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                piv > best_piv
                            }
                        }
                    };
                    if better {
                        best_piv = piv;
                        leave = Some((i, bound));
                    }
                }
            }
        }
        let t = match leave {
            // Step to the selected row's own limit (ties differ by ≤ tie tol).
            Some((r, _)) => row_limit(self, r).unwrap().0,
            None => flip_t,
        };
        self.iterations += 1;

        match leave {
            None => {
                // Bound flip of the entering column.
                for i in 0..self.m {
                    self.rhs[i] -= self.rows[i][j] * dir * t;
                }
                self.val[j] += dir * t;
            }
            Some((r, bound)) => {
                let new_val = self.val[j] + dir * t;
                for i in 0..self.m {
                    if i != r {
                        self.rhs[i] -= self.rows[i][j] * dir * t;
                    }
                }
                let leaving = self.basis[r];
                self.val[leaving] = bound;
                self.in_basis[leaving] = false;
                self.in_basis[j] = true;
                self.basis[r] = j;
                self.rhs[r] = new_val;
                // Eliminate column j from the other rows and the cost row.
                let piv = self.rows[r][j];
                for k in 0..self.ncols {
                    self.rows[r][k] /= piv;
                }
                for i in 0..self.m {
                    if i == r {
                        continue;
                    }
                    let f = self.rows[i][j];
                    if f != 0.0 {
                        for k in 0..self.ncols {
                            self.rows[i][k] -= f * self.rows[r][k];
                        }
                        self.rows[i][j] = 0.0;
                    }
                }
                let f = d[j];
                if f != 0.0 {
                    for k in 0..self.ncols {
                        d[k] -= f * self.rows[r][k];
                    }
                    d[j] = 0.0;
                }
            }
        }
        Step::Moved
    }

    /// Max relative inconsistency between the tracked point and the original
    /// row data `a0·x = c0`, including basic-variable bound violations.
    fn drift(&self, a0: &[Vec<f64>], c0: &[f64]) -> f64 {
        let x: Vec<f64> = (0..self.ncols).map(|j| self.value(j)).collect();
        let mut worst = 0.0f64;
        for (i, row) in a0.iter().enumerate() {
            let mut lhs = 0.0;
            let mut mag = 1.0 + c0[i].abs();
            for (j, &a) in row.iter().enumerate() {
                lhs += a * x[j];
                mag += (a * x[j]).abs();
            }
            worst = worst.max((lhs - c0[i]).abs() / mag);
        }
        for (i, &b) in self.basis.iter().enumerate() {
            let rel = 1.0 + self.rhs[i].abs();
            worst = worst.max((self.lo[b] - self.rhs[i]).max(0.0) / rel);
            worst = worst.max((self.rhs[i] - self.hi[b]).max(0.0) / rel);
        }
        worst
    }

    /// Refactorizes: recomputes `rows = B⁻¹·a0` and the basic values exactly
    /// by Gauss-Jordan elimination on the original data. Returns false if the
    /// recorded basis is numerically singular.
    fn rebuild(&mut self, a0: &[Vec<f64>], c0: &[f64]) -> bool {
        let m = self.m;
        let mut aug: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut r = a0[i].clone();
                r.push(c0[i]);
                r
            })
            .collect();
        let mut rowof = vec![usize::MAX; m];
        let mut used = vec![false; m];
        for k in 0..m {
            let bc = self.basis[k];
            let mut pick = None;
            let mut best = 1e-11;
            for (i, row) in aug.iter().enumerate() {
                if !used[i] && row[bc].abs() > best {
                    best = row[bc].abs();
                    pick = Some(i);
                }
            }
            let Some(i) = pick else { return false };
            used[i] = true;
            rowof[k] = i;
            let piv = aug[i][bc];
            for v in aug[i].iter_mut() {
                *v /= piv;
            }
            let prow = aug[i].clone();
            for (i2, row) in aug.iter_mut().enumerate() {
                if i2 == i {
                    continue;
                }
                let f = row[bc];
                if f != 0.0 {
                    for (v, &pv) in row.iter_mut().zip(&prow) {
                        *v -= f * pv;
                    }
                    row[bc] = 0.0;
                }
            }
        }
        for k in 0..m {
            let i = rowof[k];
            self.rows[k][..self.ncols].copy_from_slice(&aug[i][..self.ncols]);
        }
        for k in 0..m {
            let i = rowof[k];
            let mut v = aug[i][self.ncols];
            for j in 0..self.ncols {
                if !self.in_basis[j] && self.rows[k][j] != 0.0 {
                    v -= self.rows[k][j] * self.val[j];
                }
            }
            self.rhs[k] = v;
        }
        true
    }

    fn optimize(&mut self, cost: &[f64], max_iter: usize) -> LpStatus {
        let mut d = self.reduced_costs(cost);
        let bland_after = self.iterations + 10 * (self.m + self.ncols) + 100;
        loop {
            if self.iterations > max_iter {
                return LpStatus::IterationLimit;
            }
            let bland = self.iterations > bland_after;
            match self.step(&mut d, bland) {
                Step::Optimal => return LpStatus::Optimal,
                Step::Unbounded => return LpStatus::Unbounded,
                Step::Moved => {}
            }
        }
    }
}

/// Solves the LP relaxation of `model` with variable bounds overridden by
/// `lo`/`hi` (binaries relaxed to their interval).
pub fn lp_solve(model: &MilpModel, lo: &[f64], hi: &[f64]) -> LpResult {
    let n = model.num_vars();
    let m = model.constraints.len();
    debug_assert_eq!(lo.len(), n);

    for j in 0..n {
        if lo[j] > hi[j] + FEAS_TOL {
            return LpResult {
                status: LpStatus::Infeasible,
                x: vec![],
                objective: f64::INFINITY,
                iterations: 0,
            };
        }
    }

    // Fixed variables are substituted into the right-hand sides instead of
    // occupying tableau columns; branch-and-bound pins binaries through the
    // bound overrides, so the tableau shrinks as the tree deepens.
    let mut cmap = vec![usize::MAX; n];
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..n {
        if lo[j] != hi[j] {
            cmap[j] = kept.len();
            kept.push(j);
        }
    }
    let nk = kept.len();

    // Columns: kept structural, then one slack per inequality row (equality
    // rows get an artificial instead), artificials appended below.
    let mut col_lo: Vec<f64> = kept.iter().map(|&j| lo[j]).collect();
    let mut col_hi: Vec<f64> = kept.iter().map(|&j| hi[j]).collect();
    let mut slack_of = vec![usize::MAX; m];
    for (i, c) in model.constraints.iter().enumerate() {
        match c.sense {
            Sense::Le => {
                slack_of[i] = col_lo.len();
                col_lo.push(0.0);
                col_hi.push(f64::INFINITY);
            }
            Sense::Ge => {
                slack_of[i] = col_lo.len();
                col_lo.push(f64::NEG_INFINITY);
                col_hi.push(0.0);
            }
            Sense::Eq => {}
        }
    }
    let base_cols = col_lo.len();

    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; base_cols]; m];
    let mut rhs_c = vec![0.0; m];
    for (i, c) in model.constraints.iter().enumerate() {
        rhs_c[i] = c.rhs;
        for &(crate::model::VarId(j), coef) in &c.terms {
            if cmap[j] == usize::MAX {
                rhs_c[i] -= coef * lo[j];
            } else {
                rows[i][cmap[j]] += coef;
            }
        }
        if slack_of[i] != usize::MAX {
            rows[i][slack_of[i]] = 1.0;
        }
    }

    // Nonbasic starting values.
    let mut val = vec![0.0; base_cols];
    for j in 0..base_cols {
        val[j] = if col_lo[j].is_finite() {
            col_lo[j]
        } else if col_hi[j].is_finite() {
            col_hi[j]
        } else {
            0.0
        };
    }

    // Initial basis: slack per row when its residual fits the slack bounds,
    // otherwise an artificial column.
    let mut basis = vec![0usize; m];
    let mut rhs = vec![0.0; m];
    let mut artificials: Vec<usize> = Vec::new();
    let mut art_cols: Vec<(usize, f64)> = Vec::new(); // (row, sign)
    for i in 0..m {
        let mut resid = rhs_c[i];
        for j in 0..nk {
            resid -= rows[i][j] * val[j];
        }
        let sj = slack_of[i];
        if sj != usize::MAX && resid >= col_lo[sj] - FEAS_TOL && resid <= col_hi[sj] + FEAS_TOL {
            basis[i] = sj;
            rhs[i] = resid;
        } else {
            let clamped = if sj == usize::MAX {
                0.0
            } else {
                let c = resid.clamp(col_lo[sj], col_hi[sj]);
                val[sj] = c;
                c
            };
            let excess = resid - clamped;
            let sign = if excess < 0.0 { -1.0 } else { 1.0 };
            art_cols.push((i, sign));
            basis[i] = usize::MAX; // patched below
            rhs[i] = excess.abs();
        }
    }
    let mut row_sign = vec![1.0; m];
    for (k, &(i, sign)) in art_cols.iter().enumerate() {
        let col = base_cols + k;
        for r in rows.iter_mut() {
            r.push(0.0);
        }
        if sign < 0.0 {
            // Normalize so the basis column is +1.
            for entry in rows[i].iter_mut() {
                *entry = -*entry;
            }
            row_sign[i] = -1.0;
        }
        rows[i][col] = 1.0;
        col_lo.push(0.0);
        col_hi.push(f64::INFINITY);
        val.push(0.0);
        basis[i] = col;
        artificials.push(col);
    }
    let ncols = base_cols + artificials.len();

    let mut in_basis = vec![false; ncols];
    for &b in &basis {
        in_basis[b] = true;
    }

    let mut tab = Tableau {
        m,
        ncols,
        rows,
        rhs,
        basis,
        lo: col_lo,
        hi: col_hi,
        val,
        in_basis,
        iterations: 0,
    };
    let max_iter = 50 * (m + ncols) + 1000;
    let a0: Vec<Vec<f64>> = tab.rows.clone();
    let c0: Vec<f64> = (0..m).map(|i| row_sign[i] * rhs_c[i]).collect();
    let drift_tol = FEAS_TOL * 10.0;
    // Re-optimizes after an exact refactorization whenever the incrementally
    // tracked point has drifted from the true residuals.
    let settle = |tab: &mut Tableau, cost: &[f64]| -> LpStatus {
        let mut attempts = 0;
        loop {
            let status = tab.optimize(cost, max_iter);
            if status == LpStatus::IterationLimit
                || attempts >= 3
                || tab.drift(&a0, &c0) <= drift_tol
                || !tab.rebuild(&a0, &c0)
            {
                return status;
            }
            attempts += 1;
        }
    };

    // Phase 1.
    if !artificials.is_empty() {
        let mut cost1 = vec![0.0; ncols];
        for &a in &artificials {
            cost1[a] = 1.0;
        }
        let status = settle(&mut tab, &cost1);
        if status == LpStatus::IterationLimit {
            return LpResult {
                status,
                x: vec![],
                objective: f64::INFINITY,
                iterations: tab.iterations,
            };
        }
        let infeas: f64 = artificials.iter().map(|&a| tab.value(a)).sum();
        // Sub-linear growth with problem scale: big-M rows must not widen the
        // acceptance band into a window that hides real infeasibility.
        let scale = 1.0 + model.constraints.iter().map(|c| c.rhs.abs()).fold(0.0, f64::max);
        if infeas > FEAS_TOL * 10.0 * (1.0 + 1e-3 * scale.sqrt()) {
            return LpResult {
                status: LpStatus::Infeasible,
                x: vec![],
                objective: f64::INFINITY,
                iterations: tab.iterations,
            };
        }
        // Pin artificials at zero for phase 2.
        for &a in &artificials {
            tab.lo[a] = 0.0;
            tab.hi[a] = 0.0;
            if !tab.in_basis[a] {
                tab.val[a] = 0.0;
            }
        }
    }

    // Phase 2.
    let mut cost2 = vec![0.0; ncols];
    for &(crate::model::VarId(j), c) in &model.objective {
        if cmap[j] != usize::MAX {
            cost2[cmap[j]] += c;
        }
    }
    let status = settle(&mut tab, &cost2);
    match status {
        LpStatus::Optimal => {
            let x: Vec<f64> = (0..n)
                .map(|j| {
                    if cmap[j] == usize::MAX {
                        lo[j]
                    } else {
                        tab.value(cmap[j])
                    }
                })
                .collect();
            // The tableau tracks basic values incrementally; on ill-conditioned
            // bases they can drift away from the true residuals. Re-check the
            // point against the original data and never report a corrupted
            // solution as optimal.
            let mut bad = false;
            for j in 0..n {
                let rel = 1.0 + x[j].abs();
                if x[j] < lo[j] - FEAS_TOL * 10.0 * rel || x[j] > hi[j] + FEAS_TOL * 10.0 * rel {
                    bad = true;
                    break;
                }
            }
            if !bad {
                for c in &model.constraints {
                    let mut lhs = 0.0;
                    let mut mag = 1.0;
                    for &(crate::model::VarId(j), coef) in &c.terms {
                        lhs += coef * x[j];
                        mag += (coef * x[j]).abs();
                    }
                    let viol = match c.sense {
                        Sense::Le => lhs - c.rhs,
                        Sense::Ge => c.rhs - lhs,
                        Sense::Eq => (lhs - c.rhs).abs(),
                    };
                    if viol > FEAS_TOL * 10.0 * (mag + c.rhs.abs()) {
                        bad = true;
                        break;
                    }
                }
            }
            if bad {
                return LpResult {
                    status: LpStatus::IterationLimit,
                    x: vec![],
                    objective: f64::INFINITY,
                    iterations: tab.iterations,
                };
            }
            let objective = model
                .objective
                .iter()
                .map(|&(crate::model::VarId(j), c)| c * x[j])
                .sum();
            LpResult {
                status,
                x,
                objective,
                iterations: tab.iterations,
            }
        }
        s => LpResult {
            status: s,
            x: vec![],
            objective: f64::NEG_INFINITY,
            iterations: tab.iterations,
        },
    }
}

/// Solves the LP relaxation using the model's own bounds.
pub fn lp_solve_relaxation(model: &MilpModel) -> LpResult {
    let lo: Vec<f64> = model.variables.iter().map(|v| v.lower).collect();
    let hi: Vec<f64> = model.variables.iter().map(|v| v.upper).collect();
    lp_solve(model, &lo, &hi)
}
