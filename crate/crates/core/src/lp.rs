//! Small dense two-phase simplex solver.
//!
//! Problems here have at most a few hundred rows, so a full tableau is
//! simpler and fast enough. Variable bounds are handled by substitution:
//! a finite lower bound shifts the variable, a lone finite upper bound
//! reflects it, free variables are split, and a remaining finite upper
//! bound becomes an explicit row.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    kind: RowKind,
    rhs: f64,
}

/// `min c.x` subject to linear rows and `lower <= x <= upper`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub pivot_tol: f64,
    pub max_iters: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            pivot_tol: 1e-10,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest violation of any row or bound at `x`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    /// The solution, or a solver error naming the failure.
    pub fn into_optimal(self, what: &str) -> Result<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Ok(s),
            LpOutcome::Infeasible => Err(Error::Solver {
                message: format!("{what}: infeasible"),
                residual: f64::NAN,
            }),
            LpOutcome::Unbounded => Err(Error::Solver {
                message: format!("{what}: unbounded"),
                residual: f64::NAN,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Transform {
    /// x = lo + y
    Shift(f64, usize),
    /// x = hi - y
    Reflect(f64, usize),
    /// x = y+ - y-
    Split(usize, usize),
}

impl LinearProgram {
    /// `n` variables, all `>= 0`, zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn set_objective(&mut self, j: usize, c: f64) {
        self.objective[j] = c;
    }

    pub fn objective_coefficient(&self, j: usize) -> f64 {
        self.objective[j]
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
    }

    pub fn set_free(&mut self, j: usize) {
        self.set_bounds(j, f64::NEG_INFINITY, f64::INFINITY);
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) {
        self.rows.push(Row { coeffs, kind, rhs });
    }

    pub fn add_dense_row(&mut self, coeffs: &[f64], kind: RowKind, rhs: f64) {
        let sparse = coeffs
            .iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(j, a)| (j, *a))
            .collect();
        self.add_row(sparse, kind, rhs);
    }

    /// Largest violation of any row or bound at `x`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.rows {
            let lhs: f64 = row.coeffs.iter().map(|(j, a)| a * x[*j]).sum();
            let viol = match row.kind {
                RowKind::Le => lhs - row.rhs,
                RowKind::Ge => row.rhs - lhs,
                RowKind::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn maximize(&self, opts: &LpOptions) -> Result<LpOutcome> {
        let mut neg = self.clone();
        for c in &mut neg.objective {
            *c = -*c;
        }
        Ok(match neg.minimize(opts)? {
            LpOutcome::Optimal(mut s) => {
                s.objective = -s.objective;
                LpOutcome::Optimal(s)
            }
            other => other,
        })
    }

    pub fn minimize(&self, opts: &LpOptions) -> Result<LpOutcome> {
        let n = self.num_vars();
        let mut ny = 0;
        let mut transforms = Vec::with_capacity(n);
        let mut box_rows: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo > hi {
                return Ok(LpOutcome::Infeasible);
            }
            if lo.is_finite() {
                transforms.push(Transform::Shift(lo, ny));
                if hi.is_finite() {
                    box_rows.push((ny, hi - lo));
                }
                ny += 1;
            } else if hi.is_finite() {
                transforms.push(Transform::Reflect(hi, ny));
                ny += 1;
            } else {
                transforms.push(Transform::Split(ny, ny + 1));
                ny += 2;
            }
        }

        // Rows over y, as dense vectors.
        let mut rows: Vec<(Vec<f64>, RowKind, f64)> = Vec::with_capacity(self.rows.len() + box_rows.len());
        for row in &self.rows {
            let mut a = vec![0.0; ny];
            let mut rhs = row.rhs;
            for &(j, c) in &row.coeffs {
                match transforms[j] {
                    Transform::Shift(lo, y) => {
                        a[y] += c;
                        rhs -= c * lo;
                    }
                    Transform::Reflect(hi, y) => {
                        a[y] -= c;
                        rhs -= c * hi;
                    }
                    Transform::Split(p, m) => {
                        a[p] += c;
                        a[m] -= c;
                    }
                }
            }
            rows.push((a, row.kind, rhs));
        }
        for (y, width) in box_rows {
            let mut a = vec![0.0; ny];
            a[y] = 1.0;
            rows.push((a, RowKind::Le, width));
        }
        let mut cost = vec![0.0; ny];
        for (j, &c) in self.objective.iter().enumerate() {
            match transforms[j] {
                Transform::Shift(_, y) => cost[y] += c,
                Transform::Reflect(_, y) => cost[y] -= c,
                Transform::Split(p, m) => {
                    cost[p] += c;
                    cost[m] -= c;
                }
            }
        }

        let y = match solve_standard(&rows, &cost, opts)? {
            Standard::Optimal(y) => y,
            Standard::Infeasible => return Ok(LpOutcome::Infeasible),
            Standard::Unbounded => return Ok(LpOutcome::Unbounded),
        };
        let x: Vec<f64> = transforms
            .iter()
            .map(|t| match *t {
                Transform::Shift(lo, j) => lo + y[j],
                Transform::Reflect(hi, j) => hi - y[j],
                Transform::Split(p, m) => y[p] - y[m],
            })
            .collect();
        let objective = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
        let residual = self.residual(&x);
        Ok(LpOutcome::Optimal(LpSolution {
            x,
            objective,
            residual,
        }))
    }
}

enum Standard {
    Optimal(Vec<f64>),
    Infeasible,
    Unbounded,
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i][self.cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let pv = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= pv;
        }
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Runs simplex iterations on the objective row; `allowed` masks entering columns.
    fn optimize(&mut self, allowed: &[bool], opts: &LpOptions) -> Result<bool> {
        let m = self.basis.len();
        let obj = m;
        let cost_tol = 1e-11;
        let mut stall = 0usize;
        for _ in 0..opts.max_iters {
            let bland = stall > 50;
            let mut enter = None;
            let mut best = -cost_tol;
            for j in 0..self.cols {
                if !allowed[j] {
                    continue;
                }
                let rc = self.t[obj][j];
                if rc < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(c) = enter else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[i][c];
                if a > opts.pivot_tol {
                    let ratio = self.rhs(i).max(0.0) / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14
                                || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(false);
            };
            if ratio <= 1e-13 {
                stall += 1;
            } else {
                stall = 0;
            }
            self.pivot(r, c);
        }
        Err(Error::Solver {
            message: format!("simplex iteration limit {} reached", opts.max_iters),
            residual: f64::NAN,
        })
    }
}

fn solve_standard(rows: &[(Vec<f64>, RowKind, f64)], cost: &[f64], opts: &LpOptions) -> Result<Standard> {
    let ny = cost.len();
    let m = rows.len();
    // Normalize rows to nonnegative rhs.
    let normalized: Vec<(Vec<f64>, RowKind, f64)> = rows
        .iter()
        .map(|(a, kind, b)| {
            if *b < 0.0 {
                let flipped = match kind {
                    RowKind::Le => RowKind::Ge,
                    RowKind::Ge => RowKind::Le,
                    RowKind::Eq => RowKind::Eq,
                };
                (a.iter().map(|v| -v).collect(), flipped, -b)
            } else {
                (a.clone(), *kind, *b)
            }
        })
        .collect();
    let n_slack = normalized.iter().filter(|r| r.1 != RowKind::Eq).count();
    let n_art = normalized.iter().filter(|r| r.1 != RowKind::Le).count();
    let cols = ny + n_slack + n_art;
    let mut t = vec![vec![0.0; cols + 1]; m + 1];
    let mut basis = vec![0; m];
    let mut is_art = vec![false; cols];
    let mut s = ny;
    let mut a = ny + n_slack;
    for (i, (coeffs, kind, b)) in normalized.iter().enumerate() {
        t[i][..ny].copy_from_slice(coeffs);
        t[i][cols] = *b;
        match kind {
            RowKind::Le => {
                t[i][s] = 1.0;
                basis[i] = s;
                s += 1;
            }
            RowKind::Ge => {
                t[i][s] = -1.0;
                s += 1;
                t[i][a] = 1.0;
                basis[i] = a;
                is_art[a] = true;
                a += 1;
            }
            RowKind::Eq => {
                t[i][a] = 1.0;
                basis[i] = a;
                is_art[a] = true;
                a += 1;
            }
        }
    }
    let mut tab = Tableau { t, basis, cols };

    if n_art > 0 {
        // Phase one: minimize the sum of artificials.
        for j in 0..=cols {
            let mut v = if j < cols && is_art[j] { 1.0 } else { 0.0 };
            for i in 0..m {
                if is_art[tab.basis[i]] {
                    v -= tab.t[i][j];
                }
            }
            tab.t[m][j] = v;
        }
        let all = vec![true; cols];
        tab.optimize(&all, opts)?;
        let scale = normalized.iter().map(|r| r.2).fold(1.0, f64::max);
        if -tab.t[m][cols] > 1e-9 * scale {
            return Ok(Standard::Infeasible);
        }
        // Drive remaining artificials out of the basis.
        let mut i = 0;
        while i < tab.basis.len() {
            if is_art[tab.basis[i]] {
                let col = (0..cols)
                    .filter(|&j| !is_art[j])
                    .max_by(|&x, &y| tab.t[i][x].abs().total_cmp(&tab.t[i][y].abs()))
                    .filter(|&j| tab.t[i][j].abs() > opts.pivot_tol);
                match col {
                    Some(j) => {
                        tab.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        // redundant row
                        tab.t.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
    }

    // Phase two.
    let m = tab.basis.len();
    let allowed: Vec<bool> = is_art.iter().map(|a| !a).collect();
    for j in 0..=cols {
        let mut v = if j < ny { cost[j] } else { 0.0 };
        for i in 0..m {
            let bj = tab.basis[i];
            if bj < ny {
                v -= cost[bj] * tab.t[i][j];
            }
        }
        tab.t[m][j] = v;
    }
    if !tab.optimize(&allowed, opts)? {
        return Ok(Standard::Unbounded);
    }
    let mut y = vec![0.0; ny];
    for i in 0..m {
        let bj = tab.basis[i];
        if bj < ny {
            y[bj] = tab.rhs(i).max(0.0);
        }
    }
    Ok(Standard::Optimal(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_min(lp: &LinearProgram) -> LpSolution {
        lp.minimize(&LpOptions::default()).unwrap().into_optimal("test").unwrap()
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 3.0);
        lp.set_objective(1, 5.0);
        lp.add_dense_row(&[1.0, 0.0], RowKind::Le, 4.0);
        lp.add_dense_row(&[0.0, 2.0], RowKind::Le, 12.0);
        lp.add_dense_row(&[3.0, 2.0], RowKind::Le, 18.0);
        let s = lp.maximize(&LpOptions::default()).unwrap().into_optimal("t").unwrap();
        assert!((s.objective - 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn free_and_bounded_variables() {
        // min x - y with x >= -3, y <= 2, x + y = 1: optimum x = -1, y = 2
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 1.0);
        lp.set_objective(1, -1.0);
        lp.set_bounds(0, -3.0, f64::INFINITY);
        lp.set_bounds(1, f64::NEG_INFINITY, 2.0);
        lp.add_dense_row(&[1.0, 1.0], RowKind::Eq, 1.0);
        let s = solve_min(&lp);
        assert!((s.objective + 3.0).abs() < 1e-12);
        assert!(s.residual < 1e-12);

        let mut lp = LinearProgram::new(1);
        lp.set_free(0);
        lp.set_objective(0, 1.0);
        lp.add_dense_row(&[1.0], RowKind::Ge, -7.5);
        assert!((solve_min(&lp).x[0] + 7.5).abs() < 1e-12);
    }

    #[test]
    fn boxed_variables() {
        let mut lp = LinearProgram::new(3);
        for j in 0..3 {
            lp.set_bounds(j, 0.0, 0.4);
            lp.set_objective(j, -(j as f64 + 1.0));
        }
        lp.add_dense_row(&[1.0, 1.0, 1.0], RowKind::Eq, 1.0);
        let s = solve_min(&lp);
        assert!((s.objective + (0.4 * 3.0 + 0.4 * 2.0 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.add_dense_row(&[1.0], RowKind::Ge, 2.0);
        lp.add_dense_row(&[1.0], RowKind::Le, 1.0);
        assert_eq!(lp.minimize(&LpOptions::default()).unwrap(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::new(1);
        lp.set_objective(0, -1.0);
        assert_eq!(lp.minimize(&LpOptions::default()).unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 1.0);
        lp.add_dense_row(&[1.0, 1.0], RowKind::Eq, 1.0);
        lp.add_dense_row(&[2.0, 2.0], RowKind::Eq, 2.0);
        let s = solve_min(&lp);
        assert!(s.objective.abs() < 1e-12);
        assert!((s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example, which cycles under naive Dantzig pricing.
        let mut lp = LinearProgram::new(4);
        for (j, c) in [-0.75, 150.0, -0.02, 6.0].iter().enumerate() {
            lp.set_objective(j, *c);
        }
        lp.add_dense_row(&[0.25, -60.0, -0.04, 9.0], RowKind::Le, 0.0);
        lp.add_dense_row(&[0.5, -90.0, -0.02, 3.0], RowKind::Le, 0.0);
        lp.add_dense_row(&[0.0, 0.0, 1.0, 0.0], RowKind::Le, 1.0);
        let s = solve_min(&lp);
        assert!((s.objective + 0.05).abs() < 1e-12);
    }
}
