//! Dense vector/matrix arithmetic, linear forms, and a small exact LP solver.
//!
//! Everything in this module operates on plain `Vec<f64>` data. The LP solver
//! is a two-phase dense simplex with Bland's rule; determinism matters more
//! than speed at the problem sizes in scope.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Feasibility and optimality tolerance for the simplex solver.
pub const LP_TOL: f64 = 1e-8;

/// An affine function `coeffs . x + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearForm {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

impl LinearForm {
    pub fn new(coeffs: Vec<f64>, offset: f64) -> Self {
        Self { coeffs, offset }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { coeffs: vec![0.0; dim], offset: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.coeffs.len());
        dot(&self.coeffs, x) + self.offset
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
            offset: self.offset * s,
        }
    }

    pub fn add_assign(&mut self, other: &LinearForm) {
        debug_assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
        self.offset += other.offset;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `weights . x + bias` for a dense row-major `weights` of shape rows x cols.
pub fn affine_apply(weights: &[Vec<f64>], bias: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != bias.len() {
        return Err(Error::Dimension(format!(
            "weight rows {} != bias length {}",
            weights.len(),
            bias.len()
        )));
    }
    let mut out = Vec::with_capacity(weights.len());
    for (row, b) in weights.iter().zip(bias) {
        if row.len() != x.len() {
            return Err(Error::Dimension(format!(
                "weight cols {} != input length {}",
                row.len(),
                x.len()
            )));
        }
        out.push(dot(row, x) + b);
    }
    Ok(out)
}

/// A box-bounded LP: minimize `objective` over `lower <= x <= upper`
/// intersected with `form(x) >= 0` for every halfspace form.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: LinearForm,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub halfspaces: Vec<LinearForm>,
}

impl LpProblem {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.lower.len();
        if self.upper.len() != n || self.objective.dim() != n {
            return Err(Error::Dimension("lp box/objective dimension mismatch".into()));
        }
        for h in &self.halfspaces {
            if h.dim() != n {
                return Err(Error::Dimension("lp halfspace dimension mismatch".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpSolution {
    Optimal { value: f64, point: Vec<f64> },
    Infeasible,
}

impl LpSolution {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpSolution::Optimal { value, .. } => Some(*value),
            LpSolution::Infeasible => None,
        }
    }
}

/// Exact optimum of a box-bounded LP via two-phase dense simplex with
/// Bland's rule. Unbounded cannot occur: every variable carries finite
/// box bounds.
pub fn lp_solve(problem: &LpProblem) -> Result<LpSolution> {
    problem.validate()?;
    let n = problem.dim();
    for i in 0..n {
        if problem.lower[i] > problem.upper[i] {
            return Ok(LpSolution::Infeasible);
        }
    }

    // Shift y = x - lower so that y >= 0, then express the upper bounds and
    // halfspaces as rows g.y >= r.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for h in &problem.halfspaces {
        let r = -(h.offset + dot(&h.coeffs, &problem.lower));
        rows.push((h.coeffs.clone(), r));
    }
    for i in 0..n {
        let mut g = vec![0.0; n];
        g[i] = -1.0;
        rows.push((g, -(problem.upper[i] - problem.lower[i])));
    }

    let m = rows.len();
    let cap = 10 * (n + m) * (n + m) + 100;

    // Tableau columns: n structural, m surplus, then artificials, then rhs.
    // Each row is normalized to nonnegative rhs; rows whose surplus enters
    // with +1 start basic on the surplus, the rest get an artificial.
    let mut tableau: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut basis: Vec<usize> = Vec::with_capacity(m);
    let mut artificial_cols: Vec<usize> = Vec::new();
    let mut num_art = 0usize;
    for (i, (g, r)) in rows.iter().enumerate() {
        let flip = *r < 0.0;
        let sign = if flip { -1.0 } else { 1.0 };
        let mut row = vec![0.0; n + m];
        for (j, &c) in g.iter().enumerate() {
            row[j] = sign * c;
        }
        row[n + i] = -sign; // surplus for g.y >= r
        if flip {
            basis.push(n + i);
            row.push(sign * r);
            tableau.push(row);
        } else {
            num_art += 1;
            row.push(sign * r);
            tableau.push(row);
            basis.push(usize::MAX); // patched below once artificial columns exist
        }
    }
    // Insert artificial columns before the rhs.
    let total = n + m + num_art;
    let mut art_idx = 0usize;
    for (i, row) in tableau.iter_mut().enumerate() {
        let rhs = row.pop().expect("rhs present");
        row.resize(n + m + num_art, 0.0);
        if basis[i] == usize::MAX {
            let col = n + m + art_idx;
            row[col] = 1.0;
            basis[i] = col;
            artificial_cols.push(col);
            art_idx += 1;
        }
        row.push(rhs);
    }

    // Phase 1: minimize the sum of artificials.
    if num_art > 0 {
        let mut obj = vec![0.0; total + 1];
        for &c in &artificial_cols {
            obj[c] = 1.0;
        }
        for (i, &b) in basis.iter().enumerate() {
            if obj[b] != 0.0 {
                let coef = obj[b];
                for j in 0..=total {
                    obj[j] -= coef * tableau[i][j];
                }
            }
        }
        run_simplex(&mut tableau, &mut basis, &mut obj, total, cap, Some(n + m))?;
        if -obj[total] > 1e-7 {
            return Ok(LpSolution::Infeasible);
        }
        // Drive any basic artificials out (value is zero at this point).
        for i in 0..tableau.len() {
            if basis[i] >= n + m {
                let mut pivoted = false;
                for j in 0..(n + m) {
                    if tableau[i][j].abs() > LP_TOL {
                        pivot(&mut tableau, &mut basis, None, i, j, total);
                        pivoted = true;
                        break;
                    }
                }
                if !pivoted {
                    // Redundant row: zero it so it can never constrain phase 2.
                    for j in 0..=total {
                        tableau[i][j] = 0.0;
                    }
                }
            }
        }
    }

    // Phase 2: minimize the shifted objective over structural columns.
    let mut obj = vec![0.0; total + 1];
    for j in 0..n {
        obj[j] = problem.objective.coeffs[j];
    }
    for (i, &b) in basis.iter().enumerate() {
        if b < total && obj[b] != 0.0 {
            let coef = obj[b];
            for j in 0..=total {
                obj[j] -= coef * tableau[i][j];
            }
        }
    }
    run_simplex(&mut tableau, &mut basis, &mut obj, total, cap, Some(n + m))?;

    let mut y = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            y[b] = tableau[i][total];
        }
    }
    let point: Vec<f64> = (0..n)
        .map(|i| (problem.lower[i] + y[i]).clamp(problem.lower[i], problem.upper[i]))
        .collect();
    let value = problem.objective.eval(&point);
    Ok(LpSolution::Optimal { value, point })
}

/// Bland's rule simplex over an explicit tableau. `col_limit` restricts
/// entering columns (used to keep artificials out of phase 2).
fn run_simplex(
    tableau: &mut [Vec<f64>],
    basis: &mut [usize],
    obj: &mut Vec<f64>,
    total: usize,
    cap: usize,
    col_limit: Option<usize>,
) -> Result<()> {
    let limit = col_limit.unwrap_or(total);
    for _ in 0..cap {
        // Entering: smallest-index column with negative reduced cost.
        let mut entering = None;
        for j in 0..limit {
            if obj[j] < -LP_TOL {
                entering = Some(j);
                break;
            }
        }
        let Some(e) = entering else { return Ok(()) };

        // Leaving: minimum ratio; ties broken by smallest basic index (Bland).
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in tableau.iter().enumerate() {
            if row[e] > LP_TOL {
                let ratio = row[total] / row[e];
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - LP_TOL
                            || (ratio < lr + LP_TOL && basis[i] < basis[li])
                        {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((l, _)) = leave else {
            // Cannot happen on box-bounded problems.
            return Err(Error::Solver("unbounded lp on a box-bounded problem".into()));
        };
        pivot(tableau, basis, Some(obj), l, e, total);
    }
    Err(Error::Solver(format!("simplex iteration cap {cap} exceeded")))
}

fn pivot(
    tableau: &mut [Vec<f64>],
    basis: &mut [usize],
    obj: Option<&mut Vec<f64>>,
    row: usize,
    col: usize,
    total: usize,
) {
    let p = tableau[row][col];
    for j in 0..=total {
        tableau[row][j] /= p;
    }
    for i in 0..tableau.len() {
        if i != row && tableau[i][col].abs() > 0.0 {
            let f = tableau[i][col];
            for j in 0..=total {
                tableau[i][j] -= f * tableau[row][j];
            }
        }
    }
    if let Some(obj) = obj {
        if obj[col].abs() > 0.0 {
            let f = obj[col];
            for j in 0..=total {
                obj[j] -= f * tableau[row][j];
            }
        }
    }
    basis[row] = col;
}
