//! Dense revised simplex for small equality-constrained linear programs.
//!
//! Problems have the form `min/max cᵀx  s.t.  Ax = b, x ≥ lb`. The solver is a
//! two-phase revised simplex with an explicit basis inverse and Bland's rule for
//! both the entering and leaving choice, so a fixed input always follows the same
//! pivot path.
//!
//! Duals `y` are reported for the equality rows with the convention that the
//! reduced cost `cⱼ − yᵀAⱼ` is nonnegative (minimize) or nonpositive (maximize)
//! for every column and zero on the final basis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const REFACTOR_EVERY: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub sense: Sense,
    pub objective: Vec<f64>,
    /// Row-major equality matrix, one `Vec` per constraint.
    pub constraints: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower_bounds: Vec<f64>,
}

impl LpProblem {
    /// Problem with all lower bounds at zero.
    pub fn new(sense: Sense, objective: Vec<f64>, constraints: Vec<Vec<f64>>, rhs: Vec<f64>) -> Self {
        let n = objective.len();
        LpProblem { sense, objective, constraints, rhs, lower_bounds: vec![0.0; n] }
    }

    pub fn with_lower_bounds(mut self, lower_bounds: Vec<f64>) -> Self {
        self.lower_bounds = lower_bounds;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.constraints.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if n == 0 {
            return Err(Error::Input("linear program has no variables".into()));
        }
        if self.rhs.len() != self.constraints.len() {
            return Err(Error::Input(format!(
                "{} constraint rows but {} right-hand-side entries",
                self.constraints.len(),
                self.rhs.len()
            )));
        }
        if self.lower_bounds.len() != n {
            return Err(Error::Input(format!("{} variables but {} lower bounds", n, self.lower_bounds.len())));
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Input(format!("constraint row {i} has {} entries, expected {n}", row.len())));
            }
        }
        let all_finite = self.objective.iter().chain(self.rhs.iter()).chain(self.lower_bounds.iter()).all(|v| v.is_finite())
            && self.constraints.iter().flatten().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Input("linear program contains non-finite coefficients".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    pub objective: f64,
    pub duals: Vec<f64>,
    pub pivots: usize,
}

/// Residuals certifying an optimal solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpResiduals {
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
    pub complementary_slackness: f64,
    pub duality_gap: f64,
}

impl LpResiduals {
    pub fn max(&self) -> f64 {
        self.primal_feasibility.max(self.dual_feasibility).max(self.complementary_slackness).max(self.duality_gap)
    }
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Reduced cost `cⱼ − yᵀAⱼ` of every column.
    pub fn reduced_costs(&self, problem: &LpProblem) -> Vec<f64> {
        (0..problem.num_vars())
            .map(|j| {
                problem.objective[j]
                    - problem.constraints.iter().zip(&self.duals).map(|(row, y)| row[j] * y).sum::<f64>()
            })
            .collect()
    }

    pub fn residuals(&self, problem: &LpProblem) -> LpResiduals {
        let mut primal = 0.0_f64;
        for (row, b) in problem.constraints.iter().zip(&problem.rhs) {
            let lhs: f64 = row.iter().zip(&self.primal).map(|(a, x)| a * x).sum();
            primal = primal.max((lhs - b).abs());
        }
        for (x, lb) in self.primal.iter().zip(&problem.lower_bounds) {
            primal = primal.max(lb - x);
        }
        let reduced = self.reduced_costs(problem);
        let sign = match problem.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut dual = 0.0_f64;
        let mut slack = 0.0_f64;
        for (j, d) in reduced.iter().enumerate() {
            dual = dual.max(-sign * d);
            slack = slack.max(((self.primal[j] - problem.lower_bounds[j]) * d).abs());
        }
        let dual_objective: f64 = problem.rhs.iter().zip(&self.duals).map(|(b, y)| b * y).sum::<f64>()
            + problem.lower_bounds.iter().zip(&reduced).map(|(l, d)| l * d).sum::<f64>();
        LpResiduals {
            primal_feasibility: primal,
            dual_feasibility: dual,
            complementary_slackness: slack,
            duality_gap: (self.objective - dual_objective).abs(),
        }
    }
}

/// Solves the linear program. Infeasible and unbounded problems are reported
/// through [`LpSolution::status`], not as errors.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    problem.validate()?;
    let n = problem.num_vars();
    let r = problem.num_rows();
    let sign = match problem.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let cost: Vec<f64> = problem.objective.iter().map(|c| sign * c).collect();

    // Shift to x' = x - lb and make the right-hand side nonnegative.
    let mut a = DMatrix::<f64>::zeros(r, n);
    let mut b = DVector::<f64>::zeros(r);
    let mut row_sign = vec![1.0; r];
    for i in 0..r {
        let shifted = problem.rhs[i]
            - problem.constraints[i].iter().zip(&problem.lower_bounds).map(|(a, l)| a * l).sum::<f64>();
        row_sign[i] = if shifted < 0.0 { -1.0 } else { 1.0 };
        b[i] = row_sign[i] * shifted;
        for j in 0..n {
            a[(i, j)] = row_sign[i] * problem.constraints[i][j];
        }
    }

    if r == 0 {
        // Only bounds: optimal at the lower bounds unless some cost is negative.
        if cost.iter().any(|&c| c < -COST_TOL) {
            return Ok(unbounded(n, r));
        }
        let primal = problem.lower_bounds.clone();
        let objective = problem.objective.iter().zip(&primal).map(|(c, x)| c * x).sum();
        return Ok(LpSolution { status: LpStatus::Optimal, primal, objective, duals: vec![], pivots: 0 });
    }

    let mut tableau = Simplex::new(a, b, n);
    let cap = 10 * n * r + 1000;

    // Phase 1: minimize the sum of artificials.
    let mut phase1_cost = vec![0.0; n + r];
    for c in phase1_cost.iter_mut().skip(n) {
        *c = 1.0;
    }
    match tableau.run(&phase1_cost, n + r, cap)? {
        Outcome::Optimal => {}
        Outcome::Unbounded => return Err(Error::numeric("phase 1 reported unbounded")),
    }
    let infeasibility: f64 = tableau.basic_values().iter().zip(&tableau.basis).filter(|(_, &j)| j >= n).map(|(v, _)| *v).sum();
    let scale = 1.0 + tableau.b.amax();
    if infeasibility > 1e-9 * scale {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            primal: vec![f64::NAN; n],
            objective: f64::NAN,
            duals: vec![f64::NAN; r],
            pivots: tableau.pivots,
        });
    }
    tableau.drive_out_artificials(n);

    // Phase 2 over the original columns only.
    let mut phase2_cost = vec![0.0; n + r];
    phase2_cost[..n].copy_from_slice(&cost);
    let outcome = tableau.run(&phase2_cost, n, cap)?;
    if outcome == Outcome::Unbounded {
        return Ok(unbounded(n, r));
    }

    tableau.refactor()?;
    let xb = tableau.basic_values();
    let mut primal = problem.lower_bounds.clone();
    for (pos, &j) in tableau.basis.iter().enumerate() {
        if j < n {
            primal[j] += xb[pos].max(0.0);
        }
    }
    let cb = DVector::from_iterator(r, tableau.basis.iter().map(|&j| phase2_cost[j]));
    let y = tableau.binv.transpose() * cb;
    let duals: Vec<f64> = (0..r).map(|i| sign * row_sign[i] * y[i]).collect();
    let objective = problem.objective.iter().zip(&primal).map(|(c, x)| c * x).sum();
    Ok(LpSolution { status: LpStatus::Optimal, primal, objective, duals, pivots: tableau.pivots })
}

fn unbounded(n: usize, r: usize) -> LpSolution {
    LpSolution {
        status: LpStatus::Unbounded,
        primal: vec![f64::NAN; n],
        objective: f64::NAN,
        duals: vec![f64::NAN; r],
        pivots: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

/// Convenience front end that accepts free variables and inequality rows and
/// lowers them to the equality standard form.
#[derive(Debug, Clone)]
pub struct LpBuilder {
    sense: Sense,
    costs: Vec<f64>,
    free: Vec<bool>,
    rows: Vec<(Vec<(usize, f64)>, RowKind, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    /// One dual per added row, same sign convention as [`solve_lp`].
    pub duals: Vec<f64>,
}

impl LpBuilder {
    pub fn new(sense: Sense) -> Self {
        LpBuilder { sense, costs: Vec::new(), free: Vec::new(), rows: Vec::new() }
    }

    /// Adds a variable that is either free or constrained to be nonnegative.
    pub fn var(&mut self, cost: f64, free: bool) -> usize {
        self.costs.push(cost);
        self.free.push(free);
        self.costs.len() - 1
    }

    pub fn row(&mut self, coefficients: Vec<(usize, f64)>, kind: RowKind, rhs: f64) {
        self.rows.push((coefficients, kind, rhs));
    }

    pub fn solve(&self) -> Result<BuiltSolution> {
        let mut column_of = Vec::with_capacity(self.costs.len());
        let mut objective = Vec::new();
        for (j, &c) in self.costs.iter().enumerate() {
            column_of.push(objective.len());
            objective.push(c);
            if self.free[j] {
                objective.push(-c);
            }
        }
        let structural = objective.len();
        let slacks = self.rows.iter().filter(|r| r.1 != RowKind::Eq).count();
        let width = structural + slacks;
        objective.resize(width, 0.0);
        let mut constraints = Vec::with_capacity(self.rows.len());
        let mut rhs = Vec::with_capacity(self.rows.len());
        let mut slack = structural;
        for (coefficients, kind, b) in &self.rows {
            let mut row = vec![0.0; width];
            for &(j, a) in coefficients {
                let col = column_of[j];
                row[col] += a;
                if self.free[j] {
                    row[col + 1] -= a;
                }
            }
            match kind {
                RowKind::Le => {
                    row[slack] = 1.0;
                    slack += 1;
                }
                RowKind::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                }
                RowKind::Eq => {}
            }
            constraints.push(row);
            rhs.push(*b);
        }
        let sol = solve_lp(&LpProblem::new(self.sense, objective, constraints, rhs))?;
        let values = column_of
            .iter()
            .enumerate()
            .map(|(j, &col)| if self.free[j] { sol.primal[col] - sol.primal[col + 1] } else { sol.primal[col] })
            .collect();
        Ok(BuiltSolution { status: sol.status, values, objective: sol.objective, duals: sol.duals })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Optimal,
    Unbounded,
}

/// Working state: columns `0..n` are structural, `n..n+r` artificial.
struct Simplex {
    a: DMatrix<f64>,
    b: DVector<f64>,
    n: usize,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
    pivots: usize,
    since_refactor: usize,
}

impl Simplex {
    fn new(a: DMatrix<f64>, b: DVector<f64>, n: usize) -> Self {
        let r = a.nrows();
        Simplex {
            xb: b.clone(),
            a,
            b,
            n,
            basis: (n..n + r).collect(),
            binv: DMatrix::identity(r, r),
            pivots: 0,
            since_refactor: 0,
        }
    }

    fn column(&self, j: usize) -> DVector<f64> {
        if j < self.n {
            self.a.column(j).into_owned()
        } else {
            let mut e = DVector::zeros(self.a.nrows());
            e[j - self.n] = 1.0;
            e
        }
    }

    fn basic_values(&self) -> Vec<f64> {
        self.xb.iter().copied().collect()
    }

    fn refactor(&mut self) -> Result<()> {
        let r = self.a.nrows();
        let mut bmat = DMatrix::<f64>::zeros(r, r);
        for (pos, &j) in self.basis.iter().enumerate() {
            bmat.set_column(pos, &self.column(j));
        }
        self.binv = bmat.try_inverse().ok_or_else(|| Error::numeric("basis matrix became singular"))?;
        self.xb = &self.binv * &self.b;
        self.since_refactor = 0;
        Ok(())
    }

    /// Runs simplex iterations with Bland's rule, entering only columns `< allowed`.
    fn run(&mut self, cost: &[f64], allowed: usize, cap: usize) -> Result<Outcome> {
        let r = self.a.nrows();
        loop {
            let cb = DVector::from_iterator(r, self.basis.iter().map(|&j| cost[j]));
            let y = self.binv.transpose() * &cb;
            let mut entering = None;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let d = cost[j] - self.column(j).dot(&y);
                if d < -COST_TOL {
                    entering = Some(j);
                    break;
                }
            }
            let Some(q) = entering else {
                return Ok(Outcome::Optimal);
            };
            let u = &self.binv * self.column(q);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..r {
                if u[i] > PIVOT_TOL {
                    let ratio = self.xb[i].max(0.0) / u[i];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((p, _)) = leave else {
                return Ok(Outcome::Unbounded);
            };
            self.pivot(p, q, &u)?;
            if self.pivots > cap {
                return Err(Error::numeric_with(
                    format!("simplex iteration cap of {cap} pivots exceeded"),
                    [("pivots", self.pivots as f64)],
                ));
            }
        }
    }

    fn pivot(&mut self, p: usize, q: usize, u: &DVector<f64>) -> Result<()> {
        let r = self.a.nrows();
        let up = u[p];
        let prow = self.binv.row(p).into_owned() / up;
        let xp = self.xb[p] / up;
        for i in 0..r {
            if i == p {
                continue;
            }
            let f = u[i];
            if f != 0.0 {
                let updated = self.binv.row(i) - &prow * f;
                self.binv.set_row(i, &updated);
                self.xb[i] -= f * xp;
            }
        }
        self.binv.set_row(p, &prow);
        self.xb[p] = xp;
        self.basis[p] = q;
        self.pivots += 1;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        }
        Ok(())
    }

    /// Pivots zero-level artificials out of the basis where a structural column
    /// can replace them. Rows where none can are redundant and keep their artificial.
    fn drive_out_artificials(&mut self, n: usize) {
        for pos in 0..self.basis.len() {
            if self.basis[pos] < n {
                continue;
            }
            let row = self.binv.row(pos).into_owned();
            let candidate = (0..n)
                .filter(|j| !self.basis.contains(j))
                .map(|j| (j, (row.clone() * self.a.column(j))[0]))
                .find(|(_, v)| v.abs() > 1e-7);
            if let Some((q, _)) = candidate {
                let u = &self.binv * self.column(q);
                // Degenerate pivot; failures leave the artificial in place.
                let _ = self.pivot(pos, q, &u);
            }
        }
    }
}
