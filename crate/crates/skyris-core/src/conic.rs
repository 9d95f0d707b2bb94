//! Thin conic-program layer: variables with bounds, linear rows, and
//! second-order / rotated second-order / exponential cone blocks with a
//! linear objective, lowered to an interior-point solver.
//!
//! Rotated cones are rewritten as standard second-order cones at lowering
//! time, so the backend only ever sees zero, nonnegative, second-order and
//! exponential cones.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::error::{Error, Result};

/// Handle to a decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub usize);

/// Affine expression `sum coeff * var + constant`.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        LinExpr::default()
    }

    pub fn constant(c: f64) -> Self {
        LinExpr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: VarId) -> Self {
        LinExpr {
            terms: vec![(v.0, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(v: VarId, c: f64) -> Self {
        LinExpr {
            terms: vec![(v.0, c)],
            constant: 0.0,
        }
    }

    pub fn plus(mut self, other: &LinExpr) -> Self {
        self.terms.extend(other.terms.iter().copied());
        self.constant += other.constant;
        self
    }

    pub fn plus_term(mut self, v: VarId, c: f64) -> Self {
        self.terms.push((v.0, c));
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

/// One conic block over affine expressions.
#[derive(Debug, Clone)]
enum ConeBlock {
    /// `|| rest || <= top`
    Soc { top: LinExpr, rest: Vec<LinExpr> },
    /// `2 u v >= || w ||^2`, `u, v >= 0`
    Rsoc {
        u: LinExpr,
        v: LinExpr,
        w: Vec<LinExpr>,
    },
    /// `y e^{x/y} <= z`, `y >= 0`
    Exp { x: LinExpr, y: LinExpr, z: LinExpr },
}

/// A conic program with a linear objective.
#[derive(Debug, Clone, Default)]
pub struct ConicProgramSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: Vec<f64>,
    objective_constant: f64,
    /// Rows `expr == 0`.
    eqs: Vec<LinExpr>,
    /// Rows `expr <= 0`.
    les: Vec<LinExpr>,
    cones: Vec<ConeBlock>,
}

impl ConicProgramSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.lower.len()
    }

    /// Adds a variable with (possibly infinite) bounds; returns its handle.
    pub fn add_var(&mut self, lower: f64, upper: f64) -> VarId {
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.push(0.0);
        VarId(self.lower.len() - 1)
    }

    pub fn free_var(&mut self) -> VarId {
        self.add_var(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn nonneg_var(&mut self) -> VarId {
        self.add_var(0.0, f64::INFINITY)
    }

    /// Accumulates a linear objective coefficient (minimization).
    pub fn add_objective(&mut self, v: VarId, coeff: f64) {
        self.objective[v.0] += coeff;
    }

    pub fn add_objective_constant(&mut self, c: f64) {
        self.objective_constant += c;
    }

    /// Adds `expr == 0`.
    pub fn add_eq(&mut self, expr: LinExpr) {
        self.eqs.push(expr);
    }

    /// Adds `expr <= 0`.
    pub fn add_le(&mut self, expr: LinExpr) {
        self.les.push(expr);
    }

    /// Adds `|| rest || <= top`.
    pub fn add_soc(&mut self, top: LinExpr, rest: Vec<LinExpr>) {
        self.cones.push(ConeBlock::Soc { top, rest });
    }

    /// Adds `2 u v >= || w ||^2` with `u, v >= 0`.
    pub fn add_rsoc(&mut self, u: LinExpr, v: LinExpr, w: Vec<LinExpr>) {
        self.cones.push(ConeBlock::Rsoc { u, v, w });
    }

    /// Adds `y e^{x/y} <= z`; in hypograph form this is `x <= y ln(z/y)`.
    pub fn add_exp(&mut self, x: LinExpr, y: LinExpr, z: LinExpr) {
        self.cones.push(ConeBlock::Exp { x, y, z });
    }

    /// Epigraph helper: returns `t >= (expr)^{3/2}` for `expr >= 0` using
    /// two rotated cones (`y^2 <= expr`, `expr^2 <= t y`).
    pub fn add_three_halves_epigraph(&mut self, expr: LinExpr, t: VarId) {
        let y = self.nonneg_var();
        self.add_rsoc(
            expr.clone().scaled(0.5),
            LinExpr::constant(1.0),
            vec![LinExpr::var(y)],
        );
        self.add_rsoc(
            LinExpr::term(t, 0.5),
            LinExpr::var(y),
            vec![expr],
        );
    }
}

/// Termination class of a conic solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// Primal outcome of a conic solve.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub raw_status: String,
    pub x: Vec<f64>,
    pub objective: f64,
}

impl SolveOutcome {
    pub fn require_optimal(self) -> Result<SolveOutcome> {
        match self.status {
            SolveStatus::Optimal => Ok(self),
            SolveStatus::Infeasible => Err(Error::Infeasible(format!(
                "conic subproblem infeasible ({})",
                self.raw_status
            ))),
            SolveStatus::NumericalFailure => Err(Error::Solver(format!(
                "conic solve failed ({})",
                self.raw_status
            ))),
        }
    }
}

struct RowBuf {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
}

impl RowBuf {
    fn new() -> Self {
        RowBuf {
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
            b: Vec::new(),
        }
    }

    /// Appends the row `s = b - a x` where the cone slack s equals
    /// `expr(x)`, i.e. coefficients are negated and b is the constant.
    fn push_expr(&mut self, expr: &LinExpr) {
        let r = self.b.len();
        self.b.push(expr.constant);
        for &(col, coeff) in &expr.terms {
            if coeff != 0.0 {
                self.rows.push(r);
                self.cols.push(col);
                self.vals.push(-coeff);
            }
        }
    }
}

/// Solves the program, returning a near-optimal primal point or a status.
/// Never panics on solver-side numerical trouble.
pub fn solve_conic(spec: &ConicProgramSpec) -> SolveOutcome {
    let n = spec.n_vars();
    let mut buf = RowBuf::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    // Equalities (zero cone).
    for e in &spec.eqs {
        buf.push_expr(&e.clone().scaled(-1.0)); // s = -expr, forced to zero
    }
    if !spec.eqs.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(spec.eqs.len()));
    }

    // Inequalities and variable bounds (nonnegative cone): s = -expr >= 0.
    let mut n_nonneg = 0;
    for e in &spec.les {
        buf.push_expr(&e.clone().scaled(-1.0));
        n_nonneg += 1;
    }
    for i in 0..n {
        if spec.lower[i].is_finite() {
            // x_i - lb >= 0
            buf.push_expr(&LinExpr::term(VarId(i), 1.0).plus_const(-spec.lower[i]));
            n_nonneg += 1;
        }
        if spec.upper[i].is_finite() {
            // ub - x_i >= 0
            buf.push_expr(&LinExpr::term(VarId(i), -1.0).plus_const(spec.upper[i]));
            n_nonneg += 1;
        }
    }
    if n_nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_nonneg));
    }

    for block in &spec.cones {
        match block {
            ConeBlock::Soc { top, rest } => {
                buf.push_expr(top);
                for r in rest {
                    buf.push_expr(r);
                }
                cones.push(SupportedConeT::SecondOrderConeT(1 + rest.len()));
            }
            ConeBlock::Rsoc { u, v, w } => {
                // 2uv >= ||w||^2  <=>  ||(u - v, sqrt(2) w)|| <= u + v
                buf.push_expr(&u.clone().plus(v));
                buf.push_expr(&u.clone().plus(&v.clone().scaled(-1.0)));
                for wi in w {
                    buf.push_expr(&wi.clone().scaled(std::f64::consts::SQRT_2));
                }
                cones.push(SupportedConeT::SecondOrderConeT(2 + w.len()));
            }
            ConeBlock::Exp { x, y, z } => {
                buf.push_expr(x);
                buf.push_expr(y);
                buf.push_expr(z);
                cones.push(SupportedConeT::ExponentialConeT());
            }
        }
    }

    let m = buf.b.len();
    let a = CscMatrix::new_from_triplets(m, n, buf.rows, buf.cols, buf.vals);
    let p = CscMatrix::zeros((n, n));
    let settings = DefaultSettings {
        verbose: false,
        max_iter: 200,
        tol_gap_abs: 1e-9,
        tol_gap_rel: 1e-9,
        tol_feas: 1e-9,
        ..DefaultSettings::default()
    };

    let mut solver = match DefaultSolver::new(&p, &spec.objective, &a, &buf.b, &cones, settings) {
        Ok(s) => s,
        Err(e) => {
            return SolveOutcome {
                status: SolveStatus::NumericalFailure,
                raw_status: format!("setup error: {e:?}"),
                x: vec![0.0; n],
                objective: f64::NAN,
            }
        }
    };
    solver.solve();

    let raw = solver.solution.status;
    let status = match raw {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        _ => SolveStatus::NumericalFailure,
    };
    SolveOutcome {
        status,
        raw_status: format!("{raw:?}"),
        x: solver.solution.x.clone(),
        objective: solver.solution.obj_val + spec.objective_constant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_floor() {
        let mut spec = ConicProgramSpec::new();
        let x = spec.add_var(3.0, f64::INFINITY);
        spec.add_objective(x, 1.0);
        let out = solve_conic(&spec);
        assert_eq!(out.status, SolveStatus::Optimal);
        assert_relative_eq!(out.x[x.0], 3.0, epsilon = 1e-7);
    }

    #[test]
    fn log_rate_cap() {
        // maximize log2(1 + x) subject to x <= 1  ->  1 bit.
        let mut spec = ConicProgramSpec::new();
        let x = spec.add_var(0.0, 1.0);
        let t = spec.free_var();
        spec.add_objective(t, -1.0);
        // t ln2 <= ln(1 + x)  <=>  (t ln2, 1, 1 + x) in Kexp
        spec.add_exp(
            LinExpr::term(t, std::f64::consts::LN_2),
            LinExpr::constant(1.0),
            LinExpr::var(x).plus_const(1.0),
        );
        let out = solve_conic(&spec);
        assert_eq!(out.status, SolveStatus::Optimal);
        assert_relative_eq!(out.x[t.0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn norm_floor_along_direction() {
        // minimize ||v|| with v = s * (0.6, 0.8, 0) and s >= 2.
        let mut spec = ConicProgramSpec::new();
        let s = spec.add_var(2.0, f64::INFINITY);
        let t = spec.free_var();
        spec.add_objective(t, 1.0);
        spec.add_soc(
            LinExpr::var(t),
            vec![LinExpr::term(s, 0.6), LinExpr::term(s, 0.8), LinExpr::zero()],
        );
        let out = solve_conic(&spec);
        assert_eq!(out.status, SolveStatus::Optimal);
        assert_relative_eq!(out.x[t.0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn reciprocal_epigraph_via_rsoc() {
        // minimize w subject to w >= 1/nu, nu = 2.
        let mut spec = ConicProgramSpec::new();
        let nu = spec.add_var(2.0, 2.0);
        let w = spec.nonneg_var();
        spec.add_objective(w, 1.0);
        spec.add_rsoc(
            LinExpr::term(w, 0.5),
            LinExpr::var(nu),
            vec![LinExpr::constant(1.0)],
        );
        let out = solve_conic(&spec);
        assert_eq!(out.status, SolveStatus::Optimal);
        assert_relative_eq!(out.x[w.0], 0.5, epsilon = 1e-7);
    }

    #[test]
    fn three_halves_power_tower() {
        // minimize t subject to t >= e^{3/2} with e fixed at 4 -> 8.
        let mut spec = ConicProgramSpec::new();
        let e = spec.add_var(4.0, 4.0);
        let t = spec.nonneg_var();
        spec.add_objective(t, 1.0);
        spec.add_three_halves_epigraph(LinExpr::var(e), t);
        let out = solve_conic(&spec);
        assert_eq!(out.status, SolveStatus::Optimal);
        assert_relative_eq!(out.x[t.0], 8.0, max_relative = 1e-6);
    }

    #[test]
    fn infeasible_detected() {
        let mut spec = ConicProgramSpec::new();
        let x = spec.add_var(0.0, 1.0);
        spec.add_le(LinExpr::var(x).plus_const(-2.0).scaled(-1.0)); // 2 - x <= 0 -> x >= 2
        let out = solve_conic(&spec);
        assert_eq!(out.status, SolveStatus::Infeasible);
        assert!(out.require_optimal().is_err());
    }
}
