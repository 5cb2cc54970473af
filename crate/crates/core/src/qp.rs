//! Ground-reaction-force allocation as a small dense quadratic program.
//!
//! ```text
//! minimize   ½ λᵀ (AᵀW₁A + αW₂ + βW₃) λ + (−AᵀW₁b_d − βW₃λ_prev)ᵀ λ
//! subject to M_μ λ ≥ 0            (inner friction pyramid, 5 rows per foot)
//!            λ_z ≤ λ_max          (optional)
//!            |Jᵀ λ| ≤ τ_max       (optional, per leg)
//! ```
//!
//! `A` maps the stacked foot forces to the wrench about the COM. The solver
//! is a primal active-set method; `λ = 0` is always feasible, so it starts
//! there (or from a feasible warm start) and never needs a phase-one step.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Skew-symmetric cross-product matrix `[r]×`.
pub fn skew<T: Real>(r: &Vector3<T>) -> Matrix3<T> {
    let o = T::zero();
    Matrix3::new(o, -r.z, r.y, r.z, o, -r.x, -r.y, r.x, o)
}

/// Linear map from stacked foot forces to the COM wrench `[force; moment]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WrenchMap<T: Real> {
    pub matrix: DMatrix<T>,
    /// COM-to-contact vectors `r^i`.
    pub arms: Vec<Vector3<T>>,
}

impl<T: Real> WrenchMap<T> {
    pub fn contacts(&self) -> usize {
        self.arms.len()
    }

    pub fn apply(&self, lambda: &DVector<T>) -> Vector6<T> {
        let w = &self.matrix * lambda;
        Vector6::from_iterator(w.iter().copied())
    }
}

/// Builds `A = [I₃ … I₃; [r¹]× … [rᵏ]×]` for the given contact points.
pub fn build_wrench_map<T: Real>(com: &Vector3<T>, feet: &[Vector3<T>]) -> WrenchMap<T> {
    let k = feet.len();
    let mut matrix = DMatrix::zeros(6, 3 * k);
    let mut arms = Vec::with_capacity(k);
    for (i, p) in feet.iter().enumerate() {
        let r = p - com;
        matrix.fixed_view_mut::<3, 3>(0, 3 * i).copy_from(&Matrix3::identity());
        matrix.fixed_view_mut::<3, 3>(3, 3 * i).copy_from(&skew(&r));
        arms.push(r);
    }
    WrenchMap { matrix, arms }
}

/// Rows per foot of the friction pyramid.
pub const PYRAMID_ROWS: usize = 5;

/// Inner-pyramid friction constraints `M_μ λ ≥ 0` for `k` feet. Per foot the
/// rows are `λ_z`, `μλ_z − λ_x`, `μλ_z + λ_x`, `μλ_z − λ_y`, `μλ_z + λ_y`.
pub fn friction_constraints<T: Real>(k: usize, mu: T) -> DMatrix<T> {
    let mut m = DMatrix::zeros(PYRAMID_ROWS * k, 3 * k);
    let one = T::one();
    for i in 0..k {
        let (r, c) = (PYRAMID_ROWS * i, 3 * i);
        m[(r, c + 2)] = one;
        m[(r + 1, c)] = -one;
        m[(r + 1, c + 2)] = mu;
        m[(r + 2, c)] = one;
        m[(r + 2, c + 2)] = mu;
        m[(r + 3, c + 1)] = -one;
        m[(r + 3, c + 2)] = mu;
        m[(r + 4, c + 1)] = one;
        m[(r + 4, c + 2)] = mu;
    }
    m
}

/// Weights of the allocation cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpWeights<T> {
    /// Diagonal of `W₁` over `[fx, fy, fz, nx, ny, nz]`.
    pub wrench: [T; 6],
    pub alpha: T,
    pub beta: T,
    /// Per-axis diagonal of `W₂`, repeated for every foot.
    pub force: [T; 3],
    /// Per-axis diagonal of `W₃`, repeated for every foot.
    pub smoothing: [T; 3],
}

impl<T: Real> Default for QpWeights<T> {
    fn default() -> Self {
        Self {
            wrench: [1.0, 1.0, 1.0, 10.0, 10.0, 10.0].map(lit),
            alpha: lit(1e-3),
            beta: lit(1e-2),
            force: [T::one(); 3],
            smoothing: [T::one(); 3],
        }
    }
}

/// `½ xᵀ H x + fᵀ x` subject to `C x ≥ d`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T: Real> {
    pub hessian: DMatrix<T>,
    pub linear: DVector<T>,
    pub constraints: DMatrix<T>,
    pub bounds: DVector<T>,
}

impl<T: Real> QpProblem<T> {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// Assembles the force-allocation program.
    pub fn grf(
        map: &WrenchMap<T>,
        desired: &Vector6<T>,
        weights: &QpWeights<T>,
        previous: &DVector<T>,
        mu: T,
        max_normal: Option<T>,
    ) -> Result<Self> {
        let k = map.contacts();
        let n = 3 * k;
        if previous.len() != n {
            return Err(Error::Validation(format!("previous force vector has {} entries, expected {n}", previous.len())));
        }
        if !(weights.alpha >= T::zero() && weights.beta >= T::zero()) {
            return Err(Error::Validation("alpha and beta must be nonnegative".into()));
        }
        let w1 = DMatrix::from_diagonal(&DVector::from_row_slice(&weights.wrench));
        let w2 = DVector::from_fn(n, |i, _| weights.force[i % 3]);
        let w3 = DVector::from_fn(n, |i, _| weights.smoothing[i % 3]);
        let at_w1 = map.matrix.transpose() * &w1;
        let mut hessian = &at_w1 * &map.matrix;
        for i in 0..n {
            hessian[(i, i)] += weights.alpha * w2[i] + weights.beta * w3[i];
        }
        let b = DVector::from_iterator(6, desired.iter().copied());
        let linear = -(&at_w1 * b) - previous.component_mul(&w3) * weights.beta;
        let mut constraints = friction_constraints(k, mu);
        let mut bounds = DVector::zeros(constraints.nrows());
        if let Some(limit) = max_normal {
            let rows = constraints.nrows();
            constraints = constraints.insert_rows(rows, k, T::zero());
            bounds = bounds.insert_rows(rows, k, T::zero());
            for i in 0..k {
                constraints[(rows + i, 3 * i + 2)] = -T::one();
                bounds[rows + i] = -limit;
            }
        }
        let problem = Self { hessian, linear, constraints, bounds };
        problem.check_positive_definite()?;
        Ok(problem)
    }

    /// Appends actuator limits `|Jᵢᵀ λᵢ| ≤ τ_max` per foot, where `Jᵢ` maps
    /// the leg's joint rates to its foot velocity. Six rows per foot; `λ = 0`
    /// stays feasible.
    pub fn with_torque_limits(mut self, jacobians: &[Matrix3<T>], limits: &Vector3<T>) -> Result<Self> {
        let k = jacobians.len();
        if 3 * k != self.dim() {
            return Err(Error::Validation(format!("{k} leg jacobians for {} force entries", self.dim())));
        }
        if limits.iter().any(|l| !(*l > T::zero())) {
            return Err(Error::Validation("torque limits must be positive".into()));
        }
        let rows = self.constraints.nrows();
        self.constraints = self.constraints.insert_rows(rows, 6 * k, T::zero());
        self.bounds = self.bounds.insert_rows(rows, 6 * k, T::zero());
        for (i, j) in jacobians.iter().enumerate() {
            let jt = j.transpose();
            for r in 0..3 {
                for c in 0..3 {
                    self.constraints[(rows + 6 * i + r, 3 * i + c)] = jt[(r, c)];
                    self.constraints[(rows + 6 * i + 3 + r, 3 * i + c)] = -jt[(r, c)];
                }
                self.bounds[rows + 6 * i + r] = -limits[r];
                self.bounds[rows + 6 * i + 3 + r] = -limits[r];
            }
        }
        Ok(self)
    }

    pub fn check_positive_definite(&self) -> Result<()> {
        if nalgebra::Cholesky::new(self.hessian.clone()).is_none() {
            return Err(Error::Validation("QP Hessian is not positive definite (alpha or beta must be > 0)".into()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<T>) -> T {
        (x.transpose() * &self.hessian * x)[0] * lit(0.5) + self.linear.dot(x)
    }

    /// Constraint slack `C x − d`.
    pub fn slack(&self, x: &DVector<T>) -> DVector<T> {
        &self.constraints * x - &self.bounds
    }
}

/// Minimizer with its optimality certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct GrfSolution<T: Real> {
    pub lambda: DVector<T>,
    /// Lagrange multipliers, one per constraint row (zero when inactive).
    pub multipliers: DVector<T>,
    pub active: Vec<usize>,
    pub iterations: usize,
    /// `‖H λ + f − Cᵀ ν‖∞`.
    pub stationarity: T,
}

impl<T: Real> GrfSolution<T> {
    /// Force of foot `i` (in stacking order).
    pub fn foot(&self, i: usize) -> Vector3<T> {
        Vector3::new(self.lambda[3 * i], self.lambda[3 * i + 1], self.lambda[3 * i + 2])
    }
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Relative tolerance for step length, feasibility and multiplier signs.
    pub tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { max_iterations: 200, tolerance: 1e-10 }
    }
}

/// Primal active-set solver that remembers its last working set.
#[derive(Debug, Clone)]
pub struct ActiveSetSolver<T: Real> {
    pub settings: SolverSettings,
    last: Option<(DVector<T>, Vec<usize>)>,
}

impl<T: Real> Default for ActiveSetSolver<T> {
    fn default() -> Self {
        Self::new(SolverSettings::default())
    }
}

impl<T: Real> ActiveSetSolver<T> {
    pub fn new(settings: SolverSettings) -> Self {
        Self { settings, last: None }
    }

    /// Forgets the warm-start state.
    pub fn reset(&mut self) {
        self.last = None;
    }

    /// Solves from `λ = 0` with an empty working set.
    pub fn solve_cold(&mut self, problem: &QpProblem<T>) -> Result<GrfSolution<T>> {
        let x0 = DVector::zeros(problem.dim());
        let sol = solve_from(problem, x0, Vec::new(), &self.settings)?;
        self.last = Some((sol.lambda.clone(), sol.active.clone()));
        Ok(sol)
    }

    /// Solves starting from the previous solution when it is still feasible
    /// and of the right size, otherwise cold.
    pub fn solve(&mut self, problem: &QpProblem<T>) -> Result<GrfSolution<T>> {
        let start = match self.last.take() {
            Some((x, w)) if x.len() == problem.dim() => {
                let slack = problem.slack(&x);
                let tol = feas_tol(problem, &x, &self.settings);
                if slack.iter().all(|s| *s >= -tol) {
                    let w: Vec<usize> = w.into_iter().filter(|&i| slack[i].abs() <= tol).collect();
                    Some((x, w))
                } else {
                    None
                }
            }
            _ => None,
        };
        let sol = match start {
            Some((x, w)) => solve_from(problem, x, w, &self.settings)?,
            None => solve_from(problem, DVector::zeros(problem.dim()), Vec::new(), &self.settings)?,
        };
        self.last = Some((sol.lambda.clone(), sol.active.clone()));
        Ok(sol)
    }
}

fn feas_tol<T: Real>(_problem: &QpProblem<T>, x: &DVector<T>, settings: &SolverSettings) -> T {
    lit::<T>(settings.tolerance) * (T::one() + x.amax())
}

/// Equality-constrained step: returns `(p, ν)` solving
/// `H p − C_Wᵀ ν = −g`, `C_W p = 0`.
fn eqp_step<T: Real>(h: &DMatrix<T>, g: &DVector<T>, cw: &DMatrix<T>) -> Option<(DVector<T>, DVector<T>)> {
    let n = h.nrows();
    let m = cw.nrows();
    if m == 0 {
        let chol = nalgebra::Cholesky::new(h.clone())?;
        return Some((chol.solve(&(-g)), DVector::zeros(0)));
    }
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    kkt.view_mut((0, n), (n, m)).copy_from(&(-cw.transpose()));
    kkt.view_mut((n, 0), (m, n)).copy_from(cw);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-g));
    let sol = kkt.lu().solve(&rhs)?;
    Some((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

/// Whether `row` has a component outside the row space of `cw`.
fn independent_of<T: Real>(cw: &DMatrix<T>, row: &DVector<T>) -> bool {
    if cw.nrows() == 0 {
        return row.amax() > T::zero();
    }
    let gram = cw * cw.transpose();
    let Some(chol) = nalgebra::Cholesky::new(gram) else {
        return false;
    };
    let coeffs = chol.solve(&(cw * row));
    let residual = row - cw.transpose() * coeffs;
    residual.norm() > lit::<T>(1e-8) * row.norm()
}

fn solve_from<T: Real>(
    problem: &QpProblem<T>,
    mut x: DVector<T>,
    mut working: Vec<usize>,
    settings: &SolverSettings,
) -> Result<GrfSolution<T>> {
    let n = problem.dim();
    let c = &problem.constraints;
    let h = &problem.hessian;
    let tol = lit::<T>(settings.tolerance);
    let scale_g = T::one() + problem.linear.amax() + h.amax();
    // After an unblocked full step `x` is the working-set minimizer, up to
    // rounding that can keep `p` just above the tolerance.
    let mut at_minimizer = false;
    for iteration in 1..=settings.max_iterations {
        let g = h * &x + &problem.linear;
        let cw = DMatrix::from_fn(working.len(), n, |r, j| c[(working[r], j)]);
        let (p, nu) = match eqp_step(h, &g, &cw) {
            Some(v) => v,
            None => {
                // Dependent working rows: drop the newest and retry.
                working.pop();
                continue;
            }
        };
        let step_scale = T::one() + x.amax();
        if at_minimizer || p.amax() <= tol * step_scale {
            at_minimizer = false;
            // Stationary on the working set: check multiplier signs.
            let (worst, worst_val) =
                nu.iter().enumerate().fold((None, T::zero()), |(wi, wv), (i, v)| if *v < wv { (Some(i), *v) } else { (wi, wv) });
            if worst.is_none() || worst_val >= -tol * scale_g {
                return Ok(finish(problem, x, &working, &nu, iteration));
            }
            working.remove(worst.unwrap());
            continue;
        }
        // Ratio test over constraints outside the working set. Ties at a
        // degenerate vertex go to the lowest index, skipping rows already in
        // the span of the working set: they only look blocking by rounding.
        let cp = c * &p;
        let slack = problem.slack(&x);
        let descent_tol = lit::<T>(1e-12) * p.amax();
        let mut candidates: Vec<(T, usize)> = (0..c.nrows())
            .filter(|&i| cp[i] < -descent_tol && !working.contains(&i))
            .map(|i| (slack[i].max(T::zero()) / -cp[i], i))
            .filter(|(ratio, _)| *ratio < T::one())
            .collect();
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        let blocker = candidates.into_iter().find(|&(_, i)| independent_of(&cw, &c.row(i).transpose()));
        let (alpha, blocking) = match blocker {
            Some((ratio, i)) => (ratio, Some(i)),
            None => (T::one(), None),
        };
        x += &p * alpha;
        match blocking {
            Some(i) => working.push(i),
            None => at_minimizer = true,
        }
    }
    let g = h * &x + &problem.linear;
    Err(Error::QpIterationLimit { iterations: settings.max_iterations, residual: to_f64(g.amax()) })
}

fn finish<T: Real>(problem: &QpProblem<T>, x: DVector<T>, working: &[usize], nu: &DVector<T>, iterations: usize) -> GrfSolution<T> {
    let mut multipliers = DVector::zeros(problem.constraints.nrows());
    for (k, &i) in working.iter().enumerate() {
        multipliers[i] = nu[k].max(T::zero());
    }
    let residual = &problem.hessian * &x + &problem.linear - problem.constraints.transpose() * &multipliers;
    let mut active = working.to_vec();
    active.sort_unstable();
    GrfSolution { lambda: x, multipliers, active, iterations, stationarity: residual.amax() }
}

/// Checks KKT conditions of a candidate solution; returns
/// `(stationarity, worst violation, worst complementarity)`.
pub fn kkt_report<T: Real>(problem: &QpProblem<T>, sol: &GrfSolution<T>) -> (T, T, T) {
    let slack = problem.slack(&sol.lambda);
    let violation = slack.iter().fold(T::zero(), |m, s| m.max(-*s));
    let comp = slack.iter().zip(sol.multipliers.iter()).fold(T::zero(), |m, (s, v)| m.max((*s * *v).abs()));
    (sol.stationarity, violation, comp)
}
