//! Newton's method with exact linesearch on
//! `ℓ(v) = ½vᵀAv − rᵀv + Σ sᵢ·ℓᵢ(Jᵢv − bᵢ)`.
//!
//! Convergence is declared on a scaled gradient norm or on an estimate of
//! the remaining distance from the contraction rate of successive updates.
//! The Hessian factorization can be reused across iterations and across
//! solves while the observed contraction promises convergence within the
//! desired iteration budget.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector3};
use serde::Serialize;

use crate::contact::{contact_potential, effort_limit_potential, limit_potential, ContactPotentialData, LimitData};
use crate::error::{Error, Result};
use crate::linalg::SparseRows;
use crate::model::LinesearchInit;

/// Potential attached to one constraint block.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Contact(ContactPotentialData),
    Limit(LimitData),
    /// Effort-limited linear actuation `clamp(−c·v + b, −e, e)`.
    Effort { c: f64, b: f64, e: f64, dt: f64 },
}

/// A block `sᵢ·ℓᵢ(Jᵢ v − bᵢ)` of the constraint cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub jacobian: SparseRows,
    /// Velocity offset `bᵢ` subtracted from `Jᵢ v` (moving surfaces).
    pub offset: [f64; 3],
    /// Weight `sᵢ`; `½` for trapezoid contact terms.
    pub weight: f64,
    pub potential: Potential,
}

struct BlockEval {
    value: f64,
    gradient: [f64; 3],
    hessian: [f64; 9],
}

impl Constraint {
    fn local_velocity(&self, v: &DVector<f64>) -> [f64; 3] {
        let mut u = [0.0; 3];
        self.jacobian.mul_into(v, &mut u);
        for (a, b) in u.iter_mut().zip(&self.offset) {
            *a -= b;
        }
        u
    }

    fn evaluate(&self, u: &[f64; 3]) -> BlockEval {
        match &self.potential {
            Potential::Contact(data) => {
                let e = contact_potential(&Vector3::new(u[0], u[1], u[2]), data);
                let mut hessian = [0.0; 9];
                hessian.copy_from_slice(e.hessian.transpose().as_slice());
                BlockEval { value: e.value, gradient: [e.gradient.x, e.gradient.y, e.gradient.z], hessian }
            }
            Potential::Limit(data) => {
                let e = limit_potential(u[0], data);
                BlockEval { value: e.value, gradient: [e.gradient, 0.0, 0.0], hessian: [e.hessian, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0] }
            }
            Potential::Effort { c, b, e, dt } => {
                let p = effort_limit_potential(u[0], *c, *b, *e, *dt);
                BlockEval { value: p.value, gradient: [p.gradient, 0.0, 0.0], hessian: [p.hessian, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0] }
            }
        }
    }

    /// Constraint impulse `γ = −∇ℓᵢ` in local coordinates at `v`.
    pub fn impulse(&self, v: &DVector<f64>) -> [f64; 3] {
        let g = self.evaluate(&self.local_velocity(v)).gradient;
        [-g[0], -g[1], -g[2]]
    }
}

/// The unconstrained convex problem of one time step.
#[derive(Debug, Clone)]
pub struct ConvexProblem {
    pub a: DMatrix<f64>,
    pub r: DVector<f64>,
    pub constraints: Vec<Constraint>,
}

impl ConvexProblem {
    pub fn new(a: DMatrix<f64>, r: DVector<f64>) -> Self {
        Self { a, r, constraints: Vec::new() }
    }

    pub fn nv(&self) -> usize {
        self.r.len()
    }

    pub fn cost(&self, v: &DVector<f64>) -> f64 {
        let quad = 0.5 * v.dot(&(&self.a * v)) - self.r.dot(v);
        quad + self.constraints.iter().map(|c| c.weight * c.evaluate(&c.local_velocity(v)).value).sum::<f64>()
    }

    /// `(ℓ(v), ∇ℓ(v))`.
    pub fn cost_and_gradient(&self, v: &DVector<f64>) -> (f64, DVector<f64>) {
        let av = &self.a * v;
        let mut cost = 0.5 * v.dot(&av) - self.r.dot(v);
        let mut g = av - &self.r;
        for c in &self.constraints {
            let e = c.evaluate(&c.local_velocity(v));
            cost += c.weight * e.value;
            c.jacobian.add_transpose_mul(&e.gradient, c.weight, &mut g);
        }
        (cost, g)
    }

    /// `∇²ℓ(v) = A + Σ sᵢ·Jᵢᵀ∇²ℓᵢJᵢ`.
    pub fn hessian(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.a.clone();
        for c in &self.constraints {
            let e = c.evaluate(&c.local_velocity(v));
            let m = c.jacobian.rows();
            let mut block = [0.0; 9];
            for i in 0..m {
                for j in 0..m {
                    block[i * m + j] = e.hessian[i * 3 + j];
                }
            }
            c.jacobian.add_congruence(&block[..m * m], c.weight, &mut h);
        }
        h
    }

    /// Generalized constraint impulse `Σ sᵢ·Jᵢᵀγᵢ` at `v`.
    pub fn generalized_impulse(&self, v: &DVector<f64>, filter: impl Fn(&Constraint) -> bool) -> DVector<f64> {
        let mut out = DVector::zeros(self.nv());
        for c in self.constraints.iter().filter(|c| filter(c)) {
            c.jacobian.add_transpose_mul(&c.impulse(v), c.weight, &mut out);
        }
        out
    }

    /// `diag(A)^{−1/2}`.
    pub fn scaling(&self) -> DVector<f64> {
        self.a.diagonal().map(|a| 1.0 / a.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// `ε_tol`.
    pub tolerance: f64,
    /// Desired iteration count `N` for the reuse criterion.
    pub desired_iterations: usize,
    pub alpha_max: f64,
    pub reuse_hessian: bool,
    pub linesearch_init: LinesearchInit,
    pub max_iterations: usize,
    /// Keep `ℓ` after every iteration in the stats.
    pub record_costs: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            desired_iterations: 10,
            alpha_max: 1.5,
            reuse_hessian: false,
            linesearch_init: LinesearchInit::Cubic,
            max_iterations: 500,
            record_costs: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedBy {
    #[default]
    Gradient,
    VelocityChange,
    EarlyExit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct SolverStats {
    pub iterations: usize,
    pub factorizations: usize,
    pub linesearch_iterations: usize,
    pub cost_evaluations: usize,
    pub converged_by: ConvergedBy,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cost_history: Vec<f64>,
}

/// The last Hessian factorization, kept across solves.
#[derive(Debug, Clone, Default)]
pub struct HessianCache {
    factor: Option<Cholesky<f64, Dyn>>,
    /// Iterations since the factorization was computed.
    pub staleness: usize,
}

impl HessianCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.factor = None;
        self.staleness = 0;
    }

    pub fn is_empty(&self) -> bool {
        self.factor.is_none()
    }

    fn refresh(&mut self, h: DMatrix<f64>) -> Result<()> {
        let n = h.nrows();
        let factor = match Cholesky::new(h.clone()) {
            Some(f) => f,
            None => {
                // Roundoff can break definiteness when A is badly scaled.
                let shift = 1e-12 * h.diagonal().amax().max(1.0);
                Cholesky::new(h + DMatrix::identity(n, n) * shift)
                    .ok_or_else(|| Error::Internal("Hessian is not positive definite".into()))?
            }
        };
        self.factor = Some(factor);
        self.staleness = 0;
        Ok(())
    }
}

/// `(‖D g‖, ‖D r‖, ‖D⁻¹ Δv‖)` with `D = diag(M)^{−1/2}`.
pub fn scaled_norms(m_diag: &DVector<f64>, g: &DVector<f64>, r: &DVector<f64>, dv: &DVector<f64>) -> (f64, f64, f64) {
    let d = m_diag.map(|m| 1.0 / m.sqrt());
    (
        g.component_mul(&d).norm(),
        r.component_mul(&d).norm(),
        dv.component_div(&d).norm(),
    )
}

/// Restriction of `ℓ` to the line `v + αp`, evaluated in `O(n_c)` per call.
struct LineFunction<'a> {
    problem: &'a ConvexProblem,
    c0: f64,
    c1: f64,
    c2: f64,
    u: Vec<[f64; 3]>,
    w: Vec<[f64; 3]>,
    evaluations: usize,
}

impl<'a> LineFunction<'a> {
    fn new(problem: &'a ConvexProblem, v: &DVector<f64>, p: &DVector<f64>) -> Self {
        let av = &problem.a * v;
        let ap = &problem.a * p;
        let mut u = Vec::with_capacity(problem.constraints.len());
        let mut w = Vec::with_capacity(problem.constraints.len());
        for c in &problem.constraints {
            u.push(c.local_velocity(v));
            let mut wi = [0.0; 3];
            c.jacobian.mul_into(p, &mut wi);
            w.push(wi);
        }
        Self {
            problem,
            c0: 0.5 * v.dot(&av) - problem.r.dot(v),
            c1: (av - &problem.r).dot(p),
            c2: p.dot(&ap),
            u,
            w,
            evaluations: 0,
        }
    }

    /// `(ℓ(α), ℓ'(α), ℓ''(α))`.
    fn eval(&mut self, alpha: f64) -> (f64, f64, f64) {
        self.evaluations += 1;
        let mut f = self.c0 + alpha * self.c1 + 0.5 * alpha * alpha * self.c2;
        let mut df = self.c1 + alpha * self.c2;
        let mut d2f = self.c2;
        for (k, c) in self.problem.constraints.iter().enumerate() {
            let m = c.jacobian.rows();
            let (u, w) = (&self.u[k], &self.w[k]);
            let mut x = [0.0; 3];
            for i in 0..m {
                x[i] = u[i] + alpha * w[i];
            }
            let e = c.evaluate(&x);
            f += c.weight * e.value;
            let mut dot = 0.0;
            let mut quad = 0.0;
            for i in 0..m {
                dot += e.gradient[i] * w[i];
                for j in 0..m {
                    quad += w[i] * e.hessian[i * 3 + j] * w[j];
                }
            }
            df += c.weight * dot;
            d2f += c.weight * quad;
        }
        (f, df, d2f)
    }
}

/// Result of [`exact_linesearch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinesearchResult {
    pub alpha: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Minimizes `ℓ(v + αp)` over `α ∈ (0, α_max]`.
///
/// Root finding on `ℓ'` uses safeguarded Newton steps inside a shrinking
/// bracket, falling back to bisection.
pub fn exact_linesearch(
    problem: &ConvexProblem,
    v: &DVector<f64>,
    p: &DVector<f64>,
    alpha_max: f64,
    init: LinesearchInit,
) -> Result<LinesearchResult> {
    let mut line = LineFunction::new(problem, v, p);
    let (f0, d0, _) = line.eval(0.0);
    if !(d0 < 0.0) {
        return Err(Error::Internal(format!("linesearch direction is not a descent direction (ℓ'(0) = {d0:e})")));
    }
    let (f_max, d_max, _) = line.eval(alpha_max);
    if d_max <= 0.0 {
        return Ok(LinesearchResult { alpha: alpha_max, iterations: 0, evaluations: line.evaluations });
    }
    let tol = 1e-10 * d0.abs().max(1.0);
    let guess = match init {
        LinesearchInit::Cubic => cubic_minimizer(0.0, f0, d0, alpha_max, f_max, d_max),
        LinesearchInit::Fixed(a) => a,
    };
    let (mut lo, mut hi) = (0.0, alpha_max);
    let mut x = if guess > lo && guess < hi { guess } else { 0.5 * (lo + hi) };
    let mut iterations = 0;
    while iterations < 50 {
        iterations += 1;
        let (_, df, d2f) = line.eval(x);
        if df.abs() <= tol {
            break;
        }
        if df < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let newton = x - df / d2f;
        x = if d2f > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Ok(LinesearchResult { alpha: x, iterations, evaluations: line.evaluations })
}

/// Minimizer of the cubic Hermite interpolant on `[a0, a1]`.
fn cubic_minimizer(a0: f64, f0: f64, d0: f64, a1: f64, f1: f64, d1: f64) -> f64 {
    let t1 = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = t1 * t1 - d0 * d1;
    if !(disc >= 0.0) {
        return 0.5 * (a0 + a1);
    }
    let t2 = (a1 - a0).signum() * disc.sqrt();
    let denom = d1 - d0 + 2.0 * t2;
    if denom == 0.0 {
        return 0.5 * (a0 + a1);
    }
    a1 - (a1 - a0) * (d1 + t2 - t1) / denom
}

/// Minimizes `problem` starting from `v_guess`.
pub fn solve(
    problem: &ConvexProblem,
    v_guess: &DVector<f64>,
    options: &SolverOptions,
    cache: &mut HessianCache,
) -> Result<(DVector<f64>, SolverStats)> {
    let mut stats = SolverStats::default();
    let d = problem.scaling();
    let r_norm = problem.r.component_mul(&d).norm().max(1.0);
    let target = options.tolerance * r_norm;

    let mut v = v_guess.clone();
    let (cost, mut g) = problem.cost_and_gradient(&v);
    stats.cost_evaluations += 1;
    if options.record_costs {
        stats.cost_history.push(cost);
    }
    if g.component_mul(&d).norm() <= target {
        stats.converged_by = ConvergedBy::EarlyExit;
        return Ok((v, stats));
    }
    if !options.reuse_hessian {
        cache.clear();
    }

    let mut previous_step: Option<f64> = None;
    let mut recompute = cache.is_empty();
    loop {
        if stats.iterations >= options.max_iterations {
            return Err(Error::SolverStall { stats: Box::new(stats) });
        }
        let stale_shape = cache.factor.as_ref().is_some_and(|f| f.l_dirty().nrows() != problem.nv());
        if recompute || stale_shape || !options.reuse_hessian || cache.is_empty() {
            cache.refresh(problem.hessian(&v))?;
            stats.factorizations += 1;
        }
        let factor = cache.factor.as_ref().expect("factorization present");
        let p = -factor.solve(&g);
        let ls = exact_linesearch(problem, &v, &p, options.alpha_max, options.linesearch_init)?;
        stats.linesearch_iterations += ls.iterations;
        stats.cost_evaluations += ls.evaluations;
        let dv = p * ls.alpha;
        v += &dv;
        stats.iterations += 1;
        cache.staleness += 1;

        let (cost, g_new) = problem.cost_and_gradient(&v);
        stats.cost_evaluations += 1;
        if options.record_costs {
            stats.cost_history.push(cost);
        }
        g = g_new;
        if !cost.is_finite() {
            return Err(Error::Internal("non-finite cost during Newton iteration".into()));
        }
        if g.component_mul(&d).norm() <= target {
            stats.converged_by = ConvergedBy::Gradient;
            return Ok((v, stats));
        }
        let step = dv.component_div(&d).norm();
        if step == 0.0 {
            stats.converged_by = ConvergedBy::VelocityChange;
            return Ok((v, stats));
        }
        recompute = false;
        if let Some(prev) = previous_step {
            let theta = step / prev;
            if theta < 1.0 {
                let eta = theta / (1.0 - theta);
                if eta * step <= target {
                    stats.converged_by = ConvergedBy::VelocityChange;
                    return Ok((v, stats));
                }
                let remaining = options.desired_iterations.saturating_sub(stats.iterations) as i32;
                recompute = theta.powi(remaining) / (1.0 - theta) * step >= target;
            } else {
                recompute = true;
            }
        }
        previous_step = Some(step);
    }
}
