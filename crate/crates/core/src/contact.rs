//! Contact force laws and their discrete incremental potentials.
//!
//! Continuous laws feed the smooth-ODE baselines and the lagged data of the
//! convex steps. Discrete potentials are functions of one contact's
//! frame-local velocity `(v_t1, v_t2, v_n)` whose negative gradient is the
//! contact impulse.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector2, Vector3};

use crate::linalg::SparseRows;
use crate::model::ContactMaterial;

/// `f(s) = s / √(s² + 1)`.
pub fn sigmoid(s: f64) -> f64 {
    s / (s * s + 1.0).sqrt()
}

/// Friction coefficient as a function of the slip ratio `s = ‖v_t‖ / v_s`.
pub fn mu_of_s(s: f64, mu_s: f64, mu_d: f64, delta: f64) -> f64 {
    let sigma = 0.5 * (1.0 - sigmoid(s.abs() - delta) / sigmoid(delta));
    (mu_s - mu_d) * sigma + mu_d
}

/// Hunt & Crossley normal force `f_e·(1 − d·v_n)₊`.
pub fn normal_force_continuous(f_e: f64, v_n: f64, d: f64) -> f64 {
    f_e * (1.0 - d * v_n).max(0.0)
}

/// Regularized Coulomb friction `−μ(‖v_t‖/v_s)·v_t/√(‖v_t‖² + v_s²)·f_n`.
pub fn friction_force_continuous(v_t: &Vector2<f64>, f_n: f64, m: &ContactMaterial) -> Vector2<f64> {
    let speed = v_t.norm();
    let mu = mu_of_s(speed / m.stiction_tolerance, m.mu_static, m.mu_dynamic, m.transition_width);
    -v_t * (mu * f_n / (speed * speed + m.stiction_tolerance * m.stiction_tolerance).sqrt())
}

/// Continuous contact force in the contact frame `(f_t1, f_t2, f_n)` for a
/// signed distance `phi` and contact velocity `v_c`.
pub fn contact_force_continuous(phi: f64, v_c: &Vector3<f64>, m: &ContactMaterial) -> Vector3<f64> {
    let f_e = m.stiffness * (-phi).max(0.0);
    let f_n = normal_force_continuous(f_e, v_c.z, m.dissipation);
    let f_t = friction_force_continuous(&v_c.xy(), f_n, m);
    Vector3::new(f_t.x, f_t.y, f_n)
}

/// Per-contact data of the discrete potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPotentialData {
    /// Lagged normal impulse, N·s.
    pub gamma_n_prev: f64,
    /// Lagged friction coefficient.
    pub mu_lagged: f64,
    /// Elastic force at the start of the step, `−k·φ`, N.
    pub f_e: f64,
    pub k: f64,
    pub d: f64,
    pub v_s: f64,
    pub dt: f64,
}

impl ContactPotentialData {
    /// Velocity past which the normal impulse vanishes.
    fn v_max(&self) -> f64 {
        let elastic = self.f_e / (self.dt * self.k);
        if self.d > 0.0 {
            elastic.min(1.0 / self.d)
        } else {
            elastic
        }
    }

    /// `∫ γ_n`, the antiderivative of the unclamped impulse.
    fn antiderivative(&self, v: f64) -> f64 {
        let (dt, k, d, fe) = (self.dt, self.k, self.d, self.f_e);
        dt * (fe * v - (fe * d + dt * k) * v * v / 2.0 + dt * k * d * v * v * v / 3.0)
    }
}

/// `γ_n = δt·(f_e − δt·k·v_n)₊·(1 − d·v_n)₊` and its derivative.
pub fn normal_impulse(v_n: f64, data: &ContactPotentialData) -> (f64, f64) {
    let elastic = data.f_e - data.dt * data.k * v_n;
    let damping = 1.0 - data.d * v_n;
    if elastic <= 0.0 || damping <= 0.0 {
        // At exactly the kink take the derivative from below.
        if v_n <= data.v_max() {
            return (0.0, -data.dt * (data.dt * data.k * damping.max(0.0) + data.d * elastic.max(0.0)));
        }
        return (0.0, 0.0);
    }
    let gamma = data.dt * elastic * damping;
    let dgamma = -data.dt * (data.dt * data.k * damping + data.d * elastic);
    (gamma, dgamma)
}

/// Value, gradient and Hessian of a scalar or 3-vector potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialEval<G, H> {
    pub value: f64,
    pub gradient: G,
    pub hessian: H,
}

pub type ContactEval = PotentialEval<Vector3<f64>, Matrix3<f64>>;
pub type ScalarEval = PotentialEval<f64, f64>;

/// Normal part `ℓ_n(v_n) = −∫₀^{v_n} γ_n(s) ds`.
pub fn normal_potential(v_n: f64, data: &ContactPotentialData) -> ScalarEval {
    let v_max = data.v_max();
    let value = -(data.antiderivative(v_n.min(v_max)) - data.antiderivative(0f64.min(v_max)));
    let (gamma, dgamma) = normal_impulse(v_n, data);
    PotentialEval { value, gradient: -gamma, hessian: -dgamma }
}

/// Lagged friction part `ℓ_t(v_t) = μ·γ_prev·√(‖v_t‖² + v_s²)`.
pub fn friction_potential(v_t: &Vector2<f64>, data: &ContactPotentialData) -> PotentialEval<Vector2<f64>, nalgebra::Matrix2<f64>> {
    let scale = data.mu_lagged * data.gamma_n_prev;
    let s = (v_t.norm_squared() + data.v_s * data.v_s).sqrt();
    let value = scale * s;
    let gradient = v_t * (scale / s);
    let hessian = (nalgebra::Matrix2::identity() / s - v_t * v_t.transpose() / (s * s * s)) * scale;
    PotentialEval { value, gradient, hessian }
}

/// Full contact potential on `v_c = (v_t1, v_t2, v_n)`; `∇ℓ = −γ`.
pub fn contact_potential(v_c: &Vector3<f64>, data: &ContactPotentialData) -> ContactEval {
    let n = normal_potential(v_c.z, data);
    let t = friction_potential(&v_c.xy(), data);
    let mut hessian = Matrix3::zeros();
    hessian.fixed_view_mut::<2, 2>(0, 0).copy_from(&t.hessian);
    hessian[(2, 2)] = n.hessian;
    ContactEval {
        value: n.value + t.value,
        gradient: Vector3::new(t.gradient.x, t.gradient.y, n.gradient),
        hessian,
    }
}

/// Near-rigid stiffness and dissipation time scale, `(k, τ)`.
pub fn near_rigid_parameters(m_eff: f64, beta: f64, dt: f64) -> (f64, f64) {
    let k = m_eff / (4.0 * std::f64::consts::PI.powi(2) * beta * beta * dt * dt);
    let tau = beta * dt / std::f64::consts::PI;
    (k, tau)
}

/// One-sided limit on a scalar constraint coordinate `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitData {
    pub c: f64,
    pub lower: f64,
    pub upper: f64,
    pub k: f64,
    pub tau: f64,
    pub dt: f64,
}

impl LimitData {
    pub fn new(c: f64, lower: f64, upper: f64, m_eff: f64, beta: f64, dt: f64) -> Self {
        let (k, tau) = near_rigid_parameters(m_eff, beta, dt);
        Self { c, lower, upper, k, tau, dt }
    }
}

/// Sum of the lower and upper one-sided quadratic limit costs at `ċ`.
pub fn limit_potential(c_dot: f64, data: &LimitData) -> ScalarEval {
    let h = data.dt + data.tau;
    let w = data.dt * h * data.k;
    let v_lower = (data.lower - data.c) / h;
    let v_upper = (data.upper - data.c) / h;
    let mut out = PotentialEval { value: 0.0, gradient: 0.0, hessian: 0.0 };
    let below = v_lower - c_dot;
    if below > 0.0 {
        out.value += 0.5 * w * below * below;
        out.gradient -= w * below;
        out.hessian += w;
    }
    let above = c_dot - v_upper;
    if above > 0.0 {
        out.value += 0.5 * w * above * above;
        out.gradient += w * above;
        out.hessian += w;
    }
    out
}

/// Cost whose negative gradient is `δt·clamp(−c·v + b, −e, e)`.
pub fn effort_limit_potential(v: f64, c: f64, b: f64, e: f64, dt: f64) -> ScalarEval {
    if c <= 0.0 {
        let tau = b.clamp(-e, e);
        return PotentialEval { value: -dt * tau * v, gradient: -dt * tau, hessian: 0.0 };
    }
    let y = -c * v + b;
    if y >= e {
        let v_e = (b - e) / c;
        PotentialEval { value: dt * (-e * (v - v_e) + e * e / (2.0 * c)), gradient: -dt * e, hessian: 0.0 }
    } else if y <= -e {
        let v_e = (b + e) / c;
        PotentialEval { value: dt * (e * (v - v_e) + e * e / (2.0 * c)), gradient: dt * e, hessian: 0.0 }
    } else {
        PotentialEval { value: dt * (c * v - b).powi(2) / (2.0 * c), gradient: dt * (c * v - b), hessian: dt * c }
    }
}

/// `‖W_ii‖⁻¹` with `W = G·M⁻¹·Gᵀ` for the rows in `g`; the RMS entry norm
/// is used for multi-row blocks.
pub fn effective_mass(g: &SparseRows, mass_chol: &Cholesky<f64, Dyn>) -> f64 {
    let nv = mass_chol.l_dirty().nrows();
    let dense: DMatrix<f64> = g.to_dense(nv);
    let minv_gt = mass_chol.solve(&dense.transpose());
    let w = &dense * minv_gt;
    let rows = g.rows() as f64;
    let norm = if g.rows() == 1 { w[(0, 0)].abs() } else { w.norm() / rows.sqrt() };
    1.0 / norm
}

/// Convenience: Cholesky of a dense SPD mass matrix.
pub fn mass_cholesky(mass: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(mass.clone())
}

/// Sum of `Jᵀf` over contacts, used for generalized contact impulses.
pub fn generalized_from_frame(jacobian: &SparseRows, f: &Vector3<f64>, nv: usize) -> DVector<f64> {
    let mut out = DVector::zeros(nv);
    jacobian.add_transpose_mul(f.as_slice(), 1.0, &mut out);
    out
}
