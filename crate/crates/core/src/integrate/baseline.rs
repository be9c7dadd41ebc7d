//! Smooth-ODE baselines: Bogacki–Shampine 3(2) and implicit Euler with
//! step doubling, both on `M v̇ = −k + τ + Jᵀf(x)`, `q̇ = N v`, `ż = h`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::contact::contact_force_continuous;
use crate::dynamics::{apply_kinematic_map, dynamics_terms, normalize_quaternions, Kinematics};
use crate::error::{Error, Result};
use crate::external::Controller;
use crate::geometry::query_contacts_with;
use crate::model::Model;

use super::icf::Counters;

/// `(q̇, v̇, ż)` of the continuous model.
pub fn smooth_ode_rhs(
    model: &Model,
    controller: &Controller,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    z: &DVector<f64>,
    counters: &mut Counters,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    if model.has_limits() {
        return Err(Error::Configuration("smooth-ODE baselines do not support joint limits".into()));
    }
    let start = Instant::now();
    let kin = Kinematics::compute(model, q);
    let contacts = query_contacts_with(model, &kin, t);
    counters.geometry_queries += 1;
    counters.geometry_time += start.elapsed();

    let start = Instant::now();
    let terms = dynamics_terms(model, q, v);
    let mut force = -terms.bias;
    for c in &contacts {
        let vc = c.contact_velocity(model, v, t);
        let f = contact_force_continuous(c.phi, &vc, &c.material);
        c.jacobian.add_transpose_mul(f.as_slice(), 1.0, &mut force);
    }
    let (tau, zdot) = controller.evaluate(t, z, q, v);
    force += tau;
    let vdot = terms
        .mass
        .cholesky()
        .ok_or_else(|| Error::Internal("mass matrix is not positive definite".into()))?
        .solve(&force);
    counters.assembly_time += start.elapsed();
    Ok((apply_kinematic_map(model, q, v), vdot, zdot))
}

/// Packs `[q; v; z]`.
pub fn pack(q: &DVector<f64>, v: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(q.len() + v.len() + z.len());
    y.rows_mut(0, q.len()).copy_from(q);
    y.rows_mut(q.len(), v.len()).copy_from(v);
    y.rows_mut(q.len() + v.len(), z.len()).copy_from(z);
    y
}

pub fn unpack(model: &Model, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let (nq, nv) = (model.nq, model.nv);
    (
        y.rows(0, nq).into_owned(),
        y.rows(nq, nv).into_owned(),
        y.rows(nq + nv, y.len() - nq - nv).into_owned(),
    )
}

/// The baseline right-hand side on the packed state.
pub struct OdeSystem<'a> {
    pub model: &'a Model,
    pub controller: &'a Controller,
}

impl OdeSystem<'_> {
    pub fn eval(&self, t: f64, y: &DVector<f64>, counters: &mut Counters) -> Result<DVector<f64>> {
        let (q, v, z) = unpack(self.model, y);
        let (qd, vd, zd) = smooth_ode_rhs(self.model, self.controller, t, &q, &v, &z, counters)?;
        Ok(pack(&qd, &vd, &zd))
    }

    pub fn renormalize(&self, y: &mut DVector<f64>) {
        let mut q = y.rows(0, self.model.nq).into_owned();
        normalize_quaternions(self.model, &mut q);
        y.rows_mut(0, self.model.nq).copy_from(&q);
    }
}

/// One Bogacki–Shampine step: `(y₃, y₃ − y₂, f(t + h, y₃))`.
///
/// `k1` is the derivative at `(t, y)`, reused from the previous accepted
/// step (first same as last).
pub fn rk3_step(
    sys: &OdeSystem,
    t: f64,
    y: &DVector<f64>,
    k1: &DVector<f64>,
    h: f64,
    counters: &mut Counters,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let k2 = sys.eval(t + 0.5 * h, &(y + k1 * (0.5 * h)), counters)?;
    let k3 = sys.eval(t + 0.75 * h, &(y + &k2 * (0.75 * h)), counters)?;
    let y3 = y + (k1 * (2.0 / 9.0) + &k2 * (1.0 / 3.0) + &k3 * (4.0 / 9.0)) * h;
    let k4 = sys.eval(t + h, &y3, counters)?;
    let y2 = y + (k1 * (7.0 / 24.0) + &k2 * 0.25 + &k3 * (1.0 / 3.0) + &k4 * 0.125) * h;
    let err = &y3 - y2;
    Ok((y3, err, k4))
}

/// Implicit Euler Newton state: the finite-difference Jacobian is reused
/// across solves and refreshed only when a stale one fails to converge.
#[derive(Debug, Default, Clone)]
pub struct ImplicitEuler {
    jacobian: Option<DMatrix<f64>>,
    fresh: bool,
    pub jacobian_evaluations: usize,
}

impl ImplicitEuler {
    fn refresh(&mut self, sys: &OdeSystem, t: f64, y: &DVector<f64>, f0: &DVector<f64>, counters: &mut Counters) -> Result<()> {
        let n = y.len();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = f64::EPSILON.sqrt() * y[j].abs().max(1.0);
            let mut yp = y.clone();
            yp[j] += h;
            jac.set_column(j, &((sys.eval(t, &yp, counters)? - f0) / h));
        }
        self.jacobian = Some(jac);
        self.fresh = true;
        self.jacobian_evaluations += 1;
        Ok(())
    }

    /// Solves `y₁ = y₀ + h·f(t + h, y₁)`; `None` signals divergence.
    pub fn solve(
        &mut self,
        sys: &OdeSystem,
        t: f64,
        y0: &DVector<f64>,
        h: f64,
        tol: f64,
        counters: &mut Counters,
    ) -> Result<Option<DVector<f64>>> {
        let n = y0.len();
        let t1 = t + h;
        for attempt in 0..2 {
            let mut y = y0.clone();
            let mut f = sys.eval(t1, &y, counters)?;
            if self.jacobian.is_none() || (attempt == 1 && !self.fresh) {
                self.refresh(sys, t1, &y, &f, counters)?;
            }
            let lhs = DMatrix::identity(n, n) - self.jacobian.as_ref().expect("jacobian present") * h;
            let lu = lhs.lu();
            let mut last = f64::INFINITY;
            let mut converged = false;
            for _ in 0..10 {
                let residual = &y - y0 - &f * h;
                let Some(delta) = lu.solve(&(-residual)) else { break };
                let size = delta.amax();
                if !size.is_finite() || size > 0.9 * last {
                    break;
                }
                y += delta;
                last = size;
                if size <= tol {
                    converged = true;
                    break;
                }
                f = sys.eval(t1, &y, counters)?;
            }
            self.fresh = false;
            if converged {
                return Ok(Some(y));
            }
            if attempt == 0 && self.jacobian.is_some() {
                // Retry once with a Jacobian at the current point.
                continue;
            }
        }
        Ok(None)
    }
}
