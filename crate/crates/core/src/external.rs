//! External dynamical systems (controllers) and their coupling to the
//! convex step.
//!
//! A system has state `z` with `ż = h(t, z, x)` and applies generalized
//! forces `τ = g(t, z, x)`. For implicit treatment the pair is linearized
//! once per convex solve around the position-eliminated state
//! `x̃(v) = [q + δt·N(q)·v; v]`, which reduces the actuation to
//! `τ = clamp(−C·v + d, −e, e)` with diagonal `C ≥ 0`.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::kinematic_map;
use crate::error::{Error, Result};
use crate::linalg::SparseRows;
use crate::model::{ControllerSection, ControllerSpec, Model, SetpointSpec, Treatment};
use crate::solver::{Constraint, Potential};

/// A user-defined external system.
pub trait ExternalSystem: Send + Sync + std::fmt::Debug {
    fn state_dim(&self) -> usize {
        0
    }

    fn initial_state(&self) -> DVector<f64> {
        DVector::zeros(self.state_dim())
    }

    /// Generalized velocity indices this system reads and actuates.
    fn dofs(&self) -> &[usize];

    /// `ż = h(t, z, q, v)`.
    fn derivative(&self, _t: f64, _z: &DVector<f64>, _q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.state_dim())
    }

    /// `τ = g(t, z, q, v)`, length `n_v`.
    fn output(&self, t: f64, z: &DVector<f64>, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;

    /// Effort bound per entry of [`ExternalSystem::dofs`].
    fn effort_limits(&self) -> Vec<f64> {
        vec![f64::INFINITY; self.dofs().len()]
    }
}

/// Joint-space setpoint `(q_d(t), v_d(t))`.
#[derive(Debug, Clone, PartialEq)]
pub enum Setpoint {
    Constant(Vec<f64>),
    Step { before: Vec<f64>, after: Vec<f64>, time: f64 },
    Sinusoid { amplitude: Vec<f64>, frequency: Vec<f64>, offset: Vec<f64> },
}

impl Setpoint {
    pub fn eval(&self, t: f64, i: usize) -> (f64, f64) {
        match self {
            Setpoint::Constant(p) => (p[i], 0.0),
            Setpoint::Step { before, after, time } => (if t < *time { before[i] } else { after[i] }, 0.0),
            Setpoint::Sinusoid { amplitude, frequency, offset } => {
                let w = std::f64::consts::TAU * frequency[i];
                (offset[i] + amplitude[i] * (w * t).sin(), amplitude[i] * w * (w * t).cos())
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            Setpoint::Constant(p) => p.len(),
            Setpoint::Step { before, after, .. } => before.len().min(after.len()),
            Setpoint::Sinusoid { amplitude, frequency, offset } => amplitude.len().min(frequency.len()).min(offset.len()),
        }
    }
}

/// `τ = −K_p(q − q_d) − K_d(v − v_d) − K_i·z` with `ż = q − q_d`.
#[derive(Debug, Clone)]
pub struct PdController {
    pub v_dofs: Vec<usize>,
    pub q_dofs: Vec<usize>,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    /// Empty when there is no integral action.
    pub ki: Vec<f64>,
    pub setpoint: Setpoint,
    pub limits: Vec<f64>,
    pub nv: usize,
}

impl ExternalSystem for PdController {
    fn state_dim(&self) -> usize {
        self.ki.len()
    }

    fn dofs(&self) -> &[usize] {
        &self.v_dofs
    }

    fn derivative(&self, t: f64, _z: &DVector<f64>, q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.ki.len(), |i, _| q[self.q_dofs[i]] - self.setpoint.eval(t, i).0)
    }

    fn output(&self, t: f64, z: &DVector<f64>, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut tau = DVector::zeros(self.nv);
        for i in 0..self.v_dofs.len() {
            let (qd, vd) = self.setpoint.eval(t, i);
            let mut f = -self.kp[i] * (q[self.q_dofs[i]] - qd) - self.kd[i] * (v[self.v_dofs[i]] - vd);
            if !self.ki.is_empty() {
                f -= self.ki[i] * z[i];
            }
            tau[self.v_dofs[i]] += f;
        }
        tau
    }

    fn effort_limits(&self) -> Vec<f64> {
        self.limits.clone()
    }
}

/// Constant generalized forces.
#[derive(Debug, Clone)]
pub struct ConstantForce {
    pub v_dofs: Vec<usize>,
    pub forces: Vec<f64>,
    pub nv: usize,
}

impl ExternalSystem for ConstantForce {
    fn dofs(&self) -> &[usize] {
        &self.v_dofs
    }

    fn output(&self, _t: f64, _z: &DVector<f64>, _q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        let mut tau = DVector::zeros(self.nv);
        for (i, f) in self.v_dofs.iter().zip(&self.forces) {
            tau[*i] += f;
        }
        tau
    }
}

/// All external systems of a scene with their stacked state.
#[derive(Debug)]
pub struct Controller {
    pub systems: Vec<Box<dyn ExternalSystem>>,
    pub offsets: Vec<usize>,
    pub nz: usize,
    pub nv: usize,
    pub treatment: Treatment,
}

impl Controller {
    pub fn new(systems: Vec<Box<dyn ExternalSystem>>, nv: usize, treatment: Treatment) -> Self {
        let mut offsets = Vec::with_capacity(systems.len());
        let mut nz = 0;
        for s in &systems {
            offsets.push(nz);
            nz += s.state_dim();
        }
        Self { systems, offsets, nz, nv, treatment }
    }

    pub fn empty(nv: usize) -> Self {
        Self::new(vec![], nv, Treatment::Implicit)
    }

    pub fn initial_state(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.nz);
        for (s, &o) in self.systems.iter().zip(&self.offsets) {
            z.rows_mut(o, s.state_dim()).copy_from(&s.initial_state());
        }
        z
    }

    fn slice(&self, k: usize, z: &DVector<f64>) -> DVector<f64> {
        z.rows(self.offsets[k], self.systems[k].state_dim()).into_owned()
    }

    /// Per-DOF effort bound (the tightest over systems) and actuation mask.
    pub fn effort_bounds(&self) -> (DVector<f64>, Vec<bool>) {
        let mut e = DVector::from_element(self.nv, f64::INFINITY);
        let mut active = vec![false; self.nv];
        for s in &self.systems {
            for (&i, lim) in s.dofs().iter().zip(s.effort_limits()) {
                e[i] = e[i].min(lim);
                active[i] = true;
            }
        }
        (e, active)
    }

    /// Clamped total generalized force and state derivative for the smooth ODE.
    pub fn evaluate(&self, t: f64, z: &DVector<f64>, q: &DVector<f64>, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut tau = DVector::zeros(self.nv);
        let mut zdot = DVector::zeros(self.nz);
        for (k, s) in self.systems.iter().enumerate() {
            let zs = self.slice(k, z);
            tau += s.output(t, &zs, q, v);
            zdot.rows_mut(self.offsets[k], s.state_dim()).copy_from(&s.derivative(t, &zs, q, v));
        }
        let (e, _) = self.effort_bounds();
        for i in 0..self.nv {
            tau[i] = tau[i].clamp(-e[i], e[i]);
        }
        (tau, zdot)
    }

    pub fn is_empty(&self) -> bool {
        self.systems.is_empty()
    }
}

/// Implicit reduction `z⁺ = Z·v⁺ + b`, `τ = clamp(−C·v⁺ + d, −e, e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedCoupling {
    pub z_map: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Diagonal of `C`.
    pub c: DVector<f64>,
    pub d: DVector<f64>,
    pub e: DVector<f64>,
    pub active: Vec<bool>,
    /// Systems that fell back to explicit treatment this attempt.
    pub fallbacks: usize,
}

impl LinearizedCoupling {
    pub fn empty(nv: usize) -> Self {
        Self {
            z_map: DMatrix::zeros(0, nv),
            b: DVector::zeros(0),
            c: DVector::zeros(nv),
            d: DVector::zeros(nv),
            e: DVector::from_element(nv, f64::INFINITY),
            active: vec![false; nv],
            fallbacks: 0,
        }
    }

    /// Effort-limit potentials on the actuated DOFs.
    pub fn constraints(&self, dt: f64) -> Vec<Constraint> {
        (0..self.c.len())
            .filter(|&i| self.active[i])
            .map(|i| Constraint {
                jacobian: SparseRows::unit_row(i),
                offset: [0.0; 3],
                weight: 1.0,
                potential: Potential::Effort { c: self.c[i], b: self.d[i], e: self.e[i], dt },
            })
            .collect()
    }

    /// The clamped actuation at `v`.
    pub fn actuation(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.c.len(), |i, _| if self.active[i] { (-self.c[i] * v[i] + self.d[i]).clamp(-self.e[i], self.e[i]) } else { 0.0 })
    }
}

fn fd_step(x: f64) -> f64 {
    f64::EPSILON.sqrt() * x.abs().max(1.0)
}

/// Linearizes every system of `ctrl` for a convex step from `(t, q, v, z)` of size `dt`.
pub fn linearize(
    ctrl: &Controller,
    model: &Model,
    t: f64,
    q: &DVector<f64>,
    v: &DVector<f64>,
    z: &DVector<f64>,
    dt: f64,
) -> LinearizedCoupling {
    let nv = model.nv;
    let mut out = LinearizedCoupling::empty(nv);
    if ctrl.is_empty() {
        return out;
    }
    out.z_map = DMatrix::zeros(ctrl.nz, nv);
    out.b = DVector::zeros(ctrl.nz);
    let (e, active) = ctrl.effort_bounds();
    out.e = e;
    out.active = active;

    let n_map = kinematic_map(model, q);
    let q_tilde = |v: &DVector<f64>| q + &n_map * v * dt;
    let t1 = t + dt;
    let mut neg_diag: DVector<f64> = DVector::zeros(nv);

    for (k, s) in ctrl.systems.iter().enumerate() {
        let nz = s.state_dim();
        let off = ctrl.offsets[k];
        let zs = ctrl.slice(k, z);
        if ctrl.treatment == Treatment::Explicit {
            explicit_part(s.as_ref(), t, &zs, q, v, dt, off, &mut out);
            continue;
        }
        let q0 = q_tilde(v);
        let h0 = s.derivative(t1, &zs, &q0, v);
        let dofs = s.dofs().to_vec();

        // ∂z h, ∂z g by forward differences.
        let mut dz_h = DMatrix::zeros(nz, nz);
        let mut dz_g = DMatrix::zeros(nv, nz);
        let g_base = s.output(t1, &zs, &q0, v);
        for j in 0..nz {
            let h = fd_step(zs[j]);
            let mut zp = zs.clone();
            zp[j] += h;
            dz_h.set_column(j, &((s.derivative(t1, &zp, &q0, v) - &h0) / h));
            dz_g.set_column(j, &((s.output(t1, &zp, &q0, v) - &g_base) / h));
        }
        // ∂v h, ∂v g on the system's DOFs.
        let mut dv_h = DMatrix::zeros(nz, nv);
        let mut dv_g_diag = DVector::zeros(nv);
        for &j in &dofs {
            let h = fd_step(v[j]);
            let mut vp = v.clone();
            vp[j] += h;
            let qp = q_tilde(&vp);
            dv_h.set_column(j, &((s.derivative(t1, &zs, &qp, &vp) - &h0) / h));
            dv_g_diag[j] = (s.output(t1, &zs, &qp, &vp)[j] - g_base[j]) / h;
        }

        let lhs = DMatrix::identity(nz, nz) - &dz_h * dt;
        let inverse = if nz == 0 {
            Some(DMatrix::zeros(0, 0))
        } else {
            let lu = lhs.clone().lu();
            lu.try_inverse().filter(|inv| {
                let cond = lhs.norm() * inv.norm();
                cond.is_finite() && cond < 1e12
            })
        };
        let Some(inv) = inverse else {
            out.fallbacks += 1;
            explicit_part(s.as_ref(), t, &zs, q, v, dt, off, &mut out);
            continue;
        };
        let b_h = &h0 - &dz_h * &zs - &dv_h * v;
        let z_map = &inv * &dv_h * dt;
        let b = &inv * (&zs + b_h * dt);
        let coupled = &dz_g * &z_map;
        for &j in &dofs {
            neg_diag[j] -= dv_g_diag[j] + coupled[(j, j)];
        }
        let z_elim = &z_map * v + &b;
        out.d += s.output(t1, &z_elim, &q0, v);
        out.z_map.view_mut((off, 0), (nz, nv)).copy_from(&z_map);
        out.b.rows_mut(off, nz).copy_from(&b);
    }
    for i in 0..nv {
        out.c[i] = neg_diag[i].max(0.0);
        out.d[i] += out.c[i] * v[i];
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn explicit_part(
    s: &dyn ExternalSystem,
    t: f64,
    zs: &DVector<f64>,
    q: &DVector<f64>,
    v: &DVector<f64>,
    dt: f64,
    off: usize,
    out: &mut LinearizedCoupling,
) {
    let nz = s.state_dim();
    out.d += s.output(t, zs, q, v);
    let b = zs + s.derivative(t, zs, q, v) * dt;
    out.b.rows_mut(off, nz).copy_from(&b);
}

/// `z⁺ = Z·v⁺ + b`.
pub fn advance_external(coupling: &LinearizedCoupling, v_next: &DVector<f64>) -> DVector<f64> {
    &coupling.z_map * v_next + &coupling.b
}

fn check_len(name: &str, field: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::validation(
            format!("controller.{name}.{field}"),
            format!("expected {want} entries, got {got}"),
        ));
    }
    Ok(())
}

/// Builds the builtin systems of a scenario controller section.
pub fn build_controller(model: &Model, section: &ControllerSection) -> Result<Controller> {
    let mut systems: Vec<Box<dyn ExternalSystem>> = Vec::new();
    for spec in &section.systems {
        match spec {
            ControllerSpec::Pd { joints, kp, kd, ki, setpoint, effort_limits } => {
                let setpoint = match setpoint {
                    SetpointSpec::Constant { positions } => Setpoint::Constant(positions.clone()),
                    SetpointSpec::Step { before, after, time } => Setpoint::Step { before: before.clone(), after: after.clone(), time: *time },
                    SetpointSpec::Sinusoid { amplitude, frequency, offset } => Setpoint::Sinusoid {
                        amplitude: amplitude.clone(),
                        frequency: frequency.clone(),
                        offset: if offset.is_empty() { vec![0.0; amplitude.len()] } else { offset.clone() },
                    },
                };
                systems.push(Box::new(pd(model, "pd", joints, kp, kd, ki, setpoint, effort_limits)?));
            }
            ControllerSpec::OscillatingSetpoint { joints, kp, kd, amplitude, frequency, offset, effort_limits } => {
                let setpoint = Setpoint::Sinusoid {
                    amplitude: amplitude.clone(),
                    frequency: frequency.clone(),
                    offset: if offset.is_empty() { vec![0.0; amplitude.len()] } else { offset.clone() },
                };
                systems.push(Box::new(pd(model, "oscillating_setpoint", joints, kp, kd, &[], setpoint, effort_limits)?));
            }
            ControllerSpec::ConstantForce { dofs, forces } => {
                check_len("constant_force", "forces", forces.len(), dofs.len())?;
                let v_dofs = dofs.iter().map(|d| model.resolve_dof(d).map(|r| r.0)).collect::<Result<Vec<_>>>()?;
                systems.push(Box::new(ConstantForce { v_dofs, forces: forces.clone(), nv: model.nv }));
            }
        }
    }
    Ok(Controller::new(systems, model.nv, section.treatment))
}

#[allow(clippy::too_many_arguments)]
fn pd(
    model: &Model,
    name: &str,
    joints: &[String],
    kp: &[f64],
    kd: &[f64],
    ki: &[f64],
    setpoint: Setpoint,
    effort_limits: &[f64],
) -> Result<PdController> {
    let n = joints.len();
    check_len(name, "kp", kp.len(), n)?;
    check_len(name, "kd", kd.len(), n)?;
    if !ki.is_empty() {
        check_len(name, "ki", ki.len(), n)?;
    }
    check_len(name, "setpoint", setpoint.len(), n)?;
    if !effort_limits.is_empty() {
        check_len(name, "effort_limits", effort_limits.len(), n)?;
        if effort_limits.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::validation(format!("controller.{name}.effort_limits"), "must be positive"));
        }
    }
    let mut v_dofs = Vec::with_capacity(n);
    let mut q_dofs = Vec::with_capacity(n);
    for j in joints {
        let ji = model
            .joint_index(j)
            .ok_or_else(|| Error::validation(format!("controller.{name}.joints"), format!("unknown joint `{j}`")))?;
        v_dofs.push(model.joints[ji].v_index);
        q_dofs.push(model.joints[ji].q_index);
    }
    Ok(PdController {
        v_dofs,
        q_dofs,
        kp: kp.to_vec(),
        kd: kd.to_vec(),
        ki: ki.to_vec(),
        setpoint,
        limits: if effort_limits.is_empty() { vec![f64::INFINITY; n] } else { effort_limits.to_vec() },
        nv: model.nv,
    })
}
