//! Convex time steps.
//!
//! A first-order step minimizes `½vᵀMv − (Mvⁿ − δt·k)ᵀv + Σℓᵢ` with contact,
//! limit and actuation potentials. The trapezoid correction reuses the same
//! machinery with averaged dynamics and half-weighted contact terms taken
//! at a first-order predictor.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::contact::{effective_mass, mu_of_s, normal_force_continuous, ContactPotentialData, LimitData};
use crate::dynamics::{advance_positions, advance_positions_trapezoid, dynamics_terms, kinematic_map, DynamicsTerms, Kinematics};
use crate::error::{Error, Result};
use crate::external::{advance_external, linearize, Controller, LinearizedCoupling};
use crate::geometry::{query_contacts_with, ContactData};
use crate::linalg::SparseRows;
use crate::model::Model;
use crate::solver::{solve, Constraint, ConvexProblem, HessianCache, Potential, SolverOptions, SolverStats};

/// Work and time counters shared by the schemes.
#[derive(Debug, Clone, Default)]
pub struct Counters {
    pub geometry_queries: usize,
    pub geometry_time: Duration,
    pub assembly_time: Duration,
    pub solve_time: Duration,
    pub linearize_time: Duration,
}

impl Counters {
    pub fn absorb(&mut self, other: &Counters) {
        self.geometry_queries += other.geometry_queries;
        self.geometry_time += other.geometry_time;
        self.assembly_time += other.assembly_time;
        self.solve_time += other.solve_time;
        self.linearize_time += other.linearize_time;
    }
}

/// Everything a convex step needs from the configuration.
pub struct StepContext<'a> {
    pub model: &'a Model,
    pub controller: &'a Controller,
    pub solver: SolverOptions,
    pub beta: f64,
}

/// Dynamics and contact geometry at one state: one geometry query.
pub struct Snapshot {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub t: f64,
    pub terms: DynamicsTerms,
    pub mass_chol: Cholesky<f64, Dyn>,
    pub contacts: Vec<ContactData>,
}

impl Snapshot {
    pub fn take(model: &Model, q: &DVector<f64>, v: &DVector<f64>, t: f64, counters: &mut Counters) -> Result<Self> {
        let start = Instant::now();
        let kin = Kinematics::compute(model, q);
        let contacts = query_contacts_with(model, &kin, t);
        counters.geometry_queries += 1;
        counters.geometry_time += start.elapsed();
        let start = Instant::now();
        let terms = dynamics_terms(model, q, v);
        let mass_chol = Cholesky::new(terms.mass.clone())
            .ok_or_else(|| Error::Internal("mass matrix is not positive definite".into()))?;
        counters.assembly_time += start.elapsed();
        Ok(Self { q: q.clone(), v: v.clone(), t, terms, mass_chol, contacts })
    }

    /// Generalized continuous contact force `Σ Jᵀf(x)` at this state.
    pub fn continuous_contact_force(&self, model: &Model) -> DVector<f64> {
        let mut out = DVector::zeros(model.nv);
        for c in &self.contacts {
            let vc = c.contact_velocity(model, &self.v, self.t);
            let f = crate::contact::contact_force_continuous(c.phi, &vc, &c.material);
            c.jacobian.add_transpose_mul(f.as_slice(), 1.0, &mut out);
        }
        out
    }
}

/// Result of one convex solve plus the position update.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub z: DVector<f64>,
    /// Generalized contact impulse rate `Σ Jᵀγᵢ / δt` at the solution.
    pub contact_force: DVector<f64>,
    pub stats: SolverStats,
}

/// Lagged data for a contact whose friction and normal impulse are frozen
/// at the snapshot state.
fn lagged_contact(model: &Model, c: &ContactData, v: &DVector<f64>, t: f64, dt: f64, f_e: f64) -> ContactPotentialData {
    let m = &c.material;
    let vc = c.contact_velocity(model, v, t);
    let f_n = normal_force_continuous(m.stiffness * (-c.phi).max(0.0), vc.z, m.dissipation);
    let slip = vc.xy().norm() / m.stiction_tolerance;
    ContactPotentialData {
        gamma_n_prev: dt * f_n,
        mu_lagged: mu_of_s(slip, m.mu_static, m.mu_dynamic, m.transition_width),
        f_e,
        k: m.stiffness,
        d: m.dissipation,
        v_s: m.stiction_tolerance,
        dt,
    }
}

fn contact_constraint(model: &Model, c: &ContactData, data: ContactPotentialData, t_end: f64, weight: f64) -> Constraint {
    let off = c.surface_velocity_at(model, t_end);
    Constraint { jacobian: c.jacobian.clone(), offset: [off.x, off.y, off.z], weight, potential: Potential::Contact(data) }
}

/// Near-rigid joint-limit constraints at `q`.
fn limit_constraints(ctx: &StepContext, q: &DVector<f64>, mass_chol: &Cholesky<f64, Dyn>, dt: f64) -> Vec<Constraint> {
    let mut out = Vec::new();
    for j in &ctx.model.joints {
        if let Some((lo, hi)) = j.limits {
            let g = SparseRows::unit_row(j.v_index);
            let m_eff = effective_mass(&g, mass_chol);
            out.push(Constraint {
                jacobian: g,
                offset: [0.0; 3],
                weight: 1.0,
                potential: Potential::Limit(LimitData::new(q[j.q_index], lo, hi, m_eff, ctx.beta, dt)),
            });
        }
    }
    out
}

fn contact_force_of(problem: &ConvexProblem, v: &DVector<f64>, dt: f64) -> DVector<f64> {
    let mut out = DVector::zeros(problem.nv());
    for c in &problem.constraints {
        if matches!(c.potential, Potential::Contact(_)) {
            c.jacobian.add_transpose_mul(&c.impulse(v), 1.0 / dt, &mut out);
        }
    }
    out
}

fn run_solver(
    ctx: &StepContext,
    problem: &ConvexProblem,
    warm: &DVector<f64>,
    cache: &mut HessianCache,
    counters: &mut Counters,
) -> Result<(DVector<f64>, SolverStats)> {
    let start = Instant::now();
    let out = solve(problem, warm, &ctx.solver, cache);
    counters.solve_time += start.elapsed();
    out
}

fn coupling(ctx: &StepContext, snap: &Snapshot, z: &DVector<f64>, dt: f64, counters: &mut Counters) -> LinearizedCoupling {
    let start = Instant::now();
    let lin = linearize(ctx.controller, ctx.model, snap.t, &snap.q, &snap.v, z, dt);
    counters.linearize_time += start.elapsed();
    lin
}

/// First-order convex step of size `dt` from the snapshot state.
pub fn icf_solve(
    ctx: &StepContext,
    snap: &Snapshot,
    z: &DVector<f64>,
    dt: f64,
    warm: &DVector<f64>,
    cache: &mut HessianCache,
    counters: &mut Counters,
) -> Result<SolveOutcome> {
    let lin = coupling(ctx, snap, z, dt, counters);
    let start = Instant::now();
    let model = ctx.model;
    let m = &snap.terms.mass;
    let r = m * &snap.v - &snap.terms.bias * dt;
    let mut problem = ConvexProblem::new(m.clone(), r);
    let t_end = snap.t + dt;
    for c in &snap.contacts {
        let data = lagged_contact(model, c, &snap.v, snap.t, dt, -c.material.stiffness * c.phi);
        problem.constraints.push(contact_constraint(model, c, data, t_end, 1.0));
    }
    problem.constraints.extend(limit_constraints(ctx, &snap.q, &snap.mass_chol, dt));
    problem.constraints.extend(lin.constraints(dt));
    counters.assembly_time += start.elapsed();

    let (v, stats) = run_solver(ctx, &problem, warm, cache, counters)?;
    let q = advance_positions(model, &snap.q, &v, dt);
    let z_next = advance_external(&lin, &v);
    let contact_force = contact_force_of(&problem, &v, dt);
    Ok(SolveOutcome { q, v, z: z_next, contact_force, stats })
}

/// Second-order trapezoid correction of a first-order predictor.
///
/// `start` is the snapshot at `xⁿ`, `pred` the snapshot at the predictor
/// `x̂`, and `force_prev` the generalized contact force rate at `xⁿ`.
#[allow(clippy::too_many_arguments)]
pub fn trapezoid_solve(
    ctx: &StepContext,
    start: &Snapshot,
    pred: &Snapshot,
    z: &DVector<f64>,
    dt: f64,
    force_prev: &DVector<f64>,
    cache: &mut HessianCache,
    counters: &mut Counters,
) -> Result<SolveOutcome> {
    let lin = coupling(ctx, start, z, dt, counters);
    let t0 = Instant::now();
    let model = ctx.model;
    let m_bar = (&start.terms.mass + &pred.terms.mass) * 0.5;
    let k_bar = (&start.terms.bias + &pred.terms.bias) * 0.5;
    let r = &m_bar * &start.v - k_bar * dt + force_prev * (0.5 * dt);
    let mut problem = ConvexProblem::new(m_bar.clone(), r);
    let t_end = start.t + dt;
    for c in &pred.contacts {
        let m = &c.material;
        // Elastic force stepped back from the predictor so the impulse
        // formula lands on the end-of-step force.
        let v_hat_n = c.contact_velocity(model, &pred.v, t_end).z;
        let f_e = -m.stiffness * c.phi + dt * m.stiffness * v_hat_n;
        let data = lagged_contact(model, c, &pred.v, t_end, dt, f_e);
        problem.constraints.push(contact_constraint(model, c, data, t_end, 0.5));
    }
    problem.constraints.extend(limit_constraints(ctx, &start.q, &start.mass_chol, dt));
    problem.constraints.extend(lin.constraints(dt));
    let n_bar: DMatrix<f64> = (kinematic_map(model, &start.q) + kinematic_map(model, &pred.q)) * 0.5;
    counters.assembly_time += t0.elapsed();

    let (v, stats) = run_solver(ctx, &problem, &pred.v, cache, counters)?;
    let q = advance_positions_trapezoid(model, &start.q, &start.v, &v, dt, &n_bar);
    let z_next = advance_external(&lin, &v);
    let contact_force = contact_force_of(&problem, &v, dt);
    Ok(SolveOutcome { q, v, z: z_next, contact_force, stats })
}

/// One plain first-order step from `(q, v, t)`: a geometry query and a solve.
#[allow(clippy::too_many_arguments)]
pub fn icf_step(
    ctx: &StepContext,
    q: &DVector<f64>,
    v: &DVector<f64>,
    t: f64,
    z: &DVector<f64>,
    dt: f64,
    cache: &mut HessianCache,
    counters: &mut Counters,
) -> Result<SolveOutcome> {
    let snap = Snapshot::take(ctx.model, q, v, t, counters)?;
    icf_solve(ctx, &snap, z, dt, v, cache, counters)
}
