//! Error-controlled time integration.
//!
//! [`Simulator`] owns the model, the external systems and all caches, and
//! advances the state attempt by attempt. Every scheme produces a
//! propagated state plus an error estimate; the controller decides whether
//! to accept it and proposes the next step size.

pub mod baseline;
pub mod control;
pub mod icf;
pub mod output;

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::Serialize;

use crate::dynamics::normalize_quaternions;
use crate::error::{BudgetKind, Error, Result};
use crate::external::{build_controller, Controller};
use crate::model::{ErrorNormKind, IntegratorConfig, Model, Scheme, SystemState};
use crate::solver::{HessianCache, SolverOptions, SolverStats};

use baseline::{pack, rk3_step, unpack, ImplicitEuler, OdeSystem};
use control::{adjust_step_size, error_norm, full_state_error_norm};
use icf::{icf_solve, icf_step, trapezoid_solve, Counters, Snapshot, SolveOutcome, StepContext};
pub use output::TrajectoryPoint;

/// Smallest admissible step.
pub const MIN_STEP: f64 = 1e-12;
/// Halved retries allowed after a non-finite attempt.
pub const MAX_NONFINITE_RETRIES: usize = 10;

/// One attempted step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// Start time of the attempt.
    pub t: f64,
    pub dt: f64,
    pub error: f64,
    pub accepted: bool,
    pub newton_iterations: usize,
    pub factorizations: usize,
    pub linesearch_iterations: usize,
    pub geometry_queries: usize,
    /// Per-solve statistics, kept only when requested.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub solves: Vec<SolverStats>,
}

/// Wall time split by phase, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct PhaseTimes {
    pub geometry: f64,
    pub assembly: f64,
    pub solve: f64,
    pub linearize: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct RunStats {
    pub scheme: String,
    pub wall_time: f64,
    pub steps_attempted: usize,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub newton_iterations: usize,
    pub factorizations: usize,
    pub linesearch_iterations: usize,
    pub geometry_queries: usize,
    pub nonfinite_retries: usize,
    pub final_time: f64,
    pub phase_times: PhaseTimes,
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct Run {
    /// Accepted states, starting with the initial one.
    pub trajectory: Vec<TrajectoryPoint>,
    pub records: Vec<StepRecord>,
    pub stats: RunStats,
    pub final_state: SystemState,
    pub final_external: DVector<f64>,
}

/// A failed run with everything computed before the failure.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Run,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} accepted steps)", self.error, self.partial.stats.steps_accepted)
    }
}

impl std::error::Error for RunFailure {}

/// Resource limits for a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub wall_time_limit: Option<Duration>,
    pub max_attempts: Option<usize>,
    /// Cap on geometry queries (one per derivative evaluation).
    pub max_geometry_queries: Option<usize>,
    /// Keep per-solve statistics with cost histories in the step records.
    pub record_costs: bool,
    /// Keep the accepted-state trajectory.
    pub record_trajectory: bool,
}

impl RunOptions {
    /// Full trajectory and a wall-time budget of 100× the simulated span.
    pub fn for_duration(duration: f64) -> Self {
        Self {
            wall_time_limit: Some(Duration::from_secs_f64((100.0 * duration).max(1.0))),
            record_trajectory: true,
            ..Self::default()
        }
    }
}

/// Propagated state and error estimate of one attempt.
struct Attempt {
    q: DVector<f64>,
    v: DVector<f64>,
    z: DVector<f64>,
    error: f64,
    solves: Vec<SolverStats>,
    contact_force: Option<DVector<f64>>,
    derivative: Option<DVector<f64>>,
}

impl Attempt {
    fn is_finite(&self) -> bool {
        !self.error.is_nan() && self.q.iter().chain(self.v.iter()).chain(self.z.iter()).all(|x| x.is_finite())
    }
}

/// Scheme-specific state carried between attempts.
#[derive(Debug, Default)]
struct Workspace {
    cache: HessianCache,
    counters: Counters,
    /// Contact force rate at the current state (second-order scheme).
    force_prev: Option<DVector<f64>>,
    /// Derivative at the current state (first-same-as-last).
    derivative: Option<DVector<f64>>,
    implicit_euler: ImplicitEuler,
}

pub struct Simulator {
    model: Arc<Model>,
    controller: Controller,
    config: IntegratorConfig,
    solver: SolverOptions,
    state: SystemState,
    z: DVector<f64>,
    dt: f64,
    ws: Workspace,
    stats: RunStats,
    records: Vec<StepRecord>,
    record_costs: bool,
    wall: Duration,
}

impl std::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulator").field("model", &self.model.name).field("t", &self.state.t).field("dt", &self.dt).finish()
    }
}

impl Simulator {
    /// A simulator at the model's initial state with `config`.
    pub fn new(model: Arc<Model>, config: IntegratorConfig) -> Result<Self> {
        config.validate()?;
        if config.error_weights.len() != model.nq {
            return Err(Error::validation("integrator.error_weights", format!("expected {} weights", model.nq)));
        }
        if config.scheme.is_smooth_baseline() && model.has_limits() {
            return Err(Error::Configuration(format!(
                "scheme `{}` integrates the smooth ODE and does not support joint limits",
                config.scheme.as_str()
            )));
        }
        let controller = match &model.controller {
            Some(section) => build_controller(&model, section)?,
            None => Controller::empty(model.nv),
        };
        let solver = SolverOptions {
            tolerance: config.solver_tolerance(),
            desired_iterations: config.desired_iterations,
            alpha_max: config.alpha_max,
            reuse_hessian: config.hessian_reuse,
            linesearch_init: config.linesearch_init,
            ..SolverOptions::default()
        };
        let dt = initial_step(&config);
        let state = model.initial_state.clone();
        let z = controller.initial_state();
        Ok(Self {
            model,
            controller,
            stats: RunStats { scheme: config.scheme.as_str().into(), ..RunStats::default() },
            config,
            solver,
            state,
            z,
            dt,
            ws: Workspace::default(),
            records: Vec::new(),
            record_costs: false,
            wall: Duration::ZERO,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn external_state(&self) -> &DVector<f64> {
        &self.z
    }

    /// Replaces the state; caches tied to the old state are dropped.
    pub fn set_state(&mut self, state: SystemState, z: Option<DVector<f64>>) -> Result<()> {
        if state.q.len() != self.model.nq || state.v.len() != self.model.nv {
            return Err(Error::validation("state", format!("expected nq = {}, nv = {}", self.model.nq, self.model.nv)));
        }
        if let Some(z) = z {
            if z.len() != self.controller.nz {
                return Err(Error::validation("external_state", format!("expected {} entries", self.controller.nz)));
            }
            self.z = z;
        }
        self.state = state;
        self.ws.force_prev = None;
        self.ws.derivative = None;
        Ok(())
    }

    /// Proposed size of the next attempt.
    pub fn step_size(&self) -> f64 {
        self.dt
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn stats(&self) -> RunStats {
        let c = &self.ws.counters;
        RunStats {
            wall_time: self.wall.as_secs_f64(),
            geometry_queries: c.geometry_queries,
            final_time: self.state.t,
            phase_times: PhaseTimes {
                geometry: c.geometry_time.as_secs_f64(),
                assembly: c.assembly_time.as_secs_f64(),
                solve: c.solve_time.as_secs_f64(),
                linearize: c.linearize_time.as_secs_f64(),
            },
            ..self.stats.clone()
        }
    }

    fn fixed_mode(&self) -> bool {
        self.config.fixed_step.is_some() || self.config.scheme == Scheme::Fixed
    }

    /// Advances to `t_final`, calling `on_accept` after every accepted step.
    pub fn advance_to(
        &mut self,
        t_final: f64,
        options: &RunOptions,
        mut on_accept: impl FnMut(&SystemState, f64, f64),
    ) -> Result<()> {
        self.record_costs = options.record_costs;
        let started = Instant::now();
        let wall_before = self.wall;
        let result = self.advance_loop(t_final, options, started, wall_before, &mut on_accept);
        self.wall = wall_before + started.elapsed();
        result
    }

    fn advance_loop(
        &mut self,
        t_final: f64,
        options: &RunOptions,
        started: Instant,
        wall_before: Duration,
        on_accept: &mut impl FnMut(&SystemState, f64, f64),
    ) -> Result<()> {
        let mut retries = 0usize;
        while self.state.t < t_final {
            let remaining = t_final - self.state.t;
            if remaining <= 1e-14 * t_final.abs().max(1.0) {
                self.state.t = t_final;
                break;
            }
            if let Some(limit) = options.wall_time_limit {
                if wall_before + started.elapsed() > limit {
                    return Err(Error::Budget { kind: BudgetKind::WallTime, t: self.state.t });
                }
            }
            if options.max_attempts.is_some_and(|n| self.stats.steps_attempted >= n) {
                return Err(Error::Budget { kind: BudgetKind::Attempts, t: self.state.t });
            }
            if options.max_geometry_queries.is_some_and(|n| self.ws.counters.geometry_queries >= n) {
                return Err(Error::Budget { kind: BudgetKind::Evaluations, t: self.state.t });
            }

            let proposed = self.dt;
            let clipped = remaining <= proposed * (1.0 + 1e-9);
            let dt = if clipped { remaining } else { proposed };
            if dt < MIN_STEP && !clipped {
                return Err(Error::StepUnderflow {
                    t: self.state.t,
                    dt,
                    diagnostics: format!("scheme {}, accuracy {:e}", self.config.scheme.as_str(), self.config.accuracy),
                });
            }

            let queries_before = self.ws.counters.geometry_queries;
            let outcome = self.attempt(dt);
            self.stats.steps_attempted += 1;
            let attempt = match outcome {
                Ok(a) if a.is_finite() => a,
                Ok(_) | Err(Error::Internal(_)) if retries < MAX_NONFINITE_RETRIES => {
                    retries += 1;
                    self.stats.nonfinite_retries += 1;
                    self.stats.steps_rejected += 1;
                    self.ws.cache.clear();
                    self.dt = 0.5 * dt;
                    continue;
                }
                Ok(_) => return Err(Error::NonFinite { t: self.state.t, retries }),
                Err(e) => return Err(e),
            };

            let fixed = self.fixed_mode();
            let accepted = fixed || attempt.error <= self.config.accuracy;
            self.record(dt, &attempt, accepted, self.ws.counters.geometry_queries - queries_before);

            if accepted {
                retries = 0;
                self.stats.steps_accepted += 1;
                let mut q = attempt.q;
                normalize_quaternions(&self.model, &mut q);
                let t_next = if clipped { t_final } else { self.state.t + dt };
                self.state = SystemState::new(q, attempt.v, t_next);
                self.z = attempt.z;
                if let Some(f) = attempt.contact_force {
                    self.ws.force_prev = Some(f);
                }
                self.ws.derivative = attempt.derivative;
                on_accept(&self.state, attempt.error, dt);
            } else {
                self.stats.steps_rejected += 1;
            }

            self.dt = if fixed {
                self.fixed_step()
            } else {
                let next = adjust_step_size(dt, attempt.error, self.config.accuracy, self.config.scheme.error_order(), &self.config);
                if clipped && accepted {
                    next.max(proposed).min(self.config.max_step)
                } else {
                    next
                }
            };
        }
        Ok(())
    }

    fn fixed_step(&self) -> f64 {
        self.config.fixed_step.unwrap_or(self.config.max_step)
    }

    fn record(&mut self, dt: f64, a: &Attempt, accepted: bool, queries: usize) {
        let mut rec = StepRecord {
            t: self.state.t,
            dt,
            error: a.error,
            accepted,
            newton_iterations: 0,
            factorizations: 0,
            linesearch_iterations: 0,
            geometry_queries: queries,
            solves: Vec::new(),
        };
        for s in &a.solves {
            rec.newton_iterations += s.iterations;
            rec.factorizations += s.factorizations;
            rec.linesearch_iterations += s.linesearch_iterations;
        }
        self.stats.newton_iterations += rec.newton_iterations;
        self.stats.factorizations += rec.factorizations;
        self.stats.linesearch_iterations += rec.linesearch_iterations;
        if self.record_costs {
            rec.solves = a.solves.clone();
        }
        self.records.push(rec);
    }

    fn estimate(&self, q: &DVector<f64>, q_hat: &DVector<f64>, v: &DVector<f64>, v_hat: &DVector<f64>) -> f64 {
        match self.config.error_norm {
            ErrorNormKind::Position => error_norm(q, q_hat, &self.config.error_weights),
            ErrorNormKind::FullState => full_state_error_norm(q, q_hat, v, v_hat, &self.config.error_weights),
        }
    }

    fn attempt(&mut self, dt: f64) -> Result<Attempt> {
        let mut solver = self.solver.clone();
        solver.record_costs = self.record_costs;
        match self.config.scheme {
            Scheme::Cenic1 => self.step_doubling(dt, solver),
            Scheme::Cenic2 => self.trapezoid(dt, solver),
            Scheme::Fixed => {
                let ctx = StepContext { model: &self.model, controller: &self.controller, solver, beta: self.config.beta };
                let s = &self.state;
                let out = icf_step(&ctx, &s.q, &s.v, s.t, &self.z, dt, &mut self.ws.cache, &mut self.ws.counters)?;
                Ok(from_outcome(out, 0.0, vec![]))
            }
            Scheme::Rk3 => self.rk3(dt),
            Scheme::Ie => self.implicit_euler(dt),
        }
    }

    /// One full step against two half steps; the half steps are propagated.
    fn step_doubling(&mut self, dt: f64, solver: SolverOptions) -> Result<Attempt> {
        let ctx = StepContext { model: &self.model, controller: &self.controller, solver, beta: self.config.beta };
        let ws = &mut self.ws;
        let s = &self.state;
        let snap = Snapshot::take(&self.model, &s.q, &s.v, s.t, &mut ws.counters)?;
        let full = icf_solve(&ctx, &snap, &self.z, dt, &s.v, &mut ws.cache, &mut ws.counters)?;
        let warm = (&s.v + &full.v) * 0.5;
        let half = icf_solve(&ctx, &snap, &self.z, 0.5 * dt, &warm, &mut ws.cache, &mut ws.counters)?;
        let mid = Snapshot::take(&self.model, &half.q, &half.v, s.t + 0.5 * dt, &mut ws.counters)?;
        let second = icf_solve(&ctx, &mid, &half.z, 0.5 * dt, &full.v, &mut ws.cache, &mut ws.counters)?;
        let error = self.estimate(&second.q, &full.q, &second.v, &full.v);
        let solves = vec![full.stats, half.stats];
        Ok(from_outcome(second, error, solves))
    }

    /// First-order predictor corrected by the trapezoid rule.
    fn trapezoid(&mut self, dt: f64, solver: SolverOptions) -> Result<Attempt> {
        let ctx = StepContext { model: &self.model, controller: &self.controller, solver, beta: self.config.beta };
        let ws = &mut self.ws;
        let s = &self.state;
        let start = Snapshot::take(&self.model, &s.q, &s.v, s.t, &mut ws.counters)?;
        let pred = icf_solve(&ctx, &start, &self.z, dt, &s.v, &mut ws.cache, &mut ws.counters)?;
        let end = Snapshot::take(&self.model, &pred.q, &pred.v, s.t + dt, &mut ws.counters)?;
        let force_prev = ws.force_prev.get_or_insert_with(|| start.continuous_contact_force(&self.model)).clone();
        let corr = trapezoid_solve(&ctx, &start, &end, &self.z, dt, &force_prev, &mut ws.cache, &mut ws.counters)?;
        let error = self.estimate(&corr.q, &pred.q, &corr.v, &pred.v);
        let solves = vec![pred.stats];
        let mut a = from_outcome(corr, error, solves);
        a.contact_force = Some(a.contact_force.take().unwrap_or_else(|| DVector::zeros(self.model.nv)));
        Ok(a)
    }

    fn rk3(&mut self, dt: f64) -> Result<Attempt> {
        let sys = OdeSystem { model: &self.model, controller: &self.controller };
        let ws = &mut self.ws;
        let s = &self.state;
        let y = pack(&s.q, &s.v, &self.z);
        let k1 = match &ws.derivative {
            Some(k) => k.clone(),
            None => sys.eval(s.t, &y, &mut ws.counters)?,
        };
        ws.derivative = Some(k1.clone());
        let (mut y3, err, k4) = rk3_step(&sys, s.t, &y, &k1, dt, &mut ws.counters)?;
        sys.renormalize(&mut y3);
        let (q, v, z) = unpack(&self.model, &y3);
        let y2 = &y3 - err;
        let (q2, v2, _) = unpack(&self.model, &y2);
        let error = self.estimate(&q, &q2, &v, &v2);
        Ok(Attempt { q, v, z, error, solves: vec![], contact_force: None, derivative: Some(k4) })
    }

    fn implicit_euler(&mut self, dt: f64) -> Result<Attempt> {
        let sys = OdeSystem { model: &self.model, controller: &self.controller };
        let ws = &mut self.ws;
        let s = &self.state;
        let tol = (self.config.kappa * self.config.accuracy).max(1e-10);
        let y0 = pack(&s.q, &s.v, &self.z);
        let ie = &mut ws.implicit_euler;
        let full = ie.solve(&sys, s.t, &y0, dt, tol, &mut ws.counters)?;
        let half = match full {
            Some(_) => ie.solve(&sys, s.t, &y0, 0.5 * dt, tol, &mut ws.counters)?,
            None => None,
        };
        let second = match &half {
            Some(h) => ie.solve(&sys, s.t + 0.5 * dt, h, 0.5 * dt, tol, &mut ws.counters)?,
            None => None,
        };
        let (Some(full), Some(mut second)) = (full, second) else {
            let (q, v, z) = unpack(&self.model, &y0);
            return Ok(Attempt { q, v, z, error: f64::INFINITY, solves: vec![], contact_force: None, derivative: None });
        };
        sys.renormalize(&mut second);
        let (q, v, z) = unpack(&self.model, &second);
        let (qf, vf, _) = unpack(&self.model, &full);
        let error = self.estimate(&q, &qf, &v, &vf);
        Ok(Attempt { q, v, z, error, solves: vec![], contact_force: None, derivative: None })
    }
}

fn from_outcome(out: SolveOutcome, error: f64, mut solves: Vec<SolverStats>) -> Attempt {
    solves.push(out.stats);
    Attempt { q: out.q, v: out.v, z: out.z, error, solves, contact_force: Some(out.contact_force), derivative: None }
}

fn initial_step(config: &IntegratorConfig) -> f64 {
    match (config.fixed_step, config.scheme) {
        (Some(h), _) => h,
        (None, Scheme::Fixed) => config.max_step,
        (None, _) => config.k_init * config.max_step,
    }
}

/// Runs `model` from its initial state for `duration` with `config`.
pub fn advance(model: &Model, config: &IntegratorConfig, duration: f64, options: &RunOptions) -> std::result::Result<Run, RunFailure> {
    let empty = |error: Error| RunFailure {
        error,
        partial: Run {
            trajectory: vec![],
            records: vec![],
            stats: RunStats::default(),
            final_state: model.initial_state.clone(),
            final_external: DVector::zeros(0),
        },
    };
    if !(duration.is_finite() && duration > 0.0) {
        return Err(empty(Error::validation("duration", "must be positive")));
    }
    let mut sim = Simulator::new(Arc::new(model.clone()), config.clone()).map_err(empty)?;
    let mut trajectory = Vec::new();
    if options.record_trajectory {
        let s = sim.state();
        trajectory.push(TrajectoryPoint { t: s.t, q: s.q.clone(), v: s.v.clone(), error: 0.0, dt: 0.0 });
    }
    let keep = options.record_trajectory;
    let result = sim.advance_to(duration, options, |s, e, dt| {
        if keep {
            trajectory.push(TrajectoryPoint { t: s.t, q: s.q.clone(), v: s.v.clone(), error: e, dt });
        }
    });
    let run = Run {
        trajectory,
        records: std::mem::take(&mut sim.records),
        stats: sim.stats(),
        final_state: sim.state.clone(),
        final_external: sim.z.clone(),
    };
    match result {
        Ok(()) => Ok(run),
        Err(error) => Err(RunFailure { error, partial: run }),
    }
}
