//! Scenario description, validation and index bookkeeping.
//!
//! A scenario is a JSON document with `bodies`, `joints`, `materials`,
//! `controller`, `integrator`, `duration` and `seed` sections. It is parsed
//! into [`ScenarioSpec`] and assembled into an immutable [`Model`], which is
//! the single source of truth for `n_q`, `n_v`, coordinate names, contact
//! pairs and integrator defaults.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::{DVector, Matrix3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default stiction tolerance, m/s.
pub const DEFAULT_STICTION_TOLERANCE: f64 = 1e-4;
/// Default width of the static-to-dynamic friction transition.
pub const DEFAULT_TRANSITION_WIDTH: f64 = 10.0;
/// Contacts closer than this enter the convex problem, m.
pub const DEFAULT_CONTACT_MARGIN: f64 = 1e-3;

// ---------------------------------------------------------------------------
// Scenario schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub materials: Vec<MaterialSpec>,
    pub bodies: Vec<BodySpec>,
    #[serde(default)]
    pub joints: Vec<JointSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerSection>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Shape-kind pairs that never collide, e.g. `[["box", "box"]]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_shape_pairs: Vec<[ShapeKind; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_margin: Option<f64>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

fn default_duration() -> f64 {
    1.0
}

fn identity_quaternion() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum BodyKindSpec {
    Fixed,
    Free,
    Jointed,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BodySpec {
    pub name: String,
    pub kind: BodyKindSpec,
    #[serde(default)]
    pub mass: f64,
    /// Principal moments in the body frame, kg·m².
    #[serde(default)]
    pub inertia: [f64; 3],
    #[serde(default)]
    pub geometry: Vec<GeometrySpec>,
    /// World position of the body frame (free and fixed bodies).
    #[serde(default)]
    pub position: [f64; 3],
    /// Unit quaternion `[w, x, y, z]` (free and fixed bodies).
    #[serde(default = "identity_quaternion")]
    pub orientation: [f64; 4],
    #[serde(default)]
    pub velocity: [f64; 3],
    /// World-frame angular velocity, rad/s.
    #[serde(default)]
    pub angular_velocity: [f64; 3],
    /// Center of mass in the body frame (jointed bodies).
    #[serde(default)]
    pub com: [f64; 3],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Prismatic,
    Revolute,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    /// `"world"` or the name of another jointed body.
    pub parent: String,
    pub child: String,
    /// Joint axis in the parent frame.
    pub axis: [f64; 3],
    /// Joint origin in the parent frame.
    #[serde(default)]
    pub origin: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<[f64; 2]>,
    #[serde(default)]
    pub actuated: bool,
    #[serde(default)]
    pub position: f64,
    #[serde(default)]
    pub velocity: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Halfspace,
    Box,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Sphere {
        radius: f64,
    },
    /// Points with `normal · x ≤ offset` (body frame) are inside.
    Halfspace {
        normal: [f64; 3],
        #[serde(default)]
        offset: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        surface_velocity: Option<SurfaceVelocitySpec>,
    },
    Box {
        half_extents: [f64; 3],
    },
}

impl ShapeSpec {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeSpec::Sphere { .. } => ShapeKind::Sphere,
            ShapeSpec::Halfspace { .. } => ShapeKind::Halfspace,
            ShapeSpec::Box { .. } => ShapeKind::Box,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    #[serde(default)]
    pub name: String,
    pub shape: ShapeSpec,
    /// Material name; the builtin default material when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<String>,
    /// Offset of the geometry in the body frame, m.
    #[serde(default)]
    pub offset: [f64; 3],
}

/// Prescribed tangential velocity of a halfspace surface (conveyor belts).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SurfaceVelocitySpec {
    pub direction: [f64; 3],
    pub profile: VelocityProfile,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityProfile {
    Constant {
        speed: f64,
    },
    /// `offset + amplitude · sin(2π·frequency·t + phase)`.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Linear interpolation through `(times[i], speeds[i])`, repeated with
    /// `period` when given.
    PiecewiseLinear {
        times: Vec<f64>,
        speeds: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        period: Option<f64>,
    },
}

impl VelocityProfile {
    pub fn speed(&self, t: f64) -> f64 {
        match self {
            VelocityProfile::Constant { speed } => *speed,
            VelocityProfile::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => offset + amplitude * (std::f64::consts::TAU * frequency * t + phase).sin(),
            VelocityProfile::PiecewiseLinear { times, speeds, period } => {
                let t = match period {
                    Some(p) if *p > 0.0 => t.rem_euclid(*p),
                    _ => t,
                };
                if t <= times[0] {
                    return speeds[0];
                }
                for i in 1..times.len() {
                    if t <= times[i] {
                        let s = (t - times[i - 1]) / (times[i] - times[i - 1]);
                        return speeds[i - 1] + s * (speeds[i] - speeds[i - 1]);
                    }
                }
                speeds[speeds.len() - 1]
            }
        }
    }
}

/// Contact material as written in a scenario; missing friction
/// regularization parameters take their defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub name: String,
    pub stiffness: f64,
    #[serde(default)]
    pub dissipation: f64,
    pub mu_static: f64,
    pub mu_dynamic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiction_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_width: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default)]
    pub treatment: Treatment,
    #[serde(default)]
    pub systems: Vec<ControllerSpec>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    #[default]
    Implicit,
    Explicit,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    /// `τ = −K_p(q − q_d) − K_d(v − v_d) − K_i ∫(q − q_d)` on joint DOFs.
    Pd {
        joints: Vec<String>,
        kp: Vec<f64>,
        kd: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        ki: Vec<f64>,
        setpoint: SetpointSpec,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        effort_limits: Vec<f64>,
    },
    /// PD tracking of `offset + amplitude·sin(2π·frequency·t)`.
    OscillatingSetpoint {
        joints: Vec<String>,
        kp: Vec<f64>,
        kd: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        offset: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        effort_limits: Vec<f64>,
    },
    ConstantForce {
        dofs: Vec<DofRef>,
        forces: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetpointSpec {
    Constant {
        positions: Vec<f64>,
    },
    Step {
        before: Vec<f64>,
        after: Vec<f64>,
        time: f64,
    },
    Sinusoid {
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        offset: Vec<f64>,
    },
}

/// A generalized velocity addressed by joint name, or by free body and
/// axis (0–2 linear, 3–5 angular).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum DofRef {
    Joint { joint: String },
    Body { body: String, axis: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Step doubling over first-order convex steps.
    #[default]
    Cenic1,
    /// Second-order trapezoid over a first-order predictor.
    Cenic2,
    /// Implicit Euler with step doubling on the smooth ODE.
    Ie,
    /// Bogacki–Shampine 3(2) on the smooth ODE.
    Rk3,
    /// Plain discrete time stepping, no error estimate.
    Fixed,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Cenic1 => "cenic1",
            Scheme::Cenic2 => "cenic2",
            Scheme::Ie => "ie",
            Scheme::Rk3 => "rk3",
            Scheme::Fixed => "fixed",
        }
    }

    /// Order `p` of the local error estimate used by the step controller.
    pub fn error_order(&self) -> f64 {
        match self {
            Scheme::Rk3 => 3.0,
            _ => 2.0,
        }
    }

    pub fn is_smooth_baseline(&self) -> bool {
        matches!(self, Scheme::Ie | Scheme::Rk3)
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cenic1" => Ok(Scheme::Cenic1),
            "cenic2" => Ok(Scheme::Cenic2),
            "ie" => Ok(Scheme::Ie),
            "rk3" => Ok(Scheme::Rk3),
            "fixed" => Ok(Scheme::Fixed),
            other => Err(Error::validation("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrorNormKind {
    /// `‖S(q − q̂)‖_∞`.
    #[default]
    Position,
    /// Positions and velocities, velocities with unit weight.
    FullState,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinesearchInit {
    /// Hermite cubic through `ℓ(0), ℓ'(0), ℓ(α_max), ℓ'(α_max)`.
    #[default]
    Cubic,
    /// Start the root search at a fixed step.
    Fixed(f64),
}

/// Integrator settings as written in a scenario; everything is optional.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_safe: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max_grow: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_norm: Option<ErrorNormKind>,
    /// Per-coordinate error weights keyed by coordinate name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub error_weights: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hessian_reuse: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linesearch_init: Option<LinesearchInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

// ---------------------------------------------------------------------------
// Validated model
// ---------------------------------------------------------------------------

/// Validated contact material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactMaterial {
    /// N/m
    pub stiffness: f64,
    /// Hunt & Crossley dissipation, s/m
    pub dissipation: f64,
    pub mu_static: f64,
    pub mu_dynamic: f64,
    /// m/s
    pub stiction_tolerance: f64,
    pub transition_width: f64,
}

impl Default for ContactMaterial {
    fn default() -> Self {
        Self {
            stiffness: 1e5,
            dissipation: 0.0,
            mu_static: 0.5,
            mu_dynamic: 0.5,
            stiction_tolerance: DEFAULT_STICTION_TOLERANCE,
            transition_width: DEFAULT_TRANSITION_WIDTH,
        }
    }
}

impl ContactMaterial {
    /// Pairwise combination: harmonic-mean stiffness, minimum of everything
    /// else.
    pub fn combine(&self, other: &ContactMaterial) -> ContactMaterial {
        ContactMaterial {
            stiffness: 2.0 * self.stiffness * other.stiffness / (self.stiffness + other.stiffness),
            dissipation: self.dissipation.min(other.dissipation),
            mu_static: self.mu_static.min(other.mu_static),
            mu_dynamic: self.mu_dynamic.min(other.mu_dynamic),
            stiction_tolerance: self.stiction_tolerance.min(other.stiction_tolerance),
            transition_width: self.transition_width.min(other.transition_width),
        }
    }
}

/// Checks material invariants and fills in default regularization.
pub fn validate_material(spec: &MaterialSpec) -> Result<ContactMaterial> {
    let field = |f: &str| format!("materials.{}.{}", spec.name, f);
    let m = ContactMaterial {
        stiffness: spec.stiffness,
        dissipation: spec.dissipation,
        mu_static: spec.mu_static,
        mu_dynamic: spec.mu_dynamic,
        stiction_tolerance: spec.stiction_tolerance.unwrap_or(DEFAULT_STICTION_TOLERANCE),
        transition_width: spec.transition_width.unwrap_or(DEFAULT_TRANSITION_WIDTH),
    };
    if !(m.stiffness > 0.0 && m.stiffness.is_finite()) {
        return Err(Error::validation(field("stiffness"), "must be positive"));
    }
    if !(m.dissipation >= 0.0 && m.dissipation.is_finite()) {
        return Err(Error::validation(field("dissipation"), "must be non-negative"));
    }
    if !(m.mu_dynamic >= 0.0 && m.mu_dynamic.is_finite()) {
        return Err(Error::validation(field("mu_dynamic"), "must be non-negative"));
    }
    if !(m.mu_static >= m.mu_dynamic && m.mu_static.is_finite()) {
        return Err(Error::validation(
            field("mu_dynamic"),
            format!("mu_dynamic ({}) exceeds mu_static ({})", m.mu_dynamic, m.mu_static),
        ));
    }
    if !(m.stiction_tolerance > 0.0 && m.stiction_tolerance.is_finite()) {
        return Err(Error::validation(field("stiction_tolerance"), "must be positive"));
    }
    if !(m.transition_width > 0.0 && m.transition_width.is_finite()) {
        return Err(Error::validation(field("transition_width"), "must be positive"));
    }
    Ok(m)
}

/// Fully resolved integrator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub accuracy: f64,
    pub max_step: f64,
    pub scheme: Scheme,
    /// Constant step; disables error control when set.
    pub fixed_step: Option<f64>,
    pub k_init: f64,
    pub k_safe: f64,
    pub k_low: f64,
    pub k_high: f64,
    pub k_max_grow: f64,
    pub kappa: f64,
    pub error_norm: ErrorNormKind,
    /// `S`, one weight per position coordinate.
    pub error_weights: DVector<f64>,
    pub hessian_reuse: bool,
    pub linesearch_init: LinesearchInit,
    pub alpha_max: f64,
    /// Near-rigid constraint period as a fraction of the step.
    pub beta: f64,
    /// Desired maximum Newton iterations `N` for Hessian reuse.
    pub desired_iterations: usize,
}

impl IntegratorConfig {
    pub fn with_defaults(nq: usize) -> Self {
        Self {
            accuracy: 1e-3,
            max_step: 0.1,
            scheme: Scheme::Cenic1,
            fixed_step: None,
            k_init: 0.1,
            k_safe: 0.9,
            k_low: 0.9,
            k_high: 1.2,
            k_max_grow: 5.0,
            kappa: 1e-3,
            error_norm: ErrorNormKind::Position,
            error_weights: DVector::from_element(nq, 1.0),
            hessian_reuse: true,
            linesearch_init: LinesearchInit::Cubic,
            alpha_max: 1.5,
            beta: 0.1,
            desired_iterations: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.accuracy) {
            return Err(Error::validation("integrator.accuracy", "must be positive"));
        }
        if !pos(self.max_step) {
            return Err(Error::validation("integrator.max_step", "must be positive"));
        }
        if let Some(h) = self.fixed_step {
            if !pos(h) {
                return Err(Error::validation("integrator.fixed_step", "must be positive"));
            }
        }
        if !(self.k_low < 1.0 && 1.0 < self.k_high) {
            return Err(Error::validation("integrator.k_low", "need k_low < 1 < k_high"));
        }
        if !(pos(self.k_safe) && pos(self.k_init) && self.k_max_grow >= 1.0) {
            return Err(Error::validation("integrator.k_safe", "controller constants must be positive"));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::validation("integrator.kappa", "must lie in [0, 1]"));
        }
        if !pos(self.alpha_max) {
            return Err(Error::validation("integrator.alpha_max", "must be positive"));
        }
        if !pos(self.beta) {
            return Err(Error::validation("integrator.beta", "must be positive"));
        }
        if let LinesearchInit::Fixed(a) = self.linesearch_init {
            if !pos(a) {
                return Err(Error::validation("integrator.linesearch_init", "must be positive"));
            }
        }
        if self.error_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::validation("integrator.error_weights", "must be non-negative"));
        }
        Ok(())
    }

    /// Newton tolerance: `max(κ·ε_acc, 1e-8)` with error control, `1e-8`
    /// in fixed-step mode.
    pub fn solver_tolerance(&self) -> f64 {
        if self.fixed_step.is_some() || self.scheme == Scheme::Fixed {
            1e-8
        } else {
            (self.kappa * self.accuracy).max(1e-8)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BodyKind {
    Fixed { rotation: Matrix3<f64>, position: Vector3<f64> },
    Free { q_index: usize, v_index: usize },
    Jointed { joint: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    pub kind: BodyKind,
    pub mass: f64,
    pub inertia: Vector3<f64>,
    /// Center of mass in the body frame; zero for free bodies.
    pub com: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Parent jointed body, `None` for the world.
    pub parent: Option<usize>,
    pub child: usize,
    pub axis: Unit<Vector3<f64>>,
    pub origin: Vector3<f64>,
    pub limits: Option<(f64, f64)>,
    pub actuated: bool,
    pub q_index: usize,
    pub v_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Halfspace { normal: Unit<Vector3<f64>>, offset: f64, surface_velocity: Option<(Vector3<f64>, VelocityProfile)> },
    Box { half_extents: Vector3<f64> },
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Shape::Sphere { .. } => ShapeKind::Sphere,
            Shape::Halfspace { .. } => ShapeKind::Halfspace,
            Shape::Box { .. } => ShapeKind::Box,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub name: String,
    pub body: usize,
    pub shape: Shape,
    pub offset: Vector3<f64>,
    pub material: ContactMaterial,
}

/// A geometry pair that may produce contacts. The normal points from `b`
/// into `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContactPair {
    pub a: usize,
    pub b: usize,
}

/// Generalized state `x = [q; v]` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub gravity: Vector3<f64>,
    pub bodies: Vec<Body>,
    pub joints: Vec<Joint>,
    /// Jointed bodies ordered parents first.
    pub chain_order: Vec<usize>,
    pub geometries: Vec<Geometry>,
    pub pairs: Vec<ContactPair>,
    pub nq: usize,
    pub nv: usize,
    pub q_names: Vec<String>,
    pub v_names: Vec<String>,
    pub initial_state: SystemState,
    pub integrator: IntegratorConfig,
    pub controller: Option<ControllerSection>,
    pub duration: f64,
    pub seed: u64,
    pub contact_margin: f64,
}

impl Model {
    pub fn num_free_bodies(&self) -> usize {
        self.bodies.iter().filter(|b| matches!(b.kind, BodyKind::Free { .. })).count()
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Ranges of quaternion blocks in `q`.
    pub fn quaternion_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.bodies.iter().filter_map(|b| match b.kind {
            BodyKind::Free { q_index, .. } => Some(q_index + 3),
            _ => None,
        })
    }

    pub fn has_limits(&self) -> bool {
        self.joints.iter().any(|j| j.limits.is_some())
    }

    /// Resolves a DOF reference to a generalized velocity index (and the
    /// position index when the DOF has a matching coordinate).
    pub fn resolve_dof(&self, dof: &DofRef) -> Result<(usize, Option<usize>)> {
        match dof {
            DofRef::Joint { joint } => {
                let j = self
                    .joint_index(joint)
                    .ok_or_else(|| Error::validation("controller", format!("unknown joint `{joint}`")))?;
                Ok((self.joints[j].v_index, Some(self.joints[j].q_index)))
            }
            DofRef::Body { body, axis } => {
                let b = self
                    .body_index(body)
                    .ok_or_else(|| Error::validation("controller", format!("unknown body `{body}`")))?;
                match self.bodies[b].kind {
                    BodyKind::Free { q_index, v_index } if *axis < 6 => {
                        Ok((v_index + axis, if *axis < 3 { Some(q_index + axis) } else { None }))
                    }
                    BodyKind::Jointed { joint } if *axis == 0 => {
                        Ok((self.joints[joint].v_index, Some(self.joints[joint].q_index)))
                    }
                    _ => Err(Error::validation("controller", format!("body `{body}` has no DOF {axis}"))),
                }
            }
        }
    }
}

/// Parses scenario text.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Builds and validates a [`Model`] from a scenario.
pub fn assemble_model(scenario: &ScenarioSpec) -> Result<Model> {
    let gravity = Vector3::from(scenario.gravity);
    if !gravity.iter().all(|g| g.is_finite()) {
        return Err(Error::validation("gravity", "must be finite"));
    }
    if !(scenario.duration > 0.0 && scenario.duration.is_finite()) {
        return Err(Error::validation("duration", "must be positive"));
    }
    let margin = scenario.contact_margin.unwrap_or(DEFAULT_CONTACT_MARGIN);
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::validation("contact_margin", "must be non-negative"));
    }

    let mut materials: HashMap<&str, ContactMaterial> = HashMap::new();
    for m in &scenario.materials {
        if materials.insert(m.name.as_str(), validate_material(m)?).is_some() {
            return Err(Error::validation(format!("materials.{}", m.name), "duplicate material name"));
        }
    }

    // Names must be unique across bodies.
    let mut seen = HashSet::new();
    for b in &scenario.bodies {
        if b.name.is_empty() || b.name == "world" {
            return Err(Error::validation("bodies.name", format!("invalid body name `{}`", b.name)));
        }
        if !seen.insert(b.name.as_str()) {
            return Err(Error::validation(format!("bodies.{}", b.name), "duplicate body name"));
        }
    }
    let mut seen = HashSet::new();
    for j in &scenario.joints {
        if !seen.insert(j.name.as_str()) {
            return Err(Error::validation(format!("joints.{}", j.name), "duplicate joint name"));
        }
    }

    let body_index: HashMap<&str, usize> =
        scenario.bodies.iter().enumerate().map(|(i, b)| (b.name.as_str(), i)).collect();

    // Which joint drives each jointed body.
    let mut joint_of_body: HashMap<usize, usize> = HashMap::new();
    for (ji, j) in scenario.joints.iter().enumerate() {
        let child = *body_index
            .get(j.child.as_str())
            .ok_or_else(|| Error::validation(format!("joints.{}.child", j.name), format!("unknown body `{}`", j.child)))?;
        if scenario.bodies[child].kind != BodyKindSpec::Jointed {
            return Err(Error::validation(
                format!("joints.{}.child", j.name),
                format!("body `{}` is not of kind `jointed`", j.child),
            ));
        }
        if joint_of_body.insert(child, ji).is_some() {
            return Err(Error::validation(format!("joints.{}.child", j.name), "body already has a joint"));
        }
    }

    // Coordinates, in body declaration order.
    let mut nq = 0;
    let mut nv = 0;
    let mut q_names = Vec::new();
    let mut v_names = Vec::new();
    let mut q0 = Vec::new();
    let mut v0 = Vec::new();
    let mut bodies = Vec::with_capacity(scenario.bodies.len());
    let mut joint_slots: HashMap<usize, (usize, usize)> = HashMap::new();

    for (bi, b) in scenario.bodies.iter().enumerate() {
        let field = |f: &str| format!("bodies.{}.{}", b.name, f);
        let mut inertia = Vector3::from(b.inertia);
        let mut mass = b.mass;
        let quat = {
            let o = b.orientation;
            let norm = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2] + o[3] * o[3]).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
                return Err(Error::validation(field("orientation"), format!("quaternion norm {norm} is not 1")));
            }
            [o[0] / norm, o[1] / norm, o[2] / norm, o[3] / norm]
        };
        if !b.position.iter().chain(&b.velocity).chain(&b.angular_velocity).chain(&b.com).all(|x| x.is_finite()) {
            return Err(Error::validation(field("position"), "non-finite initial state"));
        }
        let kind = match b.kind {
            BodyKindSpec::Fixed => {
                mass = 0.0;
                inertia = Vector3::zeros();
                let r = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(quat[0], quat[1], quat[2], quat[3]));
                BodyKind::Fixed {
                    rotation: *r.to_rotation_matrix().matrix(),
                    position: Vector3::from(b.position),
                }
            }
            BodyKindSpec::Free | BodyKindSpec::Jointed => {
                if !(mass > 0.0 && mass.is_finite()) {
                    return Err(Error::validation(field("mass"), format!("must be positive, got {mass}")));
                }
                if !inertia.iter().all(|i| *i > 0.0 && i.is_finite()) {
                    return Err(Error::validation(field("inertia"), "principal moments must be positive"));
                }
                if b.kind == BodyKindSpec::Free {
                    let kind = BodyKind::Free { q_index: nq, v_index: nv };
                    for (s, x) in ["x", "y", "z", "qw", "qx", "qy", "qz"].iter().zip(b.position.iter().chain(&quat)) {
                        q_names.push(format!("{}.{}", b.name, s));
                        q0.push(*x);
                    }
                    for (s, x) in ["vx", "vy", "vz", "wx", "wy", "wz"].iter().zip(b.velocity.iter().chain(&b.angular_velocity)) {
                        v_names.push(format!("{}.{}", b.name, s));
                        v0.push(*x);
                    }
                    nq += 7;
                    nv += 6;
                    kind
                } else {
                    let ji = *joint_of_body
                        .get(&bi)
                        .ok_or_else(|| Error::validation(field("kind"), "jointed body has no joint"))?;
                    let j = &scenario.joints[ji];
                    joint_slots.insert(ji, (nq, nv));
                    q_names.push(format!("{}.q", j.name));
                    v_names.push(format!("{}.v", j.name));
                    q0.push(j.position);
                    v0.push(j.velocity);
                    nq += 1;
                    nv += 1;
                    BodyKind::Jointed { joint: ji }
                }
            }
        };
        bodies.push(Body {
            name: b.name.clone(),
            kind,
            mass,
            inertia,
            com: if b.kind == BodyKindSpec::Jointed { Vector3::from(b.com) } else { Vector3::zeros() },
        });
    }

    let mut joints = Vec::with_capacity(scenario.joints.len());
    for (ji, j) in scenario.joints.iter().enumerate() {
        let field = |f: &str| format!("joints.{}.{}", j.name, f);
        let child = body_index[j.child.as_str()];
        let parent = if j.parent == "world" {
            None
        } else {
            let p = *body_index
                .get(j.parent.as_str())
                .ok_or_else(|| Error::validation(field("parent"), format!("unknown body `{}`", j.parent)))?;
            if scenario.bodies[p].kind != BodyKindSpec::Jointed {
                return Err(Error::validation(field("parent"), "parent must be `world` or a jointed body"));
            }
            Some(p)
        };
        let axis = Vector3::from(j.axis);
        if !axis.iter().all(|a| a.is_finite()) || (axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::validation(field("axis"), "axis must have unit norm"));
        }
        let limits = match j.limits {
            Some([lo, hi]) => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::validation(field("limits"), "need finite c_l ≤ c_u"));
                }
                Some((lo, hi))
            }
            None => None,
        };
        if !(j.position.is_finite() && j.velocity.is_finite() && j.origin.iter().all(|o| o.is_finite())) {
            return Err(Error::validation(field("position"), "non-finite joint state"));
        }
        let (q_index, v_index) = joint_slots[&ji];
        joints.push(Joint {
            name: j.name.clone(),
            kind: j.kind,
            parent,
            child,
            axis: Unit::new_normalize(axis),
            origin: Vector3::from(j.origin),
            limits,
            actuated: j.actuated,
            q_index,
            v_index,
        });
    }

    let chain_order = chain_order(&bodies, &joints)?;

    let mut geometries = Vec::new();
    for (bi, b) in scenario.bodies.iter().enumerate() {
        for (gi, g) in b.geometry.iter().enumerate() {
            let name = if g.name.is_empty() { format!("{}/{}", b.name, gi) } else { g.name.clone() };
            let field = |f: &str| format!("bodies.{}.geometry.{}.{}", b.name, gi, f);
            let material = match &g.material {
                Some(m) => *materials
                    .get(m.as_str())
                    .ok_or_else(|| Error::validation(field("material"), format!("unknown material `{m}`")))?,
                None => ContactMaterial::default(),
            };
            let shape = match &g.shape {
                ShapeSpec::Sphere { radius } => {
                    if !(*radius > 0.0 && radius.is_finite()) {
                        return Err(Error::validation(field("radius"), "must be positive"));
                    }
                    Shape::Sphere { radius: *radius }
                }
                ShapeSpec::Box { half_extents } => {
                    if !half_extents.iter().all(|h| *h > 0.0 && h.is_finite()) {
                        return Err(Error::validation(field("half_extents"), "must be positive"));
                    }
                    Shape::Box { half_extents: Vector3::from(*half_extents) }
                }
                ShapeSpec::Halfspace { normal, offset, surface_velocity } => {
                    if b.kind != BodyKindSpec::Fixed {
                        return Err(Error::Configuration(format!(
                            "halfspace `{name}` must belong to a fixed body"
                        )));
                    }
                    let n = Vector3::from(*normal);
                    if !n.iter().all(|a| a.is_finite()) || (n.norm() - 1.0).abs() > 1e-9 {
                        return Err(Error::validation(field("normal"), "normal must have unit norm"));
                    }
                    let surface_velocity = match surface_velocity {
                        Some(sv) => {
                            let d = Vector3::from(sv.direction);
                            if !d.iter().all(|a| a.is_finite()) || d.norm() == 0.0 {
                                return Err(Error::validation(field("surface_velocity"), "direction must be non-zero"));
                            }
                            if let VelocityProfile::PiecewiseLinear { times, speeds, period } = &sv.profile {
                                if times.is_empty()
                                    || times.len() != speeds.len()
                                    || times.windows(2).any(|w| w[1] <= w[0])
                                    || period.is_some_and(|p| p <= 0.0)
                                {
                                    return Err(Error::validation(
                                        field("surface_velocity"),
                                        "piecewise profile needs increasing times matching speeds",
                                    ));
                                }
                            }
                            // Only the tangential part moves material points.
                            let tangential = d - n * n.dot(&d);
                            if tangential.norm() < 1e-12 {
                                return Err(Error::validation(field("surface_velocity"), "direction must be tangential"));
                            }
                            Some((tangential.normalize(), sv.profile.clone()))
                        }
                        None => None,
                    };
                    Shape::Halfspace { normal: Unit::new_normalize(n), offset: *offset, surface_velocity }
                }
            };
            geometries.push(Geometry {
                name,
                body: bi,
                shape,
                offset: Vector3::from(g.offset),
                material,
            });
        }
    }

    let excluded: HashSet<(ShapeKind, ShapeKind)> = scenario
        .excluded_shape_pairs
        .iter()
        .flat_map(|[a, b]| [(*a, *b), (*b, *a)])
        .collect();
    let mut pairs = Vec::new();
    for i in 0..geometries.len() {
        for j in (i + 1)..geometries.len() {
            let (gi, gj) = (&geometries[i], &geometries[j]);
            if gi.body == gj.body {
                continue;
            }
            let fixed = |g: &Geometry| matches!(bodies[g.body].kind, BodyKind::Fixed { .. });
            if fixed(gi) && fixed(gj) {
                continue;
            }
            let (ki, kj) = (gi.shape.kind(), gj.shape.kind());
            if excluded.contains(&(ki, kj)) {
                continue;
            }
            use ShapeKind::*;
            let pair = match (ki, kj) {
                (Sphere, Sphere) => ContactPair { a: i, b: j },
                (Sphere, Halfspace) | (Sphere, Box) | (Box, Halfspace) => ContactPair { a: i, b: j },
                (Halfspace, Sphere) | (Box, Sphere) | (Halfspace, Box) => ContactPair { a: j, b: i },
                _ => {
                    return Err(Error::Configuration(format!(
                        "unsupported shape pair {:?}–{:?} between `{}` and `{}`",
                        ki, kj, gi.name, gj.name
                    )))
                }
            };
            pairs.push(pair);
        }
    }

    let mut integrator = IntegratorConfig::with_defaults(nq);
    apply_integrator_spec(&mut integrator, &scenario.integrator, &q_names)?;

    let mut q0 = DVector::from_vec(q0);
    // Initial joint states are taken verbatim; quaternions were normalized above.
    for (k, name) in q_names.iter().enumerate() {
        if !q0[k].is_finite() {
            return Err(Error::validation(name.clone(), "non-finite initial position"));
        }
    }
    normalize_quaternions_in(&bodies, &mut q0);

    let model = Model {
        name: scenario.name.clone(),
        gravity,
        bodies,
        joints,
        chain_order,
        geometries,
        pairs,
        nq,
        nv,
        q_names,
        v_names,
        initial_state: SystemState { q: q0, v: DVector::from_vec(v0), t: 0.0 },
        integrator,
        controller: scenario.controller.clone(),
        duration: scenario.duration,
        seed: scenario.seed,
        contact_margin: margin,
    };
    if let Some(c) = &model.controller {
        // Resolve everything once so bad references fail at assembly time.
        crate::external::build_controller(&model, c)?;
    }
    Ok(model)
}

/// Overlays scenario integrator settings on `cfg`.
pub fn apply_integrator_spec(cfg: &mut IntegratorConfig, spec: &IntegratorSpec, q_names: &[String]) -> Result<()> {
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(x) = spec.$f { cfg.$f = x; } )* };
    }
    set!(accuracy, max_step, scheme, k_init, k_safe, k_low, k_high, k_max_grow, kappa, error_norm, hessian_reuse, linesearch_init, alpha_max, beta);
    if spec.fixed_step.is_some() {
        cfg.fixed_step = spec.fixed_step;
    }
    for (name, w) in &spec.error_weights {
        let k = q_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::validation("integrator.error_weights", format!("unknown coordinate `{name}`")))?;
        cfg.error_weights[k] = *w;
    }
    cfg.validate()
}

fn normalize_quaternions_in(bodies: &[Body], q: &mut DVector<f64>) {
    for b in bodies {
        if let BodyKind::Free { q_index, .. } = b.kind {
            let s = q_index + 3;
            let n = (q[s].powi(2) + q[s + 1].powi(2) + q[s + 2].powi(2) + q[s + 3].powi(2)).sqrt();
            for k in s..s + 4 {
                q[k] /= n;
            }
        }
    }
}

fn chain_order(bodies: &[Body], joints: &[Joint]) -> Result<Vec<usize>> {
    let mut order = Vec::new();
    let mut placed = vec![false; bodies.len()];
    let jointed: Vec<usize> = joints.iter().map(|j| j.child).collect();
    loop {
        let before = order.len();
        for j in joints {
            if placed[j.child] {
                continue;
            }
            if j.parent.is_none_or(|p| placed[p]) {
                placed[j.child] = true;
                order.push(j.child);
            }
        }
        if order.len() == jointed.len() {
            break;
        }
        if order.len() == before {
            return Err(Error::validation("joints", "joint parents form a cycle"));
        }
    }
    for j in joints {
        let mut depth = 1;
        let mut p = j.parent;
        while let Some(pb) = p {
            depth += 1;
            let BodyKind::Jointed { joint } = bodies[pb].kind else { unreachable!() };
            p = joints[joint].parent;
        }
        if depth > 3 {
            return Err(Error::Configuration(format!(
                "joint `{}` sits at depth {depth}; serial chains are limited to depth 3",
                j.name
            )));
        }
    }
    Ok(order)
}

impl SystemState {
    pub fn new(q: DVector<f64>, v: DVector<f64>, t: f64) -> Self {
        Self { q, v, t }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && crate::linalg::is_finite(&self.q) && crate::linalg::is_finite(&self.v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(name: &str, pos: [f64; 3]) -> BodySpec {
        BodySpec {
            name: name.into(),
            kind: BodyKindSpec::Free,
            mass: 1.0,
            inertia: [0.004; 3],
            geometry: vec![GeometrySpec {
                name: String::new(),
                shape: ShapeSpec::Sphere { radius: 0.1 },
                material: None,
                offset: [0.0; 3],
            }],
            position: pos,
            orientation: identity_quaternion(),
            velocity: [0.0; 3],
            angular_velocity: [0.0; 3],
            com: [0.0; 3],
        }
    }

    fn scenario(bodies: Vec<BodySpec>) -> ScenarioSpec {
        ScenarioSpec {
            name: "t".into(),
            gravity: default_gravity(),
            materials: vec![],
            bodies,
            joints: vec![],
            controller: None,
            integrator: IntegratorSpec::default(),
            duration: 1.0,
            seed: 0,
            excluded_shape_pairs: vec![],
            contact_margin: None,
        }
    }

    fn halfspace(normal: [f64; 3], offset: f64) -> GeometrySpec {
        GeometrySpec {
            name: String::new(),
            shape: ShapeSpec::Halfspace { normal, offset, surface_velocity: None },
            material: None,
            offset: [0.0; 3],
        }
    }

    fn bin() -> BodySpec {
        BodySpec {
            name: "bin".into(),
            kind: BodyKindSpec::Fixed,
            mass: 0.0,
            inertia: [0.0; 3],
            geometry: vec![
                halfspace([0.0, 0.0, 1.0], 0.0),
                halfspace([1.0, 0.0, 0.0], -0.5),
                halfspace([-1.0, 0.0, 0.0], -0.5),
                halfspace([0.0, 1.0, 0.0], -0.5),
                halfspace([0.0, -1.0, 0.0], -0.5),
            ],
            position: [0.0; 3],
            orientation: identity_quaternion(),
            velocity: [0.0; 3],
            angular_velocity: [0.0; 3],
            com: [0.0; 3],
        }
    }

    #[test]
    fn single_free_sphere_sizes() {
        let m = assemble_model(&scenario(vec![sphere("ball", [0.0, 0.0, 1.0])])).unwrap();
        assert_eq!((m.nq, m.nv), (7, 6));
        assert_eq!(m.integrator.error_weights.len(), 7);
        assert!(m.integrator.error_weights.iter().all(|w| *w == 1.0));
    }

    #[test]
    fn prismatic_slider_sizes() {
        let mut s = scenario(vec![BodySpec {
            kind: BodyKindSpec::Jointed,
            geometry: vec![],
            ..sphere("slider", [0.0; 3])
        }]);
        s.joints.push(JointSpec {
            name: "rail".into(),
            kind: JointKind::Prismatic,
            parent: "world".into(),
            child: "slider".into(),
            axis: [1.0, 0.0, 0.0],
            origin: [0.0; 3],
            limits: Some([-1.0, 1.0]),
            actuated: true,
            position: 0.0,
            velocity: 0.0,
        });
        let m = assemble_model(&s).unwrap();
        assert_eq!((m.nq, m.nv), (1, 1));
        assert_eq!(m.q_names, vec!["rail.q"]);
    }

    #[test]
    fn clutter_pair_counts() {
        let mut bodies: Vec<BodySpec> = (0..20).map(|i| sphere(&format!("s{i}"), [0.0, 0.0, i as f64])).collect();
        bodies.push(bin());
        let m = assemble_model(&scenario(bodies)).unwrap();
        assert_eq!((m.nq, m.nv), (140, 120));
        let kinds = |p: &ContactPair| (m.geometries[p.a].shape.kind(), m.geometries[p.b].shape.kind());
        let sh = m.pairs.iter().filter(|p| kinds(p) == (ShapeKind::Sphere, ShapeKind::Halfspace)).count();
        let ss = m.pairs.iter().filter(|p| kinds(p) == (ShapeKind::Sphere, ShapeKind::Sphere)).count();
        assert_eq!(sh, 100);
        assert_eq!(ss, 190);
        assert_eq!(m.pairs.len(), 290);
        assert_eq!(m.nq - m.nv, m.num_free_bodies());
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = assemble_model(&scenario(vec![sphere("a", [0.0; 3]), sphere("a", [1.0, 0.0, 0.0])])).unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "bodies.a"), "{err}");
    }

    #[test]
    fn nonpositive_mass_names_field() {
        let mut b = sphere("a", [0.0; 3]);
        b.mass = 0.0;
        let err = assemble_model(&scenario(vec![b])).unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "bodies.a.mass"), "{err}");
    }

    #[test]
    fn malformed_quaternion_rejected() {
        let mut b = sphere("a", [0.0; 3]);
        b.orientation = [1.0, 1.0, 0.0, 0.0];
        let err = assemble_model(&scenario(vec![b])).unwrap_err();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "bodies.a.orientation"), "{err}");
    }

    #[test]
    fn box_box_requires_exclusion() {
        let boxed = |name: &str| BodySpec {
            geometry: vec![GeometrySpec {
                name: String::new(),
                shape: ShapeSpec::Box { half_extents: [0.1; 3] },
                material: None,
                offset: [0.0; 3],
            }],
            ..sphere(name, [0.0; 3])
        };
        let mut s = scenario(vec![boxed("a"), boxed("b")]);
        assert!(matches!(assemble_model(&s), Err(Error::Configuration(_))));
        s.excluded_shape_pairs.push([ShapeKind::Box, ShapeKind::Box]);
        assert!(assemble_model(&s).unwrap().pairs.is_empty());
    }

    #[test]
    fn material_validation() {
        let spec = |mu_s: f64, mu_d: f64, v_s: Option<f64>| MaterialSpec {
            name: "m".into(),
            stiffness: 1e4,
            dissipation: 0.0,
            mu_static: mu_s,
            mu_dynamic: mu_d,
            stiction_tolerance: v_s,
            transition_width: None,
        };
        let m = validate_material(&spec(1.0, 0.5, Some(1e-4))).unwrap();
        assert_eq!(m.transition_width, 10.0);
        let m = validate_material(&spec(0.5, 0.5, None)).unwrap();
        assert_eq!(m.stiction_tolerance, 1e-4);
        assert!(validate_material(&spec(0.3, 0.5, None)).is_err());
        assert!(validate_material(&spec(1.0, 0.5, Some(0.0))).is_err());
    }

    #[test]
    fn assembly_is_deterministic() {
        let mut bodies: Vec<BodySpec> = (0..3).map(|i| sphere(&format!("s{i}"), [0.0, 0.0, i as f64])).collect();
        bodies.push(bin());
        let text = serde_json::to_string(&scenario(bodies)).unwrap();
        let a = assemble_model(&parse_scenario(&text).unwrap()).unwrap();
        let b = assemble_model(&parse_scenario(&text).unwrap()).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.initial_state, b.initial_state);
        assert_eq!(a.q_names, b.q_names);
    }

    #[test]
    fn piecewise_profile_repeats() {
        let p = VelocityProfile::PiecewiseLinear { times: vec![0.0, 1.0, 2.0], speeds: vec![0.0, 1.0, 0.0], period: Some(2.0) };
        assert_eq!(p.speed(0.5), 0.5);
        assert_eq!(p.speed(2.5), 0.5);
        assert_eq!(p.speed(1.5), 0.5);
    }
}
