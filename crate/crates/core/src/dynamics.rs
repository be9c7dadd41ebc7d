//! Mass matrix, bias forces, kinematic map and position updates.
//!
//! Free bodies use `q = [p; w, x, y, z]` and `v = [ṗ; ω]` with `ω` in the
//! world frame. Jointed bodies hang off world-attached serial chains of
//! prismatic and revolute joints. The momentum balance is `M v̇ + k = τ`, so
//! `k` carries Coriolis, gyroscopic and gravity terms.

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};

use crate::model::{BodyKind, JointKind, Model};

/// Mass matrix and bias force at one state.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// World pose of a body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl BodyPose {
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation * p
    }
}

/// Body poses plus the world-frame joint axes and origins at one `q`.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub poses: Vec<BodyPose>,
    pub joint_axes: Vec<Vector3<f64>>,
    pub joint_origins: Vec<Vector3<f64>>,
}

pub(crate) fn quaternion_at(q: &DVector<f64>, s: usize) -> UnitQuaternion<f64> {
    UnitQuaternion::new_unchecked(Quaternion::new(q[s], q[s + 1], q[s + 2], q[s + 3]))
}

impl Kinematics {
    pub fn compute(model: &Model, q: &DVector<f64>) -> Self {
        let mut poses = vec![
            BodyPose {
                rotation: Matrix3::identity(),
                position: Vector3::zeros(),
            };
            model.bodies.len()
        ];
        for (i, b) in model.bodies.iter().enumerate() {
            match &b.kind {
                BodyKind::Fixed { rotation, position } => {
                    poses[i] = BodyPose { rotation: *rotation, position: *position };
                }
                BodyKind::Free { q_index, .. } => {
                    poses[i] = BodyPose {
                        rotation: *quaternion_at(q, q_index + 3).to_rotation_matrix().matrix(),
                        position: Vector3::new(q[*q_index], q[q_index + 1], q[q_index + 2]),
                    };
                }
                BodyKind::Jointed { .. } => {}
            }
        }
        let mut joint_axes = vec![Vector3::zeros(); model.joints.len()];
        let mut joint_origins = vec![Vector3::zeros(); model.joints.len()];
        for &bi in &model.chain_order {
            let BodyKind::Jointed { joint } = model.bodies[bi].kind else { unreachable!() };
            let j = &model.joints[joint];
            let parent = match j.parent {
                Some(p) => poses[p],
                None => BodyPose { rotation: Matrix3::identity(), position: Vector3::zeros() },
            };
            let axis = parent.rotation * j.axis.into_inner();
            let origin = parent.transform_point(&j.origin);
            let qj = q[j.q_index];
            poses[bi] = match j.kind {
                JointKind::Prismatic => BodyPose { rotation: parent.rotation, position: origin + axis * qj },
                JointKind::Revolute => BodyPose {
                    rotation: parent.rotation * Rotation3::from_axis_angle(&j.axis, qj).matrix(),
                    position: origin,
                },
            };
            joint_axes[joint] = axis;
            joint_origins[joint] = origin;
        }
        Self { poses, joint_axes, joint_origins }
    }

    /// World position of the body's center of mass.
    pub fn com(&self, model: &Model, body: usize) -> Vector3<f64> {
        self.poses[body].transform_point(&model.bodies[body].com)
    }

    /// Columns of `∂ẋ/∂v` for a world point `x` rigidly attached to `body`.
    pub fn point_jacobian(&self, model: &Model, body: usize, x: &Vector3<f64>) -> Vec<(usize, Vector3<f64>)> {
        let mut cols = Vec::new();
        match model.bodies[body].kind {
            BodyKind::Fixed { .. } => {}
            BodyKind::Free { v_index, .. } => {
                let r = x - self.poses[body].position;
                for k in 0..3 {
                    cols.push((v_index + k, Vector3::ith(k, 1.0)));
                    cols.push((v_index + 3 + k, Vector3::<f64>::ith(k, 1.0).cross(&r)));
                }
            }
            BodyKind::Jointed { joint } => {
                let mut jt = Some(joint);
                while let Some(ji) = jt {
                    let j = &model.joints[ji];
                    let a = self.joint_axes[ji];
                    let col = match j.kind {
                        JointKind::Prismatic => a,
                        JointKind::Revolute => a.cross(&(x - self.joint_origins[ji])),
                    };
                    cols.push((j.v_index, col));
                    jt = j.parent.map(|p| match model.bodies[p].kind {
                        BodyKind::Jointed { joint } => joint,
                        _ => unreachable!(),
                    });
                }
            }
        }
        cols
    }

    /// Columns of `∂ω/∂v` for `body`.
    pub fn angular_jacobian(&self, model: &Model, body: usize) -> Vec<(usize, Vector3<f64>)> {
        let mut cols = Vec::new();
        match model.bodies[body].kind {
            BodyKind::Fixed { .. } => {}
            BodyKind::Free { v_index, .. } => {
                for k in 0..3 {
                    cols.push((v_index + 3 + k, Vector3::ith(k, 1.0)));
                }
            }
            BodyKind::Jointed { joint } => {
                let mut jt = Some(joint);
                while let Some(ji) = jt {
                    let j = &model.joints[ji];
                    if j.kind == JointKind::Revolute {
                        cols.push((j.v_index, self.joint_axes[ji]));
                    }
                    jt = j.parent.map(|p| match model.bodies[p].kind {
                        BodyKind::Jointed { joint } => joint,
                        _ => unreachable!(),
                    });
                }
            }
        }
        cols
    }
}

/// Velocity of a world point attached to `body`.
pub fn point_velocity(cols: &[(usize, Vector3<f64>)], v: &DVector<f64>) -> Vector3<f64> {
    cols.iter().fold(Vector3::zeros(), |acc, (i, c)| acc + c * v[*i])
}

fn world_inertia(rotation: &Matrix3<f64>, principal: &Vector3<f64>) -> Matrix3<f64> {
    rotation * Matrix3::from_diagonal(principal) * rotation.transpose()
}

/// `M(q)` and `k(q, v)`.
pub fn dynamics_terms(model: &Model, q: &DVector<f64>, v: &DVector<f64>) -> DynamicsTerms {
    let nv = model.nv;
    let mut mass = DMatrix::zeros(nv, nv);
    let mut bias = DVector::zeros(nv);
    let g = model.gravity;
    let kin = Kinematics::compute(model, q);

    for (i, b) in model.bodies.iter().enumerate() {
        if let BodyKind::Free { v_index, .. } = b.kind {
            let iw = world_inertia(&kin.poses[i].rotation, &b.inertia);
            let w = Vector3::new(v[v_index + 3], v[v_index + 4], v[v_index + 5]);
            for k in 0..3 {
                mass[(v_index + k, v_index + k)] = b.mass;
            }
            mass.view_mut((v_index + 3, v_index + 3), (3, 3)).copy_from(&iw);
            bias.fixed_rows_mut::<3>(v_index).copy_from(&(-b.mass * g));
            bias.fixed_rows_mut::<3>(v_index + 3).copy_from(&w.cross(&(iw * w)));
        }
    }

    if model.chain_order.is_empty() {
        return DynamicsTerms { mass, bias };
    }

    // Velocities and velocity-product accelerations of the jointed frames.
    let nb = model.bodies.len();
    let mut omega = vec![Vector3::zeros(); nb];
    let mut alpha = vec![Vector3::zeros(); nb];
    let mut vel = vec![Vector3::zeros(); nb];
    let mut acc = vec![Vector3::zeros(); nb];
    for &bi in &model.chain_order {
        let BodyKind::Jointed { joint } = model.bodies[bi].kind else { unreachable!() };
        let j = &model.joints[joint];
        let (w_p, a_p, v_p, acc_p, pos_p) = match j.parent {
            Some(p) => (omega[p], alpha[p], vel[p], acc[p], kin.poses[p].position),
            None => (Vector3::zeros(), Vector3::zeros(), Vector3::zeros(), Vector3::zeros(), Vector3::zeros()),
        };
        let axis = kin.joint_axes[joint];
        let qd = v[j.v_index];
        let r = kin.poses[bi].position - pos_p;
        match j.kind {
            JointKind::Revolute => {
                omega[bi] = w_p + axis * qd;
                alpha[bi] = a_p + w_p.cross(&axis) * qd;
                vel[bi] = v_p + w_p.cross(&r);
                acc[bi] = acc_p + a_p.cross(&r) + w_p.cross(&(vel[bi] - v_p));
            }
            JointKind::Prismatic => {
                omega[bi] = w_p;
                alpha[bi] = a_p;
                vel[bi] = v_p + w_p.cross(&r) + axis * qd;
                acc[bi] = acc_p + a_p.cross(&r) + w_p.cross(&(vel[bi] - v_p)) + w_p.cross(&axis) * qd;
            }
        }
    }

    for &bi in &model.chain_order {
        let b = &model.bodies[bi];
        let c = kin.com(model, bi);
        let r = c - kin.poses[bi].position;
        let w = omega[bi];
        let a_c = acc[bi] + alpha[bi].cross(&r) + w.cross(&w.cross(&r));
        let iw = world_inertia(&kin.poses[bi].rotation, &b.inertia);
        let jv = kin.point_jacobian(model, bi, &c);
        let jw = kin.angular_jacobian(model, bi);
        let f_lin = b.mass * (a_c - g);
        let f_ang = iw * alpha[bi] + w.cross(&(iw * w));
        for (ia, ca) in &jv {
            bias[*ia] += ca.dot(&f_lin);
            for (ib, cb) in &jv {
                mass[(*ia, *ib)] += b.mass * ca.dot(cb);
            }
        }
        for (ia, ca) in &jw {
            bias[*ia] += ca.dot(&f_ang);
            for (ib, cb) in &jw {
                mass[(*ia, *ib)] += ca.dot(&(iw * cb));
            }
        }
    }
    DynamicsTerms { mass, bias }
}

/// Writes `N(q)·v` into `out` (length `n_q`).
pub fn apply_kinematic_map(model: &Model, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(model.nq);
    for b in &model.bodies {
        if let BodyKind::Free { q_index, v_index } = b.kind {
            for k in 0..3 {
                out[q_index + k] = v[v_index + k];
            }
            let s = q_index + 3;
            let (w, x) = (q[s], Vector3::new(q[s + 1], q[s + 2], q[s + 3]));
            let om = Vector3::new(v[v_index + 3], v[v_index + 4], v[v_index + 5]);
            out[s] = -0.5 * x.dot(&om);
            let xyz = 0.5 * (w * om + om.cross(&x));
            for k in 0..3 {
                out[s + 1 + k] = xyz[k];
            }
        }
    }
    for j in &model.joints {
        out[j.q_index] = v[j.v_index];
    }
    out
}

/// Dense `N(q)`, `n_q × n_v`.
pub fn kinematic_map(model: &Model, q: &DVector<f64>) -> DMatrix<f64> {
    let mut n = DMatrix::zeros(model.nq, model.nv);
    for b in &model.bodies {
        if let BodyKind::Free { q_index, v_index } = b.kind {
            for k in 0..3 {
                n[(q_index + k, v_index + k)] = 1.0;
            }
            let s = q_index + 3;
            let (w, x, y, z) = (q[s], q[s + 1], q[s + 2], q[s + 3]);
            let block = nalgebra::Matrix4x3::new(
                -x, -y, -z, //
                w, z, -y, //
                -z, w, x, //
                y, -x, w,
            ) * 0.5;
            n.view_mut((s, v_index + 3), (4, 3)).copy_from(&block);
        }
    }
    for j in &model.joints {
        n[(j.q_index, j.v_index)] = 1.0;
    }
    n
}

/// Rescales every quaternion block of `q` to unit norm.
pub fn normalize_quaternions(model: &Model, q: &mut DVector<f64>) {
    for s in model.quaternion_blocks() {
        let mut block = q.fixed_rows_mut::<4>(s);
        let n = block.norm();
        if n > 0.0 {
            block /= n;
        }
    }
}

/// `q + δt·N(q)·v_next`, quaternions renormalized.
pub fn advance_positions(model: &Model, q: &DVector<f64>, v_next: &DVector<f64>, dt: f64) -> DVector<f64> {
    let mut out = q + apply_kinematic_map(model, q, v_next) * dt;
    normalize_quaternions(model, &mut out);
    out
}

/// `q + (δt/2)·N̄·(v + v_next)`, quaternions renormalized.
pub fn advance_positions_trapezoid(
    model: &Model,
    q: &DVector<f64>,
    v: &DVector<f64>,
    v_next: &DVector<f64>,
    dt: f64,
    n_bar: &DMatrix<f64>,
) -> DVector<f64> {
    let mut out = q + n_bar * (v + v_next) * (0.5 * dt);
    normalize_quaternions(model, &mut out);
    out
}

/// Kinetic plus gravitational potential energy.
pub fn mechanical_energy(model: &Model, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let terms = dynamics_terms(model, q, v);
    let kin = Kinematics::compute(model, q);
    let kinetic = 0.5 * v.dot(&(&terms.mass * v));
    let potential: f64 = model
        .bodies
        .iter()
        .enumerate()
        .filter(|(_, b)| !matches!(b.kind, BodyKind::Fixed { .. }))
        .map(|(i, b)| -b.mass * model.gravity.dot(&kin.com(model, i)))
        .sum();
    kinetic + potential
}

/// Orientation of a free body as a rotation about `axis` by `angle`.
pub fn quaternion_from_axis_angle(axis: &Vector3<f64>, angle: f64) -> [f64; 4] {
    let q = UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle);
    [q.w, q.i, q.j, q.k]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use proptest::prelude::*;

    fn free_body(inertia: [f64; 3]) -> BodySpec {
        BodySpec {
            name: "b".into(),
            kind: BodyKindSpec::Free,
            mass: 1.0,
            inertia,
            geometry: vec![],
            position: [0.0; 3],
            orientation: [1.0, 0.0, 0.0, 0.0],
            velocity: [0.0; 3],
            angular_velocity: [0.0; 3],
            com: [0.0; 3],
        }
    }

    fn spec(bodies: Vec<BodySpec>, joints: Vec<JointSpec>) -> ScenarioSpec {
        serde_json::from_value(serde_json::json!({ "bodies": [], "duration": 1.0 }))
            .map(|mut s: ScenarioSpec| {
                s.bodies = bodies;
                s.joints = joints;
                s
            })
            .unwrap()
    }

    fn link(name: &str, com: [f64; 3], inertia: [f64; 3], mass: f64) -> BodySpec {
        BodySpec { name: name.into(), kind: BodyKindSpec::Jointed, mass, inertia, com, ..free_body([1.0; 3]) }
    }

    fn joint(name: &str, kind: JointKind, parent: &str, child: &str, axis: [f64; 3], origin: [f64; 3]) -> JointSpec {
        JointSpec {
            name: name.into(),
            kind,
            parent: parent.into(),
            child: child.into(),
            axis,
            origin,
            limits: None,
            actuated: true,
            position: 0.0,
            velocity: 0.0,
        }
    }

    /// Prismatic base carrying two revolute links.
    fn chain() -> Model {
        let s = 1.0 / 3f64.sqrt();
        assemble_model(&spec(
            vec![
                link("base", [0.0, 0.1, 0.0], [0.02, 0.03, 0.04], 2.0),
                link("upper", [0.3, 0.0, 0.05], [0.01, 0.05, 0.06], 1.5),
                link("lower", [0.2, -0.02, 0.0], [0.004, 0.02, 0.03], 0.7),
            ],
            vec![
                joint("slide", JointKind::Prismatic, "world", "base", [1.0, 0.0, 0.0], [0.0, 0.0, 0.5]),
                joint("shoulder", JointKind::Revolute, "base", "upper", [0.0, 1.0, 0.0], [0.0, 0.0, 0.1]),
                joint("elbow", JointKind::Revolute, "upper", "lower", [s, s, s], [0.6, 0.0, 0.0]),
            ],
        ))
        .unwrap()
    }

    /// Lagrangian oracle: `k = Ṁ v − ½ ∂(vᵀMv)/∂q + ∂V/∂q` by central differences.
    fn lagrangian_bias(model: &Model, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let h = 1e-6;
        let n = model.nv;
        let potential = |q: &DVector<f64>| mechanical_energy(model, q, &DVector::zeros(n));
        let mass = |q: &DVector<f64>| dynamics_terms(model, q, v).mass;
        let mut mdot = DMatrix::zeros(n, n);
        let mut out = DVector::zeros(n);
        for k in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let dm = (mass(&qp) - mass(&qm)) / (2.0 * h);
            mdot += &dm * v[k];
            out[k] += -0.5 * v.dot(&(&dm * v)) + (potential(&qp) - potential(&qm)) / (2.0 * h);
        }
        out + mdot * v
    }

    #[test]
    fn resting_sphere_terms() {
        let m = assemble_model(&spec(vec![free_body([0.004; 3])], vec![])).unwrap();
        let s = &m.initial_state;
        let t = dynamics_terms(&m, &s.q, &s.v);
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 1.0, 0.004, 0.004, 0.004]));
        assert!((t.mass - expect).norm() < 1e-15);
        assert_eq!(t.bias.as_slice(), &[0.0, 0.0, 9.81, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn principal_spin_has_no_gyroscopic_term() {
        let mut b = free_body([0.1, 0.2, 0.3]);
        b.angular_velocity = [0.0, 5.0, 0.0];
        let m = assemble_model(&spec(vec![b], vec![])).unwrap();
        let t = dynamics_terms(&m, &m.initial_state.q, &m.initial_state.v);
        assert!(t.bias.rows(3, 3).norm() < 1e-14);
    }

    #[test]
    fn chain_matches_lagrangian_oracle() {
        let m = chain();
        let q = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let v = DVector::from_vec(vec![0.4, 1.3, -2.1]);
        let t = dynamics_terms(&m, &q, &v);
        let oracle = lagrangian_bias(&m, &q, &v);
        assert!((&t.bias - &oracle).norm() < 1e-6 * oracle.norm().max(1.0), "{} vs {}", t.bias, oracle);
        assert!((&t.mass - t.mass.transpose()).norm() < 1e-12);
    }

    #[test]
    fn chain_mass_matches_kinetic_energy() {
        // Kinetic energy from finite-differenced COM motion.
        let m = chain();
        let q = DVector::from_vec(vec![-0.2, 0.5, 0.9]);
        let v = DVector::from_vec(vec![0.7, -0.6, 1.8]);
        let h = 1e-7;
        let qp = &q + &v * h;
        let qm = &q - &v * h;
        let (kp, km, k0) = (Kinematics::compute(&m, &qp), Kinematics::compute(&m, &qm), Kinematics::compute(&m, &q));
        let mut energy = 0.0;
        for &bi in &m.chain_order {
            let b = &m.bodies[bi];
            let vc = (kp.com(&m, bi) - km.com(&m, bi)) / (2.0 * h);
            let rdot = (kp.poses[bi].rotation - km.poses[bi].rotation) / (2.0 * h);
            let wx = rdot * k0.poses[bi].rotation.transpose();
            let w = Vector3::new(wx[(2, 1)], wx[(0, 2)], wx[(1, 0)]);
            let iw = world_inertia(&k0.poses[bi].rotation, &b.inertia);
            energy += 0.5 * b.mass * vc.norm_squared() + 0.5 * w.dot(&(iw * w));
        }
        let mass = dynamics_terms(&m, &q, &v).mass;
        let quad = 0.5 * v.dot(&(&mass * &v));
        assert!((quad - energy).abs() < 1e-7 * energy, "{quad} vs {energy}");
    }

    #[test]
    fn zero_velocity_keeps_positions() {
        let m = assemble_model(&spec(vec![free_body([1.0; 3])], vec![])).unwrap();
        let q = m.initial_state.q.clone();
        assert_eq!(advance_positions(&m, &q, &DVector::zeros(6), 0.1), q);
    }

    #[test]
    fn translation_update() {
        let m = assemble_model(&spec(vec![free_body([1.0; 3])], vec![])).unwrap();
        let q = m.initial_state.q.clone();
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let next = advance_positions(&m, &q, &v, 0.1);
        assert!((next[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rotation_update_close_to_exponential_map() {
        let m = assemble_model(&spec(vec![free_body([1.0; 3])], vec![])).unwrap();
        let q = m.initial_state.q.clone();
        let v = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.0, 10.0]);
        let next = advance_positions(&m, &q, &v, 0.01);
        let angle = quaternion_at(&next, 3).angle();
        // First-order update renormalized gives angle 2·atan(δt·ω/2).
        assert!((angle - 2.0 * (0.05f64).atan()).abs() < 1e-14);
        assert!((angle - 0.1).abs() < 1e-3);
    }

    #[test]
    fn trapezoid_constant_velocity_is_exact() {
        let m = assemble_model(&spec(vec![free_body([1.0; 3])], vec![])).unwrap();
        let q = m.initial_state.q.clone();
        let v = DVector::from_vec(vec![0.3, -0.2, 0.5, 0.0, 0.0, 0.0]);
        let n_bar = kinematic_map(&m, &q);
        let next = advance_positions_trapezoid(&m, &q, &v, &v, 0.2, &n_bar);
        assert!((next.rows(0, 3) - v.rows(0, 3) * 0.2).norm() < 1e-15);
    }

    #[test]
    fn trapezoid_rotation_is_second_order() {
        // Constant spin about z with the averaged map converges at rate 2.
        let m = assemble_model(&spec(vec![free_body([1.0; 3])], vec![])).unwrap();
        let w = 3.0;
        let t_end = 1.0;
        let v = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 0.0, w]);
        let mut errors = vec![];
        for n in [8, 16, 32, 64] {
            let dt = t_end / n as f64;
            let mut q = m.initial_state.q.clone();
            for _ in 0..n {
                let q_hat = advance_positions(&m, &q, &v, dt);
                let n_bar = (kinematic_map(&m, &q) + kinematic_map(&m, &q_hat)) * 0.5;
                q = advance_positions_trapezoid(&m, &q, &v, &v, dt, &n_bar);
            }
            let exact = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), w * t_end);
            errors.push(quaternion_at(&q, 3).angle_to(&exact));
        }
        for pair in errors.windows(2) {
            let slope = (pair[0] / pair[1]).log2();
            assert!((slope - 2.0).abs() < 0.2, "slope {slope}, errors {errors:?}");
        }
    }

    #[test]
    fn kinematic_map_agrees_with_apply() {
        let m = chain();
        let q = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(kinematic_map(&m, &q) * &v, apply_kinematic_map(&m, &q, &v));
    }

    proptest! {
        #[test]
        fn quaternion_tangent_is_orthogonal(w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
                                            om in proptest::array::uniform3(-10.0..10.0f64)) {
            let n = (w * w + x * x + y * y + z * z).sqrt();
            prop_assume!(n > 1e-3);
            let m = assemble_model(&spec(vec![free_body([1.0; 3])], vec![])).unwrap();
            let q = DVector::from_vec(vec![0.0, 0.0, 0.0, w / n, x / n, y / n, z / n]);
            let v = DVector::from_vec(vec![0.0, 0.0, 0.0, om[0], om[1], om[2]]);
            let qd = apply_kinematic_map(&m, &q, &v);
            prop_assert!(q.rows(3, 4).dot(&qd.rows(3, 4)).abs() < 1e-12);
        }

        #[test]
        fn chain_mass_is_positive_definite(q in proptest::array::uniform3(-3.0..3.0f64),
                                           x in proptest::array::uniform3(-1.0..1.0f64)) {
            let m = chain();
            let x = DVector::from_row_slice(&x);
            prop_assume!(x.norm() > 1e-6);
            let mass = dynamics_terms(&m, &DVector::from_row_slice(&q), &DVector::zeros(3)).mass;
            prop_assert!(x.dot(&(&mass * &x)) > 0.0);
        }

        #[test]
        fn free_mass_is_positive_definite(qv in proptest::array::uniform4(-1.0..1.0f64),
                                          x in proptest::array::uniform6(-1.0..1.0f64)) {
            let n = qv.iter().map(|a| a * a).sum::<f64>().sqrt();
            prop_assume!(n > 1e-3);
            let m = assemble_model(&spec(vec![free_body([0.1, 0.5, 0.9])], vec![])).unwrap();
            let q = DVector::from_vec(vec![0.0, 0.0, 0.0, qv[0] / n, qv[1] / n, qv[2] / n, qv[3] / n]);
            let x = DVector::from_row_slice(&x);
            prop_assume!(x.norm() > 1e-6);
            let mass = dynamics_terms(&m, &q, &DVector::zeros(6)).mass;
            prop_assert!(x.dot(&(&mass * &x)) > 0.0);
        }
    }
}
