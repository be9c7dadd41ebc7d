//! Narrow-phase contact queries.
//!
//! Each [`ContactData`] carries a signed distance, a right-handed contact
//! frame `{t̂₁, t̂₂, n̂}` with `n̂` pointing from geometry B into geometry A,
//! and the 3-row Jacobian of the velocity of A relative to B at the contact
//! point, rows ordered `t̂₁, t̂₂, n̂`.

use nalgebra::{DVector, Vector3};

use crate::dynamics::{BodyPose, Kinematics};
use crate::linalg::SparseRows;
use crate::model::{ContactMaterial, Model, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct ContactData {
    /// Index into `model.pairs`.
    pub pair: usize,
    /// Sub-contact index within a pair (box vertices).
    pub sub: usize,
    /// Signed distance, negative when overlapping, m.
    pub phi: f64,
    pub normal: Vector3<f64>,
    pub point: Vector3<f64>,
    pub t1: Vector3<f64>,
    pub t2: Vector3<f64>,
    pub jacobian: SparseRows,
    /// Geometry whose surface moves, with the unit direction expressed in
    /// the contact frame.
    pub surface: Option<(usize, Vector3<f64>)>,
    /// Surface velocity in the contact frame at the query time, m/s.
    pub v_surface: Vector3<f64>,
    pub material: ContactMaterial,
}

impl ContactData {
    /// Prescribed surface velocity in the contact frame at time `t`.
    pub fn surface_velocity_at(&self, model: &Model, t: f64) -> Vector3<f64> {
        match self.surface {
            Some((g, dir)) => match &model.geometries[g].shape {
                Shape::Halfspace { surface_velocity: Some((_, profile)), .. } => dir * profile.speed(t),
                _ => Vector3::zeros(),
            },
            None => Vector3::zeros(),
        }
    }

    /// Contact-frame velocity `J·v − v_surface(t)`.
    pub fn contact_velocity(&self, model: &Model, v: &DVector<f64>, t: f64) -> Vector3<f64> {
        let mut out = [0.0; 3];
        self.jacobian.mul_into(v, &mut out);
        Vector3::from(out) - self.surface_velocity_at(model, t)
    }
}

/// Deterministic orthonormal tangents with `t̂₁ × t̂₂ = n̂`.
///
/// `t̂₁ = normalize(ŷ × n̂)` and `t̂₂ = n̂ × t̂₁`. The construction is
/// discontinuous only at `n̂ = ±ŷ`, where `t̂₁ = n̂ × ẑ` is used instead.
pub fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = Vector3::y().cross(n);
    let t1 = if a.norm() > 1e-9 { a.normalize() } else { n.cross(&Vector3::z()).normalize() };
    let t2 = n.cross(&t1);
    (t1, t2)
}

struct Candidate {
    sub: usize,
    phi: f64,
    normal: Vector3<f64>,
    point: Vector3<f64>,
}

fn geometry_pose(kin: &Kinematics, model: &Model, g: usize) -> BodyPose {
    let geom = &model.geometries[g];
    let pose = kin.poses[geom.body];
    BodyPose { rotation: pose.rotation, position: pose.transform_point(&geom.offset) }
}

fn box_vertices(pose: &BodyPose, h: &Vector3<f64>) -> [Vector3<f64>; 8] {
    let mut out = [Vector3::zeros(); 8];
    for (k, v) in out.iter_mut().enumerate() {
        let s = Vector3::new(
            if k & 1 == 0 { -h.x } else { h.x },
            if k & 2 == 0 { -h.y } else { h.y },
            if k & 4 == 0 { -h.z } else { h.z },
        );
        *v = pose.transform_point(&s);
    }
    out
}

/// Halfspace as world `(n̂, d)` with `n̂·x ≤ d` inside.
fn plane(pose: &BodyPose, normal: &Vector3<f64>, offset: f64) -> (Vector3<f64>, f64) {
    let n = pose.rotation * normal;
    (n, n.dot(&pose.transform_point(&(normal * offset))))
}

fn sphere_box(c: &Vector3<f64>, r: f64, pose: &BodyPose, h: &Vector3<f64>) -> Candidate {
    let local = pose.rotation.transpose() * (c - pose.position);
    let closest = local.zip_zip_map(h, &(-h), |p, hi, lo| p.clamp(lo, hi));
    let d = local - closest;
    let (n_local, surface_local, phi) = if d.norm() > 1e-12 {
        let dist = d.norm();
        (d / dist, closest, dist - r)
    } else {
        // Center inside the box: push out through the nearest face.
        let mut best = 0;
        let mut depth = f64::INFINITY;
        for k in 0..3 {
            let dk = h[k] - local[k].abs();
            if dk < depth {
                depth = dk;
                best = k;
            }
        }
        let sign = if local[best] >= 0.0 { 1.0 } else { -1.0 };
        let mut surface = local;
        surface[best] = sign * h[best];
        (Vector3::ith(best, sign), surface, -depth - r)
    };
    let normal = pose.rotation * n_local;
    let on_box = pose.transform_point(&surface_local);
    let on_sphere = c - normal * r;
    Candidate { sub: 0, phi, normal, point: (on_box + on_sphere) * 0.5 }
}

fn pair_candidates(model: &Model, kin: &Kinematics, a: usize, b: usize, margin: f64) -> Vec<Candidate> {
    let (ga, gb) = (&model.geometries[a], &model.geometries[b]);
    let (pa, pb) = (geometry_pose(kin, model, a), geometry_pose(kin, model, b));
    match (&ga.shape, &gb.shape) {
        (Shape::Sphere { radius: ra }, Shape::Sphere { radius: rb }) => {
            let d = pa.position - pb.position;
            let dist = d.norm();
            let phi = dist - ra - rb;
            if phi >= margin {
                return vec![];
            }
            let normal = if dist > 1e-12 { d / dist } else { Vector3::z() };
            let point = ((pa.position - normal * *ra) + (pb.position + normal * *rb)) * 0.5;
            vec![Candidate { sub: 0, phi, normal, point }]
        }
        (Shape::Sphere { radius }, Shape::Halfspace { normal, offset, .. }) => {
            let (n, d) = plane(&pb, &normal.into_inner(), *offset);
            let c = pa.position;
            let phi = n.dot(&c) - d - radius;
            if phi >= margin {
                return vec![];
            }
            vec![Candidate { sub: 0, phi, normal: n, point: c - n * (radius + 0.5 * phi) }]
        }
        (Shape::Sphere { radius }, Shape::Box { half_extents }) => {
            // Cheap reject on the bounding sphere.
            if (pa.position - pb.position).norm() - radius - half_extents.norm() >= margin {
                return vec![];
            }
            let cand = sphere_box(&pa.position, *radius, &pb, half_extents);
            if cand.phi >= margin {
                return vec![];
            }
            vec![cand]
        }
        (Shape::Box { half_extents }, Shape::Halfspace { normal, offset, .. }) => {
            let (n, d) = plane(&pb, &normal.into_inner(), *offset);
            let mut verts: Vec<(usize, f64, Vector3<f64>)> = box_vertices(&pa, half_extents)
                .iter()
                .enumerate()
                .map(|(k, x)| (k, n.dot(x) - d, *x))
                .filter(|(_, phi, _)| *phi < margin)
                .collect();
            verts.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            verts.truncate(4);
            verts.sort_by_key(|v| v.0);
            verts
                .into_iter()
                .map(|(k, phi, x)| Candidate { sub: k, phi, normal: n, point: x - n * (0.5 * phi) })
                .collect()
        }
        _ => unreachable!("pair kinds are checked at assembly"),
    }
}

/// All contacts with `φ < margin`, sorted by pair id.
pub fn query_contacts(model: &Model, q: &DVector<f64>, t: f64) -> Vec<ContactData> {
    let kin = Kinematics::compute(model, q);
    query_contacts_with(model, &kin, t)
}

pub fn query_contacts_with(model: &Model, kin: &Kinematics, t: f64) -> Vec<ContactData> {
    let mut out = Vec::new();
    for (pi, pair) in model.pairs.iter().enumerate() {
        let candidates = pair_candidates(model, kin, pair.a, pair.b, model.contact_margin);
        if candidates.is_empty() {
            continue;
        }
        let (ga, gb) = (&model.geometries[pair.a], &model.geometries[pair.b]);
        let material = ga.material.combine(&gb.material);
        for c in candidates {
            let (t1, t2) = tangent_basis(&c.normal);
            let frame = [t1, t2, c.normal];
            let mut cols = kin.point_jacobian(model, ga.body, &c.point);
            cols.extend(kin.point_jacobian(model, gb.body, &c.point).into_iter().map(|(i, w)| (i, -w)));
            let jacobian = SparseRows::from_world_columns(cols, &frame);
            let surface = match &gb.shape {
                Shape::Halfspace { surface_velocity: Some((dir, _)), .. } => {
                    // The surface moves relative to A, so its velocity is
                    // subtracted from A's.
                    let world = kin.poses[gb.body].rotation * dir;
                    Some((pair.b, Vector3::new(t1.dot(&world), t2.dot(&world), c.normal.dot(&world))))
                }
                _ => None,
            };
            let mut data = ContactData {
                pair: pi,
                sub: c.sub,
                phi: c.phi,
                normal: c.normal,
                point: c.point,
                t1,
                t2,
                jacobian,
                surface,
                v_surface: Vector3::zeros(),
                material,
            };
            data.v_surface = data.surface_velocity_at(model, t);
            out.push(data);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;
    use proptest::prelude::*;

    fn scenario(json: serde_json::Value) -> Model {
        assemble_model(&serde_json::from_value(json).unwrap()).unwrap()
    }

    fn ground() -> serde_json::Value {
        serde_json::json!({ "name": "ground", "kind": "fixed",
            "geometry": [{ "shape": { "type": "halfspace", "normal": [0, 0, 1] } }] })
    }

    fn ball(name: &str, pos: [f64; 3]) -> serde_json::Value {
        serde_json::json!({ "name": name, "kind": "free", "mass": 1.0, "inertia": [0.004, 0.004, 0.004],
            "position": pos, "geometry": [{ "shape": { "type": "sphere", "radius": 0.1 } }] })
    }

    #[test]
    fn sphere_below_plane_height() {
        let m = scenario(serde_json::json!({ "bodies": [ball("b", [0.0, 0.0, 0.05]), ground()] }));
        let c = query_contacts(&m, &m.initial_state.q, 0.0);
        assert_eq!(c.len(), 1);
        assert!((c[0].phi + 0.05).abs() < 1e-15);
        assert_eq!(c[0].normal, Vector3::z());
        // Normal row is the halfspace normal on the linear DOFs.
        let dense = c[0].jacobian.to_dense(6);
        assert_eq!(dense.row(2).columns(0, 3).transpose(), Vector3::z());
        assert_eq!(dense.row(2).columns(3, 3).norm(), 0.0);
    }

    #[test]
    fn separated_spheres_respect_margin() {
        let body = |n: &str, x: f64| ball(n, [x, 0.0, 1.0]);
        let mut m = scenario(serde_json::json!({ "bodies": [body("a", 0.0), body("b", 0.25)], "gravity": [0, 0, 0] }));
        assert!(query_contacts(&m, &m.initial_state.q, 0.0).is_empty());
        m.contact_margin = 0.06;
        let c = query_contacts(&m, &m.initial_state.q, 0.0);
        assert_eq!(c.len(), 1);
        assert!((c[0].phi - 0.05).abs() < 1e-14);
    }

    #[test]
    fn resting_box_has_four_equal_contacts() {
        let m = scenario(serde_json::json!({ "bodies": [
            { "name": "box", "kind": "free", "mass": 1.0, "inertia": [0.1, 0.1, 0.1], "position": [0.0, 0.0, 0.4999],
              "geometry": [{ "shape": { "type": "box", "half_extents": [0.5, 0.5, 0.5] } }] },
            ground() ] }));
        let c = query_contacts(&m, &m.initial_state.q, 0.0);
        assert_eq!(c.len(), 4);
        // Brute-force vertex distances.
        let mut bottom: Vec<Vector3<f64>> = vec![];
        for sx in [-0.5, 0.5] {
            for sy in [-0.5, 0.5] {
                bottom.push(Vector3::new(sx, sy, 0.4999 - 0.5));
            }
        }
        for contact in &c {
            assert!((contact.phi - (0.4999 - 0.5)).abs() < 1e-15);
            assert!(bottom.iter().any(|v| (v.xy() - contact.point.xy()).norm() < 1e-15));
        }
    }

    #[test]
    fn sphere_box_outside_and_inside() {
        let m = scenario(serde_json::json!({ "gravity": [0, 0, 0], "bodies": [
            ball("s", [0.0, 0.0, 0.58]),
            { "name": "box", "kind": "free", "mass": 1.0, "inertia": [0.1, 0.1, 0.1],
              "geometry": [{ "shape": { "type": "box", "half_extents": [0.5, 0.5, 0.5] } }] } ] }));
        let c = query_contacts(&m, &m.initial_state.q, 0.0);
        assert_eq!(c.len(), 1);
        assert!((c[0].phi + 0.02).abs() < 1e-14);
        assert!((c[0].normal - Vector3::z()).norm() < 1e-15);
        let mut q = m.initial_state.q.clone();
        q[2] = 0.45;
        let c = query_contacts(&m, &q, 0.0);
        assert!((c[0].phi + 0.15).abs() < 1e-14);
        assert!((c[0].normal - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn tangent_basis_conventions() {
        let (t1, t2) = tangent_basis(&Vector3::z());
        assert_eq!((t1, t2), (Vector3::x(), Vector3::y()));
        let n = -Vector3::z();
        let (t1, t2) = tangent_basis(&n);
        assert!((t1.cross(&t2) - n).norm() < 1e-15);
        let (t1, t2) = tangent_basis(&Vector3::y());
        assert!((t1.cross(&t2) - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn queries_are_bit_identical() {
        let m = scenario(serde_json::json!({ "bodies": [ball("a", [0.0, 0.0, 0.09]), ball("b", [0.15, 0.0, 0.12]), ground()] }));
        let a = query_contacts(&m, &m.initial_state.q, 0.3);
        let b = query_contacts(&m, &m.initial_state.q, 0.3);
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| (w[0].pair, w[0].sub) < (w[1].pair, w[1].sub)));
    }

    proptest! {
        #[test]
        fn tangent_basis_is_orthonormal(n in proptest::array::uniform3(-1.0..1.0f64)) {
            let n = Vector3::from(n);
            prop_assume!(n.norm() > 1e-3);
            let n = n.normalize();
            let (t1, t2) = tangent_basis(&n);
            let r = nalgebra::Matrix3::from_columns(&[t1, t2, n]);
            prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-12);
            prop_assert!((t1.cross(&t2) - n).norm() < 1e-12);
        }

        #[test]
        fn normal_rows_match_distance_rate(
            pa in proptest::array::uniform3(-0.1..0.1f64),
            qa in proptest::array::uniform4(-1.0..1.0f64),
            qb in proptest::array::uniform4(-1.0..1.0f64),
            v in proptest::collection::vec(-1.0..1.0f64, 12),
        ) {
            let na = qa.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = qb.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assume!(na > 0.1 && nb > 0.1);
            let m = scenario(serde_json::json!({ "gravity": [0, 0, 0], "contact_margin": 1.0, "bodies": [
                ball("s", [pa[0], pa[1], 0.5 + pa[2]]),
                { "name": "box", "kind": "free", "mass": 1.0, "inertia": [0.1, 0.1, 0.1], "position": [0.0, 0.0, 0.2],
                  "orientation": [qb[0] / nb, qb[1] / nb, qb[2] / nb, qb[3] / nb],
                  "geometry": [{ "shape": { "type": "box", "half_extents": [0.2, 0.3, 0.1] } }] },
                { "name": "ground", "kind": "fixed", "geometry": [{ "shape": { "type": "halfspace", "normal": [0, 0, 1] } }] } ] }));
            let mut q = m.initial_state.q.clone();
            for k in 0..4 { q[3 + k] = qa[k] / na; }
            let v = DVector::from_vec(v);
            let h = 1e-7;
            let c0 = query_contacts(&m, &q, 0.0);
            let qp = crate::dynamics::advance_positions(&m, &q, &v, h);
            let qm = crate::dynamics::advance_positions(&m, &q, &v, -h);
            let (cp, cm) = (query_contacts(&m, &qp, 0.0), query_contacts(&m, &qm, 0.0));
            for c in &c0 {
                let find = |list: &[ContactData]| list.iter().find(|d| d.pair == c.pair && d.sub == c.sub).map(|d| d.phi);
                if let (Some(p), Some(mm)) = (find(&cp), find(&cm)) {
                    let fd = (p - mm) / (2.0 * h);
                    let jv = c.jacobian.row_dot(2, &v);
                    prop_assert!((fd - jv).abs() <= 1e-6 * jv.abs().max(1.0), "fd {} vs jv {}", fd, jv);
                }
            }
        }
    }
}
