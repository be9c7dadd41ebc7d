//! Trajectory storage, dense-output sampling and CSV emission.

use std::io::Write;

use nalgebra::DVector;
use sha2::{Digest, Sha256};

use crate::dynamics::normalize_quaternions;
use crate::model::Model;

/// An accepted state with the error estimate and size of the step that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub error: f64,
    pub dt: f64,
}

/// Linear interpolation between accepted states at `k / rate`, quaternions
/// renormalized. The `error`/`dt` columns come from the covering step.
pub fn sample(model: &Model, points: &[TrajectoryPoint], rate: f64) -> Vec<TrajectoryPoint> {
    let Some(last) = points.last() else { return vec![] };
    let t_end = last.t;
    let n = (t_end * rate + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for k in 0..=n {
        let t = (k as f64 / rate).min(t_end);
        while seg + 1 < points.len() && points[seg + 1].t < t {
            seg += 1;
        }
        let a = &points[seg];
        if seg + 1 >= points.len() || t <= a.t {
            out.push(TrajectoryPoint { t, ..a.clone() });
            continue;
        }
        let b = &points[seg + 1];
        let s = (t - a.t) / (b.t - a.t);
        let mut q = &a.q + (&b.q - &a.q) * s;
        normalize_quaternions(model, &mut q);
        let v = &a.v + (&b.v - &a.v) * s;
        out.push(TrajectoryPoint { t, q, v, error: b.error, dt: b.dt });
    }
    out
}

pub fn csv_header(model: &Model) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend(model.q_names.iter().cloned());
    cols.extend(model.v_names.iter().cloned());
    cols.push("e".into());
    cols.push("dt".into());
    cols.join(",")
}

pub fn write_csv(model: &Model, points: &[TrajectoryPoint], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{}", csv_header(model))?;
    let mut line = String::new();
    for p in points {
        line.clear();
        use std::fmt::Write as _;
        let _ = write!(line, "{}", p.t);
        for x in p.q.iter().chain(p.v.iter()) {
            let _ = write!(line, ",{x}");
        }
        let _ = write!(line, ",{},{}", p.error, p.dt);
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Hex SHA-256 of the little-endian bytes of `[t; q; v]`.
pub fn state_digest(t: f64, q: &DVector<f64>, v: &DVector<f64>) -> String {
    let mut h = Sha256::new();
    h.update(t.to_le_bytes());
    for x in q.iter().chain(v.iter()) {
        h.update(x.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Largest position error norm between two trajectories sampled at the
/// same times.
pub fn max_position_gap(a: &[TrajectoryPoint], b: &[TrajectoryPoint], weights: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| super::control::error_norm(&x.q, &y.q, weights))
        .fold(0.0, f64::max)
}
