//! Error norms and the step-size controller.

use nalgebra::DVector;

use crate::model::IntegratorConfig;

/// `‖S·(q − q̂)‖_∞`.
pub fn error_norm(q: &DVector<f64>, q_hat: &DVector<f64>, s: &DVector<f64>) -> f64 {
    q.iter()
        .zip(q_hat.iter())
        .zip(s.iter())
        .fold(0.0, |m, ((a, b), w)| m.max((w * (a - b)).abs()))
}

/// Position error joined with unit-weighted velocity error.
pub fn full_state_error_norm(
    q: &DVector<f64>,
    q_hat: &DVector<f64>,
    v: &DVector<f64>,
    v_hat: &DVector<f64>,
    s: &DVector<f64>,
) -> f64 {
    let ev = v.iter().zip(v_hat.iter()).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
    error_norm(q, q_hat, s).max(ev)
}

/// Next step size after an attempt of size `dt` with error `e` and
/// estimate order `p`.
///
/// The candidate `k_safe·δt·(ε/e)^{1/p}` is ignored when its ratio to `δt`
/// falls inside `(k_low, k_high)`, then capped by `k_max_grow·δt` and
/// `δt_max`. A non-finite error (diverged attempt) quarters the step.
pub fn adjust_step_size(dt: f64, e: f64, accuracy: f64, p: f64, cfg: &IntegratorConfig) -> f64 {
    if !e.is_finite() {
        return 0.25 * dt;
    }
    let candidate = if e > 0.0 { cfg.k_safe * dt * (accuracy / e).powf(1.0 / p) } else { f64::INFINITY };
    let ratio = candidate / dt;
    let proposed = if ratio > cfg.k_low && ratio < cfg.k_high { dt } else { candidate };
    proposed.min(cfg.k_max_grow * dt).min(cfg.max_step)
}
