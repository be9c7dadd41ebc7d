//! Builtin scenes, from a single falling ball to a bin of mixed clutter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::{parse_scenario, ScenarioSpec};

/// Names accepted by [`builtin_scenario`].
pub const BUILTIN_NAMES: &[&str] = &[
    "ball_drop",
    "bouncing_ball_energy",
    "conveyor_belt",
    "soft_clutter",
    "hard_clutter",
    "stiff_pd",
    "soft_sphere_drop",
];

const DEFAULT_SEED: u64 = 7;
/// Half width of the clutter bin.
const BIN_HALF_WIDTH: f64 = 0.3;

/// Builtin scene by name; `seed` overrides the default sampling seed.
pub fn builtin_scenario(name: &str, seed: Option<u64>) -> Result<ScenarioSpec> {
    let seed = seed.unwrap_or(DEFAULT_SEED);
    let value = match name {
        "ball_drop" => ball_drop(),
        "bouncing_ball_energy" => bouncing_ball_energy(),
        "conveyor_belt" => conveyor_belt(),
        "soft_clutter" => soft_clutter(seed),
        "hard_clutter" => hard_clutter(seed),
        "stiff_pd" => stiff_pd_value(1e4, false),
        "soft_sphere_drop" => soft_sphere_drop(),
        _ => {
            return Err(Error::validation(
                "scenario",
                format!("unknown scenario `{name}` (builtins: {})", BUILTIN_NAMES.join(", ")),
            ))
        }
    };
    let mut spec: ScenarioSpec = serde_json::from_value(value).map_err(|e| Error::Internal(format!("builtin `{name}`: {e}")))?;
    spec.seed = seed;
    Ok(spec)
}

/// A builtin name or a path to a scenario file.
pub fn load_scenario(name_or_path: &str, seed: Option<u64>) -> Result<ScenarioSpec> {
    if BUILTIN_NAMES.contains(&name_or_path) {
        return builtin_scenario(name_or_path, seed);
    }
    let path = std::path::Path::new(name_or_path);
    if !path.exists() {
        return Err(Error::validation(
            "scenario",
            format!("`{name_or_path}` is neither a builtin scenario nor an existing file"),
        ));
    }
    let text = std::fs::read_to_string(path)?;
    let mut spec = parse_scenario(&text)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

/// Two-DOF prismatic + revolute arm tracking an oscillating setpoint with
/// `K_p = K_d = gain`.
pub fn stiff_pd(gain: f64, explicit: bool) -> ScenarioSpec {
    serde_json::from_value(stiff_pd_value(gain, explicit)).expect("stiff_pd template is valid")
}

fn identity() -> Value {
    json!([1.0, 0.0, 0.0, 0.0])
}

fn sphere_body(name: &str, mass: f64, radius: f64, position: [f64; 3], material: &str) -> Value {
    let i = 0.4 * mass * radius * radius;
    json!({
        "name": name, "kind": "free", "mass": mass, "inertia": [i, i, i],
        "position": position, "orientation": identity(),
        "geometry": [{ "name": format!("{name}_shape"), "shape": { "type": "sphere", "radius": radius }, "material": material }]
    })
}

fn box_body(name: &str, mass: f64, h: [f64; 3], position: [f64; 3], orientation: [f64; 4], material: &str) -> Value {
    let (a, b, c) = (2.0 * h[0], 2.0 * h[1], 2.0 * h[2]);
    let inertia = [mass * (b * b + c * c) / 12.0, mass * (a * a + c * c) / 12.0, mass * (a * a + b * b) / 12.0];
    json!({
        "name": name, "kind": "free", "mass": mass, "inertia": inertia,
        "position": position, "orientation": orientation,
        "geometry": [{ "name": format!("{name}_shape"), "shape": { "type": "box", "half_extents": h }, "material": material }]
    })
}

fn ground(material: &str) -> Value {
    json!({
        "name": "ground", "kind": "fixed",
        "geometry": [{ "name": "floor", "shape": { "type": "halfspace", "normal": [0, 0, 1], "offset": 0.0 }, "material": material }]
    })
}

fn bin(material: &str) -> Value {
    let w = BIN_HALF_WIDTH;
    let wall = |name: &str, n: [f64; 3], offset: f64| {
        json!({ "name": name, "shape": { "type": "halfspace", "normal": n, "offset": offset }, "material": material })
    };
    json!({
        "name": "bin", "kind": "fixed",
        "geometry": [
            wall("floor", [0.0, 0.0, 1.0], 0.0),
            wall("wall_px", [-1.0, 0.0, 0.0], -w),
            wall("wall_nx", [1.0, 0.0, 0.0], -w),
            wall("wall_py", [0.0, -1.0, 0.0], -w),
            wall("wall_ny", [0.0, 1.0, 0.0], -w),
        ]
    })
}

fn ball_drop() -> Value {
    json!({
        "name": "ball_drop",
        "materials": [{ "name": "rubber", "stiffness": 1e5, "dissipation": 0.5, "mu_static": 0.5, "mu_dynamic": 0.5 }],
        "bodies": [
            { "name": "ball", "kind": "free", "mass": 1.0, "inertia": [0.004, 0.004, 0.004],
              "position": [0.0, 0.0, 0.5], "velocity": [0.3, 0.0, 0.0], "orientation": identity(),
              "geometry": [{ "name": "ball_shape", "shape": { "type": "sphere", "radius": 0.1 }, "material": "rubber" }] },
            ground("rubber")
        ],
        "duration": 1.0
    })
}

fn bouncing_ball_energy() -> Value {
    json!({
        "name": "bouncing_ball_energy",
        "materials": [{ "name": "elastic", "stiffness": 1e3, "dissipation": 0.0, "mu_static": 0.0, "mu_dynamic": 0.0 }],
        "bodies": [sphere_body("ball", 0.1, 0.05, [0.0, 0.0, 1.05], "elastic"), ground("elastic")],
        "duration": 10.0
    })
}

/// Piecewise-linear belt speed: 0.5g for 0.1 s, 1.5g for 0.05 s, hold,
/// then decelerate at 0.5g to rest.
fn conveyor_profile() -> Value {
    let g = 9.81;
    let v1 = 0.5 * g * 0.1;
    let v2 = v1 + 1.5 * g * 0.05;
    let t_stop = 0.35 + v2 / (0.5 * g);
    json!({ "type": "piecewise_linear", "times": [0.0, 0.1, 0.15, 0.35, t_stop], "speeds": [0.0, v1, v2, v2, 0.0] })
}

fn conveyor_belt() -> Value {
    let k = 1e5;
    let mass = 1.0;
    let h = [0.1, 0.1, 0.025];
    let rest = h[2] - mass * 9.81 / (4.0 * k);
    json!({
        "name": "conveyor_belt",
        "materials": [{ "name": "belt", "stiffness": k, "dissipation": 10.0, "mu_static": 1.0, "mu_dynamic": 0.5,
                        "stiction_tolerance": 1e-4, "transition_width": 10.0 }],
        "bodies": [
            { "name": "belt", "kind": "fixed",
              "geometry": [{ "name": "belt_surface", "material": "belt",
                             "shape": { "type": "halfspace", "normal": [0, 0, 1], "offset": 0.0,
                                        "surface_velocity": { "direction": [1, 0, 0], "profile": conveyor_profile() } } }] },
            box_body("box", mass, h, [0.0, 0.0, rest], [1.0, 0.0, 0.0, 0.0], "belt")
        ],
        "duration": 1.0
    })
}

/// Penetration-free poses for bodies with the given bounding radii.
fn sample_positions(seed: u64, radii: &[f64], z_range: (f64, f64)) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<([f64; 3], f64)> = Vec::with_capacity(radii.len());
    for &r in radii {
        let lim = BIN_HALF_WIDTH - r - 1e-3;
        let p = loop {
            let p = [rng.gen_range(-lim..lim), rng.gen_range(-lim..lim), rng.gen_range(z_range.0 + r..z_range.1)];
            let clear = placed.iter().all(|(o, ro)| {
                let d2: f64 = (0..3).map(|i| (p[i] - o[i]).powi(2)).sum();
                d2 > (r + ro + 1e-3).powi(2)
            });
            if clear {
                break p;
            }
        };
        placed.push((p, r));
    }
    placed.into_iter().map(|(p, _)| p).collect()
}

fn random_quaternion(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-6);
    q.map(|x| x / n)
}

fn soft_clutter(seed: u64) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let radii: Vec<f64> = (0..20).map(|_| rng.gen_range(0.04..0.07)).collect();
    let positions = sample_positions(seed, &radii, (0.05, 1.0));
    let mut bodies: Vec<Value> = radii
        .iter()
        .zip(&positions)
        .enumerate()
        .map(|(i, (&r, &p))| sphere_body(&format!("sphere{i:02}"), 1000.0 * 4.0 / 3.0 * std::f64::consts::PI * r.powi(3), r, p, "soft"))
        .collect();
    bodies.push(bin("soft"));
    json!({
        "name": "soft_clutter",
        "materials": [{ "name": "soft", "stiffness": 1e3, "dissipation": 2.0, "mu_static": 0.5, "mu_dynamic": 0.5,
                        "stiction_tolerance": 1e-2 }],
        "bodies": bodies,
        "duration": 1.0
    })
}

fn hard_clutter(seed: u64) -> Value {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1u64);
    let mut bodies = Vec::new();
    let mut radii = Vec::new();
    let mut kinds = Vec::new();
    for i in 0..20 {
        if i % 2 == 0 {
            let r = rng.gen_range(0.04..0.06);
            kinds.push((true, [r, r, r]));
            radii.push(r);
        } else {
            let h: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.025..0.045));
            radii.push((h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt());
            kinds.push((false, h));
        }
    }
    let positions = sample_positions(seed, &radii, (0.05, 1.2));
    for (i, ((is_sphere, h), p)) in kinds.into_iter().zip(positions).enumerate() {
        let density = 800.0;
        if is_sphere {
            let mass = density * 4.0 / 3.0 * std::f64::consts::PI * h[0].powi(3);
            bodies.push(sphere_body(&format!("sphere{i:02}"), mass, h[0], p, "hard"));
        } else {
            let mass = density * 8.0 * h[0] * h[1] * h[2];
            let q = random_quaternion(&mut rng);
            bodies.push(box_body(&format!("box{i:02}"), mass, h, p, q, "hard"));
        }
    }
    bodies.push(bin("hard"));
    json!({
        "name": "hard_clutter",
        "materials": [{ "name": "hard", "stiffness": 1e5, "dissipation": 1.0, "mu_static": 0.5, "mu_dynamic": 0.5,
                        "stiction_tolerance": 1e-4 }],
        "bodies": bodies,
        "excluded_shape_pairs": [["box", "box"]],
        "duration": 1.0
    })
}

fn stiff_pd_value(gain: f64, explicit: bool) -> Value {
    json!({
        "name": "stiff_pd",
        "bodies": [
            { "name": "carriage", "kind": "jointed", "mass": 1.0, "inertia": [0.01, 0.01, 0.01] },
            { "name": "link", "kind": "jointed", "mass": 0.5, "inertia": [0.002, 0.01, 0.01], "com": [0.2, 0.0, 0.0] }
        ],
        "joints": [
            { "name": "slide", "kind": "prismatic", "parent": "world", "child": "carriage", "axis": [1, 0, 0], "actuated": true },
            { "name": "hinge", "kind": "revolute", "parent": "carriage", "child": "link", "axis": [0, 1, 0], "actuated": true }
        ],
        "controller": {
            "treatment": if explicit { "explicit" } else { "implicit" },
            "systems": [{ "type": "oscillating_setpoint", "joints": ["slide", "hinge"],
                          "kp": [gain, gain], "kd": [gain, gain],
                          "amplitude": [0.1, 0.3], "frequency": [1.0, 1.0] }]
        },
        "duration": 1.0
    })
}

/// A short drop onto a soft, well damped floor: the ball lands once and
/// rolls without leaving the ground, so the dynamics stay smooth.
fn soft_sphere_drop() -> Value {
    let mut ball = sphere_body("ball", 1.0, 0.1, [0.0, 0.0, 0.11], "foam");
    ball["velocity"] = json!([0.2, 0.0, 0.0]);
    json!({
        "name": "soft_sphere_drop",
        "materials": [{ "name": "foam", "stiffness": 1e4, "dissipation": 5.0, "mu_static": 0.5, "mu_dynamic": 0.5,
                        "stiction_tolerance": 1e-2 }],
        "bodies": [ball, ground("foam")],
        "duration": 2.0
    })
}
