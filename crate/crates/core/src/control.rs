//! PD velocity control of a point effector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerGains {
    pub kp: f64,
    pub kd: f64,
    /// Convergence radius in meters.
    pub epsilon: f64,
    pub dt: f64,
    pub max_steps: usize,
    /// Velocity norm clamp in m/s.
    pub max_speed: Option<f64>,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains { kp: 1.0, kd: 0.1, epsilon: 1e-3, dt: 0.05, max_steps: 1000, max_speed: Some(0.5) }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.kp > 0.0) || !(self.kd >= 0.0) || !(self.epsilon > 0.0) || !(self.dt > 0.0) {
            return Err("gains need kp > 0, kd >= 0, epsilon > 0 and dt > 0".into());
        }
        if self.max_speed.is_some_and(|s| !(s > 0.0)) {
            return Err("max_speed must be positive".into());
        }
        Ok(())
    }
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// One control tick. Returns the velocity command and the current error.
pub fn pd_step(
    gains: &ControllerGains,
    p_ee: [f64; 3],
    p_obj: [f64; 3],
    prev_error: [f64; 3],
) -> ([f64; 3], [f64; 3]) {
    let e = sub(p_obj, p_ee);
    let mut v: [f64; 3] = std::array::from_fn(|a| gains.kp * e[a] + gains.kd * (e[a] - prev_error[a]) / gains.dt);
    if let Some(max) = gains.max_speed {
        let n = norm(v);
        if n > max {
            v = v.map(|c| c * max / n);
        }
    }
    (v, e)
}

/// Something the servo loop can move.
pub trait Plant {
    fn position(&self) -> [f64; 3];
    /// Integrates velocity `v` for `dt` seconds.
    fn advance(&mut self, v: [f64; 3], dt: f64);
    /// Re-reads the target once the effector has converged on it. The default
    /// keeps the current target.
    fn refresh_target(&mut self, target: [f64; 3]) -> [f64; 3] {
        target
    }
}

/// Bare point effector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEffector {
    pub position: [f64; 3],
}

impl Plant for PointEffector {
    fn position(&self) -> [f64; 3] {
        self.position
    }

    fn advance(&mut self, v: [f64; 3], dt: f64) {
        for a in 0..3 {
            self.position[a] += v[a] * dt;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoResult {
    pub final_pose: [f64; 3],
    pub steps: usize,
    pub converged: bool,
    /// Target after the post-convergence refresh.
    pub target: [f64; 3],
}

/// Drives the plant until it is within `epsilon` of the target or the step
/// budget runs out. After first convergence the target is refreshed once and,
/// if it moved, a final micro-servo follows.
pub fn servo_to<P: Plant + ?Sized>(gains: &ControllerGains, plant: &mut P, target: [f64; 3]) -> ServoResult {
    let mut target = target;
    let mut prev = sub(target, plant.position());
    let mut steps = 0;
    let mut refreshed = false;
    loop {
        let e = sub(target, plant.position());
        if norm(e) < gains.epsilon {
            if refreshed {
                break;
            }
            refreshed = true;
            let t = plant.refresh_target(target);
            if t == target {
                break;
            }
            target = t;
            prev = sub(target, plant.position());
            continue;
        }
        if steps >= gains.max_steps {
            return ServoResult { final_pose: plant.position(), steps, converged: false, target };
        }
        let (v, e) = pd_step(gains, plant.position(), target, prev);
        plant.advance(v, gains.dt);
        prev = e;
        steps += 1;
    }
    ServoResult { final_pose: plant.position(), steps, converged: true, target }
}

/// One PD tick toward each waypoint in turn, carrying the error history
/// across waypoints. Returns the number of ticks.
pub fn track<P: Plant + ?Sized>(gains: &ControllerGains, plant: &mut P, waypoints: &[[f64; 3]]) -> usize {
    let Some(first) = waypoints.first() else { return 0 };
    let mut prev = sub(*first, plant.position());
    for w in waypoints {
        let (v, e) = pd_step(gains, plant.position(), *w, prev);
        plant.advance(v, gains.dt);
        prev = e;
    }
    waypoints.len()
}
