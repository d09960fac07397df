//! Kinematic replay with a rule-based ego policy.
//!
//! Row 0 is re-driven: pure pursuit on the nearest aligned lane center plus
//! time-to-collision braking. Every other track replays its logged poses.

use serde::{Deserialize, Serialize};

use super::geometry::{obb_gap, OrientedBox};
use crate::scene::{track, PolylineClass, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EgoPolicyParams {
    /// Braking deceleration in m/s², applied when a conflict is detected.
    pub decel_limit: f64,
    pub accel_limit: f64,
    /// Brake when the time to collision along the corridor drops below this (s).
    pub ttc_threshold: f64,
    /// Brake when the bumper gap to anything in the corridor is below this (m).
    pub min_gap: f64,
    /// Extra half-width added to the ego corridor (m).
    pub corridor_margin: f64,
    /// Pure pursuit lookahead is `max(lookahead_min, lookahead_time * v)`.
    pub lookahead_time: f64,
    pub lookahead_min: f64,
}

impl Default for EgoPolicyParams {
    fn default() -> Self {
        Self {
            decel_limit: 6.0,
            accel_limit: 2.0,
            ttc_threshold: 2.0,
            min_gap: 1.0,
            corridor_margin: 0.3,
            lookahead_time: 1.0,
            lookahead_min: 5.0,
        }
    }
}

impl EgoPolicyParams {
    pub fn check(&self) -> Result<(), SimError> {
        if !(self.decel_limit > 0.0 && self.decel_limit.is_finite()) {
            return Err(SimError::InvalidPolicy(format!(
                "decel_limit must be positive, got {}",
                self.decel_limit
            )));
        }
        let rest = [
            ("accel_limit", self.accel_limit),
            ("ttc_threshold", self.ttc_threshold),
            ("min_gap", self.min_gap),
            ("corridor_margin", self.corridor_margin),
            ("lookahead_time", self.lookahead_time),
            ("lookahead_min", self.lookahead_min),
        ];
        for (name, v) in rest {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::InvalidPolicy(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("scenario {0} has no ego at the first timestep")]
    NoEgo(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub collision: bool,
    pub collision_time: Option<usize>,
    /// `f64::INFINITY` when no other track ever exists.
    pub min_clearance: f64,
    pub label: u8,
}

/// Simulated ego pose at one timestep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

/// Box of track `n` at timestep `t` as logged.
pub fn track_box(s: &Scenario, n: usize, t: usize) -> OrientedBox {
    let r = s.track(n, t);
    OrientedBox::new(
        r[track::X] as f64,
        r[track::Y] as f64,
        (r[track::SIN] as f64).atan2(r[track::COS] as f64),
        r[track::LENGTH] as f64,
        r[track::WIDTH] as f64,
    )
}

struct Lane {
    x: f64,
    y: f64,
    cos: f64,
    sin: f64,
}

fn lanes(s: &Scenario) -> Vec<Lane> {
    (0..s.dims.polylines)
        .filter(|&z| s.polyline_class(z) == Some(PolylineClass::LaneCenter))
        .filter(|&z| s.point(z, 0)[crate::scene::point::EXISTENCE] > 0.5)
        .map(|z| {
            let f = s.frame(z);
            Lane {
                x: f[0] as f64,
                y: f[1] as f64,
                sin: f[2] as f64,
                cos: f[3] as f64,
            }
        })
        .collect()
}

/// Lookahead target on the aligned lane closest laterally, if any.
fn pursuit_target(lanes: &[Lane], e: &EgoState, lookahead: f64) -> Option<(f64, f64)> {
    let (hs, hc) = e.heading.sin_cos();
    lanes
        .iter()
        .filter(|l| l.cos * hc + l.sin * hs > 0.866)
        .map(|l| {
            let along = (e.x - l.x) * l.cos + (e.y - l.y) * l.sin;
            let lateral = -(e.x - l.x) * l.sin + (e.y - l.y) * l.cos;
            (lateral.abs(), l, along)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, l, along)| {
            let u = along + lookahead;
            (l.x + u * l.cos, l.y + u * l.sin)
        })
}

fn should_brake(s: &Scenario, t: usize, e: &EgoState, p: &EgoPolicyParams, len: f64, wid: f64) -> bool {
    let (hs, hc) = e.heading.sin_cos();
    (1..s.dims.max_tracks).filter(|&n| s.track_exists(n, t)).any(|n| {
        let r = s.track(n, t);
        let (dx, dy) = (r[track::X] as f64 - e.x, r[track::Y] as f64 - e.y);
        let lon = dx * hc + dy * hs;
        let lat = -dx * hs + dy * hc;
        // relative heading via sin/cos of the difference
        let (os, oc) = (r[track::SIN] as f64, r[track::COS] as f64);
        let rc = oc * hc + os * hs;
        let rs = os * hc - oc * hs;
        let (hl, hw) = (r[track::LENGTH] as f64 / 2.0, r[track::WIDTH] as f64 / 2.0);
        let r_lon = (hl * rc).abs() + (hw * rs).abs();
        let r_lat = (hl * rs).abs() + (hw * rc).abs();
        if lon <= 0.0 || lat.abs() - r_lat >= wid / 2.0 + p.corridor_margin {
            return false;
        }
        let gap = lon - len / 2.0 - r_lon;
        let closing = e.speed - (r[track::VX] as f64 * hc + r[track::VY] as f64 * hs);
        gap <= p.min_gap || (closing > 0.0 && gap / closing < p.ttc_threshold)
    })
}

/// Ego poses for every timestep under `policy`.
pub fn simulate_trace(s: &Scenario, policy: &EgoPolicyParams) -> Result<Vec<EgoState>, SimError> {
    policy.check()?;
    if !s.track_exists(0, 0) {
        return Err(SimError::NoEgo(s.id.clone()));
    }
    let r0 = s.track(0, 0);
    let (len, wid) = (r0[track::LENGTH] as f64, r0[track::WIDTH] as f64);
    let v_target = (r0[track::VX] as f64).hypot(r0[track::VY] as f64);
    let lanes = lanes(s);
    let dt = s.dt as f64;
    let mut e = EgoState {
        x: r0[track::X] as f64,
        y: r0[track::Y] as f64,
        heading: (r0[track::SIN] as f64).atan2(r0[track::COS] as f64),
        speed: v_target,
    };
    let mut out = Vec::with_capacity(s.dims.timesteps);
    for t in 0..s.dims.timesteps {
        out.push(e);
        let a = if should_brake(s, t, &e, policy, len, wid) {
            -policy.decel_limit
        } else {
            ((v_target - e.speed) / dt).clamp(-policy.decel_limit, policy.accel_limit)
        };
        let v1 = (e.speed + a * dt).max(0.0);
        let v_avg = 0.5 * (e.speed + v1);
        let lookahead = policy.lookahead_min.max(policy.lookahead_time * e.speed);
        let curvature = match pursuit_target(&lanes, &e, lookahead) {
            Some((tx, ty)) => {
                let alpha = (ty - e.y).atan2(tx - e.x) - e.heading;
                2.0 * alpha.sin() / lookahead
            }
            None => 0.0,
        };
        let h1 = e.heading + v_avg * curvature * dt;
        let hm = 0.5 * (e.heading + h1);
        e = EgoState {
            x: e.x + v_avg * dt * hm.cos(),
            y: e.y + v_avg * dt * hm.sin(),
            heading: h1,
            speed: v1,
        };
    }
    Ok(out)
}

pub fn ego_box(e: &EgoState, s: &Scenario) -> OrientedBox {
    let r0 = s.track(0, 0);
    OrientedBox::new(e.x, e.y, e.heading, r0[track::LENGTH] as f64, r0[track::WIDTH] as f64)
}

pub fn simulate(s: &Scenario, policy: &EgoPolicyParams) -> Result<SimOutcome, SimError> {
    let trace = simulate_trace(s, policy)?;
    let mut min_clearance = f64::INFINITY;
    let mut collision_time = None;
    for (t, e) in trace.iter().enumerate() {
        let eb = ego_box(e, s);
        for n in (1..s.dims.max_tracks).filter(|&n| s.track_exists(n, t)) {
            let gap = obb_gap(&eb, &track_box(s, n, t));
            min_clearance = min_clearance.min(gap);
            if gap <= 0.0 && collision_time.is_none() {
                collision_time = Some(t);
            }
        }
    }
    let collision = collision_time.is_some();
    Ok(SimOutcome {
        collision,
        collision_time,
        min_clearance,
        label: u8::from(collision),
    })
}
