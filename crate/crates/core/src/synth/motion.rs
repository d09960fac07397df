//! Parametric agent motion: a path traversed under a speed profile.

/// Speed `v0` until `t_event`, then constant acceleration `accel` until the
/// speed reaches `v_target`, then constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedProfile {
    pub v0: f64,
    pub t_event: f64,
    pub accel: f64,
    pub v_target: f64,
}

impl SpeedProfile {
    pub fn constant(v: f64) -> Self {
        Self {
            v0: v,
            t_event: f64::INFINITY,
            accel: 0.0,
            v_target: v,
        }
    }

    pub fn change(v0: f64, t_event: f64, accel: f64, v_target: f64) -> Self {
        Self {
            v0,
            t_event,
            accel,
            v_target,
        }
    }

    fn ramp_time(&self) -> f64 {
        if self.accel == 0.0 {
            0.0
        } else {
            ((self.v_target - self.v0) / self.accel).max(0.0)
        }
    }

    pub fn speed(&self, t: f64) -> f64 {
        if t <= self.t_event {
            return self.v0;
        }
        let dt = (t - self.t_event).min(self.ramp_time());
        self.v0 + self.accel * dt
    }

    /// Distance travelled since `t = 0`; negative `t` extrapolates at `v0`.
    pub fn distance(&self, t: f64) -> f64 {
        if t <= self.t_event {
            return self.v0 * t;
        }
        let ramp = self.ramp_time();
        let dt = t - self.t_event;
        let r = dt.min(ramp);
        let mut d = self.v0 * self.t_event + self.v0 * r + 0.5 * self.accel * r * r;
        if dt > ramp {
            d += self.v_target * (dt - ramp);
        }
        d
    }
}

/// A straight reference line with an optional smooth lateral shift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Path {
    pub x0: f64,
    pub y0: f64,
    pub heading: f64,
    /// Arc position where the lateral shift starts.
    pub shift_start: f64,
    /// Arc length over which the shift completes.
    pub shift_length: f64,
    /// Total lateral shift, positive to the left.
    pub shift: f64,
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

impl Path {
    pub fn line(x0: f64, y0: f64, heading: f64) -> Self {
        Self {
            x0,
            y0,
            heading,
            shift_start: 0.0,
            shift_length: 1.0,
            shift: 0.0,
        }
    }

    pub fn with_shift(mut self, start: f64, length: f64, shift: f64) -> Self {
        self.shift_start = start;
        self.shift_length = length.max(1e-3);
        self.shift = shift;
        self
    }

    pub fn point(&self, s: f64) -> (f64, f64) {
        let lat = self.shift * smoothstep((s - self.shift_start) / self.shift_length);
        let (sn, cs) = self.heading.sin_cos();
        (self.x0 + s * cs - lat * sn, self.y0 + s * sn + lat * cs)
    }
}

/// Pose and derivatives at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Motion {
    pub path: Path,
    pub speed: SpeedProfile,
}

const H: f64 = 0.01;

impl Motion {
    pub fn new(path: Path, speed: SpeedProfile) -> Self {
        Self { path, speed }
    }

    pub fn position(&self, t: f64) -> (f64, f64) {
        self.path.point(self.speed.distance(t))
    }

    /// Central differences of the position; heading follows the path tangent.
    pub fn at(&self, t: f64) -> Kinematics {
        let (x, y) = self.position(t);
        let (xp, yp) = self.position(t + H);
        let (xm, ym) = self.position(t - H);
        let s = self.speed.distance(t);
        let (tx1, ty1) = self.path.point(s + 0.05);
        let (tx0, ty0) = self.path.point(s - 0.05);
        Kinematics {
            x,
            y,
            heading: (ty1 - ty0).atan2(tx1 - tx0),
            vx: (xp - xm) / (2.0 * H),
            vy: (yp - ym) / (2.0 * H),
            ax: (xp - 2.0 * x + xm) / (H * H),
            ay: (yp - 2.0 * y + ym) / (H * H),
        }
    }
}
