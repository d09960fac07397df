//! Sparse scenario representation.
//!
//! A [`Scenario`] is a fixed-size snippet of driving: a padded track tensor,
//! a signal tensor and a set of road polylines. Everything is expressed in the
//! ego frame at the first timestep, so ego starts at the origin heading +x.

mod io;

pub use io::{read_scenarios, read_scenarios_from, write_scenarios, write_scenarios_to, SCENARIO_MAGIC};

use serde::{Deserialize, Serialize};

/// Track channel layout.
pub mod track {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const SIN: usize = 2;
    pub const COS: usize = 3;
    pub const VX: usize = 4;
    pub const VY: usize = 5;
    pub const AX: usize = 6;
    pub const AY: usize = 7;
    pub const LENGTH: usize = 8;
    pub const WIDTH: usize = 9;
    pub const CLASS: usize = 10;
    pub const CLASSES: usize = 5;
    pub const EXISTENCE: usize = 15;
    pub const WIDTH_TOTAL: usize = 16;
    /// Continuous channels occupy `0..CONTINUOUS`.
    pub const CONTINUOUS: usize = 10;
}

/// Signal channel layout.
pub mod signal {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const SIN: usize = 2;
    pub const COS: usize = 3;
    pub const LABEL: usize = 4;
    pub const LABELS: usize = 4;
    pub const WIDTH_TOTAL: usize = 8;
    pub const CONTINUOUS: usize = 4;
}

/// Polyline point channel layout.
pub mod point {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const WIDTH: usize = 2;
    pub const EXISTENCE: usize = 3;
    pub const WIDTH_TOTAL: usize = 4;
    pub const CONTINUOUS: usize = 3;
}

pub const FRAME_WIDTH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackClass {
    Vehicle = 0,
    Pedestrian = 1,
    Cyclist = 2,
    Cone = 3,
    Other = 4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalState {
    Red = 0,
    Yellow = 1,
    Green = 2,
    Unknown = 3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolylineClass {
    LaneCenter = 0,
    StopLine = 1,
    Crosswalk = 2,
    Parking = 3,
}

/// Tensor extents for one scenario plus the model hidden width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDims {
    pub timesteps: usize,
    pub max_tracks: usize,
    pub track_width: usize,
    pub signals: usize,
    pub signal_width: usize,
    pub polylines: usize,
    pub points_per_polyline: usize,
    pub frame_width: usize,
    pub label_classes: usize,
    pub point_width: usize,
    pub hidden: usize,
}

impl Default for ScenarioDims {
    fn default() -> Self {
        Self {
            timesteps: 20,
            max_tracks: 16,
            track_width: track::WIDTH_TOTAL,
            signals: 4,
            signal_width: signal::WIDTH_TOTAL,
            polylines: 32,
            points_per_polyline: 10,
            frame_width: FRAME_WIDTH,
            label_classes: 4,
            point_width: point::WIDTH_TOTAL,
            hidden: 64,
        }
    }
}

impl ScenarioDims {
    /// Reduced extents used by the training fixtures and the desk pipeline.
    pub fn compact() -> Self {
        Self {
            timesteps: 10,
            max_tracks: 8,
            signals: 2,
            polylines: 12,
            points_per_polyline: 6,
            hidden: 16,
            ..Self::default()
        }
    }

    /// Smallest extents that still exercise every code path.
    pub fn tiny() -> Self {
        Self {
            timesteps: 4,
            max_tracks: 3,
            signals: 1,
            polylines: 3,
            points_per_polyline: 4,
            hidden: 8,
            ..Self::default()
        }
    }

    pub fn as_array(&self) -> [usize; 11] {
        [
            self.timesteps,
            self.max_tracks,
            self.track_width,
            self.signals,
            self.signal_width,
            self.polylines,
            self.points_per_polyline,
            self.frame_width,
            self.label_classes,
            self.point_width,
            self.hidden,
        ]
    }

    pub fn from_array(a: [usize; 11]) -> Self {
        Self {
            timesteps: a[0],
            max_tracks: a[1],
            track_width: a[2],
            signals: a[3],
            signal_width: a[4],
            polylines: a[5],
            points_per_polyline: a[6],
            frame_width: a[7],
            label_classes: a[8],
            point_width: a[9],
            hidden: a[10],
        }
    }

    pub const FIELD_NAMES: [&'static str; 11] = [
        "timesteps",
        "max_tracks",
        "track_width",
        "signals",
        "signal_width",
        "polylines",
        "points_per_polyline",
        "frame_width",
        "label_classes",
        "point_width",
        "hidden",
    ];

    /// Problems with the extents themselves, independent of any data.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in Self::FIELD_NAMES.iter().zip(self.as_array()) {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        let fixed = [
            ("track_width", self.track_width, track::WIDTH_TOTAL),
            ("signal_width", self.signal_width, signal::WIDTH_TOTAL),
            ("frame_width", self.frame_width, FRAME_WIDTH),
            ("label_classes", self.label_classes, 4),
            ("point_width", self.point_width, point::WIDTH_TOTAL),
        ];
        for (name, got, want) in fixed {
            if got != want {
                out.push(format!("{name} must be {want}, got {got}"));
            }
        }
        out
    }

    pub fn track_len(&self) -> usize {
        self.max_tracks * self.timesteps * self.track_width
    }

    pub fn signal_len(&self) -> usize {
        self.signals * self.timesteps * self.signal_width
    }

    pub fn frame_len(&self) -> usize {
        self.polylines * self.frame_width
    }

    pub fn label_len(&self) -> usize {
        self.polylines * self.label_classes
    }

    pub fn point_len(&self) -> usize {
        self.polylines * self.points_per_polyline * self.point_width
    }
}

/// `[max_tracks × timesteps × track_width]`, row 0 is ego.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackTensor {
    pub data: Vec<f32>,
}

/// `[signals × timesteps × signal_width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalTensor {
    pub data: Vec<f32>,
}

/// Road polylines: frames, one-hot labels and frame-local points.
#[derive(Clone, Debug, PartialEq)]
pub struct Polylines {
    pub frames: Vec<f32>,
    pub labels: Vec<f32>,
    pub points: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub dims: ScenarioDims,
    pub id: String,
    /// Timestep duration in seconds.
    pub dt: f32,
    pub tracks: TrackTensor,
    pub signals: SignalTensor,
    pub polylines: Polylines,
}

impl Scenario {
    /// The smallest valid scenario: ego alone at the origin, signals with an
    /// UNKNOWN label and lane-center polylines with no points.
    pub fn blank(dims: ScenarioDims, id: impl Into<String>, dt: f32) -> Self {
        let mut s = Self {
            dims,
            id: id.into(),
            dt,
            tracks: TrackTensor {
                data: vec![0.0; dims.track_len()],
            },
            signals: SignalTensor {
                data: vec![0.0; dims.signal_len()],
            },
            polylines: Polylines {
                frames: vec![0.0; dims.frame_len()],
                labels: vec![0.0; dims.label_len()],
                points: vec![0.0; dims.point_len()],
            },
        };
        for t in 0..dims.timesteps {
            let row = s.track_mut(0, t);
            row[track::COS] = 1.0;
            row[track::CLASS + TrackClass::Vehicle as usize] = 1.0;
            row[track::EXISTENCE] = 1.0;
            for k in 0..dims.signals {
                let sig = s.signal_mut(k, t);
                sig[signal::COS] = 1.0;
                sig[signal::LABEL + SignalState::Unknown as usize] = 1.0;
            }
        }
        for z in 0..dims.polylines {
            s.frame_mut(z)[3] = 1.0;
            s.label_mut(z)[PolylineClass::LaneCenter as usize] = 1.0;
        }
        s
    }

    pub fn track(&self, n: usize, t: usize) -> &[f32] {
        let w = self.dims.track_width;
        let i = (n * self.dims.timesteps + t) * w;
        &self.tracks.data[i..i + w]
    }

    pub fn track_mut(&mut self, n: usize, t: usize) -> &mut [f32] {
        let w = self.dims.track_width;
        let i = (n * self.dims.timesteps + t) * w;
        &mut self.tracks.data[i..i + w]
    }

    pub fn signal(&self, k: usize, t: usize) -> &[f32] {
        let w = self.dims.signal_width;
        let i = (k * self.dims.timesteps + t) * w;
        &self.signals.data[i..i + w]
    }

    pub fn signal_mut(&mut self, k: usize, t: usize) -> &mut [f32] {
        let w = self.dims.signal_width;
        let i = (k * self.dims.timesteps + t) * w;
        &mut self.signals.data[i..i + w]
    }

    pub fn frame(&self, z: usize) -> &[f32] {
        let w = self.dims.frame_width;
        &self.polylines.frames[z * w..(z + 1) * w]
    }

    pub fn frame_mut(&mut self, z: usize) -> &mut [f32] {
        let w = self.dims.frame_width;
        &mut self.polylines.frames[z * w..(z + 1) * w]
    }

    pub fn label(&self, z: usize) -> &[f32] {
        let w = self.dims.label_classes;
        &self.polylines.labels[z * w..(z + 1) * w]
    }

    pub fn label_mut(&mut self, z: usize) -> &mut [f32] {
        let w = self.dims.label_classes;
        &mut self.polylines.labels[z * w..(z + 1) * w]
    }

    pub fn point(&self, z: usize, p: usize) -> &[f32] {
        let w = self.dims.point_width;
        let i = (z * self.dims.points_per_polyline + p) * w;
        &self.polylines.points[i..i + w]
    }

    pub fn point_mut(&mut self, z: usize, p: usize) -> &mut [f32] {
        let w = self.dims.point_width;
        let i = (z * self.dims.points_per_polyline + p) * w;
        &mut self.polylines.points[i..i + w]
    }

    pub fn track_exists(&self, n: usize, t: usize) -> bool {
        self.track(n, t)[track::EXISTENCE] == 1.0
    }

    pub fn polyline_class(&self, z: usize) -> Option<PolylineClass> {
        let l = self.label(z);
        let idx = (0..l.len()).find(|&i| l[i] == 1.0)?;
        Some(match idx {
            0 => PolylineClass::LaneCenter,
            1 => PolylineClass::StopLine,
            2 => PolylineClass::Crosswalk,
            _ => PolylineClass::Parking,
        })
    }

    /// Number of track rows that exist at any timestep.
    pub fn active_tracks(&self) -> usize {
        (0..self.dims.max_tracks)
            .filter(|&n| (0..self.dims.timesteps).any(|t| self.track_exists(n, t)))
            .count()
    }
}

/// One broken invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub tensor: &'static str,
    pub index: Vec<usize>,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{:?}: {}", self.tensor, self.index, self.rule)
    }
}

const UNIT_TOL: f32 = 1e-6;

fn is_binary(v: f32) -> bool {
    v == 0.0 || v == 1.0
}

/// Checks every representation invariant and lists what is broken.
pub fn validate(s: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let d = &s.dims;
    for rule in d.check() {
        out.push(Violation {
            tensor: "dims",
            index: vec![],
            rule,
        });
    }
    if !out.is_empty() {
        return out;
    }
    let sizes = [
        ("tracks", s.tracks.data.len(), d.track_len()),
        ("signals", s.signals.data.len(), d.signal_len()),
        ("frames", s.polylines.frames.len(), d.frame_len()),
        ("labels", s.polylines.labels.len(), d.label_len()),
        ("points", s.polylines.points.len(), d.point_len()),
    ];
    for (name, got, want) in sizes {
        if got != want {
            out.push(Violation {
                tensor: name,
                index: vec![],
                rule: format!("length {got} does not match dims ({want})"),
            });
        }
    }
    if !out.is_empty() {
        return out;
    }
    if !(s.dt > 0.0 && s.dt.is_finite()) {
        out.push(Violation {
            tensor: "dt",
            index: vec![],
            rule: format!("timestep duration must be positive, got {}", s.dt),
        });
    }

    for n in 0..d.max_tracks {
        for t in 0..d.timesteps {
            let row = s.track(n, t);
            let idx = vec![n, t];
            if row.iter().any(|v| !v.is_finite()) {
                out.push(Violation {
                    tensor: "tracks",
                    index: idx,
                    rule: "non-finite entry".into(),
                });
                continue;
            }
            let e = row[track::EXISTENCE];
            if !is_binary(e) {
                out.push(Violation {
                    tensor: "tracks",
                    index: idx,
                    rule: format!("existence must be 0 or 1, got {e}"),
                });
                continue;
            }
            if e == 0.0 && row.iter().any(|&v| v != 0.0) {
                out.push(Violation {
                    tensor: "tracks",
                    index: idx.clone(),
                    rule: "padded entry has non-zero features".into(),
                });
            }
            let class = &row[track::CLASS..track::CLASS + track::CLASSES];
            let sum: f32 = class.iter().sum();
            if class.iter().any(|&v| !is_binary(v)) || sum != e {
                out.push(Violation {
                    tensor: "tracks",
                    index: idx.clone(),
                    rule: format!("class one-hot sums to {sum}, existence is {e}"),
                });
            }
            if n == 0 && e != 1.0 {
                out.push(Violation {
                    tensor: "tracks",
                    index: idx,
                    rule: "ego must exist at every timestep".into(),
                });
            }
        }
    }

    for k in 0..d.signals {
        for t in 0..d.timesteps {
            let row = s.signal(k, t);
            let idx = vec![k, t];
            if row.iter().any(|v| !v.is_finite()) {
                out.push(Violation {
                    tensor: "signals",
                    index: idx,
                    rule: "non-finite entry".into(),
                });
                continue;
            }
            let norm = row[signal::SIN].powi(2) + row[signal::COS].powi(2);
            if (norm - 1.0).abs() > UNIT_TOL {
                out.push(Violation {
                    tensor: "signals",
                    index: idx.clone(),
                    rule: format!("heading sin^2+cos^2 = {norm}"),
                });
            }
            let label = &row[signal::LABEL..signal::LABEL + signal::LABELS];
            let sum: f32 = label.iter().sum();
            if label.iter().any(|&v| !is_binary(v)) || sum != 1.0 {
                out.push(Violation {
                    tensor: "signals",
                    index: idx,
                    rule: format!("label one-hot sums to {sum}"),
                });
            }
        }
    }

    for z in 0..d.polylines {
        let f = s.frame(z);
        if f.iter().any(|v| !v.is_finite()) {
            out.push(Violation {
                tensor: "frames",
                index: vec![z],
                rule: "non-finite entry".into(),
            });
        } else {
            let norm = f[2].powi(2) + f[3].powi(2);
            if (norm - 1.0).abs() > UNIT_TOL {
                out.push(Violation {
                    tensor: "frames",
                    index: vec![z],
                    rule: format!("rotation sin^2+cos^2 = {norm}"),
                });
            }
        }
        let l = s.label(z);
        let sum: f32 = l.iter().sum();
        if l.iter().any(|&v| !is_binary(v)) || sum != 1.0 {
            out.push(Violation {
                tensor: "labels",
                index: vec![z],
                rule: format!("label one-hot sums to {sum}"),
            });
        }
        for p in 0..d.points_per_polyline {
            let pt = s.point(z, p);
            let idx = vec![z, p];
            if pt.iter().any(|v| !v.is_finite()) {
                out.push(Violation {
                    tensor: "points",
                    index: idx,
                    rule: "non-finite entry".into(),
                });
                continue;
            }
            let e = pt[point::EXISTENCE];
            if !is_binary(e) {
                out.push(Violation {
                    tensor: "points",
                    index: idx,
                    rule: format!("existence must be 0 or 1, got {e}"),
                });
            } else if e == 0.0 && pt.iter().any(|&v| v != 0.0) {
                out.push(Violation {
                    tensor: "points",
                    index: idx,
                    rule: "padded point has non-zero features".into(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_scenario_is_valid() {
        for dims in [ScenarioDims::default(), ScenarioDims::compact(), ScenarioDims::tiny()] {
            let s = Scenario::blank(dims, "blank", 0.5);
            assert_eq!(validate(&s), vec![]);
        }
    }

    #[test]
    fn double_class_is_one_violation() {
        let mut s = Scenario::blank(ScenarioDims::tiny(), "x", 0.5);
        s.track_mut(0, 2)[track::CLASS + 1] = 1.0;
        let v = validate(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].tensor, "tracks");
        assert_eq!(v[0].index, vec![0, 2]);
    }

    #[test]
    fn padded_row_with_data_is_flagged() {
        let mut s = Scenario::blank(ScenarioDims::tiny(), "x", 0.5);
        s.track_mut(1, 0)[track::X] = 3.0;
        let v = validate(&s);
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("padded"));
    }

    #[test]
    fn missing_ego_is_flagged() {
        let mut s = Scenario::blank(ScenarioDims::tiny(), "x", 0.5);
        for c in s.track_mut(0, 1) {
            *c = 0.0;
        }
        let v = validate(&s);
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("ego"));
    }

    #[test]
    fn bad_frame_and_point() {
        let mut s = Scenario::blank(ScenarioDims::tiny(), "x", 0.5);
        s.frame_mut(1)[3] = 0.5;
        s.point_mut(2, 1)[point::X] = 1.0;
        let v = validate(&s);
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].tensor, "frames");
        assert_eq!(v[1].tensor, "points");
        assert_eq!(v[1].index, vec![2, 1]);
    }

    #[test]
    fn signal_needs_one_label() {
        let mut s = Scenario::blank(ScenarioDims::tiny(), "x", 0.5);
        s.signal_mut(0, 3)[signal::LABEL] = 1.0;
        let v = validate(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].tensor, "signals");
    }

    #[test]
    fn wrong_fixed_width_is_reported() {
        let mut s = Scenario::blank(ScenarioDims::tiny(), "x", 0.5);
        s.dims.frame_width = 3;
        assert!(validate(&s).iter().any(|v| v.tensor == "dims"));
    }
}
