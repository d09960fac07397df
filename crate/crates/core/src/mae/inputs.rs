//! Encoder input buffers: normalization and masking.

use rand::Rng;

use crate::scene::{point, signal, track, Scenario, ScenarioDims};

/// Divisors applied to the continuous track channels. Categorical channels
/// pass through unchanged.
pub const TRACK_SCALE: [f32; track::CONTINUOUS] = [20.0, 20.0, 1.0, 1.0, 10.0, 10.0, 4.0, 4.0, 5.0, 5.0];
pub const SIGNAL_SCALE: [f32; signal::CONTINUOUS] = [20.0, 20.0, 1.0, 1.0];
pub const FRAME_SCALE: [f32; 4] = [20.0, 20.0, 1.0, 1.0];
pub const POINT_SCALE: [f32; point::CONTINUOUS] = [20.0, 20.0, 5.0];

/// Boolean masks over the first axes of the inputs; `true` means masked.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    /// `[N_T × T]`
    pub tracks: Vec<bool>,
    /// `[N_S × T]`
    pub signals: Vec<bool>,
    /// `[N_Z]`
    pub polylines: Vec<bool>,
    pub ratio: f64,
}

impl MaskSet {
    pub fn constant(dims: &ScenarioDims, value: bool) -> Self {
        Self {
            tracks: vec![value; dims.max_tracks * dims.timesteps],
            signals: vec![value; dims.signals * dims.timesteps],
            polylines: vec![value; dims.polylines],
            ratio: if value { 1.0 } else { 0.0 },
        }
    }

    pub fn none(dims: &ScenarioDims) -> Self {
        Self::constant(dims, false)
    }

    pub fn all(dims: &ScenarioDims) -> Self {
        Self::constant(dims, true)
    }

    pub fn masked_count(&self) -> usize {
        self.tracks.iter().chain(&self.signals).chain(&self.polylines).filter(|&&m| m).count()
    }

    pub fn total(&self) -> usize {
        self.tracks.len() + self.signals.len() + self.polylines.len()
    }
}

/// Independent Bernoulli(`r`) draws per track-timestep, signal-timestep and
/// polyline, in that order.
pub fn sample_masks<G: Rng + ?Sized>(dims: &ScenarioDims, r: f64, rng: &mut G) -> MaskSet {
    assert!((0.0..=1.0).contains(&r), "mask ratio {r} outside [0, 1]");
    let mut draw = |n: usize| (0..n).map(|_| rng.random::<f64>() < r).collect::<Vec<_>>();
    let tracks = draw(dims.max_tracks * dims.timesteps);
    let signals = draw(dims.signals * dims.timesteps);
    let polylines = draw(dims.polylines);
    MaskSet {
        tracks,
        signals,
        polylines,
        ratio: r,
    }
}

/// Normalized encoder inputs for one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInputs {
    pub dims: ScenarioDims,
    /// `[N_T·T × D_T]`
    pub tracks: Vec<f32>,
    /// `[N_S·T × D_S]`
    pub signals: Vec<f32>,
    /// `[N_Z × 4]`
    pub frames: Vec<f32>,
    /// `[N_Z × D_L]`
    pub labels: Vec<f32>,
    /// `[N_Z·S_Z × D_P]`
    pub points: Vec<f32>,
    /// Polylines whose collapsed feature row is replaced by zeros in the encoder.
    pub masked_polylines: Vec<bool>,
}

fn scale_rows(data: &[f32], width: usize, scale: &[f32]) -> Vec<f32> {
    let mut out = data.to_vec();
    for row in out.chunks_exact_mut(width) {
        for (v, s) in row.iter_mut().zip(scale) {
            *v /= s;
        }
    }
    out
}

impl ModelInputs {
    pub fn from_scenario(s: &Scenario) -> Self {
        let d = s.dims;
        let points = scale_rows(&s.polylines.points, d.point_width, &POINT_SCALE);
        Self {
            dims: d,
            tracks: scale_rows(&s.tracks.data, d.track_width, &TRACK_SCALE),
            signals: scale_rows(&s.signals.data, d.signal_width, &SIGNAL_SCALE),
            frames: scale_rows(&s.polylines.frames, d.frame_width, &FRAME_SCALE),
            labels: s.polylines.labels.clone(),
            points,
            masked_polylines: vec![false; d.polylines],
        }
    }
}

/// Zeroes masked feature vectors. Track and signal rows are cleared per
/// masked timestep; a masked polyline loses its labels and every point
/// including existence while its frame stays as is.
pub fn apply_masks(inputs: &ModelInputs, masks: &MaskSet) -> ModelInputs {
    let d = inputs.dims;
    let mut out = inputs.clone();
    for (row, &m) in out.tracks.chunks_exact_mut(d.track_width).zip(&masks.tracks) {
        if m {
            row.fill(0.0);
        }
    }
    for (row, &m) in out.signals.chunks_exact_mut(d.signal_width).zip(&masks.signals) {
        if m {
            row.fill(0.0);
        }
    }
    let pts = d.points_per_polyline * d.point_width;
    for (z, &m) in masks.polylines.iter().enumerate() {
        if m {
            out.labels[z * d.label_classes..(z + 1) * d.label_classes].fill(0.0);
            out.points[z * pts..(z + 1) * pts].fill(0.0);
            out.masked_polylines[z] = true;
        }
    }
    out
}
