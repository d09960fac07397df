use serde::{Deserialize, Serialize};

use crate::scene::ScenarioDims;

/// Per-stream weights of the reconstruction loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub track: f64,
    pub signal: f64,
    pub road: f64,
    pub ego: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            track: 1.0,
            signal: 1.0,
            road: 1.0,
            ego: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            track: 0.0,
            signal: 0.0,
            road: 0.0,
            ego: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Tensor extents; `dims.hidden` is the model width D.
    pub dims: ScenarioDims,
    pub road_layers: usize,
    pub factorized_layers: usize,
    pub heads: usize,
    /// Hidden widths of the per-point MLP; the last entry is the collapsed width.
    pub pointnet_widths: Vec<usize>,
    pub ffn_multiplier: usize,
    pub mask_ratio: f64,
    pub loss_mask_ratio: f64,
    pub loss_weights: LossWeights,
    /// Sinusoidal encoding over the object axis of the time-variant stream.
    pub object_encoding: bool,
    /// Sinusoidal encoding over the time axis of the time-variant stream.
    pub time_encoding: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::for_dims(ScenarioDims::default())
    }
}

impl EncoderConfig {
    pub fn for_dims(dims: ScenarioDims) -> Self {
        Self {
            dims,
            road_layers: 2,
            factorized_layers: 2,
            heads: 4,
            pointnet_widths: vec![32, 64],
            ffn_multiplier: 4,
            mask_ratio: 0.5,
            loss_mask_ratio: 1.0,
            loss_weights: LossWeights::default(),
            object_encoding: true,
            time_encoding: true,
        }
    }

    pub fn hidden(&self) -> usize {
        self.dims.hidden
    }

    /// Width of a collapsed polyline before projection: PointNet output plus labels.
    pub fn road_feature_width(&self) -> usize {
        self.pointnet_widths.last().copied().unwrap_or(self.dims.point_width) + self.dims.label_classes
    }

    pub fn check(&self) -> Result<(), String> {
        let mut problems = self.dims.check();
        let d = self.hidden();
        if self.heads == 0 || d % self.heads != 0 {
            problems.push(format!("hidden width {d} is not divisible by {} heads", self.heads));
        }
        if self.pointnet_widths.is_empty() || self.pointnet_widths.contains(&0) {
            problems.push("pointnet_widths must be non-empty and positive".into());
        }
        if self.ffn_multiplier == 0 {
            problems.push("ffn_multiplier must be positive".into());
        }
        for (name, r) in [("mask_ratio", self.mask_ratio), ("loss_mask_ratio", self.loss_mask_ratio)] {
            if !(0.0..=1.0).contains(&r) {
                problems.push(format!("{name} must lie in [0, 1], got {r}"));
            }
        }
        let w = self.loss_weights;
        for (name, l) in [("track", w.track), ("signal", w.signal), ("road", w.road), ("ego", w.ego)] {
            if !(l >= 0.0 && l.is_finite()) {
                problems.push(format!("loss weight {name} must be finite and >= 0, got {l}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        EncoderConfig::default().check().unwrap();
        EncoderConfig::for_dims(ScenarioDims::compact()).check().unwrap();
        EncoderConfig::for_dims(ScenarioDims::tiny()).check().unwrap();
    }

    #[test]
    fn heads_must_divide_width() {
        let mut c = EncoderConfig::default();
        c.heads = 5;
        assert!(c.check().unwrap_err().contains("divisible"));
    }

    #[test]
    fn json_round_trip() {
        let c = EncoderConfig::for_dims(ScenarioDims::tiny());
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<EncoderConfig>(&s).unwrap(), c);
    }
}
