//! Masked autoencoder over the sparse scene representation.

mod config;
mod inputs;
mod loss;
mod model;

pub use config::{EncoderConfig, LossWeights};
pub use inputs::{
    apply_masks, sample_masks, MaskSet, ModelInputs, FRAME_SCALE, POINT_SCALE, SIGNAL_SCALE, TRACK_SCALE,
};
pub use loss::{loss_graph, EmptyComponents, LossBreakdown, LossNodes};
pub use model::{sinusoid, DecodedNodes, EncodedNodes, Mae};

use crate::numeric::{Graph, NumericError, ParamStore, Real, Tensor};
use crate::scene::Scenario;

/// Encoder outputs as values.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub y_r: Tensor<f32>,
    pub f_proj: Tensor<f32>,
    pub y_v: Tensor<f32>,
    pub z_r: Tensor<f32>,
    pub z_v: Tensor<f32>,
}

/// Decoder outputs in normalized units: continuous channels are divided by
/// the input scales, categorical channels are logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub tracks: Tensor<f32>,
    pub signals: Tensor<f32>,
    pub labels: Tensor<f32>,
    pub points: Tensor<f32>,
}

fn to_f32<R: Real>(t: &Tensor<R>) -> Tensor<f32> {
    t.cast()
}

impl Mae {
    /// Unmasked encoder pass.
    pub fn embed(&self, params: &ParamStore<f32>, s: &Scenario) -> Result<Embeddings, NumericError> {
        self.embed_inputs(params, &ModelInputs::from_scenario(s))
    }

    pub fn embed_inputs(&self, params: &ParamStore<f32>, inputs: &ModelInputs) -> Result<Embeddings, NumericError> {
        let mut g = Graph::new();
        let e = self.encode(&mut g, params, inputs)?;
        Ok(Embeddings {
            y_r: g.value(e.y_r).clone(),
            f_proj: g.value(e.f_proj).clone(),
            y_v: g.value(e.y_v).clone(),
            z_r: g.value(e.z_r).clone(),
            z_v: g.value(e.z_v).clone(),
        })
    }

    pub fn reconstruct<R: Real>(
        &self,
        params: &ParamStore<R>,
        s: &Scenario,
        masks: &MaskSet,
    ) -> Result<Reconstruction, NumericError> {
        let inputs = apply_masks(&ModelInputs::from_scenario(s), masks);
        let mut g = Graph::new();
        let e = self.encode(&mut g, params, &inputs)?;
        let d = self.decode(&mut g, params, &e)?;
        Ok(Reconstruction {
            tracks: to_f32(g.value(d.tracks)),
            signals: to_f32(g.value(d.signals)),
            labels: to_f32(g.value(d.labels)),
            points: to_f32(g.value(d.points)),
        })
    }

    /// Encoder, decoder and loss for one scenario in `g`.
    pub fn loss<R: Real>(
        &self,
        g: &mut Graph<R>,
        params: &ParamStore<R>,
        target: &ModelInputs,
        masks: &MaskSet,
        loss_mask: &MaskSet,
    ) -> Result<LossNodes, NumericError> {
        let inputs = apply_masks(target, masks);
        let e = self.encode(g, params, &inputs)?;
        let d = self.decode(g, params, &e)?;
        loss_graph(g, &d, target, loss_mask, &self.config().loss_weights)
    }
}

/// Loss of a given reconstruction against `s`, evaluated in `f64`.
pub fn reconstruction_loss(
    recon: &Reconstruction,
    s: &Scenario,
    loss_mask: &MaskSet,
    weights: &LossWeights,
) -> Result<LossBreakdown, NumericError> {
    let mut g = Graph::<f64>::new();
    let dec = DecodedNodes {
        tracks: g.input(recon.tracks.cast()),
        signals: g.input(recon.signals.cast()),
        labels: g.input(recon.labels.cast()),
        points: g.input(recon.points.cast()),
    };
    let nodes = loss_graph(&mut g, &dec, &ModelInputs::from_scenario(s), loss_mask, weights)?;
    Ok(LossBreakdown::read(&g, &nodes))
}
