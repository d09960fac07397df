//! Weighted reconstruction loss.

use super::config::LossWeights;
use super::inputs::{MaskSet, ModelInputs};
use super::model::DecodedNodes;
use crate::numeric::{Graph, NodeId, NumericError, Real, Tensor};
use crate::scene::{point, signal, track};

/// Scalar nodes of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub track: NodeId,
    pub signal: NodeId,
    pub road: NodeId,
    pub ego: NodeId,
    pub empty: EmptyComponents,
}

/// Components whose loss mask covered nothing; their value is 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EmptyComponents {
    pub track: bool,
    pub signal: bool,
    pub road: bool,
    pub ego: bool,
}

impl EmptyComponents {
    pub fn any(&self) -> bool {
        self.track || self.signal || self.road || self.ego
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub track: f64,
    pub signal: f64,
    pub road: f64,
    pub ego: f64,
    pub empty: EmptyComponents,
}

impl LossBreakdown {
    pub fn read<R: Real>(g: &Graph<R>, n: &LossNodes) -> Self {
        let v = |id| g.value(id).item().as_f64();
        Self {
            total: v(n.total),
            track: v(n.track),
            signal: v(n.signal),
            road: v(n.road),
            ego: v(n.ego),
            empty: n.empty,
        }
    }

    pub fn components(&self) -> [f64; 4] {
        [self.track, self.signal, self.road, self.ego]
    }
}

fn to_r<R: Real>(v: &[f32]) -> Vec<R> {
    v.iter().map(|&x| R::of(x as f64)).collect()
}

fn zero<R: Real>(g: &mut Graph<R>) -> NodeId {
    g.input(Tensor::scalar(R::zero()))
}

struct TrackHeads {
    cont: NodeId,
    class: NodeId,
    exist: NodeId,
}

/// Mean over covered track-timesteps of `exist · (L1 + class CE) + existence BCE`.
fn track_component<R: Real>(
    g: &mut Graph<R>,
    heads: &TrackHeads,
    target: &ModelInputs,
    mask: &MaskSet,
    rows: std::ops::Range<usize>,
) -> Result<Option<NodeId>, NumericError> {
    let d = target.dims;
    let n_rows = d.max_tracks * d.timesteps;
    let covered: Vec<bool> = (0..n_rows)
        .map(|i| rows.contains(&(i / d.timesteps)) && mask.tracks[i])
        .collect();
    let count = covered.iter().filter(|&&c| c).count();
    if count == 0 {
        return Ok(None);
    }
    let inv = 1.0 / count as f64;
    let mut cont_t = Vec::with_capacity(n_rows * track::CONTINUOUS);
    let mut cont_w = Vec::with_capacity(n_rows * track::CONTINUOUS);
    let mut class_t = Vec::with_capacity(n_rows * track::CLASSES);
    let mut class_w = Vec::with_capacity(n_rows);
    let mut ex_t = Vec::with_capacity(n_rows);
    let mut ex_w = Vec::with_capacity(n_rows);
    for (i, &cov) in covered.iter().enumerate() {
        let row = &target.tracks[i * d.track_width..(i + 1) * d.track_width];
        let exist = row[track::EXISTENCE] as f64;
        let c = if cov { inv } else { 0.0 };
        cont_t.extend(to_r::<R>(&row[..track::CONTINUOUS]));
        cont_w.extend(std::iter::repeat_n(R::of(c * exist), track::CONTINUOUS));
        class_t.extend(to_r::<R>(&row[track::CLASS..track::CLASS + track::CLASSES]));
        class_w.push(R::of(c * exist));
        ex_t.push(R::of(exist));
        ex_w.push(R::of(c));
    }
    let l1 = g.l1(heads.cont, cont_t, cont_w)?;
    let ce = g.softmax_cross_entropy(heads.class, class_t, class_w)?;
    let bce = g.bce_with_logits(heads.exist, ex_t, ex_w)?;
    Ok(Some(g.weighted_sum(&[(l1, R::one()), (ce, R::one()), (bce, R::one())])?))
}

/// Builds the loss from decoder outputs and unmasked normalized targets.
pub fn loss_graph<R: Real>(
    g: &mut Graph<R>,
    dec: &DecodedNodes,
    target: &ModelInputs,
    loss_mask: &MaskSet,
    weights: &LossWeights,
) -> Result<LossNodes, NumericError> {
    let d = target.dims;
    let mut empty = EmptyComponents::default();

    let heads = TrackHeads {
        cont: g.cols(dec.tracks, 0, track::CONTINUOUS)?,
        class: g.cols(dec.tracks, track::CLASS, track::CLASSES)?,
        exist: g.cols(dec.tracks, track::EXISTENCE, 1)?,
    };
    let track = match track_component(g, &heads, target, loss_mask, 1..d.max_tracks)? {
        Some(n) => n,
        None => {
            empty.track = true;
            zero(g)
        }
    };
    let ego = match track_component(g, &heads, target, loss_mask, 0..1)? {
        Some(n) => n,
        None => {
            empty.ego = true;
            zero(g)
        }
    };

    let n_sig = d.signals * d.timesteps;
    let sig_count = loss_mask.signals.iter().filter(|&&m| m).count();
    let signal = if sig_count == 0 {
        empty.signal = true;
        zero(g)
    } else {
        let inv = 1.0 / sig_count as f64;
        let mut cont_t = Vec::with_capacity(n_sig * signal::CONTINUOUS);
        let mut cont_w = Vec::with_capacity(n_sig * signal::CONTINUOUS);
        let mut lab_t = Vec::with_capacity(n_sig * signal::LABELS);
        let mut lab_w = Vec::with_capacity(n_sig);
        for i in 0..n_sig {
            let row = &target.signals[i * d.signal_width..(i + 1) * d.signal_width];
            let c = R::of(if loss_mask.signals[i] { inv } else { 0.0 });
            cont_t.extend(to_r::<R>(&row[..signal::CONTINUOUS]));
            cont_w.extend(std::iter::repeat_n(c, signal::CONTINUOUS));
            lab_t.extend(to_r::<R>(&row[signal::LABEL..signal::LABEL + signal::LABELS]));
            lab_w.push(c);
        }
        let cont = g.cols(dec.signals, 0, signal::CONTINUOUS)?;
        let logits = g.cols(dec.signals, signal::LABEL, signal::LABELS)?;
        let l1 = g.l1(cont, cont_t, cont_w)?;
        let ce = g.softmax_cross_entropy(logits, lab_t, lab_w)?;
        g.weighted_sum(&[(l1, R::one()), (ce, R::one())])?
    };

    let road_count = loss_mask.polylines.iter().filter(|&&m| m).count();
    let road = if road_count == 0 {
        empty.road = true;
        zero(g)
    } else {
        let inv = 1.0 / road_count as f64;
        let s = d.points_per_polyline;
        let lab_w: Vec<R> = loss_mask
            .polylines
            .iter()
            .map(|&m| R::of(if m { inv } else { 0.0 }))
            .collect();
        let ce = g.softmax_cross_entropy(dec.labels, to_r(&target.labels), lab_w)?;
        let n_pts = d.polylines * s;
        let mut cont_t = Vec::with_capacity(n_pts * point::CONTINUOUS);
        let mut cont_w = Vec::with_capacity(n_pts * point::CONTINUOUS);
        let mut ex_t = Vec::with_capacity(n_pts);
        let mut ex_w = Vec::with_capacity(n_pts);
        for i in 0..n_pts {
            let row = &target.points[i * d.point_width..(i + 1) * d.point_width];
            let exist = row[point::EXISTENCE] as f64;
            let c = if loss_mask.polylines[i / s] { inv } else { 0.0 };
            cont_t.extend(to_r::<R>(&row[..point::CONTINUOUS]));
            cont_w.extend(std::iter::repeat_n(R::of(c * exist), point::CONTINUOUS));
            ex_t.push(R::of(exist));
            ex_w.push(R::of(c));
        }
        let cont = g.cols(dec.points, 0, point::CONTINUOUS)?;
        let ex = g.cols(dec.points, point::EXISTENCE, 1)?;
        let l1 = g.l1(cont, cont_t, cont_w)?;
        let bce = g.bce_with_logits(ex, ex_t, ex_w)?;
        g.weighted_sum(&[(ce, R::one()), (l1, R::one()), (bce, R::one())])?
    };

    let total = g.weighted_sum(&[
        (track, R::of(weights.track)),
        (signal, R::of(weights.signal)),
        (road, R::of(weights.road)),
        (ego, R::of(weights.ego)),
    ])?;
    Ok(LossNodes {
        total,
        track,
        signal,
        road,
        ego,
        empty,
    })
}
