use super::{Graph, NodeId, NumericError, ParamStore};

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest per-parameter error, where a parameter is one named tensor and
    /// `|·|` is the Euclidean norm over its checked coordinates.
    pub max_rel_error: f64,
    pub worst: Option<String>,
    /// Largest error of a single coordinate, for diagnostics. Dominated by
    /// the O(δ²) truncation of central differences on small gradients.
    pub max_coord_rel_error: f64,
    pub worst_coord: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose ±δ perturbation moved an L1 residual across zero or
    /// changed a max-pool winner. The loss is not differentiable along such a
    /// segment, so central differences say nothing about the gradient there.
    pub excluded: usize,
}

/// Compares reverse-mode gradients of `f` against central differences with
/// step `delta` over every coordinate of every parameter.
///
/// `f` must build the same graph deterministically from `params`.
pub fn grad_check<F>(f: F, params: &ParamStore<f64>, delta: f64) -> Result<GradCheckReport, NumericError>
where
    F: Fn(&ParamStore<f64>, &mut Graph<f64>) -> Result<NodeId, NumericError>,
{
    let mut g = Graph::new();
    let loss = f(params, &mut g)?;
    let base_sig = g.kink_signature();
    let analytic = g.backward(loss)?.for_params(params.len());
    drop(g);

    let eval = |p: &ParamStore<f64>| -> Result<(f64, bool), NumericError> {
        let mut g = Graph::new();
        let l = f(p, &mut g)?;
        Ok((g.value(l).item(), g.kink_signature() == base_sig))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        max_coord_rel_error: 0.0,
        worst_coord: None,
        checked: 0,
        excluded: 0,
    };
    let mut work = params.clone();
    for pi in 0..params.len() {
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        let mut any = false;
        for k in 0..params.tensor(pi).len() {
            let orig = params.tensor(pi).data()[k];
            work.tensor_mut(pi).data_mut()[k] = orig + delta;
            let (plus, same_plus) = eval(&work)?;
            work.tensor_mut(pi).data_mut()[k] = orig - delta;
            let (minus, same_minus) = eval(&work)?;
            work.tensor_mut(pi).data_mut()[k] = orig;
            if !(same_plus && same_minus) {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * delta);
            let a = analytic[pi].as_ref().map_or(0.0, |t| t.data()[k]);
            report.checked += 1;
            any = true;
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            let err = relative_error(a, numeric);
            if err > report.max_coord_rel_error || report.worst_coord.is_none() {
                report.max_coord_rel_error = err;
                report.worst_coord = Some((params.name(pi).to_string(), k));
            }
        }
        if !any {
            continue;
        }
        let err = diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-8);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some(params.name(pi).to_string());
        }
    }
    Ok(report)
}
