//! Central finite-difference check of the analytic loss gradient.

use rayon::prelude::*;

use crate::autograd::Graph;
use crate::config::{Ablation, LossWeights};
use crate::error::Result;
use crate::fusion::{GmtModel, PreparedSample};
use crate::training::{loss_on_graph, sample_gradients};

/// Relative errors use `max(|analytic|, |numeric|, REL_FLOOR)` as the
/// denominator so entries whose true gradient is zero are not judged on
/// rounding noise alone.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

fn total_loss(model: &GmtModel, params: &crate::params::ParamStore, p: &PreparedSample, w: &LossWeights, a: Ablation) -> Result<f64> {
    let mut g = Graph::new(params);
    let pred = model.forward(&mut g, p, a)?;
    let (total, _) = loss_on_graph(&mut g, pred, p, w)?;
    Ok(g.scalar(total))
}

/// Compare every parameter entry's analytic gradient with a central
/// difference of step `eps`.
pub fn check_parameter_gradients(
    model: &GmtModel,
    prepared: &PreparedSample,
    weights: &LossWeights,
    ablation: Ablation,
    eps: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = sample_gradients(model, prepared, weights, ablation)?;
    let entries: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(id, g)| (0..g.len()).map(move |k| (id, k)))
        .collect();
    let results: Vec<Result<(f64, usize, f64, f64)>> = entries
        .par_iter()
        .map_init(
            || model.params.clone(),
            |store, &(id, k)| {
                let cols = store.value(id).ncols();
                let (r, c) = (k / cols, k % cols);
                let orig = store.value(id)[(r, c)];
                store.value_mut(id)[(r, c)] = orig + eps;
                let up = total_loss(model, store, prepared, weights, ablation);
                store.value_mut(id)[(r, c)] = orig - eps;
                let down = total_loss(model, store, prepared, weights, ablation);
                store.value_mut(id)[(r, c)] = orig;
                let numeric = (up? - down?) / (2.0 * eps);
                let a = analytic[id][(r, c)];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
                Ok((rel, id, a, numeric))
            },
        )
        .collect();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for r in results {
        let (rel, id, a, n) = r?;
        report.checked += 1;
        if rel > report.max_rel_err || report.worst_param.is_empty() {
            report.max_rel_err = rel;
            report.worst_param = model.params.name(id).to_string();
            report.worst_analytic = a;
            report.worst_numeric = n;
        }
    }
    Ok(report)
}
