//! Training objective, AdamW optimizer, dataset splitting and the fit loop.

use std::ops::ControlFlow;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::config::{Ablation, LossWeights, TrainConfig};
use crate::data::{FrameSplit, TrajectorySample};
use crate::geometry::Pose9;
use crate::error::{GmtError, Result};
use crate::fusion::{GmtModel, PreparedSample};
use crate::metrics;
use crate::params::ParamStore;

fn check_shapes(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, f64>, mask: &[bool]) -> Result<()> {
    if pred.dim() != gt.dim() || pred.ncols() != 9 {
        return Err(GmtError::LengthMismatch {
            what: "prediction vs ground-truth rows",
            left: pred.nrows(),
            right: gt.nrows(),
        });
    }
    if mask.len() != pred.nrows() {
        return Err(GmtError::LengthMismatch {
            what: "mask vs frames",
            left: mask.len(),
            right: pred.nrows(),
        });
    }
    Ok(())
}

fn masked_l1(
    pred: ArrayView2<'_, f64>,
    gt: ArrayView2<'_, f64>,
    mask: &[bool],
    cols: std::ops::Range<usize>,
) -> Option<f64> {
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return None;
    }
    let total: f64 = rows
        .iter()
        .map(|&t| {
            cols.clone()
                .map(|c| (pred[[t, c]] - gt[[t, c]]).abs())
                .sum::<f64>()
        })
        .sum();
    Some(total / rows.len() as f64)
}

/// Mean over valid future frames of the position L1 error.
pub fn loss_translation(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, f64>, future_mask: &[bool]) -> Result<f64> {
    check_shapes(pred, gt, future_mask)?;
    masked_l1(pred, gt, future_mask, 0..3).ok_or(GmtError::EmptyFuture)
}

/// Mean over valid future frames of the 6D rotation L1 error.
pub fn loss_orientation(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, f64>, future_mask: &[bool]) -> Result<f64> {
    check_shapes(pred, gt, future_mask)?;
    masked_l1(pred, gt, future_mask, 3..9).ok_or(GmtError::EmptyFuture)
}

/// Mean over valid history frames of the full 9-D L1 error.
pub fn loss_reconstruction(
    pred: ArrayView2<'_, f64>,
    gt: ArrayView2<'_, f64>,
    history_mask: &[bool],
) -> Result<f64> {
    check_shapes(pred, gt, history_mask)?;
    masked_l1(pred, gt, history_mask, 0..9).ok_or(GmtError::EmptyHistory)
}

/// 9-D L1 error at the final valid frame.
pub fn loss_destination(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, f64>, last_valid_index: usize) -> Result<f64> {
    if pred.dim() != gt.dim() || last_valid_index >= pred.nrows() {
        return Err(GmtError::InvalidInput(format!(
            "final index {last_valid_index} outside a {}-frame prediction",
            pred.nrows()
        )));
    }
    Ok((0..9)
        .map(|c| (pred[[last_valid_index, c]] - gt[[last_valid_index, c]]).abs())
        .sum())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub trans: f64,
    pub ori: f64,
    pub rec: f64,
    pub dest: f64,
}

impl LossComponents {
    pub fn total(&self, w: &LossWeights) -> f64 {
        loss_total(self, w)
    }

    fn add(&mut self, o: &LossComponents) {
        self.trans += o.trans;
        self.ori += o.ori;
        self.rec += o.rec;
        self.dest += o.dest;
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            trans: self.trans * s,
            ori: self.ori * s,
            rec: self.rec * s,
            dest: self.dest * s,
        }
    }

    fn is_finite(&self) -> bool {
        [self.trans, self.ori, self.rec, self.dest].iter().all(|v| v.is_finite())
    }
}

pub fn loss_total(c: &LossComponents, w: &LossWeights) -> f64 {
    w.trans * c.trans + w.ori * c.ori + w.rec * c.rec + w.dest * c.dest
}

/// All four terms for one sample.
pub fn loss_components(pred: ArrayView2<'_, f64>, gt: ArrayView2<'_, f64>, split: &FrameSplit) -> Result<LossComponents> {
    let t = pred.nrows();
    let fut = split.future_mask(t);
    let hist = split.history_mask(t);
    Ok(LossComponents {
        trans: loss_translation(pred, gt, &fut)?,
        ori: loss_orientation(pred, gt, &fut)?,
        rec: loss_reconstruction(pred, gt, &hist)?,
        dest: loss_destination(pred, gt, split.last_valid())?,
    })
}

/// Per-entry weights that turn a weighted L1 sum into each loss term.
fn term_weights(split: &FrameSplit, t: usize) -> [Array2<f64>; 4] {
    let mut trans = Array2::zeros((t, 9));
    let mut ori = Array2::zeros((t, 9));
    let mut rec = Array2::zeros((t, 9));
    let mut dest = Array2::zeros((t, 9));
    let nf = split.future.len() as f64;
    for &f in &split.future {
        trans.slice_mut(s![f, 0..3]).fill(1.0 / nf);
        ori.slice_mut(s![f, 3..9]).fill(1.0 / nf);
    }
    let nh = split.history.len() as f64;
    for &h in &split.history {
        rec.row_mut(h).fill(1.0 / nh);
    }
    dest.row_mut(split.last_valid()).fill(1.0);
    [trans, ori, rec, dest]
}

/// Weighted total loss on the tape, plus the unweighted term values.
pub fn loss_on_graph(
    g: &mut Graph,
    pred: Var,
    prepared: &PreparedSample,
    weights: &LossWeights,
) -> Result<(Var, LossComponents)> {
    let t = prepared.seq_len;
    if prepared.split.future.is_empty() {
        return Err(GmtError::EmptyFuture);
    }
    if prepared.split.history.is_empty() {
        return Err(GmtError::EmptyHistory);
    }
    let [wt, wo, wr, wd] = term_weights(&prepared.split, t);
    let lambdas = [weights.trans, weights.ori, weights.rec, weights.dest];
    let mut values = [0.0; 4];
    let mut parts = Vec::with_capacity(4);
    for (i, w) in [wt, wo, wr, wd].into_iter().enumerate() {
        let term = g.weighted_l1(pred, prepared.target.clone(), w);
        values[i] = g.scalar(term);
        if lambdas[i] != 0.0 {
            parts.push(g.scale(term, lambdas[i]));
        }
    }
    let total = if parts.is_empty() {
        // keep a node so backward still runs; every gradient is zero
        let term = g.weighted_l1(pred, prepared.target.clone(), Array2::zeros((t, 9)));
        term
    } else {
        g.sum(&parts)
    };
    Ok((
        total,
        LossComponents {
            trans: values[0],
            ori: values[1],
            rec: values[2],
            dest: values[3],
        },
    ))
}

/// Seeded shuffle, then 90% train, `floor(5%)` validation, remainder test.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n < 20 {
        return Err(GmtError::TooFewSamples { got: n, needed: 20 });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 9 / 10;
    let n_val = n / 20;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok((idx, val, test))
}

pub fn split_dataset<T: Clone>(samples: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (a, b, c) = split_indices(samples.len(), seed)?;
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| samples[i].clone()).collect();
    Ok((pick(a), pick(b), pick(c)))
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .iter()
            .map(|(_, p)| Array2::zeros(p.dim()))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Array2<f64>], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let b1 = cfg.beta1;
        let b2 = cfg.beta2;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (id, g) in grads.iter().enumerate() {
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let p = params.value_mut(id);
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * (mh / (vh.sqrt() + cfg.eps) + cfg.weight_decay * *p);
                });
        }
    }
}

/// Rescale so the global L2 norm is at most `max_norm`. Returns the
/// pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * s));
    }
    norm
}

/// Loss and parameter gradients for one sample.
pub fn sample_gradients(
    model: &GmtModel,
    prepared: &PreparedSample,
    weights: &LossWeights,
    ablation: Ablation,
) -> Result<(LossComponents, Vec<Array2<f64>>)> {
    let mut g = Graph::new(&model.params);
    let pred = model.forward(&mut g, prepared, ablation)?;
    let (total, comps) = loss_on_graph(&mut g, pred, prepared, weights)?;
    let grads = g
        .backward(total)
        .into_param_grads()
        .into_iter()
        .enumerate()
        .map(|(id, gr)| gr.unwrap_or_else(|| Array2::zeros(model.params.value(id).dim())))
        .collect();
    Ok((comps, grads))
}

/// Mean loss and mean gradient over a batch. Samples run in parallel; the
/// reduction runs in batch order so results do not depend on scheduling.
pub fn batch_gradients(
    model: &GmtModel,
    batch: &[&PreparedSample],
    weights: &LossWeights,
    ablation: Ablation,
) -> Result<(LossComponents, Vec<Array2<f64>>)> {
    let per: Vec<Result<(LossComponents, Vec<Array2<f64>>)>> = batch
        .par_iter()
        .map(|p| sample_gradients(model, p, weights, ablation))
        .collect();
    let mut comps = LossComponents::default();
    let mut acc: Option<Vec<Array2<f64>>> = None;
    for r in per {
        let (c, g) = r?;
        comps.add(&c);
        match &mut acc {
            None => acc = Some(g),
            Some(a) => a.iter_mut().zip(&g).for_each(|(a, g)| *a += g),
        }
    }
    let s = 1.0 / batch.len() as f64;
    let mut grads = acc.unwrap_or_default();
    grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * s));
    Ok((comps.scaled(s), grads))
}

/// Mean losses and mean ADE of the model over a set of samples.
pub fn evaluate_losses(
    model: &GmtModel,
    samples: &[PreparedSample],
    ablation: Ablation,
) -> Result<(LossComponents, f64)> {
    if samples.is_empty() {
        return Err(GmtError::EmptySequence);
    }
    let per: Vec<Result<(LossComponents, f64)>> = samples
        .par_iter()
        .map(|p| {
            let pred = model.predict_prepared(p, ablation)?;
            let comps = loss_components(pred.view(), p.target.view(), &p.split)?;
            let fut = p.split.future_mask(p.seq_len);
            let ade = metrics::ade(
                &metrics::positions_of(pred.view()),
                &metrics::positions_of(p.target.view()),
                &fut,
            )?;
            Ok((comps, ade))
        })
        .collect();
    let mut comps = LossComponents::default();
    let mut ade = 0.0;
    for r in per {
        let (c, a) = r?;
        comps.add(&c);
        ade += a;
    }
    let s = 1.0 / samples.len() as f64;
    Ok((comps.scaled(s), ade * s))
}

/// Model predictions and per-sample metrics on raw samples.
pub struct Evaluation {
    pub report: metrics::MetricReport,
    pub per_sample: Vec<metrics::SampleMetrics>,
    pub predictions: Vec<Array2<f64>>,
}

/// Score the model on every sample. Samples run in parallel; results keep
/// input order.
pub fn evaluate_model(model: &GmtModel, samples: &[TrajectorySample], ablation: Ablation) -> Result<Evaluation> {
    let results: Vec<Result<(metrics::SampleMetrics, Array2<f64>)>> = samples
        .par_iter()
        .map(|s| {
            let prepared = model.prepare(s)?;
            let pred = model.predict_prepared(&prepared, ablation)?;
            let predicted: Vec<Pose9> = pred.outer_iter().map(|r| Pose9::from_slice(r.as_slice().expect("row-major"))).collect();
            let fut = prepared.split.future_mask(prepared.seq_len);
            let m = metrics::score_sample(&metrics::EvalCase {
                predicted: &predicted,
                ground_truth: &s.trajectory.poses,
                future_mask: &fut,
                last_valid_index: prepared.split.last_valid(),
                object_size: s.object_size,
                fixtures: &s.scene.fixtures,
            })?;
            Ok((m, pred))
        })
        .collect();
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut predictions = Vec::with_capacity(samples.len());
    for r in results {
        let (m, p) = r?;
        per_sample.push(m);
        predictions.push(p);
    }
    Ok(Evaluation {
        report: metrics::MetricReport::from_samples(&per_sample)?,
        per_sample,
        predictions,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: String,
    #[serde(rename = "L_trans")]
    pub l_trans: f64,
    #[serde(rename = "L_ori")]
    pub l_ori: f64,
    #[serde(rename = "L_rec")]
    pub l_rec: f64,
    #[serde(rename = "L_dest")]
    pub l_dest: f64,
    pub total: f64,
    #[serde(rename = "ADE_val")]
    pub ade_val: f64,
}

impl EpochLog {
    fn new(epoch: usize, split: &str, c: &LossComponents, w: &LossWeights, ade_val: f64) -> Self {
        Self {
            epoch,
            split: split.to_string(),
            l_trans: c.trans,
            l_ori: c.ori,
            l_rec: c.rec,
            l_dest: c.dest,
            total: c.total(w),
            ade_val,
        }
    }
}

/// Everything the fit loop carries between epochs. Saved in checkpoints so
/// an interrupted run resumes exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Epochs completed so far.
    pub epoch: usize,
    pub optimizer: AdamW,
    pub best_ade: f64,
    pub best_epoch: Option<usize>,
    pub epochs_since_best: usize,
    pub best_params: Option<ParamStore>,
    pub finished: bool,
}

impl TrainState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            epoch: 0,
            optimizer: AdamW::new(params),
            best_ade: f64::INFINITY,
            best_epoch: None,
            epochs_since_best: 0,
            best_params: None,
            finished: false,
        }
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    idx.shuffle(&mut rng);
    idx
}

/// Run epochs until the epoch budget, the step cap or early stopping ends
/// training. `on_epoch` sees the model after every epoch and may stop the
/// loop early.
///
/// Early stopping tracks validation ADE, or training ADE when `val` is
/// empty.
pub fn fit<F>(
    model: &mut GmtModel,
    train: &[PreparedSample],
    val: &[PreparedSample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: F,
) -> Result<()>
where
    F: FnMut(&GmtModel, &TrainState, &[EpochLog]) -> Result<ControlFlow<()>>,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(GmtError::TooFewSamples { got: 0, needed: 1 });
    }
    if state.optimizer.m.len() != model.params.len() {
        return Err(GmtError::ConfigMismatch(
            "optimizer state does not match the parameter set".into(),
        ));
    }
    let step_cap = cfg.max_steps.map(|s| s as u64).unwrap_or(u64::MAX);
    while !state.finished && state.epoch < cfg.epochs && state.optimizer.step < step_cap {
        let epoch = state.epoch;
        let lr = cfg.learning_rate_at(epoch);
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut train_sum = LossComponents::default();
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if state.optimizer.step >= step_cap {
                break;
            }
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (comps, mut grads) = batch_gradients(model, &batch, &cfg.loss_weights, cfg.ablation)?;
            if !comps.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(GmtError::NonFiniteLoss { epoch, batch: b });
            }
            clip_grad_norm(&mut grads, cfg.grad_clip);
            state.optimizer.update(&mut model.params, &grads, lr, cfg);
            train_sum.add(&comps.scaled(batch.len() as f64));
            seen += batch.len();
        }
        let train_mean = train_sum.scaled(1.0 / seen.max(1) as f64);
        let (val_comps, selection_ade) = if val.is_empty() {
            let (_, ade) = evaluate_losses(model, train, cfg.ablation)?;
            (None, ade)
        } else {
            let (c, ade) = evaluate_losses(model, val, cfg.ablation)?;
            (Some(c), ade)
        };
        let mut logs = vec![EpochLog::new(epoch, "train", &train_mean, &cfg.loss_weights, selection_ade)];
        if let Some(c) = val_comps {
            logs.push(EpochLog::new(epoch, "val", &c, &cfg.loss_weights, selection_ade));
        }

        state.epoch += 1;
        if selection_ade < state.best_ade {
            state.best_ade = selection_ade;
            state.best_epoch = Some(epoch);
            state.epochs_since_best = 0;
            state.best_params = Some(model.params.clone());
        } else {
            state.epochs_since_best += 1;
        }
        if state.epochs_since_best >= cfg.patience.max(1) {
            state.finished = true;
        }
        if let ControlFlow::Break(()) = on_epoch(model, state, &logs)? {
            break;
        }
    }
    Ok(())
}
