//! Multi-task loss, Adam, learning-rate decay and early-stopped training.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{PairDataset, PairGold};
use crate::ensemble::{collapsed_relation, predict_dataset};
use crate::metrics::binary_scores;
use crate::neural::layers::ForwardMode;
use crate::neural::{HeadGrads, HeadOutputs, Model, ModelParams, Tensors};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub source: f64,
    pub target: f64,
    pub relation: f64,
    pub l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            source: 1.0,
            target: 1.0,
            relation: 10.0,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub loss_weights: LossWeights,
    /// κ in `lr0 / (1 + κ·epoch)`.
    pub decay: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 5e-3,
            beta1: 0.9,
            beta2: 0.9999,
            adam_epsilon: 1e-8,
            loss_weights: LossWeights::default(),
            decay: 0.001,
            batch_size: 32,
            patience: 100,
            max_epochs: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        let w = &self.loss_weights;
        if [w.source, w.target, w.relation, w.l2].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience, batch_size and max_epochs must be positive".into()));
        }
        if !(self.lr0 > 0.0) || self.decay < 0.0 {
            return Err(Error::Config("lr0 must be positive and decay nonnegative".into()));
        }
        Ok(())
    }
}

/// `lr0 / (1 + κ·epoch)`
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 / (1.0 + cfg.decay * epoch as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub source: f64,
    pub target: f64,
    pub relation: f64,
    pub l2: f64,
    pub total: f64,
}

fn cross_entropy(probs: &HeadOutputs, golds: &[PairGold]) -> (f64, f64, f64) {
    let ce = |p: f64| -p.max(f64::MIN_POSITIVE).ln();
    let mut out = (0.0, 0.0, 0.0);
    for (i, g) in golds.iter().enumerate() {
        out.0 += ce(probs.source[[i, g.source]]);
        out.1 += ce(probs.target[[i, g.target]]);
        out.2 += ce(probs.relation[[i, g.relation]]);
    }
    out
}

/// Weighted, batch-summed loss and its gradient w.r.t. the head logits.
/// The L2 term covers the regularized weight tensors of `params`; its
/// parameter gradient is added by [`add_l2_grad`].
pub fn multitask_loss(
    probs: &HeadOutputs,
    golds: &[PairGold],
    params: &ModelParams,
    w: &LossWeights,
) -> (LossParts, HeadGrads) {
    let (s, t, r) = cross_entropy(probs, golds);
    let l2 = w.l2 * params.l2_norm_sq();
    let parts = LossParts {
        source: w.source * s,
        target: w.target * t,
        relation: w.relation * r,
        l2,
        total: w.source * s + w.target * t + w.relation * r + l2,
    };
    let mut g = HeadGrads {
        source: probs.source.clone() * w.source,
        target: probs.target.clone() * w.target,
        relation: probs.relation.clone() * w.relation,
    };
    for (i, gold) in golds.iter().enumerate() {
        g.source[[i, gold.source]] -= w.source;
        g.target[[i, gold.target]] -= w.target;
        g.relation[[i, gold.relation]] -= w.relation;
    }
    (parts, g)
}

/// Adds `2·λ·W` to the gradient of every regularized tensor.
pub fn add_l2_grad(grads: &mut ModelParams, params: &ModelParams, l2: f64) {
    let src = params.tensors();
    for (g, p) in grads.tensors_mut().into_iter().zip(src) {
        if p.kind.regularized() {
            for (gv, pv) in g.data.iter_mut().zip(p.data) {
                *gv += 2.0 * l2 * pv;
            }
        }
    }
}

/// Loss and full parameter gradient of one batch.
pub fn loss_and_grads(
    model: &Model,
    batch: &crate::neural::PairBatch,
    golds: &[PairGold],
    w: &LossWeights,
    mode: ForwardMode,
    seed: u64,
) -> Result<(LossParts, ModelParams, crate::neural::Trace)> {
    let trace = model.forward(batch, mode, seed)?;
    let (parts, head) = multitask_loss(&trace.outputs, golds, &model.params, w);
    let mut grads = model.backward(&trace, &head)?;
    add_l2_grad(&mut grads, &model.params, w.l2);
    Ok((parts, grads, trace))
}

/// Adam moments and step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64, cfg: &TrainConfig) {
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let g_all = grads.tensors();
    let m_all = state.m.tensors_mut();
    let v_all = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g_all).zip(m_all).zip(v_all) {
        if !p.kind.trainable() {
            continue;
        }
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Cross-entropy terms are means per training pair; `l2` is the
    /// regularizer at the end of the epoch.
    pub loss: LossParts,
    pub valid_link_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,loss_source,loss_target,loss_relation,loss_l2,loss_total,valid_link_f1\n");
        for e in &self.epochs {
            let l = &e.loss;
            let _ = writeln!(
                out,
                "{},{:e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12}",
                e.epoch, e.lr, l.source, l.target, l.relation, l.l2, l.total, e.valid_link_f1
            );
        }
        out
    }
}

/// Scores a model after each epoch; higher is better.
pub trait Monitor {
    fn score(&mut self, model: &Model, epoch: usize) -> Result<f64>;

    /// Checked after each epoch's score; `true` ends training there.
    fn should_stop(&self) -> bool {
        false
    }
}

/// Link F1 of a single model on a validation set, self pairs excluded.
pub fn link_f1(model: &Model, data: &PairDataset) -> Result<f64> {
    let preds = predict_dataset(model, data, 256)?;
    let f = model.n_forward();
    let (mut p, mut g) = (Vec::new(), Vec::new());
    for (pred, pair) in preds.iter().zip(&data.pairs) {
        if !pair.is_self_pair {
            p.push(collapsed_relation(pred, f) < f);
            g.push(pair.gold.link);
        }
    }
    Ok(binary_scores(&p, &g)?.f1)
}

/// Training-style accuracy of the source, target and relation heads
/// (relation over the extended domain).
pub fn head_accuracies(model: &Model, data: &PairDataset) -> Result<[f64; 3]> {
    let preds = predict_dataset(model, data, 256)?;
    let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
    let mut hits = [0usize; 3];
    for (p, pair) in preds.iter().zip(&data.pairs) {
        hits[0] += usize::from(argmax(&p.p_source) == pair.gold.source);
        hits[1] += usize::from(argmax(&p.p_target) == pair.gold.target);
        hits[2] += usize::from(argmax(&p.p_relation) == pair.gold.relation);
    }
    let n = data.len().max(1) as f64;
    Ok(hits.map(|h| h as f64 / n))
}

pub struct LinkF1Monitor<'a> {
    pub data: &'a PairDataset,
}

impl Monitor for LinkF1Monitor<'_> {
    fn score(&mut self, model: &Model, _epoch: usize) -> Result<f64> {
        link_f1(model, self.data)
    }
}

/// Trains `model` in place on `train`, early-stopping on `monitor`, and
/// returns the model of the best epoch.
pub fn train_with_monitor(
    mut model: Model,
    train: &PairDataset,
    cfg: &TrainConfig,
    monitor: &mut dyn Monitor,
) -> Result<(Model, TrainHistory)> {
    cfg.check()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train.batch(chunk);
            let golds = train.golds(chunk);
            let seed = rng.random();
            let (parts, grads, trace) =
                loss_and_grads(&model, &batch, &golds, &cfg.loss_weights, ForwardMode::TRAIN, seed)?;
            model.update_running_stats(&trace);
            adam_step(&mut model.params, &grads, &mut state, lr, cfg);
            sum.source += parts.source;
            sum.target += parts.target;
            sum.relation += parts.relation;
        }
        let n = train.len() as f64;
        let l2 = cfg.loss_weights.l2 * model.params.l2_norm_sq();
        let loss = LossParts {
            source: sum.source / n,
            target: sum.target / n,
            relation: sum.relation / n,
            l2,
            total: (sum.source + sum.target + sum.relation) / n + l2,
        };
        let score = monitor.score(&model, epoch)?;
        log::info!(
            "stage=train seed={} epoch={epoch} lr={lr:.6e} loss={:.6} valid_link_f1={score:.4}",
            cfg.seed,
            loss.total
        );
        epochs.push(EpochRecord {
            epoch,
            lr,
            loss,
            valid_link_f1: score,
        });
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((epoch, score, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience || monitor.should_stop() {
            break;
        }
    }
    let stopped_epoch = epochs.len() - 1;
    let (best_epoch, _, params) = best.expect("at least one epoch");
    model.params = params;
    Ok((
        model,
        TrainHistory {
            epochs,
            best_epoch,
            stopped_epoch,
        },
    ))
}

/// Trains with validation link F1 as the early-stopping signal.
pub fn train(model: Model, train: &PairDataset, valid: &PairDataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    if valid.positive_links() == 0 {
        return Err(Error::Data("validation set has no positive links".into()));
    }
    train_with_monitor(model, train, cfg, &mut LinkF1Monitor { data: valid })
}

/// Independent runs differing only in seed; `init(seed)` builds the
/// initial model of each member. Members train in parallel.
pub fn train_ensemble<F>(
    seeds: &[u64],
    init: F,
    train_set: &PairDataset,
    valid: &PairDataset,
    cfg: &TrainConfig,
) -> Result<Vec<(Model, TrainHistory)>>
where
    F: Fn(u64) -> Result<Model> + Sync,
{
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(Error::Config("ensemble seeds must be distinct".into()));
    }
    seeds
        .par_iter()
        .map(|&seed| {
            let run = TrainConfig { seed, ..cfg.clone() };
            train(init(seed)?, train_set, valid, &run)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn lr_examples() {
        let c = cfg();
        assert_eq!(lr_at(0, &c), 5e-3);
        assert!((lr_at(1000, &c) - 2.5e-3).abs() < 1e-15);
        let flat = TrainConfig { decay: 0.0, ..c };
        assert_eq!(lr_at(12345, &flat), 5e-3);
    }

    #[test]
    fn adam_first_step_scalar() {
        // one trainable scalar: the first bias-corrected step moves by
        // lr·g/(|g| + eps·...) ≈ lr·sign(g)
        let g = 0.3_f64;
        let (b1, b2, eps, lr) = (0.9, 0.9999, 1e-8, 5e-3);
        let m = (1.0 - b1) * g / (1.0 - b1);
        let v = (1.0 - b2) * g * g / (1.0 - b2);
        let step = lr * m / (v.sqrt() + eps);
        assert!((step - lr).abs() < 1e-9);
    }

    #[test]
    fn loss_of_certain_predictions_is_l2_only() {
        let probs = HeadOutputs {
            source: array![[1.0, 0.0]],
            target: array![[0.0, 1.0]],
            relation: array![[0.0, 0.0, 1.0]],
        };
        let gold = [PairGold {
            source: 0,
            target: 1,
            relation: 2,
            link: false,
        }];
        let schema_cfg = crate::neural::ArchConfig::new(crate::neural::Variant::ResArg, 4, 2, 3);
        let params = crate::neural::init_params(&schema_cfg, 0);
        let (parts, g) = multitask_loss(&probs, &gold, &params, &LossWeights::default());
        assert_eq!(parts.source + parts.target + parts.relation, 0.0);
        assert!((parts.total - 1e-4 * params.l2_norm_sq()).abs() < 1e-12);
        assert!(g.source.iter().all(|v| v.abs() < 1e-15));
    }
}
