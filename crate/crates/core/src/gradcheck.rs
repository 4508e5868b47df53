//! Central finite-difference checks of every block's reverse pass and of
//! the composed multi-task loss.

use std::sync::Arc;

use ndarray::{Array, Array1, Array2, Array3, Axis, Dimension};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::PairGold;
use crate::embeddings::{EmbeddingTable, TokenSequence};
use crate::neural::attention::{attention_backward, AttentionParams};
use crate::neural::layers::{softmax_rows, Dense, ForwardMode, PreAct, PreActDense};
use crate::neural::lstm::BiLstm;
use crate::neural::{attention, init_params, ArchConfig, DeepEmbedder, Model, PairBatch, TensorKind, Tensors, Variant};
use crate::training::{loss_and_grads, multitask_loss, LossWeights};
use crate::Result;

pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

/// Steps tried when the primary one disagrees. Large steps can straddle a
/// ReLU or max-pool switch, small ones drown exact zeros in roundoff; an
/// entry is scored by its best step.
const FALLBACK_STEPS: [f64; 3] = [1e-4, 1e-6, 1e-7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub variant: Variant,
    pub seed: u64,
    pub seq_len: usize,
    pub vocab: usize,
    pub batch: usize,
    pub step: f64,
    pub samples_per_tensor: usize,
    /// Perturb every analytic gradient before comparison (negative control).
    pub corrupt: bool,
}

impl GradcheckConfig {
    pub fn new(variant: Variant, seed: u64) -> Self {
        GradcheckConfig {
            variant,
            seed,
            seq_len: 12,
            vocab: 20,
            batch: 2,
            step: 1e-5,
            samples_per_tensor: 16,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub block: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub variant: Variant,
    pub seed: u64,
    pub threshold: f64,
    pub blocks: Vec<BlockError>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.threshold)
    }

    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-4)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn randn<D: Dimension, Sh: ndarray::ShapeBuilder<Dim = D>>(rng: &mut ChaCha8Rng, shape: Sh, scale: f64) -> Array<f64, D> {
    Array::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Compares `analytic` with central differences of `loss` at sampled
/// entries of every non-running-stat tensor of `point`.
fn compare<P: Tensors + Clone>(
    point: &P,
    analytic: &P,
    mut loss: impl FnMut(&P) -> f64,
    cfg: &GradcheckConfig,
    rng: &mut ChaCha8Rng,
) -> (f64, usize) {
    let mut probe = point.clone();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data.to_vec()).collect();
    let kinds: Vec<(TensorKind, usize)> = point.tensors().iter().map(|t| (t.kind, t.data.len())).collect();
    let (mut worst, mut checked) = (0.0_f64, 0);
    for (ti, &(kind, len)) in kinds.iter().enumerate() {
        if matches!(kind, TensorKind::RunningMean | TensorKind::RunningVar) || len == 0 {
            continue;
        }
        let idx: Vec<usize> = if len <= cfg.samples_per_tensor {
            (0..len).collect()
        } else {
            sample(rng, len, cfg.samples_per_tensor).into_vec()
        };
        for i in idx {
            let mut a = grads[ti][i];
            if cfg.corrupt {
                a = a * 1.01 + 1e-3;
            }
            let orig = probe.tensors()[ti].data[i];
            let mut best = f64::INFINITY;
            for h in std::iter::once(cfg.step).chain(FALLBACK_STEPS) {
                probe.tensors_mut()[ti].data[i] = orig + h;
                let up = loss(&probe);
                probe.tensors_mut()[ti].data[i] = orig - h;
                let down = loss(&probe);
                probe.tensors_mut()[ti].data[i] = orig;
                best = best.min(relative_error(a, (up - down) / (2.0 * h)));
                if best < 0.1 * GRADCHECK_THRESHOLD {
                    break;
                }
            }
            worst = worst.max(best);
            checked += 1;
        }
    }
    (worst, checked)
}

fn std_layout<D: Dimension>(a: Array<f64, D>) -> Array<f64, D> {
    a.as_standard_layout().into_owned()
}

fn weighted_sum<D: Dimension>(a: &Array<f64, D>, r: &Array<f64, D>) -> f64 {
    (a * r).sum()
}

fn perturb_norms<P: Tensors>(p: &mut P, rng: &mut ChaCha8Rng) {
    for t in p.tensors_mut() {
        match t.kind {
            TensorKind::RunningMean | TensorKind::Shift => {
                t.data.iter_mut().for_each(|v| *v = 0.1 * rng.sample::<f64, _>(StandardNormal))
            }
            TensorKind::RunningVar | TensorKind::Scale => {
                t.data.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5))
            }
            _ => {}
        }
    }
}

fn embedder_forward(e: &DeepEmbedder, x: &Array2<f64>, mode: ForwardMode, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut h = x.clone();
    for l in &e.layers {
        h = l.forward(&h, mode, 0.0, rng).0;
    }
    x + &h
}

fn check_embedder(cfg: &GradcheckConfig, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> BlockError {
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut e = DeepEmbedder::new(&mut r, arch.embed_dim, arch.hidden);
    perturb_norms(&mut e, rng);
    let n = cfg.batch * cfg.seq_len;
    let x: Array2<f64> = randn(rng, (n, arch.embed_dim), 1.0);
    let w: Array2<f64> = randn(rng, (n, arch.embed_dim), 1.0);
    let mode = ForwardMode::INFER;
    let mut caches = Vec::new();
    let mut h = x.clone();
    for l in &e.layers {
        let (next, c) = l.forward(&h, mode, 0.0, rng);
        h = next;
        caches.push(c);
    }
    let mut grad = (e.zeros_like(), Array2::zeros(x.dim()));
    let mut d = w.clone();
    for ((l, c), g) in e.layers.iter().zip(&caches).zip(grad.0.layers.iter_mut()).rev() {
        d = l.backward(c, &d, g);
    }
    grad.1 = std_layout(d + &w);
    let point = (e, x);
    let (err, k) = compare(
        &point,
        &grad,
        |(e, x)| weighted_sum(&embedder_forward(e, x, mode, &mut ChaCha8Rng::seed_from_u64(0)), &w),
        cfg,
        rng,
    );
    BlockError {
        block: "deep_embedder".into(),
        max_rel_error: err,
        checked: k,
    }
}

fn check_preact_dense(
    name: &str,
    cfg: &GradcheckConfig,
    fan_in: usize,
    fan_out: usize,
    mode: ForwardMode,
    rng: &mut ChaCha8Rng,
) -> BlockError {
    let mut layer = PreActDense::new(rng, fan_in, fan_out);
    perturb_norms(&mut layer, rng);
    let n = cfg.batch * cfg.seq_len;
    let x: Array2<f64> = randn(rng, (n, fan_in), 1.0);
    let w: Array2<f64> = randn(rng, (n, fan_out), 1.0);
    let (_, cache) = layer.forward(&x, mode, 0.0, rng);
    let mut g = layer.zeros_like();
    let dx = layer.backward(&cache, &w, &mut g);
    let (err, k) = compare(
        &(layer, x),
        &(g, std_layout(dx)),
        |(l, x)| weighted_sum(&l.forward(x, mode, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).0, &w),
        cfg,
        rng,
    );
    BlockError {
        block: name.into(),
        max_rel_error: err,
        checked: k,
    }
}

fn lengths(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut l: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(1..=cfg.seq_len)).collect();
    l[0] = cfg.seq_len;
    l
}

fn check_lstm(cfg: &GradcheckConfig, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> BlockError {
    let lstm = BiLstm::new(rng, arch.hidden, arch.lstm_hidden());
    let lens = lengths(cfg, rng);
    let x: Array3<f64> = randn(rng, (cfg.batch, cfg.seq_len, arch.hidden), 1.0);
    let ws: Array3<f64> = randn(rng, (cfg.batch, cfg.seq_len, lstm.output_dim()), 1.0);
    let wl: Array2<f64> = randn(rng, (cfg.batch, lstm.output_dim()), 1.0);
    let (_, cache) = lstm.forward(&x, &lens);
    let mut g = lstm.zeros_like();
    let dx = lstm.backward(&cache, Some(&ws), Some(&wl), &mut g);
    let (err, k) = compare(
        &(lstm, x),
        &(g, std_layout(dx)),
        |(l, x)| {
            let (out, _) = l.forward(x, &lens);
            weighted_sum(&out.sequence, &ws) + weighted_sum(&out.last, &wl)
        },
        cfg,
        rng,
    );
    BlockError {
        block: "bilstm".into(),
        max_rel_error: err,
        checked: k,
    }
}

fn check_attention(cfg: &GradcheckConfig, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> BlockError {
    let params = AttentionParams::new(rng, arch.hidden, arch.hidden);
    let t = cfg.seq_len;
    let len = rng.random_range(2..=t);
    let mask: Vec<u8> = (0..t).map(|i| u8::from(i < len)).collect();
    let k: Array2<f64> = randn(rng, (t, arch.hidden), 1.0);
    let q: Array1<f64> = randn(rng, arch.hidden, 1.0);
    let w: Array1<f64> = randn(rng, arch.hidden, 1.0);
    let step = attention(k.view(), q.view(), &mask, &params).expect("mask has an active position");
    let mut g = params.zeros_like();
    let (dk, dq) = attention_backward(k.view(), q.view(), &mask, &params, &step, w.view(), &mut g);
    let (err, n) = compare(
        &(params, (k, q)),
        &(g, (std_layout(dk), std_layout(dq))),
        |(p, (k, q))| attention(k.view(), q.view(), &mask, p).expect("active").context.dot(&w),
        cfg,
        rng,
    );
    BlockError {
        block: "attention".into(),
        max_rel_error: err,
        checked: n,
    }
}

type FinalNet = (Dense, (PreActDense, PreActDense));

fn final_forward(net: &FinalNet, x: &Array2<f64>, mode: ForwardMode) -> Array2<f64> {
    let rng = &mut ChaCha8Rng::seed_from_u64(0);
    let z0 = net.0.forward(x);
    let h = net.1 .0.forward(&z0, mode, 0.0, rng).0;
    &z0 + &net.1 .1.forward(&h, mode, 0.0, rng).0
}

fn check_final(cfg: &GradcheckConfig, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> BlockError {
    let mut net: FinalNet = (
        Dense::new(rng, arch.final_input(), arch.final_encoding),
        (
            PreActDense::new(rng, arch.final_encoding, arch.bottleneck),
            PreActDense::new(rng, arch.bottleneck, arch.final_encoding),
        ),
    );
    perturb_norms(&mut net, rng);
    let b = cfg.batch.max(2) * 3;
    let x: Array2<f64> = randn(rng, (b, arch.final_input()), 1.0);
    let w: Array2<f64> = randn(rng, (b, arch.final_encoding), 1.0);
    let mode = ForwardMode::INFER;
    let r = &mut ChaCha8Rng::seed_from_u64(0);
    let z0 = net.0.forward(&x);
    let (h, c_down) = net.1 .0.forward(&z0, mode, 0.0, r);
    let (_, c_up) = net.1 .1.forward(&h, mode, 0.0, r);
    let mut g = net.zeros_like();
    let dh = net.1 .1.backward(&c_up, &w, &mut g.1 .1);
    let dz0 = &w + &net.1 .0.backward(&c_down, &dh, &mut g.1 .0);
    let dx = net.0.backward(&x, &dz0, &mut g.0);
    let (err, k) = compare(
        &(net, x),
        &(g, std_layout(dx)),
        |(n, x)| weighted_sum(&final_forward(n, x, mode), &w),
        cfg,
        rng,
    );
    BlockError {
        block: "final_residual".into(),
        max_rel_error: err,
        checked: k,
    }
}

type Heads = (PreAct, (Dense, (Dense, Dense)));

fn heads_loss(h: &Heads, z: &Array2<f64>, w: &[Array2<f64>; 3]) -> f64 {
    let u = h.0.forward(z, ForwardMode::INFER, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).0;
    let outs = [&h.1 .0, &h.1 .1 .0, &h.1 .1 .1];
    outs.iter()
        .zip(w)
        .map(|(d, w)| weighted_sum(&softmax_rows(&d.forward(&u)), w))
        .sum()
}

fn check_heads(cfg: &GradcheckConfig, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> BlockError {
    let e = arch.final_encoding;
    let mut heads: Heads = (
        PreAct::new(e),
        (
            Dense::new(rng, e, arch.n_component_classes),
            (
                Dense::new(rng, e, arch.n_component_classes),
                Dense::new(rng, e, arch.n_relation_classes),
            ),
        ),
    );
    perturb_norms(&mut heads, rng);
    let b = cfg.batch.max(2) * 3;
    let z: Array2<f64> = randn(rng, (b, e), 1.0);
    let w = [
        randn(rng, (b, arch.n_component_classes), 1.0),
        randn(rng, (b, arch.n_component_classes), 1.0),
        randn(rng, (b, arch.n_relation_classes), 1.0),
    ];
    let (u, cache) = heads.0.forward(&z, ForwardMode::INFER, 0.0, rng);
    let mut g = heads.zeros_like();
    let mut du = Array2::zeros(u.dim());
    let dense = [&heads.1 .0, &heads.1 .1 .0, &heads.1 .1 .1];
    let mut gd = [Dense::clone(dense[0]), Dense::clone(dense[1]), Dense::clone(dense[2])];
    gd.iter_mut().for_each(|d| *d = d.zeros_like());
    for ((d, wk), gk) in dense.iter().zip(&w).zip(gd.iter_mut()) {
        let p = softmax_rows(&d.forward(&u));
        let inner = (&p * wk).sum_axis(Axis(1)).insert_axis(Axis(1));
        let dlogits = &p * &(wk - &inner);
        du += &d.backward(&u, &dlogits, gk);
    }
    let [g0, g1, g2] = gd;
    g.1 = (g0, (g1, g2));
    let dz = heads.0.backward(&cache, &du, &mut g.0);
    let (err, k) = compare(&(heads, z), &(g, std_layout(dz)), |(h, z)| heads_loss(h, z, &w), cfg, rng);
    BlockError {
        block: "heads".into(),
        max_rel_error: err,
        checked: k,
    }
}

/// A toy model and a batch of `cfg.batch` pairs.
pub fn toy_problem(cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<(Model, PairBatch, Vec<PairGold>)> {
    let arch = ArchConfig::new(cfg.variant, cfg.seq_len, 3, 5);
    let tokens: Vec<String> = (0..cfg.vocab).map(|i| format!("t{i}")).collect();
    let mut matrix: Array2<f64> = randn(rng, (cfg.vocab + 1, arch.embed_dim), 0.5);
    matrix.row_mut(EmbeddingTable::PAD_INDEX).fill(0.0);
    let table = EmbeddingTable::from_parts(tokens, matrix, Default::default())?;
    let mut params = init_params(&arch, cfg.seed);
    perturb_norms(&mut params, rng);
    let model = Model::new(arch.clone(), params, Arc::new(table))?;
    let seq = |rng: &mut ChaCha8Rng, len: usize| TokenSequence {
        ids: (0..cfg.seq_len)
            .map(|i| if i < len { rng.random_range(1..=cfg.vocab) } else { 0 })
            .collect(),
        true_length: len,
    };
    let ls = lengths(cfg, rng);
    let lt = lengths(cfg, rng);
    let mut distance = Array2::zeros((cfg.batch, arch.distance_bits));
    distance.mapv_inplace(|_: f64| f64::from(rng.random_bool(0.5)));
    let batch = PairBatch {
        source: ls.iter().map(|&l| seq(rng, l)).collect(),
        target: lt.iter().map(|&l| seq(rng, l)).collect(),
        distance,
    };
    let golds = (0..cfg.batch)
        .map(|_| {
            let relation = rng.random_range(0..arch.n_relation_classes);
            PairGold {
                source: rng.random_range(0..3),
                target: rng.random_range(0..3),
                relation,
                link: relation < arch.n_forward(),
            }
        })
        .collect();
    Ok((model, batch, golds))
}

fn check_full(name: &str, cfg: &GradcheckConfig, mode: ForwardMode, rng: &mut ChaCha8Rng) -> Result<BlockError> {
    let (model, batch, golds) = toy_problem(cfg, rng)?;
    let w = LossWeights::default();
    let (_, grads, _) = loss_and_grads(&model, &batch, &golds, &w, mode, 0)?;
    let mut probe = model.clone();
    let (err, k) = compare(
        &model.params,
        &grads,
        |p| {
            probe.params.clone_from(p);
            probe
                .forward(&batch, mode, 0)
                .map(|t| multitask_loss(&t.outputs, &golds, &probe.params, &w).0.total)
                .unwrap_or(f64::NAN)
        },
        cfg,
        rng,
    );
    Ok(BlockError {
        block: name.into(),
        max_rel_error: err,
        checked: k,
    })
}

/// Runs every block check and the composed-loss check.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let arch = ArchConfig::new(cfg.variant, cfg.seq_len, 3, 5);
    arch.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rng = &mut rng;
    let mut blocks = vec![
        check_embedder(cfg, &arch, rng),
        check_preact_dense("encoder", cfg, arch.embed_dim, arch.hidden, ForwardMode::INFER, rng),
        check_preact_dense("batchnorm_train", cfg, arch.hidden, arch.hidden, ForwardMode::BATCH_STATS, rng),
        check_lstm(cfg, &arch, rng),
    ];
    if cfg.variant == Variant::ResAttArg {
        blocks.push(check_attention(cfg, &arch, rng));
    }
    blocks.push(check_final(cfg, &arch, rng));
    blocks.push(check_heads(cfg, &arch, rng));
    blocks.push(check_full("multitask_loss", cfg, ForwardMode::INFER, rng)?);
    blocks.push(check_full("multitask_loss_batch_stats", cfg, ForwardMode::BATCH_STATS, rng)?);
    Ok(GradcheckReport {
        variant: cfg.variant,
        seed: cfg.seed,
        threshold: GRADCHECK_THRESHOLD,
        blocks,
    })
}
