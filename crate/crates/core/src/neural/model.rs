//! The composed ResArg / ResAttArg network.
//!
//! Per side: frozen embedding lookup → deep embedder (residual block of four
//! pre-activated time-distributed dense layers) → encoder dense to `hidden`
//! (ResArg additionally average-pools time) → shared biLSTM. ResArg keeps
//! the final biLSTM states; ResAttArg keeps the sequences and applies
//! co-attention. The two 50-d representations and the distance code feed a
//! dense encoder, a 20→5→20 residual block and three softmax heads.

use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{
    attention, attention_backward, masked_average_batch, masked_average_backward, prefix_mask, AttentionParams,
    AttentionStep,
};
use super::config::{ArchConfig, Variant};
use super::layers::{softmax_rows, ForwardMode, PreActCache, PreActDense, PreActDenseCache, BN_MOMENTUM};
use super::lstm::{BiLstmCache, BiLstmOutput};
use super::params::{DeepEmbedder, ModelParams};
use super::tensors::Tensors;
use crate::embeddings::{EmbeddingTable, TokenSequence};
use crate::{Error, Result};

/// A batch of encoded pairs. All sequences share one padded length.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub source: Vec<TokenSequence>,
    pub target: Vec<TokenSequence>,
    /// `B × distance_bits`
    pub distance: Array2<f64>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// The same batch with `extra` padding positions appended to every sequence.
    pub fn padded(&self, extra: usize) -> PairBatch {
        PairBatch {
            source: self.source.iter().map(|s| s.padded(extra)).collect(),
            target: self.target.iter().map(|s| s.padded(extra)).collect(),
            distance: self.distance.clone(),
        }
    }

    fn check(&self, cfg: &ArchConfig, table: &EmbeddingTable) -> Result<usize> {
        let b = self.source.len();
        if b == 0 || self.target.len() != b || self.distance.dim() != (b, cfg.distance_bits) {
            return Err(Error::Config(format!(
                "batch shape mismatch: {} sources, {} targets, distance {:?}",
                b,
                self.target.len(),
                self.distance.dim()
            )));
        }
        let t = self.source[0].len();
        for s in self.source.iter().chain(&self.target) {
            if s.len() != t || s.true_length == 0 || s.true_length > t {
                return Err(Error::Config(format!(
                    "sequence of length {} (true length {}) in a batch padded to {t}",
                    s.len(),
                    s.true_length
                )));
            }
            if s.ids.iter().any(|&i| i >= table.matrix.nrows()) {
                return Err(Error::Config("token id outside the embedding table".into()));
            }
        }
        if table.dim() != cfg.embed_dim {
            return Err(Error::Config(format!(
                "embedding dim {} does not match architecture {}",
                table.dim(),
                cfg.embed_dim
            )));
        }
        Ok(t)
    }
}

/// Probability matrices of the three heads, one row per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub source: Array2<f64>,
    pub target: Array2<f64>,
    pub relation: Array2<f64>,
}

/// Gradient of the loss w.r.t. each head's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub source: Array2<f64>,
    pub target: Array2<f64>,
    pub relation: Array2<f64>,
}

impl HeadGrads {
    pub fn zeros_like(out: &HeadOutputs) -> Self {
        HeadGrads {
            source: Array2::zeros(out.source.dim()),
            target: Array2::zeros(out.target.dim()),
            relation: Array2::zeros(out.relation.dim()),
        }
    }
}

/// Head probabilities for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPrediction {
    pub p_source: Vec<f64>,
    pub p_target: Vec<f64>,
    pub p_relation: Vec<f64>,
    /// Sum of the forward-relation probabilities.
    pub p_link: f64,
}

impl HeadPrediction {
    pub fn new(p_source: Vec<f64>, p_target: Vec<f64>, p_relation: Vec<f64>, n_forward: usize) -> Self {
        let p_link = p_relation[..n_forward].iter().sum();
        HeadPrediction {
            p_source,
            p_target,
            p_relation,
            p_link,
        }
    }
}

impl HeadOutputs {
    pub fn len(&self) -> usize {
        self.source.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.source.nrows() == 0
    }

    pub fn predictions(&self, n_forward: usize) -> Vec<HeadPrediction> {
        (0..self.len())
            .map(|i| {
                HeadPrediction::new(
                    self.source.row(i).to_vec(),
                    self.target.row(i).to_vec(),
                    self.relation.row(i).to_vec(),
                    n_forward,
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct SideTrace {
    positions: Vec<(usize, usize)>,
    embedder: Vec<PreActDenseCache>,
    encoder: PreActDenseCache,
    seq_len: usize,
    /// Lengths seen by the LSTM (pooled for ResArg).
    lstm_lengths: Vec<usize>,
    lstm_input_len: usize,
    lstm: BiLstmCache,
}

/// Intermediate values of the co-attention block.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// biLSTM output sequences, `B × T × hidden`.
    pub keys_src: Array3<f64>,
    pub keys_tgt: Array3<f64>,
    /// Masked averages, `B × hidden`.
    pub avg_src: Array2<f64>,
    pub avg_tgt: Array2<f64>,
    /// Attention over the source sequence, queried by the target average.
    pub steps_src: Vec<AttentionStep>,
    /// Attention over the target sequence, queried by the source average.
    pub steps_tgt: Vec<AttentionStep>,
}

/// Everything a backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub mode: ForwardMode,
    src: SideTrace,
    tgt: SideTrace,
    pub attention: Option<AttentionTrace>,
    final_input: Array2<f64>,
    block_down: PreActDenseCache,
    block_up: PreActDenseCache,
    head_act: PreActCache,
    head_hidden: Array2<f64>,
    pub outputs: HeadOutputs,
}

/// Parameters, architecture and the frozen embedding table.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ArchConfig,
    pub params: ModelParams,
    pub embeddings: Arc<EmbeddingTable>,
}

fn pool_time(x: &Array3<f64>, factor: usize) -> Array3<f64> {
    let (b, t, d) = x.dim();
    let tp = t.div_ceil(factor);
    let mut out = Array3::zeros((b, tp, d));
    for w in 0..tp {
        let hi = ((w + 1) * factor).min(t);
        let sum = x.slice(s![.., w * factor..hi, ..]).sum_axis(Axis(1));
        out.slice_mut(s![.., w, ..]).assign(&(sum / factor as f64));
    }
    out
}

fn unpool_time(d: &Array3<f64>, factor: usize, t: usize) -> Array3<f64> {
    let (b, _, dim) = d.dim();
    let mut out = Array3::zeros((b, t, dim));
    for step in 0..t {
        let src = d.slice(s![.., step / factor, ..]).to_owned() / factor as f64;
        out.slice_mut(s![.., step, ..]).assign(&src);
    }
    out
}

impl Model {
    pub fn new(config: ArchConfig, params: ModelParams, embeddings: Arc<EmbeddingTable>) -> Result<Self> {
        config.check()?;
        Ok(Model {
            config,
            params,
            embeddings,
        })
    }

    pub fn n_forward(&self) -> usize {
        self.config.n_forward()
    }

    fn forward_side(
        &self,
        embedder: &DeepEmbedder,
        encoder: &PreActDense,
        seqs: &[TokenSequence],
        seq_len: usize,
        mode: ForwardMode,
        rng: &mut ChaCha8Rng,
    ) -> (BiLstmOutput, SideTrace) {
        let cfg = &self.config;
        let mut positions = Vec::new();
        let mut ids = Vec::new();
        for (b, s) in seqs.iter().enumerate() {
            for t in 0..s.true_length {
                positions.push((b, t));
                ids.push(s.ids[t]);
            }
        }
        let x0 = self.embeddings.matrix.select(Axis(0), &ids);
        let mut h = x0.clone();
        let mut caches = Vec::with_capacity(embedder.layers.len());
        for layer in &embedder.layers {
            let (next, cache) = layer.forward(&h, mode, cfg.dropout, rng);
            h = next;
            caches.push(cache);
        }
        let residual = x0 + h;
        let (encoded, enc_cache) = encoder.forward(&residual, mode, cfg.dropout, rng);

        let mut seq = Array3::zeros((seqs.len(), seq_len, cfg.hidden));
        for (row, &(b, t)) in positions.iter().enumerate() {
            seq.slice_mut(s![b, t, ..]).assign(&encoded.row(row));
        }
        let lengths: Vec<usize> = seqs.iter().map(|s| s.true_length).collect();
        let (lstm_input, lstm_lengths) = match cfg.variant {
            Variant::ResArg => (
                pool_time(&seq, cfg.pool_factor),
                lengths.iter().map(|l| l.div_ceil(cfg.pool_factor)).collect(),
            ),
            Variant::ResAttArg => (seq, lengths),
        };
        let (out, lstm) = self.params.lstm.forward(&lstm_input, &lstm_lengths);
        (
            out,
            SideTrace {
                positions,
                embedder: caches,
                encoder: enc_cache,
                seq_len,
                lstm_lengths,
                lstm_input_len: lstm_input.dim().1,
                lstm,
            },
        )
    }

    /// Forward pass. `seed` drives the dropout masks and is ignored when
    /// dropout is off.
    pub fn forward(&self, batch: &PairBatch, mode: ForwardMode, seed: u64) -> Result<Trace> {
        let cfg = &self.config;
        let seq_len = batch.check(cfg, &self.embeddings)?;
        let p = &self.params;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out_src, src) =
            self.forward_side(&p.embedder_src, &p.encoder_src, &batch.source, seq_len, mode, &mut rng);
        let (out_tgt, tgt) =
            self.forward_side(&p.embedder_tgt, &p.encoder_tgt, &batch.target, seq_len, mode, &mut rng);

        let (ctx_src, ctx_tgt, attention_trace) = match cfg.variant {
            Variant::ResArg => (out_src.last, out_tgt.last, None),
            Variant::ResAttArg => {
                let (att_src, att_tgt) = attention_params(p)?;
                let keys_src = out_src.sequence;
                let keys_tgt = out_tgt.sequence;
                let avg_src = masked_average_batch(&keys_src, &src.lstm_lengths)?;
                let avg_tgt = masked_average_batch(&keys_tgt, &tgt.lstm_lengths)?;
                let b = batch.len();
                let mut ctx_src = Array2::zeros((b, cfg.hidden));
                let mut ctx_tgt = Array2::zeros((b, cfg.hidden));
                let mut steps_src = Vec::with_capacity(b);
                let mut steps_tgt = Vec::with_capacity(b);
                for row in 0..b {
                    let st = attention(
                        keys_src.index_axis(Axis(0), row),
                        avg_tgt.row(row),
                        &prefix_mask(src.lstm_lengths[row], src.lstm_input_len),
                        att_src,
                    )?;
                    ctx_src.row_mut(row).assign(&st.context);
                    steps_src.push(st);
                    let st = attention(
                        keys_tgt.index_axis(Axis(0), row),
                        avg_src.row(row),
                        &prefix_mask(tgt.lstm_lengths[row], tgt.lstm_input_len),
                        att_tgt,
                    )?;
                    ctx_tgt.row_mut(row).assign(&st.context);
                    steps_tgt.push(st);
                }
                (
                    ctx_src,
                    ctx_tgt,
                    Some(AttentionTrace {
                        keys_src,
                        keys_tgt,
                        avg_src,
                        avg_tgt,
                        steps_src,
                        steps_tgt,
                    }),
                )
            }
        };

        let final_input = concatenate![Axis(1), ctx_src, ctx_tgt, batch.distance];
        let z0 = p.final_encoder.forward(&final_input);
        let (h1, block_down) = p.block_down.forward(&z0, mode, cfg.dropout, &mut rng);
        let (h2, block_up) = p.block_up.forward(&h1, mode, cfg.dropout, &mut rng);
        let z = z0 + h2;
        let (head_hidden, head_act) = p.head_act.forward(&z, mode, cfg.dropout, &mut rng);
        let outputs = HeadOutputs {
            source: softmax_rows(&p.head_source.forward(&head_hidden)),
            target: softmax_rows(&p.head_target.forward(&head_hidden)),
            relation: softmax_rows(&p.head_relation.forward(&head_hidden)),
        };
        Ok(Trace {
            mode,
            src,
            tgt,
            attention: attention_trace,
            final_input,
            block_down,
            block_up,
            head_act,
            head_hidden,
            outputs,
        })
    }

    /// Inference-mode head probabilities.
    pub fn predict(&self, batch: &PairBatch) -> Result<Vec<HeadPrediction>> {
        Ok(self
            .forward(batch, ForwardMode::INFER, 0)?
            .outputs
            .predictions(self.n_forward()))
    }

    fn backward_side(
        &self,
        embedder: &DeepEmbedder,
        encoder: &PreActDense,
        side: &SideTrace,
        d_lstm_input: Array3<f64>,
        g_embedder: &mut DeepEmbedder,
        g_encoder: &mut PreActDense,
    ) {
        let cfg = &self.config;
        let d_seq = match cfg.variant {
            Variant::ResArg => unpool_time(&d_lstm_input, cfg.pool_factor, side.seq_len),
            Variant::ResAttArg => d_lstm_input,
        };
        let mut d_encoded = Array2::zeros((side.positions.len(), cfg.hidden));
        for (row, &(b, t)) in side.positions.iter().enumerate() {
            d_encoded.row_mut(row).assign(&d_seq.slice(s![b, t, ..]));
        }
        let d_residual = encoder.backward(&side.encoder, &d_encoded, g_encoder);
        let mut d = d_residual;
        for ((layer, cache), grad) in embedder
            .layers
            .iter()
            .zip(&side.embedder)
            .zip(g_embedder.layers.iter_mut())
            .rev()
        {
            d = layer.backward(cache, &d, grad);
        }
    }

    /// Gradients of a scalar loss w.r.t. every parameter tensor, given the
    /// loss gradient w.r.t. the head logits.
    pub fn backward(&self, trace: &Trace, upstream: &HeadGrads) -> Result<ModelParams> {
        let cfg = &self.config;
        let p = &self.params;
        let mut g = p.zeros_like();

        let u = &trace.head_hidden;
        let mut du = p.head_source.backward(u, &upstream.source, &mut g.head_source);
        du += &p.head_target.backward(u, &upstream.target, &mut g.head_target);
        du += &p.head_relation.backward(u, &upstream.relation, &mut g.head_relation);
        let dz = p.head_act.backward(&trace.head_act, &du, &mut g.head_act);
        let dh1 = p.block_up.backward(&trace.block_up, &dz, &mut g.block_up);
        let dz0 = dz + p.block_down.backward(&trace.block_down, &dh1, &mut g.block_down);
        let dx = p.final_encoder.backward(&trace.final_input, &dz0, &mut g.final_encoder);
        let h = cfg.hidden;
        let d_ctx_src = dx.slice(s![.., ..h]).to_owned();
        let d_ctx_tgt = dx.slice(s![.., h..2 * h]).to_owned();

        let (d_lstm_src, d_lstm_tgt) = match (&trace.attention, cfg.variant) {
            (None, Variant::ResArg) => {
                let lstm = &p.lstm;
                let a = lstm.backward(&trace.src.lstm, None, Some(&d_ctx_src), &mut g.lstm);
                let b = lstm.backward(&trace.tgt.lstm, None, Some(&d_ctx_tgt), &mut g.lstm);
                (a, b)
            }
            (Some(at), Variant::ResAttArg) => {
                let (att_src, att_tgt) = attention_params(p)?;
                let mut d_keys_src = Array3::zeros(at.keys_src.dim());
                let mut d_keys_tgt = Array3::zeros(at.keys_tgt.dim());
                let mut d_avg_src = Array2::zeros(at.avg_src.dim());
                let mut d_avg_tgt = Array2::zeros(at.avg_tgt.dim());
                let g_src = g.attention_src.as_mut().expect("attention gradients");
                for row in 0..d_ctx_src.nrows() {
                    let (dk, dq) = attention_backward(
                        at.keys_src.index_axis(Axis(0), row),
                        at.avg_tgt.row(row),
                        &prefix_mask(trace.src.lstm_lengths[row], trace.src.lstm_input_len),
                        att_src,
                        &at.steps_src[row],
                        d_ctx_src.row(row),
                        g_src,
                    );
                    d_keys_src.index_axis_mut(Axis(0), row).assign(&dk);
                    d_avg_tgt.row_mut(row).assign(&dq);
                }
                let g_tgt = g.attention_tgt.as_mut().expect("attention gradients");
                for row in 0..d_ctx_tgt.nrows() {
                    let (dk, dq) = attention_backward(
                        at.keys_tgt.index_axis(Axis(0), row),
                        at.avg_src.row(row),
                        &prefix_mask(trace.tgt.lstm_lengths[row], trace.tgt.lstm_input_len),
                        att_tgt,
                        &at.steps_tgt[row],
                        d_ctx_tgt.row(row),
                        g_tgt,
                    );
                    d_keys_tgt.index_axis_mut(Axis(0), row).assign(&dk);
                    d_avg_src.row_mut(row).assign(&dq);
                }
                masked_average_backward(&mut d_keys_src, &trace.src.lstm_lengths, &d_avg_src);
                masked_average_backward(&mut d_keys_tgt, &trace.tgt.lstm_lengths, &d_avg_tgt);
                let a = p.lstm.backward(&trace.src.lstm, Some(&d_keys_src), None, &mut g.lstm);
                let b = p.lstm.backward(&trace.tgt.lstm, Some(&d_keys_tgt), None, &mut g.lstm);
                (a, b)
            }
            _ => return Err(Error::Config("trace does not match the model variant".into())),
        };

        self.backward_side(
            &p.embedder_src,
            &p.encoder_src,
            &trace.src,
            d_lstm_src,
            &mut g.embedder_src,
            &mut g.encoder_src,
        );
        self.backward_side(
            &p.embedder_tgt,
            &p.encoder_tgt,
            &trace.tgt,
            d_lstm_tgt,
            &mut g.embedder_tgt,
            &mut g.encoder_tgt,
        );
        Ok(g)
    }

    /// Folds the batch statistics recorded in `trace` into the running
    /// statistics (no-op for traces computed with running statistics).
    pub fn update_running_stats(&mut self, trace: &Trace) {
        let p = &mut self.params;
        for (side_params, side) in [(&mut p.embedder_src, &trace.src), (&mut p.embedder_tgt, &trace.tgt)] {
            for (layer, cache) in side_params.layers.iter_mut().zip(&side.embedder) {
                layer.update_running(cache, BN_MOMENTUM);
            }
        }
        p.encoder_src.update_running(&trace.src.encoder, BN_MOMENTUM);
        p.encoder_tgt.update_running(&trace.tgt.encoder, BN_MOMENTUM);
        p.block_down.update_running(&trace.block_down, BN_MOMENTUM);
        p.block_up.update_running(&trace.block_up, BN_MOMENTUM);
        p.head_act.norm.update_running(&trace.head_act.norm, BN_MOMENTUM);
    }
}

fn attention_params(p: &ModelParams) -> Result<(&AttentionParams, &AttentionParams)> {
    match (&p.attention_src, &p.attention_tgt) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::Config("ResAttArg parameters lack attention tensors".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_divides_by_full_window() {
        let x = Array3::from_shape_fn((1, 12, 1), |(_, t, _)| t as f64 + 1.0);
        let p = pool_time(&x, 10);
        assert_eq!(p.dim(), (1, 2, 1));
        assert!((p[[0, 0, 0]] - 5.5).abs() < 1e-12);
        assert!((p[[0, 1, 0]] - 2.3).abs() < 1e-12);
        let back = unpool_time(&Array3::ones((1, 2, 1)), 10, 12);
        assert!(back.iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }
}
