use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::attention::AttentionParams;
use super::config::{ArchConfig, Variant};
use super::layers::{Dense, PreAct, PreActDense};
use super::lstm::BiLstm;
use super::tensors::{join, TensorKind, TensorMut, TensorRef, Tensors};
use crate::embeddings::EmbeddingTable;

/// Residual stack of pre-activated time-distributed dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepEmbedder {
    pub layers: Vec<PreActDense>,
}

impl DeepEmbedder {
    /// `embed → hidden → hidden → hidden → embed`.
    pub fn new(rng: &mut ChaCha8Rng, embed: usize, hidden: usize) -> Self {
        let sizes = [embed, hidden, hidden, hidden, embed];
        DeepEmbedder {
            layers: sizes.windows(2).map(|w| PreActDense::new(rng, w[0], w[1])).collect(),
        }
    }
}

impl Tensors for DeepEmbedder {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&join(prefix, &format!("layer{i}")), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_mut(&join(prefix, &format!("layer{i}")), out);
        }
    }
}

/// Every learnable tensor plus batch-norm running statistics. The frozen
/// embedding matrix lives in [`EmbeddingTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedder_src: DeepEmbedder,
    pub embedder_tgt: DeepEmbedder,
    pub encoder_src: PreActDense,
    pub encoder_tgt: PreActDense,
    pub lstm: BiLstm,
    /// Attention producing the source context (ResAttArg only).
    pub attention_src: Option<AttentionParams>,
    /// Attention producing the target context (ResAttArg only).
    pub attention_tgt: Option<AttentionParams>,
    pub final_encoder: Dense,
    pub block_down: PreActDense,
    pub block_up: PreActDense,
    pub head_act: PreAct,
    pub head_source: Dense,
    pub head_target: Dense,
    pub head_relation: Dense,
}

/// He-normal dense and LSTM weights, zero biases (forget gate 1), unit
/// batch-norm scale. Deterministic per seed.
pub fn init_params(cfg: &ArchConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let (e, h) = (cfg.embed_dim, cfg.hidden);
    let attention = cfg.variant == Variant::ResAttArg;
    ModelParams {
        embedder_src: DeepEmbedder::new(r, e, h),
        embedder_tgt: DeepEmbedder::new(r, e, h),
        encoder_src: PreActDense::new(r, e, h),
        encoder_tgt: PreActDense::new(r, e, h),
        lstm: BiLstm::new(r, h, cfg.lstm_hidden()),
        attention_src: attention.then(|| AttentionParams::new(r, h, h)),
        attention_tgt: attention.then(|| AttentionParams::new(r, h, h)),
        final_encoder: Dense::new(r, cfg.final_input(), cfg.final_encoding),
        block_down: PreActDense::new(r, cfg.final_encoding, cfg.bottleneck),
        block_up: PreActDense::new(r, cfg.bottleneck, cfg.final_encoding),
        head_act: PreAct::new(cfg.final_encoding),
        head_source: Dense::new(r, cfg.final_encoding, cfg.n_component_classes),
        head_target: Dense::new(r, cfg.final_encoding, cfg.n_component_classes),
        head_relation: Dense::new(r, cfg.final_encoding, cfg.n_relation_classes),
    }
}

impl Tensors for ModelParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        self.embedder_src.collect(&join(prefix, "embedder_src"), out);
        self.embedder_tgt.collect(&join(prefix, "embedder_tgt"), out);
        self.encoder_src.collect(&join(prefix, "encoder_src"), out);
        self.encoder_tgt.collect(&join(prefix, "encoder_tgt"), out);
        self.lstm.collect(&join(prefix, "lstm"), out);
        self.attention_src.collect(&join(prefix, "attention_src"), out);
        self.attention_tgt.collect(&join(prefix, "attention_tgt"), out);
        self.final_encoder.collect(&join(prefix, "final_encoder"), out);
        self.block_down.collect(&join(prefix, "block_down"), out);
        self.block_up.collect(&join(prefix, "block_up"), out);
        self.head_act.collect(&join(prefix, "head_act"), out);
        self.head_source.collect(&join(prefix, "head_source"), out);
        self.head_target.collect(&join(prefix, "head_target"), out);
        self.head_relation.collect(&join(prefix, "head_relation"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        self.embedder_src.collect_mut(&join(prefix, "embedder_src"), out);
        self.embedder_tgt.collect_mut(&join(prefix, "embedder_tgt"), out);
        self.encoder_src.collect_mut(&join(prefix, "encoder_src"), out);
        self.encoder_tgt.collect_mut(&join(prefix, "encoder_tgt"), out);
        self.lstm.collect_mut(&join(prefix, "lstm"), out);
        self.attention_src.collect_mut(&join(prefix, "attention_src"), out);
        self.attention_tgt.collect_mut(&join(prefix, "attention_tgt"), out);
        self.final_encoder.collect_mut(&join(prefix, "final_encoder"), out);
        self.block_down.collect_mut(&join(prefix, "block_down"), out);
        self.block_up.collect_mut(&join(prefix, "block_up"), out);
        self.head_act.collect_mut(&join(prefix, "head_act"), out);
        self.head_source.collect_mut(&join(prefix, "head_source"), out);
        self.head_target.collect_mut(&join(prefix, "head_target"), out);
        self.head_relation.collect_mut(&join(prefix, "head_relation"), out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    /// Trainable plus frozen embedding values.
    pub total: usize,
    pub trainable: usize,
    pub embedding: usize,
    /// Batch-norm running statistics; tracked but not counted as parameters.
    pub running_stats: usize,
}

/// Counts parameters. The embedding contributes `|vocab| × dim`; the
/// all-zero padding row is a constant and is not counted.
pub fn count_params(params: &ModelParams, embeddings: Option<&EmbeddingTable>) -> ParamCount {
    let (mut trainable, mut running_stats) = (0, 0);
    for t in params.tensors() {
        if t.kind.trainable() {
            trainable += t.data.len();
        } else if matches!(t.kind, TensorKind::RunningMean | TensorKind::RunningVar) {
            running_stats += t.data.len();
        }
    }
    let embedding = embeddings.map_or(0, |e| e.vocab_len() * e.dim());
    ParamCount {
        total: trainable + embedding,
        trainable,
        embedding,
        running_stats,
    }
}

impl ModelParams {
    /// Sum of squared regularized weights.
    pub fn l2_norm_sq(&self) -> f64 {
        self.tensors()
            .iter()
            .filter(|t| t.kind.regularized())
            .map(|t| t.data.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Stable content fingerprint (FNV-1a over the little-endian payload).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in self.tensors() {
            for v in t.data {
                for b in v.to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}
