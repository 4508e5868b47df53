use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSchema;
use crate::pairing::DISTANCE_BITS;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Time pooling, final biLSTM states.
    ResArg,
    /// Full biLSTM sequences with co-attention.
    ResAttArg,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resarg" => Ok(Variant::ResArg),
            "resattarg" => Ok(Variant::ResAttArg),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::ResArg => "resarg",
            Variant::ResAttArg => "resattarg",
        })
    }
}

/// Structural hyperparameters of both architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub variant: Variant,
    /// Padded sequence length (longest component in the corpus).
    pub max_len: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub pool_factor: usize,
    pub final_encoding: usize,
    pub bottleneck: usize,
    pub dropout: f64,
    pub n_component_classes: usize,
    pub n_relation_classes: usize,
    pub distance_bits: usize,
}

impl ArchConfig {
    pub fn new(variant: Variant, max_len: usize, n_component_classes: usize, n_relation_classes: usize) -> Self {
        ArchConfig {
            variant,
            max_len,
            embed_dim: 300,
            hidden: 50,
            pool_factor: 10,
            final_encoding: 20,
            bottleneck: 5,
            dropout: 0.1,
            n_component_classes,
            n_relation_classes,
            distance_bits: DISTANCE_BITS,
        }
    }

    pub fn for_schema(variant: Variant, max_len: usize, schema: &CorpusSchema) -> Self {
        Self::new(variant, max_len, schema.n_components(), schema.n_relations())
    }

    /// Number of forward relation types implied by the extended domain.
    pub fn n_forward(&self) -> usize {
        (self.n_relation_classes - 1) / 2
    }

    pub fn lstm_hidden(&self) -> usize {
        self.hidden / 2
    }

    pub fn final_input(&self) -> usize {
        2 * self.hidden + self.distance_bits
    }

    pub fn check(&self) -> Result<()> {
        let dims = [
            self.max_len,
            self.embed_dim,
            self.hidden,
            self.pool_factor,
            self.final_encoding,
            self.bottleneck,
            self.n_component_classes,
            self.distance_bits,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("architecture dimensions must be positive: {self:?}")));
        }
        if self.hidden % 2 != 0 {
            return Err(Error::Config("hidden size must be even (two LSTM directions)".into()));
        }
        if self.n_relation_classes < 3 || self.n_relation_classes % 2 == 0 {
            return Err(Error::Config(format!(
                "relation classes must be 2·forward+1, got {}",
                self.n_relation_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
