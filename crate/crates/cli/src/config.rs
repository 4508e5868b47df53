//! Run configuration.
//!
//! A run is described by one JSON document. Every section except
//! `schema` has defaults; a minimal synthetic run is
//!
//! ```json
//! {
//!   "corpus": {"format": "synthetic", "synthetic": {"seed": 7, "n_docs": 16}},
//!   "schema": {"component_classes": ["claim", "premise"], "forward_relations": ["supports"]}
//! }
//! ```
//!
//! | key | meaning |
//! |-----|---------|
//! | `corpus.format` | `standoff`, `cdcp`, `normalized` or `synthetic` |
//! | `corpus.path` | directory (standoff, cdcp) or file (normalized) |
//! | `corpus.corpus_id` | name stored on every document |
//! | `corpus.split_components` | split discontinuous components before pairing |
//! | `corpus.synthetic` | `{seed, n_docs}` for the generator |
//! | `schema` | `{component_classes, forward_relations}` |
//! | `splits` | `{valid_fraction, test_fraction, seed}` for documents without a split |
//! | `pairs` | `{max_abs_distance, same_paragraph_only, same_section_only, include_self_pairs}` |
//! | `embeddings` | `{path, dim, seed}`; no path means every row is random |
//! | `arch` | `{variant, hidden, pool_factor, final_encoding, bottleneck, dropout}` |
//! | `train` | `{lr0, beta1, beta2, adam_epsilon, loss_weights, decay, batch_size, patience, max_epochs}` |
//! | `seeds` | ensemble member seeds |
//! | `link_rule` | `relation_argmax` or `threshold` |
//! | `out_dir` | artifact root |
//!
//! `CORPUS_DIR`, `EMBEDDINGS_PATH` and `OUT_DIR` override the three paths.
//! The config hash covers everything except those paths.

use std::path::{Path, PathBuf};

use argmine::ensemble::LinkRule;
use argmine::neural::{ArchConfig, Variant};
use argmine::{CorpusSchema, PairPolicy, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Standoff,
    Cdcp,
    Normalized,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_docs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub format: CorpusFormat,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub corpus_id: String,
    #[serde(default)]
    pub split_components: bool,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            valid_fraction: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub path: Option<PathBuf>,
    pub dim: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            path: None,
            dim: argmine::embeddings::DEFAULT_DIM,
            seed: 0,
        }
    }
}

/// Architecture settings; sequence length, class counts and embedding
/// size come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSettings {
    pub variant: Variant,
    pub hidden: usize,
    pub pool_factor: usize,
    pub final_encoding: usize,
    pub bottleneck: usize,
    pub dropout: f64,
}

impl Default for ArchSettings {
    fn default() -> Self {
        let a = ArchConfig::new(Variant::ResAttArg, 1, 1, 3);
        ArchSettings {
            variant: a.variant,
            hidden: a.hidden,
            pool_factor: a.pool_factor,
            final_encoding: a.final_encoding,
            bottleneck: a.bottleneck,
            dropout: a.dropout,
        }
    }
}

impl ArchSettings {
    pub fn resolve(&self, max_len: usize, embed_dim: usize, schema: &CorpusSchema) -> ArchConfig {
        let mut a = ArchConfig::for_schema(self.variant, max_len, schema);
        a.embed_dim = embed_dim;
        a.hidden = self.hidden;
        a.pool_factor = self.pool_factor;
        a.final_encoding = self.final_encoding;
        a.bottleneck = self.bottleneck;
        a.dropout = self.dropout;
        a
    }
}

fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub schema: CorpusSchema,
    #[serde(default)]
    pub splits: SplitConfig,
    #[serde(default)]
    pub pairs: PairPolicy,
    #[serde(default)]
    pub embeddings: EmbeddingConfig,
    #[serde(default)]
    pub arch: ArchSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub link_rule: LinkRule,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Parses a config file and applies the path overrides from the environment.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&raw).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        cfg.apply_env(|k| std::env::var_os(k));
        Ok(cfg)
    }

    /// A config with defaults around `schema`, for commands run without a file.
    pub fn with_schema(schema: CorpusSchema) -> Self {
        RunConfig {
            corpus: CorpusConfig {
                format: CorpusFormat::Normalized,
                path: None,
                corpus_id: String::new(),
                split_components: false,
                synthetic: None,
            },
            schema,
            splits: SplitConfig::default(),
            pairs: PairPolicy::default(),
            embeddings: EmbeddingConfig::default(),
            arch: ArchSettings::default(),
            train: TrainConfig::default(),
            seeds: default_seeds(),
            link_rule: LinkRule::default(),
            out_dir: default_out(),
        }
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<std::ffi::OsString>) {
        if let Some(v) = var("CORPUS_DIR") {
            self.corpus.path = Some(v.into());
        }
        if let Some(v) = var("EMBEDDINGS_PATH") {
            self.embeddings.path = Some(v.into());
        }
        if let Some(v) = var("OUT_DIR") {
            self.out_dir = v.into();
        }
    }

    /// Static checks plus existence of every referenced input. Errors are
    /// prefixed with the stage that owns the offending key.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        self.schema.check().map_err(|e| ("config", e.to_string()))?;
        self.pairs.check().map_err(|e| ("config", e.to_string()))?;
        self.train.check().map_err(|e| ("config", e.to_string()))?;
        let s = &self.splits;
        let fraction_ok = |f: f64| (0.0..1.0).contains(&f);
        if !fraction_ok(s.valid_fraction) || !fraction_ok(s.test_fraction) || s.valid_fraction + s.test_fraction >= 1.0 {
            return Err(("config", format!("split fractions {} + {} must stay below 1", s.valid_fraction, s.test_fraction)));
        }
        if self.seeds.is_empty() {
            return Err(("config", "seed list is empty".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(("config", "seeds must be distinct".into()));
        }
        if self.embeddings.dim == 0 {
            return Err(("config", "embedding dimension must be positive".into()));
        }
        self.arch
            .resolve(1, self.embeddings.dim, &self.schema)
            .check()
            .map_err(|e| ("config", e.to_string()))?;
        match (self.corpus.format, &self.corpus.path, &self.corpus.synthetic) {
            (CorpusFormat::Synthetic, _, None) => {
                return Err(("config", "synthetic corpus needs corpus.synthetic = {seed, n_docs}".into()))
            }
            (CorpusFormat::Synthetic, _, Some(_)) => {}
            (_, None, _) => return Err(("ingest", "corpus.path is not set (or CORPUS_DIR)".into())),
            (_, Some(p), _) if !p.exists() => {
                return Err(("ingest", format!("corpus path {} does not exist", p.display())))
            }
            _ => {}
        }
        if let Some(p) = &self.embeddings.path {
            if !p.is_file() {
                return Err(("embeddings", format!("embeddings file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form with all paths removed.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v["corpus"].as_object_mut().map(|o| o.remove("path"));
        v["embeddings"].as_object_mut().map(|o| o.remove("path"));
        v.as_object_mut().map(|o| o.remove("out_dir"));
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Parses `1..10` (inclusive), `3` or `1,4,9`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range {s:?}"))?;
        let b: u64 = b.trim_start_matches('=').trim().parse().map_err(|_| format!("bad seed range {s:?}"))?;
        if b < a {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| format!("bad seed {x:?}")))
        .collect()
}
