//! Corpus readers for the supported on-disk layouts and split assignment.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use argmine::corpus::{parse_cdcp, parse_standoff, preprocess_drinventor, read_corpus, synth_corpus, SynthConfig};
use argmine::{CorpusSchema, Document, SplitTag};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use walkdir::WalkDir;

use crate::config::{CorpusConfig, CorpusFormat, SplitConfig};

/// Split named by a directory on the way from `root` to `file`.
fn split_from_path(root: &Path, file: &Path) -> SplitTag {
    let rel = file.strip_prefix(root).unwrap_or(file);
    for part in rel.parent().into_iter().flat_map(|p| p.components()) {
        match part.as_os_str().to_string_lossy().to_ascii_lowercase().as_str() {
            "train" | "training" => return SplitTag::Train,
            "valid" | "validation" | "dev" => return SplitTag::Valid,
            "test" => return SplitTag::Test,
            _ => {}
        }
    }
    SplitTag::Unassigned
}

/// Annotation files under `root` whose name ends in `suffix`, in path order.
fn annotation_files(root: &Path, suffix: &str) -> anyhow::Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy();
        let Some(stem) = name.strip_suffix(suffix) else { continue };
        if !entry.file_type().is_file() {
            continue;
        }
        let text = entry.path().with_file_name(format!("{stem}.txt"));
        if !text.is_file() {
            bail!("{} has no matching {}", entry.path().display(), text.display());
        }
        out.push((stem.to_string(), entry.path().to_path_buf(), text));
    }
    if out.is_empty() {
        bail!("no *{suffix} files under {}", root.display());
    }
    Ok(out)
}

fn read_pairs(
    root: &Path,
    suffix: &str,
    schema: &CorpusSchema,
    parse: impl Fn(&str, &str, &str, &CorpusSchema) -> argmine::Result<Document>,
) -> anyhow::Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (id, ann, text) in annotation_files(root, suffix)? {
        let t = std::fs::read_to_string(&text).with_context(|| text.display().to_string())?;
        let a = std::fs::read_to_string(&ann).with_context(|| ann.display().to_string())?;
        let mut doc = parse(&id, &t, &a, schema).with_context(|| ann.display().to_string())?;
        doc.split_tag = split_from_path(root, &ann);
        docs.push(doc);
    }
    Ok(docs)
}

/// Reads the corpus described by `cfg`.
pub fn load_corpus(cfg: &CorpusConfig, schema: &CorpusSchema) -> anyhow::Result<Vec<Document>> {
    let path = || cfg.path.as_deref().context("corpus.path is not set");
    let mut docs = match cfg.format {
        CorpusFormat::Standoff => read_pairs(path()?, ".ann", schema, parse_standoff)?,
        CorpusFormat::Cdcp => read_pairs(path()?, ".ann.json", schema, parse_cdcp)?,
        CorpusFormat::Normalized => read_corpus(path()?, Some(schema))?.documents,
        CorpusFormat::Synthetic => {
            let s = cfg.synthetic.as_ref().context("corpus.synthetic is not set")?;
            synth_corpus(s.seed, s.n_docs, schema, &SynthConfig::default())
        }
    };
    if cfg.split_components {
        docs = docs.iter().map(preprocess_drinventor).collect();
    }
    if !cfg.corpus_id.is_empty() {
        for d in &mut docs {
            d.corpus_id.clone_from(&cfg.corpus_id);
        }
    }
    let mut ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("duplicate document id {:?}", w[0]);
    }
    Ok(docs)
}

fn share(n: usize, fraction: f64) -> usize {
    if fraction <= 0.0 || n == 0 {
        return 0;
    }
    ((n as f64 * fraction).round() as usize).clamp(1, n)
}

/// Gives every unassigned document a split. Unassigned documents are
/// shuffled with `cfg.seed` and cut into test, valid and train shares; if
/// the corpus then has no validation document, one share of the training
/// documents is moved to validation the same way.
pub fn assign_splits(docs: &mut [Document], cfg: &SplitConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut free: Vec<usize> = (0..docs.len()).filter(|&i| docs[i].split_tag.is_unassigned()).collect();
    free.shuffle(&mut rng);
    let n = free.len();
    let n_test = share(n, cfg.test_fraction).min(n.saturating_sub(1));
    let n_valid = share(n, cfg.valid_fraction).min(n.saturating_sub(n_test + 1));
    for (k, &i) in free.iter().enumerate() {
        docs[i].split_tag = if k < n_test {
            SplitTag::Test
        } else if k < n_test + n_valid {
            SplitTag::Valid
        } else {
            SplitTag::Train
        };
    }
    if docs.iter().any(|d| d.split_tag == SplitTag::Valid) {
        return;
    }
    let mut train: Vec<usize> = (0..docs.len()).filter(|&i| docs[i].split_tag == SplitTag::Train).collect();
    train.shuffle(&mut rng);
    let n_valid = share(train.len(), cfg.valid_fraction).min(train.len().saturating_sub(1));
    for &i in &train[..n_valid] {
        docs[i].split_tag = SplitTag::Valid;
    }
}
