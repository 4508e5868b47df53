//! Frozen word-vector tables and padded token sequences.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 300;
/// Half-width of the uniform range used for out-of-vocabulary rows.
pub const OOV_RANGE: f64 = 0.05;

/// Vectors read from a `token v1 … vD` text file.
#[derive(Debug, Clone, Default)]
pub struct PretrainedVectors {
    pub dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl PretrainedVectors {
    pub fn empty(dim: usize) -> Self {
        PretrainedVectors {
            dim,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn insert(&mut self, token: &str, vector: &[f64]) -> bool {
        assert_eq!(vector.len(), self.dim);
        if self.index.contains_key(token) {
            return false;
        }
        self.index.insert(token.to_string(), self.index.len());
        self.data.extend_from_slice(vector);
        true
    }

    /// Case-sensitive match first, lowercase as fallback.
    fn lookup_folded(&self, token: &str) -> Option<&[f64]> {
        self.get(token).or_else(|| self.get(&token.to_lowercase()))
    }
}

/// Reads a GloVe-style text file whose lines hold a token and `dim` values.
pub fn load_vectors(path: &Path, dim: usize) -> Result<PretrainedVectors> {
    let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut out = PretrainedVectors::empty(dim);
    let mut row = Vec::with_capacity(dim);
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();
        row.clear();
        for field in fields {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad value {field:?}")))?;
            row.push(v);
        }
        if row.len() != dim {
            return Err(Error::parse(
                i + 1,
                format!("expected {} fields, found {}", dim + 1, row.len() + 1),
            ));
        }
        if !out.insert(token, &row) {
            log::warn!("embeddings line {}: duplicate token {token:?}; keeping the first", i + 1);
        }
    }
    Ok(out)
}

/// Frozen embedding matrix. Row 0 is the all-zero padding row; corpus
/// tokens occupy rows `1..=|vocab|` in first-seen order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    tokens: Vec<String>,
    pub matrix: Array2<f64>,
    pub oov_rows: BTreeSet<usize>,
}

impl EmbeddingTable {
    pub const PAD_INDEX: usize = 0;

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn vocab_len(&self) -> usize {
        self.tokens.len()
    }

    /// Tokens in row order, excluding the padding row.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn trainable(&self) -> bool {
        false
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn row(&self, index: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(index)
    }

    /// Rebuilds a table from stored rows (e.g. a checkpoint).
    pub fn from_parts(tokens: Vec<String>, matrix: Array2<f64>, oov_rows: BTreeSet<usize>) -> Result<Self> {
        if matrix.nrows() != tokens.len() + 1 {
            return Err(Error::Config(format!(
                "embedding matrix has {} rows for {} tokens",
                matrix.nrows(),
                tokens.len()
            )));
        }
        if matrix.row(Self::PAD_INDEX).iter().any(|&v| v != 0.0) {
            return Err(Error::Config("embedding padding row is not zero".into()));
        }
        let vocab = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i + 1)).collect();
        Ok(EmbeddingTable {
            vocab,
            tokens,
            matrix,
            oov_rows,
        })
    }
}

/// Builds the frozen table for every token of the corpus.
///
/// Tokens missing from `pretrained` (after the lowercase fallback) get
/// rows drawn uniformly from `[-0.05, 0.05]` with a generator seeded by
/// `seed`, in vocabulary order.
pub fn build_table<'a, I>(corpus_tokens: I, pretrained: &PretrainedVectors, seed: u64) -> EmbeddingTable
where
    I: IntoIterator<Item = &'a str>,
{
    let mut vocab = HashMap::new();
    let mut tokens = Vec::new();
    for t in corpus_tokens {
        if !vocab.contains_key(t) {
            tokens.push(t.to_string());
            vocab.insert(t.to_string(), tokens.len());
        }
    }
    let dim = pretrained.dim;
    let mut matrix = Array2::zeros((tokens.len() + 1, dim));
    let mut oov_rows = BTreeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (i, t) in tokens.iter().enumerate() {
        let row = i + 1;
        match pretrained.lookup_folded(t) {
            Some(v) => matrix.row_mut(row).iter_mut().zip(v).for_each(|(m, &x)| *m = x),
            None => {
                matrix
                    .row_mut(row)
                    .iter_mut()
                    .for_each(|m| *m = rng.random_range(-OOV_RANGE..=OOV_RANGE));
                oov_rows.insert(row);
            }
        }
    }
    EmbeddingTable {
        vocab,
        tokens,
        matrix,
        oov_rows,
    }
}

/// Token ids padded to a fixed length; positions past `true_length` are padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub true_length: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn mask(&self) -> Vec<u8> {
        (0..self.ids.len()).map(|i| u8::from(i < self.true_length)).collect()
    }

    /// Same sequence with `extra` more padding positions.
    pub fn padded(&self, extra: usize) -> TokenSequence {
        let mut ids = self.ids.clone();
        ids.extend(std::iter::repeat_n(EmbeddingTable::PAD_INDEX, extra));
        TokenSequence {
            ids,
            true_length: self.true_length,
        }
    }
}

/// Encodes `tokens` to length `max_len`.
///
/// Over-length input is truncated from the tail with a warning. Tokens the
/// table has never seen map to the zero row but stay unmasked.
pub fn encode(tokens: &[String], table: &EmbeddingTable, max_len: usize) -> Result<TokenSequence> {
    if tokens.is_empty() {
        return Err(Error::Data("cannot encode an empty component".into()));
    }
    if tokens.len() > max_len {
        log::warn!("component of {} tokens truncated to {max_len}", tokens.len());
    }
    let true_length = tokens.len().min(max_len);
    let mut ids = vec![EmbeddingTable::PAD_INDEX; max_len];
    let mut unknown = 0;
    for (slot, t) in ids.iter_mut().zip(tokens) {
        *slot = match table.index(t).or_else(|| table.index(&t.to_lowercase())) {
            Some(i) => i,
            None => {
                unknown += 1;
                EmbeddingTable::PAD_INDEX
            }
        };
    }
    if unknown > 0 {
        log::debug!("{unknown} tokens missing from the embedding table");
    }
    Ok(TokenSequence { ids, true_length })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn load_two_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let v: Vec<String> = (0..300).map(|i| format!("{}", i as f64 * 0.01)).collect();
        writeln!(f, "a {}", v.join(" ")).unwrap();
        writeln!(f, "b {}", v.join(" ")).unwrap();
        let p = load_vectors(f.path(), 300).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.get("b").unwrap()[3], 0.03);
    }

    #[test]
    fn wrong_field_count_names_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a 1 2 3").unwrap();
        writeln!(f, "b 1 2 3 4").unwrap();
        match load_vectors(f.path(), 3) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_keeps_first() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a 1 2").unwrap();
        writeln!(f, "a 3 4").unwrap();
        let p = load_vectors(f.path(), 2).unwrap();
        assert_eq!(p.get("a").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn table_rows_and_oov() {
        let mut pre = PretrainedVectors::empty(2);
        pre.insert("the", &[1.0, 2.0]);
        let corpus = ["The", "cat", "the", "cat"];
        let t = build_table(corpus, &pre, 5);
        assert_eq!(t.matrix.nrows(), 4);
        assert!(t.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(t.row(t.index("The").unwrap()).to_vec(), vec![1.0, 2.0]);
        assert_eq!(t.oov_rows, BTreeSet::from([t.index("cat").unwrap()]));
        assert!(t.row(2).iter().all(|v| v.abs() <= OOV_RANGE));
        assert_eq!(build_table(corpus, &pre, 5), t);
        assert_ne!(build_table(corpus, &pre, 6), t);
    }

    #[test]
    fn all_pretrained_has_no_oov() {
        let mut pre = PretrainedVectors::empty(1);
        pre.insert("x", &[1.0]);
        pre.insert("y", &[2.0]);
        assert!(build_table(["x", "y"], &pre, 0).oov_rows.is_empty());
    }

    #[test]
    fn encode_pads_and_masks() {
        let t = build_table(["a", "b"], &PretrainedVectors::empty(3), 0);
        let s = encode(&toks(&["a", "b"]), &t, 4).unwrap();
        assert_eq!(s.mask(), vec![1, 1, 0, 0]);
        assert_eq!(s.ids, vec![1, 2, 0, 0]);
        assert!(encode(&[], &t, 4).is_err());
        let cut = encode(&toks(&["a", "b", "a"]), &t, 2).unwrap();
        assert_eq!(cut.true_length, 2);
        assert_eq!(cut.mask(), vec![1, 1]);
    }

    #[test]
    fn full_length_sequence_is_fully_unmasked() {
        let words: Vec<String> = (0..153).map(|i| format!("w{i}")).collect();
        let t = build_table(words.iter().map(String::as_str), &PretrainedVectors::empty(2), 0);
        let s = encode(&words, &t, 153).unwrap();
        assert!(s.mask().iter().all(|&m| m == 1));
    }
}
