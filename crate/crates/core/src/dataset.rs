//! Pair instances joined with their component tokens and encoded for the
//! network.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSchema, Document, RelationLabel};
use crate::embeddings::{encode, EmbeddingTable, TokenSequence};
use crate::neural::PairBatch;
use crate::pairing::{encode_distance, DistanceCode, PairInstance, DISTANCE_BITS};
use crate::{Error, Result};

/// Identity of an ordered pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub doc_id: String,
    pub source_id: String,
    pub target_id: String,
}

impl PairKey {
    pub fn of(p: &PairInstance) -> Self {
        PairKey {
            doc_id: p.doc_id.clone(),
            source_id: p.source_id.clone(),
            target_id: p.target_id.clone(),
        }
    }
}

/// Gold label indices of one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairGold {
    pub source: usize,
    pub target: usize,
    /// Index in the extended relation domain.
    pub relation: usize,
    pub link: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    pub key: PairKey,
    pub source: TokenSequence,
    pub target: TokenSequence,
    pub distance: DistanceCode,
    pub gold: PairGold,
    pub is_self_pair: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub pairs: Vec<EncodedPair>,
    pub max_len: usize,
}

/// Longest component, in tokens, over `docs`.
pub fn max_component_len(docs: &[Document]) -> usize {
    docs.iter()
        .flat_map(|d| d.components.iter().map(|c| c.tokens.len()))
        .max()
        .unwrap_or(1)
}

/// Gold indices of a pair instance.
pub fn gold_labels(p: &PairInstance, schema: &CorpusSchema) -> Result<PairGold> {
    let comp = |l: &str| {
        schema
            .component_index(l)
            .ok_or_else(|| Error::Data(format!("unknown component class {l:?}")))
    };
    let relation = schema
        .parse_relation(&p.relation)
        .ok_or_else(|| Error::Data(format!("unknown relation {:?}", p.relation)))?;
    Ok(PairGold {
        source: comp(&p.source_label)?,
        target: comp(&p.target_label)?,
        relation: relation.index(schema.n_forward()),
        link: p.link,
    })
}

impl PairDataset {
    /// Joins `pairs` with the tokens of `docs` and encodes both sides to
    /// `max_len`.
    pub fn build(
        pairs: &[PairInstance],
        docs: &[Document],
        table: &EmbeddingTable,
        schema: &CorpusSchema,
        max_len: usize,
    ) -> Result<Self> {
        let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
        let tokens = |doc: &str, comp: &str| -> Result<&[String]> {
            by_id
                .get(doc)
                .and_then(|d| d.component(comp))
                .map(|c| c.tokens.as_slice())
                .ok_or_else(|| Error::Data(format!("pair refers to missing component {doc}/{comp}")))
        };
        let mut out = Vec::with_capacity(pairs.len());
        for p in pairs {
            out.push(EncodedPair {
                key: PairKey::of(p),
                source: encode(tokens(&p.doc_id, &p.source_id)?, table, max_len)?,
                target: encode(tokens(&p.doc_id, &p.target_id)?, table, max_len)?,
                distance: encode_distance(p.distance),
                gold: gold_labels(p, schema)?,
                is_self_pair: p.is_self_pair,
            });
        }
        Ok(PairDataset { pairs: out, max_len })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of gold links among non-self pairs.
    pub fn positive_links(&self) -> usize {
        self.pairs.iter().filter(|p| p.gold.link && !p.is_self_pair).count()
    }

    /// A network batch for the pairs at `indices`, trimmed to the longest
    /// true length it contains.
    pub fn batch(&self, indices: &[usize]) -> PairBatch {
        let t = indices
            .iter()
            .map(|&i| self.pairs[i].source.true_length.max(self.pairs[i].target.true_length))
            .max()
            .unwrap_or(1);
        let trim = |s: &TokenSequence| TokenSequence {
            ids: s.ids[..t].to_vec(),
            true_length: s.true_length,
        };
        let mut distance = Array2::zeros((indices.len(), DISTANCE_BITS));
        for (row, &i) in indices.iter().enumerate() {
            for (col, v) in self.pairs[i].distance.as_f64().into_iter().enumerate() {
                distance[[row, col]] = v;
            }
        }
        PairBatch {
            source: indices.iter().map(|&i| trim(&self.pairs[i].source)).collect(),
            target: indices.iter().map(|&i| trim(&self.pairs[i].target)).collect(),
            distance,
        }
    }

    pub fn golds(&self, indices: &[usize]) -> Vec<PairGold> {
        indices.iter().map(|&i| self.pairs[i].gold).collect()
    }
}

/// Gold relation as a label.
pub fn relation_label(gold: &PairGold, n_forward: usize) -> RelationLabel {
    RelationLabel::from_index(gold.relation, n_forward).expect("gold relation within domain")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, SynthConfig};
    use crate::embeddings::{build_table, PretrainedVectors};
    use crate::pairing::{enumerate_pairs, PairPolicy};

    #[test]
    fn batch_trims_padding_and_keeps_labels() {
        let schema = CorpusSchema::new(&["a", "b"], &["r"]).unwrap();
        let docs = synth_corpus(1, 2, &schema, &SynthConfig::default());
        let table = build_table(
            docs.iter().flat_map(|d| d.components.iter().flat_map(|c| c.tokens.iter().map(|s| s.as_str()))),
            &PretrainedVectors::empty(4),
            0,
        );
        let pairs: Vec<_> = docs
            .iter()
            .flat_map(|d| enumerate_pairs(d, &PairPolicy::unrestricted(), &schema))
            .collect();
        let ds = PairDataset::build(&pairs, &docs, &table, &schema, 20).unwrap();
        assert_eq!(ds.len(), pairs.len());
        let b = ds.batch(&[0, 1]);
        let t = b.source[0].len();
        assert!(t <= 20);
        assert!(b.source.iter().chain(&b.target).all(|s| s.true_length <= t));
        assert_eq!(ds.golds(&[0])[0].link, pairs[0].link);
    }
}
