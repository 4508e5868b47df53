//! Ordered component pairs, their gold labels and the distance feature.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{ComponentRef, CorpusSchema, Document, RelationLabel};
use crate::{Error, Result};

/// Filters applied when enumerating pairs of one document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairPolicy {
    pub max_abs_distance: Option<u32>,
    pub same_paragraph_only: bool,
    pub same_section_only: bool,
    pub include_self_pairs: bool,
}

impl PairPolicy {
    pub fn unrestricted() -> Self {
        PairPolicy::default()
    }

    /// Same section, |distance| ≤ 10.
    pub fn drinventor() -> Self {
        PairPolicy {
            max_abs_distance: Some(10),
            same_section_only: true,
            ..PairPolicy::default()
        }
    }

    /// Same paragraph, plus self pairs for single-component paragraphs.
    pub fn ukp() -> Self {
        PairPolicy {
            same_paragraph_only: true,
            include_self_pairs: true,
            ..PairPolicy::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.max_abs_distance == Some(0) {
            return Err(Error::Config("max_abs_distance must be at least 1".into()));
        }
        Ok(())
    }
}

/// One ordered pair with its four gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairInstance {
    pub doc_id: String,
    pub source_id: String,
    pub target_id: String,
    pub distance: i64,
    #[serde(rename = "P_a")]
    pub source_label: String,
    #[serde(rename = "P_b")]
    pub target_label: String,
    #[serde(rename = "L")]
    pub link: bool,
    #[serde(rename = "R")]
    pub relation: String,
    pub is_self_pair: bool,
}

/// 10-bit argumentative-distance code.
///
/// Negative distances fill the first five positions right-aligned,
/// positive ones the last five left-aligned; magnitudes saturate at 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DistanceCode {
    pub bits: [u8; 10],
}

pub const DISTANCE_BITS: usize = 10;
const DISTANCE_CAP: i64 = 5;

impl DistanceCode {
    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn as_f64(&self) -> [f64; DISTANCE_BITS] {
        self.bits.map(f64::from)
    }
}

impl fmt::Display for DistanceCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.bits.iter().enumerate() {
            if i == 5 {
                f.write_str(" ")?;
            }
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

pub fn encode_distance(d: i64) -> DistanceCode {
    let n = d.abs().min(DISTANCE_CAP) as usize;
    let mut bits = [0u8; DISTANCE_BITS];
    if d < 0 {
        bits[5 - n..5].fill(1);
    } else {
        bits[5..5 + n].fill(1);
    }
    DistanceCode { bits }
}

/// Signed component distance, positive when the source precedes the target.
pub fn argumentative_distance(source: ComponentRef<'_>, target: ComponentRef<'_>) -> Result<i64> {
    if source.doc_id != target.doc_id {
        return Err(Error::Usage(format!(
            "components {} and {} belong to different documents ({} vs {})",
            source.component.comp_id, target.component.comp_id, source.doc_id, target.doc_id
        )));
    }
    Ok(target.component.order_index as i64 - source.component.order_index as i64)
}

/// Test-time relation label: inverse types become `None`.
pub fn collapse_for_test(label: RelationLabel) -> RelationLabel {
    label.collapse()
}

/// Enumerates the ordered pairs of one document that pass `policy`.
pub fn enumerate_pairs(doc: &Document, policy: &PairPolicy, schema: &CorpusSchema) -> Vec<PairInstance> {
    let mut annotated: HashMap<(&str, &str), &str> = HashMap::new();
    for l in &doc.links {
        let key = (l.source_id.as_str(), l.target_id.as_str());
        if let Some(prev) = annotated.insert(key, l.relation.as_str()) {
            log::warn!(
                "{}: duplicate link {}->{} ({prev} and {}); keeping the last",
                doc.doc_id,
                l.source_id,
                l.target_id,
                l.relation
            );
        }
    }
    for &(s, t) in annotated.keys() {
        if annotated.contains_key(&(t, s)) && s < t {
            log::warn!("{}: links in both directions between {s} and {t}; forward labels win", doc.doc_id);
        }
    }

    let mut out = Vec::new();
    for a in &doc.components {
        for b in &doc.components {
            if a.comp_id == b.comp_id {
                continue;
            }
            let distance = b.order_index as i64 - a.order_index as i64;
            if policy.max_abs_distance.is_some_and(|m| distance.unsigned_abs() > m as u64)
                || (policy.same_paragraph_only && a.paragraph_id != b.paragraph_id)
                || (policy.same_section_only && a.section_id != b.section_id)
            {
                continue;
            }
            let relation = if let Some(r) = annotated.get(&(a.comp_id.as_str(), b.comp_id.as_str())) {
                schema.forward_index(r).map(RelationLabel::Forward)
            } else if let Some(r) = annotated.get(&(b.comp_id.as_str(), a.comp_id.as_str())) {
                schema.forward_index(r).map(RelationLabel::Inverse)
            } else {
                Some(RelationLabel::None)
            }
            .unwrap_or(RelationLabel::None);
            out.push(PairInstance {
                doc_id: doc.doc_id.clone(),
                source_id: a.comp_id.clone(),
                target_id: b.comp_id.clone(),
                distance,
                source_label: a.comp_type.clone(),
                target_label: b.comp_type.clone(),
                link: relation.is_forward(),
                relation: schema.relation_name(relation),
                is_self_pair: false,
            });
        }
        if policy.include_self_pairs
            && !doc
                .components
                .iter()
                .any(|o| o.comp_id != a.comp_id && o.paragraph_id == a.paragraph_id)
        {
            out.push(PairInstance {
                doc_id: doc.doc_id.clone(),
                source_id: a.comp_id.clone(),
                target_id: a.comp_id.clone(),
                distance: 0,
                source_label: a.comp_type.clone(),
                target_label: a.comp_type.clone(),
                link: false,
                relation: schema.relation_name(RelationLabel::None),
                is_self_pair: true,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ComponentSpec, LinkAnnotation, Span};

    fn schema() -> CorpusSchema {
        CorpusSchema::new(&["claim", "premise"], &["reason", "evidence"]).unwrap()
    }

    fn doc(n: usize, links: &[(usize, usize, &str)], paragraphs: &[usize]) -> Document {
        let text: String = (0..n).map(|i| format!("C{i:02}. ")).collect();
        let specs = (0..n)
            .map(|i| ComponentSpec {
                comp_id: format!("c{i}"),
                fragments: vec![Span::new(5 * i, 5 * i + 4)],
                comp_type: if i % 2 == 0 { "claim" } else { "premise" }.into(),
                layout: Some((paragraphs.get(i).copied().unwrap_or(0), 0)),
            })
            .collect();
        let links = links
            .iter()
            .map(|&(s, t, r)| LinkAnnotation {
                source_id: format!("c{s}"),
                target_id: format!("c{t}"),
                relation: r.into(),
            })
            .collect();
        Document::build("d", text, specs, links).unwrap()
    }

    #[test]
    fn paper_distance_codes() {
        assert_eq!(encode_distance(-3).to_string(), "00111 00000");
        assert_eq!(encode_distance(2).to_string(), "00000 11000");
        assert_eq!(encode_distance(0).to_string(), "00000 00000");
        assert_eq!(encode_distance(-9).to_string(), "11111 00000");
        assert_eq!(encode_distance(7).to_string(), "00000 11111");
    }

    #[test]
    fn distance_sign_and_magnitude() {
        let d = doc(6, &[], &[]);
        let c = |i: usize| d.component_ref(&format!("c{i}")).unwrap();
        assert_eq!(argumentative_distance(c(2), c(5)).unwrap(), 3);
        assert_eq!(argumentative_distance(c(5), c(2)).unwrap(), -3);
        assert_eq!(argumentative_distance(c(1), c(1)).unwrap(), 0);
        let mut other = d.clone();
        other.doc_id = "other".into();
        let err = argumentative_distance(c(1), other.component_ref("c2").unwrap());
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn three_components_no_links() {
        let pairs = enumerate_pairs(&doc(3, &[], &[]), &PairPolicy::unrestricted(), &schema());
        assert_eq!(pairs.len(), 6);
        assert!(pairs.iter().all(|p| !p.link && p.relation == "None"));
    }

    #[test]
    fn forward_and_inverse_labels() {
        let pairs = enumerate_pairs(&doc(2, &[(0, 1, "reason")], &[]), &PairPolicy::unrestricted(), &schema());
        let ab = pairs.iter().find(|p| p.source_id == "c0").unwrap();
        let ba = pairs.iter().find(|p| p.source_id == "c1").unwrap();
        assert!(ab.link);
        assert_eq!(ab.relation, "reason");
        assert!(!ba.link);
        assert_eq!(ba.relation, "reason_inv");
    }

    #[test]
    fn forward_wins_over_inverse() {
        let pairs = enumerate_pairs(
            &doc(2, &[(0, 1, "reason"), (1, 0, "evidence")], &[]),
            &PairPolicy::unrestricted(),
            &schema(),
        );
        let ab = pairs.iter().find(|p| p.source_id == "c0").unwrap();
        let ba = pairs.iter().find(|p| p.source_id == "c1").unwrap();
        assert_eq!((ab.link, ab.relation.as_str()), (true, "reason"));
        assert_eq!((ba.link, ba.relation.as_str()), (true, "evidence"));
    }

    #[test]
    fn distance_window_and_paragraphs() {
        let d = doc(5, &[], &[0, 0, 1, 1, 2]);
        let windowed = PairPolicy {
            max_abs_distance: Some(1),
            ..PairPolicy::default()
        };
        assert_eq!(enumerate_pairs(&d, &windowed, &schema()).len(), 8);
        let ukp = enumerate_pairs(&d, &PairPolicy::ukp(), &schema());
        // Two 2-component paragraphs give 2 pairs each; c4 is alone and gets a self pair.
        assert_eq!(ukp.len(), 5);
        let selfp: Vec<_> = ukp.iter().filter(|p| p.is_self_pair).collect();
        assert_eq!(selfp.len(), 1);
        assert_eq!(selfp[0].source_id, "c4");
        assert_eq!(selfp[0].target_id, "c4");
        assert!(!selfp[0].link);
        assert_eq!(selfp[0].relation, "None");
    }

    #[test]
    fn record_field_names() {
        let pairs = enumerate_pairs(&doc(2, &[(0, 1, "reason")], &[]), &PairPolicy::unrestricted(), &schema());
        let v = serde_json::to_value(&pairs[0]).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "doc_id": "d", "source_id": "c0", "target_id": "c1", "distance": 1,
                "P_a": "claim", "P_b": "premise", "L": true, "R": "reason", "is_self_pair": false
            })
        );
    }

    #[test]
    fn policy_rejects_zero_window() {
        let p = PairPolicy {
            max_abs_distance: Some(0),
            ..PairPolicy::default()
        };
        assert!(p.check().is_err());
    }
}
