//! Reader for the CDCP release layout: `<id>.txt` plus `<id>.ann.json`
//! holding `prop_offsets`, `prop_labels`, `reasons` and `evidences`.
//! Relations are `[[first, last], target]`: every proposition in the
//! inclusive source range points to `target`.

use serde::Deserialize;

use super::standoff::CharOffsets;
use super::{ComponentSpec, CorpusSchema, Document, LinkAnnotation, Span};
use crate::{Error, Result};

#[derive(Debug, Deserialize)]
struct CdcpAnnotation {
    prop_offsets: Vec<[usize; 2]>,
    prop_labels: Vec<String>,
    #[serde(default)]
    reasons: Option<Vec<([usize; 2], usize)>>,
    #[serde(default)]
    evidences: Option<Vec<([usize; 2], usize)>>,
}

/// Builds a document from one CDCP text / annotation pair. Component ids
/// are the proposition indices; relation names are `reason` and
/// `evidence`.
pub fn parse_cdcp(doc_id: &str, text: &str, ann_json: &str, schema: &CorpusSchema) -> Result<Document> {
    let ann: CdcpAnnotation = serde_json::from_str(ann_json)?;
    if ann.prop_offsets.len() != ann.prop_labels.len() {
        return Err(Error::Validation(format!(
            "{doc_id}: {} offsets for {} labels",
            ann.prop_offsets.len(),
            ann.prop_labels.len()
        )));
    }
    let offsets = CharOffsets::new(text);
    let mut specs = Vec::with_capacity(ann.prop_offsets.len());
    for (i, ([s, e], label)) in ann.prop_offsets.iter().zip(&ann.prop_labels).enumerate() {
        if schema.component_index(label).is_none() {
            return Err(Error::Validation(format!("{doc_id}: unknown component type {label:?}")));
        }
        let (Some(bs), Some(be)) = (offsets.byte(*s), offsets.byte(*e)) else {
            return Err(Error::Validation(format!("span out of bounds: {doc_id}/{i} ({s}, {e})")));
        };
        // trailing whitespace is not part of the proposition
        let be = bs + text[bs..be].trim_end().len();
        specs.push(ComponentSpec {
            comp_id: i.to_string(),
            fragments: vec![Span::new(bs, be)],
            comp_type: label.clone(),
            layout: None,
        });
    }
    let mut links = Vec::new();
    for (relation, records) in [("reason", &ann.reasons), ("evidence", &ann.evidences)] {
        if schema.forward_index(relation).is_none() {
            continue;
        }
        for ([first, last], target) in records.iter().flatten() {
            for source in *first..=*last {
                if source >= specs.len() || *target >= specs.len() {
                    return Err(Error::Validation(format!(
                        "dangling endpoint: {doc_id} {source}->{target}"
                    )));
                }
                links.push(LinkAnnotation {
                    source_id: source.to_string(),
                    target_id: target.to_string(),
                    relation: relation.to_string(),
                });
            }
        }
    }
    Document::build(doc_id, text, specs, links)
}
