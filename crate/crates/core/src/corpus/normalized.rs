//! Normalized corpus JSON.
//!
//! One object per document:
//! `{doc_id, text, components: [{comp_id, start, end, type, paragraph, section}], links: [{source, target, relation}]}`
//! with byte offsets into `text`. Discontinuous components additionally
//! carry `fragments: [[start, end], ...]`. Corpus files hold one document
//! per line, optionally preceded by an artifact header line.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComponentSpec, CorpusSchema, Document, LinkAnnotation, Span, SplitTag};
use crate::artifact::{self, Header};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedComponent {
    pub comp_id: String,
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub comp_type: String,
    pub paragraph: usize,
    pub section: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragments: Option<Vec<[usize; 2]>>,
}

pub type NormalizedLink = LinkAnnotation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedDocument {
    pub doc_id: String,
    pub text: String,
    pub components: Vec<NormalizedComponent>,
    pub links: Vec<NormalizedLink>,
    #[serde(default, skip_serializing_if = "SplitTag::is_unassigned")]
    pub split: SplitTag,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub corpus_id: String,
}

pub fn document_to_json(doc: &Document) -> NormalizedDocument {
    NormalizedDocument {
        doc_id: doc.doc_id.clone(),
        text: doc.text.clone(),
        components: doc
            .components
            .iter()
            .map(|c| {
                let span = c.span();
                NormalizedComponent {
                    comp_id: c.comp_id.clone(),
                    start: span.start,
                    end: span.end,
                    comp_type: c.comp_type.clone(),
                    paragraph: c.paragraph_id,
                    section: c.section_id,
                    fragments: c
                        .is_discontinuous()
                        .then(|| c.fragments.iter().map(|f| [f.start, f.end]).collect()),
                }
            })
            .collect(),
        links: doc.links.clone(),
        split: doc.split_tag,
        corpus_id: doc.corpus_id.clone(),
    }
}

/// Rebuilds and validates a document; with a schema, label types are checked too.
pub fn document_from_json(nd: NormalizedDocument, schema: Option<&CorpusSchema>) -> Result<Document> {
    let specs = nd
        .components
        .into_iter()
        .map(|c| ComponentSpec {
            fragments: match c.fragments {
                Some(fr) => fr.into_iter().map(|[s, e]| Span::new(s, e)).collect(),
                None => vec![Span::new(c.start, c.end)],
            },
            comp_id: c.comp_id,
            comp_type: c.comp_type,
            layout: Some((c.paragraph, c.section)),
        })
        .collect();
    let mut doc = Document::build(nd.doc_id, nd.text, specs, nd.links)?;
    doc.split_tag = nd.split;
    doc.corpus_id = nd.corpus_id;
    if let Some(schema) = schema {
        doc.check_schema(schema)?;
    }
    Ok(doc)
}

/// Serializes to the normalized form and parses it back.
pub fn normalize_roundtrip(doc: &Document) -> Result<Document> {
    let json = serde_json::to_string(&document_to_json(doc))?;
    document_from_json(serde_json::from_str(&json)?, None)
}

/// A corpus file and the provenance hash recorded in its header.
#[derive(Debug, Clone)]
pub struct CorpusFile {
    pub config_hash: Option<String>,
    pub documents: Vec<Document>,
}

pub fn write_corpus(path: &Path, docs: &[Document], config_hash: &str) -> Result<()> {
    let mut w = artifact::create(path)?;
    artifact::write_header(&mut w, &Header::new("corpus", config_hash))?;
    for doc in docs {
        serde_json::to_writer(&mut w, &document_to_json(doc))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a corpus written as JSON lines (with optional header) or as a JSON array.
pub fn read_corpus(path: &Path, schema: Option<&CorpusSchema>) -> Result<CorpusFile> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    if raw.trim_start().starts_with('[') {
        let docs: Vec<NormalizedDocument> = serde_json::from_str(&raw)?;
        let documents = docs
            .into_iter()
            .map(|d| document_from_json(d, schema))
            .collect::<Result<_>>()?;
        return Ok(CorpusFile {
            config_hash: None,
            documents,
        });
    }
    let mut config_hash = None;
    let mut documents = Vec::new();
    for (i, line) in raw.as_bytes().lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Some(h) = artifact::parse_header(&line) {
                config_hash = Some(h.config_hash);
                continue;
            }
        }
        let nd: NormalizedDocument =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        documents.push(document_from_json(nd, schema)?);
    }
    Ok(CorpusFile {
        config_hash,
        documents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_standoff;

    #[test]
    fn wire_format_field_names() {
        let schema = CorpusSchema::new(&["claim", "premise"], &["supports"]).unwrap();
        let ann = "T1\tclaim 0 2\tA.\nT2\tpremise 3 5\tB.\nR1\tsupports Arg1:T2 Arg2:T1\n";
        let doc = parse_standoff("d", "A. B.", ann, &schema).unwrap();
        let v = serde_json::to_value(document_to_json(&doc)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "doc_id": "d",
                "text": "A. B.",
                "components": [
                    {"comp_id": "T1", "start": 0, "end": 2, "type": "claim", "paragraph": 0, "section": 0},
                    {"comp_id": "T2", "start": 3, "end": 5, "type": "premise", "paragraph": 0, "section": 0}
                ],
                "links": [{"source": "T2", "target": "T1", "relation": "supports"}]
            })
        );
        assert_eq!(normalize_roundtrip(&doc).unwrap(), doc);
    }

    #[test]
    fn schema_check_on_load() {
        let schema = CorpusSchema::new(&["claim"], &["supports"]).unwrap();
        let nd: NormalizedDocument = serde_json::from_value(serde_json::json!({
            "doc_id": "d", "text": "A. B.",
            "components": [{"comp_id": "a", "start": 0, "end": 2, "type": "premise", "paragraph": 0, "section": 0}],
            "links": []
        }))
        .unwrap();
        assert!(document_from_json(nd.clone(), None).is_ok());
        assert!(document_from_json(nd, Some(&schema)).is_err());
    }
}
