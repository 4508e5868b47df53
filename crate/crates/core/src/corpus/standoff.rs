//! brat-style standoff reader.
//!
//! Entity records: `T1<TAB>Type start end[;start end]<TAB>surface`.
//! Relation records: `R1<TAB>Type Arg1:T2 Arg2:T1`, Arg1 being the source.
//! Offsets are Unicode scalar offsets as brat writes them and are converted
//! to byte offsets here. Note (`#`) and attribute (`A`, `M`) records are
//! skipped.

use std::collections::HashMap;

use super::{ComponentSpec, CorpusSchema, Document, LinkAnnotation, Span};
use crate::{Error, Result};

fn is_heading(line: &str) -> bool {
    let t = line.trim();
    if t.starts_with('#') {
        return true;
    }
    // Numbered headings such as "2 Methods" or "3.1. Results".
    let numbered = t
        .split_whitespace()
        .next()
        .map(|w| {
            let w = w.trim_end_matches('.');
            !w.is_empty() && w.split('.').all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit()))
        })
        .unwrap_or(false);
    numbered && t.split_whitespace().count() > 1 && t.len() <= 80 && !t.ends_with('.')
}

/// Paragraph and section index of the line holding byte `offset`.
///
/// A blank line closes a paragraph; a heading line closes the paragraph
/// and opens a new section.
pub fn paragraph_and_section(text: &str, offset: usize) -> (usize, usize) {
    let prefix = &text[..offset.min(text.len())];
    let mut lines: Vec<&str> = prefix.split('\n').collect();
    lines.pop();
    let (mut para, mut section, mut content) = (0, 0, false);
    for line in lines {
        if line.trim().is_empty() {
            if content {
                para += 1;
                content = false;
            }
        } else if is_heading(line) {
            if content {
                para += 1;
            }
            section += 1;
            content = false;
        } else {
            content = true;
        }
    }
    (para, section)
}

pub(super) struct CharOffsets(Vec<usize>);

impl CharOffsets {
    pub(super) fn new(text: &str) -> Self {
        let mut v: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        v.push(text.len());
        CharOffsets(v)
    }

    pub(super) fn byte(&self, char_offset: usize) -> Option<usize> {
        self.0.get(char_offset).copied()
    }
}

fn parse_fragments(raw: &str, line_no: usize, offsets: &CharOffsets, id: &str) -> Result<Vec<Span>> {
    let mut out = Vec::new();
    for part in raw.split(';') {
        let mut nums = part.split_whitespace();
        let (Some(s), Some(e), None) = (nums.next(), nums.next(), nums.next()) else {
            return Err(Error::parse(line_no, format!("bad offsets {part:?}")));
        };
        let s: usize = s
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad start offset {s:?}")))?;
        let e: usize = e
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad end offset {e:?}")))?;
        let (Some(bs), Some(be)) = (offsets.byte(s), offsets.byte(e)) else {
            return Err(Error::Validation(format!(
                "span out of bounds: {id} ({s}, {e}) at line {line_no}"
            )));
        };
        if bs >= be {
            return Err(Error::Validation(format!(
                "span out of bounds: {id} has empty or inverted span ({s}, {e})"
            )));
        }
        out.push(Span::new(bs, be));
    }
    Ok(out)
}

/// Parses one standoff annotation file against its text.
pub fn parse_standoff(doc_id: &str, text: &str, ann: &str, schema: &CorpusSchema) -> Result<Document> {
    let offsets = CharOffsets::new(text);
    let mut specs: Vec<ComponentSpec> = Vec::new();
    let mut known = HashMap::new();
    let mut raw_links: Vec<(usize, String, String, String)> = Vec::new();

    for (i, line) in ann.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default().trim();
        let body = fields
            .next()
            .ok_or_else(|| Error::parse(line_no, "missing tab-separated annotation body"))?;
        match id.chars().next() {
            Some('T') => {
                let (ty, spans) = body
                    .split_once(' ')
                    .ok_or_else(|| Error::parse(line_no, "entity record needs a type and offsets"))?;
                if schema.component_index(ty).is_none() {
                    return Err(Error::parse(line_no, format!("unknown annotation type {ty:?}")));
                }
                let fragments = parse_fragments(spans, line_no, &offsets, id)?;
                if known.insert(id.to_string(), line_no).is_some() {
                    return Err(Error::parse(line_no, format!("duplicate id {id}")));
                }
                specs.push(ComponentSpec {
                    comp_id: id.to_string(),
                    fragments,
                    comp_type: ty.to_string(),
                    layout: None,
                });
            }
            Some('R') => {
                let mut parts = body.split_whitespace();
                let ty = parts
                    .next()
                    .ok_or_else(|| Error::parse(line_no, "relation record needs a type"))?;
                if schema.forward_index(ty).is_none() {
                    return Err(Error::parse(line_no, format!("unknown annotation type {ty:?}")));
                }
                let mut source = None;
                let mut target = None;
                for arg in parts {
                    match arg.split_once(':') {
                        Some(("Arg1", t)) => source = Some(t.to_string()),
                        Some(("Arg2", t)) => target = Some(t.to_string()),
                        _ => return Err(Error::parse(line_no, format!("bad relation argument {arg:?}"))),
                    }
                }
                let (Some(s), Some(t)) = (source, target) else {
                    return Err(Error::parse(line_no, "relation record needs Arg1 and Arg2"));
                };
                raw_links.push((line_no, ty.to_string(), s, t));
            }
            Some('#') | Some('A') | Some('M') => {}
            _ => return Err(Error::parse(line_no, format!("unsupported record {id:?}"))),
        }
    }

    let mut links = Vec::with_capacity(raw_links.len());
    for (line_no, relation, source_id, target_id) in raw_links {
        for end in [&source_id, &target_id] {
            if !known.contains_key(end) {
                return Err(Error::Validation(format!(
                    "dangling endpoint: {end} referenced at line {line_no}"
                )));
            }
        }
        links.push(LinkAnnotation {
            source_id,
            target_id,
            relation,
        });
    }
    Document::build(doc_id, text, specs, links)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CorpusSchema {
        CorpusSchema::new(&["claim", "premise"], &["supports", "attacks"]).unwrap()
    }

    #[test]
    fn minimal_document() {
        let ann = "T1\tclaim 0 2\tA.\nT2\tpremise 3 5\tB.\nR1\tsupports Arg1:T2 Arg2:T1\n";
        let doc = parse_standoff("d", "A. B.", ann, &schema()).unwrap();
        assert_eq!(doc.components.len(), 2);
        assert_eq!(doc.links.len(), 1);
        assert_eq!(doc.links[0].source_id, "T2");
        assert_eq!(doc.links[0].target_id, "T1");
        assert_eq!(doc.components[0].tokens, vec!["A", "."]);
    }

    #[test]
    fn span_out_of_bounds() {
        let err = parse_standoff("d", "A. B.", "T1\tclaim 0 9\tA.\n", &schema()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("span out of bounds")), "{err}");
    }

    #[test]
    fn dangling_endpoint() {
        let ann = "T1\tclaim 0 2\tA.\nR1\tsupports Arg1:T9 Arg2:T1\n";
        let err = parse_standoff("d", "A. B.", ann, &schema()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("dangling endpoint")), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let ann = "T1\tclaim 0 2\tA.\nT2\tpremise x 5\tB.\n";
        match parse_standoff("d", "A. B.", ann, &schema()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_type_rejected() {
        let err = parse_standoff("d", "A. B.", "T1\tMajorClaim 0 2\tA.\n", &schema()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn discontinuous_and_unicode_offsets() {
        let text = "é x. filler y.";
        let ann = "T1\tclaim 0 4;12 14\té x. y.\n";
        let doc = parse_standoff("d", text, ann, &schema()).unwrap();
        let c = &doc.components[0];
        assert_eq!(c.fragments, vec![Span::new(0, 5), Span::new(13, 15)]);
        assert_eq!(c.tokens, vec!["é", "x", ".", "y", "."]);
    }

    #[test]
    fn layout_heuristics() {
        let text = "# Intro\nA one.\n\nB two.\n2 Methods\nC three.";
        assert_eq!(paragraph_and_section(text, text.find("A one").unwrap()), (0, 1));
        assert_eq!(paragraph_and_section(text, text.find("B two").unwrap()), (1, 1));
        assert_eq!(paragraph_and_section(text, text.find("C three").unwrap()), (2, 2));
    }
}
