//! Normalized argument-graph corpus model.
//!
//! A [`Document`] is a text plus an ordered list of argumentative
//! components and the directed links between them. Every reader in this
//! module produces the same validated model; downstream stages never see
//! format-specific quirks.

mod cdcp;
mod drinventor;
mod normalized;
mod standoff;
mod synth;
mod tokenize;
mod validate;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use cdcp::parse_cdcp;
pub use drinventor::preprocess_drinventor;
pub use normalized::{
    document_from_json, document_to_json, normalize_roundtrip, read_corpus, write_corpus,
    CorpusFile, NormalizedComponent, NormalizedDocument, NormalizedLink,
};
pub use standoff::{paragraph_and_section, parse_standoff};
pub use synth::{synth_corpus, SynthConfig};
pub use tokenize::tokenize;
pub use validate::{validate, Violation, ViolationRule};

/// Byte range `[start, end)` into a document's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
    #[default]
    Unassigned,
}

impl SplitTag {
    pub fn is_unassigned(&self) -> bool {
        matches!(self, SplitTag::Unassigned)
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
            SplitTag::Unassigned => "unassigned",
        };
        f.write_str(s)
    }
}

/// One argumentative component.
///
/// Components split by non-argumentative material carry more than one
/// fragment until [`preprocess_drinventor`] separates them.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgComponent {
    pub comp_id: String,
    pub fragments: Vec<Span>,
    pub tokens: Vec<String>,
    pub comp_type: String,
    pub paragraph_id: usize,
    pub section_id: usize,
    pub order_index: usize,
}

impl ArgComponent {
    /// Smallest span covering every fragment.
    pub fn span(&self) -> Span {
        let start = self.fragments.first().map_or(0, |s| s.start);
        let end = self.fragments.last().map_or(0, |s| s.end);
        Span { start, end }
    }

    pub fn is_discontinuous(&self) -> bool {
        self.fragments.len() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkAnnotation {
    #[serde(rename = "source")]
    pub source_id: String,
    #[serde(rename = "target")]
    pub target_id: String,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub components: Vec<ArgComponent>,
    pub links: Vec<LinkAnnotation>,
    pub split_tag: SplitTag,
    pub corpus_id: String,
}

/// Construction input for a component; tokens and order are derived.
#[derive(Debug, Clone)]
pub struct ComponentSpec {
    pub comp_id: String,
    pub fragments: Vec<Span>,
    pub comp_type: String,
    /// `None` derives paragraph and section from the text layout.
    pub layout: Option<(usize, usize)>,
}

impl Document {
    /// Builds a document, tokenizing components and ordering them by
    /// start offset. Fails on the first invariant violation.
    pub fn build(
        doc_id: impl Into<String>,
        text: impl Into<String>,
        specs: Vec<ComponentSpec>,
        links: Vec<LinkAnnotation>,
    ) -> Result<Document> {
        let text = text.into();
        let mut components = Vec::with_capacity(specs.len());
        for spec in specs {
            let mut fragments = spec.fragments;
            fragments.sort();
            for frag in &fragments {
                if frag.start >= frag.end
                    || frag.end > text.len()
                    || !text.is_char_boundary(frag.start)
                    || !text.is_char_boundary(frag.end)
                {
                    return Err(Error::Validation(format!(
                        "span out of bounds: component {} ({}, {}) in text of {} bytes",
                        spec.comp_id,
                        frag.start,
                        frag.end,
                        text.len()
                    )));
                }
            }
            let tokens = fragments
                .iter()
                .flat_map(|f| tokenize(&text[f.start..f.end]))
                .collect();
            let (paragraph_id, section_id) = match spec.layout {
                Some(layout) => layout,
                None => paragraph_and_section(&text, fragments[0].start),
            };
            components.push(ArgComponent {
                comp_id: spec.comp_id,
                fragments,
                tokens,
                comp_type: spec.comp_type,
                paragraph_id,
                section_id,
                order_index: 0,
            });
        }
        let mut doc = Document {
            doc_id: doc_id.into(),
            text,
            components,
            links,
            split_tag: SplitTag::Unassigned,
            corpus_id: String::new(),
        };
        doc.reorder();
        doc.check()?;
        Ok(doc)
    }

    /// Sorts components by start offset and renumbers `order_index`.
    pub(crate) fn reorder(&mut self) {
        self.components
            .sort_by(|a, b| a.span().start.cmp(&b.span().start).then_with(|| a.comp_id.cmp(&b.comp_id)));
        for (i, c) in self.components.iter_mut().enumerate() {
            c.order_index = i;
        }
    }

    /// Converts the first violation, if any, into an error.
    pub fn check(&self) -> Result<()> {
        match validate(self).into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::Validation(format!("{}: {}", self.doc_id, v))),
        }
    }

    pub fn component(&self, comp_id: &str) -> Option<&ArgComponent> {
        self.components.iter().find(|c| c.comp_id == comp_id)
    }

    pub fn component_ref<'a>(&'a self, comp_id: &str) -> Option<ComponentRef<'a>> {
        self.component(comp_id).map(|component| ComponentRef {
            doc_id: &self.doc_id,
            component,
        })
    }

    /// Checks component and relation types against a schema.
    pub fn check_schema(&self, schema: &CorpusSchema) -> Result<()> {
        for c in &self.components {
            if schema.component_index(&c.comp_type).is_none() {
                return Err(Error::Validation(format!(
                    "{}: unknown component type {:?} on {}",
                    self.doc_id, c.comp_type, c.comp_id
                )));
            }
        }
        for l in &self.links {
            if schema.forward_index(&l.relation).is_none() {
                return Err(Error::Validation(format!(
                    "{}: unknown relation type {:?} on {}->{}",
                    self.doc_id, l.relation, l.source_id, l.target_id
                )));
            }
        }
        Ok(())
    }
}

/// A component together with the id of the document that owns it.
#[derive(Debug, Clone, Copy)]
pub struct ComponentRef<'a> {
    pub doc_id: &'a str,
    pub component: &'a ArgComponent,
}

/// Relation label over the extended domain `forward ++ inverses ++ [None]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationLabel {
    Forward(usize),
    Inverse(usize),
    None,
}

impl RelationLabel {
    pub fn is_forward(&self) -> bool {
        matches!(self, RelationLabel::Forward(_))
    }

    /// Index in the extended domain of a schema with `n_forward` relations.
    pub fn index(&self, n_forward: usize) -> usize {
        match *self {
            RelationLabel::Forward(i) => i,
            RelationLabel::Inverse(i) => n_forward + i,
            RelationLabel::None => 2 * n_forward,
        }
    }

    pub fn from_index(index: usize, n_forward: usize) -> Option<RelationLabel> {
        if index < n_forward {
            Some(RelationLabel::Forward(index))
        } else if index < 2 * n_forward {
            Some(RelationLabel::Inverse(index - n_forward))
        } else if index == 2 * n_forward {
            Some(RelationLabel::None)
        } else {
            None
        }
    }

    /// Test-time view of the label: inverse types become `None`.
    pub fn collapse(self) -> RelationLabel {
        match self {
            RelationLabel::Inverse(_) => RelationLabel::None,
            other => other,
        }
    }
}

pub const NONE_LABEL: &str = "None";
pub const INVERSE_SUFFIX: &str = "_inv";

/// Label domains of one corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSchema {
    pub component_classes: Vec<String>,
    pub forward_relations: Vec<String>,
}

impl CorpusSchema {
    pub fn new(component_classes: &[&str], forward_relations: &[&str]) -> Result<Self> {
        let schema = CorpusSchema {
            component_classes: component_classes.iter().map(|s| s.to_string()).collect(),
            forward_relations: forward_relations.iter().map(|s| s.to_string()).collect(),
        };
        schema.check()?;
        Ok(schema)
    }

    pub fn check(&self) -> Result<()> {
        if self.component_classes.is_empty() || self.forward_relations.is_empty() {
            return Err(Error::Config("schema needs at least one component class and one relation".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.component_classes {
            if !seen.insert(c) {
                return Err(Error::Config(format!("duplicate component class {c:?}")));
            }
        }
        let mut seen = HashSet::new();
        for r in &self.forward_relations {
            if !seen.insert(r) || r == NONE_LABEL || r.ends_with(INVERSE_SUFFIX) {
                return Err(Error::Config(format!("invalid or duplicate relation {r:?}")));
            }
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.component_classes.len()
    }

    pub fn n_forward(&self) -> usize {
        self.forward_relations.len()
    }

    /// Size of the extended relation domain, `2·forward + 1`.
    pub fn n_relations(&self) -> usize {
        2 * self.forward_relations.len() + 1
    }

    pub fn component_index(&self, label: &str) -> Option<usize> {
        self.component_classes.iter().position(|c| c == label)
    }

    pub fn forward_index(&self, label: &str) -> Option<usize> {
        self.forward_relations.iter().position(|r| r == label)
    }

    /// Extended domain in index order.
    pub fn relation_domain(&self) -> Vec<String> {
        let mut out = self.forward_relations.clone();
        out.extend(self.forward_relations.iter().map(|r| format!("{r}{INVERSE_SUFFIX}")));
        out.push(NONE_LABEL.to_string());
        out
    }

    /// Test-time relation domain: forward labels then `None`.
    pub fn collapsed_domain(&self) -> Vec<String> {
        let mut out = self.forward_relations.clone();
        out.push(NONE_LABEL.to_string());
        out
    }

    pub fn relation_name(&self, label: RelationLabel) -> String {
        match label {
            RelationLabel::Forward(i) => self.forward_relations[i].clone(),
            RelationLabel::Inverse(i) => format!("{}{INVERSE_SUFFIX}", self.forward_relations[i]),
            RelationLabel::None => NONE_LABEL.to_string(),
        }
    }

    pub fn parse_relation(&self, name: &str) -> Option<RelationLabel> {
        if name == NONE_LABEL {
            return Some(RelationLabel::None);
        }
        if let Some(i) = self.forward_index(name) {
            return Some(RelationLabel::Forward(i));
        }
        name.strip_suffix(INVERSE_SUFFIX)
            .and_then(|base| self.forward_index(base))
            .map(RelationLabel::Inverse)
    }

    /// Index of a collapsed label in [`CorpusSchema::collapsed_domain`].
    pub fn collapsed_index(&self, label: RelationLabel) -> usize {
        match label.collapse() {
            RelationLabel::Forward(i) => i,
            _ => self.n_forward(),
        }
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let schema: CorpusSchema = serde_json::from_str(&raw)?;
        schema.check()?;
        Ok(schema)
    }
}
