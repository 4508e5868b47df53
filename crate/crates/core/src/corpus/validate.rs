use std::collections::HashSet;
use std::fmt;

use super::Document;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationRule {
    SpanOutOfBounds,
    Overlap,
    Unsorted,
    OrderIndex,
    DuplicateId,
    EmptyComponent,
    DanglingEndpoint,
    ReflexiveLink,
}

impl ViolationRule {
    pub fn name(&self) -> &'static str {
        match self {
            ViolationRule::SpanOutOfBounds => "span out of bounds",
            ViolationRule::Overlap => "overlap",
            ViolationRule::Unsorted => "unsorted components",
            ViolationRule::OrderIndex => "order index",
            ViolationRule::DuplicateId => "duplicate id",
            ViolationRule::EmptyComponent => "empty component",
            ViolationRule::DanglingEndpoint => "dangling endpoint",
            ViolationRule::ReflexiveLink => "reflexive link",
        }
    }
}

/// One broken document invariant and the ids involved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: ViolationRule,
    pub ids: Vec<String>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.rule.name(), self.ids.join(", "))
    }
}

/// Lists every violated document invariant; empty iff the document is valid.
pub fn validate(doc: &Document) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule, ids: &[&str]| {
        out.push(Violation {
            rule,
            ids: ids.iter().map(|s| s.to_string()).collect(),
        })
    };

    let mut ids = HashSet::new();
    for c in &doc.components {
        if !ids.insert(c.comp_id.as_str()) {
            push(ViolationRule::DuplicateId, &[&c.comp_id]);
        }
        let bad_span = c.fragments.is_empty()
            || c.fragments.iter().any(|f| {
                f.start >= f.end
                    || f.end > doc.text.len()
                    || !doc.text.is_char_boundary(f.start)
                    || !doc.text.is_char_boundary(f.end)
            });
        if bad_span {
            push(ViolationRule::SpanOutOfBounds, &[&c.comp_id]);
        }
        if c.tokens.is_empty() {
            push(ViolationRule::EmptyComponent, &[&c.comp_id]);
        }
    }

    for (i, c) in doc.components.iter().enumerate() {
        if c.order_index != i {
            push(ViolationRule::OrderIndex, &[&c.comp_id]);
        }
        if i > 0 && doc.components[i - 1].span().start > c.span().start {
            push(ViolationRule::Unsorted, &[&doc.components[i - 1].comp_id, &c.comp_id]);
        }
    }

    for (i, a) in doc.components.iter().enumerate() {
        for w in a.fragments.windows(2) {
            if w[0].overlaps(&w[1]) {
                push(ViolationRule::Overlap, &[&a.comp_id]);
            }
        }
        for b in &doc.components[i + 1..] {
            let hit = a
                .fragments
                .iter()
                .any(|fa| b.fragments.iter().any(|fb| fa.overlaps(fb)));
            if hit {
                push(ViolationRule::Overlap, &[&a.comp_id, &b.comp_id]);
            }
        }
    }

    for l in &doc.links {
        if l.source_id == l.target_id {
            push(ViolationRule::ReflexiveLink, &[&l.source_id]);
        }
        for end in [&l.source_id, &l.target_id] {
            if !ids.contains(end.as_str()) {
                push(ViolationRule::DanglingEndpoint, &[end]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ComponentSpec, LinkAnnotation, Span};

    fn doc() -> Document {
        Document::build(
            "d",
            "A. B. C.",
            ["a", "b", "c"]
                .iter()
                .enumerate()
                .map(|(i, id)| ComponentSpec {
                    comp_id: id.to_string(),
                    fragments: vec![Span::new(3 * i, 3 * i + 2)],
                    comp_type: "claim".into(),
                    layout: None,
                })
                .collect(),
            vec![LinkAnnotation {
                source_id: "b".into(),
                target_id: "a".into(),
                relation: "support".into(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn valid_document_has_no_violations() {
        assert!(validate(&doc()).is_empty());
    }

    #[test]
    fn reflexive_link_reported() {
        let mut d = doc();
        d.links.push(LinkAnnotation {
            source_id: "a".into(),
            target_id: "a".into(),
            relation: "support".into(),
        });
        let v = validate(&d);
        assert_eq!(v, vec![Violation { rule: ViolationRule::ReflexiveLink, ids: vec!["a".into()] }]);
    }

    #[test]
    fn overlap_reported_with_both_ids() {
        let mut d = doc();
        d.components[1].fragments = vec![Span::new(1, 5)];
        let v = validate(&d);
        assert!(v.contains(&Violation { rule: ViolationRule::Overlap, ids: vec!["a".into(), "b".into()] }));
    }

    #[test]
    fn dangling_and_bounds() {
        let mut d = doc();
        d.links[0].target_id = "zz".into();
        d.components[2].fragments = vec![Span::new(6, 99)];
        let rules: Vec<_> = validate(&d).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&ViolationRule::DanglingEndpoint));
        assert!(rules.contains(&ViolationRule::SpanOutOfBounds));
    }

    #[test]
    fn order_index_and_sorting() {
        let mut d = doc();
        d.components.swap(0, 1);
        let rules: Vec<_> = validate(&d).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&ViolationRule::OrderIndex));
        assert!(rules.contains(&ViolationRule::Unsorted));
    }
}
