use super::{ArgComponent, Document, LinkAnnotation};

/// Splits every discontinuous component into one component per fragment.
///
/// Each piece keeps the original type and receives a copy of every link
/// the original took part in, as source or target. The pieces are not
/// linked to each other. Piece ids are `<id>.<k>` with `k` starting at 1.
pub fn preprocess_drinventor(doc: &Document) -> Document {
    if !doc.components.iter().any(ArgComponent::is_discontinuous) {
        return doc.clone();
    }
    let mut components = Vec::with_capacity(doc.components.len());
    let mut pieces: Vec<(String, Vec<String>)> = Vec::new();
    for c in &doc.components {
        if !c.is_discontinuous() {
            components.push(c.clone());
            continue;
        }
        let mut ids = Vec::new();
        for (k, frag) in c.fragments.iter().enumerate() {
            let comp_id = format!("{}.{}", c.comp_id, k + 1);
            ids.push(comp_id.clone());
            components.push(ArgComponent {
                comp_id,
                fragments: vec![*frag],
                tokens: super::tokenize(&doc.text[frag.start..frag.end]),
                comp_type: c.comp_type.clone(),
                paragraph_id: c.paragraph_id,
                section_id: c.section_id,
                order_index: 0,
            });
        }
        pieces.push((c.comp_id.clone(), ids));
    }
    let expand = |id: &str| -> Vec<String> {
        pieces
            .iter()
            .find(|(orig, _)| orig == id)
            .map(|(_, ids)| ids.clone())
            .unwrap_or_else(|| vec![id.to_string()])
    };
    let mut links = Vec::new();
    for l in &doc.links {
        for s in expand(&l.source_id) {
            for t in expand(&l.target_id) {
                links.push(LinkAnnotation {
                    source_id: s.clone(),
                    target_id: t,
                    relation: l.relation.clone(),
                });
            }
        }
    }
    let mut out = Document {
        doc_id: doc.doc_id.clone(),
        text: doc.text.clone(),
        components,
        links,
        split_tag: doc.split_tag,
        corpus_id: doc.corpus_id.clone(),
    };
    out.reorder();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{validate, ComponentSpec, Span};

    fn link(s: &str, t: &str) -> LinkAnnotation {
        LinkAnnotation {
            source_id: s.into(),
            target_id: t.into(),
            relation: "supports".into(),
        }
    }

    fn doc() -> Document {
        // C = "x1 x2" + "y1 y2" with non-argumentative "zz" between them.
        let text = "x1 x2 zz y1 y2. D here. E here.";
        let spec = |id: &str, fr: Vec<Span>, ty: &str| ComponentSpec {
            comp_id: id.into(),
            fragments: fr,
            comp_type: ty.into(),
            layout: None,
        };
        Document::build(
            "d",
            text,
            vec![
                spec("C", vec![Span::new(0, 5), Span::new(9, 15)], "own_claim"),
                spec("D", vec![Span::new(16, 23)], "background_claim"),
                spec("E", vec![Span::new(24, 31)], "data"),
            ],
            vec![link("C", "D"), link("E", "C")],
        )
        .unwrap()
    }

    #[test]
    fn split_component_inherits_links() {
        let out = preprocess_drinventor(&doc());
        assert!(validate(&out).is_empty());
        let ids: Vec<_> = out.components.iter().map(|c| c.comp_id.as_str()).collect();
        assert_eq!(ids, vec!["C.1", "C.2", "D", "E"]);
        assert_eq!(out.components[0].comp_type, "own_claim");
        assert_eq!(out.components[1].comp_type, "own_claim");
        assert_eq!(out.components[1].tokens, vec!["y1", "y2", "."]);
        for l in [link("C.1", "D"), link("C.2", "D"), link("E", "C.1"), link("E", "C.2")] {
            assert!(out.links.contains(&l), "missing {l:?}");
        }
        assert_eq!(out.links.len(), 4);
        assert!(!out
            .links
            .iter()
            .any(|l| l.source_id.starts_with("C.") && l.target_id.starts_with("C.")));
    }

    #[test]
    fn idempotent_and_noop_without_split() {
        let once = preprocess_drinventor(&doc());
        assert_eq!(preprocess_drinventor(&once), once);
        let plain = preprocess_drinventor(&once);
        assert_eq!(plain, once);
    }
}
