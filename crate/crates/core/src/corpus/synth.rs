use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ComponentSpec, CorpusSchema, Document, LinkAnnotation, Span};

/// Shape of a synthetic corpus.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Inclusive range of components per document.
    pub components: (usize, usize),
    /// Inclusive range of words per component (a final period is added).
    pub tokens: (usize, usize),
    /// Probability that a component gets one outgoing link.
    pub link_rate: f64,
    /// Maximum |distance| between linked components.
    pub link_window: usize,
    pub paragraph_break: f64,
    pub section_break: f64,
    /// Probability that a component is written with a non-argumentative gap.
    pub discontinuous_rate: f64,
    pub shared_vocab: usize,
    pub class_vocab: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            components: (4, 8),
            tokens: (3, 8),
            link_rate: 0.5,
            link_window: 3,
            paragraph_break: 0.25,
            section_break: 0.05,
            discontinuous_rate: 0.0,
            shared_vocab: 200,
            class_vocab: 30,
        }
    }
}

fn stem(label: &str) -> String {
    label
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Deterministic synthetic corpus. Every component opens with a word from
/// a class-specific lexicon and mixes in shared words, so component types
/// are learnable; link relations depend on the source class.
pub fn synth_corpus(seed: u64, n_docs: usize, schema: &CorpusSchema, cfg: &SynthConfig) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| synth_document(&mut rng, format!("synth-{seed}-{i:04}"), schema, cfg))
        .collect()
}

fn synth_document(rng: &mut ChaCha8Rng, doc_id: String, schema: &CorpusSchema, cfg: &SynthConfig) -> Document {
    let (cmin, cmax) = cfg.components;
    let (tmin, tmax) = cfg.tokens;
    let n = rng.random_range(cmin..=cmax.max(cmin));
    let mut text = String::from("# Section 1\n");
    let mut section = 1;
    let mut specs = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            if rng.random_bool(cfg.section_break) {
                section += 1;
                text.push_str(&format!("\n# Section {section}\n"));
            } else if rng.random_bool(cfg.paragraph_break) {
                text.push_str("\n\n");
            } else {
                text.push(' ');
            }
        }
        let class = rng.random_range(0..schema.n_components());
        classes.push(class);
        let len = rng.random_range(tmin..=tmax.max(tmin));
        let words: Vec<String> = (0..len.max(1))
            .map(|w| {
                if w == 0 || rng.random_bool(0.6) {
                    format!("{}{}", stem(&schema.component_classes[class]), rng.random_range(0..cfg.class_vocab))
                } else {
                    format!("w{}", rng.random_range(0..cfg.shared_vocab))
                }
            })
            .collect();
        let mut fragments = Vec::new();
        if words.len() >= 2 && rng.random_bool(cfg.discontinuous_rate) {
            let cut = rng.random_range(1..words.len());
            let start = text.len();
            text.push_str(&words[..cut].join(" "));
            fragments.push(Span::new(start, text.len()));
            text.push_str(" , filler ");
            let start = text.len();
            text.push_str(&words[cut..].join(" "));
            text.push('.');
            fragments.push(Span::new(start, text.len()));
        } else {
            let start = text.len();
            text.push_str(&words.join(" "));
            text.push('.');
            fragments.push(Span::new(start, text.len()));
        }
        specs.push(ComponentSpec {
            comp_id: format!("T{}", k + 1),
            fragments,
            comp_type: schema.component_classes[class].clone(),
            layout: None,
        });
    }

    let mut links: Vec<LinkAnnotation> = Vec::new();
    let linked = |links: &[LinkAnnotation], a: &str, b: &str| {
        links
            .iter()
            .any(|l| (l.source_id == a && l.target_id == b) || (l.source_id == b && l.target_id == a))
    };
    for a in 0..n {
        if !rng.random_bool(cfg.link_rate) {
            continue;
        }
        let lo = a.saturating_sub(cfg.link_window);
        let hi = (a + cfg.link_window).min(n - 1);
        let candidates: Vec<usize> = (lo..=hi)
            .filter(|&b| b != a && !linked(&links, &specs[a].comp_id, &specs[b].comp_id))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let b = candidates[rng.random_range(0..candidates.len())];
        links.push(LinkAnnotation {
            source_id: specs[a].comp_id.clone(),
            target_id: specs[b].comp_id.clone(),
            relation: schema.forward_relations[classes[a] % schema.n_forward()].clone(),
        });
    }
    Document::build(doc_id, text, specs, links).expect("synthetic documents satisfy every invariant")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{normalize_roundtrip, validate};

    fn schema() -> CorpusSchema {
        CorpusSchema::new(&["claim", "premise", "major claim"], &["supports", "attacks"]).unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_corpus(3, 5, &schema(), &cfg), synth_corpus(3, 5, &schema(), &cfg));
        assert_ne!(synth_corpus(3, 5, &schema(), &cfg), synth_corpus(4, 5, &schema(), &cfg));
        assert!(synth_corpus(3, 0, &schema(), &cfg).is_empty());
    }

    #[test]
    fn seed_7_corpus_is_valid() {
        let cfg = SynthConfig::default();
        let docs = synth_corpus(7, 16, &schema(), &cfg);
        assert_eq!(docs.len(), 16);
        for d in &docs {
            assert!(validate(d).is_empty(), "{:?}", validate(d));
            assert!((4..=8).contains(&d.components.len()));
            d.check_schema(&schema()).unwrap();
        }
    }

    #[test]
    fn discontinuous_components_round_trip() {
        let cfg = SynthConfig {
            discontinuous_rate: 0.5,
            ..SynthConfig::default()
        };
        let docs = synth_corpus(11, 8, &schema(), &cfg);
        assert!(docs.iter().any(|d| d.components.iter().any(|c| c.is_discontinuous())));
        for d in &docs {
            assert_eq!(&normalize_roundtrip(d).unwrap(), d);
        }
    }
}
