//! Majority voting over ensemble members and component-label resolution.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSchema, RelationLabel};
use crate::dataset::{PairDataset, PairKey};
use crate::metrics::{binary_scores, f1_suite, krippendorff_alpha, token_project, AgreementReport, EvaluationReport};
use crate::neural::{HeadPrediction, Model};
use crate::{Error, Result};

/// How a single model's link decision is derived.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkRule {
    /// Link iff the voted (collapsed) relation is a forward type.
    #[default]
    RelationArgmax,
    /// Majority of members with `p_link > 0.5`.
    Threshold,
}

/// Modal label among `labels`; ties go to the lowest class index.
pub fn vote(labels: &[usize]) -> Result<usize> {
    let n = labels.iter().max().ok_or_else(|| Error::Usage("vote over no labels".into()))? + 1;
    let mut counts = vec![0usize; n];
    for &l in labels {
        counts[l] += 1;
    }
    let best = *counts.iter().max().expect("non-empty");
    Ok(counts.iter().position(|&c| c == best).expect("max exists"))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Averages probability vectors and returns `(argmax, mean)`. Each class
/// is summed in sorted order so the result does not depend on the order
/// of `occurrences`.
pub fn resolve_component(occurrences: &[&[f64]]) -> Result<(usize, Vec<f64>)> {
    let first = occurrences
        .first()
        .ok_or_else(|| Error::Data("component occurs in no pair".into()))?;
    let k = first.len();
    if occurrences.iter().any(|o| o.len() != k) {
        return Err(Error::Usage("probability vectors of different lengths".into()));
    }
    let mut mean = Vec::with_capacity(k);
    let mut column = Vec::with_capacity(occurrences.len());
    for c in 0..k {
        column.clear();
        column.extend(occurrences.iter().map(|o| o[c]));
        column.sort_by(f64::total_cmp);
        mean.push(column.iter().sum::<f64>() / occurrences.len() as f64);
    }
    Ok((argmax(&mean), mean))
}

/// Collapsed relation index (forward types, then `None`) of one prediction.
pub fn collapsed_relation(pred: &HeadPrediction, n_forward: usize) -> usize {
    let label = RelationLabel::from_index(argmax(&pred.p_relation), n_forward).expect("head spans the domain");
    match label.collapse() {
        RelationLabel::Forward(i) => i,
        _ => n_forward,
    }
}

fn model_link(pred: &HeadPrediction, n_forward: usize, rule: LinkRule) -> bool {
    match rule {
        LinkRule::RelationArgmax => collapsed_relation(pred, n_forward) < n_forward,
        LinkRule::Threshold => pred.p_link > 0.5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVote {
    pub doc_id: String,
    pub source_id: String,
    pub target_id: String,
    pub link_vote: bool,
    pub relation_vote: String,
    /// Position of `relation_vote` in the collapsed domain.
    pub relation_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_model_probs: Option<Vec<HeadPrediction>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentVote {
    pub doc_id: String,
    pub comp_id: String,
    pub label: String,
    pub label_index: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub pairs: Vec<PairVote>,
    pub components: Vec<ComponentVote>,
}

type ComponentKey = (String, String);

fn occurrences<'a>(
    keys: &[PairKey],
    per_model: impl IntoIterator<Item = &'a Vec<HeadPrediction>>,
) -> BTreeMap<ComponentKey, Vec<&'a [f64]>> {
    let mut occ: BTreeMap<ComponentKey, Vec<&[f64]>> = BTreeMap::new();
    for preds in per_model {
        for (k, p) in keys.iter().zip(preds) {
            occ.entry((k.doc_id.clone(), k.source_id.clone()))
                .or_default()
                .push(&p.p_source);
            occ.entry((k.doc_id.clone(), k.target_id.clone()))
                .or_default()
                .push(&p.p_target);
        }
    }
    occ
}

/// Combines `per_model[model][pair]` predictions for the pairs `keys`.
pub fn aggregate(
    keys: &[PairKey],
    per_model: &[Vec<HeadPrediction>],
    schema: &CorpusSchema,
    rule: LinkRule,
    keep_probs: bool,
) -> Result<EnsemblePrediction> {
    if per_model.is_empty() {
        return Err(Error::Usage("ensemble without members".into()));
    }
    if per_model.iter().any(|p| p.len() != keys.len()) {
        return Err(Error::Usage("member predictions do not cover every pair".into()));
    }
    let f = schema.n_forward();
    let collapsed = schema.collapsed_domain();
    let mut pairs = Vec::with_capacity(keys.len());
    for (i, k) in keys.iter().enumerate() {
        let relations: Vec<usize> = per_model.iter().map(|m| collapsed_relation(&m[i], f)).collect();
        let relation = vote(&relations)?;
        let link_vote = match rule {
            LinkRule::RelationArgmax => relation < f,
            LinkRule::Threshold => {
                let links: Vec<usize> = per_model
                    .iter()
                    .map(|m| usize::from(model_link(&m[i], f, rule)))
                    .collect();
                vote(&links)? == 1
            }
        };
        pairs.push(PairVote {
            doc_id: k.doc_id.clone(),
            source_id: k.source_id.clone(),
            target_id: k.target_id.clone(),
            link_vote,
            relation_vote: collapsed[relation].clone(),
            relation_index: relation,
            per_model_probs: keep_probs.then(|| per_model.iter().map(|m| m[i].clone()).collect()),
        });
    }
    let mut components = Vec::new();
    for ((doc_id, comp_id), occ) in occurrences(keys, per_model) {
        let (label_index, probs) = resolve_component(&occ)?;
        components.push(ComponentVote {
            doc_id,
            comp_id,
            label: schema.component_classes[label_index].clone(),
            label_index,
            probs,
        });
    }
    Ok(EnsemblePrediction { pairs, components })
}

/// Inference-mode predictions of one model over a whole dataset.
pub fn predict_dataset(model: &Model, data: &PairDataset, batch_size: usize) -> Result<Vec<HeadPrediction>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        out.extend(model.predict(&data.batch(chunk))?);
    }
    Ok(out)
}

/// Per-model predictions (in parallel) followed by [`aggregate`].
pub fn ensemble_predict(
    models: &[Model],
    data: &PairDataset,
    schema: &CorpusSchema,
    rule: LinkRule,
    keep_probs: bool,
) -> Result<(EnsemblePrediction, Vec<Vec<HeadPrediction>>)> {
    let first = models.first().ok_or_else(|| Error::Usage("ensemble without members".into()))?;
    if models.iter().any(|m| m.config != first.config) {
        return Err(Error::Config("ensemble members have different architectures".into()));
    }
    let per_model = models
        .par_iter()
        .map(|m| predict_dataset(m, data, 256))
        .collect::<Result<Vec<_>>>()?;
    let keys: Vec<PairKey> = data.pairs.iter().map(|p| p.key.clone()).collect();
    Ok((aggregate(&keys, &per_model, schema, rule, keep_probs)?, per_model))
}

/// Gold component classes and token counts keyed by component.
fn component_gold(data: &PairDataset) -> BTreeMap<ComponentKey, (usize, usize)> {
    let mut gold = BTreeMap::new();
    for p in &data.pairs {
        gold.entry((p.key.doc_id.clone(), p.key.source_id.clone()))
            .or_insert((p.gold.source, p.source.true_length));
        gold.entry((p.key.doc_id.clone(), p.key.target_id.clone()))
            .or_insert((p.gold.target, p.target.true_length));
    }
    gold
}

/// Scores an ensemble prediction against the gold labels of `data`.
/// Self pairs count for components only.
pub fn evaluate(pred: &EnsemblePrediction, data: &PairDataset, schema: &CorpusSchema) -> Result<EvaluationReport> {
    if pred.pairs.len() != data.len() {
        return Err(Error::Usage("prediction does not match the dataset".into()));
    }
    let gold = component_gold(data);
    let (mut cp, mut cg, mut lengths) = (Vec::new(), Vec::new(), Vec::new());
    for c in &pred.components {
        let &(g, len) = gold
            .get(&(c.doc_id.clone(), c.comp_id.clone()))
            .ok_or_else(|| Error::Data(format!("no gold label for {}/{}", c.doc_id, c.comp_id)))?;
        cp.push(c.label_index);
        cg.push(g);
        lengths.push(len);
    }
    let f = schema.n_forward();
    let (mut lp, mut lg, mut rp, mut rg) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (v, p) in pred.pairs.iter().zip(&data.pairs) {
        if p.is_self_pair {
            continue;
        }
        let gold_rel = match RelationLabel::from_index(p.gold.relation, f).map(RelationLabel::collapse) {
            Some(RelationLabel::Forward(i)) => i,
            _ => f,
        };
        lp.push(v.link_vote);
        lg.push(p.gold.link);
        rp.push(v.relation_index);
        rg.push(gold_rel);
    }
    let classes = &schema.component_classes;
    let mut report = EvaluationReport::new(
        f1_suite(&cp, &cg, classes)?,
        binary_scores(&lp, &lg)?,
        f1_suite(&rp, &rg, &schema.collapsed_domain())?,
    );
    let (tp, tg) = token_project(&cp, &cg, &lengths)?;
    report.token_components = Some(f1_suite(&tp, &tg, classes)?);
    Ok(report)
}

/// Krippendorff's alpha among ensemble members for components, links and
/// relations. Link and relation items are the non-self pairs.
pub fn agreement(
    keys: &[PairKey],
    self_pairs: &[bool],
    per_model: &[Vec<HeadPrediction>],
    n_forward: usize,
    rule: LinkRule,
) -> Result<AgreementReport> {
    let mut comp = Vec::new();
    let mut link = Vec::new();
    let mut rel = Vec::new();
    for preds in per_model {
        let occ = occurrences(keys, std::iter::once(preds));
        comp.push(
            occ.values()
                .map(|o| resolve_component(o).map(|r| r.0))
                .collect::<Result<Vec<_>>>()?,
        );
        let pairs = preds.iter().zip(self_pairs).filter(|(_, &s)| !s).map(|(p, _)| p);
        link.push(pairs.clone().map(|p| usize::from(model_link(p, n_forward, rule))).collect());
        rel.push(pairs.map(|p| collapsed_relation(p, n_forward)).collect());
    }
    Ok(AgreementReport {
        n_models: per_model.len(),
        component: krippendorff_alpha(&comp)?,
        link: krippendorff_alpha(&link)?,
        relation: krippendorff_alpha(&rel)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(src: &[f64], tgt: &[f64], rel: &[f64]) -> HeadPrediction {
        HeadPrediction::new(src.to_vec(), tgt.to_vec(), rel.to_vec(), 1)
    }

    fn key(s: &str, t: &str) -> PairKey {
        PairKey {
            doc_id: "d".into(),
            source_id: s.into(),
            target_id: t.into(),
        }
    }

    #[test]
    fn vote_examples() {
        assert_eq!(vote(&[0, 0, 0]).unwrap(), 0);
        assert_eq!(vote(&[1, 1, 1, 1, 1, 1, 0, 0, 0, 0]).unwrap(), 1);
        assert_eq!(vote(&[1, 0, 1, 0, 1, 0, 1, 0, 1, 0]).unwrap(), 0);
        assert!(vote(&[]).is_err());
    }

    #[test]
    fn resolve_examples() {
        assert_eq!(resolve_component(&[&[0.7, 0.3]]).unwrap().0, 0);
        let (c, m) = resolve_component(&[&[0.6, 0.4], &[0.2, 0.8]]).unwrap();
        assert_eq!(c, 1);
        assert!((m[0] - 0.4).abs() < 1e-12 && (m[1] - 0.6).abs() < 1e-12);
        assert!(resolve_component(&[]).is_err());
    }

    /// Three members, five pairs of a 2-class / 1-relation schema, votes
    /// tabulated by hand. Relation domain: [r, r_inv, None].
    #[test]
    fn hand_tabulated_votes() {
        let schema = CorpusSchema::new(&["a", "b"], &["r"]).unwrap();
        let keys = vec![key("1", "2"), key("2", "1"), key("1", "3"), key("3", "1"), key("2", "3")];
        let c = [0.5, 0.5];
        let r = [0.8, 0.1, 0.1];
        let inv = [0.1, 0.8, 0.1];
        let none = [0.1, 0.1, 0.8];
        let m1 = vec![pred(&c, &c, &r), pred(&c, &c, &inv), pred(&c, &c, &r), pred(&c, &c, &none), pred(&c, &c, &none)];
        let m2 = vec![pred(&c, &c, &r), pred(&c, &c, &r), pred(&c, &c, &none), pred(&c, &c, &none), pred(&c, &c, &r)];
        let m3 = vec![pred(&c, &c, &none), pred(&c, &c, &r), pred(&c, &c, &inv), pred(&c, &c, &none), pred(&c, &c, &r)];
        let e = aggregate(&keys, &[m1, m2, m3], &schema, LinkRule::RelationArgmax, false).unwrap();
        let links: Vec<bool> = e.pairs.iter().map(|p| p.link_vote).collect();
        assert_eq!(links, [true, true, false, false, true]);
        assert_eq!(e.pairs[2].relation_vote, "None");
        assert_eq!(e.components.len(), 3);
    }

    #[test]
    fn threshold_rule_counts_p_link() {
        let schema = CorpusSchema::new(&["a"], &["r"]).unwrap();
        let keys = vec![key("1", "2")];
        // argmax relation is None but p_link is 0.55 for two of three members
        let p = [0.55, 0.0, 0.45];
        let q = [0.1, 0.1, 0.8];
        let ms = vec![vec![pred(&[1.0], &[1.0], &p)], vec![pred(&[1.0], &[1.0], &p)], vec![pred(&[1.0], &[1.0], &q)]];
        let a = aggregate(&keys, &ms, &schema, LinkRule::Threshold, false).unwrap();
        assert!(a.pairs[0].link_vote);
        let b = aggregate(&keys, &ms, &schema, LinkRule::RelationArgmax, false).unwrap();
        assert!(b.pairs[0].link_vote);
    }
}
