//! Evaluation scores: per-class / macro / micro F1, confusion matrices,
//! token-level projection and nominal Krippendorff's alpha.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold count.
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// `confusion[gold][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

/// Scores of the positive class of a binary task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Usage(format!("{a} predictions for {b} gold labels")));
    }
    Ok(())
}

/// `matrix[g][p]` counts instances of gold class `g` predicted as `p`.
pub fn confusion(preds: &[usize], gold: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    check_lengths(preds.len(), gold.len())?;
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &g) in preds.iter().zip(gold) {
        if p >= n_classes || g >= n_classes {
            return Err(Error::Usage(format!("label {} outside {n_classes} classes", p.max(g))));
        }
        m[g][p] += 1;
    }
    Ok(m)
}

/// Per-class, macro and micro scores over the label indices of `classes`.
pub fn f1_suite<S: AsRef<str>>(preds: &[usize], gold: &[usize], classes: &[S]) -> Result<MetricsReport> {
    let confusion = confusion(preds, gold, classes.len())?;
    let n = classes.len();
    let mut per_class = Vec::with_capacity(n);
    for (c, label) in classes.iter().enumerate() {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        per_class.push(ClassScores {
            label: label.as_ref().to_string(),
            precision,
            recall,
            f1: f1_of(precision, recall),
            support,
            predicted,
        });
    }
    let macro_f1 = if n == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / n as f64
    };
    // Single-label multi-class: pooled precision = pooled recall = accuracy.
    let correct: usize = (0..n).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        per_class,
        macro_f1,
        micro_f1: ratio(correct, preds.len()),
        confusion,
        total: preds.len(),
    })
}

/// F1 of the positive class.
pub fn binary_scores(preds: &[bool], gold: &[bool]) -> Result<BinaryScores> {
    check_lengths(preds.len(), gold.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in preds.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(BinaryScores {
        precision,
        recall,
        f1: f1_of(precision, recall),
        tp,
        fp,
        fn_,
    })
}

/// Expands component-level labels to one label per token.
pub fn token_project(preds: &[usize], gold: &[usize], lengths: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    check_lengths(preds.len(), gold.len())?;
    check_lengths(preds.len(), lengths.len())?;
    let mut p_out = Vec::new();
    let mut g_out = Vec::new();
    for ((&p, &g), &n) in preds.iter().zip(gold).zip(lengths) {
        p_out.extend(std::iter::repeat_n(p, n));
        g_out.extend(std::iter::repeat_n(g, n));
    }
    Ok((p_out, g_out))
}

/// Nominal Krippendorff's alpha over `ratings[rater][item]`, every rater
/// labelling every item.
///
/// With complete data each item contributes `N(N-1)` ordered value pairs
/// weighted `1/(N-1)`, so the coincidence marginals are the raw label
/// frequencies and alpha reduces to
/// `1 - (n-1)·D / ((N-1)·(n² - Σ n_c²))` with `D` the number of
/// disagreeing ordered pairs. Returns 1 when no disagreement is expected.
pub fn krippendorff_alpha(ratings: &[Vec<usize>]) -> Result<f64> {
    let raters = ratings.len();
    if raters < 2 {
        return Err(Error::Usage("alpha needs at least two raters".into()));
    }
    let items = ratings[0].len();
    if items == 0 || ratings.iter().any(|r| r.len() != items) {
        return Err(Error::Usage("alpha needs a complete, non-empty rating matrix".into()));
    }
    let n_classes = ratings.iter().flatten().max().map_or(0, |m| m + 1);
    let mut freq = vec![0u64; n_classes];
    let mut disagreeing: u64 = 0;
    let mut counts = vec![0u64; n_classes];
    for item in 0..items {
        counts.iter_mut().for_each(|c| *c = 0);
        for r in ratings {
            counts[r[item]] += 1;
        }
        let same: u64 = counts.iter().map(|c| c * c.saturating_sub(1)).sum();
        let m = raters as u64;
        disagreeing += m * (m - 1) - same;
        for (f, c) in freq.iter_mut().zip(&counts) {
            *f += c;
        }
    }
    let n = (raters * items) as f64;
    let expected = n * n - freq.iter().map(|&f| (f * f) as f64).sum::<f64>();
    if expected == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * disagreeing as f64 / ((raters - 1) as f64 * expected))
}

/// Alpha per task across ensemble members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_models: usize,
    pub component: f64,
    pub link: f64,
    pub relation: f64,
}

/// Scores of one evaluated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub components: MetricsReport,
    pub link: BinaryScores,
    pub relations: MetricsReport,
    /// Mean of the component macro F1 and the link F1.
    pub average: f64,
    /// Component scores after token projection, when computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_components: Option<MetricsReport>,
}

impl EvaluationReport {
    pub fn new(components: MetricsReport, link: BinaryScores, relations: MetricsReport) -> Self {
        let average = (components.macro_f1 + link.f1) / 2.0;
        EvaluationReport {
            components,
            link,
            relations,
            average,
            token_components: None,
        }
    }
}

fn pct(v: f64) -> String {
    format!("{:6.2}", 100.0 * v)
}

fn push_class_rows(out: &mut String, title: &str, r: &MetricsReport) {
    let _ = writeln!(out, "{title}");
    for c in &r.per_class {
        let name = format!("{} ({})", c.label, c.support);
        let _ = writeln!(out, "  {:<28} {}", name, pct(c.f1));
    }
    let _ = writeln!(out, "  {:<28} {}", "macro", pct(r.macro_f1));
    let _ = writeln!(out, "  {:<28} {}", "micro", pct(r.micro_f1));
}

/// Plain-text F1 table (percentages).
pub fn render_text(report: &EvaluationReport) -> String {
    let mut out = String::new();
    push_class_rows(&mut out, "Components", &report.components);
    if let Some(t) = &report.token_components {
        push_class_rows(&mut out, "Components (tokens)", t);
    }
    let _ = writeln!(out, "Link");
    let _ = writeln!(
        out,
        "  {:<28} {}",
        format!("link ({})", report.link.tp + report.link.fn_),
        pct(report.link.f1)
    );
    push_class_rows(&mut out, "Relations", &report.relations);
    let _ = writeln!(out, "Average (link and components)");
    let _ = writeln!(out, "  {:<28} {}", "average", pct(report.average));
    out
}

/// Confusion matrix as CSV with a header row of predicted labels.
pub fn confusion_csv(report: &MetricsReport) -> String {
    let mut out = String::from("gold\\pred");
    for c in &report.per_class {
        out.push(',');
        out.push_str(&c.label);
    }
    out.push('\n');
    for (c, row) in report.per_class.iter().zip(&report.confusion) {
        out.push_str(&c.label);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Alpha straight from the coincidence-matrix definition.
    fn alpha_oracle(ratings: &[Vec<usize>]) -> f64 {
        let k = ratings.iter().flatten().max().unwrap() + 1;
        let mut o = vec![vec![0.0; k]; k];
        let m = ratings.len();
        for u in 0..ratings[0].len() {
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        o[ratings[i][u]][ratings[j][u]] += 1.0 / (m as f64 - 1.0);
                    }
                }
            }
        }
        let nc: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
        let n: f64 = nc.iter().sum();
        let (mut dobs, mut dexp) = (0.0, 0.0);
        for c in 0..k {
            for kk in 0..k {
                if c != kk {
                    dobs += o[c][kk];
                    dexp += nc[c] * nc[kk];
                }
            }
        }
        if dexp == 0.0 {
            return 1.0;
        }
        1.0 - (n - 1.0) * dobs / dexp
    }

    #[test]
    fn alpha_small_example() {
        let r = vec![vec![0, 0, 1, 1], vec![0, 1, 1, 0]];
        let a = krippendorff_alpha(&r).unwrap();
        assert!((a - 0.125).abs() < 1e-12, "{a}");
        assert!((alpha_oracle(&r) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn alpha_perfect_and_degenerate() {
        let r = vec![vec![0, 1, 2], vec![0, 1, 2], vec![0, 1, 2]];
        assert_eq!(krippendorff_alpha(&r).unwrap(), 1.0);
        assert_eq!(krippendorff_alpha(&[vec![1, 1], vec![1, 1]]).unwrap(), 1.0);
        assert!(krippendorff_alpha(&[vec![0]]).is_err());
    }

    #[test]
    fn binary_closed_form() {
        let s = binary_scores(&[true, true, false], &[true, false, true]).unwrap();
        assert!((s.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn confusion_single_off_diagonal() {
        let m = confusion(&[3], &[0], 5).unwrap();
        assert_eq!(m[0][3], 1);
        assert_eq!(m.iter().flatten().sum::<usize>(), 1);
        assert!(confusion(&[5], &[0], 5).is_err());
    }

    #[test]
    fn projection_counts() {
        let (p, g) = token_project(&[0, 1], &[0, 0], &[3, 2]).unwrap();
        let acc = p.iter().zip(&g).filter(|(a, b)| a == b).count();
        assert_eq!((p.len(), acc), (5, 3));
        let (p, g) = token_project(&[1, 1], &[0, 1], &[3, 2]).unwrap();
        assert_eq!(p.iter().zip(&g).filter(|(a, b)| a == b).count(), 2);
    }

    #[test]
    fn text_and_csv_render() {
        let r = f1_suite(&[0, 1], &[0, 1], &["A", "B"]).unwrap();
        let e = EvaluationReport::new(r.clone(), binary_scores(&[true], &[true]).unwrap(), r);
        assert!(render_text(&e).contains("macro"));
        assert_eq!(confusion_csv(&e.components), "gold\\pred,A,B\nA,1,0\nB,0,1\n");
    }

    proptest! {
        #[test]
        fn alpha_matches_oracle_and_relabeling(
            raters in 2usize..5,
            ratings in prop::collection::vec(prop::collection::vec(0usize..3, 6), 5),
            perm in Just([2usize, 0, 1]),
        ) {
            let r: Vec<Vec<usize>> = ratings.into_iter().take(raters).collect();
            let a = krippendorff_alpha(&r).unwrap();
            prop_assert!((a - alpha_oracle(&r)).abs() < 1e-9);
            prop_assert!(a <= 1.0 + 1e-12);
            let relabeled: Vec<Vec<usize>> = r.iter().map(|row| row.iter().map(|&v| perm[v]).collect()).collect();
            prop_assert!((a - krippendorff_alpha(&relabeled).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn macro_is_mean_and_rows_match_gold(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        ) {
            let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let r = f1_suite(&p, &g, &["a", "b", "c", "d"]).unwrap();
            let mean = r.per_class.iter().map(|c| c.f1).sum::<f64>() / 4.0;
            prop_assert_eq!(r.macro_f1, mean);
            for (c, row) in r.confusion.iter().enumerate() {
                prop_assert_eq!(row.iter().sum::<usize>(), g.iter().filter(|&&x| x == c).count());
            }
            let trace: usize = (0..4).map(|c| r.confusion[c][c]).sum();
            prop_assert!((r.micro_f1 - trace as f64 / p.len() as f64).abs() < 1e-12);
            prop_assert!(r.per_class.iter().all(|c| (0.0..=1.0).contains(&c.f1)));
        }

        #[test]
        fn projection_conserves_mass(
            comps in prop::collection::vec((0usize..3, 0usize..3, 1usize..7), 0..20),
        ) {
            let p: Vec<usize> = comps.iter().map(|c| c.0).collect();
            let g: Vec<usize> = comps.iter().map(|c| c.1).collect();
            let l: Vec<usize> = comps.iter().map(|c| c.2).collect();
            let (tp, tg) = token_project(&p, &g, &l).unwrap();
            prop_assert_eq!(tp.len(), l.iter().sum::<usize>());
            prop_assert_eq!(tg.len(), tp.len());
        }
    }
}
