//! Label-level micro/macro F1 over given mentions, per-category breakdowns
//! and report emission.
//!
//! Mentions are fixed by the data, so "loose" matching reduces to comparing
//! the predicted label of each mention with its gold label.

use std::collections::HashMap;
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{InstanceId, LabelSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Labels that occur as gold or prediction, in label-set order.
    pub per_category: IndexMap<String, CategoryScore>,
    /// `(gold, predicted, count)`, sorted.
    pub confusion: Vec<(String, String, usize)>,
}

/// Which categories enter the macro average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MacroAverage {
    /// Categories with at least one gold instance.
    #[default]
    GoldPresent,
    /// Every label of the label set, absent ones scoring 0.
    AllLabels,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn evaluate(
    preds: &[(InstanceId, String)],
    golds: &[(InstanceId, String)],
    labels: &LabelSet,
) -> Result<EvalReport> {
    evaluate_with(preds, golds, labels, MacroAverage::default())
}

pub fn evaluate_with(
    preds: &[(InstanceId, String)],
    golds: &[(InstanceId, String)],
    labels: &LabelSet,
    averaging: MacroAverage,
) -> Result<EvalReport> {
    if golds.is_empty() && preds.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if preds.len() != golds.len() {
        return Err(Error::AlignmentMismatch(format!("{} predictions for {} gold instances", preds.len(), golds.len())));
    }
    let mut gold_of: HashMap<InstanceId, &str> = HashMap::with_capacity(golds.len());
    for (id, label) in golds {
        if !labels.contains(label) {
            return Err(Error::UnknownLabel(label.clone()));
        }
        if gold_of.insert(*id, label).is_some() {
            return Err(Error::AlignmentMismatch(format!("gold instance {id} listed twice")));
        }
    }

    let n = labels.len();
    let (mut tp, mut fp, mut fneg, mut support) = (vec![0usize; n], vec![0usize; n], vec![0usize; n], vec![0usize; n]);
    let mut predicted = vec![0usize; n];
    let mut confusion: HashMap<(usize, usize), usize> = HashMap::new();
    let mut seen = std::collections::HashSet::with_capacity(preds.len());
    for (id, pred) in preds {
        let gold = gold_of
            .get(id)
            .ok_or_else(|| Error::AlignmentMismatch(format!("prediction for unknown instance {id}")))?;
        if !seen.insert(*id) {
            return Err(Error::AlignmentMismatch(format!("instance {id} predicted twice")));
        }
        let p = labels.index_of(pred).ok_or_else(|| Error::UnknownLabel(pred.clone()))?;
        let g = labels.index_of(gold).expect("checked above");
        support[g] += 1;
        predicted[p] += 1;
        if p == g {
            tp[g] += 1;
        } else {
            fp[p] += 1;
            fneg[g] += 1;
        }
        *confusion.entry((g, p)).or_default() += 1;
    }

    let mut per_category = IndexMap::new();
    let mut macro_terms = Vec::new();
    for i in 0..n {
        let precision = ratio(tp[i], tp[i] + fp[i]);
        let recall = ratio(tp[i], tp[i] + fneg[i]);
        let f1 = harmonic(precision, recall);
        if support[i] > 0 || averaging == MacroAverage::AllLabels {
            macro_terms.push(f1);
        }
        if support[i] > 0 || predicted[i] > 0 {
            per_category.insert(labels.name(i).to_string(), CategoryScore { precision, recall, f1, support: support[i] });
        }
    }

    let (sum_tp, sum_fp, sum_fn): (usize, usize, usize) = (tp.iter().sum(), fp.iter().sum(), fneg.iter().sum());
    // Same value as the harmonic mean of micro precision and recall.
    let micro_f1 = ratio(2 * sum_tp, 2 * sum_tp + sum_fp + sum_fn);
    let macro_f1 = if macro_terms.is_empty() { 0.0 } else { macro_terms.iter().sum::<f64>() / macro_terms.len() as f64 };

    let mut confusion: Vec<(String, String, usize)> = confusion
        .into_iter()
        .map(|((g, p), c)| (labels.name(g).to_string(), labels.name(p).to_string(), c))
        .collect();
    confusion.sort();

    Ok(EvalReport { micro_f1, macro_f1, per_category, confusion })
}

/// `(label, f1)` sorted by descending F1; equal scores keep report order.
pub fn per_category_chart_data(report: &EvalReport) -> Vec<(String, f64)> {
    let mut series: Vec<(String, f64)> = report.per_category.iter().map(|(l, s)| (l.clone(), s.f1)).collect();
    series.sort_by(|a, b| b.1.total_cmp(&a.1));
    series
}

pub type ChartSeries = Vec<(String, f64)>;

/// Higher-scoring half first; the odd middle entry goes to the high half.
pub fn split_chart_halves(series: &[(String, f64)]) -> (ChartSeries, ChartSeries) {
    let mid = series.len().div_ceil(2);
    (series[..mid].to_vec(), series[mid..].to_vec())
}

pub fn chart_csv(series: &[(String, f64)]) -> String {
    let mut out = String::from("label,f1\n");
    for (label, f1) in series {
        if label.contains([',', '"']) {
            let _ = writeln!(out, "\"{}\",{f1}", label.replace('"', "\"\""));
        } else {
            let _ = writeln!(out, "{label},{f1}");
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

pub fn emit_report(report: &EvalReport, format: &str) -> Result<String> {
    match format.parse()? {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Text => Ok(text_table(report)),
    }
}

fn text_table(report: &EvalReport) -> String {
    let width = report.per_category.keys().map(String::len).max().unwrap_or(0).max("category".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "category", "precision", "recall", "f1", "support");
    for (label, _) in per_category_chart_data(report) {
        let s = &report.per_category[&label];
        let _ = writeln!(
            out,
            "{label:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
            s.precision, s.recall, s.f1, s.support
        );
    }
    let _ = writeln!(out, "micro-F1 {:.4}  macro-F1 {:.4}", report.micro_f1, report.macro_f1);
    out
}

impl EvalReport {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().map(|(_, _, c)| c).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(i: usize) -> InstanceId {
        InstanceId { sentence: i, start: 0, end: 0 }
    }

    fn pairs(labels: &[&str]) -> Vec<(InstanceId, String)> {
        labels.iter().enumerate().map(|(i, l)| (id(i), l.to_string())).collect()
    }

    fn worked_example() -> EvalReport {
        let labels = LabelSet::new(["A", "B"]).unwrap();
        evaluate(&pairs(&["A", "B", "B", "B"]), &pairs(&["A", "A", "B", "B"]), &labels).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let labels = LabelSet::new(["A", "B", "C"]).unwrap();
        let g = pairs(&["A", "B", "C", "A"]);
        let r = evaluate(&g, &g, &labels).unwrap();
        assert_eq!((r.micro_f1, r.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn hand_counted_example() {
        let r = worked_example();
        let a = &r.per_category["A"];
        let b = &r.per_category["B"];
        assert_eq!((a.precision, a.recall), (1.0, 0.5));
        assert!((a.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.precision - 2.0 / 3.0).abs() < 1e-12 && b.recall == 1.0);
        assert!((b.f1 - 0.8).abs() < 1e-12);
        assert_eq!(r.micro_f1, 0.75);
        assert!((r.macro_f1 - 0.7333333333333333).abs() < 1e-9);
        assert_eq!(r.total(), 4);
        assert_eq!(r.confusion, vec![("A".into(), "A".into(), 1), ("A".into(), "B".into(), 1), ("B".into(), "B".into(), 2)]);
    }

    #[test]
    fn never_predicted_category_pulls_macro_down() {
        let labels = LabelSet::new(["A", "B"]).unwrap();
        let r = evaluate(&pairs(&["A", "A"]), &pairs(&["A", "B"]), &labels).unwrap();
        assert_eq!(r.per_category["B"].f1, 0.0);
        assert!((r.macro_f1 - (2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn macro_averaging_modes() {
        let labels = LabelSet::new(["A", "B", "C"]).unwrap();
        let g = pairs(&["A", "B"]);
        let present = evaluate_with(&g, &g, &labels, MacroAverage::GoldPresent).unwrap();
        let all = evaluate_with(&g, &g, &labels, MacroAverage::AllLabels).unwrap();
        assert_eq!(present.macro_f1, 1.0);
        assert!((all.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(!present.per_category.contains_key("C"));
    }

    #[test]
    fn alignment_errors() {
        let labels = LabelSet::new(["A", "B"]).unwrap();
        let g = pairs(&["A", "B"]);
        assert!(matches!(evaluate(&pairs(&["A"]), &g, &labels), Err(Error::AlignmentMismatch(_))));
        let shifted: Vec<_> = g.iter().map(|(i, l)| (id(i.sentence + 5), l.clone())).collect();
        assert!(matches!(evaluate(&shifted, &g, &labels), Err(Error::AlignmentMismatch(_))));
        let twice = vec![g[0].clone(), g[0].clone()];
        assert!(matches!(evaluate(&twice, &g, &labels), Err(Error::AlignmentMismatch(_))));
        assert!(matches!(evaluate(&[], &[], &labels), Err(Error::EmptyEvaluation)));
        assert!(matches!(evaluate(&pairs(&["Z", "A"]), &g, &labels), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn chart_ordering() {
        let series = per_category_chart_data(&worked_example());
        assert_eq!(series[0].0, "B");
        assert!((series[0].1 - 0.8).abs() < 1e-12);
        assert_eq!(series[1].0, "A");
        assert!((series[1].1 - 0.667).abs() < 1e-3);

        let labels = LabelSet::new(["X", "Y", "Z"]).unwrap();
        let g = pairs(&["X", "Y", "Z"]);
        let uniform = evaluate(&g, &g, &labels).unwrap();
        let names: Vec<String> = per_category_chart_data(&uniform).into_iter().map(|(l, _)| l).collect();
        assert_eq!(names, ["X", "Y", "Z"]);
        let (hi, lo) = split_chart_halves(&per_category_chart_data(&uniform));
        assert_eq!((hi.len(), lo.len()), (2, 1));

        let empty = EvalReport { micro_f1: 0.0, macro_f1: 0.0, per_category: IndexMap::new(), confusion: vec![] };
        assert!(per_category_chart_data(&empty).is_empty());
        assert_eq!(chart_csv(&[("a,b".into(), 0.5)]), "label,f1\n\"a,b\",0.5\n");
    }

    #[test]
    fn report_emission() {
        let r = worked_example();
        let json = emit_report(&r, "json").unwrap();
        assert_eq!(EvalReport::from_json(&json).unwrap(), r);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert!(v["per_category"]["A"]["p"].is_number());
        assert_eq!(v["confusion"][0], serde_json::json!(["A", "A", 1]));

        let text = emit_report(&r, "text").unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 2 + 1);
        assert!(lines[1].starts_with('B'));
        assert!(lines[3].contains("micro-F1 0.7500"));

        assert!(matches!(emit_report(&r, "xml"), Err(Error::UnsupportedFormat(_))));
    }

    proptest::proptest! {
        #[test]
        fn micro_f1_is_accuracy_and_scores_are_bounded(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40),
        ) {
            let labels = LabelSet::new(["A", "B", "C", "D"]).unwrap();
            let golds: Vec<_> = pairs.iter().enumerate().map(|(i, (g, _))| (id(i), labels.name(*g).to_string())).collect();
            let preds: Vec<_> = pairs.iter().enumerate().map(|(i, (_, p))| (id(i), labels.name(*p).to_string())).collect();
            let r = evaluate(&preds, &golds, &labels).unwrap();
            let correct = pairs.iter().filter(|(g, p)| g == p).count();
            proptest::prop_assert_eq!(r.micro_f1, correct as f64 / pairs.len() as f64);
            proptest::prop_assert!((0.0..=1.0).contains(&r.macro_f1));
            proptest::prop_assert_eq!(r.total(), pairs.len());
            for s in r.per_category.values() {
                proptest::prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-12 && s.f1 >= s.precision.min(s.recall) - 1e-12);
            }
        }
    }
}
