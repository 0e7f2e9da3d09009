//! Evaluation metrics: macro/micro F1 reports, decision-threshold
//! sweeps, and per-group error breakdowns.

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::LabeledSample;
use crate::error::{Error, Result};

/// Precision/recall/F1 for one class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full evaluation summary over single-label predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class: Vec<ClassScores>,
    /// confusion[true_class][predicted_class], flattened row-major.
    pub confusion: Vec<usize>,
    pub n_classes: usize,
    pub n: usize,
}

impl EvalReport {
    pub fn confusion_at(&self, true_class: usize, predicted_class: usize) -> usize {
        self.confusion[true_class * self.n_classes + predicted_class]
    }

    /// Key-value CSV rendering (`metric,value`).
    pub fn csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut row = |k: String, v: String| {
            w.write_record([k, v])
                .map_err(|e| Error::Metrics(format!("writing report row: {e}")))
        };
        row("metric".into(), "value".into())?;
        row("macro_f1".into(), self.macro_f1.to_string())?;
        row("micro_f1".into(), self.micro_f1.to_string())?;
        row("n".into(), self.n.to_string())?;
        for (c, s) in self.per_class.iter().enumerate() {
            row(format!("precision_{c}"), s.precision.to_string())?;
            row(format!("recall_{c}"), s.recall.to_string())?;
            row(format!("f1_{c}"), s.f1.to_string())?;
        }
        csv_into_string(w)
    }

    /// Key-value CSV export (`metric,value`).
    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path.as_ref(), &self.csv_string()?)
    }
}

fn csv_into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes =
        w.into_inner().map_err(|e| Error::Metrics(format!("finishing csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Metrics(format!("csv is not utf-8: {e}")))
}

fn write_csv(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> ClassScores {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores { precision, recall, f1 }
}

/// Score single-label predictions over an explicit number of classes.
/// Classes that never occur still enter the macro average with F1 = 0.
pub fn f1_report_n(predictions: &[u32], labels: &[u32], n_classes: usize) -> Result<EvalReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Metrics(format!(
            "length mismatch: {} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Metrics("empty input".into()));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c as usize >= n_classes) {
        return Err(Error::Metrics(format!(
            "class id {bad} out of range for {n_classes} classes"
        )));
    }
    let n = predictions.len();
    let mut confusion = vec![0usize; n_classes * n_classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        confusion[t as usize * n_classes + p as usize] += 1;
    }
    let mut per_class = Vec::with_capacity(n_classes);
    let (mut tp_total, mut fp_total, mut fn_total) = (0usize, 0usize, 0usize);
    for c in 0..n_classes {
        let tp = confusion[c * n_classes + c];
        let fp: usize = (0..n_classes).filter(|&t| t != c).map(|t| confusion[t * n_classes + c]).sum();
        let fn_: usize =
            (0..n_classes).filter(|&p| p != c).map(|p| confusion[c * n_classes + p]).sum();
        per_class.push(f1_from_counts(tp, fp, fn_));
        tp_total += tp;
        fp_total += fp;
        fn_total += fn_;
    }
    let macro_f1 = per_class.iter().map(|s| s.f1).sum::<f64>() / n_classes as f64;
    let micro = f1_from_counts(tp_total, fp_total, fn_total);
    Ok(EvalReport { macro_f1, micro_f1: micro.f1, per_class, confusion, n_classes, n })
}

/// Score predictions, inferring the class count from the data (at least
/// two classes, so an all-human batch still averages over both).
pub fn f1_report(predictions: &[u32], labels: &[u32]) -> Result<EvalReport> {
    let max_id = predictions.iter().chain(labels).copied().max().unwrap_or(0) as usize;
    f1_report_n(predictions, labels, (max_id + 1).max(2))
}

/// Macro-F1 as a function of the binary decision threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCurve {
    /// (τ, macro-F1) in grid order.
    pub points: Vec<(f64, f64)>,
    /// Smallest τ achieving the maximum macro-F1.
    pub tau_star: f64,
    /// Macro-F1 at `tau_star`.
    pub best_macro_f1: f64,
}

impl ThresholdCurve {
    /// Curve value at the grid point nearest to `tau` (within 1e-9).
    pub fn macro_at(&self, tau: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|(t, _)| (t - tau).abs() < 1e-9)
            .map(|&(_, f)| f)
    }

    /// CSV rendering with header `tau,macro_f1`.
    pub fn csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["tau", "macro_f1"])
            .map_err(|e| Error::Metrics(format!("writing curve header: {e}")))?;
        for &(tau, f1) in &self.points {
            w.write_record([tau.to_string(), f1.to_string()])
                .map_err(|e| Error::Metrics(format!("writing curve row: {e}")))?;
        }
        csv_into_string(w)
    }

    /// CSV export with header `tau,macro_f1`.
    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path.as_ref(), &self.csv_string()?)
    }
}

/// Default sweep grid: 0.50, 0.51, …, 0.99.
pub fn default_threshold_grid() -> Vec<f64> {
    (50..=99).map(|i| i as f64 / 100.0).collect()
}

/// Evaluate binary macro-F1 across a threshold grid. A sample is
/// predicted machine iff `p_machine >= τ`.
pub fn threshold_sweep(
    p_machine: &[f64],
    labels: &[u32],
    grid: &[f64],
) -> Result<ThresholdCurve> {
    if p_machine.len() != labels.len() {
        return Err(Error::Metrics(format!(
            "length mismatch: {} probabilities vs {} labels",
            p_machine.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = p_machine.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Metrics(format!("probability {bad} outside [0, 1]")));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Metrics("threshold grid must be strictly increasing".into()));
    }
    if grid[0] <= 0.0 || grid[grid.len() - 1] >= 1.0 {
        return Err(Error::Metrics("threshold grid must lie inside (0, 1)".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &tau in grid {
        let preds: Vec<u32> = p_machine.iter().map(|&p| u32::from(p >= tau)).collect();
        let macro_f1 = f1_report_n(&preds, labels, 2)?.macro_f1;
        points.push((tau, macro_f1));
        let improves = match best {
            None => true,
            Some((_, best_f1)) => macro_f1 > best_f1,
        };
        if improves {
            best = Some((tau, macro_f1));
        }
    }
    let (tau_star, best_macro_f1) = best.expect("non-empty grid");
    Ok(ThresholdCurve { points, tau_star, best_macro_f1 })
}

/// Which sample field defines the grouping of a breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    Generator,
    Source,
    SubSource,
}

impl GroupKey {
    fn of(self, sample: &LabeledSample) -> String {
        match self {
            GroupKey::Generator => {
                sample.generator.clone().unwrap_or_else(|| "unknown".to_string())
            }
            GroupKey::Source => sample.source.name().to_string(),
            GroupKey::SubSource => sample.sub_source.clone(),
        }
    }
}

/// One row of a [`GroupBreakdown`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRow {
    pub key: String,
    pub correct: usize,
    pub incorrect: usize,
    /// Group size as a fraction of the evaluated set.
    pub share: f64,
    /// incorrect / group size.
    pub pct_incorrect: f64,
}

/// Correct/incorrect counts per group, largest group first.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBreakdown {
    pub rows: Vec<GroupRow>,
    pub n: usize,
}

impl GroupBreakdown {
    /// CSV rendering with header `key,correct,incorrect,share,pct_incorrect`.
    pub fn csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["key", "correct", "incorrect", "share", "pct_incorrect"])
            .map_err(|e| Error::Metrics(format!("writing breakdown header: {e}")))?;
        for r in &self.rows {
            w.write_record([
                r.key.clone(),
                r.correct.to_string(),
                r.incorrect.to_string(),
                r.share.to_string(),
                r.pct_incorrect.to_string(),
            ])
            .map_err(|e| Error::Metrics(format!("writing breakdown row: {e}")))?;
        }
        csv_into_string(w)
    }

    /// CSV export with header `key,correct,incorrect,share,pct_incorrect`.
    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path.as_ref(), &self.csv_string()?)
    }
}

/// Group prediction outcomes by a sample field. Output is sorted by
/// group size descending, ties by key ascending.
pub fn group_breakdown(
    predictions: &[u32],
    labels: &[u32],
    samples: &[LabeledSample],
    key: GroupKey,
) -> Result<GroupBreakdown> {
    if predictions.len() != labels.len() || predictions.len() != samples.len() {
        return Err(Error::Metrics(format!(
            "length mismatch: {} predictions, {} labels, {} samples",
            predictions.len(),
            labels.len(),
            samples.len()
        )));
    }
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((&p, &t), s) in predictions.iter().zip(labels).zip(samples) {
        let entry = groups.entry(key.of(s)).or_insert((0, 0));
        if p == t {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }
    let n = predictions.len();
    let mut rows: Vec<GroupRow> = groups
        .into_iter()
        .map(|(key, (correct, incorrect))| {
            let size = correct + incorrect;
            GroupRow {
                key,
                correct,
                incorrect,
                share: size as f64 / n as f64,
                pct_incorrect: incorrect as f64 / size as f64,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let size_a = a.correct + a.incorrect;
        let size_b = b.correct + b.incorrect;
        size_b.cmp(&size_a).then_with(|| a.key.cmp(&b.key))
    });
    Ok(GroupBreakdown { rows, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Source};
    use crate::rng::Rng;

    #[test]
    fn hand_computed_binary_report() {
        let report = f1_report(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        assert!((report.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.per_class[1].f1 - 0.8).abs() < 1e-12);
        assert!((report.macro_f1 - 0.7333333333333334).abs() < 1e-9);
        assert_eq!(report.confusion_at(0, 1), 1);
        assert_eq!(report.confusion.iter().sum::<usize>(), report.n);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let report = f1_report(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(report.macro_f1, 1.0);
        assert_eq!(report.micro_f1, 1.0);
    }

    #[test]
    fn micro_f1_equals_accuracy_on_random_binary_cases() {
        let mut rng = Rng::new(19);
        for _ in 0..100 {
            let n = 1 + rng.below(40) as usize;
            let labels: Vec<u32> = (0..n).map(|_| rng.below(2) as u32).collect();
            let preds: Vec<u32> = (0..n).map(|_| rng.below(2) as u32).collect();
            let report = f1_report(&preds, &labels).unwrap();
            let accuracy =
                preds.iter().zip(&labels).filter(|(p, t)| p == t).count() as f64 / n as f64;
            assert!((report.micro_f1 - accuracy).abs() < 1e-12);
        }
    }

    #[test]
    fn absent_class_still_counts_in_macro() {
        // all-human labels and predictions: class 1 has F1=0 by convention
        let report = f1_report(&[0, 0, 0], &[0, 0, 0]).unwrap();
        assert_eq!(report.n_classes, 2);
        assert_eq!(report.per_class[1].f1, 0.0);
        assert!((report.macro_f1 - 0.5).abs() < 1e-12);
        assert_eq!(report.micro_f1, 1.0);
    }

    #[test]
    fn macro_is_symmetric_under_class_permutation() {
        let mut rng = Rng::new(5);
        let perm = [2u32, 0, 1];
        for _ in 0..50 {
            let n = 3 + rng.below(30) as usize;
            let labels: Vec<u32> = (0..n).map(|_| rng.below(3) as u32).collect();
            let preds: Vec<u32> = (0..n).map(|_| rng.below(3) as u32).collect();
            let a = f1_report_n(&preds, &labels, 3).unwrap().macro_f1;
            let pl: Vec<u32> = labels.iter().map(|&c| perm[c as usize]).collect();
            let pp: Vec<u32> = preds.iter().map(|&c| perm[c as usize]).collect();
            let b = f1_report_n(&pp, &pl, 3).unwrap().macro_f1;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn report_rejects_bad_input() {
        assert!(f1_report(&[0], &[0, 1]).is_err());
        assert!(f1_report(&[], &[]).is_err());
        assert!(f1_report_n(&[3], &[0], 2).is_err());
    }

    #[test]
    fn sweep_hand_case() {
        let probs = [0.95, 0.80, 0.10, 0.60];
        let labels = [1, 1, 0, 0];
        let curve = threshold_sweep(&probs, &labels, &default_threshold_grid()).unwrap();
        let third = 0.7333333333333334;
        assert!((curve.macro_at(0.5).unwrap() - third).abs() < 1e-9);
        assert!((curve.macro_at(0.9).unwrap() - third).abs() < 1e-9);
        // between 0.61 and 0.80 the predictions are exactly right
        assert_eq!(curve.macro_at(0.7).unwrap(), 1.0);
        assert_eq!(curve.tau_star, 0.61);
        assert_eq!(curve.best_macro_f1, 1.0);
    }

    #[test]
    fn sweep_on_separable_probs_is_constant_one() {
        let probs = [1.0, 1.0, 0.0, 0.0];
        let labels = [1, 1, 0, 0];
        let curve = threshold_sweep(&probs, &labels, &default_threshold_grid()).unwrap();
        assert!(curve.points.iter().all(|&(_, f)| f == 1.0));
        assert_eq!(curve.tau_star, 0.50);
    }

    #[test]
    fn sweep_max_dominates_tau_half_and_matches_argmax_eval() {
        let mut rng = Rng::new(23);
        for _ in 0..25 {
            let n = 8 + rng.below(40) as usize;
            let labels: Vec<u32> = (0..n).map(|_| rng.below(2) as u32).collect();
            let probs: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            let curve = threshold_sweep(&probs, &labels, &default_threshold_grid()).unwrap();
            let at_half = curve.macro_at(0.5).unwrap();
            assert!(curve.best_macro_f1 >= at_half - 1e-15);
            // τ=0.5 equals plain argmax evaluation of the two-class probs
            let argmax_preds: Vec<u32> = probs.iter().map(|&p| u32::from(p >= 0.5)).collect();
            let direct = f1_report_n(&argmax_preds, &labels, 2).unwrap().macro_f1;
            assert!((at_half - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn sweep_validates_input() {
        assert!(threshold_sweep(&[1.5], &[1], &default_threshold_grid()).is_err());
        assert!(threshold_sweep(&[0.5], &[1, 0], &default_threshold_grid()).is_err());
        assert!(threshold_sweep(&[0.5], &[1], &[0.9, 0.5]).is_err());
        assert!(threshold_sweep(&[0.5], &[1], &[0.0, 0.5]).is_err());
    }

    fn sample(id: &str, source: &str, generator: Option<&str>) -> LabeledSample {
        LabeledSample {
            id: id.into(),
            text: "x".into(),
            label: Label::Human,
            source: Source::parse(source),
            sub_source: "unknown".into(),
            generator: generator.map(String::from),
        }
    }

    #[test]
    fn breakdown_counts_and_ordering() {
        // source A: 10 samples, 1 wrong (10%); source B: 4 samples, 2 wrong (50%)
        let mut samples = Vec::new();
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            samples.push(sample(&format!("a{i}"), "A", None));
            labels.push(0);
            preds.push(u32::from(i == 0));
        }
        for i in 0..4 {
            samples.push(sample(&format!("b{i}"), "B", None));
            labels.push(0);
            preds.push(u32::from(i < 2));
        }
        let bd = group_breakdown(&preds, &labels, &samples, GroupKey::Source).unwrap();
        assert_eq!(bd.rows.len(), 2);
        assert_eq!(bd.rows[0].key, "A");
        assert_eq!(bd.rows[0].correct, 9);
        assert_eq!(bd.rows[0].incorrect, 1);
        assert!((bd.rows[0].pct_incorrect - 0.1).abs() < 1e-12);
        assert_eq!(bd.rows[1].key, "B");
        assert!((bd.rows[1].pct_incorrect - 0.5).abs() < 1e-12);
        let total: usize = bd.rows.iter().map(|r| r.correct + r.incorrect).sum();
        assert_eq!(total, bd.n);
        assert!((bd.rows.iter().map(|r| r.share).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn breakdown_all_correct_and_missing_generator() {
        let samples = vec![sample("a", "A", Some("gpt")), sample("b", "A", None)];
        let bd = group_breakdown(&[0, 0], &[0, 0], &samples, GroupKey::Generator).unwrap();
        assert!(bd.rows.iter().all(|r| r.incorrect == 0 && r.pct_incorrect == 0.0));
        assert!(bd.rows.iter().any(|r| r.key == "unknown"));
    }

    #[test]
    fn csv_exports_are_readable() {
        let dir = tempfile::tempdir().unwrap();
        let report = f1_report(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap();
        let rp = dir.path().join("report.csv");
        report.to_csv(&rp).unwrap();
        let text = std::fs::read_to_string(&rp).unwrap();
        assert!(text.starts_with("metric,value\n"));
        assert!(text.contains("macro_f1,0.73333333"));

        let curve =
            threshold_sweep(&[0.9, 0.1], &[1, 0], &default_threshold_grid()).unwrap();
        let cp = dir.path().join("curve.csv");
        curve.to_csv(&cp).unwrap();
        let text = std::fs::read_to_string(&cp).unwrap();
        assert!(text.starts_with("tau,macro_f1\n"));
        assert_eq!(text.lines().count(), 51);
    }
}
