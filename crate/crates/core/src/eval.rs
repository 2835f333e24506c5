//! Classification metrics over `(similarity, label)` scores.
//!
//! A score at or above the threshold is predicted positive. Precision is 0
//! when nothing is predicted positive, recall is 0 when there are no
//! positives, and F1 is 0 when precision + recall is 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2tp / (2tp + fp + fn)`.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(scores: &[(f64, i8)], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for &(s, label) in scores {
        match (s >= threshold, label > 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Mann-Whitney AUC with average ranks; ties count one half.
pub fn auc(scores: &[(f64, i8)]) -> Result<f64> {
    let n_pos = scores.iter().filter(|s| s.1 > 0).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut sorted: Vec<(f64, i8)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // ranks are 1-based; a tie group spanning [i, j) gets rank (i + j + 1) / 2
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        let pos_in_group = sorted[i..j].iter().filter(|s| s.1 > 0).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// ROC curve points `(fpr, tpr)` from the strictest threshold down.
pub fn roc_points(scores: &[(f64, i8)]) -> Result<Vec<(f64, f64)>> {
    let n_pos = scores.iter().filter(|s| s.1 > 0).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 > 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Whitespace-separated `fpr tpr` lines, readable by gnuplot.
pub fn roc_data_file(points: &[(f64, f64)]) -> String {
    let mut out = String::from("# fpr tpr\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x:.6} {y:.6}");
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridPreset {
    /// 0.50 to 0.95 in steps of 0.05.
    Paper,
    /// 0.05 to 0.95 in steps of 0.05.
    Extended,
}

impl GridPreset {
    pub fn values(self) -> Vec<f64> {
        let first = match self {
            GridPreset::Paper => 10,
            GridPreset::Extended => 1,
        };
        (first..=19).map(|k| k as f64 / 20.0).collect()
    }
}

impl std::str::FromStr for GridPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(GridPreset::Paper),
            "extended" => Ok(GridPreset::Extended),
            other => Err(Error::InvalidConfig(format!("unknown grid `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pattern: String,
    pub threshold: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub counts: Confusion,
}

impl EvalReport {
    pub fn new(pattern: &str, threshold: f64, counts: Confusion, auc: f64) -> Self {
        EvalReport {
            pattern: pattern.to_string(),
            threshold,
            accuracy: counts.accuracy(),
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            auc,
            counts,
        }
    }

    pub fn compute(pattern: &str, scores: &[(f64, i8)], threshold: f64) -> Result<Self> {
        Ok(EvalReport::new(pattern, threshold, confusion(scores, threshold), auc(scores)?))
    }
}

/// Aligned text table with the columns Pattern, Accuracy, Precision, Recall, F1, AUC.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "Pattern", "Accuracy", "Precision", "Recall", "F1", "AUC"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            r.pattern, r.accuracy, r.precision, r.recall, r.f1, r.auc
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<EvalReport>,
    /// Row with the highest F1, smallest threshold on ties.
    pub best: usize,
}

pub fn threshold_sweep(pattern: &str, scores: &[(f64, i8)], grid: &[f64]) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty threshold grid".into()));
    }
    let area = auc(scores)?;
    let rows: Vec<EvalReport> = grid
        .iter()
        .map(|&t| EvalReport::new(pattern, t, confusion(scores, t), area))
        .collect();
    let best = best_f1_row(&rows);
    Ok(Sweep { rows, best })
}

fn best_f1_row(rows: &[EvalReport]) -> usize {
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        let b = &rows[best];
        if r.f1 > b.f1 || (r.f1 == b.f1 && r.threshold < b.threshold) {
            best = i;
        }
    }
    best
}

impl Sweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pattern,threshold,accuracy,precision,recall,f1,auc,tp,fp,tn,fn,best\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.pattern,
                r.threshold,
                r.accuracy,
                r.precision,
                r.recall,
                r.f1,
                r.auc,
                r.counts.tp,
                r.counts.fp,
                r.counts.tn,
                r.counts.fn_,
                u8::from(i == self.best)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let c = confusion(&[(0.9, 1), (0.1, -1)], 0.5);
        assert_eq!(c, Confusion { tp: 1, fp: 0, tn: 1, fn_: 0 });
        let low = confusion(&[(0.1, 1), (0.2, -1), (0.3, 1)], 0.5);
        assert_eq!((low.tp, low.fp), (0, 0));
        assert_eq!(low.precision(), 0.0);
        assert_eq!(low.f1(), 0.0);
    }

    #[test]
    fn equality_counts_as_positive() {
        assert_eq!(confusion(&[(0.55, 1)], 0.55).tp, 1);
    }

    #[test]
    fn auc_extremes() {
        let separated = [(0.9, 1), (0.8, 1), (0.2, -1), (0.1, -1)];
        assert_eq!(auc(&separated).unwrap(), 1.0);
        let tied = [(0.5, 1), (0.5, -1), (0.5, 1), (0.5, -1)];
        assert_eq!(auc(&tied).unwrap(), 0.5);
        assert!(matches!(auc(&[(0.3, 1), (0.4, 1)]), Err(Error::DegenerateLabels)));
    }

    #[test]
    fn grids() {
        let paper = GridPreset::Paper.values();
        assert_eq!(paper.len(), 10);
        assert_eq!(paper[0], 0.5);
        assert_eq!(paper[1], 0.55);
        assert_eq!(paper[9], 0.95);
        let ext = GridPreset::Extended.values();
        assert_eq!(ext.len(), 19);
        assert_eq!(ext[0], 0.05);
    }

    #[test]
    fn single_point_sweep() {
        let s = threshold_sweep("leaf", &[(0.9, 1), (0.1, -1)], &[0.5]).unwrap();
        assert_eq!(s.rows.len(), 1);
        assert_eq!(s.best, 0);
        assert!(s.to_csv().lines().nth(1).unwrap().ends_with(",1"));
    }

    #[test]
    fn separable_scores_have_perfect_f1() {
        let scores = [(1.0, 1), (0.97, 1), (0.0, -1), (0.01, -1)];
        let s = threshold_sweep("root", &scores, &GridPreset::Paper.values()).unwrap();
        assert!(s.rows.iter().all(|r| r.f1 == 1.0));
        assert_eq!(s.best, 0);
    }

    #[test]
    fn report_json_schema() {
        let r = EvalReport::compute("leaf", &[(0.9, 1), (0.1, -1)], 0.55).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["pattern", "threshold", "accuracy", "precision", "recall", "f1", "auc", "counts"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["counts"]["fn"], 0);
        assert_eq!(v["counts"]["tp"], 1);
    }

    #[test]
    fn roc_ends_at_one_one() {
        let pts = roc_points(&[(0.9, 1), (0.5, -1), (0.5, 1), (0.1, -1)]).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert!(roc_data_file(&pts).starts_with("# fpr tpr\n0.000000 0.000000\n"));
    }
}
