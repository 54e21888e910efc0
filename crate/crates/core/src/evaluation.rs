//! Multi-label metrics, occurrence rates, and subject-level fold splitting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AuCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl AuCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Per-AU confusion counts, one entry per label column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub per_au: Vec<AuCounts>,
}

fn check_binary(rows: &[impl AsRef<[u8]>], what: &str) -> Result<usize> {
    let width = rows.first().map_or(0, |r| r.as_ref().len());
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != width {
            return Err(Error::invalid(what, format!("row {i} has {} columns, expected {width}", r.len())));
        }
        if let Some(j) = r.iter().position(|&v| v > 1) {
            return Err(Error::invalid(what, format!("row {i}, column {j}: value {} is not binary", r[j])));
        }
    }
    Ok(width)
}

pub fn confusion(preds: &[impl AsRef<[u8]>], labels: &[impl AsRef<[u8]>]) -> Result<ConfusionCounts> {
    if preds.len() != labels.len() {
        return Err(Error::invalid("predictions", format!("{} rows for {} labels", preds.len(), labels.len())));
    }
    let k = check_binary(preds, "predictions")?;
    let kl = check_binary(labels, "labels")?;
    if k != kl && !preds.is_empty() {
        return Err(Error::invalid("predictions", format!("{k} columns, labels have {kl}")));
    }
    let mut per_au = vec![AuCounts::default(); k];
    for (p, l) in preds.iter().zip(labels) {
        for ((c, &p), &l) in per_au.iter_mut().zip(p.as_ref()).zip(l.as_ref()) {
            match (p, l) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 0) => c.tn += 1,
                _ => c.fn_ += 1,
            }
        }
    }
    Ok(ConfusionCounts { per_au })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 of a single AU; 0/0 terms count as 0.
pub fn f1_score(c: &AuCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

/// Per-AU F1 and accuracy with macro averages.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub au_ids: Vec<u8>,
    pub f1: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub mean_f1: f64,
    pub mean_accuracy: f64,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn f1_accuracy(c: &ConfusionCounts, au_ids: &[u8]) -> Result<MetricsTable> {
    if au_ids.len() != c.per_au.len() {
        return Err(Error::invalid("metrics", format!("{} AU ids for {} columns", au_ids.len(), c.per_au.len())));
    }
    let f1: Vec<f64> = c.per_au.iter().map(f1_score).collect();
    let accuracy: Vec<f64> = c.per_au.iter().map(|a| ratio(a.tp + a.tn, a.total())).collect();
    Ok(MetricsTable {
        au_ids: au_ids.to_vec(),
        mean_f1: mean(&f1),
        mean_accuracy: mean(&accuracy),
        f1,
        accuracy,
    })
}

impl MetricsTable {
    /// Column-wise mean of several tables over the same AUs.
    pub fn macro_average(tables: &[MetricsTable]) -> Result<MetricsTable> {
        let first = tables.first().ok_or_else(|| Error::invalid("metrics", "nothing to average"))?;
        if tables.iter().any(|t| t.au_ids != first.au_ids) {
            return Err(Error::invalid("metrics", "tables cover different AUs"));
        }
        let k = first.au_ids.len();
        let col = |f: fn(&MetricsTable) -> &Vec<f64>| -> Vec<f64> {
            (0..k).map(|j| mean(&tables.iter().map(|t| f(t)[j]).collect::<Vec<_>>())).collect()
        };
        let f1 = col(|t| &t.f1);
        let accuracy = col(|t| &t.accuracy);
        Ok(MetricsTable {
            au_ids: first.au_ids.clone(),
            mean_f1: mean(&f1),
            mean_accuracy: mean(&accuracy),
            f1,
            accuracy,
        })
    }
}

/// Per-AU fraction of positive labels.
pub fn occurrence_rates(labels: &[impl AsRef<[u8]>]) -> Result<Vec<f64>> {
    let k = check_binary(labels, "labels")?;
    if labels.is_empty() {
        return Err(Error::invalid("labels", "need at least one row"));
    }
    let mut counts = vec![0usize; k];
    for row in labels {
        for (c, &v) in counts.iter_mut().zip(row.as_ref()) {
            *c += v as usize;
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / labels.len() as f64).collect())
}

/// Assigns whole subjects to `k` folds; returns the fold of every sample.
pub fn subject_folds(subject_ids: &[String], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("folds", format!("k = {k}; need at least 2")));
    }
    let mut subjects: Vec<&str> = subject_ids.iter().map(String::as_str).collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < k {
        return Err(Error::invalid("folds", format!("{} distinct subjects for {k} folds", subjects.len())));
    }
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold: BTreeMap<&str, usize> = subjects.iter().enumerate().map(|(i, s)| (*s, i % k)).collect();
    Ok(subject_ids.iter().map(|s| fold[s.as_str()]).collect())
}

/// CSV with one row per AU and an `avg` row; columns `<name>_f1,<name>_acc` per table.
pub fn metrics_csv(tables: &[(&str, &MetricsTable)]) -> String {
    let mut out = String::from("au");
    for (name, _) in tables {
        let _ = write!(out, ",{name}_f1,{name}_acc");
    }
    out.push('\n');
    let Some((_, first)) = tables.first() else { return out };
    for (j, au) in first.au_ids.iter().enumerate() {
        let _ = write!(out, "{au}");
        for (_, t) in tables {
            let _ = write!(out, ",{:.6},{:.6}", t.f1[j], t.accuracy[j]);
        }
        out.push('\n');
    }
    out.push_str("avg");
    for (_, t) in tables {
        let _ = write!(out, ",{:.6},{:.6}", t.mean_f1, t.mean_accuracy);
    }
    out.push('\n');
    out
}

/// Aligned plain-text rendering of [`metrics_csv`].
pub fn metrics_text(tables: &[(&str, &MetricsTable)]) -> String {
    let csv = metrics_csv(tables);
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let cols = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let preds = [[1u8], [1], [1], [0]];
        let labels = [[1u8], [1], [0], [1]];
        let c = confusion(&preds, &labels).unwrap();
        assert_eq!(c.per_au[0], AuCounts { tp: 2, fp: 1, tn: 0, fn_: 1 });
        let m = f1_accuracy(&c, &[1]).unwrap();
        assert_eq!(m.f1[0], 2.0 / 3.0);
        assert_eq!(m.accuracy[0], 0.5);
    }

    #[test]
    fn degenerate_is_zero() {
        let c = AuCounts { tp: 0, fp: 0, tn: 5, fn_: 0 };
        assert_eq!(f1_score(&c), 0.0);
    }

    #[test]
    fn non_binary_rejected() {
        assert!(confusion(&[[2u8]], &[[1u8]]).is_err());
    }

    #[test]
    fn folds_of_27_subjects() {
        let ids: Vec<String> = (0..270).map(|i| format!("S{:02}", i % 27)).collect();
        let f = subject_folds(&ids, 3, 4).unwrap();
        for fold in 0..3 {
            let mut subs: Vec<&String> = ids.iter().zip(&f).filter(|(_, &g)| g == fold).map(|(s, _)| s).collect();
            subs.sort();
            subs.dedup();
            assert_eq!(subs.len(), 9);
        }
        assert_eq!(f, subject_folds(&ids, 3, 4).unwrap());
        assert!(subject_folds(&ids[..2], 3, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let c = confusion(&[[1u8, 0]], &[[1u8, 1]]).unwrap();
        let m = f1_accuracy(&c, &[1, 2]).unwrap();
        let csv = metrics_csv(&[("eac", &m)]);
        assert_eq!(csv.lines().next(), Some("au,eac_f1,eac_acc"));
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.ends_with("avg,0.500000,0.500000\n"));
    }
}
