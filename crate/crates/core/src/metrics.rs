//! Classification metrics, all computed from a confusion matrix or a
//! sorted score sweep. The `oracle` module holds slow reference versions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[true][pred]`.
    counts: Vec<Vec<usize>>,
    n: usize,
}

impl ConfusionMatrix {
    pub fn new(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Self> {
        if y_true.is_empty() {
            return Err(Error::contract("metrics need at least one sample"));
        }
        if y_true.len() != y_pred.len() {
            return Err(Error::contract(format!("{} labels vs {} predictions", y_true.len(), y_pred.len())));
        }
        let mut counts = vec![vec![0; n_classes]; n_classes];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::contract(format!("label outside [0, {n_classes})")));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { counts, n: y_true.len() })
    }

    /// Class count inferred from the largest label seen.
    pub fn infer(y_true: &[usize], y_pred: &[usize]) -> Result<Self> {
        let c = y_true.iter().chain(y_pred).max().map_or(0, |m| m + 1);
        Self::new(y_true, y_pred, c)
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    fn row_sum(&self, c: usize) -> usize {
        self.counts[c].iter().sum()
    }

    fn col_sum(&self, c: usize) -> usize {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn balanced_accuracy(&self) -> f64 {
        let mut total = 0.0;
        let mut present = 0;
        for c in 0..self.n_classes() {
            let support = self.row_sum(c);
            if support > 0 {
                total += self.counts[c][c] as f64 / support as f64;
                present += 1;
            }
        }
        total / present as f64
    }

    pub fn cohens_kappa(&self) -> f64 {
        let n = self.n as f64;
        let p_o = (0..self.n_classes()).map(|c| self.counts[c][c]).sum::<usize>() as f64 / n;
        let p_e: f64 = (0..self.n_classes())
            .map(|c| (self.row_sum(c) as f64 / n) * (self.col_sum(c) as f64 / n))
            .sum();
        if p_e >= 1.0 {
            0.0
        } else {
            (p_o - p_e) / (1.0 - p_e)
        }
    }

    pub fn weighted_f1(&self) -> f64 {
        let mut total = 0.0;
        for c in 0..self.n_classes() {
            let tp = self.counts[c][c] as f64;
            let support = self.row_sum(c) as f64;
            let predicted = self.col_sum(c) as f64;
            let denom = support + predicted;
            let f1 = if tp == 0.0 || denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
            total += support * f1;
        }
        total / self.n as f64
    }
}

pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    Ok(ConfusionMatrix::infer(y_true, y_pred)?.balanced_accuracy())
}

pub fn cohens_kappa(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    Ok(ConfusionMatrix::infer(y_true, y_pred)?.cohens_kappa())
}

pub fn weighted_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    Ok(ConfusionMatrix::infer(y_true, y_pred)?.weighted_f1())
}

fn check_binary(y_true: &[bool], scores: &[f64]) -> Result<()> {
    if y_true.len() != scores.len() {
        return Err(Error::contract(format!("{} labels vs {} scores", y_true.len(), scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::contract("NaN score"));
    }
    Ok(())
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Mann-Whitney AUROC with half credit for ties, by a descending sweep.
pub fn auroc(y_true: &[bool], scores: &[f64]) -> Result<f64> {
    check_binary(y_true, scores)?;
    let n_pos = y_true.iter().filter(|&&y| y).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::contract("AUROC needs both classes"));
    }
    let mut neg_above = 0usize;
    let mut credit = 0.0;
    for g in tie_groups(scores) {
        let pos = g.iter().filter(|&&i| y_true[i]).count();
        let neg = g.len() - pos;
        credit += pos as f64 * (n_neg - neg_above - neg) as f64 + 0.5 * (pos * neg) as f64;
        neg_above += neg;
    }
    Ok(credit / (n_pos as f64 * n_neg as f64))
}

/// Step-wise average precision; tied scores form one threshold.
pub fn auc_pr(y_true: &[bool], scores: &[f64]) -> Result<f64> {
    check_binary(y_true, scores)?;
    let n_pos = y_true.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Err(Error::contract("AUC-PR needs at least one positive"));
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for g in tie_groups(scores) {
        let pos = g.iter().filter(|&&i| y_true[i]).count();
        tp += pos;
        seen += g.len();
        if pos > 0 {
            ap += (pos as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub balanced_accuracy: f64,
    pub cohens_kappa: f64,
    pub weighted_f1: f64,
    /// Binary tasks only, and only when both classes are present.
    pub auroc: Option<f64>,
    pub auc_pr: Option<f64>,
    pub confusion_matrix: ConfusionMatrix,
    pub n_samples: usize,
}

impl EvalResult {
    /// Scores class-probability rows against labels.
    pub fn from_probs(y_true: &[usize], probs: &[Vec<f64>], n_classes: usize) -> Result<Self> {
        if probs.iter().any(|p| p.len() != n_classes) {
            return Err(Error::contract("probability rows do not match class count"));
        }
        let y_pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let cm = ConfusionMatrix::new(y_true, &y_pred, n_classes)?;
        let (auroc_v, auc_pr_v) = if n_classes == 2 {
            let truth: Vec<bool> = y_true.iter().map(|&y| y == 1).collect();
            let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
            (auroc(&truth, &scores).ok(), auc_pr(&truth, &scores).ok())
        } else {
            (None, None)
        };
        Ok(EvalResult {
            balanced_accuracy: cm.balanced_accuracy(),
            cohens_kappa: cm.cohens_kappa(),
            weighted_f1: cm.weighted_f1(),
            auroc: auroc_v,
            auc_pr: auc_pr_v,
            n_samples: cm.n_samples(),
            confusion_matrix: cm,
        })
    }

    /// The reported metric set: balanced accuracy, AUC-PR and AUROC for
    /// binary tasks; balanced accuracy, kappa and weighted F1 otherwise.
    pub fn headline(&self, binary: bool) -> Vec<(&'static str, f64)> {
        if binary {
            vec![
                ("balanced_accuracy", self.balanced_accuracy),
                ("auc_pr", self.auc_pr.unwrap_or(f64::NAN)),
                ("auroc", self.auroc.unwrap_or(f64::NAN)),
            ]
        } else {
            vec![
                ("balanced_accuracy", self.balanced_accuracy),
                ("cohens_kappa", self.cohens_kappa),
                ("weighted_f1", self.weighted_f1),
            ]
        }
    }
}

/// Direct, slow reference implementations.
pub mod oracle {
    pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
        let mut classes: Vec<usize> = y_true.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let recalls: Vec<f64> = classes
            .iter()
            .map(|&c| {
                let idx: Vec<usize> = (0..y_true.len()).filter(|&i| y_true[i] == c).collect();
                idx.iter().filter(|&&i| y_pred[i] == c).count() as f64 / idx.len() as f64
            })
            .collect();
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }

    pub fn cohens_kappa(y_true: &[usize], y_pred: &[usize]) -> f64 {
        let n = y_true.len() as f64;
        let c = y_true.iter().chain(y_pred).max().unwrap() + 1;
        let agree = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count() as f64 / n;
        let mut chance = 0.0;
        for k in 0..c {
            let a = y_true.iter().filter(|&&y| y == k).count() as f64 / n;
            let b = y_pred.iter().filter(|&&y| y == k).count() as f64 / n;
            chance += a * b;
        }
        if chance >= 1.0 {
            0.0
        } else {
            (agree - chance) / (1.0 - chance)
        }
    }

    pub fn weighted_f1(y_true: &[usize], y_pred: &[usize]) -> f64 {
        let c = y_true.iter().chain(y_pred).max().unwrap() + 1;
        let mut total = 0.0;
        for k in 0..c {
            let tp = (0..y_true.len()).filter(|&i| y_true[i] == k && y_pred[i] == k).count() as f64;
            let fp = (0..y_true.len()).filter(|&i| y_true[i] != k && y_pred[i] == k).count() as f64;
            let fneg = (0..y_true.len()).filter(|&i| y_true[i] == k && y_pred[i] != k).count() as f64;
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            total += (tp + fneg) * f1;
        }
        total / y_true.len() as f64
    }

    /// Pairwise comparison over every positive/negative pair.
    pub fn auroc(y_true: &[bool], scores: &[f64]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for i in 0..y_true.len() {
            for j in 0..y_true.len() {
                if y_true[i] && !y_true[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        credit += 1.0;
                    } else if scores[i] == scores[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / pairs
    }

    /// Walks every distinct threshold from the top and rescans the data.
    pub fn auc_pr(y_true: &[bool], scores: &[f64]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let n_pos = y_true.iter().filter(|&&y| y).count() as f64;
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for t in thresholds {
            let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
            let tp = selected.iter().filter(|&&i| y_true[i]).count() as f64;
            let recall = tp / n_pos;
            let precision = tp / selected.len() as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }
}
