//! Classification metrics: accuracy, support-weighted F1, confusion
//! matrices, and the emotion-shift accuracy split.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::Dialogue;
use crate::error::{ErcError, Result};
use crate::graph::{previous_reference, TransitionLevel};

/// `confusion[gold][pred]`.
pub fn confusion_matrix(gold: &[usize], pred: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if gold.len() != pred.len() {
        return Err(ErcError::InvalidArgument(format!(
            "gold has {} labels, predictions {}",
            gold.len(),
            pred.len()
        )));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&g, &p) in gold.iter().zip(pred) {
        for l in [g, p] {
            if l >= num_classes {
                return Err(ErcError::LabelOutOfRange {
                    label: l,
                    num_classes,
                });
            }
        }
        m[g][p] += 1;
    }
    Ok(m)
}

fn f1(tp: f64, predicted: f64, actual: f64) -> f64 {
    let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
    let recall = if actual > 0.0 { tp / actual } else { 0.0 };
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Per-class F1 and their average weighted by gold support. A class with
/// zero precision and recall scores 0; with no gold at all the weighted
/// average is 0.
pub fn weighted_f1(gold: &[usize], pred: &[usize], num_classes: usize) -> Result<(Vec<f64>, f64)> {
    let cm = confusion_matrix(gold, pred, num_classes)?;
    let mut per_class = Vec::with_capacity(num_classes);
    let mut weighted = 0.0;
    for c in 0..num_classes {
        let tp = cm[c][c] as f64;
        let actual: u64 = cm[c].iter().sum();
        let predicted: u64 = cm.iter().map(|row| row[c]).sum();
        let score = f1(tp, predicted as f64, actual as f64);
        per_class.push(score);
        weighted += score * actual as f64;
    }
    let total = gold.len() as f64;
    Ok((per_class, if total > 0.0 { weighted / total } else { 0.0 }))
}

pub fn accuracy(gold: &[usize], pred: &[usize]) -> Result<f64> {
    if gold.is_empty() {
        return Err(ErcError::InvalidArgument("accuracy of an empty set".into()));
    }
    if gold.len() != pred.len() {
        return Err(ErcError::InvalidArgument(format!(
            "gold has {} labels, predictions {}",
            gold.len(),
            pred.len()
        )));
    }
    let hits = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSplit {
    pub shift_accuracy: f64,
    pub non_shift_accuracy: f64,
    pub shift_count: usize,
    pub non_shift_count: usize,
}

/// Marks each utterance as a shift when its gold label differs from its
/// reference predecessor's (any speaker at utterance level, same speaker at
/// speaker level). Utterances without a predecessor are non-shift.
pub fn shift_flags(speakers: &[usize], gold: &[usize], level: TransitionLevel) -> Vec<bool> {
    previous_reference(speakers, level)
        .into_iter()
        .enumerate()
        .map(|(i, prev)| prev.is_some_and(|p| gold[p] != gold[i]))
        .collect()
}

/// Accuracy over shift and non-shift utterances. `preds[k]` aligns with the
/// utterances of `dialogues[k]`. An empty bucket reports accuracy 0.
pub fn shift_split(dialogues: &[&Dialogue], preds: &[Vec<usize>], level: TransitionLevel) -> Result<ShiftSplit> {
    if dialogues.len() != preds.len() {
        return Err(ErcError::InvalidArgument(format!(
            "{} dialogues but {} prediction lists",
            dialogues.len(),
            preds.len()
        )));
    }
    let (mut shift_hits, mut shift_n, mut stay_hits, mut stay_n) = (0usize, 0usize, 0usize, 0usize);
    for (d, p) in dialogues.iter().zip(preds) {
        let gold = d.classes()?;
        if p.len() != gold.len() {
            return Err(ErcError::InvalidArgument(format!(
                "dialogue {}: {} utterances but {} predictions",
                d.dialogue_id,
                gold.len(),
                p.len()
            )));
        }
        for (i, is_shift) in shift_flags(&d.speakers(), &gold, level).into_iter().enumerate() {
            let hit = usize::from(gold[i] == p[i]);
            if is_shift {
                shift_n += 1;
                shift_hits += hit;
            } else {
                stay_n += 1;
                stay_hits += hit;
            }
        }
    }
    let frac = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok(ShiftSplit {
        shift_accuracy: frac(shift_hits, shift_n),
        non_shift_accuracy: frac(stay_hits, stay_n),
        shift_count: shift_n,
        non_shift_count: stay_n,
    })
}

/// Per emotion column, the support-weighted F1 over the binary outcomes
/// {0, 1} of that column.
pub fn multilabel_f1(gold: &[Vec<u8>], pred: &[Vec<u8>]) -> Result<Vec<f64>> {
    if gold.len() != pred.len() {
        return Err(ErcError::InvalidArgument("multi-label row count mismatch".into()));
    }
    let classes = gold.first().map_or(0, Vec::len);
    if gold.iter().chain(pred).any(|r| r.len() != classes) {
        return Err(ErcError::InvalidArgument("multi-label column count mismatch".into()));
    }
    (0..classes)
        .map(|c| {
            let g: Vec<usize> = gold.iter().map(|r| usize::from(r[c] > 0)).collect();
            let p: Vec<usize> = pred.iter().map(|r| usize::from(r[c] > 0)).collect();
            weighted_f1(&g, &p, 2).map(|(_, w)| w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label_names: Vec<String>,
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
    pub weighted_f1: f64,
    pub support: Vec<u64>,
    pub confusion: Vec<Vec<u64>>,
    pub shift_level: TransitionLevel,
    pub shift_accuracy: f64,
    pub non_shift_accuracy: f64,
    pub shift_count: usize,
    pub non_shift_count: usize,
}

impl EvalReport {
    pub fn build(
        label_names: &[String],
        dialogues: &[&Dialogue],
        preds: &[Vec<usize>],
        level: TransitionLevel,
    ) -> Result<Self> {
        let c = label_names.len();
        let mut gold_all = Vec::new();
        for d in dialogues {
            gold_all.extend(d.classes()?);
        }
        let pred_all: Vec<usize> = preds.iter().flatten().copied().collect();
        let confusion = confusion_matrix(&gold_all, &pred_all, c)?;
        let (per_class_f1, weighted) = weighted_f1(&gold_all, &pred_all, c)?;
        let shift = shift_split(dialogues, preds, level)?;
        Ok(EvalReport {
            label_names: label_names.to_vec(),
            accuracy: accuracy(&gold_all, &pred_all)?,
            per_class_f1,
            weighted_f1: weighted,
            support: confusion.iter().map(|r| r.iter().sum()).collect(),
            confusion,
            shift_level: level,
            shift_accuracy: shift.shift_accuracy,
            non_shift_accuracy: shift.non_shift_accuracy,
            shift_count: shift.shift_count,
            non_shift_count: shift.non_shift_count,
        })
    }

    /// Plain-text table: per-class F1 columns, then accuracy and weighted
    /// F1 (percentages), followed by the shift split and confusion counts.
    pub fn to_table(&self) -> String {
        let mut headers: Vec<String> = self.label_names.clone();
        headers.push("Acc.".into());
        headers.push("wF1".into());
        let mut values: Vec<String> = self
            .per_class_f1
            .iter()
            .map(|v| format!("{:.2}", v * 100.0))
            .collect();
        values.push(format!("{:.2}", self.accuracy * 100.0));
        values.push(format!("{:.2}", self.weighted_f1 * 100.0));
        let widths: Vec<usize> = headers
            .iter()
            .zip(&values)
            .map(|(h, v)| h.len().max(v.len()))
            .collect();
        let mut out = String::new();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let _ = writeln!(out, "{}", line(&headers));
        let _ = writeln!(
            out,
            "{}",
            widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-")
        );
        let _ = writeln!(out, "{}", line(&values));
        let _ = writeln!(
            out,
            "shift ({:?} level): {:.2}% of {}  |  non-shift: {:.2}% of {}",
            self.shift_level,
            self.shift_accuracy * 100.0,
            self.shift_count,
            self.non_shift_accuracy * 100.0,
            self.non_shift_count
        );
        let _ = writeln!(out, "confusion (rows gold, cols pred):");
        for (name, row) in self.label_names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "  {name:>12}: {}", cells.join(" "));
        }
        out
    }
}
