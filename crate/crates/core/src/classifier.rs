//! Two-layer emotion classifier shared by every utterance, with a softmax
//! head for single-label corpora and an independent logistic head for
//! multi-label ones.

use rand::Rng;

use crate::dataset::TaskMode;
use crate::error::{ErcError, Result};
use crate::params::{bind, glorot, join, Parameterized};
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub mode: TaskMode,
}

impl ClassifierParams {
    pub fn init<R: Rng + ?Sized>(
        in_width: usize,
        hidden: usize,
        classes: usize,
        mode: TaskMode,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 || classes == 0 {
            return Err(ErcError::InvalidArgument(
                "classifier needs positive hidden width and class count".into(),
            ));
        }
        Ok(ClassifierParams {
            w1: glorot(in_width, hidden, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: glorot(hidden, classes, rng),
            b2: Tensor::zeros(&[classes]),
            mode,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.w2.cols()
    }
}

impl Parameterized for ClassifierParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "w1"), &self.w1);
        f(join(prefix, "b1"), &self.b1);
        f(join(prefix, "w2"), &self.w2);
        f(join(prefix, "b2"), &self.b2);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w1"), &mut self.w1);
        f(join(prefix, "b1"), &mut self.b1);
        f(join(prefix, "w2"), &mut self.w2);
        f(join(prefix, "b2"), &mut self.b2);
    }
}

/// `logits = ReLU(H W1 + b1) W2 + b2`.
pub fn logits_on_tape(
    tape: &mut Tape,
    h: Var,
    params: &ClassifierParams,
    prefix: &str,
) -> Result<Var> {
    let ht = tape.value(h);
    if ht.cols() != params.w1.rows() {
        return Err(ErcError::shape("classify", ht.shape(), params.w1.shape()));
    }
    let w1 = bind(tape, prefix, "w1", &params.w1);
    let b1 = bind(tape, prefix, "b1", &params.b1);
    let w2 = bind(tape, prefix, "w2", &params.w2);
    let b2 = bind(tape, prefix, "b2", &params.b2);
    let hidden = tape.matmul(h, w1)?;
    let hidden = tape.add_row(hidden, b1)?;
    let hidden = tape.relu(hidden)?;
    let out = tape.matmul(hidden, w2)?;
    tape.add_row(out, b2)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictions {
    /// Argmax class per utterance.
    Single(Vec<usize>),
    /// Thresholded 0/1 vector per utterance.
    Multi(Vec<Vec<u8>>),
}

impl Predictions {
    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Predictions::Single(v) => Some(v),
            Predictions::Multi(_) => None,
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Turns logits into probabilities and predictions.
pub fn probabilities(logits: &Tensor, mode: TaskMode, threshold: f64) -> Result<(Tensor, Predictions)> {
    let (n, c) = (logits.rows(), logits.cols());
    let mut probs = Tensor::zeros(&[n, c]);
    match mode {
        TaskMode::Single => {
            let mut preds = Vec::with_capacity(n);
            for i in 0..n {
                let row = logits.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    probs.set(i, j, e / total);
                }
                preds.push(argmax(probs.row(i)));
            }
            Ok((probs, Predictions::Single(preds)))
        }
        TaskMode::Multi => {
            let mut preds = Vec::with_capacity(n);
            for i in 0..n {
                let mut bits = Vec::with_capacity(c);
                for j in 0..c {
                    let p = sigmoid(logits.at(i, j));
                    probs.set(i, j, p);
                    bits.push(u8::from(p >= threshold));
                }
                preds.push(bits);
            }
            Ok((probs, Predictions::Multi(preds)))
        }
    }
}

/// Eval-mode classification of `n×d` node features.
pub fn classify(h: &Tensor, params: &ClassifierParams, threshold: f64) -> Result<(Tensor, Predictions)> {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let logits = logits_on_tape(&mut tape, hv, params, "classifier")?;
    probabilities(tape.value(logits), params.mode, threshold)
}

/// Gold targets in the shape the loss expects.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Single(Vec<usize>),
    Multi(Tensor),
}

/// Mean cross-entropy (single) or mean per-class binary cross-entropy
/// (multi), both computed from logits.
pub fn loss_on_tape(tape: &mut Tape, logits: Var, gold: &Targets) -> Result<Var> {
    match gold {
        Targets::Single(labels) => tape.cross_entropy(logits, labels),
        Targets::Multi(t) => tape.binary_cross_entropy(logits, t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_output_layer_gives_uniform_single_label() {
        let mut p = ClassifierParams::init(3, 2, 4, TaskMode::Single, &mut rng::stream(0, 0)).unwrap();
        p.w2 = Tensor::zeros(&[2, 4]);
        let h = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 0.0, 3.0]]).unwrap();
        let (probs, preds) = classify(&h, &p, 0.5).unwrap();
        assert!(probs.data().iter().all(|&v| v == 0.25));
        assert_eq!(preds, Predictions::Single(vec![0, 0]));
    }

    #[test]
    fn zero_logits_multi_label_are_half() {
        let logits = Tensor::zeros(&[2, 3]);
        let (probs, preds) = probabilities(&logits, TaskMode::Multi, 0.5).unwrap();
        assert!(probs.data().iter().all(|&v| v == 0.5));
        assert_eq!(preds, Predictions::Multi(vec![vec![1, 1, 1]; 2]));
    }

    #[test]
    fn argmax_tie_break_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }

    #[test]
    fn argmax_invariant_to_row_shift() {
        let logits = Tensor::from_rows(&[vec![0.3, 1.2, -0.7]]).unwrap();
        let shifted = Tensor::from_rows(&[vec![100.3, 101.2, 99.3]]).unwrap();
        let (_, a) = probabilities(&logits, TaskMode::Single, 0.5).unwrap();
        let (_, b) = probabilities(&shifted, TaskMode::Single, 0.5).unwrap();
        assert_eq!(a, b);
    }
}
