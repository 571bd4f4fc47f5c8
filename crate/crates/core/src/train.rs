//! Training loop, evaluation over corpus splits, checkpoints and utterance
//! masking.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, Predictions};
use crate::config::TrainConfig;
use crate::dataset::{self, Corpus, Dialogue, Split, TaskMode};
use crate::error::{ErcError, Result};
use crate::graph::TransitionLevel;
use crate::metrics::{self, EvalReport};
use crate::model::{self, DialogueOutput, ModelArch, ModelParams};
use crate::optim::Adam;
use crate::params::{params_from_json, params_to_json, Parameterized};
use crate::rng;
use crate::tape::{DropoutCtx, Tape};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "ERC-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_wf1: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,valid_wf1\n");
    for r in history {
        let _ = writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.valid_wf1);
    }
    out
}

/// Validation summary. For multi-label corpora `weighted_f1` is the mean of
/// the per-class binary weighted F1 and `accuracy` the per-label hit rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub weighted_f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub version: u32,
    pub epoch: usize,
    pub arch: ModelArch,
    pub config: TrainConfig,
    pub config_fingerprint: String,
    pub corpus_fingerprint: String,
    pub valid_metrics: SplitMetrics,
    pub params: serde_json::Value,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn model(&self) -> Result<ModelParams> {
        let mut params = ModelParams::init(self.arch.clone(), 0)?;
        params.load_named("", &params_from_json(&self.params)?)?;
        Ok(params)
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        if ck.magic != CHECKPOINT_MAGIC {
            return Err(ErcError::Format(format!("bad checkpoint magic \"{}\"", ck.magic)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(ErcError::Format(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub checkpoint: Checkpoint,
}

fn numerical(err: ErcError, d: &Dialogue, epoch: usize) -> ErcError {
    match err {
        ErcError::NonFinite { .. } => ErcError::NumericalAbort {
            dialogue: d.dialogue_id.clone(),
            epoch,
        },
        other => other,
    }
}

/// Eval-mode outputs for every dialogue of a split, in corpus order.
pub fn predict_split<'a>(
    corpus: &'a Corpus,
    params: &ModelParams,
    split: Split,
) -> Result<Vec<(&'a Dialogue, DialogueOutput)>> {
    let dialogues: Vec<&Dialogue> = corpus.split(split).collect();
    dialogues
        .par_iter()
        .map(|d| model::forward_dialogue(d, params).map(|o| (*d, o)))
        .collect()
}

fn multi_gold(d: &Dialogue) -> Result<Vec<Vec<u8>>> {
    d.utterances
        .iter()
        .map(|u| match &u.label {
            dataset::Label::Multi(bits) => Ok(bits.clone()),
            dataset::Label::Single(_) => Err(ErcError::InvalidArgument(format!(
                "dialogue {} mixes single-label targets into a multi-label corpus",
                d.dialogue_id
            ))),
        })
        .collect()
}

/// Scores predictions against gold for a set of dialogues.
pub fn score(
    outputs: &[(&Dialogue, DialogueOutput)],
    num_classes: usize,
) -> Result<SplitMetrics> {
    let mut single = (Vec::new(), Vec::new());
    let mut multi = (Vec::new(), Vec::new());
    for (d, out) in outputs {
        match &out.preds {
            Predictions::Single(p) => {
                single.0.extend(d.classes()?);
                single.1.extend_from_slice(p);
            }
            Predictions::Multi(p) => {
                multi.0.extend(multi_gold(d)?);
                multi.1.extend(p.iter().cloned());
            }
        }
    }
    if !multi.0.is_empty() {
        let per_class = metrics::multilabel_f1(&multi.0, &multi.1)?;
        let mean = per_class.iter().sum::<f64>() / per_class.len().max(1) as f64;
        let cells = multi.0.len() * num_classes;
        let hits = multi
            .0
            .iter()
            .flatten()
            .zip(multi.1.iter().flatten())
            .filter(|(g, p)| g == p)
            .count();
        return Ok(SplitMetrics {
            weighted_f1: mean,
            accuracy: if cells == 0 { 0.0 } else { hits as f64 / cells as f64 },
        });
    }
    if single.0.is_empty() {
        return Err(ErcError::InvalidArgument("no utterances to score".into()));
    }
    let (_, wf1) = metrics::weighted_f1(&single.0, &single.1, num_classes)?;
    Ok(SplitMetrics {
        weighted_f1: wf1,
        accuracy: metrics::accuracy(&single.0, &single.1)?,
    })
}

pub fn split_metrics(corpus: &Corpus, params: &ModelParams, split: Split) -> Result<SplitMetrics> {
    score(&predict_split(corpus, params, split)?, corpus.num_classes())
}

/// Full single-label report for one split.
pub fn evaluate(
    corpus: &Corpus,
    params: &ModelParams,
    split: Split,
    level: TransitionLevel,
) -> Result<EvalReport> {
    if corpus.task_mode != TaskMode::Single {
        return Err(ErcError::InvalidArgument(
            "the evaluation report needs a single-label corpus".into(),
        ));
    }
    let outputs = predict_split(corpus, params, split)?;
    if outputs.is_empty() {
        return Err(ErcError::InvalidArgument(format!("split {split:?} is empty")));
    }
    let dialogues: Vec<&Dialogue> = outputs.iter().map(|(d, _)| *d).collect();
    let preds: Vec<Vec<usize>> = outputs
        .iter()
        .map(|(_, o)| o.preds.classes().map(<[usize]>::to_vec).unwrap_or_default())
        .collect();
    EvalReport::build(&corpus.label_names, &dialogues, &preds, level)
}

/// Per-class binary weighted F1 for a multi-label split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelReport {
    pub label_names: Vec<String>,
    pub per_class_f1: Vec<f64>,
    pub mean_f1: f64,
}

pub fn evaluate_multilabel(corpus: &Corpus, params: &ModelParams, split: Split) -> Result<MultiLabelReport> {
    let outputs = predict_split(corpus, params, split)?;
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    for (d, o) in &outputs {
        gold.extend(multi_gold(d)?);
        match &o.preds {
            Predictions::Multi(p) => pred.extend(p.iter().cloned()),
            Predictions::Single(_) => {
                return Err(ErcError::InvalidArgument("model is not multi-label".into()))
            }
        }
    }
    let per_class_f1 = metrics::multilabel_f1(&gold, &pred)?;
    let mean_f1 = per_class_f1.iter().sum::<f64>() / per_class_f1.len().max(1) as f64;
    Ok(MultiLabelReport {
        label_names: corpus.label_names.clone(),
        per_class_f1,
        mean_f1,
    })
}

/// Trains from scratch. One dialogue per forward/backward pass; gradients
/// of `grad_accum` consecutive dialogues are averaged per optimiser step.
/// Dialogue order is reshuffled every epoch.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome> {
    let arch = ModelArch::from_config(config, corpus)?;
    let train_set: Vec<&Dialogue> = corpus.split(Split::Train).filter(|d| !d.is_empty()).collect();
    if train_set.is_empty() {
        return Err(ErcError::InvalidArgument("corpus has no training dialogues".into()));
    }
    if corpus.split(Split::Valid).next().is_none() {
        return Err(ErcError::InvalidArgument("corpus has no validation dialogues".into()));
    }
    let features = train_set
        .iter()
        .map(|d| dataset::dialogue_features(d, arch.modalities))
        .collect::<Result<Vec<Tensor>>>()?;
    let targets = train_set
        .iter()
        .map(|d| model::dialogue_targets(d, arch.task_mode))
        .collect::<Result<Vec<_>>>()?;

    let mut params = ModelParams::init(arch.clone(), config.seed)?;
    let mut adam = Adam::new(
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    let mut shuffle_rng = rng::stream(config.seed, rng::STREAM_SHUFFLE);
    let mut dropout_rng = rng::stream(config.seed, rng::STREAM_DROPOUT);
    let corpus_fingerprint = corpus.fingerprint()?;

    let snapshot = |params: &ModelParams, adam: &Adam, epoch: usize, valid: SplitMetrics| Checkpoint {
        magic: CHECKPOINT_MAGIC.to_string(),
        version: CHECKPOINT_VERSION,
        epoch,
        arch: arch.clone(),
        config: config.clone(),
        config_fingerprint: config.fingerprint(),
        corpus_fingerprint: corpus_fingerprint.clone(),
        valid_metrics: valid,
        params: params_to_json(&params.named("")),
        optimizer: adam.clone(),
    };

    let initial = split_metrics(corpus, &params, Split::Valid)?;
    let mut best_params = params.clone();
    let mut best = snapshot(&params, &adam, 0, initial);
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total_loss = 0.0;
        let mut accum: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut pending = 0usize;
        for (pos, &i) in order.iter().enumerate() {
            let d = train_set[i];
            let mut tape = Tape::new();
            let mut drop = DropoutCtx::train(config.dropout, &mut dropout_rng);
            let step = (|| {
                let trace = model::forward_on_tape(&mut tape, &features[i], &d.speakers(), &params, &mut drop)?;
                let loss = classifier::loss_on_tape(&mut tape, trace.logits, &targets[i])?;
                tape.backward(loss)?;
                Ok(tape.value(loss).item())
            })();
            let loss = step.map_err(|e| numerical(e, d, epoch))?;
            if !loss.is_finite() {
                return Err(ErcError::NumericalAbort {
                    dialogue: d.dialogue_id.clone(),
                    epoch,
                });
            }
            total_loss += loss;
            for (name, g) in tape.param_grads() {
                match accum.get_mut(&name) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        accum.insert(name, g);
                    }
                }
            }
            pending += 1;
            if pending == config.grad_accum || pos + 1 == order.len() {
                if pending > 1 {
                    let k = pending as f64;
                    accum.values_mut().flatten().for_each(|g| *g /= k);
                }
                adam.update(&mut params, &accum)?;
                accum.clear();
                pending = 0;
            }
        }
        let valid = split_metrics(corpus, &params, Split::Valid)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total_loss / train_set.len() as f64,
            valid_wf1: valid.weighted_f1,
        });
        if valid.weighted_f1 > best_score {
            best_score = valid.weighted_f1;
            best_epoch = epoch;
            best_params = params.clone();
            best = snapshot(&params, &adam, epoch, valid);
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch,
        checkpoint: best,
    })
}

/// Dialogue-level score used by masking: weighted F1 for single-label
/// models, mean per-class binary weighted F1 for multi-label ones.
fn dialogue_score(d: &Dialogue, out: &DialogueOutput, num_classes: usize) -> Result<f64> {
    score(&[(d, out.clone())], num_classes).map(|m| m.weighted_f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskResult {
    pub dialogue_id: String,
    pub baseline_f1: f64,
    /// Entry `k` is the dialogue's F1 with utterance `k` zeroed.
    pub per_utterance: Vec<f64>,
}

/// Zeroes one utterance's fused features at a time (the node and its edges
/// stay) and re-scores the dialogue in eval mode.
pub fn mask_importance(d: &Dialogue, params: &ModelParams) -> Result<MaskResult> {
    let x = dataset::dialogue_features(d, params.arch.modalities)?;
    let speakers = d.speakers();
    let c = params.arch.num_classes;
    let base = model::forward_features(&x, &speakers, params, 0.0, None)?;
    let baseline_f1 = dialogue_score(d, &base, c)?;
    let per_utterance = (0..d.len())
        .into_par_iter()
        .map(|k| {
            let mut masked = x.clone();
            let w = masked.cols();
            masked.data_mut()[k * w..(k + 1) * w].fill(0.0);
            let out = model::forward_features(&masked, &speakers, params, 0.0, None)?;
            dialogue_score(d, &out, c)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MaskResult {
        dialogue_id: d.dialogue_id.clone(),
        baseline_f1,
        per_utterance,
    })
}

pub fn mask_csv(result: &MaskResult) -> String {
    let mut out = String::from("utterance,f1\n");
    let _ = writeln!(out, "baseline,{}", result.baseline_f1);
    for (k, f) in result.per_utterance.iter().enumerate() {
        let _ = writeln!(out, "{k},{f}");
    }
    out
}
