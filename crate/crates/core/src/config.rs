//! Run configuration and its flat `key = value` file format.
//!
//! Lines are `key = value`; `#` starts a comment. Optional values accept
//! `auto`. [`TrainConfig::to_kv`] writes every key in a fixed order, so the
//! rendered text doubles as a stable fingerprint input.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::ModalitySet;
use crate::error::{ErcError, Result};
use crate::graph::{EdgeMode, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// Context-encoder features go straight to the classifier.
    NoGnn,
    /// Every edge shares one relation type.
    NoRelations,
}

impl FromStr for Ablation {
    type Err = ErcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_gnn" => Ok(Ablation::NoGnn),
            "no_relations" => Ok(Ablation::NoRelations),
            other => Err(ErcError::InvalidArgument(format!("unknown ablation \"{other}\""))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoGnn => "no_gnn",
            Ablation::NoRelations => "no_relations",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub gnn_heads: usize,
    /// Number of stacked context-encoder blocks.
    pub seq_context_layers: usize,
    pub encoder_heads: usize,
    /// Encoder feed-forward width as a multiple of the input width.
    pub ffn_multiplier: usize,
    pub window_past: Window,
    pub window_future: Window,
    pub edge_mode: EdgeMode,
    pub self_loops: bool,
    /// Insert a ReLU between the graph convolution and graph attention.
    pub gnn_relu: bool,
    pub rgcn_layers: usize,
    pub graph_transformer_layers: usize,
    /// Per-head width of graph attention; `None` uses the feature width.
    pub gnn_head_width: Option<usize>,
    /// Classifier hidden width; `None` uses half the feature width, rounded up.
    pub classifier_hidden: Option<usize>,
    /// Relation space size `M`; `None` uses the corpus maximum.
    pub num_speakers: Option<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// `None` uses every modality the corpus declares.
    pub modalities: Option<ModalitySet>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Dialogues per optimiser step.
    pub grad_accum: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub layer_norm_eps: f64,
    pub multilabel_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            dropout: 0.1,
            gnn_heads: 7,
            seq_context_layers: 4,
            encoder_heads: 4,
            ffn_multiplier: 4,
            window_past: Window::Bounded(10),
            window_future: Window::Bounded(10),
            edge_mode: EdgeMode::BothDirections,
            self_loops: true,
            gnn_relu: false,
            rgcn_layers: 1,
            graph_transformer_layers: 1,
            gnn_head_width: None,
            classifier_hidden: None,
            num_speakers: None,
            epochs: 50,
            seed: 0,
            ablation: Ablation::Full,
            modalities: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_accum: 1,
            patience: 10,
            layer_norm_eps: 1e-5,
            multilabel_threshold: 0.5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| ErcError::InvalidArgument(format!("bad value \"{value}\" for {key}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl TrainConfig {
    pub const KEYS: [&'static str; 27] = [
        "learning_rate",
        "dropout",
        "gnn_heads",
        "seq_context_layers",
        "encoder_heads",
        "ffn_multiplier",
        "window_past",
        "window_future",
        "edge_mode",
        "self_loops",
        "gnn_relu",
        "rgcn_layers",
        "graph_transformer_layers",
        "gnn_head_width",
        "classifier_hidden",
        "num_speakers",
        "epochs",
        "seed",
        "ablation",
        "modalities",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "grad_accum",
        "patience",
        "layer_norm_eps",
        "multilabel_threshold",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "gnn_heads" => self.gnn_heads = parse(key, value)?,
            "seq_context_layers" => self.seq_context_layers = parse(key, value)?,
            "encoder_heads" => self.encoder_heads = parse(key, value)?,
            "ffn_multiplier" => self.ffn_multiplier = parse(key, value)?,
            "window_past" => self.window_past = value.parse()?,
            "window_future" => self.window_future = value.parse()?,
            "edge_mode" => self.edge_mode = value.parse()?,
            "self_loops" => self.self_loops = parse(key, value)?,
            "gnn_relu" => self.gnn_relu = parse(key, value)?,
            "rgcn_layers" => self.rgcn_layers = parse(key, value)?,
            "graph_transformer_layers" => self.graph_transformer_layers = parse(key, value)?,
            "gnn_head_width" => self.gnn_head_width = parse_opt(key, value)?,
            "classifier_hidden" => self.classifier_hidden = parse_opt(key, value)?,
            "num_speakers" => self.num_speakers = parse_opt(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "modalities" => {
                self.modalities = if value == "auto" {
                    None
                } else {
                    Some(value.parse()?)
                }
            }
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "grad_accum" => self.grad_accum = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "layer_norm_eps" => self.layer_norm_eps = parse(key, value)?,
            "multilabel_threshold" => self.multilabel_threshold = parse(key, value)?,
            other => {
                return Err(ErcError::InvalidArgument(format!(
                    "unknown config key \"{other}\""
                )))
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "learning_rate" => self.learning_rate.to_string(),
            "dropout" => self.dropout.to_string(),
            "gnn_heads" => self.gnn_heads.to_string(),
            "seq_context_layers" => self.seq_context_layers.to_string(),
            "encoder_heads" => self.encoder_heads.to_string(),
            "ffn_multiplier" => self.ffn_multiplier.to_string(),
            "window_past" => self.window_past.to_string(),
            "window_future" => self.window_future.to_string(),
            "edge_mode" => self.edge_mode.to_string(),
            "self_loops" => self.self_loops.to_string(),
            "gnn_relu" => self.gnn_relu.to_string(),
            "rgcn_layers" => self.rgcn_layers.to_string(),
            "graph_transformer_layers" => self.graph_transformer_layers.to_string(),
            "gnn_head_width" => show_opt(&self.gnn_head_width),
            "classifier_hidden" => show_opt(&self.classifier_hidden),
            "num_speakers" => show_opt(&self.num_speakers),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "ablation" => self.ablation.to_string(),
            "modalities" => show_opt(&self.modalities),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "grad_accum" => self.grad_accum.to_string(),
            "patience" => self.patience.to_string(),
            "layer_norm_eps" => self.layer_norm_eps.to_string(),
            "multilabel_threshold" => self.multilabel_threshold.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ErcError::Parse {
                line: idx + 1,
                msg: format!("expected key = value, got \"{line}\""),
            })?;
            self.set(k, v).map_err(|e| ErcError::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })?;
        }
        self.validate()
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).expect("known key"));
            out.push('\n');
        }
        out
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ErcError::InvalidArgument(msg.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a non-negative finite number");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.gnn_heads == 0 || self.encoder_heads == 0 || self.seq_context_layers == 0 {
            return bad("head and layer counts must be positive");
        }
        if self.ffn_multiplier == 0 || self.grad_accum == 0 {
            return bad("ffn_multiplier and grad_accum must be positive");
        }
        if self.rgcn_layers + self.graph_transformer_layers == 0 && self.ablation != Ablation::NoGnn
        {
            return bad("graph model needs at least one graph layer");
        }
        Ok(())
    }
}
