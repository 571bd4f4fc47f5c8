//! The full utterance-to-emotion pipeline: fused features, context encoder,
//! relation graph, graph layers, classifier.

use serde::{Deserialize, Serialize};

use crate::classifier::{self, ClassifierParams, Predictions, Targets};
use crate::config::{Ablation, TrainConfig};
use crate::dataset::{self, Corpus, Dialogue, Label, ModalitySet, TaskMode};
use crate::encoder::{self, EncoderParams, EncoderShape};
use crate::error::{ErcError, Result};
use crate::gnn::{self, GraphTransformerParams, GraphTransformerShape, RgcnParams};
use crate::graph::{self, ConversationGraph, GraphOptions};
use crate::params::{join, Parameterized};
use crate::rng::{self, StreamRng};
use crate::tape::{DropoutCtx, Tape, Var};
use crate::tensor::Tensor;

/// Everything needed to rebuild a parameter set's shapes and run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArch {
    pub modalities: ModalitySet,
    pub input_width: usize,
    pub encoder: EncoderShape,
    pub layer_norm_eps: f64,
    pub ablation: Ablation,
    pub graph: GraphOptions,
    pub relation_count: usize,
    pub rgcn_layers: usize,
    pub graph_transformer_layers: usize,
    pub gnn_heads: usize,
    pub gnn_head_width: usize,
    pub gnn_relu: bool,
    pub classifier_hidden: usize,
    pub num_classes: usize,
    pub task_mode: TaskMode,
    pub multilabel_threshold: f64,
}

impl ModelArch {
    pub fn from_config(config: &TrainConfig, corpus: &Corpus) -> Result<Self> {
        config.validate()?;
        let available = corpus.available_modalities();
        let modalities = config.modalities.unwrap_or(available);
        if let Some(m) = modalities.iter().find(|m| !available.contains(*m)) {
            return Err(ErcError::InvalidArgument(format!(
                "modality '{}' requested but not present in corpus",
                m.letter()
            )));
        }
        let d = corpus.dims.fused_width(modalities);
        if d == 0 {
            return Err(ErcError::InvalidArgument("fused feature width is zero".into()));
        }
        let num_speakers = config.num_speakers.unwrap_or_else(|| corpus.max_speakers());
        let mut graph = GraphOptions::new(config.window_past, config.window_future, num_speakers);
        graph.edge_mode = config.edge_mode;
        graph.self_loops = config.self_loops;
        let relation_count = match config.ablation {
            Ablation::NoRelations => 1,
            _ => graph::relation_count(num_speakers),
        };
        Ok(ModelArch {
            modalities,
            input_width: d,
            encoder: EncoderShape {
                width: d,
                heads: config.encoder_heads,
                layers: config.seq_context_layers,
                ffn_width: config.ffn_multiplier * d,
            },
            layer_norm_eps: config.layer_norm_eps,
            ablation: config.ablation,
            graph,
            relation_count,
            rgcn_layers: config.rgcn_layers,
            graph_transformer_layers: config.graph_transformer_layers,
            gnn_heads: config.gnn_heads,
            gnn_head_width: config.gnn_head_width.unwrap_or(d),
            gnn_relu: config.gnn_relu,
            classifier_hidden: config.classifier_hidden.unwrap_or(d.div_ceil(2)),
            num_classes: corpus.num_classes(),
            task_mode: corpus.task_mode,
            multilabel_threshold: config.multilabel_threshold,
        })
    }

    pub fn uses_gnn(&self) -> bool {
        self.ablation != Ablation::NoGnn
    }

    /// The relation graph this model runs on for a given speaker sequence.
    pub fn graph_for(&self, speakers: &[usize]) -> Result<ConversationGraph> {
        let g = graph::build_graph(speakers, &self.graph)?;
        Ok(match self.ablation {
            Ablation::NoRelations => graph::collapse_relations(&g),
            _ => g,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ModelArch,
    pub encoder: EncoderParams,
    pub rgcn: Vec<RgcnParams>,
    pub graph_transformer: Vec<GraphTransformerParams>,
    pub classifier: ClassifierParams,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit/zero LayerNorm affine.
    pub fn init(arch: ModelArch, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, rng::STREAM_INIT);
        let d = arch.input_width;
        let mut enc = EncoderParams::init(arch.encoder, &mut rng)?;
        enc.layer_norm_eps = arch.layer_norm_eps;
        let (rgcn, graph_transformer) = if arch.uses_gnn() {
            let rgcn = (0..arch.rgcn_layers)
                .map(|_| RgcnParams::init(d, d, arch.relation_count, &mut rng))
                .collect();
            let gt = (0..arch.graph_transformer_layers)
                .map(|_| {
                    GraphTransformerParams::init(
                        GraphTransformerShape {
                            in_width: d,
                            head_width: arch.gnn_head_width,
                            heads: arch.gnn_heads,
                            out_width: d,
                        },
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            (rgcn, gt)
        } else {
            (Vec::new(), Vec::new())
        };
        let classifier = ClassifierParams::init(
            d,
            arch.classifier_hidden,
            arch.num_classes,
            arch.task_mode,
            &mut rng,
        )?;
        Ok(ModelParams {
            arch,
            encoder: enc,
            rgcn,
            graph_transformer,
            classifier,
        })
    }
}

impl Parameterized for ModelParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        for (i, p) in self.rgcn.iter().enumerate() {
            p.visit(&join(prefix, &format!("rgcn{i}")), f);
        }
        for (i, p) in self.graph_transformer.iter().enumerate() {
            p.visit(&join(prefix, &format!("gt{i}")), f);
        }
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        for (i, p) in self.rgcn.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &format!("rgcn{i}")), f);
        }
        for (i, p) in self.graph_transformer.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &format!("gt{i}")), f);
        }
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

/// Handles into the tape for the interesting intermediate values.
pub struct ForwardTrace {
    /// Context-encoder output.
    pub before_gnn: Var,
    /// Graph-layer output (equal to `before_gnn` under the no-GNN ablation).
    pub after_gnn: Var,
    pub logits: Var,
}

/// Records the whole model on `tape` for an `n×d` fused feature matrix and
/// the matching speaker sequence.
pub fn forward_on_tape(
    tape: &mut Tape,
    features: &Tensor,
    speakers: &[usize],
    params: &ModelParams,
    drop: &mut DropoutCtx<'_>,
) -> Result<ForwardTrace> {
    let arch = &params.arch;
    if features.rows() != speakers.len() {
        return Err(ErcError::shape(
            "forward",
            features.shape(),
            &[speakers.len()],
        ));
    }
    let x = tape.constant(features.clone());
    let enc = encoder::encode_on_tape(tape, x, &params.encoder, "encoder", drop)?;
    let z = enc.z;
    let after = if arch.uses_gnn() {
        let g = arch.graph_for(speakers)?;
        let mut h = z;
        for (i, p) in params.rgcn.iter().enumerate() {
            h = gnn::rgcn_on_tape(tape, h, &g, p, &format!("rgcn{i}"))?;
        }
        if arch.gnn_relu {
            h = tape.relu(h)?;
        }
        for (i, p) in params.graph_transformer.iter().enumerate() {
            h = gnn::graph_transformer_on_tape(tape, h, &g, p, &format!("gt{i}"))?.h;
        }
        h
    } else {
        gnn::bypass_gnn(z)
    };
    let logits = classifier::logits_on_tape(tape, after, &params.classifier, "classifier")?;
    Ok(ForwardTrace {
        before_gnn: z,
        after_gnn: after,
        logits,
    })
}

pub fn dialogue_targets(d: &Dialogue, mode: TaskMode) -> Result<Targets> {
    match mode {
        TaskMode::Single => Ok(Targets::Single(d.classes()?)),
        TaskMode::Multi => {
            let rows = d
                .utterances
                .iter()
                .map(|u| match &u.label {
                    Label::Multi(bits) => Ok(bits.iter().map(|&b| f64::from(b)).collect()),
                    Label::Single(_) => Err(ErcError::InvalidArgument(format!(
                        "dialogue {} has single-label targets in a multi-label model",
                        d.dialogue_id
                    ))),
                })
                .collect::<Result<Vec<Vec<f64>>>>()?;
            Ok(Targets::Multi(Tensor::from_rows(&rows)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueOutput {
    pub probs: Tensor,
    pub preds: Predictions,
}

/// Forward pass over raw features; `rng` switches on training-mode dropout.
pub fn forward_features(
    features: &Tensor,
    speakers: &[usize],
    params: &ModelParams,
    dropout: f64,
    rng: Option<&mut StreamRng>,
) -> Result<DialogueOutput> {
    let mut tape = Tape::new();
    let mut drop = match rng {
        Some(r) => DropoutCtx::train(dropout, r),
        None => DropoutCtx::eval(),
    };
    let trace = forward_on_tape(&mut tape, features, speakers, params, &mut drop)?;
    let (probs, preds) = classifier::probabilities(
        tape.value(trace.logits),
        params.arch.task_mode,
        params.arch.multilabel_threshold,
    )?;
    Ok(DialogueOutput { probs, preds })
}

/// Eval-mode prediction for one dialogue.
pub fn forward_dialogue(d: &Dialogue, params: &ModelParams) -> Result<DialogueOutput> {
    let x = dataset::dialogue_features(d, params.arch.modalities)?;
    forward_features(&x, &d.speakers(), params, 0.0, None)
}

/// Eval-mode node representations before and after the graph layers.
pub fn stage_features(d: &Dialogue, params: &ModelParams) -> Result<(Tensor, Tensor)> {
    let x = dataset::dialogue_features(d, params.arch.modalities)?;
    let mut tape = Tape::new();
    let trace = forward_on_tape(&mut tape, &x, &d.speakers(), params, &mut DropoutCtx::eval())?;
    Ok((
        tape.value(trace.before_gnn).clone(),
        tape.value(trace.after_gnn).clone(),
    ))
}
