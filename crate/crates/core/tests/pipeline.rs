mod common;

use erc_core::classifier;
use erc_core::dataset::{self, synth_corpus, ModalityDims};
use erc_core::encoder;
use erc_core::gnn;
use erc_core::graph;
use erc_core::model::{self, ModelArch, ModelParams};
use erc_core::train::{self, Checkpoint};
use erc_core::*;

fn small_corpus(dep: Dependency, seed: u64) -> Corpus {
    let mut spec = SynthSpec::new(dep, seed);
    spec.num_dialogues = 30;
    spec.utterances_per_dialogue = 5;
    spec.dims = ModalityDims { a: 2, t: 4, v: 2 };
    synth_corpus(&spec).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        seq_context_layers: 2,
        encoder_heads: 2,
        gnn_heads: 3,
        epochs: 3,
        ..TrainConfig::default()
    }
}

fn params_for(corpus: &Corpus, cfg: &TrainConfig, seed: u64) -> ModelParams {
    ModelParams::init(ModelArch::from_config(cfg, corpus).unwrap(), seed).unwrap()
}

#[test]
fn no_gnn_is_encoder_then_classifier() {
    let corpus = small_corpus(Dependency::None, 1);
    let cfg = TrainConfig {
        ablation: Ablation::NoGnn,
        ..small_config()
    };
    let params = params_for(&corpus, &cfg, 4);
    assert!(params.rgcn.is_empty() && params.graph_transformer.is_empty());
    for d in corpus.dialogues.iter().take(5) {
        let out = model::forward_dialogue(d, &params).unwrap();
        let x = dataset::dialogue_features(d, params.arch.modalities).unwrap();
        let z = encoder::encode(&x, &params.encoder).unwrap();
        let (probs, preds) = classifier::classify(&z, &params.classifier, 0.5).unwrap();
        assert_eq!(out.probs, probs);
        assert_eq!(out.preds, preds);
    }
}

#[test]
fn full_pipeline_matches_hand_composition() {
    let corpus = small_corpus(Dependency::Neighbor, 2);
    let cfg = small_config();
    let params = params_for(&corpus, &cfg, 5);
    let mut d = corpus.dialogues[0].clone();
    d.utterances.truncate(3);
    let out = model::forward_dialogue(&d, &params).unwrap();

    let x = dataset::dialogue_features(&d, params.arch.modalities).unwrap();
    let z = encoder::encode(&x, &params.encoder).unwrap();
    let g = graph::build_graph(&d.speakers(), &params.arch.graph).unwrap();
    let h = gnn::rgcn_forward(&z, &g, &params.rgcn[0]).unwrap();
    let h = gnn::graph_transformer_forward(&h, &g, &params.graph_transformer[0]).unwrap();
    let (probs, preds) = classifier::classify(&h, &params.classifier, 0.5).unwrap();
    assert_eq!(out.probs, probs);
    assert_eq!(out.preds, preds);
}

#[test]
fn no_relations_collapses_edge_types() {
    let corpus = small_corpus(Dependency::Neighbor, 2);
    let cfg = TrainConfig {
        ablation: Ablation::NoRelations,
        ..small_config()
    };
    let params = params_for(&corpus, &cfg, 5);
    assert_eq!(params.rgcn[0].relation_count(), 1);
    let d = &corpus.dialogues[0];
    let out = model::forward_dialogue(d, &params).unwrap();
    let x = dataset::dialogue_features(d, params.arch.modalities).unwrap();
    let z = encoder::encode(&x, &params.encoder).unwrap();
    let g = graph::collapse_relations(&graph::build_graph(&d.speakers(), &params.arch.graph).unwrap());
    let h = gnn::rgcn_forward(&z, &g, &params.rgcn[0]).unwrap();
    let h = gnn::graph_transformer_forward(&h, &g, &params.graph_transformer[0]).unwrap();
    assert_eq!(out.probs, classifier::classify(&h, &params.classifier, 0.5).unwrap().0);
}

#[test]
fn eval_forward_is_bitwise_deterministic() {
    let corpus = small_corpus(Dependency::Neighbor, 3);
    let params = params_for(&corpus, &small_config(), 9);
    for d in &corpus.dialogues {
        assert_eq!(
            model::forward_dialogue(d, &params).unwrap(),
            model::forward_dialogue(d, &params).unwrap()
        );
    }
}

#[test]
fn checkpoint_reload_reproduces_outputs() {
    let corpus = small_corpus(Dependency::Neighbor, 4);
    let out = train::train(&corpus, &small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.json");
    out.checkpoint.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap().model().unwrap();
    for d in &corpus.dialogues {
        assert_eq!(
            model::forward_dialogue(d, &back).unwrap(),
            model::forward_dialogue(d, &out.params).unwrap()
        );
    }
}

#[test]
fn checkpoint_rejects_tampering() {
    let corpus = small_corpus(Dependency::None, 4);
    let out = train::train(&corpus, &TrainConfig { epochs: 1, ..small_config() }).unwrap();
    let mut ck = out.checkpoint.clone();
    ck.magic = "nope".into();
    assert!(Checkpoint::from_json_bytes(&ck.to_json_bytes().unwrap()).is_err());
    let mut ck = out.checkpoint;
    ck.params["params"].as_object_mut().unwrap().remove("classifier.b2");
    assert!(ck.model().is_err());
}

#[test]
fn train_requires_train_and_valid_dialogues() {
    let corpus = small_corpus(Dependency::None, 4);
    let only_train = corpus.subset(Split::Train);
    assert!(matches!(
        train::train(&only_train, &small_config()),
        Err(ErcError::InvalidArgument(_))
    ));
}

#[test]
fn non_finite_loss_names_the_dialogue() {
    let corpus = small_corpus(Dependency::None, 4);
    let cfg = TrainConfig {
        learning_rate: 1e300,
        epochs: 2,
        patience: 0,
        ..small_config()
    };
    match train::train(&corpus, &cfg) {
        Err(ErcError::NumericalAbort { dialogue, .. }) => assert!(corpus.find(&dialogue).is_some()),
        Err(ErcError::NonFinite { .. }) => {}
        other => panic!("expected a numerical abort, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn training_loss_epoch_median_is_non_increasing() {
    let corpus = synth_corpus(&SynthSpec::new(Dependency::None, 0)).unwrap();
    let epochs = 6;
    let curves: Vec<Vec<f64>> = (0..5)
        .map(|seed| {
            let cfg = TrainConfig {
                seed,
                epochs,
                patience: 0,
                ..TrainConfig::default()
            };
            train::train(&corpus, &cfg)
                .unwrap()
                .history
                .iter()
                .map(|r| r.train_loss)
                .collect()
        })
        .collect();
    let medians: Vec<f64> = (0..epochs)
        .map(|e| erc_core::analysis::median(&curves.iter().map(|c| c[e]).collect::<Vec<_>>()))
        .collect();
    for w in medians.windows(2) {
        assert!(w[1] <= w[0], "{medians:?}");
    }
}

#[test]
fn grad_accumulation_changes_step_count_only() {
    let corpus = small_corpus(Dependency::None, 6);
    let a = train::train(&corpus, &TrainConfig { grad_accum: 1, ..small_config() }).unwrap();
    let b = train::train(&corpus, &TrainConfig { grad_accum: 4, ..small_config() }).unwrap();
    let steps = |n: usize, k: usize| n.div_ceil(k) as u64;
    let n_train = corpus.split(Split::Train).count();
    assert_eq!(a.checkpoint.optimizer.step, steps(n_train, 1) * a.checkpoint.epoch as u64);
    assert_eq!(b.checkpoint.optimizer.step, steps(n_train, 4) * b.checkpoint.epoch as u64);
}

#[test]
fn mask_baseline_matches_plain_evaluation() {
    let corpus = small_corpus(Dependency::Neighbor, 7);
    let params = params_for(&corpus, &small_config(), 1);
    let d = &corpus.dialogues[3];
    let r = train::mask_importance(d, &params).unwrap();
    assert_eq!(r.per_utterance.len(), d.len());
    let out = model::forward_dialogue(d, &params).unwrap();
    let gold = d.classes().unwrap();
    let (_, wf1) = erc_core::metrics::weighted_f1(&gold, out.preds.classes().unwrap(), corpus.num_classes()).unwrap();
    assert_eq!(r.baseline_f1, wf1);
}

#[test]
fn masking_hits_the_dependent_utterance_hardest() {
    let corpus = synth_corpus(&SynthSpec::new(Dependency::Neighbor, 0)).unwrap();
    let params = train::train(&corpus, &TrainConfig::default()).unwrap().params;
    let mut margins = Vec::new();
    for d in corpus.split(Split::Test).take(20) {
        let x = dataset::dialogue_features(d, params.arch.modalities).unwrap();
        let speakers = d.speakers();
        let gold = d.classes().unwrap();
        let base = model::forward_features(&x, &speakers, &params, 0.0, None).unwrap().probs;
        let n = d.len();
        let mut per_k = Vec::new();
        for k in 0..n - 1 {
            let mut masked = x.clone();
            let w = masked.cols();
            masked.data_mut()[k * w..(k + 1) * w].fill(0.0);
            let probs = model::forward_features(&masked, &speakers, &params, 0.0, None).unwrap().probs;
            let drop = |j: usize| base.at(j, gold[j]) - probs.at(j, gold[j]);
            let unrelated: Vec<f64> = (0..n).filter(|&j| j != k && j != k + 1).map(drop).collect();
            let mean_unrelated = unrelated.iter().sum::<f64>() / unrelated.len().max(1) as f64;
            per_k.push(drop(k + 1) - mean_unrelated);
        }
        margins.push(per_k.iter().sum::<f64>() / per_k.len() as f64);
    }
    let m = erc_core::analysis::median(&margins);
    assert!(m > 0.0, "median margin {m}");
}
