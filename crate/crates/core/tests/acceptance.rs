//! Acceptance suite. Each test prints one `PASS`/`FAIL` line; run with
//! `cargo test -p erc-core --test acceptance -- --nocapture` to see them.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::*;
use erc_core::analysis;
use erc_core::classifier::{self, ClassifierParams};
use erc_core::dataset::{synth_corpus, ModalityDims};
use erc_core::encoder::{self, EncoderParams, EncoderShape};
use erc_core::gnn::{self, GraphTransformerParams, GraphTransformerShape, RgcnParams};
use erc_core::graph::{self, Direction, EdgeMode, GraphOptions, Window};
use erc_core::metrics;
use erc_core::model::{self, ModelArch, ModelParams};
use erc_core::train;
use erc_core::*;
use rand::Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_INSTANCES: u64 = 20;

fn random_window(rng: &mut impl Rng) -> Window {
    match rng.gen_range(0..=6) {
        6 => Window::Unbounded,
        k => Window::Bounded(k),
    }
}

/// Runs `check` on `GRAD_INSTANCES` seeds and returns the worst error.
fn worst_over_instances(tag: u64, check: impl Fn(&mut rand_chacha::ChaCha8Rng) -> f64) -> f64 {
    (0..GRAD_INSTANCES)
        .map(|i| check(&mut rng(tag * 1000 + i)))
        .fold(0.0, f64::max)
}

fn grad_attention(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..=5);
    let d = r.gen_range(1..=8);
    let heads = r.gen_range(1..=3);
    let k = r.gen_range(1..=4);
    let x = random_tensor(r, &[n, d]);
    let mut params = BTreeMap::new();
    for h in 0..heads {
        for w in ["wq", "wk", "wv"] {
            params.insert(format!("h{h}.{w}"), random_tensor(r, &[d, k]));
        }
    }
    params.insert("wo".into(), random_tensor(r, &[heads * k, d]));
    let proj = random_tensor(r, &[n, d]);
    grad_check(&[x], &params, |tape, v, ps| {
        let mut outs = Vec::new();
        for h in 0..heads {
            let wq = tape.param(&format!("h{h}.wq"), &ps[&format!("h{h}.wq")]);
            let wk = tape.param(&format!("h{h}.wk"), &ps[&format!("h{h}.wk")]);
            let wv = tape.param(&format!("h{h}.wv"), &ps[&format!("h{h}.wv")]);
            let q = tape.matmul(v[0], wq)?;
            let kk = tape.matmul(v[0], wk)?;
            let vv = tape.matmul(v[0], wv)?;
            let kt = tape.transpose(kk)?;
            let s = tape.matmul(q, kt)?;
            let s = tape.scale(s, 1.0 / (k as f64).sqrt())?;
            let a = tape.softmax_rows(s)?;
            outs.push(tape.matmul(a, vv)?);
        }
        let cat = tape.concat_cols(&outs)?;
        let wo = tape.param("wo", &ps["wo"]);
        let out = tape.matmul(cat, wo)?;
        project(tape, out, &proj)
    })
}

fn grad_layer_norm(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..=5);
    let d = r.gen_range(2..=8);
    let x = random_tensor(r, &[n, d]);
    let params = BTreeMap::from([
        ("gamma".to_string(), random_tensor(r, &[d])),
        ("beta".to_string(), random_tensor(r, &[d])),
    ]);
    let proj = random_tensor(r, &[n, d]);
    grad_check(&[x], &params, |tape, v, ps| {
        let g = tape.param("gamma", &ps["gamma"]);
        let b = tape.param("beta", &ps["beta"]);
        let y = tape.layer_norm(v[0], g, b, 1e-5)?;
        project(tape, y, &proj)
    })
}

fn grad_ffn(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..=5);
    let d = r.gen_range(1..=8);
    let hidden = r.gen_range(1..=16);
    let x = random_tensor(r, &[n, d]);
    let params = BTreeMap::from([
        ("w1".to_string(), random_tensor(r, &[d, hidden])),
        ("w2".to_string(), random_tensor(r, &[hidden, d])),
    ]);
    let proj = random_tensor(r, &[n, d]);
    grad_check(&[x], &params, |tape, v, ps| {
        let w1 = tape.param("w1", &ps["w1"]);
        let w2 = tape.param("w2", &ps["w2"]);
        let h = tape.matmul(v[0], w1)?;
        let h = tape.relu(h)?;
        let y = tape.matmul(h, w2)?;
        project(tape, y, &proj)
    })
}

fn grad_encoder_block(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..=5);
    // LayerNorm over two features is constant up to eps, leaving nothing
    // but round-off for finite differences to measure.
    let d = r.gen_range(3..=8);
    let shape = EncoderShape {
        width: d,
        heads: r.gen_range(1..=3),
        layers: r.gen_range(1..=2),
        ffn_width: 2 * d,
    };
    let base = EncoderParams::init(shape, r).unwrap();
    let x = random_tensor(r, &[n, d]);
    let proj = random_tensor(r, &[n, d]);
    grad_check(&[x], &base.named("enc"), |tape, v, ps| {
        let p = with_named(&base, "enc", ps);
        let out = encoder::encode_on_tape(tape, v[0], &p, "enc", &mut DropoutCtx::eval())?;
        project(tape, out.z, &proj)
    })
}

fn grad_rgcn(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..=5);
    let (din, dout) = (r.gen_range(1..=8), r.gen_range(1..=8));
    let rc = r.gen_range(1..=4);
    let g = random_graph(r, n, rc);
    let base = RgcnParams::init(din, dout, rc, r);
    let x = random_tensor(r, &[n, din]);
    let proj = random_tensor(r, &[n, dout]);
    grad_check(&[x], &base.named("rgcn"), |tape, v, ps| {
        let p = with_named(&base, "rgcn", ps);
        let out = gnn::rgcn_on_tape(tape, v[0], &g, &p, "rgcn")?;
        project(tape, out, &proj)
    })
}

fn grad_graph_transformer(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..=5);
    let d = r.gen_range(1..=8);
    let shape = GraphTransformerShape {
        in_width: d,
        head_width: r.gen_range(1..=4),
        heads: r.gen_range(1..=3),
        out_width: r.gen_range(1..=8),
    };
    let g = random_graph(r, n, 1);
    let base = GraphTransformerParams::init(shape, r).unwrap();
    let x = random_tensor(r, &[n, d]);
    let proj = random_tensor(r, &[n, shape.out_width]);
    grad_check(&[x], &base.named("gt"), |tape, v, ps| {
        let p = with_named(&base, "gt", ps);
        let out = gnn::graph_transformer_on_tape(tape, v[0], &g, &p, "gt")?;
        project(tape, out.h, &proj)
    })
}

fn grad_classifier(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..=5);
    let d = r.gen_range(1..=8);
    let c = r.gen_range(2..=5);
    let base = ClassifierParams::init(d, r.gen_range(1..=6), c, TaskMode::Single, r).unwrap();
    let mut base = base;
    base.b1 = random_tensor(r, base.b1.shape());
    base.b2 = random_tensor(r, base.b2.shape());
    let x = random_tensor(r, &[n, d]);
    let proj = random_tensor(r, &[n, c]);
    grad_check(&[x], &base.named("cls"), |tape, v, ps| {
        let p = with_named(&base, "cls", ps);
        let out = classifier::logits_on_tape(tape, v[0], &p, "cls")?;
        project(tape, out, &proj)
    })
}

fn grad_cross_entropy(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..=5);
    let c = r.gen_range(1..=6);
    let logits = random_tensor(r, &[n, c]);
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
    grad_check(&[logits], &BTreeMap::new(), |tape, v, _| tape.cross_entropy(v[0], &labels))
}

fn grad_bce(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let n = r.gen_range(1..=5);
    let c = r.gen_range(1..=6);
    let logits = random_tensor(r, &[n, c]);
    let t = Tensor::new(vec![n, c], (0..n * c).map(|_| f64::from(r.gen_range(0..2u8))).collect()).unwrap();
    grad_check(&[logits], &BTreeMap::new(), |tape, v, _| tape.binary_cross_entropy(v[0], &t))
}

fn grad_end_to_end(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let mut spec = SynthSpec::new(Dependency::Neighbor, r.gen());
    spec.num_dialogues = 10;
    spec.utterances_per_dialogue = r.gen_range(1..=5);
    spec.num_speakers = r.gen_range(1..=3);
    spec.dims = ModalityDims { a: 2, t: 3, v: 2 };
    let corpus = synth_corpus(&spec).unwrap();
    let cfg = TrainConfig {
        seq_context_layers: 1,
        encoder_heads: 2,
        ffn_multiplier: 2,
        gnn_heads: 2,
        gnn_head_width: Some(3),
        window_past: random_window(r),
        window_future: random_window(r),
        ablation: [Ablation::Full, Ablation::NoRelations][r.gen_range(0..2)],
        gnn_relu: r.gen(),
        ..TrainConfig::default()
    };
    let arch = ModelArch::from_config(&cfg, &corpus).unwrap();
    let base = ModelParams::init(arch, r.gen()).unwrap();
    let d = &corpus.dialogues[0];
    let x = dataset::dialogue_features(d, base.arch.modalities).unwrap();
    let speakers = d.speakers();
    let targets = model::dialogue_targets(d, TaskMode::Single).unwrap();
    grad_check(&[], &base.named(""), |tape, _, ps| {
        let p = with_named(&base, "", ps);
        let trace = model::forward_on_tape(tape, &x, &speakers, &p, &mut DropoutCtx::eval())?;
        classifier::loss_on_tape(tape, trace.logits, &targets)
    })
}

/// One gradient check: worst relative error over its random instances.
type GradCheck = fn(&mut rand_chacha::ChaCha8Rng) -> f64;

#[test]
fn gradient_correctness() {
    let start = Instant::now();
    let checks: [(&str, GradCheck); 10] = [
        ("attention", grad_attention),
        ("layer_norm", grad_layer_norm),
        ("ffn", grad_ffn),
        ("encoder_block", grad_encoder_block),
        ("rgcn", grad_rgcn),
        ("graph_transformer", grad_graph_transformer),
        ("classifier", grad_classifier),
        ("cross_entropy", grad_cross_entropy),
        ("binary_cross_entropy", grad_bce),
        ("end_to_end", grad_end_to_end),
    ];
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for (tag, (name, check)) in checks.iter().enumerate() {
        let worst = worst_over_instances(tag as u64 + 1, check);
        summary.push(format!("{name}={worst:.1e}"));
        if worst.is_nan() || worst >= GRAD_TOL {
            failures.push(*name);
        }
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(120);
    report(
        "gradient correctness",
        ok,
        &format!("{GRAD_INSTANCES} instances per check, worst rel. error {}; {elapsed:.1?}", summary.join(" ")),
    );
    assert!(failures.is_empty(), "gradient checks failed: {failures:?}");
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
}

#[test]
fn graph_construction_oracle() {
    let mut r = rng(500);
    let mut mismatches = 0;
    for _ in 0..500 {
        let m = r.gen_range(1..=4);
        let n = r.gen_range(0..=20);
        let speakers: Vec<usize> = (0..n).map(|_| r.gen_range(0..m)).collect();
        let mut opts = GraphOptions::new(random_window(&mut r), random_window(&mut r), m);
        opts.self_loops = r.gen();
        for mode in [EdgeMode::BothDirections, EdgeMode::SingleDirection] {
            opts.edge_mode = mode;
            let mut built = graph::build_graph(&speakers, &opts).unwrap().edges;
            built.sort();
            if built != brute_force_edges(&speakers, &opts) {
                mismatches += 1;
            }
        }
    }
    report(
        "graph construction oracle",
        mismatches == 0,
        &format!("500 dialogues x 2 edge modes, {mismatches} mismatches"),
    );
    assert_eq!(mismatches, 0);
}

#[test]
fn dyad_fixture_relations() {
    let g = graph::build_graph(&FIXTURE_SPEAKERS, &GraphOptions::unbounded(2)).unwrap();
    let mut problems = Vec::new();
    for (node, (intra, inter)) in fixture_relations().into_iter().enumerate() {
        let (got_intra, got_inter) = graph::node_relations(&g, node, 2).unwrap();
        let flat = |rels: &[graph::NodeRelation]| -> Vec<(usize, bool)> {
            rels.iter()
                .map(|r| (r.other, r.relation.direction == Direction::Future))
                .collect()
        };
        if flat(&got_intra) != intra || flat(&got_inter) != inter {
            problems.push(format!("node {node}"));
        }
        for r in got_intra.iter().chain(&got_inter) {
            if r.relation.src_speaker != FIXTURE_SPEAKERS[node] || r.relation.dst_speaker != FIXTURE_SPEAKERS[r.other] {
                problems.push(format!("node {node} speakers"));
            }
        }
    }
    let mut types: Vec<usize> = g.edges.iter().map(|e| e.relation).collect();
    types.sort();
    types.dedup();
    if types != (0..8).collect::<Vec<_>>() {
        problems.push(format!("relation types used {types:?}"));
    }
    for (id, &(central, other, future)) in FIXTURE_TYPES.iter().enumerate() {
        let t = graph::relation_from_id(id, 2).unwrap();
        let dir = if future { Direction::Future } else { Direction::Past };
        if (t.src_speaker, t.dst_speaker, t.direction) != (central, other, dir)
            || graph::relation_type_id(central, other, dir, 2).unwrap() != id
        {
            problems.push(format!("type {}", id + 1));
        }
    }
    for m in 1..=5usize {
        let speakers: Vec<usize> = (0..2 * m).map(|i| i % m).collect();
        let g = graph::build_graph(&speakers, &GraphOptions::unbounded(m)).unwrap();
        let mut used: Vec<usize> = g.edges.iter().map(|e| e.relation).collect();
        used.sort();
        used.dedup();
        if graph::relation_count(m) != 2 * m * m || used.len() != 2 * m * m {
            problems.push(format!("M={m}: {} types", used.len()));
        }
    }
    report(
        "dyad fixture relations",
        problems.is_empty(),
        &format!("7-node relation sets, 8 relation types, 2M^2 for M=1..5; problems {problems:?}"),
    );
    assert!(problems.is_empty(), "{problems:?}");
}

#[test]
fn permutation_equivariance() {
    let mut r = rng(100);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = r.gen_range(2..=12);
        let shape = EncoderShape {
            width: d,
            heads: r.gen_range(1..=4),
            layers: r.gen_range(1..=3),
            ffn_width: 4 * d,
        };
        let params = EncoderParams::init(shape, &mut r).unwrap();
        let n = r.gen_range(1..=10);
        let x = random_tensor(&mut r, &[n, d]);
        let perm = random_perm(&mut r, n);
        let lhs = encoder::encode(&x.select_rows(&perm), &params).unwrap();
        let rhs = encoder::encode(&x, &params).unwrap().select_rows(&perm);
        worst = worst.max(lhs.max_abs_diff(&rhs));
    }
    let ok = worst <= 1e-9;
    report(
        "permutation equivariance",
        ok,
        &format!("100 (X, perm) pairs, max deviation {worst:.2e}"),
    );
    assert!(ok);
}

#[test]
fn metric_oracles() {
    let mut r = rng(1000);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let c = r.gen_range(1..=6);
        let len = r.gen_range(1..=60);
        let gold: Vec<usize> = (0..len).map(|_| r.gen_range(0..c)).collect();
        let pred: Vec<usize> = (0..len).map(|_| r.gen_range(0..c)).collect();
        let (per, w) = metrics::weighted_f1(&gold, &pred, c).unwrap();
        let (per_o, w_o) = oracle_weighted_f1(&gold, &pred, c);
        worst = worst.max((w - w_o).abs());
        for (a, b) in per.iter().zip(&per_o) {
            worst = worst.max((a - b).abs());
        }
        worst = worst.max((metrics::accuracy(&gold, &pred).unwrap() - oracle_accuracy(&gold, &pred)).abs());
    }
    let (per, hand) = metrics::weighted_f1(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
    let hand_ok = (hand - 2.0 / 3.0).abs() <= 1e-12 && per.iter().all(|f| (f - 2.0 / 3.0).abs() <= 1e-12);
    let ok = worst <= 1e-12 && hand_ok;
    report(
        "metric oracles",
        ok,
        &format!("1000 random cases, max deviation {worst:.2e}; hand case weighted F1 = {hand:.12}"),
    );
    assert!(ok);
}

#[test]
fn overfit_smoke() {
    let corpus = synth_corpus(&SynthSpec::new(Dependency::None, 0)).unwrap();
    let cfg = TrainConfig::default();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let out = pool.install(|| train::train(&corpus, &cfg)).unwrap();
    let train_acc = pool
        .install(|| train::split_metrics(&corpus, &out.params, Split::Train))
        .unwrap()
        .accuracy;
    let elapsed = start.elapsed();
    let ok = train_acc >= 0.99 && out.history.len() <= 50 && elapsed < Duration::from_secs(300);
    report(
        "overfit smoke",
        ok,
        &format!(
            "train accuracy {:.2}% after {} epochs (best epoch {}), {elapsed:.1?} single-threaded",
            train_acc * 100.0,
            out.history.len(),
            out.best_epoch
        ),
    );
    assert!(ok);
}

#[test]
fn ablation_direction() {
    let corpus = synth_corpus(&SynthSpec::new(Dependency::Neighbor, 0)).unwrap();
    let base = TrainConfig::default();
    let seeds = [0, 1, 2];
    let start = Instant::now();
    let ablation =
        analysis::run_ablation(&corpus, &base, &[Ablation::Full, Ablation::NoGnn], &[], &seeds).unwrap();
    let context = analysis::run_context_sweep(&corpus, &base, &[Some(1)], &seeds).unwrap();
    let elapsed = start.elapsed();
    let full = ablation.rows[0].median;
    let no_gnn = ablation.rows[1].median;
    let n1 = context.rows[0].median;
    let gap_gnn = (full - no_gnn) * 100.0;
    let gap_ctx = (full - n1) * 100.0;
    let ok = gap_gnn >= 5.0 && gap_ctx >= 5.0 && elapsed < Duration::from_secs(900);
    report(
        "ablation direction",
        ok,
        &format!(
            "median wF1 full {:.2}, no_gnn {:.2}, n=1 {:.2} (gaps {gap_gnn:.2} / {gap_ctx:.2} points), {elapsed:.1?}",
            full * 100.0,
            no_gnn * 100.0,
            n1 * 100.0
        ),
    );
    assert!(ok);
}

#[test]
fn determinism() {
    let corpus = synth_corpus(&SynthSpec::new(Dependency::Neighbor, 5)).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed: 7,
        ..TrainConfig::default()
    };
    let a = train::train(&corpus, &cfg).unwrap();
    let b = train::train(&corpus, &cfg).unwrap();
    let same_history = train::history_csv(&a.history).into_bytes() == train::history_csv(&b.history).into_bytes();
    let same_checkpoint = a.checkpoint.to_json_bytes().unwrap() == b.checkpoint.to_json_bytes().unwrap();
    let ok = same_history && same_checkpoint;
    report(
        "determinism",
        ok,
        &format!("history CSV identical: {same_history}, checkpoint identical: {same_checkpoint}"),
    );
    assert!(ok);
}

#[test]
fn graph_layer_loop_oracles() {
    let mut r = rng(200);
    let (mut worst_rgcn, mut worst_gt): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let n = r.gen_range(1..=8);
        let din = r.gen_range(1..=6);
        let rc = r.gen_range(1..=8);
        let g = random_graph(&mut r, n, rc);
        let z = random_tensor(&mut r, &[n, din]);

        let p = RgcnParams::init(din, r.gen_range(1..=6), rc, &mut r);
        let fast = gnn::rgcn_forward(&z, &g, &p).unwrap();
        worst_rgcn = worst_rgcn.max(fast.max_abs_diff(&naive_rgcn(&z, &g, &p)));

        let shape = GraphTransformerShape {
            in_width: din,
            head_width: r.gen_range(1..=5),
            heads: r.gen_range(1..=3),
            out_width: r.gen_range(1..=6),
        };
        let p = GraphTransformerParams::init(shape, &mut r).unwrap();
        let fast = gnn::graph_transformer_forward(&z, &g, &p).unwrap();
        worst_gt = worst_gt.max(fast.max_abs_diff(&naive_graph_transformer(&z, &g, &p)));
    }
    let ok = worst_rgcn <= 1e-12 && worst_gt <= 1e-12;
    report(
        "graph layer loop oracles",
        ok,
        &format!("200 graphs, max deviation RGCN {worst_rgcn:.2e}, GraphTransformer {worst_gt:.2e}"),
    );
    assert!(ok);
}
