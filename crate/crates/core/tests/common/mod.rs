#![allow(clippy::needless_range_loop, clippy::type_complexity)]

//! Independent oracles shared by the integration and acceptance tests:
//! finite differences, brute-force graph enumeration, per-node loop
//! implementations of the graph layers and scan-based metrics.

#![allow(dead_code)]

use std::collections::BTreeMap;

use erc_core::graph::{Direction, Edge, EdgeMode, GraphOptions, Window};
use erc_core::gnn::{GraphTransformerParams, RgcnParams};
use erc_core::{ConversationGraph, Parameterized, Result, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_perm(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, 0 when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Worst relative error between analytic and central-difference gradients
/// of `f`, over its input tensors and any named parameters `f` binds.
///
/// `f` builds a scalar on the tape from leaf variables for `inputs`, and
/// receives the (possibly perturbed) parameter map to bind by name.
pub fn grad_check<F>(inputs: &[Tensor], params: &BTreeMap<String, Tensor>, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var], &BTreeMap<String, Tensor>) -> Result<Var>,
{
    let eval = |ins: &[Tensor], ps: &BTreeMap<String, Tensor>| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars, ps).unwrap();
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars, params).unwrap();
    tape.backward(out).unwrap();
    let param_grads = tape.param_grads();

    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        let mut numeric = vec![0.0; t.len()];
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            numeric[i] = (eval(&plus, params) - eval(&minus, params)) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    for (name, t) in params {
        let analytic = param_grads.get(name).cloned().unwrap_or_else(|| vec![0.0; t.len()]);
        let mut numeric = vec![0.0; t.len()];
        for i in 0..t.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += FD_STEP;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= FD_STEP;
            numeric[i] = (eval(inputs, &plus) - eval(inputs, &minus)) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_error(&analytic, &numeric));
    }
    worst
}

/// Rebuilds a parameter struct from a (perturbed) name map.
pub fn with_named<P: Parameterized + Clone>(p: &P, prefix: &str, named: &BTreeMap<String, Tensor>) -> P {
    let mut q = p.clone();
    q.load_named(prefix, named).unwrap();
    q
}

/// Reduces an output to a scalar through a fixed random projection so that
/// every output entry contributes to the gradient.
pub fn project(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

/// Every edge `src -> dst` obtained by testing all ordered pairs.
pub fn brute_force_edges(speakers: &[usize], opts: &GraphOptions) -> Vec<Edge> {
    let n = speakers.len();
    let m = opts.num_speakers;
    let mut edges = Vec::new();
    for dst in 0..n {
        for src in 0..n {
            let (include, direction) = if src == dst {
                (opts.self_loops, Direction::Past)
            } else if src < dst {
                (within(opts.past, dst - src), Direction::Past)
            } else {
                (
                    opts.edge_mode == EdgeMode::BothDirections && within(opts.future, src - dst),
                    Direction::Future,
                )
            };
            if include {
                let dir = match direction {
                    Direction::Past => 0,
                    Direction::Future => 1,
                };
                edges.push(Edge {
                    src,
                    dst,
                    relation: dir * m * m + speakers[dst] * m + speakers[src],
                });
            }
        }
    }
    edges.sort();
    edges
}

fn within(w: Window, distance: usize) -> bool {
    match w {
        Window::Unbounded => true,
        Window::Bounded(k) => distance <= k,
    }
}

/// Arbitrary directed multigraph with random relation ids.
pub fn random_graph(rng: &mut impl Rng, n: usize, relation_count: usize) -> ConversationGraph {
    let m = rng.gen_range(0..=3 * n);
    let edges = (0..m)
        .map(|_| Edge {
            src: rng.gen_range(0..n),
            dst: rng.gen_range(0..n),
            relation: rng.gen_range(0..relation_count),
        })
        .collect();
    ConversationGraph {
        num_nodes: n,
        edges,
        relation_count,
    }
}

fn row_times(x: &Tensor, i: usize, w: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (c, o) in out.iter_mut().enumerate() {
        for k in 0..w.rows() {
            *o += x.at(i, k) * w.at(k, c);
        }
    }
    out
}

/// Relational convolution one node at a time.
pub fn naive_rgcn(z: &Tensor, g: &ConversationGraph, p: &RgcnParams) -> Tensor {
    let n = g.num_nodes;
    let out_w = p.root.cols();
    let mut out = Tensor::zeros(&[n, out_w]);
    for i in 0..n {
        let mut acc = row_times(z, i, &p.root);
        for (r, theta) in p.relations.iter().enumerate() {
            let nbrs: Vec<usize> = g
                .edges
                .iter()
                .filter(|e| e.dst == i && e.relation == r)
                .map(|e| e.src)
                .collect();
            if nbrs.is_empty() {
                continue;
            }
            for &j in &nbrs {
                let msg = row_times(z, j, theta);
                for (a, m) in acc.iter_mut().zip(msg) {
                    *a += m / nbrs.len() as f64;
                }
            }
        }
        for (c, v) in acc.into_iter().enumerate() {
            out.set(i, c, v);
        }
    }
    out
}

/// Graph attention one node and one head at a time.
pub fn naive_graph_transformer(x: &Tensor, g: &ConversationGraph, p: &GraphTransformerParams) -> Tensor {
    let n = g.num_nodes;
    let mut cat: Vec<Vec<f64>> = vec![Vec::new(); n];
    for head in &p.heads {
        let k = head.w_query.cols();
        for i in 0..n {
            let q = row_times(x, i, &head.w_query);
            let nbrs: Vec<usize> = g.edges.iter().filter(|e| e.dst == i).map(|e| e.src).collect();
            let scores: Vec<f64> = nbrs
                .iter()
                .map(|&j| {
                    let kj = row_times(x, j, &head.w_key);
                    q.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>() / (k as f64).sqrt()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut h = row_times(x, i, &head.w_root);
            for (&j, e) in nbrs.iter().zip(&exps) {
                let v = row_times(x, j, &head.w_value);
                for (a, b) in h.iter_mut().zip(v) {
                    *a += e / total * b;
                }
            }
            cat[i].extend(h);
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row = Tensor::from_rows(&[cat[i].clone()]).unwrap();
            row_times(&row, 0, &p.w_out)
        })
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

/// Confusion matrix by nested scans, then per-class F1 and the
/// support-weighted mean.
pub fn oracle_weighted_f1(gold: &[usize], pred: &[usize], c: usize) -> (Vec<f64>, f64) {
    let mut cm = vec![vec![0usize; c]; c];
    for g in 0..c {
        for p in 0..c {
            cm[g][p] = gold.iter().zip(pred).filter(|&(&a, &b)| a == g && b == p).count();
        }
    }
    let mut per = Vec::new();
    let mut weighted = 0.0;
    for k in 0..c {
        let tp = cm[k][k] as f64;
        let fp: f64 = (0..c).filter(|&g| g != k).map(|g| cm[g][k] as f64).sum();
        let fn_: f64 = (0..c).filter(|&p| p != k).map(|p| cm[k][p] as f64).sum();
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per.push(f1);
        weighted += f1 * (tp + fn_);
    }
    (per, weighted / gold.len() as f64)
}

pub fn oracle_accuracy(gold: &[usize], pred: &[usize]) -> f64 {
    let mut hits = 0;
    for i in 0..gold.len() {
        if gold[i] == pred[i] {
            hits += 1;
        }
    }
    hits as f64 / gold.len() as f64
}

/// The 7-utterance, 2-speaker dialogue: speaker 1 (id 0) speaks the even
/// positions, speaker 2 (id 1) the odd ones.
pub const FIXTURE_SPEAKERS: [usize; 7] = [0, 1, 0, 1, 0, 1, 0];

/// Expected `(other, future?)` relations per central node as
/// (intra, inter), transcribed from the published relation listing.
pub fn fixture_relations() -> Vec<(Vec<(usize, bool)>, Vec<(usize, bool)>)> {
    const P: bool = false;
    const F: bool = true;
    vec![
        (vec![(0, P), (2, F), (4, F), (6, F)], vec![(1, F), (3, F), (5, F)]),
        (vec![(1, P), (3, F), (5, F)], vec![(0, P), (2, F), (4, F), (6, F)]),
        (vec![(0, P), (2, P), (4, F), (6, F)], vec![(1, P), (3, F), (5, F)]),
        (vec![(1, P), (3, P), (5, F)], vec![(0, P), (2, P), (4, F), (6, F)]),
        (vec![(0, P), (2, P), (4, P), (6, F)], vec![(1, P), (3, P), (5, F)]),
        (vec![(1, P), (3, P), (5, P)], vec![(0, P), (2, P), (4, P), (6, F)]),
        (vec![(0, P), (2, P), (4, P), (6, P)], vec![(1, P), (3, P), (5, P)]),
    ]
}

/// The eight unique relation types for two speakers, 1-based, as
/// (central speaker, other speaker, future?).
pub const FIXTURE_TYPES: [(usize, usize, bool); 8] = [
    (0, 0, false),
    (0, 1, false),
    (1, 0, false),
    (1, 1, false),
    (0, 0, true),
    (0, 1, true),
    (1, 0, true),
    (1, 1, true),
];

pub fn report(name: &str, ok: bool, detail: &str) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}
