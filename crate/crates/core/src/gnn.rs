//! Graph layers over a [`ConversationGraph`]: relational graph convolution
//! followed by graph-transformer attention.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ErcError, Result};
use crate::graph::ConversationGraph;
use crate::params::{bind, glorot, join, Parameterized};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relational graph convolution weights: one root transform plus one
/// transform per relation type, all `in_width × out_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgcnParams {
    pub root: Tensor,
    pub relations: Vec<Tensor>,
}

impl RgcnParams {
    pub fn init<R: Rng + ?Sized>(
        in_width: usize,
        out_width: usize,
        relation_count: usize,
        rng: &mut R,
    ) -> Self {
        RgcnParams {
            root: glorot(in_width, out_width, rng),
            relations: (0..relation_count)
                .map(|_| glorot(in_width, out_width, rng))
                .collect(),
        }
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }
}

impl Parameterized for RgcnParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "root"), &self.root);
        for (r, t) in self.relations.iter().enumerate() {
            f(join(prefix, &format!("rel{r}")), t);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "root"), &mut self.root);
        for (r, t) in self.relations.iter_mut().enumerate() {
            f(join(prefix, &format!("rel{r}")), t);
        }
    }
}

/// Per-relation mean-aggregation matrices: `A_r[i][j] = c / |N_r(i)|` where
/// `c` counts edges `j -> i` of type `r`. Relations without edges are
/// omitted.
pub fn relation_mean_operators(
    g: &ConversationGraph,
    relation_count: usize,
) -> Result<Vec<(usize, Tensor)>> {
    let n = g.num_nodes;
    let mut counts = vec![vec![0.0f64; n * n]; relation_count];
    let mut used = vec![false; relation_count];
    for e in &g.edges {
        if e.relation >= relation_count {
            return Err(ErcError::RelationOutOfRange {
                relation: e.relation,
                relation_count,
            });
        }
        if e.src >= n || e.dst >= n {
            return Err(ErcError::InvalidArgument(format!(
                "edge {}->{} outside {n} nodes",
                e.src, e.dst
            )));
        }
        counts[e.relation][e.dst * n + e.src] += 1.0;
        used[e.relation] = true;
    }
    let mut out = Vec::new();
    for (r, mut a) in counts.into_iter().enumerate() {
        if !used[r] {
            continue;
        }
        for i in 0..n {
            let row = &mut a[i * n..(i + 1) * n];
            let deg: f64 = row.iter().sum();
            if deg > 0.0 {
                row.iter_mut().for_each(|v| *v /= deg);
            }
        }
        out.push((r, Tensor::new(vec![n, n], a)?));
    }
    Ok(out)
}

/// `x'_i = z_i Θ_root + Σ_r Σ_{j ∈ N_r(i)} z_j Θ_r / |N_r(i)|`.
pub fn rgcn_on_tape(
    tape: &mut Tape,
    z: Var,
    g: &ConversationGraph,
    params: &RgcnParams,
    prefix: &str,
) -> Result<Var> {
    let zt = tape.value(z);
    if zt.rows() != g.num_nodes || zt.cols() != params.root.rows() {
        return Err(ErcError::shape(
            "rgcn",
            zt.shape(),
            &[g.num_nodes, params.root.rows()],
        ));
    }
    let operators = relation_mean_operators(g, params.relation_count())?;
    let root = bind(tape, prefix, "root", &params.root);
    let mut out = tape.matmul(z, root)?;
    for (r, op) in operators {
        let theta = bind(tape, prefix, &format!("rel{r}"), &params.relations[r]);
        let transformed = tape.matmul(z, theta)?;
        let a = tape.constant(op);
        let msg = tape.matmul(a, transformed)?;
        out = tape.add(out, msg)?;
    }
    // Relation weights without edges in this graph still get a (zero) slot.
    for (r, t) in params.relations.iter().enumerate() {
        bind(tape, prefix, &format!("rel{r}"), t);
    }
    Ok(out)
}

pub fn rgcn_forward(z: &Tensor, g: &ConversationGraph, params: &RgcnParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let out = rgcn_on_tape(&mut tape, zv, g, params, "rgcn")?;
    Ok(tape.value(out).clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphAttentionHead {
    /// Transform of the receiving node itself.
    pub w_root: Tensor,
    /// Transform of neighbour messages.
    pub w_value: Tensor,
    pub w_query: Tensor,
    pub w_key: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphTransformerShape {
    pub in_width: usize,
    pub head_width: usize,
    pub heads: usize,
    pub out_width: usize,
}

/// Multi-head graph transformer weights; head outputs are concatenated and
/// projected by `w_out` (`heads·head_width × out_width`).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTransformerParams {
    pub heads: Vec<GraphAttentionHead>,
    pub w_out: Tensor,
}

impl GraphTransformerParams {
    pub fn init<R: Rng + ?Sized>(shape: GraphTransformerShape, rng: &mut R) -> Result<Self> {
        if shape.heads == 0 || shape.head_width == 0 {
            return Err(ErcError::InvalidArgument(format!(
                "graph transformer shape must be positive: {shape:?}"
            )));
        }
        let (d, k) = (shape.in_width, shape.head_width);
        Ok(GraphTransformerParams {
            heads: (0..shape.heads)
                .map(|_| GraphAttentionHead {
                    w_root: glorot(d, k, rng),
                    w_value: glorot(d, k, rng),
                    w_query: glorot(d, k, rng),
                    w_key: glorot(d, k, rng),
                })
                .collect(),
            w_out: glorot(k * shape.heads, shape.out_width, rng),
        })
    }
}

impl Parameterized for GraphTransformerParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (h, head) in self.heads.iter().enumerate() {
            let hp = join(prefix, &format!("h{h}"));
            f(join(&hp, "w_root"), &head.w_root);
            f(join(&hp, "w_value"), &head.w_value);
            f(join(&hp, "w_query"), &head.w_query);
            f(join(&hp, "w_key"), &head.w_key);
        }
        f(join(prefix, "w_out"), &self.w_out);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (h, head) in self.heads.iter_mut().enumerate() {
            let hp = join(prefix, &format!("h{h}"));
            f(join(&hp, "w_root"), &mut head.w_root);
            f(join(&hp, "w_value"), &mut head.w_value);
            f(join(&hp, "w_query"), &mut head.w_query);
            f(join(&hp, "w_key"), &mut head.w_key);
        }
        f(join(prefix, "w_out"), &mut self.w_out);
    }
}

/// Edge multiplicities `c[i][j]` = number of edges `j -> i`, relation types
/// ignored.
pub fn neighbor_weights(g: &ConversationGraph) -> Tensor {
    let n = g.num_nodes;
    let mut w = Tensor::zeros(&[n, n]);
    for e in &g.edges {
        let v = w.at(e.dst, e.src);
        w.set(e.dst, e.src, v + 1.0);
    }
    w
}

pub struct GraphTransformerOutput {
    pub h: Var,
    /// Per-head attention over in-neighbours, `n×n`, rows of isolated nodes
    /// all zero.
    pub attention: Vec<Var>,
}

/// Per head: `h_i = x_i W_root + Σ_{j ∈ N(i)} α_ij x_j W_value` with
/// `α_i· = softmax_j((x_i W_query)·(x_j W_key) / sqrt(head_width))`.
pub fn graph_transformer_on_tape(
    tape: &mut Tape,
    x: Var,
    g: &ConversationGraph,
    params: &GraphTransformerParams,
    prefix: &str,
) -> Result<GraphTransformerOutput> {
    let xt = tape.value(x);
    let in_width = params.heads[0].w_root.rows();
    if xt.rows() != g.num_nodes || xt.cols() != in_width {
        return Err(ErcError::shape(
            "graph_transformer",
            xt.shape(),
            &[g.num_nodes, in_width],
        ));
    }
    let weights = neighbor_weights(g);
    let mut outputs = Vec::with_capacity(params.heads.len());
    let mut attention = Vec::with_capacity(params.heads.len());
    for (h, head) in params.heads.iter().enumerate() {
        let hp = join(prefix, &format!("h{h}"));
        let w_root = bind(tape, &hp, "w_root", &head.w_root);
        let w_value = bind(tape, &hp, "w_value", &head.w_value);
        let w_query = bind(tape, &hp, "w_query", &head.w_query);
        let w_key = bind(tape, &hp, "w_key", &head.w_key);
        let scale = 1.0 / (head.w_query.cols() as f64).sqrt();

        let q = tape.matmul(x, w_query)?;
        let k = tape.matmul(x, w_key)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale)?;
        let alpha = tape.masked_softmax_rows(scores, &weights)?;
        let values = tape.matmul(x, w_value)?;
        let messages = tape.matmul(alpha, values)?;
        let own = tape.matmul(x, w_root)?;
        outputs.push(tape.add(own, messages)?);
        attention.push(alpha);
    }
    let w_out = bind(tape, prefix, "w_out", &params.w_out);
    let cat = tape.concat_cols(&outputs)?;
    let h = tape.matmul(cat, w_out)?;
    Ok(GraphTransformerOutput { h, attention })
}

pub fn graph_transformer_forward(
    x: &Tensor,
    g: &ConversationGraph,
    params: &GraphTransformerParams,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = graph_transformer_on_tape(&mut tape, xv, g, params, "gt")?;
    Ok(tape.value(out.h).clone())
}

/// Attention maps of every head from an eval forward pass.
pub fn graph_attention_maps(
    x: &Tensor,
    g: &ConversationGraph,
    params: &GraphTransformerParams,
) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = graph_transformer_on_tape(&mut tape, xv, g, params, "gt")?;
    Ok(out.attention.iter().map(|&a| tape.value(a).clone()).collect())
}

/// The graph-free path used by the no-GNN ablation.
pub fn bypass_gnn(z: Var) -> Var {
    z
}
