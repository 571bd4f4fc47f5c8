//! Utterance context encoder: a stack of post-norm transformer blocks with
//! no positional signal, so the output is equivariant to row permutations
//! of the input.
//!
//! Per block, with `H` heads of width `k`:
//!
//! ```text
//! alpha_h = softmax_rows(X Wq_h (X Wk_h)^T / sqrt(k))
//! U'      = [alpha_1 X Wv_1 | ... | alpha_H X Wv_H] Wo
//! U       = LayerNorm(X + U')
//! Z       = LayerNorm(U + ReLU(U W1) W2)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ErcError, Result};
use crate::params::{bind, glorot, join, Parameterized};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::DropoutCtx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_width: usize,
}

impl EncoderShape {
    /// `width / heads` when divisible, otherwise rounded up.
    pub fn head_width(&self) -> usize {
        self.width.div_ceil(self.heads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub heads: Vec<AttentionHead>,
    pub wo: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub shape: EncoderShape,
    pub layers: Vec<EncoderLayer>,
    pub layer_norm_eps: f64,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(shape: EncoderShape, rng: &mut R) -> Result<Self> {
        if shape.width == 0 || shape.heads == 0 || shape.layers == 0 || shape.ffn_width == 0 {
            return Err(ErcError::InvalidArgument(format!(
                "encoder shape must be positive: {shape:?}"
            )));
        }
        let d = shape.width;
        let k = shape.head_width();
        let layers = (0..shape.layers)
            .map(|_| EncoderLayer {
                heads: (0..shape.heads)
                    .map(|_| AttentionHead {
                        wq: glorot(d, k, rng),
                        wk: glorot(d, k, rng),
                        wv: glorot(d, k, rng),
                    })
                    .collect(),
                wo: glorot(k * shape.heads, d, rng),
                w1: glorot(d, shape.ffn_width, rng),
                w2: glorot(shape.ffn_width, d, rng),
                ln1_gamma: Tensor::filled(&[d], 1.0),
                ln1_beta: Tensor::zeros(&[d]),
                ln2_gamma: Tensor::filled(&[d], 1.0),
                ln2_beta: Tensor::zeros(&[d]),
            })
            .collect();
        Ok(EncoderParams {
            shape,
            layers,
            layer_norm_eps: 1e-5,
        })
    }
}

impl Parameterized for EncoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (l, layer) in self.layers.iter().enumerate() {
            let lp = join(prefix, &format!("l{l}"));
            for (h, head) in layer.heads.iter().enumerate() {
                let hp = join(&lp, &format!("h{h}"));
                f(join(&hp, "wq"), &head.wq);
                f(join(&hp, "wk"), &head.wk);
                f(join(&hp, "wv"), &head.wv);
            }
            f(join(&lp, "wo"), &layer.wo);
            f(join(&lp, "w1"), &layer.w1);
            f(join(&lp, "w2"), &layer.w2);
            f(join(&lp, "ln1.gamma"), &layer.ln1_gamma);
            f(join(&lp, "ln1.beta"), &layer.ln1_beta);
            f(join(&lp, "ln2.gamma"), &layer.ln2_gamma);
            f(join(&lp, "ln2.beta"), &layer.ln2_beta);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let lp = join(prefix, &format!("l{l}"));
            for (h, head) in layer.heads.iter_mut().enumerate() {
                let hp = join(&lp, &format!("h{h}"));
                f(join(&hp, "wq"), &mut head.wq);
                f(join(&hp, "wk"), &mut head.wk);
                f(join(&hp, "wv"), &mut head.wv);
            }
            f(join(&lp, "wo"), &mut layer.wo);
            f(join(&lp, "w1"), &mut layer.w1);
            f(join(&lp, "w2"), &mut layer.w2);
            f(join(&lp, "ln1.gamma"), &mut layer.ln1_gamma);
            f(join(&lp, "ln1.beta"), &mut layer.ln1_beta);
            f(join(&lp, "ln2.gamma"), &mut layer.ln2_gamma);
            f(join(&lp, "ln2.beta"), &mut layer.ln2_beta);
        }
    }
}

pub struct EncoderOutput {
    pub z: Var,
    /// `attention[layer][head]`, each `n×n`.
    pub attention: Vec<Vec<Var>>,
}

/// Records the encoder forward pass on `tape`.
pub fn encode_on_tape(
    tape: &mut Tape,
    x: Var,
    params: &EncoderParams,
    prefix: &str,
    drop: &mut DropoutCtx<'_>,
) -> Result<EncoderOutput> {
    let input = tape.value(x);
    if !input.is_matrix() || input.rows() == 0 || input.cols() != params.shape.width {
        return Err(ErcError::shape(
            "encode",
            input.shape(),
            &[params.shape.width],
        ));
    }
    let scale = 1.0 / (params.shape.head_width() as f64).sqrt();
    let eps = params.layer_norm_eps;
    let mut h = x;
    let mut attention = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let lp = join(prefix, &format!("l{l}"));
        let mut head_outputs = Vec::with_capacity(layer.heads.len());
        let mut maps = Vec::with_capacity(layer.heads.len());
        for (hi, head) in layer.heads.iter().enumerate() {
            let hp = join(&lp, &format!("h{hi}"));
            let wq = bind(tape, &hp, "wq", &head.wq);
            let wk = bind(tape, &hp, "wk", &head.wk);
            let wv = bind(tape, &hp, "wv", &head.wv);
            let q = tape.matmul(h, wq)?;
            let k = tape.matmul(h, wk)?;
            let v = tape.matmul(h, wv)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale)?;
            let alpha = tape.softmax_rows(scores)?;
            maps.push(alpha);
            head_outputs.push(tape.matmul(alpha, v)?);
        }
        attention.push(maps);
        let wo = bind(tape, &lp, "wo", &layer.wo);
        let w1 = bind(tape, &lp, "w1", &layer.w1);
        let w2 = bind(tape, &lp, "w2", &layer.w2);
        let g1 = bind(tape, &lp, "ln1.gamma", &layer.ln1_gamma);
        let b1 = bind(tape, &lp, "ln1.beta", &layer.ln1_beta);
        let g2 = bind(tape, &lp, "ln2.gamma", &layer.ln2_gamma);
        let b2 = bind(tape, &lp, "ln2.beta", &layer.ln2_beta);

        let cat = tape.concat_cols(&head_outputs)?;
        let attended = tape.matmul(cat, wo)?;
        let attended = drop.apply(tape, attended)?;
        let residual = tape.add(h, attended)?;
        let u = tape.layer_norm(residual, g1, b1, eps)?;

        let hidden = tape.matmul(u, w1)?;
        let hidden = tape.relu(hidden)?;
        let ffn = tape.matmul(hidden, w2)?;
        let ffn = drop.apply(tape, ffn)?;
        let residual = tape.add(u, ffn)?;
        h = tape.layer_norm(residual, g2, b2, eps)?;
    }
    Ok(EncoderOutput { z: h, attention })
}

/// Eval-mode encoding of a dialogue's fused feature matrix.
pub fn encode(x: &Tensor, params: &EncoderParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = encode_on_tape(&mut tape, xv, params, "encoder", &mut DropoutCtx::eval())?;
    Ok(tape.value(out.z).clone())
}

/// Attention maps `[layer][head]` from an eval-mode forward pass.
pub fn attention_maps(x: &Tensor, params: &EncoderParams) -> Result<Vec<Vec<Tensor>>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = encode_on_tape(&mut tape, xv, params, "encoder", &mut DropoutCtx::eval())?;
    Ok(out
        .attention
        .iter()
        .map(|layer| layer.iter().map(|&v| tape.value(v).clone()).collect())
        .collect())
}
