//! Named parameter collections and their on-disk format.
//!
//! Parameters serialise as JSON:
//! `{"magic": "ERC-PARAMS", "version": 1, "params": {name: {"shape": [..], "data": [..]}}}`.
//! Names are dotted paths (`encoder.l0.h1.wq`) and are emitted in sorted
//! order, so identical parameters always produce identical bytes.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ErcError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const PARAMS_MAGIC: &str = "ERC-PARAMS";
pub const PARAMS_VERSION: u32 = 1;

/// Something that owns trainable tensors under stable dotted names.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn named(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        self.visit(prefix, &mut |name, t| {
            out.insert(name, t.clone());
        });
        out
    }

    /// Overwrites every tensor from `named`, requiring exact name and shape
    /// coverage.
    fn load_named(&mut self, prefix: &str, named: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut problem: Option<String> = None;
        let mut seen = 0;
        self.visit_mut(prefix, &mut |name, t| {
            if problem.is_some() {
                return;
            }
            match named.get(&name) {
                Some(src) if src.shape() == t.shape() => {
                    t.data_mut().copy_from_slice(src.data());
                    seen += 1;
                }
                Some(src) => {
                    problem = Some(format!(
                        "parameter {name}: expected shape {:?}, found {:?}",
                        t.shape(),
                        src.shape()
                    ))
                }
                None => problem = Some(format!("parameter {name} missing")),
            }
        });
        if let Some(p) = problem {
            return Err(ErcError::Format(p));
        }
        if seen != named.len() {
            return Err(ErcError::Format(format!(
                "{} unexpected parameters in file",
                named.len() - seen
            )));
        }
        Ok(())
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Registers a parameter on the tape under `prefix.name`.
pub fn bind(tape: &mut Tape, prefix: &str, name: &str, t: &Tensor) -> Var {
    tape.param(&join(prefix, name), t)
}

pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::glorot(rows, cols, rng)
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamFile {
    magic: String,
    version: u32,
    params: BTreeMap<String, StoredTensor>,
}

pub fn params_to_json(named: &BTreeMap<String, Tensor>) -> serde_json::Value {
    let file = ParamFile {
        magic: PARAMS_MAGIC.to_string(),
        version: PARAMS_VERSION,
        params: named
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect(),
    };
    serde_json::to_value(file).expect("parameter json")
}

pub fn params_from_json(value: &serde_json::Value) -> Result<BTreeMap<String, Tensor>> {
    let file: ParamFile = serde_json::from_value(value.clone())?;
    if file.magic != PARAMS_MAGIC {
        return Err(ErcError::Format(format!("bad magic \"{}\"", file.magic)));
    }
    if file.version != PARAMS_VERSION {
        return Err(ErcError::Format(format!(
            "unsupported parameter format version {}",
            file.version
        )));
    }
    file.params
        .into_iter()
        .map(|(k, s)| Ok((k, Tensor::new(s.shape, s.data)?)))
        .collect()
}
