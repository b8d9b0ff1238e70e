//! Self-describing binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! b"PILIRCKP"            magic
//! u32 LE                 format version
//! u32 LE                 manifest length in bytes
//! manifest               UTF-8 text, one record per line
//! payload                little-endian f64 arrays
//! ```
//!
//! Manifest records:
//!
//! ```text
//! model <ModelSpec as JSON>
//! problem <name> [<key>=<value> ...]
//! bounds <lo> <hi> [<lo> <hi> ...]
//! out_dim <n>
//! tensor <name> <d1>x<d2>x... <byte offset into payload>
//! ```
//!
//! Floats in the manifest use Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::networks::{Model, ModelError, ModelSpec};
use crate::params::ParamStore;
use crate::pde::{PdeProblem, ProblemError};

pub const MAGIC: &[u8; 8] = b"PILIRCKP";
pub const VERSION: u32 = 1;

const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated: {0}")]
    Truncated(&'static str),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("tensor {name}: {reason}")]
    Tensor { name: String, reason: String },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub problem_name: String,
    pub problem_params: Vec<(String, f64)>,
    pub bounds: Vec<(f64, f64)>,
    pub out_dim: usize,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, problem: &PdeProblem) -> Self {
        Checkpoint {
            model: model.spec.clone(),
            problem_name: problem.name.clone(),
            problem_params: problem.params(),
            bounds: model.bounds.clone(),
            out_dim: model.out_dim,
            tensors: model
                .params
                .entries()
                .iter()
                .map(|e| TensorRecord {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data: e.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn problem(&self) -> Result<PdeProblem, ProblemError> {
        PdeProblem::with_params(&self.problem_name, self.problem_params.iter().map(|(k, v)| (k.as_str(), *v)))
    }

    /// Rebuilds the model; name or shape differences against the manifest's
    /// architecture are reported as a diff.
    pub fn to_model(&self) -> Result<Model, ModelError> {
        let mut store = ParamStore::new();
        for t in &self.tensors {
            store.add(t.name.clone(), t.shape.clone(), Tensor::row(&t.data));
        }
        Model::with_params(&self.model, &self.bounds, self.out_dim, store)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut manifest = String::new();
        let spec = serde_json::to_string(&self.model).expect("model spec serializes");
        manifest.push_str(&format!("model {spec}\n"));
        manifest.push_str(&format!("problem {}", self.problem_name));
        for (k, v) in &self.problem_params {
            manifest.push_str(&format!(" {k}={v:?}"));
        }
        manifest.push('\n');
        manifest.push_str("bounds");
        for (lo, hi) in &self.bounds {
            manifest.push_str(&format!(" {lo:?} {hi:?}"));
        }
        manifest.push('\n');
        manifest.push_str(&format!("out_dim {}\n", self.out_dim));
        let mut offset = 0usize;
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("tensor {} {} {}\n", t.name, dims.join("x"), offset));
            offset += 8 * t.data.len();
        }

        let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::Magic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(CheckpointError::Truncated("header"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(8);
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mlen = word(12) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() < mlen {
            return Err(CheckpointError::Truncated("manifest"));
        }
        let (manifest, payload) = body.split_at(mlen);
        let manifest = std::str::from_utf8(manifest).map_err(|_| CheckpointError::Manifest {
            line: 0,
            reason: "not UTF-8".into(),
        })?;

        let mut model = None;
        let mut problem = None;
        let mut bounds = None;
        let mut out_dim = None;
        let mut layout: Vec<(String, Vec<usize>, usize, usize)> = Vec::new();
        for (i, line) in manifest.lines().enumerate() {
            let line_no = i + 1;
            let bad = |reason: String| CheckpointError::Manifest { line: line_no, reason };
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let once = |seen: bool| if seen { Err(bad(format!("duplicate '{key}' record"))) } else { Ok(()) };
            match key {
                "model" => {
                    once(model.is_some())?;
                    model = Some(serde_json::from_str::<ModelSpec>(rest).map_err(|e| bad(format!("model spec: {e}")))?);
                }
                "problem" => {
                    once(problem.is_some())?;
                    let mut parts = rest.split(' ');
                    let name = parts.next().filter(|n| !n.is_empty()).ok_or_else(|| bad("missing problem name".into()))?;
                    let mut params = Vec::new();
                    for p in parts {
                        let (k, v) = p.split_once('=').ok_or_else(|| bad(format!("bad parameter '{p}'")))?;
                        let v: f64 = v.parse().map_err(|_| bad(format!("bad value in '{p}'")))?;
                        params.push((k.to_string(), v));
                    }
                    problem = Some((name.to_string(), params));
                }
                "bounds" => {
                    once(bounds.is_some())?;
                    let vals: Vec<f64> = rest
                        .split(' ')
                        .map(|v| v.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("bad bound".into()))?;
                    if vals.is_empty() || vals.len() % 2 != 0 {
                        return Err(bad("bounds need lo/hi pairs".into()));
                    }
                    let pairs: Vec<(f64, f64)> = vals.chunks(2).map(|c| (c[0], c[1])).collect();
                    if pairs.iter().any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
                        return Err(bad("bounds must be finite with lo < hi".into()));
                    }
                    bounds = Some(pairs);
                }
                "out_dim" => {
                    once(out_dim.is_some())?;
                    out_dim = Some(rest.parse::<usize>().map_err(|_| bad("bad out_dim".into()))?);
                }
                "tensor" => {
                    let fields: Vec<&str> = rest.split(' ').collect();
                    let [name, dims, offset] = fields[..] else {
                        return Err(bad("tensor record needs name, shape, offset".into()));
                    };
                    if name.is_empty() {
                        return Err(bad("empty tensor name".into()));
                    }
                    if layout.iter().any(|t| t.0 == name) {
                        return Err(bad(format!("duplicate tensor {name}")));
                    }
                    let shape: Vec<usize> = dims
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad(format!("bad shape '{dims}'")))?;
                    let count = shape
                        .iter()
                        .try_fold(1usize, |a, &d| a.checked_mul(d))
                        .ok_or_else(|| bad("shape overflows".into()))?;
                    let nbytes = count.checked_mul(8).ok_or_else(|| bad("shape overflows".into()))?;
                    let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset '{offset}'")))?;
                    layout.push((name.to_string(), shape, offset, nbytes));
                }
                "" => {}
                other => return Err(bad(format!("unknown record '{other}'"))),
            }
        }
        let missing = |what: &str| CheckpointError::Manifest {
            line: 0,
            reason: format!("missing '{what}' record"),
        };
        let model = model.ok_or_else(|| missing("model"))?;
        let (problem_name, problem_params) = problem.ok_or_else(|| missing("problem"))?;
        let bounds = bounds.ok_or_else(|| missing("bounds"))?;
        let out_dim = out_dim.ok_or_else(|| missing("out_dim"))?;

        let mut spans: Vec<(usize, usize, &str)> = Vec::with_capacity(layout.len());
        for (name, _, offset, nbytes) in &layout {
            let end = offset.checked_add(*nbytes).filter(|&e| e <= payload.len()).ok_or_else(|| CheckpointError::Tensor {
                name: name.clone(),
                reason: format!("bytes {offset}..+{nbytes} exceed payload of {}", payload.len()),
            })?;
            spans.push((*offset, end, name));
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(CheckpointError::Tensor {
                    name: w[1].2.to_string(),
                    reason: format!("overlaps {}", w[0].2),
                });
            }
        }
        let tensors = layout
            .into_iter()
            .map(|(name, shape, offset, nbytes)| {
                let data = payload[offset..offset + nbytes]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                TensorRecord { name, shape, data }
            })
            .collect();
        Ok(Checkpoint {
            model,
            problem_name,
            problem_params,
            bounds,
            out_dim,
            tensors,
        })
    }
}

/// Writes `model` trained on `problem` to `path`.
pub fn save(path: &std::path::Path, model: &Model, problem: &PdeProblem) -> std::io::Result<()> {
    std::fs::write(path, Checkpoint::from_model(model, problem).encode())
}
