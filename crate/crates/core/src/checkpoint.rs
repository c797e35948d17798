//! Parameter checkpoints.
//!
//! A checkpoint is one JSON document:
//!
//! ```text
//! {"format": "rerank-checkpoint", "version": 1,
//!  "config": { RerankerConfig fields },
//!  "tensors": [{"name": "item_proj.weight", "rows": 6, "cols": 32, "data": [...]}, ...]}
//! ```
//!
//! Tensors appear in the canonical parameter order, data row-major. Reals use
//! the shortest representation that parses back to the same `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{init_params, parameter_shapes, RerankerConfig, RerankerParams};
use crate::tensor::Matrix;

pub const FORMAT: &str = "rerank-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: RerankerConfig,
    tensors: Vec<NamedTensor>,
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line: 1,
        field: field.to_string(),
        message: message.into(),
    }
}

pub fn to_string(params: &RerankerParams) -> Result<String> {
    let ck = Checkpoint {
        format: FORMAT.to_string(),
        version: VERSION,
        config: params.cfg.clone(),
        tensors: params
            .weights
            .named()
            .into_iter()
            .map(|(name, m)| NamedTensor {
                name,
                rows: m.rows,
                cols: m.cols,
                data: m.data.clone(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string(&ck)?;
    s.push('\n');
    Ok(s)
}

pub fn from_str(text: &str) -> Result<RerankerParams> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.format != FORMAT {
        return Err(invalid("format", format!("expected `{FORMAT}`, found `{}`", ck.format)));
    }
    if ck.version != VERSION {
        return Err(invalid("version", format!("unsupported version {}", ck.version)));
    }
    let expected = parameter_shapes(&ck.config);
    if expected.len() != ck.tensors.len() {
        return Err(invalid(
            "tensors",
            format!(
                "expected {} tensors for this config, found {}",
                expected.len(),
                ck.tensors.len()
            ),
        ));
    }
    for ((name, r, c), t) in expected.iter().zip(&ck.tensors) {
        if name != &t.name || (*r, *c) != (t.rows, t.cols) || t.data.len() != r * c {
            return Err(invalid(
                "tensors",
                format!(
                    "tensor `{}` ({}x{}) does not match expected `{name}` ({r}x{c})",
                    t.name, t.rows, t.cols
                ),
            ));
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("tensors", format!("tensor `{name}` holds non-finite values")));
        }
    }
    let mut params = init_params(&ck.config)?;
    let mut tensors = ck.tensors.into_iter();
    params.weights.for_each_mut(|m| {
        let t = tensors.next().expect("count checked above");
        *m = Matrix::from_vec(t.rows, t.cols, t.data);
    });
    Ok(params)
}

pub fn save(params: &RerankerParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_string(params)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<RerankerParams> {
    from_str(&std::fs::read_to_string(path)?)
}
