//! Plain-text parameter checkpoints.
//!
//! ```text
//! marl-lns-checkpoint 1
//! tensor actor.l0.weight 26 64
//! <rows*cols whitespace-separated values, row-major>
//! tensor actor.l0.bias 1 64
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle is bit-exact. Lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::{Matrix, NnError, Tensor};

const MAGIC: &str = "marl-lns-checkpoint 1";

pub fn to_string(tensors: &[Tensor]) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    for t in tensors {
        let (r, c) = t.shape();
        let _ = writeln!(out, "tensor {} {} {}", t.name(), r, c);
        let values: Vec<String> = t.data().iter().map(|v| v.to_string()).collect();
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse(text: &str, origin: &str) -> Result<Vec<Tensor>, NnError> {
    let err = |msg: String| NnError::Checkpoint {
        path: origin.to_string(),
        msg,
    };
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    if lines.next() != Some(MAGIC) {
        return Err(err(format!("missing `{MAGIC}` header")));
    }
    let mut tensors = Vec::new();
    while let Some(header) = lines.next() {
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [kw, name, rows, cols] = fields[..] else {
            return Err(err(format!("bad tensor header `{header}`")));
        };
        if kw != "tensor" {
            return Err(err(format!("bad tensor header `{header}`")));
        }
        let parse_dim = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{name}: bad dim `{s}`: {e}")));
        let (rows, cols) = (parse_dim(rows)?, parse_dim(cols)?);
        let values = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| err(format!("{name}: bad value `{v}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != rows * cols {
            return Err(err(format!(
                "{name}: {} values for shape {rows}x{cols}",
                values.len()
            )));
        }
        tensors.push(Tensor::new(name, Matrix::from_vec(rows, cols, values)));
    }
    Ok(tensors)
}

pub fn save(path: &Path, tensors: &[Tensor]) -> Result<(), NnError> {
    std::fs::write(path, to_string(tensors)).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Vec<Tensor>, NnError> {
    let text = std::fs::read_to_string(path).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text, &path.display().to_string())
}

/// Copies loaded values into `dst`, matching by name and shape.
pub fn restore(dst: &mut [Tensor], loaded: &[Tensor]) -> Result<(), NnError> {
    for t in dst.iter_mut() {
        let src = loaded
            .iter()
            .find(|l| l.name() == t.name())
            .ok_or_else(|| NnError::Shape(format!("checkpoint has no tensor `{}`", t.name())))?;
        if src.shape() != t.shape() {
            return Err(NnError::Shape(format!(
                "tensor `{}`: checkpoint shape {:?}, expected {:?}",
                t.name(),
                src.shape(),
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(src.data());
    }
    Ok(())
}
