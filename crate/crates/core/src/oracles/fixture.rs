//! Golden-value text files: a `shape d0 d1 ...` line followed by values
//! in scientific notation with 17 significant digits.

use std::fs;
use std::path::Path;

use super::{OracleError, Result};
use crate::tensor::Tensor;

const PER_LINE: usize = 4;

pub fn format_fixture(t: &Tensor) -> String {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let mut out = format!("shape {}\n", dims.join(" "));
    for chunk in t.data().chunks(PER_LINE) {
        let vals: Vec<String> = chunk.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_fixture(text: &str) -> Result<Tensor> {
    let bad = |m: String| OracleError::Fixture(m);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let dims = header
        .strip_prefix("shape")
        .ok_or_else(|| bad(format!("bad header `{header}`")))?
        .split_whitespace()
        .map(|d| {
            d.parse::<usize>()
                .map_err(|e| bad(format!("dim `{d}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let data = lines
        .flat_map(str::split_whitespace)
        .map(|v| {
            v.parse::<f64>()
                .map_err(|e| bad(format!("value `{v}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::new(dims, data)?)
}

pub fn write_fixture(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, format_fixture(t)).map_err(|source| OracleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_fixture(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|source| OracleError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_fixture(&text)
}
