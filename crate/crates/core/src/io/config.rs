use std::path::Path;

use nalgebra::DMatrix;

use crate::criteria::Criterion;
use crate::error::{Error, Result};

/// Parses a criterion specification.
///
/// * `phi:q=<q>` — `Φ_q`; `trace` and `logdet` are shorthands for `q = 1`
///   and `q = 0`.
/// * `wtrace:<file>` — `tr(HΣ)` with `H` read from a JSON array of rows;
///   relative paths resolve against `base_dir`.
pub fn parse_criterion(spec: &str, base_dir: Option<&Path>) -> Result<Criterion> {
    let spec = spec.trim();
    match spec {
        "trace" => return Ok(Criterion::trace()),
        "logdet" => return Criterion::phi(0.0),
        _ => {}
    }
    if let Some(rest) = spec.strip_prefix("phi:") {
        let q = rest
            .trim()
            .strip_prefix("q=")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::InvalidArgument(format!("criterion `{spec}`: expected phi:q=<real>")))?;
        return Criterion::phi(q);
    }
    if let Some(file) = spec.strip_prefix("wtrace:") {
        let path = Path::new(file.trim());
        let path = match base_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        };
        return Criterion::constant_weighted_trace(load_matrix(&path)?);
    }
    Err(Error::InvalidArgument(format!(
        "unknown criterion `{spec}` (expected phi:q=<q>, trace, logdet or wtrace:<file>)"
    )))
}

/// Reads a square matrix stored as a JSON array of rows.
pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let n = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: bad.len() });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}
