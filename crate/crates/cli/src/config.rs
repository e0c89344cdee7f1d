//! JSON run configuration. Scalar coefficients are expression strings in `t`;
//! constants (`zeta`, `direction`, boundary data) are expressions without `t`.

use std::path::{Path, PathBuf};

use asymdiag::asympt::Side;
use asymdiag::exprparse::parse;
use asymdiag::gridfn::{OperatorFn, ScalarFn, VectorFn};
use asymdiag::linalg::{CMatrix, CVector, C64};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional; must agree with the command given on the command line.
    pub command: Option<String>,
    /// Grid intervals; a power of two, at least 64.
    pub grid: Option<usize>,
    pub contour_points: Option<usize>,
    pub slack: Option<f64>,
    /// Stopping tolerance of the contraction solver.
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub magnitudes: Vec<f64>,
    pub sector: Option<usize>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub companion: Option<CompanionBlock>,
    pub family: Option<FamilyBlock>,
    pub frame: Option<FrameBlock>,
    pub bvp: Option<BvpBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideName {
    Left,
    Right,
}

impl From<SideName> for Side {
    fn from(s: SideName) -> Self {
        match s {
            SideName::Left => Side::Left,
            SideName::Right => Side::Right,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QEntry {
    pub k: usize,
    pub l: usize,
    pub expr: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompanionBlock {
    #[serde(default = "zero_expr")]
    pub zeta: String,
    pub p: Vec<String>,
    #[serde(default)]
    pub q: Vec<QEntry>,
    /// Root indices `k` in `1..=n`; all of them when empty.
    #[serde(default)]
    pub roots: Vec<usize>,
    #[serde(default = "left_only")]
    pub sides: Vec<SideName>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyBlock {
    /// Zero-based coordinate sets of the blocks.
    pub blocks: Vec<Vec<usize>>,
    pub profiles: Vec<String>,
    pub v: Vec<Vec<String>>,
    #[serde(default = "one_expr")]
    pub direction: String,
    /// Zero-based block index.
    pub k: usize,
    /// Boundary vector; defaults to the first basis vector of block `k`.
    pub xi: Option<Vec<String>>,
    #[serde(default = "left_only")]
    pub sides: Vec<SideName>,
    /// `gamma` for the ordering conditions.
    pub gamma: Option<f64>,
    pub width_v: Option<f64>,
    pub width_h: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSets {
    #[serde(default)]
    pub zero: Vec<usize>,
    #[serde(default)]
    pub minus: Vec<usize>,
    #[serde(default)]
    pub plus: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomBlock {
    pub beta: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameBlock {
    pub partition: BlockSets,
    pub atoms: Vec<AtomBlock>,
    pub c: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvpBlock {
    /// Draw an admissible instance from `seed` instead of reading `a`, `v`, ...
    #[serde(default)]
    pub random: bool,
    pub a: Option<Vec<Vec<String>>>,
    pub v: Option<Vec<Vec<String>>>,
    pub f: Option<Vec<String>>,
    pub p: Option<Vec<Vec<String>>>,
    pub xi: Option<Vec<String>>,
    pub gamma: Option<f64>,
    pub theta: Option<f64>,
}

fn zero_expr() -> String {
    "0".into()
}

fn one_expr() -> String {
    "1".into()
}

fn left_only() -> Vec<SideName> {
    vec![SideName::Left]
}

pub const MIN_GRID: usize = 64;
pub const DEFAULT_GRID: usize = 1024;
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(n) = self.grid {
            if n < MIN_GRID || !n.is_power_of_two() {
                return Err(CliError::Config(format!("grid = {n} must be a power of two >= {MIN_GRID}")));
            }
        }
        if self.magnitudes.iter().any(|m| !(m.is_finite() && *m > 0.0)) || self.magnitudes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Config("magnitudes must be positive and strictly increasing".into()));
        }
        if let Some(s) = self.slack {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(CliError::Config("slack must be nonnegative".into()));
            }
        }
        if let Some(t) = self.tolerance {
            if !(t > 0.0 && t.is_finite()) {
                return Err(CliError::Config("tolerance must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn grid_or(&self, default: usize) -> usize {
        self.grid.unwrap_or(default)
    }

    pub fn require_magnitudes(&self) -> Result<&[f64], CliError> {
        if self.magnitudes.is_empty() {
            return Err(CliError::Config("magnitudes must not be empty".into()));
        }
        Ok(&self.magnitudes)
    }
}

fn config_err(what: &str) -> impl Fn(asymdiag::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{what}: {e}"))
}

/// Samples an expression with analytic derivative.
pub fn scalar_fn(text: &str, n: usize, what: &str) -> Result<ScalarFn, CliError> {
    parse(text).and_then(|e| e.sample(n)).map_err(config_err(what))
}

/// Evaluates an expression that must not depend on `t`.
pub fn constant(text: &str, what: &str) -> Result<C64, CliError> {
    let e = parse(text).map_err(config_err(what))?;
    if !e.is_constant() {
        return Err(CliError::Config(format!("{what}: `{text}` must not depend on t")));
    }
    e.eval(0.0).map_err(config_err(what))
}

fn square(rows: &[Vec<String>], what: &str) -> Result<usize, CliError> {
    let dim = rows.len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(CliError::Config(format!("{what} must be a nonempty square array")));
    }
    Ok(dim)
}

pub fn operator_fn(rows: &[Vec<String>], n: usize, what: &str) -> Result<OperatorFn, CliError> {
    let dim = square(rows, what)?;
    let entries = rows
        .iter()
        .flatten()
        .map(|s| scalar_fn(s, n, what))
        .collect::<Result<Vec<_>, _>>()?;
    let build = |j: usize, deriv: bool| {
        let vals = entries
            .iter()
            .map(|e| if deriv { e.deriv().expect("sampled with derivative")[j] } else { *e.value(j) })
            .collect();
        CMatrix::from_rows(dim, vals)
    };
    let values = (0..=n).map(|j| build(j, false)).collect();
    let deriv = (0..=n).map(|j| build(j, true)).collect();
    OperatorFn::from_samples(values, Some(deriv)).map_err(config_err(what))
}

pub fn vector_fn(items: &[String], n: usize, what: &str) -> Result<VectorFn, CliError> {
    let entries = items.iter().map(|s| scalar_fn(s, n, what)).collect::<Result<Vec<_>, _>>()?;
    let values = (0..=n).map(|j| CVector::from_vec(entries.iter().map(|e| *e.value(j)).collect())).collect();
    VectorFn::from_samples(values, None).map_err(config_err(what))
}

pub fn const_matrix(rows: &[Vec<String>], what: &str) -> Result<CMatrix, CliError> {
    let dim = square(rows, what)?;
    let vals = rows.iter().flatten().map(|s| constant(s, what)).collect::<Result<Vec<_>, _>>()?;
    Ok(CMatrix::from_rows(dim, vals))
}

pub fn const_vector(items: &[String], what: &str) -> Result<CVector, CliError> {
    if items.is_empty() {
        return Err(CliError::Config(format!("{what} must not be empty")));
    }
    Ok(CVector::from_vec(items.iter().map(|s| constant(s, what)).collect::<Result<Vec<_>, _>>()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_magnitudes_are_validated() {
        assert!(RunConfig::from_json(r#"{"grid": 100}"#).is_err());
        assert!(RunConfig::from_json(r#"{"grid": 32}"#).is_err());
        assert!(RunConfig::from_json(r#"{"grid": 64}"#).is_ok());
        assert!(RunConfig::from_json(r#"{"magnitudes": [10, 5]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"magnitudes": [0, 5]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn expression_helpers() {
        assert_eq!(constant("(1, 2)", "x").unwrap(), C64::new(1.0, 2.0));
        assert!(matches!(constant("t", "x"), Err(CliError::Config(_))));
        let m = operator_fn(&[vec!["t".into(), "0".into()], vec!["1".into(), "t^2".into()]], 64, "a").unwrap();
        assert_eq!(m.value(64)[(1, 1)], C64::new(1.0, 0.0));
        assert_eq!(m.deriv().unwrap()[32][(0, 0)], C64::new(1.0, 0.0));
        assert!(operator_fn(&[vec!["t".into()], vec!["1".into()]], 64, "a").is_err());
        assert!(scalar_fn("foo(t)", 64, "p").is_err());
    }
}
