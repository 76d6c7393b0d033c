//! TOML scenario files and the bundled catalog.
//!
//! ```toml
//! name = "linear3"
//! n = 3
//! horizon = 50
//! epsilon = 0.2
//! laplacian = [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]]
//! # or an explicit plant: w = [[...], ...]
//! x0 = [-1.0, 12.0, -5.0]
//! x_star = [0.0, 0.0, 0.0]
//!
//! [weights]
//! p = "identity"        # or an n×n matrix
//! q = "identity"
//! h = "identity"
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::system::{build_consensus_system, LinearSystem, ScenarioConfig, WeightScheme};

const LINEAR3: &str = include_str!("../scenarios/linear3.toml");
const CIRCLE3: &str = include_str!("../scenarios/circle3.toml");
const STAR10: &str = include_str!("../scenarios/star10.toml");

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 3] = ["linear3", "circle3", "star10"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Named(String),
    Explicit(Vec<Vec<f64>>),
}

impl Default for MatrixSpec {
    fn default() -> Self {
        Self::Named("identity".into())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    #[serde(default)]
    pub p: MatrixSpec,
    #[serde(default)]
    pub q: MatrixSpec,
    #[serde(default)]
    pub h: MatrixSpec,
}

/// On-disk scenario description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub horizon: usize,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub laplacian: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub w: Option<Vec<Vec<f64>>>,
    pub x0: Vec<f64>,
    pub x_star: Vec<f64>,
    #[serde(default)]
    pub weights: WeightSpec,
}

fn matrix<T: Scalar>(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<T>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parse(format!("{what} must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| T::lit(rows[i][j])))
}

fn weight<T: Scalar>(spec: &MatrixSpec, n: usize, what: &str) -> Result<DMatrix<T>> {
    match spec {
        MatrixSpec::Named(s) if s == "identity" => Ok(DMatrix::identity(n, n)),
        MatrixSpec::Named(s) => Err(Error::Parse(format!("{what}: unknown weight shorthand {s:?}"))),
        MatrixSpec::Explicit(rows) => matrix(rows, n, what),
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn build<T: Scalar>(&self) -> Result<ScenarioConfig<T>> {
        let n = self.n;
        let system = match (&self.laplacian, &self.w) {
            (Some(l), None) => {
                let eps = self.epsilon.ok_or_else(|| Error::Parse("laplacian requires epsilon".into()))?;
                build_consensus_system(&matrix::<T>(l, n, "laplacian")?, T::lit(eps), self.horizon)?
            }
            (None, Some(w)) => LinearSystem::time_invariant(matrix::<T>(w, n, "w")?, self.horizon)?,
            _ => return Err(Error::Parse("exactly one of `laplacian` or `w` must be given".into())),
        };
        let vector = |v: &[f64], what: &str| {
            if v.len() != n {
                return Err(Error::Parse(format!("{what} must have {n} entries, got {}", v.len())));
            }
            Ok(DVector::from_iterator(n, v.iter().map(|&x| T::lit(x))))
        };
        let weights = WeightScheme::constant(
            weight(&self.weights.p, n, "weights.p")?,
            weight(&self.weights.q, n, "weights.q")?,
            weight(&self.weights.h, n, "weights.h")?,
            self.horizon,
        )?;
        ScenarioConfig::new(vector(&self.x0, "x0")?, vector(&self.x_star, "x_star")?, system, weights)
    }
}

/// Bundled scenario by name.
pub fn builtin(name: &str) -> Result<ScenarioFile> {
    let text = match name {
        "linear3" => LINEAR3,
        "circle3" => CIRCLE3,
        "star10" => STAR10,
        other => {
            return Err(Error::Config(format!(
                "unknown built-in scenario {other:?}; expected one of {BUILTIN_NAMES:?}"
            )))
        }
    };
    ScenarioFile::parse(text)
}

/// Built-in name or path to a TOML file.
pub fn resolve(spec: &str) -> Result<ScenarioFile> {
    if BUILTIN_NAMES.contains(&spec) {
        builtin(spec)
    } else {
        ScenarioFile::load(Path::new(spec))
    }
}
