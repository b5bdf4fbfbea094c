//! JSON form of the historical artifacts, written by `qcpd fit` and read by
//! `qcpd detect`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::HistoricalArtifacts;
use crate::error::{Error, Result};
use crate::linalg::SquareMatrix;
use crate::models::{Model, ParamBox, QuantileLevel};
use crate::qfit::FitResult;

pub const SCHEMA: &str = "qcpd-fit-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitFile {
    pub schema: String,
    pub model: String,
    pub q: usize,
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    pub tau: f64,
    pub m: usize,
    pub beta_hat: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub starts_used: usize,
    pub j_m: Vec<Vec<f64>>,
    pub j_inv_sqrt: Vec<Vec<f64>>,
    /// Eigenvalues of `J_m` kept by the pseudo-inverse; below `p` means rank deficient.
    pub rank: usize,
}

impl FitFile {
    pub fn new(fit: &FitResult<f64>, artifacts: &HistoricalArtifacts<f64>) -> Self {
        let model = artifacts.model();
        let b = model.bounds();
        Self {
            schema: SCHEMA.to_string(),
            model: model.name().to_string(),
            q: model.q(),
            bounds: b.lo().iter().zip(b.hi()).map(|(&l, &h)| [l, h]).collect(),
            tau: artifacts.tau().value(),
            m: artifacts.m(),
            beta_hat: fit.beta_hat.clone(),
            objective: fit.objective,
            converged: fit.converged,
            starts_used: fit.starts_used,
            j_m: artifacts
                .jm()
                .map(SquareMatrix::to_rows)
                .unwrap_or_default(),
            j_inv_sqrt: artifacts.j_inv_sqrt().to_rows(),
            rank: artifacts.rank(),
        }
    }

    /// Rebuilds the detector inputs. Only the built-in model names are supported.
    pub fn artifacts(&self) -> Result<HistoricalArtifacts<f64>> {
        let fmt = |e: Error| Error::Format(format!("fit file: {e}"));
        let bounds = ParamBox::new(
            self.bounds.iter().map(|b| b[0]).collect(),
            self.bounds.iter().map(|b| b[1]).collect(),
        )
        .map_err(fmt)?;
        let model = Model::by_name(&self.model, self.q)
            .and_then(|m| m.with_bounds(bounds))
            .map_err(fmt)?;
        let tau = QuantileLevel::new(self.tau).map_err(fmt)?;
        let inv = SquareMatrix::from_rows(&self.j_inv_sqrt).map_err(fmt)?;
        HistoricalArtifacts::from_parts(model, self.beta_hat.clone(), inv, self.m, tau).map_err(fmt)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: FitFile = serde_json::from_str(text)?;
        if f.schema != SCHEMA {
            return Err(Error::Format(format!(
                "unsupported fit schema '{}', expected '{SCHEMA}'",
                f.schema
            )));
        }
        Ok(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
