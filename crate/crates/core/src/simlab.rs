//! Scenario generation and Monte-Carlo replication of monitoring experiments.
//!
//! A replication draws a design `X_i ~ N(0, 1)` and errors from the scenario's
//! law, fits the quantile model on the first `m` observations, and monitors
//! the next `T_m`. The parameter is `beta0` up to monitored index `k0` and
//! `beta1` afterwards.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::critvals::{CriticalValueTable, Procedure};
use crate::detector::{DetectorState, GammaParam, HistoricalArtifacts};
use crate::error::{Error, Result};
use crate::models::{Model, Observation, QuantileLevel};
use crate::qfit::{fit_quantile, FitConfig};
use crate::rng::substream;

const PRESETS_JSON: &str = include_str!("../presets/scenarios.json");

/// Error distribution of the simulated model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ErrorLaw {
    Normal { mean: f64, sd: f64 },
    Cauchy { location: f64, scale: f64 },
}

impl ErrorLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ErrorLaw::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            ErrorLaw::Cauchy { location, scale } => {
                location.is_finite() && scale.is_finite() && scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid error law {self}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ErrorLaw::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            ErrorLaw::Cauchy { location, scale } => {
                Cauchy::new(location, scale).expect("validated").sample(rng)
            }
        }
    }

    /// Distribution function at zero; detection theory assumes `F(0) = tau`.
    pub fn cdf_at_zero(&self) -> f64 {
        match *self {
            ErrorLaw::Normal { mean, sd } => {
                0.5 * erfc_approx(mean / (sd * std::f64::consts::SQRT_2))
            }
            ErrorLaw::Cauchy { location, scale } => {
                0.5 + (-location / scale).atan() / std::f64::consts::PI
            }
        }
    }
}

// Abramowitz-Stegun 7.1.26 (absolute error < 1.5e-7); only feeds warnings.
fn erfc_approx(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
        let poly = t
            * (0.254_829_592
                + t * (-0.284_496_736
                    + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
        let e = poly * (-x * x).exp();
        if x > 0.0 {
            e
        } else {
            2.0 - e
        }
    }
}

impl fmt::Display for ErrorLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorLaw::Normal { mean, sd } => write!(f, "N({mean},{})", sd * sd),
            ErrorLaw::Cauchy { location, scale } => write!(f, "C({location},{scale})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Growth,
}

impl ModelKind {
    pub fn build(self) -> Model<f64> {
        match self {
            ModelKind::Linear => Model::linear(1).expect("q = 1 is valid"),
            ModelKind::Growth => Model::growth(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcedureKind {
    Open,
    Closed,
}

/// One fully specified experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ModelKind,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    /// Monitored index of the last pre-change observation; `k0 = horizon` means no change.
    pub k0: usize,
    /// Historical sample size.
    pub m: usize,
    /// Number of monitored observations `T_m`.
    pub horizon: usize,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub procedure: ProcedureKind,
    pub error: ErrorLaw,
    pub design_seed: u64,
    pub noise_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let p = self.model.build().p();
        for b in [&self.beta0, &self.beta1] {
            if b.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: b.len(),
                });
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("parameters must be finite".into()));
            }
        }
        if self.m < p + 1 {
            return Err(Error::InsufficientData { m: self.m, p });
        }
        if self.horizon == 0 || self.k0 > self.horizon {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= k0 <= horizon and horizon >= 1 (k0={}, horizon={})",
                self.k0, self.horizon
            )));
        }
        QuantileLevel::new(self.tau)?;
        GammaParam::new(self.gamma)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        self.error.validate()
    }

    /// Human-readable caveats, e.g. when `F(0) != tau` for the error law.
    pub fn warnings(&self) -> Vec<String> {
        let f0 = self.error.cdf_at_zero();
        if (f0 - self.tau).abs() > 1e-6 {
            vec![format!(
                "scenario '{}': error law {} has F(0) = {f0:.4} != tau = {}; the null limit law assumes F(0) = tau",
                self.name, self.error, self.tau
            )]
        } else {
            Vec::new()
        }
    }

    pub fn procedure(&self) -> Procedure {
        match self.procedure {
            ProcedureKind::Open => Procedure::OpenEnd,
            ProcedureKind::Closed => Procedure::ClosedEnd {
                horizon_ratio: self.horizon as f64 / self.m as f64,
            },
        }
    }

    pub fn model_instance(&self) -> Model<f64> {
        self.model.build()
    }

    pub fn beta1_label(&self) -> String {
        let parts: Vec<String> = self.beta1.iter().map(|v| v.to_string()).collect();
        format!("({})", parts.join(","))
    }

    fn fit_config(&self, rep: u64) -> FitConfig<f64> {
        FitConfig {
            seed: self.noise_seed ^ rep.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..FitConfig::default()
        }
    }
}

/// Historical block and monitoring block for replication `rep`.
pub fn generate_stream(s: &Scenario, rep: u64) -> (Vec<Observation<f64>>, Vec<Observation<f64>>) {
    let model = s.model_instance();
    let n = s.m + s.horizon;
    let mut design = substream(s.design_seed, rep);
    let xs: Vec<f64> = (0..n).map(|_| design.sample(StandardNormal)).collect();
    let mut noise = substream(s.noise_seed, rep);
    let mut obs: Vec<Observation<f64>> = xs
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let beta = if i < s.m + s.k0 { &s.beta0 } else { &s.beta1 };
            let eps = s.error.sample(&mut noise);
            Observation {
                x: vec![x],
                y: model.eval(&[x], beta) + eps,
            }
        })
        .collect();
    let monitoring = obs.split_off(s.m);
    (obs, monitoring)
}

/// Outcome of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationSummary {
    pub rejected: bool,
    pub k_hat: Option<usize>,
    /// `Z_m(gamma)` over the monitored horizon.
    pub z_sup: f64,
}

/// Runs the stream of replication `rep` once and evaluates one detector per
/// `(gamma, critical value)` cell on it.
fn replicate_cells(
    s: &Scenario,
    cells: &[(GammaParam<f64>, f64)],
    rep: u64,
) -> Result<Vec<ReplicationSummary>> {
    let (hist, mon) = generate_stream(s, rep);
    let model = s.model_instance();
    let tau = QuantileLevel::new(s.tau)?;
    let fit = fit_quantile(&model, &hist, tau, &s.fit_config(rep))?;
    let artifacts = Arc::new(HistoricalArtifacts::from_fit(model, &hist, tau, &fit)?);
    cells
        .iter()
        .map(|&(gamma, cv)| {
            let mut det = match s.procedure {
                ProcedureKind::Open => DetectorState::new(artifacts.clone(), gamma, cv)?,
                ProcedureKind::Closed => {
                    DetectorState::closed_end(artifacts.clone(), gamma, cv, s.horizon)?
                }
            };
            for o in &mon {
                det.push(o)?;
            }
            Ok(ReplicationSummary {
                rejected: det.alarm_at().is_some(),
                k_hat: det.alarm_at(),
                z_sup: det.z_sup()?,
            })
        })
        .collect()
}

/// One replication against an explicit critical value.
pub fn run_replication_at(
    s: &Scenario,
    critical_value: f64,
    rep: u64,
) -> Result<ReplicationSummary> {
    s.validate()?;
    let gamma = GammaParam::new(s.gamma)?;
    Ok(replicate_cells(s, &[(gamma, critical_value)], rep)?[0])
}

/// One replication with the critical value looked up in `table`.
pub fn run_replication(
    s: &Scenario,
    table: &CriticalValueTable,
    rep: u64,
) -> Result<ReplicationSummary> {
    s.validate()?;
    let cv = lookup(s, table)?;
    run_replication_at(s, cv, rep)
}

fn lookup(s: &Scenario, table: &CriticalValueTable) -> Result<f64> {
    let p = s.model_instance().p();
    table.get(p, s.gamma, s.alpha, &s.procedure())
}

/// Median / min / max of stopping times, with `Inf` when undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopStat {
    Finite(usize),
    Inf,
}

impl fmt::Display for StopStat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopStat::Finite(k) => write!(f, "{k}"),
            StopStat::Inf => f.write_str("Inf"),
        }
    }
}

impl Serialize for StopStat {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StopStat {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        if s == "Inf" {
            Ok(StopStat::Inf)
        } else {
            s.parse()
                .map(StopStat::Finite)
                .map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateReport {
    pub n_reps: usize,
    pub rejections: usize,
    /// Empirical size under no change, power under a change.
    pub rate: f64,
    /// Lower median of `k_hat` over alarmed replications.
    pub khat_median: StopStat,
    pub khat_min: StopStat,
    /// `Inf` as soon as one replication did not alarm.
    pub khat_max: StopStat,
}

impl AggregateReport {
    pub fn from_summaries(summaries: &[ReplicationSummary]) -> Self {
        let n_reps = summaries.len();
        let mut ks: Vec<usize> = summaries.iter().filter_map(|s| s.k_hat).collect();
        ks.sort_unstable();
        let rejections = ks.len();
        let (khat_median, khat_min, khat_max) = if ks.is_empty() {
            (StopStat::Inf, StopStat::Inf, StopStat::Inf)
        } else {
            let max = if rejections < n_reps {
                StopStat::Inf
            } else {
                StopStat::Finite(ks[ks.len() - 1])
            };
            (
                StopStat::Finite(ks[(ks.len() - 1) / 2]),
                StopStat::Finite(ks[0]),
                max,
            )
        };
        Self {
            n_reps,
            rejections,
            rate: if n_reps == 0 {
                0.0
            } else {
                rejections as f64 / n_reps as f64
            },
            khat_median,
            khat_min,
            khat_max,
        }
    }
}

/// Runs `n_reps` replications (indices `0..n_reps`) of one cell.
pub fn run_experiment(
    s: &Scenario,
    n_reps: usize,
    table: &CriticalValueTable,
) -> Result<AggregateReport> {
    s.validate()?;
    let cv = lookup(s, table)?;
    run_experiment_at(s, n_reps, cv)
}

pub fn run_experiment_at(
    s: &Scenario,
    n_reps: usize,
    critical_value: f64,
) -> Result<AggregateReport> {
    Ok(AggregateReport::from_summaries(&run_summaries_at(
        s,
        n_reps,
        critical_value,
    )?))
}

/// Per-replication summaries of one cell, in replication order.
pub fn run_summaries_at(
    s: &Scenario,
    n_reps: usize,
    critical_value: f64,
) -> Result<Vec<ReplicationSummary>> {
    if n_reps == 0 {
        return Err(Error::InvalidParameter("n_reps must be >= 1".into()));
    }
    s.validate()?;
    let gamma = GammaParam::new(s.gamma)?;
    let per_rep = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| replicate_cells(s, &[(gamma, critical_value)], r).map(|v| v[0]))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep)
}

/// Experiment grid over `beta1 x error law x alpha x gamma`, sharing one stream
/// and one fit per replication across the `(alpha, gamma)` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: ModelKind,
    pub procedure: ProcedureKind,
    pub m: usize,
    pub horizon: usize,
    pub tau: f64,
    pub beta0: Vec<f64>,
    pub beta1: Vec<Vec<f64>>,
    pub k0: usize,
    pub errors: Vec<ErrorLaw>,
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub design_seed: u64,
    pub noise_seed: u64,
}

impl Preset {
    fn cell(&self, beta1: &[f64], error: ErrorLaw, gamma: f64, alpha: f64) -> Scenario {
        Scenario {
            name: self.name.clone(),
            model: self.model,
            beta0: self.beta0.clone(),
            beta1: beta1.to_vec(),
            k0: self.k0,
            m: self.m,
            horizon: self.horizon,
            tau: self.tau,
            gamma,
            alpha,
            procedure: self.procedure,
            error,
            design_seed: self.design_seed,
            noise_seed: self.noise_seed,
        }
    }

    /// All cells in report order: `beta1`, then error law, then alpha, then gamma.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for b1 in &self.beta1 {
            for &e in &self.errors {
                for &a in &self.alphas {
                    for &g in &self.gammas {
                        out.push(self.cell(b1, e, g, a));
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta1.is_empty()
            || self.errors.is_empty()
            || self.gammas.is_empty()
            || self.alphas.is_empty()
        {
            return Err(Error::InvalidParameter(format!(
                "preset '{}' has an empty beta1/errors/gammas/alphas list",
                self.name
            )));
        }
        self.scenarios().iter().try_for_each(Scenario::validate)
    }
}

/// Presets shipped with the library.
pub fn builtin_presets() -> Vec<Preset> {
    serde_json::from_str(PRESETS_JSON).expect("bundled presets parse")
}

pub fn builtin_preset(name: &str) -> Option<Preset> {
    builtin_presets().into_iter().find(|p| p.name == name)
}

/// Reads a single preset object from a JSON file.
pub fn load_preset(path: impl AsRef<Path>) -> Result<Preset> {
    let p: Preset = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    p.validate()?;
    Ok(p)
}

/// One line of the experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub scenario: String,
    pub procedure: String,
    pub gamma: f64,
    pub alpha: f64,
    pub error_law: String,
    pub beta1: String,
    pub k0: usize,
    pub n_reps: usize,
    pub rate: f64,
    pub khat_median: StopStat,
    pub khat_min: StopStat,
    pub khat_max: StopStat,
}

impl ExperimentRow {
    pub fn new(s: &Scenario, r: &AggregateReport) -> Self {
        Self {
            scenario: s.name.clone(),
            procedure: s.procedure().to_string(),
            gamma: s.gamma,
            alpha: s.alpha,
            error_law: s.error.to_string(),
            beta1: s.beta1_label(),
            k0: s.k0,
            n_reps: r.n_reps,
            rate: r.rate,
            khat_median: r.khat_median,
            khat_min: r.khat_min,
            khat_max: r.khat_max,
        }
    }
}

/// Runs every cell of a preset for replications `0..n_reps`.
pub fn run_preset(
    preset: &Preset,
    n_reps: usize,
    table: &CriticalValueTable,
) -> Result<Vec<ExperimentRow>> {
    preset.validate()?;
    if n_reps == 0 {
        return Err(Error::InvalidParameter("n_reps must be >= 1".into()));
    }
    let mut rows = Vec::new();
    for b1 in &preset.beta1 {
        for &e in &preset.errors {
            let cells: Vec<Scenario> = preset
                .alphas
                .iter()
                .flat_map(|&a| preset.gammas.iter().map(move |&g| (g, a)))
                .map(|(g, a)| preset.cell(b1, e, g, a))
                .collect();
            let params = cells
                .iter()
                .map(|s| Ok((GammaParam::new(s.gamma)?, lookup(s, table)?)))
                .collect::<Result<Vec<_>>>()?;
            let stream = &cells[0];
            let per_rep = (0..n_reps as u64)
                .into_par_iter()
                .map(|r| replicate_cells(stream, &params, r))
                .collect::<Result<Vec<_>>>()?;
            for (c, s) in cells.iter().enumerate() {
                let summaries: Vec<ReplicationSummary> = per_rep.iter().map(|v| v[c]).collect();
                rows.push(ExperimentRow::new(
                    s,
                    &AggregateReport::from_summaries(&summaries),
                ));
            }
        }
    }
    Ok(rows)
}

pub const REPORT_HEADER: [&str; 12] = [
    "scenario",
    "procedure",
    "gamma",
    "alpha",
    "error_law",
    "beta1",
    "k0",
    "n_reps",
    "rate",
    "khat_median",
    "khat_min",
    "khat_max",
];

pub fn write_report<W: std::io::Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the CSV report (header always present).
pub fn report_csv(rows: &[ExperimentRow], path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_report(rows, std::io::BufWriter::new(f))
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ExperimentRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != REPORT_HEADER {
        return Err(Error::Format(format!(
            "unexpected report header {header:?}"
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
