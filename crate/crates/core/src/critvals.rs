//! Monte-Carlo critical values `c_alpha(gamma)`: upper quantiles of
//! `sup_{0 < t < u} |W(t)|_inf / t^gamma` for a `p`-dimensional standard
//! Wiener process, with `u = 1` (open-end) or `u = T / (1 + T)` (closed-end,
//! horizon ratio `T = T_m / m`).
//!
//! Paths live on the grid `t_j = j u / n`, `j = 1..n`; `t = 0` is excluded.
//! Coordinate `c` of every path is drawn before coordinate `c + 1` from the
//! replication's own substream, so a `p`-dimensional path extends the
//! `(p - 1)`-dimensional one drawn under the same seed.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::GammaParam;
use crate::error::{Error, Result};
use crate::rng::substream;

pub const SCHEMA: &str = "qcpd-critvals-1";

/// Default grid resolution.
pub const DEFAULT_GRID_N: usize = 10_000;

/// Boundary exponents tabulated by default.
pub const DEFAULT_GAMMAS: [f64; 6] = [0.0, 0.15, 0.25, 0.35, 0.45, 0.49];

/// Nominal sizes tabulated by default.
pub const DEFAULT_ALPHAS: [f64; 5] = [0.01, 0.025, 0.05, 0.10, 0.25];

/// Monitoring scheme: unbounded horizon, or `T_m` with `T_m / m -> T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Procedure {
    OpenEnd,
    ClosedEnd { horizon_ratio: f64 },
}

impl Procedure {
    pub fn closed(horizon_ratio: f64) -> Result<Self> {
        let p = Procedure::ClosedEnd { horizon_ratio };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Procedure::OpenEnd => Ok(()),
            Procedure::ClosedEnd { horizon_ratio }
                if horizon_ratio.is_finite() && horizon_ratio > 0.0 =>
            {
                Ok(())
            }
            Procedure::ClosedEnd { horizon_ratio } => Err(Error::InvalidParameter(format!(
                "closed-end horizon ratio must be finite and > 0, got {horizon_ratio}"
            ))),
        }
    }

    /// Right end `u` of the time interval for the limiting supremum.
    pub fn upper(&self) -> f64 {
        match *self {
            Procedure::OpenEnd => 1.0,
            Procedure::ClosedEnd { horizon_ratio } => horizon_ratio / (1.0 + horizon_ratio),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Procedure::OpenEnd => "open",
            Procedure::ClosedEnd { .. } => "closed",
        }
    }

    pub fn horizon_ratio(&self) -> Option<f64> {
        match *self {
            Procedure::OpenEnd => None,
            Procedure::ClosedEnd { horizon_ratio } => Some(horizon_ratio),
        }
    }

    fn same_as(&self, other: &Procedure) -> bool {
        match (self, other) {
            (Procedure::OpenEnd, Procedure::OpenEnd) => true,
            (
                Procedure::ClosedEnd { horizon_ratio: a },
                Procedure::ClosedEnd { horizon_ratio: b },
            ) => (a - b).abs() <= 1e-9 * a.abs().max(1.0),
            _ => false,
        }
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Procedure::OpenEnd => f.write_str("open"),
            Procedure::ClosedEnd { horizon_ratio } => write!(f, "closed(T={horizon_ratio})"),
        }
    }
}

/// Per-grid-point factors `sqrt(u/n) * t_j^{-gamma}` turning the running
/// maximum of standardized partial sums into `|W(t_j)|_inf / t_j^gamma`.
#[derive(Debug, Clone)]
pub struct SupWeights {
    weights: Vec<f64>,
}

impl SupWeights {
    pub fn new(upper: f64, grid_n: usize, gamma: GammaParam<f64>) -> Self {
        let n = grid_n as f64;
        let scale = (upper / n).sqrt();
        let g = gamma.value();
        let weights = (1..=grid_n)
            .map(|j| scale * (upper * j as f64 / n).powf(-g))
            .collect();
        Self { weights }
    }

    #[inline]
    pub fn apply(&self, path_max: &[f64]) -> f64 {
        path_max
            .iter()
            .zip(&self.weights)
            .fold(0.0f64, |acc, (&m, &w)| acc.max(m * w))
    }
}

/// Fills `out[j]` with `max_c |sum_{i <= j} Z_{c,i}|` over `p` coordinates of
/// i.i.d. standard normals, coordinate by coordinate.
pub fn draw_path_max<R: Rng + ?Sized>(p: usize, rng: &mut R, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for _ in 0..p {
        let mut s = 0.0f64;
        for slot in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            s += z;
            let a = s.abs();
            if a > *slot {
                *slot = a;
            }
        }
    }
}

/// One draw of `max_j |W(t_j)|_inf / t_j^gamma` on the grid `t_j = j u / n`.
pub fn simulate_sup<R: Rng + ?Sized>(
    p: usize,
    gamma: GammaParam<f64>,
    upper: f64,
    grid_n: usize,
    rng: &mut R,
) -> Result<f64> {
    check_grid(p, upper, grid_n)?;
    let mut m = vec![0.0; grid_n];
    draw_path_max(p, rng, &mut m);
    Ok(SupWeights::new(upper, grid_n, gamma).apply(&m))
}

fn check_grid(p: usize, upper: f64, grid_n: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidParameter("p must be >= 1".into()));
    }
    if grid_n < 2 {
        return Err(Error::InvalidParameter("grid_n must be >= 2".into()));
    }
    if !(upper > 0.0 && upper <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "upper must lie in (0, 1], got {upper}"
        )));
    }
    Ok(())
}

/// Monte-Carlo sample of the supremum functional for several
/// `(procedure, gamma)` cells, all evaluated on the same paths.
///
/// Replication `r` draws from `substream(seed, r)`. Returns one vector of
/// `reps` values per cell, in the order of `cells`.
pub fn sample_sups(
    p: usize,
    cells: &[(Procedure, GammaParam<f64>)],
    reps: usize,
    grid_n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    for (proc, _) in cells {
        proc.validate()?;
        check_grid(p, proc.upper(), grid_n)?;
    }
    let weights: Vec<SupWeights> = cells
        .iter()
        .map(|(proc, g)| SupWeights::new(proc.upper(), grid_n, *g))
        .collect();

    let per_rep: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; grid_n],
            |buf, r| {
                let mut rng = substream(seed, r);
                draw_path_max(p, &mut rng, buf);
                weights.iter().map(|w| w.apply(buf)).collect()
            },
        )
        .collect();

    Ok((0..cells.len())
        .map(|c| per_rep.iter().map(|row| row[c]).collect())
        .collect())
}

/// 1-based rank `ceil(reps (1 - alpha))` of the conservative upper order statistic.
pub fn upper_rank(reps: usize, alpha: f64) -> usize {
    // small slack so that e.g. 50000 * 0.95 is not pushed up by representation error
    let r = (reps as f64 * (1.0 - alpha) - 1e-9).ceil() as usize;
    r.clamp(1, reps)
}

/// Empirical `(1 - alpha)` quantile of a sample, as the order statistic of rank
/// [`upper_rank`]. `sorted` must be ascending.
pub fn empirical_upper_quantile(sorted: &[f64], alpha: f64) -> f64 {
    sorted[upper_rank(sorted.len(), alpha) - 1]
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// `c_alpha(gamma)` from `reps` simulated suprema.
pub fn critical_value(
    p: usize,
    gamma: GammaParam<f64>,
    alpha: f64,
    proc: Procedure,
    reps: usize,
    grid_n: usize,
    seed: u64,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_reps(reps)?;
    let mut sample = sample_sups(p, &[(proc, gamma)], reps, grid_n, seed)?
        .pop()
        .expect("one cell");
    sample.sort_by(f64::total_cmp);
    Ok(empirical_upper_quantile(&sample, alpha))
}

fn check_reps(reps: usize) -> Result<()> {
    if reps < 100 {
        Err(Error::InvalidParameter(format!(
            "reps must be >= 100, got {reps}"
        )))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub gamma: f64,
    pub alpha: f64,
    pub procedure: Procedure,
    pub value: f64,
}

/// Tabulated `c_alpha(gamma)` values for one dimension `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalValueTable {
    pub p: usize,
    pub reps: usize,
    pub grid_n: usize,
    pub seed: u64,
    pub entries: Vec<TableEntry>,
}

impl CriticalValueTable {
    /// Simulates every `(procedure, gamma)` cell on shared paths and reads off
    /// all `alphas` from each cell's single sorted sample.
    pub fn build(
        p: usize,
        gammas: &[f64],
        alphas: &[f64],
        procedures: &[Procedure],
        reps: usize,
        grid_n: usize,
        seed: u64,
    ) -> Result<Self> {
        check_reps(reps)?;
        for &a in alphas {
            check_alpha(a)?;
        }
        let mut cells = Vec::new();
        for proc in procedures {
            for &g in gammas {
                cells.push((*proc, GammaParam::new(g)?));
            }
        }
        let samples = sample_sups(p, &cells, reps, grid_n, seed)?;
        let mut entries = Vec::with_capacity(cells.len() * alphas.len());
        for ((proc, g), mut sample) in cells.into_iter().zip(samples) {
            sample.sort_by(f64::total_cmp);
            for &alpha in alphas {
                entries.push(TableEntry {
                    gamma: g.value(),
                    alpha,
                    procedure: proc,
                    value: empirical_upper_quantile(&sample, alpha),
                });
            }
        }
        Ok(Self {
            p,
            reps,
            grid_n,
            seed,
            entries,
        })
    }

    pub fn lookup(&self, gamma: f64, alpha: f64, proc: &Procedure) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| {
                (e.gamma - gamma).abs() <= 1e-12
                    && (e.alpha - alpha).abs() <= 1e-12
                    && e.procedure.same_as(proc)
            })
            .map(|e| e.value)
    }

    /// Like [`lookup`](Self::lookup) but also checks `p` and reports a
    /// `MissingCriticalValue` error.
    pub fn get(&self, p: usize, gamma: f64, alpha: f64, proc: &Procedure) -> Result<f64> {
        let missing = || Error::MissingCriticalValue {
            p,
            gamma,
            alpha,
            procedure: proc.to_string(),
        };
        if p != self.p {
            return Err(missing());
        }
        self.lookup(gamma, alpha, proc).ok_or_else(missing)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TableFile {
            schema: SCHEMA.to_string(),
            p: self.p,
            reps: self.reps,
            grid_n: self.grid_n,
            seed: self.seed,
            entries: self
                .entries
                .iter()
                .map(|e| EntryFile {
                    gamma: e.gamma,
                    alpha: e.alpha,
                    procedure: e.procedure.label().to_string(),
                    horizon_ratio: e.procedure.horizon_ratio(),
                    value: e.value,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(text)?;
        if file.schema != SCHEMA {
            return Err(Error::Format(format!(
                "unsupported table schema '{}', expected '{SCHEMA}'",
                file.schema
            )));
        }
        if file.p == 0 {
            return Err(Error::Format("p must be >= 1".into()));
        }
        let mut entries = Vec::with_capacity(file.entries.len());
        for e in file.entries {
            let procedure = match (e.procedure.as_str(), e.horizon_ratio) {
                ("open", _) => Procedure::OpenEnd,
                ("closed", Some(t)) => {
                    Procedure::closed(t).map_err(|err| Error::Format(err.to_string()))?
                }
                ("closed", None) => {
                    return Err(Error::Format(
                        "closed-end entry without horizon_ratio".into(),
                    ))
                }
                (other, _) => return Err(Error::Format(format!("unknown procedure '{other}'"))),
            };
            if !(e.value.is_finite() && e.value > 0.0) {
                return Err(Error::Format(format!(
                    "critical value must be positive, got {}",
                    e.value
                )));
            }
            entries.push(TableEntry {
                gamma: e.gamma,
                alpha: e.alpha,
                procedure,
                value: e.value,
            });
        }
        Ok(Self {
            p: file.p,
            reps: file.reps,
            grid_n: file.grid_n,
            seed: file.seed,
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Aligned text table (rows: gamma, columns: alpha) for one procedure.
    pub fn render(&self, proc: &Procedure) -> String {
        let mut gammas: Vec<f64> = Vec::new();
        let mut alphas: Vec<f64> = Vec::new();
        for e in self.entries.iter().filter(|e| e.procedure.same_as(proc)) {
            if !gammas.contains(&e.gamma) {
                gammas.push(e.gamma);
            }
            if !alphas.contains(&e.alpha) {
                alphas.push(e.alpha);
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "critical values c_alpha(gamma), p={}, {} procedure, reps={}, grid_n={}",
            self.p, proc, self.reps, self.grid_n
        );
        let _ = write!(out, "{:>8} |", "gamma");
        for a in &alphas {
            let _ = write!(out, " {:>8}", a);
        }
        out.push('\n');
        let _ = writeln!(out, "{}", "-".repeat(10 + 9 * alphas.len()));
        for g in &gammas {
            let _ = write!(out, "{:>8} |", g);
            for a in &alphas {
                match self.lookup(*g, *a, proc) {
                    Some(v) => {
                        let _ = write!(out, " {:>8.4}", v);
                    }
                    None => {
                        let _ = write!(out, " {:>8}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    schema: String,
    p: usize,
    reps: usize,
    grid_n: usize,
    seed: u64,
    entries: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    gamma: f64,
    alpha: f64,
    procedure: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    horizon_ratio: Option<f64>,
    value: f64,
}
