//! Historical quantile estimator: minimizes the check-loss sum over the box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{check_loss, Model, Observation, QuantileLevel};
use crate::nelder_mead::{self, NelderMeadOptions};
use crate::scalar::Scalar;

/// Optimizer settings for [`fit_quantile`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig<T> {
    /// Number of multi-starts: the box center plus `restarts - 1` uniform draws.
    pub restarts: usize,
    /// Iteration cap per simplex run; `None` means `2000 * p`.
    pub max_iter: Option<usize>,
    /// Simplex-diameter stop; `None` means `1e-8` times the box diagonal.
    pub xtol: Option<T>,
    /// Objective-spread stop.
    pub ftol: T,
    pub seed: u64,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iter: None,
            xtol: None,
            ftol: T::lit(1e-10),
            seed: 0,
        }
    }
}

impl<T: Scalar> FitConfig<T> {
    fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("restarts must be >= 1".into()));
        }
        if self.max_iter == Some(0) {
            return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
        }
        let positive = |v: T| v > T::zero();
        if !self.xtol.is_none_or(positive) || !positive(self.ftol) {
            return Err(Error::InvalidParameter(
                "xtol and ftol must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub beta_hat: Vec<T>,
    /// Attained check-loss sum.
    pub objective: T,
    pub converged: bool,
    pub starts_used: usize,
}

#[inline]
fn loss_sum<T: Scalar>(
    model: &Model<T>,
    data: &[Observation<T>],
    tau: QuantileLevel<T>,
    beta: &[T],
) -> T {
    data.iter().fold(T::zero(), |acc, o| {
        acc + check_loss(o.y - model.eval(&o.x, beta), tau)
    })
}

/// `sum_i rho_tau(y_i - g(x_i; beta))`.
pub fn objective_at<T: Scalar>(
    model: &Model<T>,
    data: &[Observation<T>],
    tau: QuantileLevel<T>,
    beta: &[T],
) -> Result<T> {
    model.check_beta(beta)?;
    if !model.bounds().contains(beta) {
        return Err(Error::InvalidParameter(
            "parameter vector lies outside the search box".into(),
        ));
    }
    for o in data {
        model.check_x(&o.x)?;
    }
    let v = loss_sum(model, data, tau, beta);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteObjective {
            beta: beta.iter().map(|b| b.as_f64()).collect(),
        })
    }
}

/// Fits `beta_hat = argmin_{beta in B} sum rho_tau(y_i - g(x_i; beta))` by
/// multi-start Nelder-Mead with box projection.
///
/// Each start runs to convergence; the best end point (lowest start index on
/// ties) is then re-polished with progressively smaller fresh simplices,
/// which lets the search leave kinks of the piecewise-smooth objective where
/// a collapsed simplex can stall.
pub fn fit_quantile<T: Scalar>(
    model: &Model<T>,
    data: &[Observation<T>],
    tau: QuantileLevel<T>,
    cfg: &FitConfig<T>,
) -> Result<FitResult<T>> {
    cfg.validate()?;
    let p = model.p();
    if data.len() <= p {
        return Err(Error::InsufficientData { m: data.len(), p });
    }
    for o in data {
        model.check_x(&o.x)?;
    }

    let bounds = model.bounds();
    let opts = NelderMeadOptions {
        max_iter: cfg.max_iter.unwrap_or(2000 * p),
        xtol: cfg.xtol.unwrap_or_else(|| T::lit(1e-8) * bounds.diagonal()),
        ftol: cfg.ftol,
    };
    let widths: Vec<T> = bounds
        .lo()
        .iter()
        .zip(bounds.hi())
        .map(|(&l, &h)| h - l)
        .collect();
    let scaled = |s: f64| widths.iter().map(|&w| w * T::lit(s)).collect::<Vec<_>>();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![bounds.center()];
    for _ in 1..cfg.restarts {
        let x: Vec<T> = bounds
            .lo()
            .iter()
            .zip(bounds.hi())
            .map(|(&l, &h)| l + (h - l) * T::lit(rng.random::<f64>()))
            .collect();
        starts.push(x);
    }

    let objective = |b: &[T]| loss_sum(model, data, tau, b);
    let to_err = |e: nelder_mead::NonFinite<T>| Error::NonFiniteObjective {
        beta: e.0.iter().map(|b| b.as_f64()).collect(),
    };

    let initial_step = scaled(0.1);
    let mut best: Option<nelder_mead::NelderMeadOutcome<T>> = None;
    for start in &starts {
        let out = nelder_mead::minimize(objective, start, &initial_step, bounds, &opts)
            .map_err(to_err)?;
        if best.as_ref().is_none_or(|b| out.f < b.f) {
            best = Some(out);
        }
    }
    let mut best = best.expect("at least one start");

    for s in [1e-2, 1e-3, 1e-4, 1e-5] {
        let out =
            nelder_mead::minimize(objective, &best.x, &scaled(s), bounds, &opts).map_err(to_err)?;
        if out.f < best.f {
            best = out;
        }
    }

    Ok(FitResult {
        beta_hat: best.x,
        objective: best.f,
        converged: best.converged,
        starts_used: starts.len(),
    })
}
