//! CUSUM-of-subgradient monitoring.
//!
//! After fitting `beta_hat` on `m` historical observations, each monitored
//! observation `i = m + k` adds `grad g(x_i; beta_hat) * psi_tau(y_i - g(x_i; beta_hat))`
//! to a running sum. The statistic
//!
//! ```text
//! S(m, k)     = J_m(beta_hat)^{-1/2} * cum_k
//! Gamma(m, k) = |S(m, k)|_inf / z(m, k, gamma)
//! z(m, k, g)  = sqrt(m) (1 + k/m) (k / (k + m))^g
//! ```
//!
//! is compared against a critical value; the first `k` where it is reached is
//! the stopping time.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{default_rel_tol, inv_sqrt_psd, SquareMatrix};
use crate::models::{psi, Model, Observation, QuantileLevel};
use crate::qfit::FitResult;
use crate::scalar::Scalar;

/// Boundary exponent `gamma` in `[0, 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct GammaParam<T>(T);

impl<T: Scalar> GammaParam<T> {
    pub fn new(gamma: T) -> Result<Self> {
        if gamma >= T::zero() && gamma < T::lit(0.5) {
            Ok(Self(gamma))
        } else {
            Err(Error::InvalidGamma(gamma.as_f64()))
        }
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }
}

/// `z(m, k, gamma) = m^{1/2} (1 + k/m) (k / (k + m))^gamma`.
#[inline]
pub fn boundary_z<T: Scalar>(m: usize, k: usize, gamma: GammaParam<T>) -> T {
    let mf = T::from_usize(m).expect("m fits scalar");
    let kf = T::from_usize(k).expect("k fits scalar");
    mf.sqrt() * (T::one() + kf / mf) * (kf / (kf + mf)).powf(gamma.0)
}

/// `J_m(beta) = tau (1 - tau) / m * sum_i grad g(x_i; beta) grad g(x_i; beta)^t`.
pub fn compute_jm<T: Scalar>(
    model: &Model<T>,
    beta: &[T],
    xs: &[&[T]],
    tau: QuantileLevel<T>,
) -> Result<SquareMatrix<T>> {
    model.check_beta(beta)?;
    if xs.is_empty() {
        return Err(Error::InsufficientData { m: 0, p: model.p() });
    }
    let p = model.p();
    let mut j = SquareMatrix::zeros(p);
    let mut g = vec![T::zero(); p];
    for x in xs {
        model.check_x(x)?;
        model.grad_into(x, beta, &mut g);
        j.add_outer(&g, T::one());
    }
    let t = tau.value();
    let m = T::from_usize(xs.len()).expect("m fits scalar");
    j.scale(t * (T::one() - t) / m);
    Ok(j)
}

/// Frozen output of the historical phase.
#[derive(Debug, Clone)]
pub struct HistoricalArtifacts<T: Scalar> {
    model: Model<T>,
    beta_hat: Vec<T>,
    jm: Option<SquareMatrix<T>>,
    j_inv_sqrt: SquareMatrix<T>,
    rank: usize,
    m: usize,
    tau: QuantileLevel<T>,
}

impl<T: Scalar> HistoricalArtifacts<T> {
    /// Builds the artifacts from a fit on `historical`: `J_m` is evaluated at
    /// `beta_hat` and inverted with the default eigenvalue cutoff.
    pub fn from_fit(
        model: Model<T>,
        historical: &[Observation<T>],
        tau: QuantileLevel<T>,
        fit: &FitResult<T>,
    ) -> Result<Self> {
        Self::from_fit_with_tol(model, historical, tau, fit, default_rel_tol())
    }

    pub fn from_fit_with_tol(
        model: Model<T>,
        historical: &[Observation<T>],
        tau: QuantileLevel<T>,
        fit: &FitResult<T>,
        rel_tol: T,
    ) -> Result<Self> {
        let xs: Vec<&[T]> = historical.iter().map(|o| o.x.as_slice()).collect();
        let jm = compute_jm(&model, &fit.beta_hat, &xs, tau)?;
        let inv = inv_sqrt_psd(&jm, rel_tol)?;
        Ok(Self {
            model,
            beta_hat: fit.beta_hat.clone(),
            jm: Some(jm),
            j_inv_sqrt: inv.matrix,
            rank: inv.rank,
            m: historical.len(),
            tau,
        })
    }

    /// Assembles artifacts from stored parts (e.g. a fit file). `rank` is
    /// taken as the dimension.
    pub fn from_parts(
        model: Model<T>,
        beta_hat: Vec<T>,
        j_inv_sqrt: SquareMatrix<T>,
        m: usize,
        tau: QuantileLevel<T>,
    ) -> Result<Self> {
        model.check_beta(&beta_hat)?;
        if j_inv_sqrt.dim() != model.p() {
            return Err(Error::DimensionMismatch {
                expected: model.p(),
                got: j_inv_sqrt.dim(),
            });
        }
        if !j_inv_sqrt.is_finite() {
            return Err(Error::InvalidParameter(
                "J_m^{-1/2} has non-finite entries".into(),
            ));
        }
        let asym = j_inv_sqrt.max_asymmetry();
        if asym > T::lit(1e-10) * j_inv_sqrt.frobenius().max(T::one()) {
            return Err(Error::NotSymmetric(asym.as_f64()));
        }
        if m == 0 {
            return Err(Error::InvalidParameter(
                "historical size m must be >= 1".into(),
            ));
        }
        let rank = model.p();
        Ok(Self {
            model,
            beta_hat,
            jm: None,
            j_inv_sqrt,
            rank,
            m,
            tau,
        })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn beta_hat(&self) -> &[T] {
        &self.beta_hat
    }

    /// `J_m(beta_hat)`, when the artifacts were built from a fit.
    pub fn jm(&self) -> Option<&SquareMatrix<T>> {
        self.jm.as_ref()
    }

    pub fn j_inv_sqrt(&self) -> &SquareMatrix<T> {
        &self.j_inv_sqrt
    }

    /// Eigenvalues of `J_m` retained by the pseudo-inverse.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.model.p()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn tau(&self) -> QuantileLevel<T> {
        self.tau
    }
}

/// Outcome of one monitored observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict<T> {
    pub k: usize,
    /// `Gamma(m, k, gamma)`.
    pub gamma_stat: T,
    pub threshold: T,
    /// True when this or an earlier `k` reached the threshold.
    pub alarmed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorStatus {
    Monitoring,
    Alarmed {
        k_hat: usize,
    },
    /// Closed-end horizon reached without an alarm.
    HorizonExhausted,
}

/// Streaming detector; pushes must arrive in stream order.
#[derive(Debug, Clone)]
pub struct DetectorState<T: Scalar> {
    artifacts: Arc<HistoricalArtifacts<T>>,
    gamma: GammaParam<T>,
    critical_value: T,
    horizon: Option<usize>,
    k: usize,
    cum: Vec<T>,
    s: Vec<T>,
    grad: Vec<T>,
    running_max: T,
    alarm_at: Option<usize>,
}

impl<T: Scalar> DetectorState<T> {
    /// Open-end detector (no horizon).
    pub fn new(
        artifacts: Arc<HistoricalArtifacts<T>>,
        gamma: GammaParam<T>,
        critical_value: T,
    ) -> Result<Self> {
        if critical_value.is_nan() || critical_value <= T::zero() {
            return Err(Error::InvalidCriticalValue(critical_value.as_f64()));
        }
        let p = artifacts.model.p();
        Ok(Self {
            artifacts,
            gamma,
            critical_value,
            horizon: None,
            k: 0,
            cum: vec![T::zero(); p],
            s: vec![T::zero(); p],
            grad: vec![T::zero(); p],
            running_max: T::zero(),
            alarm_at: None,
        })
    }

    /// Closed-end detector monitoring at most `horizon` observations.
    pub fn closed_end(
        artifacts: Arc<HistoricalArtifacts<T>>,
        gamma: GammaParam<T>,
        critical_value: T,
        horizon: usize,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        let mut d = Self::new(artifacts, gamma, critical_value)?;
        d.horizon = Some(horizon);
        Ok(d)
    }

    /// Processes the next observation.
    pub fn push(&mut self, obs: &Observation<T>) -> Result<Verdict<T>> {
        let a = &*self.artifacts;
        a.model.check_x(&obs.x)?;
        if let Some(h) = self.horizon {
            if self.k >= h {
                return Err(Error::HorizonExhausted(h));
            }
        }
        let resid = obs.y - a.model.eval(&obs.x, &a.beta_hat);
        let w = psi(resid, a.tau);
        a.model.grad_into(&obs.x, &a.beta_hat, &mut self.grad);
        for (c, &g) in self.cum.iter_mut().zip(&self.grad) {
            *c = *c + g * w;
        }
        self.k += 1;
        a.j_inv_sqrt.mul_vec_into(&self.cum, &mut self.s);
        let s_inf = self.s.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        let stat = s_inf / boundary_z(a.m, self.k, self.gamma);
        if stat > self.running_max {
            self.running_max = stat;
        }
        if self.alarm_at.is_none() && stat >= self.critical_value {
            self.alarm_at = Some(self.k);
        }
        Ok(Verdict {
            k: self.k,
            gamma_stat: stat,
            threshold: self.critical_value,
            alarmed: self.alarm_at.is_some(),
        })
    }

    /// `Z_m(gamma)`: the maximum of `Gamma(m, k, gamma)` over processed `k`.
    pub fn z_sup(&self) -> Result<T> {
        if self.k == 0 {
            Err(Error::NoObservations)
        } else {
            Ok(self.running_max)
        }
    }

    pub fn status(&self) -> DetectorStatus {
        match (self.alarm_at, self.horizon) {
            (Some(k_hat), _) => DetectorStatus::Alarmed { k_hat },
            (None, Some(h)) if self.k >= h => DetectorStatus::HorizonExhausted,
            _ => DetectorStatus::Monitoring,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Running `sum grad g * psi` over the monitored observations.
    pub fn cum(&self) -> &[T] {
        &self.cum
    }

    /// Current `S(m, k)`.
    pub fn statistic(&self) -> &[T] {
        &self.s
    }

    pub fn alarm_at(&self) -> Option<usize> {
        self.alarm_at
    }

    pub fn horizon(&self) -> Option<usize> {
        self.horizon
    }

    pub fn critical_value(&self) -> T {
        self.critical_value
    }

    pub fn gamma(&self) -> GammaParam<T> {
        self.gamma
    }

    pub fn artifacts(&self) -> &Arc<HistoricalArtifacts<T>> {
        &self.artifacts
    }
}
