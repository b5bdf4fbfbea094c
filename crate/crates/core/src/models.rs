//! Regression models and the quantile check-function primitives.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Half-width of the default search box `[-10, 10]^p`.
pub const DEFAULT_BOX_HALF_WIDTH: f64 = 10.0;

/// Quantile index `tau`, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QuantileLevel<T>(T);

impl<T: Scalar> QuantileLevel<T> {
    pub fn new(tau: T) -> Result<Self> {
        if tau > T::zero() && tau < T::one() {
            Ok(Self(tau))
        } else {
            Err(Error::InvalidQuantileLevel(tau.as_f64()))
        }
    }

    /// The median, `tau = 0.5`.
    pub fn median() -> Self {
        Self(T::lit(0.5))
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }
}

/// Subgradient of the check function: `tau - 1{u <= 0}`.
///
/// The indicator includes `u = 0`, so a zero residual contributes `tau - 1`.
#[inline]
pub fn psi<T: Scalar>(u: T, tau: QuantileLevel<T>) -> T {
    if u <= T::zero() {
        tau.0 - T::one()
    } else {
        tau.0
    }
}

/// Quantile check loss `rho_tau(u) = u * psi_tau(u)`.
#[inline]
pub fn check_loss<T: Scalar>(u: T, tau: QuantileLevel<T>) -> T {
    u * psi(u, tau)
}

/// One observation: covariate vector `x` and scalar response `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub x: Vec<T>,
    pub y: T,
}

impl<T: Scalar> Observation<T> {
    pub fn new(x: Vec<T>, y: T) -> Result<Self> {
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "observation contains a non-finite value".into(),
            ));
        }
        Ok(Self { x, y })
    }
}

/// Compact axis-aligned search region for the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Scalar> ParamBox<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.is_empty() {
            return Err(Error::InvalidParameter("box has zero dimensions".into()));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::InvalidParameter(format!(
                    "box bounds must be finite with lo <= hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[lo, hi]^p`.
    pub fn cube(p: usize, lo: T, hi: T) -> Result<Self> {
        Self::new(vec![lo; p], vec![hi; p])
    }

    pub fn default_for(p: usize) -> Self {
        let w = T::lit(DEFAULT_BOX_HALF_WIDTH);
        Self::cube(p, -w, w).expect("default box is valid")
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[T] {
        &self.lo
    }

    pub fn hi(&self) -> &[T] {
        &self.hi
    }

    pub fn center(&self) -> Vec<T> {
        let two = T::lit(2.0);
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| l + (h - l) / two)
            .collect()
    }

    /// Euclidean length of the box diagonal.
    pub fn diagonal(&self) -> T {
        self.lo
            .iter()
            .zip(&self.hi)
            .fold(T::zero(), |acc, (&l, &h)| acc + (h - l) * (h - l))
            .sqrt()
    }

    pub fn contains(&self, beta: &[T]) -> bool {
        beta.len() == self.dim()
            && beta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&b, (&l, &h))| b >= l && b <= h)
    }

    pub fn clamp(&self, beta: &mut [T]) {
        for (b, (&l, &h)) in beta.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *b = b.max(l).min(h);
        }
    }
}

/// A regression function `g(x; beta)` with its parameter gradient.
///
/// Implementations must be pure. The default `grad` uses central finite
/// differences with step `h = 1e-6 * (1 + |beta_j|)`; built-in models
/// override it with the analytic gradient.
pub trait RegressionFn<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    /// Parameter dimension `p`.
    fn n_params(&self) -> usize;

    /// Covariate dimension `q`.
    fn n_covariates(&self) -> usize;

    fn eval(&self, x: &[T], beta: &[T]) -> T;

    fn grad(&self, x: &[T], beta: &[T], out: &mut [T]) {
        central_difference_grad(|b| self.eval(x, b), beta, out);
    }
}

/// Relative finite-difference step: `1e-6` in double precision, `eps^(1/3)`
/// for coarser types where `1e-6` would drown in rounding.
fn fd_step<T: Scalar>() -> T {
    let eps = T::epsilon();
    if eps < T::lit(1e-12) {
        T::lit(1e-6)
    } else {
        eps.cbrt()
    }
}

/// Central-difference gradient of `f` at `beta`, written into `out`.
pub fn central_difference_grad<T: Scalar, F: Fn(&[T]) -> T>(f: F, beta: &[T], out: &mut [T]) {
    let base = fd_step::<T>();
    let two = T::lit(2.0);
    let mut work = beta.to_vec();
    for j in 0..beta.len() {
        let h = base * (T::one() + beta[j].abs());
        work[j] = beta[j] + h;
        let up = f(&work);
        work[j] = beta[j] - h;
        let down = f(&work);
        work[j] = beta[j];
        out[j] = (up - down) / (two * h);
    }
}

/// `g(x; beta) = beta_0 + beta_1 x_1 + ... + beta_q x_q`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    q: usize,
}

impl Linear {
    pub fn new(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidParameter(
                "linear model needs at least one covariate".into(),
            ));
        }
        Ok(Self { q })
    }
}

impl<T: Scalar> RegressionFn<T> for Linear {
    fn name(&self) -> &str {
        "linear"
    }

    fn n_params(&self) -> usize {
        self.q + 1
    }

    fn n_covariates(&self) -> usize {
        self.q
    }

    #[inline]
    fn eval(&self, x: &[T], beta: &[T]) -> T {
        x.iter()
            .zip(&beta[1..])
            .fold(beta[0], |acc, (&xi, &bi)| acc + xi * bi)
    }

    #[inline]
    fn grad(&self, x: &[T], _beta: &[T], out: &mut [T]) {
        out[0] = T::one();
        out[1..].copy_from_slice(x);
    }
}

/// Growth curve `g(x; b) = b1 - exp(-b2 x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Growth;

impl<T: Scalar> RegressionFn<T> for Growth {
    fn name(&self) -> &str {
        "growth"
    }

    fn n_params(&self) -> usize {
        2
    }

    fn n_covariates(&self) -> usize {
        1
    }

    #[inline]
    fn eval(&self, x: &[T], beta: &[T]) -> T {
        beta[0] - (-beta[1] * x[0]).exp()
    }

    #[inline]
    fn grad(&self, x: &[T], beta: &[T], out: &mut [T]) {
        out[0] = T::one();
        out[1] = x[0] * (-beta[1] * x[0]).exp();
    }
}

type EvalFn<T> = dyn Fn(&[T], &[T]) -> T + Send + Sync;
type GradFn<T> = dyn Fn(&[T], &[T], &mut [T]) + Send + Sync;

/// User model built from closures. Without an explicit gradient, the
/// finite-difference fallback is used.
pub struct FnModel<T> {
    name: String,
    p: usize,
    q: usize,
    eval: Box<EvalFn<T>>,
    grad: Option<Box<GradFn<T>>>,
}

impl<T: Scalar> FnModel<T> {
    pub fn new(
        name: impl Into<String>,
        p: usize,
        q: usize,
        eval: impl Fn(&[T], &[T]) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            p,
            q,
            eval: Box::new(eval),
            grad: None,
        }
    }

    pub fn with_grad(
        mut self,
        grad: impl Fn(&[T], &[T], &mut [T]) + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Box::new(grad));
        self
    }
}

impl<T: Scalar> RegressionFn<T> for FnModel<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_params(&self) -> usize {
        self.p
    }

    fn n_covariates(&self) -> usize {
        self.q
    }

    fn eval(&self, x: &[T], beta: &[T]) -> T {
        (self.eval)(x, beta)
    }

    fn grad(&self, x: &[T], beta: &[T], out: &mut [T]) {
        match &self.grad {
            Some(g) => g(x, beta, out),
            None => central_difference_grad(|b| (self.eval)(x, b), beta, out),
        }
    }
}

/// A regression function together with its search box.
#[derive(Clone)]
pub struct Model<T: Scalar> {
    func: Arc<dyn RegressionFn<T>>,
    bounds: ParamBox<T>,
}

impl<T: Scalar> fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("name", &self.func.name())
            .field("p", &self.p())
            .field("q", &self.q())
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl<T: Scalar> Model<T> {
    pub fn new(func: Arc<dyn RegressionFn<T>>, bounds: ParamBox<T>) -> Result<Self> {
        if bounds.dim() != func.n_params() {
            return Err(Error::DimensionMismatch {
                expected: func.n_params(),
                got: bounds.dim(),
            });
        }
        Ok(Self { func, bounds })
    }

    /// Intercept plus one slope per covariate (`p = q + 1`), default box.
    pub fn linear(q: usize) -> Result<Self> {
        let f = Linear::new(q)?;
        Self::new(Arc::new(f), ParamBox::default_for(q + 1))
    }

    /// `b1 - exp(-b2 x)` with the default box.
    pub fn growth() -> Self {
        Self::new(Arc::new(Growth), ParamBox::default_for(2)).expect("growth model is valid")
    }

    /// Built-in model by name: `"linear"` (with `q` covariates) or `"growth"`.
    pub fn by_name(name: &str, q: usize) -> Result<Self> {
        match name {
            "linear" => Self::linear(q),
            "growth" if q == 1 => Ok(Self::growth()),
            "growth" => Err(Error::DimensionMismatch {
                expected: 1,
                got: q,
            }),
            other => Err(Error::InvalidParameter(format!("unknown model '{other}'"))),
        }
    }

    pub fn with_bounds(self, bounds: ParamBox<T>) -> Result<Self> {
        Self::new(self.func, bounds)
    }

    pub fn name(&self) -> &str {
        self.func.name()
    }

    pub fn p(&self) -> usize {
        self.func.n_params()
    }

    pub fn q(&self) -> usize {
        self.func.n_covariates()
    }

    pub fn bounds(&self) -> &ParamBox<T> {
        &self.bounds
    }

    #[inline]
    pub fn eval(&self, x: &[T], beta: &[T]) -> T {
        self.func.eval(x, beta)
    }

    #[inline]
    pub fn grad_into(&self, x: &[T], beta: &[T], out: &mut [T]) {
        self.func.grad(x, beta, out)
    }

    pub fn grad(&self, x: &[T], beta: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.p()];
        self.func.grad(x, beta, &mut out);
        out
    }

    pub(crate) fn check_beta(&self, beta: &[T]) -> Result<()> {
        if beta.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: beta.len(),
            });
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter(
                "parameter vector is not finite".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_x(&self, x: &[T]) -> Result<()> {
        if x.len() != self.q() {
            return Err(Error::DimensionMismatch {
                expected: self.q(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

pub fn builtin_linear<T: Scalar>(q: usize) -> Result<Model<T>> {
    Model::linear(q)
}

pub fn builtin_growth<T: Scalar>() -> Model<T> {
    Model::growth()
}
