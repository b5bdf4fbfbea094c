//! Derivative-free Nelder-Mead simplex search on a box.
//!
//! Every trial point is projected onto the box before evaluation, so the
//! objective is never called outside the feasible region.

use crate::models::ParamBox;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions<T> {
    pub max_iter: usize,
    /// Stop once the simplex diameter (max vertex distance to the best vertex)
    /// falls below this.
    pub xtol: T,
    /// Stop once the spread of objective values over the simplex falls below this.
    pub ftol: T,
}

#[derive(Debug, Clone)]
pub struct NelderMeadOutcome<T> {
    pub x: Vec<T>,
    pub f: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Objective evaluation failed (non-finite value) at the given point.
#[derive(Debug, Clone)]
pub struct NonFinite<T>(pub Vec<T>);

struct Counted<'a, T, F> {
    f: &'a mut F,
    bounds: &'a ParamBox<T>,
    evals: usize,
}

impl<T: Scalar, F: FnMut(&[T]) -> T> Counted<'_, T, F> {
    fn eval(&mut self, x: &mut [T]) -> Result<T, NonFinite<T>> {
        self.bounds.clamp(x);
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NonFinite(x.to_vec()))
        }
    }
}

/// Minimizes `f` from `x0` with an axis-aligned initial simplex of per-coordinate
/// sizes `step`. A step that would leave the box is taken in the opposite direction.
pub fn minimize<T, F>(
    mut f: F,
    x0: &[T],
    step: &[T],
    bounds: &ParamBox<T>,
    opts: &NelderMeadOptions<T>,
) -> Result<NelderMeadOutcome<T>, NonFinite<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let n = x0.len();
    let mut obj = Counted {
        f: &mut f,
        bounds,
        evals: 0,
    };

    let mut simplex: Vec<Vec<T>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    bounds.clamp(&mut start);
    simplex.push(start.clone());
    for j in 0..n {
        let mut v = start.clone();
        let up = start[j] + step[j];
        v[j] = if up <= bounds.hi()[j] {
            up
        } else {
            start[j] - step[j]
        };
        simplex.push(v);
    }
    let mut fvals = Vec::with_capacity(n + 1);
    for v in simplex.iter_mut() {
        fvals.push(obj.eval(v)?);
    }

    let two = T::lit(2.0);
    let half = T::lit(0.5);
    let nt = T::from_usize(n).expect("dimension fits scalar");

    let mut order: Vec<usize> = (0..=n).collect();
    let mut iterations = 0;
    let mut converged = false;
    let mut centroid = vec![T::zero(); n];
    let mut trial = vec![T::zero(); n];
    let mut trial2 = vec![T::zero(); n];

    loop {
        // stable sort keeps the earlier vertex on ties
        order.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).expect("finite objective"));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n.saturating_sub(1)];

        let spread = fvals[worst] - fvals[best];
        let diameter = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
                    .sqrt()
            })
            .fold(T::zero(), T::max);
        if diameter < opts.xtol || spread < opts.ftol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = T::zero());
        for &idx in order.iter().take(n) {
            for (c, &v) in centroid.iter_mut().zip(&simplex[idx]) {
                *c = *c + v;
            }
        }
        centroid.iter_mut().for_each(|c| *c = *c / nt);

        // reflection
        for j in 0..n {
            trial[j] = centroid[j] + (centroid[j] - simplex[worst][j]);
        }
        let fr = obj.eval(&mut trial)?;

        if fr < fvals[best] {
            // expansion
            for j in 0..n {
                trial2[j] = centroid[j] + two * (centroid[j] - simplex[worst][j]);
            }
            let fe = obj.eval(&mut trial2)?;
            if fe < fr {
                simplex[worst].copy_from_slice(&trial2);
                fvals[worst] = fe;
            } else {
                simplex[worst].copy_from_slice(&trial);
                fvals[worst] = fr;
            }
            continue;
        }
        if fr < fvals[second_worst] {
            simplex[worst].copy_from_slice(&trial);
            fvals[worst] = fr;
            continue;
        }

        // contraction, outside if the reflection improved on the worst point
        let outside = fr < fvals[worst];
        for j in 0..n {
            trial2[j] = if outside {
                centroid[j] + half * (trial[j] - centroid[j])
            } else {
                centroid[j] + half * (simplex[worst][j] - centroid[j])
            };
        }
        let fc = obj.eval(&mut trial2)?;
        let accept = if outside { fc <= fr } else { fc < fvals[worst] };
        if accept {
            simplex[worst].copy_from_slice(&trial2);
            fvals[worst] = fc;
            continue;
        }

        // shrink towards the best vertex
        let anchor = simplex[best].clone();
        for idx in 0..=n {
            if idx == best {
                continue;
            }
            for j in 0..n {
                simplex[idx][j] = anchor[j] + half * (simplex[idx][j] - anchor[j]);
            }
            let mut v = std::mem::take(&mut simplex[idx]);
            fvals[idx] = obj.eval(&mut v)?;
            simplex[idx] = v;
        }
    }

    order.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).expect("finite objective"));
    let best = order[0];
    Ok(NelderMeadOutcome {
        x: simplex[best].clone(),
        f: fvals[best],
        iterations,
        evaluations: obj.evals,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> NelderMeadOptions<f64> {
        NelderMeadOptions {
            max_iter: 5000,
            xtol: 1e-10,
            ftol: 1e-14,
        }
    }

    #[test]
    fn minimizes_rosenbrock() {
        let b = ParamBox::cube(2, -5.0, 5.0).unwrap();
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = minimize(rosen, &[-1.2, 1.0], &[0.5, 0.5], &b, &opts()).unwrap();
        assert!(
            (r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5,
            "{:?}",
            r.x
        );
        assert!(r.converged);
    }

    #[test]
    fn respects_the_box() {
        let b = ParamBox::cube(2, 0.0, 1.0).unwrap();
        // unconstrained minimum at (3, -2)
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 2.0).powi(2);
        let r = minimize(f, &[0.5, 0.5], &[0.1, 0.1], &b, &opts()).unwrap();
        assert!(b.contains(&r.x));
        assert!(
            (r.x[0] - 1.0).abs() < 1e-6 && r.x[1].abs() < 1e-6,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn never_worse_than_start() {
        let b = ParamBox::cube(1, -10.0, 10.0).unwrap();
        let f = |x: &[f64]| x[0].abs();
        let r = minimize(f, &[3.0], &[1.0], &b, &opts()).unwrap();
        assert!(r.f <= 3.0);
        assert!(r.f < 1e-9);
    }

    #[test]
    fn reports_non_finite_points() {
        let b = ParamBox::cube(1, -10.0, 10.0).unwrap();
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { x[0] };
        assert!(minimize(f, &[0.0], &[1.0], &b, &opts()).is_err());
    }
}
