//! Small optimisation helpers shared by the Ramsey fitter and the parameter
//! inversion: Nelder–Mead, a bounded 1-D Brent search, a Levenberg–Marquardt
//! driver over closures and least-squares covariance.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned};

use crate::error::{Error, Result};

/// Outcome of [`nelder_mead`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Largest distance of a vertex from the best vertex at exit.
    pub spread: f64,
    pub converged: bool,
}

/// Minimise `f` with the Nelder–Mead simplex, starting from `x0` with initial
/// edge lengths `steps`.
///
/// Stops once every vertex lies within `tol` (per coordinate) of the best one
/// and their values agree to `ftol`, or after `max_iter` iterations.
pub fn nelder_mead<F>(
    f: F,
    x0: &[f64],
    steps: &[f64],
    tol: f64,
    ftol: f64,
    max_iter: usize,
) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(steps.len(), n);
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let v = eval(&x);
        simplex.push((x, v));
    }

    // Standard coefficients; adaptive variants help little at n <= 7.
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = spread_of(&simplex);
        let fspread = simplex[n].1 - simplex[0].1;
        if spread <= tol && fspread.abs() <= ftol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let x = along(rho);
            let v = eval(&x);
            (x, v)
        } else {
            let x = along(-rho);
            let v = eval(&x);
            (x, v)
        };
        if fc < fr.min(simplex[n].1) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for (x, v) in simplex.iter_mut().skip(1) {
            for (xi, bi) in x.iter_mut().zip(&best) {
                *xi = bi + sigma * (*xi - bi);
            }
            *v = eval(x);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let spread = spread_of(&simplex);
    let (x, value) = simplex.swap_remove(0);
    SimplexResult {
        x,
        value,
        iterations,
        spread,
        converged,
    }
}

fn spread_of(simplex: &[(Vec<f64>, f64)]) -> f64 {
    let best = &simplex[0].0;
    simplex[1..]
        .iter()
        .flat_map(|(x, _)| x.iter().zip(best).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// Outcome of [`brent_bounded`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedResult {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimise `f` on `[a, b]` by Brent's combination of golden-section and
/// parabolic steps. Stops when the bracket around the best point is within
/// `xtol` (absolute) or after `max_iter` evaluations.
pub fn brent_bounded<F>(f: F, a: f64, b: f64, xtol: f64, max_iter: usize) -> BoundedResult
where
    F: Fn(f64) -> f64,
{
    assert!(a <= b, "empty interval [{a}, {b}]");
    let eval = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let golden = 0.5 * (3.0 - 5f64.sqrt());
    let (mut lo, mut hi) = (a, b);
    let mut x = lo + golden * (hi - lo);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut evaluations = 1;
    let mut converged = false;

    while evaluations < max_iter {
        let mid = 0.5 * (lo + hi);
        let tol1 = f64::EPSILON.sqrt() * x.abs() + xtol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (hi - lo) {
            converged = true;
            break;
        }
        let mut golden_step = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let prev = e;
            e = d;
            if p.abs() < (0.5 * q * prev).abs() && p > q * (lo - x) && p < q * (hi - x) {
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if mid >= x { tol1 } else { -tol1 };
                }
                golden_step = false;
            }
        }
        if golden_step {
            e = if x >= mid { lo - x } else { hi - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = eval(u);
        evaluations += 1;
        if fu <= fx {
            if u >= x {
                lo = x;
            } else {
                hi = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    BoundedResult {
        x,
        value: fx,
        evaluations,
        converged,
    }
}

/// Residual model for [`levenberg_marquardt`]. Residuals are expected to be
/// already divided by their standard errors.
#[allow(clippy::len_without_is_empty)]
pub trait Residuals {
    fn residuals(&self, x: &[f64]) -> Option<Vec<f64>>;
    /// Row-major `m × n` Jacobian of the residuals.
    fn jacobian(&self, x: &[f64]) -> Option<Vec<f64>>;
    fn len(&self) -> usize;
}

/// Central-difference Jacobian of `r` at `x`, row-major.
pub fn numeric_jacobian<F>(r: F, x: &[f64], steps: &[f64]) -> Option<Vec<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[k] += steps[k];
        down[k] -= steps[k];
        let (ru, rd) = (r(&up)?, r(&down)?);
        cols.push(
            ru.iter()
                .zip(&rd)
                .map(|(a, b)| (a - b) / (2.0 * steps[k]))
                .collect::<Vec<f64>>(),
        );
    }
    let m = cols.first().map_or(0, Vec::len);
    let mut out = vec![0.0; m * n];
    for (k, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            out[i * n + k] = *v;
        }
    }
    Some(out)
}

struct Adapter<'a, R: Residuals> {
    model: &'a R,
    x: DVector<f64>,
}

impl<R: Residuals> LeastSquaresProblem<f64, Dyn, Dyn> for Adapter<'_, R> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.x.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.x.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        self.model
            .residuals(self.x.as_slice())
            .map(DVector::from_vec)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let n = self.x.len();
        let m = self.model.len();
        self.model
            .jacobian(self.x.as_slice())
            .map(|j| DMatrix::from_row_slice(m, n, &j))
    }
}

/// Outcome of [`levenberg_marquardt`].
#[derive(Debug, Clone, PartialEq)]
pub struct LsqResult {
    pub x: Vec<f64>,
    /// `Σ r²`.
    pub chi2: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimise `Σ r(x)²` from `x0`. `max_evaluations` caps residual evaluations.
pub fn levenberg_marquardt<R: Residuals>(
    model: &R,
    x0: &[f64],
    tol: f64,
    max_evaluations: usize,
) -> LsqResult {
    let n = x0.len().max(1);
    let patience = max_evaluations.div_ceil(n + 1).max(1);
    let solver = LevenbergMarquardt::new()
        .with_ftol(tol)
        .with_xtol(tol)
        .with_gtol(0.0)
        .with_patience(patience);
    let (problem, report) = solver.minimize(Adapter {
        model,
        x: DVector::from_column_slice(x0),
    });
    let x = problem.x.as_slice().to_vec();
    let chi2 = model
        .residuals(&x)
        .map_or(f64::INFINITY, |r| r.iter().map(|v| v * v).sum());
    LsqResult {
        x,
        chi2,
        evaluations: report.number_of_evaluations,
        converged: report.termination.was_successful() && chi2.is_finite(),
    }
}

/// `(JᵀJ)⁻¹` for a row-major `m × n` Jacobian of whitened residuals.
pub fn covariance_from_jacobian(jacobian: &[f64], m: usize, n: usize) -> Result<DMatrix<f64>> {
    let j = DMatrix::from_row_slice(m, n, jacobian);
    let normal = j.transpose() * &j;
    let cov = normal
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| {
            Error::DegenerateCovariance("normal matrix is not positive definite".into())
        })?;
    if cov.iter().any(|v| !v.is_finite()) || (0..n).any(|k| cov[(k, k)] <= 0.0) {
        return Err(Error::DegenerateCovariance(
            "covariance has non-finite entries".into(),
        ));
    }
    Ok(cov)
}
