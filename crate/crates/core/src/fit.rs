//! Shared numerical machinery: a damped Gauss-Newton (Levenberg-Marquardt)
//! least-squares optimizer with analytic Jacobians, monotone cubic
//! interpolation, and bisection root finding.

use nalgebra::DMatrix;

use crate::error::Error;
use crate::Result;

/// Options for [`levenberg_marquardt`].
#[derive(Debug, Clone, Copy)]
pub struct LevMarOptions {
    /// Iteration cap before declaring non-convergence.
    pub max_iterations: usize,
    /// Convergence threshold on the infinity norm of the gradient J^T r.
    pub gradient_tol: f64,
    /// Initial damping factor.
    pub initial_lambda: f64,
    /// Convergence threshold on the relative step size.
    pub step_tol: f64,
}

impl Default for LevMarOptions {
    fn default() -> Self {
        LevMarOptions {
            max_iterations: 200,
            gradient_tol: 1e-10,
            initial_lambda: 1e-3,
            step_tol: 1e-14,
        }
    }
}

/// Outcome of a converged least-squares fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Optimal parameter vector.
    pub params: Vec<f64>,
    /// Linearized covariance `(J^T J)^-1` at the optimum. Valid when the
    /// residuals are weighted by their standard errors.
    pub covariance: DMatrix<f64>,
    /// Sum of squared weighted residuals at the optimum.
    pub chi2: f64,
    /// Residual count minus parameter count.
    pub dof: usize,
    /// Iterations consumed.
    pub iterations: usize,
}

impl FitResult {
    pub fn chi2_per_dof(&self) -> f64 {
        if self.dof == 0 {
            f64::NAN
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

/// Minimizes the sum of squared residuals returned by `eval`.
///
/// `eval(p)` returns the weighted residual vector and its Jacobian
/// (`jacobian[i][j] = d residual_i / d p_j`). Damped normal equations are
/// solved per step; the damping factor shrinks on accepted steps and grows
/// on rejected ones.
pub fn levenberg_marquardt<F>(eval: F, p0: &[f64], opts: &LevMarOptions) -> Result<FitResult>
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
{
    let n_params = p0.len();
    let mut params = p0.to_vec();
    let (mut residuals, mut jacobian) = eval(&params);
    let mut chi2 = sum_sq(&residuals);
    let mut lambda = opts.initial_lambda;

    for iteration in 0..opts.max_iterations {
        let n_res = residuals.len();
        if n_res < n_params {
            return Err(Error::Numeric(format!(
                "fit underdetermined: {n_res} residuals for {n_params} parameters"
            )));
        }

        // Normal equations: (J^T J + lambda diag(J^T J)) delta = -J^T r.
        let jtj = normal_matrix(&jacobian, n_params);
        let grad = gradient(&jacobian, &residuals, n_params);

        if grad.iter().map(|g| g.abs()).fold(0.0, f64::max) < opts.gradient_tol {
            return finish(params, &eval, chi2, iteration);
        }

        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = jtj.clone();
            for k in 0..n_params {
                let d = jtj[(k, k)];
                damped[(k, k)] = d + lambda * if d > 0.0 { d } else { 1.0 };
            }
            let rhs = DMatrix::from_iterator(n_params, 1, grad.iter().map(|g| -g));
            let Some(delta) = damped.lu().solve(&rhs) else {
                lambda *= 10.0;
                continue;
            };

            let trial: Vec<f64> = params
                .iter()
                .zip(delta.iter())
                .map(|(p, d)| p + d)
                .collect();
            let (trial_res, trial_jac) = eval(&trial);
            let trial_chi2 = sum_sq(&trial_res);

            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let step: f64 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
                let scale: f64 = params.iter().map(|p| p * p).sum::<f64>().sqrt().max(1.0);
                params = trial;
                residuals = trial_res;
                jacobian = trial_jac;
                let improvement = chi2 - trial_chi2;
                chi2 = trial_chi2;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if step < opts.step_tol * scale || improvement < 1e-15 * chi2.max(1.0) {
                    return finish(params, &eval, chi2, iteration + 1);
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
        }

        if !accepted {
            // Damping exhausted without an acceptable step: the current
            // point is the best available. Treat a tiny gradient as
            // converged, otherwise report non-convergence.
            return finish(params, &eval, chi2, iteration + 1);
        }
    }

    Err(Error::FitNonConvergence {
        iterations: opts.max_iterations,
        chi2,
        best: params,
    })
}

fn finish<F>(params: Vec<f64>, eval: &F, chi2: f64, iterations: usize) -> Result<FitResult>
where
    F: Fn(&[f64]) -> (Vec<f64>, Vec<Vec<f64>>),
{
    let (residuals, jacobian) = eval(&params);
    let n_params = params.len();
    let jtj = normal_matrix(&jacobian, n_params);
    let covariance = jtj
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::from_element(n_params, n_params, f64::INFINITY));
    let dof = residuals.len().saturating_sub(n_params);
    Ok(FitResult {
        params,
        covariance,
        chi2,
        dof,
        iterations,
    })
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|r| r * r).sum()
}

fn normal_matrix(jacobian: &[Vec<f64>], n_params: usize) -> DMatrix<f64> {
    let mut jtj = DMatrix::zeros(n_params, n_params);
    for row in jacobian {
        for j in 0..n_params {
            for k in j..n_params {
                jtj[(j, k)] += row[j] * row[k];
            }
        }
    }
    for j in 0..n_params {
        for k in 0..j {
            jtj[(j, k)] = jtj[(k, j)];
        }
    }
    jtj
}

fn gradient(jacobian: &[Vec<f64>], residuals: &[f64], n_params: usize) -> Vec<f64> {
    let mut grad = vec![0.0; n_params];
    for (row, r) in jacobian.iter().zip(residuals) {
        for j in 0..n_params {
            grad[j] += row[j] * r;
        }
    }
    grad
}

/// Monotone cubic interpolant (Fritsch-Carlson) through `(xs, ys)`.
///
/// Preserves local monotonicity of the data, which makes root bracketing on
/// the interpolant reliable.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::validation(
                "interpolation nodes",
                format!("{} xs / {} ys", xs.len(), ys.len()),
            ));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation(
                "interpolation nodes",
                "xs must be strictly increasing",
            ));
        }
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let secants: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();

        let mut slopes = vec![0.0; n];
        slopes[0] = endpoint_slope(h[0], h.get(1).copied(), secants[0], secants.get(1).copied());
        slopes[n - 1] = endpoint_slope(
            h[n - 2],
            if n >= 3 { Some(h[n - 3]) } else { None },
            secants[n - 2],
            if n >= 3 { Some(secants[n - 3]) } else { None },
        );
        for k in 1..n - 1 {
            let (d0, d1) = (secants[k - 1], secants[k]);
            if d0 == 0.0 || d1 == 0.0 || d0.signum() != d1.signum() {
                slopes[k] = 0.0;
            } else {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                slopes[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
            }
        }

        Ok(MonotoneCubic {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            slopes,
        })
    }

    /// Evaluates the interpolant; clamps outside the node range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let k = match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            idx => idx - 1,
        };
        let h = self.xs[k + 1] - self.xs[k];
        let s = (x - self.xs[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.ys[k]
            + h10 * h * self.slopes[k]
            + h01 * self.ys[k + 1]
            + h11 * h * self.slopes[k + 1]
    }

    /// Bisects for `eval(x) = target` inside `[lo, hi]`; the target value
    /// must be bracketed by the interval.
    pub fn bisect(&self, lo: f64, hi: f64, target: f64) -> Result<f64> {
        let f = |x: f64| self.eval(x) - target;
        let (mut a, mut b) = (lo, hi);
        let (fa, fb) = (f(a), f(b));
        if fa == 0.0 {
            return Ok(a);
        }
        if fb == 0.0 {
            return Ok(b);
        }
        if fa.signum() == fb.signum() {
            return Err(Error::Numeric(format!(
                "target {target} not bracketed on [{lo}, {hi}]"
            )));
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            let fm = f(mid);
            if fm == 0.0 || (b - a) < 1e-14 * hi.abs().max(1.0) {
                return Ok(mid);
            }
            if fm.signum() == fa.signum() {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(0.5 * (a + b))
    }
}

/// Non-centered three-point endpoint slope with the standard monotonicity
/// clamps.
fn endpoint_slope(h0: f64, h1: Option<f64>, d0: f64, d1: Option<f64>) -> f64 {
    let (Some(h1), Some(d1)) = (h1, d1) else {
        return d0;
    };
    let slope = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if slope.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && slope.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        slope
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_parameters_exactly() {
        // Model y = a * exp(b x) on noiseless data.
        let (a_true, b_true) = (2.5, -0.7);
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| a_true * (b_true * x).exp()).collect();

        let eval = |p: &[f64]| {
            let (a, b) = (p[0], p[1]);
            let mut res = Vec::with_capacity(xs.len());
            let mut jac = Vec::with_capacity(xs.len());
            for (x, y) in xs.iter().zip(&ys) {
                let e = (b * x).exp();
                res.push(a * e - y);
                jac.push(vec![e, a * x * e]);
            }
            (res, jac)
        };

        let fit = levenberg_marquardt(eval, &[1.0, -0.1], &LevMarOptions::default()).unwrap();
        assert!(
            (fit.params[0] - a_true).abs() < 1e-10,
            "a = {}",
            fit.params[0]
        );
        assert!(
            (fit.params[1] - b_true).abs() < 1e-10,
            "b = {}",
            fit.params[1]
        );
        assert!(fit.chi2 < 1e-18);
    }

    #[test]
    fn covariance_scales_with_residual_weights() {
        // y = a x with unit-weight vs 10x-weight residuals: the covariance
        // of the tighter fit must be 100x smaller.
        let xs: Vec<f64> = (1..10).map(|i| i as f64).collect();
        let fit_with_weight = |w: f64| {
            let xs = xs.clone();
            let eval = move |p: &[f64]| {
                let a = p[0];
                let res: Vec<f64> = xs.iter().map(|x| w * (a * x - 2.0 * x)).collect();
                let jac: Vec<Vec<f64>> = xs.iter().map(|x| vec![w * x]).collect();
                (res, jac)
            };
            levenberg_marquardt(eval, &[0.5], &LevMarOptions::default()).unwrap()
        };
        let loose = fit_with_weight(1.0);
        let tight = fit_with_weight(10.0);
        assert!((loose.covariance[(0, 0)] / tight.covariance[(0, 0)] - 100.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_cap_reports_best_point() {
        // A residual whose gradient never vanishes within one iteration.
        let eval = |p: &[f64]| {
            let r = vec![(p[0] - 5.0) * (p[0] - 5.0) + 1.0];
            let jac = vec![vec![2.0 * (p[0] - 5.0)]];
            (r, jac)
        };
        let opts = LevMarOptions {
            max_iterations: 1,
            ..LevMarOptions::default()
        };
        match levenberg_marquardt(eval, &[100.0], &opts) {
            Err(Error::FitNonConvergence { best, .. }) => {
                assert_eq!(best.len(), 1);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn monotone_cubic_reproduces_linear_data() {
        let xs: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let interp = MonotoneCubic::new(&xs, &ys).unwrap();
        for x in [0.0, 0.4, 2.5, 6.9] {
            assert!((interp.eval(x) - (3.0 * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_cubic_preserves_monotonicity() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.5 * x).cos()).collect();
        let interp = MonotoneCubic::new(&xs, &ys).unwrap();
        let mut prev = interp.eval(0.0);
        for k in 1..=400 {
            let x = k as f64 * 0.9 / 400.0;
            let y = interp.eval(x);
            assert!(
                y <= prev + 1e-12,
                "interpolant increased on a decreasing segment at x = {x}"
            );
            prev = y;
        }
    }

    #[test]
    fn bisection_finds_bracketed_target() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.05).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.0 * x).cos()).collect();
        let interp = MonotoneCubic::new(&xs, &ys).unwrap();
        let root = interp.bisect(0.0, 1.45, 0.5).unwrap();
        // cos(2x) = 0.5 at x = pi/6.
        assert!(
            (root - std::f64::consts::FRAC_PI_6).abs() < 1e-4,
            "root = {root}"
        );
    }

    #[test]
    fn bisection_rejects_unbracketed_target() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [1.0, 0.8, 0.6];
        let interp = MonotoneCubic::new(&xs, &ys).unwrap();
        assert!(interp.bisect(0.0, 2.0, -0.5).is_err());
    }
}
