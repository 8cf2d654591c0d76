//! Nonlinear least squares: recovering decay constants and amplitudes from
//! sampled variance-to-mean curves and die-away histograms.
//!
//! # Models
//!
//! * Variance-to-mean curve: `Y(T) = Y₁·g(ω₁T) + Y₂·g(ω₂T)` with the gate
//!   kernel `g(x) = 1 − (1 − e⁻ˣ)/x`.
//! * Die-away rate: `r(t) = A·e^{−ωt} + B`.
//!
//! Both fits minimize the weighted squared residual `Σ((model − y)/σ)²`
//! with a damped Gauss–Newton (Levenberg–Marquardt) iteration. Decay
//! constants are optimized as logarithms, which enforces positivity without
//! bound bookkeeping; reported covariances are mapped back to plain rates.
//! Convergence means the gradient norm dropped below `10⁻⁸·(1 + cost)`.
//!
//! Failures carry the best iterate so callers can inspect or report it:
//! curves that are really a single exponential surface either as
//! [`FitError::Degenerate`] (recovered rates within 10% of each other, or
//! one rate unconstrained by the data) or as a non-converged flat valley.

use crate::analytic::{gate_kernel, gate_kernel_deriv};
use crate::simulator::DecayPoint;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::Serialize;

/// Convergence threshold on the gradient norm, relative to `1 + cost`.
pub const GRADIENT_TOLERANCE: f64 = 1e-8;

/// Rate ratio ω₁/ω₂ above which a two-exponential fit is reported as
/// degenerate and a one-exponential model recommended.
pub const DEGENERATE_RATE_RATIO: f64 = 0.9;

/// Relative rate uncertainty σ_ω/ω above which a rate is considered
/// unconstrained by the data.
pub const UNCONSTRAINED_RELATIVE_SIGMA: f64 = 10.0;

const MAX_ITERATIONS: usize = 200;
const MAX_DAMPING: f64 = 1e14;

#[derive(Debug, thiserror::Error)]
pub enum FitError<T: std::fmt::Debug> {
    #[error("need at least {required} points, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("gate times span {span_decades:.3} decades; at least one decade is required")]
    InsufficientSpan { span_decades: f64 },
    #[error("invalid fit input: {0}")]
    InvalidInput(String),
    #[error("fit did not converge after {n_iterations} iterations: {reason}")]
    NotConverged {
        n_iterations: usize,
        reason: String,
        best: Box<T>,
    },
    #[error(
        "recovered decay constants are degenerate ({reason}); \
         a one-exponential model is recommended"
    )]
    Degenerate { reason: String, best: Box<T> },
}

/// Two-exponential variance-to-mean fit result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeynmanFit {
    pub y1_amp: f64,
    pub y2_amp: f64,
    pub omega1: f64,
    pub omega2: f64,
    /// Covariance of `(y1_amp, y2_amp, omega1, omega2)`.
    pub covariance: [[f64; 4]; 4],
    pub chi2_per_dof: f64,
    pub converged: bool,
    pub n_iterations: usize,
}

impl FeynmanFit {
    /// The fitted curve's asymptotic plateau `Y₁ + Y₂`.
    pub fn plateau(&self) -> f64 {
        self.y1_amp + self.y2_amp
    }

    /// Evaluate the fitted model at a gate width.
    pub fn evaluate(&self, gate_time: f64) -> f64 {
        feynman_model(
            self.y1_amp,
            self.y2_amp,
            self.omega1,
            self.omega2,
            gate_time,
        )
    }
}

/// Single-exponential die-away fit result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DieAwayFit {
    pub amplitude: f64,
    pub omega: f64,
    pub background: f64,
    /// Covariance of `(amplitude, omega, background)`.
    pub covariance: [[f64; 3]; 3],
    pub chi2_per_dof: f64,
    pub converged: bool,
    pub n_iterations: usize,
}

impl DieAwayFit {
    /// Evaluate the fitted model at a time.
    pub fn evaluate(&self, time: f64) -> f64 {
        self.amplitude * (-self.omega * time).exp() + self.background
    }
}

/// The two-exponential curve model `Y₁·g(ω₁T) + Y₂·g(ω₂T)`.
pub fn feynman_model(y1_amp: f64, y2_amp: f64, omega1: f64, omega2: f64, gate_time: f64) -> f64 {
    y1_amp * gate_kernel(omega1 * gate_time) + y2_amp * gate_kernel(omega2 * gate_time)
}

/// One weighted data point: abscissa, ordinate, one-sigma weight.
#[derive(Clone, Copy)]
struct WeightedPoint {
    x: f64,
    y: f64,
    sigma: f64,
}

/// Damped Gauss–Newton minimizer of `Σ((model(θ) − y)/σ)²`.
///
/// `model_jac(theta, x)` returns the model value and its gradient in θ.
/// Returns `(theta, cost, n_iterations, converged, reason)`.
fn levenberg_marquardt<const P: usize>(
    points: &[WeightedPoint],
    mut theta: [f64; P],
    model_jac: &dyn Fn(&[f64; P], f64) -> (f64, [f64; P]),
) -> ([f64; P], f64, usize, bool, String) {
    let n = points.len();
    let residuals_of = |th: &[f64; P]| -> DVector<f64> {
        DVector::from_iterator(
            n,
            points
                .iter()
                .map(|p| (model_jac(th, p.x).0 - p.y) / p.sigma),
        )
    };
    let mut residuals = residuals_of(&theta);
    let mut cost = residuals.norm_squared();
    let mut damping = 1e-3;
    for iteration in 0..MAX_ITERATIONS {
        // Weighted Jacobian of the residual vector.
        let mut jacobian = DMatrix::zeros(n, P);
        for (i, p) in points.iter().enumerate() {
            let (_, grad) = model_jac(&theta, p.x);
            for k in 0..P {
                jacobian[(i, k)] = grad[k] / p.sigma;
            }
        }
        let normal = jacobian.transpose() * &jacobian;
        let gradient = jacobian.transpose() * &residuals;
        if gradient.norm() < GRADIENT_TOLERANCE * (1.0 + cost) {
            return (theta, cost, iteration, true, String::new());
        }
        // Try damped steps until one reduces the cost.
        loop {
            let mut damped = normal.clone();
            let floor = normal.diagonal().max().max(1e-12);
            for k in 0..P {
                damped[(k, k)] += damping * normal[(k, k)].max(1e-12 * floor);
            }
            let step = damped.clone().lu().solve(&(-&gradient));
            let accepted = step.and_then(|delta| {
                let mut trial = theta;
                for k in 0..P {
                    trial[k] += delta[k];
                }
                if !trial.iter().all(|v| v.is_finite()) {
                    return None;
                }
                let trial_residuals = residuals_of(&trial);
                let trial_cost = trial_residuals.norm_squared();
                (trial_cost.is_finite() && trial_cost < cost)
                    .then_some((trial, trial_residuals, trial_cost))
            });
            match accepted {
                Some((trial, trial_residuals, trial_cost)) => {
                    theta = trial;
                    residuals = trial_residuals;
                    cost = trial_cost;
                    damping = (damping / 3.0).max(1e-12);
                    break;
                }
                None => {
                    damping *= 10.0;
                    if damping > MAX_DAMPING {
                        return (
                            theta,
                            cost,
                            iteration,
                            false,
                            "no descent step found (singular or flat problem)".into(),
                        );
                    }
                }
            }
        }
    }
    (
        theta,
        cost,
        MAX_ITERATIONS,
        false,
        "iteration limit reached".into(),
    )
}

/// Covariance `(JᵀJ)⁻¹` of the weighted problem at `theta`, with unit-weight
/// fits rescaled by χ²/dof so the uncertainties reflect the scatter.
fn covariance_at<const P: usize>(
    points: &[WeightedPoint],
    theta: &[f64; P],
    model_jac: &dyn Fn(&[f64; P], f64) -> (f64, [f64; P]),
    scale: f64,
) -> Option<[[f64; P]; P]> {
    let n = points.len();
    let mut jacobian = DMatrix::zeros(n, P);
    for (i, p) in points.iter().enumerate() {
        let (_, grad) = model_jac(theta, p.x);
        for k in 0..P {
            jacobian[(i, k)] = grad[k] / p.sigma;
        }
    }
    let normal = jacobian.transpose() * &jacobian;
    let inverse = normal.try_inverse()?;
    let mut out = [[0.0; P]; P];
    for r in 0..P {
        for c in 0..P {
            // Symmetrize to wash out inversion roundoff.
            out[r][c] = 0.5 * (inverse[(r, c)] + inverse[(c, r)]) * scale;
        }
    }
    Some(out)
}

fn weighted_curve_points(
    curve: &crate::analytic::FeynmanCurve,
) -> Result<(Vec<WeightedPoint>, bool), FitError<FeynmanFit>> {
    let mut points = Vec::with_capacity(curve.points.len());
    let mut have_stderr = true;
    for p in &curve.points {
        if !(p.gate_time > 0.0) || !p.gate_time.is_finite() || !p.y_value.is_finite() {
            return Err(FitError::InvalidInput(format!(
                "curve point (T = {}, Y = {}) is not finite and positive in T",
                p.gate_time, p.y_value
            )));
        }
        match p.stderr {
            Some(s) if s > 0.0 => {}
            Some(s) => {
                return Err(FitError::InvalidInput(format!(
                    "curve point at T = {} has non-positive stderr {s}",
                    p.gate_time
                )));
            }
            None => have_stderr = false,
        }
    }
    for p in &curve.points {
        points.push(WeightedPoint {
            x: p.gate_time,
            y: p.y_value,
            sigma: if have_stderr { p.stderr.unwrap() } else { 1.0 },
        });
    }
    Ok((points, have_stderr))
}

/// Weighted linear solve for the amplitudes at fixed rates, completing an
/// `(ω₁, ω₂)` seed into a full parameter vector.
fn seed_with_amplitudes(points: &[WeightedPoint], omega1: f64, omega2: f64) -> [f64; 4] {
    let mut gtg = Matrix2::zeros();
    let mut gty = Vector2::zeros();
    for p in points {
        let w = 1.0 / (p.sigma * p.sigma);
        let g1 = gate_kernel(omega1 * p.x);
        let g2 = gate_kernel(omega2 * p.x);
        gtg[(0, 0)] += w * g1 * g1;
        gtg[(0, 1)] += w * g1 * g2;
        gtg[(1, 0)] += w * g2 * g1;
        gtg[(1, 1)] += w * g2 * g2;
        gty[0] += w * g1 * p.y;
        gty[1] += w * g2 * p.y;
    }
    let fallback = points.last().map(|p| 0.5 * p.y).unwrap_or(0.5);
    let amps = gtg
        .lu()
        .solve(&gty)
        .unwrap_or_else(|| Vector2::new(fallback, fallback));
    [amps[0], amps[1], omega1.ln(), omega2.ln()]
}

/// Default initializations, tried in order until one converges: rate seeds
/// bracketing `1/T_half` (the gate width where the curve reaches half its
/// plateau) at several decade splits, each completed by a linear amplitude
/// solve. Several splits are needed because `T_half` tracks whichever
/// component dominates the amplitude mix, which may be either root.
fn default_feynman_seeds(points: &[WeightedPoint]) -> Vec<[f64; 4]> {
    let plateau = points.last().map(|p| p.y).unwrap_or(1.0);
    let t_half = points
        .iter()
        .find(|p| p.y >= 0.5 * plateau)
        .map(|p| p.x)
        .filter(|t| *t > 0.0)
        .unwrap_or_else(|| points[points.len() / 2].x);
    let pivot = 1.0 / t_half;
    [(0.1, 1.0), (1.0, 10.0), (0.33, 3.0), (0.05, 20.0)]
        .iter()
        .map(|&(lo, hi)| seed_with_amplitudes(points, pivot * lo, pivot * hi))
        .collect()
}

/// Curve model and gradient in `θ = (Y₁, Y₂, ln ω₁, ln ω₂)`.
fn feynman_model_jac(theta: &[f64; 4], t: f64) -> (f64, [f64; 4]) {
    let (y1, y2) = (theta[0], theta[1]);
    let (omega1, omega2) = (theta[2].exp(), theta[3].exp());
    let (x1, x2) = (omega1 * t, omega2 * t);
    let (g1, g2) = (gate_kernel(x1), gate_kernel(x2));
    let value = y1 * g1 + y2 * g2;
    // d/d(ln ω) g(ωt) = g'(x)·x with x = ωt.
    let grad = [g1, g2, y1 * gate_kernel_deriv(x1) * x1, y2 * gate_kernel_deriv(x2) * x2];
    (value, grad)
}

/// Fit `Y(T) = Y₁·g(ω₁T) + Y₂·g(ω₂T)` to a sampled curve.
///
/// Requires at least six points spanning a decade in gate width. Points
/// with standard errors are weighted by them (all-or-none: a curve with a
/// mix of present and absent errors is rejected by the presence check on
/// each point); a curve without errors is fitted with unit weights and the
/// covariance is rescaled by χ²/dof. Pass `init` to resume from a previous
/// fit instead of the automatic initialization.
pub fn fit_feynman(
    curve: &crate::analytic::FeynmanCurve,
    init: Option<&FeynmanFit>,
) -> Result<FeynmanFit, FitError<FeynmanFit>> {
    let (points, have_stderr) = weighted_curve_points(curve)?;
    if points.len() < 6 {
        return Err(FitError::TooFewPoints {
            required: 6,
            got: points.len(),
        });
    }
    let (t_min, t_max) = points
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
            (lo.min(p.x), hi.max(p.x))
        });
    let span_decades = (t_max / t_min).log10();
    if span_decades < 1.0 {
        return Err(FitError::InsufficientSpan { span_decades });
    }
    let seeds = match init {
        Some(f) => {
            if !(f.omega1 > 0.0) || !(f.omega2 > 0.0) {
                return Err(FitError::InvalidInput(
                    "initial decay constants must be positive".into(),
                ));
            }
            vec![[f.y1_amp, f.y2_amp, f.omega1.ln(), f.omega2.ln()]]
        }
        None => default_feynman_seeds(&points),
    };
    // Run every seed that's needed; keep the best converged run, or the
    // lowest-cost failure if none converges.
    let mut best: Option<([f64; 4], f64, usize, bool, String)> = None;
    for seed in seeds {
        let run = levenberg_marquardt(&points, seed, &feynman_model_jac);
        let better = match &best {
            None => true,
            Some(current) => (run.3, -run.1) > (current.3, -current.1),
        };
        if better {
            best = Some(run);
        }
        if let Some((_, cost, _, converged, _)) = &best {
            // A converged essentially-exact fit cannot be improved.
            if *converged && *cost <= 1e-8 * points.len() as f64 {
                break;
            }
        }
    }
    let (theta, cost, n_iterations, converged, reason) = best.expect("at least one seed");
    let dof = (points.len() - 4).max(1) as f64;
    let chi2_per_dof = cost / dof;
    let cov_scale = if have_stderr { 1.0 } else { chi2_per_dof };
    let build = |theta: &[f64; 4], covariance: [[f64; 4]; 4], converged: bool| FeynmanFit {
        y1_amp: theta[0],
        y2_amp: theta[1],
        omega1: theta[2].exp(),
        omega2: theta[3].exp(),
        covariance,
        chi2_per_dof,
        converged,
        n_iterations,
    };
    let internal_cov = covariance_at(&points, &theta, &feynman_model_jac, cov_scale);
    if !converged {
        return Err(FitError::NotConverged {
            n_iterations,
            reason,
            best: Box::new(build(&theta, internal_cov.unwrap_or([[f64::NAN; 4]; 4]), false)),
        });
    }
    let Some(mut covariance) = internal_cov else {
        // A singular normal matrix at the optimum means some direction —
        // in practice a vanishing amplitude's rate — is unconstrained.
        return Err(FitError::Degenerate {
            reason: "normal matrix singular at the optimum: a decay constant is \
                     unconstrained by the data"
                .into(),
            best: Box::new(build(&theta, [[f64::NAN; 4]; 4], true)),
        });
    };
    // Map (ln ω) rows/columns back to plain rates: Σ_ext = D Σ Dᵀ with
    // D = diag(1, 1, ω₁, ω₂).
    let mut theta = theta;
    let rates = [theta[2].exp(), theta[3].exp()];
    for k in 0..2 {
        for j in 0..4 {
            covariance[2 + k][j] *= rates[k];
            covariance[j][2 + k] *= rates[k];
        }
    }
    let unconstrained = (0..2).any(|k| {
        let sigma = covariance[2 + k][2 + k].max(0.0).sqrt();
        sigma > UNCONSTRAINED_RELATIVE_SIGMA * rates[k]
    });
    // Canonical ordering ω₁ ≤ ω₂: swap the exponential pairs and permute
    // the covariance accordingly.
    if rates[0] > rates[1] {
        theta.swap(0, 1);
        theta.swap(2, 3);
        let permutation = [1usize, 0, 3, 2];
        let mut permuted = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                permuted[r][c] = covariance[permutation[r]][permutation[c]];
            }
        }
        covariance = permuted;
    }
    let fit = build(&theta, covariance, true);
    if unconstrained {
        return Err(FitError::Degenerate {
            reason: "a decay constant is unconstrained by the data".into(),
            best: Box::new(fit),
        });
    }
    if fit.omega1 / fit.omega2 > DEGENERATE_RATE_RATIO {
        return Err(FitError::Degenerate {
            reason: format!(
                "omega1/omega2 = {:.4} exceeds {DEGENERATE_RATE_RATIO}",
                fit.omega1 / fit.omega2
            ),
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

/// Die-away model and gradient in `θ = (A, ln ω, B)`.
fn dieaway_model_jac(theta: &[f64; 3], t: f64) -> (f64, [f64; 3]) {
    let (a, b) = (theta[0], theta[2]);
    let omega = theta[1].exp();
    let decay = (-omega * t).exp();
    (a * decay + b, [decay, -a * omega * t * decay, 1.0])
}

/// Fit `A·e^{−ωt} + B` to a die-away histogram.
///
/// Requires at least five bins with positive rates and standard errors
/// (drop empty tail bins before calling). Fails with `NotConverged` when
/// the data do not identify a decaying component: no descent, a
/// non-positive fitted amplitude, or a rate uncertainty above
/// [`UNCONSTRAINED_RELATIVE_SIGMA`] times the rate.
pub fn fit_dieaway(histogram: &[DecayPoint]) -> Result<DieAwayFit, FitError<DieAwayFit>> {
    if histogram.len() < 5 {
        return Err(FitError::TooFewPoints {
            required: 5,
            got: histogram.len(),
        });
    }
    for p in histogram {
        if !p.time.is_finite() || !(p.rate > 0.0) || !(p.stderr > 0.0) {
            return Err(FitError::InvalidInput(format!(
                "bin (t = {}, rate = {}, stderr = {}) must be finite with \
                 positive rate and stderr",
                p.time, p.rate, p.stderr
            )));
        }
    }
    let mut sorted: Vec<WeightedPoint> = histogram
        .iter()
        .map(|p| WeightedPoint {
            x: p.time,
            y: p.rate,
            sigma: p.stderr,
        })
        .collect();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let n = sorted.len();
    let span = sorted[n - 1].x - sorted[0].x;
    if !(span > 0.0) {
        return Err(FitError::InvalidInput(
            "histogram bins must span a positive time interval".into(),
        ));
    }
    // Initialization: background from the smallest rate, amplitude from the
    // first bin, rate from the log-slope to a mid-tail bin.
    let min_rate = sorted.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let background0 = 0.5 * min_rate;
    let amplitude0 = (sorted[0].y - background0).max(0.25 * min_rate);
    let mid = &sorted[n / 3];
    let omega0 = {
        let num = (sorted[0].y - background0).max(f64::MIN_POSITIVE);
        let den = (mid.y - background0).max(f64::MIN_POSITIVE);
        let slope = (num / den).ln() / (mid.x - sorted[0].x).max(f64::MIN_POSITIVE);
        if slope.is_finite() && slope > 0.0 {
            slope
        } else {
            3.0 / span
        }
    };
    let theta0 = [amplitude0, omega0.ln(), background0];
    let (theta, cost, n_iterations, converged, reason) =
        levenberg_marquardt(&sorted, theta0, &dieaway_model_jac);
    let dof = (n - 3).max(1) as f64;
    let chi2_per_dof = cost / dof;
    let omega = theta[1].exp();
    let covariance = covariance_at(&sorted, &theta, &dieaway_model_jac, 1.0).map(|mut cov| {
        for j in 0..3 {
            cov[1][j] *= omega;
            cov[j][1] *= omega;
        }
        cov
    });
    let fit = DieAwayFit {
        amplitude: theta[0],
        omega,
        background: theta[2],
        covariance: covariance.unwrap_or([[f64::NAN; 3]; 3]),
        chi2_per_dof,
        converged,
        n_iterations,
    };
    if !converged {
        return Err(FitError::NotConverged {
            n_iterations,
            reason,
            best: Box::new(fit),
        });
    }
    let sigma_omega = fit.covariance[1][1].max(0.0).sqrt();
    if fit.amplitude <= 0.0 || !sigma_omega.is_finite() || sigma_omega > UNCONSTRAINED_RELATIVE_SIGMA * omega
    {
        return Err(FitError::NotConverged {
            n_iterations,
            reason: "no decaying component identified (amplitude or rate \
                     unconstrained)"
                .into(),
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{
        feynman_curve_canonical, log_gate_grid, y_amplitudes_canonical, CurvePoint, FeynmanCurve,
    };
    use crate::presets::{analytic_params, Setup};
    use approx::assert_relative_eq;

    fn reference_curve(stderr: Option<f64>) -> (FeynmanCurve, crate::analytic::YAmplitudes) {
        let params = analytic_params(Setup::Ddsi500);
        let amps = y_amplitudes_canonical(&params).unwrap();
        let gates = log_gate_grid(0.03, 60.0, 40);
        let mut curve = feynman_curve_canonical(&params, &gates).unwrap();
        for p in &mut curve.points {
            p.stderr = stderr;
        }
        (curve, amps)
    }

    #[test]
    fn noise_free_curve_recovers_generating_parameters() {
        let (curve, amps) = reference_curve(Some(1e-3));
        let fit = fit_feynman(&curve, None).unwrap();
        let params = analytic_params(Setup::Ddsi500);
        let roots = crate::analytic::omega_roots(&params).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.y1_amp, amps.y1_amp, max_relative = 1e-3);
        assert_relative_eq!(fit.y2_amp, amps.y2_amp, max_relative = 1e-3);
        assert_relative_eq!(fit.omega1, roots.omega1, max_relative = 1e-3);
        assert_relative_eq!(fit.omega2, roots.omega2, max_relative = 1e-3);
        assert!(fit.omega1 <= fit.omega2);
        // Noise-free data: the optimum is far tighter than the contract.
        assert!(fit.chi2_per_dof < 1e-12);
    }

    #[test]
    fn refitting_from_the_optimum_is_a_fixed_point() {
        let (curve, _) = reference_curve(Some(1e-3));
        let first = fit_feynman(&curve, None).unwrap();
        let second = fit_feynman(&curve, Some(&first)).unwrap();
        assert_relative_eq!(second.y1_amp, first.y1_amp, max_relative = 1e-10);
        assert_relative_eq!(second.y2_amp, first.y2_amp, max_relative = 1e-10);
        assert_relative_eq!(second.omega1, first.omega1, max_relative = 1e-10);
        assert_relative_eq!(second.omega2, first.omega2, max_relative = 1e-10);
    }

    #[test]
    fn fit_is_equivariant_under_time_rescaling() {
        let (curve, _) = reference_curve(Some(1e-3));
        let base = fit_feynman(&curve, None).unwrap();
        for k in [0.25, 4.0] {
            let scaled = FeynmanCurve {
                points: curve
                    .points
                    .iter()
                    .map(|p| CurvePoint {
                        gate_time: p.gate_time * k,
                        ..*p
                    })
                    .collect(),
            };
            let fit = fit_feynman(&scaled, None).unwrap();
            assert_relative_eq!(fit.y1_amp, base.y1_amp, max_relative = 1e-9);
            assert_relative_eq!(fit.y2_amp, base.y2_amp, max_relative = 1e-9);
            assert_relative_eq!(fit.omega1, base.omega1 / k, max_relative = 1e-9);
            assert_relative_eq!(fit.omega2, base.omega2 / k, max_relative = 1e-9);
        }
    }

    #[test]
    fn covariance_is_symmetric_positive_semidefinite() {
        let (curve, _) = reference_curve(Some(1e-3));
        let fit = fit_feynman(&curve, None).unwrap();
        let cov = nalgebra::Matrix4::from_fn(|r, c| fit.covariance[r][c]);
        for r in 0..4 {
            for c in 0..4 {
                assert_relative_eq!(cov[(r, c)], cov[(c, r)], max_relative = 1e-12);
            }
        }
        let eigen = cov.symmetric_eigen();
        let scale = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        for ev in eigen.eigenvalues.iter() {
            assert!(*ev >= -1e-12 * scale, "eigenvalue {ev} negative at scale {scale}");
        }
    }

    #[test]
    fn single_exponential_truth_is_reported_degenerate() {
        // Data generated by one exponential: the second component is either
        // driven onto the first (rate ratio → 1) or left unconstrained.
        let gates = log_gate_grid(0.05, 100.0, 40);
        let curve = FeynmanCurve {
            points: gates
                .iter()
                .map(|&t| CurvePoint {
                    gate_time: t,
                    y_value: 0.8 * gate_kernel(0.5 * t),
                    stderr: Some(1e-3),
                })
                .collect(),
        };
        match fit_feynman(&curve, None) {
            Err(FitError::Degenerate { best, .. }) => {
                // Whatever split the optimizer found must still describe
                // the generating curve.
                assert_relative_eq!(best.plateau(), 0.8, max_relative = 1e-3);
            }
            Err(FitError::NotConverged { .. }) => {}
            other => panic!("expected a degeneracy diagnostic, got {other:?}"),
        }
    }

    #[test]
    fn unit_weights_apply_when_stderr_is_absent() {
        let (curve, amps) = reference_curve(None);
        let fit = fit_feynman(&curve, None).unwrap();
        assert_relative_eq!(fit.y1_amp, amps.y1_amp, max_relative = 1e-3);
        assert_relative_eq!(fit.plateau(), amps.y0, max_relative = 1e-6);
    }

    #[test]
    fn preconditions_are_enforced() {
        let (curve, _) = reference_curve(Some(1e-3));
        let few = FeynmanCurve {
            points: curve.points[..5].to_vec(),
        };
        assert!(matches!(
            fit_feynman(&few, None),
            Err(FitError::TooFewPoints { required: 6, got: 5 })
        ));
        let narrow = FeynmanCurve {
            points: (0..10)
                .map(|i| CurvePoint {
                    gate_time: 1.0 + 0.1 * i as f64,
                    y_value: 0.1,
                    stderr: Some(1e-3),
                })
                .collect(),
        };
        assert!(matches!(
            fit_feynman(&narrow, None),
            Err(FitError::InsufficientSpan { .. })
        ));
        let mut bad_sigma = curve.clone();
        bad_sigma.points[3].stderr = Some(0.0);
        assert!(matches!(
            fit_feynman(&bad_sigma, None),
            Err(FitError::InvalidInput(_))
        ));
    }

    #[test]
    fn exact_exponential_histogram_recovers_the_rate() {
        let truth_omega = 0.6318;
        let histogram: Vec<DecayPoint> = (0..30)
            .map(|i| {
                let t = 0.25 * i as f64;
                DecayPoint {
                    time: t,
                    rate: 10.0 * (-truth_omega * t).exp() + 0.5,
                    stderr: 0.01,
                }
            })
            .collect();
        let fit = fit_dieaway(&histogram).unwrap();
        assert!((fit.omega - truth_omega).abs() < 1e-6);
        assert_relative_eq!(fit.amplitude, 10.0, max_relative = 1e-6);
        assert_relative_eq!(fit.background, 0.5, max_relative = 1e-4);
        assert!(fit.chi2_per_dof < 1e-12);
        // Covariance symmetric PSD here too.
        let cov = nalgebra::Matrix3::from_fn(|r, c| fit.covariance[r][c]);
        let eigen = cov.symmetric_eigen();
        let scale = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        for ev in eigen.eigenvalues.iter() {
            assert!(*ev >= -1e-12 * scale);
        }
    }

    #[test]
    fn constant_histogram_has_no_identifiable_rate() {
        let histogram: Vec<DecayPoint> = (0..20)
            .map(|i| DecayPoint {
                time: 0.5 * i as f64,
                rate: 4.0,
                stderr: 0.05,
            })
            .collect();
        assert!(matches!(
            fit_dieaway(&histogram),
            Err(FitError::NotConverged { .. })
        ));
    }

    #[test]
    fn dieaway_preconditions_are_enforced() {
        let short: Vec<DecayPoint> = (0..4)
            .map(|i| DecayPoint {
                time: i as f64,
                rate: (10 - i) as f64,
                stderr: 0.1,
            })
            .collect();
        assert!(matches!(
            fit_dieaway(&short),
            Err(FitError::TooFewPoints { required: 5, got: 4 })
        ));
        let with_zero: Vec<DecayPoint> = (0..8)
            .map(|i| DecayPoint {
                time: i as f64,
                rate: if i == 7 { 0.0 } else { 10.0 * (-0.5 * i as f64).exp() },
                stderr: 0.1,
            })
            .collect();
        assert!(matches!(
            fit_dieaway(&with_zero),
            Err(FitError::InvalidInput(_))
        ));
    }

    #[test]
    fn simulated_decay_matches_the_configured_slow_root() {
        use crate::presets::sim_params;
        use crate::simulator::{decay_histogram, DecayConfig};
        let params = sim_params(Setup::Ddsi500);
        let roots = crate::analytic::omega_roots(&params).unwrap();
        let config = DecayConfig {
            params,
            initial_n1: 179,
            initial_n2: 108,
            t_max: 10.0,
            n_bins: 25,
            replicas: 512,
            seed: 31,
            max_population: 1_000_000,
        };
        let histogram = decay_histogram(&config).unwrap();
        // Fit past the fast transient, dropping empty bins.
        let tail: Vec<DecayPoint> = histogram
            .rate_points()
            .into_iter()
            .filter(|p| p.time >= 1.0 && p.rate > 0.0)
            .collect();
        let fit = fit_dieaway(&tail).unwrap();
        let sigma = fit.covariance[1][1].sqrt();
        assert!(
            (fit.omega - roots.omega1).abs() < 4.0 * sigma,
            "fitted ω = {} ± {sigma}, configured slow root = {}",
            fit.omega,
            roots.omega1
        );
        assert!(sigma / fit.omega < 0.1, "decay fit should be well-determined");
    }
}
