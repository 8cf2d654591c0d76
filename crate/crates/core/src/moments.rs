//! Independent ODE oracle for the moment system.
//!
//! This module integrates the first- and second-moment equations of the
//! two-region process forward in time and reads the variance-to-mean curve
//! directly off the trajectory, `Y(T) = μ_ZZ(T)/⟨Z(T)⟩`. It never consults
//! the closed forms in [`crate::analytic`] — the stationary initial
//! condition is obtained by numerically solving the linear balance systems —
//! so agreement between the two routes (typically 10⁻⁸ relative or better)
//! is a genuine two-sided check of both derivations.
//!
//! The state vector is
//!
//! ```text
//! [⟨N₁⟩, ⟨N₂⟩, ⟨Z⟩, μXX, μXY, μYY, μXZ, μYZ, μZZ]
//! ```
//!
//! where `μ_AB = ⟨AB⟩ − ⟨A⟩⟨B⟩` for distinct variables and the diagonal
//! entries are the factorial variants `⟨A(A−1)⟩ − ⟨A⟩²`. The right-hand
//! sides (with `a₁`, `a₂` the net removal rates and `T₁`, `T₂` the transfer
//! intensities) are
//!
//! ```text
//! ⟨N₁⟩' = −a₁⟨N₁⟩ + T₂⟨N₂⟩ + S₁r₁          μXX' = −2a₁μXX + 2T₂μXY + ν₂¹λ₁f⟨N₁⟩ + S₁r₂
//! ⟨N₂⟩' =  T₁⟨N₁⟩ − a₂⟨N₂⟩                 μXY' = −(a₁+a₂)μXY + T₁μXX + T₂μYY
//! ⟨Z⟩'  =  λ_d⟨N₁⟩                          μYY' = −2a₂μYY + 2T₁μXY + ν₂²λ₂f⟨N₂⟩
//! μXZ'  = −a₁μXZ + T₂μYZ + λ_d·μXX          μYZ' = −a₂μYZ + T₁μXZ + λ_d·μXY
//! μZZ'  =  2λ_d·μXZ
//! ```
//!
//! Detection is destructive (a detected particle leaves region 1), which is
//! why `λ_d·μXX` — the factorial second moment — drives `μXZ`: the `−λ_d⟨N₁⟩`
//! self-correlation term is exactly absorbed by the factorial convention.
//!
//! Integration uses an embedded Dormand–Prince 5(4) pair with adaptive step
//! control; requested output times are hit exactly by step clamping, so one
//! pass serves an entire gate grid at full order.
//!
//! Once the transient has died out the solution is affine in `t` and the
//! step size becomes limited by the explicit method's stability interval
//! rather than by accuracy: the controller paces at `h ≈ 3.3/(2ω₂)`
//! indefinitely. Horizons beyond roughly `10⁶/ω₂` therefore need a larger
//! [`IntegrationOptions::max_steps`] budget than the default; the cost per
//! step is nine-dimensional linear arithmetic, so even multi-million-step
//! runs complete in seconds.

use crate::analytic::{CurvePoint, FeynmanCurve};
use crate::model::SystemParams;
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::Serialize;

/// Default relative tolerance of the adaptive integrator.
pub const DEFAULT_RTOL: f64 = 1e-10;

/// Default step cap; a smooth 9-dimensional linear system needs orders of
/// magnitude fewer steps, so hitting the cap signals a genuinely stiff or
/// runaway configuration.
pub const DEFAULT_MAX_STEPS: u64 = 2_000_000;

#[derive(Debug, thiserror::Error)]
pub enum MomentError {
    /// The characteristic roots are not both positive, so no stationary
    /// initial condition exists (system critical or supercritical).
    #[error(
        "no stationary state: root sum = {root_sum}, root product = {root_product} \
         (both must be > 0)"
    )]
    NoStationaryState { root_sum: f64, root_product: f64 },
    /// Step budget exhausted before reaching the final output time.
    #[error("integration exceeded {steps} steps at t = {time}; system too stiff for the budget")]
    StiffnessFailure { time: f64, steps: u64 },
    /// The controller drove the step size below the resolvable limit, or the
    /// state left the finite range.
    #[error("tolerance not met at t = {time} (step size {step_size:e})")]
    ToleranceNotMet { time: f64, step_size: f64 },
    /// Variance-to-mean is undefined without detections.
    #[error("stationary detection rate is zero; Y(T) is undefined")]
    ZeroDetectionRate,
    /// Output grid or gate list violates preconditions.
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
}

/// Full moment state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentState {
    pub time: f64,
    pub mean_n1: f64,
    pub mean_n2: f64,
    pub mean_z: f64,
    pub mu_xx: f64,
    pub mu_xy: f64,
    pub mu_yy: f64,
    pub mu_xz: f64,
    pub mu_yz: f64,
    pub mu_zz: f64,
}

impl MomentState {
    /// State with every moment zero (empty system) at `time = 0`.
    pub fn empty() -> Self {
        Self::from_vector(0.0, [0.0; 9])
    }

    fn from_vector(time: f64, y: [f64; 9]) -> Self {
        MomentState {
            time,
            mean_n1: y[0],
            mean_n2: y[1],
            mean_z: y[2],
            mu_xx: y[3],
            mu_xy: y[4],
            mu_yy: y[5],
            mu_xz: y[6],
            mu_yz: y[7],
            mu_zz: y[8],
        }
    }

    fn to_vector(self) -> [f64; 9] {
        [
            self.mean_n1,
            self.mean_n2,
            self.mean_z,
            self.mu_xx,
            self.mu_xy,
            self.mu_yy,
            self.mu_xz,
            self.mu_yz,
            self.mu_zz,
        ]
    }

    /// Checks the physicality invariants: everything finite, and the
    /// diagonal modified moments no more negative than numerical noise
    /// (10⁻⁹ of the state scale) allows.
    pub fn check_physical(&self) -> Result<(), String> {
        let y = self.to_vector();
        if !y.iter().all(|v| v.is_finite()) {
            return Err(format!("non-finite state at t = {}", self.time));
        }
        let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let floor = -1e-9 * scale;
        for (name, value) in [
            ("mu_xx", self.mu_xx),
            ("mu_yy", self.mu_yy),
            ("mu_zz", self.mu_zz),
        ] {
            if value < floor {
                return Err(format!(
                    "{name} = {value} below physical floor {floor} at t = {}",
                    self.time
                ));
            }
        }
        Ok(())
    }
}

/// How to initialize the trajectory at `t = 0`.
#[derive(Debug, Clone, Copy)]
pub enum InitialCondition {
    /// Stationary populations and population moments (numeric linear solves),
    /// with the counter and its cross moments zeroed — the gate-opening
    /// configuration of a variance-to-mean measurement.
    Stationary,
    /// Everything zero: an empty system switched on at `t = 0`. Used by the
    /// pre-integration cross-check of the stationary solver.
    Empty,
    /// Caller-supplied state; its `time` field is ignored and reset to zero.
    Custom(MomentState),
}

/// Integration controls.
#[derive(Debug, Clone, Copy)]
pub struct IntegrationOptions {
    /// Relative tolerance of the embedded error estimate.
    pub rtol: f64,
    /// Absolute tolerance floor; defaults to `rtol × 10⁻⁴` so that refining
    /// `rtol` refines the floor along with it.
    pub atol: Option<f64>,
    /// Accepted-step budget before [`MomentError::StiffnessFailure`].
    pub max_steps: u64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            rtol: DEFAULT_RTOL,
            atol: None,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl IntegrationOptions {
    pub fn with_rtol(rtol: f64) -> Self {
        IntegrationOptions {
            rtol,
            ..Default::default()
        }
    }

    fn atol_value(&self) -> f64 {
        self.atol.unwrap_or(self.rtol * 1e-4)
    }
}

/// Precomputed right-hand-side coefficients.
struct Coefficients {
    a1: f64,
    a2: f64,
    t1: f64,
    t2: f64,
    lam_d: f64,
    source_rate: f64,
    source_pair_rate: f64,
    fission_drive_1: f64,
    fission_drive_2: f64,
}

impl Coefficients {
    fn new(params: &SystemParams) -> Self {
        Coefficients {
            a1: params.net_removal_1(),
            a2: params.net_removal_2(),
            t1: params.region1.transfer_out_intensity,
            t2: params.region2.transfer_out_intensity,
            lam_d: params.region1.detection_intensity,
            source_rate: params.source.strength * params.source.emission_nu1,
            source_pair_rate: params.source.strength * params.source.emission_nu2,
            fission_drive_1: params.region1.induced_nu2 * params.region1.fission_intensity,
            fission_drive_2: params.region2.induced_nu2 * params.region2.fission_intensity,
        }
    }

    fn rhs(&self, y: &[f64; 9]) -> [f64; 9] {
        let [n1, n2, _z, xx, xy, yy, xz, yz, _zz] = *y;
        [
            -self.a1 * n1 + self.t2 * n2 + self.source_rate,
            self.t1 * n1 - self.a2 * n2,
            self.lam_d * n1,
            -2.0 * self.a1 * xx + 2.0 * self.t2 * xy + self.fission_drive_1 * n1
                + self.source_pair_rate,
            -(self.a1 + self.a2) * xy + self.t1 * xx + self.t2 * yy,
            -2.0 * self.a2 * yy + 2.0 * self.t1 * xy + self.fission_drive_2 * n2,
            -self.a1 * xz + self.t2 * yz + self.lam_d * xx,
            -self.a2 * yz + self.t1 * xz + self.lam_d * xy,
            2.0 * self.lam_d * xz,
        ]
    }
}

/// Time derivative of the moment state — the right-hand sides documented in
/// the module header, exposed so stationarity can be checked externally.
pub fn moment_derivatives(params: &SystemParams, state: &MomentState) -> [f64; 9] {
    Coefficients::new(params).rhs(&state.to_vector())
}

/// Stationary moment state by direct numeric solution of the two linear
/// balance systems (2×2 for the means, 3×3 for the population moments); the
/// counter and its cross moments start at zero. This routine is the oracle's
/// own — it shares no code with the closed forms in [`crate::analytic`].
pub fn stationary_moment_state(params: &SystemParams) -> Result<MomentState, MomentError> {
    let s = params.root_sum();
    let p = params.root_product();
    if !(s > 0.0 && p > 0.0) {
        return Err(MomentError::NoStationaryState {
            root_sum: s,
            root_product: p,
        });
    }
    let c = Coefficients::new(params);
    let mean_system = Matrix2::new(c.a1, -c.t2, -c.t1, c.a2);
    let means = mean_system
        .lu()
        .solve(&Vector2::new(c.source_rate, 0.0))
        .ok_or(MomentError::NoStationaryState {
            root_sum: s,
            root_product: p,
        })?;
    let (n1, n2) = (means[0], means[1]);
    #[rustfmt::skip]
    let moment_system = Matrix3::new(
        -2.0 * c.a1,        2.0 * c.t2,         0.0,
        c.t1,               -(c.a1 + c.a2),     c.t2,
        0.0,                2.0 * c.t1,         -2.0 * c.a2,
    );
    let drive = Vector3::new(
        c.fission_drive_1 * n1 + c.source_pair_rate,
        0.0,
        c.fission_drive_2 * n2,
    );
    let moments = moment_system
        .lu()
        .solve(&(-drive))
        .ok_or(MomentError::NoStationaryState {
            root_sum: s,
            root_product: p,
        })?;
    Ok(MomentState {
        time: 0.0,
        mean_n1: n1,
        mean_n2: n2,
        mean_z: 0.0,
        mu_xx: moments[0],
        mu_xy: moments[1],
        mu_yy: moments[2],
        mu_xz: 0.0,
        mu_yz: 0.0,
        mu_zz: 0.0,
    })
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (identical to the last tableau row: first-same-as-last).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Embedded fourth-order weights for the error estimate.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct Integrator<'a> {
    coeffs: &'a Coefficients,
    rtol: f64,
    atol: f64,
    max_steps: u64,
    steps: u64,
    t: f64,
    y: [f64; 9],
    /// Cached derivative at (t, y); Dormand–Prince is first-same-as-last.
    k1: [f64; 9],
    /// Step size the controller would take absent output-time clamping.
    h_free: f64,
}

impl<'a> Integrator<'a> {
    fn new(coeffs: &'a Coefficients, y0: [f64; 9], opts: &IntegrationOptions) -> Self {
        let k1 = coeffs.rhs(&y0);
        // Conservative initial step from the state/derivative balance; the
        // controller expands it geometrically within a few steps.
        let y_norm = y0.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let f_norm = k1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h0 = if f_norm > 0.0 {
            (1e-3 * y_norm / f_norm).min(1.0)
        } else {
            1e-3
        };
        Integrator {
            coeffs,
            rtol: opts.rtol,
            atol: opts.atol_value(),
            max_steps: opts.max_steps,
            steps: 0,
            t: 0.0,
            y: y0,
            k1,
            h_free: h0,
        }
    }

    /// Advance exactly to `target`, adapting step size along the way.
    fn advance_to(&mut self, target: f64) -> Result<(), MomentError> {
        while self.t < target {
            let clamped = self.h_free >= target - self.t;
            let h = if clamped { target - self.t } else { self.h_free };
            let mut k = [[0.0f64; 9]; 7];
            k[0] = self.k1;
            for stage in 1..7 {
                let mut y_stage = self.y;
                for (j, k_j) in k.iter().enumerate().take(stage) {
                    let a = A[stage][j];
                    if a != 0.0 {
                        for (ys, kj) in y_stage.iter_mut().zip(k_j) {
                            *ys += h * a * kj;
                        }
                    }
                }
                // Stage 7 evaluates at the candidate solution itself.
                let _ = C; // stage times are implicit for an autonomous system
                k[stage] = self.coeffs.rhs(&y_stage);
            }
            let mut y_new = self.y;
            let mut err_vec = [0.0f64; 9];
            for (j, k_j) in k.iter().enumerate() {
                for i in 0..9 {
                    y_new[i] += h * B5[j] * k_j[i];
                    err_vec[i] += h * (B5[j] - B4[j]) * k_j[i];
                }
            }
            // RMS error normalized per component.
            let mut err_sq = 0.0;
            for i in 0..9 {
                let sc = self.atol + self.rtol * self.y[i].abs().max(y_new[i].abs());
                let e = err_vec[i] / sc;
                err_sq += e * e;
            }
            let err = (err_sq / 9.0).sqrt();

            if err <= 1.0 {
                self.t += h;
                self.y = y_new;
                self.k1 = k[6];
                self.steps += 1;
                if !self.y.iter().all(|v| v.is_finite()) {
                    return Err(MomentError::ToleranceNotMet {
                        time: self.t,
                        step_size: h,
                    });
                }
                if self.steps >= self.max_steps && self.t < target {
                    return Err(MomentError::StiffnessFailure {
                        time: self.t,
                        steps: self.steps,
                    });
                }
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // Only let an artificially shortened landing step shrink the
                // free step if the error genuinely demanded it.
                let h_next = h * grow;
                if !clamped || h_next < self.h_free {
                    self.h_free = h_next;
                }
            } else {
                let shrink = (0.9 * err.powf(-0.2)).clamp(0.2, 0.9);
                self.h_free = h * shrink;
                if self.h_free < 1e-14 * self.t.abs().max(1.0) {
                    return Err(MomentError::ToleranceNotMet {
                        time: self.t,
                        step_size: self.h_free,
                    });
                }
            }
        }
        Ok(())
    }
}

fn initial_state(
    params: &SystemParams,
    initial: InitialCondition,
) -> Result<MomentState, MomentError> {
    match initial {
        InitialCondition::Stationary => stationary_moment_state(params),
        InitialCondition::Empty => Ok(MomentState::empty()),
        InitialCondition::Custom(state) => Ok(MomentState {
            time: 0.0,
            ..state
        }),
    }
}

/// Integrate the moment system from `initial` and sample it at `times`
/// (finite, non-negative, strictly increasing). A single adaptive pass
/// serves the whole grid; each requested time is hit exactly.
pub fn integrate_trajectory(
    params: &SystemParams,
    initial: InitialCondition,
    times: &[f64],
    options: &IntegrationOptions,
) -> Result<Vec<MomentState>, MomentError> {
    if times.is_empty() {
        return Ok(Vec::new());
    }
    if !times.iter().all(|t| t.is_finite() && *t >= 0.0) {
        return Err(MomentError::InvalidGrid(
            "output times must be finite and non-negative".into(),
        ));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MomentError::InvalidGrid(
            "output times must be strictly increasing".into(),
        ));
    }
    let start = initial_state(params, initial)?;
    let coeffs = Coefficients::new(params);
    let mut integrator = Integrator::new(&coeffs, start.to_vector(), options);
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        integrator.advance_to(target)?;
        let state = MomentState::from_vector(integrator.t, integrator.y);
        debug_assert!(state.check_physical().is_ok(), "{:?}", state.check_physical());
        out.push(state);
    }
    Ok(out)
}

/// Moment state at `t_end`, starting from the stationary configuration with
/// the counter zeroed — the textbook gate-statistics initial condition.
pub fn integrate_moments(
    params: &SystemParams,
    t_end: f64,
    rtol: f64,
) -> Result<MomentState, MomentError> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(MomentError::InvalidGrid(format!(
            "t_end must be positive and finite, got {t_end}"
        )));
    }
    let states = integrate_trajectory(
        params,
        InitialCondition::Stationary,
        &[t_end],
        &IntegrationOptions::with_rtol(rtol),
    )?;
    Ok(states[0])
}

/// Variance-to-mean curve by direct integration: `Y(T) = μ_ZZ(T)/⟨Z(T)⟩`
/// with stationary start. Gates may arrive in any order (each must be
/// positive and distinct); points come back in the input order. One
/// integration pass covers all gates.
pub fn y_of_t_oracle_with(
    params: &SystemParams,
    gates: &[f64],
    options: &IntegrationOptions,
) -> Result<FeynmanCurve, MomentError> {
    if gates.is_empty() {
        return Ok(FeynmanCurve { points: Vec::new() });
    }
    if !gates.iter().all(|t| t.is_finite() && *t > 0.0) {
        return Err(MomentError::InvalidGrid(
            "gate times must be positive and finite".into(),
        ));
    }
    if params.region1.detection_intensity <= 0.0
        || params.source.strength * params.source.emission_nu1 <= 0.0
    {
        return Err(MomentError::ZeroDetectionRate);
    }
    let mut order: Vec<usize> = (0..gates.len()).collect();
    order.sort_by(|&i, &j| gates[i].total_cmp(&gates[j]));
    let sorted: Vec<f64> = order.iter().map(|&i| gates[i]).collect();
    if sorted.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MomentError::InvalidGrid("gate times must be distinct".into()));
    }
    let states = integrate_trajectory(params, InitialCondition::Stationary, &sorted, options)?;
    let mut points = vec![
        CurvePoint {
            gate_time: 0.0,
            y_value: 0.0,
            stderr: None,
        };
        gates.len()
    ];
    for (&original_index, state) in order.iter().zip(&states) {
        points[original_index] = CurvePoint {
            gate_time: state.time,
            y_value: state.mu_zz / state.mean_z,
            stderr: None,
        };
    }
    Ok(FeynmanCurve { points })
}

/// [`y_of_t_oracle_with`] at the default tolerance.
pub fn y_of_t_oracle(params: &SystemParams, gates: &[f64]) -> Result<FeynmanCurve, MomentError> {
    y_of_t_oracle_with(params, gates, &IntegrationOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{feynman_curve_canonical, omega_roots, y_amplitudes_canonical};
    use crate::presets::{analytic_params, Setup};
    use approx::assert_relative_eq;

    #[test]
    fn stationary_solver_matches_closed_forms() {
        // The numeric linear solves against the closed forms they must agree
        // with — the two derivations share no code.
        for setup in Setup::ALL {
            let params = analytic_params(setup);
            let numeric = stationary_moment_state(&params).unwrap();
            let closed = crate::analytic::stationary_state(&params).unwrap();
            assert_relative_eq!(numeric.mean_n1, closed.mean_n1, max_relative = 1e-12);
            assert_relative_eq!(numeric.mean_n2, closed.mean_n2, max_relative = 1e-12);
            assert_relative_eq!(numeric.mu_xx, closed.mu_xx, max_relative = 1e-12);
            assert_relative_eq!(numeric.mu_xy, closed.mu_xy, max_relative = 1e-12);
            assert_relative_eq!(numeric.mu_yy, closed.mu_yy, max_relative = 1e-12);
            assert_eq!(numeric.mean_z, 0.0);
            assert_eq!(numeric.mu_zz, 0.0);
        }
    }

    #[test]
    fn stationary_derivatives_vanish() {
        for setup in Setup::ALL {
            let params = analytic_params(setup);
            let state = stationary_moment_state(&params).unwrap();
            let d = moment_derivatives(&params, &state);
            // Means and population moments are in balance...
            for idx in [0, 1, 3, 4, 5] {
                assert!(
                    d[idx].abs() < 1e-9,
                    "{setup:?}: derivative {idx} = {}",
                    d[idx]
                );
            }
            // ...while the counter runs at the stationary detection rate.
            assert_relative_eq!(
                d[2],
                params.region1.detection_intensity * state.mean_n1,
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn supercritical_has_no_stationary_state() {
        let mut params = analytic_params(Setup::Ddsi500);
        params.region1.fission_intensity = 5.0;
        assert!(matches!(
            stationary_moment_state(&params),
            Err(MomentError::NoStationaryState { .. })
        ));
    }

    #[test]
    fn short_horizon_counter_stays_near_zero() {
        let params = analytic_params(Setup::Ddsi500);
        let state = integrate_moments(&params, 1e-9, DEFAULT_RTOL).unwrap();
        assert!(state.mean_z < 1e-9);
        assert!(state.mu_zz.abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_closed_form_on_reference_gates() {
        for setup in Setup::ALL {
            let params = analytic_params(setup);
            let gates = [0.1, 1.0, 10.0];
            let ode = y_of_t_oracle(&params, &gates).unwrap();
            let closed = feynman_curve_canonical(&params, &gates).unwrap();
            for (o, c) in ode.points.iter().zip(&closed.points) {
                assert_relative_eq!(o.y_value, c.y_value, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn oracle_handles_unsorted_gates() {
        let params = analytic_params(Setup::Ddsi500);
        let shuffled = [10.0, 0.1, 1.0];
        let curve = y_of_t_oracle(&params, &shuffled).unwrap();
        let reference = y_of_t_oracle(&params, &[0.1, 1.0, 10.0]).unwrap();
        assert_eq!(curve.points[0].gate_time, 10.0);
        assert_relative_eq!(
            curve.points[0].y_value,
            reference.points[2].y_value,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            curve.points[1].y_value,
            reference.points[0].y_value,
            max_relative = 1e-12
        );
    }

    #[test]
    fn oracle_no_branching_is_poisson() {
        let mut params = analytic_params(Setup::Ddsi500);
        params.region1.fission_intensity = 0.0;
        params.region2.fission_intensity = 0.0;
        params.source.emission_nu2 = 0.0;
        let curve = y_of_t_oracle(&params, &[0.1, 1.0, 10.0, 100.0]).unwrap();
        for point in &curve.points {
            assert!(point.y_value.abs() < 1e-10, "Y({}) = {}", point.gate_time, point.y_value);
        }
    }

    #[test]
    fn oracle_plateau_matches_closed_form_amplitude_sum() {
        // The horizon must be deep enough that the 1/T plateau deficit is
        // inside the tolerance; stability-limited pacing makes this a
        // multi-million-step run, hence the explicit budget.
        let params = analytic_params(Setup::Ddaa500);
        let y0 = y_amplitudes_canonical(&params).unwrap().y0;
        let options = IntegrationOptions {
            max_steps: 20_000_000,
            ..Default::default()
        };
        let curve = y_of_t_oracle_with(&params, &[5e6], &options).unwrap();
        assert_relative_eq!(curve.points[0].y_value, y0, max_relative = 1e-6);
    }

    #[test]
    fn oracle_independent_of_source_strength_for_poisson_source() {
        let params = analytic_params(Setup::Ddsi500); // r₂ = 0
        let mut doubled = params.clone();
        doubled.source.strength *= 2.0;
        let gates = [0.05, 0.5, 5.0, 50.0];
        let base = y_of_t_oracle(&params, &gates).unwrap();
        let scaled = y_of_t_oracle(&doubled, &gates).unwrap();
        for (a, b) in base.points.iter().zip(&scaled.points) {
            assert_relative_eq!(a.y_value, b.y_value, max_relative = 1e-10);
        }
    }

    #[test]
    fn empty_start_converges_to_stationary_means() {
        for setup in Setup::ALL {
            let params = analytic_params(setup);
            let omega1 = omega_roots(&params).unwrap().omega1;
            let horizon = 30.0 / omega1;
            let states = integrate_trajectory(
                &params,
                InitialCondition::Empty,
                &[horizon],
                &IntegrationOptions::default(),
            )
            .unwrap();
            let stationary = stationary_moment_state(&params).unwrap();
            assert_relative_eq!(
                states[0].mean_n1,
                stationary.mean_n1,
                max_relative = 1e-6
            );
            assert_relative_eq!(
                states[0].mean_n2,
                stationary.mean_n2,
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn pre_integration_cross_checks_stationary_solver() {
        let params = analytic_params(Setup::Ddsi500);
        let omega1 = omega_roots(&params).unwrap().omega1;
        let states = integrate_trajectory(
            &params,
            InitialCondition::Empty,
            &[60.0 / omega1],
            &IntegrationOptions::default(),
        )
        .unwrap();
        let direct = stationary_moment_state(&params).unwrap();
        assert_relative_eq!(states[0].mu_xx, direct.mu_xx, max_relative = 1e-8);
        assert_relative_eq!(states[0].mu_xy, direct.mu_xy, max_relative = 1e-8);
        assert_relative_eq!(states[0].mu_yy, direct.mu_yy, max_relative = 1e-8);
    }

    #[test]
    fn refining_tolerance_refines_answer() {
        let params = analytic_params(Setup::Ddsi500);
        let gates = [1.0];
        let coarse = y_of_t_oracle_with(
            &params,
            &gates,
            &IntegrationOptions::with_rtol(1e-8),
        )
        .unwrap();
        let fine = y_of_t_oracle_with(
            &params,
            &gates,
            &IntegrationOptions::with_rtol(5e-9),
        )
        .unwrap();
        let rel = (coarse.points[0].y_value - fine.points[0].y_value).abs()
            / fine.points[0].y_value;
        assert!(rel < 10.0 * 1e-8, "rtol halving moved Y by {rel:e}");
    }

    #[test]
    fn step_budget_exhaustion_is_reported() {
        let params = analytic_params(Setup::Ddsi500);
        let options = IntegrationOptions {
            max_steps: 5,
            ..Default::default()
        };
        match integrate_trajectory(
            &params,
            InitialCondition::Stationary,
            &[1e5],
            &options,
        ) {
            Err(MomentError::StiffnessFailure { steps, .. }) => assert_eq!(steps, 5),
            other => panic!("expected StiffnessFailure, got {other:?}"),
        }
    }

    #[test]
    fn custom_initial_condition_is_honored() {
        let params = analytic_params(Setup::Ddsi500);
        let mut start = stationary_moment_state(&params).unwrap();
        start.mu_zz = 5.0;
        start.time = 42.0; // must be ignored
        let states = integrate_trajectory(
            &params,
            InitialCondition::Custom(start),
            &[0.5],
            &IntegrationOptions::default(),
        )
        .unwrap();
        assert_eq!(states[0].time, 0.5);
        assert!(states[0].mu_zz > 5.0);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let params = analytic_params(Setup::Ddsi500);
        let opts = IntegrationOptions::default();
        assert!(matches!(
            integrate_trajectory(&params, InitialCondition::Empty, &[1.0, 1.0], &opts),
            Err(MomentError::InvalidGrid(_))
        ));
        assert!(matches!(
            integrate_trajectory(&params, InitialCondition::Empty, &[-1.0], &opts),
            Err(MomentError::InvalidGrid(_))
        ));
        assert!(matches!(
            y_of_t_oracle(&params, &[0.0]),
            Err(MomentError::InvalidGrid(_))
        ));
        assert!(matches!(
            integrate_moments(&params, f64::NAN, DEFAULT_RTOL),
            Err(MomentError::InvalidGrid(_))
        ));
    }

    #[test]
    fn detectorless_system_cannot_produce_a_curve() {
        let mut params = analytic_params(Setup::Ddsi500);
        params.region1.detection_intensity = 0.0;
        assert!(matches!(
            y_of_t_oracle(&params, &[1.0]),
            Err(MomentError::ZeroDetectionRate)
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_subcritical() -> impl Strategy<Value = SystemParams> {
            (
                0.0..1.0f64,
                0.0..0.22f64,
                0.1..1.5f64,
                0.02..0.3f64,
                0.1..2.0f64,
                0.0..1.5f64,
            )
                .prop_map(|(c1, f1, t1, d, c2, t2)| {
                    let mut params = analytic_params(Setup::Ddsi500);
                    params.region1.capture_intensity = c1;
                    params.region1.fission_intensity = f1;
                    params.region1.transfer_out_intensity = t1;
                    params.region1.detection_intensity = d;
                    params.region2.capture_intensity = c2;
                    params.region2.transfer_out_intensity = t2;
                    params
                })
                .prop_filter("comfortably subcritical", |p| {
                    p.root_sum() > 0.1 && p.root_product() > 0.02
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn ode_route_matches_laplace_route(params in arb_subcritical()) {
                let gates = [0.5, 5.0];
                let ode = y_of_t_oracle_with(
                    &params,
                    &gates,
                    &IntegrationOptions::with_rtol(1e-10),
                ).unwrap();
                let closed = feynman_curve_canonical(&params, &gates).unwrap();
                for (o, c) in ode.points.iter().zip(&closed.points) {
                    let scale = c.y_value.abs().max(1e-9);
                    prop_assert!(
                        (o.y_value - c.y_value).abs() / scale < 1e-7,
                        "Y({}) ode {} vs closed {}",
                        c.gate_time, o.y_value, c.y_value
                    );
                }
            }
        }
    }
}
