//! Estimation: detection trains → empirical variance-to-mean curves, and
//! event tallies → reaction intensities.
//!
//! # Gate statistics
//!
//! A variance-to-mean measurement chops the recording window into gates of
//! width `T`, counts detections per gate, and forms
//! `Y(T) = s²/z̄ − 1` from the sample mean and unbiased sample variance.
//! Two gating modes are provided:
//!
//! * **non-overlapping** — the window is partitioned independently for each
//!   requested width;
//! * **bunching** — the window is counted once into cells of the smallest
//!   requested width, and every other width is built by aggregating runs of
//!   whole cells. Requested widths are *snapped* to the nearest integer
//!   multiple of the base cell (the snapped value is reported), which is the
//!   price of deriving all widths from a single pass.
//!
//! Gates truncated by the window's end are discarded. The default standard
//! error is the large-sample expression `(1+Y)·√(2/(n_gates−1))`; when eight
//! or more replicas are pooled, the replica-to-replica spread of `Y`
//! replaces it.
//!
//! # Tally inversion
//!
//! With `∫N dt` exposures alongside event counts, every intensity is a
//! count-per-exposure ratio, e.g. `λ₁f = n_fission_events_1 / ∫N₁dt`. Before
//! inverting, the table must satisfy the per-source-neutron balance of the
//! configuration: the self-interrogation form credits the source neutron to
//! region 1, the die-away form credits it to region 2. Residuals above
//! [`BALANCE_TOLERANCE`] abort with [`EstimatorError::BalanceViolation`].
//! Leakage (`n_lost`), which the two-region model lacks as a channel, is
//! folded into the region-2 capture intensity.

use crate::simulator::DetectionRecord;
use serde::{Deserialize, Serialize};

/// Gates per width below which the statistics are flagged low-confidence.
pub const LOW_CONFIDENCE_GATES: usize = 100;

/// Replica count from which the replica-spread standard error replaces the
/// single-train asymptotic formula.
pub const REPLICA_SPREAD_MIN: usize = 8;

/// Acceptable per-source-neutron balance residual for ingested tally tables
/// (stationary drift and transcription rounding both land well below this
/// for healthy data).
pub const BALANCE_TOLERANCE: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("detection train contains no usable events")]
    EmptyTrain,
    #[error("gate width {gate_width} leaves only {n_gates} complete gates; at least 2 required")]
    GateTooLong { gate_width: f64, n_gates: usize },
    #[error(
        "tally table violates the balance equations: residuals ({residual_1}, {residual_2}) \
         per source neutron exceed {tolerance}"
    )]
    BalanceViolation {
        residual_1: f64,
        residual_2: f64,
        tolerance: f64,
    },
    #[error("invalid estimator input: {0}")]
    InvalidInput(String),
}

/// Half-open analysis window `[start, end)` on the train's clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// How gates are laid out over the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    NonOverlapping,
    Bunching,
}

/// Variance-to-mean statistics of one gate width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateStatistics {
    /// Actual gate width used (equals the request in non-overlapping mode;
    /// snapped to a whole number of base cells in bunching mode).
    pub gate_width: f64,
    pub n_gates: usize,
    pub mean_count: f64,
    /// Unbiased sample variance of the per-gate counts.
    pub variance: f64,
    /// `variance/mean − 1`.
    pub y_value: f64,
    pub stderr: f64,
    /// Set when fewer than [`LOW_CONFIDENCE_GATES`] gates back the numbers.
    pub low_confidence: bool,
}

fn check_train(times: &[f64], window: Window) -> Result<(), EstimatorError> {
    if times.is_empty() {
        return Err(EstimatorError::EmptyTrain);
    }
    if !(window.duration() > 0.0) || !window.start.is_finite() || !window.end.is_finite() {
        return Err(EstimatorError::InvalidInput(format!(
            "window [{}, {}) is empty or not finite",
            window.start, window.end
        )));
    }
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(EstimatorError::InvalidInput(
            "detection train must be sorted ascending".into(),
        ));
    }
    let (first, last) = (times[0], times[times.len() - 1]);
    if first < window.start || last > window.end {
        return Err(EstimatorError::InvalidInput(format!(
            "train spans [{first}, {last}] outside the window [{}, {})",
            window.start, window.end
        )));
    }
    Ok(())
}

/// Number of complete gates of width `w` in a duration, with a relative slop
/// forgiving the `duration/w` rounding of round decimal widths.
fn complete_gates(duration: f64, width: f64) -> usize {
    (duration / width + 1e-9).floor() as usize
}

/// Count detections into `n_gates` consecutive gates of width `w`.
fn gate_counts(times: &[f64], start: f64, width: f64, n_gates: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_gates];
    for &t in times {
        let idx = ((t - start) / width).floor();
        if idx >= 0.0 && (idx as usize) < n_gates {
            counts[idx as usize] += 1;
        }
    }
    counts
}

struct CountSummary {
    n: usize,
    mean: f64,
    variance: f64,
}

fn summarize(counts: &[u64]) -> CountSummary {
    let n = counts.len();
    let mean = counts.iter().sum::<u64>() as f64 / n as f64;
    let variance = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / (n - 1) as f64;
    CountSummary { n, mean, variance }
}

fn statistics_from_counts(
    gate_width: f64,
    counts: &[u64],
) -> Result<GateStatistics, EstimatorError> {
    if counts.len() < 2 {
        return Err(EstimatorError::GateTooLong {
            gate_width,
            n_gates: counts.len(),
        });
    }
    let summary = summarize(counts);
    if summary.mean == 0.0 {
        return Err(EstimatorError::EmptyTrain);
    }
    let y_value = summary.variance / summary.mean - 1.0;
    let stderr = (1.0 + y_value) * (2.0 / (summary.n as f64 - 1.0)).sqrt();
    Ok(GateStatistics {
        gate_width,
        n_gates: summary.n,
        mean_count: summary.mean,
        variance: summary.variance,
        y_value,
        stderr: stderr.max(f64::MIN_POSITIVE),
        low_confidence: summary.n < LOW_CONFIDENCE_GATES,
    })
}

/// Per-width gate counts for one train; the shared workhorse of both modes.
fn counts_per_width(
    times: &[f64],
    window: Window,
    gate_widths: &[f64],
    mode: GateMode,
) -> Result<Vec<(f64, Vec<u64>)>, EstimatorError> {
    check_train(times, window)?;
    if gate_widths.is_empty() {
        return Ok(Vec::new());
    }
    if !gate_widths.iter().all(|w| w.is_finite() && *w > 0.0) {
        return Err(EstimatorError::InvalidInput(
            "gate widths must be positive and finite".into(),
        ));
    }
    let duration = window.duration();
    match mode {
        GateMode::NonOverlapping => gate_widths
            .iter()
            .map(|&width| {
                let n_gates = complete_gates(duration, width);
                if n_gates < 2 {
                    return Err(EstimatorError::GateTooLong {
                        gate_width: width,
                        n_gates,
                    });
                }
                Ok((width, gate_counts(times, window.start, width, n_gates)))
            })
            .collect(),
        GateMode::Bunching => {
            let base = gate_widths.iter().cloned().fold(f64::INFINITY, f64::min);
            let n_cells = complete_gates(duration, base);
            if n_cells < 2 {
                return Err(EstimatorError::GateTooLong {
                    gate_width: base,
                    n_gates: n_cells,
                });
            }
            let cells = gate_counts(times, window.start, base, n_cells);
            gate_widths
                .iter()
                .map(|&width| {
                    let cells_per_gate = ((width / base).round() as usize).max(1);
                    let snapped = cells_per_gate as f64 * base;
                    let n_gates = cells.len() / cells_per_gate;
                    if n_gates < 2 {
                        return Err(EstimatorError::GateTooLong {
                            gate_width: snapped,
                            n_gates,
                        });
                    }
                    let grouped: Vec<u64> = cells
                        .chunks_exact(cells_per_gate)
                        .map(|chunk| chunk.iter().sum())
                        .collect();
                    Ok((snapped, grouped))
                })
                .collect()
        }
    }
}

/// Empirical variance-to-mean statistics of one detection train over an
/// explicit analysis window, one entry per requested gate width.
///
/// The train must be sorted and contained in the window. Widths yielding
/// fewer than two complete gates fail with
/// [`EstimatorError::GateTooLong`]; widths backed by fewer than
/// [`LOW_CONFIDENCE_GATES`] gates are flagged, not rejected.
pub fn feynman_from_train(
    times: &[f64],
    window: Window,
    gate_widths: &[f64],
    mode: GateMode,
) -> Result<Vec<GateStatistics>, EstimatorError> {
    counts_per_width(times, window, gate_widths, mode)?
        .into_iter()
        .map(|(width, counts)| statistics_from_counts(width, &counts))
        .collect()
}

/// Pooled variance-to-mean statistics over several independent trains, each
/// with its own observation window.
///
/// Gate counts are pooled across trains (each train is partitioned within
/// its own window, so no gate straddles two trains). With
/// [`REPLICA_SPREAD_MIN`] or more trains the standard error is estimated
/// from the train-to-train spread of `Y`; otherwise the asymptotic formula
/// on the pooled gate count applies.
pub fn feynman_from_trains(
    trains: &[(&[f64], Window)],
    gate_widths: &[f64],
    mode: GateMode,
) -> Result<Vec<GateStatistics>, EstimatorError> {
    if trains.is_empty() {
        return Err(EstimatorError::EmptyTrain);
    }
    // Per train, per width: the gate counts.
    let mut per_replica: Vec<Vec<(f64, Vec<u64>)>> = Vec::with_capacity(trains.len());
    for (times, window) in trains {
        per_replica.push(counts_per_width(times, *window, gate_widths, mode)?);
    }
    let n_widths = per_replica[0].len();
    let mut out = Vec::with_capacity(n_widths);
    for width_idx in 0..n_widths {
        let width = per_replica[0][width_idx].0;
        let mut pooled: Vec<u64> = Vec::new();
        let mut replica_y = Vec::with_capacity(per_replica.len());
        for replica in &per_replica {
            let counts = &replica[width_idx].1;
            pooled.extend_from_slice(counts);
            if counts.len() >= 2 {
                let s = summarize(counts);
                if s.mean > 0.0 {
                    replica_y.push(s.variance / s.mean - 1.0);
                }
            }
        }
        let mut stats = statistics_from_counts(width, &pooled)?;
        if replica_y.len() >= REPLICA_SPREAD_MIN {
            let r = replica_y.len() as f64;
            let mean_y = replica_y.iter().sum::<f64>() / r;
            let var_y = replica_y
                .iter()
                .map(|y| (y - mean_y) * (y - mean_y))
                .sum::<f64>()
                / (r - 1.0);
            let spread = (var_y / r).sqrt();
            if spread > 0.0 {
                stats.stderr = spread;
            }
        }
        out.push(stats);
    }
    Ok(out)
}

/// Pooled variance-to-mean statistics over an ensemble of replicas; see
/// [`feynman_from_trains`] for the pooling and standard-error rules.
pub fn feynman_from_records(
    records: &[DetectionRecord],
    gate_widths: &[f64],
    mode: GateMode,
) -> Result<Vec<GateStatistics>, EstimatorError> {
    let trains: Vec<(&[f64], Window)> = records
        .iter()
        .map(|record| {
            (
                record.detection_times.as_slice(),
                Window {
                    start: 0.0,
                    end: record.t_record,
                },
            )
        })
        .collect();
    feynman_from_trains(&trains, gate_widths, mode)
}

/// Which region the interrogating source feeds in the balance equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetupKind {
    /// Self-interrogation: the source neutron is credited to region 1.
    Ddsi,
    /// Die-away interrogation: the source neutron is credited to region 2.
    Ddaa,
}

/// Tally table ready for intensity inversion: event counts (raw integers or
/// per-source-neutron fractions — the inversion is scale-free) plus the
/// time-integrated populations in the same normalization. Field names match
/// [`TallyTable`] so exported simulator tallies and externally produced
/// tables share one schema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TallyInput {
    pub n_source_neutrons: f64,
    #[serde(default)]
    pub n_fission_events_1: f64,
    #[serde(default)]
    pub n_fission_neutrons_1: f64,
    #[serde(default)]
    pub n_fission_events_2: f64,
    #[serde(default)]
    pub n_fission_neutrons_2: f64,
    #[serde(default)]
    pub n_capture_1: f64,
    #[serde(default)]
    pub n_capture_2: f64,
    #[serde(default)]
    pub n_transfer_1to2: f64,
    #[serde(default)]
    pub n_transfer_2to1: f64,
    #[serde(default)]
    pub n_detected: f64,
    #[serde(default)]
    pub n_lost: f64,
    /// `∫N₁ dt` in the same normalization as the counts.
    pub exposure_n1: f64,
    /// `∫N₂ dt` in the same normalization as the counts.
    pub exposure_n2: f64,
}

impl TallyInput {
    /// Pool an ensemble's tallies and exposures into one inversion input.
    pub fn from_records(records: &[DetectionRecord]) -> Self {
        let total = crate::simulator::pooled_tallies(records);
        let exposure_n1 = records.iter().map(|r| r.exposure_n1).sum();
        let exposure_n2 = records.iter().map(|r| r.exposure_n2).sum();
        TallyInput {
            n_source_neutrons: total.n_source_neutrons as f64,
            n_fission_events_1: total.n_fission_events_1 as f64,
            n_fission_neutrons_1: total.n_fission_neutrons_1 as f64,
            n_fission_events_2: total.n_fission_events_2 as f64,
            n_fission_neutrons_2: total.n_fission_neutrons_2 as f64,
            n_capture_1: total.n_capture_1 as f64,
            n_capture_2: total.n_capture_2 as f64,
            n_transfer_1to2: total.n_transfer_1to2 as f64,
            n_transfer_2to1: total.n_transfer_2to1 as f64,
            n_detected: total.n_detected as f64,
            n_lost: total.n_lost as f64,
            exposure_n1,
            exposure_n2,
        }
    }

    /// Balance residuals per source neutron for the given source placement:
    /// (inflow − outflow) for regions 1 and 2. Population drift over the
    /// window is not represented, so stationary data leave small residuals
    /// and only genuine inconsistency produces large ones.
    pub fn balance_residuals(&self, setup: SetupKind) -> (f64, f64) {
        let s = self.n_source_neutrons;
        let (src1, src2) = match setup {
            SetupKind::Ddsi => (1.0, 0.0),
            SetupKind::Ddaa => (0.0, 1.0),
        };
        let res1 = src1 + (self.n_fission_neutrons_1 + self.n_transfer_2to1) / s
            - (self.n_capture_1 + self.n_fission_events_1 + self.n_transfer_1to2
                + self.n_detected)
                / s;
        let res2 = src2 + (self.n_fission_neutrons_2 + self.n_transfer_1to2) / s
            - (self.n_capture_2 + self.n_fission_events_2 + self.n_transfer_2to1
                + self.n_lost)
                / s;
        (res1, res2)
    }
}

/// A measured value with its one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Poisson propagation `√count / exposure`; meaningful when the table
    /// holds raw counts, conventional otherwise.
    pub stderr: f64,
}

/// Reaction intensities recovered from a tally table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntensityEstimate {
    /// Total region-1 intensity λ₁ (capture + fission + transfer + detection).
    pub lambda_1: Estimate,
    /// Total region-2 intensity λ₂, with leakage folded into capture.
    pub lambda_2: Estimate,
    pub lambda_fission_1: Estimate,
    pub lambda_fission_2: Estimate,
    pub lambda_capture_1: Estimate,
    /// Region-2 capture including leakage (the model has no leak channel).
    pub lambda_capture_2: Estimate,
    pub lambda_transfer_1to2: Estimate,
    pub lambda_transfer_2to1: Estimate,
    pub lambda_detect: Estimate,
    /// Net region-1→2 flow per source neutron, `(n_{1→2} − n_{2→1})/s`.
    pub net_transfer_per_source: f64,
    /// Balance residuals that were checked before inversion.
    pub balance_residual_1: f64,
    pub balance_residual_2: f64,
}

fn rate_estimate(count: f64, exposure: f64) -> Estimate {
    Estimate {
        value: count / exposure,
        stderr: count.max(0.0).sqrt() / exposure,
    }
}

/// Invert a balanced tally table into per-neutron reaction intensities.
///
/// Every intensity is `count / ∫N dt` for its region. The table must pass
/// the per-source-neutron balance check for the stated source placement
/// within [`BALANCE_TOLERANCE`].
pub fn intensities_from_tallies(
    tallies: &TallyInput,
    setup: SetupKind,
) -> Result<IntensityEstimate, EstimatorError> {
    if !(tallies.n_source_neutrons > 0.0) {
        return Err(EstimatorError::InvalidInput(
            "tally table reports no source neutrons".into(),
        ));
    }
    if !(tallies.exposure_n1 > 0.0) || !(tallies.exposure_n2 > 0.0) {
        return Err(EstimatorError::InvalidInput(
            "time-integrated populations must be positive".into(),
        ));
    }
    let negatives = [
        tallies.n_fission_events_1,
        tallies.n_fission_neutrons_1,
        tallies.n_fission_events_2,
        tallies.n_fission_neutrons_2,
        tallies.n_capture_1,
        tallies.n_capture_2,
        tallies.n_transfer_1to2,
        tallies.n_transfer_2to1,
        tallies.n_detected,
        tallies.n_lost,
    ];
    if negatives.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(EstimatorError::InvalidInput(
            "tally counts must be finite and non-negative".into(),
        ));
    }
    let (residual_1, residual_2) = tallies.balance_residuals(setup);
    if residual_1.abs() > BALANCE_TOLERANCE || residual_2.abs() > BALANCE_TOLERANCE {
        return Err(EstimatorError::BalanceViolation {
            residual_1,
            residual_2,
            tolerance: BALANCE_TOLERANCE,
        });
    }
    let e1 = tallies.exposure_n1;
    let e2 = tallies.exposure_n2;
    let fission_1 = rate_estimate(tallies.n_fission_events_1, e1);
    let capture_1 = rate_estimate(tallies.n_capture_1, e1);
    let transfer_1to2 = rate_estimate(tallies.n_transfer_1to2, e1);
    let detect = rate_estimate(tallies.n_detected, e1);
    let fission_2 = rate_estimate(tallies.n_fission_events_2, e2);
    let capture_2 = rate_estimate(tallies.n_capture_2 + tallies.n_lost, e2);
    let transfer_2to1 = rate_estimate(tallies.n_transfer_2to1, e2);
    let sum_sq = |estimates: &[&Estimate]| -> f64 {
        estimates
            .iter()
            .map(|e| e.stderr * e.stderr)
            .sum::<f64>()
            .sqrt()
    };
    let lambda_1 = Estimate {
        value: capture_1.value + fission_1.value + transfer_1to2.value + detect.value,
        stderr: sum_sq(&[&capture_1, &fission_1, &transfer_1to2, &detect]),
    };
    let lambda_2 = Estimate {
        value: capture_2.value + fission_2.value + transfer_2to1.value,
        stderr: sum_sq(&[&capture_2, &fission_2, &transfer_2to1]),
    };
    Ok(IntensityEstimate {
        lambda_1,
        lambda_2,
        lambda_fission_1: fission_1,
        lambda_fission_2: fission_2,
        lambda_capture_1: capture_1,
        lambda_capture_2: capture_2,
        lambda_transfer_1to2: transfer_1to2,
        lambda_transfer_2to1: transfer_2to1,
        lambda_detect: detect,
        net_transfer_per_source: (tallies.n_transfer_1to2 - tallies.n_transfer_2to1)
            / tallies.n_source_neutrons,
        balance_residual_1: residual_1,
        balance_residual_2: residual_2,
    })
}

/// Effective multiplication ratio from recovered intensities:
/// `ν₁·λ₁f/(λ₁+λ₂)`. The caller supplies the mean fission multiplicity,
/// which tallies alone cannot resolve better than `n_fission_neutrons_1 /
/// n_fission_events_1`; the total intensities must be positive.
pub fn nu_eff_from_estimate(estimate: &IntensityEstimate, nu1: f64) -> f64 {
    nu1 * estimate.lambda_fission_1.value
        / (estimate.lambda_1.value + estimate.lambda_2.value)
}
