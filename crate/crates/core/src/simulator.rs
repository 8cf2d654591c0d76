//! Exact event-by-event simulation of the two-region branching process.
//!
//! The pair population `(N₁, N₂)` is a continuous-time Markov chain whose
//! mutually exclusive transitions and rates are
//!
//! | event            | rate       | effect                        |
//! |------------------|------------|-------------------------------|
//! | source emission  | `S₁`       | `N₁ += q`, `q ~ emission PMF` |
//! | capture (1)      | `λ₁ₐN₁`    | `N₁ -= 1`                     |
//! | fission (1)      | `λ₁f N₁`   | `N₁ += ν−1`, `ν ~ PMF 1`      |
//! | transfer 1→2     | `λ_T1 N₁`  | `N₁ -= 1`, `N₂ += 1`          |
//! | detection        | `λ_d N₁`   | `N₁ -= 1`, count recorded     |
//! | capture (2)      | `λ₂ₐN₂`    | `N₂ -= 1`                     |
//! | fission (2)      | `λ₂f N₂`   | `N₂ += ν−1`, `ν ~ PMF 2`      |
//! | transfer 2→1     | `λ_T2 N₂`  | `N₂ -= 1`, `N₁ += 1`          |
//!
//! The simulation is the exact competing-exponentials method: sample the
//! waiting time from the total rate, pick the event category in proportion
//! to its rate, apply it, repeat. No approximation (tau-leaping, time
//! discretization) is involved, so the produced detection trains follow the
//! same law as the process the closed-form theory describes — the
//! statistical oracle of the toolkit.
//!
//! Reproducibility: every replica owns stream `replica_index` of a
//! counter-based ChaCha12 generator seeded from the configured 64-bit seed
//! ([`GENERATOR_ID`] names this contract in exported metadata). Replicas are
//! embarrassingly parallel and results are ordered by index regardless of
//! scheduling.
//!
//! Every replica carries an audit [`TallyTable`]; conservation is exact in
//! integers: each neutron entering a region during the recording window is
//! accounted for by exactly one exit channel or by still being present at
//! the window's end (see [`DetectionRecord::balance_residuals`]).

use crate::model::{Pmf, SystemParams, PMF_MOMENT_TOLERANCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Identity of the reproducibility contract: generator family, sub-stream
/// scheme, and layout version. Recorded in exported metadata so trains can
/// be regenerated bit-for-bit by any build honoring the same contract.
pub const GENERATOR_ID: &str = "chacha12-stream-v1";

/// Default population cap.
pub const DEFAULT_MAX_POPULATION: u64 = 1_000_000;

/// Warmup horizon, in units of the slow time constant, that the default
/// settings allot for relaxing from the empty state to stationarity.
pub const DEFAULT_WARMUP_OMEGA1_MULTIPLES: f64 = 30.0;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    /// A channel with positive intensity has no distribution to sample from.
    #[error("{channel} has positive intensity but no PMF; the simulator does not invent distributions")]
    PmfMissing { channel: String },
    /// Combined population exceeded the safety cap — effective
    /// supercriticality or runaway parameters.
    #[error(
        "population cap exceeded on replica {replica_index}: N₁+N₂ = {population} at t = {time}"
    )]
    PopulationCapExceeded {
        replica_index: u32,
        time: f64,
        population: u64,
    },
}

/// One stochastic run of the recorded window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    SourceEmission,
    Capture1,
    Capture2,
    Fission1,
    Fission2,
    Transfer1to2,
    Transfer2to1,
    Detection,
}

/// Simulation controls around a parameter set that must carry explicit PMFs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub params: SystemParams,
    /// Relaxation time before recording starts; `None` selects the default
    /// `30/ω₁` (requires subcritical parameters).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_warmup: Option<f64>,
    /// Length of the recorded window.
    pub t_record: f64,
    /// Master seed; replica `i` uses generator stream `i`.
    pub seed: u64,
    /// Hard cap on `N₁+N₂`; breaching it is an error, never a truncation.
    #[serde(default = "default_max_population")]
    pub max_population: u64,
    #[serde(default = "default_replicas")]
    pub replicas: u32,
}

fn default_max_population() -> u64 {
    DEFAULT_MAX_POPULATION
}

fn default_replicas() -> u32 {
    1
}

impl SimConfig {
    /// Resolved warmup length: the explicit value, or `30/ω₁`.
    pub fn warmup(&self) -> Result<f64, SimError> {
        match self.t_warmup {
            Some(w) => Ok(w),
            None => {
                let omega1 = crate::analytic::omega_roots(&self.params)
                    .map_err(|e| {
                        SimError::InvalidConfig(format!(
                            "default warmup needs a relaxing system ({e}); set t_warmup explicitly"
                        ))
                    })?
                    .omega1;
                Ok(DEFAULT_WARMUP_OMEGA1_MULTIPLES / omega1)
            }
        }
    }

    fn check(&self) -> Result<(), SimError> {
        if let Some(w) = self.t_warmup {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(SimError::InvalidConfig(format!(
                    "t_warmup must be finite and ≥ 0, got {w}"
                )));
            }
        }
        if !(self.t_record > 0.0) || !self.t_record.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "t_record must be finite and > 0, got {}",
                self.t_record
            )));
        }
        if self.max_population == 0 {
            return Err(SimError::InvalidConfig("max_population must be > 0".into()));
        }
        if self.replicas == 0 {
            return Err(SimError::InvalidConfig("replicas must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Integer audit counters over one recording window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyTable {
    /// Source emission events.
    pub n_source_events: u64,
    /// Neutrons those emissions injected into region 1.
    pub n_source_neutrons: u64,
    pub n_fission_events_1: u64,
    pub n_fission_neutrons_1: u64,
    pub n_fission_events_2: u64,
    pub n_fission_neutrons_2: u64,
    pub n_capture_1: u64,
    pub n_capture_2: u64,
    pub n_transfer_1to2: u64,
    pub n_transfer_2to1: u64,
    pub n_detected: u64,
    /// Leakage out of the system. The two-region model has no leak channel,
    /// so simulator output always reports zero; the field exists so that
    /// externally produced tables (which do leak) share this schema.
    pub n_lost: u64,
}

impl TallyTable {
    pub fn n_fission_events(&self) -> u64 {
        self.n_fission_events_1 + self.n_fission_events_2
    }

    pub fn n_fission_neutrons(&self) -> u64 {
        self.n_fission_neutrons_1 + self.n_fission_neutrons_2
    }

    fn add(&mut self, other: &TallyTable) {
        self.n_source_events += other.n_source_events;
        self.n_source_neutrons += other.n_source_neutrons;
        self.n_fission_events_1 += other.n_fission_events_1;
        self.n_fission_neutrons_1 += other.n_fission_neutrons_1;
        self.n_fission_events_2 += other.n_fission_events_2;
        self.n_fission_neutrons_2 += other.n_fission_neutrons_2;
        self.n_capture_1 += other.n_capture_1;
        self.n_capture_2 += other.n_capture_2;
        self.n_transfer_1to2 += other.n_transfer_1to2;
        self.n_transfer_2to1 += other.n_transfer_2to1;
        self.n_detected += other.n_detected;
        self.n_lost += other.n_lost;
    }
}

/// Everything one replica produced over its recording window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub replica_index: u32,
    /// Length of the recording window the quantities below refer to.
    pub t_record: f64,
    /// Detection timestamps relative to the window start, ascending,
    /// all in `[0, t_record)`.
    pub detection_times: Vec<f64>,
    pub tallies: TallyTable,
    /// Populations the moment the window opened.
    pub initial_n1: u64,
    pub initial_n2: u64,
    /// Populations the moment it closed.
    pub final_n1: u64,
    pub final_n2: u64,
    /// Time-integrated populations over the window, `∫ N dt`.
    pub exposure_n1: f64,
    pub exposure_n2: f64,
}

impl DetectionRecord {
    /// Time-averaged region populations over the window.
    pub fn time_average_n1(&self) -> f64 {
        self.exposure_n1 / self.t_record
    }

    pub fn time_average_n2(&self) -> f64 {
        self.exposure_n2 / self.t_record
    }

    /// Exact integer conservation residuals, `(region 1, region 2)`. For
    /// every neutron the inflow side (initial presence, source emission,
    /// fission yield, transfer in) must balance the outflow side (capture,
    /// fission absorption, transfer out, detection, leakage, final
    /// presence); both residuals are identically zero for any correctly
    /// simulated replica.
    pub fn balance_residuals(&self) -> (i64, i64) {
        let t = &self.tallies;
        let in1 = self.initial_n1 + t.n_source_neutrons + t.n_fission_neutrons_1
            + t.n_transfer_2to1;
        let out1 = t.n_capture_1
            + t.n_fission_events_1
            + t.n_transfer_1to2
            + t.n_detected
            + self.final_n1;
        let in2 = self.initial_n2 + t.n_fission_neutrons_2 + t.n_transfer_1to2;
        let out2 = t.n_capture_2
            + t.n_fission_events_2
            + t.n_transfer_2to1
            + t.n_lost
            + self.final_n2;
        (in1 as i64 - out1 as i64, in2 as i64 - out2 as i64)
    }
}

/// Cumulative sampler for a small discrete distribution.
struct PmfSampler {
    support: Vec<u32>,
    cumulative: Vec<f64>,
}

impl PmfSampler {
    fn new(pmf: &Pmf, channel: &str) -> Result<Self, SimError> {
        let violations = pmf.structural_violations(channel);
        if !violations.is_empty() {
            return Err(SimError::InvalidConfig(violations.join("; ")));
        }
        let mut cumulative = Vec::with_capacity(pmf.0.len());
        let mut acc = 0.0;
        for &(_, w) in &pmf.0 {
            acc += w;
            cumulative.push(acc);
        }
        Ok(PmfSampler {
            support: pmf.0.iter().map(|&(k, _)| k).collect(),
            cumulative,
        })
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> u32 {
        let u: f64 = rng.gen();
        for (i, &c) in self.cumulative.iter().enumerate() {
            if u < c {
                return self.support[i];
            }
        }
        *self.support.last().expect("PMF support is non-empty")
    }
}

/// Event rates and samplers, frozen for a run.
struct Engine {
    source_rate: f64,
    capture_1: f64,
    fission_1: f64,
    transfer_1to2: f64,
    detection: f64,
    capture_2: f64,
    fission_2: f64,
    transfer_2to1: f64,
    emission: Option<PmfSampler>,
    fission_pmf_1: Option<PmfSampler>,
    fission_pmf_2: Option<PmfSampler>,
}

impl Engine {
    /// Build samplers, demanding a PMF (with moments matching the declared
    /// factorial moments) for every channel that can fire.
    fn new(params: &SystemParams, source_on: bool) -> Result<Self, SimError> {
        let source_rate = if source_on { params.source.strength } else { 0.0 };
        let emission = if source_rate > 0.0 {
            let pmf = params.source.emission_pmf.as_ref().ok_or_else(|| {
                SimError::PmfMissing {
                    channel: "source emission".into(),
                }
            })?;
            check_moments(
                pmf,
                "source emission",
                params.source.emission_nu1,
                params.source.emission_nu2,
            )?;
            Some(PmfSampler::new(pmf, "source emission")?)
        } else {
            None
        };
        let fission_pmf_1 = if params.region1.fission_intensity > 0.0 {
            let pmf = params.fission_pmf_1.as_ref().ok_or_else(|| SimError::PmfMissing {
                channel: "region-1 fission".into(),
            })?;
            check_moments(
                pmf,
                "region-1 fission",
                params.region1.induced_nu1,
                params.region1.induced_nu2,
            )?;
            Some(PmfSampler::new(pmf, "region-1 fission")?)
        } else {
            None
        };
        let fission_pmf_2 = if params.region2.fission_intensity > 0.0 {
            let pmf = params.fission_pmf_2.as_ref().ok_or_else(|| SimError::PmfMissing {
                channel: "region-2 fission".into(),
            })?;
            check_moments(
                pmf,
                "region-2 fission",
                params.region2.induced_nu1,
                params.region2.induced_nu2,
            )?;
            Some(PmfSampler::new(pmf, "region-2 fission")?)
        } else {
            None
        };
        Ok(Engine {
            source_rate,
            capture_1: params.region1.capture_intensity,
            fission_1: params.region1.fission_intensity,
            transfer_1to2: params.region1.transfer_out_intensity,
            detection: params.region1.detection_intensity,
            capture_2: params.region2.capture_intensity,
            fission_2: params.region2.fission_intensity,
            transfer_2to1: params.region2.transfer_out_intensity,
            emission,
            fission_pmf_1,
            fission_pmf_2,
        })
    }
}

fn check_moments(pmf: &Pmf, channel: &str, nu1: f64, nu2: f64) -> Result<(), SimError> {
    let m1 = pmf.factorial_moment_1();
    let m2 = pmf.factorial_moment_2();
    let bad1 = (m1 - nu1).abs() > PMF_MOMENT_TOLERANCE * nu1.abs().max(1.0);
    let bad2 = (m2 - nu2).abs() > PMF_MOMENT_TOLERANCE * nu2.abs().max(1.0);
    if bad1 || bad2 {
        return Err(SimError::InvalidConfig(format!(
            "{channel} PMF moments ({m1}, {m2}) disagree with declared ({nu1}, {nu2})"
        )));
    }
    Ok(())
}

/// Raw output of one window simulation.
struct WindowRun {
    detection_times: Vec<f64>,
    tallies: TallyTable,
    initial_n1: u64,
    initial_n2: u64,
    final_n1: u64,
    final_n2: u64,
    exposure_n1: f64,
    exposure_n2: f64,
}

/// Simulate from `t = −t_warmup` to `t = t_record`, tallying and recording
/// only inside `[0, t_record)`.
#[allow(clippy::too_many_arguments)]
fn simulate_window(
    engine: &Engine,
    rng: &mut ChaCha12Rng,
    t_warmup: f64,
    start_n1: u64,
    start_n2: u64,
    t_record: f64,
    max_population: u64,
    replica_index: u32,
) -> Result<WindowRun, SimError> {
    let mut t = -t_warmup;
    let mut n1 = start_n1;
    let mut n2 = start_n2;
    let mut initial: Option<(u64, u64)> = None;
    let mut tallies = TallyTable::default();
    let mut detection_times = Vec::new();
    let mut exposure_n1 = 0.0;
    let mut exposure_n2 = 0.0;

    loop {
        let rate_c1 = engine.capture_1 * n1 as f64;
        let rate_f1 = engine.fission_1 * n1 as f64;
        let rate_t1 = engine.transfer_1to2 * n1 as f64;
        let rate_d = engine.detection * n1 as f64;
        let rate_c2 = engine.capture_2 * n2 as f64;
        let rate_f2 = engine.fission_2 * n2 as f64;
        let rate_t2 = engine.transfer_2to1 * n2 as f64;
        let total = engine.source_rate
            + rate_c1
            + rate_f1
            + rate_t1
            + rate_d
            + rate_c2
            + rate_f2
            + rate_t2;

        let t_next = if total > 0.0 {
            let u: f64 = rng.gen();
            t - (1.0 - u).ln() / total
        } else {
            f64::INFINITY
        };

        // The population is constant on [t, t_next); capture the
        // window-opening state and the exposure contribution before
        // applying the event.
        if initial.is_none() && t_next >= 0.0 {
            initial = Some((n1, n2));
        }
        let lo = t.max(0.0);
        let hi = t_next.min(t_record);
        if hi > lo {
            exposure_n1 += n1 as f64 * (hi - lo);
            exposure_n2 += n2 as f64 * (hi - lo);
        }
        if t_next >= t_record {
            let (initial_n1, initial_n2) = initial.unwrap_or((start_n1, start_n2));
            return Ok(WindowRun {
                detection_times,
                tallies,
                initial_n1,
                initial_n2,
                final_n1: n1,
                final_n2: n2,
                exposure_n1,
                exposure_n2,
            });
        }
        t = t_next;
        let in_window = t >= 0.0;

        // Categorical event choice proportional to the rates; roundoff in
        // the running sum can only fall through to the last positive lane.
        let mut pick = rng.gen::<f64>() * total;
        let event = 'chosen: {
            for (kind, rate) in [
                (EventKind::SourceEmission, engine.source_rate),
                (EventKind::Capture1, rate_c1),
                (EventKind::Fission1, rate_f1),
                (EventKind::Transfer1to2, rate_t1),
                (EventKind::Detection, rate_d),
                (EventKind::Capture2, rate_c2),
                (EventKind::Fission2, rate_f2),
                (EventKind::Transfer2to1, rate_t2),
            ] {
                if rate > 0.0 {
                    pick -= rate;
                    if pick < 0.0 {
                        break 'chosen kind;
                    }
                }
            }
            // Fallthrough from accumulated roundoff: rightmost active lane.
            [
                (EventKind::Transfer2to1, rate_t2),
                (EventKind::Fission2, rate_f2),
                (EventKind::Capture2, rate_c2),
                (EventKind::Detection, rate_d),
                (EventKind::Transfer1to2, rate_t1),
                (EventKind::Fission1, rate_f1),
                (EventKind::Capture1, rate_c1),
                (EventKind::SourceEmission, engine.source_rate),
            ]
            .into_iter()
            .find(|&(_, rate)| rate > 0.0)
            .map(|(kind, _)| kind)
            .expect("total rate was positive")
        };

        match event {
            EventKind::SourceEmission => {
                let q = engine
                    .emission
                    .as_ref()
                    .expect("emission sampler exists while source is on")
                    .sample(rng) as u64;
                n1 += q;
                if in_window {
                    tallies.n_source_events += 1;
                    tallies.n_source_neutrons += q;
                }
            }
            EventKind::Capture1 => {
                n1 -= 1;
                if in_window {
                    tallies.n_capture_1 += 1;
                }
            }
            EventKind::Fission1 => {
                n1 -= 1;
                let nu = engine
                    .fission_pmf_1
                    .as_ref()
                    .expect("fission-1 sampler exists while its rate is positive")
                    .sample(rng) as u64;
                n1 += nu;
                if in_window {
                    tallies.n_fission_events_1 += 1;
                    tallies.n_fission_neutrons_1 += nu;
                }
            }
            EventKind::Transfer1to2 => {
                n1 -= 1;
                n2 += 1;
                if in_window {
                    tallies.n_transfer_1to2 += 1;
                }
            }
            EventKind::Detection => {
                n1 -= 1;
                if in_window {
                    tallies.n_detected += 1;
                    detection_times.push(t);
                }
            }
            EventKind::Capture2 => {
                n2 -= 1;
                if in_window {
                    tallies.n_capture_2 += 1;
                }
            }
            EventKind::Fission2 => {
                n2 -= 1;
                let nu = engine
                    .fission_pmf_2
                    .as_ref()
                    .expect("fission-2 sampler exists while its rate is positive")
                    .sample(rng) as u64;
                n2 += nu;
                if in_window {
                    tallies.n_fission_events_2 += 1;
                    tallies.n_fission_neutrons_2 += nu;
                }
            }
            EventKind::Transfer2to1 => {
                n2 -= 1;
                n1 += 1;
                if in_window {
                    tallies.n_transfer_2to1 += 1;
                }
            }
        }

        if n1 + n2 > max_population {
            return Err(SimError::PopulationCapExceeded {
                replica_index,
                time: t,
                population: n1 + n2,
            });
        }
    }
}

fn replica_rng(seed: u64, replica_index: u32) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(replica_index as u64);
    rng
}

/// Run one replica: warm up from the empty state, then record
/// `[0, t_record)`. Deterministic in `(config.seed, replica_index)`.
pub fn run_replica(config: &SimConfig, replica_index: u32) -> Result<DetectionRecord, SimError> {
    config.check()?;
    let engine = Engine::new(&config.params, true)?;
    let warmup = config.warmup()?;
    let mut rng = replica_rng(config.seed, replica_index);
    let run = simulate_window(
        &engine,
        &mut rng,
        warmup,
        0,
        0,
        config.t_record,
        config.max_population,
        replica_index,
    )?;
    Ok(DetectionRecord {
        replica_index,
        t_record: config.t_record,
        detection_times: run.detection_times,
        tallies: run.tallies,
        initial_n1: run.initial_n1,
        initial_n2: run.initial_n2,
        final_n1: run.final_n1,
        final_n2: run.final_n2,
        exposure_n1: run.exposure_n1,
        exposure_n2: run.exposure_n2,
    })
}

/// Run all replicas in parallel; the result vector is ordered by replica
/// index no matter how the work was scheduled. The first failing index
/// (lowest) determines the returned error.
pub fn run_ensemble(config: &SimConfig) -> Result<Vec<DetectionRecord>, SimError> {
    config.check()?;
    // Surface configuration problems before spawning work.
    Engine::new(&config.params, true)?;
    config.warmup()?;
    let results: Vec<Result<DetectionRecord, SimError>> = (0..config.replicas)
        .into_par_iter()
        .map(|index| run_replica(config, index))
        .collect();
    let mut records = Vec::with_capacity(results.len());
    for result in results {
        records.push(result?);
    }
    Ok(records)
}

/// Pool the tallies of an ensemble.
pub fn pooled_tallies(records: &[DetectionRecord]) -> TallyTable {
    let mut total = TallyTable::default();
    for record in records {
        total.add(&record.tallies);
    }
    total
}

/// Configuration of a die-away run: a prepared initial population decays
/// with the source off, and pooled detection counts are histogrammed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub params: SystemParams,
    /// Deterministic populations at `t = 0`.
    pub initial_n1: u64,
    pub initial_n2: u64,
    /// Histogram span `[0, t_max)` and resolution.
    pub t_max: f64,
    pub n_bins: usize,
    pub replicas: u32,
    pub seed: u64,
    #[serde(default = "default_max_population")]
    pub max_population: u64,
}

/// Pooled detection-time histogram of an ensemble of die-away runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayHistogram {
    pub t_max: f64,
    pub bin_width: f64,
    /// Pooled detection counts per bin.
    pub counts: Vec<u64>,
    pub replicas: u32,
    pub initial_n1: u64,
    pub initial_n2: u64,
}

/// One histogram bin converted to a rate estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayPoint {
    /// Bin midpoint.
    pub time: f64,
    /// Detections per unit time per replica.
    pub rate: f64,
    /// Poisson standard error of `rate`.
    pub stderr: f64,
}

impl DecayHistogram {
    /// Per-replica detection rate per bin with Poisson standard errors —
    /// the form the die-away fitter consumes.
    pub fn rate_points(&self) -> Vec<DecayPoint> {
        let norm = self.replicas as f64 * self.bin_width;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| DecayPoint {
                time: (i as f64 + 0.5) * self.bin_width,
                rate: c as f64 / norm,
                stderr: (c as f64).sqrt() / norm,
            })
            .collect()
    }
}

/// Simulate the die-away of a prepared population (source off) and pool the
/// detection-time histogram over replicas. Deterministic in `(seed, index)`
/// with the same stream contract as [`run_ensemble`].
pub fn decay_histogram(config: &DecayConfig) -> Result<DecayHistogram, SimError> {
    if !(config.t_max > 0.0) || !config.t_max.is_finite() {
        return Err(SimError::InvalidConfig(format!(
            "t_max must be finite and > 0, got {}",
            config.t_max
        )));
    }
    if config.n_bins == 0 {
        return Err(SimError::InvalidConfig("n_bins must be ≥ 1".into()));
    }
    if config.replicas == 0 {
        return Err(SimError::InvalidConfig("replicas must be ≥ 1".into()));
    }
    if config.max_population == 0 {
        return Err(SimError::InvalidConfig("max_population must be > 0".into()));
    }
    if config.initial_n1 + config.initial_n2 > config.max_population {
        return Err(SimError::InvalidConfig(
            "initial population exceeds max_population".into(),
        ));
    }
    let engine = Engine::new(&config.params, false)?;
    let bin_width = config.t_max / config.n_bins as f64;
    let histograms: Vec<Result<Vec<u64>, SimError>> = (0..config.replicas)
        .into_par_iter()
        .map(|index| {
            let mut rng = replica_rng(config.seed, index);
            let run = simulate_window(
                &engine,
                &mut rng,
                0.0,
                config.initial_n1,
                config.initial_n2,
                config.t_max,
                config.max_population,
                index,
            )?;
            let mut counts = vec![0u64; config.n_bins];
            for &time in &run.detection_times {
                let bin = ((time / bin_width) as usize).min(config.n_bins - 1);
                counts[bin] += 1;
            }
            Ok(counts)
        })
        .collect();
    let mut counts = vec![0u64; config.n_bins];
    for histogram in histograms {
        for (total, c) in counts.iter_mut().zip(histogram?) {
            *total += c;
        }
    }
    Ok(DecayHistogram {
        t_max: config.t_max,
        bin_width,
        counts,
        replicas: config.replicas,
        initial_n1: config.initial_n1,
        initial_n2: config.initial_n2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Region1Params, Region2Params, SourceParams};
    use crate::presets::{analytic_params, sim_params, Setup};

    fn quick_config(setup: Setup) -> SimConfig {
        SimConfig {
            params: sim_params(setup),
            t_warmup: None,
            t_record: 50.0,
            seed: 0xFEED_5EED,
            max_population: DEFAULT_MAX_POPULATION,
            replicas: 3,
        }
    }

    #[test]
    fn replicas_are_deterministic() {
        let config = quick_config(Setup::Ddsi500);
        let first = run_replica(&config, 1).unwrap();
        let second = run_replica(&config, 1).unwrap();
        assert_eq!(first, second);
        assert!(!first.detection_times.is_empty());
    }

    #[test]
    fn ensemble_matches_individual_replicas_and_is_ordered() {
        let config = quick_config(Setup::Ddsi500);
        let ensemble = run_ensemble(&config).unwrap();
        assert_eq!(ensemble.len(), 3);
        for (index, record) in ensemble.iter().enumerate() {
            assert_eq!(record.replica_index, index as u32);
            assert_eq!(record, &run_replica(&config, index as u32).unwrap());
        }
        // Distinct streams produce distinct histories.
        assert_ne!(ensemble[0].detection_times, ensemble[1].detection_times);
    }

    #[test]
    fn detection_times_sorted_within_window_and_counted() {
        for setup in [Setup::Ddsi500, Setup::Ddaa500] {
            let config = quick_config(setup);
            for record in run_ensemble(&config).unwrap() {
                assert_eq!(record.detection_times.len() as u64, record.tallies.n_detected);
                assert!(record
                    .detection_times
                    .windows(2)
                    .all(|pair| pair[0] <= pair[1]));
                assert!(record
                    .detection_times
                    .iter()
                    .all(|&t| (0.0..config.t_record).contains(&t)));
            }
        }
    }

    #[test]
    fn integer_balance_holds_exactly_everywhere() {
        for setup in Setup::ALL {
            let config = SimConfig {
                t_record: 200.0,
                ..quick_config(setup)
            };
            for record in run_ensemble(&config).unwrap() {
                assert_eq!(
                    record.balance_residuals(),
                    (0, 0),
                    "{setup:?} replica {}",
                    record.replica_index
                );
                assert_eq!(record.tallies.n_lost, 0);
            }
        }
    }

    #[test]
    fn missing_pmfs_are_refused() {
        // The analytic presets carry factorial moments only.
        let config = SimConfig {
            params: analytic_params(Setup::Ddsi500),
            ..quick_config(Setup::Ddsi500)
        };
        match run_replica(&config, 0) {
            Err(SimError::PmfMissing { channel }) => {
                assert!(channel.contains("source") || channel.contains("fission"))
            }
            other => panic!("expected PmfMissing, got {other:?}"),
        }
    }

    #[test]
    fn pmf_moment_mismatch_is_refused() {
        let mut params = sim_params(Setup::Ddsi500);
        params.region1.induced_nu1 = 2.0; // PMF no longer matches
        let config = SimConfig {
            params,
            ..quick_config(Setup::Ddsi500)
        };
        assert!(matches!(
            run_replica(&config, 0),
            Err(SimError::InvalidConfig(_))
        ));
    }

    #[test]
    fn population_cap_is_an_error() {
        let mut params = sim_params(Setup::Ddsi500);
        params.region1.fission_intensity = 10.0; // strongly supercritical
        let config = SimConfig {
            params,
            t_warmup: Some(0.0),
            t_record: 1e6,
            seed: 7,
            max_population: 2_000,
            replicas: 1,
        };
        match run_replica(&config, 0) {
            Err(SimError::PopulationCapExceeded { population, .. }) => {
                assert!(population > 2_000)
            }
            other => panic!("expected PopulationCapExceeded, got {other:?}"),
        }
    }

    #[test]
    fn config_invariants_are_checked() {
        let good = quick_config(Setup::Ddsi500);
        for (label, bad) in [
            (
                "t_record",
                SimConfig {
                    t_record: 0.0,
                    ..good.clone()
                },
            ),
            (
                "max_population",
                SimConfig {
                    max_population: 0,
                    ..good.clone()
                },
            ),
            (
                "replicas",
                SimConfig {
                    replicas: 0,
                    ..good.clone()
                },
            ),
            (
                "t_warmup",
                SimConfig {
                    t_warmup: Some(-1.0),
                    ..good.clone()
                },
            ),
        ] {
            assert!(
                matches!(run_ensemble(&bad), Err(SimError::InvalidConfig(_))),
                "{label} should be rejected"
            );
        }
    }

    #[test]
    fn absorbing_region_two_never_returns() {
        let mut params = sim_params(Setup::Ddsi500);
        params.region2.transfer_out_intensity = 0.0;
        let config = SimConfig {
            params,
            t_warmup: Some(0.0),
            ..quick_config(Setup::Ddsi500)
        };
        let record = run_replica(&config, 0).unwrap();
        assert_eq!(record.tallies.n_transfer_2to1, 0);
        assert!(record.tallies.n_transfer_1to2 > 0);
    }

    #[test]
    fn empty_system_without_source_produces_nothing() {
        let mut params = sim_params(Setup::Ddsi500);
        params.source.strength = 0.0;
        let config = SimConfig {
            params,
            t_warmup: Some(5.0),
            t_record: 10.0,
            seed: 1,
            max_population: 100,
            replicas: 1,
        };
        let record = run_replica(&config, 0).unwrap();
        assert_eq!(record.tallies, TallyTable::default());
        assert_eq!(record.detection_times.len(), 0);
        assert_eq!((record.initial_n1, record.initial_n2), (0, 0));
        assert_eq!((record.final_n1, record.final_n2), (0, 0));
        assert_eq!(record.exposure_n1, 0.0);
    }

    /// Pure pass-through: unit emissions, the only region-1 channel is
    /// detection, so detections form a Poisson process at the source rate.
    fn poisson_params(rate: f64) -> SystemParams {
        SystemParams {
            region1: Region1Params {
                capture_intensity: 0.0,
                fission_intensity: 0.0,
                transfer_out_intensity: 0.0,
                detection_intensity: 2.0,
                induced_nu1: 0.0,
                induced_nu2: 0.0,
            },
            region2: Region2Params {
                capture_intensity: 1.0,
                fission_intensity: 0.0,
                transfer_out_intensity: 0.0,
                induced_nu1: 0.0,
                induced_nu2: 0.0,
            },
            source: SourceParams {
                strength: rate,
                emission_nu1: 1.0,
                emission_nu2: 0.0,
                emission_pmf: Some(Pmf(vec![(1, 1.0)])),
            },
            fission_pmf_1: None,
            fission_pmf_2: None,
        }
    }

    #[test]
    fn pass_through_detections_are_poisson_like() {
        let rate = 5.0;
        let config = SimConfig {
            params: poisson_params(rate),
            t_warmup: Some(10.0),
            t_record: 2_000.0,
            seed: 99,
            max_population: 10_000,
            replicas: 1,
        };
        let record = run_replica(&config, 0).unwrap();
        let n = record.detection_times.len() as f64;
        let expected = rate * config.t_record;
        assert!(
            (n - expected).abs() < 4.0 * expected.sqrt(),
            "count {n} vs expected {expected}"
        );
        // Mean inter-arrival time ≈ 1/rate within four standard errors.
        let gaps: Vec<f64> = record.detection_times.windows(2).map(|w| w[1] - w[0]).collect();
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let se = (1.0 / rate) / (gaps.len() as f64).sqrt();
        assert!(
            (mean_gap - 1.0 / rate).abs() < 4.0 * se,
            "mean gap {mean_gap} vs {}",
            1.0 / rate
        );
    }

    #[test]
    fn exposures_are_time_averages() {
        let config = quick_config(Setup::Ddaa500);
        let record = run_replica(&config, 0).unwrap();
        assert!(record.exposure_n1 > 0.0);
        assert_eq!(
            record.time_average_n1(),
            record.exposure_n1 / config.t_record
        );
        // Sanity bound: the time average can never exceed the peak
        // population implied by the balance flows.
        assert!(record.time_average_n1() < DEFAULT_MAX_POPULATION as f64);
    }

    #[test]
    fn decay_histogram_counts_all_detections_and_decays() {
        let config = DecayConfig {
            params: sim_params(Setup::Ddsi500),
            initial_n1: 150,
            initial_n2: 90,
            t_max: 16.0,
            n_bins: 32,
            replicas: 64,
            seed: 4242,
            max_population: DEFAULT_MAX_POPULATION,
        };
        let histogram = decay_histogram(&config).unwrap();
        assert_eq!(histogram.counts.len(), 32);
        let total: u64 = histogram.counts.iter().sum();
        assert!(total > 1_000, "expected plenty of detections, got {total}");
        // Early bins must dominate late bins for a decaying population.
        let head: u64 = histogram.counts[..4].iter().sum();
        let tail: u64 = histogram.counts[28..].iter().sum();
        assert!(head > 10 * tail.max(1), "head {head} vs tail {tail}");
        let points = histogram.rate_points();
        assert_eq!(points.len(), 32);
        assert!(points[0].rate > points[31].rate);
        assert!((points[1].time - 1.5 * histogram.bin_width).abs() < 1e-12);
        // Determinism of the pooled histogram.
        assert_eq!(decay_histogram(&config).unwrap(), histogram);
    }

    #[test]
    fn decay_mode_ignores_the_source() {
        let mut config = DecayConfig {
            params: sim_params(Setup::Ddsi500),
            initial_n1: 0,
            initial_n2: 0,
            t_max: 10.0,
            n_bins: 5,
            replicas: 2,
            seed: 1,
            max_population: 1_000,
        };
        config.params.source.strength = 100.0; // must not matter
        let histogram = decay_histogram(&config).unwrap();
        assert!(histogram.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn decay_config_invariants_are_checked() {
        let good = DecayConfig {
            params: sim_params(Setup::Ddsi500),
            initial_n1: 10,
            initial_n2: 5,
            t_max: 4.0,
            n_bins: 8,
            replicas: 1,
            seed: 0,
            max_population: 100,
        };
        let cases = [
            DecayConfig { t_max: 0.0, ..good.clone() },
            DecayConfig { n_bins: 0, ..good.clone() },
            DecayConfig { replicas: 0, ..good.clone() },
            DecayConfig { initial_n1: 200, ..good.clone() },
        ];
        for bad in cases {
            assert!(matches!(
                decay_histogram(&bad),
                Err(SimError::InvalidConfig(_))
            ));
        }
        assert!(decay_histogram(&good).is_ok());
    }

    #[test]
    fn pooled_tallies_sum_components() {
        let config = quick_config(Setup::Ddsi500);
        let records = run_ensemble(&config).unwrap();
        let pooled = pooled_tallies(&records);
        let by_hand: u64 = records.iter().map(|r| r.tallies.n_detected).sum();
        assert_eq!(pooled.n_detected, by_hand);
        let fission_sum: u64 = records.iter().map(|r| r.tallies.n_fission_events_1).sum();
        assert_eq!(pooled.n_fission_events_1, fission_sum);
        assert_eq!(pooled.n_fission_events(), pooled.n_fission_events_1 + pooled.n_fission_events_2);
    }
}
