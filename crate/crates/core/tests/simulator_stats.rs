//! Statistical contracts of the exact event-driven simulator.
//!
//! Each test checks a distributional property with a fixed seed and a stated
//! significance level or standard-error band, so reruns are deterministic:
//!
//! - inter-arrival times in a pass-through configuration follow the
//!   exponential law (Kolmogorov–Smirnov, α = 0.01);
//! - competing channels split events in proportion to their configured
//!   intensities (conditional multinomial chi-square, α = 0.01);
//! - the default relaxation window is long enough that doubling it leaves
//!   the stationary population unchanged within one standard error;
//! - fission neutron production equals rate × integrated exposure.

mod support;

use support::{chi_square_pvalue, kolmogorov_pvalue, ks_statistic, mean_and_stderr};
use twinpoint::presets::{sim_params, Setup};
use twinpoint::simulator::{pooled_tallies, run_ensemble, SimConfig};
use twinpoint::model::{Pmf, Region1Params, Region2Params, SourceParams, SystemParams};

/// Degenerate system where every source neutron is born in region 1 and can
/// only be detected there: detections are a displaced Poisson process with
/// the source rate, so inter-arrival gaps are exponential with that rate.
fn pass_through_params(source_rate: f64) -> SystemParams {
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
            strength: source_rate,
            emission_nu1: 1.0,
            emission_nu2: 0.0,
            emission_pmf: Some(Pmf(vec![(1, 1.0)])),
        },
        fission_pmf_1: None,
        fission_pmf_2: None,
    }
}

#[test]
fn pass_through_interarrival_times_are_exponential() {
    let rate = 5.0;
    let config = SimConfig {
        params: pass_through_params(rate),
        t_warmup: Some(10.0),
        t_record: 2_000.0,
        seed: 424_242,
        max_population: 1_000_000,
        replicas: 1,
    };
    let record = &run_ensemble(&config).unwrap()[0];
    let times = &record.detection_times;
    assert!(times.len() > 8_000, "expected ~10k detections, got {}", times.len());

    let mut gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let d = ks_statistic(&gaps, |x| 1.0 - (-rate * x).exp());
    let p = kolmogorov_pvalue(d, gaps.len());
    assert!(
        p > 0.01,
        "KS test against Exp({rate}) rejected: D = {d:.5}, p = {p:.5}, n = {}",
        gaps.len()
    );
}

#[test]
fn event_channel_split_matches_configured_intensities() {
    let params = sim_params(Setup::Ddsi500);
    let config = SimConfig {
        params: params.clone(),
        t_warmup: None,
        t_record: 200.0,
        seed: 6_100,
        max_population: 1_000_000,
        replicas: 4,
    };
    let records = run_ensemble(&config).unwrap();
    let tallies = pooled_tallies(&records);

    // Within a region every live neutron races the same competing clocks, so
    // conditioned on the number of region events the channel labels are an
    // exact multinomial draw with probabilities ∝ configured intensities.
    let r1_counts = [
        tallies.n_capture_1,
        tallies.n_fission_events_1,
        tallies.n_transfer_1to2,
        tallies.n_detected,
    ];
    let r1_weights = [
        params.region1.capture_intensity,
        params.region1.fission_intensity,
        params.region1.transfer_out_intensity,
        params.region1.detection_intensity,
    ];
    let p1 = chi_square_pvalue(&r1_counts, &r1_weights);
    assert!(
        p1 > 0.01,
        "region-1 channel split rejected: p = {p1:.5}, counts = {r1_counts:?}"
    );

    let r2_counts = [tallies.n_capture_2, tallies.n_transfer_2to1];
    let r2_weights = [
        params.region2.capture_intensity,
        params.region2.transfer_out_intensity,
    ];
    let p2 = chi_square_pvalue(&r2_counts, &r2_weights);
    assert!(
        p2 > 0.01,
        "region-2 channel split rejected: p = {p2:.5}, counts = {r2_counts:?}"
    );
}

#[test]
fn default_warmup_is_long_enough_for_stationarity() {
    let params = sim_params(Setup::Ddsi500);
    let base = SimConfig {
        params,
        t_warmup: None, // resolves to 30/ω₁ ≈ 70 time units
        t_record: 120.0,
        seed: 7_001,
        max_population: 1_000_000,
        replicas: 32,
    };
    let mut doubled = base.clone();
    doubled.t_warmup = Some(2.0 * base.warmup().unwrap());
    doubled.seed = 7_002;

    let mean_n1 = |config: &SimConfig| {
        let records = run_ensemble(config).unwrap();
        let avgs: Vec<f64> = records.iter().map(|r| r.time_average_n1()).collect();
        mean_and_stderr(&avgs)
    };
    let (m_default, se_default) = mean_n1(&base);
    let (m_doubled, se_doubled) = mean_n1(&doubled);

    let diff = (m_default - m_doubled).abs();
    let combined_se = se_default.hypot(se_doubled);
    assert!(
        diff < combined_se,
        "population mean shifted when warmup doubled: {m_default:.3} vs {m_doubled:.3} \
         (|Δ| = {diff:.3}, combined SE = {combined_se:.3})"
    );
}

#[test]
fn fission_neutron_production_matches_rate_times_exposure() {
    let params = sim_params(Setup::Ddsi500);
    let nu1 = params.region1.induced_nu1;
    let lambda_f = params.region1.fission_intensity;
    let config = SimConfig {
        params,
        t_warmup: None,
        t_record: 150.0,
        seed: 6_200,
        max_population: 1_000_000,
        replicas: 12,
    };
    let records = run_ensemble(&config).unwrap();

    // Per replica, E[fission neutrons] = ν̄₁ λ_f ∫N₁ dt; the ratio to that
    // prediction should sit at 1 within its replica-to-replica spread.
    let ratios: Vec<f64> = records
        .iter()
        .map(|r| r.tallies.n_fission_neutrons_1 as f64 / (nu1 * lambda_f * r.exposure_n1))
        .collect();
    let (mean, se) = mean_and_stderr(&ratios);
    assert!(
        (mean - 1.0).abs() < 3.0 * se,
        "fission neutron yield off balance: mean ratio = {mean:.5} ± {se:.5}"
    );
}
