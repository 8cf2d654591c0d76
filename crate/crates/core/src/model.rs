//! Parameter model for the coupled two-region branching process.
//!
//! The system consists of two spatial regions exchanging neutrons. Region 1
//! holds the multiplying material and the detector; region 2 is a passive
//! reflector/moderator shell (it may also fission in the general model).
//! Each neutron in region 1 undergoes one of four competing exponential
//! transitions with the given per-neutron intensities:
//!
//! * capture (absorbed, no progeny),
//! * induced fission (absorbed, replaced by `ν` neutrons drawn from the
//!   region-1 fission multiplicity distribution),
//! * transfer to region 2,
//! * detection (absorbed and counted).
//!
//! Region 2 has capture, fission, and transfer back to region 1. A compound
//! Poisson source fires at rate `S₁` in region 1, each emission releasing a
//! random number of neutrons.
//!
//! The closed-form theory only needs the first two factorial moments of the
//! multiplicity distributions (`ν₁ = E[ν]`, `ν₂ = E[ν(ν−1)]`, and `r₁`, `r₂`
//! for the source), so explicit PMFs are optional here; the event-by-event
//! simulator refuses to run without them.
//!
//! All intensities are in arbitrary but mutually consistent inverse-time
//! units; no physical timescale is assumed.

use serde::{Deserialize, Serialize};
use std::path::Path;

/// Relative tolerance for "PMF moments must equal declared moments".
pub const PMF_MOMENT_TOLERANCE: f64 = 1e-12;

/// Errors arising while reading or writing configuration files.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Read(#[from] std::io::Error),
    #[error("failed to parse config: {0}")]
    Parse(#[from] serde_json::Error),
}

/// A discrete multiplicity distribution, stored as `(count, probability)`
/// pairs with strictly increasing counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pmf(pub Vec<(u32, f64)>);

impl Pmf {
    /// First factorial moment `E[n]`.
    pub fn factorial_moment_1(&self) -> f64 {
        self.0.iter().map(|&(k, p)| f64::from(k) * p).sum()
    }

    /// Second factorial moment `E[n(n−1)]`.
    pub fn factorial_moment_2(&self) -> f64 {
        self.0
            .iter()
            .map(|&(k, p)| f64::from(k) * f64::from(k.saturating_sub(1)) * p)
            .sum()
    }

    /// Structural problems (not moment mismatches): negative probabilities,
    /// unsorted or duplicate support points, or sum away from one.
    pub fn structural_violations(&self, label: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.0.is_empty() {
            out.push(format!("{label}: PMF is empty"));
            return out;
        }
        for &(k, p) in &self.0 {
            if !(p >= 0.0) || !p.is_finite() {
                out.push(format!("{label}: probability of {k} is {p}, must be ≥ 0"));
            }
        }
        for w in self.0.windows(2) {
            if w[1].0 <= w[0].0 {
                out.push(format!(
                    "{label}: support must be strictly increasing ({} after {})",
                    w[1].0, w[0].0
                ));
            }
        }
        let total: f64 = self.0.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            out.push(format!("{label}: probabilities sum to {total}, must be 1"));
        }
        out
    }
}

/// Per-neutron reaction intensities and fission multiplicity moments for
/// region 1 (the multiplying, detected region).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region1Params {
    /// Capture intensity λ₁ₐ.
    pub capture_intensity: f64,
    /// Induced-fission intensity λ₁f.
    pub fission_intensity: f64,
    /// Transfer intensity λ_T1 (region 1 → region 2, per neutron in 1).
    pub transfer_out_intensity: f64,
    /// Detection intensity λ_d. Detection is destructive: the neutron is
    /// removed and the count incremented.
    pub detection_intensity: f64,
    /// First factorial moment ν₁¹ = E[ν] of the fission multiplicity.
    pub induced_nu1: f64,
    /// Second factorial moment ν₂¹ = E[ν(ν−1)].
    pub induced_nu2: f64,
}

impl Region1Params {
    /// Total transition intensity λ₁ = λ₁ₐ + λ₁f + λ_T1 + λ_d.
    pub fn total(&self) -> f64 {
        self.capture_intensity
            + self.fission_intensity
            + self.transfer_out_intensity
            + self.detection_intensity
    }
}

/// Per-neutron reaction intensities and fission moments for region 2
/// (no detection channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region2Params {
    /// Capture intensity λ₂ₐ.
    pub capture_intensity: f64,
    /// Induced-fission intensity λ₂f.
    pub fission_intensity: f64,
    /// Transfer intensity λ_T2 (region 2 → region 1, per neutron in 2).
    pub transfer_out_intensity: f64,
    /// First factorial moment ν₁² of the region-2 fission multiplicity.
    pub induced_nu1: f64,
    /// Second factorial moment ν₂².
    pub induced_nu2: f64,
}

impl Region2Params {
    /// Total transition intensity λ₂ = λ₂ₐ + λ₂f + λ_T2.
    pub fn total(&self) -> f64 {
        self.capture_intensity + self.fission_intensity + self.transfer_out_intensity
    }
}

/// Compound Poisson source: emission events at rate `strength`, each
/// releasing a random number of neutrons into region 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    /// Emission-event rate S₁ (events per unit time).
    pub strength: f64,
    /// First factorial moment r₁ = E[n] of the emission multiplicity.
    pub emission_nu1: f64,
    /// Second factorial moment r₂ = E[n(n−1)].
    pub emission_nu2: f64,
    /// Explicit emission multiplicity distribution (simulator only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission_pmf: Option<Pmf>,
}

/// Complete description of a two-region system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub region1: Region1Params,
    pub region2: Region2Params,
    pub source: SourceParams,
    /// Explicit region-1 fission multiplicity distribution (simulator only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fission_pmf_1: Option<Pmf>,
    /// Explicit region-2 fission multiplicity distribution (simulator only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fission_pmf_2: Option<Pmf>,
}

/// Total transition intensities `(λ₁, λ₂)` of the two regions.
pub fn total_intensities(params: &SystemParams) -> (f64, f64) {
    (params.region1.total(), params.region2.total())
}

impl SystemParams {
    /// Net removal rate of region 1, `a₁ = λ₁ − ν₁¹λ₁f`: the per-neutron loss
    /// intensity after crediting the mean fission yield back.
    pub fn net_removal_1(&self) -> f64 {
        self.region1.total() - self.region1.induced_nu1 * self.region1.fission_intensity
    }

    /// Net removal rate of region 2, `a₂ = λ₂ − ν₁²λ₂f`.
    pub fn net_removal_2(&self) -> f64 {
        self.region2.total() - self.region2.induced_nu1 * self.region2.fission_intensity
    }

    /// Sum of the decay roots, `ω₁ + ω₂ = a₁ + a₂`.
    pub fn root_sum(&self) -> f64 {
        self.net_removal_1() + self.net_removal_2()
    }

    /// Product of the decay roots, `ω₁·ω₂ = a₁a₂ − λ_T1λ_T2`. Positive iff the
    /// coupled system is subcritical.
    pub fn root_product(&self) -> f64 {
        self.net_removal_1() * self.net_removal_2()
            - self.region1.transfer_out_intensity * self.region2.transfer_out_intensity
    }

    /// Parse from a JSON string. Unknown keys are an error.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Read a configuration file.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Canonical serialized form: pretty-printed JSON with a trailing
    /// newline. Parsing and re-serializing a canonical-form file is
    /// byte-identical.
    pub fn canonical_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("params are serializable");
        text.push('\n');
        text
    }
}

/// Outcome of [`validate`]: the list of violated invariants plus the
/// subcriticality figures. Callers decide severity; nothing here panics.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// Human-readable description of each violated invariant; empty when the
    /// configuration is valid.
    pub violations: Vec<String>,
    /// ω₁ + ω₂ = a₁ + a₂ (must be > 0).
    pub root_sum: f64,
    /// ω₁·ω₂ = a₁a₂ − λ_T1λ_T2 (must be > 0).
    pub root_product: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every model invariant and report all violations.
///
/// Checked: non-negativity of every intensity and moment, positive totals,
/// source moment consistency, PMF structure and moment agreement (to
/// [`PMF_MOMENT_TOLERANCE`] relative), and subcriticality of the coupled
/// system (both decay roots strictly positive, i.e. `root_sum > 0` and
/// `root_product > 0`).
pub fn validate(params: &SystemParams) -> ValidationReport {
    let mut violations = Vec::new();
    let mut require_nonneg = |name: &str, value: f64| {
        if !(value >= 0.0) || !value.is_finite() {
            violations.push(format!("{name} = {value}, must be ≥ 0 and finite"));
        }
    };

    let r1 = &params.region1;
    require_nonneg("region1.capture_intensity", r1.capture_intensity);
    require_nonneg("region1.fission_intensity", r1.fission_intensity);
    require_nonneg("region1.transfer_out_intensity", r1.transfer_out_intensity);
    require_nonneg("region1.detection_intensity", r1.detection_intensity);
    require_nonneg("region1.induced_nu1", r1.induced_nu1);
    require_nonneg("region1.induced_nu2", r1.induced_nu2);

    let r2 = &params.region2;
    require_nonneg("region2.capture_intensity", r2.capture_intensity);
    require_nonneg("region2.fission_intensity", r2.fission_intensity);
    require_nonneg("region2.transfer_out_intensity", r2.transfer_out_intensity);
    require_nonneg("region2.induced_nu1", r2.induced_nu1);
    require_nonneg("region2.induced_nu2", r2.induced_nu2);

    let src = &params.source;
    require_nonneg("source.strength", src.strength);
    require_nonneg("source.emission_nu1", src.emission_nu1);
    require_nonneg("source.emission_nu2", src.emission_nu2);

    if params.region1.total() <= 0.0 {
        violations.push(format!(
            "total region-1 intensity λ₁ = {} must be > 0",
            params.region1.total()
        ));
    }
    if params.region2.total() <= 0.0 {
        violations.push(format!(
            "total region-2 intensity λ₂ = {} must be > 0",
            params.region2.total()
        ));
    }
    if params.source.strength > 0.0 && params.source.emission_nu1 <= 0.0 {
        violations.push("source.emission_nu1 must be > 0 when the source is on".to_string());
    }

    check_pmf(
        &mut violations,
        "fission_pmf_1",
        params.fission_pmf_1.as_ref(),
        params.region1.induced_nu1,
        params.region1.induced_nu2,
    );
    check_pmf(
        &mut violations,
        "fission_pmf_2",
        params.fission_pmf_2.as_ref(),
        params.region2.induced_nu1,
        params.region2.induced_nu2,
    );
    check_pmf(
        &mut violations,
        "source.emission_pmf",
        params.source.emission_pmf.as_ref(),
        params.source.emission_nu1,
        params.source.emission_nu2,
    );

    let root_sum = params.root_sum();
    let root_product = params.root_product();
    if !(root_sum > 0.0) {
        violations.push(format!(
            "supercritical: root sum a₁+a₂ = {root_sum} must be > 0"
        ));
    }
    if !(root_product > 0.0) {
        violations.push(format!(
            "supercritical: root product a₁a₂ − λ_T1λ_T2 = {root_product} must be > 0"
        ));
    }

    ValidationReport {
        violations,
        root_sum,
        root_product,
    }
}

fn check_pmf(
    violations: &mut Vec<String>,
    label: &str,
    pmf: Option<&Pmf>,
    declared_nu1: f64,
    declared_nu2: f64,
) {
    let Some(pmf) = pmf else { return };
    let structural = pmf.structural_violations(label);
    let was_structural = !structural.is_empty();
    violations.extend(structural);
    if was_structural {
        return;
    }
    let m1 = pmf.factorial_moment_1();
    let m2 = pmf.factorial_moment_2();
    let rel = |got: f64, want: f64| (got - want).abs() / want.abs().max(1.0);
    if rel(m1, declared_nu1) > PMF_MOMENT_TOLERANCE {
        violations.push(format!(
            "{label}: first factorial moment {m1} does not match declared {declared_nu1}"
        ));
    }
    if rel(m2, declared_nu2) > PMF_MOMENT_TOLERANCE {
        violations.push(format!(
            "{label}: second factorial moment {m2} does not match declared {declared_nu2}"
        ));
    }
}

/// Least-squares projection of a factorial-moment pair onto the set of
/// moment pairs achievable by a PMF on `support`.
///
/// The achievable set is the convex hull of the points `(k, k(k−1))`, which
/// all lie on a convex parabola, so the hull's vertices are exactly the
/// support points in increasing order. The projection of `(nu1, nu2)` is
/// found exactly: if the target is inside the hull, an exact three-point
/// representation is returned (first feasible support triple in
/// lexicographic order, so the result is deterministic); otherwise the
/// closest point over all edges and vertices is returned, which is a one- or
/// two-point PMF.
///
/// Degenerate targets (e.g. the moment pair of a deterministic multiplicity)
/// fall out naturally as one-point PMFs.
pub fn fit_pmf_to_moments(support: &[u32], nu1: f64, nu2: f64) -> Option<Pmf> {
    if support.is_empty() {
        return None;
    }
    let mut pts: Vec<u32> = support.to_vec();
    pts.sort_unstable();
    pts.dedup();
    let coords = |k: u32| -> (f64, f64) {
        let kf = f64::from(k);
        (kf, kf * (kf - 1.0))
    };

    // Exact interior representation when achievable.
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            for l in (j + 1)..pts.len() {
                if let Some(pmf) = exact_three_point(pts[i], pts[j], pts[l], nu1, nu2) {
                    return Some(pmf);
                }
            }
        }
    }

    // Otherwise project onto the hull boundary: all edges between
    // consecutive vertices plus the closing top edge, and all vertices.
    let mut best: Option<(f64, Pmf)> = None;
    let mut consider = |dist2: f64, pmf: Pmf| {
        if best.as_ref().is_none_or(|(d, _)| dist2 < *d) {
            best = Some((dist2, pmf));
        }
    };
    for (idx, &k) in pts.iter().enumerate() {
        let (m1, m2) = coords(k);
        consider(
            (m1 - nu1).powi(2) + (m2 - nu2).powi(2),
            Pmf(vec![(k, 1.0)]),
        );
        for &k2 in pts.iter().skip(idx + 1) {
            let (a1, a2) = coords(k);
            let (b1, b2) = coords(k2);
            let (e1, e2) = (b1 - a1, b2 - a2);
            let t = ((nu1 - a1) * e1 + (nu2 - a2) * e2) / (e1 * e1 + e2 * e2);
            let t = t.clamp(0.0, 1.0);
            let (p1, p2) = (a1 + t * e1, a2 + t * e2);
            let dist2 = (p1 - nu1).powi(2) + (p2 - nu2).powi(2);
            let pmf = if t == 0.0 {
                Pmf(vec![(k, 1.0)])
            } else if t == 1.0 {
                Pmf(vec![(k2, 1.0)])
            } else {
                Pmf(vec![(k, 1.0 - t), (k2, t)])
            };
            consider(dist2, pmf);
        }
    }
    best.map(|(_, pmf)| pmf)
}

/// Solve the 3×3 system for an exact PMF on `{a, b, c}` matching the moment
/// pair; `None` unless all three probabilities are ≥ 0.
fn exact_three_point(a: u32, b: u32, c: u32, nu1: f64, nu2: f64) -> Option<Pmf> {
    use nalgebra::{Matrix3, Vector3};
    let row = |k: u32| (f64::from(k), f64::from(k) * (f64::from(k) - 1.0));
    let (a1, a2) = row(a);
    let (b1, b2) = row(b);
    let (c1, c2) = row(c);
    let m = Matrix3::new(1.0, 1.0, 1.0, a1, b1, c1, a2, b2, c2);
    let rhs = Vector3::new(1.0, nu1, nu2);
    let p = m.lu().solve(&rhs)?;
    if p.iter().all(|&x| x >= 0.0) {
        // Double-check the solve is exact, not a least-squares artifact.
        let m1 = a1 * p[0] + b1 * p[1] + c1 * p[2];
        let m2 = a2 * p[0] + b2 * p[1] + c2 * p[2];
        if (m1 - nu1).abs() <= 1e-9 * nu1.abs().max(1.0)
            && (m2 - nu2).abs() <= 1e-9 * nu2.abs().max(1.0)
        {
            let entries: Vec<(u32, f64)> = [(a, p[0]), (b, p[1]), (c, p[2])]
                .into_iter()
                .filter(|&(_, p)| p > 0.0)
                .collect();
            return Some(Pmf(entries));
        }
    }
    None
}
