//! The shipped JSON fixtures must stay byte-identical to the preset
//! constructors, which are the single source of truth.
//!
//! Regenerate after editing `presets.rs`:
//!
//! ```text
//! cargo test -p twinpoint --test fixtures -- --ignored regenerate_fixtures
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use twinpoint::presets::{analytic_params, sim_params};
use twinpoint::{read_json, validate, write_json, ReferenceValues, Setup, SystemParams};

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn reference_values() -> BTreeMap<String, ReferenceValues> {
    // Tabulated decay constants and effective multiplication ratios for the
    // four bundled configurations, as printed in the source tables (loose
    // roundings; kept verbatim for the comparison report).
    let rows = [
        ("ddaa_500", 0.162, 0.6318, 1.3837),
        ("ddaa_10", 0.159, 0.5299, 1.4614),
        ("ddsi_500", 0.176, 0.9578, 2.0916),
        ("ddsi_10", 0.175, 0.8360, 2.1987),
    ];
    rows.into_iter()
        .map(|(stem, nu_eff, omega1, omega2)| {
            (
                stem.to_string(),
                ReferenceValues {
                    nu_eff,
                    omega1,
                    omega2,
                },
            )
        })
        .collect()
}

#[test]
#[ignore = "writes the fixture files; run explicitly after editing presets"]
fn regenerate_fixtures() {
    let dir = fixtures_dir();
    std::fs::create_dir_all(dir.join("sim")).unwrap();
    for setup in Setup::ALL {
        write_json(
            &dir.join(format!("{}.json", setup.stem())),
            &analytic_params(setup),
        )
        .unwrap();
        write_json(
            &dir.join("sim").join(format!("{}.json", setup.stem())),
            &sim_params(setup),
        )
        .unwrap();
    }
    write_json(&dir.join("reference_values.json"), &reference_values()).unwrap();
}

#[test]
fn analytic_fixtures_match_constructors_byte_for_byte() {
    for setup in Setup::ALL {
        let path = fixtures_dir().join(format!("{}.json", setup.stem()));
        let on_disk: SystemParams = read_json(&path).unwrap();
        assert_eq!(on_disk, analytic_params(setup), "{path:?} drifted");
        let body = std::fs::read_to_string(&path).unwrap();
        let canonical = serde_json::to_string_pretty(&analytic_params(setup)).unwrap() + "\n";
        assert_eq!(body, canonical, "{path:?} not canonically formatted");
    }
}

#[test]
fn sim_fixtures_match_constructors_byte_for_byte() {
    for setup in Setup::ALL {
        let path = fixtures_dir().join("sim").join(format!("{}.json", setup.stem()));
        let on_disk: SystemParams = read_json(&path).unwrap();
        assert_eq!(on_disk, sim_params(setup), "{path:?} drifted");
        let body = std::fs::read_to_string(&path).unwrap();
        let canonical = serde_json::to_string_pretty(&sim_params(setup)).unwrap() + "\n";
        assert_eq!(body, canonical, "{path:?} not canonically formatted");
    }
}

#[test]
fn all_fixture_configurations_validate() {
    for setup in Setup::ALL {
        for path in [
            fixtures_dir().join(format!("{}.json", setup.stem())),
            fixtures_dir().join("sim").join(format!("{}.json", setup.stem())),
        ] {
            let params: SystemParams = read_json(&path).unwrap();
            let report = validate(&params);
            assert!(
                report.violations.is_empty(),
                "{path:?}: {:?}",
                report.violations
            );
        }
    }
}

#[test]
fn reference_values_fixture_matches_the_tabulated_rows() {
    let path = fixtures_dir().join("reference_values.json");
    let on_disk: BTreeMap<String, ReferenceValues> = read_json(&path).unwrap();
    assert_eq!(on_disk, reference_values());
    let ddsi = &on_disk["ddsi_500"];
    assert_eq!(ddsi.nu_eff, 0.176);
    assert_eq!(ddsi.omega1, 0.9578);
    assert_eq!(ddsi.omega2, 2.0916);
}
