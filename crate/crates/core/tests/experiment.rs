use std::collections::BTreeMap;
use std::fs;

use pcm_selector::experiment::{
    run_monte_carlo, summarize, summarize_estimates, write_estimates, write_outputs, write_summary, ExperimentConfig,
};
use pcm_selector::methods::Method;
use pcm_selector::scm::Setting;
use proptest::prelude::*;
use tempfile::TempDir;

fn small(setting: Setting, replications: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig::study(setting, 15, replications, seed)
}

#[test]
fn summary_round_trips_through_estimates() {
    let dir = TempDir::new().unwrap();
    let config = small(Setting::A, 40, 9);
    let result = run_monte_carlo(&config, 2).unwrap();
    write_outputs(dir.path(), &config, &result).unwrap();
    let params: BTreeMap<String, String> =
        result.summary.iter().map(|r| (r.method.name().to_string(), r.params.clone())).collect();
    let estimates = fs::File::open(dir.path().join("estimates.csv")).unwrap();
    let rows = summarize_estimates(estimates, result.tau, &params).unwrap();
    let mut rebuilt = Vec::new();
    write_summary(&mut rebuilt, &rows).unwrap();
    assert_eq!(rebuilt, fs::read(dir.path().join("summary.csv")).unwrap());
}

#[test]
fn worker_count_does_not_change_results() {
    let config = small(Setting::B, 30, 4);
    let bytes = |workers| {
        let mut out = Vec::new();
        write_estimates(&mut out, &run_monte_carlo(&config, workers).unwrap()).unwrap();
        out
    };
    let one = bytes(1);
    assert_eq!(one, bytes(2));
    assert_eq!(one, bytes(3));
}

#[test]
fn single_replication_has_zero_spread() {
    let result = run_monte_carlo(&small(Setting::A, 1, 12), 1).unwrap();
    for (k, row) in result.summary.iter().enumerate() {
        let e = result.estimates[0][k];
        if e.is_nan() {
            assert_eq!(row.failures, 1);
            continue;
        }
        let s = row.stats.unwrap();
        assert_eq!(s.sd, 0.0);
        assert!((s.bias - (e - result.tau)).abs() <= 1e-12);
    }
}

#[test]
fn setting_b_rows_and_validation() {
    let config = small(Setting::B, 3, 1);
    let result = run_monte_carlo(&config, 1).unwrap();
    let methods: Vec<Method> = result.summary.iter().map(|r| r.method).collect();
    assert_eq!(methods, [Method::Pcm, Method::FrontDoorMinimal, Method::FrontDoorWhole]);
    let mut bad = config.clone();
    bad.methods = small(Setting::A, 3, 1).methods;
    assert!(run_monte_carlo(&bad, 1).is_err());
    let mut bad = config;
    bad.n = 2;
    assert!(run_monte_carlo(&bad, 1).is_err());
}

#[test]
fn custom_scm_config_runs() {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/nested.toml")).unwrap();
    let base = std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"));
    let mut config = ExperimentConfig::parse(&text, Some(base)).unwrap();
    config.replications = 20;
    let result = run_monte_carlo(&config, 1).unwrap();
    assert!(result.tau > 0.0);
    assert!(result.summary.iter().all(|r| r.failures == 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn summary_invariants(values in proptest::collection::vec(-5.0f64..5.0, 1..40), tau in -2.0f64..2.0) {
        let s = summarize(&values, tau).unwrap();
        prop_assert!((s.bias - (s.mean - tau)).abs() <= 1e-12);
        prop_assert!(s.sd >= 0.0);
        prop_assert!((0.0..=1.0).contains(&s.sign));
    }
}
