use fastab_core::config::{parse_config, parse_config_value, ExperimentKind};
use fastab_core::runner::{self, apply_overrides, run_into, Overrides, EXIT_OK, EXIT_PREDICATE_FAILED};
use fastab_core::Error;
use proptest::prelude::*;
use serde_json::{json, Value};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, cols), rows)
}

fn spd(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    matrix(d, d).prop_map(move |a| {
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| (0..d).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                    .collect()
            })
            .collect()
    })
}

fn nonlinearity(n: usize) -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(json!({"family": "zero"})),
        prop::collection::vec(-1.0f64..1.0, n).prop_map(|v| json!({"family": "constant", "value": v})),
        (0.0f64..1.0).prop_map(|e| json!({"family": "tanh", "epsilon": e})),
        (0.0f64..1.0).prop_map(|e| json!({"family": "sine", "epsilon": e})),
    ]
}

prop_compose! {
    fn linear_config()(d in 1usize..4, n in 1usize..3)(
        f in matrix(d, d),
        h in matrix(n, d),
        sigma in matrix(d, d),
        mean_a in prop::collection::vec(-5.0f64..5.0, d),
        mean_b in prop::collection::vec(-5.0f64..5.0, d),
        cov_a in spd(d),
        cov_b in spd(d),
        seed in any::<u64>(),
        dt_exp in 1i32..4,
        steps in 1usize..50,
        particles in 2usize..5000,
        kind in prop_oneof![Just("twin"), Just("prior-div"), Just("kalman"), Just("simulate")],
        drift in nonlinearity(d),
        threshold in 1e-6f64..1.0,
    ) -> Value {
        let dt = 10f64.powi(-dt_exp);
        let gaussian = kind == "kalman" || kind == "prior-div" || kind == "twin";
        json!({
            "experiment": kind,
            "model": {
                "F": f, "H": h, "sigma": sigma,
                "drift_nonlinear": if gaussian { json!({"family": "zero"}) } else { drift },
            },
            "numerics": {
                "dt": dt, "T": dt * steps as f64, "seed": seed,
                "particles": particles, "threshold": threshold,
            },
            "priors": {
                "true": {"mean": mean_a, "cov": cov_a},
                "wrong": {"mean": mean_b, "cov": cov_b},
            },
        })
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn serialize_parse_is_idempotent(raw in linear_config()) {
        let first = parse_config_value(&raw).expect("generated config is valid");
        let again = parse_config(&first.to_json_string()).expect("serialized config reparses");
        prop_assert_eq!(&first, &again);
        prop_assert_eq!(first.hash(), again.hash());
    }

    #[test]
    fn every_unknown_key_is_named(extra in "[a-z]{3,8}_x") {
        let raw = json!({
            "experiment": "app2d",
            "numerics": {"seed": 1, extra.clone(): 1},
            extra.clone(): true,
        });
        let Err(Error::Config(errs)) = parse_config_value(&raw) else { panic!("accepted unknown keys") };
        let top = format!("unknown key `{extra}`");
        let nested = format!("unknown key `numerics.{extra}`");
        prop_assert!(errs.contains(&top));
        prop_assert!(errs.contains(&nested));
    }
}

fn run(raw: Value) -> (tempfile::TempDir, runner::RunOutcome) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config_value(&raw).unwrap();
    let out = run_into(&cfg, dir.path()).unwrap();
    (dir, out)
}

#[test]
fn app2d_default_profile_writes_manifest_and_report() {
    let (dir, out) = run(json!({"experiment": "app2d", "numerics": {"seed": 11}}));
    assert_eq!(out.exit_code, EXIT_OK);
    for f in ["report.csv", "report.json", "manifest.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert!(manifest["version"].is_string());
    let numerics = &manifest["config"]["numerics"];
    assert_eq!(numerics["dt"], 1e-3);
    assert_eq!(numerics["T"], 30.0);
    assert_eq!(numerics["threshold"], 1e-2);
    assert_eq!(manifest["config"]["app2d"]["obs_mode"], "unstable_only");
    assert_eq!(out.summary["stabilized"], true);
}

#[test]
fn manifest_config_regenerates_identical_outputs() {
    let (a, _) = run(json!({"experiment": "app2d", "numerics": {"seed": 3, "T": 5.0}}));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    let (b, _) = run(manifest["config"].clone());
    for f in ["report.csv", "report.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn undetectable_pair_with_stabilized_expectation_exits_2() {
    let (_, out) = run(json!({
        "experiment": "app2d",
        "app2d": {"obs_mode": "stable_only"},
        "numerics": {"seed": 5, "T": 10.0},
        "expect": {"stabilized": true},
    }));
    assert_eq!(out.exit_code, EXIT_PREDICATE_FAILED);
    assert!(out.checks.iter().any(|(name, ok)| name.starts_with("stabilized") && !ok));
}

#[test]
fn pf_runs_are_byte_identical() {
    let raw = json!({
        "experiment": "pf",
        "model": {"F": [[-1.0]], "H": [[1.0]], "sigma": [[1.0]],
                  "drift_nonlinear": {"family": "sine", "epsilon": 0.3}},
        "numerics": {"seed": 9, "T": 2.0, "dt": 0.01, "particles": 64},
        "priors": {"true": {"mean": [0.0], "cov": [[1.0]]}},
    });
    let (a, out) = run(raw.clone());
    let (b, _) = run(raw);
    assert!(out.files.iter().any(|f| f.starts_with("cloud_")));
    for f in &out.files {
        if f == "manifest.json" {
            continue;
        }
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn every_experiment_kind_runs() {
    let model = json!({"F": [[0.5, 0.0], [0.0, -1.0]], "H": [[1.0, 1.0]], "sigma": [[1.0, 0.0], [0.0, 1.0]]});
    let priors = json!({
        "true": {"mean": [0.0, 0.0], "cov": [[1.0, 0.0], [0.0, 1.0]]},
        "wrong": {"mean": [3.0, -2.0], "cov": [[2.0, 0.0], [0.0, 2.0]]},
    });
    let numerics = json!({"seed": 21, "T": 2.0, "dt": 0.01, "particles": 64, "replicas": 2});
    for kind in ExperimentKind::ALL {
        let mut raw = json!({"experiment": kind.name(), "numerics": numerics});
        if !matches!(kind, ExperimentKind::App2d | ExperimentKind::ErrorGrowth) {
            raw["model"] = model.clone();
            raw["priors"] = priors.clone();
        }
        if kind == ExperimentKind::NlBound {
            raw["model"]["drift_nonlinear"] = json!({"family": "tanh", "epsilon": 0.5});
        }
        let (dir, out) = run(raw);
        assert_eq!(out.exit_code, EXIT_OK, "{}", kind.name());
        for f in &out.files {
            let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(!text.contains('\r'), "{f} has CR");
            assert!(text.ends_with('\n'), "{f} lacks trailing LF");
        }
    }
}

#[test]
fn csv_only_output_skips_json_artifacts() {
    let (dir, out) = run(json!({
        "experiment": "error-growth",
        "numerics": {"seed": 1, "T": 5.0, "dt": 0.01},
        "output": {"formats": ["csv"]},
    }));
    assert_eq!(out.files, vec!["error_growth.csv", "manifest.json"]);
    assert!(!dir.path().join("error_growth.json").exists());
    let text = std::fs::read_to_string(dir.path().join("error_growth.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,leith_s0,lorenz_s0,dk_s0,leith_s6,dk_s6");
}

#[test]
fn overrides_replace_config_fields() {
    let mut raw = json!({
        "experiment": "twin",
        "numerics": {"seed": 1, "dt": 0.1},
        "filter": {"kind": "particle", "particles": 10},
    });
    let o = Overrides {
        experiment: Some(ExperimentKind::NlBound),
        seed: Some(99),
        out: Some("elsewhere".into()),
        dt: Some(0.05),
        t_end: Some(4.0),
        particles: Some(300),
    };
    apply_overrides(&mut raw, &o).unwrap();
    assert_eq!(raw["experiment"], "nl-bound");
    assert_eq!(raw["numerics"]["seed"], 99);
    assert_eq!(raw["numerics"]["dt"], 0.05);
    assert_eq!(raw["numerics"]["T"], 4.0);
    assert_eq!(raw["numerics"]["particles"], 300);
    assert_eq!(raw["filter"]["particles"], 300);
    assert_eq!(raw["output"]["directory"], "elsewhere");
}

#[test]
fn module_errors_are_module_qualified() {
    let err = runner::run_with_overrides(Some("{\"experiment\": \"app2d\"}"), &Overrides::default()).unwrap_err();
    assert!(err.to_string().starts_with("cli_io: config invalid"), "{err}");
    let err = runner::run_with_overrides(Some("{not json"), &Overrides::default()).unwrap_err();
    assert!(err.to_string().contains("invalid JSON"));
}
