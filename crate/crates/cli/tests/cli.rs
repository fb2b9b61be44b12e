use std::process::Command;

use proptest::prelude::*;
use raycontact_cli::registry::{bundled_source, load, BUNDLED};
use raycontact_cli::{run, ExperimentConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_raycontact"))
}

fn kind_of(name: &str) -> &'static str {
    load(&format!("bundled:{name}")).unwrap().experiment.name()
}

fn strip_timestamp(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

#[test]
fn bundled_configs_round_trip() {
    for (name, src) in BUNDLED {
        let cfg = ExperimentConfig::parse(src).unwrap_or_else(|e| panic!("{name}: {e}"));
        let canon = cfg.to_toml();
        let again = ExperimentConfig::parse(&canon).unwrap();
        assert_eq!(again, cfg, "{name}");
        assert_eq!(again.to_toml(), canon, "{name}");
    }
}

#[test]
fn listing_is_sorted_and_complete() {
    let out = bin().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    for n in [
        "flrw-theorem",
        "minkowski-doppler",
        "flrw-volume",
        "lemma-pairing",
        "density-jacobian",
        "exchange-flat",
    ] {
        assert!(names.contains(&n), "{n}");
    }
}

#[test]
fn every_bundled_config_passes() {
    for (name, _) in BUNDLED {
        let cfg = load(&format!("bundled:{name}")).unwrap();
        let out = run(&cfg).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(out.report.passed, "{name}: {:?}", out.report);
    }
}

#[test]
fn reports_are_deterministic_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for (i, workers) in ["1", "3", "1"].iter().enumerate() {
        let out = dir.path().join(i.to_string());
        let status = bin()
            .args(["volume", "--config", "bundled:flrw-volume", "--samples", "3000", "--out"])
            .arg(&out)
            .env("RAYCONTACT_WORKERS", workers)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        reports.push(strip_timestamp(&std::fs::read_to_string(out.join("volume.json")).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| bin().args(args).output().unwrap().status.code();
    assert_eq!(code(&["redshift", "--config", "bundled:minkowski-doppler"]), Some(0));
    assert_eq!(
        code(&["volume", "--config", "bundled:flrw-volume", "--samples", "500", "--tol", "1e-6"]),
        Some(2)
    );
    assert_eq!(code(&["volume", "--config", "bundled:no-such-config"]), Some(1));
    // config kind and subcommand disagree
    assert_eq!(code(&["trace", "--config", "bundled:flrw-volume"]), Some(1));
    assert_eq!(code(&["volume", "--config", "bundled:flrw-volume", "--tol", "-1"]), Some(1));
}

#[test]
fn negative_scale_factor_is_a_config_error() {
    let src = bundled_source("flrw-theorem").unwrap().replace("exp(H*t)", "-1");
    let err = ExperimentConfig::parse(&src).unwrap_err();
    assert_eq!(err.field, "metric.scale_factor");
    let line = src.lines().position(|l| l.starts_with("scale_factor")).unwrap() + 1;
    assert_eq!(err.line, Some(line));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, &src).unwrap();
    let out = bin().arg("verify-theorem").arg("--config").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8(out.stderr).unwrap();
    assert!(msg.contains("scale_factor") && msg.contains(&format!("line {line}")), "{msg}");
}

#[test]
fn unknown_fields_and_dangling_references_are_rejected() {
    let src = bundled_source("flrw-volume").unwrap();
    let err = ExperimentConfig::parse(&src.replace("seed = 3", "sede = 3")).unwrap_err();
    assert!(err.message.contains("sede"), "{err}");
    assert!(err.line.is_some());
    let err = ExperimentConfig::parse(&src.replace("receiver = \"late\"", "receiver = \"later\"")).unwrap_err();
    assert_eq!(err.field, "run.receiver");
    let err = ExperimentConfig::parse(&src.replace("lo = [0.0, -inf]", "lo = [0.0]")).unwrap_err();
    assert_eq!(err.field, "run.region");
}

#[test]
fn minkowski_trace_has_constant_tangent_columns() {
    assert_eq!(kind_of("minkowski-trace"), "trace");
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["trace", "--config", "bundled:minkowski-trace", "--format", "csv", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let cols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with('k')).collect();
    assert_eq!(cols.len(), 4);
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert!(rows.len() > 2);
    for &c in &cols {
        assert!(rows.iter().all(|r| r[c] == rows[0][c]), "column {}", header[c]);
    }
    let report = std::fs::read_to_string(dir.path().join("trace-report.csv")).unwrap();
    assert!(report.contains("passed,true"));
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 32,
        rng_seed: proptest::test_runner::RngSeed::Fixed(5),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn parse_of_canonical_form_is_identity(
        h in 0.1f64..2.0,
        rtol in 1e-12f64..1e-6,
        samples in 1usize..100_000,
        seed in any::<u64>(),
        window in prop::option::of((-1.0f64..-0.1, 1.0f64..2.0)),
    ) {
        let numerics = match window {
            Some((a, b)) => format!("rtol = {rtol:?}\ntime_window = [{a:?}, {b:?}]"),
            None => format!("rtol = {rtol:?}"),
        };
        let src = bundled_source("flrw-theorem").unwrap()
            .replace("H = 1.0", &format!("H = {h:?}"))
            .replace("samples = 200", &format!("samples = {samples}"))
            .replace("seed = 1", &format!("seed = {seed}"))
            .replace("time_window = [-0.4, 1.3]", &numerics);
        let cfg = ExperimentConfig::parse(&src).unwrap();
        prop_assert_eq!(cfg.numerics.rtol, rtol);
        prop_assert_eq!(cfg.run.seed, Some(seed));
        prop_assert_eq!(cfg.numerics.time_window, window.map(|(a, b)| [a, b]));
        let canon = cfg.to_toml();
        prop_assert_eq!(&ExperimentConfig::parse(&canon).unwrap(), &cfg);
    }
}
