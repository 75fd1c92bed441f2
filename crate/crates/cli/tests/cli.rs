use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use serde_json::Value;
use twostep_cli::{parse_config, run, CliError, Command, Source, Sweep, EXIT_NUMERIC, EXIT_VALIDATION};

fn scenario_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn stdout_json(config: &str) -> Value {
    let plan = parse_config(config).unwrap();
    let mut buf = Vec::new();
    run(&plan, None, &mut buf).unwrap();
    serde_json::from_slice(&buf).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn minimal_config_takes_defaults() {
    let plan = parse_config(r#"{"command":"simulate","scenario":"rydberg-ladder"}"#).unwrap();
    assert_eq!(plan.command, Command::Simulate);
    assert_eq!(plan.sampling.samples_per_period, 4);
    assert_eq!(plan.sampling.horizon, None);
    assert_eq!(plan.sweep, None);
    assert_eq!(plan.name, "rydberg-ladder");
    match plan.source {
        Source::Scenario { kind, params } => {
            assert_eq!(kind.name(), "rydberg-ladder");
            assert!(params.is_empty());
        }
        other => panic!("unexpected source {other:?}"),
    }
}

#[test]
fn gamma_axes_select_deformation_sweep() {
    let plan =
        parse_config(r#"{"command":"sweep","scenario":"rydberg-ladder","axes":{"gamma":[50,100,1000]}}"#).unwrap();
    assert_eq!(
        plan.sweep,
        Some(Sweep::Deformation {
            gamma: vec![50.0, 100.0, 1000.0]
        })
    );
}

#[test]
fn unknown_keys_are_named() {
    let cases = [
        (
            r#"{"command":"simulate","system":{"step_a":{"detuings":[0,60,30],"couplings":[[1,2,1]]},"target":2}}"#,
            "detuings",
        ),
        (r#"{"command":"simulate","scenario":"rydberg-ladder","smapling":{}}"#, "smapling"),
        (r#"{"command":"simulate","scenario":"rydberg-ladder","params":{"detla1":3}}"#, "detla1"),
        (r#"{"command":"sweep","scenario":"rydberg-ladder","axes":{"gama":[1]}}"#, "gama"),
    ];
    for (text, key) in cases {
        let err = parse_config(text).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains(key), "{err}");
    }
}

#[test]
fn rejects_bad_plans() {
    let bad = [
        r#"{"command":"simulate","scenario":"no-such-kind"}"#,
        r#"{"command":"launch","scenario":"rydberg-ladder"}"#,
        r#"{"command":"simulate"}"#,
        r#"{"command":"sweep","scenario":"rydberg-ladder"}"#,
        r#"{"command":"sweep","scenario":"rydberg-ladder","axes":{"gamma":[]}}"#,
        r#"{"command":"sweep","scenario":"rydberg-ladder","axes":{"gamma":[50],"ratio":[2]}}"#,
        r#"{"command":"sweep","scenario":"rydberg-ladder","axes":{"delta2":[0]}}"#,
        r#"{"command":"simulate","scenario":"rydberg-ladder","axes":{"gamma":[50]}}"#,
        r#"{"command":"simulate","scenario":"rydberg-ladder","sampling":{"samples_per_period":0}}"#,
        r#"{"command":"simulate","scenario":"rydberg-ladder","sampling":{"horizon":-1}}"#,
        r#"{"command":"simulate","scenario":"rydberg-ladder","name":"../up"}"#,
        "not json",
    ];
    for text in bad {
        assert!(parse_config(text).is_err(), "accepted {text}");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            parse_config(&fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            count += 1;
        }
    }
    assert!(count >= 8);
}

#[test]
fn simulate_ladder_reaches_target() {
    let dir = tempfile::tempdir().unwrap();
    let plan = parse_config(r#"{"command":"simulate","scenario":"rydberg-ladder"}"#).unwrap();
    let written = run(&plan, Some(dir.path()), &mut Vec::new()).unwrap();
    assert_eq!(written.len(), 2);

    let (header, rows) = read_csv(&dir.path().join("rydberg-ladder.csv"));
    assert_eq!(header, ["t", "P1", "P2", "P3"]);
    let (t, p3) = rows
        .iter()
        .map(|r| (r[0], r[3]))
        .fold((0.0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    assert!(p3 >= 0.98, "max P3 {p3}");
    assert!((t - 37.2).abs() / 37.2 <= 0.1, "at t = {t}");

    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rydberg-ladder.meta.json")).unwrap())
        .unwrap();
    assert_eq!(meta["data"], "rydberg-ladder.csv");
    assert_eq!(meta["params"]["delta1"], 60.0);
    assert!(meta["dynamics"]["tau_a"].as_f64().unwrap() > 0.0);
    assert_eq!(meta["dynamics"]["dressed"]["step_a"]["eigenvalues"].as_array().unwrap().len(), 3);
    let ex = &meta["extrema"][2];
    assert_eq!(ex["level"], 3);
    assert_eq!(ex["max"].as_f64().unwrap(), p3);
    assert_eq!(ex["time"].as_f64().unwrap(), t);
}

#[test]
fn outputs_are_byte_identical() {
    let configs = [
        r#"{"command":"simulate","scenario":"rydberg-ladder"}"#,
        r#"{"command":"sweep","scenario":"rydberg-ladder","axes":{"d_omega1":[-0.05,0,0.05],"d_omega2":[-0.05,0.05]}}"#,
        r#"{"command":"sweep","scenario":"stirap","axes":{"delta2":[0,5]}}"#,
    ];
    for text in configs {
        let plan = parse_config(text).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let wa = run(&plan, Some(a.path()), &mut Vec::new()).unwrap();
        let wb = run(&plan, Some(b.path()), &mut Vec::new()).unwrap();
        for (pa, pb) in wa.iter().zip(&wb) {
            assert_eq!(pa.file_name(), pb.file_name());
            assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap(), "{}", pa.display());
        }
    }
    let text = r#"{"command":"spectrum","scenario":"rydberg-ladder"}"#;
    assert_eq!(stdout_json(text), stdout_json(text));
}

#[test]
fn sweep_csv_has_axes_then_results() {
    let dir = tempfile::tempdir().unwrap();
    let plan = parse_config(
        r#"{"command":"sweep","scenario":"rydberg-ladder","axes":{"d_omega1":[-0.05,0.05],"d_omega2":[-0.05,0,0.05]},"name":"grid"}"#,
    )
    .unwrap();
    run(&plan, Some(dir.path()), &mut Vec::new()).unwrap();
    let (header, rows) = read_csv(&dir.path().join("grid.csv"));
    assert_eq!(header, ["d_omega1", "d_omega2", "P_target_at_ts"]);
    assert_eq!(rows.len(), 6);
    // Last axis varies fastest.
    assert_eq!(rows[0][..2], [-0.05, -0.05]);
    assert_eq!(rows[1][..2], [-0.05, 0.0]);
    assert_eq!(rows[3][..2], [0.05, -0.05]);
    assert!(rows.iter().all(|r| r[2] > 0.98));
    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("grid.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["sweep"], "perturbation");
    assert_eq!(meta["t_s"], 37.2);
    assert_eq!(meta["points"], 6);
}

#[test]
fn spectrum_suggests_step_duration() {
    let v = stdout_json(r#"{"command":"spectrum","scenario":"rydberg-ladder"}"#);
    let step = &v["steps"]["step_a"];
    assert_eq!(step["eigenvalues"].as_array().unwrap().len(), 3);
    assert_eq!(step["bare_map"], serde_json::json!([1, 3, 2]));
    let tau2 = step["suggested_tau"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["target"] == 2)
        .unwrap()["tau"]
        .as_f64()
        .unwrap();
    assert!((tau2 - 0.0522).abs() < 5e-5, "{tau2}");
    assert!(step["perturbative"]["x1"].as_f64().unwrap().abs() < 0.1);
    assert_eq!(step["mld"]["flagged"], false);
}

#[test]
fn effective_reports_small_residual() {
    let v = stdout_json(r#"{"command":"effective","scenario":"rydberg-ladder"}"#);
    assert!(v["residual"].as_f64().unwrap() <= 1e-9);
    assert_eq!(v["branch_valid"], true);
    assert!(v["deviation"].as_f64().unwrap() <= 0.05);
    let h13 = v["h_eff"]["abs"][0][2].as_f64().unwrap();
    let omega_eff = v["analytic"]["omega_eff"].as_f64().unwrap();
    assert!((h13 - omega_eff).abs() / h13 < 0.05, "{h13} vs {omega_eff}");
}

#[test]
fn inline_system_matches_named_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let named = parse_config(r#"{"command":"simulate","scenario":"rydberg-ladder"}"#).unwrap();
    run(&named, Some(dir.path()), &mut Vec::new()).unwrap();
    let inline = parse_config(&fs::read_to_string(scenario_file("inline-ladder.json")).unwrap()).unwrap();
    run(&inline, Some(dir.path()), &mut Vec::new()).unwrap();
    let (_, a) = read_csv(&dir.path().join("rydberg-ladder.csv"));
    let (_, b) = read_csv(&dir.path().join("inline-ladder.csv"));
    assert_eq!(a, b);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_twostep");
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    };

    let ok = Process::new(bin)
        .args(["spectrum", "--config"])
        .arg(scenario_file("rydberg-ladder-spectrum.json"))
        .output()
        .unwrap();
    assert!(ok.status.success());
    let v: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["command"], "spectrum");

    let typo = write("typo.json", r#"{"command":"spectrum","scenario":"rydberg-ladder","detuings":[1]}"#);
    let out = Process::new(bin).args(["spectrum", "--config"]).arg(&typo).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_VALIDATION));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detuings"));

    // Levels 1 and 3 resonant: the bare-labelled 1-3 gap is not positive.
    let numeric = write(
        "vee.json",
        r#"{"command":"simulate","system":{"step_a":{"detunings":[0,-48,0],"couplings":[[1,2,1],[1,3,1]]},"target":3}}"#,
    );
    let out = Process::new(bin)
        .args(["simulate", "--config"])
        .arg(&numeric)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_NUMERIC), "{}", String::from_utf8_lossy(&out.stderr));

    let mismatch = Process::new(bin)
        .args(["effective", "--config"])
        .arg(scenario_file("rydberg-ladder-spectrum.json"))
        .output()
        .unwrap();
    assert_eq!(mismatch.status.code(), Some(EXIT_VALIDATION));

    let workers = Process::new(bin)
        .env("TWOSTEP_WORKERS", "zero")
        .args(["spectrum", "--config"])
        .arg(scenario_file("rydberg-ladder-spectrum.json"))
        .output()
        .unwrap();
    assert_eq!(workers.status.code(), Some(EXIT_VALIDATION));
}
