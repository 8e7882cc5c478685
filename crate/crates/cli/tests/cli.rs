//! End-to-end runs of the experiment runner on small fixture configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use genlab_cli::svg::{plot_svg, Plot, PlotKind};
use genlab_cli::{run, CliError, RunOptions};

const KINDS: [&str; 8] = [
    "norms-vs-m",
    "bound-vs-depth",
    "margin-gap",
    "interp",
    "ucfail-linear",
    "ucfail-exp",
    "ucfail-hypersphere",
    "gde-scatter",
];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn opts(dir: &Path, threads: usize) -> RunOptions {
    RunOptions { threads, output_dir: Some(dir.to_path_buf()), ..Default::default() }
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn genlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_genlab"))
}

#[test]
fn every_kind_writes_csv_report_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    for kind in KINDS {
        let dir = tmp.path().join(kind);
        run(&fixture(&format!("{kind}.json")), &opts(&dir, 1)).unwrap();
        let csv = fs::read_to_string(dir.join("results.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        let cols = lines[0].split(',').count();
        assert!(lines.len() >= 3, "{kind}: no rows");
        for row in &lines[1..lines.len() - 1] {
            assert_eq!(row.split(',').count(), cols, "{kind}: ragged row {row}");
        }
        let last = lines[lines.len() - 1];
        assert!(last.starts_with("# config_hash=") && last.ends_with(" seed=3"), "{kind}: {last}");
        assert_eq!(last.len(), "# config_hash=".len() + 64 + " seed=3".len());

        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["experiment"], kind);
        assert_eq!(report["seed"], 3);
        assert_eq!(report["rng"], "chacha8");
        for key in ["config_hash", "config", "summary", "checks", "all_checks_passed"] {
            assert!(!report[key].is_null(), "{kind}: missing {key}");
        }
        let plots = fs::read_dir(&dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg")).count();
        assert_eq!(plots, usize::from(!kind.starts_with("ucfail")), "{kind}");
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let start = std::time::Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    for kind in KINDS {
        let config = fixture(&format!("{kind}.json"));
        let (a, b) = (tmp.path().join(format!("{kind}-a")), tmp.path().join(format!("{kind}-b")));
        run(&config, &opts(&a, 1)).unwrap();
        run(&config, &opts(&b, 4)).unwrap();
        assert_eq!(outputs(&a), outputs(&b), "{kind}");
    }
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn seed_override_changes_results_and_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture("margin-gap.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&config, &opts(&a, 1)).unwrap();
    run(&config, &RunOptions { seed: Some(4), ..opts(&b, 1) }).unwrap();
    let (ca, cb) = (fs::read_to_string(a.join("results.csv")).unwrap(), fs::read_to_string(b.join("results.csv")).unwrap());
    assert_ne!(ca, cb);
    assert!(cb.trim_end().ends_with(" seed=4"));
}

#[test]
fn small_gde_sweep_is_fast() {
    let start = std::time::Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    run(&fixture("gde-scatter.json"), &opts(tmp.path(), 1)).unwrap();
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn golden_scatter_svg() {
    let plot = Plot {
        title: "disagreement vs test error".into(),
        x_label: "disagreement".into(),
        y_label: "test error <mean>".into(),
        kind: PlotKind::Scatter,
        points: vec![(0.1, 0.12), (0.2, 0.18), (0.15, f64::NAN), (0.3, 0.33)],
        diagonal: true,
    };
    let got = plot_svg(&plot);
    let path = fixture("scatter.svg");
    if std::env::var_os("GENLAB_BLESS").is_some() {
        fs::write(&path, &got).unwrap();
    }
    assert_eq!(got, fs::read_to_string(&path).unwrap());
}

#[test]
fn golden_line_svg() {
    let plot = Plot {
        title: "interpolation".into(),
        x_label: "t".into(),
        y_label: "test error".into(),
        kind: PlotKind::Line,
        points: vec![(0.0, 0.05), (0.5, 0.2), (1.0, 0.06)],
        diagonal: false,
    };
    let got = plot_svg(&plot);
    let path = fixture("line.svg");
    if std::env::var_os("GENLAB_BLESS").is_some() {
        fs::write(&path, &got).unwrap();
    }
    assert_eq!(got, fs::read_to_string(&path).unwrap());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = genlab().args(["run", "no/such/config.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));

    let bad_json = tmp.path().join("bad.json");
    fs::write(&bad_json, "{\"seed\": 1,").unwrap();
    let unknown = tmp.path().join("unknown.json");
    fs::write(&unknown, r#"{"seed": 1, "experiment": {"kind": "ucfail-exp", "m": 3, "n": 2, "eps": 0.2, "delta": 0.2, "trials": 1, "bogus": 1}}"#).unwrap();
    let out_of_range = tmp.path().join("range.json");
    fs::write(&out_of_range, r#"{"experiment": {"kind": "ucfail-linear", "m": 3, "n": 10, "eps": 1.5, "delta": 0.2, "trials": 1}}"#).unwrap();
    for path in [&bad_json, &unknown, &out_of_range] {
        for cmd in ["run", "validate"] {
            let out = genlab().arg(cmd).arg(path).output().unwrap();
            assert_eq!(out.status.code(), Some(2), "{cmd} {}", path.display());
            assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
        }
    }
}

#[test]
fn run_error_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    // Valid config, but the setup conditions do not hold.
    let path = tmp.path().join("exp.json");
    fs::write(&path, r#"{"experiment": {"kind": "ucfail-exp", "m": 3, "n": 2, "eps": 0.2, "delta": 0.3, "trials": 1}}"#).unwrap();
    let out = genlab().arg("run").arg(&path).env("GENLAB_OUT", tmp.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn failed_checks_exit_with_one_only_when_asked() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(fixture("gde-scatter.json")).unwrap()).unwrap();
    // A zero-width band cannot hold.
    cfg["experiment"]["band"] = 0.0.into();
    let lenient = tmp.path().join("lenient.json");
    fs::write(&lenient, cfg.to_string()).unwrap();
    cfg["fail_on_check"] = true.into();
    let strict = tmp.path().join("strict.json");
    fs::write(&strict, cfg.to_string()).unwrap();

    let out = genlab().arg("run").arg(&lenient).env("GENLAB_OUT", tmp.path().join("a")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL gde_band_diff_init"));
    let out = genlab().arg("run").arg(&strict).env("GENLAB_OUT", tmp.path().join("b")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(matches!(
        run(&strict, &opts(&tmp.path().join("c"), 1)),
        Err(CliError::CheckFailed(ref names)) if names.contains("gde_band_diff_init")
    ));
}

#[test]
fn output_dir_defaults_and_env_override() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("linear.json");
    fs::copy(fixture("ucfail-linear.json"), &config).unwrap();
    let out = genlab().arg("run").arg(&config).env_remove("GENLAB_OUT").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(tmp.path().join("genlab-out/results.csv").exists());

    let env_dir = tmp.path().join("env");
    let out = genlab().arg("run").arg(&config).env("GENLAB_OUT", &env_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(env_dir.join("report.json").exists());

    let report = genlab().arg("report").arg(&env_dir).output().unwrap();
    assert_eq!(report.status.code(), Some(0));
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.starts_with("experiment ucfail-linear\nseed 3\n"));
    assert!(text.contains("PASS train_error_zero"));
}

#[test]
fn cli_seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = genlab()
        .args(["run", "--seed", "11", "--deterministic"])
        .arg(fixture("ucfail-exp.json"))
        .env("GENLAB_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 11);
}
