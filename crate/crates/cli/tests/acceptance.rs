//! Acceptance criteria, one PASS/FAIL line each. The full suite trains the
//! shipped example configs and takes roughly ten minutes on one core.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use genlab::bounds::{b_terms, thesis_bound, GammaClass, TrainNorms};
use genlab::datagen::{LabelSpace, LabeledDataset};
use genlab::gde::{
    cace, confidence_profile, disagreement_rate, expected_disagreement, expected_test_error, test_error, Binning,
    ConfidenceProfile, PredictionTable,
};
use genlab::network::Mlp;
use genlab::Rng;
use genlab_cli::{run, RunOptions};
use num_rational::Rational64;

type Q = Rational64;
type Check = common::Check;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

struct Run {
    report: serde_json::Value,
    rows: Vec<HashMap<String, String>>,
    secs: f64,
}

impl Run {
    fn check(&self, name: &str) -> Result<String, String> {
        let checks = self.report["checks"].as_array().ok_or("report has no checks")?;
        let c = checks.iter().find(|c| c["name"] == name).ok_or_else(|| format!("no check {name}"))?;
        let detail = c["detail"].as_str().unwrap_or_default().to_string();
        ensure(c["passed"] == true, || format!("{name}: {detail}"))?;
        Ok(detail)
    }

    fn column(&self, rows: &[&HashMap<String, String>], name: &str) -> Vec<f64> {
        rows.iter().map(|r| r[name].parse::<f64>().unwrap()).collect()
    }
}

fn run_config(path: &Path) -> Result<Run, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let opts = RunOptions { threads: 1, output_dir: Some(tmp.path().to_path_buf()), ..Default::default() };
    run(path, &opts).map_err(|e| format!("{}: {e}", path.display()))?;
    let secs = start.elapsed().as_secs_f64();
    let report = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    let csv = fs::read_to_string(tmp.path().join("results.csv")).unwrap();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let rows = lines.map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect()).collect();
    Ok(Run { report, rows, secs })
}

fn within(secs: f64, limit: f64) -> Result<(), String> {
    ensure(secs < limit, || format!("took {secs:.0} s, limit {limit:.0} s"))
}

fn numerics() -> Check {
    Ok(format!("{}; {}", common::spectral_vs_jacobi()?, common::jacobians_vs_finite_differences()?))
}

fn noise_resilience() -> Check {
    common::perturbations_within_tolerances()
}

fn clamped_norms(depth: usize, width: usize) -> TrainNorms {
    TrainNorms {
        depth,
        width,
        m: 100,
        alpha: vec![1.0; depth],
        gamma: vec![1.0; depth + 1],
        zeta: vec![vec![1.0; depth + 1]; depth + 1],
        psi: vec![vec![1.0; depth + 1]; depth + 1],
        gamma_class: 1.0,
        input_bound: 1.0,
        weight_row: vec![1.0; depth + 1],
        weight_spec: vec![1.0; depth + 1],
        example_min_preact: vec![],
        example_median_preact: vec![],
    }
}

fn bound_structure() -> Check {
    let start = Instant::now();
    // A freshly initialized net sits at its initialization: the KL part vanishes.
    let mut rng = Rng::new(7);
    let (m, delta, depth) = (50usize, 0.05, 3usize);
    let inputs: Vec<Vec<f64>> = (0..m).map(|_| rng.normal_vec(6, 1.0)).collect();
    let labels: Vec<i64> = (0..m).map(|_| rng.below(3) as i64).collect();
    let data = LabeledDataset::new(inputs, labels, LabelSpace::Multiclass(3)).unwrap();
    let net = Mlp::<f64>::xavier(&[6, 8, 8, 3], 1.0, &mut rng).unwrap();
    let r = thesis_bound(&net, &data, delta, GammaClass::Fixed { value: 1.0 }).map_err(|e| e.to_string())?;
    let d = depth as f64;
    let expected = r.train_term + d * ((d * m as f64 / delta).ln() / (m as f64 - 1.0)).sqrt();
    ensure(r.kl_term == 0.0 && r.bound_value == expected, || {
        format!("W = Z: kl {} bound {} expected {expected}", r.kl_term, r.bound_value)
    })?;

    // Every norm at its clamp value: each term is a count.
    let (depth, width) = (4, 9);
    let t = b_terms(&clamped_norms(depth, width), 1.0).map_err(|e| e.to_string())?;
    let counts = [t.layer_l2, t.preact, t.jac_row_l2, t.jac_spec, t.output];
    ensure(counts == [3.0, 1.0, 3.0, 3.0, 4.0 / 3.0], || format!("hand case terms {counts:?}"))?;

    let sweep = run_config(&configs().join("bound-vs-depth.json"))?;
    let slope = sweep.check("log_bound_increases_with_depth")?;
    sweep.check("preact_variants_not_above_main")?;
    let secs = start.elapsed().as_secs_f64();
    within(secs, 1800.0)?;
    Ok(format!("W = Z exact, hand case exact, depth {slope}, preact variants <= main, {secs:.0} s"))
}

fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn norms_vs_m() -> Check {
    let r = run_config(&configs().join("norms-vs-m.json"))?;
    r.check("distance_grows_with_m")?;
    r.check("spectral_product_grows_with_m")?;
    let s = &r.report["summary"];
    let (rd, rs) = (s["spearman_distance"].as_f64().unwrap(), s["spearman_spectral_product"].as_f64().unwrap());
    ensure(rd >= 0.9 && rs >= 0.9, || format!("spearman distance {rd}, spectral {rs}"))?;
    let test: Vec<f64> = s["mean_test_error"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    ensure(nonincreasing(&test), || format!("mean test error {test:?}"))?;
    within(r.secs, 2700.0)?;
    Ok(format!("spearman distance {rd}, spectral product {rs}, mean test error {test:.3?}, {:.0} s", r.secs))
}

/// Per-trial train, test and bad-set errors of a closed-form scenario.
fn ucfail_trials(r: &Run, eps: f64) -> Result<(usize, usize), String> {
    let rows: Vec<&HashMap<String, String>> = r.rows.iter().collect();
    let train = r.column(&rows, "train_error");
    let bad = r.column(&rows, "bad_error");
    let test = r.column(&rows, "test_error");
    ensure(train.iter().all(|&e| e == 0.0), || format!("train errors {train:?}"))?;
    ensure(bad.iter().all(|&e| e == 1.0), || format!("bad-set errors {bad:?}"))?;
    Ok((test.iter().filter(|&&e| e <= eps).count(), test.len()))
}

fn ucfail_linear() -> Check {
    let r = run_config(&configs().join("ucfail-linear.json"))?;
    let (good, trials) = ucfail_trials(&r, 0.05)?;
    ensure(trials == 20 && good >= 19, || format!("{good} of {trials} trials with test error <= 0.05"))?;
    let lower = r.report["summary"]["implied_lower_bound"].as_f64().unwrap();
    ensure(lower >= 0.95, || format!("lower bound {lower}"))?;
    within(r.secs, 120.0)?;
    Ok(format!("{good}/{trials} trials within 0.05, lower bound {lower}, {:.0} s", r.secs))
}

fn ucfail_exp() -> Check {
    let start = Instant::now();
    let mc = common::exp_closed_form_vs_monte_carlo()?;
    let r = run_config(&configs().join("ucfail-exp.json"))?;
    ensure(r.report["summary"]["conditions_met"] == true, || "setup conditions not met".into())?;
    let (good, trials) = ucfail_trials(&r, 0.2)?;
    ensure(good == trials, || format!("{good} of {trials} trials with test error <= 0.2"))?;
    let rows: Vec<&HashMap<String, String>> = r.rows.iter().collect();
    let margins = r.column(&rows, "min_train_log_margin");
    ensure(margins.iter().all(|v| v.is_finite()), || format!("log margins {margins:?}"))?;
    let secs = start.elapsed().as_secs_f64();
    within(secs, 180.0)?;
    Ok(format!("{mc}; {good}/{trials} trials within 0.2, finite log margins, {secs:.0} s"))
}

fn ucfail_hypersphere() -> Check {
    let r = run_config(&configs().join("ucfail-hypersphere.json"))?;
    let mut means = Vec::new();
    let mut notes = Vec::new();
    for m in ["512", "2048"] {
        let rows: Vec<&HashMap<String, String>> = r.rows.iter().filter(|row| row["m"] == m).collect();
        let test = r.column(&rows, "test_error");
        let bad = r.column(&rows, "bad_error");
        let hits = test.iter().zip(&bad).filter(|(t, b)| **b >= 3.0 * **t).count();
        ensure(rows.len() == 10 && hits >= 8, || format!("m = {m}: {hits} of {} seeds with bad >= 3 x test", rows.len()))?;
        means.push(test.iter().sum::<f64>() / test.len() as f64);
        notes.push(format!("m = {m}: {hits}/10"));
    }
    ensure(means[1] < means[0], || format!("mean test error {means:?}"))?;
    within(r.secs, 1800.0)?;
    Ok(format!("{}, mean test error {:.4} -> {:.4}, {:.0} s", notes.join(", "), means[0], means[1], r.secs))
}

fn random_table(rng: &mut Rng) -> PredictionTable {
    let (models, examples, classes) = (2 + rng.below(6), 1 + rng.below(20), 2 + rng.below(4));
    let preds = (0..models).map(|_| (0..examples).map(|_| rng.below(classes) as i64).collect()).collect();
    let labels = (0..examples).map(|_| rng.below(classes) as i64).collect();
    PredictionTable::new(preds, Some(labels), classes).unwrap()
}

fn gde_calibration() -> Check {
    let start = Instant::now();
    for seed in 0..100u64 {
        let t = random_table(&mut Rng::new(seed));
        let m = t.models();
        let profile = confidence_profile::<Q>(&t);
        let mut pairs = Q::from_integer(0);
        for i in 0..m {
            for j in 0..m {
                pairs += disagreement_rate::<Q>(&t, i, j).map_err(|e| e.to_string())?;
            }
        }
        let edr = expected_disagreement(&profile).map_err(|e| e.to_string())?;
        ensure(edr == pairs / Q::from_integer((m * m) as i64), || format!("seed {seed}: EDR {edr} vs pair average"))?;
        let labels = t.labels().unwrap();
        let ete = expected_test_error(&profile, labels).map_err(|e| e.to_string())?;
        let mean: Q = (0..m).map(|i| test_error::<Q>(&t, i).unwrap()).sum::<Q>() / Q::from_integer(m as i64);
        ensure(ete == mean, || format!("seed {seed}: ETE {ete} vs mean test error {mean}"))?;
        let c = cace(&profile, labels, Binning::Exact { models: m }).map_err(|e| e.to_string())?.value;
        let gap = if ete > edr { ete - edr } else { edr - ete };
        ensure(gap <= c, || format!("seed {seed}: |ETE - EDR| = {gap} > CACE {c}"))?;
    }
    let q = |n, d| Q::new(n, d);
    let fixture = ConfidenceProfile(vec![vec![q(1, 10), q(9, 10)], vec![q(2, 10), q(8, 10)]]);
    let edr = expected_disagreement(&fixture).map_err(|e| e.to_string())?;
    ensure(edr == q(1, 4), || format!("0.1/0.2 fixture EDR {edr}"))?;

    let r = run_config(&configs().join("gde-scatter.json"))?;
    let rows: Vec<&HashMap<String, String>> = r.rows.iter().filter(|row| row["mode"] == "diff_init").collect();
    let test = r.column(&rows, "test_error");
    let dis = r.column(&rows, "disagreement");
    let inside = test.iter().zip(&dis).filter(|(t, d)| (**t - **d).abs() <= 0.3 * **d).count();
    ensure(rows.len() == 10 && inside >= 8, || format!("{inside} of {} pairs in band", rows.len()))?;
    let secs = start.elapsed().as_secs_f64();
    within(secs, 2400.0)?;
    Ok(format!("identities exact on 100 tables, fixture EDR 1/4, {inside}/10 pairs in band, {secs:.0} s"))
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

fn determinism() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut configs: Vec<PathBuf> = fs::read_dir(fixtures())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    configs.sort();
    for (i, config) in configs.iter().enumerate() {
        let dirs = [tmp.path().join(format!("{i}a")), tmp.path().join(format!("{i}b"))];
        for (dir, threads) in dirs.iter().zip([1, 3]) {
            let opts = RunOptions { threads, output_dir: Some(dir.clone()), ..Default::default() };
            run(config, &opts).map_err(|e| format!("{}: {e}", config.display()))?;
        }
        ensure(outputs(&dirs[0]) == outputs(&dirs[1]), || format!("{} differs between runs", config.display()))?;
    }
    let secs = start.elapsed().as_secs_f64();
    within(secs, 60.0)?;
    Ok(format!("{} fixture configs byte-identical on re-run, {secs:.1} s", configs.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("1 numerics", numerics),
        ("2 noise resilience", noise_resilience),
        ("3 bound structure", bound_structure),
        ("4 norms vs m", norms_vs_m),
        ("5 linear uc failure", ucfail_linear),
        ("6 exponential uc failure", ucfail_exp),
        ("7 hypersphere uc failure", ucfail_hypersphere),
        ("8 gde and calibration", gde_calibration),
        ("9 determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                println!("FAIL {name}: {why}");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
