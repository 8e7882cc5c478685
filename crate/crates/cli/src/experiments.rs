//! The eight experiment kinds. Each returns CSV rows, a JSON summary,
//! optional plots and the outcome of its built-in checks.

use std::path::PathBuf;

use genlab::bounds::{
    bartlett17_bound, distance_from_init, neyshabur18_bound, thesis_bound_from_norms, train_norm_profile, BoundVariant,
    GammaClass,
};
use genlab::datagen::LabeledDataset;
use genlab::gde::{gde_report, gde_scatter, Binning, PairPredictions, PredictionTable};
use genlab::linalg::{self, spectral_norm_default, Norm21Convention};
use genlab::network::Mlp;
use genlab::rng::derive_seed;
use genlab::training::{init_net, interpolate_error, make_run_pair, sgd_train, StochasticityMode, TrainConfig, TrainReport};
use genlab::ucfail::{ucfail_report, UcfailParams, UcfailReport, UcfailScenario};
use genlab::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, Experiment};
use crate::data::{load_pool, noisy, Split};
use crate::pool::run_indexed;
use crate::stats::{mean, slope, spearman};
use crate::svg::{Plot, PlotKind};
use crate::CliError;

pub struct Context {
    /// Directory that relative data paths resolve against.
    pub base: PathBuf,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.into(), passed, detail }
}

pub struct Outcome {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: Value,
    pub plots: Vec<(String, Plot)>,
    pub checks: Vec<Check>,
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn seeded(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed_init: derive_seed(seed, 1), seed_order: derive_seed(seed, 2), ..train.clone() }
}

fn widths(data: &LabeledDataset, hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![data.dim()];
    w.extend(hidden);
    w.push(data.space().output_dim());
    w
}

fn fit(widths: &[usize], train: &LabeledDataset, cfg: &TrainConfig) -> Result<(Mlp<f64>, TrainReport), CliError> {
    let mut net = init_net(widths, cfg)?;
    let report = sgd_train(&mut net, train, cfg)?;
    Ok((net, report))
}

fn error(net: &Mlp<f64>, data: &LabeledDataset) -> Result<f64, CliError> {
    Ok(net.error_rate(data.inputs(), data.labels())?)
}

fn input_bound(data: &LabeledDataset) -> f64 {
    data.inputs().iter().map(|x| linalg::l2_norm(x)).fold(1.0, f64::max)
}

pub fn run(exp: &Experiment, ctx: &Context) -> Result<Outcome, CliError> {
    match exp {
        Experiment::NormsVsM(p) => norms_vs_m(p, ctx),
        Experiment::BoundVsDepth(p) => bound_vs_depth(p, ctx),
        Experiment::MarginGap(p) => margin_gap(p, ctx),
        Experiment::Interp(p) => interp(p, ctx),
        Experiment::UcfailLinear(p) => {
            let scenario = UcfailScenario::Linear { k: p.k, n: p.n };
            let params = UcfailParams { m: p.m, eps: p.eps, delta: p.delta, trials: p.trials, test_samples: p.test_samples, sampler: p.sampler };
            ucfail_closed_form(&scenario, &params, ctx, "min_train_margin")
        }
        Experiment::UcfailExp(p) => {
            let scenario = UcfailScenario::Exp { n: p.n };
            let params = UcfailParams { m: p.m, eps: p.eps, delta: p.delta, trials: p.trials, test_samples: p.test_samples, sampler: p.sampler };
            ucfail_closed_form(&scenario, &params, ctx, "min_train_log_margin")
        }
        Experiment::UcfailHypersphere(p) => ucfail_hypersphere(p, ctx),
        Experiment::GdeScatter(p) => gde(p, ctx),
    }
}

/// Per-`m` means across seeds, in the order of `ms`.
fn means_by_m(ms: &[usize], rows: &[(usize, f64)]) -> Vec<f64> {
    ms.iter()
        .map(|&m| mean(&rows.iter().filter(|r| r.0 == m).map(|r| r.1).collect::<Vec<_>>()))
        .collect()
}

fn norms_vs_m(p: &config::NormsVsM, ctx: &Context) -> Result<Outcome, CliError> {
    struct Point {
        m: usize,
        seed: usize,
        train_error: f64,
        test_error: f64,
        epochs: usize,
        margin_fraction: f64,
        distance: f64,
        per_layer: Vec<f64>,
        spec: Vec<f64>,
        neyshabur: f64,
        bartlett: f64,
        thesis: Option<f64>,
    }
    let jobs = p.seeds * p.ms.len();
    let points = run_indexed(jobs, ctx.threads, |j| -> Result<Point, CliError> {
        let (s, m) = (j / p.ms.len(), p.ms[j % p.ms.len()]);
        let seed = derive_seed(ctx.seed, s as u64);
        let pool = load_pool(&p.data, &ctx.base, seed)?;
        let split = Split::new(pool.len(), p.test_size, seed);
        let train = noisy(split.train(&pool, m)?, p.label_noise, seed)?;
        let test = split.test(&pool)?;
        let w = widths(&train, &p.hidden);
        let (net, report) = fit(&w, &train, &seeded(&p.train, seed))?;
        let (distance, per_layer) = distance_from_init(&net)?;
        let spec = net.weights().iter().map(spectral_norm_default).collect::<genlab::Result<Vec<_>>>()?;
        let h = net.max_width();
        let b = input_bound(&train);
        let thesis = if p.thesis_bound {
            let norms = train_norm_profile(&net, &train)?;
            let margins = net.margins(train.inputs(), train.labels())?;
            let r = thesis_bound_from_norms(
                &norms,
                distance * distance,
                &margins,
                p.delta,
                GammaClass::Fixed { value: p.margin_gamma },
                BoundVariant::Main,
            )?;
            Some(r.bound_value)
        } else {
            None
        };
        Ok(Point {
            m,
            seed: s,
            train_error: error(&net, &train)?,
            test_error: error(&net, &test)?,
            epochs: report.epochs,
            margin_fraction: report.margin_fraction,
            distance,
            per_layer,
            spec,
            neyshabur: neyshabur18_bound(&net, p.margin_gamma, m, b, h)?,
            bartlett: bartlett17_bound(&net, p.margin_gamma, m, b, h, Norm21Convention::ColumnSums)?,
            thesis,
        })
    })?;
    let depth = p.hidden.len() + 1;
    let mut cols: Vec<String> = header(&["m", "seed", "train_error", "test_error", "epochs", "margin_fraction", "distance_from_init", "spectral_product"]);
    cols.extend((1..=depth).map(|d| format!("dist_layer_{d}")));
    cols.extend((1..=depth).map(|d| format!("spec_layer_{d}")));
    cols.extend(header(&["neyshabur18", "bartlett17"]));
    if p.thesis_bound {
        cols.push("thesis_bound".into());
    }
    let rows = points
        .iter()
        .map(|pt| {
            let mut r = vec![pt.m.to_string(), pt.seed.to_string(), fmt_f64(pt.train_error), fmt_f64(pt.test_error), pt.epochs.to_string(), fmt_f64(pt.margin_fraction)];
            r.push(fmt_f64(pt.distance));
            r.push(fmt_f64(pt.spec.iter().product()));
            r.extend(pt.per_layer.iter().map(|&v| fmt_f64(v)));
            r.extend(pt.spec.iter().map(|&v| fmt_f64(v)));
            r.push(fmt_f64(pt.neyshabur));
            r.push(fmt_f64(pt.bartlett));
            if let Some(t) = pt.thesis {
                r.push(fmt_f64(t));
            }
            r
        })
        .collect();
    let ms_f: Vec<f64> = p.ms.iter().map(|&m| m as f64).collect();
    let by = |f: &dyn Fn(&Point) -> f64| means_by_m(&p.ms, &points.iter().map(|pt| (pt.m, f(pt))).collect::<Vec<_>>());
    let dist = by(&|pt| pt.distance);
    let spec = by(&|pt| pt.spec.iter().product());
    let test = by(&|pt| pt.test_error);
    let (rho_dist, rho_spec, rho_test) = (spearman(&ms_f, &dist), spearman(&ms_f, &spec), spearman(&ms_f, &test));
    let summary = json!({
        "ms": p.ms,
        "mean_distance_from_init": dist,
        "mean_spectral_product": spec,
        "mean_test_error": test,
        "mean_neyshabur18": by(&|pt| pt.neyshabur),
        "mean_bartlett17": by(&|pt| pt.bartlett),
        "spearman_distance": rho_dist,
        "spearman_spectral_product": rho_spec,
        "spearman_test_error": rho_test,
    });
    let checks = vec![
        check("distance_grows_with_m", rho_dist >= 0.9, format!("spearman {rho_dist}")),
        check("spectral_product_grows_with_m", rho_spec >= 0.9, format!("spearman {rho_spec}")),
        check("test_error_falls_with_m", rho_test <= -0.9, format!("spearman {rho_test}")),
    ];
    let plot = Plot {
        title: "Distance from initialization vs training set size".into(),
        x_label: "m".into(),
        y_label: "distance from init".into(),
        kind: PlotKind::Line,
        points: ms_f.iter().copied().zip(dist.iter().copied()).collect(),
        diagonal: false,
    };
    Ok(Outcome { header: cols, rows, summary, plots: vec![("norms_vs_m".into(), plot)], checks })
}

fn bound_vs_depth(p: &config::BoundVsDepth, ctx: &Context) -> Result<Outcome, CliError> {
    let jobs = p.seeds * p.depths.len();
    let rows_raw = run_indexed(jobs, ctx.threads, |j| -> Result<(usize, usize, Vec<f64>), CliError> {
        let (s, depth) = (j / p.depths.len(), p.depths[j % p.depths.len()]);
        let seed = derive_seed(ctx.seed, s as u64);
        let pool = load_pool(&p.data, &ctx.base, seed)?;
        let split = Split::new(pool.len(), p.test_size, seed);
        let train = split.train(&pool, p.m)?;
        let test = split.test(&pool)?;
        let w = widths(&train, &vec![p.width; depth - 1]);
        let (net, _) = fit(&w, &train, &seeded(&p.train, derive_seed(seed, depth as u64)))?;
        let norms = train_norm_profile(&net, &train)?;
        let margins = net.margins(train.inputs(), train.labels())?;
        let dist_sq = distance_from_init(&net)?.0.powi(2);
        // An undefined bound (zero preactivation gap, nonpositive margin) is NaN.
        let eval = |v| match thesis_bound_from_norms(&norms, dist_sq, &margins, p.delta, p.gamma_class, v) {
            Ok(r) => Ok(Some(r)),
            Err(genlab::Error::DivisionByZero { .. }) => Ok(None),
            Err(e) => Err(e),
        };
        let main = eval(BoundVariant::Main)?;
        let bound = |r: &Option<genlab::bounds::BoundReport>| r.as_ref().map_or(f64::NAN, |r| r.bound_value);
        let cheap = bound(&eval(BoundVariant::Cheap)?);
        let pct = bound(&eval(BoundVariant::PreactPct { p: p.preact_pct })?);
        let median = bound(&eval(BoundVariant::PreactMedian)?);
        let b = input_bound(&train);
        let gamma = match p.gamma_class {
            GammaClass::Fixed { value } => value,
            GammaClass::MinTrainMargin => norms.gamma_class,
        };
        let baseline = |f: &dyn Fn() -> genlab::Result<f64>| if gamma > 0.0 { f() } else { Ok(f64::NAN) };
        let ney = baseline(&|| neyshabur18_bound(&net, gamma, p.m, b, p.width))?;
        let bart = baseline(&|| bartlett17_bound(&net, gamma, p.m, b, p.width, Norm21Convention::ColumnSums))?;
        let field = |f: fn(&genlab::bounds::BoundReport) -> f64| main.as_ref().map_or(f64::NAN, f);
        let main_bound = bound(&main);
        Ok((
            depth,
            s,
            vec![
                error(&net, &train)?,
                error(&net, &test)?,
                gamma,
                field(|r| r.b_layer_l2),
                field(|r| r.b_preact),
                field(|r| r.b_jac_row_l2),
                field(|r| r.b_jac_spec),
                field(|r| r.b_output),
                field(|r| r.sigma_star),
                field(|r| r.kl_term),
                main_bound,
                cheap,
                pct,
                median,
                main_bound.ln(),
                ney,
                bart,
            ],
        ))
    })?;
    let cols = header(&[
        "depth", "seed", "train_error", "test_error", "gamma_class", "b_layer_l2", "b_preact", "b_jac_row_l2", "b_jac_spec",
        "b_output", "sigma_star", "kl_term", "bound_main", "bound_cheap", "bound_preact_pct", "bound_preact_median",
        "log_bound_main", "neyshabur18", "bartlett17",
    ]);
    let rows = rows_raw
        .iter()
        .map(|(d, s, v)| {
            let mut r = vec![d.to_string(), s.to_string()];
            r.extend(v.iter().map(|&x| fmt_f64(x)));
            r
        })
        .collect();
    let finite: Vec<(f64, f64)> = rows_raw.iter().filter(|r| r.2[14].is_finite()).map(|r| (r.0 as f64, r.2[14])).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = finite.iter().copied().unzip();
    let fitted = if xs.len() >= 2 { slope(&xs, &ys) } else { f64::NAN };
    let variants_ok = rows_raw
        .iter()
        .filter(|r| r.2[10].is_finite())
        .all(|r| !(r.2[12] > r.2[10]) && !(r.2[13] > r.2[10]));
    let summary = json!({
        "depths": p.depths,
        "log_bound_slope": fitted,
        "finite_points": finite.len(),
        "mean_log_bound": p.depths.iter().map(|&d| {
            let v: Vec<f64> = finite.iter().filter(|f| f.0 == d as f64).map(|f| f.1).collect();
            if v.is_empty() { f64::NAN } else { mean(&v) }
        }).collect::<Vec<_>>(),
    });
    let checks = vec![
        check("log_bound_increases_with_depth", fitted > 0.0, format!("slope {fitted}")),
        check("preact_variants_not_above_main", variants_ok, "pct and median <= main wherever main is finite".into()),
    ];
    let plot = Plot {
        title: "Bound vs depth".into(),
        x_label: "depth".into(),
        y_label: "log bound".into(),
        kind: PlotKind::Scatter,
        points: finite,
        diagonal: false,
    };
    Ok(Outcome { header: cols, rows, summary, plots: vec![("bound_vs_depth".into(), plot)], checks })
}

fn margin_gap(p: &config::MarginGap, ctx: &Context) -> Result<Outcome, CliError> {
    let jobs = p.seeds * p.ms.len();
    let points = run_indexed(jobs, ctx.threads, |j| -> Result<(usize, usize, [f64; 5]), CliError> {
        let (s, m) = (j / p.ms.len(), p.ms[j % p.ms.len()]);
        let seed = derive_seed(ctx.seed, s as u64);
        let pool = load_pool(&p.data, &ctx.base, seed)?;
        let split = Split::new(pool.len(), p.test_size, seed);
        let train = noisy(split.train(&pool, m)?, p.label_noise, seed)?;
        let test = split.test(&pool)?;
        let (net, _) = fit(&widths(&train, &p.hidden), &train, &seeded(&p.train, seed))?;
        let tr = mean(&net.margins(train.inputs(), train.labels())?);
        let te = mean(&net.margins(test.inputs(), test.labels())?);
        Ok((m, s, [tr, te, tr - te, error(&net, &train)?, error(&net, &test)?]))
    })?;
    let cols = header(&["m", "seed", "mean_train_margin", "mean_test_margin", "gap", "train_error", "test_error"]);
    let rows = points
        .iter()
        .map(|(m, s, v)| {
            let mut r = vec![m.to_string(), s.to_string()];
            r.extend(v.iter().map(|&x| fmt_f64(x)));
            r
        })
        .collect();
    let ms_f: Vec<f64> = p.ms.iter().map(|&m| m as f64).collect();
    let gaps = means_by_m(&p.ms, &points.iter().map(|r| (r.0, r.2[2])).collect::<Vec<_>>());
    let rho = spearman(&ms_f, &gaps);
    let interpolating_ok = points.iter().filter(|r| r.2[3] == 0.0).all(|r| r.2[2] >= 0.0);
    let summary = json!({ "ms": p.ms, "mean_gap": gaps, "spearman_gap": rho });
    let checks = vec![
        check("gap_nonnegative_when_interpolating", interpolating_ok, "runs with zero training error".into()),
        check("gap_falls_with_m", rho <= -0.8, format!("spearman {rho}")),
    ];
    let plot = Plot {
        title: "Train-test margin gap vs training set size".into(),
        x_label: "m".into(),
        y_label: "mean margin gap".into(),
        kind: PlotKind::Line,
        points: ms_f.into_iter().zip(gaps).collect(),
        diagonal: false,
    };
    Ok(Outcome { header: cols, rows, summary, plots: vec![("margin_gap".into(), plot)], checks })
}

fn interp(p: &config::Interp, ctx: &Context) -> Result<Outcome, CliError> {
    let pool = load_pool(&p.data, &ctx.base, ctx.seed)?;
    let split = Split::new(pool.len(), p.test_size, ctx.seed);
    let train = split.train(&pool, p.m)?;
    let test = split.test(&pool)?;
    let pair = make_run_pair(&widths(&train, &p.hidden), &train, &seeded(&p.train, ctx.seed), p.mode)?;
    let on_train = interpolate_error(&pair.nets[0], &pair.nets[1], &train, p.steps)?;
    let on_test = interpolate_error(&pair.nets[0], &pair.nets[1], &test, p.steps)?;
    let rows: Vec<Vec<String>> = on_train
        .iter()
        .zip(&on_test)
        .map(|(a, b)| vec![fmt_f64(a.0), fmt_f64(a.1), fmt_f64(b.1)])
        .collect();
    let barrier = on_test
        .iter()
        .map(|&(t, e)| e - ((1.0 - t) * on_test[0].1 + t * on_test[on_test.len() - 1].1))
        .fold(f64::NEG_INFINITY, f64::max);
    let endpoints_ok = on_test[0].1 == error(&pair.nets[0], &test)? && on_test[on_test.len() - 1].1 == error(&pair.nets[1], &test)?;
    let summary = json!({ "mode": p.mode, "test_error_barrier": barrier, "endpoint_test_errors": [on_test[0].1, on_test[on_test.len() - 1].1] });
    let plot = Plot {
        title: "Test error along the linear path between two solutions".into(),
        x_label: "t".into(),
        y_label: "test error".into(),
        kind: PlotKind::Line,
        points: on_test,
        diagonal: false,
    };
    Ok(Outcome {
        header: header(&["t", "train_error", "test_error"]),
        rows,
        summary,
        plots: vec![("interp".into(), plot)],
        checks: vec![check("endpoints_match_runs", endpoints_ok, "t = 0 and t = 1 reproduce the two networks".into())],
    })
}

fn ucfail_summary(r: &UcfailReport) -> Value {
    json!({
        "conditions_met": r.conditions_met,
        "warning": r.warning,
        "mean_test_error": r.mean_test_error,
        "frac_train_perfect": r.frac_train_perfect,
        "frac_bad_fully_misclassified": r.frac_bad_fully_misclassified,
        "implied_lower_bound": r.implied_lower_bound,
        "frac_test_error_within_eps": r.trials.iter().filter(|t| t.test_error <= r.params.eps).count() as f64 / r.trials.len() as f64,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, fmt_f64)
}

fn ucfail_closed_form(scenario: &UcfailScenario, params: &UcfailParams, ctx: &Context, margin_col: &str) -> Result<Outcome, CliError> {
    let r = ucfail_report(scenario, params, &mut Rng::new(ctx.seed))?;
    let rows = r
        .trials
        .iter()
        .map(|t| {
            vec![
                t.trial.to_string(),
                t.seed.to_string(),
                fmt_f64(t.train_error),
                fmt_f64(t.test_error),
                fmt_f64(t.bad_error),
                opt(t.min_train_margin.or(t.min_train_log_margin)),
            ]
        })
        .collect();
    let within = r.trials.iter().filter(|t| t.test_error <= params.eps).count() as f64 / r.trials.len() as f64;
    let checks = vec![
        check("test_error_within_eps", within >= 1.0 - params.delta, format!("{within} of trials")),
        check("train_error_zero", r.frac_train_perfect == 1.0, format!("{} of trials", r.frac_train_perfect)),
        check("bad_dataset_fully_misclassified", r.frac_bad_fully_misclassified == 1.0, format!("{} of trials", r.frac_bad_fully_misclassified)),
        check(
            "lower_bound_at_least_one_minus_eps",
            r.implied_lower_bound >= 1.0 - params.eps,
            format!("{} vs {}", r.implied_lower_bound, 1.0 - params.eps),
        ),
    ];
    Ok(Outcome {
        header: header(&["trial", "seed", "train_error", "test_error", "bad_error", margin_col]),
        rows,
        summary: ucfail_summary(&r),
        plots: vec![],
        checks,
    })
}

fn ucfail_hypersphere(p: &config::UcfailHypersphere, ctx: &Context) -> Result<Outcome, CliError> {
    let reports = run_indexed(p.ms.len(), ctx.threads, |i| -> Result<UcfailReport, CliError> {
        let scenario = UcfailScenario::Hypersphere { dim: p.dim, r_in: p.r_in, r_out: p.r_out, width: p.width, train: p.train.clone() };
        let params = UcfailParams { m: p.ms[i], eps: 0.5, delta: 0.5, trials: p.trials, test_samples: p.test_samples, sampler: Default::default() };
        Ok(ucfail_report(&scenario, &params, &mut Rng::new(derive_seed(ctx.seed, i as u64)))?)
    })?;
    let mut rows = Vec::new();
    let mut per_m = Vec::new();
    let mut checks = Vec::new();
    for (r, &m) in reports.iter().zip(&p.ms) {
        for t in &r.trials {
            rows.push(vec![
                m.to_string(),
                t.trial.to_string(),
                t.seed.to_string(),
                fmt_f64(t.train_error),
                fmt_f64(t.test_error),
                fmt_f64(t.bad_error),
                opt(t.min_train_margin),
                t.epochs.map_or_else(String::new, |e| e.to_string()),
            ]);
        }
        let ratio_ok = r.trials.iter().filter(|t| t.bad_error >= 3.0 * t.test_error).count() as f64 / r.trials.len() as f64;
        checks.push(check(&format!("bad_error_triple_test_error_m{m}"), ratio_ok >= 0.8, format!("{ratio_ok} of trials")));
        per_m.push(json!({
            "m": m,
            "mean_test_error": r.mean_test_error,
            "mean_bad_error": mean(&r.trials.iter().map(|t| t.bad_error).collect::<Vec<_>>()),
            "frac_bad_at_least_triple_test": ratio_ok,
            "frac_train_perfect": r.frac_train_perfect,
        }));
    }
    let tests: Vec<f64> = reports.iter().map(|r| r.mean_test_error).collect();
    let falling = tests.windows(2).all(|w| w[1] < w[0]);
    checks.push(check("test_error_falls_with_m", falling, format!("{tests:?}")));
    Ok(Outcome {
        header: header(&["m", "trial", "seed", "train_error", "test_error", "bad_error", "min_train_margin", "epochs"]),
        rows,
        summary: json!({ "per_m": per_m }),
        plots: vec![],
        checks,
    })
}

fn mode_name(mode: StochasticityMode) -> String {
    serde_json::to_value(mode).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn gde(p: &config::GdeScatter, ctx: &Context) -> Result<Outcome, CliError> {
    let pool = load_pool(&p.data, &ctx.base, ctx.seed)?;
    let split = Split::new(pool.len(), p.test_size, ctx.seed);
    let train = split.train(&pool, p.m)?;
    let test = split.test(&pool)?;
    let w = widths(&train, &p.hidden);
    let jobs = p.modes.len() * p.pairs_per_mode;
    let preds = run_indexed(jobs, ctx.threads, |j| -> Result<PairPredictions, CliError> {
        let mode = p.modes[j / p.pairs_per_mode];
        let cfg = seeded(&p.train, derive_seed(ctx.seed, j as u64));
        let pair = make_run_pair(&w, &train, &cfg, mode)?;
        Ok(PairPredictions::from_run_pair(mode, &pair, &test)?)
    })?;
    let scatter = gde_scatter(&preds)?;
    let in_band = |r: &genlab::gde::ScatterRow| {
        r.disagreement > 0.0 && r.test_error >= (1.0 - p.band) * r.disagreement && r.test_error <= (1.0 + p.band) * r.disagreement
    };
    let rows = scatter
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                (i % p.pairs_per_mode).to_string(),
                mode_name(r.mode),
                fmt_f64(r.disagreement),
                fmt_f64(r.test_error),
                fmt_f64(r.test_error_a),
                fmt_f64(r.test_error_b),
                (in_band(r) as u8).to_string(),
            ]
        })
        .collect();
    let mut modes = Vec::new();
    let mut checks = Vec::new();
    for (mi, &mode) in p.modes.iter().enumerate() {
        let block = &scatter[mi * p.pairs_per_mode..(mi + 1) * p.pairs_per_mode];
        let frac = block.iter().filter(|r| in_band(r)).count() as f64 / block.len() as f64;
        let members = &preds[mi * p.pairs_per_mode..(mi + 1) * p.pairs_per_mode];
        let table_preds: Vec<Vec<i64>> = members
            .iter()
            .flat_map(|pp| [&pp.a, &pp.b])
            .map(|v| v.iter().map(|&c| c as i64).collect())
            .collect();
        let labels: Vec<i64> = members[0].labels.iter().map(|&c| c as i64).collect();
        let table = PredictionTable::new(table_preds, Some(labels), test.space().num_classes())?;
        let report = gde_report(&table, Binning::Uniform { bins: p.bins }, 0.0)?;
        modes.push(json!({
            "mode": mode,
            "mean_disagreement": mean(&block.iter().map(|r| r.disagreement).collect::<Vec<_>>()),
            "mean_test_error": mean(&block.iter().map(|r| r.test_error).collect::<Vec<_>>()),
            "frac_in_band": frac,
            "ensemble": {
                "models": table.models(),
                "ete": report.ete,
                "edr": report.edr,
                "gap": report.gap,
                "cace": report.cace,
                "ece": report.ece,
                "deviation_verdict": report.deviation_verdict,
            },
        }));
        if mode != StochasticityMode::Identical {
            checks.push(check(&format!("gde_band_{}", mode_name(mode)), frac >= 0.8, format!("{frac} of pairs in band")));
        }
    }
    let plot = Plot {
        title: "Disagreement vs test error".into(),
        x_label: "disagreement".into(),
        y_label: "test error".into(),
        kind: PlotKind::Scatter,
        points: scatter.iter().map(|r| (r.disagreement, r.test_error)).collect(),
        diagonal: true,
    };
    Ok(Outcome {
        header: header(&["pair", "mode", "disagreement", "test_error", "test_error_a", "test_error_b", "in_band"]),
        rows,
        summary: json!({ "band": p.band, "modes": modes }),
        plots: vec![("gde_scatter".into(), plot)],
        checks,
    })
}
