//! Independent reference computations shared by the oracle tests and the
//! acceptance suite. Each check returns a one-line summary or the failure.

#![allow(dead_code)]

use std::time::Instant;

use genlab::datagen::{gen_exp, ExpSetup, ScenarioMeta};
use genlab::linalg::{spectral_norm_default, Matrix};
use genlab::network::Mlp;
use genlab::noise::{empirical_perturbations, self_consistent_tolerances};
use genlab::rng::derive_seed;
use genlab::ucfail::{exp_eval, ExpModel};
use genlab::Rng;

pub type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Largest singular value by one-sided Jacobi rotations on the columns.
pub fn jacobi_top_singular(rows: usize, cols: usize, data: &[f64]) -> f64 {
    let mut c: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| data[i * cols + j]).collect()).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = c[p].iter().map(|v| v * v).sum();
                let beta: f64 = c[q].iter().map(|v| v * v).sum();
                let gamma: f64 = c[p].iter().zip(&c[q]).map(|(a, b)| a * b).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..rows {
                    let (a, b) = (c[p][i], c[q][i]);
                    c[p][i] = cs * a - sn * b;
                    c[q][i] = sn * a + cs * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    c.iter().map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

/// Power-iteration spectral norms against the Jacobi oracle on 100 seeded
/// matrices up to 32×32.
pub fn spectral_vs_jacobi() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = Rng::new(derive_seed(0x5FEC, seed));
        let (rows, cols) = (1 + rng.below(32), 1 + rng.below(32));
        let data = rng.normal_vec(rows * cols, 1.0);
        let m = Matrix::from_vec(rows, cols, data.clone()).unwrap();
        let oracle = jacobi_top_singular(rows, cols, &data);
        let got = spectral_norm_default(&m).map_err(|e| e.to_string())?;
        let rel = (got - oracle).abs() / oracle;
        worst = worst.max(rel);
        ensure(rel <= 1e-8, || format!("seed {seed} ({rows}x{cols}): {got} vs {oracle}, rel {rel:e}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.1} s"))?;
    Ok(format!("worst relative error {worst:.1e} in {secs:.2} s"))
}

/// `g^d` as a function of `g^{d'}`, recomputed from the raw weights.
fn propagate(net: &Mlp<f64>, from: usize, to: usize, g: &[f64]) -> Vec<f64> {
    let mut g = g.to_vec();
    for k in from + 1..=to {
        let f: Vec<f64> = g.iter().map(|&v| v.max(0.0)).collect();
        let w = net.weight(k);
        g = (0..w.rows()).map(|i| w.row(i).iter().zip(&f).map(|(a, b)| a * b).sum()).collect();
    }
    g
}

/// Interlayer Jacobians against central differences on 50 random 3-layer
/// nets, skipping inputs within 1e-3 of an activation boundary.
pub fn jacobians_vs_finite_differences() -> Check {
    let start = Instant::now();
    let h = 1e-6;
    let (mut nets, mut seed, mut worst) = (0, 0u64, 0.0f64);
    while nets < 50 {
        seed += 1;
        let mut rng = Rng::new(derive_seed(0xFD, seed));
        let widths: Vec<usize> = (0..4).map(|_| 2 + rng.below(7)).collect();
        let net = Mlp::<f64>::xavier(&widths, 1.0, &mut rng).unwrap();
        let x = rng.normal_vec(widths[0], 1.0);
        let trace = net.forward_trace(&x).unwrap();
        if (1..net.depth()).any(|d| trace.g(d).iter().any(|v| v.abs() < 1e-3)) {
            continue;
        }
        nets += 1;
        let table = net.jacobian_table(&trace).map_err(|e| e.to_string())?;
        for d in 1..=net.depth() {
            for dp in 1..=d {
                let j = table.get(dp, d);
                let g0 = trace.g(dp);
                let mut fd = vec![0.0; j.rows() * j.cols()];
                for c in 0..g0.len() {
                    let (mut up, mut down) = (g0.to_vec(), g0.to_vec());
                    up[c] += h;
                    down[c] -= h;
                    let (a, b) = (propagate(&net, dp, d, &up), propagate(&net, dp, d, &down));
                    for r in 0..a.len() {
                        fd[r * g0.len() + c] = (a[r] - b[r]) / (2.0 * h);
                    }
                }
                let diff: f64 = j.as_slice().iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let norm: f64 = j.as_slice().iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                worst = worst.max(diff / norm);
                ensure(diff <= 1e-6 * norm, || format!("seed {seed}, J^{d}/{dp}: diff {diff:e}, norm {norm:e}"))?;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("worst relative error {worst:.1e} over {nets} nets in {secs:.2} s"))
}

/// Measured deviations under weight noise against the analytic tolerances
/// on 20 random 2-3 layer nets with at most 16 units per layer.
pub fn perturbations_within_tolerances() -> Check {
    let start = Instant::now();
    let delta_hat = 0.05;
    let trials = 200;
    let mut lowest = 1.0f64;
    for seed in 0..20u64 {
        let mut rng = Rng::new(derive_seed(0x4015E, seed));
        let depth = 2 + rng.below(2);
        let widths: Vec<usize> = (0..=depth).map(|_| 2 + rng.below(15)).collect();
        let net = Mlp::<f64>::xavier(&widths, 1.0, &mut rng).unwrap();
        let x = rng.normal_vec(widths[0], 1.0);
        let trace = net.forward_trace(&x).unwrap();
        let mut sigma = 0.05;
        let stats = loop {
            let s = empirical_perturbations(&net, &x, sigma, trials, &mut Rng::new(seed), false).map_err(|e| e.to_string())?;
            if s.trials_with_flips == 0 {
                break s;
            }
            sigma /= 2.0;
            ensure(sigma > 1e-12, || format!("seed {seed}: flips persist"))?;
        };
        let tol = self_consistent_tolerances(&net, &trace, sigma, delta_hat).map_err(|e| e.to_string())?;
        let frac = stats.fraction_within(&tol);
        lowest = lowest.min(frac);
        ensure(frac >= 1.0 - delta_hat, || format!("seed {seed}, sigma {sigma}: {frac} of trials within tolerance"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!("lowest fraction within tolerance {lowest} in {secs:.1} s"))
}

/// `η Σᵢ yᵢ ∫ exp(w·(xᵢ + z)) p(w)² dw` with `p = N(0, I)`, estimated as
/// `E_{w~p}[exp(w·a) p(w)]` from one shared batch of draws.
fn exp_random_feature_mc(model: &ExpModel, z: &[f64], samples: usize, rng: &mut Rng) -> f64 {
    let dim = z.len();
    let a: Vec<Vec<f64>> = model.inputs.iter().map(|x| x.iter().zip(z).map(|(p, q)| p + q).collect()).collect();
    let log_norm = -(dim as f64) / 2.0 * (2.0 * std::f64::consts::PI).ln();
    let mut sums = vec![0.0; a.len()];
    for _ in 0..samples {
        let w = rng.normal_vec(dim, 1.0);
        let log_p = log_norm - w.iter().map(|v| v * v).sum::<f64>() / 2.0;
        for (s, ai) in sums.iter_mut().zip(&a) {
            let dot: f64 = w.iter().zip(ai).map(|(p, q)| p * q).sum();
            *s += (dot + log_p).exp();
        }
    }
    let eta = model.log_eta.exp();
    eta * sums.iter().zip(&model.labels).map(|(s, &y)| y as f64 * s / samples as f64).sum::<f64>()
}

/// Closed-form exponential-kernel outputs against a random-feature Monte
/// Carlo estimate at `2N = 4`, `m = 3`, within 3% in log magnitude.
pub fn exp_closed_form_vs_monte_carlo() -> Check {
    let mut rng = Rng::new(96);
    let train = gen_exp(3, 2, &mut rng).map_err(|e| e.to_string())?;
    let model = ExpModel::new(&train).map_err(|e| e.to_string())?;
    let u = match train.meta() {
        Some(ScenarioMeta::Exp { u, .. }) => u.clone(),
        _ => return Err("missing scenario metadata".into()),
    };
    let test = ExpSetup { n: 2, u }.sample(3, &mut rng).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for z in test.inputs() {
        let closed = exp_eval(&model, z).map_err(|e| e.to_string())?;
        let mc = exp_random_feature_mc(&model, z, 10_000_000, &mut rng);
        ensure(closed.sign as f64 == mc.signum(), || format!("sign differs at {z:?}"))?;
        let err = (mc.abs().ln() - closed.log_magnitude).abs() / closed.log_magnitude.abs().max(1.0);
        worst = worst.max(err);
        ensure(err <= 0.03, || format!("log magnitude {} vs {}", mc.abs().ln(), closed.log_magnitude))?;
    }
    Ok(format!("worst relative log-magnitude error {worst:.2e}"))
}
