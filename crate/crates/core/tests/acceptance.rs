//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line; run with
//! `cargo test --release --test acceptance -- --nocapture --test-threads=1`
//! to see them all.

use std::process::Command;

use approx::relative_eq;
use kernagg::calibrate::{empirical_quantile, AggregationCalibrator, SearchMode, DEFAULT_GRID_STEP};
use kernagg::datagen::{sample_fixed_design, sample_observation, signal_bias_a2, DesignDensity, SignalSpec};
use kernagg::harness::{estimate_level, estimate_power, proportion_ci, Procedure, StudyConfig, StudyReport};
use kernagg::kernels::{gram, KernelCollection, KernelSpec};
use kernagg::procedures::{aggregated_test, single_kernel_test};
use kernagg::rng::{derive_seed, domain};
use kernagg::stats::{null_replicates, sigma_hat_sq, t_stat};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn verdict(id: &str, what: &str, pass: bool, detail: String) {
    println!("{} criterion {id}: {what} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} failed: {what} ({detail})");
}

fn study(n: usize, replicates: usize, b: usize, seed: u64, signal: SignalSpec, procedures: &[&str]) -> StudyConfig {
    let mut c = StudyConfig::new(n, replicates, seed);
    c.b = b;
    c.signal = signal;
    c.procedures = procedures.iter().map(|p| p.parse::<Procedure>().unwrap()).collect();
    c
}

fn p_hats(report: &StudyReport) -> Vec<(String, f64)> {
    report.rows.iter().map(|r| (r.procedure.clone(), r.p_hat)).collect()
}

#[test]
fn c01_level_control_of_default_collections() {
    let config = study(100, 500, 1000, 0xA11CE, SignalSpec::Zero, &["P", "G", "PG"]);
    let rep = estimate_level(&config).unwrap();
    let pass = rep.rows.iter().all(|r| (0.03..=0.07).contains(&r.p_hat));
    verdict("1", "level of P/G/PG in [0.03, 0.07], 500 reps, B = 1000", pass, format!("{:?}", p_hats(&rep)));
}

#[test]
fn c02_power_against_single_jump() {
    let config = study(100, 300, 500, 0xB0B, SignalSpec::jump1(0.25, 1.0).unwrap(), &["P"]);
    let rep = estimate_power(&config).unwrap();
    let p = rep.rows[0].p_hat;
    verdict("2", "power of P against jump1(1/4, 1) >= 0.95, 300 reps, B = 500", p >= 0.95, format!("p_hat = {p}"));
}

#[test]
fn c03_power_against_low_frequency_cosine() {
    let config = study(100, 200, 500, 0xC0FFEE, SignalSpec::cosine_freq(1.0, 1).unwrap(), &["P", "G", "PG"]);
    let rep = estimate_power(&config).unwrap();
    let pass = rep.rows.iter().all(|r| r.p_hat >= 0.97);
    verdict("3", "power of P/G/PG against cosine(rho = 1, j = 1) >= 0.97", pass, format!("{:?}", p_hats(&rep)));
}

#[test]
fn c04_power_is_monotone_in_amplitude() {
    let reps = 500;
    let rhos = [0.0, 0.5, 1.0, 1.5];
    let procedures = ["P", "G", "PG"];
    let mut table = vec![Vec::new(); procedures.len()];
    for (i, &rho) in rhos.iter().enumerate() {
        let config = study(100, reps, 500, 0xD00D + i as u64, SignalSpec::cosine_freq(rho, 6).unwrap(), &procedures);
        let rep = estimate_power(&config).unwrap();
        for (p, row) in rep.rows.iter().enumerate() {
            table[p].push(row.p_hat);
        }
    }
    let nf = reps as f64;
    let se = |p: f64| (p * (1.0 - p) / nf).sqrt();
    let mut pass = true;
    for row in &table {
        for w in row.windows(2) {
            let diff_se = (se(w[0]).powi(2) + se(w[1]).powi(2)).sqrt();
            pass &= w[1] >= w[0] - 2.0 * diff_se;
        }
        let null_se = (0.05 * 0.95 / nf).sqrt();
        pass &= (row[0] - 0.05).abs() <= 3.0 * null_se;
    }
    let detail = procedures
        .iter()
        .zip(&table)
        .map(|(p, r)| format!("{p}: {r:?}"))
        .collect::<Vec<_>>()
        .join("; ");
    verdict("4", "power at j = 6 nondecreasing over rho = 0, 0.5, 1, 1.5 (2 SE), rho = 0 within 3 SE of 0.05", pass, detail);
}

#[test]
fn c05_confidence_intervals_reproduce_printed_values() {
    let printed = [
        (0.876, 0.849, 0.903),
        (0.635, 0.596, 0.674),
        (0.654, 0.615, 0.693),
        (0.35, 0.311, 0.389),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (p, lo, hi) in printed {
        let (l, h) = proportion_ci(p, 1000, 0.99).unwrap();
        pass &= (l - lo).abs() <= 1e-3 && (h - hi).abs() <= 1e-3;
        detail.push(format!("{p} -> [{l:.4}, {h:.4}]"));
    }
    verdict("5", "99% intervals at 1000 reps match printed bounds to 0.001", pass, detail.join(", "));
}

/// Direct sum over ordered pairs.
fn naive_t(k: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += kernagg::kernels::kernel_eval(k, x[i], x[j]).unwrap() * y[i] * y[j];
            }
        }
    }
    s / (n as f64 * (n as f64 - 1.0))
}

/// `inf { t : #{v <= t} / B >= level }` by scanning every sample value.
fn naive_quantile(sample: &[f64], level: f64) -> f64 {
    let b = sample.len() as f64;
    sample
        .iter()
        .copied()
        .filter(|&t| sample.iter().filter(|&&v| v <= t).count() as f64 / b >= level)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn c06_oracle_equivalence() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(606);
    let mut worst = 0.0f64;
    let mut t_pass = true;
    for case in 0..100 {
        let n = rng.random_range(2..=30);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let k = if case % 2 == 0 {
            KernelSpec::haar(rng.random_range(0..=7)).unwrap()
        } else {
            KernelSpec::gaussian(rng.random_range(0.01..1.0)).unwrap()
        };
        let fast = t_stat(&gram(&k, &x).unwrap(), &y).unwrap();
        let slow = naive_t(&k, &x, &y);
        let rel = (fast - slow).abs() / fast.abs().max(slow.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        t_pass &= relative_eq!(fast, slow, epsilon = 0.0, max_relative = 1e-12);
    }

    let mut q_pass = true;
    for case in 0..100 {
        let b = rng.random_range(1..=300);
        // coarse grid so that ties occur
        let sample: Vec<f64> = (0..b).map(|_| (rng.random::<f64>() * 40.0).floor() / 8.0 - 2.0).collect();
        let level = match case % 10 {
            0 => 0.0,
            1 => 1.0,
            2 => 0.95,
            3 => rng.random_range(1..=b) as f64 / b as f64,
            _ => rng.random::<f64>(),
        };
        q_pass &= empirical_quantile(&sample, level).unwrap() == naive_quantile(&sample, level);
    }
    verdict(
        "6",
        "T_K matches the double loop to 1e-12 relative and the quantile matches a naive scan exactly",
        t_pass && q_pass,
        format!("worst T_K relative error {worst:.2e}, quantiles exact: {q_pass}"),
    );
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn c07_variance_estimator_law() {
    let n = 100;
    let draws = 10_000;
    let f4 = SignalSpec::cosine_freq(1.0, 1).unwrap();
    let alt: Vec<f64> = (0..draws)
        .map(|r| sigma_hat_sq(&sample_fixed_design(n, &f4, 1.0, 70_000 + r).unwrap()).unwrap())
        .collect();
    let target = signal_bias_a2(&f4, n).unwrap() + 1.0;
    let (mean, var) = mean_var(&alt);
    let mean_ok = (mean - target).abs() <= 5.0 * (var / draws as f64).sqrt();

    let null: Vec<f64> = (0..draws)
        .map(|r| sigma_hat_sq(&sample_fixed_design(n, &SignalSpec::Zero, 1.0, 80_000 + r).unwrap()).unwrap())
        .collect();
    let (m0, v0) = mean_var(&null);
    let m4 = null.iter().map(|a| (a - m0).powi(4)).sum::<f64>() / draws as f64;
    let var_se = ((m4 - v0 * v0) / draws as f64).sqrt();
    let var_target = 4.0 / n as f64;
    let var_ok = (v0 - var_target).abs() <= 5.0 * var_se;
    verdict(
        "7",
        "mean of sigma_hat^2 within 5 SE of a^2 + sigma^2, null variance within 5 SE of 4 sigma^4 / n",
        mean_ok && var_ok,
        format!("mean {mean:.5} vs {target:.5}; variance {v0:.5} vs {var_target:.5} (SE {var_se:.5})"),
    );
}

#[test]
fn c08_monte_carlo_level_bound() {
    let b = 200;
    let reps = 2000;
    let alpha = 0.05;
    let config = study(100, reps, b, 0x8888, SignalSpec::Zero, &["single:haar:3", "single:gauss:1/8"]);
    let rep = estimate_level(&config).unwrap();
    let bound = (b as f64 * alpha + 1.0) / (b as f64 + 1.0);
    let se = (bound * (1.0 - bound) / reps as f64).sqrt();
    let pass = rep.rows.iter().all(|r| r.p_hat <= bound + 3.0 * se);
    verdict(
        "8",
        "single-kernel null rejection rate <= (B alpha + 1)/(B + 1) + 3 SE, B = 200, 2000 reps",
        pass,
        format!("{:?}, limit {:.4}", p_hats(&rep), bound + 3.0 * se),
    );
}

const TRIALS: u64 = 100;
const BIG_B: usize = 200_000;

#[test]
fn c09a_singleton_collection_agrees_with_single_test() {
    let spec = KernelSpec::haar(2).unwrap();
    let singleton = KernelCollection::singleton(spec, 0.0).unwrap();
    let mut agree = 0;
    for t in 0..TRIALS {
        let sample = sample_observation(100, &SignalSpec::Zero, 1.0, DesignDensity::UniformOn01, 9000 + t).unwrap();
        let seed = derive_seed(t, domain::NULL_MASTER, 9);
        let single = single_kernel_test(&sample, &spec, 0.05, BIG_B, seed).unwrap();
        let agg = aggregated_test(&sample, &singleton, 0.05, BIG_B, seed).unwrap();
        agree += usize::from(single.reject == agg.reject);
    }
    let rate = agree as f64 / TRIALS as f64;
    verdict(
        "9a",
        "singleton w = 0 collection agrees with the single-kernel test on >= 99% of trials, B = 2e5",
        rate >= 0.99,
        format!("agreement {rate}"),
    );
}

#[test]
fn c09b_u_alpha_not_below_alpha() {
    let spec = KernelSpec::haar(2).unwrap();
    let alpha = 0.05;
    let mut feasible = 0;
    let mut below = Vec::new();
    let mut min_u = f64::INFINITY;
    for t in 0..TRIALS {
        let sample = sample_observation(100, &SignalSpec::Zero, 1.0, DesignDensity::UniformOn01, 9000 + t).unwrap();
        let g = gram(&spec, &sample.x).unwrap();
        let null = null_replicates(&[&g], 2 * BIG_B, derive_seed(t, domain::NULL_MASTER, 9)).unwrap();
        let u = AggregationCalibrator::new(&null, &[0.0])
            .unwrap()
            .search(alpha, DEFAULT_GRID_STEP, SearchMode::Binary)
            .unwrap();
        if u.feasible {
            feasible += 1;
            min_u = min_u.min(u.u);
            if u.u < alpha - DEFAULT_GRID_STEP {
                below.push(u.u);
            }
        }
    }
    verdict(
        "9b",
        "u_alpha >= alpha - 2^-16 on every feasible run, singleton w = 0, B = 2e5",
        below.is_empty(),
        format!("{} of {feasible} feasible runs below, smallest u = {min_u:.6}", below.len()),
    );
}

fn cli_csv(command: &str, threads: &str, extra: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_kernagg"))
        .args(["--threads", threads, command, "--seed", "1010", "--replicates", "40", "--B", "200"])
        .args(extra)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn c10_cli_output_independent_of_threads() {
    let level_1 = cli_csv("simulate-level", "1", &[]);
    let level_4 = cli_csv("simulate-level", "4", &[]);
    let power = ["--signal", "cosine:rho=1,j=6", "-p", "P", "-p", "PG", "-p", "single:gauss:1/8", "-p", "el1", "-p", "el2"];
    let power_1 = cli_csv("simulate-power", "1", &power);
    let power_3 = cli_csv("simulate-power", "3", &power);
    let pass = level_1 == level_4 && power_1 == power_3 && !level_1.is_empty();
    verdict(
        "10",
        "study CSV byte-identical across thread counts",
        pass,
        format!("{} and {} bytes compared", level_1.len(), power_1.len()),
    );
}
