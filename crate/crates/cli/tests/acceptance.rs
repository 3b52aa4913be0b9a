//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! to the real stdout, so the lines show up without `--nocapture`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use noisyrd::asymptotics::{excess_prob_gaussian, f_theta, theta_tilde_from, zeta_from, DEFAULT_C0};
use noisyrd::bounds::{
    default_gamma, expected_pi_mc, lemma3_bound, lemma3_relaxed_bound, pi_brute_force, pi_exact, BoundMethod,
};
use noisyrd::model::d_min_max;
use noisyrd::rd::solve_for_distortion;
use noisyrd::rng::stream_rng;
use noisyrd::verify::verify_suite;
use noisyrd::{presets, validate_model, SourceModel};

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n}: {verdict} {detail}").unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {n}: {detail}");
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn noisyrd(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_noisyrd")).args(args).output().expect("spawn noisyrd");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

struct SimRow {
    k: u64,
    excess: f64,
    half_width: f64,
    trials: u64,
}

fn sim_rows(csv: &[u8]) -> Vec<SimRow> {
    let text = std::str::from_utf8(csv).unwrap();
    let mut lines = text.lines().skip(1);
    assert_eq!(lines.next(), Some("k,M_log_nats,d_s,d_x,excess_prob,half_width,trials,seed"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            SimRow {
                k: f[0].parse().unwrap(),
                excess: f[4].parse().unwrap(),
                half_width: f[5].parse().unwrap(),
                trials: f[6].parse().unwrap(),
            }
        })
        .collect()
}

fn summarize(rows: &[SimRow]) -> String {
    rows.iter()
        .map(|r| format!("k={} {:.5}+-{:.5}", r.k, r.excess, r.half_width))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Flagship simulation: every point within `eps + 3 hw` and nonincreasing in k.
fn flagship(n: u32, config: &str, eps: f64) {
    let start = Instant::now();
    let cfg = root().join(config);
    let rows = sim_rows(&noisyrd(&["simulate", "--config", cfg.to_str().unwrap()]));
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), [32, 64, 128]);
    let within = rows.iter().all(|r| r.excess <= eps + 3.0 * r.half_width);
    let monotone = rows.windows(2).all(|w| w[1].excess <= w[0].excess);
    let enough = rows.iter().all(|r| r.trials >= 100_000);

    // Same run with one extra ln k in log M, for context only.
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(&cfg).unwrap();
    let rel = text.lines().find_map(|l| l.strip_prefix("model = ")).unwrap().trim_matches('"');
    let model = cfg.parent().unwrap().join(rel);
    let with_log = text
        .replacen(&format!("\"{rel}\""), &format!("{:?}", model.to_str().unwrap()), 1)
        .replace("epsilon = 0.1 }", "epsilon = 0.1, logk_coeff = 1.0 }");
    let alt = dir.path().join("alt.toml");
    fs::write(&alt, with_log).unwrap();
    let alt_rows = sim_rows(&noisyrd(&["simulate", "--config", alt.to_str().unwrap()]));

    report(
        n,
        within && monotone && enough,
        &format!(
            "[{}] within eps+3hw: {within}, nonincreasing: {monotone}, {elapsed:.1}s; with +ln k: [{}]",
            summarize(&rows),
            summarize(&alt_rows)
        ),
    );
}

#[test]
fn criterion_1_binary_oracle() {
    let start = Instant::now();
    let m = presets::bes();
    let mut worst_rate = 0.0_f64;
    let mut worst_lambda = 0.0_f64;
    for i in 0..10 {
        let d_s = 0.15 + 0.05 * i as f64;
        let s = solve_for_distortion(&m, d_s).unwrap();
        let d = d_s - 0.125;
        let h = -d * d.ln() - (1.0 - d) * (1.0 - d).ln();
        worst_rate = worst_rate.max((s.rate - (std::f64::consts::LN_2 - h)).abs());
        worst_lambda = worst_lambda.max((s.lambda_s - ((1.0 - d) / d).ln()).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        worst_rate <= 1e-6 && worst_lambda <= 1e-5 && secs < 5.0,
        &format!("max rate error {worst_rate:.2e}, max multiplier error {worst_lambda:.2e}, {secs:.2}s"),
    );
}

#[test]
fn criterion_2_identity_suite() {
    let start = Instant::now();
    let cases: [(&str, SourceModel, Option<f64>); 3] = [
        ("bes", presets::bes(), Some(0.3)),
        ("bes_asym", presets::bes_with_px(0.3), Some(0.3)),
        ("quaternary", presets::quaternary(), None),
    ];
    let mut worst = (0.0_f64, String::new());
    let mut count = 0;
    for (name, m, d_x) in cases {
        let (lo, hi) = d_min_max(&m);
        for frac in [0.2, 0.5, 0.8] {
            let d_s = lo + frac * (hi - lo);
            let r = verify_suite(&m, d_s, d_x).unwrap();
            for c in &r.checks {
                count += 1;
                if !c.pass || c.residual > worst.0 {
                    worst = (worst.0.max(c.residual), format!("{name} d_s={d_s:.4} {}", c.name));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        worst.0 <= 1e-9 && secs < 30.0,
        &format!("{count} checks, worst residual {:.2e} ({}), {secs:.1}s", worst.0, worst.1),
    );
}

#[test]
fn criterion_3_pi_oracle() {
    let m = presets::bes();
    let mut rng = stream_rng(3, 0);
    let mut mismatches = 0;
    for _ in 0..100 {
        let k = rng.random_range(1..=8);
        let x: Vec<usize> = (0..k).map(|_| rng.random_range(0..2)).collect();
        let z: Vec<usize> = (0..k).map(|_| rng.random_range(0..2)).collect();
        let d = rng.random_range(0.0..1.2);
        if pi_exact(&m, &x, &z, d).unwrap() != pi_brute_force(&m, &x, &z, d).unwrap() {
            mismatches += 1;
        }
    }
    report(3, mismatches == 0, &format!("{mismatches} of 100 pairs differ"));
}

#[test]
fn criterion_4_berry_esseen() {
    let mut rng = stream_rng(4, 0);
    let mut tested = 0;
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for (m, d) in [(presets::bes(), 0.375), (presets::wide_noise(), 0.51), (presets::quaternary(), 0.2)] {
        for k in [8usize, 16, 32] {
            for _ in 0..50 {
                let x: Vec<usize> = (0..k).map(|_| rng.random_range(0..m.nx())).collect();
                let z: Vec<usize> = (0..k).map(|_| rng.random_range(0..m.nz())).collect();
                let exact = pi_exact(&m, &x, &z, d).unwrap();
                let (est, hw) = excess_prob_gaussian(&m, &x, &z, d, DEFAULT_C0).unwrap();
                tested += 1;
                if (exact - est).abs() > hw {
                    violations += 1;
                }
                tightest = tightest.min(hw - (exact - est).abs());
            }
        }
    }
    report(
        4,
        violations == 0,
        &format!("{violations} violations in {tested} sequences, smallest slack {tightest:.3e}"),
    );
}

#[test]
fn criterion_5_theta_root() {
    let mut worst = 0.0_f64;
    let mut valid = 0;
    let mut skipped = 0;
    for (m, d_s) in [(presets::wide_noise(), 0.505), (presets::wide_noise(), 0.51), (presets::bes(), 0.375)] {
        let mo = validate_model(&m).unwrap();
        let z = zeta_from(&mo, DEFAULT_C0);
        for k in [100u64, 1_000, 10_000] {
            for t in [0.2, 0.5, 0.9] {
                match theta_tilde_from(&mo, z, d_s, t, k) {
                    Ok(theta) => {
                        let f = f_theta(&mo, z, theta, t, k).unwrap();
                        worst = worst.max((f - (d_s - mo.sigma_w2)).abs());
                        valid += 1;
                    }
                    Err(_) => skipped += 1,
                }
            }
        }
    }
    report(
        5,
        valid > 0 && worst <= 1e-9,
        &format!("{valid} domain-valid points, {skipped} outside the domain, worst residual {worst:.2e}"),
    );
}

#[test]
fn criterion_6_single_constraint_simulation() {
    flagship(6, "configs/bes.toml", 0.1);
}

#[test]
fn criterion_7_joint_simulation() {
    flagship(7, "configs/bes_joint.toml", 0.1);
}

#[test]
fn criterion_8_bound_consistency() {
    let mut notes = Vec::new();
    let mut pass = true;
    for (m, d) in [(presets::bes(), 0.375), (presets::wide_noise(), 0.51)] {
        let s = solve_for_distortion(&m, d).unwrap();
        for k in [16usize, 32, 64] {
            let mc = expected_pi_mc(&m, &s, d, k, 1_000_000, k as u64).unwrap();
            let exact = lemma3_bound(&m, &s, d, k, 1.0, BoundMethod::Exact, 0).unwrap();
            let sampled =
                lemma3_bound(&m, &s, d, k, 1.0, BoundMethod::MonteCarlo { outer: 20_000, inner: 1 }, 7).unwrap();
            for b in [exact, sampled] {
                let ok = (b.value - mc.value).abs() <= b.half_width + mc.half_width;
                pass &= ok;
                if !ok {
                    notes.push(format!("M=1 k={k}: {} vs {}", b.value, mc.value));
                }
            }
        }
    }
    let m = presets::wide_noise();
    let d = 0.51;
    let s = solve_for_distortion(&m, d).unwrap();
    let mut margin = f64::INFINITY;
    for k in [16usize, 32, 64] {
        for size in [1.0, 40.0, 1e3] {
            let r = lemma3_relaxed_bound(&m, &s, d, k, default_gamma(size, k), size, DEFAULT_C0, BoundMethod::Exact, 0)
                .unwrap();
            let slack = r.value - r.direct;
            margin = margin.min(slack);
            if slack < -(r.half_width + r.direct_half_width) {
                pass = false;
                notes.push(format!("relaxed k={k} M={size}: {} < {}", r.value, r.direct));
            }
        }
    }
    notes.push(format!("smallest relaxed-minus-direct {margin:.4}"));
    report(8, pass, &notes.join("; "));
}

#[test]
fn criterion_9_reproducibility() {
    let mut same = true;
    let mut runs = 0;
    for cfg in ["configs/bes.toml", "configs/bes_joint.toml", "configs/quaternary.toml"] {
        let path = root().join(cfg);
        let path = path.to_str().unwrap();
        for cmd in ["verify", "simulate"] {
            let outs: Vec<Vec<u8>> = ["1", "2", "4"]
                .iter()
                .map(|t| noisyrd(&[cmd, "--config", path, "--threads", t]))
                .collect();
            runs += outs.len();
            same &= outs.windows(2).all(|w| w[0] == w[1]);
        }
    }
    report(9, same, &format!("{runs} runs across thread counts 1, 2, 4"));
}
