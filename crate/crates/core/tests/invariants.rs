use std::process::Command;

use lossy_dispersion::codebook::{
    converse_rate_bound, coverage, exact_min_code, greedy_cover_code, type_union_code, type_union_delta_r, CoverageMode,
};
use lossy_dispersion::dispersion::{dispersion_report, rel_gap, DispersionOptions};
use lossy_dispersion::{DiscreteSource, DistortionSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn three_routes_agree_on_general_measures() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let opts = DispersionOptions::default();
    let mut checked = 0;
    while checked < 6 {
        let l = 3;
        let raw: Vec<f64> = (0..l).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let matrix: Vec<Vec<f64>> = (0..l)
            .map(|x| {
                (0..l)
                    .map(|y| if x == y { 0.0 } else { rng.random_range(0.3..1.5) })
                    .collect()
            })
            .collect();
        let s = DiscreteSource::new(&p).unwrap();
        let dist = DistortionSpec::general(&matrix).unwrap();
        let d = dist.d_trivial(s.probs()) * rng.random_range(0.15..0.85);
        let r = dispersion_report(&s, &dist, d, &opts).unwrap();
        if r.jump_suspected || r.exponent_jump {
            continue;
        }
        checked += 1;
        assert!(
            rel_gap(r.v_derivative, r.v_tilted) <= 1e-3,
            "{p:?} {matrix:?} {d}: {r:?}"
        );
        let ve = r.v_exponent.unwrap();
        assert!(rel_gap(ve, r.v_tilted) <= 5e-2, "{p:?} {matrix:?} {d}: {r:?}");
    }
}

#[test]
fn code_rates_are_ordered() {
    let ham = DistortionSpec::hamming(2).unwrap();
    let mut compared = 0;
    for p in [0.3, 0.4] {
        let s = DiscreteSource::new(&[p, 1.0 - p]).unwrap();
        for n in 2..=4 {
            for (d, eps) in [(0.25, 0.1), (0.5, 0.2), (0.0, 0.3)] {
                let lo = converse_rate_bound(&s, &ham, n, d, eps).unwrap();
                let exact = exact_min_code(&s, &ham, n, d, eps).unwrap();
                let greedy = greedy_cover_code(&s, &ham, n, d, eps).unwrap();
                let dr = if d > 0.0 {
                    type_union_delta_r(&s, &ham, n, d, eps).unwrap()
                } else {
                    f64::INFINITY
                };
                let union = type_union_code(&s, &ham, n, d, dr).unwrap();
                let cov = coverage(&s, &ham, &union, d, CoverageMode::Exact).unwrap();
                assert!(lo <= exact.rate() + 1e-12);
                assert!(exact.rate() <= greedy.rate() + 1e-12);
                // the union competes only when it meets the target; at tiny n the
                // mass outside the type neighbourhood can exceed eps
                if cov.covered_probability >= 1.0 - eps - 1e-12 {
                    compared += 1;
                    assert!(greedy.rate() <= union.rate() + 1e-12, "p={p} n={n} D={d}");
                }
            }
        }
    }
    assert!(compared > 0);
}

#[test]
fn cli_reports_errors_on_stderr() {
    let exe = env!("CARGO_BIN_EXE_lossy-dispersion");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("bad.json");
    std::fs::write(&src, r#"{"probs":[0.0,1.0],"distortion":{"kind":"hamming"}}"#).unwrap();
    let out = Command::new(exe)
        .args(["rdf", "--source", src.to_str().unwrap(), "-D", "0.1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.starts_with("error: invalid input"), "{msg}");
    assert!(out.stdout.is_empty());

    let out = Command::new(exe).args(["gaussian", "--var", "1"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_curve_schema() {
    let exe = env!("CARGO_BIN_EXE_lossy-dispersion");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("s.json");
    std::fs::write(&src, r#"{"probs":[0.2,0.8]}"#).unwrap();
    let out = Command::new(exe)
        .args([
            "curve",
            "--source",
            src.to_str().unwrap(),
            "--distortion",
            "hamming",
            "-D",
            "0.05",
        ])
        .args(["--eps", "0.05", "--nmin", "100", "--nmax", "1000", "--oracle", "--bits"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "#schema=1");
    assert_eq!(lines[1], "n,r_normal_bits,r_oracle_bits,be_halfwidth_bits,eps");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("100,"));
}
