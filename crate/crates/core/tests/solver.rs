use noisyrd::model::{d_min_max, presets};
use noisyrd::rd::solve_for_distortion;
use noisyrd::verify::verify_suite;
use noisyrd::{Alphabet, Error, NoiseSpec, SourceModel};

/// Binary source with a three-point reproduction grid whose middle column
/// of `exp(-lambda d)` is the average of the outer ones at one multiplier.
fn three_point(p0: f64) -> SourceModel {
    SourceModel::new(
        Alphabet::new(vec![0.0, 1.0]).unwrap(),
        vec![p0, 1.0 - p0],
        vec![0.0, 1.0],
        NoiseSpec::new(vec![-0.5, 0.0, 0.5], vec![0.25, 0.5, 0.25]).unwrap(),
        Alphabet::new(vec![0.0, 0.5, 1.0]).unwrap(),
        None,
    )
    .unwrap()
}

// Critical point of the symmetric model: y = exp(-lambda/4) solves
// y^3 + y^2 + y = 1; the outer vertex is a symmetric channel with crossover
// y^4 / (1 + y^4).
const Y: f64 = 0.5436890126920763;
const LAMBDA_STAR: f64 = 2.4375114537440257;
const D_VERTEX: f64 = 0.20535662239291935;
const R_VERTEX: f64 = 0.41350767596908167;

#[test]
fn linear_stretch_oracle_is_consistent() {
    assert!((Y.powi(3) + Y * Y + Y - 1.0).abs() < 1e-15);
    assert!((-4.0 * Y.ln() - LAMBDA_STAR).abs() < 1e-14);
    // Slope of the chord from the zero-rate point equals the multiplier.
    assert!((R_VERTEX / (0.375 - D_VERTEX) - LAMBDA_STAR).abs() < 1e-12);
}

#[test]
fn linear_stretch_is_time_sharing() {
    let m = three_point(0.5);
    for d in [0.21, 0.25, 0.3, 0.35, 0.37] {
        let s = solve_for_distortion(&m, d).unwrap();
        let expect = R_VERTEX * (0.375 - d) / (0.375 - D_VERTEX);
        assert!((s.rate - expect).abs() < 1e-9, "d={d}: {} vs {expect}", s.rate);
        assert!((s.lambda_s - LAMBDA_STAR).abs() < 1e-9);
        assert!((s.d_s_achieved - d).abs() < 1e-9);
        let r = verify_suite(&m, d, None).unwrap();
        assert!(r.all_pass(), "d={d}: {:?}", r.worst());
    }
}

#[test]
fn asymmetric_linear_stretch_is_affine() {
    let m = three_point(0.2);
    let pts: Vec<_> = [0.215, 0.22, 0.225]
        .iter()
        .map(|&d| (d, solve_for_distortion(&m, d).unwrap()))
        .collect();
    let slope = (pts[2].1.rate - pts[0].1.rate) / (pts[2].0 - pts[0].0);
    let mid = 0.5 * (pts[0].1.rate + pts[2].1.rate);
    assert!((pts[1].1.rate - mid).abs() < 1e-9);
    assert!((slope + pts[1].1.lambda_s).abs() < 1e-7);
}

#[test]
fn multiplier_is_minus_slope() {
    let h = 1e-4;
    for (m, ds) in [
        (presets::bes(), vec![0.2, 0.3, 0.4]),
        (presets::quaternary(), vec![0.18, 0.22, 0.25]),
        (three_point(0.3), vec![0.15, 0.18]),
    ] {
        for d in ds {
            let s = solve_for_distortion(&m, d).unwrap();
            let up = solve_for_distortion(&m, d + h).unwrap().rate;
            let down = solve_for_distortion(&m, d - h).unwrap().rate;
            let fd = (down - up) / (2.0 * h);
            assert!((s.lambda_s - fd).abs() <= 10.0 * h, "d={d}: {} vs {fd}", s.lambda_s);
        }
    }
}

#[test]
fn range_is_open_interval() {
    for m in [presets::bes(), presets::quaternary(), three_point(0.3)] {
        let (lo, hi) = d_min_max(&m);
        for d in [lo, hi, lo - 0.1, hi + 0.1] {
            assert!(matches!(solve_for_distortion(&m, d), Err(Error::OutOfRange { .. })));
        }
        let near_hi = solve_for_distortion(&m, hi - 1e-6).unwrap();
        assert!(near_hi.rate < 1e-3);
        let near_lo = solve_for_distortion(&m, lo + 1e-4).unwrap();
        assert!(near_lo.rate > near_hi.rate);
    }
}
