use noisyrd::model::presets;
use noisyrd::rd::{ba_fixed_multiplier, lift_to_joint, solve_for_distortion};
use noisyrd::simulator::{
    encode, ensemble_excess, estimate_excess, estimate_excess_joint, sample_codebook, Codebook,
    Encoder,
};

#[test]
fn single_symbol_codebooks_follow_marginal() {
    // chi-square critical values at p = 0.001
    let critical = [10.828, 13.816, 16.266];
    for (m, d) in [(presets::bes(), 0.375), (presets::quaternary(), 0.2)] {
        let sol = solve_for_distortion(&m, d).unwrap();
        let n = 100_000u64;
        let mut counts = vec![0u64; sol.marginal.len()];
        for seed in 0..n {
            counts[sol_entry(&sol, seed)] += 1;
        }
        let mut chi2 = 0.0;
        let mut cells = 0;
        for (c, &q) in counts.iter().zip(&sol.marginal) {
            if q == 0.0 {
                assert_eq!(*c, 0);
                continue;
            }
            let e = q * n as f64;
            chi2 += (*c as f64 - e).powi(2) / e;
            cells += 1;
        }
        assert!(chi2 < critical[cells - 2], "chi2 = {chi2} with {cells} cells");
    }
}

fn sol_entry(sol: &noisyrd::RDSolution, seed: u64) -> usize {
    sample_codebook(sol, 1, 1, seed).unwrap().entry(0)[0]
}

#[test]
fn point_mass_marginal_gives_constant_code() {
    let m = presets::quaternary();
    let sol = ba_fixed_multiplier(&m, 0.0).unwrap();
    let book = sample_codebook(&sol, 7, 50, 4).unwrap();
    let first = book.entry(0);
    assert!(first.iter().all(|&s| s == first[0]));
    assert!((0..50).all(|i| book.entry(i) == first));
}

#[test]
fn encoder_basics() {
    let m = presets::quaternary();
    // phi = (0, 1, 0.2, 0.8); S_hat = {0, 0.5, 1}
    let x = [0, 1, 0];
    let exact = vec![0, 2, 0];
    let book = Codebook::from_entries(&[vec![1, 1, 1], exact.clone(), vec![2, 0, 2]], 3, None, 1.0, 0.0).unwrap();
    assert_eq!(encode(&m, &book, &x, Encoder::MinSurrogate).unwrap(), 1);
    let one = Codebook::from_entries(&[vec![1, 1, 1]], 3, None, 1.0, 0.0).unwrap();
    assert_eq!(encode(&m, &one, &x, Encoder::MinSurrogate).unwrap(), 0);
    let twins = Codebook::from_entries(&[vec![2, 2, 2], exact.clone(), exact], 3, None, 1.0, 0.0).unwrap();
    assert_eq!(encode(&m, &twins, &x, Encoder::MinSurrogate).unwrap(), 1);
}

#[test]
fn unreachable_level_never_exceeds() {
    let m = presets::bes();
    let sol = solve_for_distortion(&m, 0.375).unwrap();
    let book = sample_codebook(&sol, 10, 8, 1).unwrap();
    let r = estimate_excess(&m, &book, 2.5, 5000, 2, Encoder::MinSurrogate).unwrap();
    assert_eq!(r.excess_prob, 0.0);
}

#[test]
fn excess_is_stochastically_monotone_in_size() {
    let m = presets::bes();
    let sol = solve_for_distortion(&m, 0.375).unwrap();
    let mut prev: Option<(f64, f64)> = None;
    let mut first = None;
    for e in 4..=12 {
        // codebooks with one seed are nested, and trials share their seeds
        let book = sample_codebook(&sol, 8, 1 << e, 77).unwrap();
        let r = estimate_excess(&m, &book, 0.375, 20_000, 5, Encoder::MinSurrogate).unwrap();
        if let Some((p, hw)) = prev {
            assert!(r.excess_prob <= p + hw + r.half_width, "M = 2^{e}");
        }
        first.get_or_insert(r.excess_prob);
        prev = Some((r.excess_prob, r.half_width));
    }
    assert!(prev.unwrap().0 < first.unwrap());
}

#[test]
fn rates_around_the_limit() {
    let m = presets::bes();
    let sol = solve_for_distortion(&m, 0.375).unwrap();
    let margin = 0.05;
    let run = |k: usize, r: f64| {
        ensemble_excess(&m, &sol, 0.375, None, k, (k as f64 * r).exp(), 4000, 3)
            .unwrap()
            .excess_prob
    };
    let below: Vec<f64> = [64, 128, 256].iter().map(|&k| run(k, sol.rate - margin)).collect();
    let above: Vec<f64> = [64, 128, 256].iter().map(|&k| run(k, sol.rate + margin)).collect();
    assert!(below.windows(2).all(|w| w[1] >= w[0]), "{below:?}");
    assert!(above.windows(2).all(|w| w[1] <= w[0]), "{above:?}");
    assert!(below[2] > 0.95 && above[2] < 0.1, "{below:?} {above:?}");
}

#[test]
fn joint_single_bad_pair() {
    let m = presets::bes();
    let joint = lift_to_joint(&m, &solve_for_distortion(&m, 0.375).unwrap()).unwrap();
    // pair (z = 0, y = 0) for every letter
    let book = Codebook::from_entries(&[vec![0; 64]], 4, Some(2), joint.lambda_s, 0.0).unwrap();
    let r = estimate_excess_joint(&m, &book, 0.375, 0.3, 5000, 8, Encoder::MinSurrogate).unwrap();
    assert!(r.excess_prob > 0.99, "{}", r.excess_prob);
}

#[test]
fn joint_with_loose_observed_level_is_single() {
    let m = presets::bes();
    let sol = solve_for_distortion(&m, 0.375).unwrap();
    let joint = lift_to_joint(&m, &sol).unwrap();
    let book = sample_codebook(&joint, 12, 64, 3).unwrap();
    let zs: Vec<Vec<usize>> = (0..64)
        .map(|i| book.entry(i).iter().map(|&s| book.split(s).0).collect())
        .collect();
    let zbook = Codebook::from_entries(&zs, m.nz(), None, 1.0, 0.0).unwrap();
    let a = estimate_excess_joint(&m, &book, 0.375, 1.0, 20_000, 9, Encoder::MinSurrogate).unwrap();
    let b = estimate_excess(&m, &zbook, 0.375, 20_000, 9, Encoder::MinSurrogate).unwrap();
    assert_eq!(a.hits, b.hits);
}
