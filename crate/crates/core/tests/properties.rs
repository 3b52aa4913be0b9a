use proptest::prelude::*;

use noisyrd::bounds::{pi_brute_force, pi_exact, PiEvaluator};
use noisyrd::model::{d_min_max, presets};
use noisyrd::rd::{ba_fixed_multiplier, generalized_rd, solve_for_distortion};
use noisyrd::simulator::{encode, Codebook, Encoder};
use noisyrd::tilted::{dispersion, TiltedContext};
use noisyrd::{Alphabet, NoiseSpec, SourceModel};

fn binary_model(p0: f64, shift: f64) -> SourceModel {
    SourceModel::new(
        Alphabet::new(vec![0.0, 1.0]).unwrap(),
        vec![p0, 1.0 - p0],
        vec![shift, 1.0 + shift],
        NoiseSpec::new(vec![-0.5, 0.0, 0.5], vec![0.25, 0.5, 0.25]).unwrap(),
        Alphabet::new(vec![shift, 0.5 + shift, 1.0 + shift]).unwrap(),
        None,
    )
    .unwrap()
}

fn seq(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..n, k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pi_matches_brute_force(k in 1usize..=6, xs in seq(2, 6), zs in seq(2, 6), d in 0.1f64..0.9) {
        let m = presets::bes();
        let (x, z) = (&xs[..k], &zs[..k]);
        prop_assert_eq!(pi_exact(&m, x, z, d).unwrap(), pi_brute_force(&m, x, z, d).unwrap());
    }

    #[test]
    fn pi_is_monotone_in_level(xs in seq(4, 8), zs in seq(3, 8), d in 0.1f64..0.5, gap in 0.0f64..0.3) {
        let m = presets::quaternary();
        let a = pi_exact(&m, &xs, &zs, d).unwrap();
        let b = pi_exact(&m, &xs, &zs, d + gap).unwrap();
        prop_assert!(b <= a + 1e-15);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn evaluator_is_order_free(xs in seq(4, 7), zs in seq(3, 7), rot in 0usize..7) {
        let m = presets::quaternary();
        let ev = PiEvaluator::new(&m, 7, 0.3);
        let mut xr = xs.clone();
        let mut zr = zs.clone();
        xr.rotate_left(rot);
        zr.rotate_left(rot);
        prop_assert_eq!(ev.pi(&xs, &zs).unwrap(), ev.pi(&xr, &zr).unwrap());
    }

    #[test]
    fn lagrangian_monotonicity(p0 in 0.2f64..0.8, l in 0.1f64..6.0, dl in 0.01f64..2.0) {
        let m = binary_model(p0, 0.0);
        let a = ba_fixed_multiplier(&m, l).unwrap();
        let b = ba_fixed_multiplier(&m, l + dl).unwrap();
        prop_assert!(b.d_s_achieved <= a.d_s_achieved + 1e-9);
        prop_assert!(b.rate >= a.rate - 1e-9);
        let law = a.kernel.output_law(m.p_x());
        for (u, v) in law.iter().zip(&a.marginal) {
            prop_assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn generalized_dominates(p0 in 0.2f64..0.8, frac in 0.1f64..0.9, q0 in 0.05f64..0.9, q1 in 0.05f64..0.9) {
        let m = binary_model(p0, 0.0);
        let (lo, hi) = d_min_max(&m);
        let d = lo + frac * (hi - lo);
        let best = solve_for_distortion(&m, d).unwrap();
        let total = q0 + q1 + 0.1;
        let p_y = [q0 / total, 0.1 / total, q1 / total];
        if let Ok(g) = generalized_rd(&m, &p_y, d) {
            prop_assert!(g.rate >= best.rate - 1e-8);
        }
        let own = generalized_rd(&m, &best.marginal, d).unwrap();
        prop_assert!((own.rate - best.rate).abs() < 1e-8);
    }

    #[test]
    fn dispersion_order(p0 in 0.15f64..0.85, frac in 0.1f64..0.9) {
        let m = binary_model(p0, 0.0);
        let (lo, hi) = d_min_max(&m);
        let d = lo + frac * (hi - lo);
        let s = solve_for_distortion(&m, d).unwrap();
        let rep = dispersion(&TiltedContext::new(&m, &s, d, None).unwrap());
        prop_assert!(rep.v_tilde >= rep.v_direct - 1e-12);
        prop_assert!(rep.v_direct >= -1e-15);
        prop_assert!(rep.identity_residual <= 1e-9);
    }

    #[test]
    fn surrogate_argmin_is_shift_invariant(shift in -3.0f64..3.0, xs in seq(2, 6), seed in 0u64..1000) {
        let base = binary_model(0.5, 0.0);
        let moved = binary_model(0.5, shift);
        let s = solve_for_distortion(&base, 0.3).unwrap();
        let book = noisyrd::simulator::sample_codebook(&s, 6, 40, seed).unwrap();
        let entries: Vec<Vec<usize>> = (0..book.m()).map(|i| book.entry(i)).collect();
        let b = Codebook::from_entries(&entries, 3, None, 1.0, 0.0).unwrap();
        prop_assert_eq!(
            encode(&base, &b, &xs, Encoder::MinSurrogate).unwrap(),
            encode(&moved, &b, &xs, Encoder::MinSurrogate).unwrap()
        );
    }
}
