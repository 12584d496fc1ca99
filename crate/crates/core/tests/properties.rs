use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;

use qpwalk::alpha::{make_constant_field, make_table_field, theta, DiagonalTable, Fill, Tail};
use qpwalk::bd::{bertrand_test, BdClass, RateSequence};
use qpwalk::ctmc::{rate_vector, NetworkState};
use qpwalk::kappa::{kappa_factor, kappa_product};
use qpwalk::walk::{simulate_with, step_distribution, WalkState};
use qpwalk::DiagonalLimits;

fn admissible_state() -> impl Strategy<Value = WalkState> {
    (0u64..5_000, 0u64..5_000).prop_map(|(a, b)| WalkState::folded(a, b))
}

fn small_table() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.24f64..0.24, 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn step_probabilities_sum_to_one(s in admissible_state(), a in -0.7f64..0.7) {
        // interior states also need |α| < n/4
        prop_assume!(s.i == 0 || s.i == s.j || a.abs() < s.norm() as f64 / 4.0);
        let f = make_constant_field(a, 1.0).unwrap();
        let d = step_distribution(&f, s).unwrap();
        prop_assert!((d.total() - 1.0).abs() < 1e-15);
        for p in [d.p_j_up, d.p_j_down, d.p_i_up, d.p_i_down] {
            prop_assert!(p >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn table_fields_conserve_probability(stars in small_table(), s in admissible_state()) {
        let pairs: Vec<(u64, f64)> = stars.iter().enumerate().map(|(m, &v)| (m as u64 + 1, v)).collect();
        let f = make_table_field(DiagonalTable::new(&pairs, Tail::Cycle, Fill::Exact).unwrap(), 1.0).unwrap();
        let d = step_distribution(&f, s).unwrap();
        prop_assert!((d.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_product_matches_direct(a in -0.2f64..0.2, k in 2u64..=1_000) {
        let l = DiagonalLimits::constant(a);
        let direct: f64 = (1..k).map(|i| kappa_factor(&l, k, i)).product();
        let logd = kappa_product(&l, k).unwrap();
        prop_assert!((logd - direct).abs() <= 1e-12 * direct, "k={} {} {}", k, logd, direct);
    }

    #[test]
    fn log_product_matches_direct_for_tables(stars in small_table(), k in 2u64..=1_000) {
        let pairs: Vec<(u64, f64)> = stars.iter().enumerate().map(|(m, &v)| (m as u64 + 1, v)).collect();
        let l = DiagonalLimits::from_table(DiagonalTable::new(&pairs, Tail::Cycle, Fill::Exact).unwrap());
        let direct: f64 = (1..k).map(|i| kappa_factor(&l, k, i)).product();
        let logd = kappa_product(&l, k).unwrap();
        prop_assert!((logd - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn queue_labels_swap_symmetrically(q1 in 0u64..500, q2 in 0u64..500, a in -0.2f64..0.2) {
        let f = make_constant_field(a, 1.0).unwrap();
        let r = rate_vector(&f, &NetworkState { q1, q2, clock: 0.0 }).unwrap();
        let s = rate_vector(&f, &NetworkState { q1: q2, q2: q1, clock: 0.0 }).unwrap();
        prop_assert_eq!(r, s.swapped());
        prop_assert!((r.total() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn positive_rescaling_keeps_verdict(c in 0.01f64..100.0, slope in -3.0f64..3.0, which in 0usize..3) {
        let base = match which {
            0 => RateSequence::from_ratio("c=2", |n| { let x = n as f64; 1.0 + 1.0 / x + 2.0 / (x * x.ln()) }),
            1 => RateSequence::from_ratio("1+1/n", |n| 1.0 + 1.0 / n as f64),
            _ => RateSequence::bd22(),
        };
        let scaled = base.scaled(move |n| c * (n as f64).powf(slope));
        let w = (1_000, 20_000);
        let a = bertrand_test(&base, 3, w).unwrap();
        let b = bertrand_test(&scaled, 3, w).unwrap();
        prop_assert_eq!(a.verdict, b.verdict);
        prop_assert!(a.verdict != BdClass::Inconclusive);
    }
}

#[test]
fn walk_stays_in_wedge_for_a_million_steps() {
    for (k, f) in [theta(), make_constant_field(0.2, 1.0).unwrap(), make_constant_field(-0.2, 1.0).unwrap()]
        .iter()
        .enumerate()
    {
        let mut bad = 0u64;
        simulate_with(f, WalkState::ORIGIN, 1_000_000, 77 + k as u64, |a, b| {
            let moved = a.i.abs_diff(b.i) + a.j.abs_diff(b.j);
            if b.i > b.j || moved != 1 {
                bad += 1;
            }
        })
        .unwrap();
        assert_eq!(bad, 0);
    }
}

/// Exact rational κ product for a cyclic diagonal table.
fn exact_product(stars: &[(i64, i64)], k: u64) -> BigRational {
    let star = |m: u64| -> BigRational {
        if m == 0 {
            return BigRational::zero();
        }
        let (p, q) = stars[((m - 1) % stars.len() as u64) as usize];
        BigRational::new(BigInt::from(p), BigInt::from(q))
    };
    let kk = BigRational::from_integer(BigInt::from(k));
    let two = BigRational::from_integer(BigInt::from(2));
    let four = BigRational::from_integer(BigInt::from(4));
    let mut acc = BigRational::one();
    for i in 1..k {
        let m = 2 * k - 2 * i;
        let x = (&two * star(m) + &four * star(m - 1) + &two * star(m - 2)) / &kk;
        acc *= BigRational::one() + x;
    }
    acc
}

#[test]
fn kappa_product_matches_exact_rational_oracle() {
    for (stars, k) in [
        (vec![(1, 5), (-1, 5)], 1_000u64),
        (vec![(1, 10), (-1, 20), (3, 40)], 1_000),
        (vec![(-1, 8)], 500),
    ] {
        let pairs: Vec<(u64, f64)> =
            stars.iter().enumerate().map(|(m, &(p, q))| (m as u64 + 1, p as f64 / q as f64)).collect();
        let l = DiagonalLimits::from_table(DiagonalTable::new(&pairs, Tail::Cycle, Fill::Exact).unwrap());
        let exact = exact_product(&stars, k).to_f64().unwrap();
        let got = kappa_product(&l, k).unwrap();
        assert!((got - exact).abs() <= 1e-12 * exact, "{stars:?}: {got} vs {exact}");
    }
}
