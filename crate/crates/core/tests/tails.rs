//! Binomial tails and bounds against exact rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;

use wmattr::bounds::{
    binom_tail_ge, binom_tail_le, fdr_upper_bound_general, fdr_upper_bound_independent, parse_fraction, tdr_lower_bound,
    BoundInputs,
};

fn pow(base: &BigInt, e: u32) -> BigInt {
    num_traits::pow(base.clone(), e as usize)
}

fn choose(n: u32, k: u32) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| acc * BigInt::from(n - i) / BigInt::from(i + 1))
}

/// `Pr(X >= k)` for `X ~ B(n, a/b)`, exactly.
fn exact_ge(n: u32, a: u32, b: u32, k: i64) -> BigRational {
    let lo = k.max(0);
    let mut num = BigInt::zero();
    for j in lo..=n as i64 {
        let j = j as u32;
        num += choose(n, j) * pow(&BigInt::from(a), j) * pow(&BigInt::from(b - a), n - j);
    }
    BigRational::new(num, pow(&BigInt::from(b), n))
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2000, ..ProptestConfig::default() })]

    #[test]
    fn ge_matches_rational(n in 1u32..=160, a in 1u32..=999, k in -2i64..=162) {
        let exact = to_f64(&exact_ge(n, a, 1000, k));
        let got = binom_tail_ge(n, a as f64 / 1000.0, k).unwrap();
        prop_assert!((got - exact).abs() <= 1e-12, "n={n} p={a}/1000 k={k}: {got} vs {exact}");
    }

    #[test]
    fn le_matches_rational(n in 1u32..=160, a in 1u32..=999, k in -2i64..=162) {
        let exact = 1.0 - to_f64(&exact_ge(n, a, 1000, k + 1));
        let got = binom_tail_le(n, a as f64 / 1000.0, k).unwrap();
        prop_assert!((got - exact).abs() <= 1e-12, "n={n} p={a}/1000 k={k}: {got} vs {exact}");
    }

    #[test]
    fn tails_are_monotone_in_k(n in 1u32..=512, p in 0.0f64..=1.0, k in 0i64..=512) {
        let a = binom_tail_ge(n, p, k).unwrap();
        let b = binom_tail_ge(n, p, k + 1).unwrap();
        prop_assert!(b <= a);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn degenerate_probabilities() {
    assert_eq!(binom_tail_ge(10, 0.0, 1).unwrap(), 0.0);
    assert_eq!(binom_tail_ge(10, 0.0, 0).unwrap(), 1.0);
    assert_eq!(binom_tail_ge(10, 1.0, 10).unwrap(), 1.0);
    assert_eq!(binom_tail_le(10, 1.0, 9).unwrap(), 0.0);
    assert_eq!(binom_tail_ge(4, 0.5, 3).unwrap(), 0.3125);
}

fn inputs(n: u32, tau: &str, beta: f64, gamma: f64, s: u64) -> BoundInputs {
    BoundInputs {
        n,
        tau: parse_fraction(tau).unwrap(),
        beta,
        gamma,
        s,
        alpha_min: Some(parse_fraction("0.25").unwrap()),
        alpha_max: Some(parse_fraction("0.75").unwrap()),
    }
}

#[test]
fn independent_fdr_matches_rational_power() {
    // n = 16, tau = 3/4, gamma = 0: per-watermark hit probability is exact.
    let hit = exact_ge(16, 1, 2, 12);
    for s in [1u64, 2, 7, 50] {
        let miss = BigRational::one() - hit.clone();
        let exact = BigRational::one() - num_traits::pow(miss, s as usize);
        let got = fdr_upper_bound_independent(&inputs(16, "0.75", 0.9, 0.0, s)).unwrap().value;
        assert!((got - to_f64(&exact)).abs() < 1e-14, "s={s}");
    }
}

#[test]
fn independent_fdr_tiny_hit_probability() {
    // s * p far below machine epsilon relative to 1 must not round to zero.
    let r = fdr_upper_bound_independent(&inputs(256, "0.95", 0.99, 0.0, 3)).unwrap();
    assert!(r.value > 0.0 && r.value < 1e-40, "{}", r.value);
}

#[test]
fn tdr_bound_terms() {
    // n = 20, tau = 0.75, beta = 0.9, alpha_min = 0.25:
    // Pr(B(20,0.9) >= 15) + Pr(B(20,0.9) <= 20 - 15 - 5).
    let r = tdr_lower_bound(&inputs(20, "0.75", 0.9, 0.0, 10)).unwrap();
    let own = to_f64(&exact_ge(20, 9, 10, 15));
    let other = 1.0 - to_f64(&exact_ge(20, 9, 10, 1));
    assert!((r.value - (own + other)).abs() < 1e-14);
}

#[test]
fn general_fdr_single_user_is_one_tail() {
    let r = fdr_upper_bound_general(&inputs(32, "0.75", 0.9, 0.0, 1)).unwrap();
    assert!((r.value - to_f64(&exact_ge(32, 1, 2, 24))).abs() < 1e-14);
    assert!(!r.clamped);
}
