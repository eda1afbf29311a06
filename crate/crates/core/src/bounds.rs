//! Exact evaluation of the detection/attribution probability bounds.
//!
//! All bounds reduce to binomial tails `Pr(X >= k)` / `Pr(X <= k)` with
//! `X ~ B(n, p)`. Tails are summed term by term with compensated summation
//! from mode-normalised pmf weights; there are no normal or Chernoff
//! approximations.
//!
//! Real-valued thresholds are integerised once, here, and nowhere else:
//! `Pr(X >= t)` uses `ceil(t)` and `Pr(X <= t)` uses `floor(t)`. The
//! thresholds are built from exact rationals so values like `0.9 * 64 = 57.6`
//! never round the wrong way.

use num_rational::Ratio;

use crate::{Error, Result};

/// Exact rational used for thresholds and codebook accuracies.
pub type Fraction = Ratio<i128>;

/// Largest `n` accepted by the tail functions.
pub const MAX_TAIL_N: u32 = 4096;

/// Parses a plain decimal such as `0.9`, `1`, or `0.125` into an exact fraction.
pub fn parse_fraction(s: &str) -> Result<Fraction> {
    let s = s.trim();
    let bad = || Error::Domain(format!("not a decimal number: `{s}`"));
    if let Some((num, den)) = s.split_once('/') {
        let num: i128 = num.trim().parse().map_err(|_| bad())?;
        let den: i128 = den.trim().parse().map_err(|_| bad())?;
        if den == 0 {
            return Err(bad());
        }
        return Ok(Fraction::new(num, den));
    }
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if (int_part.is_empty() && frac_part.is_empty())
        || !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
        || frac_part.len() > 30
    {
        return Err(bad());
    }
    let scale = 10i128.checked_pow(frac_part.len() as u32).ok_or_else(bad)?;
    let int: i128 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| bad())? };
    let frac: i128 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| bad())? };
    let num = int.checked_mul(scale).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?;
    Ok(Fraction::new(if neg { -num } else { num }, scale))
}

/// The decimal a float prints as, taken exactly (`0.9_f64` becomes `9/10`).
pub fn fraction_from_f64(x: f64) -> Result<Fraction> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("non-finite value {x}")));
    }
    parse_fraction(&format!("{x}"))
}

/// Exact decimal when the denominator has only factors 2 and 5, `a/b` otherwise.
pub fn format_fraction(f: Fraction) -> String {
    let (num, den) = (*f.numer(), *f.denom());
    for digits in 0..=30u32 {
        let p = 10i128.pow(digits);
        if p % den != 0 {
            continue;
        }
        let scaled = num * (p / den);
        if digits == 0 {
            return scaled.to_string();
        }
        let sign = if scaled < 0 { "-" } else { "" };
        let abs = scaled.unsigned_abs();
        let p = p as u128;
        return format!("{sign}{}.{:0width$}", abs / p, abs % p, width = digits as usize);
    }
    format!("{num}/{den}")
}

pub fn fraction_to_f64(f: Fraction) -> f64 {
    *f.numer() as f64 / *f.denom() as f64
}

fn ceil_i64(f: Fraction) -> i64 {
    f.ceil().to_integer() as i64
}

fn floor_i64(f: Fraction) -> i64 {
    f.floor().to_integer() as i64
}

fn check_tail_args(n: u32, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability p={p} outside [0, 1]")));
    }
    if n > MAX_TAIL_N {
        return Err(Error::Domain(format!("n={n} exceeds {MAX_TAIL_N}")));
    }
    Ok(())
}

/// pmf values scaled so the mode has weight 1.
///
/// Built outward from the mode with the ratio `pmf(j+1)/pmf(j) =
/// (n-j)/(j+1) * p/q`, so no large log-factorials cancel against each other
/// and every term is accurate to a few ulps times its distance from the mode.
/// Terms far below the mode underflow to zero, which only loses mass below
/// `1e-300`.
fn scaled_pmf(n: u32, p: f64) -> Vec<f64> {
    let n = n as usize;
    let q = 1.0 - p;
    let mode = (((n + 1) as f64 * p).floor() as usize).min(n);
    let mut w = vec![0.0f64; n + 1];
    w[mode] = 1.0;
    let up = p / q;
    for j in mode..n {
        w[j + 1] = w[j] * ((n - j) as f64 / (j + 1) as f64) * up;
    }
    let down = q / p;
    for j in (1..=mode).rev() {
        w[j - 1] = w[j] * (j as f64 / (n - j + 1) as f64) * down;
    }
    w
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sum of pmf over `lo..=hi` (already clamped to `0..=n`).
fn pmf_range(n: u32, p: f64, lo: usize, hi: usize) -> f64 {
    if lo > hi {
        return 0.0;
    }
    // Degenerate distributions put all mass on one point.
    if p == 0.0 {
        return if lo == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if hi == n as usize { 1.0 } else { 0.0 };
    }
    let w = scaled_pmf(n, p);
    let total = compensated_sum(w.iter().copied());
    let part = compensated_sum(w[lo..=hi].iter().copied());
    (part / total).clamp(0.0, 1.0)
}

/// `Pr(X >= k)` for `X ~ B(n, p)`. `k <= 0` gives 1, `k > n` gives 0.
pub fn binom_tail_ge(n: u32, p: f64, k: i64) -> Result<f64> {
    check_tail_args(n, p)?;
    if k <= 0 {
        return Ok(1.0);
    }
    if k > n as i64 {
        return Ok(0.0);
    }
    Ok(pmf_range(n, p, k as usize, n as usize))
}

/// `Pr(X <= k)` for `X ~ B(n, p)`. `k < 0` gives 0, `k >= n` gives 1.
pub fn binom_tail_le(n: u32, p: f64, k: i64) -> Result<f64> {
    check_tail_args(n, p)?;
    if k < 0 {
        return Ok(0.0);
    }
    if k >= n as i64 {
        return Ok(1.0);
    }
    Ok(pmf_range(n, p, 0, k as usize))
}

/// Parameters shared by all bounds for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub n: u32,
    pub tau: Fraction,
    pub beta: f64,
    pub gamma: f64,
    pub s: u64,
    /// Minimum accuracy to any other watermark; `None` when `s == 1`.
    pub alpha_min: Option<Fraction>,
    /// Maximum accuracy to any other watermark; `None` when `s == 1`.
    pub alpha_max: Option<Fraction>,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        let half = Fraction::new(1, 2);
        if self.n == 0 || self.n > MAX_TAIL_N {
            return Err(Error::Domain(format!("n={} outside 1..={MAX_TAIL_N}", self.n)));
        }
        if self.tau <= half || self.tau > Fraction::from_integer(1) {
            return Err(Error::Domain(format!("tau={} outside (0.5, 1]", self.tau)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Domain(format!("beta={} outside (0, 1]", self.beta)));
        }
        if !(0.0..=0.5).contains(&self.gamma) {
            return Err(Error::Domain(format!("gamma={} outside [0, 0.5]", self.gamma)));
        }
        if self.s == 0 {
            return Err(Error::Domain("s must be at least 1".into()));
        }
        for a in [self.alpha_min, self.alpha_max].into_iter().flatten() {
            if a < Fraction::from_integer(0) || a > Fraction::from_integer(1) {
                return Err(Error::Domain(format!("accuracy {a} outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn n_frac(&self) -> Fraction {
        Fraction::from_integer(self.n as i128)
    }

    /// Smallest matched count that passes detection, `ceil(tau n)`.
    pub fn detect_threshold(&self) -> i64 {
        ceil_i64(self.tau * self.n_frac())
    }

    /// `floor((1 + alpha_max) / 2 * n) + 1`, the count that guarantees a
    /// unique closest watermark.
    pub fn attribution_threshold(&self) -> Option<i64> {
        self.alpha_max.map(|a| floor_i64((Fraction::from_integer(1) + a) / 2 * self.n_frac()) + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub value: f64,
    /// The raw expression fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
    pub terms: Vec<(&'static str, f64)>,
}

impl BoundResult {
    fn from_terms(terms: Vec<(&'static str, f64)>) -> Self {
        let raw: f64 = terms.iter().map(|t| t.1).sum();
        let value = raw.clamp(0.0, 1.0);
        BoundResult { value, clamped: !(0.0..=1.0).contains(&raw), terms }
    }
}

/// Lower bound on a user's true detection rate.
///
/// `Pr(X >= tau n) + Pr(X <= n - tau n - alpha_min n)` with `X ~ B(n, beta)`.
/// Requires `0.5 < tau < beta`. With a single user the second term, which
/// counts detections through another user's watermark, is dropped.
pub fn tdr_lower_bound(inputs: &BoundInputs) -> Result<BoundResult> {
    inputs.validate()?;
    if fraction_to_f64(inputs.tau) >= inputs.beta {
        return Err(Error::Domain(format!(
            "TDR lower bound requires 0.5 < tau < beta (tau={}, beta={})",
            inputs.tau, inputs.beta
        )));
    }
    let own = binom_tail_ge(inputs.n, inputs.beta, inputs.detect_threshold())?;
    let mut terms = vec![("own_watermark", own)];
    if let Some(alpha_min) = inputs.alpha_min {
        let k = floor_i64(inputs.n_frac() - inputs.tau * inputs.n_frac() - alpha_min * inputs.n_frac());
        terms.push(("other_watermark", binom_tail_le(inputs.n, inputs.beta, k)?));
    }
    Ok(BoundResult::from_terms(terms))
}

/// Upper bound on the false detection rate for an arbitrary codebook whose
/// first watermark is uniformly random.
///
/// `Pr(Y >= tau n) + Pr(Y <= n - tau n + alpha_max_1 n)` with
/// `Y ~ B(n, 0.5)`. Often exceeds 1; `clamped` reports that.
pub fn fdr_upper_bound_general(inputs: &BoundInputs) -> Result<BoundResult> {
    inputs.validate()?;
    let first = binom_tail_ge(inputs.n, 0.5, inputs.detect_threshold())?;
    let mut terms = vec![("first_watermark", first)];
    if inputs.s > 1 {
        let alpha_max = inputs
            .alpha_max
            .ok_or_else(|| Error::Domain("alpha_max required when s > 1".into()))?;
        let k = floor_i64(inputs.n_frac() - inputs.tau * inputs.n_frac() + alpha_max * inputs.n_frac());
        terms.push(("other_watermarks", binom_tail_le(inputs.n, 0.5, k)?));
    }
    Ok(BoundResult::from_terms(terms))
}

/// Upper bound on the false detection rate for independently chosen
/// watermarks and a γ-random decoder: `1 - Pr(Y < tau n)^s` with
/// `Y ~ B(n, 0.5 + gamma)`, evaluated as `-expm1(s * ln1p(-p))`.
pub fn fdr_upper_bound_independent(inputs: &BoundInputs) -> Result<BoundResult> {
    inputs.validate()?;
    let p = binom_tail_ge(inputs.n, 0.5 + inputs.gamma, inputs.detect_threshold())?;
    let value = -(inputs.s as f64 * (-p).ln_1p()).exp_m1();
    Ok(BoundResult { value: value.clamp(0.0, 1.0), clamped: false, terms: vec![("single_watermark", p)] })
}

/// Lower bound on a user's true attribution rate:
/// `Pr(X >= max(floor((1 + alpha_max)/2 n) + 1, ceil(tau n)))`,
/// `X ~ B(n, beta)`.
pub fn tar_lower_bound(inputs: &BoundInputs) -> Result<BoundResult> {
    inputs.validate()?;
    let k = tar_threshold(inputs);
    Ok(BoundResult::from_terms(vec![("attributed", binom_tail_ge(inputs.n, inputs.beta, k)?)]))
}

fn tar_threshold(inputs: &BoundInputs) -> i64 {
    let detect = inputs.detect_threshold();
    inputs.attribution_threshold().map_or(detect, |a| a.max(detect))
}

/// Whether detection alone already implies correct attribution for a user.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionGap {
    pub tdr_lb: f64,
    pub tar_lb: f64,
    /// `ceil(tau n) >= floor((1 + alpha_max)/2 n) + 1`.
    pub coincide: bool,
}

pub fn detection_implies_attribution_gap(inputs: &BoundInputs) -> Result<AttributionGap> {
    let tdr = tdr_lower_bound(inputs)?;
    let tar = tar_lower_bound(inputs)?;
    let coincide = match inputs.attribution_threshold() {
        Some(a) => inputs.detect_threshold() >= a,
        None => true,
    };
    Ok(AttributionGap { tdr_lb: tdr.value, tar_lb: tar.value, coincide })
}

/// All four bounds for one parameter set, as printed by the CLI.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundTable {
    pub tdr: Option<BoundResult>,
    pub tar: BoundResult,
    pub fdr_general: BoundResult,
    pub fdr_independent: BoundResult,
    pub coincide: bool,
}

pub fn bound_table(inputs: &BoundInputs) -> Result<BoundTable> {
    inputs.validate()?;
    let tdr = if fraction_to_f64(inputs.tau) < inputs.beta { Some(tdr_lower_bound(inputs)?) } else { None };
    Ok(BoundTable {
        tdr,
        tar: tar_lower_bound(inputs)?,
        fdr_general: fdr_upper_bound_general(inputs)?,
        fdr_independent: fdr_upper_bound_independent(inputs)?,
        coincide: inputs.attribution_threshold().is_none_or(|a| inputs.detect_threshold() >= a),
    })
}
