//! Simulated decoder channel.
//!
//! Stands in for a real encoder/decoder pair. Watermarked content decodes to
//! the user's watermark with each bit independently kept with probability
//! `beta` (β-accurate); unwatermarked content decodes to independent bits whose
//! probability of being 1 is within `gamma` of one half (γ-random).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Bernoulli, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{words_for, Watermark, WORD_BITS};
use crate::codebook::Codebook;
use crate::rng::{substream, Domain};
use crate::{Error, Result};

/// How unwatermarked decodes deviate from fair coins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMode {
    /// Every bit is 1 with probability exactly `0.5 + gamma`.
    #[default]
    WorstCase,
    /// Bit `k` is 1 with probability `p_k ~ U[0.5 - gamma, 0.5 + gamma]`,
    /// with the `p_k` fixed once per experiment.
    PerBitUniform,
}

impl fmt::Display for GammaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GammaMode::WorstCase => "worst-case",
            GammaMode::PerBitUniform => "per-bit-uniform",
        })
    }
}

impl FromStr for GammaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worst-case" => Ok(GammaMode::WorstCase),
            "per-bit-uniform" => Ok(GammaMode::PerBitUniform),
            other => Err(Error::Config(format!("unknown gamma mode `{other}`"))),
        }
    }
}

/// Per-user accuracy assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Constant(f64),
    /// Each user draws `beta_i ~ U[low, high]` from its own substream.
    Uniform { low: f64, high: f64 },
    PerUser(BTreeMap<String, f64>),
}

impl Default for BetaSpec {
    fn default() -> Self {
        BetaSpec::Constant(1.0)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("beta={beta} outside (0, 1]")))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=0.5).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Domain(format!("gamma={gamma} outside [0, 0.5]")))
    }
}

impl BetaSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            BetaSpec::Constant(b) => check_beta(*b),
            BetaSpec::Uniform { low, high } => {
                check_beta(*low)?;
                check_beta(*high)?;
                if low > high {
                    return Err(Error::Domain(format!("beta range low={low} > high={high}")));
                }
                Ok(())
            }
            BetaSpec::PerUser(map) => map.values().try_for_each(|b| check_beta(*b)),
        }
    }

    /// `beta_i` for every user of `book`, in registration order.
    pub fn resolve(&self, book: &Codebook, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        (0..book.len())
            .map(|i| match self {
                BetaSpec::Constant(b) => Ok(*b),
                BetaSpec::Uniform { low, high } => {
                    let mut rng = substream(seed, Domain::UserBeta, i as u64);
                    Ok(if low == high { *low } else { rng.gen_range(*low..=*high) })
                }
                BetaSpec::PerUser(map) => map
                    .get(book.user_id(i))
                    .copied()
                    .ok_or_else(|| Error::Config(format!("no beta configured for user `{}`", book.user_id(i)))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub beta: BetaSpec,
    pub gamma: f64,
    #[serde(default)]
    pub gamma_mode: GammaMode,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams { beta: BetaSpec::default(), gamma: 0.0, gamma_mode: GammaMode::WorstCase }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        self.beta.validate()?;
        check_gamma(self.gamma)
    }
}

/// One decoded watermark; `user_id` is `None` for unwatermarked content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeSample {
    pub user_id: Option<String>,
    pub decoded: Watermark,
}

/// Packed mask whose bits are independently set with probability `p`.
fn bernoulli_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<u64> {
    let mut mask = vec![0u64; words_for(n)];
    if p <= 0.0 {
        return mask;
    }
    let coin = Bernoulli::new(p.min(1.0)).expect("p in [0, 1]");
    for k in 0..n {
        if coin.sample(rng) {
            mask[k / WORD_BITS] |= 1 << (k % WORD_BITS);
        }
    }
    mask
}

/// Decode of content watermarked with `w`: each bit kept with probability `beta`.
pub fn simulate_watermarked_decode<R: Rng + ?Sized>(w: &Watermark, beta: f64, rng: &mut R) -> Result<Watermark> {
    check_beta(beta)?;
    let flips = bernoulli_mask(w.len(), 1.0 - beta, rng);
    let mut out = w.clone();
    out.xor_words(&flips);
    Ok(out)
}

/// Decoder behaviour on unwatermarked content for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct UnwatermarkedSource {
    /// Probability that each decoded bit is 1.
    one_prob: Vec<f64>,
}

impl UnwatermarkedSource {
    /// `PerBitUniform` draws its per-bit probabilities from `rng` here, once.
    pub fn new<R: Rng + ?Sized>(n: usize, gamma: f64, mode: GammaMode, rng: &mut R) -> Result<Self> {
        check_gamma(gamma)?;
        if n == 0 {
            return Err(Error::EmptyWatermark);
        }
        let one_prob = match mode {
            GammaMode::WorstCase => vec![0.5 + gamma; n],
            GammaMode::PerBitUniform if gamma == 0.0 => vec![0.5; n],
            GammaMode::PerBitUniform => (0..n).map(|_| rng.gen_range(0.5 - gamma..=0.5 + gamma)).collect(),
        };
        Ok(UnwatermarkedSource { one_prob })
    }

    pub fn one_probabilities(&self) -> &[f64] {
        &self.one_prob
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Watermark {
        let n = self.one_prob.len();
        let mut w = Watermark::zeros(n).expect("n > 0");
        for (k, &p) in self.one_prob.iter().enumerate() {
            if p >= 1.0 || (p > 0.0 && rng.gen_bool(p)) {
                w.set(k, true);
            }
        }
        w
    }
}

/// Decode of unwatermarked content. In `PerBitUniform` mode this draws fresh
/// per-bit probabilities on every call; build an [`UnwatermarkedSource`] to
/// keep them fixed across samples.
pub fn simulate_unwatermarked_decode<R: Rng + ?Sized>(n: usize, gamma: f64, mode: GammaMode, rng: &mut R) -> Result<Watermark> {
    Ok(UnwatermarkedSource::new(n, gamma, mode, rng)?.sample(rng))
}

/// Mean bitwise accuracy between decodes and the user's watermark.
pub fn estimate_beta<'a, I>(decoded: I, w: &Watermark) -> Result<f64>
where
    I: IntoIterator<Item = &'a Watermark>,
{
    let (mut matched, mut count) = (0u64, 0u64);
    for d in decoded {
        matched += d.matched(w)? as u64;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Domain("beta estimate needs at least one sample".into()));
    }
    Ok(matched as f64 / (count * w.len() as u64) as f64)
}

/// `|f - 0.5|` where `f` is the overall fraction of 1-bits in the decodes.
pub fn estimate_gamma<'a, I>(decoded: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a Watermark>,
{
    let (mut ones, mut bits) = (0u64, 0u64);
    for d in decoded {
        ones += d.count_ones() as u64;
        bits += d.len() as u64;
    }
    if bits == 0 {
        return Err(Error::Domain("gamma estimate needs at least one sample".into()));
    }
    Ok((ones as f64 / bits as f64 - 0.5).abs())
}

/// Post-processing modelled as a loss of decoder accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PostprocessProfile {
    Identity,
    /// `beta - amount`
    Absolute { amount: f64 },
    /// `beta * factor`
    Multiplicative { factor: f64 },
}

/// Smallest accuracy a degraded channel is clamped to.
pub const MIN_BETA: f64 = 1e-9;

impl PostprocessProfile {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PostprocessProfile::Identity => Ok(()),
            PostprocessProfile::Absolute { amount } if (0.0..=1.0).contains(&amount) => Ok(()),
            PostprocessProfile::Multiplicative { factor } if factor > 0.0 && factor <= 1.0 => Ok(()),
            other => Err(Error::Config(format!("invalid post-processing profile {other:?}"))),
        }
    }
}

/// Named profiles loaded from config.
pub type ProfileTable = BTreeMap<String, PostprocessProfile>;

pub fn lookup_profile(table: &ProfileTable, name: &str) -> Result<PostprocessProfile> {
    if name == "identity" || name == "none" {
        return Ok(PostprocessProfile::Identity);
    }
    let profile = table.get(name).copied().ok_or_else(|| Error::Config(format!("unknown post-processing profile `{name}`")))?;
    profile.validate()?;
    Ok(profile)
}

/// Accuracy after post-processing; never increases and stays in `(0, 1]`.
pub fn degrade_beta(beta: f64, profile: &PostprocessProfile) -> Result<f64> {
    check_beta(beta)?;
    profile.validate()?;
    let degraded = match *profile {
        PostprocessProfile::Identity => beta,
        PostprocessProfile::Absolute { amount } => beta - amount,
        PostprocessProfile::Multiplicative { factor } => beta * factor,
    };
    Ok(degraded.clamp(MIN_BETA, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn perfect_channel_is_identity() {
        let mut r = rng(1);
        let w = Watermark::random(64, &mut r).unwrap();
        for _ in 0..100 {
            assert_eq!(simulate_watermarked_decode(&w, 1.0, &mut r).unwrap(), w);
        }
        assert!(simulate_watermarked_decode(&w, 0.0, &mut r).is_err());
    }

    #[test]
    fn tiny_beta_approaches_complement() {
        let mut r = rng(2);
        let w = Watermark::random(64, &mut r).unwrap();
        let eps = 1e-3;
        let samples: Vec<_> = (0..10_000).map(|_| simulate_watermarked_decode(&w, eps, &mut r).unwrap()).collect();
        let est = estimate_beta(&samples, &w).unwrap();
        // sd of the mean is sqrt(eps / 640000) ~ 4e-5
        assert!((est - eps).abs() < 2e-4, "{est}");
    }

    #[test]
    fn beta_point_nine_concentrates() {
        let mut r = rng(3);
        let w = Watermark::random(64, &mut r).unwrap();
        let samples: Vec<_> = (0..10_000).map(|_| simulate_watermarked_decode(&w, 0.9, &mut r).unwrap()).collect();
        let est = estimate_beta(&samples, &w).unwrap();
        assert!((0.89..=0.91).contains(&est), "{est}");
    }

    #[test]
    fn matched_count_has_binomial_moments() {
        let (n, beta, trials) = (64usize, 0.8, 20_000);
        let mut r = rng(4);
        let w = Watermark::random(n, &mut r).unwrap();
        let counts: Vec<f64> = (0..trials).map(|_| simulate_watermarked_decode(&w, beta, &mut r).unwrap().matched(&w).unwrap() as f64).collect();
        let mean = counts.iter().sum::<f64>() / trials as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let (mu, sigma2) = (n as f64 * beta, n as f64 * beta * (1.0 - beta));
        assert!((mean - mu).abs() < 3.0 * (sigma2 / trials as f64).sqrt(), "mean {mean} vs {mu}");
        // variance of the sample variance is about 2 sigma^4 / trials
        assert!((var - sigma2).abs() < 3.0 * (2.0 * sigma2 * sigma2 / trials as f64).sqrt(), "var {var} vs {sigma2}");
    }

    #[test]
    fn fair_bits_at_zero_gamma() {
        let mut r = rng(5);
        let samples: Vec<_> = (0..1563).map(|_| simulate_unwatermarked_decode(64, 0.0, GammaMode::WorstCase, &mut r).unwrap()).collect();
        let ones: u32 = samples.iter().map(|s| s.count_ones()).sum();
        let f = ones as f64 / (1563.0 * 64.0);
        assert!((0.49..=0.51).contains(&f), "{f}");
    }

    #[test]
    fn saturated_gamma_gives_all_ones() {
        let mut r = rng(6);
        let w = simulate_unwatermarked_decode(64, 0.5, GammaMode::WorstCase, &mut r).unwrap();
        assert_eq!(w, Watermark::ones(64).unwrap());
        assert!(simulate_unwatermarked_decode(64, 0.6, GammaMode::WorstCase, &mut r).is_err());
    }

    #[test]
    fn worst_case_per_bit_frequency() {
        let mut r = rng(7);
        let src = UnwatermarkedSource::new(64, 0.05, GammaMode::WorstCase, &mut r).unwrap();
        let mut ones = [0u32; 64];
        let trials = 10_000;
        let samples: Vec<_> = (0..trials).map(|_| src.sample(&mut r)).collect();
        for s in &samples {
            for (k, o) in ones.iter_mut().enumerate() {
                *o += s.get(k) as u32;
            }
        }
        for o in ones {
            let f = o as f64 / trials as f64;
            assert!((0.5355..=0.5645).contains(&f), "{f}");
        }
        let g = estimate_gamma(&samples).unwrap();
        assert!((0.04..=0.06).contains(&g), "{g}");
    }

    #[test]
    fn per_bit_uniform_probabilities_stay_in_band() {
        let mut r = rng(8);
        let src = UnwatermarkedSource::new(64, 0.1, GammaMode::PerBitUniform, &mut r).unwrap();
        assert!(src.one_probabilities().iter().all(|p| (0.4..=0.6).contains(p)));
        assert!(src.one_probabilities().windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn estimators() {
        let w = Watermark::parse_bits("1100").unwrap();
        assert_eq!(estimate_beta([&w, &w], &w).unwrap(), 1.0);
        assert_eq!(estimate_beta([&w, &w.complement()], &w).unwrap(), 0.5);
        assert!(estimate_beta(std::iter::empty(), &w).is_err());
        assert_eq!(estimate_gamma([&Watermark::zeros(8).unwrap()]).unwrap(), 0.5);
        assert_eq!(estimate_gamma([&w]).unwrap(), 0.0);
        assert!(estimate_gamma(std::iter::empty()).is_err());
    }

    #[test]
    fn beta_estimate_converges() {
        let mut r = rng(9);
        let w = Watermark::random(64, &mut r).unwrap();
        let samples: Vec<_> = (0..10_000).map(|_| simulate_watermarked_decode(&w, 0.95, &mut r).unwrap()).collect();
        let est = estimate_beta(&samples, &w).unwrap();
        assert!((0.94..=0.96).contains(&est));
    }

    #[test]
    fn deterministic_streams() {
        let w = Watermark::random(64, &mut rng(10)).unwrap();
        let a = simulate_watermarked_decode(&w, 0.7, &mut rng(11)).unwrap();
        let b = simulate_watermarked_decode(&w, 0.7, &mut rng(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degrade_profiles() {
        assert_eq!(degrade_beta(0.93, &PostprocessProfile::Identity).unwrap(), 0.93);
        let d = degrade_beta(0.99, &PostprocessProfile::Absolute { amount: 0.09 }).unwrap();
        assert!((d - 0.90).abs() < 1e-12);
        let d = degrade_beta(0.5, &PostprocessProfile::Absolute { amount: 0.9 }).unwrap();
        assert_eq!(d, MIN_BETA);
        let d = degrade_beta(0.8, &PostprocessProfile::Multiplicative { factor: 0.5 }).unwrap();
        assert_eq!(d, 0.4);
        assert!(degrade_beta(0.8, &PostprocessProfile::Multiplicative { factor: 1.5 }).is_err());
        assert!(lookup_profile(&ProfileTable::new(), "jpeg").is_err());
        assert_eq!(lookup_profile(&ProfileTable::new(), "identity").unwrap(), PostprocessProfile::Identity);
    }

    #[test]
    fn beta_spec_resolution() {
        let book = Codebook::from_watermarks(4, ["0000", "1111", "1010"].iter().map(|b| Watermark::parse_bits(b).unwrap())).unwrap();
        assert_eq!(BetaSpec::Constant(0.9).resolve(&book, 0).unwrap(), vec![0.9; 3]);
        let range = BetaSpec::Uniform { low: 0.8, high: 0.95 }.resolve(&book, 1).unwrap();
        assert!(range.iter().all(|b| (0.8..=0.95).contains(b)));
        assert_eq!(range, BetaSpec::Uniform { low: 0.8, high: 0.95 }.resolve(&book, 1).unwrap());
        let map: BTreeMap<_, _> = [("u1".to_string(), 0.9), ("u2".to_string(), 0.8)].into();
        assert!(BetaSpec::PerUser(map.clone()).resolve(&book, 0).is_err());
        let mut full = map;
        full.insert("u3".into(), 0.7);
        assert_eq!(BetaSpec::PerUser(full).resolve(&book, 0).unwrap(), vec![0.9, 0.8, 0.7]);
        assert!(BetaSpec::Constant(1.2).validate().is_err());
    }
}
