//! User-aware detection and attribution.
//!
//! Content is flagged as generated when its decoded watermark matches some
//! registered watermark in at least `k_min = ceil(tau * n)` bits, and is then
//! attributed to the closest registered watermark.

use std::fmt;

use crate::bits::{Accuracy, Watermark};
use crate::bounds::{fraction_to_f64, parse_fraction, Fraction};
use crate::codebook::Codebook;
use crate::exec::Exec;
use crate::{Error, Result};

/// Detection threshold `tau` together with its integer matched-bit cut-off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionThreshold {
    tau: Fraction,
    n: usize,
    k_min: u32,
}

impl DetectionThreshold {
    /// `tau` must lie in `(0.5, 1]`.
    pub fn new(tau: Fraction, n: usize) -> Result<Self> {
        if tau <= Fraction::new(1, 2) || tau > Fraction::from_integer(1) {
            return Err(Error::Domain(format!("detection threshold tau={tau} outside (0.5, 1]")));
        }
        if n == 0 {
            return Err(Error::EmptyWatermark);
        }
        let k_min = (tau * Fraction::from_integer(n as i128)).ceil().to_integer() as u32;
        Ok(DetectionThreshold { tau, n, k_min })
    }

    pub fn parse(tau: &str, n: usize) -> Result<Self> {
        Self::new(parse_fraction(tau)?, n)
    }

    pub fn tau(&self) -> Fraction {
        self.tau
    }

    pub fn tau_f64(&self) -> f64 {
        fraction_to_f64(self.tau)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Smallest matched count that counts as detected.
    pub fn k_min(&self) -> u32 {
        self.k_min
    }

    fn check(&self, book: &Codebook, decoded: &Watermark) -> Result<()> {
        if book.is_empty() {
            return Err(Error::TooFewEntries { needed: 1, actual: 0 });
        }
        if self.n != book.n() {
            return Err(Error::LengthMismatch { left: book.n(), right: self.n });
        }
        if decoded.len() != book.n() {
            return Err(Error::LengthMismatch { left: book.n(), right: decoded.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttributionResult {
    pub detected: bool,
    /// Registration index of the attributed user; present iff detected.
    pub attributed: Option<usize>,
    /// Another user shares the best accuracy. The lowest index is reported.
    pub tied: bool,
    pub best_ba: Accuracy,
    /// `None` for a single-user codebook.
    pub runner_up_ba: Option<Accuracy>,
}

impl AttributionResult {
    pub fn attributed_user<'a>(&self, book: &'a Codebook) -> Option<&'a str> {
        self.attributed.map(|i| book.user_id(i))
    }
}

pub fn detect(decoded: &Watermark, book: &Codebook, thr: &DetectionThreshold) -> Result<bool> {
    Ok(attribute(decoded, book, thr)?.detected)
}

pub fn attribute(decoded: &Watermark, book: &Codebook, thr: &DetectionThreshold) -> Result<AttributionResult> {
    attribute_with(decoded, book, thr, Exec::default())
}

pub fn attribute_with(decoded: &Watermark, book: &Codebook, thr: &DetectionThreshold, exec: Exec) -> Result<AttributionResult> {
    thr.check(book, decoded)?;
    let top = book.top_two(decoded, exec)?;
    let n = book.n() as u32;
    let detected = top.best >= thr.k_min;
    Ok(AttributionResult {
        detected,
        attributed: detected.then_some(top.best_index),
        tied: top.runner_up == Some(top.best),
        best_ba: Accuracy::new(top.best, n),
        runner_up_ba: top.runner_up.map(|m| Accuracy::new(m, n)),
    })
}

/// What a piece of content really is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruth {
    NonAi,
    /// Generated by the user at this registration index.
    Ai(usize),
}

/// The five detection/attribution outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    /// Non-AI, not detected.
    CorrectRejection = 1,
    /// Non-AI, detected.
    FalseDetection = 2,
    /// AI, not detected.
    MissedDetection = 3,
    /// AI, detected and attributed to its user with no tie.
    CorrectAttribution = 4,
    /// AI, detected but attributed elsewhere or tied.
    WrongAttribution = 5,
}

impl Branch {
    pub const ALL: [Branch; 5] =
        [Branch::CorrectRejection, Branch::FalseDetection, Branch::MissedDetection, Branch::CorrectAttribution, Branch::WrongAttribution];

    pub fn index(self) -> usize {
        self as usize - 1
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "branch{}", *self as usize)
    }
}

/// Ties never count as correct attribution.
pub fn classify_outcome(truth: GroundTruth, result: &AttributionResult) -> Branch {
    match (truth, result.detected) {
        (GroundTruth::NonAi, false) => Branch::CorrectRejection,
        (GroundTruth::NonAi, true) => Branch::FalseDetection,
        (GroundTruth::Ai(_), false) => Branch::MissedDetection,
        (GroundTruth::Ai(i), true) if result.attributed == Some(i) && !result.tied => Branch::CorrectAttribution,
        (GroundTruth::Ai(_), true) => Branch::WrongAttribution,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn wm(s: &str) -> Watermark {
        Watermark::parse_bits(s).unwrap()
    }

    fn pair() -> Codebook {
        Codebook::from_watermarks(4, [wm("1111"), wm("0000")]).unwrap()
    }

    #[test]
    fn k_min_is_exact() {
        assert_eq!(DetectionThreshold::parse("0.9", 64).unwrap().k_min(), 58);
        assert_eq!(DetectionThreshold::parse("0.75", 4).unwrap().k_min(), 3);
        assert_eq!(DetectionThreshold::parse("1", 64).unwrap().k_min(), 64);
        assert_eq!(DetectionThreshold::parse("0.875", 64).unwrap().k_min(), 56);
        assert!(DetectionThreshold::parse("0.5", 64).is_err());
        assert!(DetectionThreshold::parse("1.01", 64).is_err());
    }

    #[test]
    fn detect_examples() {
        let book = pair();
        assert!(detect(&wm("1111"), &book, &DetectionThreshold::parse("0.9", 4).unwrap()).unwrap());
        assert!(detect(&wm("1110"), &book, &DetectionThreshold::parse("0.75", 4).unwrap()).unwrap());
        assert!(!detect(&wm("1100"), &book, &DetectionThreshold::parse("0.9", 4).unwrap()).unwrap());
    }

    #[test]
    fn detect_errors() {
        let thr = DetectionThreshold::parse("0.9", 4).unwrap();
        assert!(detect(&wm("1111"), &Codebook::new(4).unwrap(), &thr).is_err());
        assert!(detect(&wm("11111"), &pair(), &thr).is_err());
        let thr5 = DetectionThreshold::parse("0.9", 5).unwrap();
        assert!(detect(&wm("1111"), &pair(), &thr5).is_err());
    }

    #[test]
    fn attribute_examples() {
        let book = pair();
        let r = attribute(&wm("1110"), &book, &DetectionThreshold::parse("0.75", 4).unwrap()).unwrap();
        assert_eq!((r.detected, r.attributed_user(&book), r.tied), (true, Some("u1"), false));
        assert_eq!(r.best_ba, Accuracy::new(3, 4));
        assert_eq!(r.runner_up_ba, Some(Accuracy::new(1, 4)));

        // Both watermarks match 1110 in three bits: detected, tied, lowest index reported.
        let tie_book = Codebook::from_watermarks(4, [wm("1100"), wm("1010")]).unwrap();
        let r = attribute(&wm("1110"), &tie_book, &DetectionThreshold::parse("0.75", 4).unwrap()).unwrap();
        assert!(r.detected && r.tied);
        assert_eq!(r.attributed, Some(0));
        assert_eq!(r.runner_up_ba, Some(r.best_ba));
        assert_eq!(classify_outcome(GroundTruth::Ai(0), &r), Branch::WrongAttribution);
        assert_eq!(classify_outcome(GroundTruth::Ai(1), &r), Branch::WrongAttribution);

        let r = attribute(&wm("1100"), &book, &DetectionThreshold::parse("0.9", 4).unwrap()).unwrap();
        assert_eq!(r.attributed, None);
    }

    #[test]
    fn classify_examples() {
        let undetected = AttributionResult { detected: false, attributed: None, tied: false, best_ba: Accuracy::new(1, 4), runner_up_ba: None };
        assert_eq!(classify_outcome(GroundTruth::NonAi, &undetected), Branch::CorrectRejection);
        assert_eq!(classify_outcome(GroundTruth::Ai(2), &undetected), Branch::MissedDetection);
        let hit = AttributionResult { detected: true, attributed: Some(2), tied: false, best_ba: Accuracy::new(4, 4), runner_up_ba: Some(Accuracy::new(2, 4)) };
        assert_eq!(classify_outcome(GroundTruth::NonAi, &hit), Branch::FalseDetection);
        assert_eq!(classify_outcome(GroundTruth::Ai(2), &hit), Branch::CorrectAttribution);
        assert_eq!(classify_outcome(GroundTruth::Ai(4), &hit), Branch::WrongAttribution);
        let tie = AttributionResult { tied: true, runner_up_ba: Some(Accuracy::new(4, 4)), ..hit };
        assert_eq!(classify_outcome(GroundTruth::Ai(2), &tie), Branch::WrongAttribution);
    }

    #[test]
    fn matches_naive_argmax() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let mut book = Codebook::new(16).unwrap();
        while book.len() < 8 {
            let w = Watermark::random(16, &mut rng).unwrap();
            if !book.contains_watermark(&w) {
                book.push(format!("u{}", book.len()), w).unwrap();
            }
        }
        let thr = DetectionThreshold::parse("0.7", 16).unwrap();
        for _ in 0..10_000 {
            let d = Watermark::random(16, &mut rng).unwrap();
            let r = attribute(&d, &book, &thr).unwrap();
            let scores: Vec<u32> = (0..book.len()).map(|i| (0..16).filter(|&k| d.get(k) == book.watermark(i).get(k)).count() as u32).collect();
            let best = *scores.iter().max().unwrap();
            let first = scores.iter().position(|&s| s == best).unwrap();
            let ties = scores.iter().filter(|&&s| s == best).count();
            assert_eq!(r.detected, best * 10 >= 7 * 16);
            assert_eq!(r.attributed, r.detected.then_some(first));
            assert_eq!(r.tied, ties > 1);
            assert_eq!(r.best_ba.matched, best);
        }
    }

    proptest! {
        #[test]
        fn raising_tau_never_adds_detections(seed in any::<u64>(), lo in 51u32..100, step in 0u32..50) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let book = Codebook::from_watermarks(32, (0..4).map(|_| Watermark::random(32, &mut rng).unwrap())).unwrap_or_else(|_| pair_32());
            let hi = (lo + step).min(100);
            let low = DetectionThreshold::new(Fraction::new(lo as i128, 100), 32).unwrap();
            let high = DetectionThreshold::new(Fraction::new(hi as i128, 100), 32).unwrap();
            for _ in 0..20 {
                let d = Watermark::random(32, &mut rng).unwrap();
                let r_high = attribute(&d, &book, &high).unwrap();
                let r_low = attribute(&d, &book, &low).unwrap();
                prop_assert!(!r_high.detected || r_low.detected);
                prop_assert_eq!(r_low.detected, r_low.attributed.is_some());
            }
        }
    }

    fn pair_32() -> Codebook {
        Codebook::from_watermarks(32, [Watermark::zeros(32).unwrap(), Watermark::ones(32).unwrap()]).unwrap()
    }
}
