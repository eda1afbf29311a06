//! Sampling statistics of the decoder models.

use wmattr::channel::{estimate_beta, simulate_watermarked_decode, GammaMode, UnwatermarkedSource};
use wmattr::rng::{substream, Domain};
use wmattr::Watermark;

/// |observed - expected| within six standard deviations of a mean of `trials` Bernoulli(p).
fn within(observed: f64, p: f64, trials: f64) -> bool {
    (observed - p).abs() <= 6.0 * (p * (1.0 - p) / trials).sqrt() + 1e-12
}

#[test]
fn watermarked_flip_rate() {
    let mut rng = substream(5, Domain::WatermarkedSamples, 0);
    let w = Watermark::random(200, &mut rng).unwrap();
    for beta in [0.5, 0.8, 0.99, 1.0] {
        let samples: Vec<Watermark> =
            (0..2000).map(|_| simulate_watermarked_decode(&w, beta, &mut rng).unwrap()).collect();
        let kept = estimate_beta(samples.iter(), &w).unwrap();
        assert!(within(kept, beta, 2000.0 * 200.0), "beta={beta}: {kept}");
    }
}

#[test]
fn flips_are_independent_across_positions() {
    // Pairs of positions: joint flip frequency approaches (1 - beta)^2.
    let mut rng = substream(8, Domain::WatermarkedSamples, 1);
    let w = Watermark::zeros(64).unwrap();
    let beta = 0.7;
    let trials = 20_000;
    let mut both = 0u32;
    for _ in 0..trials {
        let d = simulate_watermarked_decode(&w, beta, &mut rng).unwrap();
        if d.get(3) && d.get(40) {
            both += 1;
        }
    }
    assert!(within(both as f64 / trials as f64, 0.09, trials as f64));
}

#[test]
fn unwatermarked_bias() {
    let mut rng = substream(6, Domain::UnwatermarkedSamples, 0);
    for gamma in [0.0, 0.05, 0.3, 0.5] {
        let src = UnwatermarkedSource::new(128, gamma, GammaMode::WorstCase, &mut rng).unwrap();
        let ones: u32 = (0..1000).map(|_| src.sample(&mut rng).count_ones()).sum();
        assert!(within(ones as f64 / 128_000.0, 0.5 + gamma, 128_000.0), "gamma={gamma}");
    }
}

#[test]
fn per_bit_bias_stays_in_range() {
    let mut rng = substream(6, Domain::BitBias, 0);
    let src = UnwatermarkedSource::new(4096, 0.2, GammaMode::PerBitUniform, &mut rng).unwrap();
    let p = src.one_probabilities();
    assert!(p.iter().all(|&x| (0.3..=0.7).contains(&x)));
    let mean = p.iter().sum::<f64>() / p.len() as f64;
    // Uniform on [0.3, 0.7] has standard deviation 0.4 / sqrt(12).
    assert!((mean - 0.5).abs() < 6.0 * 0.4 / (12.0f64 * 4096.0).sqrt());
}

#[test]
fn substreams_are_reproducible_and_distinct() {
    let a = Watermark::random(256, &mut substream(1, Domain::Selection, 3)).unwrap();
    let b = Watermark::random(256, &mut substream(1, Domain::Selection, 3)).unwrap();
    let c = Watermark::random(256, &mut substream(1, Domain::Selection, 4)).unwrap();
    let d = Watermark::random(256, &mut substream(1, Domain::UserBeta, 3)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, d);
}
