use std::io::BufReader;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wmattr::detect::{attribute, DetectionThreshold};
use wmattr::{Codebook, Watermark};

fn random_book(n: usize, s: usize, seed: u64) -> Codebook {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut book = Codebook::new(n).unwrap();
    while book.len() < s {
        let w = Watermark::random(n, &mut rng).unwrap();
        if !book.contains_watermark(&w) {
            book.push(format!("user-{}", book.len()), w).unwrap();
        }
    }
    book
}

fn entries(book: &Codebook) -> Vec<(String, Watermark)> {
    book.iter().map(|(id, w)| (id.to_string(), w)).collect()
}

#[test]
fn ten_thousand_entries_round_trip() {
    let book = random_book(64, 10_000, 11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("book.wmdb");
    book.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("wmdb v1 n=64 count=10000\n"));
    assert_eq!(text.lines().count(), 10_001);
    let back = Codebook::load(&path).unwrap();
    assert_eq!(back.n(), 64);
    assert_eq!(entries(&back), entries(&book));
}

#[test]
fn hex_is_most_significant_bit_first() {
    // Bit 0 is the first character's high bit; n = 6 pads to one byte.
    let w = Watermark::parse_bits("100001").unwrap();
    assert_eq!(w.to_hex(), "84");
    assert_eq!(Watermark::from_hex(6, "84").unwrap(), w);
    assert!(Watermark::from_hex(6, "85").is_err(), "padding bits must be zero");
}

#[test]
fn malformed_files_are_rejected() {
    let bad = [
        "",
        "wmdb v2 n=4 count=0\n",
        "wmdb v1 n=4 count=2\na\tf0\n",
        "wmdb v1 n=4 count=2\na\tf0\na\t00\n",
        "wmdb v1 n=4 count=2\na\tf0\nb\tf0\n",
        "wmdb v1 n=4 count=1\na f0\n",
        "wmdb v1 n=4 count=1\na\tf\n",
        "wmdb v1 n=4 count=1\na\t0f\n",
    ];
    for text in bad {
        assert!(Codebook::read_from(BufReader::new(text.as_bytes())).is_err(), "{text:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn round_trip_any_length(n in 1usize..=300, s in 0usize..20, seed in any::<u64>()) {
        let book = random_book(n, s.min(if n < 6 { 1 << n } else { 20 }), seed);
        let mut buf = Vec::new();
        book.write_to(&mut buf).unwrap();
        let back = Codebook::read_from(BufReader::new(&buf[..])).unwrap();
        prop_assert_eq!(back.n(), n);
        prop_assert_eq!(entries(&back), entries(&book));
    }

    #[test]
    fn attribution_matches_scan(n in 8usize..=96, s in 1usize..30, seed in any::<u64>(), tau in 51u32..100) {
        let book = random_book(n, s, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        let decoded = Watermark::random(n, &mut rng).unwrap();
        let thr = DetectionThreshold::parse(&format!("{tau}/100"), n).unwrap();
        let r = attribute(&decoded, &book, &thr).unwrap();

        let scores: Vec<u32> = (0..s).map(|i| book.watermark(i).matched(&decoded).unwrap()).collect();
        let best = *scores.iter().max().unwrap();
        let first = scores.iter().position(|&x| x == best).unwrap();
        let k_min = (tau as usize * n).div_ceil(100) as u32;
        prop_assert_eq!(r.best_ba.matched, best);
        prop_assert_eq!(r.detected, best >= k_min);
        prop_assert_eq!(r.tied, scores.iter().filter(|&&x| x == best).count() > 1);
        prop_assert_eq!(r.attributed, r.detected.then_some(first));
    }
}
