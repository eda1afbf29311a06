//! The watermark database: registered users, their watermarks, codebook
//! statistics, and the `wmdb v1` text format.
//!
//! ```text
//! wmdb v1 n=<int> count=<int>
//! <user_id>\t<hex, MSB-first, ceil(n/8) bytes>
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::bits::{matched_words, words_for, Accuracy, Watermark};
use crate::error::ParseErrorKind;
use crate::exec::Exec;
use crate::{Error, Result};

const HEADER_MAGIC: &str = "wmdb";
const HEADER_VERSION: &str = "v1";

/// Minimum codebook size before a single scan is split across threads.
const PAR_SCAN_MIN: usize = 1 << 15;
const SCAN_CHUNK: usize = 1 << 13;

/// Ordered set of `(user_id, watermark)` pairs sharing one length `n`.
///
/// Watermarks are stored contiguously so scans touch one flat buffer.
#[derive(Clone, Debug)]
pub struct Codebook {
    n: usize,
    stride: usize,
    ids: Vec<String>,
    words: Vec<u64>,
    by_id: HashMap<String, usize>,
    by_bits: HashMap<Box<[u64]>, usize>,
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.ids == other.ids && self.words == other.words
    }
}

impl Eq for Codebook {}

/// Result of scanning a codebook for the closest watermarks to a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopTwo {
    /// Lowest index attaining the maximum matched count.
    pub best_index: usize,
    pub best: u32,
    /// Largest matched count among all other entries, if any.
    pub runner_up: Option<u32>,
}

impl TopTwo {
    fn merge(self, other: TopTwo) -> TopTwo {
        // `self` covers lower indices than `other`.
        let (winner, loser_best) = if other.best > self.best {
            (other, self.best)
        } else {
            (self, other.best)
        };
        let runner_up = match winner.runner_up {
            Some(r) => Some(r.max(loser_best)),
            None => Some(loser_best),
        };
        TopTwo { runner_up, ..winner }
    }
}

impl Codebook {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyWatermark);
        }
        Ok(Codebook {
            n,
            stride: words_for(n),
            ids: Vec::new(),
            words: Vec::new(),
            by_id: HashMap::new(),
            by_bits: HashMap::new(),
        })
    }

    /// Builds a codebook with ids `u1, u2, ...` from watermarks in order.
    pub fn from_watermarks<I>(n: usize, watermarks: I) -> Result<Self>
    where
        I: IntoIterator<Item = Watermark>,
    {
        let mut book = Codebook::new(n)?;
        for (i, w) in watermarks.into_iter().enumerate() {
            book.push(format!("u{}", i + 1), w)?;
        }
        Ok(book)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn user_id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, user_id: &str) -> Option<usize> {
        self.by_id.get(user_id).copied()
    }

    pub fn contains_watermark(&self, w: &Watermark) -> bool {
        w.len() == self.n && self.by_bits.contains_key(w.words())
    }

    #[inline]
    pub(crate) fn words_of(&self, i: usize) -> &[u64] {
        &self.words[i * self.stride..(i + 1) * self.stride]
    }

    pub fn watermark(&self, i: usize) -> Watermark {
        Watermark::from_words(self.n, self.words_of(i).to_vec()).expect("stored watermark is valid")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Watermark)> + '_ {
        (0..self.len()).map(move |i| (self.ids[i].as_str(), self.watermark(i)))
    }

    /// The first `len` entries, as a codebook of their own.
    pub fn prefix(&self, len: usize) -> Result<Codebook> {
        if len > self.len() {
            return Err(Error::IndexOutOfRange { index: len, len: self.len() });
        }
        let mut out = Codebook::new(self.n)?;
        for i in 0..len {
            out.push(self.ids[i].clone(), self.watermark(i))?;
        }
        Ok(out)
    }

    /// Appends a user. Rejects duplicate ids, duplicate watermarks, ids that
    /// cannot be written to the file format, and length mismatches.
    pub fn push(&mut self, user_id: impl Into<String>, w: Watermark) -> Result<usize> {
        let user_id = user_id.into();
        if user_id.is_empty() || user_id.contains(['\t', '\n', '\r']) || user_id.trim() != user_id {
            return Err(Error::Domain(format!("invalid user id {user_id:?}")));
        }
        if w.len() != self.n {
            return Err(Error::LengthMismatch { left: self.n, right: w.len() });
        }
        if self.by_id.contains_key(&user_id) {
            return Err(Error::DuplicateUser(user_id));
        }
        if let Some(&j) = self.by_bits.get(w.words()) {
            return Err(Error::DuplicateWatermark(self.ids[j].clone()));
        }
        let idx = self.ids.len();
        self.words.extend_from_slice(w.words());
        self.by_bits.insert(w.words().into(), idx);
        self.by_id.insert(user_id.clone(), idx);
        self.ids.push(user_id);
        Ok(idx)
    }

    fn check_query(&self, w: &Watermark) -> Result<()> {
        if w.len() != self.n {
            return Err(Error::LengthMismatch { left: self.n, right: w.len() });
        }
        Ok(())
    }

    /// Matched-bit counts against every entry, in registration order.
    pub fn matched_all(&self, w: &Watermark) -> Result<Vec<u32>> {
        self.check_query(w)?;
        Ok(self.words.chunks_exact(self.stride).map(|c| matched_words(c, w.words(), self.n)).collect())
    }

    /// Entry with the most matched bits (lowest index on ties).
    pub fn best_match(&self, w: &Watermark, exec: Exec) -> Option<(usize, u32)> {
        debug_assert_eq!(w.len(), self.n);
        if self.is_empty() {
            return None;
        }
        let scan = |acc: Option<(usize, u32)>, range: std::ops::Range<usize>| {
            let mut acc = acc;
            for i in range {
                let m = matched_words(self.words_of(i), w.words(), self.n);
                if acc.is_none_or(|(_, best)| m > best) {
                    acc = Some((i, m));
                }
            }
            acc
        };
        let exec = if self.len() >= PAR_SCAN_MIN { exec } else { Exec::Sequential };
        exec.fold_chunks(self.len(), SCAN_CHUNK, None, scan, |a, b| match (a, b) {
            (Some(x), Some(y)) => Some(if y.1 > x.1 { y } else { x }),
            (x, None) => x,
            (None, y) => y,
        })
    }

    /// Best and runner-up matched counts for attribution.
    pub fn top_two(&self, w: &Watermark, exec: Exec) -> Result<TopTwo> {
        self.check_query(w)?;
        if self.is_empty() {
            return Err(Error::TooFewEntries { needed: 1, actual: 0 });
        }
        let scan = |acc: Option<TopTwo>, range: std::ops::Range<usize>| {
            range.fold(acc, |acc, i| {
                let m = matched_words(self.words_of(i), w.words(), self.n);
                let single = TopTwo { best_index: i, best: m, runner_up: None };
                Some(match acc {
                    None => single,
                    Some(t) => t.merge(single),
                })
            })
        };
        let exec = if self.len() >= PAR_SCAN_MIN { exec } else { Exec::Sequential };
        let top = exec.fold_chunks(self.len(), SCAN_CHUNK, None, scan, |a, b| match (a, b) {
            (Some(x), Some(y)) => Some(x.merge(y)),
            (x, None) => x,
            (None, y) => y,
        });
        Ok(top.expect("non-empty codebook"))
    }

    fn check_pair_stat(&self, i: usize) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::TooFewEntries { needed: 2, actual: self.len() });
        }
        if i >= self.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.len() });
        }
        Ok(())
    }

    /// `(min, max)` matched bits between entry `i` and every other entry.
    fn matched_extremes(&self, i: usize) -> (u32, u32) {
        let wi = self.words_of(i);
        (0..self.len())
            .filter(|&j| j != i)
            .map(|j| matched_words(wi, self.words_of(j), self.n))
            .fold((u32::MAX, 0), |(lo, hi), m| (lo.min(m), hi.max(m)))
    }

    /// Minimum bitwise accuracy between user `i` and any other user.
    pub fn alpha_min(&self, i: usize) -> Result<Accuracy> {
        self.check_pair_stat(i)?;
        Ok(Accuracy::new(self.matched_extremes(i).0, self.n as u32))
    }

    /// Maximum bitwise accuracy between user `i` and any other user.
    pub fn alpha_max(&self, i: usize) -> Result<Accuracy> {
        self.check_pair_stat(i)?;
        Ok(Accuracy::new(self.matched_extremes(i).1, self.n as u32))
    }

    /// `(alpha_min, alpha_max)` for every user, O(s^2 n).
    pub fn alpha_all(&self, exec: Exec) -> Result<Vec<(Accuracy, Accuracy)>> {
        self.check_pair_stat(0)?;
        let n = self.n as u32;
        Ok(exec.map_indexed(self.len(), |i| {
            let (lo, hi) = self.matched_extremes(i);
            (Accuracy::new(lo, n), Accuracy::new(hi, n))
        }))
    }

    /// Largest bitwise accuracy over all unordered pairs.
    pub fn max_pairwise_ba(&self, exec: Exec) -> Result<Accuracy> {
        if self.len() < 2 {
            return Err(Error::TooFewEntries { needed: 2, actual: self.len() });
        }
        let row_max = exec.map_indexed(self.len(), |i| {
            let wi = self.words_of(i);
            (i + 1..self.len()).map(|j| matched_words(wi, self.words_of(j), self.n)).max().unwrap_or(0)
        });
        Ok(Accuracy::new(row_max.into_iter().max().unwrap_or(0), self.n as u32))
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{HEADER_MAGIC} {HEADER_VERSION} n={} count={}", self.n, self.len())?;
        for (id, w) in self.iter() {
            writeln!(out, "{id}\t{}", w.to_hex())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = match lines.next() {
            Some(line) => line?,
            None => return Err(Error::parse(1, ParseErrorKind::MalformedHeader(String::new()))),
        };
        let (n, count) = parse_header(&header).ok_or_else(|| Error::parse(1, ParseErrorKind::MalformedHeader(header.clone())))?;
        let mut book = Codebook::new(n).map_err(|_| Error::parse(1, ParseErrorKind::MalformedHeader(header.clone())))?;
        let hex_len = 2 * n.div_ceil(8);
        let mut found = 0usize;
        for (offset, line) in lines.enumerate() {
            let line_no = offset + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            found += 1;
            let (id, hex) = line
                .split_once('\t')
                .filter(|(id, hex)| !id.is_empty() && !hex.contains('\t'))
                .ok_or_else(|| Error::parse(line_no, ParseErrorKind::MalformedRecord(line.clone())))?;
            if hex.len() != hex_len {
                return Err(Error::parse(line_no, ParseErrorKind::LengthMismatch { expected: hex_len, actual: hex.len() }));
            }
            let w = Watermark::from_hex(n, hex).map_err(|e| match e {
                Error::InvalidBits(msg) if msg.contains("padding") => Error::parse(line_no, ParseErrorKind::PaddingBits),
                _ => Error::parse(line_no, ParseErrorKind::MalformedRecord(line.clone())),
            })?;
            book.push(id, w).map_err(|e| match e {
                Error::DuplicateUser(u) => Error::parse(line_no, ParseErrorKind::DuplicateUser(u)),
                Error::DuplicateWatermark(_) => Error::parse(line_no, ParseErrorKind::DuplicateWatermark(id.to_string())),
                _ => Error::parse(line_no, ParseErrorKind::MalformedRecord(line.clone())),
            })?;
        }
        if found != count {
            return Err(Error::parse(found + 1, ParseErrorKind::CountMismatch { declared: count, found }));
        }
        Ok(book)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("wmdb.tmp");
        self.write_to(BufWriter::new(File::create(&tmp)?))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut parts = line.split(' ');
    if parts.next()? != HEADER_MAGIC || parts.next()? != HEADER_VERSION {
        return None;
    }
    let n = parts.next()?.strip_prefix("n=")?.parse().ok()?;
    let count = parts.next()?.strip_prefix("count=")?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((n, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn book(bits: &[&str]) -> Codebook {
        let ws = bits.iter().map(|b| Watermark::parse_bits(b).unwrap());
        Codebook::from_watermarks(bits[0].len(), ws).unwrap()
    }

    fn random_book(n: usize, s: usize, seed: u64) -> Codebook {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut b = Codebook::new(n).unwrap();
        while b.len() < s {
            let w = Watermark::random(n, &mut rng).unwrap();
            if !b.contains_watermark(&w) {
                b.push(format!("u{}", b.len() + 1), w).unwrap();
            }
        }
        b
    }

    #[test]
    fn alpha_examples() {
        let b = book(&["1111", "0000"]);
        assert_eq!(b.alpha_min(0).unwrap().as_f64(), 0.0);
        assert_eq!(b.alpha_max(0).unwrap().as_f64(), 0.0);
        assert_eq!(b.max_pairwise_ba(Exec::Sequential).unwrap().as_f64(), 0.0);

        let b = book(&["1111", "1110", "0000"]);
        assert_eq!(b.alpha_min(0).unwrap().as_f64(), 0.0);
        assert_eq!(b.alpha_max(0).unwrap().as_f64(), 0.75);
        assert_eq!(b.max_pairwise_ba(Exec::Parallel).unwrap().as_f64(), 0.75);
    }

    #[test]
    fn pair_stats_need_two_entries() {
        let b = book(&["1111"]);
        assert!(matches!(b.alpha_min(0), Err(Error::TooFewEntries { needed: 2, actual: 1 })));
        assert!(matches!(b.alpha_max(0), Err(Error::TooFewEntries { .. })));
        assert!(b.max_pairwise_ba(Exec::Sequential).is_err());
        let b = book(&["1111", "0000"]);
        assert!(matches!(b.alpha_min(2), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn alpha_matches_exhaustive_scan() {
        let b = random_book(16, 8, 11);
        for i in 0..b.len() {
            let wi = b.watermark(i);
            let others: Vec<u32> = (0..b.len()).filter(|&j| j != i).map(|j| wi.matched(&b.watermark(j)).unwrap()).collect();
            assert_eq!(b.alpha_min(i).unwrap().matched, *others.iter().min().unwrap());
            assert_eq!(b.alpha_max(i).unwrap().matched, *others.iter().max().unwrap());
            assert!(b.alpha_min(i).unwrap() <= b.alpha_max(i).unwrap());
        }
        let from_alpha = b.alpha_all(Exec::Parallel).unwrap().iter().map(|p| p.1).max().unwrap();
        assert_eq!(from_alpha, b.max_pairwise_ba(Exec::Sequential).unwrap());
    }

    #[test]
    fn duplicates_rejected_on_push() {
        let mut b = book(&["1111", "0000"]);
        assert!(matches!(b.push("u1", Watermark::parse_bits("1010").unwrap()), Err(Error::DuplicateUser(_))));
        assert!(matches!(b.push("u9", Watermark::parse_bits("0000").unwrap()), Err(Error::DuplicateWatermark(u)) if u == "u2"));
        assert!(b.push("bad\tid", Watermark::parse_bits("1010").unwrap()).is_err());
        assert!(b.push("u3", Watermark::parse_bits("10101").unwrap()).is_err());
    }

    #[test]
    fn top_two_tracks_ties() {
        let b = book(&["1111", "0000"]);
        let t = b.top_two(&Watermark::parse_bits("1100").unwrap(), Exec::Sequential).unwrap();
        assert_eq!(t, TopTwo { best_index: 0, best: 2, runner_up: Some(2) });
        let t = b.top_two(&Watermark::parse_bits("1110").unwrap(), Exec::Sequential).unwrap();
        assert_eq!(t, TopTwo { best_index: 0, best: 3, runner_up: Some(1) });
        let single = book(&["1111"]);
        let t = single.top_two(&Watermark::parse_bits("1110").unwrap(), Exec::Sequential).unwrap();
        assert_eq!(t.runner_up, None);
    }

    #[test]
    fn parallel_scans_match_sequential() {
        let b = random_book(64, PAR_SCAN_MIN + 1000, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let q = Watermark::random(64, &mut rng).unwrap();
            assert_eq!(b.best_match(&q, Exec::Sequential), b.best_match(&q, Exec::Parallel));
            assert_eq!(b.top_two(&q, Exec::Sequential).unwrap(), b.top_two(&q, Exec::Parallel).unwrap());
        }
    }

    #[test]
    fn empty_and_small_books_round_trip() {
        for b in [Codebook::new(64).unwrap(), book(&["1111", "0000", "1010"]), random_book(70, 3, 5)] {
            let mut buf = Vec::new();
            b.write_to(&mut buf).unwrap();
            assert_eq!(Codebook::read_from(buf.as_slice()).unwrap(), b);
        }
    }

    #[test]
    fn file_layout() {
        let b = book(&["10000001", "01111110"]);
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "wmdb v1 n=8 count=2\nu1\t81\nu2\t7e\n");
    }

    fn parse_err(text: &str) -> ParseErrorKind {
        match Codebook::read_from(text.as_bytes()) {
            Err(Error::Parse { kind, .. }) => kind,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_are_distinct() {
        assert!(matches!(parse_err("wmdb v2 n=8 count=0\n"), ParseErrorKind::MalformedHeader(_)));
        assert!(matches!(parse_err("wmdb v1 n=0 count=0\n"), ParseErrorKind::MalformedHeader(_)));
        assert!(matches!(parse_err(""), ParseErrorKind::MalformedHeader(_)));
        assert!(matches!(parse_err("wmdb v1 n=8 count=1\nu1 81\n"), ParseErrorKind::MalformedRecord(_)));
        assert!(matches!(parse_err("wmdb v1 n=8 count=1\nu1\t8100\n"), ParseErrorKind::LengthMismatch { expected: 2, actual: 4 }));
        assert!(matches!(parse_err("wmdb v1 n=4 count=1\nu1\t81\n"), ParseErrorKind::PaddingBits));
        assert!(matches!(parse_err("wmdb v1 n=8 count=2\nu1\t81\nu1\t82\n"), ParseErrorKind::DuplicateUser(_)));
        assert!(matches!(parse_err("wmdb v1 n=8 count=2\nu1\t81\nu2\t81\n"), ParseErrorKind::DuplicateWatermark(_)));
        assert!(matches!(parse_err("wmdb v1 n=8 count=3\nu1\t81\n"), ParseErrorKind::CountMismatch { declared: 3, found: 1 }));
    }
}
