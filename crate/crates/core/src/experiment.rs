//! Monte Carlo experiments over the simulated channel.
//!
//! A run builds (or takes) a codebook, decodes `samples_per_user` watermarked
//! contents per user and `fdr_samples` unwatermarked contents, attributes each
//! decode, and tallies the outcome branches. Every random draw comes from a
//! substream of the master seed keyed by user or sample index, so a report is
//! identical whether users are simulated sequentially or in parallel.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::bits::Accuracy;
use crate::bounds::{self, format_fraction, BoundInputs, Fraction};
use crate::channel::{degrade_beta, simulate_watermarked_decode, ChannelParams, PostprocessProfile, UnwatermarkedSource};
use crate::codebook::Codebook;
use crate::detect::{attribute_with, classify_outcome, Branch, DetectionThreshold, GroundTruth};
use crate::exec::Exec;
use crate::rng::{substream, Domain};
use crate::selection::{select_watermark, SelectionKind, SelectionStrategy};
use crate::stats::{mean, wilson_width_99, worst_one_percent};
use crate::{Error, Result};

pub const DEFAULT_SAMPLES_PER_USER: u32 = 100;
pub const DEFAULT_FDR_SAMPLES: u32 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub tau: Fraction,
    pub s: usize,
    pub samples_per_user: u32,
    pub fdr_samples: u32,
    /// Selection solver; its seed is overwritten by `seed` when the codebook
    /// is generated here.
    pub strategy: SelectionStrategy,
    pub channel: ChannelParams,
    pub postprocess: Option<PostprocessProfile>,
    pub seed: u64,
    pub exec: Exec,
}

impl ExperimentConfig {
    /// Desk-scale defaults: `n = 64`, `tau = 0.9`, `s = 1000`, A-BSTA.
    pub fn new(seed: u64) -> Self {
        ExperimentConfig {
            n: 64,
            tau: Fraction::new(9, 10),
            s: 1000,
            samples_per_user: DEFAULT_SAMPLES_PER_USER,
            fdr_samples: DEFAULT_FDR_SAMPLES,
            strategy: SelectionStrategy::new(SelectionKind::ABsta, seed),
            channel: ChannelParams::default(),
            postprocess: None,
            seed,
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > bounds::MAX_TAIL_N as usize {
            return Err(Error::Config(format!("n={} outside 1..={}", self.n, bounds::MAX_TAIL_N)));
        }
        if self.s == 0 {
            return Err(Error::Config("s must be at least 1".into()));
        }
        if self.samples_per_user == 0 {
            return Err(Error::Config("samples_per_user must be at least 1".into()));
        }
        DetectionThreshold::new(self.tau, self.n)?;
        self.channel.validate()?;
        if let Some(p) = &self.postprocess {
            p.validate()?;
        }
        Ok(())
    }

    fn selection(&self) -> SelectionStrategy {
        SelectionStrategy { seed: self.seed, exec: self.exec, ..self.strategy }
    }
}

/// Registers `s` users `u1..us` one after another with `strategy`.
pub fn generate_codebook(n: usize, s: usize, strategy: &SelectionStrategy) -> Result<Codebook> {
    let mut book = Codebook::new(n)?;
    for i in 0..s {
        let sel = select_watermark(&book, strategy)?;
        book.push(format!("u{}", i + 1), sel.watermark)?;
    }
    Ok(book)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserRow {
    pub user_id: String,
    /// Channel accuracy after post-processing.
    pub beta: f64,
    pub beta_hat: f64,
    pub tdr: f64,
    pub tar: f64,
    /// `None` when `tau >= beta`, where the TDR bound does not apply.
    pub tdr_bound: Option<f64>,
    pub tar_bound: f64,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    /// Samples ending in the correct-attribution branch.
    pub correct: u64,
    /// Samples ending in the wrong-attribution branch.
    pub wrong: u64,
    pub missed: u64,
    pub samples: u64,
    /// Detection alone guarantees correct attribution for this user.
    pub coincide: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub n: usize,
    pub tau: Fraction,
    pub s: usize,
    pub seed: u64,
    pub samples_per_user: u32,
    pub fdr_samples: u32,
    pub per_user: Vec<UserRow>,
    pub fdr: f64,
    pub false_detections: u64,
    pub avg_tdr: f64,
    pub avg_tar: f64,
    pub worst1_tdr: f64,
    pub worst1_tar: f64,
    /// Counts for branches 1..=5, index 0 is branch 1.
    pub branch_counts: [u64; 5],
    pub gamma: f64,
    /// `NaN` when `fdr_samples == 0`.
    pub gamma_hat: f64,
    pub fdr_bound_general: f64,
    pub fdr_bound_general_clamped: bool,
    pub fdr_bound_independent: f64,
    pub max_pairwise_ba: Option<Accuracy>,
}

impl ExperimentReport {
    pub fn coincide_all(&self) -> bool {
        self.per_user.iter().all(|u| u.coincide)
    }

    /// `(metric, value)` pairs in the order the summary CSV uses.
    pub fn summary(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let b = &self.branch_counts;
        vec![
            ("n", self.n.to_string()),
            ("tau", format_fraction(self.tau)),
            ("s", self.s.to_string()),
            ("seed", self.seed.to_string()),
            ("samples_per_user", self.samples_per_user.to_string()),
            ("fdr_samples", self.fdr_samples.to_string()),
            ("avg_tdr", self.avg_tdr.to_string()),
            ("avg_tar", self.avg_tar.to_string()),
            ("worst1_tdr", self.worst1_tdr.to_string()),
            ("worst1_tar", self.worst1_tar.to_string()),
            ("fdr", self.fdr.to_string()),
            ("gamma_hat", self.gamma_hat.to_string()),
            ("fdr_bound_general", self.fdr_bound_general.to_string()),
            ("fdr_bound_independent", self.fdr_bound_independent.to_string()),
            ("max_pairwise_ba", opt(self.max_pairwise_ba.map(|a| a.as_f64()))),
            ("branch1", b[0].to_string()),
            ("branch2", b[1].to_string()),
            ("branch3", b[2].to_string()),
            ("branch4", b[3].to_string()),
            ("branch5", b[4].to_string()),
        ]
    }

    /// Per-user CSV: `user_id,beta_hat,tdr,tar,tdr_bound,tar_bound,alpha_min,alpha_max`.
    pub fn write_per_user_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "beta_hat", "tdr", "tar", "tdr_bound", "tar_bound", "alpha_min", "alpha_max"])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for u in &self.per_user {
            w.write_record([
                u.user_id.clone(),
                u.beta_hat.to_string(),
                u.tdr.to_string(),
                u.tar.to_string(),
                opt(u.tdr_bound),
                u.tar_bound.to_string(),
                opt(u.alpha_min),
                opt(u.alpha_max),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Summary CSV: `metric,value`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        for (metric, value) in self.summary() {
            w.write_record([metric, value.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Generates the codebook with the configured strategy, then simulates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let book = generate_codebook(cfg.n, cfg.s, &cfg.selection())?;
    run_experiment_with_codebook(cfg, &book)
}

/// Simulates against an existing codebook; `cfg.n` and `cfg.s` must match it.
pub fn run_experiment_with_codebook(cfg: &ExperimentConfig, book: &Codebook) -> Result<ExperimentReport> {
    cfg.validate()?;
    if book.n() != cfg.n || book.len() != cfg.s {
        return Err(Error::Config(format!(
            "codebook has n={} s={}, config has n={} s={}",
            book.n(),
            book.len(),
            cfg.n,
            cfg.s
        )));
    }
    let thr = DetectionThreshold::new(cfg.tau, cfg.n)?;
    let betas = cfg
        .channel
        .beta
        .resolve(book, cfg.seed)?
        .into_iter()
        .map(|b| match &cfg.postprocess {
            Some(p) => degrade_beta(b, p),
            None => Ok(b),
        })
        .collect::<Result<Vec<_>>>()?;
    let alphas = if book.len() >= 2 { Some(book.alpha_all(cfg.exec)?) } else { None };

    let rows = cfg.exec.map_indexed(book.len(), |i| {
        let alpha = alphas.as_ref().map(|a| a[i]);
        simulate_user(cfg, book, &thr, i, betas[i], alpha)
    });
    let per_user = rows.into_iter().collect::<Result<Vec<_>>>()?;

    let (false_detections, ones) = simulate_unwatermarked(cfg, book, &thr)?;
    let fdr = if cfg.fdr_samples == 0 { 0.0 } else { false_detections as f64 / cfg.fdr_samples as f64 };
    let gamma_hat = if cfg.fdr_samples == 0 { f64::NAN } else { (ones as f64 / (cfg.fdr_samples as f64 * cfg.n as f64) - 0.5).abs() };

    let mut branch_counts = [0u64; 5];
    branch_counts[Branch::CorrectRejection.index()] = cfg.fdr_samples as u64 - false_detections;
    branch_counts[Branch::FalseDetection.index()] = false_detections;
    for u in &per_user {
        branch_counts[Branch::MissedDetection.index()] += u.missed;
        branch_counts[Branch::CorrectAttribution.index()] += u.correct;
        branch_counts[Branch::WrongAttribution.index()] += u.wrong;
    }

    let tdrs: Vec<f64> = per_user.iter().map(|u| u.tdr).collect();
    let tars: Vec<f64> = per_user.iter().map(|u| u.tar).collect();
    let fdr_inputs = BoundInputs {
        n: cfg.n as u32,
        tau: cfg.tau,
        beta: 1.0,
        gamma: cfg.channel.gamma,
        s: cfg.s as u64,
        alpha_min: alphas.as_ref().map(|a| to_fraction(a[0].0)),
        alpha_max: alphas.as_ref().map(|a| to_fraction(a[0].1)),
    };
    let general = bounds::fdr_upper_bound_general(&fdr_inputs)?;
    let independent = bounds::fdr_upper_bound_independent(&fdr_inputs)?;
    let max_pairwise_ba = if book.len() >= 2 { Some(book.max_pairwise_ba(cfg.exec)?) } else { None };

    Ok(ExperimentReport {
        n: cfg.n,
        tau: cfg.tau,
        s: cfg.s,
        seed: cfg.seed,
        samples_per_user: cfg.samples_per_user,
        fdr_samples: cfg.fdr_samples,
        fdr,
        false_detections,
        avg_tdr: mean(&tdrs),
        avg_tar: mean(&tars),
        worst1_tdr: worst_one_percent(&tdrs),
        worst1_tar: worst_one_percent(&tars),
        branch_counts,
        gamma: cfg.channel.gamma,
        gamma_hat,
        fdr_bound_general: general.value,
        fdr_bound_general_clamped: general.clamped,
        fdr_bound_independent: independent.value,
        max_pairwise_ba,
        per_user,
    })
}

fn to_fraction(a: Accuracy) -> Fraction {
    Fraction::new(a.matched as i128, a.n as i128)
}

fn simulate_user(
    cfg: &ExperimentConfig,
    book: &Codebook,
    thr: &DetectionThreshold,
    i: usize,
    beta: f64,
    alpha: Option<(Accuracy, Accuracy)>,
) -> Result<UserRow> {
    let w = book.watermark(i);
    let mut rng = substream(cfg.seed, Domain::WatermarkedSamples, i as u64);
    let (mut correct, mut wrong, mut missed, mut matched) = (0u64, 0u64, 0u64, 0u64);
    for _ in 0..cfg.samples_per_user {
        let decoded = simulate_watermarked_decode(&w, beta, &mut rng)?;
        matched += decoded.matched(&w)? as u64;
        let result = attribute_with(&decoded, book, thr, Exec::Sequential)?;
        match classify_outcome(GroundTruth::Ai(i), &result) {
            Branch::CorrectAttribution => correct += 1,
            Branch::WrongAttribution => wrong += 1,
            Branch::MissedDetection => missed += 1,
            other => unreachable!("watermarked content classified as {other}"),
        }
    }
    let samples = cfg.samples_per_user as u64;
    let inputs = BoundInputs {
        n: cfg.n as u32,
        tau: cfg.tau,
        beta,
        gamma: cfg.channel.gamma,
        s: cfg.s as u64,
        alpha_min: alpha.map(|a| to_fraction(a.0)),
        alpha_max: alpha.map(|a| to_fraction(a.1)),
    };
    let table = bounds::bound_table(&inputs)?;
    Ok(UserRow {
        user_id: book.user_id(i).to_string(),
        beta,
        beta_hat: matched as f64 / (samples * cfg.n as u64) as f64,
        tdr: (correct + wrong) as f64 / samples as f64,
        tar: correct as f64 / samples as f64,
        tdr_bound: table.tdr.map(|b| b.value),
        tar_bound: table.tar.value,
        alpha_min: alpha.map(|a| a.0.as_f64()),
        alpha_max: alpha.map(|a| a.1.as_f64()),
        correct,
        wrong,
        missed,
        samples,
        coincide: table.coincide,
    })
}

/// False detections and total 1-bits over the unwatermarked samples.
fn simulate_unwatermarked(cfg: &ExperimentConfig, book: &Codebook, thr: &DetectionThreshold) -> Result<(u64, u64)> {
    let mut bias_rng = substream(cfg.seed, Domain::BitBias, 0);
    let source = UnwatermarkedSource::new(cfg.n, cfg.channel.gamma, cfg.channel.gamma_mode, &mut bias_rng)?;
    let k_min = thr.k_min();
    let counts = cfg.exec.fold_chunks(
        cfg.fdr_samples as usize,
        256,
        (0u64, 0u64),
        |(mut hits, mut ones), range| {
            for j in range {
                let mut rng = substream(cfg.seed, Domain::UnwatermarkedSamples, j as u64);
                let decoded = source.sample(&mut rng);
                ones += decoded.count_ones() as u64;
                if book.best_match(&decoded, Exec::Sequential).is_some_and(|(_, m)| m >= k_min) {
                    hits += 1;
                }
            }
            (hits, ones)
        },
        |a, b| (a.0 + b.0, a.1 + b.1),
    );
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Tdr,
    Tar,
    Fdr,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Tdr => "tdr",
            Metric::Tar => "tar",
            Metric::Fdr => "fdr",
        })
    }
}

/// One empirical rate next to its theoretical bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    /// User id, or `*` for the FDR row.
    pub subject: String,
    pub metric: Metric,
    pub empirical: f64,
    pub bound: f64,
    /// Full width of the 99% Wilson interval of `empirical`.
    pub tolerance: f64,
    /// Signed slack in the bound's favour: `empirical - bound` for lower
    /// bounds, `bound - empirical` for the FDR upper bound.
    pub margin: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundComparison {
    pub rows: Vec<ComparisonRow>,
}

impl BoundComparison {
    pub fn violations(&self) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(|r| r.violated)
    }

    pub fn violation_count(&self) -> usize {
        self.violations().count()
    }

    /// Error naming the first violation, if any.
    pub fn ensure_no_violations(&self) -> Result<()> {
        match self.violations().next() {
            None => Ok(()),
            Some(r) => Err(Error::BoundViolation(format!(
                "{} violation(s); first: {} {} empirical={} bound={} tolerance={}",
                self.violation_count(),
                r.subject,
                r.metric,
                r.empirical,
                r.bound,
                r.tolerance
            ))),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Checks every user's TDR/TAR against its lower bounds and the FDR against
/// the independent-selection upper bound, each with a 99% Wilson tolerance.
pub fn compare_bounds(report: &ExperimentReport) -> BoundComparison {
    let mut rows = Vec::with_capacity(2 * report.per_user.len() + 1);
    let lower = |subject: &str, metric, hits: u64, trials: u64, bound: f64| {
        let empirical = hits as f64 / trials as f64;
        let tolerance = wilson_width_99(hits, trials);
        ComparisonRow {
            subject: subject.to_string(),
            metric,
            empirical,
            bound,
            tolerance,
            margin: empirical - bound,
            violated: empirical < bound - tolerance,
        }
    };
    for u in &report.per_user {
        if let Some(bound) = u.tdr_bound {
            rows.push(lower(&u.user_id, Metric::Tdr, u.correct + u.wrong, u.samples, bound));
        }
        rows.push(lower(&u.user_id, Metric::Tar, u.correct, u.samples, u.tar_bound));
    }
    if report.fdr_samples > 0 {
        let trials = report.fdr_samples as u64;
        let tolerance = wilson_width_99(report.false_detections, trials);
        let bound = report.fdr_bound_independent;
        rows.push(ComparisonRow {
            subject: "*".into(),
            metric: Metric::Fdr,
            empirical: report.fdr,
            bound,
            tolerance,
            margin: bound - report.fdr,
            violated: report.fdr > bound + tolerance,
        });
    }
    BoundComparison { rows }
}

/// Parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    S,
    N,
    Tau,
    Strategy,
    Postprocess,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" => Ok(SweepAxis::S),
            "n" => Ok(SweepAxis::N),
            "tau" => Ok(SweepAxis::Tau),
            "strategy" => Ok(SweepAxis::Strategy),
            "postprocess" => Ok(SweepAxis::Postprocess),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::S => "s",
            SweepAxis::N => "n",
            SweepAxis::Tau => "tau",
            SweepAxis::Strategy => "strategy",
            SweepAxis::Postprocess => "postprocess",
        })
    }
}

/// Values for one sweep axis.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepValues {
    S(Vec<usize>),
    N(Vec<usize>),
    Tau(Vec<Fraction>),
    Strategy(Vec<SelectionKind>),
    /// `(label, profile)` pairs.
    Postprocess(Vec<(String, PostprocessProfile)>),
}

impl SweepValues {
    pub fn axis(&self) -> SweepAxis {
        match self {
            SweepValues::S(_) => SweepAxis::S,
            SweepValues::N(_) => SweepAxis::N,
            SweepValues::Tau(_) => SweepAxis::Tau,
            SweepValues::Strategy(_) => SweepAxis::Strategy,
            SweepValues::Postprocess(_) => SweepAxis::Postprocess,
        }
    }
}

/// One report per value; everything except the swept parameter is shared.
///
/// Codebooks are reused where the axis allows: `s` runs on prefixes of one
/// codebook of the largest size, `tau` and `postprocess` runs on the same
/// codebook. Returned labels are the values as text.
pub fn sweep(cfg: &ExperimentConfig, values: &SweepValues) -> Result<Vec<(String, ExperimentReport)>> {
    cfg.validate()?;
    let strategy = cfg.selection();
    let mut out = Vec::new();
    match values {
        SweepValues::S(sizes) => {
            let max = sizes.iter().copied().max().unwrap_or(0);
            let full = generate_codebook(cfg.n, max, &strategy)?;
            for &s in sizes {
                let c = ExperimentConfig { s, ..cfg.clone() };
                out.push((s.to_string(), run_experiment_with_codebook(&c, &full.prefix(s)?)?));
            }
        }
        SweepValues::N(lengths) => {
            for &n in lengths {
                let c = ExperimentConfig { n, ..cfg.clone() };
                out.push((n.to_string(), run_experiment(&c)?));
            }
        }
        SweepValues::Tau(taus) => {
            let book = generate_codebook(cfg.n, cfg.s, &strategy)?;
            for &tau in taus {
                let c = ExperimentConfig { tau, ..cfg.clone() };
                out.push((format_fraction(tau), run_experiment_with_codebook(&c, &book)?));
            }
        }
        SweepValues::Strategy(kinds) => {
            for &kind in kinds {
                let c = ExperimentConfig { strategy: SelectionStrategy { kind, ..cfg.strategy }, ..cfg.clone() };
                out.push((kind.to_string(), run_experiment(&c)?));
            }
        }
        SweepValues::Postprocess(profiles) => {
            let book = generate_codebook(cfg.n, cfg.s, &strategy)?;
            for (label, profile) in profiles {
                let c = ExperimentConfig { postprocess: Some(*profile), ..cfg.clone() };
                out.push((label.clone(), run_experiment_with_codebook(&c, &book)?));
            }
        }
    }
    Ok(out)
}

/// Sweep results as CSV: the axis value followed by the summary metrics.
pub fn write_sweep_csv<W: Write>(axis: SweepAxis, results: &[(String, ExperimentReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some((_, first)) = results.first() {
        let mut header = vec![axis.to_string()];
        header.extend(first.summary().into_iter().map(|(m, _)| m.to_string()));
        w.write_record(&header)?;
    }
    for (label, report) in results {
        let mut record = vec![label.clone()];
        record.extend(report.summary().into_iter().map(|(_, v)| v));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
