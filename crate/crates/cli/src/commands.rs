use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rand::Rng;

use wmattr::bounds::{self, binom_tail_ge, fraction_to_f64, parse_fraction, BoundInputs, Fraction};
use wmattr::channel::lookup_profile;
use wmattr::config::{Config, Tau};
use wmattr::detect::{attribute, AttributionResult, DetectionThreshold};
use wmattr::experiment::{
    compare_bounds, generate_codebook, run_experiment, run_experiment_with_codebook, sweep, write_sweep_csv, SweepAxis,
    SweepValues,
};
use wmattr::rng::{substream, Domain};
use wmattr::selection::{brute_force_farthest, bsta_decision, select_watermark, SelectionKind};
use wmattr::{Accuracy, Codebook, Exec, Watermark};

use crate::lock::CodebookLock;
use crate::{BoundsArgs, Cli, Command, Global, VerdictArgs};

pub const EXIT_NOT_DETECTED: u8 = 1;
pub const EXIT_ERROR: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;

pub fn run(cli: Cli) -> Result<ExitCode> {
    let g = cli.global;
    match cli.command {
        Command::Register { user_id } => register(&g, &user_id),
        Command::GenCodebook { s } => gen_codebook(&g, s),
        Command::Detect(args) => verdict(&g, &args, false),
        Command::Attribute(args) => verdict(&g, &args, true),
        Command::Bounds(args) => bounds_cmd(&g, &args),
        Command::Simulate { s } => simulate(&g, s),
        Command::Sweep { axis, values, s } => sweep_cmd(&g, &axis, &values, s),
        Command::Bench { s } => bench(&g, s),
        Command::Verify => verify(&g),
    }
}

/// Config file (or defaults) with command-line overrides applied.
fn load_config(g: &Global) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(n) = g.n {
        cfg.experiment.n = n;
    }
    if let Some(tau) = &g.tau {
        cfg.experiment.tau = Tau(parse_fraction(tau)?);
    }
    if let Some(strategy) = &g.strategy {
        cfg.selection.strategy = SelectionKind::from_str(strategy)?;
    }
    if let Some(depth) = g.depth {
        cfg.selection.depth = depth;
    }
    if let Some(seed) = g.seed {
        cfg.seed = Some(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn seed_of(cfg: &Config) -> Result<u64> {
    cfg.seed.ok_or_else(|| anyhow!("a seed is required: pass --seed or set `seed` in the config"))
}

fn codebook_path(g: &Global) -> Result<&Path> {
    g.codebook.as_deref().ok_or_else(|| anyhow!("--codebook is required"))
}

fn check_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} exists; pass --force to overwrite", path.display());
    }
    Ok(())
}

fn out_dir(g: &Global) -> Result<&Path> {
    g.out.as_deref().ok_or_else(|| anyhow!("--out is required"))
}

fn ba_text(a: Accuracy) -> String {
    a.as_f64().to_string()
}

fn register(g: &Global, user_id: &str) -> Result<ExitCode> {
    let cfg = load_config(g)?;
    let seed = seed_of(&cfg)?;
    let path = codebook_path(g)?;
    let _lock = CodebookLock::acquire(path)?;
    let mut book = if path.exists() {
        let book = Codebook::load(path)?;
        if g.n.is_some_and(|n| n != book.n()) {
            bail!("--n {} does not match codebook n={}", g.n.unwrap_or_default(), book.n());
        }
        book
    } else {
        Codebook::new(g.n.ok_or_else(|| anyhow!("--n is required to create a new codebook"))?)?
    };
    if book.index_of(user_id).is_some() {
        return Err(wmattr::Error::DuplicateUser(user_id.to_string()).into());
    }
    let strategy = cfg.strategy(seed).with_exec(g.exec.into());
    let sel = select_watermark(&book, &strategy)?;
    let hex = sel.watermark.to_hex();
    book.push(user_id, sel.watermark)?;
    book.save(path)?;
    println!("user_id={user_id}");
    println!("watermark={hex}");
    println!("achieved_m={}", sel.achieved_m);
    if book.len() > 1 {
        println!("max_ba={}", ba_text(Accuracy { matched: sel.max_matched, n: book.n() as u32 }));
    }
    Ok(ExitCode::SUCCESS)
}

fn gen_codebook(g: &Global, s: usize) -> Result<ExitCode> {
    let cfg = load_config(g)?;
    let seed = seed_of(&cfg)?;
    let path = codebook_path(g)?;
    let _lock = CodebookLock::acquire(path)?;
    check_overwrite(path, g.force)?;
    let exec: Exec = g.exec.into();
    let book = generate_codebook(cfg.experiment.n, s, &cfg.strategy(seed).with_exec(exec))?;
    book.save(path)?;
    println!("s={}", book.len());
    println!("n={}", book.n());
    if book.len() > 1 {
        println!("max_pairwise_ba={}", ba_text(book.max_pairwise_ba(exec)?));
    }
    Ok(ExitCode::SUCCESS)
}

fn verdict(g: &Global, args: &VerdictArgs, name_user: bool) -> Result<ExitCode> {
    let cfg = load_config(g)?;
    let book = Codebook::load(codebook_path(g)?)?;
    let thr = DetectionThreshold::new(cfg.experiment.tau.0, book.n())?;
    if let Some(batch) = &args.batch {
        let input = BufReader::new(File::open(batch).with_context(|| format!("opening {}", batch.display()))?);
        let out: Box<dyn Write> = match &g.out {
            Some(path) => {
                check_overwrite(path, g.force)?;
                Box::new(BufWriter::new(File::create(path)?))
            }
            None => Box::new(io::stdout().lock()),
        };
        write_batch(&book, &thr, input, out)?;
        return Ok(ExitCode::SUCCESS);
    }
    let hex = args.hex.as_deref().expect("clap requires hex or --batch");
    let decoded = Watermark::from_hex(book.n(), hex.trim())?;
    let result = attribute(&decoded, &book, &thr)?;
    println!("detected={}", result.detected);
    if name_user {
        println!("user={}", result.attributed_user(&book).unwrap_or(""));
        println!("tied={}", result.tied);
    }
    println!("best_ba={}", ba_text(result.best_ba));
    println!("runner_up_ba={}", result.runner_up_ba.map(ba_text).unwrap_or_default());
    Ok(if result.detected { ExitCode::SUCCESS } else { ExitCode::from(EXIT_NOT_DETECTED) })
}

/// Verdict CSV for a file of hex watermarks: one row per non-empty line.
pub fn write_batch<R: BufRead, W: Write>(book: &Codebook, thr: &DetectionThreshold, input: R, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["input", "detected", "user_id", "tied", "best_ba", "runner_up_ba"])?;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let hex = line.trim();
        if hex.is_empty() {
            continue;
        }
        let decoded = Watermark::from_hex(book.n(), hex).with_context(|| format!("line {}", lineno + 1))?;
        let r: AttributionResult = attribute(&decoded, book, thr)?;
        w.write_record([
            hex.to_string(),
            r.detected.to_string(),
            r.attributed_user(book).unwrap_or("").to_string(),
            r.tied.to_string(),
            ba_text(r.best_ba),
            r.runner_up_ba.map(ba_text).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Accepts `100000000`, `1e8` or `1.5e3`; the value must be a positive integer.
fn parse_count(text: &str) -> Result<u64> {
    if let Ok(v) = text.parse::<u64>() {
        return Ok(v);
    }
    let x: f64 = text.parse().with_context(|| format!("not a number: `{text}`"))?;
    if !(x >= 1.0 && x.fract() == 0.0 && x <= u64::MAX as f64) {
        bail!("`{text}` is not a positive integer");
    }
    Ok(x as u64)
}

fn bounds_cmd(g: &Global, args: &BoundsArgs) -> Result<ExitCode> {
    let cfg = load_config(g)?;
    let s = parse_count(&args.s)?;
    let inputs = BoundInputs {
        n: u32::try_from(cfg.experiment.n)?,
        tau: cfg.experiment.tau.0,
        beta: args.beta,
        gamma: args.gamma,
        s,
        alpha_min: args.alpha_min.as_deref().map(parse_fraction).transpose()?,
        alpha_max: args.alpha_max.as_deref().map(parse_fraction).transpose()?,
    };
    let table = bounds::bound_table(&inputs)?;
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["bound", "value", "clamped"])?;
    match &table.tdr {
        Some(r) => w.write_record(["tdr_lower", &r.value.to_string(), &r.clamped.to_string()])?,
        None => w.write_record(["tdr_lower", "", "requires tau < beta"])?,
    }
    w.write_record(["tar_lower", &table.tar.value.to_string(), &table.tar.clamped.to_string()])?;
    w.write_record(["fdr_upper_general", &table.fdr_general.value.to_string(), &table.fdr_general.clamped.to_string()])?;
    w.write_record([
        "fdr_upper_independent",
        &table.fdr_independent.value.to_string(),
        &table.fdr_independent.clamped.to_string(),
    ])?;
    w.write_record(["coincide", &table.coincide.to_string(), ""])?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(g: &Global, s: Option<usize>) -> Result<ExitCode> {
    let mut cfg = load_config(g)?;
    if let Some(s) = s {
        cfg.experiment.s = s;
    }
    let exec: Exec = g.exec.into();
    let dir = out_dir(g)?;
    let files = ["per_user.csv", "summary.csv", "bounds.csv", "config.toml"].map(|f| dir.join(f));
    for f in &files {
        check_overwrite(f, g.force)?;
    }

    let report = match &g.codebook {
        Some(path) => {
            let book = Codebook::load(path)?;
            if g.n.is_some_and(|n| n != book.n()) {
                bail!("--n does not match codebook n={}", book.n());
            }
            cfg.experiment.n = book.n();
            cfg.experiment.s = book.len();
            run_experiment_with_codebook(&cfg.experiment_config(None, exec)?, &book)?
        }
        None => run_experiment(&cfg.experiment_config(None, exec)?)?,
    };
    let comparison = compare_bounds(&report);

    fs::create_dir_all(dir)?;
    report.write_per_user_csv(BufWriter::new(File::create(&files[0])?))?;
    report.write_summary_csv(BufWriter::new(File::create(&files[1])?))?;
    comparison.write_csv(BufWriter::new(File::create(&files[2])?))?;
    fs::write(&files[3], cfg.to_toml_string()?)?;

    for (metric, value) in report.summary() {
        println!("{metric}={value}");
    }
    println!("bound_violations={}", comparison.violation_count());
    if let Err(e) = comparison.ensure_no_violations() {
        eprintln!("error: {e}");
        return Ok(ExitCode::from(EXIT_CHECK_FAILED));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep_cmd(g: &Global, axis: &str, values: &[String], s: Option<usize>) -> Result<ExitCode> {
    let mut cfg = load_config(g)?;
    if let Some(s) = s {
        cfg.experiment.s = s;
    }
    let axis = SweepAxis::from_str(axis)?;
    let parse_usize = |v: &String| v.trim().parse::<usize>().with_context(|| format!("bad value `{v}`"));
    let values = match axis {
        SweepAxis::S => SweepValues::S(values.iter().map(parse_usize).collect::<Result<_>>()?),
        SweepAxis::N => SweepValues::N(values.iter().map(parse_usize).collect::<Result<_>>()?),
        SweepAxis::Tau => {
            SweepValues::Tau(values.iter().map(|v| parse_fraction(v)).collect::<wmattr::Result<Vec<Fraction>>>()?)
        }
        SweepAxis::Strategy => {
            SweepValues::Strategy(values.iter().map(|v| SelectionKind::from_str(v.trim())).collect::<wmattr::Result<_>>()?)
        }
        SweepAxis::Postprocess => SweepValues::Postprocess(
            values
                .iter()
                .map(|v| Ok((v.clone(), lookup_profile(&cfg.postprocess.profiles, v.trim())?)))
                .collect::<wmattr::Result<_>>()?,
        ),
    };
    let dir = out_dir(g)?;
    let file = dir.join(format!("sweep_{axis}.csv"));
    check_overwrite(&file, g.force)?;
    let results = sweep(&cfg.experiment_config(None, g.exec.into())?, &values)?;
    fs::create_dir_all(dir)?;
    write_sweep_csv(axis, &results, BufWriter::new(File::create(&file)?))?;
    write_sweep_csv(axis, &results, io::stdout().lock())?;
    Ok(ExitCode::SUCCESS)
}

fn bench(g: &Global, s: usize) -> Result<ExitCode> {
    let cfg = load_config(g)?;
    let seed = seed_of(&cfg)?;
    let exec: Exec = g.exec.into();
    let strategy = cfg.strategy(seed).with_exec(exec);
    let mut book = Codebook::new(cfg.experiment.n)?;
    let mut times = Vec::with_capacity(s);
    let start = Instant::now();
    for i in 0..s {
        let t = Instant::now();
        let sel = select_watermark(&book, &strategy)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        book.push(format!("u{}", i + 1), sel.watermark)?;
    }
    let total = start.elapsed().as_secs_f64();
    let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let median = match sorted.len() {
        0 => 0.0,
        len if len % 2 == 1 => sorted[len / 2],
        len => (sorted[len / 2 - 1] + sorted[len / 2]) / 2.0,
    };
    println!("strategy={}", strategy.kind);
    println!("exec={}", if exec.is_parallel() { "parallel" } else { "sequential" });
    println!("s={s}");
    println!("n={}", book.n());
    println!("mean_ms={mean:.6}");
    println!("median_ms={median:.6}");
    println!("total_s={total:.3}");
    if book.len() > 1 {
        println!("max_pairwise_ba={}", ba_text(book.max_pairwise_ba(exec)?));
    }
    Ok(ExitCode::SUCCESS)
}

type Check = (&'static str, Result<()>);

fn verify(g: &Global) -> Result<ExitCode> {
    let cfg = load_config(g)?;
    let seed = seed_of(&cfg)?;
    let checks: Vec<Check> = vec![
        ("bsta_matches_brute_force", verify_bsta(seed)),
        ("tails_match_rational_sum", verify_tails()),
        ("attribution_matches_scan", verify_attribution(seed)),
        ("codebook_round_trip", verify_round_trip(seed)),
    ];
    let mut failed = 0;
    for (name, outcome) in checks {
        match outcome {
            Ok(()) => println!("ok {name}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e:#}");
            }
        }
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(EXIT_CHECK_FAILED) })
}

fn random_book(n: usize, s: usize, rng: &mut impl Rng) -> Result<Codebook> {
    let mut book = Codebook::new(n)?;
    while book.len() < s {
        let w = Watermark::random(n, rng)?;
        if !book.contains_watermark(&w) {
            book.push(format!("u{}", book.len() + 1), w)?;
        }
    }
    Ok(book)
}

fn verify_bsta(seed: u64) -> Result<()> {
    let mut rng = substream(seed, Domain::Bench, 1);
    for _ in 0..20 {
        let book = random_book(10, rng.gen_range(1..=5), &mut rng)?;
        let (_, m_opt) = brute_force_farthest(&book)?;
        let init = book.watermark(0).complement();
        for m in 0..=10u32 {
            let found = bsta_decision(&book, &init, m, m)?.is_found();
            if found != (m >= m_opt) {
                bail!("m={m}: solver says {found}, optimum is {m_opt}");
            }
        }
    }
    Ok(())
}

fn verify_tails() -> Result<()> {
    for n in 1..=20u32 {
        for tenths in 1..10i128 {
            let p = Fraction::new(tenths, 10);
            let q = Fraction::from_integer(1) - p;
            let pmf: Vec<Fraction> = (0..=n)
                .map(|j| {
                    let mut v = Fraction::from_integer(binomial(n, j));
                    for _ in 0..j {
                        v *= p;
                    }
                    for _ in j..n {
                        v *= q;
                    }
                    v
                })
                .collect();
            for k in 0..=n {
                let exact: Fraction = pmf[k as usize..].iter().copied().sum();
                let got = binom_tail_ge(n, fraction_to_f64(p), k as i64)?;
                let err = (got - fraction_to_f64(exact)).abs();
                if err > 1e-12 {
                    bail!("n={n} p={} k={k}: error {err:e}", fraction_to_f64(p));
                }
            }
        }
    }
    Ok(())
}

fn binomial(n: u32, k: u32) -> i128 {
    (0..k as i128).fold(1i128, |acc, i| acc * (n as i128 - i) / (i + 1))
}

fn verify_attribution(seed: u64) -> Result<()> {
    let mut rng = substream(seed, Domain::Bench, 2);
    let book = random_book(16, 8, &mut rng)?;
    let thr = DetectionThreshold::new(Fraction::new(3, 4), 16)?;
    for _ in 0..1000 {
        let decoded = Watermark::random(16, &mut rng)?;
        let got = attribute(&decoded, &book, &thr)?;
        let scores: Vec<u32> = (0..book.len()).map(|i| book.watermark(i).matched(&decoded)).collect::<wmattr::Result<_>>()?;
        let best = *scores.iter().max().expect("non-empty");
        let first = scores.iter().position(|&v| v == best).expect("max exists");
        let tied = scores.iter().filter(|&&v| v == best).count() > 1;
        let detected = best >= thr.k_min();
        if got.detected != detected || got.tied != tied || got.attributed != detected.then_some(first) {
            bail!("decoded {decoded}: got {got:?}");
        }
    }
    Ok(())
}

fn verify_round_trip(seed: u64) -> Result<()> {
    let mut rng = substream(seed, Domain::Bench, 3);
    let book = random_book(70, 50, &mut rng)?;
    let mut buf = Vec::new();
    book.write_to(&mut buf)?;
    let back = Codebook::read_from(&buf[..])?;
    if back != book {
        bail!("reloaded codebook differs");
    }
    Ok(())
}
