//! Watermark selection: give a new user the watermark whose maximum bitwise
//! accuracy with the existing watermarks is as small as possible.
//!
//! Selection is driven by the decision problem "is there a watermark `w`
//! with at most `m` matched bits against every existing watermark?". Each
//! solver answers that question for one `m`; [`select_watermark`] starts
//! from a warm-start `m` and increments it until a solver succeeds.
//!
//! * [`bsta_decision`]: bounded search tree. Exact when started from the
//!   complement of the first watermark with depth `d = m`.
//! * [`nrg_decision`]: randomised non-redundant guessing.
//! * [`absta_decision`]: bounded search tree from a random start with a
//!   constant depth cap.
//!
//! Every solver re-checks its answer before returning `Found`, so a returned
//! watermark always satisfies the `m` contract.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{matched_words, Watermark};
use crate::codebook::Codebook;
use crate::exec::Exec;
use crate::rng::{substream, Domain};
use crate::{Error, Result};

pub const DEFAULT_DEPTH: u32 = 8;
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;
pub const BRUTE_FORCE_MAX_N: usize = 20;
/// Node cap for each subtree below the A-BSTA root.
pub const DEFAULT_BRANCH_BUDGET: u64 = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionKind {
    Random,
    Bsta,
    Nrg,
    #[serde(alias = "absta")]
    ABsta,
}

impl SelectionKind {
    pub const ALL: [SelectionKind; 4] = [SelectionKind::Random, SelectionKind::Bsta, SelectionKind::Nrg, SelectionKind::ABsta];
}

impl fmt::Display for SelectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionKind::Random => "random",
            SelectionKind::Bsta => "bsta",
            SelectionKind::Nrg => "nrg",
            SelectionKind::ABsta => "a-bsta",
        })
    }
}

impl FromStr for SelectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(SelectionKind::Random),
            "bsta" => Ok(SelectionKind::Bsta),
            "nrg" => Ok(SelectionKind::Nrg),
            "a-bsta" | "absta" | "a_bsta" => Ok(SelectionKind::ABsta),
            other => Err(Error::Config(format!("unknown selection strategy `{other}`"))),
        }
    }
}

/// Which solver to run, and its knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionStrategy {
    pub kind: SelectionKind,
    /// Recursion depth cap for A-BSTA.
    pub depth: u32,
    pub seed: u64,
    /// Node cap for the exact solver, summed over all `m` tried.
    pub node_budget: u64,
    /// Per-subtree node cap for A-BSTA.
    pub branch_budget: u64,
    pub exec: Exec,
}

impl SelectionStrategy {
    pub fn new(kind: SelectionKind, seed: u64) -> Self {
        SelectionStrategy { kind, depth: DEFAULT_DEPTH, seed, node_budget: DEFAULT_NODE_BUDGET, branch_budget: DEFAULT_BRANCH_BUDGET, exec: Exec::default() }
    }

    pub fn with_depth(mut self, depth: u32) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_node_budget(mut self, budget: u64) -> Self {
        self.node_budget = budget;
        self
    }

    pub fn with_branch_budget(mut self, budget: u64) -> Self {
        self.branch_budget = budget;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.kind == SelectionKind::ABsta && self.depth == 0 {
            return Err(Error::Config("A-BSTA depth must be at least 1".into()));
        }
        if self.kind == SelectionKind::ABsta && self.branch_budget == 0 {
            return Err(Error::Config("A-BSTA branch budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecisionOutcome {
    Found(Watermark),
    NotExist,
}

impl DecisionOutcome {
    pub fn is_found(&self) -> bool {
        matches!(self, DecisionOutcome::Found(_))
    }

    pub fn found(self) -> Option<Watermark> {
        match self {
            DecisionOutcome::Found(w) => Some(w),
            DecisionOutcome::NotExist => None,
        }
    }
}

/// A selected watermark with the decision parameter it was found at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub watermark: Watermark,
    /// Every existing watermark matches the selection in at most this many bits.
    pub achieved_m: u32,
    /// Actual maximum matched bits against the existing watermarks (0 if none).
    pub max_matched: u32,
}

fn check_decision_inputs(existing: &Codebook, init: &Watermark, m: u32) -> Result<()> {
    if existing.is_empty() {
        return Err(Error::TooFewEntries { needed: 1, actual: 0 });
    }
    if init.len() != existing.n() {
        return Err(Error::LengthMismatch { left: existing.n(), right: init.len() });
    }
    if m as usize > existing.n() {
        return Err(Error::Domain(format!("m={m} exceeds n={}", existing.n())));
    }
    Ok(())
}

/// Highest matched count against `existing`, and the first entry attaining it.
fn worst_match(existing: &Codebook, w: &Watermark, exec: Exec) -> (usize, u32) {
    existing.best_match(w, exec).expect("non-empty codebook")
}

struct TreeSearch<'a> {
    existing: &'a Codebook,
    m: u32,
    cap: Option<u64>,
    nodes: u64,
    /// Candidates already shown to have no solution within the stored depth.
    /// The same candidate is reached by every ordering of the same flips.
    failed: HashMap<Box<[u64]>, i64>,
}

enum Node {
    Found,
    Pruned,
    Branch(Vec<usize>),
}

impl<'a> TreeSearch<'a> {
    fn new(existing: &'a Codebook, m: u32, cap: Option<u64>) -> Self {
        TreeSearch { existing, m, cap, nodes: 0, failed: HashMap::new() }
    }

    fn enter(&mut self) -> Result<()> {
        self.nodes += 1;
        match self.cap {
            Some(cap) if self.nodes > cap => Err(Error::ResourceLimit(format!("bounded search exceeded {cap} nodes"))),
            _ => Ok(()),
        }
    }

    fn expand(&self, w: &Watermark, depth: i64) -> Node {
        if depth < 0 {
            return Node::Pruned;
        }
        let (worst, matched) = worst_match(self.existing, w, Exec::Sequential);
        if matched as i64 > self.m as i64 + depth {
            return Node::Pruned;
        }
        if matched <= self.m {
            return Node::Found;
        }
        // `matched > m`, so at least m+1 agreeing positions exist; take the lowest.
        let mut branch = w.matching_positions(self.existing.words_of(worst));
        branch.truncate(self.m as usize + 1);
        Node::Branch(branch)
    }

    /// One node of the search tree. `w` is restored before returning.
    fn search(&mut self, w: &mut Watermark, depth: i64) -> Result<Option<Watermark>> {
        if self.failed.get(w.words()).is_some_and(|&d| d >= depth) {
            return Ok(None);
        }
        self.enter()?;
        match self.expand(w, depth) {
            Node::Found => Ok(Some(w.clone())),
            Node::Pruned => Ok(None),
            Node::Branch(branch) => {
                for k in branch {
                    w.flip(k);
                    let found = self.search(w, depth - 1);
                    w.flip(k);
                    if let Some(found) = found? {
                        return Ok(Some(found));
                    }
                }
                self.failed.insert(w.words().into(), depth);
                Ok(None)
            }
        }
    }
}

fn outcome_of(existing: &Codebook, m: u32, found: Option<Watermark>) -> DecisionOutcome {
    match found {
        Some(w) => {
            debug_assert!(worst_match(existing, &w, Exec::Sequential).1 <= m);
            DecisionOutcome::Found(w)
        }
        None => DecisionOutcome::NotExist,
    }
}

fn run_tree(existing: &Codebook, init: &Watermark, depth: u32, m: u32, cap: Option<u64>) -> Result<(DecisionOutcome, u64)> {
    check_decision_inputs(existing, init, m)?;
    let mut search = TreeSearch::new(existing, m, cap);
    let mut w = init.clone();
    let found = search.search(&mut w, depth as i64)?;
    Ok((outcome_of(existing, m, found), search.nodes))
}

/// Bounded search tree decision solver.
///
/// Branches on the `m + 1` lowest-index positions where the current
/// candidate agrees with its worst-matching existing watermark. With
/// `init = !w_1` and `depth = m` the answer is exact.
pub fn bsta_decision(existing: &Codebook, init: &Watermark, depth: u32, m: u32) -> Result<DecisionOutcome> {
    Ok(run_tree(existing, init, depth, m, None)?.0)
}

/// [`bsta_decision`] with a node cap; returns the outcome and nodes visited.
pub fn bsta_decision_budgeted(existing: &Codebook, init: &Watermark, depth: u32, m: u32, node_budget: u64) -> Result<(DecisionOutcome, u64)> {
    run_tree(existing, init, depth, m, Some(node_budget))
}

/// Depth-capped bounded search tree from a uniformly random start.
///
/// Each subtree below the root may visit at most
/// [`DEFAULT_BRANCH_BUDGET`] nodes; a subtree that runs out is treated as
/// holding no solution.
pub fn absta_decision<R: Rng + ?Sized>(existing: &Codebook, depth: u32, m: u32, rng: &mut R) -> Result<DecisionOutcome> {
    absta_decision_budgeted(existing, depth, m, DEFAULT_BRANCH_BUDGET, rng, Exec::Sequential)
}

/// [`absta_decision`] with an explicit per-subtree node budget.
///
/// The root's subtrees are searched independently (in parallel under
/// [`Exec::Parallel`]) and the lowest-index success wins, so the outcome does
/// not depend on `exec`.
pub fn absta_decision_budgeted<R: Rng + ?Sized>(
    existing: &Codebook,
    depth: u32,
    m: u32,
    branch_budget: u64,
    rng: &mut R,
    exec: Exec,
) -> Result<DecisionOutcome> {
    let init = Watermark::random(existing.n(), rng)?;
    check_decision_inputs(existing, &init, m)?;
    let root = TreeSearch::new(existing, m, None);
    let branch = match root.expand(&init, depth as i64) {
        Node::Found => return Ok(DecisionOutcome::Found(init)),
        Node::Pruned => return Ok(DecisionOutcome::NotExist),
        Node::Branch(branch) => branch,
    };
    let found = exec.find_map_first(branch.len(), |b| {
        let mut child = init.clone();
        child.flip(branch[b]);
        let mut search = TreeSearch::new(existing, m, Some(branch_budget));
        match search.search(&mut child, depth as i64 - 1) {
            Ok(found) => found,
            Err(Error::ResourceLimit(_)) => None,
            Err(e) => unreachable!("inputs already checked: {e}"),
        }
    });
    Ok(outcome_of(existing, m, found))
}

/// Non-redundant guessing.
///
/// Repeatedly flips `matched - m` randomly chosen agreeing positions against
/// the worst-matching watermark, never touching a position twice, until the
/// candidate satisfies `m`, the worst match exceeds `2m`, or `m` flips have
/// been spent.
pub fn nrg_decision<R: Rng + ?Sized>(existing: &Codebook, init: &Watermark, m: u32, rng: &mut R) -> Result<DecisionOutcome> {
    check_decision_inputs(existing, init, m)?;
    let n = existing.n();
    let mut w = init.clone();
    let mut excluded = vec![false; n];
    let mut remaining = m as i64;
    loop {
        let (worst, matched) = worst_match(existing, &w, Exec::Sequential);
        if matched <= m {
            return Ok(DecisionOutcome::Found(w));
        }
        if matched > 2 * m || remaining <= 0 {
            return Ok(DecisionOutcome::NotExist);
        }
        let candidates: Vec<usize> = w.matching_positions(existing.words_of(worst)).into_iter().filter(|&k| !excluded[k]).collect();
        let need = (matched - m) as usize;
        if need as i64 > remaining || need > candidates.len() {
            return Ok(DecisionOutcome::NotExist);
        }
        for pick in index::sample(rng, candidates.len(), need) {
            let k = candidates[pick];
            w.flip(k);
            excluded[k] = true;
        }
        remaining -= need as i64;
    }
}

/// Uniformly random watermark.
pub fn random_select<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Watermark> {
    Watermark::random(n, rng)
}

/// Warm start: most matched bits between the newest watermark and the others.
pub fn warm_start(existing: &Codebook) -> u32 {
    let s = existing.len();
    if s < 2 {
        return 0;
    }
    let last = existing.words_of(s - 1);
    (0..s - 1).map(|i| matched_words(existing.words_of(i), last, existing.n())).max().unwrap_or(0)
}

/// Picks a watermark for the next user to register.
///
/// The first user gets a uniformly random watermark. Afterwards the chosen
/// solver is run at increasing `m` from [`warm_start`] until it succeeds;
/// `m = n` always succeeds. Randomness comes from the substream of
/// `strategy.seed` indexed by the current codebook size, so registration
/// order fully determines the result.
pub fn select_watermark(existing: &Codebook, strategy: &SelectionStrategy) -> Result<Selection> {
    strategy.validate()?;
    let n = existing.n();
    let mut rng = substream(strategy.seed, Domain::Selection, existing.len() as u64);

    if existing.is_empty() {
        let watermark = random_select(n, &mut rng)?;
        return Ok(Selection { watermark, achieved_m: 0, max_matched: 0 });
    }

    if strategy.kind == SelectionKind::Random {
        let watermark = fresh_random(existing, &mut rng)?;
        let max_matched = worst_match(existing, &watermark, strategy.exec).1;
        return Ok(Selection { watermark, achieved_m: max_matched, max_matched });
    }

    let first_complement = existing.watermark(0).complement();
    let mut nodes_left = strategy.node_budget;
    let mut m = warm_start(existing);
    loop {
        let outcome = match strategy.kind {
            SelectionKind::Bsta => {
                let (outcome, used) = run_tree(existing, &first_complement, m, m, Some(nodes_left))?;
                nodes_left -= used;
                outcome
            }
            SelectionKind::Nrg => nrg_decision(existing, &first_complement, m, &mut rng)?,
            SelectionKind::ABsta => absta_decision_budgeted(existing, strategy.depth, m, strategy.branch_budget, &mut rng, strategy.exec)?,
            SelectionKind::Random => unreachable!(),
        };
        if let DecisionOutcome::Found(w) = outcome {
            // With m < n a solution cannot equal an existing watermark.
            let watermark = if existing.contains_watermark(&w) { fresh_random(existing, &mut rng)? } else { w };
            let max_matched = worst_match(existing, &watermark, strategy.exec).1;
            debug_assert!(max_matched <= m);
            return Ok(Selection { watermark, achieved_m: m, max_matched });
        }
        if m as usize >= n {
            unreachable!("m = n is always feasible");
        }
        m += 1;
    }
}

/// Random watermark not yet in the codebook.
fn fresh_random<R: Rng + ?Sized>(existing: &Codebook, rng: &mut R) -> Result<Watermark> {
    let n = existing.n();
    if n < 64 && existing.len() as u64 >= 1u64 << n {
        return Err(Error::CodebookFull(n));
    }
    for _ in 0..256 {
        let w = random_select(n, rng)?;
        if !existing.contains_watermark(&w) {
            return Ok(w);
        }
    }
    // Nearly full small codebooks: take the first free value in enumeration order.
    if n <= 24 {
        for x in 0..1u64 << n {
            let w = candidate_from_index(n, x);
            if !existing.contains_watermark(&w) {
                return Ok(w);
            }
        }
    }
    Err(Error::CodebookFull(n))
}

/// Candidate number `x` in lexicographic order of the `'0'/'1'` rendering.
fn candidate_from_index(n: usize, x: u64) -> Watermark {
    let mut w = Watermark::zeros(n).expect("n > 0");
    for k in 0..n {
        if x >> (n - 1 - k) & 1 == 1 {
            w.set(k, true);
        }
    }
    w
}

/// Exhaustive farthest-string search over all `2^n` candidates.
///
/// Returns the lexicographically smallest minimiser of the maximum matched
/// count and that optimum. Intended as a test oracle; `n` is capped at 20.
pub fn brute_force_farthest(existing: &Codebook) -> Result<(Watermark, u32)> {
    brute_force_farthest_with(existing, Exec::default())
}

pub fn brute_force_farthest_with(existing: &Codebook, exec: Exec) -> Result<(Watermark, u32)> {
    let n = existing.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::ResourceLimit(format!("brute force limited to n <= {BRUTE_FORCE_MAX_N}, got n={n}")));
    }
    if existing.is_empty() {
        return Err(Error::TooFewEntries { needed: 1, actual: 0 });
    }
    let total = 1usize << n;
    let existing_words: Vec<u64> = (0..existing.len()).map(|i| existing.words_of(i)[0]).collect();
    // Pack candidate x so that string position k is bit k.
    let pack = |x: u64| -> u64 { x.reverse_bits() >> (64 - n) };
    let best = exec.fold_chunks(
        total,
        1 << 12,
        (u32::MAX, u64::MAX),
        |mut acc, range| {
            for x in range {
                let c = pack(x as u64);
                let worst = existing_words.iter().map(|&e| n as u32 - (c ^ e).count_ones()).max().unwrap_or(0);
                if worst < acc.0 {
                    acc = (worst, x as u64);
                }
            }
            acc
        },
        |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
    );
    let w = candidate_from_index(n, best.1);
    debug_assert_eq!(w.words()[0], pack(best.1));
    Ok((w, best.0))
}
