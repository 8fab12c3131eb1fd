//! Round generators: example pools, stochastic and distribution-shift
//! schedules, and a history-driven adaptive adversary.
//!
//! A pool entry is a `(score, correctness)` pair standing in for a generated
//! answer and its confidence. Schedules decide which pool a round draws from;
//! entries are always drawn uniformly with replacement.

use std::collections::VecDeque;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::abstention::clamp_score;
use crate::error::{Error, Result};

/// A candidate round: confidence score and latent correctness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub score: f64,
    pub correctness: f64,
}

/// One environment step as seen after the decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundOutcome {
    /// Confidence score `f_t`, in `[0, 1)`.
    pub score: f64,
    /// Latent correctness `c_t` (1 = correct). Only full-feedback learners
    /// and the evaluation ledger may read it.
    pub correctness: f64,
    /// Realized feedback `e_t` for the chosen decision: `1 - c_t` when the
    /// abstainer answered, 1 when it abstained.
    pub feedback: f64,
}

impl RoundOutcome {
    pub fn realize(score: f64, correctness: f64, answered: bool) -> Self {
        let feedback = if answered { 1.0 - correctness } else { 1.0 };
        Self {
            score,
            correctness,
            feedback,
        }
    }

    pub fn from_draw(draw: Draw, answered: bool) -> Self {
        Self::realize(draw.score, draw.correctness, answered)
    }
}

/// A named, non-empty set of `(score, correctness)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamplePool {
    name: String,
    entries: Vec<Draw>,
}

impl ExamplePool {
    /// Builds a pool, clamping scores into `[0, 1)`.
    pub fn new(name: impl Into<String>, entries: Vec<Draw>) -> Result<Self> {
        let name = name.into();
        if entries.is_empty() {
            return Err(Error::EmptyPool(name));
        }
        let entries = entries
            .into_iter()
            .map(|d| {
                if !(0.0..=1.0).contains(&d.correctness) {
                    return Err(Error::InvalidParameter(format!(
                        "correctness {} outside [0, 1]",
                        d.correctness
                    )));
                }
                Ok(Draw {
                    score: clamp_score(d.score)?,
                    correctness: d.correctness,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { name, entries })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[Draw] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Mean of `1 - correctness`.
    pub fn error_rate(&self) -> f64 {
        self.entries
            .iter()
            .map(|d| 1.0 - d.correctness)
            .sum::<f64>()
            / self.len() as f64
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        self.entries[rng.random_range(0..self.entries.len())]
    }
}

/// How synthetic correctness relates to the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Calibration {
    /// `P(correct | s) = s`.
    Well,
    /// `P(correct | s) = s^2`: high scores are wrong more often than claimed.
    Over,
    /// `P(correct | s) = 1 - (1 - s)^2`: scores understate accuracy.
    Under,
}

impl Calibration {
    pub fn correct_probability(&self, score: f64) -> f64 {
        match self {
            Calibration::Well => score,
            Calibration::Over => score * score,
            Calibration::Under => 1.0 - (1.0 - score) * (1.0 - score),
        }
    }

    /// Beta shape `(a, b)` with `a + b = concentration` whose expected error
    /// `E[1 - g(S)]` equals `incorrect_rate`.
    fn beta_shape(&self, incorrect_rate: f64, concentration: f64) -> (f64, f64) {
        let k = concentration;
        let b = match self {
            // E[1 - S] = b / k
            Calibration::Well => incorrect_rate * k,
            // E[S^2] = a (a + 1) / (k (k + 1)) = 1 - r
            Calibration::Over => {
                let target = (1.0 - incorrect_rate) * k * (k + 1.0);
                let a = (-1.0 + (1.0 + 4.0 * target).sqrt()) / 2.0;
                k - a
            }
            // E[(1 - S)^2] = b (b + 1) / (k (k + 1)) = r
            Calibration::Under => {
                let target = incorrect_rate * k * (k + 1.0);
                (-1.0 + (1.0 + 4.0 * target).sqrt()) / 2.0
            }
        };
        (k - b, b)
    }
}

impl FromStr for Calibration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "well" => Ok(Calibration::Well),
            "over" => Ok(Calibration::Over),
            "under" => Ok(Calibration::Under),
            other => Err(Error::UnknownCalibration(other.to_string())),
        }
    }
}

impl fmt::Display for Calibration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Calibration::Well => "well",
            Calibration::Over => "over",
            Calibration::Under => "under",
        })
    }
}

/// Default Beta concentration `a + b` of synthetic scores.
pub const DEFAULT_CONCENTRATION: f64 = 2.0;

/// Synthetic pool: scores from a Beta law, correctness from
/// `Bernoulli(g(score))` with `g` set by the calibration.
pub fn gen_pool(
    n: usize,
    seed: u64,
    calibration: Calibration,
    incorrect_rate: f64,
) -> Result<ExamplePool> {
    gen_pool_with_concentration(n, seed, calibration, incorrect_rate, DEFAULT_CONCENTRATION)
}

pub fn gen_pool_with_concentration(
    n: usize,
    seed: u64,
    calibration: Calibration,
    incorrect_rate: f64,
    concentration: f64,
) -> Result<ExamplePool> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "pool size must be at least 1".into(),
        ));
    }
    if !(incorrect_rate > 0.0 && incorrect_rate < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "incorrect rate must lie in (0, 1), got {incorrect_rate}"
        )));
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "concentration must be positive, got {concentration}"
        )));
    }
    let (a, b) = calibration.beta_shape(incorrect_rate, concentration);
    let beta =
        Beta::new(a, b).map_err(|e| Error::InvalidParameter(format!("beta({a}, {b}): {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..n)
        .map(|_| {
            let score = beta.sample(&mut rng);
            let p = calibration.correct_probability(score);
            let correct = rng.random::<f64>() < p;
            Draw {
                score,
                correctness: if correct { 1.0 } else { 0.0 },
            }
        })
        .collect();
    ExamplePool::new(
        format!("synthetic-{calibration}-{incorrect_rate}-{seed}"),
        entries,
    )
}

/// Reads a `score,correct` CSV. A header row is optional; scores are clamped
/// into `[0, 1)`.
pub fn load_pool(path: &Path) -> Result<ExamplePool> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let parse_err = |line: u64, message: String| Error::PoolParse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i as u64 + 1, |p| p.line());
        if i == 0 && record.get(0) == Some("score") {
            if record.get(1) != Some("correct") || record.len() != 2 {
                return Err(parse_err(line, "header must be `score,correct`".into()));
            }
            continue;
        }
        if record.len() != 2 {
            return Err(parse_err(
                line,
                format!("expected 2 columns, found {}", record.len()),
            ));
        }
        let field = |j: usize, what: &str| -> Result<f64> {
            let raw = &record[j];
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(line, format!("{what} `{raw}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("{what} `{raw}` is not finite")));
            }
            Ok(v)
        };
        let score = field(0, "score")?;
        let correctness = field(1, "correct")?;
        if !(0.0..=1.0).contains(&correctness) {
            return Err(parse_err(
                line,
                format!("correct `{correctness}` outside [0, 1]"),
            ));
        }
        entries.push(Draw {
            score: clamp_score(score)?,
            correctness,
        });
    }
    let name = path.display().to_string();
    if entries.is_empty() {
        return Err(Error::EmptyPool(name));
    }
    ExamplePool::new(name, entries)
}

/// Writes a pool as `score,correct` CSV with shortest round-trip decimals.
pub fn write_pool(pool: &ExamplePool, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "score,correct")?;
    for d in pool.entries() {
        writeln!(out, "{},{}", d.score, d.correctness)?;
    }
    out.flush()?;
    Ok(())
}

/// Which of the two pools a round draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolId {
    First,
    Second,
}

/// Parameters of the adaptive adversary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryConfig {
    /// Last round of the hard-only phase; `None` means `T / 5`.
    pub phase_switch: Option<usize>,
    /// Rounds per adaptation window.
    pub window: usize,
    /// Mixing ratio at the start of the second phase.
    pub initial_mix: f64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            phase_switch: None,
            window: 500,
            initial_mix: 0.5,
        }
    }
}

/// Environment kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    Stochastic,
    /// First pool for `t <= switch_point`, second afterwards.
    ShiftSingle {
        switch_point: usize,
    },
    /// Pools alternate every `chunk` rounds, starting with the first.
    ShiftAlternating {
        chunk: usize,
    },
    /// Second pool with probability `t / T`.
    ShiftGradual,
    Adversary(AdversaryConfig),
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Stochastic => "stochastic",
            ScheduleKind::ShiftSingle { .. } => "shift-single",
            ScheduleKind::ShiftAlternating { .. } => "shift-alternating",
            ScheduleKind::ShiftGradual => "shift-gradual",
            ScheduleKind::Adversary(_) => "adversary",
        }
    }
}

/// An immutable round schedule over one or two pools.
#[derive(Debug, Clone)]
pub struct Schedule {
    kind: ScheduleKind,
    first: Arc<ExamplePool>,
    second: Option<Arc<ExamplePool>>,
}

impl Schedule {
    pub fn new(
        kind: ScheduleKind,
        first: Arc<ExamplePool>,
        second: Option<Arc<ExamplePool>>,
    ) -> Result<Self> {
        match kind {
            ScheduleKind::Stochastic => {}
            _ if second.is_none() => return Err(Error::MissingSecondPool(kind.name())),
            ScheduleKind::ShiftAlternating { chunk: 0 } => {
                return Err(Error::InvalidParameter("chunk must be at least 1".into()))
            }
            ScheduleKind::Adversary(cfg) if cfg.window == 0 => {
                return Err(Error::InvalidParameter("window must be at least 1".into()))
            }
            ScheduleKind::Adversary(cfg) if !(0.0..=1.0).contains(&cfg.initial_mix) => {
                return Err(Error::InvalidParameter(format!(
                    "mix ratio {} outside [0, 1]",
                    cfg.initial_mix
                )))
            }
            _ => {}
        }
        Ok(Self {
            kind,
            first,
            second,
        })
    }

    pub fn stochastic(pool: Arc<ExamplePool>) -> Self {
        Self {
            kind: ScheduleKind::Stochastic,
            first: pool,
            second: None,
        }
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    pub fn first(&self) -> &ExamplePool {
        &self.first
    }

    pub fn second(&self) -> Option<&ExamplePool> {
        self.second.as_deref()
    }

    fn pool(&self, id: PoolId) -> &ExamplePool {
        match id {
            PoolId::First => &self.first,
            PoolId::Second => self
                .second
                .as_deref()
                .expect("second pool checked at construction"),
        }
    }

    /// Probability that round `t` of `horizon` draws from the second pool.
    pub fn second_pool_probability(&self, t: usize, horizon: usize) -> f64 {
        match self.kind {
            ScheduleKind::Stochastic | ScheduleKind::Adversary(_) => 0.0,
            ScheduleKind::ShiftSingle { switch_point } => (t > switch_point) as u8 as f64,
            ScheduleKind::ShiftAlternating { chunk } => ((t - 1) / chunk % 2) as f64,
            ScheduleKind::ShiftGradual => t as f64 / horizon as f64,
        }
    }

    /// Pool chosen for round `t`. Consumes one uniform draw for the gradual
    /// schedule and none otherwise.
    pub fn pool_for_round<R: Rng + ?Sized>(&self, t: usize, horizon: usize, rng: &mut R) -> PoolId {
        let p = self.second_pool_probability(t, horizon);
        let second = match self.kind {
            ScheduleKind::ShiftGradual => rng.random::<f64>() < p,
            _ => p == 1.0,
        };
        if second {
            PoolId::Second
        } else {
            PoolId::First
        }
    }

    /// Draws round `t` (1-based) of `horizon`.
    pub fn schedule_next<R: Rng + ?Sized>(
        &self,
        t: usize,
        horizon: usize,
        rng: &mut R,
    ) -> Result<Draw> {
        if t == 0 || t > horizon {
            return Err(Error::InvalidParameter(format!(
                "round {t} outside 1..={horizon}"
            )));
        }
        if let ScheduleKind::Adversary(_) = self.kind {
            return Err(Error::Usage(
                "the adversary schedule is driven by AdversaryState".into(),
            ));
        }
        let id = self.pool_for_round(t, horizon, rng);
        Ok(self.pool(id).sample(rng))
    }
}

/// Entry type the adversary serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Serve {
    /// High score, incorrect: hard but overconfident.
    HighIncorrect,
    /// Low score, correct.
    LowCorrect,
}

/// Adaptive adversary over the union of both pools.
///
/// Phase one serves only high-score incorrect entries. Phase two serves them
/// with probability `mix_ratio` and low-score correct entries otherwise. After
/// every `window` phase-two rounds the ratio moves 0.05 toward whichever kind
/// the learner mishandled more often (accepted when incorrect, abstained when
/// correct), within `[0.1, 0.9]`. Only decisions are observed, never the
/// learner's policy.
#[derive(Debug, Clone)]
pub struct AdversaryState {
    high_incorrect: Vec<Draw>,
    low_correct: Vec<Draw>,
    window: VecDeque<(Serve, bool)>,
    window_len: usize,
    phase_switch: usize,
    mix_ratio: f64,
    pending: Option<Serve>,
    fallbacks: usize,
}

pub const MIX_STEP: f64 = 0.05;
pub const MIX_BOUNDS: (f64, f64) = (0.1, 0.9);

fn is_high(d: &Draw) -> bool {
    d.score >= 0.5
}

fn is_correct(d: &Draw) -> bool {
    d.correctness >= 0.5
}

impl AdversaryState {
    pub fn new(schedule: &Schedule, horizon: usize) -> Result<Self> {
        let ScheduleKind::Adversary(cfg) = *schedule.kind() else {
            return Err(Error::Usage(
                "adversary state needs an adversary schedule".into(),
            ));
        };
        let all: Vec<Draw> = schedule
            .first()
            .entries()
            .iter()
            .chain(schedule.second().into_iter().flat_map(|p| p.entries()))
            .copied()
            .collect();
        let mut fallbacks = 0;
        let mut high_incorrect: Vec<Draw> = all
            .iter()
            .filter(|d| is_high(d) && !is_correct(d))
            .copied()
            .collect();
        if high_incorrect.is_empty() {
            fallbacks += 1;
            high_incorrect.push(nearest(&all, false, f64::total_cmp));
            log::warn!(
                "no high-score incorrect entries; serving nearest entry {:?}",
                high_incorrect[0]
            );
        }
        let mut low_correct: Vec<Draw> = all
            .iter()
            .filter(|d| !is_high(d) && is_correct(d))
            .copied()
            .collect();
        if low_correct.is_empty() {
            fallbacks += 1;
            low_correct.push(nearest(&all, true, |a, b| b.total_cmp(a)));
            log::warn!(
                "no low-score correct entries; serving nearest entry {:?}",
                low_correct[0]
            );
        }
        Ok(Self {
            high_incorrect,
            low_correct,
            window: VecDeque::with_capacity(cfg.window),
            window_len: cfg.window,
            phase_switch: cfg.phase_switch.unwrap_or(horizon / 5),
            mix_ratio: cfg.initial_mix,
            pending: None,
            fallbacks,
        })
    }

    pub fn mix_ratio(&self) -> f64 {
        self.mix_ratio
    }

    pub fn phase_switch(&self) -> usize {
        self.phase_switch
    }

    /// Quadrants that had to be filled by the nearest-score fallback.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Serves round `t`.
    pub fn adversary_next<R: Rng + ?Sized>(&mut self, t: usize, rng: &mut R) -> Draw {
        let kind = if t <= self.phase_switch || rng.random::<f64>() < self.mix_ratio {
            Serve::HighIncorrect
        } else {
            Serve::LowCorrect
        };
        self.pending = Some(kind);
        let bucket = match kind {
            Serve::HighIncorrect => &self.high_incorrect,
            Serve::LowCorrect => &self.low_correct,
        };
        bucket[rng.random_range(0..bucket.len())]
    }

    /// Records the learner's decision on the last served round.
    pub fn observe(&mut self, t: usize, answered: bool) {
        let Some(kind) = self.pending.take() else {
            return;
        };
        if self.window.len() == self.window_len {
            self.window.pop_front();
        }
        self.window.push_back((kind, answered));
        if t > self.phase_switch && (t - self.phase_switch) % self.window_len == 0 {
            self.adapt();
        }
    }

    fn adapt(&mut self) {
        let mut served = [0usize; 2];
        let mut failed = [0usize; 2];
        for &(kind, answered) in &self.window {
            let (i, failure) = match kind {
                Serve::HighIncorrect => (0, answered),
                Serve::LowCorrect => (1, !answered),
            };
            served[i] += 1;
            failed[i] += failure as usize;
        }
        let rate = |i: usize| {
            if served[i] == 0 {
                0.5
            } else {
                failed[i] as f64 / served[i] as f64
            }
        };
        let (high, low) = (rate(0), rate(1));
        if high > low {
            self.mix_ratio += MIX_STEP;
        } else if low > high {
            self.mix_ratio -= MIX_STEP;
        }
        self.mix_ratio = self.mix_ratio.clamp(MIX_BOUNDS.0, MIX_BOUNDS.1);
    }
}

/// Entry with the requested correctness and the extreme score under `order`
/// (highest for incorrect, lowest for correct); any entry if none match.
fn nearest(all: &[Draw], correct: bool, order: fn(&f64, &f64) -> std::cmp::Ordering) -> Draw {
    let pick =
        |it: &mut dyn Iterator<Item = &Draw>| it.max_by(|a, b| order(&a.score, &b.score)).copied();
    pick(&mut all.iter().filter(|d| is_correct(d) == correct))
        .or_else(|| pick(&mut all.iter()))
        .expect("pools are non-empty")
}

/// A running environment: a schedule plus adversary state when adaptive.
#[derive(Debug, Clone)]
pub struct Environment {
    schedule: Schedule,
    adversary: Option<AdversaryState>,
    horizon: usize,
}

impl Environment {
    pub fn new(schedule: Schedule, horizon: usize) -> Result<Self> {
        let adversary = match schedule.kind() {
            ScheduleKind::Adversary(_) => Some(AdversaryState::new(&schedule, horizon)?),
            _ => None,
        };
        Ok(Self {
            schedule,
            adversary,
            horizon,
        })
    }

    pub fn next<R: Rng + ?Sized>(&mut self, t: usize, rng: &mut R) -> Result<Draw> {
        match &mut self.adversary {
            Some(adv) => Ok(adv.adversary_next(t, rng)),
            None => self.schedule.schedule_next(t, self.horizon, rng),
        }
    }

    pub fn observe(&mut self, t: usize, answered: bool) {
        if let Some(adv) = &mut self.adversary {
            adv.observe(t, answered);
        }
    }

    pub fn adversary(&self) -> Option<&AdversaryState> {
        self.adversary.as_ref()
    }
}
