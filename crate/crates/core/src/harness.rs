//! Seeded multi-trial experiments: environment -> learner -> ledger.
//!
//! Output layout of a run directory:
//!
//! ```text
//! config.txt           key=value run configuration
//! summary.csv          one row per trial
//! aggregate.txt        key=value statistics over trials
//! audit.txt            key=value audit block per trial
//! steps/trial_NNNN.csv strided step log per trial
//! ```

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::abstention::{accepts, compute_loss, HypothesisGrid, LossParams};
use crate::environments::{Environment, RoundOutcome, Schedule};
use crate::error::{Error, Result};
use crate::learners::{default_rates, Algorithm, LearnerState, RateMode, RateSchedule};
use crate::metrics::{
    audit_bounds, audit_values, fdr_from, fmt_real, ineff_from, AuditConfig, AuditInputs,
    AuditReport, MetricsLedger,
};

/// Header of the per-trial step log.
pub const STEP_HEADER: &str = "trial,t,arm,tau,score,accepted,e,loss,cum_fdr,cum_ineff";
/// Header of the summary file.
pub const SUMMARY_HEADER: &str =
    "trial,T,alpha,lambda,fdr,ineff,regret,fdr_risk,lemma1_rhs,lemma1_ok,fdrbound_ok";

/// Trade-off weight: explicit or `sqrt(T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec {
    Value(f64),
    SqrtT,
}

impl LambdaSpec {
    pub fn resolve(&self, horizon: usize) -> f64 {
        match *self {
            LambdaSpec::Value(v) => v,
            LambdaSpec::SqrtT => (horizon as f64).sqrt(),
        }
    }
}

impl std::str::FromStr for LambdaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "sqrtT" {
            return Ok(LambdaSpec::SqrtT);
        }
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .map(LambdaSpec::Value)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "--lambda expects a number >= 0 or `sqrtT`, got `{s}`"
                ))
            })
    }
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algo: Algorithm,
    pub schedule: Schedule,
    pub params: LossParams,
    pub grid: HypothesisGrid,
    pub horizon: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub log_every: usize,
    pub audit: AuditConfig,
    /// Rates override; `None` uses [`default_rates`].
    pub rates: Option<RateSchedule>,
    pub rate_mode: RateMode,
    /// Test hook: unlock sets truncated to the chosen arm.
    pub singleton_unlock: bool,
    pub parallel: bool,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Config with the documented defaults; `lambda` is resolved here, once.
    pub fn new(
        algo: Algorithm,
        schedule: Schedule,
        alpha: f64,
        lambda: LambdaSpec,
        grid_size: usize,
        horizon: usize,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("T must be at least 1".into()));
        }
        Ok(Self {
            algo,
            schedule,
            params: LossParams::new(alpha, lambda.resolve(horizon))?,
            grid: HypothesisGrid::new(grid_size)?,
            horizon,
            trials: 1,
            base_seed: 0,
            log_every: 10,
            audit: AuditConfig::default(),
            rates: None,
            rate_mode: RateMode::Fixed,
            singleton_unlock: false,
            parallel: true,
            output_dir: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidParameter(
                "log_every must be at least 1".into(),
            ));
        }
        if !(self.audit.delta > 0.0 && self.audit.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.audit.delta
            )));
        }
        Ok(())
    }

    pub fn effective_rates(&self) -> RateSchedule {
        self.rates
            .unwrap_or_else(|| default_rates(self.algo, self.horizon, &self.grid))
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `i`: `splitmix64(base ^ splitmix64(i))`.
pub fn trial_seed(base_seed: u64, trial: usize) -> u64 {
    splitmix64(base_seed ^ splitmix64(trial as u64))
}

/// One logged step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRow {
    pub trial: usize,
    pub t: usize,
    pub arm: usize,
    pub tau: f64,
    pub score: f64,
    pub accepted: bool,
    pub e: f64,
    pub loss: f64,
    pub cum_fdr: f64,
    pub cum_ineff: f64,
}

impl StepRow {
    fn to_csv(self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.trial,
            self.t,
            self.arm,
            fmt_real(self.tau),
            fmt_real(self.score),
            self.accepted as u8,
            fmt_real(self.e),
            fmt_real(self.loss),
            fmt_real(self.cum_fdr),
            fmt_real(self.cum_ineff),
        )
    }
}

/// Final metrics, audit and strided trace of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub fdr: f64,
    pub ineff: f64,
    pub regret: f64,
    pub fdr_risk: f64,
    pub audit: AuditReport,
    pub series: Vec<StepRow>,
}

impl TrialResult {
    pub fn summary_row(&self) -> SummaryRow {
        SummaryRow {
            trial: self.trial,
            horizon: self.horizon,
            alpha: self.alpha,
            lambda: self.lambda,
            fdr: self.fdr,
            ineff: self.ineff,
            regret: self.regret,
            fdr_risk: self.fdr_risk,
            lemma1_rhs: self.audit.lemma1.map_or(f64::NAN, |c| c.rhs),
            lemma1_ok: self.audit.lemma1_ok(),
            fdrbound_ok: self.audit.fdr_bound.ok(),
        }
    }
}

/// Runs one trial to completion.
pub fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<TrialResult> {
    config.validate()?;
    let horizon = config.horizon;
    let params = config.params;
    let grid = config.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.base_seed, trial));
    let mut env = Environment::new(config.schedule.clone(), horizon)?;
    let mut learner = LearnerState::init(config.algo, grid, horizon, config.effective_rates())?
        .with_rate_mode(config.rate_mode)
        .with_singleton_unlock(config.singleton_unlock);
    let mut ledger = MetricsLedger::new(grid, params);
    let mut series = Vec::with_capacity(horizon / config.log_every + 1);

    for t in 1..=horizon {
        let draw = env.next(t, &mut rng)?;
        let arm = learner.sample_arm(&mut rng);
        let tau = grid.tau(arm);
        let answered = accepts(tau, draw.score);
        let round = RoundOutcome::from_draw(draw, answered);
        let loss = compute_loss(answered, round.feedback, &params)?;
        ledger.record(&round, &loss);
        learner.observe(arm, &round, &params)?;
        env.observe(t, answered);

        if t % config.log_every == 0 || t == horizon {
            series.push(StepRow {
                trial,
                t,
                arm,
                tau,
                score: round.score,
                accepted: answered,
                e: round.feedback,
                loss: loss.combined,
                cum_fdr: ledger.fdr(),
                cum_ineff: ledger.ineff(),
            });
        }
    }

    let audit = audit_bounds(&ledger, &config.audit);
    Ok(TrialResult {
        trial,
        horizon,
        alpha: params.alpha(),
        lambda: params.lambda(),
        fdr: ledger.fdr(),
        ineff: ledger.ineff(),
        regret: audit.regret,
        fdr_risk: ledger.fdr_risk(),
        audit,
        series,
    })
}

/// Mean, standard deviation and percentiles of one metric over trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution {
    pub mean: f64,
    /// Sample standard deviation (0 for a single trial).
    pub std: f64,
    /// 5th, 25th, 50th, 75th and 95th percentiles.
    pub percentiles: [f64; 5],
}

pub const PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

impl Distribution {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean,
            std,
            percentiles: PERCENTILES.map(|p| percentile(&sorted, p)),
        }
    }
}

/// Linear-interpolation percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Aggregate over all trials of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub rows: Vec<SummaryRow>,
    pub fdr: Distribution,
    pub ineff: Distribution,
    pub regret: Distribution,
    pub lemma1_pass_rate: f64,
    pub fdrbound_pass_rate: f64,
    /// Fractions of trials within the probabilistic bounds; `None` when the
    /// summary was rebuilt from a summary file, which does not carry them.
    pub fdr_risk_bound_pass_rate: Option<f64>,
    pub regret_bound_pass_rate: Option<f64>,
}

impl ExperimentSummary {
    pub fn from_rows(rows: Vec<SummaryRow>) -> Self {
        let col = |f: fn(&SummaryRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let rate = |f: fn(&SummaryRow) -> bool| {
            rows.iter().filter(|r| f(r)).count() as f64 / rows.len() as f64
        };
        Self {
            fdr: Distribution::of(&col(|r| r.fdr)),
            ineff: Distribution::of(&col(|r| r.ineff)),
            regret: Distribution::of(&col(|r| r.regret)),
            lemma1_pass_rate: rate(|r| r.lemma1_ok),
            fdrbound_pass_rate: rate(|r| r.fdrbound_ok),
            fdr_risk_bound_pass_rate: None,
            regret_bound_pass_rate: None,
            rows,
        }
    }

    fn from_results(results: &[TrialResult]) -> Self {
        let n = results.len() as f64;
        let rate =
            |f: fn(&AuditReport) -> bool| results.iter().filter(|r| f(&r.audit)).count() as f64 / n;
        Self {
            fdr_risk_bound_pass_rate: Some(rate(|a| a.fdr_risk_bound.ok)),
            regret_bound_pass_rate: Some(rate(|a| a.regret_bound.ok)),
            ..Self::from_rows(results.iter().map(TrialResult::summary_row).collect())
        }
    }

    /// Statistics as `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "trials={}", self.rows.len());
        for (name, d) in [
            ("fdr", &self.fdr),
            ("ineff", &self.ineff),
            ("regret", &self.regret),
        ] {
            let _ = writeln!(s, "{name}_mean={}", fmt_real(d.mean));
            let _ = writeln!(s, "{name}_std={}", fmt_real(d.std));
            for (p, v) in PERCENTILES.iter().zip(d.percentiles) {
                let _ = writeln!(s, "{name}_p{p}={}", fmt_real(v));
            }
        }
        let _ = writeln!(s, "lemma1_pass_rate={}", fmt_real(self.lemma1_pass_rate));
        let _ = writeln!(
            s,
            "fdrbound_pass_rate={}",
            fmt_real(self.fdrbound_pass_rate)
        );
        if let Some(r) = self.fdr_risk_bound_pass_rate {
            let _ = writeln!(s, "fdr_risk_bound_pass_rate={}", fmt_real(r));
        }
        if let Some(r) = self.regret_bound_pass_rate {
            let _ = writeln!(s, "regret_bound_pass_rate={}", fmt_real(r));
        }
        s
    }
}

/// Results of a full experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub trials: Vec<TrialResult>,
    pub summary: ExperimentSummary,
}

/// Runs every trial and, when an output directory is set, writes it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir.join("steps"))?;
    }
    let trials: Vec<TrialResult> = if config.parallel {
        (0..config.trials)
            .into_par_iter()
            .map(|i| run_trial(config, i))
            .collect::<Result<_>>()?
    } else {
        (0..config.trials)
            .map(|i| run_trial(config, i))
            .collect::<Result<_>>()?
    };
    let summary = ExperimentSummary::from_results(&trials);
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, config, &trials, &summary)?;
    }
    Ok(ExperimentOutput { trials, summary })
}

impl ExperimentConfig {
    /// The run configuration as `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let rates = self.effective_rates();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("algo", self.algo.to_string());
        kv("env", self.schedule.kind().name().to_string());
        kv("pool", self.schedule.first().name().to_string());
        if let Some(p) = self.schedule.second() {
            kv("pool2", p.name().to_string());
        }
        kv("alpha", fmt_real(self.params.alpha()));
        kv("lambda", fmt_real(self.params.lambda()));
        kv("grid_size", self.grid.size().to_string());
        kv("T", self.horizon.to_string());
        kv("trials", self.trials.to_string());
        kv("seed", self.base_seed.to_string());
        kv("log_every", self.log_every.to_string());
        kv("delta", fmt_real(self.audit.delta));
        kv("eta", fmt_real(rates.eta));
        kv("gamma", fmt_real(rates.gamma));
        kv("rate_mode", format!("{:?}", self.rate_mode).to_lowercase());
        s
    }
}

/// Reads a `key=value` file into ordered pairs.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::RunFormat {
                    path: path.to_path_buf(),
                    message: format!("line {}: expected key=value", i + 1),
                })
        })
        .collect()
}

fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    trials: &[TrialResult],
    summary: &ExperimentSummary,
) -> Result<()> {
    fs::write(dir.join("config.txt"), config.to_key_values())?;

    let mut out = BufWriter::new(File::create(dir.join("summary.csv"))?);
    writeln!(out, "{SUMMARY_HEADER}")?;
    for row in &summary.rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    out.flush()?;

    fs::write(dir.join("aggregate.txt"), summary.to_key_values())?;

    let mut audit = BufWriter::new(File::create(dir.join("audit.txt"))?);
    for r in trials {
        writeln!(audit, "[trial {}]", r.trial)?;
        write!(audit, "{}", r.audit.to_key_values())?;
        writeln!(audit)?;
    }
    audit.flush()?;

    for r in trials {
        let mut out = BufWriter::new(File::create(step_log_path(dir, r.trial))?);
        writeln!(out, "{STEP_HEADER}")?;
        for row in &r.series {
            writeln!(out, "{}", row.to_csv())?;
        }
        out.flush()?;
    }
    Ok(())
}

pub fn step_log_path(dir: &Path, trial: usize) -> PathBuf {
    dir.join("steps").join(format!("trial_{trial:04}.csv"))
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub trial: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub fdr: f64,
    pub ineff: f64,
    pub regret: f64,
    pub fdr_risk: f64,
    pub lemma1_rhs: f64,
    pub lemma1_ok: bool,
    pub fdrbound_ok: bool,
}

impl SummaryRow {
    pub fn to_csv(self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.trial,
            self.horizon,
            fmt_real(self.alpha),
            fmt_real(self.lambda),
            fmt_real(self.fdr),
            fmt_real(self.ineff),
            fmt_real(self.regret),
            fmt_real(self.fdr_risk),
            fmt_real(self.lemma1_rhs),
            self.lemma1_ok,
            self.fdrbound_ok,
        )
    }

    fn parse(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(format!("expected 11 fields, found {}", f.len()));
        }
        let int = |i: usize| {
            f[i].parse::<usize>()
                .map_err(|_| format!("bad integer `{}`", f[i]))
        };
        let real = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|_| format!("bad real `{}`", f[i]))
        };
        let flag = |i: usize| {
            f[i].parse::<bool>()
                .map_err(|_| format!("bad flag `{}`", f[i]))
        };
        Ok(Self {
            trial: int(0)?,
            horizon: int(1)?,
            alpha: real(2)?,
            lambda: real(3)?,
            fdr: real(4)?,
            ineff: real(5)?,
            regret: real(6)?,
            fdr_risk: real(7)?,
            lemma1_rhs: real(8)?,
            lemma1_ok: flag(9)?,
            fdrbound_ok: flag(10)?,
        })
    }
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let bad = |message: String| Error::RunFormat {
        path: path.to_path_buf(),
        message,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    match lines.next().transpose()? {
        Some(h) if h == SUMMARY_HEADER => {}
        _ => return Err(bad("missing summary header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        rows.push(SummaryRow::parse(&line).map_err(|m| bad(format!("line {}: {m}", i + 2)))?);
    }
    if rows.is_empty() {
        return Err(bad("no trial rows".into()));
    }
    Ok(rows)
}

pub fn read_step_log(path: &Path) -> Result<Vec<StepRow>> {
    let bad = |message: String| Error::RunFormat {
        path: path.to_path_buf(),
        message,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    match lines.next().transpose()? {
        Some(h) if h == STEP_HEADER => {}
        _ => return Err(bad("missing step-log header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let at = |m: &str| bad(format!("line {}: {m}", i + 2));
        if f.len() != 10 {
            return Err(at("expected 10 fields"));
        }
        let int = |j: usize| f[j].parse::<usize>().map_err(|_| at("bad integer"));
        let real = |j: usize| f[j].parse::<f64>().map_err(|_| at("bad real"));
        rows.push(StepRow {
            trial: int(0)?,
            t: int(1)?,
            arm: int(2)?,
            tau: real(3)?,
            score: real(4)?,
            accepted: match f[5] {
                "1" => true,
                "0" => false,
                _ => return Err(at("accepted must be 0 or 1")),
            },
            e: real(6)?,
            loss: real(7)?,
            cum_fdr: real(8)?,
            cum_ineff: real(9)?,
        });
    }
    Ok(rows)
}

/// Metrics recomputed from a contiguous (stride 1) step log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayedMetrics {
    pub rounds: usize,
    pub fdr: f64,
    pub ineff: f64,
    pub fdr_risk: f64,
    pub realized_loss: f64,
}

/// Replays a stride-1 step log, checking every logged running value.
/// Returns `None` when the log is strided and cannot be replayed round by
/// round; mismatches are reported as messages.
pub fn replay_step_log(rows: &[StepRow], alpha: f64) -> (Option<ReplayedMetrics>, Vec<String>) {
    let mut problems = Vec::new();
    let contiguous = rows.iter().enumerate().all(|(i, r)| r.t == i + 1);
    if !contiguous {
        return (None, problems);
    }
    let (mut answered, mut abstained) = (0usize, 0usize);
    let (mut error_mass, mut fdr_risk, mut realized_loss) = (0.0, 0.0, 0.0);
    for r in rows {
        if r.accepted {
            answered += 1;
            error_mass += r.e;
            fdr_risk += r.e - alpha;
        } else {
            abstained += 1;
        }
        realized_loss += r.loss;
        let fdr = fdr_from(error_mass, answered, alpha);
        let ineff = ineff_from(abstained, r.t);
        if fdr != r.cum_fdr || ineff != r.cum_ineff {
            problems.push(format!(
                "t={}: logged cum_fdr={} cum_ineff={} but replay gives {} {}",
                r.t, r.cum_fdr, r.cum_ineff, fdr, ineff
            ));
        }
    }
    let replayed = ReplayedMetrics {
        rounds: rows.len(),
        fdr: fdr_from(error_mass, answered, alpha),
        ineff: ineff_from(abstained, rows.len()),
        fdr_risk,
        realized_loss,
    };
    (Some(replayed), problems)
}

/// Result of auditing a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunAudit {
    pub summary: ExperimentSummary,
    pub reports: Vec<AuditReport>,
    /// Human-readable description of every violated check.
    pub violations: Vec<String>,
}

impl RunAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-checks a run directory: recomputes each summary row's bounds and flags,
/// and cross-checks them against the step logs. `delta` overrides the value
/// recorded in `config.txt`.
pub fn audit_run_dir(dir: &Path, delta: Option<f64>) -> Result<RunAudit> {
    let config_path = dir.join("config.txt");
    let manifest = read_key_values(&config_path)?;
    let lookup = |key: &str| {
        manifest
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::RunFormat {
                path: config_path.clone(),
                message: format!("missing `{key}`"),
            })
    };
    let bad_value = |key: &str| Error::RunFormat {
        path: config_path.clone(),
        message: format!("bad `{key}`"),
    };
    let grid_size: usize = lookup("grid_size")?
        .parse()
        .map_err(|_| bad_value("grid_size"))?;
    let delta = match delta {
        Some(d) => d,
        None => lookup("delta")?.parse().map_err(|_| bad_value("delta"))?,
    };
    let rows = read_summary(&dir.join("summary.csv"))?;
    let config = AuditConfig {
        delta,
        ..AuditConfig::default()
    };
    let mut violations = Vec::new();
    let mut reports = Vec::new();
    for (line, row) in rows.iter().enumerate().map(|(i, r)| (i + 2, r)) {
        let report = audit_values(
            AuditInputs {
                horizon: row.horizon,
                grid_size,
                alpha: row.alpha,
                lambda: row.lambda,
                fdr: row.fdr,
                ineff: row.ineff,
                regret: row.regret,
                fdr_risk: row.fdr_risk,
            },
            &config,
        );
        let tag = format!("summary.csv line {line} (trial {})", row.trial);
        if let Some(c) = report.lemma1 {
            if !c.ok {
                violations.push(format!(
                    "{tag}: lemma1_ok violated: fdr_risk {} > rhs {}",
                    c.lhs, c.rhs
                ));
            }
            if c.rhs.to_bits() != row.lemma1_rhs.to_bits() {
                violations.push(format!(
                    "{tag}: lemma1_rhs recorded {} but recomputes to {}",
                    row.lemma1_rhs, c.rhs
                ));
            }
        }
        if row.lemma1_ok != report.lemma1_ok() {
            violations.push(format!(
                "{tag}: lemma1_ok recorded {} but recomputes to {}",
                row.lemma1_ok,
                report.lemma1_ok()
            ));
        }
        if let crate::metrics::FdrCheck::Checked(c) = report.fdr_bound {
            if !c.ok {
                violations.push(format!(
                    "{tag}: fdrbound_ok violated: fdr - alpha {} > rhs {}",
                    c.lhs, c.rhs
                ));
            }
        }
        if row.fdrbound_ok != report.fdr_bound.ok() {
            violations.push(format!(
                "{tag}: fdrbound_ok recorded {} but recomputes to {}",
                row.fdrbound_ok,
                report.fdr_bound.ok()
            ));
        }

        let log = step_log_path(dir, row.trial);
        if log.exists() {
            let steps = read_step_log(&log)?;
            check_steps_against_row(&steps, row, &tag, &mut violations);
        }
        reports.push(report);
    }
    Ok(RunAudit {
        summary: ExperimentSummary::from_rows(rows),
        reports,
        violations,
    })
}

fn check_steps_against_row(steps: &[StepRow], row: &SummaryRow, tag: &str, out: &mut Vec<String>) {
    let Some(last) = steps.last() else {
        out.push(format!("{tag}: step log is empty"));
        return;
    };
    if last.t != row.horizon {
        out.push(format!(
            "{tag}: step log ends at t={} not T={}",
            last.t, row.horizon
        ));
    }
    if last.cum_fdr != row.fdr || last.cum_ineff != row.ineff {
        out.push(format!(
            "{tag}: final step row (fdr {}, ineff {}) disagrees with summary (fdr {}, ineff {})",
            last.cum_fdr, last.cum_ineff, row.fdr, row.ineff
        ));
    }
    let (replayed, problems) = replay_step_log(steps, row.alpha);
    out.extend(problems.into_iter().map(|p| format!("{tag}: {p}")));
    if let Some(m) = replayed {
        if m.fdr != row.fdr || m.ineff != row.ineff || m.fdr_risk != row.fdr_risk {
            out.push(format!(
                "{tag}: replayed (fdr {}, ineff {}, fdr_risk {}) disagrees with summary ({}, {}, {})",
                m.fdr, m.ineff, m.fdr_risk, row.fdr, row.ineff, row.fdr_risk
            ));
        }
    }
}
