//! Running evaluation ledger and bound audits.
//!
//! The ledger tracks the realized FDR, selection inefficiency, FDR risk and
//! realized loss of the played arms, plus enough per-cut bookkeeping to
//! recover every fixed arm's cumulative true loss in `O(|H|)` at the end.
//! Round `t` splits the grid at its cut index `c`: arms `0..=c` answer and
//! take `lambda e / (1 + lambda)`, the rest abstain and take
//! `(1 + lambda alpha) / (1 + lambda)`. Adding each value to a per-cut bucket
//! and taking a suffix sum (answer side) plus a prefix sum (abstain side)
//! rebuilds the hindsight losses.

use std::fmt::Write as _;

use crate::abstention::{HypothesisGrid, LossParams, LossTerms};
use crate::environments::RoundOutcome;

/// Running sums for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLedger {
    grid: HypothesisGrid,
    params: LossParams,
    rounds: usize,
    answered_count: usize,
    abstain_count: usize,
    error_mass: f64,
    fdr_risk: f64,
    realized_loss: f64,
    accept_loss_diff: Vec<f64>,
    abstain_loss_diff: Vec<f64>,
}

impl MetricsLedger {
    pub fn new(grid: HypothesisGrid, params: LossParams) -> Self {
        Self {
            grid,
            params,
            rounds: 0,
            answered_count: 0,
            abstain_count: 0,
            error_mass: 0.0,
            fdr_risk: 0.0,
            realized_loss: 0.0,
            accept_loss_diff: vec![0.0; grid.size()],
            abstain_loss_diff: vec![0.0; grid.size()],
        }
    }

    /// Adds one round. `loss` must be the chosen arm's loss for `round`.
    pub fn record(&mut self, round: &RoundOutcome, loss: &LossTerms) {
        self.rounds += 1;
        if loss.answered() {
            self.answered_count += 1;
            self.error_mass += round.feedback;
            self.fdr_risk += round.feedback - self.params.alpha();
        } else {
            self.abstain_count += 1;
        }
        self.realized_loss += loss.combined;

        let cut = self.grid.cut_index(round.score);
        self.accept_loss_diff[cut] += self.params.answer_loss(1.0 - round.correctness);
        self.abstain_loss_diff[cut] += self.params.abstain_loss();
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn answered_count(&self) -> usize {
        self.answered_count
    }

    pub fn abstain_count(&self) -> usize {
        self.abstain_count
    }

    pub fn error_mass(&self) -> f64 {
        self.error_mass
    }

    /// Running FDR risk: sum of `1(answered) (e - alpha)`.
    pub fn fdr_risk(&self) -> f64 {
        self.fdr_risk
    }

    pub fn realized_loss(&self) -> f64 {
        self.realized_loss
    }

    pub fn params(&self) -> &LossParams {
        &self.params
    }

    pub fn grid(&self) -> &HypothesisGrid {
        &self.grid
    }

    /// Realized FDR; `alpha` when nothing was answered.
    pub fn fdr(&self) -> f64 {
        fdr_from(self.error_mass, self.answered_count, self.params.alpha())
    }

    /// Fraction of rounds that abstained; 0 before the first round.
    pub fn ineff(&self) -> f64 {
        ineff_from(self.abstain_count, self.rounds)
    }

    /// Cumulative true loss of every fixed arm.
    pub fn hindsight_losses(&self) -> Vec<f64> {
        let n = self.grid.size();
        let mut out = vec![0.0; n];
        // answer side: arm k collects every round whose cut is >= k
        let mut suffix = 0.0;
        for k in (0..n).rev() {
            suffix += self.accept_loss_diff[k];
            out[k] = suffix;
        }
        // abstain side: arm k collects every round whose cut is < k
        let mut prefix = 0.0;
        for (slot, diff) in out.iter_mut().zip(&self.abstain_loss_diff) {
            *slot += prefix;
            prefix += diff;
        }
        out
    }

    /// Best fixed arm and its cumulative loss; ties go to the lowest index.
    pub fn hindsight_best(&self) -> (usize, f64) {
        self.hindsight_losses()
            .into_iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |best, (k, l)| if l < best.1 { (k, l) } else { best },
            )
    }

    /// Realized loss minus the best fixed arm's loss. May be negative.
    pub fn hindsight_regret(&self) -> f64 {
        self.realized_loss - self.hindsight_best().1
    }
}

pub fn fdr_from(error_mass: f64, answered: usize, alpha: f64) -> f64 {
    if answered == 0 {
        alpha
    } else {
        error_mass / answered as f64
    }
}

pub fn ineff_from(abstained: usize, rounds: usize) -> f64 {
    if rounds == 0 {
        0.0
    } else {
        abstained as f64 / rounds as f64
    }
}

/// Which bound checks to run and at what confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditConfig {
    pub delta: f64,
    pub check_lemma1: bool,
    pub check_fdr_bound: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            delta: 0.01,
            check_lemma1: true,
            check_fdr_bound: true,
        }
    }
}

/// Relative slack for the pathwise inequalities. Both sides are sums of up
/// to `T` rounded terms; the inequality can be tight (e.g. when the
/// always-abstaining arm is the best arm), so exact comparison would flag
/// rounding noise.
pub const PATHWISE_RTOL: f64 = 1e-9;

fn le_with_slack(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + PATHWISE_RTOL * (1.0 + lhs.abs().max(rhs.abs()))
}

/// Outcome of one inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

impl BoundCheck {
    fn pathwise(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            ok: le_with_slack(lhs, rhs),
        }
    }

    fn probabilistic(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            ok: lhs <= rhs,
        }
    }
}

/// Realized FDR bound derived from the conversion inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdrCheck {
    Checked(BoundCheck),
    /// Every round abstained; the bound is undefined.
    Degenerate,
    Skipped,
}

impl FdrCheck {
    pub fn ok(&self) -> bool {
        match self {
            FdrCheck::Checked(c) => c.ok,
            FdrCheck::Degenerate | FdrCheck::Skipped => true,
        }
    }
}

/// End-of-run audit of one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditReport {
    pub horizon: usize,
    pub lambda: f64,
    pub fdr: f64,
    pub ineff: f64,
    pub regret: f64,
    pub fdr_risk: f64,
    /// `R_T <= (T (1 - Ineff) + (1 + lambda) Reg) / lambda`, every trajectory.
    pub lemma1: Option<BoundCheck>,
    /// `FDR - alpha <= 1/lambda + (1 + lambda) Reg / (lambda T (1 - Ineff))`.
    pub fdr_bound: FdrCheck,
    /// Time-normalized FDR risk bound holding with probability `1 - delta`.
    pub fdr_risk_bound: BoundCheck,
    /// Regret bound of the unlocking learner, probability `1 - delta`.
    pub regret_bound: BoundCheck,
}

impl AuditReport {
    pub fn lemma1_ok(&self) -> bool {
        self.lemma1.map_or(true, |c| c.ok)
    }

    /// Pathwise checks only; the probabilistic ones may fail on a `delta`
    /// fraction of trials.
    pub fn passed(&self) -> bool {
        self.lemma1_ok() && self.fdr_bound.ok()
    }

    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("T", self.horizon.to_string());
        kv("lambda", fmt_real(self.lambda));
        kv("fdr", fmt_real(self.fdr));
        kv("ineff", fmt_real(self.ineff));
        kv("regret", fmt_real(self.regret));
        kv("fdr_risk", fmt_real(self.fdr_risk));
        match self.lemma1 {
            Some(c) => {
                kv("lemma1_lhs", fmt_real(c.lhs));
                kv("lemma1_rhs", fmt_real(c.rhs));
                kv("lemma1_ok", c.ok.to_string());
            }
            None => kv("lemma1_ok", "skipped".into()),
        }
        match self.fdr_bound {
            FdrCheck::Checked(c) => {
                kv("fdrbound_lhs", fmt_real(c.lhs));
                kv("fdrbound_rhs", fmt_real(c.rhs));
                kv("fdrbound_ok", c.ok.to_string());
            }
            FdrCheck::Degenerate => kv("fdrbound_ok", "degenerate".into()),
            FdrCheck::Skipped => kv("fdrbound_ok", "skipped".into()),
        }
        kv("fdr_risk_bound_lhs", fmt_real(self.fdr_risk_bound.lhs));
        kv("fdr_risk_bound_rhs", fmt_real(self.fdr_risk_bound.rhs));
        kv("fdr_risk_bound_ok", self.fdr_risk_bound.ok.to_string());
        kv("regret_bound_rhs", fmt_real(self.regret_bound.rhs));
        kv("regret_bound_ok", self.regret_bound.ok.to_string());
        s
    }
}

/// Reals are written with 17 significant digits so they parse back exactly.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Right-hand side of the conversion inequality.
pub fn lemma1_rhs(horizon: usize, ineff: f64, regret: f64, lambda: f64) -> f64 {
    let t = horizon as f64;
    (t * (1.0 - ineff) + (1.0 + lambda) * regret) / lambda
}

/// FDR bound from dividing the conversion inequality by `T (1 - Ineff)`;
/// `None` when every round abstained.
pub fn fdr_bound_rhs(horizon: usize, ineff: f64, regret: f64, lambda: f64) -> Option<f64> {
    if ineff >= 1.0 {
        return None;
    }
    let t = horizon as f64;
    Some(1.0 / lambda + (1.0 + lambda) * regret / (lambda * t * (1.0 - ineff)))
}

/// Bound on `R_T / T` for the unlocking learner with `eta = 2 gamma =
/// sqrt(ln|H| / T)`.
pub fn fdr_risk_bound_rhs(horizon: usize, grid_size: usize, ineff: f64, delta: f64) -> f64 {
    let t = horizon as f64;
    let ln_h = (grid_size as f64).ln();
    let log_term = (2.0 / delta).ln();
    (1.0 - ineff) / t.sqrt()
        + (1.0 + 1.0 / t.sqrt())
            * (4.0 * (ln_h / t).sqrt() + (1.0 / t + (1.0 / (t * ln_h)).sqrt()) * log_term)
}

/// `4 sqrt(T ln|H|) + (1 + sqrt(T / ln|H|)) ln(2/delta)`.
pub fn regret_bound_rhs(horizon: usize, grid_size: usize, delta: f64) -> f64 {
    let t = horizon as f64;
    let ln_h = (grid_size as f64).ln();
    4.0 * (t * ln_h).sqrt() + (1.0 + (t / ln_h).sqrt()) * (2.0 / delta).ln()
}

/// Runs every configured check on a finished ledger.
pub fn audit_bounds(ledger: &MetricsLedger, config: &AuditConfig) -> AuditReport {
    let horizon = ledger.rounds();
    let lambda = ledger.params().lambda();
    let alpha = ledger.params().alpha();
    let fdr = ledger.fdr();
    let ineff = ledger.ineff();
    let regret = ledger.hindsight_regret();
    let fdr_risk = ledger.fdr_risk();
    let grid_size = ledger.grid().size();
    audit_values(
        AuditInputs {
            horizon,
            grid_size,
            alpha,
            lambda,
            fdr,
            ineff,
            regret,
            fdr_risk,
        },
        config,
    )
}

/// Final metrics of a trial, as stored in a summary row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditInputs {
    pub horizon: usize,
    pub grid_size: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub fdr: f64,
    pub ineff: f64,
    pub regret: f64,
    pub fdr_risk: f64,
}

/// Audit from final metrics alone; used both at the end of a run and when
/// replaying a summary file.
pub fn audit_values(v: AuditInputs, config: &AuditConfig) -> AuditReport {
    let lemma1 = (config.check_lemma1 && v.lambda > 0.0).then(|| {
        BoundCheck::pathwise(
            v.fdr_risk,
            lemma1_rhs(v.horizon, v.ineff, v.regret, v.lambda),
        )
    });
    let fdr_bound = if !config.check_fdr_bound || v.lambda <= 0.0 {
        FdrCheck::Skipped
    } else {
        match fdr_bound_rhs(v.horizon, v.ineff, v.regret, v.lambda) {
            Some(rhs) => FdrCheck::Checked(BoundCheck::pathwise(v.fdr - v.alpha, rhs)),
            None => FdrCheck::Degenerate,
        }
    };
    let t = v.horizon as f64;
    let fdr_risk_bound = BoundCheck::probabilistic(
        v.fdr_risk / t,
        fdr_risk_bound_rhs(v.horizon, v.grid_size, v.ineff, config.delta),
    );
    let regret_bound = BoundCheck::probabilistic(
        v.regret,
        regret_bound_rhs(v.horizon, v.grid_size, config.delta),
    );
    AuditReport {
        horizon: v.horizon,
        lambda: v.lambda,
        fdr: v.fdr,
        ineff: v.ineff,
        regret: v.regret,
        fdr_risk: v.fdr_risk,
        lemma1,
        fdr_bound,
        fdr_risk_bound,
        regret_bound,
    }
}
