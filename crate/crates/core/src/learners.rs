//! Exponential-weights learners over the threshold grid.
//!
//! All learners store cumulative (estimated) losses only; the policy is the
//! softmax of `-eta * L` taken after subtracting `min L`, so weights are never
//! materialized and nothing underflows over long horizons.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::abstention::{
    accepts, compute_loss, ix_increment, unlock_set, unlocked_increment, HypothesisGrid, LossParams,
};
use crate::environments::RoundOutcome;
use crate::error::{Error, Result};

/// Which update rule a learner runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Exp3-IX with feedback unlocking.
    Exaul,
    /// Plain Exp3-IX on the abstention loss.
    Exp3IxCa,
    /// Exponential weights with full feedback.
    EwCa,
    /// Always plays the given arm; `no-ca` is arm 0 (never abstains).
    FixedArm(usize),
}

impl Algorithm {
    pub fn full_feedback(&self) -> bool {
        matches!(self, Algorithm::EwCa)
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exaul" => Ok(Algorithm::Exaul),
            "exp3ix-ca" => Ok(Algorithm::Exp3IxCa),
            "ew-ca" => Ok(Algorithm::EwCa),
            "no-ca" => Ok(Algorithm::FixedArm(0)),
            other => match other.strip_prefix("fixed-arm:") {
                Some(k) => k
                    .parse()
                    .map(Algorithm::FixedArm)
                    .map_err(|_| Error::UnknownAlgorithm(s.to_string())),
                None => Err(Error::UnknownAlgorithm(s.to_string())),
            },
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Exaul => f.write_str("exaul"),
            Algorithm::Exp3IxCa => f.write_str("exp3ix-ca"),
            Algorithm::EwCa => f.write_str("ew-ca"),
            Algorithm::FixedArm(0) => f.write_str("no-ca"),
            Algorithm::FixedArm(k) => write!(f, "fixed-arm:{k}"),
        }
    }
}

/// Learning rate and implicit-exploration parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSchedule {
    pub eta: f64,
    pub gamma: f64,
}

/// Whether rates are fixed for a known horizon or shrink as `sqrt(T / t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateMode {
    #[default]
    Fixed,
    Anytime,
}

/// Known-horizon rates with losses normalized to `[0, 1]`:
///
/// * `exaul`: `eta = 2 gamma = sqrt(ln|H| / T)`
/// * `exp3ix-ca`: `eta = 2 gamma = sqrt(2 ln|H| / (T |H|))`
/// * `ew-ca`: `eta = sqrt(8 ln|H| / T)`, `gamma = 0`
///
/// Fixed arms do not learn; they get the `exaul` values for reporting.
pub fn default_rates(algo: Algorithm, horizon: usize, grid: &HypothesisGrid) -> RateSchedule {
    let n = grid.size() as f64;
    rates_for(algo, horizon.max(1) as f64, n, n.ln())
}

fn rates_for(algo: Algorithm, t: f64, n: f64, ln_h: f64) -> RateSchedule {
    match algo {
        Algorithm::Exaul | Algorithm::FixedArm(_) => {
            let eta = (ln_h / t).sqrt();
            RateSchedule {
                eta,
                gamma: eta / 2.0,
            }
        }
        Algorithm::Exp3IxCa => {
            let eta = (2.0 * ln_h / (t * n)).sqrt();
            RateSchedule {
                eta,
                gamma: eta / 2.0,
            }
        }
        Algorithm::EwCa => RateSchedule {
            eta: (8.0 * ln_h / t).sqrt(),
            gamma: 0.0,
        },
    }
}

/// Policy state of one learner in one run.
#[derive(Debug, Clone)]
pub struct LearnerState {
    algo: Algorithm,
    grid: HypothesisGrid,
    cumulative: Vec<f64>,
    policy: Vec<f64>,
    rates: RateSchedule,
    mode: RateMode,
    step: usize,
    horizon: usize,
    singleton_unlock: bool,
}

impl LearnerState {
    /// Fresh learner with a uniform policy at step 1.
    pub fn init(
        algo: Algorithm,
        grid: HypothesisGrid,
        horizon: usize,
        rates: RateSchedule,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if let Algorithm::FixedArm(k) = algo {
            grid.value(k)?;
        }
        let rates = match algo {
            Algorithm::EwCa => RateSchedule {
                gamma: 0.0,
                ..rates
            },
            _ => rates,
        };
        if !(rates.eta > 0.0 && rates.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {}",
                rates.eta
            )));
        }
        if !(rates.gamma >= 0.0 && rates.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be non-negative, got {}",
                rates.gamma
            )));
        }
        let mut state = Self {
            algo,
            grid,
            cumulative: vec![0.0; grid.size()],
            policy: vec![0.0; grid.size()],
            rates,
            mode: RateMode::Fixed,
            step: 1,
            horizon,
            singleton_unlock: false,
        };
        state.refresh_policy();
        Ok(state)
    }

    pub fn with_rate_mode(mut self, mode: RateMode) -> Self {
        self.mode = mode;
        self.refresh_policy();
        self
    }

    /// Test hook: restricts every unlock set to the chosen arm, which turns
    /// the unlocking update into the plain Exp3-IX update.
    pub fn with_singleton_unlock(mut self, on: bool) -> Self {
        self.singleton_unlock = on;
        self
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algo
    }

    pub fn grid(&self) -> &HypothesisGrid {
        &self.grid
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn rates(&self) -> RateSchedule {
        self.rates
    }

    pub fn cumulative_estimates(&self) -> &[f64] {
        &self.cumulative
    }

    /// Rates in force at the current step.
    pub fn current_rates(&self) -> RateSchedule {
        match self.mode {
            RateMode::Fixed => self.rates,
            RateMode::Anytime => {
                let scale = (self.horizon as f64 / self.step as f64).sqrt();
                RateSchedule {
                    eta: self.rates.eta * scale,
                    gamma: self.rates.gamma * scale,
                }
            }
        }
    }

    /// Current sampling distribution `p_t`.
    pub fn current_policy(&self) -> &[f64] {
        &self.policy
    }

    /// Draws an arm from the current policy.
    pub fn sample_arm<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.policy, rng.random::<f64>())
    }

    fn refresh_policy(&mut self) {
        if let Algorithm::FixedArm(k) = self.algo {
            self.policy.fill(0.0);
            self.policy[k] = 1.0;
            return;
        }
        softmax_neg(&self.cumulative, self.current_rates().eta, &mut self.policy);
    }

    fn advance(&mut self) {
        self.step += 1;
        self.refresh_policy();
    }

    /// Full-feedback exponential-weights update: every arm's true loss is
    /// added. Arms split into an answering side and an abstaining side, so
    /// only two distinct increments occur.
    pub fn update_full(&mut self, round: &RoundOutcome, params: &LossParams) -> Result<()> {
        if self.algo != Algorithm::EwCa {
            return Err(Error::Usage(format!(
                "full-feedback update called on a {} learner",
                self.algo
            )));
        }
        let error = 1.0 - round.correctness;
        let answer = compute_loss(true, error, params)?.combined;
        let abstain = compute_loss(false, 1.0, params)?.combined;
        let cut = self.grid.cut_index(round.score);
        for (k, total) in self.cumulative.iter_mut().enumerate() {
            debug_assert_eq!(k <= cut, accepts(self.grid.tau(k), round.score));
            *total += if k <= cut { answer } else { abstain };
        }
        self.advance();
        Ok(())
    }

    /// Exp3-IX update: only the chosen arm's estimate moves.
    pub fn update_bandit(
        &mut self,
        chosen: usize,
        round: &RoundOutcome,
        params: &LossParams,
    ) -> Result<()> {
        if self.algo != Algorithm::Exp3IxCa {
            return Err(Error::Usage(format!(
                "Exp3-IX update called on a {} learner",
                self.algo
            )));
        }
        let tau = self.grid.value(chosen)?;
        let loss = compute_loss(accepts(tau, round.score), round.feedback, params)?;
        let gamma = self.current_rates().gamma;
        self.cumulative[chosen] += ix_increment(chosen, loss.combined, &self.policy, gamma)?;
        self.advance();
        Ok(())
    }

    /// Unlocking update: every arm on the chosen arm's side of the score gets
    /// the same importance-weighted increment.
    pub fn update_unlocked(
        &mut self,
        chosen: usize,
        round: &RoundOutcome,
        params: &LossParams,
    ) -> Result<()> {
        if self.algo != Algorithm::Exaul {
            return Err(Error::Usage(format!(
                "unlocking update called on a {} learner",
                self.algo
            )));
        }
        let mut unlock = unlock_set(&self.grid, chosen, round.score)?;
        if self.singleton_unlock {
            unlock = unlock.into_singleton(chosen);
        }
        let loss = compute_loss(unlock.answered(), round.feedback, params)?;
        let gamma = self.current_rates().gamma;
        let inc = unlocked_increment(&unlock, loss.combined, &self.policy, gamma)?;
        for total in &mut self.cumulative[unlock.members()] {
            *total += inc;
        }
        self.advance();
        Ok(())
    }

    /// Dispatches to the update rule of this learner's algorithm.
    pub fn observe(
        &mut self,
        chosen: usize,
        round: &RoundOutcome,
        params: &LossParams,
    ) -> Result<()> {
        match self.algo {
            Algorithm::Exaul => self.update_unlocked(chosen, round, params),
            Algorithm::Exp3IxCa => self.update_bandit(chosen, round, params),
            Algorithm::EwCa => self.update_full(round, params),
            Algorithm::FixedArm(_) => {
                self.step += 1;
                Ok(())
            }
        }
    }
}

/// `out = softmax(-eta * losses)`, shifted by the minimum loss.
pub fn softmax_neg(losses: &[f64], eta: f64, out: &mut [f64]) {
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(losses) {
        *o = (-eta * (l - min)).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Inverse-CDF draw: the first index whose running sum exceeds `u`. The last
/// index absorbs any mass lost to rounding.
pub fn sample_index(policy: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &p) in policy.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    policy.len() - 1
}
