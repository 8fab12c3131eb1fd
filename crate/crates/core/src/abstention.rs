//! Threshold grid, abstention rule, the combined abstention loss, feedback
//! unlocking and the two importance-weighted loss estimators.
//!
//! Every threshold `tau_k = k / (|H| - 1)` of the grid is one bandit arm. An
//! abstainer with threshold `tau` answers when the confidence score `f`
//! satisfies `f >= tau` and says IDK otherwise. Because the rule is monotone
//! in `tau`, one observed outcome for the chosen arm determines the outcome
//! of every arm on the same side of the score; that side is the
//! [`UnlockSet`].

use std::ops::Range;

use crate::error::{Error, Result};

/// Largest admissible score, `1 - 2^-52`. Scores are clamped to
/// `[0, MAX_SCORE]` so that the top threshold `tau = 1` always abstains.
pub const MAX_SCORE: f64 = 1.0 - f64::EPSILON;

/// Clamps a raw score into `[0, MAX_SCORE]`.
pub fn clamp_score(score: f64) -> Result<f64> {
    if !score.is_finite() {
        return Err(Error::InvalidScore(score));
    }
    Ok(score.clamp(0.0, MAX_SCORE))
}

/// The uniformly quantized threshold set `{k / (size - 1)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HypothesisGrid {
    size: usize,
}

impl HypothesisGrid {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidGrid(size));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Index of the always-abstaining arm (`tau = 1`).
    pub fn top(&self) -> usize {
        self.size - 1
    }

    /// Threshold of arm `k`, checked.
    pub fn value(&self, k: usize) -> Result<f64> {
        if k >= self.size {
            return Err(Error::IndexOutOfRange {
                index: k,
                size: self.size,
            });
        }
        Ok(self.tau(k))
    }

    /// Threshold of arm `k`. A single division, so the endpoints are exact.
    #[inline]
    pub fn tau(&self, k: usize) -> f64 {
        debug_assert!(k < self.size);
        k as f64 / (self.size - 1) as f64
    }

    /// Largest `k` with `tau_k <= score`.
    ///
    /// `floor(score * (|H| - 1))` can land one step off at grid points, so the
    /// candidate is corrected against [`HypothesisGrid::tau`] in both
    /// directions.
    pub fn cut_index(&self, score: f64) -> usize {
        let last = self.size - 1;
        let raw = (score * last as f64).floor();
        let mut cut = if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(last)
        };
        while cut > 0 && self.tau(cut) > score {
            cut -= 1;
        }
        while cut < last && self.tau(cut + 1) <= score {
            cut += 1;
        }
        cut
    }
}

/// Abstention rule `1(score >= tau)`: true means the abstainer answers.
#[inline]
pub fn accepts(tau: f64, score: f64) -> bool {
    score >= tau
}

/// Target FDR level and the FDR/inefficiency trade-off weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    alpha: f64,
    lambda: f64,
}

impl LossParams {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be a finite non-negative number, got {lambda}"
            )));
        }
        Ok(Self { alpha, lambda })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Loss of any answering arm given feedback `e`.
    pub fn answer_loss(&self, feedback: f64) -> f64 {
        self.lambda * feedback / (1.0 + self.lambda)
    }

    /// Loss of any abstaining arm.
    pub fn abstain_loss(&self) -> f64 {
        (1.0 + self.lambda * self.alpha) / (1.0 + self.lambda)
    }
}

/// Components of the per-round abstention loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// `a_t`: 1 when the abstainer said IDK.
    pub inefficiency: f64,
    /// `d_t`: FDR loss with margin `alpha`.
    pub fdr_margin: f64,
    /// `(a_t + lambda d_t) / (1 + lambda)`, in `[0, 1]`.
    pub combined: f64,
}

impl LossTerms {
    pub fn answered(&self) -> bool {
        self.inefficiency == 0.0
    }
}

/// Combined abstention loss for one decision.
///
/// The margin is evaluated as `1(answered) e + alpha (1 - 1(answered))`, the
/// same polynomial as `1(answered) e - alpha 1(answered) + alpha` grouped so
/// that both branches are exact: an answer yields `lambda e / (1 + lambda)`
/// and an abstention `(1 + lambda alpha) / (1 + lambda)` bit for bit.
pub fn compute_loss(answered: bool, feedback: f64, params: &LossParams) -> Result<LossTerms> {
    if !(0.0..=1.0).contains(&feedback) {
        return Err(Error::FeedbackOutOfRange(feedback));
    }
    let answer = if answered { 1.0 } else { 0.0 };
    let inefficiency = 1.0 - answer;
    let fdr_margin = answer * feedback + params.alpha * (1.0 - answer);
    let combined = (inefficiency + params.lambda * fdr_margin) / (1.0 + params.lambda);
    Ok(LossTerms {
        inefficiency,
        fdr_margin,
        combined,
    })
}

/// Arms whose loss is revealed by the chosen arm's observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnlockSet {
    answered: bool,
    cut_index: usize,
    members: Range<usize>,
    grid_size: usize,
}

impl UnlockSet {
    /// Whether the chosen arm answered.
    pub fn answered(&self) -> bool {
        self.answered
    }

    /// Largest arm index with `tau <= score`.
    pub fn cut_index(&self) -> usize {
        self.cut_index
    }

    /// Contiguous index range of unlocked arms.
    pub fn members(&self) -> Range<usize> {
        self.members.clone()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.members.contains(&k)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Arms outside the set; always the other side of the cut.
    pub fn complement(&self) -> Range<usize> {
        if self.answered {
            self.cut_index + 1..self.grid_size
        } else {
            0..self.cut_index + 1
        }
    }

    /// Restricts the set to the chosen arm alone. With this set the unlocking
    /// estimator degenerates to the Exp3-IX estimator.
    pub fn into_singleton(self, chosen: usize) -> Self {
        debug_assert!(self.contains(chosen));
        Self {
            members: chosen..chosen + 1,
            ..self
        }
    }
}

/// Builds the unlock set of `chosen` for a round with confidence `score`.
pub fn unlock_set(grid: &HypothesisGrid, chosen: usize, score: f64) -> Result<UnlockSet> {
    let tau = grid.value(chosen)?;
    let cut_index = grid.cut_index(score);
    let answered = accepts(tau, score);
    let members = if answered {
        0..cut_index + 1
    } else {
        cut_index + 1..grid.size()
    };
    debug_assert!(members.contains(&chosen));
    Ok(UnlockSet {
        answered,
        cut_index,
        members,
        grid_size: grid.size(),
    })
}

fn check_estimator_inputs(policy: &[f64], gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma must be finite and non-negative, got {gamma}"
        )));
    }
    let total: f64 = policy.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::PolicyNotNormalized(total));
    }
    Ok(())
}

/// Increment that the unlocking estimator assigns to every member:
/// `loss / (gamma + M)` with `M` the policy mass of the unlock set.
///
/// By the partition property every member sees the same denominator, so a
/// single value serves the whole set.
pub fn unlocked_increment(
    unlock: &UnlockSet,
    loss: f64,
    policy: &[f64],
    gamma: f64,
) -> Result<f64> {
    let mass: f64 = policy[unlock.members()].iter().sum();
    let denom = gamma + mass;
    if denom <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(loss / denom)
}

/// Unlocking loss estimate for every arm: `loss / (gamma + M)` on the unlock
/// set and 0 elsewhere. Estimates are unbounded above; no clipping.
pub fn estimate_loss_exaul(
    unlock: &UnlockSet,
    loss: &LossTerms,
    policy: &[f64],
    gamma: f64,
) -> Result<Vec<f64>> {
    check_estimator_inputs(policy, gamma)?;
    let value = unlocked_increment(unlock, loss.combined, policy, gamma)?;
    let mut est = vec![0.0; policy.len()];
    est[unlock.members()].fill(value);
    Ok(est)
}

/// Implicit-exploration estimate of the chosen arm's loss,
/// `loss / (gamma + p(chosen))`.
pub fn ix_increment(chosen: usize, loss: f64, policy: &[f64], gamma: f64) -> Result<f64> {
    let denom = gamma + policy[chosen];
    if denom <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(loss / denom)
}

/// Exp3-IX loss estimate for every arm: nonzero on the chosen arm only.
pub fn estimate_loss_ix(chosen: usize, loss: f64, policy: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_estimator_inputs(policy, gamma)?;
    if chosen >= policy.len() {
        return Err(Error::IndexOutOfRange {
            index: chosen,
            size: policy.len(),
        });
    }
    let mut est = vec![0.0; policy.len()];
    est[chosen] = ix_increment(chosen, loss, policy, gamma)?;
    Ok(est)
}
