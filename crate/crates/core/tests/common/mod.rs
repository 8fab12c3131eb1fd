//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's estimator or ledger code.

#![allow(dead_code)]

use rand::Rng;

/// Threshold of arm `k` on a grid of `h` points.
pub fn tau(h: usize, k: usize) -> f64 {
    k as f64 / (h - 1) as f64
}

/// Whether arm `k` answers a round with confidence `score`.
pub fn answers(h: usize, k: usize, score: f64) -> bool {
    score >= tau(h, k)
}

/// Feedback seen by an arm: the error when it answers, 1 when it abstains.
pub fn feedback(answered: bool, correctness: f64) -> f64 {
    if answered {
        1.0 - correctness
    } else {
        1.0
    }
}

/// Loss procedure evaluated term by term, without regrouping:
/// `a = 1(IDK)`, `d = 1(ans) e - alpha 1(ans) + alpha`, `(a + lambda d) / (1 + lambda)`.
pub fn literal_loss(answered: bool, e: f64, alpha: f64, lambda: f64) -> f64 {
    let ans = if answered { 1.0 } else { 0.0 };
    let a = 1.0 - ans;
    let d = ans * e - alpha * ans + alpha;
    (a + lambda * d) / (1.0 + lambda)
}

/// Two-branch closed form of the loss.
pub fn closed_form_loss(answered: bool, e: f64, alpha: f64, lambda: f64) -> f64 {
    if answered {
        lambda * e / (1.0 + lambda)
    } else {
        (1.0 + lambda * alpha) / (1.0 + lambda)
    }
}

/// Loss of arm `k` on one round.
pub fn arm_loss(h: usize, k: usize, score: f64, correctness: f64, alpha: f64, lambda: f64) -> f64 {
    let ans = answers(h, k, score);
    closed_form_loss(ans, feedback(ans, correctness), alpha, lambda)
}

/// Membership of the unlock set of `chosen`, by definition: thresholds at or
/// below the score when the chosen arm answers, above it otherwise.
pub fn literal_unlock(h: usize, chosen: usize, score: f64) -> Vec<bool> {
    let chosen_answers = answers(h, chosen, score);
    (0..h)
        .map(|k| {
            if chosen_answers {
                tau(h, k) <= score
            } else {
                tau(h, k) > score
            }
        })
        .collect()
}

/// The unlocking estimator with its double-indicator denominator summed
/// term by term: for each `k` in the unlock set of `chosen`,
/// `loss(k) / (gamma + sum_{j in U(chosen)} 1(k in U(j)) p(j))`.
#[allow(clippy::too_many_arguments)]
pub fn literal_estimate(
    h: usize,
    chosen: usize,
    score: f64,
    correctness: f64,
    alpha: f64,
    lambda: f64,
    policy: &[f64],
    gamma: f64,
) -> Vec<f64> {
    let unlocked = literal_unlock(h, chosen, score);
    let sets: Vec<Vec<bool>> = (0..h).map(|j| literal_unlock(h, j, score)).collect();
    (0..h)
        .map(|k| {
            if !unlocked[k] {
                return 0.0;
            }
            let mut mass = 0.0;
            for j in 0..h {
                if unlocked[j] && sets[j][k] {
                    mass += policy[j];
                }
            }
            arm_loss(h, k, score, correctness, alpha, lambda) / (gamma + mass)
        })
        .collect()
}

/// Full `|H| x T` loss matrix, summed per arm.
pub fn brute_force_cumulative(
    h: usize,
    rounds: &[(f64, f64)],
    alpha: f64,
    lambda: f64,
) -> Vec<f64> {
    (0..h)
        .map(|k| {
            rounds
                .iter()
                .map(|&(s, c)| arm_loss(h, k, s, c, alpha, lambda))
                .sum()
        })
        .collect()
}

/// A strictly positive random probability vector.
pub fn random_policy<R: Rng>(h: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..h).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}
