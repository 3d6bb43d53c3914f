//! Debate proposals, weighted consensus, and the debater performance table.
//!
//! Weights are `softmax(eta / tau_w)` over per-debater historical
//! performance; the winning proposal maximizes the weight-blended alignment
//! score `phi`. Performance evolves by an exponential moving average with
//! a fixed learning rate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{clamp01, ema, jaccard, softmax, token_set};
use crate::Real;

/// EMA learning rate for performance updates.
pub const PERFORMANCE_BETA: Real = 0.3;

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("consensus requires at least one proposal")]
    Empty,
    #[error("got {proposals} proposal(s) but {performances} performance value(s)")]
    LengthMismatch {
        proposals: usize,
        performances: usize,
    },
    #[error("softmax temperature must be positive, got {0}")]
    BadTemperature(Real),
    #[error("debater index {index} outside [1, {len}]")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("reward {0} outside [0, 1]")]
    BadReward(Real),
}

/// One debater's contribution to the discussion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateProposal {
    /// 1-based position in the debate.
    pub debater_index: usize,
    pub strategy_text: String,
    pub param_text: String,
    pub self_score: Real,
}

/// The weight vector used for one consensus decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusWeights {
    pub performances: Vec<Real>,
    pub temperature: Real,
    pub weights: Vec<Real>,
}

/// Alignment of proposal `d` with candidate strategy `alpha`: Jaccard
/// similarity of their strategy token sets plus a quarter of the proposer's
/// self score, clamped to `[0, 1]`. The candidate's params carry no lexical
/// signal here, so they do not enter the score.
pub fn phi(d: &DebateProposal, alpha: &str) -> Real {
    let align: Real = jaccard(&token_set(&d.strategy_text), &token_set(alpha));
    clamp01(align + 0.25 * d.self_score)
}

/// Pick the consensus strategy and params from the proposal pool.
///
/// `performances[j]` pairs with `proposals[j]`. Returns the winning
/// proposal (carrying strategy and params) and the weight vector; ties on
/// the blended score go to the lowest debater index.
pub fn consensus(
    proposals: &[DebateProposal],
    performances: &[Real],
    tau_w: Real,
) -> Result<(DebateProposal, ConsensusWeights), ConsensusError> {
    if proposals.is_empty() {
        return Err(ConsensusError::Empty);
    }
    if proposals.len() != performances.len() {
        return Err(ConsensusError::LengthMismatch {
            proposals: proposals.len(),
            performances: performances.len(),
        });
    }
    if tau_w.is_nan() || tau_w <= 0.0 {
        return Err(ConsensusError::BadTemperature(tau_w));
    }

    let weights = softmax(performances, tau_w);
    let mut candidates: Vec<&DebateProposal> = proposals.iter().collect();
    candidates.sort_by_key(|c| c.debater_index);

    let mut best: Option<(&DebateProposal, Real)> = None;
    for candidate in candidates {
        let score: Real = proposals
            .iter()
            .zip(&weights)
            .map(|(d, w)| w * phi(d, &candidate.strategy_text))
            .sum();
        match best {
            Some((_, top)) if score <= top => {}
            _ => best = Some((candidate, score)),
        }
    }
    let (chosen, _) = best.expect("nonempty proposals yield a winner");
    Ok((
        chosen.clone(),
        ConsensusWeights {
            performances: performances.to_vec(),
            temperature: tau_w,
            weights,
        },
    ))
}

/// EMA update of the rewarded debater: `eta <- (1-beta)*eta + beta*reward`.
/// `debater_index` is 1-based; other entries are untouched.
pub fn update_performance(
    performances: &mut [Real],
    debater_index: usize,
    reward: Real,
) -> Result<(), ConsensusError> {
    if debater_index < 1 || debater_index > performances.len() {
        return Err(ConsensusError::IndexOutOfRange {
            index: debater_index,
            len: performances.len(),
        });
    }
    if !(0.0..=1.0).contains(&reward) {
        return Err(ConsensusError::BadReward(reward));
    }
    let slot = &mut performances[debater_index - 1];
    *slot = ema(*slot, reward, PERFORMANCE_BETA);
    Ok(())
}
