//! Reward functions: the binary format reward, the confidence-shaped focal
//! reward with class-dependent scaling, and their aggregation.
//!
//! The format reward is 1 for a well-formed emission and 0 otherwise. The
//! focal reward is `alpha * (1 - p)^gamma * f`, where `p` is the policy's
//! probability of the correct answer before sampling and `f` is a per-class
//! scale; a correct well-formed answer earns it positively, a wrong one
//! earns its negation when `signed_penalty` is set (else 0), and malformed
//! emissions earn 0 — their penalty is already carried by the format
//! reward. The per-sample reward is the plain sum of the components.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ImbalanceStats;
use crate::protocol::{Label, ParsedResponse};

/// Parameters of the reward functions.
///
/// `weight_format` / `weight_focal` default to 1.0, which reduces the
/// aggregate to the plain unweighted sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub scale_normal: f64,
    pub scale_defect: f64,
    pub signed_penalty: bool,
    pub weight_format: f64,
    pub weight_focal: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 0.25,
            gamma: 2.0,
            scale_normal: 1.0,
            scale_defect: 1.0,
            signed_penalty: true,
            weight_format: 1.0,
            weight_focal: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(RewardError::InvalidConfig(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(RewardError::InvalidConfig(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        for (name, value) in [
            ("scale_normal", self.scale_normal),
            ("scale_defect", self.scale_defect),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(RewardError::InvalidConfig(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        for (name, value) in [
            ("weight_format", self.weight_format),
            ("weight_focal", self.weight_focal),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(RewardError::InvalidConfig(format!(
                    "{name} must be non-negative, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Class scale applied inside the focal reward.
    pub fn scale_for(&self, label: Label) -> f64 {
        match label {
            Label::Defect => self.scale_defect,
            Label::Normal => self.scale_normal,
        }
    }
}

/// Per-rollout reward components. `format` and `focal` are the raw
/// component values; `total` is their (weighted) sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub focal: f64,
    pub total: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("probability out of range: {0} (expected [0, 1])")]
    ProbabilityOutOfRange(f64),
    #[error("non-finite reward component: {0}")]
    NonFiniteComponent(f64),
    #[error("class scale needs both class counts to be positive")]
    EmptyClass,
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
}

/// Binary structure reward: 1 iff the emission parsed well-formed.
pub fn format_reward(parsed: &ParsedResponse) -> f64 {
    if parsed.is_well_formed() {
        1.0
    } else {
        0.0
    }
}

/// Confidence-shaped correctness reward.
///
/// `p` is the policy's probability of the correct answer for this sample.
/// Returns 0 for malformed emissions, `+alpha*(1-p)^gamma*f` when the
/// answer matches `truth`, and the negated magnitude (or 0 when
/// `signed_penalty` is off) when it does not.
pub fn focal_reward(
    parsed: &ParsedResponse,
    truth: Label,
    p: f64,
    cfg: &RewardConfig,
) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(RewardError::ProbabilityOutOfRange(p));
    }
    let Some(answer) = parsed.answer() else {
        return Ok(0.0);
    };
    // (1 - p)^0 is taken as 1 for every p, so gamma = 0 degenerates to a
    // constant-magnitude correctness reward.
    let magnitude = cfg.alpha * (1.0 - p).powf(cfg.gamma) * cfg.scale_for(truth);
    if answer == truth {
        Ok(magnitude)
    } else if cfg.signed_penalty {
        Ok(-magnitude)
    } else {
        Ok(0.0)
    }
}

/// Aggregate reward components into the scalar reward: the exact sum.
pub fn total_reward(components: &[f64]) -> Result<f64, RewardError> {
    let mut sum = 0.0;
    for &c in components {
        if !c.is_finite() {
            return Err(RewardError::NonFiniteComponent(c));
        }
        sum += c;
    }
    Ok(sum)
}

/// Compute both components and their aggregate for one rollout.
pub fn breakdown(
    parsed: &ParsedResponse,
    truth: Label,
    p: f64,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    let format = format_reward(parsed);
    let focal = focal_reward(parsed, truth, p, cfg)?;
    let total = total_reward(&[cfg.weight_format * format, cfg.weight_focal * focal])?;
    Ok(RewardBreakdown {
        format,
        focal,
        total,
    })
}

/// Imbalance-aware class scale: the normal class keeps 1.0, the defect
/// class gets the normal/defect count ratio capped at `cap`. Balanced data
/// yields no amplification.
pub fn class_scale(stats: &ImbalanceStats, label: Label, cap: f64) -> Result<f64, RewardError> {
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(RewardError::InvalidConfig(format!(
            "scale cap must be positive, got {cap}"
        )));
    }
    match label {
        Label::Normal => Ok(1.0),
        Label::Defect => {
            if stats.defect_count == 0 || stats.normal_count == 0 {
                return Err(RewardError::EmptyClass);
            }
            Ok((stats.normal_count as f64 / stats.defect_count as f64).min(cap))
        }
    }
}
