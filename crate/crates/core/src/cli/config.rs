//! Run configuration: a TOML file with nested sections mirroring the
//! module configs.
//!
//! Unknown keys anywhere are errors, which catches typos in sweep
//! overrides. The file carries one master seed; the corpus,
//! initialization, and rollout streams derive their seeds from it (see
//! [`crate::seeds`]), so nested sections have no seed keys of their own.

use std::fmt;
use std::path::PathBuf;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{default_object_names, CorpusConfig, ImbalanceStats};
use crate::grpo::{GroupMode, GrpoConfig};
use crate::policy::PolicyParams;
use crate::protocol::Label;
use crate::rewards::{class_scale, RewardConfig};
use crate::seeds::{derive_seed, Stream};

use super::{CliError, CliErrorKind};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    /// Default output directory; the `--out` flag overrides it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub corpus: CorpusSection,
    pub rewards: RewardsSection,
    pub grpo: GrpoSection,
    pub policy: PolicySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub size: usize,
    pub defect_ratio: f64,
    pub separation: f64,
    pub hard_fraction: f64,
    pub feature_dim: usize,
    pub object_names: Vec<String>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let cfg = CorpusConfig::default();
        CorpusSection {
            size: cfg.size,
            defect_ratio: cfg.defect_ratio,
            separation: cfg.separation,
            hard_fraction: cfg.hard_fraction,
            feature_dim: cfg.feature_dim,
            object_names: default_object_names(),
        }
    }
}

/// Defect-class scale: a fixed number, or `"auto"` to derive it from the
/// corpus imbalance (normal/defect ratio, capped at `scale_cap`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleDefect {
    Auto,
    Fixed(f64),
}

impl Serialize for ScaleDefect {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ScaleDefect::Auto => serializer.serialize_str("auto"),
            ScaleDefect::Fixed(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for ScaleDefect {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ScaleVisitor;

        impl<'de> Visitor<'de> for ScaleVisitor {
            type Value = ScaleDefect;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or the string \"auto\"")
            }

            fn visit_str<E: de::Error>(self, value: &str) -> Result<ScaleDefect, E> {
                if value == "auto" {
                    Ok(ScaleDefect::Auto)
                } else {
                    Err(E::custom(format!(
                        "scale_defect must be a number or \"auto\", got {value:?}"
                    )))
                }
            }

            fn visit_f64<E: de::Error>(self, value: f64) -> Result<ScaleDefect, E> {
                Ok(ScaleDefect::Fixed(value))
            }

            fn visit_i64<E: de::Error>(self, value: i64) -> Result<ScaleDefect, E> {
                Ok(ScaleDefect::Fixed(value as f64))
            }

            fn visit_u64<E: de::Error>(self, value: u64) -> Result<ScaleDefect, E> {
                Ok(ScaleDefect::Fixed(value as f64))
            }
        }

        deserializer.deserialize_any(ScaleVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardsSection {
    pub alpha: f64,
    pub gamma: f64,
    pub scale_normal: f64,
    pub scale_defect: ScaleDefect,
    pub signed_penalty: bool,
    pub scale_cap: f64,
    pub weight_format: f64,
    pub weight_focal: f64,
}

impl Default for RewardsSection {
    fn default() -> Self {
        RewardsSection {
            alpha: 0.25,
            gamma: 2.0,
            scale_normal: 1.0,
            scale_defect: ScaleDefect::Auto,
            signed_penalty: true,
            scale_cap: 16.0,
            weight_format: 1.0,
            weight_focal: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoSection {
    pub group_size: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub checkpoint_every: usize,
    pub group_mode: GroupMode,
}

impl Default for GrpoSection {
    fn default() -> Self {
        let cfg = GrpoConfig::default();
        GrpoSection {
            group_size: cfg.group_size,
            epsilon: cfg.epsilon,
            beta: cfg.beta,
            learning_rate: cfg.learning_rate,
            epochs: cfg.epochs,
            checkpoint_every: cfg.checkpoint_every,
            group_mode: cfg.group_mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Zero,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    /// Defaults to the corpus feature dimension; if set, must match it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    pub init: InitMode,
    pub init_std: f64,
    pub temperature: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            feature_dim: None,
            init: InitMode::Zero,
            init_std: 0.01,
            temperature: 1.0,
        }
    }
}

/// A fully validated configuration with per-stream seeds derived from the
/// master. The defect scale stays symbolic until corpus statistics exist.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub master_seed: u64,
    pub corpus: CorpusConfig,
    pub grpo: GrpoConfig,
    pub rewards: RewardsSection,
    pub policy: PolicySection,
}

impl RunConfig {
    /// Parse a TOML config file.
    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text)
            .map_err(|err| CliError::new(CliErrorKind::Usage, format!("config error: {err}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Validate every section and derive per-stream seeds. No side
    /// effects; commands call this before touching the filesystem.
    pub fn resolve(&self) -> Result<ResolvedConfig, CliError> {
        let corpus = CorpusConfig {
            size: self.corpus.size,
            defect_ratio: self.corpus.defect_ratio,
            separation: self.corpus.separation,
            hard_fraction: self.corpus.hard_fraction,
            feature_dim: self.corpus.feature_dim,
            object_names: self.corpus.object_names.clone(),
            seed: derive_seed(self.seed, Stream::Corpus),
        };
        corpus
            .validate()
            .map_err(|err| CliError::new(CliErrorKind::Usage, format!("corpus config: {err}")))?;

        let grpo = GrpoConfig {
            group_size: self.grpo.group_size,
            epsilon: self.grpo.epsilon,
            beta: self.grpo.beta,
            learning_rate: self.grpo.learning_rate,
            epochs: self.grpo.epochs,
            checkpoint_every: self.grpo.checkpoint_every,
            seed: derive_seed(self.seed, Stream::Rollouts),
            group_mode: self.grpo.group_mode,
        };
        grpo.validate()
            .map_err(|err| CliError::new(CliErrorKind::Usage, format!("grpo config: {err}")))?;

        // Static reward checks; the auto scale is resolved against corpus
        // statistics later.
        let probe = RewardConfig {
            alpha: self.rewards.alpha,
            gamma: self.rewards.gamma,
            scale_normal: self.rewards.scale_normal,
            scale_defect: match self.rewards.scale_defect {
                ScaleDefect::Fixed(v) => v,
                ScaleDefect::Auto => 1.0,
            },
            signed_penalty: self.rewards.signed_penalty,
            weight_format: self.rewards.weight_format,
            weight_focal: self.rewards.weight_focal,
        };
        probe
            .validate()
            .map_err(|err| CliError::new(CliErrorKind::Usage, format!("rewards config: {err}")))?;
        if !(self.rewards.scale_cap > 0.0 && self.rewards.scale_cap.is_finite()) {
            return Err(CliError::new(
                CliErrorKind::Usage,
                format!("rewards config: scale_cap must be positive, got {}", self.rewards.scale_cap),
            ));
        }

        if let Some(dim) = self.policy.feature_dim {
            if dim != self.corpus.feature_dim {
                return Err(CliError::new(
                    CliErrorKind::Usage,
                    format!(
                        "policy feature_dim {dim} does not match corpus feature_dim {}",
                        self.corpus.feature_dim
                    ),
                ));
            }
        }
        if !(self.policy.temperature > 0.0 && self.policy.temperature.is_finite()) {
            return Err(CliError::new(
                CliErrorKind::Usage,
                format!(
                    "policy temperature must be positive, got {}",
                    self.policy.temperature
                ),
            ));
        }
        if !(self.policy.init_std >= 0.0 && self.policy.init_std.is_finite()) {
            return Err(CliError::new(
                CliErrorKind::Usage,
                format!("policy init_std must be non-negative, got {}", self.policy.init_std),
            ));
        }

        Ok(ResolvedConfig {
            master_seed: self.seed,
            corpus,
            grpo,
            rewards: self.rewards.clone(),
            policy: self.policy.clone(),
        })
    }
}

impl ResolvedConfig {
    /// Resolve the reward config against corpus statistics (for the auto
    /// defect scale).
    pub fn reward_config(&self, stats: &ImbalanceStats) -> Result<RewardConfig, CliError> {
        let scale_defect = match self.rewards.scale_defect {
            ScaleDefect::Fixed(v) => v,
            ScaleDefect::Auto => class_scale(stats, Label::Defect, self.rewards.scale_cap)
                .map_err(|err| {
                    CliError::new(
                        CliErrorKind::Usage,
                        format!("cannot derive defect scale: {err}"),
                    )
                })?,
        };
        let cfg = RewardConfig {
            alpha: self.rewards.alpha,
            gamma: self.rewards.gamma,
            scale_normal: self.rewards.scale_normal,
            scale_defect,
            signed_penalty: self.rewards.signed_penalty,
            weight_format: self.rewards.weight_format,
            weight_focal: self.rewards.weight_focal,
        };
        cfg.validate()
            .map_err(|err| CliError::new(CliErrorKind::Usage, format!("rewards config: {err}")))?;
        Ok(cfg)
    }

    /// The initial policy per the init mode, seeded from the master.
    pub fn initial_policy(&self) -> PolicyParams {
        let dim = self.corpus.feature_dim;
        match self.policy.init {
            InitMode::Zero => PolicyParams::zeros(dim, self.policy.temperature),
            InitMode::Gaussian => {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
                    self.master_seed,
                    Stream::PolicyInit,
                ));
                PolicyParams::gaussian(dim, self.policy.temperature, self.policy.init_std, &mut rng)
            }
        }
    }
}
