use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsrlError};
use crate::optim::OptimizerKind;
use crate::reward::RewardConfig;
use crate::state::StateConfig;
use crate::task::TaskSpec;
use crate::tutor::{BcConfig, ExpertConfig, PpoConfig, TutorNetConfig};

/// Which weighting regime drives the student after warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// uniform weights throughout
    Baseline,
    /// behavioral-cloned tutor, frozen
    Cl,
    /// behavioral-cloned tutor refined online by PPO
    Tsrl,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::Cl, Mode::Tsrl];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Cl => "cl",
            Mode::Tsrl => "tsrl",
        }
    }

    pub fn uses_tutor(self) -> bool {
        self != Mode::Baseline
    }
}

impl std::str::FromStr for Mode {
    type Err = TsrlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "cl" => Ok(Mode::Cl),
            "tsrl" => Ok(Mode::Tsrl),
            other => Err(TsrlError::config(format!(
                "unknown mode {other:?} (expected baseline, cl or tsrl)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub lr: f64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            hidden: vec![32, 32],
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub n_warmup_epochs: usize,
    pub n_total_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub student: StudentConfig,
    pub state: StateConfig,
    pub tutor: TutorNetConfig,
    pub ppo: PpoConfig,
    pub reward: RewardConfig,
    pub expert: ExpertConfig,
    pub bc: BcConfig,
    pub task: TaskSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Tsrl,
            n_warmup_epochs: 5,
            n_total_epochs: 40,
            batch_size: 64,
            seed: 0,
            student: StudentConfig::default(),
            state: StateConfig::default(),
            tutor: TutorNetConfig::default(),
            ppo: PpoConfig::default(),
            reward: RewardConfig::default(),
            expert: ExpertConfig::default(),
            bc: BcConfig::default(),
            task: TaskSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_warmup_epochs == 0 {
            return Err(TsrlError::config("n_warmup_epochs must be at least 1"));
        }
        if self.n_warmup_epochs >= self.n_total_epochs {
            return Err(TsrlError::config(format!(
                "n_warmup_epochs ({}) must be below n_total_epochs ({})",
                self.n_warmup_epochs, self.n_total_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(TsrlError::config("batch_size must be positive"));
        }
        if self.student.hidden.is_empty() || self.student.hidden.contains(&0) {
            return Err(TsrlError::config(
                "student needs at least one non-empty hidden layer",
            ));
        }
        if self.student.lr.is_nan() || self.student.lr <= 0.0 {
            return Err(TsrlError::config("student lr must be positive"));
        }
        if self.tutor.hidden.contains(&0) {
            return Err(TsrlError::config("tutor hidden widths must be positive"));
        }
        if self.bc.minibatch_size == 0 || !(0.0..1.0).contains(&self.bc.holdout_fraction) {
            return Err(TsrlError::config(
                "bc minibatch_size > 0 and holdout_fraction in [0, 1) required",
            ));
        }
        self.state.validate()?;
        self.ppo.validate()?;
        self.reward.validate()?;
        self.expert.validate()?;
        self.task.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| TsrlError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TsrlError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Width of the student's penultimate activation, the tutor's feature size.
    pub fn feature_dim(&self) -> usize {
        *self.student.hidden.last().expect("validated non-empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"mode": "cl", "ppo": {"clip_eps": 0.1}}"#).unwrap();
        assert_eq!(cfg.mode, Mode::Cl);
        assert_eq!(cfg.ppo.clip_eps, 0.1);
        assert_eq!(cfg.ppo.ppo_epochs, 4);
        assert_eq!(cfg.n_total_epochs, 40);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"mdoe": "cl"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"ppo": {"clip": 0.1}}"#).is_err());
    }

    #[test]
    fn warmup_must_precede_end() {
        let cfg = RunConfig {
            n_warmup_epochs: 40,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            n_warmup_epochs: 0,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json_pretty()).unwrap(), cfg);
    }
}
