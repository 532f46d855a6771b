//! State-change reward for one weighted student update.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsrlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Scale on the confidence delta when correctness does not change.
    pub c_rew: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { c_rew: 0.5 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_rew > 0.0 && self.c_rew <= 1.0) {
            return Err(TsrlError::config(format!(
                "c_rew {} not in (0, 1]",
                self.c_rew
            )));
        }
        Ok(())
    }
}

/// Correctness and true-class confidence of one sample before and after an update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleTransition {
    pub correct_init: bool,
    pub conf_init: f64,
    pub correct_upd: bool,
    pub conf_upd: f64,
}

pub fn compute_reward(t: &SampleTransition, cfg: &RewardConfig) -> Result<f64> {
    for c in [t.conf_init, t.conf_upd] {
        if !(0.0..=1.0).contains(&c) {
            return Err(TsrlError::contract(format!(
                "confidence {c} outside [0, 1]"
            )));
        }
    }
    let delta = t.conf_upd - t.conf_init;
    Ok(match (t.correct_init, t.correct_upd) {
        (false, true) => 1.0,
        (true, false) => -1.0,
        (true, true) => cfg.c_rew * delta,
        (false, false) => -cfg.c_rew * delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(ci: bool, pi: f64, cu: bool, pu: f64) -> SampleTransition {
        SampleTransition {
            correct_init: ci,
            conf_init: pi,
            correct_upd: cu,
            conf_upd: pu,
        }
    }

    const HALF: RewardConfig = RewardConfig { c_rew: 0.5 };

    #[test]
    fn flips_are_unit_rewards() {
        assert_eq!(
            compute_reward(&t(false, 0.3, true, 0.7), &HALF).unwrap(),
            1.0
        );
        assert_eq!(
            compute_reward(&t(true, 0.9, false, 0.1), &HALF).unwrap(),
            -1.0
        );
    }

    #[test]
    fn stay_cases_scale_delta() {
        let r = compute_reward(&t(true, 0.6, true, 0.8), &HALF).unwrap();
        assert!((r - 0.1).abs() < 1e-12);
        let r = compute_reward(&t(false, 0.2, false, 0.4), &HALF).unwrap();
        assert!((r + 0.1).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_confidence_rejected() {
        assert!(compute_reward(&t(true, 1.2, true, 0.5), &HALF).is_err());
        assert!(compute_reward(&t(true, 0.5, true, f64::NAN), &HALF).is_err());
    }

    #[test]
    fn c_rew_bounds() {
        assert!(RewardConfig { c_rew: 0.0 }.validate().is_err());
        assert!(RewardConfig { c_rew: 1.0 }.validate().is_ok());
        assert!(RewardConfig { c_rew: 1.01 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_antisymmetric(a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 1e-6f64..1.0) {
            let cfg = RewardConfig { c_rew: c };
            let stay_right = compute_reward(&t(true, a, true, b), &cfg).unwrap();
            let stay_wrong = compute_reward(&t(false, a, false, b), &cfg).unwrap();
            prop_assert!(stay_right.abs() <= 1.0 && stay_wrong.abs() <= 1.0);
            prop_assert_eq!(stay_right, -stay_wrong);
            prop_assert!(1.0 > stay_right);
            prop_assert_eq!(compute_reward(&t(true, a, true, a), &cfg).unwrap(), 0.0);
            prop_assert_eq!(compute_reward(&t(false, a, false, a), &cfg).unwrap(), 0.0);
        }
    }
}
