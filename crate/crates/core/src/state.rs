//! Per-sample learning history and tutor state assembly.
//!
//! The registry keeps, for every training sample, an exponential moving
//! average of its cross-entropy loss across epochs and a count of forgetting
//! events. Both feed the tutor's state vector alongside the student's current
//! features and prediction.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsrlError};
use crate::student::StudentOutput;

/// Which epoch-to-epoch correctness change counts as a forgetting event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgetDefinition {
    /// correct in the previous epoch, wrong now
    #[default]
    CorrectToError,
    /// wrong in the previous epoch, correct now
    ErrorToCorrect,
    AnyFlip,
}

impl ForgetDefinition {
    fn is_event(self, previous: bool, current: bool) -> bool {
        match self {
            ForgetDefinition::CorrectToError => previous && !current,
            ForgetDefinition::ErrorToCorrect => !previous && current,
            ForgetDefinition::AnyFlip => previous != current,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateConfig {
    /// EMA smoothing factor, strictly inside (0, 1).
    pub beta: f64,
    /// Raw EMA loss that maps to 1.0 in the normalized state.
    pub ema_norm_cap: f64,
    /// Raw EMA loss above which a sample counts as hard.
    pub hard_threshold: f64,
    pub forget_definition: ForgetDefinition,
}

impl Default for StateConfig {
    fn default() -> Self {
        StateConfig {
            beta: 0.9,
            ema_norm_cap: 3.5,
            hard_threshold: 0.7,
            forget_definition: ForgetDefinition::CorrectToError,
        }
    }
}

impl StateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(TsrlError::config(format!(
                "beta {} not in (0, 1)",
                self.beta
            )));
        }
        if !(self.ema_norm_cap > 0.0 && self.ema_norm_cap.is_finite()) {
            return Err(TsrlError::config("ema_norm_cap must be positive"));
        }
        if !(self.hard_threshold > 0.0 && self.hard_threshold.is_finite()) {
            return Err(TsrlError::config("hard_threshold must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: usize,
    /// `None` until the first epoch has been folded in.
    pub ema_loss: Option<f64>,
    pub forget_count: u32,
    pub last_correct: Option<bool>,
    pub epochs_observed: u32,
}

impl SampleRecord {
    pub fn new(id: usize) -> Self {
        SampleRecord {
            id,
            ema_loss: None,
            forget_count: 0,
            last_correct: None,
            epochs_observed: 0,
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.ema_loss.is_some()
    }

    /// Folds one epoch's loss and correctness into the history.
    pub fn update_after_epoch(
        &mut self,
        epoch_loss: f64,
        correct: bool,
        config: &StateConfig,
    ) -> Result<()> {
        if !epoch_loss.is_finite() || epoch_loss < 0.0 {
            return Err(TsrlError::contract(format!(
                "sample {}: epoch loss {epoch_loss} must be finite and non-negative",
                self.id
            )));
        }
        self.ema_loss = Some(match self.ema_loss {
            None => epoch_loss,
            Some(prev) => config.beta * prev + (1.0 - config.beta) * epoch_loss,
        });
        if let Some(prev) = self.last_correct {
            if config.forget_definition.is_event(prev, correct) {
                self.forget_count += 1;
            }
        }
        self.last_correct = Some(correct);
        self.epochs_observed += 1;
        Ok(())
    }

    pub fn ema_loss_norm(&self, config: &StateConfig) -> Option<f64> {
        self.ema_loss
            .map(|l| (l / config.ema_norm_cap).clamp(0.0, 1.0))
    }

    pub fn forget_norm(&self) -> f64 {
        (self.forget_count as f64 / self.epochs_observed.max(1) as f64).clamp(0.0, 1.0)
    }
}

/// The tutor's view of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TutorState {
    pub feature: Vec<f64>,
    /// Student probability of the true class.
    pub confidence: f64,
    /// `[1, 0]` when the student is currently correct, `[0, 1]` otherwise.
    pub correct_onehot: [f64; 2],
    pub ema_loss_norm: f64,
    pub forget_norm: f64,
}

impl TutorState {
    pub fn dim(&self) -> usize {
        self.feature.len() + 5
    }

    pub fn is_correct(&self) -> bool {
        self.correct_onehot[0] == 1.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.feature);
        v.push(self.confidence);
        v.extend_from_slice(&self.correct_onehot);
        v.push(self.ema_loss_norm);
        v.push(self.forget_norm);
        v
    }
}

/// Assembles the tutor state for sample `index` of a batched student output.
pub fn build_state(
    record: &SampleRecord,
    output: &StudentOutput,
    index: usize,
    label: usize,
    config: &StateConfig,
) -> Result<TutorState> {
    let ema_loss_norm = record.ema_loss_norm(config).ok_or_else(|| {
        TsrlError::contract(format!(
            "sample {} has no loss history; run warmup before building states",
            record.id
        ))
    })?;
    let correct = output.is_correct(index, label);
    Ok(TutorState {
        feature: output.hidden[index].clone(),
        confidence: output.confidence(index, label),
        correct_onehot: if correct { [1.0, 0.0] } else { [0.0, 1.0] },
        ema_loss_norm,
        forget_norm: record.forget_norm(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    records: Vec<SampleRecord>,
}

impl Registry {
    pub fn new(n_samples: usize) -> Result<Self> {
        if n_samples == 0 {
            return Err(TsrlError::contract("registry needs at least one sample"));
        }
        Ok(Registry {
            records: (0..n_samples).map(SampleRecord::new).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn record(&self, id: usize) -> &SampleRecord {
        &self.records[id]
    }

    pub fn update(
        &mut self,
        id: usize,
        loss: f64,
        correct: bool,
        config: &StateConfig,
    ) -> Result<()> {
        self.records
            .get_mut(id)
            .ok_or_else(|| TsrlError::contract(format!("no sample with id {id}")))?
            .update_after_epoch(loss, correct, config)
    }

    /// Share of samples whose raw EMA loss exceeds `config.hard_threshold`.
    pub fn hard_fraction(&self, config: &StateConfig) -> f64 {
        let hard = self
            .records
            .iter()
            .filter(|r| r.ema_loss.is_some_and(|l| l > config.hard_threshold))
            .count();
        hard as f64 / self.records.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("sample_id,ema_loss,forget_count,epochs_observed,last_correct\n");
        for r in &self.records {
            let ema = r.ema_loss.map(|v| v.to_string()).unwrap_or_default();
            let last = r.last_correct.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{}",
                r.id, ema, r.forget_count, r.epochs_observed, last
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn dump_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| TsrlError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(beta: f64) -> StateConfig {
        StateConfig {
            beta,
            ..StateConfig::default()
        }
    }

    #[test]
    fn fresh_registry() {
        let reg = Registry::new(3).unwrap();
        assert_eq!(reg.len(), 3);
        for (i, r) in reg.records().iter().enumerate() {
            assert_eq!(r.id, i);
            assert_eq!(r.forget_count, 0);
            assert_eq!(r.epochs_observed, 0);
            assert!(r.ema_loss.is_none());
            assert!(r.last_correct.is_none());
        }
        assert!(Registry::new(0).is_err());
    }

    #[test]
    fn ema_recursion_step() {
        let mut r = SampleRecord::new(0);
        r.ema_loss = Some(1.0);
        r.update_after_epoch(0.0, true, &cfg(0.9)).unwrap();
        assert!((r.ema_loss.unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn first_observation_initializes() {
        let mut r = SampleRecord::new(0);
        r.update_after_epoch(0.42, false, &cfg(0.9)).unwrap();
        assert_eq!(r.ema_loss, Some(0.42));
        assert_eq!(r.epochs_observed, 1);
    }

    #[test]
    fn forgetting_counts_downward_flips() {
        let mut r = SampleRecord::new(0);
        for c in [true, false, true, false] {
            r.update_after_epoch(0.5, c, &cfg(0.9)).unwrap();
        }
        assert_eq!(r.forget_count, 2);
    }

    #[test]
    fn alternative_forget_definitions() {
        let seq = [false, true, false, true, true];
        let count = |def| {
            let c = StateConfig {
                forget_definition: def,
                ..StateConfig::default()
            };
            let mut r = SampleRecord::new(0);
            for s in seq {
                r.update_after_epoch(0.1, s, &c).unwrap();
            }
            r.forget_count
        };
        assert_eq!(count(ForgetDefinition::CorrectToError), 1);
        assert_eq!(count(ForgetDefinition::ErrorToCorrect), 2);
        assert_eq!(count(ForgetDefinition::AnyFlip), 3);
    }

    #[test]
    fn negative_loss_rejected() {
        let mut r = SampleRecord::new(0);
        assert!(r.update_after_epoch(-0.1, true, &cfg(0.9)).is_err());
        assert!(r.update_after_epoch(f64::NAN, true, &cfg(0.9)).is_err());
        assert_eq!(r.epochs_observed, 0);
    }

    fn output_for(hidden: Vec<f64>, probs: [f64; 2]) -> StudentOutput {
        StudentOutput {
            logits: vec![vec![probs[0].ln(), probs[1].ln()]],
            probabilities: vec![probs.to_vec()],
            hidden: vec![hidden],
        }
    }

    #[test]
    fn build_state_normalization() {
        let c = StateConfig::default();
        let out = output_for(vec![0.3, 0.0, 1.2], [0.2, 0.8]);
        let mut r = SampleRecord::new(0);
        r.ema_loss = Some(0.35);
        r.forget_count = 2;
        r.epochs_observed = 8;
        let s = build_state(&r, &out, 0, 1, &c).unwrap();
        assert!((s.ema_loss_norm - 0.1).abs() < 1e-12);
        assert_eq!(s.forget_norm, 0.25);
        assert_eq!(s.confidence, 0.8);
        assert_eq!(s.correct_onehot, [1.0, 0.0]);
        assert_eq!(s.to_vec().len(), 3 + 5);

        r.ema_loss = Some(10.0);
        let s = build_state(&r, &out, 0, 0, &c).unwrap();
        assert_eq!(s.ema_loss_norm, 1.0);
        assert_eq!(s.correct_onehot, [0.0, 1.0]);
        assert_eq!(s.confidence, 0.2);
    }

    #[test]
    fn build_state_requires_history() {
        let out = output_for(vec![0.0], [0.5, 0.5]);
        let r = SampleRecord::new(4);
        assert!(matches!(
            build_state(&r, &out, 0, 0, &StateConfig::default()),
            Err(TsrlError::Contract(_))
        ));
    }

    #[test]
    fn hard_fraction_counts_raw_ema() {
        let c = StateConfig::default();
        assert_eq!(c.hard_threshold, 0.7);
        let mut reg = Registry::new(10).unwrap();
        for i in 0..10 {
            let loss = if i < 2 { 0.8 } else { 0.1 };
            reg.update(i, loss, true, &c).unwrap();
        }
        assert!((reg.hard_fraction(&c) - 0.2).abs() < 1e-15);

        let mut zero = Registry::new(4).unwrap();
        for i in 0..4 {
            zero.update(i, 0.0, true, &c).unwrap();
        }
        assert_eq!(zero.hard_fraction(&c), 0.0);
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let c = StateConfig::default();
        let mut reg = Registry::new(2).unwrap();
        reg.update(1, 0.25, false, &c).unwrap();
        let csv = reg.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "sample_id,ema_loss,forget_count,epochs_observed,last_correct"
        );
        assert_eq!(lines[1], "0,,0,0,");
        assert_eq!(lines[2], "1,0.25,0,1,false");
    }

    fn closed_form(losses: &[f64], beta: f64) -> f64 {
        let k = losses.len();
        let mut acc = beta.powi(k as i32 - 1) * losses[0];
        for (j, l) in losses.iter().enumerate().skip(1) {
            acc += (1.0 - beta) * beta.powi((k - 1 - j) as i32) * l;
        }
        acc
    }

    proptest! {
        #[test]
        fn ema_matches_closed_form(
            beta in 0.01f64..0.99,
            losses in prop::collection::vec(0.0f64..5.0, 1..50),
        ) {
            let c = cfg(beta);
            let mut r = SampleRecord::new(0);
            for &l in &losses {
                r.update_after_epoch(l, true, &c).unwrap();
            }
            prop_assert!((r.ema_loss.unwrap() - closed_form(&losses, beta)).abs() < 1e-9);
            let max = losses.iter().copied().fold(0.0, f64::max);
            prop_assert!(r.ema_loss.unwrap() <= max + 1e-12);
        }

        #[test]
        fn forget_count_monotone_and_bounded(flags in prop::collection::vec(any::<bool>(), 1..60)) {
            let c = StateConfig::default();
            let mut r = SampleRecord::new(0);
            let mut prev = 0;
            for f in flags {
                r.update_after_epoch(0.3, f, &c).unwrap();
                prop_assert!(r.forget_count >= prev);
                prop_assert!(r.forget_count <= r.epochs_observed);
                prev = r.forget_count;
            }
            prop_assert!((0.0..=1.0).contains(&r.forget_norm()));
        }

        #[test]
        fn hard_fraction_in_unit_interval(losses in prop::collection::vec(0.0f64..3.0, 1..40)) {
            let c = StateConfig::default();
            let mut reg = Registry::new(losses.len()).unwrap();
            for (i, &l) in losses.iter().enumerate() {
                reg.update(i, l, true, &c).unwrap();
            }
            let h = reg.hard_fraction(&c);
            prop_assert!((0.0..=1.0).contains(&h));
            let above = StateConfig { hard_threshold: 3.5, ..c };
            prop_assert_eq!(reg.hard_fraction(&above), 0.0);
        }
    }
}
