//! The training pipeline: student warmup with uniform weights, behavioral
//! cloning of the tutor on states harvested at the end of warmup, then the
//! tutor-driven loop (state, action, weighted update, reward) with a PPO
//! update at the end of every epoch.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{Mode, RunConfig};
use crate::error::{Result, TsrlError};
use crate::metrics::{binary_metrics, BinaryMetrics};
use crate::nn::{Activation, DenseNet};
use crate::optim::Optimizer;
use crate::reward::{compute_reward, SampleTransition};
use crate::state::{build_state, Registry, TutorState};
use crate::student::{self, EvalSnapshot};
use crate::task::{generate_task, Difficulty, LabeledDataset, TaskSplits};
use crate::tutor::{
    bc_pretrain, expert_weight, ppo_update, ActionSample, BcReport, Experience, PpoOptimizers,
    PpoReport, RolloutBuffer, TutorPolicy,
};

/// Independent random streams derived from the run seed. Keeping them apart
/// means the student's trajectory does not depend on how many draws the
/// tutor makes.
#[derive(Debug, Clone, Copy)]
enum Stream {
    StudentInit = 1,
    Shuffle = 2,
    TutorInit = 3,
    Bc = 4,
    Action = 5,
    Ppo = 6,
}

fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Where per-sample weights come from during an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSource {
    /// every weight 1.0, no tutor involved
    Uniform,
    /// tutor's mean action, no learning
    FrozenTutor,
    /// sampled tutor actions, PPO update at epoch end
    LearningTutor,
    /// fixed weight routed through the tutor loop, for ablations and tests
    Constant(f64),
}

impl WeightSource {
    fn uses_tutor_loop(self) -> bool {
        self != WeightSource::Uniform
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub phase: &'static str,
    /// Mean unweighted cross-entropy of the training samples, measured just
    /// before each sample's update.
    pub train_loss: f64,
    pub in_auc: f64,
    pub in_acc: f64,
    pub in_eer: f64,
    pub shift_auc: f64,
    pub shift_acc: f64,
    pub shift_eer: f64,
    pub hard_fraction: f64,
    pub mean_weight: f64,
    pub mean_reward: f64,
    pub clip_fraction: f64,
    pub weight_easy: f64,
    pub weight_hard: f64,
    pub weight_noise: f64,
}

pub const METRICS_HEADER: &str = "epoch,phase,train_loss,in_auc,in_acc,in_eer,shift_auc,shift_acc,shift_eer,hard_fraction,mean_weight,mean_reward,clip_fraction,weight_easy,weight_hard,weight_noise";

impl EpochRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.phase,
            self.train_loss,
            self.in_auc,
            self.in_acc,
            self.in_eer,
            self.shift_auc,
            self.shift_acc,
            self.shift_eer,
            self.hard_fraction,
            self.mean_weight,
            self.mean_reward,
            self.clip_fraction,
            self.weight_easy,
            self.weight_hard,
            self.weight_noise
        )
    }
}

pub fn metrics_csv(rows: &[EpochRow]) -> String {
    let mut out = String::with_capacity(200 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{}", r.csv_line()).expect("writing to a String");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TagWeights {
    pub easy: f64,
    pub hard: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseBoundaries {
    /// First and last warmup epoch (1-based, inclusive).
    pub warmup: [usize; 2],
    /// Behavioral cloning runs after this epoch; absent for the baseline.
    pub bc_after_epoch: Option<usize>,
    /// First and last epoch driven by the tutor; absent for the baseline.
    pub tutor: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub in_distribution: BinaryMetrics,
    pub shifted: BinaryMetrics,
    pub hard_fraction: f64,
    pub tag_weights: TagWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub phases: PhaseBoundaries,
    pub ppo_updates: usize,
    pub bc: Option<BcReport>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub config: RunConfig,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub rows: Vec<EpochRow>,
    /// Weighted batch loss before every student optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub summary: RunSummary,
    pub student: DenseNet,
    pub tutor: Option<TutorPolicy>,
    pub registry: Registry,
    pub splits: TaskSplits,
    /// Epochs after which a PPO update ran.
    pub ppo_epochs: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Replace the tutor's actions with this weight in every post-warmup epoch.
    pub constant_tutor_weight: Option<f64>,
    /// Write `registry_epoch_XXX.csv` here after every epoch.
    pub registry_dump_dir: Option<PathBuf>,
}

/// Everything that evolves during one training run.
pub struct Run {
    pub config: RunConfig,
    pub splits: TaskSplits,
    pub student: DenseNet,
    pub student_opt: Optimizer,
    pub registry: Registry,
    pub tutor: Option<TutorPolicy>,
    pub ppo_opts: PpoOptimizers,
    pub step_losses: Vec<f64>,
    pub epoch: usize,
    pub ppo_epochs: Vec<usize>,
    shuffle_rng: ChaCha8Rng,
    bc_rng: ChaCha8Rng,
    action_rng: ChaCha8Rng,
    ppo_rng: ChaCha8Rng,
    tutor_init_rng: ChaCha8Rng,
}

/// What one epoch produced besides the metric row.
#[derive(Debug, Clone)]
pub struct EpochOutcome {
    pub row: EpochRow,
    /// Experiences collected this epoch (empty for uniform-weight epochs).
    pub buffer: RolloutBuffer,
    /// Weight assigned to each training sample, indexed by sample id.
    pub weights: Vec<f64>,
    /// Present when the epoch ended with a PPO update.
    pub ppo: Option<PpoReport>,
}

impl Run {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let splits = generate_task(&config.task)?;
        let seed = config.seed;
        let mut sizes = vec![config.task.input_dim];
        sizes.extend(&config.student.hidden);
        sizes.push(2);
        let student = DenseNet::glorot(
            &sizes,
            Activation::Relu,
            Activation::Identity,
            &mut stream_rng(seed, Stream::StudentInit),
        )?;
        let student_opt = Optimizer::new(config.student.optimizer, config.student.lr);
        let registry = Registry::new(splits.train.len())?;
        Ok(Run {
            ppo_opts: PpoOptimizers::new(&config.ppo),
            splits,
            student,
            student_opt,
            registry,
            tutor: None,
            step_losses: Vec::new(),
            epoch: 0,
            ppo_epochs: Vec::new(),
            shuffle_rng: stream_rng(seed, Stream::Shuffle),
            bc_rng: stream_rng(seed, Stream::Bc),
            action_rng: stream_rng(seed, Stream::Action),
            ppo_rng: stream_rng(seed, Stream::Ppo),
            tutor_init_rng: stream_rng(seed, Stream::TutorInit),
            config,
        })
    }

    fn epoch_order(&mut self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.splits.train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        order
    }

    /// States for every training sample under the current student and registry.
    pub fn harvest_states(&self) -> Result<Vec<TutorState>> {
        let train = &self.splits.train;
        let out = student::forward(&self.student, &train.inputs)?;
        (0..train.len())
            .map(|i| {
                build_state(
                    self.registry.record(i),
                    &out,
                    i,
                    train.labels[i],
                    &self.config.state,
                )
            })
            .collect()
    }

    /// Uniform-weight supervised epoch (warmup, and every baseline epoch).
    pub fn uniform_epoch(&mut self, phase: &'static str) -> Result<EpochOutcome> {
        self.epoch += 1;
        let order = self.epoch_order();
        let n = self.splits.train.len();
        let mut last_loss = vec![0.0; n];
        let mut last_correct = vec![false; n];
        for chunk in order.chunks(self.config.batch_size) {
            let train = &self.splits.train;
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| train.inputs[i].as_slice()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let weights = vec![1.0; chunk.len()];
            let report =
                student::train_step(&mut self.student, &mut self.student_opt, &xs, &ys, &weights)?;
            self.step_losses.push(report.loss);
            for (k, &i) in chunk.iter().enumerate() {
                last_loss[i] = report.sample_losses[k];
                last_correct[i] = report.correct[k];
            }
        }
        self.fold_epoch_stats(&last_loss, &last_correct)?;
        let weights = vec![1.0; n];
        let row = self.epoch_row(phase, &last_loss, &weights, 0.0, 0.0)?;
        Ok(EpochOutcome {
            row,
            buffer: RolloutBuffer::new(),
            weights,
            ppo: None,
        })
    }

    fn fold_epoch_stats(&mut self, losses: &[f64], correct: &[bool]) -> Result<()> {
        for (i, (&l, &c)) in losses.iter().zip(correct).enumerate() {
            self.registry.update(i, l, c, &self.config.state)?;
        }
        Ok(())
    }

    /// Runs the warmup epochs and returns the state archive for behavioral cloning.
    pub fn run_warmup(
        &mut self,
        rows: &mut Vec<EpochRow>,
        opts: &TrainOptions,
    ) -> Result<Vec<TutorState>> {
        for _ in 0..self.config.n_warmup_epochs {
            let out = self.uniform_epoch("warmup")?;
            self.dump_registry(opts)?;
            rows.push(out.row);
        }
        self.harvest_states()
    }

    /// Builds the tutor and clones the heuristic expert on `states`.
    pub fn bc_phase(&mut self, states: &[TutorState]) -> Result<BcReport> {
        let mut policy = TutorPolicy::new(
            self.config.feature_dim() + 5,
            &self.config.tutor,
            &mut self.tutor_init_rng,
        )?;
        let expert = self.config.expert.clone();
        let report = bc_pretrain(
            &mut policy,
            states,
            |s| expert_weight(s, &expert),
            &self.config.bc,
            &mut self.bc_rng,
        )?;
        self.tutor = Some(policy);
        Ok(report)
    }

    /// One epoch of the tutor loop: per batch, build states, choose weights,
    /// snapshot, take one weighted student step, re-evaluate and score every
    /// sample's transition. Registry statistics are folded in at the end, then
    /// (for a learning tutor) PPO runs on the epoch's buffer.
    pub fn tutor_epoch(&mut self, source: WeightSource) -> Result<EpochOutcome> {
        if !source.uses_tutor_loop() {
            return self.uniform_epoch("main");
        }
        let needs_policy = matches!(
            source,
            WeightSource::FrozenTutor | WeightSource::LearningTutor
        );
        if needs_policy && self.tutor.is_none() {
            return Err(TsrlError::contract(
                "tutor epoch requested before behavioral cloning",
            ));
        }
        if let WeightSource::Constant(w) = source {
            if !(0.0..=1.0).contains(&w) {
                return Err(TsrlError::contract(format!(
                    "constant weight {w} outside [0, 1]"
                )));
            }
        }
        self.epoch += 1;
        let order = self.epoch_order();
        let n = self.splits.train.len();
        let mut last_loss = vec![0.0; n];
        let mut last_correct = vec![false; n];
        let mut weights_by_id = vec![0.0; n];
        let mut buffer = RolloutBuffer::new();

        for chunk in order.chunks(self.config.batch_size) {
            let train = &self.splits.train;
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| train.inputs[i].as_slice()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();

            let before = student::forward(&self.student, &xs)?;
            let pre = EvalSnapshot::from_output(&before, &ys);
            let mut states = Vec::with_capacity(chunk.len());
            let mut actions = Vec::with_capacity(chunk.len());
            for (k, &i) in chunk.iter().enumerate() {
                let s = build_state(
                    self.registry.record(i),
                    &before,
                    k,
                    ys[k],
                    &self.config.state,
                )?;
                let a = match source {
                    WeightSource::Constant(w) => ActionSample {
                        weight: w,
                        logit: 0.0,
                        log_prob: 0.0,
                        value: 0.0,
                    },
                    WeightSource::FrozenTutor => {
                        self.tutor.as_ref().expect("checked").greedy_action(&s)?
                    }
                    WeightSource::LearningTutor => self
                        .tutor
                        .as_ref()
                        .expect("checked")
                        .sample_action(&s, &mut self.action_rng)?,
                    WeightSource::Uniform => unreachable!("handled above"),
                };
                states.push(s);
                actions.push(a);
            }
            let weights: Vec<f64> = actions.iter().map(|a| a.weight).collect();

            let steps_before = self.student_opt.steps();
            let report =
                student::train_step(&mut self.student, &mut self.student_opt, &xs, &ys, &weights)?;
            if self.student_opt.steps() != steps_before + 1 {
                return Err(TsrlError::contract(
                    "reward snapshots must bracket exactly one step",
                ));
            }
            self.step_losses.push(report.loss);
            let post = student::evaluate(&self.student, &xs, &ys)?;

            for (k, (state, action)) in states.into_iter().zip(actions).enumerate() {
                let i = chunk[k];
                let reward = compute_reward(
                    &SampleTransition {
                        correct_init: pre.correct[k],
                        conf_init: pre.confidence[k],
                        correct_upd: post.correct[k],
                        conf_upd: post.confidence[k],
                    },
                    &self.config.reward,
                )?;
                last_loss[i] = pre.loss[k];
                last_correct[i] = pre.correct[k];
                weights_by_id[i] = action.weight;
                buffer.push(Experience {
                    state,
                    action,
                    reward,
                    done: true,
                });
            }
        }

        self.fold_epoch_stats(&last_loss, &last_correct)?;

        let mut ppo = None;
        if source == WeightSource::LearningTutor {
            let policy = self.tutor.as_mut().expect("checked");
            ppo = Some(ppo_update(
                policy,
                &mut self.ppo_opts,
                &buffer,
                &self.config.ppo,
                &mut self.ppo_rng,
            )?);
            self.ppo_epochs.push(self.epoch);
        }
        let clip_fraction = ppo.as_ref().map_or(0.0, |r| r.clip_fraction);
        let mean_reward =
            buffer.experiences().iter().map(|e| e.reward).sum::<f64>() / buffer.len() as f64;
        let row = self.epoch_row(
            "main",
            &last_loss,
            &weights_by_id,
            mean_reward,
            clip_fraction,
        )?;
        Ok(EpochOutcome {
            row,
            buffer,
            weights: weights_by_id,
            ppo,
        })
    }

    fn split_metrics(&self, ds: &LabeledDataset) -> Result<BinaryMetrics> {
        let scores = student::positive_scores(&self.student, &ds.inputs)?;
        binary_metrics(&scores, &ds.labels)
    }

    pub fn tag_weights(&self, weights: &[f64]) -> TagWeights {
        let mut sums: HashMap<Difficulty, (f64, usize)> = HashMap::new();
        if let Some(tags) = &self.splits.train.tags {
            for (t, w) in tags.iter().zip(weights) {
                let e = sums.entry(*t).or_default();
                e.0 += w;
                e.1 += 1;
            }
        }
        let mean = |d| sums.get(&d).map_or(0.0, |(s, c)| s / *c as f64);
        TagWeights {
            easy: mean(Difficulty::Easy),
            hard: mean(Difficulty::Hard),
            noise: mean(Difficulty::Noise),
        }
    }

    fn epoch_row(
        &self,
        phase: &'static str,
        losses: &[f64],
        weights: &[f64],
        mean_reward: f64,
        clip_fraction: f64,
    ) -> Result<EpochRow> {
        let in_m = self.split_metrics(&self.splits.test_in)?;
        let sh_m = self.split_metrics(&self.splits.test_shift)?;
        let tw = self.tag_weights(weights);
        Ok(EpochRow {
            epoch: self.epoch,
            phase,
            train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            in_auc: in_m.auc,
            in_acc: in_m.acc,
            in_eer: in_m.eer,
            shift_auc: sh_m.auc,
            shift_acc: sh_m.acc,
            shift_eer: sh_m.eer,
            hard_fraction: self.registry.hard_fraction(&self.config.state),
            mean_weight: weights.iter().sum::<f64>() / weights.len() as f64,
            mean_reward,
            clip_fraction,
            weight_easy: tw.easy,
            weight_hard: tw.hard,
            weight_noise: tw.noise,
        })
    }

    fn dump_registry(&self, opts: &TrainOptions) -> Result<()> {
        if let Some(dir) = &opts.registry_dump_dir {
            std::fs::create_dir_all(dir).map_err(|e| TsrlError::io(dir, e))?;
            self.registry
                .dump_csv(&dir.join(format!("registry_epoch_{:03}.csv", self.epoch)))?;
        }
        Ok(())
    }
}

pub fn train(config: &RunConfig) -> Result<RunArtifacts> {
    train_with(config, &TrainOptions::default())
}

pub fn train_with(config: &RunConfig, opts: &TrainOptions) -> Result<RunArtifacts> {
    let mut run = Run::new(config.clone())?;
    let mode = config.mode;
    let n_w = config.n_warmup_epochs;
    let mut rows = Vec::with_capacity(config.n_total_epochs);

    let states = run.run_warmup(&mut rows, opts)?;
    let bc = if mode.uses_tutor() {
        Some(run.bc_phase(&states)?)
    } else {
        None
    };

    let source = match (mode, opts.constant_tutor_weight) {
        (Mode::Baseline, _) => WeightSource::Uniform,
        (_, Some(w)) => WeightSource::Constant(w),
        (Mode::Cl, None) => WeightSource::FrozenTutor,
        (Mode::Tsrl, None) => WeightSource::LearningTutor,
    };
    let mut last_weights = vec![1.0; run.splits.train.len()];
    for _ in n_w..config.n_total_epochs {
        let out = if source == WeightSource::Uniform {
            run.uniform_epoch("main")?
        } else {
            run.tutor_epoch(source)?
        };
        run.dump_registry(opts)?;
        rows.push(out.row);
        last_weights = out.weights;
    }

    let last = rows.last().expect("at least one epoch");
    let final_metrics = FinalMetrics {
        in_distribution: BinaryMetrics {
            auc: last.in_auc,
            acc: last.in_acc,
            eer: last.in_eer,
        },
        shifted: BinaryMetrics {
            auc: last.shift_auc,
            acc: last.shift_acc,
            eer: last.shift_eer,
        },
        hard_fraction: last.hard_fraction,
        tag_weights: run.tag_weights(&last_weights),
    };
    let summary = RunSummary {
        mode,
        seed: config.seed,
        epochs: config.n_total_epochs,
        phases: PhaseBoundaries {
            warmup: [1, n_w],
            bc_after_epoch: mode.uses_tutor().then_some(n_w),
            tutor: mode
                .uses_tutor()
                .then_some([n_w + 1, config.n_total_epochs]),
        },
        ppo_updates: run.ppo_epochs.len(),
        bc,
        final_metrics,
        config: config.clone(),
    };
    Ok(RunArtifacts {
        rows,
        step_losses: run.step_losses,
        summary,
        student: run.student,
        tutor: run.tutor,
        registry: run.registry,
        splits: run.splits,
        ppo_epochs: run.ppo_epochs,
    })
}

impl RunArtifacts {
    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.rows)
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Writes `metrics.csv`, `summary.json`, `student.net` and (when a tutor
    /// exists) `tutor/` into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path, dump_data: bool) -> Result<()> {
        let write = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| TsrlError::io(&p, e))
        };
        std::fs::create_dir_all(dir).map_err(|e| TsrlError::io(dir, e))?;
        write("metrics.csv", self.metrics_csv())?;
        write("summary.json", self.summary_json())?;
        checkpoint::save_net(&self.student, &dir.join("student.net"))?;
        if let Some(t) = &self.tutor {
            let tdir = dir.join("tutor");
            std::fs::create_dir_all(&tdir).map_err(|e| TsrlError::io(&tdir, e))?;
            t.save(&tdir)?;
        }
        if dump_data {
            self.splits.train.save_csv(&dir.join("train.csv"))?;
            self.splits.test_in.save_csv(&dir.join("test_in.csv"))?;
            self.splits
                .test_shift
                .save_csv(&dir.join("test_shift.csv"))?;
        }
        Ok(())
    }
}

/// `<mode>-seed<seed>`
pub fn run_dir_name(mode: Mode, seed: u64) -> String {
    format!("{}-seed{}", mode.as_str(), seed)
}
