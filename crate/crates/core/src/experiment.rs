//! Multi-mode, multi-seed comparison runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, RunConfig};
use crate::error::{Result, TsrlError};
use crate::orchestrator::{run_dir_name, train, RunArtifacts};

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub seeds: Vec<u64>,
    pub shift_auc: Stat,
    pub shift_acc: Stat,
    pub shift_eer: Stat,
    pub hard_fraction: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSummary {
    pub epochs: usize,
    pub modes: BTreeMap<String, ModeSummary>,
}

pub struct Comparison {
    /// Runs in (seed, mode) order.
    pub runs: Vec<RunArtifacts>,
    pub summary: ComparisonSummary,
}

impl Comparison {
    pub fn runs_for(&self, mode: Mode) -> impl Iterator<Item = &RunArtifacts> {
        self.runs.iter().filter(move |r| r.summary.mode == mode)
    }

    /// `epoch,mode,seed,hard_fraction,shift_auc`, one row per epoch per run.
    pub fn comparison_csv(&self) -> String {
        let mut out = String::from("epoch,mode,seed,hard_fraction,shift_auc\n");
        for run in &self.runs {
            for row in &run.rows {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    row.epoch, run.summary.mode, run.summary.seed, row.hard_fraction, row.shift_auc
                )
                .expect("writing to a String");
            }
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }
}

pub fn summarize(runs: &[RunArtifacts], epochs: usize) -> ComparisonSummary {
    let mut modes = BTreeMap::new();
    for mode in Mode::ALL {
        let finals: Vec<_> = runs.iter().filter(|r| r.summary.mode == mode).collect();
        if finals.is_empty() {
            continue;
        }
        let pick = |f: &dyn Fn(&RunArtifacts) -> f64| -> Vec<f64> {
            finals.iter().map(|r| f(r)).collect()
        };
        modes.insert(
            mode.as_str().to_string(),
            ModeSummary {
                seeds: finals.iter().map(|r| r.summary.seed).collect(),
                shift_auc: Stat::of(&pick(&|r| r.summary.final_metrics.shifted.auc)),
                shift_acc: Stat::of(&pick(&|r| r.summary.final_metrics.shifted.acc)),
                shift_eer: Stat::of(&pick(&|r| r.summary.final_metrics.shifted.eer)),
                hard_fraction: Stat::of(&pick(&|r| r.summary.final_metrics.hard_fraction)),
            },
        );
    }
    ComparisonSummary { epochs, modes }
}

/// Trains every mode for every seed. Runs are independent and execute in
/// parallel; results are assembled in (seed, mode) order.
pub fn compare(base: &RunConfig, seeds: &[u64]) -> Result<Comparison> {
    let (runs, failures) = compare_partial(base, seeds);
    if let Some((mode, seed, err)) = failures.into_iter().next() {
        return Err(TsrlError::RunFailed {
            run: run_dir_name(mode, seed),
            source: Box::new(err),
        });
    }
    let summary = summarize(&runs, base.n_total_epochs);
    Ok(Comparison { runs, summary })
}

type Failure = (Mode, u64, TsrlError);

fn compare_partial(base: &RunConfig, seeds: &[u64]) -> (Vec<RunArtifacts>, Vec<Failure>) {
    let jobs: Vec<(u64, Mode)> = seeds
        .iter()
        .flat_map(|&s| Mode::ALL.into_iter().map(move |m| (s, m)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(seed, mode)| {
            let cfg = RunConfig {
                mode,
                seed,
                ..base.clone()
            };
            (mode, seed, train(&cfg))
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (mode, seed, r) in results {
        match r {
            Ok(a) => runs.push(a),
            Err(e) => failures.push((mode, seed, e)),
        }
    }
    (runs, failures)
}

/// [`compare`] plus artifacts under `out`: one `<mode>-seed<seed>/` directory
/// per run, `comparison.csv` and `comparison_summary.json`. If any run fails
/// the successful runs are still written, a `FAILED` file lists the failures
/// and an error is returned.
pub fn compare_to_dir(base: &RunConfig, seeds: &[u64], out: &Path) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(TsrlError::config("compare needs at least one seed"));
    }
    base.validate()?;
    std::fs::create_dir_all(out).map_err(|e| TsrlError::io(out, e))?;
    let (runs, failures) = compare_partial(base, seeds);
    for run in &runs {
        run.write_to(
            &out.join(run_dir_name(run.summary.mode, run.summary.seed)),
            false,
        )?;
    }
    let comparison = Comparison {
        summary: summarize(&runs, base.n_total_epochs),
        runs,
    };
    let write = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| TsrlError::io(&p, e))
    };
    write("comparison.csv", comparison.comparison_csv())?;
    if !failures.is_empty() {
        let mut msg = String::new();
        for (mode, seed, e) in &failures {
            writeln!(msg, "{mode} seed {seed}: {e}").expect("writing to a String");
        }
        write("FAILED", msg.clone())?;
        let (mode, seed, err) = failures.into_iter().next().expect("non-empty");
        return Err(TsrlError::RunFailed {
            run: run_dir_name(mode, seed),
            source: Box::new(err),
        });
    }
    write("comparison_summary.json", comparison.summary_json())?;
    Ok(comparison)
}
