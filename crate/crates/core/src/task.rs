//! Synthetic binary classification with planted difficulty.
//!
//! The two classes are separated by a wavy boundary in the first two input
//! dimensions, `x0 = a * sin(f * x1)`; the remaining dimensions are nuisance
//! Gaussians. Samples come in three kinds:
//!
//! * easy: drawn from the class clusters, well clear of the boundary;
//! * hard: inside a narrow band around the boundary, labeled by which side
//!   they fall on, so they are learnable once the wave is resolved;
//! * noise: easy-region points with flipped labels, which no consistent
//!   classifier can fit.
//!
//! Test splits contain easy and hard samples only. The shifted split reuses
//! the in-distribution draws and moves them by a rotation in the `(x0, x1)`
//! plane plus a translation.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TsrlError};

const EASY_SPREAD: f64 = 0.5;

const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
    Noise,
}

impl Difficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
            Difficulty::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "easy" => Some(Difficulty::Easy),
            "hard" => Some(Difficulty::Hard),
            "noise" => Some(Difficulty::Noise),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub input_dim: usize,
    pub easy_fraction: f64,
    pub hard_fraction: f64,
    pub noise_fraction: f64,
    /// Typical distance of easy samples from the class boundary, times two.
    pub margin: f64,
    /// Width of the band around the boundary that hard samples occupy.
    pub hard_band_width: f64,
    /// Boundary shape `x0 = wave_amplitude * sin(wave_frequency * x1)`.
    pub wave_amplitude: f64,
    pub wave_frequency: f64,
    /// Rotation of the shifted test split in the `(x0, x1)` plane, radians.
    pub shift_angle: f64,
    /// Translation of the shifted test split; one entry broadcasts to all dims.
    pub shift_translation: Vec<f64>,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            n_train: 2000,
            n_test: 1000,
            input_dim: 8,
            easy_fraction: 0.65,
            hard_fraction: 0.25,
            noise_fraction: 0.10,
            margin: 3.0,
            hard_band_width: 1.0,
            wave_amplitude: 0.8,
            wave_frequency: 1.5,
            shift_angle: 25f64.to_radians(),
            shift_translation: vec![0.5],
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.easy_fraction, self.hard_fraction, self.noise_fraction];
        if fr.iter().any(|f| f.is_nan() || *f < 0.0) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(TsrlError::config(format!(
                "difficulty fractions {fr:?} must be non-negative and sum to 1"
            )));
        }
        if self.input_dim < 2 {
            return Err(TsrlError::config("input_dim must be at least 2"));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(TsrlError::config("n_train and n_test must be positive"));
        }
        if !(self.margin > 0.0 && self.hard_band_width > 0.0) {
            return Err(TsrlError::config(
                "margin and hard_band_width must be positive",
            ));
        }
        if !(self.wave_amplitude.is_finite() && self.wave_frequency.is_finite()) {
            return Err(TsrlError::config("wave parameters must be finite"));
        }
        if self.margin < self.hard_band_width {
            return Err(TsrlError::config("margin must be at least hard_band_width"));
        }
        let t = self.shift_translation.len();
        if t != 1 && t != self.input_dim {
            return Err(TsrlError::config(format!(
                "shift_translation has {t} entries; expected 1 or input_dim ({})",
                self.input_dim
            )));
        }
        Ok(())
    }

    fn translation(&self) -> Vec<f64> {
        if self.shift_translation.len() == 1 {
            vec![self.shift_translation[0]; self.input_dim]
        } else {
            self.shift_translation.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Generator ground truth; present on the training split only.
    pub tags: Option<Vec<Difficulty>>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn to_csv(&self) -> String {
        let d = self.input_dim();
        let mut out = String::from("id,label,tag");
        for k in 0..d {
            write!(out, ",x{k}").expect("writing to a String");
        }
        out.push('\n');
        for (i, (x, y)) in self.inputs.iter().zip(&self.labels).enumerate() {
            let tag = self.tags.as_ref().map_or("", |t| t[i].as_str());
            write!(out, "{i},{y},{tag}").expect("writing to a String");
            for v in x {
                write!(out, ",{v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |detail: String| TsrlError::Format {
            what: "dataset CSV",
            detail,
        };
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        if header.len() < 4 || header[..3] != ["id", "label", "tag"] {
            return Err(bad(format!(
                "header must start with id,label,tag: {header:?}"
            )));
        }
        let d = header.len() - 3;
        for (k, h) in header[3..].iter().enumerate() {
            if *h != format!("x{k}") {
                return Err(bad(format!("unexpected column {h:?}")));
            }
        }
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut tags = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d + 3 {
                return Err(bad(format!("row {n}: expected {} fields", d + 3)));
            }
            let label: usize = fields[1]
                .parse()
                .ok()
                .filter(|y| *y <= 1)
                .ok_or_else(|| bad(format!("row {n}: label {:?}", fields[1])))?;
            let tag = match fields[2] {
                "" => None,
                t => Some(Difficulty::parse(t).ok_or_else(|| bad(format!("row {n}: tag {t:?}")))?),
            };
            let x = fields[3..]
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| bad(format!("row {n}: value {v:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            inputs.push(x);
            labels.push(label);
            tags.push(tag);
        }
        let tags = if !tags.is_empty() && tags.iter().all(Option::is_some) {
            Some(tags.into_iter().flatten().collect())
        } else if tags.iter().all(Option::is_none) {
            None
        } else {
            return Err(bad("tags must be present on every row or none".into()));
        };
        Ok(LabeledDataset {
            inputs,
            labels,
            tags,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| TsrlError::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TsrlError::io(path, e))?;
        Self::from_csv(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplits {
    pub train: LabeledDataset,
    pub test_in: LabeledDataset,
    pub test_shift: LabeledDataset,
}

impl TaskSpec {
    fn boundary(&self, x1: f64) -> f64 {
        self.wave_amplitude * (self.wave_frequency * x1).sin()
    }

    /// Signed offset from the class boundary: positive means class 1.
    pub fn boundary_offset(&self, x: &[f64]) -> f64 {
        x[0] - self.boundary(x[1])
    }
}

fn draw(rng: &mut ChaCha8Rng, spec: &TaskSpec, kind: Difficulty) -> (Vec<f64>, usize) {
    let positive = rng.random_bool(0.5);
    let side = if positive { 1.0 } else { -1.0 };
    let mut x: Vec<f64> = (0..spec.input_dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let offset = match kind {
        Difficulty::Hard => rng.random_range(0.0..spec.hard_band_width / 2.0),
        Difficulty::Easy | Difficulty::Noise => {
            let n: f64 = rng.sample(StandardNormal);
            (spec.margin / 2.0 + EASY_SPREAD * n).max(spec.hard_band_width / 2.0)
        }
    };
    x[0] = spec.boundary(x[1]) + side * offset;
    let mut label = usize::from(positive);
    if kind == Difficulty::Noise {
        label = 1 - label;
    }
    (x, label)
}

fn tag_plan(n: usize, fractions: [f64; 3], rng: &mut ChaCha8Rng) -> Vec<Difficulty> {
    let easy = (n as f64 * fractions[0]).round() as usize;
    let hard = ((n as f64 * fractions[1]).round() as usize).min(n - easy);
    let mut tags = Vec::with_capacity(n);
    tags.extend(std::iter::repeat_n(Difficulty::Easy, easy));
    tags.extend(std::iter::repeat_n(Difficulty::Hard, hard));
    tags.extend(std::iter::repeat_n(Difficulty::Noise, n - easy - hard));
    tags.shuffle(rng);
    tags
}

fn shift(x: &[f64], angle: f64, translation: &[f64]) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    let mut y = x.to_vec();
    y[0] = c * x[0] - s * x[1];
    y[1] = s * x[0] + c * x[1];
    for (v, t) in y.iter_mut().zip(translation) {
        *v += t;
    }
    y
}

pub fn generate_task(spec: &TaskSpec) -> Result<TaskSplits> {
    spec.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(TRAIN_STREAM);
    let tags = tag_plan(
        spec.n_train,
        [spec.easy_fraction, spec.hard_fraction, spec.noise_fraction],
        &mut rng,
    );
    let (inputs, labels) = tags.iter().map(|&t| draw(&mut rng, spec, t)).unzip();
    let train = LabeledDataset {
        inputs,
        labels,
        tags: Some(tags),
    };

    // test splits: easy and hard in their training proportions, no label noise
    let clean = spec.easy_fraction + spec.hard_fraction;
    let (easy_share, hard_share) = if clean > 0.0 {
        (spec.easy_fraction / clean, spec.hard_fraction / clean)
    } else {
        (1.0, 0.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(TEST_STREAM);
    let test_tags = tag_plan(spec.n_test, [easy_share, hard_share, 0.0], &mut rng);
    let (inputs, labels): (Vec<Vec<f64>>, Vec<usize>) =
        test_tags.iter().map(|&t| draw(&mut rng, spec, t)).unzip();
    // covariate shift: points move, the labeling rule does not
    let translation = spec.translation();
    let (shifted, shifted_labels): (Vec<Vec<f64>>, Vec<usize>) = inputs
        .iter()
        .zip(&labels)
        .map(|(x, &y)| {
            let moved = shift(x, spec.shift_angle, &translation);
            let off = spec.boundary_offset(&moved);
            let label = if off > 0.0 {
                1
            } else if off < 0.0 {
                0
            } else {
                y
            };
            (moved, label)
        })
        .unzip();
    Ok(TaskSplits {
        train,
        test_in: LabeledDataset {
            inputs,
            labels,
            tags: None,
        },
        test_shift: LabeledDataset {
            inputs: shifted,
            labels: shifted_labels,
            tags: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TaskSpec {
        TaskSpec {
            n_train: 400,
            n_test: 200,
            ..TaskSpec::default()
        }
    }

    #[test]
    fn tag_counts_match_fractions() {
        let splits = generate_task(&small()).unwrap();
        let tags = splits.train.tags.unwrap();
        let count = |d| tags.iter().filter(|&&t| t == d).count();
        assert_eq!(count(Difficulty::Easy), 260);
        assert_eq!(count(Difficulty::Hard), 100);
        assert_eq!(count(Difficulty::Noise), 40);
        assert!(splits.test_in.tags.is_none());
    }

    #[test]
    fn geometry_matches_tags() {
        let spec = small();
        let splits = generate_task(&spec).unwrap();
        let tags = splits.train.tags.as_ref().unwrap();
        for ((x, &y), &t) in splits
            .train
            .inputs
            .iter()
            .zip(&splits.train.labels)
            .zip(tags)
        {
            let off = spec.boundary_offset(x);
            let side = usize::from(off > 0.0);
            match t {
                Difficulty::Hard => {
                    assert!(off.abs() < spec.hard_band_width / 2.0 + 1e-12);
                    assert_eq!(side, y);
                }
                Difficulty::Easy => {
                    assert!(off.abs() >= spec.hard_band_width / 2.0 - 1e-12);
                    assert_eq!(side, y);
                }
                Difficulty::Noise => assert_ne!(side, y),
            }
        }
    }

    #[test]
    fn zero_shift_reproduces_in_distribution() {
        let spec = TaskSpec {
            shift_angle: 0.0,
            shift_translation: vec![0.0],
            ..small()
        };
        let splits = generate_task(&spec).unwrap();
        assert_eq!(splits.test_in, splits.test_shift);
    }

    #[test]
    fn seed_determinism() {
        assert_eq!(
            generate_task(&small()).unwrap(),
            generate_task(&small()).unwrap()
        );
        let other = TaskSpec { seed: 1, ..small() };
        assert_ne!(
            generate_task(&small()).unwrap().train,
            generate_task(&other).unwrap().train
        );
    }

    #[test]
    fn rejects_bad_fractions_and_translation() {
        let spec = TaskSpec {
            noise_fraction: 0.2,
            ..small()
        };
        assert!(generate_task(&spec).is_err());
        let spec = TaskSpec {
            shift_translation: vec![0.0; 3],
            ..small()
        };
        assert!(spec.validate().is_err());
        let spec = TaskSpec {
            input_dim: 1,
            ..small()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let splits = generate_task(&small()).unwrap();
        for ds in [&splits.train, &splits.test_shift] {
            let back = LabeledDataset::from_csv(&ds.to_csv()).unwrap();
            assert_eq!(&back, ds);
        }
        let header = splits.train.to_csv().lines().next().unwrap().to_string();
        assert_eq!(header, "id,label,tag,x0,x1,x2,x3,x4,x5,x6,x7");
    }

    #[test]
    fn csv_rejects_bad_label() {
        let text = "id,label,tag,x0,x1\n0,2,,0.1,0.2\n";
        assert!(LabeledDataset::from_csv(text).is_err());
        assert!(LabeledDataset::from_csv("a,b\n").is_err());
    }
}
