//! Spoken-digit classification on precomputed cochleagrams.
//!
//! Each instance is a 78-channel × 48-frame feature matrix. Frames 10..40 are
//! fed to the reservoir one per input step (channel `i mod 78` drives neuron
//! `i`), a ridge readout is trained against ±1 one-hot targets repeated over
//! the frames, and an instance is labelled by the argmax of its time-averaged
//! outputs. The same protocol applied to the raw frames gives the baseline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::error::{Error, Result};
use crate::readout::{fit, Ridge, TrainingBatch};
use crate::reservoir::{build_reservoir, ReservoirConfig};
use crate::rng;

pub const CHANNELS: usize = 78;
pub const FRAMES: usize = 48;
pub const CLASSES: usize = 10;
pub const TRIM_START: usize = 10;
pub const TRIMMED_FRAMES: usize = 30;
/// Per-class count in each test fold below which a warning is logged.
pub const MIN_PER_CLASS_PER_FOLD: usize = 10;

const FILE_HEADER: &str = "digit";

#[derive(Debug, Clone, PartialEq)]
pub struct DigitInstance {
    /// `CHANNELS × FRAMES` cochleagram.
    pub features: DMatrix<f64>,
    pub label: u8,
}

impl DigitInstance {
    pub fn new(features: DMatrix<f64>, label: i64) -> Result<Self> {
        if features.shape() != (CHANNELS, FRAMES) {
            return Err(Error::DimensionMismatch(format!(
                "cochleagram is {}×{}, expected {CHANNELS}×{FRAMES}",
                features.nrows(),
                features.ncols()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("cochleagram has non-finite entries".into()));
        }
        Ok(DigitInstance {
            features,
            label: check_label(label)?,
        })
    }

    /// Parses the text format: `digit <label>`, then 78 rows of 48 reals.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::malformed(path, "empty file"))?;
        let label = match header.split_whitespace().collect::<Vec<_>>()[..] {
            [FILE_HEADER, l] => l
                .parse::<i64>()
                .map_err(|_| Error::malformed(path, format!("bad label {l:?}")))?,
            _ => return Err(Error::malformed(path, format!("expected `{FILE_HEADER} <label>`, got {header:?}"))),
        };
        let label = check_label(label)?;
        let mut data = Vec::with_capacity(CHANNELS * FRAMES);
        let mut rows = 0;
        for line in lines {
            rows += 1;
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::malformed(path, format!("row {rows}: bad number {tok:?}")))?;
                if !v.is_finite() {
                    return Err(Error::malformed(path, format!("row {rows}: non-finite value")));
                }
                data.push(v);
            }
            if data.len() - before != FRAMES {
                return Err(Error::malformed(
                    path,
                    format!("row {rows} has {} values, expected {FRAMES}", data.len() - before),
                ));
            }
        }
        if rows != CHANNELS {
            return Err(Error::malformed(path, format!("{rows} rows, expected {CHANNELS}")));
        }
        Ok(DigitInstance {
            features: DMatrix::from_row_slice(CHANNELS, FRAMES, &data),
            label,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{FILE_HEADER} {}\n", self.label);
        for row in self.features.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::export::write_atomic(path, self.to_text().as_bytes())
    }

    /// Min-max scales the features to [0, 1]. A constant matrix becomes all
    /// zeros; returns false in that case.
    pub fn normalize(&mut self) -> bool {
        let lo = self.features.min();
        let hi = self.features.max();
        if hi > lo {
            self.features.apply(|v| *v = (*v - lo) / (hi - lo));
            true
        } else {
            self.features.fill(0.0);
            false
        }
    }
}

fn check_label(label: i64) -> Result<u8> {
    if (0..CLASSES as i64).contains(&label) {
        Ok(label as u8)
    } else {
        Err(Error::UnknownLabel(label))
    }
}

/// Reads every regular file of `dir` (sorted by name) and normalizes it.
pub fn load_dataset(dir: &Path) -> Result<Vec<DigitInstance>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let mut inst = DigitInstance::load(p)?;
            if !inst.normalize() {
                log::warn!("{}: constant features normalized to zeros", p.display());
            }
            Ok(inst)
        })
        .collect()
}

/// Writes instances as `digit_<index>_<label>.txt`.
pub fn save_dataset(dir: &Path, instances: &[DigitInstance]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, inst) in instances.iter().enumerate() {
        inst.save(&dir.join(format!("digit_{i:04}_{}.txt", inst.label)))?;
    }
    Ok(())
}

/// Keeps frames `TRIM_START..TRIM_START + TRIMMED_FRAMES`.
pub fn trim(features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if features.shape() != (CHANNELS, FRAMES) {
        return Err(Error::DimensionMismatch(format!(
            "cannot trim a {}×{} matrix, expected {CHANNELS}×{FRAMES}",
            features.nrows(),
            features.ncols()
        )));
    }
    Ok(features.columns(TRIM_START, TRIMMED_FRAMES).into_owned())
}

/// +1 at the label, −1 elsewhere.
pub fn encode_targets(label: i64) -> Result<DVector<f64>> {
    let l = check_label(label)? as usize;
    Ok(DVector::from_fn(CLASSES, |i, _| if i == l { 1.0 } else { -1.0 }))
}

/// Disjoint test folds covering every instance exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Shuffles each class on the `folds` stream of `seed` and deals it
    /// round-robin so every fold gets a near-equal share of every class.
    pub fn stratified(labels: &[u8], k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
        }
        check_labels(labels)?;
        let mut rng = rng::substream(seed, rng::FOLDS);
        let mut folds = vec![Vec::new(); k];
        let mut next = 0;
        for class in 0..CLASSES as u8 {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            for i in members {
                folds[next % k].push(i);
                next += 1;
            }
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        let plan = FoldPlan { folds };
        plan.validate(labels.len())?;
        plan.warn_small_classes(labels);
        Ok(plan)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (f, fold) in self.folds.iter().enumerate() {
            if fold.is_empty() {
                return Err(Error::EmptyFold(f));
            }
            for &i in fold {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidConfig(format!("fold {f}: instance {i} out of range or repeated")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidConfig(format!("instance {i} is in no fold")));
        }
        Ok(())
    }

    fn warn_small_classes(&self, labels: &[u8]) {
        for (f, fold) in self.folds.iter().enumerate() {
            let mut counts = [0usize; CLASSES];
            fold.iter().for_each(|&i| counts[labels[i] as usize] += 1);
            if let Some(c) = (0..CLASSES).find(|&c| counts[c] > 0 && counts[c] < MIN_PER_CLASS_PER_FOLD) {
                log::warn!(
                    "fold {f}: class {c} has {} test instances (fewer than {MIN_PER_CLASS_PER_FOLD})",
                    counts[c]
                );
            }
        }
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= CLASSES) {
        return Err(Error::UnknownLabel(l as i64));
    }
    let first = labels.first().ok_or_else(|| Error::DegenerateLabels("no instances".into()))?;
    if labels.iter().all(|l| l == first) {
        return Err(Error::DegenerateLabels(format!("every instance has label {first}")));
    }
    Ok(())
}

/// How per-step readout outputs become one label per instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Argmax of the outputs averaged over the instance's frames.
    #[default]
    TimeAverage,
    /// Most frequent per-frame argmax; ties go to the smaller label.
    MajorityVote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DigitsOptions {
    pub folds: usize,
    /// Seed of the fold assignment.
    pub fold_seed: u64,
    pub ridge: Ridge,
    pub decision: DecisionRule,
    /// Return the reservoir to rest before every instance. When false the
    /// instances run back to back in dataset order.
    pub reset_between_instances: bool,
}

impl Default for DigitsOptions {
    fn default() -> Self {
        DigitsOptions {
            folds: 5,
            fold_seed: 0,
            ridge: Ridge::default(),
            decision: DecisionRule::TimeAverage,
            reset_between_instances: true,
        }
    }
}

impl DigitsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 folds, got {}", self.folds)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl ClassifierReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }

    /// Pooled accuracy over all folds: trace / total.
    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total().max(1) as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 0..CLASSES {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Picks a label from a `CLASSES × T` output matrix.
pub fn decide(outputs: &DMatrix<f64>, rule: DecisionRule) -> usize {
    match rule {
        DecisionRule::TimeAverage => argmax(outputs.column_mean().as_slice()),
        DecisionRule::MajorityVote => {
            let mut votes = vec![0usize; outputs.nrows()];
            for col in outputs.column_iter() {
                votes[argmax(col.as_slice())] += 1;
            }
            let best = *votes.iter().max().unwrap_or(&0);
            votes.iter().position(|&v| v == best).unwrap_or(0)
        }
    }
}

/// Index of the largest entry; the first one wins ties.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Cross-validates a ridge readout on per-instance feature sequences
/// (`features[i]` is `P × T`). Shared by the reservoir and baseline paths.
pub fn cross_validate(
    features: &[DMatrix<f64>],
    labels: &[u8],
    plan: &FoldPlan,
    options: &DigitsOptions,
) -> Result<(Vec<f64>, Vec<Vec<u64>>)> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature sets for {} labels",
            features.len(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    plan.validate(labels.len())?;
    let mut confusion = vec![vec![0u64; CLASSES]; CLASSES];
    let mut fold_accuracy = Vec::with_capacity(plan.folds.len());
    for (f, test) in plan.folds.iter().enumerate() {
        let train = plan.train_indices(f);
        if train.is_empty() {
            return Err(Error::EmptyFold(f));
        }
        let x = DMatrix::from_columns(
            &train
                .iter()
                .flat_map(|&i| features[i].column_iter().collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        );
        let mut d = DMatrix::zeros(CLASSES, x.ncols());
        let mut col = 0;
        for &i in &train {
            let t = encode_targets(labels[i] as i64)?;
            for _ in 0..features[i].ncols() {
                d.set_column(col, &t);
                col += 1;
            }
        }
        let model = fit(&TrainingBatch::new(x, d)?, options.ridge, true)?;
        let mut correct = 0;
        for &i in test {
            let pred = decide(&model.predict_matrix(&features[i])?, options.decision);
            confusion[labels[i] as usize][pred] += 1;
            correct += (pred == labels[i] as usize) as usize;
        }
        fold_accuracy.push(correct as f64 / test.len() as f64);
    }
    Ok((fold_accuracy, confusion))
}

fn report(
    method: &str,
    hash: String,
    seed: u64,
    (fold_accuracy, confusion): (Vec<f64>, Vec<Vec<u64>>),
) -> ClassifierReport {
    let mean_accuracy = fold_accuracy.iter().sum::<f64>() / fold_accuracy.len().max(1) as f64;
    ClassifierReport {
        method: method.into(),
        config_hash: hash,
        seed,
        version: crate::VERSION.into(),
        fold_accuracy,
        mean_accuracy,
        confusion,
    }
}

/// Reservoir states (`N × TRIMMED_FRAMES`) for every instance.
pub fn reservoir_features(
    instances: &[DigitInstance],
    config: &ReservoirConfig,
    options: &DigitsOptions,
) -> Result<Vec<DMatrix<f64>>> {
    let mut cfg = config.clone();
    cfg.input_channels = CHANNELS;
    let base = build_reservoir(&cfg)?;
    let frames = |inst: &DigitInstance| -> Result<Vec<Vec<f64>>> {
        let t = trim(&inst.features)?;
        Ok(t.column_iter().map(|c| c.iter().copied().collect()).collect())
    };
    let to_matrix = |m: crate::reservoir::StateMatrix| m.to_dmatrix(0..m.steps());
    if options.reset_between_instances {
        instances
            .par_iter()
            .map(|inst| {
                let mut r = base.clone();
                Ok(to_matrix(r.run_sequence(&frames(inst)?)?))
            })
            .collect()
    } else {
        let mut r = base;
        instances.iter().map(|inst| Ok(to_matrix(r.run_sequence(&frames(inst)?)?))).collect()
    }
}

#[derive(Serialize)]
struct DigitsSetup<'a> {
    method: &'a str,
    reservoir: Option<&'a ReservoirConfig>,
    options: &'a DigitsOptions,
    plan: &'a FoldPlan,
}

/// Reservoir classification with cross-validation over `plan`.
pub fn classify_run(
    instances: &[DigitInstance],
    config: &ReservoirConfig,
    plan: &FoldPlan,
    options: &DigitsOptions,
) -> Result<ClassifierReport> {
    let labels: Vec<u8> = instances.iter().map(|i| i.label).collect();
    check_labels(&labels)?;
    plan.validate(labels.len())?;
    let features = reservoir_features(instances, config, options)?;
    let hash = config_hash(&DigitsSetup {
        method: "reservoir",
        reservoir: Some(config),
        options,
        plan,
    });
    Ok(report("reservoir", hash, config.seed, cross_validate(&features, &labels, plan, options)?))
}

/// The same protocol on the trimmed raw frames.
pub fn baseline_linear(instances: &[DigitInstance], plan: &FoldPlan, options: &DigitsOptions) -> Result<ClassifierReport> {
    let labels: Vec<u8> = instances.iter().map(|i| i.label).collect();
    let features = instances
        .iter()
        .map(|i| trim(&i.features))
        .collect::<Result<Vec<_>>>()?;
    let hash = config_hash(&DigitsSetup {
        method: "baseline",
        reservoir: None,
        options,
        plan,
    });
    Ok(report("baseline", hash, options.fold_seed, cross_validate(&features, &labels, plan, options)?))
}

/// Number of spectral patterns making up a synthetic utterance.
const SYNTH_SEGMENTS: usize = 5;

/// Seeded synthetic cochleagrams whose classes differ only in the order of
/// five band-limited segments. Every class uses the same segments for the
/// same number of frames, so the time-averaged frame carries no class
/// information; telling classes apart needs temporal context.
///
/// Class `c < 5` plays segments `c, c+1, …` (mod 5); class `c ≥ 5` plays
/// them in descending order starting from `c − 5`. Instances are normalized.
pub fn synthetic_dataset(n: usize, seed: u64) -> Result<Vec<DigitInstance>> {
    let mut rng = rng::substream(seed, rng::SYNTHETIC);
    let noise = Normal::new(0.0f64, 0.05).expect("valid std");
    let seg_len = TRIMMED_FRAMES / SYNTH_SEGMENTS;
    let band = CHANNELS.div_ceil(SYNTH_SEGMENTS);
    (0..n)
        .map(|i| {
            let label = i % CLASSES;
            let start = label % SYNTH_SEGMENTS;
            let order: Vec<usize> = (0..SYNTH_SEGMENTS)
                .map(|j| {
                    if label < SYNTH_SEGMENTS {
                        (start + j) % SYNTH_SEGMENTS
                    } else {
                        (start + SYNTH_SEGMENTS - j) % SYNTH_SEGMENTS
                    }
                })
                .collect();
            let gain = rng.random_range(0.7..1.0);
            let mut m = DMatrix::from_fn(CHANNELS, FRAMES, |_, _| 0.1);
            for (j, &seg) in order.iter().enumerate() {
                for t in 0..seg_len {
                    let frame = TRIM_START + j * seg_len + t;
                    for ch in seg * band..((seg + 1) * band).min(CHANNELS) {
                        m[(ch, frame)] = gain;
                    }
                }
            }
            m.apply(|v| *v = (*v + noise.sample(&mut rng) as f64).max(0.0));
            let mut inst = DigitInstance::new(m, label as i64)?;
            inst.normalize();
            Ok(inst)
        })
        .collect()
}
