//! Delay (short-term memory) and temporal-XOR capacity benchmarks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::error::{Error, Result};
use crate::readout::{fit, Ridge, TrainingBatch};
use crate::reservoir::{build_reservoir, ReservoirConfig, StateMatrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Stm,
    Xor,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Stm => "stm",
            TaskKind::Xor => "xor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityProtocol {
    pub total: usize,
    pub washout: usize,
    pub train: usize,
    pub test: usize,
    pub k_max_stm: usize,
    pub k_max_xor: usize,
    /// Seed of the input bit stream.
    pub seed: u64,
}

impl Default for CapacityProtocol {
    fn default() -> Self {
        CapacityProtocol {
            total: 15000,
            washout: 1500,
            train: 10500,
            test: 3000,
            k_max_stm: 10,
            k_max_xor: 7,
            seed: 0,
        }
    }
}

impl CapacityProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.washout + self.train + self.test != self.total {
            return Err(Error::InvalidConfig(format!(
                "washout {} + train {} + test {} != total {}",
                self.washout, self.train, self.test, self.total
            )));
        }
        if self.train == 0 || self.test < 2 {
            return Err(Error::InvalidConfig("train and test segments must be non-empty".into()));
        }
        if self.k_max_stm == 0 || self.k_max_xor == 0 {
            return Err(Error::InvalidConfig("k_max must be at least 1".into()));
        }
        Ok(())
    }

    pub fn k_max(&self, kind: TaskKind) -> usize {
        match kind {
            TaskKind::Stm => self.k_max_stm,
            TaskKind::Xor => self.k_max_xor,
        }
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        self.washout..self.washout + self.train
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.washout + self.train..self.total
    }
}

/// Readout settings for the capacity tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreOptions {
    pub ridge: Ridge,
    pub augment_bias: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            ridge: Ridge::default(),
            augment_bias: false,
        }
    }
}

/// I.i.d. fair bits as 0.0 / 1.0.
pub fn gen_binary_sequence(len: usize, seed: u64) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::InvalidParams("sequence length must be positive".into()));
    }
    let mut rng = rng::substream(seed, rng::INPUT);
    Ok((0..len).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect())
}

fn check_delay(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParams("delay k must be at least 1".into()));
    }
    Ok(())
}

/// `d(n) = u(n − k)`; the first `k` entries are undefined.
pub fn delay_target(u: &[f64], k: usize) -> Result<Vec<Option<f64>>> {
    check_delay(k)?;
    Ok((0..u.len()).map(|n| n.checked_sub(k).map(|m| u[m])).collect())
}

/// `d(n) = u(n) ⊕ u(n − k)` for binary `u`.
pub fn xor_target(u: &[f64], k: usize) -> Result<Vec<Option<f64>>> {
    check_delay(k)?;
    Ok((0..u.len())
        .map(|n| n.checked_sub(k).map(|m| ((u[n] > 0.5) != (u[m] > 0.5)) as u8 as f64))
        .collect())
}

pub fn target(kind: TaskKind, u: &[f64], k: usize) -> Result<Vec<Option<f64>>> {
    match kind {
        TaskKind::Stm => delay_target(u, k),
        TaskKind::Xor => xor_target(u, k),
    }
}

/// Pearson correlation. A constant series yields 0 with a warning.
pub fn correlation_r(d: &[f64], y: &[f64]) -> Result<f64> {
    if d.len() != y.len() || d.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "correlation needs two equal series of length >= 2 (got {} and {})",
            d.len(),
            y.len()
        )));
    }
    let t = d.len() as f64;
    let md = d.iter().sum::<f64>() / t;
    let my = y.iter().sum::<f64>() / t;
    let (mut sdy, mut sdd, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in d.iter().zip(y) {
        let (da, db) = (a - md, b - my);
        sdy += da * db;
        sdd += da * da;
        syy += db * db;
    }
    if sdd <= 0.0 || syy <= 0.0 {
        log::warn!("correlation of a constant series; r defined as 0");
        return Ok(0.0);
    }
    Ok((sdy / (sdd.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Train/test correlation for one target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScore {
    pub train_r2: f64,
    pub test_r2: f64,
    pub lambda: f64,
}

/// Fits on the valid samples of `train`, scores on `test`.
pub fn fit_and_score(
    features: &DMatrix<f64>,
    target: &[Option<f64>],
    train: std::ops::Range<usize>,
    test: std::ops::Range<usize>,
    options: &ScoreOptions,
) -> Result<TargetScore> {
    if target.len() != features.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} state columns",
            target.len(),
            features.ncols()
        )));
    }
    let gather = |range: std::ops::Range<usize>| -> (DMatrix<f64>, Vec<f64>) {
        let idx: Vec<usize> = range.filter(|&n| target[n].is_some()).collect();
        let x = features.select_columns(idx.iter());
        let d = idx.iter().map(|&n| target[n].unwrap()).collect();
        (x, d)
    };
    let (x_train, d_train) = gather(train);
    let (x_test, d_test) = gather(test);
    if d_train.is_empty() || d_test.len() < 2 {
        return Err(Error::InvalidParams("not enough valid samples to fit and score".into()));
    }
    let batch = TrainingBatch::new(x_train, DMatrix::from_row_slice(1, d_train.len(), &d_train))?;
    let model = fit(&batch, options.ridge, options.augment_bias)?;
    let y_train = model.predict_matrix(&batch.x)?;
    let y_test = model.predict_matrix(&x_test)?;
    let r_train = correlation_r(&d_train, y_train.row(0).transpose().as_slice())?;
    let r_test = correlation_r(&d_test, y_test.row(0).transpose().as_slice())?;
    Ok(TargetScore {
        train_r2: r_train * r_train,
        test_r2: r_test * r_test,
        lambda: model.ridge_lambda,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub kind: TaskKind,
    pub neurons: usize,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub ridge: Ridge,
    /// λ actually used (k = 1).
    pub lambda: f64,
    /// Test-set `r(k)²`.
    pub r_squared: BTreeMap<usize, f64>,
    pub capacity: f64,
    pub train_r_squared: BTreeMap<usize, f64>,
    pub train_capacity: f64,
}

impl TaskReport {
    /// CSV rows `kind,N,seed,k,r2` (no header).
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for (k, r2) in &self.r_squared {
            writeln!(s, "{},{},{},{},{}", self.kind.as_str(), self.neurons, self.seed, k, r2).unwrap();
        }
        s
    }
}

pub const CSV_HEADER: &str = "kind,N,seed,k,r2";

/// Scores one task on precomputed features (`N × total`) and inputs.
pub fn score_capacity(
    kind: TaskKind,
    features: &DMatrix<f64>,
    u: &[f64],
    protocol: &CapacityProtocol,
    options: &ScoreOptions,
) -> Result<TaskReport> {
    protocol.validate()?;
    if u.len() != protocol.total || features.ncols() != protocol.total {
        return Err(Error::DimensionMismatch(format!(
            "protocol total {} vs {} inputs and {} state columns",
            protocol.total,
            u.len(),
            features.ncols()
        )));
    }
    let mut r_squared = BTreeMap::new();
    let mut train_r_squared = BTreeMap::new();
    let mut lambda = 0.0;
    for k in 1..=protocol.k_max(kind) {
        let d = target(kind, u, k)?;
        let score = fit_and_score(features, &d, protocol.train_range(), protocol.test_range(), options)?;
        if k == 1 {
            lambda = score.lambda;
        }
        r_squared.insert(k, score.test_r2);
        train_r_squared.insert(k, score.train_r2);
    }
    Ok(TaskReport {
        kind,
        neurons: features.nrows(),
        seed: protocol.seed,
        config_hash: String::new(),
        version: crate::VERSION.to_string(),
        ridge: options.ridge,
        lambda,
        capacity: r_squared.values().sum(),
        train_capacity: train_r_squared.values().sum(),
        r_squared,
        train_r_squared,
    })
}

/// Input bits and reservoir states of one full protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub inputs: Vec<f64>,
    pub states: StateMatrix,
}

/// Drives a freshly built reservoir with the protocol's bit sequence.
pub fn simulate_protocol(config: &ReservoirConfig, protocol: &CapacityProtocol) -> Result<ProtocolRun> {
    protocol.validate()?;
    let inputs = gen_binary_sequence(protocol.total, protocol.seed)?;
    let mut reservoir = build_reservoir(config)?;
    let states = reservoir.run_scalar_sequence(&inputs)?;
    Ok(ProtocolRun { inputs, states })
}

#[derive(Serialize)]
struct CapacitySetup<'a> {
    reservoir: &'a ReservoirConfig,
    protocol: &'a CapacityProtocol,
    options: &'a ScoreOptions,
}

/// Scores every requested task on one shared reservoir run.
pub fn score_run(
    run: &ProtocolRun,
    kinds: &[TaskKind],
    config: &ReservoirConfig,
    protocol: &CapacityProtocol,
    options: &ScoreOptions,
) -> Result<Vec<TaskReport>> {
    let features = run.states.to_dmatrix(0..run.states.steps());
    let hash = config_hash(&CapacitySetup {
        reservoir: config,
        protocol,
        options,
    });
    kinds
        .iter()
        .map(|&kind| {
            let mut report = score_capacity(kind, &features, &run.inputs, protocol, options)?;
            report.config_hash = hash.clone();
            report.seed = config.seed;
            Ok(report)
        })
        .collect()
}

pub fn run_capacity_task(
    kind: TaskKind,
    config: &ReservoirConfig,
    protocol: &CapacityProtocol,
    options: &ScoreOptions,
) -> Result<TaskReport> {
    let run = simulate_protocol(config, protocol)?;
    Ok(score_run(&run, &[kind], config, protocol, options)?.remove(0))
}

/// Runs several reservoir configurations in parallel, each scored on all
/// `kinds`. Output order follows `configs`.
pub fn run_capacity_sweep(
    configs: &[ReservoirConfig],
    kinds: &[TaskKind],
    protocol_for: impl Fn(&ReservoirConfig) -> CapacityProtocol + Sync,
    options: &ScoreOptions,
) -> Result<Vec<Vec<TaskReport>>> {
    configs
        .par_iter()
        .map(|cfg| {
            let protocol = protocol_for(cfg);
            let run = simulate_protocol(cfg, &protocol)?;
            score_run(&run, kinds, cfg, &protocol, options)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitySummary {
    pub kind: TaskKind,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1).
    pub std: f64,
    pub mean_r_squared: BTreeMap<usize, f64>,
}

pub fn summarize(reports: &[TaskReport]) -> Option<CapacitySummary> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let caps: Vec<f64> = reports.iter().map(|r| r.capacity).collect();
    let mean = caps.iter().sum::<f64>() / n;
    let std = if reports.len() > 1 {
        (caps.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut mean_r_squared = BTreeMap::new();
    for r in reports {
        for (&k, &v) in &r.r_squared {
            *mean_r_squared.entry(k).or_insert(0.0) += v / n;
        }
    }
    Some(CapacitySummary {
        kind: first.kind,
        runs: reports.len(),
        mean,
        std,
        mean_r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_sequence_is_reproducible() {
        let a = gen_binary_sequence(15000, 3).unwrap();
        assert_eq!(a, gen_binary_sequence(15000, 3).unwrap());
        assert!(a.iter().all(|&x| x == 0.0 || x == 1.0));
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!((0.47..=0.53).contains(&mean));
        assert!(gen_binary_sequence(0, 3).is_err());
    }

    #[test]
    fn delay_and_xor_examples() {
        let u = [1.0, 0.0, 1.0, 1.0];
        assert_eq!(delay_target(&u, 1).unwrap(), vec![None, Some(1.0), Some(0.0), Some(1.0)]);
        assert_eq!(xor_target(&u, 1).unwrap(), vec![None, Some(1.0), Some(1.0), Some(0.0)]);
        assert!(delay_target(&u, 0).is_err());
        assert!(xor_target(&u, 0).is_err());
        let constant = [1.0; 6];
        assert!(xor_target(&constant, 2).unwrap().iter().flatten().all(|&d| d == 0.0));
    }

    #[test]
    fn correlation_basics() {
        let d = [0.0, 1.0, 1.0, 0.0, 1.0];
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let affine: Vec<f64> = d.iter().map(|x| 3.0 * x - 7.0).collect();
        assert!((correlation_r(&d, &d).unwrap() - 1.0).abs() < 1e-12);
        assert!((correlation_r(&d, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((correlation_r(&d, &affine).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(correlation_r(&d, &[2.0; 5]).unwrap(), 0.0);
        assert!(correlation_r(&d, &d[..3]).is_err());
    }

    #[test]
    fn protocol_validation() {
        assert!(CapacityProtocol::default().validate().is_ok());
        let bad = CapacityProtocol { total: 14000, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn summary_statistics() {
        let mk = |c: f64| TaskReport {
            kind: TaskKind::Stm,
            neurons: 1,
            seed: 0,
            config_hash: String::new(),
            version: String::new(),
            ridge: Ridge::default(),
            lambda: 0.0,
            r_squared: BTreeMap::from([(1, c)]),
            capacity: c,
            train_r_squared: BTreeMap::new(),
            train_capacity: 0.0,
        };
        let s = summarize(&[mk(1.0), mk(3.0)]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.mean_r_squared[&1], 2.0);
        assert!(summarize(&[]).is_none());
    }
}
