//! Grid reservoir and the 10 ns micro-step simulation loop.
//!
//! One micro-step reads only the previous step's positive-VCO edges of the
//! neighbours, so every neuron can be updated independently against that
//! snapshot. The serial and the multi-worker paths run the same per-neuron
//! kernel and produce bit-identical results.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counter::CounterState;
use crate::error::{Error, Result};
use crate::neuron::{
    default_curves, BehavioralCurves, ControlVoltage, CurveParams, GridPoint, NeuronState, Phase,
    PhaseIncrement, Polarity, VariationFactors, MAX_VCO_HZ, MICRO_DT, TABLE_POINTS, WEIGHT_WORDS,
};
use crate::rng;
use crate::weighting::{quantize_weight, Site, WeightAssignment, DEFAULT_SIGMA_MAX, DEFAULT_TAP_DELAY};

/// Input frequency at full scale (u = 1).
pub const INPUT_FULL_SCALE_HZ: f64 = 2e6;
/// Default length of one input step.
pub const INPUT_STEP: f64 = 30e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
    Toroidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridTopology {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl GridTopology {
    pub fn open(rows: usize, cols: usize) -> Self {
        GridTopology {
            rows,
            cols,
            boundary: Boundary::Open,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, (r, c): Site) -> usize {
        r * self.cols + c
    }

    pub fn site(&self, i: usize) -> Site {
        (i / self.cols, i % self.cols)
    }

    /// Up, down, left, right neighbours of `i` (deduplicated on tiny tori).
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let (r, c) = self.site(i);
        let (rows, cols) = (self.rows as isize, self.cols as isize);
        let mut out = Vec::with_capacity(4);
        for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
            let (mut nr, mut nc) = (r as isize + dr, c as isize + dc);
            match self.boundary {
                Boundary::Open => {
                    if nr < 0 || nr >= rows || nc < 0 || nc >= cols {
                        continue;
                    }
                }
                Boundary::Toroidal => {
                    nr = nr.rem_euclid(rows);
                    nc = nc.rem_euclid(cols);
                }
            }
            let j = self.index((nr as usize, nc as usize));
            if j != i && !out.contains(&j) {
                out.push(j);
            }
        }
        out
    }

    /// Every directed `(source, sink)` pair, source-major.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|i| self.neighbors(i).into_iter().map(move |j| (i, j)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", deny_unknown_fields)]
pub enum CurveSource {
    Analytic(CurveParams),
    File { path: PathBuf },
}

impl Default for CurveSource {
    fn default() -> Self {
        CurveSource::Analytic(CurveParams::default())
    }
}

impl CurveSource {
    pub fn load(&self) -> Result<BehavioralCurves> {
        match self {
            CurveSource::Analytic(p) => default_curves(p),
            CurveSource::File { path } => BehavioralCurves::load(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirConfig {
    pub topology: GridTopology,
    /// Seed of the weight assignment (and of the variation draw unless
    /// `variation_seed` is set).
    pub seed: u64,
    pub variation_seed: Option<u64>,
    pub variation_std: f64,
    pub curves: CurveSource,
    /// Excitatory word through which input pulses are integrated.
    pub input_gain_word: u8,
    pub input_channels: usize,
    pub micro_dt: f64,
    pub input_step: f64,
    pub single_vco_mode: bool,
    pub sigma_max: f64,
    pub tap_delay: f64,
    pub initial_voltage: f64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        ReservoirConfig {
            topology: GridTopology::open(10, 10),
            seed: 0,
            variation_seed: None,
            variation_std: 0.0,
            curves: CurveSource::default(),
            input_gain_word: 7,
            input_channels: 1,
            micro_dt: MICRO_DT,
            input_step: INPUT_STEP,
            single_vco_mode: false,
            sigma_max: DEFAULT_SIGMA_MAX,
            tap_delay: DEFAULT_TAP_DELAY,
            initial_voltage: ControlVoltage::REST.volts(),
        }
    }
}

impl ReservoirConfig {
    pub fn grid(rows: usize, cols: usize) -> Self {
        ReservoirConfig {
            topology: GridTopology::open(rows, cols),
            ..Default::default()
        }
    }

    /// Micro-steps per input step.
    pub fn steps_per_input(&self) -> Result<usize> {
        let ratio = self.input_step / self.micro_dt;
        let steps = ratio.round();
        if !(steps >= 1.0 && (ratio - steps).abs() <= 1e-9 * ratio) {
            return Err(Error::InvalidConfig(format!(
                "input_step {} is not an integer multiple of micro_dt {}",
                self.input_step, self.micro_dt
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.topology.rows == 0 || self.topology.cols == 0 {
            return bad("grid needs at least one row and one column".into());
        }
        if !(self.micro_dt > 0.0 && self.micro_dt.is_finite()) {
            return bad(format!("micro_dt = {} must be positive", self.micro_dt));
        }
        self.steps_per_input()?;
        if self.input_channels == 0 {
            return bad("at least one input channel is required".into());
        }
        if self.input_gain_word > 15 {
            return bad(format!("input_gain_word {} exceeds 4 bits", self.input_gain_word));
        }
        if !(self.variation_std >= 0.0 && self.variation_std.is_finite()) {
            return bad(format!("variation_std = {} must be >= 0", self.variation_std));
        }
        if !(self.sigma_max > 0.0) {
            return bad(format!("sigma_max = {} must be positive", self.sigma_max));
        }
        if !(0.0..=1.0).contains(&self.initial_voltage) {
            return bad(format!("initial_voltage = {} outside [0, 1] V", self.initial_voltage));
        }
        if INPUT_FULL_SCALE_HZ * self.micro_dt >= 1.0 || MAX_VCO_HZ * self.micro_dt >= 1.0 {
            return bad(format!("micro_dt = {} too coarse for one edge per step", self.micro_dt));
        }
        Ok(())
    }
}

/// Converts a normalized input value to a pulse frequency.
pub fn input_frequency(u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidParams(format!("input {u} outside the normalized range [0, 1]")));
    }
    Ok(u * INPUT_FULL_SCALE_HZ)
}

/// Counter readings of all neurons at the end of one input step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSample {
    pub c_neg: Vec<u32>,
    pub c_pos: Vec<u32>,
}

impl StateSample {
    pub fn len(&self) -> usize {
        self.c_pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_pos.is_empty()
    }

    /// `c_i = c_ext,n(i) − c_ext,p(i)`.
    #[inline]
    pub fn value(&self, i: usize) -> i64 {
        self.c_neg[i] as i64 - self.c_pos[i] as i64
    }

    pub fn values(&self) -> Vec<i64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }
}

/// Column-per-input-step record of a run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StateMatrix {
    pub neurons: usize,
    pub samples: Vec<StateSample>,
}

impl StateMatrix {
    pub fn steps(&self) -> usize {
        self.samples.len()
    }

    /// `N × T` real matrix of columns `range`.
    pub fn to_dmatrix(&self, range: std::ops::Range<usize>) -> DMatrix<f64> {
        let cols = &self.samples[range];
        DMatrix::from_fn(self.neurons, cols.len(), |i, t| cols[t].value(i) as f64)
    }

    pub fn append(&mut self, other: StateMatrix) {
        if self.samples.is_empty() {
            self.neurons = other.neurons;
        }
        self.samples.extend(other.samples);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub state: NeuronState,
    pub pos: CounterState,
    pub neg: CounterState,
}

/// Fan-in slots per neuron: four neighbours plus the input channel.
const SLOTS: usize = 5;
/// Offset of the all-zero table; unused slots and silent sources read it.
const ZERO_TABLE: u32 = (2 * WEIGHT_WORDS * TABLE_POINTS) as u32;

#[derive(Debug, Clone, Copy)]
struct Link {
    /// Index into the edge buffer (neurons first, then input channels).
    source: u32,
    /// Offset of the integration table in the flat table buffer.
    table: u32,
}

const UNUSED: Link = Link {
    source: 0,
    table: ZERO_TABLE,
};

fn table_offset(word: u8, polarity: Polarity) -> u32 {
    let k = match polarity {
        Polarity::Excitatory => word as usize,
        Polarity::Inhibitory => WEIGHT_WORDS + word as usize,
    };
    (k * TABLE_POINTS) as u32
}

/// All integration tables back to back, followed by one table of zeros.
fn flat_integ_tables(curves: &BehavioralCurves) -> Vec<f64> {
    let mut flat = Vec::with_capacity(ZERO_TABLE as usize + TABLE_POINTS);
    for lut in curves.integ_exc.iter().chain(&curves.integ_inh) {
        flat.extend_from_slice(lut.values());
    }
    flat.resize(ZERO_TABLE as usize + TABLE_POINTS, 0.0);
    flat
}

/// Read-only view shared by every neuron during one micro-step.
struct StepCtx<'a> {
    curves: &'a BehavioralCurves,
    integ: &'a [f64],
    variations: &'a [VariationFactors],
    fanin: &'a [[Link; SLOTS]],
    prev_edges: &'a [bool],
    dt: f64,
    single_vco: bool,
}

impl StepCtx<'_> {
    /// Integration, leakage, clamp, fire, count. Returns the positive edge.
    #[inline(always)]
    fn update(&self, i: usize, cell: &mut Cell) -> bool {
        let v = cell.state.v_cap.volts();
        let p = GridPoint::locate(v);
        let f = &self.variations[i];

        // Branch-free: a silent source selects the zero table. Bracketing
        // values are summed first and interpolated once.
        let (mut lo, mut hi) = (0.0, 0.0);
        for link in &self.fanin[i] {
            debug_assert!((link.source as usize) < self.prev_edges.len());
            debug_assert!(link.table as usize + TABLE_POINTS <= self.integ.len());
            // SAFETY: `assemble` only creates sources below the edge buffer
            // length and table offsets of whole tables inside `integ`;
            // `p.index() + 1 < TABLE_POINTS`.
            unsafe {
                let on = (*self.prev_edges.get_unchecked(link.source as usize) as u32).wrapping_neg();
                let base = (ZERO_TABLE ^ ((link.table ^ ZERO_TABLE) & on)) as usize + p.index();
                lo += *self.integ.get_unchecked(base);
                hi += *self.integ.get_unchecked(base + 1);
            }
        }
        let integ = p.lerp(lo, hi);
        let dv = f.integ_scale * integ + f.leak_scale * self.curves.leak.at(p);
        let v_cap = cell.state.v_cap.shifted(dv);

        let q = GridPoint::locate(v_cap.volts());
        let f_pos = (f.fire_scale * self.curves.fire_pos.at(q)).min(MAX_VCO_HZ);
        let (phase_pos, edge_pos) = cell.state.phase_pos.advance(PhaseIncrement::from_hz(f_pos, self.dt));
        cell.pos = cell.pos.step(edge_pos);
        if !self.single_vco {
            let f_neg = (f.fire_scale * self.curves.fire_neg.at(q)).min(MAX_VCO_HZ);
            let (phase_neg, edge_neg) = cell.state.phase_neg.advance(PhaseIncrement::from_hz(f_neg, self.dt));
            cell.state.phase_neg = phase_neg;
            cell.neg = cell.neg.step(edge_neg);
        }
        cell.state.v_cap = v_cap;
        cell.state.phase_pos = phase_pos;
        edge_pos
    }
}

#[derive(Clone)]
pub struct Reservoir {
    config: ReservoirConfig,
    curves: BehavioralCurves,
    variations: Vec<VariationFactors>,
    weights: WeightAssignment,
    cells: Vec<Cell>,
    edges: Vec<bool>,
    edges_next: Vec<bool>,
    integ_flat: Vec<f64>,
    fanin: Vec<[Link; SLOTS]>,
    degree: Vec<u8>,
    input_phases: Vec<Phase>,
    input_increments: Vec<PhaseIncrement>,
    steps_per_input: usize,
    pool: Option<Arc<rayon::ThreadPool>>,
    stall_reported: bool,
}

/// Draws weights and variation factors and assembles the reservoir at rest.
pub fn build_reservoir(config: &ReservoirConfig) -> Result<Reservoir> {
    config.validate()?;
    let curves = config.curves.load()?;
    let topo = config.topology;
    let n = topo.len();

    let mut weight_rng = rng::substream(config.seed, rng::WEIGHTS);
    let mut weights = WeightAssignment {
        rng_seed: config.seed,
        ..Default::default()
    };
    for (src, dst) in topo.directed_edges() {
        let g: f64 = StandardNormal.sample(&mut weight_rng);
        let w = quantize_weight(g, config.sigma_max)?;
        weights.links.insert((topo.site(src), topo.site(dst)), w);
    }

    let mut var_rng = rng::substream(config.variation_seed.unwrap_or(config.seed), rng::VARIATION);
    let variations = (0..n)
        .map(|_| VariationFactors::sample(config.variation_std, &mut var_rng))
        .collect::<Result<Vec<_>>>()?;

    Reservoir::assemble(config.clone(), curves, variations, weights)
}

impl Reservoir {
    /// Assembles a reservoir from explicit parts (e.g. a weight file).
    pub fn assemble(
        config: ReservoirConfig,
        curves: BehavioralCurves,
        variations: Vec<VariationFactors>,
        weights: WeightAssignment,
    ) -> Result<Self> {
        config.validate()?;
        let topo = config.topology;
        let n = topo.len();
        if variations.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} variation factors for {n} neurons",
                variations.len()
            )));
        }
        for &(src, dst) in weights.links.keys() {
            let (si, di) = (topo.index(src), topo.index(dst));
            if src.0 >= topo.rows || src.1 >= topo.cols || dst.0 >= topo.rows || dst.1 >= topo.cols
                || !topo.neighbors(si).contains(&di)
            {
                return Err(Error::InvalidConfig(format!("{src:?}->{dst:?} is not a 4-neighbour link")));
            }
        }

        let channels = config.input_channels;
        let input_table = table_offset(config.input_gain_word, Polarity::Excitatory);
        let mut fanin = Vec::with_capacity(n);
        let mut degree = Vec::with_capacity(n);
        for sink in 0..n {
            let mut slots = [UNUSED; SLOTS];
            let mut k = 0;
            for src in topo.neighbors(sink) {
                if let Some(w) = weights.get(topo.site(src), topo.site(sink)) {
                    slots[k] = Link {
                        source: src as u32,
                        table: table_offset(w.word(), w.polarity),
                    };
                    k += 1;
                }
            }
            degree.push(k as u8);
            slots[SLOTS - 1] = Link {
                source: (n + sink % channels) as u32,
                table: input_table,
            };
            fanin.push(slots);
        }
        let steps_per_input = config.steps_per_input()?;
        let initial = Cell {
            state: NeuronState::at_voltage(config.initial_voltage),
            pos: CounterState::default(),
            neg: CounterState::default(),
        };
        let integ_flat = flat_integ_tables(&curves);
        Ok(Reservoir {
            curves,
            variations,
            weights,
            cells: vec![initial; n],
            edges: vec![false; n + channels],
            edges_next: vec![false; n + channels],
            integ_flat,
            fanin,
            degree,
            input_phases: vec![Phase::default(); channels],
            input_increments: vec![PhaseIncrement::default(); channels],
            steps_per_input,
            pool: None,
            stall_reported: false,
            config,
        })
    }

    /// Runs the per-neuron update on a dedicated pool of `workers` threads.
    /// Results do not depend on the worker count.
    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        self.pool = if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Some(Arc::new(pool))
        } else {
            None
        };
        Ok(self)
    }

    pub fn workers(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn config(&self) -> &ReservoirConfig {
        &self.config
    }

    pub fn curves(&self) -> &BehavioralCurves {
        &self.curves
    }

    pub fn variations(&self) -> &[VariationFactors] {
        &self.variations
    }

    pub fn weights(&self) -> &WeightAssignment {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Positive-VCO edges emitted in the last micro-step.
    pub fn positive_edges(&self) -> &[bool] {
        &self.edges[..self.cells.len()]
    }

    /// Number of incoming connections of neuron `i`.
    pub fn in_degree(&self, i: usize) -> usize {
        self.degree[i] as usize
    }

    pub fn steps_per_input(&self) -> usize {
        self.steps_per_input
    }

    /// Back to the initial condition: rest voltage, zero phases and counters.
    pub fn reset(&mut self) {
        self.set_uniform_voltage(self.config.initial_voltage);
    }

    /// Resets dynamics with every neuron at voltage `v`.
    pub fn set_uniform_voltage(&mut self, v: f64) {
        let cell = Cell {
            state: NeuronState::at_voltage(v),
            pos: CounterState::default(),
            neg: CounterState::default(),
        };
        self.cells.iter_mut().for_each(|c| *c = cell);
        self.edges.iter_mut().for_each(|e| *e = false);
        self.input_phases.iter_mut().for_each(|p| *p = Phase::default());
    }

    pub fn sample(&self) -> StateSample {
        StateSample {
            c_neg: self.cells.iter().map(|c| c.neg.observe()).collect(),
            c_pos: self.cells.iter().map(|c| c.pos.observe()).collect(),
        }
    }

    /// Sets the per-channel input frequencies used by subsequent micro-steps.
    pub fn set_input_frequencies(&mut self, hz: &[f64]) -> Result<()> {
        if hz.len() != self.input_increments.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} input frequencies for {} channels",
                hz.len(),
                self.input_increments.len()
            )));
        }
        for (inc, &f) in self.input_increments.iter_mut().zip(hz) {
            if !(0.0..MAX_VCO_HZ).contains(&f) {
                return Err(Error::InvalidParams(format!("input frequency {f} Hz outside [0, 100 MHz)")));
            }
            *inc = PhaseIncrement::from_hz(f, self.config.micro_dt);
        }
        Ok(())
    }

    /// One 10 ns step with the current input frequencies.
    pub fn micro_step(&mut self) {
        match self.pool.clone() {
            Some(pool) => pool.install(|| self.step(true)),
            None => self.step(false),
        }
    }

    /// Writes this step's input edges behind the neuron edges of the
    /// previous step.
    fn advance_inputs(&mut self) {
        let n = self.cells.len();
        for ((phase, inc), edge) in self
            .input_phases
            .iter_mut()
            .zip(&self.input_increments)
            .zip(self.edges[n..].iter_mut())
        {
            let (next, e) = phase.advance(*inc);
            *phase = next;
            *edge = e;
        }
    }

    fn step(&mut self, parallel: bool) {
        self.advance_inputs();
        let Reservoir {
            config,
            curves,
            variations,
            cells,
            edges,
            edges_next,
            integ_flat,
            fanin,
            ..
        } = self;
        let ctx = StepCtx {
            curves,
            integ: integ_flat,
            variations,
            fanin,
            prev_edges: edges,
            dt: config.micro_dt,
            single_vco: config.single_vco_mode,
        };
        let n = cells.len();
        if parallel {
            let workers = rayon::current_num_threads().max(1);
            let chunk = cells.len().div_ceil(workers).max(1);
            cells
                .par_chunks_mut(chunk)
                .zip(edges_next[..n].par_chunks_mut(chunk))
                .enumerate()
                .for_each(|(k, (cells, edges))| {
                    let base = k * chunk;
                    for (j, (cell, edge)) in cells.iter_mut().zip(edges.iter_mut()).enumerate() {
                        *edge = ctx.update(base + j, cell);
                    }
                });
        } else {
            for (i, (cell, edge)) in cells.iter_mut().zip(edges_next[..n].iter_mut()).enumerate() {
                *edge = ctx.update(i, cell);
            }
        }
        std::mem::swap(edges, edges_next);
    }

    /// Holds `u` (one value per channel) for one input step and returns the
    /// counter sample taken at its final micro-step.
    pub fn run_input_step(&mut self, u: &[f64]) -> Result<StateSample> {
        let hz = u.iter().map(|&x| input_frequency(x)).collect::<Result<Vec<_>>>()?;
        self.set_input_frequencies(&hz)?;
        match self.pool.clone() {
            Some(pool) => pool.install(|| {
                for _ in 0..self.steps_per_input {
                    self.step(true);
                }
            }),
            None => {
                for _ in 0..self.steps_per_input {
                    self.step(false);
                }
            }
        }
        self.check_stall();
        Ok(self.sample())
    }

    /// Runs consecutive input steps; state carries over between calls.
    pub fn run_sequence<R: AsRef<[f64]>>(&mut self, inputs: &[R]) -> Result<StateMatrix> {
        let mut samples = Vec::with_capacity(inputs.len());
        for u in inputs {
            samples.push(self.run_input_step(u.as_ref())?);
        }
        Ok(StateMatrix {
            neurons: self.len(),
            samples,
        })
    }

    /// Convenience for single-channel scalar input sequences.
    pub fn run_scalar_sequence(&mut self, inputs: &[f64]) -> Result<StateMatrix> {
        let rows: Vec<[f64; 1]> = inputs.iter().map(|&u| [u]).collect();
        self.run_sequence(&rows)
    }

    fn check_stall(&mut self) {
        if self.stall_reported {
            return;
        }
        if let Some(i) = self.cells.iter().position(|c| c.pos.stalled() || c.neg.stalled()) {
            log::warn!(
                "neuron {i}: running count exceeds 2^16 clock cycles; the VCO looks stalled (v_cap = {:.4} V)",
                self.cells[i].state.v_cap.volts()
            );
            self.stall_reported = true;
        }
    }
}
