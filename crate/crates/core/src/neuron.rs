//! Behavioral model of one dual-VCO neuron: Leakage, Integration and Fire.
//!
//! Every characteristic is a piecewise-linear lookup table over the control
//! voltage `V_cap` in `[0, 1]` V. The default tables are generated
//! analytically from [`CurveParams`]; measured curves can be loaded from a
//! plain-text file instead (see [`BehavioralCurves::read_from`]).

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points per lookup table, spread uniformly over `[V_MIN, V_MAX]`.
pub const TABLE_POINTS: usize = 256;
/// Number of 4-bit weight words.
pub const WEIGHT_WORDS: usize = 16;

pub const V_MIN: f64 = 0.0;
pub const V_MAX: f64 = 1.0;

/// System clock of the counters; also the simulation step rate.
pub const CLOCK_HZ: f64 = 100e6;
/// Default micro-step (one clock period).
pub const MICRO_DT: f64 = 10e-9;
/// Ceiling applied to scaled VCO frequencies so that at most one rising edge
/// can occur per 10 ns step.
pub const MAX_VCO_HZ: f64 = 99.9e6;

const CURVE_HEADER: &str = "vco-curves v1";
const LEAK_ZERO_TOL: f64 = 1e-9;

/// Internal control voltage of a neuron, clamped to the supply rails.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ControlVoltage(f64);

impl ControlVoltage {
    pub const REST: ControlVoltage = ControlVoltage(0.5);

    /// Clamps `volts` into `[0, 1]`. NaN collapses to the lower rail.
    pub fn new(volts: f64) -> Self {
        if volts.is_nan() {
            return ControlVoltage(V_MIN);
        }
        ControlVoltage(volts.clamp(V_MIN, V_MAX))
    }

    #[inline]
    pub fn volts(self) -> f64 {
        self.0
    }

    /// Applies a voltage change and clamps.
    #[inline]
    pub fn shifted(self, delta: f64) -> Self {
        ControlVoltage::new(self.0 + delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Excitatory,
    Inhibitory,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Excitatory => "excitatory",
            Polarity::Inhibitory => "inhibitory",
        }
    }
}

impl std::str::FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "excitatory" | "exc" => Ok(Polarity::Excitatory),
            "inhibitory" | "inh" => Ok(Polarity::Inhibitory),
            other => Err(format!("unknown polarity {other:?}")),
        }
    }
}

/// Parameters of the analytic default curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveParams {
    /// Step the leak table is expressed for (seconds).
    pub step: f64,
    /// Leak time constant towards the rest voltage (seconds).
    pub leak_tau: f64,
    /// Saturation frequency of both VCO logistics (Hz).
    pub f_max: f64,
    /// Logistic slope of the VCO curves (1/V).
    pub fire_slope: f64,
    /// Half-maximum voltage of the positive VCO.
    pub pos_midpoint: f64,
    /// Half-maximum voltage of the negative VCO.
    pub neg_midpoint: f64,
    /// Peak integration step of the widest (word 15) pulse (volts).
    pub integ_amplitude: f64,
}

impl Default for CurveParams {
    fn default() -> Self {
        CurveParams {
            step: MICRO_DT,
            leak_tau: 100e-6,
            f_max: 40e6,
            fire_slope: 6.0,
            pos_midpoint: 0.6,
            neg_midpoint: 0.4,
            integ_amplitude: 8e-3,
        }
    }
}

impl CurveParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.f_max > 0.0 && self.f_max < CLOCK_HZ) {
            return bad(format!(
                "f_max = {} Hz must lie in (0, 100 MHz) so each VCO fires at most once per step",
                self.f_max
            ));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step = {} must be positive", self.step));
        }
        if !(self.leak_tau > self.step && self.leak_tau.is_finite()) {
            return bad(format!(
                "leak_tau = {} must exceed the step so the leak cannot overshoot rest",
                self.leak_tau
            ));
        }
        if !(self.fire_slope > 0.0 && self.fire_slope.is_finite()) {
            return bad(format!("fire_slope = {} must be positive", self.fire_slope));
        }
        for (name, v) in [("pos_midpoint", self.pos_midpoint), ("neg_midpoint", self.neg_midpoint)] {
            if !(V_MIN..=V_MAX).contains(&v) {
                return bad(format!("{name} = {v} outside the [0, 1] V rail"));
            }
        }
        if !(self.integ_amplitude > 0.0 && self.integ_amplitude < 0.5) {
            return bad(format!(
                "integ_amplitude = {} must lie in (0, 0.5) V",
                self.integ_amplitude
            ));
        }
        Ok(())
    }
}

/// Piecewise-linear table over `[0, 1]` V with [`TABLE_POINTS`] samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Lut {
    values: Box<[f64]>,
}

/// Precomputed interpolation position, shared by every table since they all
/// use the same voltage grid.
#[derive(Debug, Clone, Copy)]
pub struct GridPoint {
    idx: usize,
    frac: f64,
}

impl GridPoint {
    #[inline]
    pub fn locate(v: f64) -> Self {
        // max/min (not clamp) so NaN maps to the lower rail
        let x = v.max(V_MIN).min(V_MAX) * (TABLE_POINTS - 1) as f64;
        // SAFETY: x is finite and within [0, 255], so it fits in u32.
        let idx = unsafe { x.to_int_unchecked::<u32>() }.min(TABLE_POINTS as u32 - 2) as usize;
        GridPoint {
            idx,
            frac: x - idx as f64,
        }
    }

    /// Lower grid index of the bracketing interval.
    #[inline]
    pub fn index(&self) -> usize {
        self.idx
    }

    /// Interpolates between the values at `index()` and `index() + 1`.
    #[inline]
    pub fn lerp(&self, lo: f64, hi: f64) -> f64 {
        lo + self.frac * (hi - lo)
    }
}

/// Voltage of grid point `i`.
#[inline]
pub fn grid_voltage(i: usize) -> f64 {
    i as f64 / (TABLE_POINTS - 1) as f64
}

impl Lut {
    pub fn from_fn(f: impl Fn(f64) -> f64) -> Self {
        Lut {
            values: (0..TABLE_POINTS).map(|i| f(grid_voltage(i))).collect(),
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != TABLE_POINTS {
            return Err(Error::InvalidParams(format!(
                "table needs {TABLE_POINTS} points, got {}",
                values.len()
            )));
        }
        Ok(Lut {
            values: values.into_boxed_slice(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, p: GridPoint) -> f64 {
        let pair = &self.values[p.idx..p.idx + 2];
        pair[0] + p.frac * (pair[1] - pair[0])
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        self.at(GridPoint::locate(v))
    }
}

/// Lookup-table description of Leakage, Integration and Fire.
#[derive(Debug, Clone, PartialEq)]
pub struct BehavioralCurves {
    /// ΔV per step due to leakage.
    pub leak: Lut,
    /// ΔV per excitatory pulse, indexed by weight word.
    pub integ_exc: Vec<Lut>,
    /// ΔV per inhibitory pulse, indexed by weight word.
    pub integ_inh: Vec<Lut>,
    /// Positive VCO frequency (Hz).
    pub fire_pos: Lut,
    /// Negative VCO frequency (Hz).
    pub fire_neg: Lut,
}

/// Builds the analytic default curves.
pub fn default_curves(params: &CurveParams) -> Result<BehavioralCurves> {
    params.validate()?;
    let p = params.clone();
    let leak_gain = p.step / p.leak_tau;
    let leak = Lut::from_fn(|v| -leak_gain * (v - 0.5));
    let fire_pos = Lut::from_fn(|v| p.f_max / (1.0 + (-p.fire_slope * (v - p.pos_midpoint)).exp()));
    let fire_neg = Lut::from_fn(|v| p.f_max / (1.0 + (p.fire_slope * (v - p.neg_midpoint)).exp()));
    let family = |sign: f64| -> Vec<Lut> {
        (0..WEIGHT_WORDS)
            .map(|w| {
                let scale = p.integ_amplitude * (1 + w) as f64 / WEIGHT_WORDS as f64;
                Lut::from_fn(|v| sign * scale * 4.0 * v * (1.0 - v))
            })
            .collect()
    };
    let curves = BehavioralCurves {
        leak,
        integ_exc: family(1.0),
        integ_inh: family(-1.0),
        fire_pos,
        fire_neg,
    };
    curves.validate()?;
    Ok(curves)
}

impl BehavioralCurves {
    /// Checks every structural invariant of the tables.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.integ_exc.len() != WEIGHT_WORDS || self.integ_inh.len() != WEIGHT_WORDS {
            return bad("integration families need 16 tables each".into());
        }
        let all = std::iter::once(&self.leak)
            .chain([&self.fire_pos, &self.fire_neg])
            .chain(self.integ_exc.iter())
            .chain(self.integ_inh.iter());
        if all.flat_map(|t| t.values.iter()).any(|x| !x.is_finite()) {
            return bad("non-finite table entry".into());
        }

        let rest = self.leak.eval(0.5);
        if rest.abs() > LEAK_ZERO_TOL {
            return bad(format!("leak(0.5 V) = {rest:e}, expected 0"));
        }
        for (i, &dv) in self.leak.values.iter().enumerate() {
            let v = grid_voltage(i);
            if (v < 0.5 && dv <= 0.0) || (v > 0.5 && dv >= 0.0) {
                return bad(format!("leak({v:.4} V) = {dv:e} does not pull towards 0.5 V"));
            }
        }

        let (pos, neg) = (&self.fire_pos.values, &self.fire_neg.values);
        if pos.windows(2).any(|w| w[1] < w[0]) {
            return bad("positive VCO curve is not non-decreasing".into());
        }
        if neg.windows(2).any(|w| w[1] > w[0]) {
            return bad("negative VCO curve is not non-increasing".into());
        }
        for (i, (&fp, &fneg)) in pos.iter().zip(neg.iter()).enumerate() {
            if fp < 0.0 || fneg < 0.0 || fp + fneg <= 0.0 {
                return bad(format!("VCO frequencies at {:.4} V must be non-negative with a positive sum", grid_voltage(i)));
            }
            if fp >= CLOCK_HZ || fneg >= CLOCK_HZ {
                return bad(format!("VCO frequency at {:.4} V reaches the 100 MHz clock", grid_voltage(i)));
            }
        }

        for (family, sign) in [(&self.integ_exc, 1.0), (&self.integ_inh, -1.0)] {
            for (w, table) in family.iter().enumerate() {
                if table.values.iter().any(|&dv| sign * dv < 0.0) {
                    return bad(format!("integration table word {w} has the wrong sign"));
                }
            }
            for w in 1..WEIGHT_WORDS {
                let (lo, hi) = (&family[w - 1].values, &family[w].values);
                if lo.iter().zip(hi.iter()).any(|(a, b)| b.abs() < a.abs()) {
                    return bad(format!("integration magnitude decreases from word {} to {w}", w - 1));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn integ_table(&self, word: u8, polarity: Polarity) -> &Lut {
        match polarity {
            Polarity::Excitatory => &self.integ_exc[word as usize],
            Polarity::Inhibitory => &self.integ_inh[word as usize],
        }
    }

    /// Writes the curves in the `vco-curves v1` text format.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let mut s = String::with_capacity(TABLE_POINTS * WEIGHT_WORDS * 2 * 40);
        writeln!(s, "{CURVE_HEADER}").unwrap();
        for i in 0..TABLE_POINTS {
            writeln!(
                s,
                "{} {} {} {}",
                grid_voltage(i),
                self.leak.values[i],
                self.fire_pos.values[i],
                self.fire_neg.values[i]
            )
            .unwrap();
        }
        for family in [&self.integ_exc, &self.integ_inh] {
            for (w, table) in family.iter().enumerate() {
                for (i, dv) in table.values.iter().enumerate() {
                    writeln!(s, "{w} {} {dv}", grid_voltage(i)).unwrap();
                }
            }
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    /// Parses a `vco-curves v1` file: 256 rows `v leak f_pos f_neg`, then
    /// 16×256 rows `word v dv` for the excitatory family followed by the same
    /// for the inhibitory family. The grid must match [`grid_voltage`].
    pub fn read_from(input: impl Read, origin: &Path) -> Result<Self> {
        let lines: Vec<String> = BufReader::new(input)
            .lines()
            .collect::<std::io::Result<_>>()?;
        let mut rows = lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let malformed = |line: usize, reason: String| Error::malformed(origin, format!("line {}: {reason}", line + 1));

        match rows.next() {
            Some((_, l)) if l.trim() == CURVE_HEADER => {}
            _ => return Err(Error::malformed(origin, format!("missing `{CURVE_HEADER}` header"))),
        }

        let mut numbers = |expect: usize| -> Result<(usize, Vec<f64>)> {
            let (ln, line) = rows
                .next()
                .ok_or_else(|| Error::malformed(origin, "unexpected end of file"))?;
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| malformed(ln, format!("{t:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != expect {
                return Err(malformed(ln, format!("expected {expect} columns, got {}", vals.len())));
            }
            Ok((ln, vals))
        };
        let check_grid = |ln: usize, i: usize, v: f64| -> Result<()> {
            if (v - grid_voltage(i)).abs() > 1e-9 {
                return Err(malformed(ln, format!("voltage {v} off the grid (expected {})", grid_voltage(i))));
            }
            Ok(())
        };

        let mut leak = Vec::with_capacity(TABLE_POINTS);
        let mut fire_pos = Vec::with_capacity(TABLE_POINTS);
        let mut fire_neg = Vec::with_capacity(TABLE_POINTS);
        for i in 0..TABLE_POINTS {
            let (ln, vals) = numbers(4)?;
            check_grid(ln, i, vals[0])?;
            leak.push(vals[1]);
            fire_pos.push(vals[2]);
            fire_neg.push(vals[3]);
        }
        let mut families = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut family = Vec::with_capacity(WEIGHT_WORDS);
            for w in 0..WEIGHT_WORDS {
                let mut table = Vec::with_capacity(TABLE_POINTS);
                for i in 0..TABLE_POINTS {
                    let (ln, vals) = numbers(3)?;
                    if vals[0] != w as f64 {
                        return Err(malformed(ln, format!("expected word {w}, got {}", vals[0])));
                    }
                    check_grid(ln, i, vals[1])?;
                    table.push(vals[2]);
                }
                family.push(Lut::from_values(table)?);
            }
            families.push(family);
        }
        if let Some((ln, _)) = rows.next() {
            return Err(malformed(ln, "trailing data".into()));
        }
        let integ_inh = families.pop().unwrap();
        let integ_exc = families.pop().unwrap();
        let curves = BehavioralCurves {
            leak: Lut::from_values(leak)?,
            integ_exc,
            integ_inh,
            fire_pos: Lut::from_values(fire_pos)?,
            fire_neg: Lut::from_values(fire_neg)?,
        };
        curves
            .validate()
            .map_err(|e| Error::malformed(origin, e.to_string()))?;
        Ok(curves)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(file, path)
    }
}

/// Per-neuron multiplicative deviation of each curve family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationFactors {
    pub leak_scale: f64,
    pub integ_scale: f64,
    pub fire_scale: f64,
}

impl Default for VariationFactors {
    fn default() -> Self {
        VariationFactors::NOMINAL
    }
}

impl VariationFactors {
    pub const NOMINAL: VariationFactors = VariationFactors {
        leak_scale: 1.0,
        integ_scale: 1.0,
        fire_scale: 1.0,
    };
    /// Draws at or below this value are rejected and redrawn.
    pub const MIN_SCALE: f64 = 0.05;

    /// Draws three independent factors from Normal(1, `std`).
    pub fn sample(std: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(std >= 0.0 && std.is_finite()) {
            return Err(Error::InvalidParams(format!("variation std = {std} must be >= 0")));
        }
        if std == 0.0 {
            return Ok(Self::NOMINAL);
        }
        let normal = Normal::new(1.0, std).map_err(|e| Error::InvalidParams(e.to_string()))?;
        let mut draw = || loop {
            let x: f64 = normal.sample(rng);
            if x > Self::MIN_SCALE {
                break x;
            }
        };
        Ok(VariationFactors {
            leak_scale: draw(),
            integ_scale: draw(),
            fire_scale: draw(),
        })
    }
}

/// ΔV due to leakage over one step (caller clamps).
#[inline]
pub fn leak_delta(v: ControlVoltage, curves: &BehavioralCurves, factors: &VariationFactors) -> f64 {
    factors.leak_scale * curves.leak.eval(v.volts())
}

/// ΔV caused by one received pulse with weight `word` (caller clamps).
#[inline]
pub fn integrate_delta(
    v: ControlVoltage,
    word: u8,
    polarity: Polarity,
    curves: &BehavioralCurves,
    factors: &VariationFactors,
) -> f64 {
    debug_assert!((word as usize) < WEIGHT_WORDS);
    factors.integ_scale * curves.integ_table(word, polarity).eval(v.volts())
}

/// VCO frequencies `(f_pos, f_neg)` in Hz, scaled and clamped below 100 MHz.
#[inline]
pub fn fire_frequencies(v: ControlVoltage, curves: &BehavioralCurves, factors: &VariationFactors) -> (f64, f64) {
    let p = GridPoint::locate(v.volts());
    (
        (factors.fire_scale * curves.fire_pos.at(p)).min(MAX_VCO_HZ),
        (factors.fire_scale * curves.fire_neg.at(p)).min(MAX_VCO_HZ),
    )
}

/// Fractional cycle position of an oscillator, in units of 2⁻⁶⁴ cycle.
///
/// Fixed point makes wrap detection exact: a carry out of the 64-bit add is
/// exactly one rising edge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Phase(pub u64);

const CYCLE: f64 = 18_446_744_073_709_551_616.0; // 2^64
const HALF_CYCLE: f64 = 9_223_372_036_854_775_808.0; // 2^63
/// Largest phase advance per step accepted by [`PhaseIncrement::from_hz`].
const MAX_STEP_CYCLES: f64 = 0.9999;

/// Guard added to every non-zero increment. Covers the f64 rounding of
/// `f·dt` so that a frequency whose edges land exactly on a step boundary
/// fires on that step rather than one step late.
const INCREMENT_GUARD: u64 = 1 << 13;

impl Phase {
    pub fn from_cycles(cycles: f64) -> Self {
        let c = cycles.rem_euclid(1.0);
        Phase((c * CYCLE) as u64)
    }

    pub fn cycles(self) -> f64 {
        self.0 as f64 / CYCLE
    }

    /// Advances by `increment`; returns the new phase and whether it wrapped.
    #[inline]
    pub fn advance(self, increment: PhaseIncrement) -> (Phase, bool) {
        let (next, wrapped) = self.0.overflowing_add(increment.0);
        (Phase(next), wrapped)
    }
}

/// Per-step phase advance `f·dt` in units of 2⁻⁶⁴ cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseIncrement(pub u64);

impl PhaseIncrement {
    /// Converts a frequency to a per-step increment. Requires `0 <= f·dt < 1`.
    #[inline]
    pub fn from_hz(f: f64, dt: f64) -> Self {
        let ratio = f * dt;
        debug_assert!((0.0..1.0).contains(&ratio), "f·dt = {ratio} outside [0, 1)");
        if !(ratio > 0.0) {
            return PhaseIncrement(0);
        }
        let half = ratio.min(MAX_STEP_CYCLES) * HALF_CYCLE;
        // SAFETY: half lies in (0, 2^63), which fits in i64.
        let units = (unsafe { half.to_int_unchecked::<i64>() } as u64) << 1;
        PhaseIncrement(units + INCREMENT_GUARD)
    }

    pub fn cycles(self) -> f64 {
        self.0 as f64 / CYCLE
    }
}

/// Dynamic state of one neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub v_cap: ControlVoltage,
    pub phase_pos: Phase,
    pub phase_neg: Phase,
}

impl NeuronState {
    pub fn at_voltage(v: f64) -> Self {
        NeuronState {
            v_cap: ControlVoltage::new(v),
            phase_pos: Phase::default(),
            phase_neg: Phase::default(),
        }
    }
}

impl Default for NeuronState {
    fn default() -> Self {
        NeuronState::at_voltage(ControlVoltage::REST.volts())
    }
}

/// Advances both VCO phases by one step; returns the new state and the
/// rising-edge count (0 or 1) of each VCO.
#[inline]
pub fn advance_phase(state: NeuronState, f_pos: f64, f_neg: f64, dt: f64) -> (NeuronState, u32, u32) {
    let (phase_pos, ep) = state.phase_pos.advance(PhaseIncrement::from_hz(f_pos, dt));
    let (phase_neg, en) = state.phase_neg.advance(PhaseIncrement::from_hz(f_neg, dt));
    (
        NeuronState {
            v_cap: state.v_cap,
            phase_pos,
            phase_neg,
        },
        ep as u32,
        en as u32,
    )
}
