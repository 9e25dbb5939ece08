//! Independent oracles and randomized property checks shared by the
//! integration tests and the acceptance runner.

#![allow(dead_code)]

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikeres::config::ExperimentConfig;
use spikeres::counter::{counter_step, CounterState};
use spikeres::digits::{self, decide, DecisionRule, DigitsOptions, FoldPlan, CLASSES};
use spikeres::neuron::{
    advance_phase, default_curves, fire_frequencies, integrate_delta, leak_delta, ControlVoltage, CurveParams,
    NeuronState, Phase, PhaseIncrement, Polarity, VariationFactors, MICRO_DT, WEIGHT_WORDS,
};
use spikeres::readout::{fit, squared_error, squared_error_gradient, Ridge, TrainingBatch};
use spikeres::reservoir::{build_reservoir, Boundary, CurveSource, GridTopology, ReservoirConfig};
use spikeres::tasks::{fit_and_score, ScoreOptions};
use spikeres::weighting::quantize_weight;

/// Exact phase resolution of the event-driven oracle: 1e-8 cycle, so a
/// frequency of `hz` advances exactly `hz` units per 10 ns step.
const UNITS_PER_CYCLE: u64 = 100_000_000;

/// Piecewise-constant VCO profile: `(frequency in Hz, steps)` segments.
pub type Profile = Vec<(u64, u64)>;

pub fn random_profile(rng: &mut impl Rng) -> Profile {
    let segments = rng.random_range(1..=100);
    (0..segments)
        .map(|_| (rng.random_range(1_000_000..=40_000_000), rng.random_range(1..=2000)))
        .collect()
}

/// Latches `(step, c_ext)` of the stepped phase accumulator and counter.
pub fn stepped_latches(profile: &Profile) -> Vec<(u64, u32)> {
    let mut phase = Phase::default();
    let mut counter = CounterState::default();
    let mut out = Vec::new();
    let mut t = 0u64;
    for &(hz, steps) in profile {
        let inc = PhaseIncrement::from_hz(hz as f64, MICRO_DT);
        for _ in 0..steps {
            let (next, edge) = phase.advance(inc);
            phase = next;
            counter = counter_step(counter, edge as u32);
            if edge {
                out.push((t, counter.c_ext));
            }
            t += 1;
        }
    }
    out
}

/// The same latches from an exact event-driven simulation: jump straight to
/// each VCO edge and read the clock edges elapsed since the previous one.
pub fn event_driven_latches(profile: &Profile) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut phase: u128 = 0;
    let mut start = 0u64;
    let mut last_edge: i64 = -1;
    for &(hz, steps) in profile {
        let hz = hz as u128;
        let mut offset = 0u64;
        loop {
            let to_wrap = UNITS_PER_CYCLE as u128 - phase;
            let wait = to_wrap.div_ceil(hz) as u64;
            if offset + wait > steps {
                phase += hz * (steps - offset) as u128;
                break;
            }
            offset += wait;
            phase = phase + hz * wait as u128 - UNITS_PER_CYCLE as u128;
            let t = start + offset - 1;
            out.push((t, (t as i64 - last_edge) as u32));
            last_edge = t as i64;
        }
        start += steps;
    }
    out
}

/// `W = D X⁺` through the SVD pseudo-inverse.
pub fn pinv_readout(x: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    d * x.clone().pseudo_inverse(1e-12).expect("pseudo-inverse")
}

pub fn finite_difference_gradient(w: &DMatrix<f64>, batch: &TrainingBatch, h: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(w.nrows(), w.ncols());
    for idx in 0..w.len() {
        let mut plus = w.clone();
        let mut minus = w.clone();
        plus[idx] += h;
        minus[idx] -= h;
        g[idx] = (squared_error(&plus, batch) - squared_error(&minus, batch)) / (2.0 * h);
    }
    g
}

pub fn relative_error(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).norm() / reference.norm().max(f64::MIN_POSITIVE)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(rand_distr::StandardNormal))
}

/// A random well-conditioned regression problem (`T ≥ 4N`).
pub fn regression_instance(rng: &mut impl Rng) -> TrainingBatch {
    let n = rng.random_range(1..=50);
    let t = rng.random_range((4 * n).max(8)..=500);
    let outputs = rng.random_range(1..=3);
    let x = gaussian_matrix(n, t, rng);
    let d = gaussian_matrix(outputs, t, rng);
    TrainingBatch::new(x, d).unwrap()
}

/// Worst relative errors over `cases` instances: `(fit vs pseudo-inverse,
/// analytic vs finite-difference gradient)`.
pub fn regression_oracle_errors(cases: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let batch = regression_instance(&mut rng);
        let model = fit(&batch, Ridge::Absolute(0.0), false).unwrap();
        let oracle = pinv_readout(&batch.x, &batch.d);
        worst.0 = worst.0.max(relative_error(&model.w_out, &oracle));

        let w = gaussian_matrix(batch.d.nrows(), batch.x.nrows(), &mut rng);
        let fd = finite_difference_gradient(&w, &batch, 1e-4);
        worst.1 = worst.1.max(relative_error(&squared_error_gradient(&w, &batch), &fd));
    }
    worst
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn curve_params() -> impl Strategy<Value = CurveParams> {
    (2.0..20.0f64, 10e6..60e6f64, 0.55..0.7f64, 0.3..0.45f64, 1e-3..0.3f64, 20e-6..500e-6f64).prop_map(
        |(fire_slope, f_max, pos_midpoint, neg_midpoint, integ_amplitude, leak_tau)| CurveParams {
            fire_slope,
            f_max,
            pos_midpoint,
            neg_midpoint,
            integ_amplitude,
            leak_tau,
            ..CurveParams::default()
        },
    )
}

/// Small, fast reservoir: 1 µs input steps on a grid up to 4×4.
fn small_config() -> impl Strategy<Value = ReservoirConfig> {
    (1usize..=4, 1usize..=4, any::<bool>(), any::<u64>(), 0.0..0.4f64, 0usize..16, 1e-3..0.2f64, 0.0..=1.0f64)
        .prop_map(|(rows, cols, torus, seed, var, word, amp, v0)| ReservoirConfig {
            topology: GridTopology {
                rows,
                cols,
                boundary: if torus { Boundary::Toroidal } else { Boundary::Open },
            },
            seed,
            variation_std: var,
            input_gain_word: word as u8,
            input_step: 1e-6,
            initial_voltage: v0,
            curves: CurveSource::Analytic(CurveParams {
                integ_amplitude: amp,
                ..CurveParams::default()
            }),
            ..ReservoirConfig::default()
        })
}

fn inputs(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, 1..=max)
}

pub fn voltage_clamp(cases: u32) -> Result<(), String> {
    check(cases, (small_config(), inputs(12)), |(cfg, u)| {
        let mut r = build_reservoir(&cfg).unwrap();
        for &x in &u {
            r.set_input_frequencies(&[spikeres::reservoir::input_frequency(x).unwrap()]).unwrap();
            for _ in 0..r.steps_per_input() {
                r.micro_step();
                for c in r.cells() {
                    let v = c.state.v_cap.volts();
                    prop_assert!((0.0..=1.0).contains(&v), "v_cap {v}");
                }
            }
        }
        Ok(())
    })
}

pub fn relaxation(cases: u32) -> Result<(), String> {
    check(cases, (curve_params(), 0.0..=1.0f64, 0.3..3.0f64), |(p, v0, leak)| {
        let curves = default_curves(&p).unwrap();
        let f = VariationFactors {
            leak_scale: leak,
            ..VariationFactors::NOMINAL
        };
        let mut v = ControlVoltage::new(v0);
        let steps = (12.0 * p.leak_tau / (leak * MICRO_DT)) as usize;
        for _ in 0..steps {
            let next = v.shifted(leak_delta(v, &curves, &f));
            prop_assert!((next.volts() - 0.5).abs() <= (v.volts() - 0.5).abs() + 1e-15);
            v = next;
        }
        prop_assert!((v.volts() - 0.5).abs() < 1e-3, "settled at {}", v.volts());
        Ok(())
    })
}

pub fn edge_count_exactness(cases: u32) -> Result<(), String> {
    check(
        cases,
        (1_000_000u64..=99_000_000, 1u64..=20_000, 0u64..UNITS_PER_CYCLE),
        |(hz, steps, start)| {
            // exact start phase, rounded up onto the fixed-point grid
            let p0 = ((start as u128) << 64).div_ceil(UNITS_PER_CYCLE as u128) as u64;
            let mut s = NeuronState::default();
            s.phase_pos = Phase(p0);
            let mut edges = 0u64;
            for _ in 0..steps {
                let (next, e, _) = advance_phase(s, hz as f64, 0.0, MICRO_DT);
                s = next;
                edges += e as u64;
            }
            let expected = (hz as u128 * steps as u128 + start as u128) / UNITS_PER_CYCLE as u128;
            prop_assert_eq!(edges as u128, expected);
            Ok(())
        },
    )
}

pub fn variation_linearity(cases: u32) -> Result<(), String> {
    check(
        cases,
        (0.0..=1.0f64, 0.05..3.0f64, 0.05..3.0f64, 0usize..WEIGHT_WORDS, any::<bool>()),
        |(v, ls, is, word, exc)| {
            let curves = default_curves(&CurveParams::default()).unwrap();
            let v = ControlVoltage::new(v);
            let pol = if exc { Polarity::Excitatory } else { Polarity::Inhibitory };
            let nominal = VariationFactors::NOMINAL;
            let f = VariationFactors {
                leak_scale: ls,
                integ_scale: is,
                ..nominal
            };
            prop_assert_eq!(leak_delta(v, &curves, &f), ls * leak_delta(v, &curves, &nominal));
            prop_assert_eq!(
                integrate_delta(v, word as u8, pol, &curves, &f),
                is * integrate_delta(v, word as u8, pol, &curves, &nominal)
            );
            Ok(())
        },
    )
}

pub fn curve_invariants(cases: u32) -> Result<(), String> {
    check(cases, (curve_params(), prop::collection::vec(0.0..=1.0f64, 2..40)), |(p, mut vs)| {
        let c = default_curves(&p).unwrap();
        vs.sort_by(f64::total_cmp);
        for w in vs.windows(2) {
            prop_assert!(c.fire_pos.eval(w[0]) <= c.fire_pos.eval(w[1]));
            prop_assert!(c.fire_neg.eval(w[0]) >= c.fire_neg.eval(w[1]));
        }
        for &v in &vs {
            let (fp, fn_) = (c.fire_pos.eval(v), c.fire_neg.eval(v));
            prop_assert!(fp + fn_ > 0.0 && fp < 100e6 && fn_ < 100e6);
            let l = c.leak.eval(v);
            if v < 0.499 {
                prop_assert!(l > 0.0);
            } else if v > 0.501 {
                prop_assert!(l < 0.0);
            }
            for w in 1..WEIGHT_WORDS {
                prop_assert!(c.integ_exc[w].eval(v).abs() >= c.integ_exc[w - 1].eval(v).abs());
                prop_assert!(c.integ_inh[w].eval(v).abs() >= c.integ_inh[w - 1].eval(v).abs());
            }
        }
        prop_assert!(c.leak.eval(0.5).abs() < 1e-15);
        Ok(())
    })
}

/// Steady `c_ext` of a VCO held at `hz` from phase zero.
fn steady_count(hz: f64, latches: usize) -> u32 {
    let inc = PhaseIncrement::from_hz(hz, MICRO_DT);
    let (mut phase, mut counter, mut seen) = (Phase::default(), CounterState::default(), 0);
    while seen < latches {
        let (next, e) = phase.advance(inc);
        phase = next;
        counter = counter_step(counter, e as u32);
        seen += e as usize;
    }
    counter.c_ext
}

pub fn reciprocity(cases: u32) -> Result<(), String> {
    check(cases, (1e6..40e6f64, 1usize..20), |(hz, latches)| {
        let c = steady_count(hz, latches) as f64;
        prop_assert!((c - (1e8 / hz).round()).abs() <= 1.0, "{c} counts at {hz} Hz");
        Ok(())
    })
}

pub fn monotone_state_proxy(cases: u32) -> Result<(), String> {
    check(cases, (curve_params(), prop::collection::vec(0.0..=1.0f64, 2..20)), |(p, mut vs)| {
        let c = default_curves(&p).unwrap();
        vs.sort_by(f64::total_cmp);
        let proxy = |v: f64| {
            let (fp, fn_) = fire_frequencies(ControlVoltage::new(v), &c, &VariationFactors::NOMINAL);
            steady_count(fn_, 1) as i64 - steady_count(fp, 1) as i64
        };
        for w in vs.windows(2) {
            prop_assert!(proxy(w[0]) <= proxy(w[1]), "proxy falls between {} and {}", w[0], w[1]);
        }
        Ok(())
    })
}

pub fn quantization_monotonicity(cases: u32) -> Result<(), String> {
    check(cases, (-6.0..6.0f64, -6.0..6.0f64, 0.1..5.0f64), |(a, b, sigma)| {
        let (lo, hi) = if a.abs() <= b.abs() { (a, b) } else { (b, a) };
        let (wl, wh) = (quantize_weight(lo, sigma).unwrap(), quantize_weight(hi, sigma).unwrap());
        prop_assert!(wl.word() <= wh.word());
        prop_assert!(wh.word() < 16);
        Ok(())
    })
}

pub fn polarity(cases: u32) -> Result<(), String> {
    check(cases, (-4.0..4.0f64, 0.0..=1.0f64), |(g, v)| {
        let curves = default_curves(&CurveParams::default()).unwrap();
        let w = quantize_weight(g, 2.5).unwrap();
        let dv = integrate_delta(ControlVoltage::new(v), w.word(), w.polarity, &curves, &VariationFactors::NOMINAL);
        match w.polarity {
            Polarity::Excitatory => prop_assert!(dv >= 0.0 && g >= 0.0),
            Polarity::Inhibitory => prop_assert!(dv <= 0.0 && g < 0.0),
        }
        Ok(())
    })
}

pub fn topology_bound(cases: u32) -> Result<(), String> {
    check(cases, (small_config(), inputs(4)), |(cfg, u)| {
        let topo = cfg.topology;
        let mut r = build_reservoir(&cfg).unwrap();
        for i in 0..topo.len() {
            let nb = topo.neighbors(i);
            prop_assert!(nb.len() <= 4 && !nb.contains(&i));
            prop_assert_eq!(r.in_degree(i), nb.len());
            if topo.boundary == Boundary::Open && topo.rows >= 2 && topo.cols >= 2 {
                prop_assert!(nb.len() >= 2);
            }
        }
        for &(src, dst) in r.weights().links.keys() {
            let (s, d) = (topo.index(src), topo.index(dst));
            prop_assert!(topo.neighbors(d).contains(&s));
        }
        for &x in &u {
            r.set_input_frequencies(&[spikeres::reservoir::input_frequency(x).unwrap()]).unwrap();
            for _ in 0..r.steps_per_input() {
                let fired = r.positive_edges().to_vec();
                for i in 0..topo.len() {
                    let events = topo.neighbors(i).iter().filter(|&&s| fired[s]).count();
                    prop_assert!(events <= r.in_degree(i));
                }
                r.micro_step();
            }
        }
        Ok(())
    })
}

pub fn thread_determinism(cases: u32) -> Result<(), String> {
    check(cases, (small_config(), inputs(6), 2usize..=4), |(cfg, u, workers)| {
        let serial = build_reservoir(&cfg).unwrap().run_scalar_sequence(&u).unwrap();
        let parallel = build_reservoir(&cfg)
            .unwrap()
            .with_workers(workers)
            .unwrap()
            .run_scalar_sequence(&u)
            .unwrap();
        prop_assert_eq!(serial, parallel);
        Ok(())
    })
}

pub fn single_vco_hook(cases: u32) -> Result<(), String> {
    check(cases, (small_config(), inputs(6)), |(mut cfg, u)| {
        cfg.single_vco_mode = true;
        let x = build_reservoir(&cfg).unwrap().run_scalar_sequence(&u).unwrap();
        for s in &x.samples {
            prop_assert!(s.c_neg.iter().all(|&c| c == 0));
            for i in 0..s.len() {
                prop_assert_eq!(s.value(i), -(s.c_pos[i] as i64));
            }
        }
        Ok(())
    })
}

fn regression_case() -> impl Strategy<Value = TrainingBatch> {
    any::<u64>().prop_map(|seed| regression_instance(&mut ChaCha8Rng::seed_from_u64(seed)))
}

pub fn residual_optimality(cases: u32) -> Result<(), String> {
    check(cases, regression_case(), |batch| {
        let w = fit(&batch, Ridge::Absolute(0.0), false).unwrap().w_out;
        let e0 = squared_error(&w, &batch);
        for idx in 0..w.len() {
            for h in [1e-3, -1e-3] {
                let mut p = w.clone();
                p[idx] += h;
                prop_assert!(squared_error(&p, &batch) >= e0);
            }
        }
        Ok(())
    })
}

pub fn ridge_shrinkage(cases: u32) -> Result<(), String> {
    check(cases, (regression_case(), prop::collection::vec(0.0..1e3f64, 2..6)), |(batch, mut lambdas)| {
        lambdas.sort_by(f64::total_cmp);
        let norms: Vec<f64> = lambdas
            .iter()
            .map(|&l| fit(&batch, Ridge::Absolute(l), false).unwrap().w_out.norm_squared())
            .collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} then {}", w[0], w[1]);
        }
        Ok(())
    })
}

/// Features that carry the one-step-delayed input plus noise.
fn memory_features(u: &[f64], n: usize, noise: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, u.len(), |i, t| {
        let lagged = if t > i % 3 { u[t - 1 - i % 3] } else { 0.0 };
        lagged * (1.0 + i as f64 * 0.1) + noise * rng.sample::<f64, _>(rand_distr::StandardNormal)
    })
}

pub fn r2_bounds(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 2usize..12, 0.0..3.0f64, any::<bool>()), |(seed, n, noise, bias)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..400).map(|_| rng.random_range(0..2) as f64).collect();
        let x = memory_features(&u, n, noise, &mut rng);
        let k = rng.random_range(1..5);
        let target = spikeres::tasks::delay_target(&u, k).unwrap();
        let options = ScoreOptions {
            augment_bias: bias,
            ..ScoreOptions::default()
        };
        let s = fit_and_score(&x, &target, 0..300, 300..400, &options).unwrap();
        for r2 in [s.train_r2, s.test_r2] {
            prop_assert!(r2.is_finite() && (0.0..=1.0).contains(&r2), "r2 {r2}");
        }
        Ok(())
    })
}

/// Test r² with the held-out targets shuffled; a readout that only sees
/// training data cannot follow them.
pub fn shuffled_test_r2(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..3000).map(|_| rng.random_range(0..2) as f64).collect();
    let x = memory_features(&u, 8, 0.1, &mut rng);
    let target = spikeres::tasks::delay_target(&u, 1).unwrap();
    let options = ScoreOptions::default();
    let honest = fit_and_score(&x, &target, 0..2000, 2000..3000, &options).unwrap().test_r2;
    let mut shuffled = target.clone();
    shuffled[2000..].shuffle(&mut rng);
    let leaked = fit_and_score(&x, &shuffled, 0..2000, 2000..3000, &options).unwrap().test_r2;
    (honest, leaked)
}

pub fn leak_detector(cases: u32) -> Result<(), String> {
    check(cases, any::<u64>(), |seed| {
        let (honest, leaked) = shuffled_test_r2(seed);
        prop_assert!(honest > 0.9, "honest r2 {honest}");
        prop_assert!(leaked < 0.05, "shuffled r2 {leaked}");
        Ok(())
    })
}

/// Random per-instance features whose mean carries a noisy class signature.
fn labelled_features(seed: u64, per_class: usize) -> (Vec<DMatrix<f64>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(3..12);
    let signatures = gaussian_matrix(dim, CLASSES, &mut rng);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for c in 0..CLASSES {
        for _ in 0..per_class {
            let frames = rng.random_range(2..6);
            let noise = gaussian_matrix(dim, frames, &mut rng) * 1.5;
            features.push(noise + signatures.column(c) * nalgebra::RowDVector::from_element(frames, 1.0));
            labels.push(c as u8);
        }
    }
    (features, labels)
}

pub fn confusion_accounting(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 2usize..8, 2usize..5), |(seed, per_class, k)| {
        let (features, labels) = labelled_features(seed, per_class);
        let plan = FoldPlan::stratified(&labels, k, seed).unwrap();
        let options = DigitsOptions::default();
        let (acc, confusion) = digits::cross_validate(&features, &labels, &plan, &options).unwrap();
        let total: u64 = confusion.iter().flatten().sum();
        prop_assert_eq!(total as usize, labels.len());
        for (c, row) in confusion.iter().enumerate() {
            let count = labels.iter().filter(|&&l| l as usize == c).count();
            prop_assert_eq!(row.iter().sum::<u64>() as usize, count);
        }
        let correct: u64 = (0..CLASSES).map(|c| confusion[c][c]).sum();
        let from_folds: f64 = acc.iter().zip(&plan.folds).map(|(a, f)| a * f.len() as f64).sum();
        prop_assert!((from_folds - correct as f64).abs() < 1e-9);
        Ok(())
    })
}

pub fn prediction_invariance(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 1usize..30, -1000i32..1000, any::<bool>()), |(seed, t, shift, vote)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // outputs on a 2^-10 grid so that adding an integer is exact
        let y = gaussian_matrix(CLASSES, t, &mut rng).map(|v| (v * 1024.0).round() / 1024.0);
        let rule = if vote { DecisionRule::MajorityVote } else { DecisionRule::TimeAverage };
        let shifted = y.map(|v| v + shift as f64);
        prop_assert_eq!(decide(&y, rule), decide(&shifted, rule));
        Ok(())
    })
}

pub fn fold_independence(cases: u32) -> Result<(), String> {
    check(cases, (any::<u64>(), 2usize..6), |(seed, per_class)| {
        let (features, labels) = labelled_features(seed, per_class);
        let plan = FoldPlan::stratified(&labels, 2, seed).unwrap();
        let options = DigitsOptions::default();
        let (acc, _) = digits::cross_validate(&features, &labels, &plan, &options).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut permuted = plan.clone();
        for f in &mut permuted.folds {
            f.shuffle(&mut rng);
        }
        let (acc2, _) = digits::cross_validate(&features, &labels, &permuted, &options).unwrap();
        for (a, b) in acc.iter().zip(&acc2) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        Ok(())
    })
}

pub fn config_reproducibility(cases: u32) -> Result<(), String> {
    let keys: &[(&str, &[&str])] = &[
        ("reservoir.seed", &["1", "7", "123"]),
        ("reservoir.variation_std", &["0.1", "0.3"]),
        ("reservoir.input_gain_word", &["3", "11"]),
        ("reservoir.single_vco_mode", &["true"]),
        ("reservoir.topology.rows", &["7", "14"]),
        ("reservoir.curves.fire_slope", &["5.0", "9.0"]),
        ("protocol.seed", &["4", "9"]),
        ("readout.augment_bias", &["true"]),
        ("digits.folds", &["3", "4"]),
        ("seeds", &["4", "8"]),
    ];
    check(cases, (0..keys.len(), any::<prop::sample::Index>()), |(k, pick)| {
        let (key, values) = keys[k];
        let value = values[pick.index(values.len())];
        let base = ExperimentConfig::default();
        let mut changed = base.clone();
        changed.set(key, value).map_err(|e| TestCaseError::fail(format!("{key}={value}: {e}")))?;
        prop_assert_ne!(base.hash(), changed.hash(), "{}={} left the hash unchanged", key, value);
        let again = ExperimentConfig::from_toml_str(&changed.to_toml_string()).unwrap();
        prop_assert_eq!(again.hash(), changed.hash());
        prop_assert_eq!(again.to_toml_string(), changed.to_toml_string());
        Ok(())
    })
}

pub type Property = fn(u32) -> Result<(), String>;

/// Every randomized invariant, by name.
pub const PROPERTIES: &[(&str, Property)] = &[
    ("voltage clamp", voltage_clamp),
    ("relaxation to rest", relaxation),
    ("edge-count exactness", edge_count_exactness),
    ("variation linearity", variation_linearity),
    ("monotone curves", curve_invariants),
    ("counter reciprocity", reciprocity),
    ("monotone state proxy", monotone_state_proxy),
    ("quantization monotonicity", quantization_monotonicity),
    ("polarity", polarity),
    ("topology bound", topology_bound),
    ("thread determinism", thread_determinism),
    ("single-VCO hook", single_vco_hook),
    ("residual optimality", residual_optimality),
    ("ridge shrinkage", ridge_shrinkage),
    ("r2 in [0, 1]", r2_bounds),
    ("leak detector", leak_detector),
    ("confusion accounting", confusion_accounting),
    ("prediction invariance", prediction_invariance),
    ("fold independence", fold_independence),
    ("config reproducibility", config_reproducibility),
];

pub fn counter_oracle_mismatches(profiles: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..profiles)
        .filter(|_| {
            let p = random_profile(&mut rng);
            stepped_latches(&p) != event_driven_latches(&p)
        })
        .count()
}

