//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! and the test fails at the end if any criterion failed.

use std::time::{Duration, Instant};

use flashvmm::array::{ArrayState, Topology};
use flashvmm::cell::{BiasCondition, CellModel, PulseKind, PulseSpec};
use flashvmm::config::ModelConfig;
use flashvmm::experiments::{run_experiment, ExperimentId, ExperimentSpec, FIG11_WEIGHTS};
use flashvmm::physics::{thermal_voltage, HOT_TEMPERATURE, ROOM_TEMPERATURE};
use flashvmm::tuning::{data_cell_targets, geometric_ramp, tune_array, TunerConfig};
use flashvmm::vmm::{
    multiply, optimize_bias_weight, weight_of, InputVector, Noise, TemperatureRange,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: u32, name: &str, limit: Duration, body: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = body();
    let took = start.elapsed();
    let pass = out.pass && took < limit;
    println!(
        "criterion {id} {name}: {} ({}; {:.3} s of {} s)",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn model() -> CellModel {
    CellModel::new(ModelConfig::default()).unwrap()
}

fn slope_factor() -> Outcome {
    let spec = ExperimentSpec::new(ExperimentId::Fig4, ModelConfig::default(), SEED);
    let out = run_experiment(&spec).unwrap();
    let lo = out.metric("n_extracted_min").unwrap();
    let hi = out.metric("n_extracted_max").unwrap();
    let err = out.metric("max_extraction_error").unwrap();
    Outcome {
        pass: lo >= 5.0 && hi <= 5.1 && err <= 0.005,
        detail: format!("n in [{lo:.4}, {hi:.4}], extraction error {err:.2e}"),
    }
}

fn inhibition() -> Outcome {
    let model = model();
    let w = model.window();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0_f64;
    for trial in 0..1000 {
        let mut array = ArrayState::standard(model.clone(), rng.random()).unwrap();
        for r in 0..array.rows() {
            for c in 0..array.cols() {
                array
                    .set_v_th(r, c, rng.random_range(w.v_th_min..=w.v_th_max))
                    .unwrap();
            }
        }
        let (row, col) = (
            rng.random_range(0..array.rows()),
            rng.random_range(0..array.cols()),
        );
        let kind = if trial % 2 == 0 {
            PulseKind::Program
        } else {
            PulseKind::Erase
        };
        let before: Vec<f64> = all_currents(&array);
        array
            .pulse_cell(row, col, &PulseSpec::nominal(kind))
            .unwrap();
        let after = all_currents(&array);
        for (k, (b, a)) in before.iter().zip(&after).enumerate() {
            if k != row * array.cols() + col {
                worst = worst.max((a / b - 1.0).abs());
            }
        }
    }
    Outcome {
        pass: worst < 0.01,
        detail: format!("worst half-selected disturbance {:.4}%", worst * 100.0),
    }
}

fn all_currents(array: &ArrayState) -> Vec<f64> {
    let mut v = Vec::with_capacity(array.rows() * array.cols());
    for r in 0..array.rows() {
        for c in 0..array.cols() {
            v.push(array.read_cell_ideal(r, c, ROOM_TEMPERATURE).unwrap());
        }
    }
    v
}

fn sample_rms(model: &CellModel, current: f64, rng: &mut ChaCha8Rng) -> f64 {
    let n = model.config().device.n_slope_nominal();
    let cell = model.cell(model.v_th_for_current(n, current, ROOM_TEMPERATURE), n, 0);
    let bias = BiasCondition::STANDARD_READ;
    let draws: Vec<f64> = (0..10_000)
        .map(|_| {
            model
                .readout_noisy(&cell, &bias, ROOM_TEMPERATURE, 1, rng)
                .unwrap()
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    (draws.iter().map(|x| (x / mean - 1.0).powi(2)).sum::<f64>() / draws.len() as f64).sqrt()
}

fn noise_envelope() -> Outcome {
    let model = model();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let low = sample_rms(&model, 100e-12, &mut rng);
    let high: Vec<f64> = [10e-9, 100e-9, 1e-6]
        .iter()
        .map(|&i| sample_rms(&model, i, &mut rng))
        .collect();
    let high_max = high.iter().cloned().fold(0.0, f64::max);
    Outcome {
        pass: (low - 0.04).abs() <= 0.005 && high_max <= 0.01,
        detail: format!(
            "rms {:.3}% at 100 pA, max {:.3}% at >= 10 nA",
            low * 100.0,
            high_max * 100.0
        ),
    }
}

fn temperature_law() -> Outcome {
    let model = model();
    let n = model.config().device.n_slope_nominal();
    let i0 = model.config().device.i0;
    let bias = BiasCondition::STANDARD_READ;
    let cell = model.cell(model.v_th_for_current(n, 1e-9, ROOM_TEMPERATURE), n, 0);
    let ratio = model.drain_current(&cell, &bias, HOT_TEMPERATURE).unwrap()
        / model.drain_current(&cell, &bias, ROOM_TEMPERATURE).unwrap();
    let mut worst = 0.0_f64;
    for current in geometric_ramp(100e-12, 100e-9, 13) {
        let cell = model.cell(model.v_th_for_current(n, current, ROOM_TEMPERATURE), n, 0);
        for t2 in [273.15, 318.15, HOT_TEMPERATURE, 373.15] {
            let lhs = (model.drain_current(&cell, &bias, t2).unwrap() / i0).ln();
            let rhs = (model.drain_current(&cell, &bias, ROOM_TEMPERATURE).unwrap() / i0).ln()
                * ROOM_TEMPERATURE
                / t2;
            worst = worst.max((lhs / rhs - 1.0).abs());
        }
    }
    Outcome {
        pass: ratio > 10.0 && worst <= 1e-9,
        detail: format!("ratio {ratio:.3} at 1 nA, identity error {worst:.1e}"),
    }
}

fn tuning_campaign() -> Outcome {
    let mut array = ArrayState::standard(model(), SEED).unwrap();
    let targets = data_cell_targets(&array, &geometric_ramp(100e-12, 1e-6, 100), 0.05).unwrap();
    let rep = tune_array(&mut array, &targets, 100, &TunerConfig::default()).unwrap();
    let s = rep.summary;
    Outcome {
        pass: s.max_abs_error_above_1na <= 0.05 && s.max_abs_error_below_1na <= 0.12,
        detail: format!(
            "max error {:.2}% at >= 1 nA, {:.2}% below, {} pulses",
            s.max_abs_error_above_1na * 100.0,
            s.max_abs_error_below_1na * 100.0,
            s.total_pulses
        ),
    }
}

fn multiply_demo() -> Outcome {
    let spec = ExperimentSpec::new(ExperimentId::Fig10, ModelConfig::default(), SEED);
    let out = run_experiment(&spec).unwrap();
    let err = out.metric("max_rel_error").unwrap();
    Outcome {
        pass: err <= 0.02,
        detail: format!("max relative output error {:.3}%", err * 100.0),
    }
}

fn differential_drift() -> Outcome {
    let range = TemperatureRange::characterized();
    let analytic = FIG11_WEIGHTS
        .iter()
        .map(|&w| {
            optimize_bias_weight(w, range, ROOM_TEMPERATURE)
                .unwrap()
                .drift
        })
        .fold(0.0, f64::max);
    let spec = ExperimentSpec::new(ExperimentId::Fig11, ModelConfig::default(), SEED);
    let noisy = run_experiment(&spec).unwrap().metric("max_drift").unwrap();
    Outcome {
        pass: analytic < 0.01 && noisy <= 0.027,
        detail: format!(
            "analytic {:.3}%, noisy {:.3}%",
            analytic * 100.0,
            noisy * 100.0
        ),
    }
}

fn oracle_equivalence() -> Outcome {
    let model = CellModel::new(ModelConfig::noiseless()).unwrap();
    let w = model.window();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let rows = rng.random_range(1..=10);
        let cols = rng.random_range(1..=10);
        let mut array =
            ArrayState::new(model.clone(), rows, cols, Topology::Modified, rng.random()).unwrap();
        for r in 0..rows {
            array
                .set_v_th(r, array.peripheral_col(r), w.center())
                .unwrap();
            for k in 0..cols {
                let v = rng.random_range(w.center() - 0.2..=w.v_th_max);
                array.set_v_th(r, array.data_col(k), v).unwrap();
            }
        }
        let inputs: Vec<f64> = (0..rows)
            .map(|_| 10f64.powf(rng.random_range(-10.0..=-7.0)))
            .collect();
        let got = multiply(
            &mut array,
            &InputVector(inputs.clone()),
            ROOM_TEMPERATURE,
            Noise::Off,
        )
        .unwrap();
        for (k, g) in got.iter().enumerate() {
            let want: f64 = (0..rows)
                .map(|r| {
                    let cell = array.cell(r, array.data_col(k)).unwrap();
                    inputs[r] * weight_of(cell, array.peripheral(r).unwrap(), ROOM_TEMPERATURE)
                })
                .sum();
            worst = worst.max((g / want - 1.0).abs());
        }
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("worst relative deviation {worst:.1e}"),
    }
}

#[test]
fn acceptance() {
    // sanity: thermal voltage at room temperature is about 25.7 mV
    assert!((thermal_voltage(ROOM_TEMPERATURE) - 0.025693).abs() < 1e-5);
    let results = [
        check(1, "slope factor", Duration::from_secs(1), slope_factor),
        check(2, "inhibition", Duration::from_secs(10), inhibition),
        check(3, "noise envelope", Duration::from_secs(5), noise_envelope),
        check(
            4,
            "temperature law",
            Duration::from_secs(5),
            temperature_law,
        ),
        check(
            5,
            "tuning campaign",
            Duration::from_secs(60),
            tuning_campaign,
        ),
        check(6, "multiply demo", Duration::from_secs(30), multiply_demo),
        check(
            7,
            "differential drift",
            Duration::from_secs(30),
            differential_drift,
        ),
        check(
            8,
            "oracle equivalence",
            Duration::from_secs(5),
            oracle_equivalence,
        ),
    ];
    println!("criterion 9 desk-scale exclusions: not run (physical retention, silicon data, bandwidth and energy)");
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, p)| !**p)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
