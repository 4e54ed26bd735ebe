//! Property tests over the cell, array, tuner and multiplier.

use flashvmm::array::{ArrayState, Topology};
use flashvmm::cell::{BiasCondition, CellModel, PulseKind, PulseSpec};
use flashvmm::config::ModelConfig;
use flashvmm::experiments::{run_experiment, ExperimentId, ExperimentSpec};
use flashvmm::physics::{thermal_voltage, ROOM_TEMPERATURE};
use flashvmm::tuning::{
    data_cell_targets, geometric_ramp, tune_array, tune_cell, tune_peripherals, TuneTarget,
    TunerConfig,
};
use flashvmm::vmm::{
    differential_multiply, differential_output, input_gate_voltage, measure_peripherals, multiply,
    optimize_bias_weight, plan_differential, weight_of, InputVector, Noise, TemperatureRange,
    WeightMatrix,
};
use proptest::prelude::*;

fn model() -> CellModel {
    CellModel::new(ModelConfig::default()).unwrap()
}

fn noiseless() -> CellModel {
    CellModel::new(ModelConfig::noiseless()).unwrap()
}

/// Array with every cell set from `v_ths` (cycled) and peripherals at the
/// window center.
fn populated(model: &CellModel, rows: usize, cols: usize, v_ths: &[f64], seed: u64) -> ArrayState {
    let mut a = ArrayState::new(model.clone(), rows, cols, Topology::Modified, seed).unwrap();
    let mut it = v_ths.iter().cycle();
    for r in 0..rows {
        a.set_v_th(r, a.peripheral_col(r), model.window().center())
            .unwrap();
        for k in 0..cols {
            a.set_v_th(r, a.data_col(k), *it.next().unwrap()).unwrap();
        }
    }
    a
}

fn window_v_th() -> impl Strategy<Value = f64> {
    let w = model().window();
    w.v_th_min..=w.v_th_max
}

/// Data-cell thresholds whose mirror weights stay below ~5, so in-window
/// inputs never drive a data cell into saturation.
fn weight_v_th() -> impl Strategy<Value = f64> {
    let w = model().window();
    (w.center() - 0.2)..=w.v_th_max
}

fn input_current() -> impl Strategy<Value = f64> {
    (-10.0f64..=-7.0).prop_map(|e| 10f64.powf(e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn semi_log_linear_below_clamp(v_th in window_v_th(), n in 5.0f64..=5.1, dv in 0.001f64..0.3, t in 250.0f64..400.0) {
        let m = model();
        let cell = m.cell(v_th, n, 0);
        let v0 = v_th - 1.5;
        let i1 = m.drain_current(&cell, &BiasCondition::STANDARD_READ.with_cg(v0), t).unwrap();
        let i2 = m.drain_current(&cell, &BiasCondition::STANDARD_READ.with_cg(v0 + dv), t).unwrap();
        let slope = (i2 / i1).ln();
        let want = dv / (n * thermal_voltage(t));
        prop_assert!((slope / want - 1.0).abs() < 1e-9);
    }

    #[test]
    fn temperature_scaling_identity(v_th in window_v_th(), t1 in 250.0f64..400.0, t2 in 250.0f64..400.0) {
        let m = model();
        let cell = m.cell(v_th, 5.05, 0);
        let b = BiasCondition::STANDARD_READ;
        let i1 = m.drain_current(&cell, &b, t1).unwrap();
        let i2 = m.drain_current(&cell, &b, t2).unwrap();
        prop_assume!(i1 < m.config().device.i_sat && i2 < m.config().device.i_sat);
        let i0 = cell.i0;
        prop_assert!(((i2 / i0).ln() / ((i1 / i0).ln() * t1 / t2) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pulses_are_monotone(v_th in window_v_th(), fraction in 0.0f64..=1.0, erase in any::<bool>(), seed in any::<u64>()) {
        let mut a = ArrayState::standard(model(), seed).unwrap();
        a.set_v_th(3, 4, v_th).unwrap();
        let before = a.read_cell_ideal(3, 4, ROOM_TEMPERATURE).unwrap();
        let kind = if erase { PulseKind::Erase } else { PulseKind::Program };
        a.pulse_cell(3, 4, &PulseSpec::nominal(kind).scaled(fraction)).unwrap();
        let after = a.read_cell_ideal(3, 4, ROOM_TEMPERATURE).unwrap();
        let w = a.model().window();
        prop_assert!((w.v_th_min..=w.v_th_max).contains(&a.cell(3, 4).unwrap().v_th));
        if erase { prop_assert!(after >= before) } else { prop_assert!(after <= before) }
    }

    #[test]
    fn half_selected_cells_inhibited(
        v_ths in prop::collection::vec(window_v_th(), 120),
        row in 0usize..10,
        col in 0usize..12,
        erase in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let m = model();
        let mut a = ArrayState::standard(m, seed).unwrap();
        for (k, v) in v_ths.iter().enumerate() {
            a.set_v_th(k / 12, k % 12, *v).unwrap();
        }
        let read = |a: &ArrayState| -> Vec<f64> {
            (0..120).map(|k| a.read_cell_ideal(k / 12, k % 12, ROOM_TEMPERATURE).unwrap()).collect()
        };
        let before = read(&a);
        let kind = if erase { PulseKind::Erase } else { PulseKind::Program };
        a.pulse_cell(row, col, &PulseSpec::nominal(kind)).unwrap();
        let after = read(&a);
        for k in (0..120).filter(|&k| k != row * 12 + col) {
            prop_assert!((after[k] / before[k] - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn superposition(
        v_ths in prop::collection::vec(weight_v_th(), 1..=30),
        rows in 1usize..=5,
        cols in 1usize..=6,
        a_in in prop::collection::vec(input_current(), 5),
        b_in in prop::collection::vec(input_current(), 5),
        alpha in 0.1f64..0.5,
        beta in 0.1f64..0.5,
    ) {
        let m = noiseless();
        let mut arr = populated(&m, rows, cols, &v_ths, 1);
        let i1 = InputVector(a_in[..rows].to_vec());
        let i2 = InputVector(b_in[..rows].to_vec());
        let mixed = InputVector((0..rows).map(|r| alpha * i1.0[r] + beta * i2.0[r]).collect());
        prop_assume!(mixed.0.iter().all(|&x| x >= m.config().device.i_min));
        let o1 = multiply(&mut arr, &i1, ROOM_TEMPERATURE, Noise::Off).unwrap();
        let o2 = multiply(&mut arr, &i2, ROOM_TEMPERATURE, Noise::Off).unwrap();
        let om = multiply(&mut arr, &mixed, ROOM_TEMPERATURE, Noise::Off).unwrap();
        for k in 0..cols {
            let want = alpha * o1[k] + beta * o2[k];
            prop_assert!((om[k] / want - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn multiply_matches_dense_product(
        v_ths in prop::collection::vec(weight_v_th(), 1..=100),
        rows in 1usize..=10,
        cols in 1usize..=10,
        inputs in prop::collection::vec(input_current(), 10),
        t in 273.15f64..=373.15,
    ) {
        let m = noiseless();
        let mut arr = populated(&m, rows, cols, &v_ths, 2);
        let x = InputVector(inputs[..rows].to_vec());
        let got = multiply(&mut arr, &x, t, Noise::Off).unwrap();
        for (k, g) in got.iter().enumerate() {
            let want: f64 = (0..rows)
                .map(|r| x.0[r] * weight_of(arr.cell(r, arr.data_col(k)).unwrap(), arr.peripheral(r).unwrap(), t))
                .sum();
            prop_assert!((g / want - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn input_gate_voltage_round_trip(v_th in window_v_th(), n in 5.0f64..=5.1, input in input_current(), t in 250.0f64..400.0) {
        let m = model();
        let p = m.cell(v_th, n, 0);
        let v = input_gate_voltage(&m, &p, input, t).unwrap();
        let back = m.drain_current(&p, &BiasCondition::STANDARD_READ.with_cg(v), t).unwrap();
        prop_assume!(back < m.config().device.i_sat);
        prop_assert!((back / input - 1.0).abs() < 1e-12);
    }

    #[test]
    fn drift_is_stationary_at_optimum(w in 0.05f64..=0.95) {
        let range = TemperatureRange::characterized();
        let t0 = range.midpoint();
        let bw = optimize_bias_weight(w, range, t0).unwrap();
        let slope = |w_b: f64| {
            let (p, q) = (w_b + w / 2.0, w_b - w / 2.0);
            (differential_output(p, q, t0, t0 + 0.1) - differential_output(p, q, t0, t0 - 0.1)) / 0.2
        };
        let at = slope(bw.w_b).abs();
        for shifted in [bw.w_b - 0.05, bw.w_b + 0.05] {
            if shifted - w / 2.0 > 0.0 {
                prop_assert!(at < slope(shifted).abs());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tuner_direction_follows_reading(target_exp in -10.0f64..=-6.0, seed in any::<u64>()) {
        let mut a = ArrayState::standard(model(), seed).unwrap();
        let target = TuneTarget { row: 2, col: 5, target_current: 10f64.powf(target_exp), precision: 0.05 };
        let cfg = TunerConfig { record_trajectory: true, ..TunerConfig::default() };
        let r = tune_cell(&mut a, &target, 100, &cfg).unwrap();
        for step in r.trajectory.iter().flatten() {
            match step.kind {
                PulseKind::Program => prop_assert!(step.reading > target.target_current),
                PulseKind::Erase => prop_assert!(step.reading < target.target_current),
            }
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical(seed in any::<u64>()) {
        let spec = ExperimentSpec::new(ExperimentId::Fig9, ModelConfig::default(), seed);
        prop_assert_eq!(run_experiment(&spec).unwrap(), run_experiment(&spec).unwrap());
    }
}

#[test]
fn retuning_costs_few_pulses() {
    let mut a = ArrayState::standard(model(), 7).unwrap();
    let targets = data_cell_targets(&a, &geometric_ramp(100e-12, 1e-6, 100), 0.05).unwrap();
    let cfg = TunerConfig::default();
    let first = tune_array(&mut a, &targets, 100, &cfg).unwrap();
    let again = tune_array(&mut a, &targets, 100, &cfg).unwrap();
    assert!(
        again.summary.total_pulses * 10 <= first.summary.total_pulses,
        "{} re-tune pulses vs {} original",
        again.summary.total_pulses,
        first.summary.total_pulses
    );
}

#[test]
fn differential_plan_round_trip() {
    let m = noiseless();
    let weights = WeightMatrix::from_rows(&[vec![0.1, 0.5, 0.9], vec![0.3, 0.0, 0.7]]).unwrap();
    let mut a = ArrayState::new(m.clone(), 2, 6, Topology::Modified, 3).unwrap();
    let cfg = TunerConfig {
        noisy: false,
        ..TunerConfig::default()
    };
    tune_peripherals(&mut a, 0.001, 400, &cfg).unwrap();
    let refs = measure_peripherals(&mut a, ROOM_TEMPERATURE, Noise::Off).unwrap();
    let range = TemperatureRange::characterized();
    let plan = plan_differential(&weights, range, ROOM_TEMPERATURE, &refs, &m).unwrap();
    let targets = plan.tune_targets(&a, 0.001).unwrap();
    let rep = tune_array(&mut a, &targets, 400, &cfg).unwrap();
    assert_eq!(rep.summary.converged, targets.len());
    let x = [40e-9, 70e-9];
    let out = differential_multiply(
        &mut a,
        &plan,
        &InputVector(x.to_vec()),
        ROOM_TEMPERATURE,
        Noise::Off,
    )
    .unwrap();
    for (j, o) in out.iter().enumerate() {
        let want = x[0] * weights.get(0, j) + x[1] * weights.get(1, j);
        assert!(
            (o - want).abs() <= 0.005 * want.max(1e-12) + 1e-12,
            "column {j}: {o} vs {want}"
        );
    }
}
