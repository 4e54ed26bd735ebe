//! Dataset generators for the characterization experiments.
//!
//! Every generator is deterministic in (configuration, seed) and returns a
//! CSV document plus named headline metrics. The CSV opens with `#` comment
//! lines carrying the tool version, experiment id, seed and config hash.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::{csv_err, ArrayState, Topology};
use crate::campaign::Campaign;
use crate::cell::{BiasCondition, CellModel, PulseSpec};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::physics::{
    celsius, thermal_voltage, DAY, HOT_TEMPERATURE, ROOM_TEMPERATURE, ZERO_CELSIUS,
};
use crate::tuning::{data_cell_targets, geometric_ramp, tune_array, tune_peripherals, TunerConfig};
use crate::vmm::{
    differential_multiply, measure_peripherals, multiply, plan_differential, single_ended_targets,
    InputVector, Noise, TemperatureRange, WeightMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    Fig3a,
    Fig3b,
    Fig4,
    Fig5,
    Fig6,
    Fig9,
    Fig10,
    Fig11,
    Custom,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 9] = [
        ExperimentId::Fig3a,
        ExperimentId::Fig3b,
        ExperimentId::Fig4,
        ExperimentId::Fig5,
        ExperimentId::Fig6,
        ExperimentId::Fig9,
        ExperimentId::Fig10,
        ExperimentId::Fig11,
        ExperimentId::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Fig3a => "fig3a",
            ExperimentId::Fig3b => "fig3b",
            ExperimentId::Fig4 => "fig4",
            ExperimentId::Fig5 => "fig5",
            ExperimentId::Fig6 => "fig6",
            ExperimentId::Fig9 => "fig9",
            ExperimentId::Fig10 => "fig10",
            ExperimentId::Fig11 => "fig11",
            ExperimentId::Custom => "custom",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment id {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub config: ModelConfig,
    pub seed: u64,
    /// Required by `custom`, ignored otherwise.
    pub campaign: Option<Campaign>,
}

impl ExperimentSpec {
    pub fn new(id: ExperimentId, config: ModelConfig, seed: u64) -> Self {
        Self {
            id,
            config,
            seed,
            campaign: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub id: ExperimentId,
    pub csv: String,
    pub metrics: Vec<(String, f64)>,
}

impl ExperimentOutput {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
    }

    /// `summary <id> key=value ...` on one line.
    pub fn summary_line(&self) -> String {
        let mut s = format!("summary {}", self.id);
        for (k, v) in &self.metrics {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }
}

struct Table {
    out: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(spec: &ExperimentSpec, columns: &[&str]) -> Result<Self> {
        let mut head = format!(
            "# flashvmm {}\n# experiment={} seed={} config_hash={}\n",
            env!("CARGO_PKG_VERSION"),
            spec.id,
            spec.seed,
            spec.config.hash()
        )
        .into_bytes();
        head.reserve(4096);
        let mut out = csv::Writer::from_writer(head);
        out.write_record(columns).map_err(csv_err)?;
        Ok(Self { out })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        self.out.write_record(fields).map_err(csv_err)
    }

    fn finish(self) -> Result<String> {
        let bytes = self
            .out
            .into_inner()
            .map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

macro_rules! fields {
    ($($x:expr),* $(,)?) => { &[$($x.to_string()),*] };
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let model = CellModel::new(spec.config.clone())?;
    let (csv, metrics) = match spec.id {
        ExperimentId::Fig3a => fig3a(spec, &model)?,
        ExperimentId::Fig3b => fig3b(spec, &model)?,
        ExperimentId::Fig4 => fig4(spec, &model)?,
        ExperimentId::Fig5 => fig5(spec, &model)?,
        ExperimentId::Fig6 => fig6(spec, &model)?,
        ExperimentId::Fig9 => fig9(spec, &model)?,
        ExperimentId::Fig10 => fig10(spec, &model)?,
        ExperimentId::Fig11 => fig11(spec, &model)?,
        ExperimentId::Custom => custom(spec, &model)?,
    };
    Ok(ExperimentOutput {
        id: spec.id,
        csv,
        metrics: metrics
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect(),
    })
}

type Generated = (String, Vec<(&'static str, f64)>);

fn steps(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(move |k| lo + step * k as f64)
}

/// Program disturb of one nominal pulse versus bit-line voltage, with the
/// source line at the program level and the erase gate at the select level.
fn fig3a(spec: &ExperimentSpec, model: &CellModel) -> Result<Generated> {
    let mut t = Table::new(
        spec,
        &[
            "v_d",
            "select_factor",
            "current_before",
            "current_after",
            "rel_change",
        ],
    )?;
    let cell = model.cell(
        model.window().center(),
        model.config().device.n_slope_nominal(),
        spec.seed,
    );
    let read = BiasCondition::STANDARD_READ;
    let before = model.drain_current(&cell, &read, ROOM_TEMPERATURE)?;
    let pulse = PulseSpec::nominal(crate::cell::PulseKind::Program);
    let (mut full, mut worst_inhibited) = (0.0_f64, 0.0_f64);
    for v_d in steps(0.5, 3.0, 0.05) {
        let bias = BiasCondition {
            v_wl: 2.5,
            v_cg: 2.5,
            v_d,
            v_s: model.config().pulse.program_amplitude,
            v_eg: crate::array::PROGRAM_BL_SELECTED + crate::array::PROGRAM_EG_OVER_BL,
        };
        let after_cell = model.apply_program_pulse(&cell, &pulse, &bias, &mut cell.stream())?;
        let after = model.drain_current(&after_cell, &read, ROOM_TEMPERATURE)?;
        let rel = after / before - 1.0;
        if v_d == 0.5 {
            full = rel;
        }
        if v_d >= 2.25 - 1e-9 {
            worst_inhibited = worst_inhibited.max(rel.abs());
        }
        t.row(fields![
            v_d,
            model.program_select_factor(&bias),
            before,
            after,
            rel
        ])?;
    }
    Ok((
        t.finish()?,
        vec![
            ("rel_change_full_select", full),
            ("max_rel_disturb_inhibited", worst_inhibited),
        ],
    ))
}

/// Erase disturb of one nominal pulse versus coupling-gate voltage.
fn fig3b(spec: &ExperimentSpec, model: &CellModel) -> Result<Generated> {
    let mut t = Table::new(
        spec,
        &[
            "v_cg",
            "select_factor",
            "current_before",
            "current_after",
            "rel_change",
        ],
    )?;
    let cell = model.cell(
        model.window().center(),
        model.config().device.n_slope_nominal(),
        spec.seed,
    );
    let read = BiasCondition::STANDARD_READ;
    let before = model.drain_current(&cell, &read, ROOM_TEMPERATURE)?;
    let pulse = PulseSpec::nominal(crate::cell::PulseKind::Erase);
    let (mut full, mut inhibited) = (0.0, 0.0);
    for v_cg in steps(0.0, 8.0, 0.25) {
        let bias = BiasCondition {
            v_wl: 0.0,
            v_cg,
            v_d: 0.0,
            v_s: 0.0,
            v_eg: model.config().pulse.erase_amplitude,
        };
        let after_cell = model.apply_erase_pulse(&cell, &pulse, &bias, &mut cell.stream())?;
        let after = model.drain_current(&after_cell, &read, ROOM_TEMPERATURE)?;
        let rel = after / before - 1.0;
        if v_cg == 0.0 {
            full = rel;
        }
        if v_cg == 8.0 {
            inhibited = rel.abs();
        }
        t.row(fields![
            v_cg,
            model.erase_select_factor(&bias),
            before,
            after,
            rel
        ])?;
    }
    Ok((
        t.finish()?,
        vec![
            ("rel_change_full_select", full),
            ("rel_disturb_at_8v", inhibited),
        ],
    ))
}

/// Least-squares slope factor from the 100 pA to 30 nA part of an I-V sweep.
pub fn extract_slope_factor(points: &[(f64, f64)], temperature: f64) -> Option<f64> {
    let sel: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, i)| (100e-12..=30e-9).contains(i))
        .map(|&(v, i)| (v, i.ln()))
        .collect();
    if sel.len() < 2 {
        return None;
    }
    let n = sel.len() as f64;
    let mx = sel.iter().map(|p| p.0).sum::<f64>() / n;
    let my = sel.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = sel.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = sel.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxx / sxy / thermal_voltage(temperature))
}

/// I-V sweeps of 15 equidistant states.
fn fig4(spec: &ExperimentSpec, model: &CellModel) -> Result<Generated> {
    let mut t = Table::new(spec, &["state", "v_th", "n_slope", "v_cg", "current"])?;
    let d = &model.config().device;
    let w = model.window();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut n_lo, mut n_hi, mut worst) = (f64::INFINITY, 0.0_f64, 0.0_f64);
    for s in 0..15 {
        let v_th = w.v_th_min + w.width() * s as f64 / 14.0;
        let n = rng.random_range(d.n_slope_min..=d.n_slope_max);
        let cell = model.cell(v_th, n, rng.random());
        let mut pts = Vec::new();
        for v_cg in steps(0.0, 5.0, 0.01) {
            let i = model.drain_current(
                &cell,
                &BiasCondition::STANDARD_READ.with_cg(v_cg),
                ROOM_TEMPERATURE,
            )?;
            pts.push((v_cg, i));
            t.row(fields![s, v_th, n, v_cg, i])?;
        }
        let fitted = extract_slope_factor(&pts, ROOM_TEMPERATURE)
            .ok_or_else(|| Error::Precondition(format!("state {s} has no subthreshold points")))?;
        n_lo = n_lo.min(fitted);
        n_hi = n_hi.max(fitted);
        worst = worst.max((fitted / n - 1.0).abs());
    }
    Ok((
        t.finish()?,
        vec![
            ("n_extracted_min", n_lo),
            ("n_extracted_max", n_hi),
            ("max_extraction_error", worst),
        ],
    ))
}

/// One simulated day at 85 °C for 7 states between 100 pA and 100 nA.
fn fig5(spec: &ExperimentSpec, model: &CellModel) -> Result<Generated> {
    let mut t = Table::new(
        spec,
        &[
            "state",
            "initial_current",
            "time_s",
            "mean_current",
            "rel_rms",
        ],
    )?;
    let n = model.config().device.n_slope_nominal();
    let vt_hot = thermal_voltage(HOT_TEMPERATURE);
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut day_change_high, mut day_change_low) = (0.0_f64, 0.0_f64);
    let (mut rms_lowest, mut rms_high_max) = (0.0, 0.0_f64);
    for (s, target) in geometric_ramp(100e-12, 100e-9, 7).into_iter().enumerate() {
        // The window is calibrated at room temperature, so the low states are
        // reached at 85 °C by lowering the read gate voltage instead.
        let mut cell = model.cell(
            model.v_th_for_current(n, target, HOT_TEMPERATURE),
            n,
            master.random(),
        );
        let read =
            BiasCondition::STANDARD_READ.with_cg(cell.v_th + n * vt_hot * (target / cell.i0).ln());
        let mut rng = cell.stream();
        let mut first = None;
        let mut all = Vec::new();
        for hour in 0..=24 {
            if hour > 0 {
                cell = model.retention_hold(&cell, DAY / 24.0, HOT_TEMPERATURE, &mut rng)?;
            }
            let draws: Vec<f64> = (0..128)
                .map(|_| model.readout_noisy(&cell, &read, HOT_TEMPERATURE, 1, &mut rng))
                .collect::<Result<_>>()?;
            let mean = draws.iter().sum::<f64>() / 128.0;
            let rms = (draws.iter().map(|x| (x / mean - 1.0).powi(2)).sum::<f64>() / 128.0).sqrt();
            all.extend_from_slice(&draws);
            let first = *first.get_or_insert(mean);
            let change = (mean / first - 1.0).abs();
            if target >= 10e-9 {
                day_change_high = day_change_high.max(change);
            } else {
                day_change_low = day_change_low.max(change);
            }
            t.row(fields![s, target, hour as f64 * 3600.0, mean, rms])?;
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let rms =
            (all.iter().map(|x| (x / mean - 1.0).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
        if s == 0 {
            rms_lowest = rms;
        }
        if target >= 10e-9 {
            rms_high_max = rms_high_max.max(rms);
        }
    }
    Ok((
        t.finish()?,
        vec![
            ("rel_rms_at_100pa", rms_lowest),
            ("max_rel_rms_above_10na", rms_high_max),
            ("max_day_change_above_10na", day_change_high),
            ("max_day_change_below_10na", day_change_low),
        ],
    ))
}

/// Eight states equalized to 1, 10 and 100 nA at 25 °C, then heated to 85 °C.
fn fig6(spec: &ExperimentSpec, model: &CellModel) -> Result<Generated> {
    let mut t = Table::new(
        spec,
        &[
            "initial_current",
            "cell",
            "v_th",
            "temperature_c",
            "current",
            "ratio",
        ],
    )?;
    let d = &model.config().device;
    let w = model.window();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells: Vec<_> = (0..8)
        .map(|k| {
            let n = rng.random_range(d.n_slope_min..=d.n_slope_max);
            model.cell(w.v_th_min + w.width() * k as f64 / 7.0, n, rng.random())
        })
        .collect();
    let mut metrics = Vec::new();
    for (name, target) in [
        ("min_ratio_1na", 1e-9),
        ("min_ratio_10na", 10e-9),
        ("min_ratio_100na", 100e-9),
    ] {
        let mut min_ratio = f64::INFINITY;
        for (k, cell) in cells.iter().enumerate() {
            let v_cg = cell.v_th
                + cell.n_slope * thermal_voltage(ROOM_TEMPERATURE) * (target / cell.i0).ln();
            let bias = BiasCondition::STANDARD_READ.with_cg(v_cg);
            let start = model.drain_current(cell, &bias, ROOM_TEMPERATURE)?;
            for deg in steps(25.0, 85.0, 5.0) {
                let i = model.drain_current(cell, &bias, celsius(deg))?;
                t.row(fields![target, k, cell.v_th, deg, i, i / start])?;
                if deg == 85.0 {
                    min_ratio = min_ratio.min(i / start);
                }
            }
        }
        metrics.push((name, min_ratio));
    }
    Ok((t.finish()?, metrics))
}

/// Precision and budget of the tuning campaigns.
pub const FIG9_PRECISION: f64 = 0.05;
pub const FIG9_BUDGET: usize = 100;

fn fig9(spec: &ExperimentSpec, model: &CellModel) -> Result<Generated> {
    let mut t = Table::new(
        spec,
        &[
            "campaign",
            "cell",
            "row",
            "col",
            "target",
            "final",
            "rel_error",
            "reread_error",
            "pulses",
            "converged",
        ],
    )?;
    let campaigns: [(&str, Vec<f64>); 3] = [
        ("uniform_1na", vec![1e-9; 100]),
        ("uniform_100na", vec![100e-9; 100]),
        ("ramp", geometric_ramp(100e-12, 1e-6, 100)),
    ];
    let mut metrics = Vec::new();
    for (name, currents) in campaigns {
        let mut array = ArrayState::standard(model.clone(), spec.seed)?;
        let targets = data_cell_targets(&array, &currents, FIG9_PRECISION)?;
        let rep = tune_array(&mut array, &targets, FIG9_BUDGET, &TunerConfig::default())?;
        for (k, (r, e)) in rep.results.iter().zip(&rep.reread_errors).enumerate() {
            t.row(fields![
                name,
                k + 1,
                r.target.row,
                r.target.col,
                r.target.target_current,
                r.final_current,
                r.relative_error,
                e,
                r.pulses.total(),
                u8::from(r.converged)
            ])?;
        }
        let s = rep.summary;
        match name {
            "uniform_1na" => {
                metrics.push(("uniform_1na_max_error", s.max_abs_error));
                metrics.push(("uniform_1na_converged", s.converged as f64));
            }
            "uniform_100na" => {
                metrics.push(("uniform_100na_max_error", s.max_abs_error));
                metrics.push(("uniform_100na_converged", s.converged as f64));
            }
            _ => {
                metrics.push(("ramp_max_error_above_1na", s.max_abs_error_above_1na));
                metrics.push(("ramp_max_error_below_1na", s.max_abs_error_below_1na));
                metrics.push(("ramp_max_reread_error", s.max_abs_reread_error));
                metrics.push(("ramp_converged", s.converged as f64));
                metrics.push(("ramp_total_pulses", s.total_pulses as f64));
            }
        }
    }
    Ok((t.finish()?, metrics))
}

/// Weights of the four-input multiply demo.
pub const FIG10_WEIGHTS: [f64; 4] = [0.25, 1.0, 0.5, 0.125];
/// Sine frequencies (per input index) of the four inputs.
pub const FIG10_FREQUENCIES: [f64; 4] = [1.0 / 8.0, 1.0 / 36.0, 1.0 / 180.0, 1.0 / 360.0];
pub const FIG10_PRECISION: f64 = 0.01;
pub const FIG10_POINTS: usize = 360;

/// Input `j` at sample `k`: 50 nA × (1 + sin(2π k f_j)), floored at the
/// bottom of the input window.
pub fn fig10_input(j: usize, k: usize, i_min: f64) -> f64 {
    (50e-9 * (1.0 + (2.0 * PI * k as f64 * FIG10_FREQUENCIES[j]).sin())).max(i_min)
}

/// Four cells of one column tuned to fixed weights, driven by sine inputs.
/// Outputs are 128-sample averaged reads.
fn fig10(spec: &ExperimentSpec, model: &CellModel) -> Result<Generated> {
    let mut t = Table::new(
        spec,
        &[
            "index", "input1", "input2", "input3", "input4", "ideal", "output", "error",
        ],
    )?;
    let mut array = ArrayState::new(model.clone(), 4, 1, Topology::Modified, spec.seed)?;
    let tuner = TunerConfig::default();
    tune_peripherals(&mut array, FIG10_PRECISION, 200, &tuner)?;
    let refs = measure_peripherals(&mut array, ROOM_TEMPERATURE, Noise::averaged())?;
    let weights = WeightMatrix::new(4, 1, FIG10_WEIGHTS.to_vec())?;
    let targets = single_ended_targets(&array, &weights, &refs, FIG10_PRECISION)?;
    let rep = tune_array(&mut array, &targets, 200, &tuner)?;
    if rep.summary.converged != 4 {
        return Err(Error::Precondition("weight tuning did not converge".into()));
    }
    let i_min = model.config().device.i_min;
    let mut rows = Vec::with_capacity(FIG10_POINTS);
    for k in 0..FIG10_POINTS {
        let inputs: Vec<f64> = (0..4).map(|j| fig10_input(j, k, i_min)).collect();
        let ideal: f64 = inputs.iter().zip(FIG10_WEIGHTS).map(|(i, w)| i * w).sum();
        let out = multiply(
            &mut array,
            &InputVector(inputs.clone()),
            ROOM_TEMPERATURE,
            Noise::averaged(),
        )?[0];
        rows.push((inputs, ideal, out));
    }
    let full_scale = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let (mut worst, mut worst_full_scale) = (0.0_f64, 0.0_f64);
    for (k, (inputs, ideal, out)) in rows.iter().enumerate() {
        let err = out / ideal - 1.0;
        worst = worst.max(err.abs());
        worst_full_scale = worst_full_scale.max(((out - ideal) / full_scale).abs());
        t.row(fields![
            k, inputs[0], inputs[1], inputs[2], inputs[3], ideal, out, err
        ])?;
    }
    Ok((
        t.finish()?,
        vec![
            ("max_rel_error", worst),
            ("max_full_scale_error", worst_full_scale),
        ],
    ))
}

pub const FIG11_WEIGHTS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const FIG11_INPUT: f64 = 100e-9;
pub const FIG11_PRECISION: f64 = 0.01;

/// Differential weights with optimized bias, 100 nA input, 25 °C to 85 °C.
fn fig11(spec: &ExperimentSpec, model: &CellModel) -> Result<Generated> {
    let mut t = Table::new(
        spec,
        &[
            "w",
            "w_b",
            "temperature_c",
            "output",
            "ideal_output",
            "drift",
            "drift_noiseless",
            "predicted_drift",
        ],
    )?;
    let range = TemperatureRange::characterized();
    let n_pairs = FIG11_WEIGHTS.len();
    let mut array = ArrayState::new(model.clone(), 1, 2 * n_pairs, Topology::Modified, spec.seed)?;
    let tuner = TunerConfig::default();
    tune_peripherals(&mut array, FIG11_PRECISION, 200, &tuner)?;
    let refs = measure_peripherals(&mut array, ROOM_TEMPERATURE, Noise::averaged())?;
    let weights = WeightMatrix::new(1, n_pairs, FIG11_WEIGHTS.to_vec())?;
    let plan = plan_differential(&weights, range, ROOM_TEMPERATURE, &refs, model)?;
    let targets = plan.tune_targets(&array, FIG11_PRECISION)?;
    let rep = tune_array(&mut array, &targets, 200, &tuner)?;
    if rep.summary.converged != rep.results.len() {
        return Err(Error::Precondition(
            "differential weight tuning did not converge".into(),
        ));
    }
    let input = InputVector(vec![FIG11_INPUT]);
    let temps: Vec<f64> = steps(25.0, 85.0, 5.0).collect();
    let mut noisy = Vec::with_capacity(temps.len());
    let mut clean = Vec::with_capacity(temps.len());
    for &deg in &temps {
        noisy.push(differential_multiply(
            &mut array,
            &plan,
            &input,
            celsius(deg),
            Noise::averaged(),
        )?);
        clean.push(differential_multiply(
            &mut array,
            &plan,
            &input,
            celsius(deg),
            Noise::Off,
        )?);
    }
    let (mut worst, mut worst_clean, mut worst_pred) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (j, e) in plan.entries.iter().enumerate() {
        worst_pred = worst_pred.max(e.predicted_drift);
        for (k, &deg) in temps.iter().enumerate() {
            let drift = noisy[k][j] / noisy[0][j] - 1.0;
            let drift_clean = clean[k][j] / clean[0][j] - 1.0;
            worst = worst.max(drift.abs());
            worst_clean = worst_clean.max(drift_clean.abs());
            t.row(fields![
                e.w,
                e.w_b,
                deg,
                noisy[k][j],
                e.w * FIG11_INPUT,
                drift,
                drift_clean,
                e.predicted_drift
            ])?;
        }
    }
    Ok((
        t.finish()?,
        vec![
            ("max_drift", worst),
            ("max_drift_noiseless", worst_clean),
            ("max_predicted_drift", worst_pred),
        ],
    ))
}

fn custom(spec: &ExperimentSpec, model: &CellModel) -> Result<Generated> {
    let campaign = spec
        .campaign
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("custom experiment needs a campaign file".into()))?;
    let mut array = campaign.build_array(model.clone())?;
    let rep = campaign.run(&mut array)?;
    let mut t = Table::new(
        spec,
        &["row", "col", "target", "final", "rel_error", "pulses"],
    )?;
    for r in &rep.results {
        t.row(fields![
            r.target.row,
            r.target.col,
            r.target.target_current,
            r.final_current,
            r.relative_error,
            r.pulses.total()
        ])?;
    }
    let s = rep.summary;
    Ok((
        t.finish()?,
        vec![
            ("converged", s.converged as f64),
            ("cells", s.cells as f64),
            ("max_abs_error", s.max_abs_error),
            ("total_pulses", s.total_pulses as f64),
        ],
    ))
}

/// Kelvin to Celsius, for table output.
pub fn to_celsius(kelvin: f64) -> f64 {
    kelvin - ZERO_CELSIUS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(id.name().parse::<ExperimentId>().unwrap(), id);
        }
        assert!("fig7".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn header_carries_provenance() {
        let spec = ExperimentSpec::new(ExperimentId::Fig3b, ModelConfig::default(), 17);
        let out = run_experiment(&spec).unwrap();
        let mut lines = out.csv.lines();
        assert!(lines.next().unwrap().starts_with("# flashvmm "));
        let second = lines.next().unwrap();
        assert!(second.contains("experiment=fig3b") && second.contains("seed=17"));
        assert!(second.contains(&format!("config_hash={}", spec.config.hash())));
        assert_eq!(
            lines.next().unwrap(),
            "v_cg,select_factor,current_before,current_after,rel_change"
        );
    }

    #[test]
    fn custom_requires_campaign() {
        let spec = ExperimentSpec::new(ExperimentId::Custom, ModelConfig::default(), 1);
        assert!(run_experiment(&spec).is_err());
    }

    #[test]
    fn slope_extraction_recovers_n() {
        let n = 5.07;
        let vt = thermal_voltage(ROOM_TEMPERATURE);
        let pts: Vec<(f64, f64)> = (0..300)
            .map(|k| {
                let v = k as f64 * 0.01;
                (v, 1e-3 * ((v - 3.5) / (n * vt)).exp())
            })
            .collect();
        let got = extract_slope_factor(&pts, ROOM_TEMPERATURE).unwrap();
        assert!((got - n).abs() < 1e-9);
    }

    #[test]
    fn fig10_inputs_stay_in_window() {
        for k in 0..FIG10_POINTS {
            for j in 0..4 {
                let i = fig10_input(j, k, 1e-10);
                assert!((1e-10..=100e-9 + 1e-18).contains(&i));
            }
        }
        assert_eq!(fig10_input(0, 6, 1e-10), 1e-10);
    }
}
