//! Derivation of the free model parameters.
//!
//! The threshold window is the set of states whose standard-bias readout at
//! the reference temperature spans `[i_min, i_sat]` for every slope factor in
//! the configured range: the lower edge is computed with the smallest slope
//! factor, the upper edge with the largest. The nominal per-pulse shift is the
//! window width divided by the configured traversal pulse count.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::physics::{thermal_voltage, HOT_TEMPERATURE};

/// Allowed nominal pulse counts for a full window traversal.
pub const TRAVERSAL_PULSE_RANGE: (f64, f64) = (20.0, 60.0);

/// Minimum 85 °C / 25 °C current ratio for a cell reading 1 nA at 25 °C.
pub const MIN_HOT_RATIO_AT_1NA: f64 = 10.0;

/// Returns `base` with the window and nominal pulse shifts recomputed.
pub fn calibrate(base: &ModelConfig) -> Result<ModelConfig> {
    let d = &base.device;
    if !(d.i0 > 0.0 && d.i_min > 0.0 && d.i_min < d.i_sat && d.i_sat < d.i0) {
        return Err(Error::Infeasible(format!(
            "current range: need 0 < i_min < i_sat < i0, got i_min={} i_sat={} i0={}",
            d.i_min, d.i_sat, d.i0
        )));
    }
    if !(d.n_slope_min > 0.0 && d.n_slope_min <= d.n_slope_max) {
        return Err(Error::Infeasible(
            "n_slope range: need 0 < n_slope_min <= n_slope_max".into(),
        ));
    }
    let (lo, hi) = TRAVERSAL_PULSE_RANGE;
    let traversal = base.pulse.traversal_pulses;
    if !(lo..=hi).contains(&traversal) {
        return Err(Error::Infeasible(format!(
            "traversal_pulses: {traversal} is outside [{lo}, {hi}]"
        )));
    }

    let t_ref = d.reference_temperature;
    let hot_ratio = hot_ratio(1e-9, d.i0, t_ref, HOT_TEMPERATURE);
    if hot_ratio < MIN_HOT_RATIO_AT_1NA {
        return Err(Error::Infeasible(format!(
            "temperature ratio: a 1 nA cell rises only {hot_ratio:.3}x by 85 C with i0={}, need >= {MIN_HOT_RATIO_AT_1NA}",
            d.i0
        )));
    }

    let vt = thermal_voltage(t_ref);
    let v_th_min = d.read_cg - d.n_slope_min * vt * (d.i_sat / d.i0).ln();
    let v_th_max = d.read_cg - d.n_slope_max * vt * (d.i_min / d.i0).ln();
    let dv = (v_th_max - v_th_min) / traversal;

    let mut out = base.clone();
    out.window.v_th_min = v_th_min;
    out.window.v_th_max = v_th_max;
    out.pulse.dv_program = dv;
    out.pulse.dv_erase = dv;
    Ok(out)
}

/// I(t_hot)/I(t_ref) for a cell reading `current` at `t_ref` under a fixed
/// gate voltage, with a temperature-independent prefactor.
pub fn hot_ratio(current: f64, i0: f64, t_ref: f64, t_hot: f64) -> f64 {
    (current / i0).powf(t_ref / t_hot - 1.0)
}

/// TOML text of a calibrated configuration, prefixed with provenance comments.
pub fn render_calibrated(cfg: &ModelConfig) -> String {
    let vt = thermal_voltage(cfg.device.reference_temperature);
    let step = cfg.pulse.dv_program / (cfg.device.n_slope_nominal() * vt);
    format!(
        "# calibrated by flashvmm {}\n\
         # window: standard readout spans [{:e}, {:e}] A at {} K\n\
         # nominal pulse: {:.4} V threshold shift, readout factor {:.4} at n={}\n\
         # 1 nA cell heats 25 C -> 85 C by {:.3}x\n\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.device.i_min,
        cfg.device.i_sat,
        cfg.device.reference_temperature,
        cfg.pulse.dv_program,
        (-step).exp(),
        cfg.device.n_slope_nominal(),
        hot_ratio(
            1e-9,
            cfg.device.i0,
            cfg.device.reference_temperature,
            HOT_TEMPERATURE
        ),
        cfg.to_toml()
    )
}
