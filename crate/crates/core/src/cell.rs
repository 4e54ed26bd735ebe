//! Behavioral model of a single floating-gate cell.
//!
//! Readout follows the subthreshold law
//! `I = i0 * exp((v_cg - v_th) / (n * kT/q))`, gated by the word line and
//! clamped at the saturation ceiling. Program pulses raise `v_th` (less
//! current), erase pulses lower it; each pulse is scaled by a select factor
//! computed from the terminal biases so half-selected cells barely move.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, NoiseParams, WindowConfig};
use crate::error::{Error, Result};
use crate::physics::{thermal_voltage, DAY, MAX_TEMPERATURE, MIN_TEMPERATURE};

/// Largest terminal voltage magnitude any protocol applies.
pub const MAX_TERMINAL_VOLTAGE: f64 = 12.0;

/// Analog state of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub v_th: f64,
    pub n_slope: f64,
    pub i0: f64,
    pub noise: NoiseParams,
    pub rng_seed: u64,
}

impl CellState {
    /// Fresh stochastic stream for this cell.
    pub fn stream(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }
}

/// Terminal voltages of a cell (volts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCondition {
    pub v_wl: f64,
    pub v_cg: f64,
    pub v_d: f64,
    pub v_s: f64,
    pub v_eg: f64,
}

impl BiasCondition {
    /// Standard readout bias.
    pub const STANDARD_READ: Self = Self {
        v_wl: 2.5,
        v_cg: 2.5,
        v_d: 1.0,
        v_s: 0.0,
        v_eg: 0.0,
    };

    pub fn with_cg(self, v_cg: f64) -> Self {
        Self { v_cg, ..self }
    }

    pub fn with_drain(self, v_d: f64) -> Self {
        Self { v_d, ..self }
    }

    pub fn terminals(&self) -> [f64; 5] {
        [self.v_wl, self.v_cg, self.v_d, self.v_s, self.v_eg]
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.terminals() {
            if !v.is_finite() || v.abs() > MAX_TERMINAL_VOLTAGE {
                return Err(Error::InvalidArgument(format!(
                    "bias voltage {v} is not finite or exceeds {MAX_TERMINAL_VOLTAGE} V"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PulseKind {
    Program,
    Erase,
}

impl PulseKind {
    pub fn opposite(self) -> Self {
        match self {
            PulseKind::Program => PulseKind::Erase,
            PulseKind::Erase => PulseKind::Program,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub kind: PulseKind,
    pub amplitude: f64,
    pub duration: f64,
}

impl PulseSpec {
    /// 4.5 V, 10 µs source-line pulse.
    pub fn program() -> Self {
        Self {
            kind: PulseKind::Program,
            amplitude: 4.5,
            duration: 10e-6,
        }
    }

    /// 11.5 V, 0.5 ms erase-gate pulse.
    pub fn erase() -> Self {
        Self {
            kind: PulseKind::Erase,
            amplitude: 11.5,
            duration: 0.5e-3,
        }
    }

    pub fn nominal(kind: PulseKind) -> Self {
        match kind {
            PulseKind::Program => Self::program(),
            PulseKind::Erase => Self::erase(),
        }
    }

    /// Same pulse with its duration scaled by `fraction`.
    pub fn scaled(self, fraction: f64) -> Self {
        Self {
            duration: self.duration * fraction,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pulse duration must be finite and non-negative, got {}",
                self.duration
            )));
        }
        if !self.amplitude.is_finite() || self.amplitude.abs() > MAX_TERMINAL_VOLTAGE {
            return Err(Error::InvalidArgument(format!(
                "pulse amplitude {} out of range",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// The device model: a validated configuration plus the operations on cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellModel {
    cfg: ModelConfig,
}

impl CellModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn window(&self) -> WindowConfig {
        self.cfg.window
    }

    /// A new cell at `v_th` (clamped into the window).
    pub fn cell(&self, v_th: f64, n_slope: f64, rng_seed: u64) -> CellState {
        CellState {
            v_th: self.cfg.window.clamp(v_th),
            n_slope,
            i0: self.cfg.device.i0,
            noise: self.cfg.noise,
            rng_seed,
        }
    }

    /// Threshold voltage at which `cell` reads `current` under standard bias
    /// at `temperature`, ignoring the window clamp.
    pub fn v_th_for_current(&self, n_slope: f64, current: f64, temperature: f64) -> f64 {
        self.cfg.device.read_cg
            - n_slope * thermal_voltage(temperature) * (current / self.cfg.device.i0).ln()
    }

    /// Readout current of a cell whose threshold sits at the window center.
    pub fn reference_current(&self, n_slope: f64) -> f64 {
        let d = &self.cfg.device;
        let vt = thermal_voltage(d.reference_temperature);
        d.i0 * ((d.read_cg - self.cfg.window.center()) / (n_slope * vt)).exp()
    }

    fn check_temperature(temperature: f64) -> Result<()> {
        if !(MIN_TEMPERATURE..=MAX_TEMPERATURE).contains(&temperature) {
            return Err(Error::InvalidArgument(format!(
                "temperature {temperature} K outside [{MIN_TEMPERATURE}, {MAX_TEMPERATURE}] K"
            )));
        }
        Ok(())
    }

    /// Deterministic drain current (A).
    pub fn drain_current(
        &self,
        cell: &CellState,
        bias: &BiasCondition,
        temperature: f64,
    ) -> Result<f64> {
        Self::check_temperature(temperature)?;
        bias.validate()?;
        if bias.v_wl < self.cfg.device.wl_on_threshold {
            return Ok(0.0);
        }
        let exponent = (bias.v_cg - cell.v_th) / (cell.n_slope * thermal_voltage(temperature));
        Ok((cell.i0 * exponent.exp()).min(self.cfg.device.i_sat))
    }

    /// Mean of `samples` noisy readouts drawn from `rng`.
    pub fn readout_noisy<R: Rng + ?Sized>(
        &self,
        cell: &CellState,
        bias: &BiasCondition,
        temperature: f64,
        samples: usize,
        rng: &mut R,
    ) -> Result<f64> {
        if samples == 0 {
            return Err(Error::InvalidArgument("samples must be at least 1".into()));
        }
        let ideal = self.drain_current(cell, bias, temperature)?;
        if ideal == 0.0 {
            return Ok(0.0);
        }
        let sigma = cell.noise.relative_sigma(ideal);
        if sigma == 0.0 {
            return Ok(ideal);
        }
        let mut sum = 0.0;
        for _ in 0..samples {
            let eps: f64 = rng.sample(StandardNormal);
            sum += ideal * (1.0 + sigma * eps).max(f64::EPSILON);
        }
        Ok(sum / samples as f64)
    }

    /// Select factor for hot-electron programming: the channel (source minus
    /// drain) curve times the erase-gate-to-bit-line curve.
    pub fn program_select_factor(&self, bias: &BiasCondition) -> f64 {
        let inh = &self.cfg.inhibition;
        inh.program_drain.factor(bias.v_s - bias.v_d)
            * inh.program_column.factor(bias.v_eg - bias.v_d)
    }

    /// Select factor for Fowler-Nordheim erasure: driven by the erase-gate
    /// to coupling-gate voltage.
    pub fn erase_select_factor(&self, bias: &BiasCondition) -> f64 {
        self.cfg.inhibition.erase.factor(bias.v_eg - bias.v_cg)
    }

    pub fn select_factor(&self, kind: PulseKind, bias: &BiasCondition) -> f64 {
        match kind {
            PulseKind::Program => self.program_select_factor(bias),
            PulseKind::Erase => self.erase_select_factor(bias),
        }
    }

    /// Nominal threshold shift of one full-select pulse (V).
    pub fn nominal_shift(&self, kind: PulseKind) -> f64 {
        match kind {
            PulseKind::Program => self.cfg.pulse.dv_program,
            PulseKind::Erase => self.cfg.pulse.dv_erase,
        }
    }

    fn nominal_duration(&self, kind: PulseKind) -> f64 {
        match kind {
            PulseKind::Program => self.cfg.pulse.program_duration,
            PulseKind::Erase => self.cfg.pulse.erase_duration,
        }
    }

    /// Nominal |Δln I| of one full-select pulse for the mid-range slope factor.
    pub fn nominal_log_step(&self, kind: PulseKind) -> f64 {
        let d = &self.cfg.device;
        self.nominal_shift(kind) / (d.n_slope_nominal() * thermal_voltage(d.reference_temperature))
    }

    fn variability<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let rel = self.cfg.pulse.variability;
        if rel == 0.0 {
            return 1.0;
        }
        // mean 1, standard deviation `rel`
        let s2 = (1.0 + rel * rel).ln();
        LogNormal::new(-0.5 * s2, s2.sqrt())
            .expect("lognormal parameters are finite")
            .sample(rng)
    }

    /// Applies one pulse of either kind.
    pub fn apply_pulse<R: Rng + ?Sized>(
        &self,
        cell: &CellState,
        pulse: &PulseSpec,
        bias: &BiasCondition,
        rng: &mut R,
    ) -> Result<CellState> {
        pulse.validate()?;
        bias.validate()?;
        if pulse.duration == 0.0 {
            return Ok(*cell);
        }
        let kind = pulse.kind;
        let shift = self.nominal_shift(kind)
            * (pulse.duration / self.nominal_duration(kind))
            * self.select_factor(kind, bias)
            * self.variability(rng);
        let v_th = match kind {
            PulseKind::Program => cell.v_th + shift,
            PulseKind::Erase => cell.v_th - shift,
        };
        Ok(CellState {
            v_th: self.cfg.window.clamp(v_th),
            ..*cell
        })
    }

    pub fn apply_program_pulse<R: Rng + ?Sized>(
        &self,
        cell: &CellState,
        pulse: &PulseSpec,
        bias: &BiasCondition,
        rng: &mut R,
    ) -> Result<CellState> {
        if pulse.kind != PulseKind::Program {
            return Err(Error::InvalidArgument("expected a program pulse".into()));
        }
        self.apply_pulse(cell, pulse, bias, rng)
    }

    pub fn apply_erase_pulse<R: Rng + ?Sized>(
        &self,
        cell: &CellState,
        pulse: &PulseSpec,
        bias: &BiasCondition,
        rng: &mut R,
    ) -> Result<CellState> {
        if pulse.kind != PulseKind::Erase {
            return Err(Error::InvalidArgument("expected an erase pulse".into()));
        }
        self.apply_pulse(cell, pulse, bias, rng)
    }

    /// Holds the cell unbiased for `duration` seconds. With the default
    /// configuration the state does not move; a non-zero
    /// `retention.sigma_per_day` adds a random walk whose readout deviation
    /// has that relative standard deviation after one day.
    pub fn retention_hold<R: Rng + ?Sized>(
        &self,
        cell: &CellState,
        duration: f64,
        temperature: f64,
        rng: &mut R,
    ) -> Result<CellState> {
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "hold duration {duration} must be non-negative"
            )));
        }
        Self::check_temperature(temperature)?;
        let sigma = self.cfg.retention.sigma_per_day;
        if duration == 0.0 || sigma == 0.0 {
            return Ok(*cell);
        }
        let z: f64 = rng.sample(StandardNormal);
        let dv = cell.n_slope * thermal_voltage(temperature) * sigma * (duration / DAY).sqrt() * z;
        Ok(CellState {
            v_th: self.cfg.window.clamp(cell.v_th + dv),
            ..*cell
        })
    }

    /// True when the threshold sits on the window edge a pulse of `kind`
    /// pushes toward.
    pub fn at_edge(&self, cell: &CellState, kind: PulseKind) -> bool {
        match kind {
            PulseKind::Program => cell.v_th >= self.cfg.window.v_th_max,
            PulseKind::Erase => cell.v_th <= self.cfg.window.v_th_min,
        }
    }
}
