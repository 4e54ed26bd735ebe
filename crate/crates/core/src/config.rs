//! Model configuration.
//!
//! Everything the device model needs is collected in [`ModelConfig`], which
//! round-trips through TOML. Keys (with defaults):
//!
//! ```toml
//! seed = 1
//!
//! [device]
//! i0 = 1e-3                     # prefactor current (A)
//! n_slope_min = 5.0             # subthreshold slope factor range
//! n_slope_max = 5.1
//! i_min = 1e-10                 # bottom of the tunable current range (A)
//! i_sat = 1e-6                  # saturation ceiling, top of the range (A)
//! reference_temperature = 298.15
//! read_cg = 2.5                 # coupling-gate voltage of the standard readout (V)
//! wl_on_threshold = 1.0         # word line acts as a pass switch above this (V)
//!
//! [window]                      # derived by `calibrate`
//! v_th_min = ...
//! v_th_max = ...
//!
//! [pulse]
//! program_amplitude = 4.5
//! program_duration = 1e-5
//! erase_amplitude = 11.5
//! erase_duration = 5e-4
//! traversal_pulses = 20         # nominal pulses for a full window traversal
//! dv_program = ...              # derived by `calibrate`
//! dv_erase = ...                # derived by `calibrate`
//! variability = 0.3             # relative std of the lognormal shift multiplier
//!
//! [inhibition.program_drain]    # x = v_s - v_d
//! midpoint = 3.0
//! width = 0.12
//! full_select = 4.0
//! [inhibition.program_column]   # x = v_eg - v_d
//! midpoint = 1.0
//! width = 0.3
//! full_select = 4.0
//! [inhibition.erase]            # x = v_eg - v_cg
//! midpoint = 7.0
//! width = 0.4
//! full_select = 11.5
//!
//! [noise]
//! sigma_low = 0.04
//! sigma_high = 0.0097           # kept under 1% with sampling margin
//! i_low_anchor = 1e-10
//! i_high_anchor = 1e-8
//!
//! [retention]
//! sigma_per_day = 0.0           # random-walk relative current deviation per day
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub seed: u64,
    pub device: DeviceConfig,
    pub window: WindowConfig,
    pub pulse: PulseConfig,
    pub inhibition: InhibitionConfig,
    pub noise: NoiseParams,
    pub retention: RetentionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub i0: f64,
    pub n_slope_min: f64,
    pub n_slope_max: f64,
    pub i_min: f64,
    pub i_sat: f64,
    pub reference_temperature: f64,
    pub read_cg: f64,
    pub wl_on_threshold: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            i0: 1e-3,
            n_slope_min: 5.0,
            n_slope_max: 5.1,
            i_min: 1e-10,
            i_sat: 1e-6,
            reference_temperature: crate::physics::ROOM_TEMPERATURE,
            read_cg: 2.5,
            wl_on_threshold: 1.0,
        }
    }
}

impl DeviceConfig {
    pub fn n_slope_nominal(&self) -> f64 {
        0.5 * (self.n_slope_min + self.n_slope_max)
    }
}

/// Tunable threshold-voltage window. Both edges are derived quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub v_th_min: f64,
    pub v_th_max: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        // Placeholder; `ModelConfig::default` replaces it with calibrated values.
        Self {
            v_th_min: 0.0,
            v_th_max: 0.0,
        }
    }
}

impl WindowConfig {
    pub fn center(&self) -> f64 {
        0.5 * (self.v_th_min + self.v_th_max)
    }

    pub fn width(&self) -> f64 {
        self.v_th_max - self.v_th_min
    }

    pub fn clamp(&self, v_th: f64) -> f64 {
        v_th.clamp(self.v_th_min, self.v_th_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseConfig {
    pub program_amplitude: f64,
    pub program_duration: f64,
    pub erase_amplitude: f64,
    pub erase_duration: f64,
    pub traversal_pulses: f64,
    pub dv_program: f64,
    pub dv_erase: f64,
    pub variability: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            program_amplitude: 4.5,
            program_duration: 10e-6,
            erase_amplitude: 11.5,
            erase_duration: 0.5e-3,
            traversal_pulses: 20.0,
            dv_program: 0.0,
            dv_erase: 0.0,
            variability: 0.3,
        }
    }
}

/// Normalized logistic select curve: 1 at `full_select`, falling toward 0
/// as the control variable drops below `midpoint`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticCurve {
    pub midpoint: f64,
    pub width: f64,
    pub full_select: f64,
}

impl LogisticCurve {
    fn raw(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-(x - self.midpoint) / self.width).exp())
    }

    pub fn factor(&self, x: f64) -> f64 {
        (self.raw(x) / self.raw(self.full_select)).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InhibitionConfig {
    pub program_drain: LogisticCurve,
    pub program_column: LogisticCurve,
    pub erase: LogisticCurve,
}

impl Default for InhibitionConfig {
    fn default() -> Self {
        Self {
            program_drain: LogisticCurve {
                midpoint: 3.0,
                width: 0.12,
                full_select: 4.0,
            },
            program_column: LogisticCurve {
                midpoint: 1.0,
                width: 0.3,
                full_select: 4.0,
            },
            erase: LogisticCurve {
                midpoint: 7.0,
                width: 0.4,
                full_select: 11.5,
            },
        }
    }
}

/// Read-noise statistics: relative r.m.s. interpolated log-linearly between
/// two current anchors and held constant outside them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub i_low_anchor: f64,
    pub i_high_anchor: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma_low: 0.04,
            sigma_high: 0.0097,
            i_low_anchor: 100e-12,
            i_high_anchor: 10e-9,
        }
    }
}

impl NoiseParams {
    pub fn silent() -> Self {
        Self {
            sigma_low: 0.0,
            sigma_high: 0.0,
            ..Self::default()
        }
    }

    pub fn relative_sigma(&self, current: f64) -> f64 {
        if current <= self.i_low_anchor {
            return self.sigma_low;
        }
        if current >= self.i_high_anchor {
            return self.sigma_high;
        }
        let t = (current / self.i_low_anchor).ln() / (self.i_high_anchor / self.i_low_anchor).ln();
        self.sigma_low + (self.sigma_high - self.sigma_low) * t
    }

    pub fn validate(&self) -> Result<()> {
        let ordered =
            0.0 <= self.sigma_high && self.sigma_high <= self.sigma_low && self.sigma_low <= 0.10;
        if !ordered {
            return Err(Error::InvalidArgument(format!(
                "noise sigmas must satisfy 0 <= sigma_high <= sigma_low <= 0.10, got {} / {}",
                self.sigma_high, self.sigma_low
            )));
        }
        if !(self.i_low_anchor > 0.0 && self.i_high_anchor > self.i_low_anchor) {
            return Err(Error::InvalidArgument(
                "noise anchors must satisfy 0 < i_low_anchor < i_high_anchor".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetentionConfig {
    pub sigma_per_day: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let base = Self {
            seed: 1,
            device: DeviceConfig::default(),
            window: WindowConfig::default(),
            pulse: PulseConfig::default(),
            inhibition: InhibitionConfig::default(),
            noise: NoiseParams::default(),
            retention: RetentionConfig::default(),
        };
        crate::calibrate::calibrate(&base).expect("default configuration calibrates")
    }
}

impl ModelConfig {
    /// A calibrated configuration with read noise and pulse variability off.
    pub fn noiseless() -> Self {
        let base = Self::default();
        Self {
            noise: NoiseParams::silent(),
            pulse: PulseConfig {
                variability: 0.0,
                ..base.pulse
            },
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.device;
        let finite = [
            d.i0,
            d.n_slope_min,
            d.n_slope_max,
            d.i_min,
            d.i_sat,
            d.reference_temperature,
            d.read_cg,
            d.wl_on_threshold,
            self.window.v_th_min,
            self.window.v_th_max,
            self.pulse.dv_program,
            self.pulse.dv_erase,
            self.pulse.variability,
            self.retention.sigma_per_day,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument(
                "configuration contains non-finite values".into(),
            ));
        }
        if d.i0 <= 0.0 {
            return Err(Error::InvalidArgument("i0 must be positive".into()));
        }
        if !(d.n_slope_min > 0.0 && d.n_slope_min <= d.n_slope_max) {
            return Err(Error::InvalidArgument(
                "n_slope range must be positive and ordered".into(),
            ));
        }
        if !(d.i_min > 0.0 && d.i_min < d.i_sat) {
            return Err(Error::InvalidArgument(
                "current range must satisfy 0 < i_min < i_sat".into(),
            ));
        }
        if self.window.v_th_max <= self.window.v_th_min {
            return Err(Error::InvalidArgument(
                "threshold window is empty; run calibrate".into(),
            ));
        }
        if self.pulse.program_duration <= 0.0 || self.pulse.erase_duration <= 0.0 {
            return Err(Error::InvalidArgument(
                "nominal pulse durations must be positive".into(),
            ));
        }
        if self.pulse.dv_program < 0.0 || self.pulse.dv_erase < 0.0 || self.pulse.variability < 0.0
        {
            return Err(Error::InvalidArgument(
                "pulse shifts and variability must be non-negative".into(),
            ));
        }
        if self.retention.sigma_per_day < 0.0 {
            return Err(Error::InvalidArgument(
                "retention sigma must be non-negative".into(),
            ));
        }
        self.noise.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model configuration serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Short content hash used to tag generated artifacts.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}
