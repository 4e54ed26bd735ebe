//! Physical constants and thermal-voltage helpers.

/// Boltzmann constant (J/K), exact SI value.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Elementary charge (C), exact SI value.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// 0 °C in kelvin.
pub const ZERO_CELSIUS: f64 = 273.15;

/// 25 °C, the room-temperature reference used throughout.
pub const ROOM_TEMPERATURE: f64 = 298.15;

/// 85 °C, the upper end of the characterized temperature range.
pub const HOT_TEMPERATURE: f64 = 358.15;

/// Lowest temperature accepted by the device model (K).
pub const MIN_TEMPERATURE: f64 = 250.0;

/// Highest temperature accepted by the device model (K).
pub const MAX_TEMPERATURE: f64 = 400.0;

/// Seconds in one day.
pub const DAY: f64 = 86_400.0;

/// k_B·T/q in volts.
pub fn thermal_voltage(temperature: f64) -> f64 {
    BOLTZMANN * temperature / ELEMENTARY_CHARGE
}

pub fn celsius(deg: f64) -> f64 {
    deg + ZERO_CELSIUS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thermal_voltage_at_room_temperature() {
        let vt = thermal_voltage(ROOM_TEMPERATURE);
        assert!((vt - 0.025_693).abs() < 1e-6, "{vt}");
    }

    #[test]
    fn celsius_conversion() {
        assert_eq!(celsius(25.0), ROOM_TEMPERATURE);
        assert_eq!(celsius(85.0), HOT_TEMPERATURE);
    }
}
