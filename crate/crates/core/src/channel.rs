//! Link-rate models: Shannon-formula GSL, constant-rate full-duplex laser
//! ISL, and capacity-per-slot conversion.
//!
//! ISL rates are configured in bytes/s while the GSL Shannon rate comes out
//! in bits/s; every conversion between the two goes through
//! [`bits_to_bytes`] / [`bytes_to_bits`].

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::constellation::slant_range_at_elevation_km;
use crate::error::{Result, SimError};

pub const SPEED_OF_LIGHT_M_S: f64 = 2.998e8;
pub const BOLTZMANN_J_K: f64 = 1.380649e-23;

pub fn bytes_to_bits(bytes: f64) -> f64 {
    bytes * 8.0
}

pub fn bits_to_bytes(bits: f64) -> f64 {
    bits / 8.0
}

/// RF ground-to-satellite link budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkBudget {
    pub carrier_hz: f64,
    pub tx_power_w: f64,
    pub tx_gain_lin: f64,
    pub rx_gain_lin: f64,
    pub bandwidth_hz: f64,
    pub noise_temp_k: f64,
    pub boltzmann: f64,
    pub min_elevation_deg: f64,
    pub access_time_s: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        // 32 GHz carrier, 40 dBm transmit power, 15/30 dBi gains, 62.5 MHz
        // bandwidth, 354 K noise temperature, 45 degree mask, 10 s access.
        Self {
            carrier_hz: 32e9,
            tx_power_w: 10.0,
            tx_gain_lin: 10f64.powf(1.5),
            rx_gain_lin: 1e3,
            bandwidth_hz: 62.5e6,
            noise_temp_k: 354.0,
            boltzmann: BOLTZMANN_J_K,
            min_elevation_deg: 45.0,
            access_time_s: 10.0,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("carrier_hz", self.carrier_hz),
            ("tx_power_w", self.tx_power_w),
            ("tx_gain_lin", self.tx_gain_lin),
            ("rx_gain_lin", self.rx_gain_lin),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_temp_k", self.noise_temp_k),
            ("boltzmann", self.boltzmann),
            ("access_time_s", self.access_time_s),
        ] {
            if !(v > 0.0) {
                return Err(SimError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=90.0).contains(&self.min_elevation_deg) {
            return Err(SimError::Config(format!(
                "min_elevation_deg must lie in [0, 90], got {}",
                self.min_elevation_deg
            )));
        }
        Ok(())
    }

    /// Slant range at exactly the minimum elevation angle; the reference
    /// operating point for per-round delay formulas.
    pub fn reference_distance_km(&self, altitude_km: f64, earth_radius_km: f64) -> f64 {
        slant_range_at_elevation_km(earth_radius_km, altitude_km, self.min_elevation_deg)
    }

    pub fn reference_rate_bps(&self, altitude_km: f64, earth_radius_km: f64) -> Result<f64> {
        gsl_rate_bps(self.reference_distance_km(altitude_km, earth_radius_km), self)
    }
}

/// Intra-orbit laser ISL: fixed byte rate, full duplex, per-chunk summation
/// overhead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IslSpec {
    pub rate_bytes_per_s: f64,
    pub full_duplex: bool,
    pub sum_time_s: f64,
}

impl Default for IslSpec {
    fn default() -> Self {
        Self {
            rate_bytes_per_s: 1e10,
            full_duplex: true,
            sum_time_s: 0.01,
        }
    }
}

impl IslSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_bytes_per_s > 0.0) {
            return Err(SimError::Config(format!(
                "rate_bytes_per_s must be positive, got {}",
                self.rate_bytes_per_s
            )));
        }
        if self.sum_time_s < 0.0 {
            return Err(SimError::Config(format!(
                "sum_time_s must be nonnegative, got {}",
                self.sum_time_s
            )));
        }
        Ok(())
    }
}

/// Free-space power gain `(c0 / (4 pi f_c d))^2` for distance in km.
pub fn free_space_gain(distance_km: f64, carrier_hz: f64) -> Result<f64> {
    if !(distance_km > 0.0) {
        return Err(SimError::Domain(format!(
            "free-space gain needs a positive distance, got {distance_km} km"
        )));
    }
    let d_m = distance_km * 1e3;
    let ratio = SPEED_OF_LIGHT_M_S / (4.0 * PI * carrier_hz * d_m);
    Ok(ratio * ratio)
}

/// Shannon rate `B log2(1 + H P_t G_t G_s / (B N0))` in bits/s.
pub fn gsl_rate_bps(distance_km: f64, budget: &LinkBudget) -> Result<f64> {
    let gain = free_space_gain(distance_km, budget.carrier_hz)?;
    let noise_density = budget.boltzmann * budget.noise_temp_k;
    let snr = gain * budget.tx_power_w * budget.tx_gain_lin * budget.rx_gain_lin
        / (budget.bandwidth_hz * noise_density);
    Ok(budget.bandwidth_hz * (1.0 + snr).log2())
}

/// Fraction of a `model_bytes`-sized model a link moves in one slot.
/// Deliberately unclamped; the flow graph's unit edges impose the cap.
pub fn gsl_capacity_fraction(rate_bps: f64, slot_s: f64, model_bytes: f64) -> f64 {
    bits_to_bytes(rate_bps * slot_s) / model_bytes
}

pub fn transmit_time_s(bytes: f64, rate_bytes_per_s: f64) -> f64 {
    bytes / rate_bytes_per_s
}
