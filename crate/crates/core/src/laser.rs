//! Four-level rate equations in equivalent-circuit form.
//!
//! The cavity is modeled as two coupled RC nodes with unit capacitance:
//! node 1 carries the photon density (`v1`, leak resistance `tau_c`), node 2
//! the upper-level population density (`v2`, leak resistance `tau_f`). The
//! controlled source `c·sigma·v1·v2` moves charge from node 2 to node 1, the
//! spontaneous seed `S` feeds node 1 and the pump rate feeds node 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::LaserParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LaserState {
    /// Photon density in the cavity, m^-3.
    pub v1: f64,
    /// Upper-level population density, m^-3.
    pub v2: f64,
}

impl LaserState {
    pub const ZERO: LaserState = LaserState { v1: 0.0, v2: 0.0 };

    pub fn new(v1: f64, v2: f64) -> Self {
        LaserState { v1, v2 }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.v1, self.v2]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        LaserState { v1: a[0], v2: a[1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub phi_ss: f64,
    pub n2_ss: f64,
    pub above_threshold: bool,
}

/// Time derivative of the state for a given pump rate `I3` (m^-3 s^-1).
pub fn rhs(state: LaserState, pump_rate: f64, params: &LaserParams) -> LaserState {
    let stimulated = params.c_medium * params.sigma * state.v1 * state.v2;
    LaserState {
        v1: stimulated - state.v1 / params.tau_c + params.s_spont,
        v2: -stimulated - state.v2 / params.tau_f + pump_rate,
    }
}

/// Energy of one laser photon, J.
pub fn photon_energy(params: &LaserParams) -> f64 {
    params.h_planck * params.nu_l
}

/// Pump rate `I3 = P_in / (h·nu_L·V)` for an optical pump power in watts.
pub fn pump_rate_from_power(p_in: f64, params: &LaserParams) -> f64 {
    p_in / (photon_energy(params) * params.gain_volume)
}

/// Inverse of [`pump_rate_from_power`].
pub fn power_from_pump_rate(pump_rate: f64, params: &LaserParams) -> f64 {
    pump_rate * photon_energy(params) * params.gain_volume
}

/// Optical output power for a photon density: `g·v1·h·nu_L·V/tau_c`.
pub fn output_power(v1: f64, params: &LaserParams) -> f64 {
    params.out_power_gain * v1 * photon_energy(params) * params.gain_volume / params.tau_c
}

/// Inversion density at which cavity gain balances loss, `1/(c·sigma·tau_c)`.
pub fn threshold_density(params: &LaserParams) -> f64 {
    1.0 / (params.c_medium * params.sigma * params.tau_c)
}

/// Pump rate that sustains the threshold density against fluorescence.
pub fn threshold_pump_rate(params: &LaserParams) -> f64 {
    threshold_density(params) / params.tau_f
}

/// Optical pump power at threshold, W.
pub fn threshold_power(params: &LaserParams) -> f64 {
    power_from_pump_rate(threshold_pump_rate(params), params)
}

/// Pump rate normalized to threshold, `r = I3·tau_f/n_th`.
pub fn pump_ratio(pump_rate: f64, params: &LaserParams) -> f64 {
    pump_rate / threshold_pump_rate(params)
}

/// Closed-form fixed point of the rate equations with the spontaneous seed
/// set to zero.
pub fn analytic_steady_state(pump_rate: f64, params: &LaserParams) -> SteadyState {
    let n_th = threshold_density(params);
    let r_th = n_th / params.tau_f;
    if pump_rate <= r_th {
        SteadyState {
            phi_ss: 0.0,
            n2_ss: pump_rate * params.tau_f,
            above_threshold: false,
        }
    } else {
        SteadyState {
            phi_ss: params.tau_c * (pump_rate - r_th),
            n2_ss: n_th,
            above_threshold: true,
        }
    }
}

/// Undamped small-signal relaxation frequency (rad/s) for pump ratio `r`.
pub fn relaxation_frequency(pump_ratio: f64, params: &LaserParams) -> Result<f64> {
    if !(pump_ratio > 1.0) {
        return Err(Error::BelowThreshold(pump_ratio));
    }
    Ok(((pump_ratio - 1.0) / (params.tau_c * params.tau_f)).sqrt())
}

/// Damping rate (1/s) of the small-signal response about the lasing fixed
/// point. The linearization is oscillatory only when this is below
/// [`relaxation_frequency`].
pub fn relaxation_damping(pump_ratio: f64, params: &LaserParams) -> f64 {
    pump_ratio / (2.0 * params.tau_f)
}

/// Small-signal transfer function from pump power to output power, W/W,
/// evaluated at angular frequency `omega` about the fixed point at
/// `pump_ratio` (seed neglected). Returns `(magnitude, phase)`.
pub fn small_signal_gain(omega: f64, pump_ratio: f64, params: &LaserParams) -> (f64, f64) {
    // H(s) = g·w0² / (s² + (r/tau_f)·s + w0²), w0² = (r-1)/(tau_c·tau_f)
    let w0sq = (pump_ratio - 1.0) / (params.tau_c * params.tau_f);
    let re = w0sq - omega * omega;
    let im = omega * pump_ratio / params.tau_f;
    let den = (re * re + im * im).sqrt();
    let mag = params.out_power_gain * w0sq / den;
    let phase = -im.atan2(re);
    (mag, phase)
}
