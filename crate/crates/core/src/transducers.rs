//! Electrical/optical conversions at both ends of the link: the pump
//! source and its drive waveform, the receiver beam splitter, the
//! photovoltaic panel and the photodiode.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ChannelParams, PumpParams, PvParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Waveform {
    Constant,
    OokBits,
    Sinusoid { frequency: f64, amplitude: f64 },
}

/// Optical pump power as a function of time: a constant bias plus a
/// modulated term that switches on at `signal_delay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpDrive {
    pub bias_power: f64,
    pub signal_amplitude: f64,
    pub bit_rate: f64,
    pub bits: Vec<bool>,
    pub signal_delay: f64,
    pub waveform: Waveform,
    /// Cycle through `bits` indefinitely instead of returning to the bias
    /// level after the last symbol.
    pub repeat_bits: bool,
}

impl PumpDrive {
    pub fn constant(bias_power: f64) -> Self {
        PumpDrive {
            bias_power,
            signal_amplitude: 0.0,
            bit_rate: 1.0,
            bits: Vec::new(),
            signal_delay: 0.0,
            waveform: Waveform::Constant,
            repeat_bits: false,
        }
    }

    pub fn ook(bias_power: f64, amplitude: f64, bit_rate: f64, bits: Vec<bool>, delay: f64) -> Self {
        PumpDrive {
            bias_power,
            signal_amplitude: amplitude,
            bit_rate,
            bits,
            signal_delay: delay,
            waveform: Waveform::OokBits,
            repeat_bits: false,
        }
    }

    pub fn sinusoid(bias_power: f64, frequency: f64, amplitude: f64, delay: f64) -> Self {
        PumpDrive {
            bias_power,
            signal_amplitude: 0.0,
            bit_rate: 1.0,
            bits: Vec::new(),
            signal_delay: delay,
            waveform: Waveform::Sinusoid { frequency, amplitude },
            repeat_bits: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if !(self.bias_power >= 0.0) || !self.bias_power.is_finite() {
            return bad("bias_power must be finite and >= 0");
        }
        if !(self.signal_amplitude >= 0.0) || !self.signal_amplitude.is_finite() {
            return bad("signal_amplitude must be finite and >= 0");
        }
        if !(self.signal_delay >= 0.0) || !self.signal_delay.is_finite() {
            return bad("signal_delay must be finite and >= 0");
        }
        if !(self.bit_rate > 0.0) || !self.bit_rate.is_finite() {
            return bad("bit_rate must be finite and > 0");
        }
        if let Waveform::Sinusoid { frequency, amplitude } = self.waveform {
            if !(frequency > 0.0) || !frequency.is_finite() {
                return bad("sine_frequency must be finite and > 0");
            }
            if !(amplitude >= 0.0) || amplitude > self.bias_power {
                return bad("sine_amplitude must lie in [0, bias_power]");
            }
        }
        Ok(())
    }

    fn symbol_index(&self, t: f64) -> Option<usize> {
        if t < self.signal_delay {
            return None;
        }
        let x = (t - self.signal_delay) * self.bit_rate;
        let mut k = x.floor() as usize;
        // Agree with the edge times produced by `edge_time`.
        if self.edge_time(k + 1) <= t {
            k += 1;
        }
        Some(k)
    }

    fn edge_time(&self, k: usize) -> f64 {
        self.signal_delay + k as f64 / self.bit_rate
    }

    fn bit(&self, k: usize) -> bool {
        if self.bits.is_empty() {
            return false;
        }
        if self.repeat_bits {
            self.bits[k % self.bits.len()]
        } else {
            self.bits.get(k).copied().unwrap_or(false)
        }
    }

    /// Instantaneous pump power, W. Right-continuous at symbol edges.
    pub fn power_at(&self, t: f64) -> f64 {
        match self.waveform {
            Waveform::Constant => self.bias_power,
            Waveform::OokBits => match self.symbol_index(t) {
                Some(k) if self.bit(k) => self.bias_power + self.signal_amplitude,
                _ => self.bias_power,
            },
            Waveform::Sinusoid { frequency, amplitude } => {
                if t < self.signal_delay {
                    self.bias_power
                } else {
                    self.bias_power + amplitude * (2.0 * PI * frequency * (t - self.signal_delay)).sin()
                }
            }
        }
    }

    /// Times in `(0, t_end)` where the drive is discontinuous or has a kink.
    pub fn breakpoints(&self, t_end: f64) -> Vec<f64> {
        let mut out = Vec::new();
        match self.waveform {
            Waveform::Constant => {}
            Waveform::Sinusoid { .. } => {
                if self.signal_delay > 0.0 && self.signal_delay < t_end {
                    out.push(self.signal_delay);
                }
            }
            Waveform::OokBits => {
                if self.bits.is_empty() {
                    return out;
                }
                let mut prev = false;
                let mut k = 0usize;
                loop {
                    let te = self.edge_time(k);
                    if te >= t_end {
                        break;
                    }
                    if !self.repeat_bits && k > self.bits.len() {
                        break;
                    }
                    let cur = self.bit(k);
                    if cur != prev && te > 0.0 {
                        out.push(te);
                    }
                    prev = cur;
                    k += 1;
                }
            }
        }
        out
    }

    /// Largest integrator step that still resolves the waveform.
    pub fn max_step(&self) -> f64 {
        match self.waveform {
            Waveform::Sinusoid { frequency, .. } => 1.0 / (16.0 * frequency),
            _ => f64::INFINITY,
        }
    }
}

/// Pump optical output for a drive current: `(h·c/(q·lambda))·eta_e·(I - I_th)`,
/// zero below threshold.
pub fn pump_power_from_current(i_in: f64, pp: &PumpParams) -> f64 {
    let slope = pp.h_planck * pp.c_vacuum / (pp.q_charge * pp.lambda_emission) * pp.eta_e;
    slope * (i_in - pp.i_th).max(0.0)
}

/// Beam splitter: returns `(p_charge, p_comm)` with `p_charge = lambda·p_total`.
/// The two parts sum to `p_total` exactly: the larger share is rounded and
/// the smaller one obtained by an exact subtraction.
pub fn split(p_total: f64, lambda: f64) -> (f64, f64) {
    if lambda >= 0.5 {
        let p_charge = lambda * p_total;
        (p_charge, p_total - p_charge)
    } else {
        let p_comm = (1.0 - lambda) * p_total;
        (p_total - p_comm, p_comm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvOperatingPoint {
    pub v_out: f64,
    pub i_out: f64,
    pub p_elec: f64,
}

/// Photocurrent from the optical power delivered to the panel.
pub fn pv_photocurrent(p_e: f64, pv: &PvParams) -> f64 {
    pv.rho1 * (pv.transmission * p_e + pv.offset_c)
}

/// Static chain from pump current straight to photocurrent, bypassing the
/// cavity dynamics.
pub fn static_chain_photocurrent(i_in: f64, pp: &PumpParams, pv: &PvParams) -> f64 {
    pv_photocurrent(pump_power_from_current(i_in, pp), pv)
}

fn diode_scale(pv: &PvParams) -> f64 {
    pv.n_s as f64 * pv.n_ideality * pv.v_t
}

/// Kirchhoff residual `I_ph - I_L - V_L/R_sh - I_out` at a candidate point.
pub fn pv_residual(i_out: f64, v_out: f64, i_ph: f64, pv: &PvParams) -> f64 {
    let v_l = v_out + i_out * pv.r_s;
    let i_l = pv.i0 * (v_l / diode_scale(pv)).exp_m1();
    i_ph - i_l - v_l / pv.r_sh - i_out
}

fn pv_residual_and_slope(i_out: f64, v_out: f64, i_ph: f64, pv: &PvParams) -> (f64, f64) {
    let a = diode_scale(pv);
    let v_l = v_out + i_out * pv.r_s;
    let e = (v_l / a).exp();
    let f = i_ph - pv.i0 * (e - 1.0) - v_l / pv.r_sh - i_out;
    let df = -pv.i0 * e * pv.r_s / a - pv.r_s / pv.r_sh - 1.0;
    (f, df)
}

/// Safeguarded Newton iteration for a decreasing function with
/// `f(lo) >= 0 >= f(hi)`.
fn newton_decreasing(f: impl Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64, start: f64, tol: f64) -> Result<f64> {
    let (lo0, hi0) = (lo, hi);
    let mut x = start.clamp(lo, hi);
    let mut best = (f64::INFINITY, x);
    for _ in 0..500 {
        let (fx, dfx) = f(x);
        if !fx.is_finite() {
            return Err(Error::PvNoConvergence { lo: lo0, hi: hi0 });
        }
        if fx.abs() < best.0 {
            best = (fx.abs(), x);
        }
        if fx.abs() <= tol {
            return Ok(x);
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 2.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            // Bracket exhausted at floating-point resolution.
            return Ok(best.1);
        }
        let mut xn = x - fx / dfx;
        if !(xn > lo && xn < hi) || !xn.is_finite() {
            xn = 0.5 * (lo + hi);
        }
        x = xn;
    }
    if best.0 <= 1e-10 {
        Ok(best.1)
    } else {
        Err(Error::PvNoConvergence { lo: lo0, hi: hi0 })
    }
}

const PV_TOL: f64 = 1e-13;

/// Terminal voltage at zero current.
pub fn open_circuit_voltage(i_ph: f64, pv: &PvParams) -> Result<f64> {
    if i_ph <= 0.0 {
        return Ok(0.0);
    }
    let a = diode_scale(pv);
    let hi = a * (i_ph / pv.i0).ln_1p();
    let g = |v: f64| {
        let e = (v / a).exp();
        (i_ph - pv.i0 * (e - 1.0) - v / pv.r_sh, -pv.i0 * e / a - 1.0 / pv.r_sh)
    };
    newton_decreasing(g, 0.0, hi, hi, PV_TOL)
}

/// Solve the panel current at `v_out` starting Newton from `i_start`.
pub fn pv_current_from(i_ph: f64, pv: &PvParams, v_out: f64, i_start: f64) -> Result<f64> {
    let v_oc = open_circuit_voltage(i_ph, pv)?;
    if v_out < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "terminal voltage {v_out} V is negative"
        )));
    }
    if v_out > v_oc * (1.0 + 1e-12) + 1e-15 {
        return Err(Error::AboveOpenCircuit { v_out, v_oc });
    }
    let f = |i: f64| pv_residual_and_slope(i, v_out, i_ph, pv);
    // f(0) >= 0 for v_out <= v_oc and f(i_ph) <= 0 for v_out >= 0.
    newton_decreasing(f, 0.0, i_ph.max(0.0), i_start, PV_TOL)
}

/// Operating point of the panel for a fixed terminal voltage.
pub fn pv_operating_point(i_ph: f64, pv: &PvParams, v_out: f64) -> Result<PvOperatingPoint> {
    if i_ph < 0.0 {
        return Err(Error::InvalidArgument(format!("negative photocurrent {i_ph}")));
    }
    let i_out = pv_current_from(i_ph, pv, v_out, i_ph)?;
    Ok(PvOperatingPoint {
        v_out,
        i_out,
        p_elec: v_out * i_out,
    })
}

/// Maximum power point by golden-section search over `[0, V_oc]`.
pub fn pv_max_power(i_ph: f64, pv: &PvParams) -> Result<PvOperatingPoint> {
    if i_ph < 0.0 {
        return Err(Error::InvalidArgument(format!("negative photocurrent {i_ph}")));
    }
    let v_oc = open_circuit_voltage(i_ph, pv)?;
    if v_oc <= 0.0 {
        return Ok(PvOperatingPoint {
            v_out: 0.0,
            i_out: i_ph,
            p_elec: 0.0,
        });
    }
    let power = |v: f64| -> Result<f64> { Ok(v * pv_current_from(i_ph, pv, v, i_ph)?) };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, v_oc);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = power(c)?;
    let mut fd = power(d)?;
    while b - a > 1e-12 * v_oc {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = power(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = power(d)?;
        }
    }
    pv_operating_point(i_ph, pv, 0.5 * (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChargeMode {
    MaxPower,
    FixedVoltage(f64),
}

/// Electrical charging power for an optical input on the panel.
pub fn charging_point(p_e: f64, pv: &PvParams, mode: ChargeMode) -> Result<PvOperatingPoint> {
    let i_ph = pv_photocurrent(p_e, pv);
    match mode {
        ChargeMode::MaxPower => pv_max_power(i_ph, pv),
        ChargeMode::FixedVoltage(v) => pv_operating_point(i_ph, pv, v),
    }
}

/// Photodiode current `rho2·P_C`.
pub fn pd_current(p_c: f64, ch: &ChannelParams) -> f64 {
    ch.rho2 * p_c
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv() -> PvParams {
        PvParams::default()
    }

    #[test]
    fn pump_threshold_and_slope() {
        let pp = PumpParams::default();
        assert_eq!(pump_power_from_current(pp.i_th, &pp), 0.0);
        assert_eq!(pump_power_from_current(0.0, &pp), 0.0);
        let slope = pp.h_planck * pp.c_vacuum / (pp.q_charge * pp.lambda_emission) * pp.eta_e;
        let p1 = pump_power_from_current(pp.i_th + 1.0, &pp);
        let p3 = pump_power_from_current(pp.i_th + 3.0, &pp);
        assert!(((p3 - p1) / 2.0 - slope).abs() < 1e-12 * slope);
    }

    #[test]
    fn pump_808nm_example() {
        let pp = PumpParams {
            eta_e: 0.8,
            i_th: 0.0,
            lambda_emission: 808e-9,
            q_charge: 1.602e-19,
            c_vacuum: 3.0e8,
            h_planck: 6.63e-34,
        };
        // 6.63e-34·3e8 / (1.602e-19·8.08e-7) = 1.53664..., ·0.8·10
        let p = pump_power_from_current(10.0, &pp);
        assert!((p - 12.293_1).abs() < 1e-3, "{p}");
    }

    #[test]
    fn drive_levels() {
        let d = PumpDrive::ook(30.0, 0.3, 1e3, vec![true, false, true, false], 0.01);
        assert_eq!(d.power_at(0.005), 30.0);
        assert_eq!(d.power_at(0.0105), 30.3);
        assert_eq!(d.power_at(0.0115), 30.0);
        assert_eq!(d.power_at(0.0125), 30.3);
        assert_eq!(d.power_at(0.02), 30.0);
        // Right-continuous at edges.
        assert_eq!(d.power_at(0.011), 30.0);
        assert_eq!(d.power_at(0.010), 30.3);
        let bp = d.breakpoints(1.0);
        assert_eq!(bp.len(), 4);
        for (b, w) in bp.iter().zip([0.010, 0.011, 0.012, 0.013]) {
            assert!((b - w).abs() < 1e-15);
        }
    }

    #[test]
    fn repeating_square_wave() {
        let mut d = PumpDrive::ook(30.0, 0.3, 2e3, vec![true, false], 0.0);
        d.repeat_bits = true;
        for k in 0..40 {
            let mid = (k as f64 + 0.5) / 2e3;
            let want = if k % 2 == 0 { 30.3 } else { 30.0 };
            assert_eq!(d.power_at(mid), want);
        }
        assert_eq!(d.breakpoints(0.01).len(), 19);
    }

    #[test]
    fn sinusoid_drive() {
        let d = PumpDrive::sinusoid(30.0, 1e3, 0.3, 0.0);
        assert!((d.power_at(0.25e-3) - 30.3).abs() < 1e-12);
        assert!((d.power_at(0.75e-3) - 29.7).abs() < 1e-12);
        assert!(d.max_step() <= 1e-3 / 16.0);
    }

    #[test]
    fn split_examples() {
        assert_eq!(split(4.0, 1.0), (4.0, 0.0));
        assert_eq!(split(4.0, 0.0), (0.0, 4.0));
        assert_eq!(split(4.0, 0.5), (2.0, 2.0));
    }

    #[test]
    fn photocurrent_examples() {
        let mut p = pv();
        p.offset_c = 0.0;
        p.transmission = 1.0;
        assert_eq!(pv_photocurrent(0.0, &p), 0.0);
        p.rho1 = 0.5;
        assert_eq!(pv_photocurrent(2.0, &p), 1.0);
        p.offset_c = 0.1;
        let base = p.rho1 * p.offset_c;
        assert!(((pv_photocurrent(6.0, &p) - base) - 2.0 * (pv_photocurrent(3.0, &p) - base)).abs() < 1e-15);
    }

    #[test]
    fn short_circuit_current() {
        let mut p = pv();
        p.r_s = 0.0;
        let op = pv_operating_point(1.3, &p, 0.0).unwrap();
        assert_eq!(op.i_out, 1.3);
    }

    #[test]
    fn ideal_diode_closed_form() {
        let mut p = pv();
        p.r_s = 0.0;
        p.r_sh = f64::INFINITY;
        let i_ph = 1.0;
        let a = p.n_s as f64 * p.n_ideality * p.v_t;
        let v_oc = open_circuit_voltage(i_ph, &p).unwrap();
        let closed_voc = a * (i_ph / p.i0 + 1.0).ln();
        assert!((v_oc - closed_voc).abs() < 1e-12);
        for k in 0..12 {
            let v = v_oc * k as f64 / 12.0;
            let op = pv_operating_point(i_ph, &p, v).unwrap();
            let want = i_ph - p.i0 * ((v / a).exp() - 1.0);
            assert!(
                (op.i_out - want).abs() <= 1e-9 * want.abs().max(1e-12),
                "{v} {} {want}",
                op.i_out
            );
        }
    }

    #[test]
    fn iv_curve_strictly_decreasing() {
        let p = pv();
        let v_oc = open_circuit_voltage(1.0, &p).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..=2000 {
            let v = v_oc * k as f64 / 2000.0;
            let op = pv_operating_point(1.0, &p, v).unwrap();
            assert!(pv_residual(op.i_out, v, 1.0, &p).abs() < 1e-10);
            assert!(op.i_out < last);
            last = op.i_out;
        }
    }

    #[test]
    fn above_open_circuit_is_error() {
        let p = pv();
        let v_oc = open_circuit_voltage(1.0, &p).unwrap();
        assert!(matches!(
            pv_operating_point(1.0, &p, v_oc * 1.01),
            Err(Error::AboveOpenCircuit { .. })
        ));
    }

    #[test]
    fn mpp_properties() {
        let p = pv();
        assert_eq!(pv_max_power(0.0, &p).unwrap().p_elec, 0.0);
        let mut last = 0.0;
        for k in 1..=20 {
            let i_ph = 0.25 * k as f64;
            let mpp = pv_max_power(i_ph, &p).unwrap();
            let v_oc = open_circuit_voltage(i_ph, &p).unwrap();
            assert!(mpp.v_out > 0.0 && mpp.v_out < v_oc);
            assert!(mpp.p_elec <= i_ph * v_oc);
            assert!(mpp.p_elec > last);
            last = mpp.p_elec;
            // Brute force: no grid voltage beats the search result.
            for j in 0..=200 {
                let v = v_oc * j as f64 / 200.0;
                let op = pv_operating_point(i_ph, &p, v).unwrap();
                assert!(op.p_elec <= mpp.p_elec * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn pd_current_examples() {
        let mut ch = ChannelParams::default();
        assert_eq!(pd_current(0.0, &ch), 0.0);
        ch.rho2 = 0.6;
        assert!((pd_current(0.5, &ch) - 0.3).abs() < 1e-15);
        let (_, pc) = split(2.0, 0.25);
        assert!((pd_current(pc, &ch) - 0.75 * pd_current(2.0, &ch)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn split_conserves_power(p in 0.0f64..1e3, lambda in 0.0f64..=1.0) {
            let (c, m) = split(p, lambda);
            prop_assert!(c >= 0.0 && m >= 0.0);
            prop_assert_eq!(c + m, p);
            prop_assert!((c - lambda * p).abs() <= 2.0 * f64::EPSILON * p);
        }

        #[test]
        fn pump_never_negative(i in -10.0f64..100.0) {
            prop_assert!(pump_power_from_current(i, &PumpParams::default()) >= 0.0);
        }

        #[test]
        fn newton_agrees_from_both_ends(i_ph in 0.01f64..5.0, frac in 0.0f64..1.0) {
            let p = PvParams::default();
            let v = open_circuit_voltage(i_ph, &p).unwrap() * frac;
            let lo = pv_current_from(i_ph, &p, v, 0.0).unwrap();
            let hi = pv_current_from(i_ph, &p, v, i_ph).unwrap();
            prop_assert!((lo - hi).abs() < 1e-9);
            prop_assert!(pv_residual(lo, v, i_ph, &p).abs() < 1e-10);
            prop_assert!(pv_residual(hi, v, i_ph, &p).abs() < 1e-10);
        }
    }
}
