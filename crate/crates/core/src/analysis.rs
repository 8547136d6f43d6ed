//! Experiment procedures: relaxation metrics, pump sweep, frequency
//! response, splitting-ratio trade-off and seed-rate calibration.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::comms::{self, LinkBudget};
use crate::error::{Error, Result};
use crate::laser::{self, LaserState};
use crate::ode::{self, TimeSeries};
use crate::params::{Bundle, ChannelParams, LaserParams, SimConfig};
use crate::transducers::{self, ChargeMode, PumpDrive};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxationMetrics {
    /// W
    pub peak_power: f64,
    /// s
    pub peak_time: f64,
    /// Last exit from the settling band, s.
    pub settling_time: f64,
    /// Mean output over the final 10% of samples, W.
    pub steady_power: f64,
    /// Dominant transient frequency, Hz; 0 without overshoot.
    pub oscillation_freq: f64,
    /// Integration error bound on `steady_power`, W.
    pub steady_power_err: f64,
    /// Integration error bound on `settling_time`, s.
    pub settling_time_err: f64,
}

/// Relative band check of the final 10% of samples; returns its mean.
fn steady_segment(p: &[f64], band: f64) -> Result<f64> {
    let n = p.len();
    let start = n - (n / 10).max(1);
    let tail = &p[start..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    let spread = (hi - lo) / mean.abs();
    if !(spread < band) || !(mean > 0.0) {
        return Err(Error::NotSettled { spread, band });
    }
    Ok(mean)
}

/// Relaxation metrics of the output power trajectory.
pub fn detect_relaxation(ts: &TimeSeries, settle_band: f64) -> Result<RelaxationMetrics> {
    if ts.is_empty() {
        return Err(Error::InvalidArgument("empty time series".into()));
    }
    let p = &ts.p_out;
    let t = &ts.t;
    let p_ss = steady_segment(p, settle_band)?;
    let (k_peak, &peak_power) = p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let outside = |x: f64| ((x - p_ss) / p_ss).abs() >= settle_band;
    let rel_err = ts.error_estimate[0];
    let steady_power_err = rel_err * p_ss;

    let (settling_time, settling_time_err) = match p.iter().rposition(|x| outside(*x)) {
        None => (t[0], 0.0),
        Some(k) => {
            // Interpolate the band edge crossing between samples k and k+1.
            let (a, b) = (p[k], p[k + 1]);
            let edge = if a > p_ss {
                p_ss * (1.0 + settle_band)
            } else {
                p_ss * (1.0 - settle_band)
            };
            let frac = if b != a {
                ((edge - a) / (b - a)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let ts_cross = t[k] + frac * (t[k + 1] - t[k]);
            let slope = ((b - a) / (t[k + 1] - t[k])).abs();
            let err = if slope > 0.0 {
                steady_power_err.max(rel_err * edge) / slope
            } else {
                f64::INFINITY
            };
            (ts_cross, err)
        }
    };

    let overshoot = p.iter().any(|x| *x > p_ss * (1.0 + settle_band));
    let oscillation_freq = if overshoot {
        let end = t.partition_point(|x| *x <= settling_time).max(k_peak + 2).min(p.len());
        let dt = t[1] - t[0];
        dominant_frequency(&p[..end], dt)
    } else {
        0.0
    };
    Ok(RelaxationMetrics {
        peak_power,
        peak_time: t[k_peak],
        settling_time,
        steady_power: p_ss,
        oscillation_freq,
        steady_power_err,
        settling_time_err,
    })
}

/// Frequency (Hz) of the largest non-DC spectral peak of `x` sampled every
/// `dt`: mean removed, Hann window, 4x zero padding, parabolic peak
/// interpolation on the magnitude.
pub fn dominant_frequency(x: &[f64], dt: f64) -> f64 {
    let n = x.len();
    if n < 4 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let m = (4 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let w = 0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos();
            Complex::new((v - mean) * w, 0.0)
        })
        .collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let mag: Vec<f64> = buf[..m / 2].iter().map(|c| c.norm()).collect();
    // Skip the DC lobe of the window (width 2 bins of the unpadded length).
    let first = (2 * m / n).max(1);
    let Some((k, _)) = mag.iter().enumerate().skip(first).max_by(|a, b| a.1.total_cmp(b.1)) else {
        return 0.0;
    };
    let delta = if k + 1 < mag.len() {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        let den = a - 2.0 * b + c;
        if den != 0.0 {
            0.5 * (a - c) / den
        } else {
            0.0
        }
    } else {
        0.0
    };
    (k as f64 + delta) / (m as f64 * dt)
}

/// Dominant output frequency of a cold start at `pump_ratio`, measured on
/// the part of the trajectory after the output first reaches half its
/// analytic steady value.
pub fn cold_start_frequency(params: &LaserParams, pump_ratio: f64, sim: &SimConfig) -> Result<f64> {
    let power = pump_ratio * laser::threshold_power(params);
    let ts = ode::integrate(&PumpDrive::constant(power), params, sim)?;
    let ss = laser::analytic_steady_state(laser::pump_rate_from_power(power, params), params);
    let half = 0.5 * laser::output_power(ss.phi_ss, params);
    let start = ts.p_out.iter().position(|p| *p >= half).unwrap_or(0);
    Ok(dominant_frequency(&ts.p_out[start..], sim.sample_dt))
}

/// Small-signal ringing frequency after a pump step of `step_frac` from the
/// lasing fixed point at `pump_ratio`, over `window` seconds.
pub fn step_response_frequency(
    params: &LaserParams,
    pump_ratio: f64,
    step_frac: f64,
    window: f64,
    sim: &SimConfig,
) -> Result<f64> {
    let p0 = pump_ratio * laser::threshold_power(params);
    let x0 = settle_state(params, p0, sim)?;
    let drive = PumpDrive::constant(p0 * (1.0 + step_frac));
    let s = SimConfig {
        t_end: window,
        initial_state: x0,
        ..sim.clone()
    };
    let ts = ode::integrate(&drive, params, &s)?;
    Ok(dominant_frequency(&ts.p_out, s.sample_dt))
}

/// Fixed point under constant pump `power`, found by integrating from the
/// analytic seed-free steady state until the state stops changing.
pub fn settle_state(params: &LaserParams, power: f64, sim: &SimConfig) -> Result<LaserState> {
    let ss = laser::analytic_steady_state(laser::pump_rate_from_power(power, params), params);
    let mut x = LaserState::new(ss.phi_ss, ss.n2_ss);
    let chunk = 40.0 * params.tau_c.max(params.tau_f);
    for _ in 0..50 {
        let s = SimConfig {
            t_end: chunk,
            sample_dt: chunk,
            initial_state: x,
            ..sim.clone()
        };
        let ts = ode::integrate(&PumpDrive::constant(power), params, &s)?;
        let y = ts.final_state();
        let done = (y.v1 - x.v1).abs() <= 1e-9 * y.v1.abs().max(sim.abs_tol)
            && (y.v2 - x.v2).abs() <= 1e-9 * y.v2.abs().max(sim.abs_tol);
        x = y;
        if done {
            break;
        }
    }
    Ok(x)
}

/// One named, unit-labelled column of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: &str, unit: &str, values: Vec<f64>) -> Self {
        Column {
            name: name.to_string(),
            unit: unit.to_string(),
            values,
        }
    }

    /// Header label, `name_unit` (or just `name` when dimensionless).
    pub fn label(&self) -> String {
        if self.unit.is_empty() {
            self.name.clone()
        } else {
            format!("{}_{}", self.name, self.unit)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Column,
    pub columns: Vec<Column>,
    /// Scalar summary values (`key`, value) reported with the table.
    pub summary: Vec<(String, f64)>,
}

impl SweepResult {
    pub fn len(&self) -> usize {
        self.axis.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.values.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        if self.axis.name == name {
            return Some(&self.axis.values);
        }
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

fn check_increasing(name: &str, xs: &[f64]) -> Result<()> {
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpPoint {
    pub pump_power: f64,
    pub pump_ratio: f64,
    pub above_threshold: bool,
    pub settled: bool,
    pub output_power: f64,
    pub efficiency: f64,
    pub settling_time: f64,
    pub peak_power: f64,
    pub output_power_err: f64,
    pub settling_time_err: f64,
}

/// Cold-start run at one pump power.
pub fn pump_point(b: &Bundle, power: f64) -> Result<PumpPoint> {
    let sim = SimConfig {
        t_end: b.experiments.sweep_t_end,
        ..b.sim.clone()
    };
    let ts = ode::integrate(&PumpDrive::constant(power), &b.laser, &sim)?;
    let ratio = laser::pump_ratio(laser::pump_rate_from_power(power, &b.laser), &b.laser);
    let above = ratio > 1.0;
    let n = ts.len();
    let tail = &ts.p_out[n - (n / 10).max(1)..];
    let mean_tail = tail.iter().sum::<f64>() / tail.len() as f64;
    let eff = |p: f64| if power > 0.0 { p / power } else { 0.0 };
    if above {
        match detect_relaxation(&ts, b.experiments.settle_band) {
            Ok(m) => {
                return Ok(PumpPoint {
                    pump_power: power,
                    pump_ratio: ratio,
                    above_threshold: true,
                    settled: true,
                    output_power: m.steady_power,
                    efficiency: eff(m.steady_power),
                    settling_time: m.settling_time,
                    peak_power: m.peak_power,
                    output_power_err: m.steady_power_err,
                    settling_time_err: m.settling_time_err,
                })
            }
            Err(Error::NotSettled { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(PumpPoint {
        pump_power: power,
        pump_ratio: ratio,
        above_threshold: above,
        settled: false,
        output_power: mean_tail,
        efficiency: eff(mean_tail),
        settling_time: f64::INFINITY,
        peak_power: ts.p_out.iter().copied().fold(0.0, f64::max),
        output_power_err: ts.error_estimate[0] * mean_tail,
        settling_time_err: f64::NAN,
    })
}

pub fn pump_points(b: &Bundle, powers: &[f64]) -> Result<Vec<PumpPoint>> {
    check_increasing("sweep_powers", powers)?;
    powers.par_iter().map(|p| pump_point(b, *p)).collect()
}

/// Steady output, efficiency and settling time versus pump power. Points
/// below threshold, or not settled within the horizon, carry an infinite
/// settling time.
pub fn sweep_pump(powers: &[f64], b: &Bundle) -> Result<SweepResult> {
    let pts = pump_points(b, powers)?;
    let col = |f: fn(&PumpPoint) -> f64| pts.iter().map(f).collect::<Vec<_>>();
    Ok(SweepResult {
        axis: Column::new("pump_power", "w", powers.to_vec()),
        columns: vec![
            Column::new("pump_ratio", "", col(|p| p.pump_ratio)),
            Column::new("above_threshold", "", col(|p| p.above_threshold as u8 as f64)),
            Column::new("settled", "", col(|p| p.settled as u8 as f64)),
            Column::new("output_power", "w", col(|p| p.output_power)),
            Column::new("efficiency", "ratio", col(|p| p.efficiency)),
            Column::new("settling_time", "s", col(|p| p.settling_time)),
            Column::new("peak_power", "w", col(|p| p.peak_power)),
            Column::new("output_power_err", "w", col(|p| p.output_power_err)),
            Column::new("settling_time_err", "s", col(|p| p.settling_time_err)),
        ],
        summary: vec![("threshold_power_w".into(), laser::threshold_power(&b.laser))],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqPoint {
    pub frequency: f64,
    /// W/W
    pub gain: f64,
    /// rad
    pub phase: f64,
    pub analytic_gain: f64,
}

/// Settle time before measuring the periodic response, s.
const FREQ_DISCARD: f64 = 10e-3;
/// Minimum measurement window, s.
const FREQ_WINDOW: f64 = 2e-3;

/// Gain and phase of the output modulation for a sinusoidal pump of
/// `amplitude` at `frequency` about `bias`, measured by lock-in over whole
/// periods after the start-up transient.
pub fn freq_point(
    params: &LaserParams,
    sim: &SimConfig,
    x0: LaserState,
    bias: f64,
    amplitude: f64,
    frequency: f64,
) -> Result<FreqPoint> {
    let period = 1.0 / frequency;
    let discard = (FREQ_DISCARD / period).ceil().max(3.0) * period;
    let cycles = (FREQ_WINDOW / period).ceil().max(5.0);
    let per_cycle = 64usize;
    let n = cycles as usize * per_cycle;
    let dt = period / per_cycle as f64;
    let mut times = Vec::with_capacity(n + 1);
    times.push(0.0);
    times.extend((0..n).map(|k| discard + k as f64 * dt));
    let drive = PumpDrive::sinusoid(bias, frequency, amplitude, 0.0);
    let s = SimConfig {
        initial_state: x0,
        rel_tol: sim.rel_tol.min(1e-12),
        ..sim.clone()
    };
    let ts = ode::integrate_at(&drive, params, &s, &times)?;
    let p = &ts.p_out[1..];
    let mean = p.iter().sum::<f64>() / n as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (k, v) in p.iter().enumerate() {
        let ph = 2.0 * PI * (k % per_cycle) as f64 / per_cycle as f64;
        re += (v - mean) * ph.sin();
        im += (v - mean) * ph.cos();
    }
    re *= 2.0 / n as f64;
    im *= 2.0 / n as f64;
    let ratio = laser::pump_ratio(laser::pump_rate_from_power(bias, params), params);
    Ok(FreqPoint {
        frequency,
        gain: re.hypot(im) / amplitude,
        phase: im.atan2(re),
        analytic_gain: laser::small_signal_gain(2.0 * PI * frequency, ratio, params).0,
    })
}

/// Frequency above the gain maximum where the gain first falls to half the
/// maximum, log-interpolated; `None` if it never does on the grid.
pub fn half_gain_frequency(freqs: &[f64], gain: &[f64]) -> Option<f64> {
    let (k_max, g_max) = gain
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, g)| (k, *g))?;
    let half = 0.5 * g_max;
    (k_max + 1..gain.len()).find(|&k| gain[k] <= half).map(|k| {
        let (f0, f1) = (freqs[k - 1].ln(), freqs[k].ln());
        let (g0, g1) = (gain[k - 1], gain[k]);
        let frac = if g1 != g0 { (half - g0) / (g1 - g0) } else { 0.0 };
        (f0 + frac * (f1 - f0)).exp()
    })
}

pub fn frequency_response(freqs: &[f64], amplitude: f64, b: &Bundle) -> Result<SweepResult> {
    check_increasing("freq_response_freqs", freqs)?;
    let bias = b.experiments.link_bias_power;
    if !(amplitude > 0.0 && amplitude < bias) {
        return Err(Error::InvalidArgument(format!(
            "freq_amplitude {amplitude} W must lie in (0, bias {bias} W)"
        )));
    }
    let x0 = settle_state(&b.laser, bias, &b.sim)?;
    let pts: Vec<FreqPoint> = freqs
        .par_iter()
        .map(|f| freq_point(&b.laser, &b.sim, x0, bias, amplitude, *f))
        .collect::<Result<_>>()?;
    let gain: Vec<f64> = pts.iter().map(|p| p.gain).collect();
    let mut summary = vec![("dc_slope_w_per_w".to_string(), b.laser.out_power_gain)];
    if let Some(f) = half_gain_frequency(freqs, &gain) {
        summary.push(("half_gain_frequency_hz".into(), f));
    }
    Ok(SweepResult {
        axis: Column::new("frequency", "hz", freqs.to_vec()),
        columns: vec![
            Column::new("gain", "w_per_w", gain),
            Column::new("phase", "rad", pts.iter().map(|p| p.phase).collect()),
            Column::new(
                "analytic_gain",
                "w_per_w",
                pts.iter().map(|p| p.analytic_gain).collect(),
            ),
        ],
        summary,
    })
}

/// Simulated steady output at the link bias, W.
pub fn link_output_power(b: &Bundle) -> Result<f64> {
    let x = settle_state(&b.laser, b.experiments.link_bias_power, &b.sim)?;
    Ok(laser::output_power(x.v1, &b.laser))
}

/// Channel parameters with `noise_var` recalibrated to the configured SNR
/// target at lambda = 0, if one is set.
pub fn calibrated_channel(b: &Bundle, p_total: f64) -> ChannelParams {
    let mut ch = b.channel.clone();
    if let Some(target) = b.experiments.snr_target_db {
        ch.noise_var = comms::calibrate_noise_var(
            comms::link_budget(
                p_total,
                &ChannelParams {
                    split_lambda: 0.0,
                    ..ch.clone()
                },
            )
            .i_pd,
            target,
        );
    }
    ch
}

/// Splitting ratio at which the SNR crosses 0 dB, by bisection.
pub fn snr_zero_crossing(p_total: f64, ch: &ChannelParams) -> Option<f64> {
    let snr_at = |l: f64| {
        comms::link_budget(
            p_total,
            &ChannelParams {
                split_lambda: l,
                ..ch.clone()
            },
        )
        .snr_db
    };
    if !(snr_at(0.0) > 0.0) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if snr_at(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// `n` evenly spaced points on `[0, 1]`.
pub fn lambda_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
}

/// SNR, capacity and charging power across splitting ratios, for the
/// simulated steady output at the link bias.
pub fn sweep_lambda(lambdas: &[f64], b: &Bundle) -> Result<SweepResult> {
    if lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::InvalidArgument("lambda grid must lie in [0,1]".into()));
    }
    check_increasing("lambda grid", lambdas)?;
    let p_total = link_output_power(b)?;
    let ch = calibrated_channel(b, p_total);
    let rows: Vec<(LinkBudget, transducers::PvOperatingPoint)> = lambdas
        .iter()
        .map(|&l| {
            let lb = comms::link_budget(
                p_total,
                &ChannelParams {
                    split_lambda: l,
                    ..ch.clone()
                },
            );
            let pv = transducers::charging_point(lb.p_charge, &b.pv, ChargeMode::MaxPower)?;
            Ok((lb, pv))
        })
        .collect::<Result<_>>()?;
    let col = |f: &dyn Fn(&(LinkBudget, transducers::PvOperatingPoint)) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let mut summary = vec![
        ("p_total_w".to_string(), p_total),
        ("noise_var_a2".to_string(), ch.noise_var),
    ];
    if let Some(l) = snr_zero_crossing(p_total, &ch) {
        summary.push(("snr_zero_db_lambda".into(), l));
    }
    Ok(SweepResult {
        axis: Column::new("lambda", "ratio", lambdas.to_vec()),
        columns: vec![
            Column::new("snr", "db", col(&|r| r.0.snr_db)),
            Column::new("capacity", "bps", col(&|r| r.0.capacity)),
            Column::new("p_charge", "w", col(&|r| r.0.p_charge)),
            Column::new("p_comm", "w", col(&|r| r.0.p_comm)),
            Column::new("i_pd", "a", col(&|r| r.0.i_pd)),
            Column::new("pv_power", "w", col(&|r| r.1.p_elec)),
            Column::new("pv_voltage", "v", col(&|r| r.1.v_out)),
        ],
        summary,
    })
}

/// True when a cold start at `power` reaches half its analytic steady
/// output within `horizon`.
pub fn lases_within(params: &LaserParams, sim: &SimConfig, power: f64, horizon: f64) -> Result<bool> {
    let s = SimConfig {
        t_end: horizon,
        sample_dt: horizon,
        initial_state: LaserState::ZERO,
        ..sim.clone()
    };
    let ts = ode::integrate(&PumpDrive::constant(power), params, &s)?;
    let ss = laser::analytic_steady_state(laser::pump_rate_from_power(power, params), params);
    Ok(*ts.p_out.last().unwrap() >= 0.5 * laser::output_power(ss.phi_ss, params))
}

/// Round up to two significant digits.
pub fn round_up_2sig(x: f64) -> f64 {
    let e = x.log10().floor() - 1.0;
    let scale = 10f64.powf(e);
    let m = (x / scale * (1.0 - 1e-12)).ceil();
    format!("{}e{}", m, e).parse().unwrap()
}

/// Smallest spontaneous seed rate, rounded up to two significant digits,
/// for which a cold start at `power` lases within `horizon`.
pub fn calibrate_seed_rate(params: &LaserParams, sim: &SimConfig, power: f64, horizon: f64) -> Result<f64> {
    let lases = |s: f64| {
        let p = LaserParams {
            s_spont: s,
            ..params.clone()
        };
        lases_within(&p, sim, power, horizon)
    };
    // Grow the bracket upward a decade at a time; very large seed rates
    // make the system needlessly stiff.
    let mut hi = 1e10f64;
    while !lases(hi)? {
        hi *= 10.0;
        if hi > 1e24 {
            return Err(Error::InvalidArgument(format!(
                "no seed rate lases at {power} W within {horizon} s"
            )));
        }
    }
    let mut lo = hi / 10.0;
    while hi / lo > 1.0 + 1e-6 {
        let mid = (lo * hi).sqrt();
        if lases(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(round_up_2sig(hi))
}
