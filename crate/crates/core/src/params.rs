//! Physical parameters, simulation settings and the plain-text config
//! format.
//!
//! A config file is a flat list of `key = value` lines. `#` starts a
//! comment, blank lines are ignored, lists are comma separated. Every
//! quantity is stored in SI units; a few keys accept alternative units
//! through a suffix (`sigma_cm2`, `*_mw`, `lambda_emission_nm`), converted
//! on load. [`Bundle::to_config_string`] writes the canonical SI form, which
//! reparses to an identical bundle.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laser::LaserState;
use crate::transducers::{PumpDrive, Waveform};

/// Seed environment variable; overrides `rng_seed` from the config.
pub const SEED_ENV: &str = "RBEAM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserParams {
    /// Photon decay time in the resonator, s.
    pub tau_c: f64,
    /// Upper-level fluorescence lifetime, s.
    pub tau_f: f64,
    /// Speed of light in the gain medium, m/s.
    pub c_medium: f64,
    /// Stimulated-emission cross section, m^2.
    pub sigma: f64,
    /// Spontaneous-emission seed rate, m^-3 s^-1.
    pub s_spont: f64,
    /// Laser frequency, Hz.
    pub nu_l: f64,
    pub h_planck: f64,
    /// Gain-medium volume, m^3.
    pub gain_volume: f64,
    /// Dimensionless calibration factor on the photon-density to power map.
    pub out_power_gain: f64,
}

/// Gain volume placing the lasing threshold at about 15 W of pump.
pub const DEFAULT_GAIN_VOLUME: f64 = 0.038;

/// Smallest seed rate (two significant digits, rounded up) for which a
/// cold start at 30 W reaches half its steady output within 5 ms.
/// Reproduced by `analysis::calibrate_seed_rate`.
pub const DEFAULT_SEED_RATE: f64 = 4.5e16;

pub const DEFAULT_OUT_POWER_GAIN: f64 = 0.2;

impl LaserParams {
    /// Nd:YVO4 cavity values with calibration defaults for the seed rate,
    /// gain volume and output gain.
    pub fn default_table1() -> Self {
        LaserParams {
            tau_c: 4.4e-4,
            tau_f: 2.3e-4,
            c_medium: 1.67e8,
            sigma: 2.8e-23,
            s_spont: DEFAULT_SEED_RATE,
            nu_l: 2.82e14,
            h_planck: 6.63e-34,
            gain_volume: DEFAULT_GAIN_VOLUME,
            out_power_gain: DEFAULT_OUT_POWER_GAIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_c", self.tau_c),
            ("tau_f", self.tau_f),
            ("c_medium", self.c_medium),
            ("sigma", self.sigma),
            ("nu_l", self.nu_l),
            ("h_planck", self.h_planck),
            ("gain_volume", self.gain_volume),
            ("out_power_gain", self.out_power_gain),
        ] {
            positive(name, v)?;
        }
        non_negative("s_spont", self.s_spont)?;
        if !(self.sigma > 1e-25 && self.sigma < 1e-20) {
            return Err(Error::Validation(format!(
                "sigma = {:e} m^2 outside (1e-25, 1e-20) m^2; was a cm^2 value given as `sigma`?",
                self.sigma
            )));
        }
        Ok(())
    }
}

impl Default for LaserParams {
    fn default() -> Self {
        Self::default_table1()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpParams {
    /// External quantum efficiency, in (0, 1].
    pub eta_e: f64,
    /// Threshold current, A.
    pub i_th: f64,
    /// Emission wavelength, m.
    pub lambda_emission: f64,
    pub q_charge: f64,
    pub c_vacuum: f64,
    pub h_planck: f64,
}

impl Default for PumpParams {
    fn default() -> Self {
        PumpParams {
            eta_e: 0.8,
            i_th: 0.5,
            lambda_emission: 808e-9,
            q_charge: 1.602_176_634e-19,
            c_vacuum: 2.997_924_58e8,
            h_planck: 6.63e-34,
        }
    }
}

impl PumpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_e > 0.0 && self.eta_e <= 1.0) {
            return Err(Error::Validation("eta_e out of (0,1]".into()));
        }
        non_negative("i_th", self.i_th)?;
        positive("lambda_emission", self.lambda_emission)?;
        positive("q_charge", self.q_charge)?;
        positive("c_vacuum", self.c_vacuum)?;
        positive("pump_h_planck", self.h_planck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvParams {
    /// Responsivity, A/W.
    pub rho1: f64,
    /// Diode reverse saturation current, A.
    pub i0: f64,
    pub n_ideality: f64,
    /// Cells in series.
    pub n_s: u32,
    /// Thermal voltage, V.
    pub v_t: f64,
    pub r_s: f64,
    /// Shunt resistance, ohm; `inf` allowed.
    pub r_sh: f64,
    /// Path factor between splitter and panel, in (0, 1].
    pub transmission: f64,
    /// Additive irradiance constant, W.
    pub offset_c: f64,
}

impl Default for PvParams {
    fn default() -> Self {
        PvParams {
            rho1: 0.5,
            i0: 1e-9,
            n_ideality: 1.3,
            n_s: 1,
            v_t: 0.025_852,
            r_s: 0.01,
            r_sh: 100.0,
            transmission: 1.0,
            offset_c: 0.0,
        }
    }
}

impl PvParams {
    pub fn validate(&self) -> Result<()> {
        positive("rho1", self.rho1)?;
        positive("i0", self.i0)?;
        positive("n_ideality", self.n_ideality)?;
        positive("v_t", self.v_t)?;
        non_negative("r_s", self.r_s)?;
        if !(self.r_sh > 0.0) {
            return Err(Error::Validation("r_sh must be > 0".into()));
        }
        if self.n_s < 1 {
            return Err(Error::Validation("n_s must be >= 1".into()));
        }
        if !(self.transmission > 0.0 && self.transmission <= 1.0) {
            return Err(Error::Validation("transmission out of (0,1]".into()));
        }
        non_negative("offset_c", self.offset_c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Photodiode responsivity, A/W.
    pub rho2: f64,
    /// AWGN variance on the photodiode current, A^2.
    pub noise_var: f64,
    /// Bandwidth used for Shannon capacity, Hz.
    pub bandwidth: f64,
    /// Fraction of received power routed to charging.
    pub split_lambda: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            rho2: 0.6,
            noise_var: 1e-3,
            bandwidth: 1e6,
            split_lambda: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        positive("rho2", self.rho2)?;
        positive("noise_var", self.noise_var)?;
        positive("bandwidth", self.bandwidth)?;
        if !(0.0..=1.0).contains(&self.split_lambda) {
            return Err(Error::Validation("split_lambda out of [0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub sample_dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub initial_state: LaserState,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_end: 0.02,
            sample_dt: 1e-6,
            rel_tol: 1e-8,
            abs_tol: 1e3,
            initial_state: LaserState::ZERO,
            rng_seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        positive("t_end", self.t_end)?;
        positive("sample_dt", self.sample_dt)?;
        positive("rel_tol", self.rel_tol)?;
        positive("abs_tol", self.abs_tol)?;
        if self.sample_dt > self.t_end {
            return Err(Error::Validation("sample_dt exceeds t_end".into()));
        }
        if !(self.initial_state.v1 >= 0.0 && self.initial_state.v2 >= 0.0) {
            return Err(Error::Validation("initial state must be >= 0".into()));
        }
        Ok(())
    }
}

/// Settings for the packaged experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    /// Relative band around the steady power used for settling, ratio.
    pub settle_band: f64,
    /// Pump powers for the pump sweep, W.
    pub sweep_powers: Vec<f64>,
    /// Horizon of each pump-sweep run, s.
    pub sweep_t_end: f64,
    /// Bias for the frequency-response and link-budget runs, W.
    pub link_bias_power: f64,
    pub freq_response_freqs: Vec<f64>,
    /// Sinusoid amplitude for the frequency response, W.
    pub freq_amplitude: f64,
    pub lambda_points: usize,
    /// SNR at lambda = 0 to which `noise_var` is recalibrated; `none` keeps
    /// the configured variance.
    pub snr_target_db: Option<f64>,
    pub ber_rates: Vec<f64>,
    pub ber_snr_db: Vec<f64>,
    pub ber_n_bits: usize,
    /// Samples per symbol at the highest BER rate.
    pub ber_samples_per_symbol: usize,
    /// Duration of each half (all ones, then all zeros) of the training
    /// preamble, s.
    pub ber_preamble_time: f64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            settle_band: 0.02,
            sweep_powers: (1..=12).map(|k| 5.0 * k as f64).collect(),
            sweep_t_end: 0.06,
            link_bias_power: 30.0,
            freq_response_freqs: log_grid(10.0, 1e6, 6),
            freq_amplitude: 0.3,
            lambda_points: 21,
            snr_target_db: Some(23.54),
            ber_rates: vec![1e5, 2e5],
            ber_snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 23.54],
            ber_n_bits: 100_000,
            ber_samples_per_symbol: 8,
            ber_preamble_time: 5e-3,
        }
    }
}

impl ExperimentParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.settle_band > 0.0 && self.settle_band < 1.0) {
            return Err(Error::Validation("settle_band out of (0,1)".into()));
        }
        positive("sweep_t_end", self.sweep_t_end)?;
        positive("link_bias_power", self.link_bias_power)?;
        non_negative("freq_amplitude", self.freq_amplitude)?;
        if self.sweep_powers.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Validation("sweep_powers must be >= 0".into()));
        }
        if self.freq_response_freqs.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Validation("freq_response_freqs must be > 0".into()));
        }
        if self.lambda_points < 2 {
            return Err(Error::Validation("lambda_points must be >= 2".into()));
        }
        if self.ber_rates.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Validation("ber_rates must be > 0".into()));
        }
        if self.ber_samples_per_symbol < 8 {
            return Err(Error::Validation("ber_samples_per_symbol must be >= 8".into()));
        }
        if self.ber_n_bits < 1 {
            return Err(Error::Validation("ber_n_bits must be >= 1".into()));
        }
        positive("ber_preamble_time", self.ber_preamble_time)
    }
}

/// Everything a run needs, loaded from one config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Bundle {
    pub laser: LaserParams,
    pub pump: PumpParams,
    pub pv: PvParams,
    pub channel: ChannelParams,
    pub sim: SimConfig,
    pub drive: PumpDrive,
    pub experiments: ExperimentParams,
}

impl Default for PumpDrive {
    /// 30 W bias with a 0.3 W on-off keyed square wave starting after the
    /// cold-start transient has settled.
    fn default() -> Self {
        let mut d = PumpDrive::ook(30.0, 0.3, 1e3, vec![true, false], 0.01);
        d.repeat_bits = true;
        d
    }
}

impl Bundle {
    pub fn validate(&self) -> Result<()> {
        self.laser.validate()?;
        self.pump.validate()?;
        self.pv.validate()?;
        self.channel.validate()?;
        self.sim.validate()?;
        self.drive.validate()?;
        self.experiments.validate()
    }

    /// Canonical config text. Floats use shortest round-trip formatting.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// `(key, value)` pairs in canonical order, used for config output and
    /// for the metadata header of every result file.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let l = &self.laser;
        let p = &self.pump;
        let v = &self.pv;
        let c = &self.channel;
        let m = &self.sim;
        let d = &self.drive;
        let e = &self.experiments;
        let (waveform, sine_f, sine_a) = match d.waveform {
            Waveform::Constant => ("constant", None, None),
            Waveform::OokBits => ("ook", None, None),
            Waveform::Sinusoid { frequency, amplitude } => ("sinusoid", Some(frequency), Some(amplitude)),
        };
        let mut out = vec![
            ("tau_c", f(l.tau_c)),
            ("tau_f", f(l.tau_f)),
            ("c_medium", f(l.c_medium)),
            ("sigma", f(l.sigma)),
            ("s_spont", f(l.s_spont)),
            ("nu_l", f(l.nu_l)),
            ("h_planck", f(l.h_planck)),
            ("gain_volume", f(l.gain_volume)),
            ("out_power_gain", f(l.out_power_gain)),
            ("eta_e", f(p.eta_e)),
            ("i_th", f(p.i_th)),
            ("lambda_emission", f(p.lambda_emission)),
            ("q_charge", f(p.q_charge)),
            ("c_vacuum", f(p.c_vacuum)),
            ("pump_h_planck", f(p.h_planck)),
            ("rho1", f(v.rho1)),
            ("i0", f(v.i0)),
            ("n_ideality", f(v.n_ideality)),
            ("n_s", v.n_s.to_string()),
            ("v_t", f(v.v_t)),
            ("r_s", f(v.r_s)),
            ("r_sh", f(v.r_sh)),
            ("transmission", f(v.transmission)),
            ("offset_c", f(v.offset_c)),
            ("rho2", f(c.rho2)),
            ("noise_var", f(c.noise_var)),
            ("bandwidth", f(c.bandwidth)),
            ("split_lambda", f(c.split_lambda)),
            ("t_end", f(m.t_end)),
            ("sample_dt", f(m.sample_dt)),
            ("rel_tol", f(m.rel_tol)),
            ("abs_tol", f(m.abs_tol)),
            ("initial_v1", f(m.initial_state.v1)),
            ("initial_v2", f(m.initial_state.v2)),
            ("rng_seed", m.rng_seed.to_string()),
            ("waveform", waveform.to_string()),
            ("bias_power", f(d.bias_power)),
            ("signal_amplitude", f(d.signal_amplitude)),
            ("bit_rate", f(d.bit_rate)),
            ("bits", d.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()),
            ("repeat_bits", d.repeat_bits.to_string()),
            ("signal_delay", f(d.signal_delay)),
        ];
        if let (Some(sf), Some(sa)) = (sine_f, sine_a) {
            out.push(("sine_frequency", f(sf)));
            out.push(("sine_amplitude", f(sa)));
        }
        out.extend([
            ("settle_band", f(e.settle_band)),
            ("sweep_powers", list(&e.sweep_powers)),
            ("sweep_t_end", f(e.sweep_t_end)),
            ("link_bias_power", f(e.link_bias_power)),
            ("freq_response_freqs", list(&e.freq_response_freqs)),
            ("freq_amplitude", f(e.freq_amplitude)),
            ("lambda_points", e.lambda_points.to_string()),
            ("snr_target_db", e.snr_target_db.map_or_else(|| "none".to_string(), f)),
            ("ber_rates", list(&e.ber_rates)),
            ("ber_snr_db", list(&e.ber_snr_db)),
            ("ber_n_bits", e.ber_n_bits.to_string()),
            ("ber_samples_per_symbol", e.ber_samples_per_symbol.to_string()),
            ("ber_preamble_time", f(e.ber_preamble_time)),
        ]);
        out
    }

    /// Override the seed from [`SEED_ENV`] when set.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.sim.rng_seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Validation(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        }
        Ok(())
    }
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| f(*x)).collect::<Vec<_>>().join(", ")
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && !v.is_nan() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be > 0 (got {v})")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be >= 0 (got {v})")))
    }
}

/// `per_decade` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = (decades * per_decade as f64).round() as usize;
    (0..=n)
        .map(|k| {
            let x = lo * 10f64.powf(decades * k as f64 / n as f64);
            // Trim representation noise so grids print cleanly.
            let mag = 10f64.powi(x.log10().floor() as i32 - 9);
            (x / mag).round() * mag
        })
        .collect()
}

/// Load and validate a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<Bundle> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::ConfigRead {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Table<'a> {
    origin: &'a str,
    map: BTreeMap<String, Entry>,
}

impl<'a> Table<'a> {
    fn parse(text: &str, origin: &'a str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line,
                    msg: format!("expected `key = value`, found {body:?}"),
                });
            };
            let key = k.trim().to_string();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line,
                    msg: format!("invalid key {key:?}"),
                });
            }
            let entry = Entry {
                value: v.trim().to_string(),
                line,
                used: false,
            };
            if let Some(prev) = map.insert(key.clone(), entry) {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line,
                    msg: format!("duplicate key `{key}` (first on line {})", prev.line),
                });
            }
        }
        Ok(Table { origin, map })
    }

    fn err(&self, line: usize, msg: String) -> Error {
        Error::Parse {
            path: self.origin.to_string(),
            line,
            msg,
        }
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn parse_f64(&self, key: &str, value: &str, line: usize) -> Result<f64> {
        value
            .parse::<f64>()
            .map_err(|_| self.err(line, format!("`{key}`: {value:?} is not a number")))
    }

    /// Read `key` in SI units or one of its unit-suffixed aliases.
    fn f64_units(&mut self, key: &str, aliases: &[(&str, f64)], default: f64) -> Result<f64> {
        let mut found: Option<(f64, usize, String)> = None;
        let mut candidates = vec![(key.to_string(), 1.0)];
        candidates.extend(aliases.iter().map(|(suffix, scale)| (format!("{key}{suffix}"), *scale)));
        for (name, scale) in candidates {
            if let Some((v, line)) = self.raw(&name) {
                if let Some((_, _, other)) = &found {
                    return Err(self.err(line, format!("`{name}` conflicts with `{other}`")));
                }
                let x = self.parse_f64(&name, &v, line)?;
                found = Some((x * scale, line, name));
            }
        }
        Ok(found.map_or(default, |(x, _, _)| x))
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        self.f64_units(key, &[], default)
    }

    fn power(&mut self, key: &str, default: f64) -> Result<f64> {
        self.f64_units(key, &[("_mw", 1e-3)], default)
    }

    fn uint<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => v
                .parse::<T>()
                .map_err(|_| self.err(line, format!("`{key}`: {v:?} is not an unsigned integer"))),
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(self.err(line, format!("`{key}`: {v:?} is not a boolean"))),
            },
        }
    }

    fn list(&mut self, key: &str, default: Vec<f64>) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, line)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| self.parse_f64(key, s, line))
                .collect(),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((k, e)) = self.map.iter().find(|(_, e)| !e.used) {
            return Err(self.err(e.line, format!("unknown key `{k}`")));
        }
        Ok(())
    }
}

/// Parse config text. `origin` names the source in error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<Bundle> {
    let mut t = Table::parse(text, origin)?;
    let dl = LaserParams::default_table1();
    let laser = LaserParams {
        tau_c: t.f64("tau_c", dl.tau_c)?,
        tau_f: t.f64("tau_f", dl.tau_f)?,
        c_medium: t.f64("c_medium", dl.c_medium)?,
        sigma: t.f64_units("sigma", &[("_cm2", 1e-4)], dl.sigma)?,
        s_spont: t.f64("s_spont", dl.s_spont)?,
        nu_l: t.f64("nu_l", dl.nu_l)?,
        h_planck: t.f64("h_planck", dl.h_planck)?,
        gain_volume: t.f64("gain_volume", dl.gain_volume)?,
        out_power_gain: t.f64("out_power_gain", dl.out_power_gain)?,
    };
    let dp = PumpParams::default();
    let pump = PumpParams {
        eta_e: t.f64("eta_e", dp.eta_e)?,
        i_th: t.f64("i_th", dp.i_th)?,
        lambda_emission: t.f64_units("lambda_emission", &[("_nm", 1e-9)], dp.lambda_emission)?,
        q_charge: t.f64("q_charge", dp.q_charge)?,
        c_vacuum: t.f64("c_vacuum", dp.c_vacuum)?,
        h_planck: t.f64("pump_h_planck", dp.h_planck)?,
    };
    let dv = PvParams::default();
    let pv = PvParams {
        rho1: t.f64("rho1", dv.rho1)?,
        i0: t.f64("i0", dv.i0)?,
        n_ideality: t.f64("n_ideality", dv.n_ideality)?,
        n_s: t.uint("n_s", dv.n_s)?,
        v_t: t.f64("v_t", dv.v_t)?,
        r_s: t.f64("r_s", dv.r_s)?,
        r_sh: t.f64("r_sh", dv.r_sh)?,
        transmission: t.f64("transmission", dv.transmission)?,
        offset_c: t.power("offset_c", dv.offset_c)?,
    };
    let dc = ChannelParams::default();
    let channel = ChannelParams {
        rho2: t.f64("rho2", dc.rho2)?,
        noise_var: t.f64("noise_var", dc.noise_var)?,
        bandwidth: t.f64("bandwidth", dc.bandwidth)?,
        split_lambda: t.f64("split_lambda", dc.split_lambda)?,
    };
    let ds = SimConfig::default();
    let sim = SimConfig {
        t_end: t.f64("t_end", ds.t_end)?,
        sample_dt: t.f64("sample_dt", ds.sample_dt)?,
        rel_tol: t.f64("rel_tol", ds.rel_tol)?,
        abs_tol: t.f64("abs_tol", ds.abs_tol)?,
        initial_state: LaserState::new(
            t.f64("initial_v1", ds.initial_state.v1)?,
            t.f64("initial_v2", ds.initial_state.v2)?,
        ),
        rng_seed: t.uint("rng_seed", ds.rng_seed)?,
    };

    let dd = PumpDrive::default();
    let bits = match t.raw("bits") {
        None => dd.bits.clone(),
        Some((v, line)) => v
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(t.err(line, format!("`bits`: invalid character {c:?}"))),
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let waveform = match t.raw("waveform") {
        None => dd.waveform,
        Some((v, line)) => match v.as_str() {
            "constant" => Waveform::Constant,
            "ook" | "ook_bits" => Waveform::OokBits,
            "sinusoid" | "sine" => Waveform::Sinusoid {
                frequency: 0.0,
                amplitude: 0.0,
            },
            _ => {
                return Err(t.err(
                    line,
                    format!("`waveform`: expected constant, ook or sinusoid, found {v:?}"),
                ))
            }
        },
    };
    let waveform = match waveform {
        Waveform::Sinusoid { .. } => Waveform::Sinusoid {
            frequency: t.f64("sine_frequency", 1e3)?,
            amplitude: t.power("sine_amplitude", 0.3)?,
        },
        w => w,
    };
    let drive = PumpDrive {
        bias_power: t.power("bias_power", dd.bias_power)?,
        signal_amplitude: t.power("signal_amplitude", dd.signal_amplitude)?,
        bit_rate: t.f64("bit_rate", dd.bit_rate)?,
        bits,
        signal_delay: t.f64("signal_delay", dd.signal_delay)?,
        waveform,
        repeat_bits: t.boolean("repeat_bits", dd.repeat_bits)?,
    };

    let de = ExperimentParams::default();
    let snr_target_db = match t.raw("snr_target_db") {
        None => de.snr_target_db,
        Some((v, _)) if v == "none" => None,
        Some((v, line)) => Some(t.parse_f64("snr_target_db", &v, line)?),
    };
    let experiments = ExperimentParams {
        settle_band: t.f64("settle_band", de.settle_band)?,
        sweep_powers: t.list("sweep_powers", de.sweep_powers.clone())?,
        sweep_t_end: t.f64("sweep_t_end", de.sweep_t_end)?,
        link_bias_power: t.power("link_bias_power", de.link_bias_power)?,
        freq_response_freqs: t.list("freq_response_freqs", de.freq_response_freqs.clone())?,
        freq_amplitude: t.power("freq_amplitude", de.freq_amplitude)?,
        lambda_points: t.uint("lambda_points", de.lambda_points)?,
        snr_target_db,
        ber_rates: t.list("ber_rates", de.ber_rates.clone())?,
        ber_snr_db: t.list("ber_snr_db", de.ber_snr_db.clone())?,
        ber_n_bits: t.uint("ber_n_bits", de.ber_n_bits)?,
        ber_samples_per_symbol: t.uint("ber_samples_per_symbol", de.ber_samples_per_symbol)?,
        ber_preamble_time: t.f64("ber_preamble_time", de.ber_preamble_time)?,
    };
    t.finish()?;

    let bundle = Bundle {
        laser,
        pump,
        pv,
        channel,
        sim,
        drive,
        experiments,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigma_cm2_is_converted() {
        let b = parse_config("sigma_cm2 = 2.8e-19\n", "t").unwrap();
        assert_eq!(b.laser.sigma, 2.8e-19 * 1e-4);
        assert!((b.laser.sigma - 2.8e-23).abs() < 1e-37);
    }

    #[test]
    fn milliwatt_suffix() {
        let b = parse_config("bias_power_mw = 30000\nsignal_amplitude_mw = 300\n", "t").unwrap();
        assert_eq!(b.drive.bias_power, 30.0);
        assert_eq!(b.drive.signal_amplitude, 0.3);
    }

    #[test]
    fn split_lambda_out_of_range() {
        let e = parse_config("split_lambda = 1.2\n", "t").unwrap_err();
        assert!(e.to_string().contains("split_lambda out of [0,1]"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn omitted_gain_volume_gets_default_and_is_echoed() {
        let b = parse_config("tau_c = 4.4e-4\n", "t").unwrap();
        assert_eq!(b.laser.gain_volume, DEFAULT_GAIN_VOLUME);
        assert!(b
            .to_config_string()
            .lines()
            .any(|l| l == format!("gain_volume = {:?}", DEFAULT_GAIN_VOLUME)));
        assert!(b.to_config_string().lines().any(|l| l.starts_with("s_spont = ")));
    }

    #[test]
    fn laser_defaults() {
        let p = LaserParams::default_table1();
        assert_eq!(p.tau_c, 4.4e-4);
        assert_eq!(p.tau_f, 2.3e-4);
        assert_eq!(p.c_medium, 1.67e8);
        assert!((p.sigma - 2.8e-23).abs() < 1e-37);
        assert_eq!(p.nu_l, 2.82e14);
        assert_eq!(p.h_planck, 6.63e-34);
        assert_eq!(p.s_spont, DEFAULT_SEED_RATE);
        p.validate().unwrap();
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse_config("# header\n\ntau_c 4.4e-4\n", "cfg.txt").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(e.to_string().starts_with("cfg.txt:3:"));
        let e = parse_config("tau_c = fast\n", "t").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_config("tau_c = 1\nbogus = 2\n", "t").unwrap_err();
        assert!(e.to_string().contains("unknown key `bogus`"));
        let e = parse_config("sigma = 2.8e-23\nsigma_cm2 = 2.8e-19\n", "t").unwrap_err();
        assert!(e.to_string().contains("conflicts"));
        let e = parse_config("tau_c = 1\ntau_c = 2\n", "t").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn validation_errors() {
        for (text, needle) in [
            ("tau_c = -1\n", "tau_c"),
            ("sigma = 2.8e-19\n", "sigma"),
            ("eta_e = 1.5\n", "eta_e"),
            ("noise_var = 0\n", "noise_var"),
            ("n_s = 0\n", "n_s"),
            ("t_end = 0\n", "t_end"),
            ("ber_samples_per_symbol = 4\n", "ber_samples_per_symbol"),
        ] {
            let e = parse_config(text, "t").unwrap_err();
            assert!(matches!(e, Error::Validation(_)), "{text}: {e}");
            assert!(e.to_string().contains(needle), "{text}: {e}");
        }
    }

    #[test]
    fn sinusoid_and_bits() {
        let b = parse_config(
            "waveform = sinusoid\nsine_frequency = 2000\nsine_amplitude_mw = 150\n",
            "t",
        )
        .unwrap();
        assert_eq!(
            b.drive.waveform,
            Waveform::Sinusoid {
                frequency: 2000.0,
                amplitude: 0.15
            }
        );
        let b = parse_config("waveform = ook\nbits = 1100_1010\nrepeat_bits = false\n", "t").unwrap();
        assert_eq!(b.drive.bits.len(), 8);
        assert!(!b.drive.repeat_bits);
        assert!(parse_config("bits = 10x1\n", "t").is_err());
    }

    #[test]
    fn default_bundle_round_trips() {
        let b = Bundle::default();
        b.validate().unwrap();
        let again = parse_config(&b.to_config_string(), "t").unwrap();
        assert_eq!(again, b);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(10.0, 1e6, 6);
        assert_eq!(g.len(), 31);
        assert_eq!(g[0], 10.0);
        assert_eq!(*g.last().unwrap(), 1e6);
        assert_eq!(g[6], 100.0);
    }

    fn arb_bundle() -> impl Strategy<Value = Bundle> {
        (
            1e-5f64..1e-3,
            1e-5f64..1e-3,
            1e-24f64..1e-21,
            0.0f64..1e18,
            1e-3f64..1.0,
            0.0f64..=1.0,
            1e-9f64..1.0,
            any::<u64>(),
            0.0f64..100.0,
            proptest::collection::vec(any::<bool>(), 0..32),
            proptest::option::of(0.0f64..40.0),
            proptest::collection::vec(0.0f64..100.0, 0..6),
        )
            .prop_map(|(tau_c, tau_f, sigma, s, g, lam, nv, seed, bias, bits, snr, powers)| {
                let mut b = Bundle::default();
                b.laser.tau_c = tau_c;
                b.laser.tau_f = tau_f;
                b.laser.sigma = sigma;
                b.laser.s_spont = s;
                b.laser.out_power_gain = g;
                b.channel.split_lambda = lam;
                b.channel.noise_var = nv;
                b.sim.rng_seed = seed;
                b.drive.bias_power = bias;
                b.drive.bits = bits;
                b.experiments.snr_target_db = snr;
                b.experiments.sweep_powers = powers;
                b
            })
    }

    proptest! {
        #[test]
        fn serialize_reparses_identically(b in arb_bundle()) {
            let text = b.to_config_string();
            let again = parse_config(&text, "roundtrip").unwrap();
            prop_assert_eq!(again, b);
        }

        #[test]
        fn cm2_conversion_matches_direct_scaling(x in 1e-21f64..1e-16) {
            let b = parse_config(&format!("sigma_cm2 = {x:?}\n"), "t").unwrap();
            prop_assert_eq!(b.laser.sigma, x * 1e-4);
        }
    }
}
