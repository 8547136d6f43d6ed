//! Information path: on-off keying, AWGN, SNR and capacity, and
//! Monte-Carlo bit error rates with or without the cavity in the loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laser;
use crate::ode;
use crate::params::{Bundle, ChannelParams};
use crate::transducers::{pd_current, split, PumpDrive};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitStream {
    pub bits: Vec<bool>,
    /// Symbol rate, Hz.
    pub rate: f64,
}

impl BitStream {
    pub fn new(bits: Vec<bool>, rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidArgument(format!("bit rate must be > 0 (got {rate})")));
        }
        Ok(BitStream { bits, rate })
    }

    /// Equiprobable random bits from `rng`.
    pub fn random(n: usize, rate: f64, rng: &mut impl Rng) -> Result<Self> {
        Self::new((0..n).map(|_| rng.random::<bool>()).collect(), rate)
    }
}

/// Received powers and link metrics for one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub p_total: f64,
    pub p_charge: f64,
    pub p_comm: f64,
    pub i_pd: f64,
    pub snr_linear: f64,
    pub snr_db: f64,
    pub capacity: f64,
}

/// Link metrics for a received optical power `p_total` split per `ch`.
pub fn link_budget(p_total: f64, ch: &ChannelParams) -> LinkBudget {
    let (p_charge, p_comm) = split(p_total, ch.split_lambda);
    let i_pd = pd_current(p_comm, ch);
    let snr_linear = snr(i_pd, ch);
    LinkBudget {
        p_total,
        p_charge,
        p_comm,
        i_pd,
        snr_linear,
        snr_db: to_db(snr_linear),
        capacity: capacity(snr_linear, ch.bandwidth),
    }
}

/// `i_pd² / noise_var`.
pub fn snr(i_pd: f64, ch: &ChannelParams) -> f64 {
    i_pd * i_pd / ch.noise_var
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Shannon capacity, bit/s.
pub fn capacity(snr_linear: f64, bandwidth: f64) -> f64 {
    bandwidth * snr_linear.log2_1p()
}

trait Log2OnePlus {
    fn log2_1p(self) -> f64;
}

impl Log2OnePlus for f64 {
    fn log2_1p(self) -> f64 {
        self.ln_1p() / std::f64::consts::LN_2
    }
}

/// Noise variance that makes a photodiode current `i_pd` reach `snr_db`.
pub fn calibrate_noise_var(i_pd: f64, snr_db: f64) -> f64 {
    i_pd * i_pd / from_db(snr_db)
}

/// Add i.i.d. zero-mean Gaussian noise of variance `noise_var` in place.
pub fn add_awgn_with(samples: &mut [f64], noise_var: f64, rng: &mut impl Rng) {
    if noise_var == 0.0 {
        return;
    }
    let sigma = noise_var.sqrt();
    for s in samples.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *s += sigma * z;
    }
}

/// Noisy copy of `samples` under a seeded generator.
pub fn add_awgn(samples: &[f64], noise_var: f64, seed: u64) -> Result<Vec<f64>> {
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise_var must be >= 0 (got {noise_var})"
        )));
    }
    let mut out = samples.to_vec();
    add_awgn_with(&mut out, noise_var, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(out)
}

/// Rectangular OOK waveform: `symbol_samples` samples per bit at `low` or
/// `high`.
pub fn ook_modulate(bits: &[bool], low: f64, high: f64, symbol_samples: usize) -> Vec<f64> {
    bits.iter()
        .flat_map(|&b| std::iter::repeat_n(if b { high } else { low }, symbol_samples))
        .collect()
}

/// Per-symbol mean compared against `threshold` (`>=` decides 1).
pub fn ook_demodulate(samples: &[f64], symbol_samples: usize, threshold: f64) -> Result<Vec<bool>> {
    if symbol_samples == 0 || !samples.len().is_multiple_of(symbol_samples) {
        return Err(Error::LengthMismatch {
            len: samples.len(),
            symbol_samples,
        });
    }
    Ok(samples
        .chunks_exact(symbol_samples)
        .map(|c| c.iter().sum::<f64>() / symbol_samples as f64 >= threshold)
        .collect())
}

pub fn count_errors(sent: &[bool], received: &[bool]) -> usize {
    sent.iter().zip(received).filter(|(a, b)| a != b).count()
}

/// 95% normal-approximation half-width of a binomial proportion.
pub fn ci95(errors: usize, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    let p = errors as f64 / n as f64;
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    /// Bit rate, Hz.
    pub rate: f64,
    pub n_bits: usize,
    pub errors: usize,
    pub ber: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BerPath {
    /// Drive -> rate equations -> splitter -> photodiode.
    Cavity,
    /// Ideal rectangular OOK current, levels 0 and 1 A.
    Bypass,
}

/// Noise-free photodiode current for a bit sequence, with the decision
/// threshold and mean current used for SNR calibration.
#[derive(Debug, Clone)]
pub struct Received {
    pub samples: Vec<f64>,
    pub symbol_samples: usize,
    pub threshold: f64,
    /// Mean data current, A; SNR is defined against this.
    pub i_mean: f64,
}

impl Received {
    pub fn bypass(bits: &[bool], symbol_samples: usize) -> Self {
        Received {
            samples: ook_modulate(bits, 0.0, 1.0, symbol_samples),
            symbol_samples,
            threshold: 0.5,
            i_mean: 0.5,
        }
    }
}

/// Samples per symbol when sampling every `sample_dt` at `rate`.
pub fn symbol_samples(rate: f64, sample_dt: f64) -> Result<usize> {
    let x = 1.0 / (rate * sample_dt);
    let n = x.round();
    if (x - n).abs() > 1e-6 * x || n < 8.0 {
        return Err(Error::InvalidArgument(format!(
            "sample interval {sample_dt:e} s must divide the symbol period of {rate} b/s into at least 8 samples"
        )));
    }
    Ok(n as usize)
}

/// Mean over the last fifth of `[start, start + len)`.
fn settled_mean(x: &[f64], start: usize, len: usize) -> f64 {
    let tail = (len / 5).max(1);
    let s = &x[start + len - tail..start + len];
    s.iter().sum::<f64>() / s.len() as f64
}

/// Run `bits` through the cavity at `rate`. A preamble of all ones then
/// all zeros (each `ber_preamble_time` long) precedes the data; its settled
/// levels fix the decision threshold. The cavity starts at the analytic
/// fixed point of the bias pump.
pub fn cavity_received(b: &Bundle, rate: f64, bits: &[bool], sample_dt: f64) -> Result<Received> {
    let spp = symbol_samples(rate, sample_dt)?;
    let e = &b.experiments;
    let n_pre = ((e.ber_preamble_time * rate).ceil() as usize).max(1);
    let mut sent = vec![true; n_pre];
    sent.extend(std::iter::repeat_n(false, n_pre));
    sent.extend_from_slice(bits);
    let drive = PumpDrive::ook(e.link_bias_power, b.drive.signal_amplitude, rate, sent.clone(), 0.0);

    let ss = laser::analytic_steady_state(laser::pump_rate_from_power(e.link_bias_power, &b.laser), &b.laser);
    let mut sim = b.sim.clone();
    sim.initial_state = laser::LaserState::new(ss.phi_ss, ss.n2_ss);
    // Sample at sub-interval centres so no sample falls on a symbol edge.
    let n = sent.len() * spp;
    let mut times = Vec::with_capacity(n + 1);
    times.push(0.0);
    times.extend((0..n).map(|k| (k as f64 + 0.5) * sample_dt));
    let ts = ode::integrate_at(&drive, &b.laser, &sim, &times)?;

    let current: Vec<f64> = ts.p_out[1..]
        .iter()
        .map(|p| pd_current(split(*p, b.channel.split_lambda).1, &b.channel))
        .collect();
    let pre = n_pre * spp;
    let i_high = settled_mean(&current, 0, pre);
    let i_low = settled_mean(&current, pre, pre);
    let threshold = 0.5 * (i_high + i_low);
    Ok(Received {
        samples: current[2 * pre..].to_vec(),
        symbol_samples: spp,
        threshold,
        i_mean: threshold,
    })
}

/// Symbols per independently seeded noise batch.
const BATCH: usize = 4096;

/// Generator for one named substream of a run.
pub fn substream(seed: u64, kind: u8, point: u32, batch: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 56) | ((point as u64) << 32) | batch as u64);
    rng
}

pub const STREAM_BITS: u8 = 1;
pub const STREAM_NOISE: u8 = 2;

/// Random data bits for a BER run; shared by every rate and SNR point.
pub fn ber_bits(n_bits: usize, seed: u64) -> Vec<bool> {
    let mut rng = substream(seed, STREAM_BITS, 0, 0);
    (0..n_bits).map(|_| rng.random::<bool>()).collect()
}

/// Count decision errors at one SNR. Noise for batch `k` comes from
/// substream `(seed, NOISE, noise_point, k)`, so every SNR on the same
/// `noise_point` sees the same unit-variance draws scaled by its sigma.
pub fn ber_at(rx: &Received, bits: &[bool], snr_db: f64, rate: f64, seed: u64, noise_point: u32) -> Result<BerPoint> {
    let spp = rx.symbol_samples;
    if rx.samples.len() != bits.len() * spp {
        return Err(Error::LengthMismatch {
            len: rx.samples.len(),
            symbol_samples: spp,
        });
    }
    let noise_var = calibrate_noise_var(rx.i_mean, snr_db);
    let errors: usize = rx
        .samples
        .par_chunks(BATCH * spp)
        .zip(bits.par_chunks(BATCH))
        .enumerate()
        .map(|(k, (clean, sent))| {
            let mut noisy = clean.to_vec();
            add_awgn_with(
                &mut noisy,
                noise_var,
                &mut substream(seed, STREAM_NOISE, noise_point, k as u32),
            );
            let got = ook_demodulate(&noisy, spp, rx.threshold)?;
            Ok(count_errors(sent, &got))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    let n = bits.len();
    Ok(BerPoint {
        snr_db,
        rate,
        n_bits: n,
        errors,
        ber: errors as f64 / n as f64,
        ci95: ci95(errors, n),
    })
}

/// BER curves for every `rate` and `snr_db`. All rates share one sample
/// interval, `1/(max rate · ber_samples_per_symbol)`. Output is ordered by
/// rate then SNR.
pub fn ber_monte_carlo(
    b: &Bundle,
    path: BerPath,
    rates: &[f64],
    snr_db: &[f64],
    n_bits: usize,
    seed: u64,
) -> Result<Vec<BerPoint>> {
    if rates.is_empty() {
        return Ok(Vec::new());
    }
    let max_rate = rates.iter().copied().fold(f64::MIN, f64::max);
    let sample_dt = 1.0 / (max_rate * b.experiments.ber_samples_per_symbol as f64);
    let bits = ber_bits(n_bits, seed);
    let mut out = Vec::with_capacity(rates.len() * snr_db.len());
    for (ri, &rate) in rates.iter().enumerate() {
        let rx = match path {
            BerPath::Cavity => cavity_received(b, rate, &bits, sample_dt)?,
            BerPath::Bypass => Received::bypass(&bits, symbol_samples(rate, sample_dt)?),
        };
        for &s in snr_db {
            out.push(ber_at(&rx, &bits, s, rate, seed, ri as u32)?);
        }
    }
    Ok(out)
}
