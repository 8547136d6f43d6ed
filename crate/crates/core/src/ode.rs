//! Explicit adaptive Dormand-Prince 5(4) integration with cubic Hermite
//! dense output, drive breakpoints and a non-negativity guard.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laser::{self, LaserState};
use crate::params::{LaserParams, SimConfig};
use crate::transducers::PumpDrive;

/// Right-hand side of an autonomous-in-form system `y' = f(t, y)`.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N]) -> [f64; N];
}

impl<const N: usize, F: Fn(f64, &[f64; N]) -> [f64; N]> OdeSystem<N> for F {
    fn rhs(&self, t: f64, y: &[f64; N]) -> [f64; N] {
        self(t, y)
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Result of one trial step.
#[derive(Debug, Clone, Copy)]
pub struct Trial<const N: usize> {
    pub y: [f64; N],
    /// Local error estimate (difference of the embedded pair), per component.
    pub err: [f64; N],
    /// Derivative at the new point (first stage of the next step).
    pub f_end: [f64; N],
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(&[f64; N], f64)]) -> [f64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, w) in terms {
            acc += w * k[i];
        }
        *o += h * acc;
    }
    out
}

/// One Dormand-Prince trial step of size `h` from `(t, y)` with `f0 = f(t, y)`.
/// `eval` maps stage times into the current drive segment.
pub fn dopri5_trial<const N: usize, S: OdeSystem<N> + ?Sized>(
    sys: &S,
    eval: impl Fn(f64) -> f64,
    t: f64,
    y: &[f64; N],
    f0: &[f64; N],
    h: f64,
) -> Trial<N> {
    let k1 = *f0;
    let k2 = sys.rhs(eval(t + C[1] * h), &axpy(y, h, &[(&k1, A2[0])]));
    let k3 = sys.rhs(eval(t + C[2] * h), &axpy(y, h, &[(&k1, A3[0]), (&k2, A3[1])]));
    let k4 = sys.rhs(
        eval(t + C[3] * h),
        &axpy(y, h, &[(&k1, A4[0]), (&k2, A4[1]), (&k3, A4[2])]),
    );
    let k5 = sys.rhs(
        eval(t + C[4] * h),
        &axpy(y, h, &[(&k1, A5[0]), (&k2, A5[1]), (&k3, A5[2]), (&k4, A5[3])]),
    );
    let k6 = sys.rhs(
        eval(t + h),
        &axpy(
            y,
            h,
            &[(&k1, A6[0]), (&k2, A6[1]), (&k3, A6[2]), (&k4, A6[3]), (&k5, A6[4])],
        ),
    );
    let y1 = axpy(y, h, &[(&k1, B[0]), (&k3, B[2]), (&k4, B[3]), (&k5, B[4]), (&k6, B[5])]);
    let k7 = sys.rhs(eval(t + h), &y1);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h * (E[0] * k1[i] + E[2] * k3[i] + E[3] * k4[i] + E[4] * k5[i] + E[5] * k6[i] + E[6] * k7[i]);
    }
    Trial { y: y1, err, f_end: k7 }
}

/// Cubic Hermite interpolation on `[t0, t0 + h]`.
pub fn hermite<const N: usize>(
    t0: f64,
    h: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    y1: &[f64; N],
    f1: &[f64; N],
    t: f64,
) -> [f64; N] {
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

/// Weighted RMS norm of an error vector.
fn error_norm<const N: usize>(err: &[f64; N], y0: &[f64; N], y1: &[f64; N], tol: Tolerances) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        let sc = tol.abs + tol.rel * y0[i].abs().max(y1[i].abs());
        acc += (err[i] / sc).powi(2);
    }
    (acc / N as f64).sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

/// Adaptive single-step driver. Holds the current point and the derivative
/// there (first-same-as-last).
pub struct Stepper<'a, const N: usize, S: OdeSystem<N> + ?Sized> {
    sys: &'a S,
    pub t: f64,
    pub y: [f64; N],
    pub f: [f64; N],
    pub h: f64,
    pub tol: Tolerances,
    pub h_max: f64,
    /// Clamp components in `[-abs, 0)` to zero and reject steps that go
    /// further negative.
    pub non_negative: bool,
    /// Accumulated `|err_i| / max(|y_i|, abs)` over accepted steps.
    pub rel_error: [f64; N],
    pub stats: StepStats,
    /// Exclusive right end of the current continuity segment of the RHS.
    seg_end: f64,
}

/// One accepted step: the interval and endpoint data for dense output.
#[derive(Debug, Clone, Copy)]
pub struct Accepted<const N: usize> {
    pub t0: f64,
    pub h: f64,
    pub y0: [f64; N],
    pub f0: [f64; N],
    pub y1: [f64; N],
    pub f1: [f64; N],
    pub err: [f64; N],
}

impl<const N: usize> Accepted<N> {
    pub fn at(&self, t: f64) -> [f64; N] {
        if t == self.t0 + self.h {
            return self.y1;
        }
        hermite(self.t0, self.h, &self.y0, &self.f0, &self.y1, &self.f1, t)
    }
}

const MAX_NEGATIVE_RETRIES: u32 = 60;

impl<'a, const N: usize, S: OdeSystem<N> + ?Sized> Stepper<'a, N, S> {
    pub fn new(sys: &'a S, t0: f64, y0: [f64; N], tol: Tolerances) -> Self {
        let f = sys.rhs(t0, &y0);
        let mut s = Stepper {
            sys,
            t: t0,
            y: y0,
            f,
            h: 0.0,
            tol,
            h_max: f64::INFINITY,
            non_negative: false,
            rel_error: [0.0; N],
            stats: StepStats {
                rhs_evals: 1,
                ..Default::default()
            },
            seg_end: f64::INFINITY,
        };
        s.h = s.initial_step();
        s
    }

    /// Standard starting-step heuristic from the first two derivatives.
    fn initial_step(&mut self) -> f64 {
        let sc: Vec<f64> = self.y.iter().map(|v| self.tol.abs + self.tol.rel * v.abs()).collect();
        let rms = |v: &[f64; N]| (v.iter().zip(&sc).map(|(x, s)| (x / s).powi(2)).sum::<f64>() / N as f64).sqrt();
        let d0 = rms(&self.y);
        let d1 = rms(&self.f);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.h_max);
        let y1 = axpy(&self.y, h0, &[(&self.f, 1.0)]);
        let f1 = self.sys.rhs(self.t + h0, &y1);
        self.stats.rhs_evals += 1;
        let mut df = [0.0; N];
        for i in 0..N {
            df[i] = f1[i] - self.f[i];
        }
        let d2 = rms(&df) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1)
    }

    /// Restrict the RHS time argument to `[t, seg_end)`; the drive is
    /// evaluated at its left limit on the final stage.
    pub fn set_segment_end(&mut self, seg_end: f64) {
        self.seg_end = seg_end;
    }

    /// Restart after a discontinuity in the RHS at the current time.
    pub fn restart(&mut self) {
        self.f = self.sys.rhs(self.t, &self.y);
        self.stats.rhs_evals += 1;
    }

    /// Take one accepted step not crossing `t_stop`.
    pub fn step(&mut self, t_stop: f64) -> Result<Accepted<N>> {
        let seg_end = self.seg_end;
        let left = seg_end.next_down();
        let eval = |tt: f64| if tt >= seg_end { left } else { tt };
        let mut negative_retries = 0u32;
        loop {
            let remaining = t_stop - self.t;
            let mut h = self.h.min(self.h_max);
            let mut last = false;
            if h >= remaining * (1.0 - 1e-12) {
                h = remaining;
                last = true;
            } else if h > 0.5 * remaining {
                // Avoid a sliver step before t_stop.
                h = 0.5 * remaining;
            }
            let h_min = 16.0 * f64::EPSILON * self.t.abs().max(1e-300);
            if !(h > h_min) {
                return Err(Error::StepUnderflow { t: self.t, h });
            }
            let trial = dopri5_trial(self.sys, eval, self.t, &self.y, &self.f, h);
            self.stats.rhs_evals += 6;
            let finite = trial.y.iter().chain(&trial.err).all(|v| v.is_finite());
            let err = if finite {
                error_norm(&trial.err, &self.y, &trial.y, self.tol)
            } else {
                f64::INFINITY
            };
            if !(err <= 1.0) {
                self.stats.rejected += 1;
                let fac = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 0.5)
                } else {
                    0.25
                };
                self.h = h * fac;
                continue;
            }

            let mut y1 = trial.y;
            let mut f1 = trial.f_end;
            if self.non_negative {
                let worst = y1
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v < -self.tol.abs)
                    .min_by(|a, b| a.1.total_cmp(b.1));
                if let Some((component, &value)) = worst {
                    negative_retries += 1;
                    if negative_retries > MAX_NEGATIVE_RETRIES {
                        return Err(Error::NegativeState {
                            t: self.t + h,
                            component,
                            value,
                        });
                    }
                    self.stats.rejected += 1;
                    self.h = 0.5 * h;
                    continue;
                }
                if y1.iter().any(|v| *v < 0.0) {
                    for v in y1.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    f1 = self.sys.rhs(eval(self.t + h), &y1);
                    self.stats.rhs_evals += 1;
                }
            }
            if !f1.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    t: self.t + h,
                    v1: y1[0],
                    v2: if N > 1 { y1[1] } else { f64::NAN },
                });
            }

            for ((r, e), y) in self.rel_error.iter_mut().zip(&trial.err).zip(&y1) {
                *r += e.abs() / y.abs().max(self.tol.abs);
            }
            let acc = Accepted {
                t0: self.t,
                h,
                y0: self.y,
                f0: self.f,
                y1,
                f1,
                err: trial.err,
            };
            self.t = if last { t_stop } else { self.t + h };
            self.y = y1;
            self.f = f1;
            self.stats.accepted += 1;
            let fac = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            // Keep the controller's proposal unless the last step was
            // truncated to hit t_stop.
            self.h = if last { self.h.max(h) } else { h * fac };
            return Ok(acc);
        }
    }
}

/// One accepted adaptive step starting at `(t, y)` aimed at `dt_target`.
/// Returns the new state and the embedded local error estimate.
pub fn step_dense<const N: usize, S: OdeSystem<N> + ?Sized>(
    sys: &S,
    y: [f64; N],
    t: f64,
    dt_target: f64,
    tol: Tolerances,
) -> Result<(f64, [f64; N], [f64; N])> {
    if !(dt_target > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt_target must be > 0 (got {dt_target})"
        )));
    }
    let mut st = Stepper::new(sys, t, y, tol);
    st.h = dt_target;
    let acc = st.step(t + dt_target)?;
    Ok((st.t, acc.y1, acc.err))
}

/// Dense solution sampled on a grid.
#[derive(Debug, Clone)]
pub struct Sampled<const N: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; N]>,
    pub rel_error: [f64; N],
    pub stats: StepStats,
}

/// Integrate from `sample_times[0]` through the last sample time. The RHS
/// may be discontinuous at `breakpoints`; each open interval between them
/// is integrated separately with the RHS time clamped inside it.
pub fn integrate_sampled<const N: usize, S: OdeSystem<N> + ?Sized>(
    sys: &S,
    y0: [f64; N],
    sample_times: &[f64],
    breakpoints: &[f64],
    tol: Tolerances,
    h_max: f64,
    non_negative: bool,
) -> Result<Sampled<N>> {
    let Some((&t0, _)) = sample_times.split_first() else {
        return Ok(Sampled {
            t: Vec::new(),
            y: Vec::new(),
            rel_error: [0.0; N],
            stats: StepStats::default(),
        });
    };
    let t_end = *sample_times.last().unwrap();
    let mut st = Stepper::new(sys, t0, y0, tol);
    st.h_max = h_max;
    st.non_negative = non_negative;
    let mut stops: Vec<f64> = breakpoints.iter().copied().filter(|b| *b > t0 && *b < t_end).collect();
    stops.push(t_end);

    let mut ys = Vec::with_capacity(sample_times.len());
    ys.push(y0);
    let mut next = 1usize;
    for (k, &stop) in stops.iter().enumerate() {
        st.set_segment_end(stop);
        if k > 0 {
            st.restart();
        }
        while st.t < stop {
            let acc = st.step(stop)?;
            let t1 = acc.t0 + acc.h;
            while next < sample_times.len() && sample_times[next] <= t1 {
                let mut y = acc.at(sample_times[next]);
                if non_negative {
                    for v in y.iter_mut() {
                        if *v < 0.0 && *v >= -tol.abs {
                            *v = 0.0;
                        }
                    }
                }
                ys.push(y);
                next += 1;
            }
        }
    }
    Ok(Sampled {
        t: sample_times.to_vec(),
        y: ys,
        rel_error: st.rel_error,
        stats: st.stats,
    })
}

/// Sampled laser trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    /// s
    pub t: Vec<f64>,
    /// Photon density, m^-3.
    pub v1: Vec<f64>,
    /// Upper-level density, m^-3.
    pub v2: Vec<f64>,
    /// Optical output power, W.
    pub p_out: Vec<f64>,
    /// Pump power, W.
    pub drive: Vec<f64>,
    /// Accumulated relative error estimate per state component.
    pub error_estimate: [f64; 2],
    pub stats: StepStats,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_state(&self) -> LaserState {
        let k = self.len() - 1;
        LaserState::new(self.v1[k], self.v2[k])
    }
}

/// Sample grid `k·dt` for `k = 0..=floor(t_end/dt)`.
pub fn sample_grid(t_end: f64, dt: f64) -> Vec<f64> {
    let n = (t_end / dt * (1.0 + 1e-12)).floor() as usize;
    (0..=n).map(|k| k as f64 * dt).collect()
}

struct LaserSystem<'a> {
    params: &'a LaserParams,
    drive: &'a PumpDrive,
}

impl OdeSystem<2> for LaserSystem<'_> {
    fn rhs(&self, t: f64, y: &[f64; 2]) -> [f64; 2] {
        let i3 = laser::pump_rate_from_power(self.drive.power_at(t), self.params);
        laser::rhs(LaserState::from_array(*y), i3, self.params).to_array()
    }
}

/// Integrate the rate equations under `drive` from `sim.initial_state`.
pub fn integrate(drive: &PumpDrive, params: &LaserParams, sim: &SimConfig) -> Result<TimeSeries> {
    let times = sample_grid(sim.t_end, sim.sample_dt);
    integrate_at(drive, params, sim, &times)
}

/// As [`integrate`] with explicit sample times (non-decreasing, first is
/// the start time).
pub fn integrate_at(drive: &PumpDrive, params: &LaserParams, sim: &SimConfig, times: &[f64]) -> Result<TimeSeries> {
    let sys = LaserSystem { params, drive };
    let t_last = times.last().copied().unwrap_or(0.0);
    let sol = integrate_sampled(
        &sys,
        sim.initial_state.to_array(),
        times,
        &drive.breakpoints(t_last),
        Tolerances {
            rel: sim.rel_tol,
            abs: sim.abs_tol,
        },
        drive.max_step(),
        true,
    )?;
    let v1: Vec<f64> = sol.y.iter().map(|y| y[0]).collect();
    let v2: Vec<f64> = sol.y.iter().map(|y| y[1]).collect();
    let p_out = v1.iter().map(|v| laser::output_power(*v, params)).collect();
    let drive_p = sol.t.iter().map(|t| drive.power_at(*t)).collect();
    Ok(TimeSeries {
        t: sol.t,
        v1,
        v2,
        p_out,
        drive: drive_p,
        error_estimate: sol.rel_error,
        stats: sol.stats,
    })
}
