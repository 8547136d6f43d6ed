//! Command-line front end: one subcommand per experiment plus
//! `reproduce-all`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, Column, RelaxationMetrics};
use crate::comms::{self, BerPath};
use crate::error::{Error, Result};
use crate::laser;
use crate::ode;
use crate::output::{self, PlotSeries, Table};
use crate::params::{self, Bundle};
use crate::transducers::Waveform;

#[derive(Debug, Parser)]
#[command(name = "rbeam", version, about = "Resonant-beam power and data link simulator")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Config file (`key = value` lines); built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// RNG seed; overrides RBEAM_SEED and the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for sweeps and Monte-Carlo runs.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    /// Also write an SVG plot next to each CSV.
    #[arg(long, global = true)]
    pub svg: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathArg {
    Cavity,
    Bypass,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Cold-start transient under the configured drive.
    Transient,
    /// Steady output, efficiency and settling time versus pump power.
    SweepPump,
    /// Small-signal gain of the cavity versus modulation frequency.
    FreqResponse,
    /// SNR, capacity and charging power versus splitting ratio.
    SweepLambda,
    /// Monte-Carlo bit error rate versus SNR for each configured bit rate.
    Ber {
        /// Signal path between modulator and detector.
        #[arg(long, value_enum, default_value = "cavity")]
        path: PathArg,
    },
    /// Run every experiment in sequence.
    ReproduceAll,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Transient => "transient",
            Command::SweepPump => "sweep-pump",
            Command::FreqResponse => "freq-response",
            Command::SweepLambda => "sweep-lambda",
            Command::Ber { .. } => "ber",
            Command::ReproduceAll => "reproduce-all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    /// Resolved parameters in canonical config syntax.
    pub config: String,
    pub parameters: BTreeMap<String, String>,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<String>,
    /// s
    pub wall_clock: f64,
}

/// Load the config (or defaults) and apply seed overrides.
pub fn resolve_bundle(common: &CommonArgs) -> Result<Bundle> {
    let mut b = match &common.config {
        Some(p) => params::load_config(p)?,
        None => Bundle::default(),
    };
    b.apply_env_overrides()?;
    if let Some(s) = common.seed {
        b.sim.rng_seed = s;
    }
    b.validate()?;
    Ok(b)
}

struct Ctx<'a> {
    b: &'a Bundle,
    out: &'a Path,
    svg: bool,
    files: Vec<String>,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        output::write_text(&self.out.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        output::write_json(&self.out.join(name), v)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn table(&mut self, name: &str, t: Table, command: &str) -> Result<()> {
        let t = t.meta("command", command).with_bundle(self.b);
        self.write(name, &t.to_csv())
    }

    fn plot(&mut self, name: &str, svg: impl FnOnce() -> String) -> Result<()> {
        if self.svg {
            self.write(name, &svg())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
struct RelaxationReport {
    settled: bool,
    /// s
    window_end: f64,
    settle_band: f64,
    /// W
    threshold_power: f64,
    pump_ratio: f64,
    metrics: Option<RelaxationMetrics>,
    not_settled_reason: Option<String>,
}

fn cmd_transient(ctx: &mut Ctx) -> Result<()> {
    let b = ctx.b;
    let ts = ode::integrate(&b.drive, &b.laser, &b.sim)?;
    let modulated = match b.drive.waveform {
        Waveform::Constant => false,
        Waveform::OokBits => b.drive.signal_amplitude > 0.0 && !b.drive.bits.is_empty(),
        Waveform::Sinusoid { amplitude, .. } => amplitude > 0.0,
    };
    // Metrics describe the cold-start transient before any modulation.
    let window_end = if modulated && b.drive.signal_delay > 0.0 {
        b.drive.signal_delay.min(b.sim.t_end)
    } else {
        b.sim.t_end
    };
    let n = ts.t.partition_point(|t| *t <= window_end);
    let mut head = ts.clone();
    for v in [
        &mut head.t,
        &mut head.v1,
        &mut head.v2,
        &mut head.p_out,
        &mut head.drive,
    ] {
        v.truncate(n);
    }
    let (metrics, reason) = match analysis::detect_relaxation(&head, b.experiments.settle_band) {
        Ok(m) => (Some(m), None),
        Err(e @ Error::NotSettled { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    ctx.table("fig6_transient.csv", output::timeseries_table(&ts), "transient")?;
    ctx.json(
        "relaxation.json",
        &RelaxationReport {
            settled: metrics.is_some(),
            window_end,
            settle_band: b.experiments.settle_band,
            threshold_power: laser::threshold_power(&b.laser),
            pump_ratio: laser::pump_ratio(laser::pump_rate_from_power(b.drive.bias_power, &b.laser), &b.laser),
            metrics,
            not_settled_reason: reason,
        },
    )?;
    ctx.plot("fig6_transient.svg", || {
        output::svg_plot(
            "Output power",
            "t [s]",
            "P_out [W]",
            &[PlotSeries {
                label: "p_out",
                x: &ts.t,
                y: &ts.p_out,
            }],
            false,
            false,
        )
    })
}

fn cmd_sweep_pump(ctx: &mut Ctx) -> Result<()> {
    let r = analysis::sweep_pump(&ctx.b.experiments.sweep_powers, ctx.b)?;
    ctx.table("fig7_pump_sweep.csv", output::sweep_table(&r), "sweep-pump")?;
    ctx.plot("fig7_pump_sweep.svg", || {
        let y = r.column("output_power").unwrap_or(&[]);
        output::svg_plot(
            "Steady output power",
            "pump power [W]",
            "P_out [W]",
            &[PlotSeries {
                label: "output_power",
                x: &r.axis.values,
                y,
            }],
            false,
            false,
        )
    })
}

fn cmd_freq_response(ctx: &mut Ctx) -> Result<()> {
    let e = &ctx.b.experiments;
    let r = analysis::frequency_response(&e.freq_response_freqs, e.freq_amplitude, ctx.b)?;
    ctx.table("fig8_freq_response.csv", output::sweep_table(&r), "freq-response")?;
    ctx.plot("fig8_freq_response.svg", || {
        let g = r.column("gain").unwrap_or(&[]);
        let a = r.column("analytic_gain").unwrap_or(&[]);
        output::svg_plot(
            "Frequency response",
            "f [Hz]",
            "gain [W/W]",
            &[
                PlotSeries {
                    label: "simulated",
                    x: &r.axis.values,
                    y: g,
                },
                PlotSeries {
                    label: "small-signal",
                    x: &r.axis.values,
                    y: a,
                },
            ],
            true,
            true,
        )
    })
}

fn cmd_sweep_lambda(ctx: &mut Ctx) -> Result<()> {
    let grid = analysis::lambda_grid(ctx.b.experiments.lambda_points);
    let r = analysis::sweep_lambda(&grid, ctx.b)?;
    ctx.table("fig9_lambda.csv", output::sweep_table(&r), "sweep-lambda")?;
    ctx.plot("fig9_lambda.svg", || {
        let y = r.column("snr").unwrap_or(&[]);
        output::svg_plot(
            "SNR versus splitting ratio",
            "lambda",
            "SNR [dB]",
            &[PlotSeries {
                label: "snr",
                x: &r.axis.values,
                y,
            }],
            false,
            false,
        )
    })
}

fn cmd_ber(ctx: &mut Ctx, path: PathArg) -> Result<()> {
    let b = ctx.b;
    let e = &b.experiments;
    let p = match path {
        PathArg::Cavity => BerPath::Cavity,
        PathArg::Bypass => BerPath::Bypass,
    };
    let pts = comms::ber_monte_carlo(b, p, &e.ber_rates, &e.ber_snr_db, e.ber_n_bits, b.sim.rng_seed)?;
    let mut meta = vec![
        ("command".to_string(), "ber".to_string()),
        ("ber_path".to_string(), format!("{path:?}").to_lowercase()),
    ];
    meta.extend(b.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
    ctx.write("fig10_ber.csv", &output::ber_csv(&pts, &meta))?;
    ctx.plot("fig10_ber.svg", || {
        let curves: Vec<(String, Vec<f64>, Vec<f64>)> = e
            .ber_rates
            .iter()
            .map(|r| {
                let sel: Vec<_> = pts.iter().filter(|p| p.rate == *r).collect();
                (
                    format!("{} kb/s", r / 1e3),
                    sel.iter().map(|p| p.snr_db).collect(),
                    sel.iter().map(|p| p.ber).collect(),
                )
            })
            .collect();
        let series: Vec<PlotSeries> = curves.iter().map(|(l, x, y)| PlotSeries { label: l, x, y }).collect();
        output::svg_plot("Bit error rate", "SNR [dB]", "BER", &series, false, true)
    })
}

/// Run one subcommand, writing its files and manifest under `common.out`.
pub fn run(common: &CommonArgs, command: &Command) -> Result<RunManifest> {
    let start = Instant::now();
    let b = resolve_bundle(common)?;
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {} worker threads: {e}", common.jobs)))?;
    let mut ctx = Ctx {
        b: &b,
        out: &common.out,
        svg: common.svg,
        files: Vec::new(),
    };
    pool.install(|| -> Result<()> {
        match command {
            Command::Transient => cmd_transient(&mut ctx),
            Command::SweepPump => cmd_sweep_pump(&mut ctx),
            Command::FreqResponse => cmd_freq_response(&mut ctx),
            Command::SweepLambda => cmd_sweep_lambda(&mut ctx),
            Command::Ber { path } => cmd_ber(&mut ctx, *path),
            Command::ReproduceAll => {
                cmd_transient(&mut ctx)?;
                cmd_sweep_pump(&mut ctx)?;
                cmd_freq_response(&mut ctx)?;
                cmd_sweep_lambda(&mut ctx)?;
                cmd_ber(&mut ctx, PathArg::Cavity)
            }
        }
    })?;
    let mut outputs = ctx.files;
    let manifest_name = format!("{}.manifest.json", command.name());
    outputs.push(manifest_name.clone());
    let manifest = RunManifest {
        command: command.name().to_string(),
        config_path: common.config.as_ref().map(|p| p.display().to_string()),
        config: b.to_config_string(),
        parameters: b.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        seed: b.sim.rng_seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
        wall_clock: start.elapsed().as_secs_f64(),
    };
    output::write_json(&common.out.join(&manifest_name), &manifest)?;
    Ok(manifest)
}

/// Columns shared by tests that inspect a written CSV.
pub fn read_csv_columns(text: &str) -> Vec<Column> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let Some(header) = lines.next() else {
        return Vec::new();
    };
    let mut cols: Vec<Column> = header.split(',').map(|h| Column::new(h, "", Vec::new())).collect();
    for l in lines {
        for (c, v) in cols.iter_mut().zip(l.split(',')) {
            c.values.push(v.parse().unwrap_or(f64::NAN));
        }
    }
    cols
}
