//! Command-line front end.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bohmian::{critical_initial_position, quantile_positions, Classification, TrajectoryEnsemble};
use crate::config::{parse_config, RunConfig, SweepAxis};
use crate::error::{Error, Result};
use crate::observables::{ExpectationRecorder, SeriesLabel, TransmissionRecorder};
use crate::output::{
    config_hash, expectations_csv, pair_report, read_series_csv, scaled_series, series_csv, series_file_name,
    sweep_csv, to_json, trajectories_csv, write_file, Manifest, SnapshotWriter,
};
use crate::packet::{build_packet, PacketKind};
use crate::propagator::{propagate, Observer, PropagatorConfig};
use crate::superarrival::{reference_schedule, run_pair_observed, sweep};

#[derive(Debug, Parser)]
#[command(name = "tdbarrier", version, about = "Wavepacket scattering from time-dependent barriers")]
pub struct Cli {
    /// Flat key = value config file.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set barrier.epsilon=0.4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,
    /// Maximum number of sweep workers.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Dump wavefunction snapshots.
    #[arg(long, global = true)]
    pub snapshots: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Propagate the configured barrier once and record T(t) and expectations.
    Simulate,
    /// Run the perturbed barrier and its reference, then locate the superarrival window.
    Pair,
    /// Repeat `pair` along one parameter axis.
    Sweep(SweepArgs),
    /// Integrate a quantile-sampled Bohmian ensemble and selected paths.
    Trajectories(TrajectoryArgs),
    /// Recompute report.json from the series files in a previous `pair` output.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// epsilon, w_f, x_d, b, separation, alpha or v0.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated values in config units.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    /// Ensemble size (overrides `bohmian.ensemble`).
    #[arg(long)]
    pub ensemble: Option<usize>,
    /// Guide the particles with the reference barrier instead.
    #[arg(long)]
    pub reference: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory holding config.toml, ts_perturbed.csv and a reference series.
    pub dir: PathBuf,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.to_string_lossy().into_owned();
    }
    if cli.snapshots {
        cfg.output.snapshots = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Session {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Session {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let mut s = Self { dir: PathBuf::from(&cfg.output.dir), hash: config_hash(cfg), files: Vec::new() };
        s.write("config.toml", &cfg.to_text())?;
        Ok(s)
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        write_file(&self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn snapshots(&self, cfg: &RunConfig) -> Option<SnapshotWriter> {
        cfg.output
            .snapshots
            .then(|| SnapshotWriter::new(self.dir.clone(), cfg.output.snapshot_stride, self.hash.clone()))
    }

    fn finish(mut self, command: &str, cfg: &RunConfig, started: Instant, snaps: Option<SnapshotWriter>) -> Result<()> {
        if let Some(s) = snaps {
            self.files.extend(s.written);
        }
        let manifest = Manifest::new(command, cfg, started.elapsed().as_secs_f64(), self.files.clone());
        self.write("manifest.json", &to_json(&manifest)?)
    }
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let sc = cfg.resolve()?;
    let mut session = Session::new(cfg)?;
    let label = match sc.schedule {
        crate::potential::BarrierSchedule::Free => SeriesLabel::Free,
        crate::potential::BarrierSchedule::StaticRect { .. } => SeriesLabel::Static,
        _ => SeriesLabel::Perturbed,
    };
    let psi = build_packet(&sc.packet, &sc.grid, &sc.units)?;
    let mut rec = TransmissionRecorder::new(sc.x_d, label);
    let mut expect = ExpectationRecorder::new(sc.x_d);
    let mut snaps = session.snapshots(cfg);
    {
        let mut obs: Vec<&mut dyn Observer> = vec![&mut rec, &mut expect];
        if let Some(s) = snaps.as_mut() {
            obs.push(s);
        }
        propagate(&psi, &sc.schedule, &sc.grid, &sc.units, &sc.propagator, &mut obs)?;
    }
    let scaled = scaled_series(&rec.series, &sc.units);
    session.write(&series_file_name(label), &series_csv(&scaled, &session.hash))?;
    session.write("expectations.csv", &expectations_csv(&expect.series, &sc.units, &session.hash))?;
    session.finish("simulate", cfg, started, snaps)
}

fn pair(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let sc = cfg.resolve()?;
    let mut session = Session::new(cfg)?;
    let mut snaps = session.snapshots(cfg);
    let result = match snaps.as_mut() {
        Some(s) => run_pair_observed(&sc, &mut [], &mut [s])?,
        None => run_pair_observed(&sc, &mut [], &mut [])?,
    };
    let reference = scaled_series(&result.reference, &sc.units);
    let perturbed = scaled_series(&result.perturbed, &sc.units);
    session.write(&series_file_name(reference.label), &series_csv(&reference, &session.hash))?;
    session.write(&series_file_name(perturbed.label), &series_csv(&perturbed, &session.hash))?;
    session.write("expectations.csv", &expectations_csv(&result.expectations, &sc.units, &session.hash))?;
    // The report is computed from the series exactly as written so that
    // `analyze` on this directory reproduces it byte for byte.
    let report = pair_report(&reference, &perturbed, cfg.barrier.t_p, cfg.analysis.delta_dev, &session.hash)?;
    session.write("report.json", &to_json(&report)?)?;
    session.finish("pair", cfg, started, snaps)
}

fn run_sweep(cfg: &RunConfig, args: &SweepArgs, threads: Option<usize>) -> Result<()> {
    let started = Instant::now();
    let axis = match &args.axis {
        Some(a) => SweepAxis::parse(a).ok_or_else(|| Error::validation("axis", format!("unknown sweep axis {a}")))?,
        None => cfg
            .analysis
            .sweep_axis
            .ok_or_else(|| Error::validation("analysis.sweep_axis", "no sweep axis given"))?,
    };
    let values = if !args.values.is_empty() {
        args.values.clone()
    } else if !cfg.analysis.sweep_values.is_empty() {
        cfg.analysis.sweep_values.clone()
    } else {
        axis.default_values()
    };
    let units = cfg.resolve()?.units;
    let mut session = Session::new(cfg)?;
    let result = sweep(axis, &values, cfg, threads)?;
    let note = match axis {
        SweepAxis::Epsilon => "t0",
        SweepAxis::FinalWidth | SweepAxis::DetectorPosition | SweepAxis::Separation => "sigma1",
        SweepAxis::BarrierHeight => "E0",
        SweepAxis::NonlinearB | SweepAxis::Alpha => "dimensionless",
    };
    session.write(&format!("sweep_{}.csv", axis.as_str()), &sweep_csv(&result, &units, note, &session.hash))?;
    session.finish("sweep", cfg, started, None)
}

#[derive(Serialize)]
struct EnsembleSummary {
    ensemble: usize,
    transmitted_fraction: f64,
    wave_transmission: f64,
    failed: usize,
    critical_offset_sigma0: Option<f64>,
    selected: Vec<SelectedPath>,
}

#[derive(Serialize)]
struct SelectedPath {
    start_sigma1: f64,
    classification: Classification,
    predicted: Option<Classification>,
}

fn trajectories(cfg: &RunConfig, args: &TrajectoryArgs) -> Result<()> {
    let started = Instant::now();
    let sc = cfg.resolve()?;
    let mut session = Session::new(cfg)?;
    let schedule = if args.reference { reference_schedule(&sc.schedule)? } else { sc.schedule };
    let (u, grid) = (&sc.units, &sc.grid);
    let psi = build_packet(&sc.packet, grid, u)?;
    let n = args.ensemble.unwrap_or(cfg.bohmian.ensemble).max(1);
    let window = (cfg.bohmian.window_lo * u.sigma1, cfg.bohmian.window_hi * u.sigma1);
    let starts: Vec<f64> = cfg.bohmian.starts.iter().map(|x| x * u.sigma1).collect();
    let mut ensemble = TrajectoryEnsemble::new(grid, u, &quantile_positions(n, &psi, grid)?, window, false);
    let mut selected = TrajectoryEnsemble::new(grid, u, &starts, window, true);
    let mut rec = TransmissionRecorder::new(sc.x_d, SeriesLabel::Perturbed);
    let mut snaps = session.snapshots(cfg);
    {
        let mut obs: Vec<&mut dyn Observer> = vec![&mut ensemble, &mut selected, &mut rec];
        if let Some(s) = snaps.as_mut() {
            obs.push(s);
        }
        let frames = PropagatorConfig { store_every: cfg.bohmian.store_every, ..sc.propagator };
        propagate(&psi, &schedule, grid, u, &frames, &mut obs)?;
    }
    let band = u.sigma1;
    ensemble.classify(sc.x_d, band);
    selected.classify(sc.x_d, band);
    let t_wave = rec.series.last_value().unwrap_or(f64::NAN);
    let x_c = match sc.packet.kind {
        PacketKind::Gaussian => critical_initial_position(t_wave, sc.packet.x0, sc.packet.sigma0).ok(),
        PacketKind::NonGaussian => None,
    };
    let summary = EnsembleSummary {
        ensemble: n,
        transmitted_fraction: ensemble.fraction_beyond(sc.x_d),
        wave_transmission: t_wave,
        failed: ensemble.failures.iter().filter(|f| f.is_some()).count(),
        critical_offset_sigma0: x_c.map(|x| (x - sc.packet.x0) / sc.packet.sigma0),
        selected: selected
            .trajectories
            .iter()
            .map(|t| SelectedPath {
                start_sigma1: t.initial_position / u.sigma1,
                classification: t.classification,
                predicted: x_c.map(|x| {
                    if t.initial_position > x {
                        Classification::Transmitted
                    } else {
                        Classification::Reflected
                    }
                }),
            })
            .collect(),
    };
    session.write("trajectories.csv", &trajectories_csv(&selected.trajectories, u, &session.hash))?;
    session.write("ensemble.json", &to_json(&summary)?)?;
    session.finish("trajectories", cfg, started, snaps)
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let dir: &Path = &args.dir;
    let cfg = parse_config(&std::fs::read_to_string(dir.join("config.toml"))?)?;
    let hash = config_hash(&cfg);
    let perturbed = read_series_csv(&dir.join(series_file_name(SeriesLabel::Perturbed)))?;
    let reference = [SeriesLabel::Static, SeriesLabel::Free, SeriesLabel::FreeAnalytic]
        .into_iter()
        .map(|l| dir.join(series_file_name(l)))
        .find(|p| p.exists())
        .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "no reference series found")))?;
    let reference = read_series_csv(&reference)?;
    let report = pair_report(&reference, &perturbed, cfg.barrier.t_p, cfg.analysis.delta_dev, &hash)?;
    write_file(&dir.join("report.json"), &to_json(&report)?)
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Command::Analyze(a) = &cli.command {
        return analyze(a);
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Simulate => simulate(&cfg),
        Command::Pair => pair(&cfg),
        Command::Sweep(a) => run_sweep(&cfg, a, cli.threads),
        Command::Trajectories(a) => trajectories(&cfg, a),
        Command::Analyze(_) => unreachable!(),
    }
}

/// Parses `argv`, runs the command and returns the process exit status:
/// 0 success, 1 invalid input, 2 numerical failure, 3 I/O failure.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_invocations_exit_with_one() {
        assert_eq!(run_cli(["tdbarrier", "frobnicate"]), 1);
        assert_eq!(run_cli(["tdbarrier", "--set", "barrier.w_f=0.01", "pair"]), 1);
        assert_eq!(run_cli(["tdbarrier", "sweep", "--axis", "nope"]), 1);
    }

    #[test]
    fn missing_analysis_directory_is_io() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nothing");
        assert_eq!(run_cli(["tdbarrier".into(), "analyze".into(), missing.into_os_string()]), 3);
    }
}
