//! Files written by the CLI.
//!
//! Every CSV starts with a `#` header block naming units and the SHA-256 of
//! the flat config text. Numbers are printed in shortest round-trip form, so
//! re-reading a file recovers the exact values that were written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bohmian::Trajectory;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, WaveState};
use crate::observables::{ExpectationSeries, SeriesLabel, TransmissionSeries};
use crate::propagator::{Frame, Observer};
use crate::superarrival::{analyze_pair, SweepResult, Verdict};
use crate::units::UnitSystem;

/// SHA-256 of the serialized config with the `output.*` keys left out, so
/// the hash names the computation rather than where it was written.
pub fn config_hash(config: &RunConfig) -> String {
    let text = config.to_text();
    let mut h = Sha256::new();
    for line in text.lines().filter(|l| !l.starts_with("output.")) {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Shortest round-trip form, switching to exponent notation for very small
/// or large magnitudes.
struct Num(f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

fn header(lines: &[String], hash: &str) -> String {
    let mut s = String::new();
    for l in lines {
        let _ = writeln!(s, "# {l}");
    }
    let _ = writeln!(s, "# config_sha256 = {hash}");
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| Num(x).to_string())
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Series with times in `t0` (transmission is dimensionless).
pub fn scaled_series(series: &TransmissionSeries, units: &UnitSystem) -> TransmissionSeries {
    TransmissionSeries {
        times: series.times.iter().map(|t| t / units.t0).collect(),
        values: series.values.clone(),
        x_d: series.x_d / units.sigma1,
        label: series.label,
    }
}

pub fn series_file_name(label: SeriesLabel) -> String {
    format!("ts_{}.csv", label.as_str())
}

/// `scaled` must already be in t0 / σ1 units.
pub fn series_csv(scaled: &TransmissionSeries, hash: &str) -> String {
    let mut s = header(
        &[
            format!("observable = transmission T(t) beyond x_d ({})", scaled.label.as_str()),
            format!("label = {}", scaled.label.as_str()),
            format!("x_d_sigma1 = {}", scaled.x_d),
            "columns: t in t0, T dimensionless".into(),
        ],
        hash,
    );
    s.push_str("t_over_t0,T\n");
    for (t, v) in scaled.times.iter().zip(&scaled.values) {
        let _ = writeln!(s, "{},{}", Num(*t), Num(*v));
    }
    s
}

fn header_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').trim().split_once(" = "))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v.trim())
}

fn bad(path: &Path, what: &str) -> Error {
    Error::Configuration(format!("{}: {what}", path.display()))
}

/// Reads a file written by [`series_csv`].
pub fn read_series_csv(path: &Path) -> Result<TransmissionSeries> {
    let text = fs::read_to_string(path)?;
    let label = header_value(&text, "label")
        .and_then(SeriesLabel::parse)
        .ok_or_else(|| bad(path, "missing series label"))?;
    let x_d = header_value(&text, "x_d_sigma1")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(path, "missing detector position"))?;
    let mut series = TransmissionSeries::new(x_d, label);
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let (t, v) = line.split_once(',').ok_or_else(|| bad(path, "malformed row"))?;
        series.times.push(t.trim().parse().map_err(|_| bad(path, "bad time"))?);
        series.values.push(v.trim().parse().map_err(|_| bad(path, "bad value"))?);
    }
    series.validate()?;
    Ok(series)
}

pub fn expectations_csv(e: &ExpectationSeries, units: &UnitSystem, hash: &str) -> String {
    let mut s = header(
        &[
            "observable = transmitted-sector expectations (empty below the transmission floor)".into(),
            "columns: t in t0, <H>_T in E0, <p>_T in p0, <x>_T in sigma1".into(),
        ],
        hash,
    );
    s.push_str("t_over_t0,H_over_E0,p_over_p0,x_over_sigma1\n");
    for k in 0..e.times.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            Num(e.times[k] / units.t0),
            opt(e.energy_t[k].map(|v| v / units.e0)),
            opt(e.momentum_t[k].map(|v| v / units.p0)),
            opt(e.position_t[k].map(|v| v / units.sigma1)),
        );
    }
    s
}

/// Superarrival analysis of a pair, in t0 units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub reference: SeriesLabel,
    pub delta_dev: f64,
    pub t_p_over_t0: f64,
    pub verdict: Verdict,
    pub t_inf_reference: f64,
    pub t_inf_perturbed: f64,
    pub config_sha256: String,
}

/// Analyses two series that are already in t0 units.
pub fn pair_report(
    reference: &TransmissionSeries,
    perturbed: &TransmissionSeries,
    t_p_over_t0: f64,
    delta_dev: f64,
    hash: &str,
) -> Result<PairReport> {
    Ok(PairReport {
        reference: reference.label,
        delta_dev,
        t_p_over_t0,
        verdict: analyze_pair(reference, perturbed, t_p_over_t0, delta_dev)?,
        t_inf_reference: reference.last_value().unwrap_or(f64::NAN),
        t_inf_perturbed: perturbed.last_value().unwrap_or(f64::NAN),
        config_sha256: hash.to_string(),
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Configuration(e.to_string()))
}

pub fn sweep_csv(result: &SweepResult, units: &UnitSystem, units_note: &str, hash: &str) -> String {
    let mut s = header(
        &[
            format!("sweep axis = {} ({units_note})", result.axis.as_str()),
            "columns: value, eta, delta_t/t0, t_d/t0, t_c/t0, T_ref(t_end), T_pert(t_end), status".into(),
        ],
        hash,
    );
    s.push_str("value,eta,delta_t_over_t0,t_d_over_t0,t_c_over_t0,T_ref_inf,T_pert_inf,status\n");
    for p in &result.points {
        match &p.outcome {
            Ok(sum) => {
                let (r, status) = match sum.verdict {
                    Verdict::Superarrival(r) => (Some(r), "ok".to_string()),
                    Verdict::NoSuperarrival => (None, "no_superarrival".to_string()),
                    Verdict::WindowOpen { t_d } => (None, format!("window_open t_d/t0={}", t_d / units.t0)),
                };
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    Num(p.value),
                    opt(r.map(|r| r.eta)),
                    opt(r.map(|r| r.delta_t / units.t0)),
                    opt(r.map(|r| r.t_d / units.t0)),
                    opt(r.map(|r| r.t_c / units.t0)),
                    Num(sum.t_inf_reference),
                    Num(sum.t_inf_perturbed),
                    status
                );
            }
            Err(e) => {
                let _ = writeln!(s, "{},,,,,,,error: {}", Num(p.value), e.replace([',', '\n'], ";"));
            }
        }
    }
    s
}

pub fn trajectories_csv(trajectories: &[Trajectory], units: &UnitSystem, hash: &str) -> String {
    let mut s = header(&["columns: trajectory id, t in t0, x in sigma1, classification at t_end".into()], hash);
    s.push_str("id,t_over_t0,x_over_sigma1,classification\n");
    for (id, tr) in trajectories.iter().enumerate() {
        let class = tr.classification.as_str();
        for (t, x) in tr.times.iter().zip(&tr.positions) {
            let _ = writeln!(s, "{id},{},{},{class}", Num(t / units.t0), Num(x / units.sigma1));
        }
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: String,
    pub config_sha256: String,
    pub wall_time_s: f64,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, wall_time_s: f64, files: Vec<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.to_text(),
            config_sha256: config_hash(config),
            wall_time_s,
            files,
        }
    }
}

/// Dumps `(x/σ1, Re ψ, Im ψ)` every `stride`-th observed frame, restricted
/// to nodes where `|ψ|` is above `1e-12` of its maximum.
pub struct SnapshotWriter {
    pub dir: PathBuf,
    pub stride: usize,
    pub hash: String,
    pub written: Vec<String>,
    seen: usize,
}

impl SnapshotWriter {
    pub fn new(dir: PathBuf, stride: usize, hash: String) -> Self {
        Self { dir, stride: stride.max(1), hash, written: Vec::new(), seen: 0 }
    }

    fn dump(&self, state: &WaveState, grid: &SpatialGrid, units: &UnitSystem) -> String {
        let peak = state.amplitudes.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mut s = header(
            &[
                format!("t_over_t0 = {}", state.time / units.t0),
                "columns: x in sigma1, Re psi, Im psi (natural units)".into(),
            ],
            &self.hash,
        );
        s.push_str("x_over_sigma1,re,im\n");
        for (i, c) in state.amplitudes.iter().enumerate() {
            if c.norm() > 1e-12 * peak {
                let _ = writeln!(s, "{},{},{}", Num(grid.x(i) / units.sigma1), Num(c.re), Num(c.im));
            }
        }
        s
    }
}

impl Observer for SnapshotWriter {
    fn observe(&mut self, frame: &Frame<'_>) -> Result<()> {
        let k = self.seen;
        self.seen += 1;
        if !k.is_multiple_of(self.stride) {
            return Ok(());
        }
        let name = format!("snapshots/psi_{:06}.csv", frame.step);
        write_file(&self.dir.join(&name), &self.dump(frame.state, frame.grid, frame.units))?;
        self.written.push(name);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_csv_round_trips_exactly() {
        let s = TransmissionSeries {
            times: vec![0.0, 0.1, 1.0 / 3.0, 2.5],
            values: vec![0.0, 1e-17, 0.123456789012345678, 0.79],
            x_d: 10.0,
            label: SeriesLabel::Static,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ts_static.csv");
        write_file(&p, &series_csv(&s, "abc")).unwrap();
        assert_eq!(read_series_csv(&p).unwrap(), s);
    }

    #[test]
    fn hash_tracks_config() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.output.dir = "elsewhere".into();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.barrier.epsilon = 0.4;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
