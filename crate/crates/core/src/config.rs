//! Run configuration.
//!
//! The file format is flat TOML with dotted keys, e.g.
//!
//! ```text
//! barrier.kind = "linear_width"
//! barrier.w_f = 0.48        # σ1
//! analysis.x_d = 10         # σ1
//! ```
//!
//! Lengths are given in multiples of σ1, times in t0 and energies in E0
//! (the grid half-width is in σ0). Constants under `units.*` are natural
//! units. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use crate::packet::{PacketKind, PacketSpec};
use crate::potential::{BarrierSchedule, Timing};
use crate::propagator::PropagatorConfig;
use crate::units::{make_units, UnitOverrides, UnitSystem};

pub const DEFAULT_N_POINTS: usize = 131_072;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    Free,
    StaticRect,
    LinearWidth,
    HeightRamp,
    DoubleHeightRamp,
}

/// Baseline against which a perturbed run is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Static barrier for width growth, free motion for height ramps.
    Auto,
    Static,
    Free,
    FreeAnalytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epsilon,
    FinalWidth,
    DetectorPosition,
    NonlinearB,
    Separation,
    Alpha,
    BarrierHeight,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::FinalWidth => "w_f",
            SweepAxis::DetectorPosition => "x_d",
            SweepAxis::NonlinearB => "b",
            SweepAxis::Separation => "separation",
            SweepAxis::Alpha => "alpha",
            SweepAxis::BarrierHeight => "v0",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "epsilon" => SweepAxis::Epsilon,
            "w_f" | "final_width" => SweepAxis::FinalWidth,
            "x_d" | "detector" => SweepAxis::DetectorPosition,
            "b" => SweepAxis::NonlinearB,
            "separation" | "d" => SweepAxis::Separation,
            "alpha" => SweepAxis::Alpha,
            "v0" | "height" => SweepAxis::BarrierHeight,
            _ => return None,
        })
    }

    /// Values swept when none are configured.
    pub fn default_values(&self) -> Vec<f64> {
        match self {
            SweepAxis::Epsilon => vec![0.27, 0.4, 0.6, 0.8],
            SweepAxis::FinalWidth => vec![0.16, 0.32, 0.48],
            SweepAxis::DetectorPosition => vec![10.0, 15.0, 20.0],
            SweepAxis::NonlinearB => vec![0.3, 0.6, 0.9],
            SweepAxis::Separation => vec![0.16, 0.32, 0.64],
            SweepAxis::Alpha => vec![-0.5, 0.0, 0.5],
            SweepAxis::BarrierHeight => vec![1.0, 1.3, 1.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    pub half_width_sigma0: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketSection {
    pub kind: PacketKind,
    pub x0: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSection {
    pub kind: BarrierKind,
    pub v0: f64,
    pub left_edge: f64,
    pub width: f64,
    pub w_i: f64,
    pub w_f: f64,
    pub separation: f64,
    pub a: f64,
    pub b: f64,
    pub t_p: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagatorSection {
    pub dt: f64,
    pub t_end: f64,
    pub store_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSection {
    pub x_d: f64,
    pub delta_dev: f64,
    pub reference: ReferenceKind,
    pub sweep_axis: Option<SweepAxis>,
    pub sweep_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BohmianSection {
    pub ensemble: usize,
    pub starts: Vec<f64>,
    pub window_lo: f64,
    pub window_hi: f64,
    /// Frame interval, in propagation steps, for guidance integration.
    pub store_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: String,
    pub snapshots: bool,
    pub snapshot_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub units: UnitOverrides,
    pub grid: GridSection,
    pub packet: PacketSection,
    pub barrier: BarrierSection,
    pub propagator: PropagatorSection,
    pub analysis: AnalysisSection,
    pub bohmian: BohmianSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    /// Linear width growth `0.08σ1 → 0.48σ1` at `V0 = 1.5 E0` during
    /// `[7.14, 7.41] t0`, detector at `10σ1`.
    fn default() -> Self {
        Self {
            units: UnitOverrides::default(),
            grid: GridSection { half_width_sigma0: 500.0, n_points: DEFAULT_N_POINTS },
            packet: PacketSection { kind: PacketKind::Gaussian, x0: -6.0, alpha: 0.0 },
            barrier: BarrierSection {
                kind: BarrierKind::LinearWidth,
                v0: 1.5,
                left_edge: 0.0,
                width: 0.32,
                w_i: 0.08,
                w_f: 0.48,
                separation: 0.32,
                a: 0.1,
                b: 0.9,
                t_p: 7.14,
                epsilon: 0.27,
            },
            propagator: PropagatorSection { dt: 40.0 / 8192.0, t_end: 40.0, store_every: 8 },
            analysis: AnalysisSection {
                x_d: 10.0,
                delta_dev: 1e-3,
                reference: ReferenceKind::Auto,
                sweep_axis: None,
                sweep_values: Vec::new(),
            },
            bohmian: BohmianSection {
                ensemble: 512,
                starts: vec![-7.0, -6.58, -6.2, -5.8, -5.4, -5.15, -4.9, -4.5],
                window_lo: -60.0,
                window_hi: 80.0,
                store_every: 1,
            },
            output: OutputSection { dir: "out".into(), snapshots: false, snapshot_stride: 256 },
        }
    }
}

/// Conversion between config fields and TOML values.
trait ConfigValue: Sized {
    fn from_toml(v: &Value, key: &str) -> Result<Self>;
    fn to_toml(&self) -> Option<Value>;
}

fn type_error(key: &str, expected: &str) -> Error {
    Error::validation(key, format!("expected {expected}"))
}

impl ConfigValue for f64 {
    fn from_toml(v: &Value, key: &str) -> Result<Self> {
        match v {
            Value::Float(f) => Ok(*f),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(type_error(key, "a number")),
        }
    }
    fn to_toml(&self) -> Option<Value> {
        Some(Value::Float(*self))
    }
}

impl ConfigValue for usize {
    fn from_toml(v: &Value, key: &str) -> Result<Self> {
        match v {
            Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            _ => Err(type_error(key, "a non-negative integer")),
        }
    }
    fn to_toml(&self) -> Option<Value> {
        Some(Value::Integer(*self as i64))
    }
}

impl ConfigValue for bool {
    fn from_toml(v: &Value, key: &str) -> Result<Self> {
        v.as_bool().ok_or_else(|| type_error(key, "true or false"))
    }
    fn to_toml(&self) -> Option<Value> {
        Some(Value::Boolean(*self))
    }
}

impl ConfigValue for String {
    fn from_toml(v: &Value, key: &str) -> Result<Self> {
        v.as_str().map(str::to_string).ok_or_else(|| type_error(key, "a string"))
    }
    fn to_toml(&self) -> Option<Value> {
        Some(Value::String(self.clone()))
    }
}

impl ConfigValue for Option<f64> {
    fn from_toml(v: &Value, key: &str) -> Result<Self> {
        f64::from_toml(v, key).map(Some)
    }
    fn to_toml(&self) -> Option<Value> {
        self.map(Value::Float)
    }
}

impl ConfigValue for Vec<f64> {
    fn from_toml(v: &Value, key: &str) -> Result<Self> {
        v.as_array()
            .ok_or_else(|| type_error(key, "an array of numbers"))?
            .iter()
            .map(|x| f64::from_toml(x, key))
            .collect()
    }
    fn to_toml(&self) -> Option<Value> {
        Some(Value::Array(self.iter().map(|&x| Value::Float(x)).collect()))
    }
}

macro_rules! string_enum {
    ($ty:ty { $($name:literal => $variant:expr),* $(,)? }) => {
        impl ConfigValue for $ty {
            fn from_toml(v: &Value, key: &str) -> Result<Self> {
                match v.as_str() {
                    $(Some($name) => Ok($variant),)*
                    _ => Err(type_error(key, concat!("one of" $(, " ", $name)*))),
                }
            }
            fn to_toml(&self) -> Option<Value> {
                $(if *self == $variant { return Some(Value::String($name.into())); })*
                None
            }
        }
    };
}

string_enum!(PacketKind { "gaussian" => PacketKind::Gaussian, "non_gaussian" => PacketKind::NonGaussian });
string_enum!(BarrierKind {
    "free" => BarrierKind::Free,
    "static_rect" => BarrierKind::StaticRect,
    "linear_width" => BarrierKind::LinearWidth,
    "height_ramp" => BarrierKind::HeightRamp,
    "double_height_ramp" => BarrierKind::DoubleHeightRamp,
});
string_enum!(ReferenceKind {
    "auto" => ReferenceKind::Auto,
    "static" => ReferenceKind::Static,
    "free" => ReferenceKind::Free,
    "free_analytic" => ReferenceKind::FreeAnalytic,
});

impl ConfigValue for Option<SweepAxis> {
    fn from_toml(v: &Value, key: &str) -> Result<Self> {
        let s = v.as_str().ok_or_else(|| type_error(key, "a sweep axis name"))?;
        SweepAxis::parse(s)
            .map(Some)
            .ok_or_else(|| type_error(key, "epsilon, w_f, x_d, b, separation, alpha or v0"))
    }
    fn to_toml(&self) -> Option<Value> {
        self.map(|a| Value::String(a.as_str().into()))
    }
}

macro_rules! config_keys {
    ($($key:literal => $($path:ident).+;)*) => {
        impl RunConfig {
            /// All recognised keys, in serialization order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            fn set_key(&mut self, key: &str, v: &Value) -> Result<()> {
                match key {
                    $($key => { self.$($path).+ = ConfigValue::from_toml(v, $key)?; Ok(()) })*
                    _ => Err(Error::validation(key, "unknown configuration key")),
                }
            }

            fn entries(&self) -> Vec<(&'static str, Option<Value>)> {
                vec![$(($key, self.$($path).+.to_toml())),*]
            }
        }
    };
}

config_keys! {
    "units.mass" => units.mass;
    "units.sigma1" => units.sigma1;
    "units.sigma0" => units.sigma0;
    "units.p0" => units.p0;
    "grid.half_width_sigma0" => grid.half_width_sigma0;
    "grid.n_points" => grid.n_points;
    "packet.kind" => packet.kind;
    "packet.x0" => packet.x0;
    "packet.alpha" => packet.alpha;
    "barrier.kind" => barrier.kind;
    "barrier.v0" => barrier.v0;
    "barrier.left_edge" => barrier.left_edge;
    "barrier.width" => barrier.width;
    "barrier.w_i" => barrier.w_i;
    "barrier.w_f" => barrier.w_f;
    "barrier.separation" => barrier.separation;
    "barrier.a" => barrier.a;
    "barrier.b" => barrier.b;
    "barrier.t_p" => barrier.t_p;
    "barrier.epsilon" => barrier.epsilon;
    "propagator.dt" => propagator.dt;
    "propagator.t_end" => propagator.t_end;
    "propagator.store_every" => propagator.store_every;
    "analysis.x_d" => analysis.x_d;
    "analysis.delta_dev" => analysis.delta_dev;
    "analysis.reference" => analysis.reference;
    "analysis.sweep_axis" => analysis.sweep_axis;
    "analysis.sweep_values" => analysis.sweep_values;
    "bohmian.ensemble" => bohmian.ensemble;
    "bohmian.starts" => bohmian.starts;
    "bohmian.window_lo" => bohmian.window_lo;
    "bohmian.window_hi" => bohmian.window_hi;
    "bohmian.store_every" => bohmian.store_every;
    "output.dir" => output.dir;
    "output.snapshots" => output.snapshots;
    "output.snapshot_stride" => output.snapshot_stride;
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, column)
}

impl RunConfig {
    /// Applies `key = value` pairs from `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            Error::Syntax { line, column, message: e.message().to_string() }
        })?;
        let mut pairs = Vec::new();
        flatten("", &table, &mut pairs);
        for (k, v) in &pairs {
            self.set_key(k, v)?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override (value in TOML syntax; bare
    /// words are taken as strings).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::validation(assignment, "override must look like key=value"))?;
        let (k, v) = (k.trim(), v.trim());
        let line = format!("{k} = {v}");
        match self.apply_text(&line) {
            Err(Error::Syntax { .. }) => self.apply_text(&format!("{k} = \"{v}\"")),
            other => other,
        }
    }

    /// Flat `key = value` text; `parse_config` of it yields `self` again.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            if let Some(v) = v {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    /// Converts to natural units and validates every section.
    pub fn resolve(&self) -> Result<Scenario> {
        let units = make_units(&self.units)?;
        let s1 = units.sigma1;
        let t0 = units.t0;
        let g = &self.grid;
        if !(g.half_width_sigma0.is_finite() && g.half_width_sigma0 > 0.0) {
            return Err(Error::validation("grid.half_width_sigma0", "must be > 0"));
        }
        let grid = SpatialGrid::symmetric(g.half_width_sigma0 * units.sigma0, g.n_points)
            .map_err(|e| Error::validation("grid", e.to_string()))?;

        let packet = PacketSpec {
            kind: self.packet.kind,
            x0: self.packet.x0 * s1,
            sigma0: units.sigma0,
            p0: units.p0,
            alpha: self.packet.alpha,
        };
        packet.validate().map_err(|e| Error::validation("packet", e.to_string()))?;

        let b = &self.barrier;
        let v0 = b.v0 * units.e0;
        let timing = Timing { t_p: b.t_p * t0, epsilon: b.epsilon * t0 };
        let schedule = match b.kind {
            BarrierKind::Free => BarrierSchedule::Free,
            BarrierKind::StaticRect => BarrierSchedule::StaticRect {
                v0,
                left_edge: b.left_edge * s1,
                width: b.width * s1,
            },
            BarrierKind::LinearWidth => BarrierSchedule::LinearWidth {
                v0,
                w_i: b.w_i * s1,
                w_f: b.w_f * s1,
                timing,
            },
            BarrierKind::HeightRamp => BarrierSchedule::HeightRamp {
                v0,
                width: b.width * s1,
                a: b.a,
                b: b.b,
                timing,
            },
            BarrierKind::DoubleHeightRamp => BarrierSchedule::DoubleHeightRamp {
                v0,
                width: b.width * s1,
                separation: b.separation * s1,
                a: b.a,
                b: b.b,
                timing,
            },
        };
        schedule.validate()?;

        let p = &self.propagator;
        let propagator = PropagatorConfig { dt: p.dt * t0, t_end: p.t_end * t0, store_every: p.store_every };
        propagator.validate(&schedule, &units)?;

        let a = &self.analysis;
        let x_d = a.x_d * s1;
        if !grid.contains(x_d) {
            return Err(Error::validation("analysis.x_d", "detector must lie inside the grid"));
        }
        if !(a.delta_dev.is_finite() && a.delta_dev > 0.0) {
            return Err(Error::validation("analysis.delta_dev", "must be > 0"));
        }
        if a.sweep_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("analysis.sweep_values", "values must be finite"));
        }
        let bo = &self.bohmian;
        if bo.window_lo >= bo.window_hi {
            return Err(Error::validation("bohmian.window_lo", "window_lo < window_hi"));
        }
        if bo.store_every == 0 {
            return Err(Error::validation("bohmian.store_every", "must be >= 1"));
        }
        if self.output.snapshot_stride == 0 {
            return Err(Error::validation("output.snapshot_stride", "must be >= 1"));
        }
        Ok(Scenario {
            units,
            grid,
            packet,
            schedule,
            propagator,
            x_d,
            delta_dev: a.delta_dev,
            reference: a.reference,
        })
    }
}

/// Parses a configuration file body on top of the defaults and validates it.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.apply_text(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// A configuration resolved to natural units.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub units: UnitSystem,
    pub grid: SpatialGrid,
    pub packet: PacketSpec,
    pub schedule: BarrierSchedule,
    pub propagator: PropagatorConfig,
    pub x_d: f64,
    pub delta_dev: f64,
    pub reference: ReferenceKind,
}
