//! Initial wavepackets.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{partial_norm, SpatialGrid, WaveState};
use crate::units::{gaussian_energy, UnitSystem};

/// Largest amplitude tolerated at either wall.
pub const WALL_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Gaussian,
    NonGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketSpec {
    pub kind: PacketKind,
    /// Centroid.
    pub x0: f64,
    pub sigma0: f64,
    pub p0: f64,
    /// Sine-modulation coefficient; ignored for Gaussian packets.
    pub alpha: f64,
}

impl PacketSpec {
    /// Gaussian centred at `-6 σ1` with the unit system's width and momentum.
    pub fn gaussian(units: &UnitSystem) -> Self {
        Self {
            kind: PacketKind::Gaussian,
            x0: -6.0 * units.sigma1,
            sigma0: units.sigma0,
            p0: units.p0,
            alpha: 0.0,
        }
    }

    pub fn non_gaussian(units: &UnitSystem, alpha: f64) -> Self {
        Self {
            kind: PacketKind::NonGaussian,
            alpha,
            ..Self::gaussian(units)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(Error::invalid("packet.sigma0", "must be positive"));
        }
        if !self.x0.is_finite() || !self.p0.is_finite() {
            return Err(Error::invalid("packet", "x0 and p0 must be finite"));
        }
        if self.kind == PacketKind::NonGaussian && !self.alpha.is_finite() {
            return Err(Error::invalid("packet.alpha", "must be finite"));
        }
        Ok(())
    }

    /// Closed-form normalized amplitude at `x`.
    pub fn amplitude(&self, x: f64, hbar: f64) -> Complex64 {
        let s2 = self.sigma0 * self.sigma0;
        let y = x - self.x0;
        let envelope = (-y * y / (4.0 * s2)).exp();
        let phase = Complex64::from_polar(1.0, self.p0 * y / hbar);
        let base = (2.0 * PI * s2).powf(-0.25);
        match self.kind {
            PacketKind::Gaussian => phase * (base * envelope),
            PacketKind::NonGaussian => {
                let a = self.alpha;
                let q = PI * PI / 16.0;
                let norm = (1.0 + a * a * (-q).exp() * q.sinh()).sqrt();
                let modulation = 1.0 + a * (PI * y / (4.0 * self.sigma0)).sin();
                phase * (base * envelope * modulation / norm)
            }
        }
    }
}

/// Samples the packet on the grid and renormalizes by the trapezoid norm.
pub fn build_packet(spec: &PacketSpec, grid: &SpatialGrid, units: &UnitSystem) -> Result<WaveState> {
    spec.validate()?;
    let amps: Vec<Complex64> = grid.positions().map(|x| spec.amplitude(x, units.hbar)).collect();
    let wall = amps[0].norm().max(amps[grid.len() - 1].norm());
    if wall >= WALL_TOLERANCE {
        return Err(Error::Configuration(format!(
            "packet tail {wall:e} at the walls exceeds {WALL_TOLERANCE:e}; widen the grid"
        )));
    }
    let mut state = WaveState::new(amps, 0.0);
    state.normalize(grid)?;
    Ok(state)
}

/// Mean energy of the initial Gaussian packet.
pub fn initial_energy(spec: &PacketSpec, units: &UnitSystem) -> Result<f64> {
    match spec.kind {
        PacketKind::Gaussian => Ok(gaussian_energy(units.hbar, units.mass, spec.sigma0, spec.p0)),
        PacketKind::NonGaussian => Err(Error::Unsupported(
            "closed-form energy exists only for the Gaussian packet".into(),
        )),
    }
}

/// Probability initially located at `x >= barrier_left`.
pub fn barrier_overlap(state: &WaveState, grid: &SpatialGrid, barrier_left: f64) -> Result<f64> {
    partial_norm(state, grid, barrier_left)
}

/// Root-mean-square width of a freely evolving Gaussian at time `t`.
pub fn free_width(sigma0: f64, t: f64, units: &UnitSystem) -> f64 {
    let r = units.hbar * t / (2.0 * units.mass * sigma0 * sigma0);
    sigma0 * (1.0 + r * r).sqrt()
}
