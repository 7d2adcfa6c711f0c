//! Crank-Nicolson time stepping.
//!
//! One step solves `(I + iτH) ψ' = (I - iτH) ψ` with `τ = dt / 2ħ` and
//! `H = -ħ²/2m D₂ + V(·, t + dt/2)` on the interior nodes; the wall nodes
//! stay at zero. The smallest interior potential value is split off and
//! applied as an exact phase, so a spatially constant `V` leaves the density
//! identical to free motion.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, WaveState};
use crate::potential::BarrierSchedule;
use crate::tridiag::ConstOffDiagonalFactor;
use crate::units::UnitSystem;

/// Largest allowed `dt · max|V| / ħ`.
/// Relative amplitude below which the wavefunction is treated as zero.
pub const SUPPORT_CUTOFF: f64 = 1e-100;

pub const MAX_PHASE_PER_STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagatorConfig {
    pub dt: f64,
    pub t_end: f64,
    pub store_every: usize,
}

impl PropagatorConfig {
    /// `[0, 40 t0]` in 8192 steps, observed every 8th step.
    pub fn standard(units: &UnitSystem) -> Self {
        Self {
            dt: 40.0 * units.t0 / 8192.0,
            t_end: 40.0 * units.t0,
            store_every: 8,
        }
    }

    pub fn validate(&self, schedule: &BarrierSchedule, units: &UnitSystem) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation("propagator.dt", "dt > 0"));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::validation("propagator.t_end", "t_end > 0"));
        }
        if self.store_every == 0 {
            return Err(Error::validation("propagator.store_every", "store_every >= 1"));
        }
        let phase = self.dt * schedule.max_abs_potential() / units.hbar;
        if phase >= MAX_PHASE_PER_STEP {
            return Err(Error::validation(
                "propagator.dt",
                format!("dt·max|V|/ħ = {phase:.3} must stay below {MAX_PHASE_PER_STEP}"),
            ));
        }
        Ok(())
    }
}

/// Step boundaries `0 = t_0 < t_1 < … < t_K = t_end`. Each breakpoint
/// inside the horizon is hit exactly; between breakpoints the steps are
/// uniform and within half a step count of the nominal `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    /// Nominal step of each interval, constant within a segment so that
    /// the propagator can reuse its factorization.
    sizes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t_end: f64, dt: f64, breakpoints: &[f64]) -> Result<Self> {
        if !(t_end > 0.0 && dt > 0.0) {
            return Err(Error::validation("propagator", "t_end > 0 and dt > 0"));
        }
        let mut marks: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|&b| b > 0.0 && b < t_end)
            .collect();
        marks.sort_by(f64::total_cmp);
        marks.dedup_by(|a, b| (*a - *b).abs() < 1e-3 * dt);
        marks.push(t_end);

        let mut times = vec![0.0];
        let mut sizes = Vec::new();
        let mut start = 0.0;
        for end in marks {
            let len = end - start;
            let n = ((len / dt).round() as usize).max(1);
            for k in 1..n {
                times.push(start + len * k as f64 / n as f64);
            }
            times.push(end);
            sizes.extend(std::iter::repeat_n(len / n as f64, n));
            start = end;
        }
        Ok(Self { times, sizes })
    }

    pub fn uniform(t_end: f64, steps: usize) -> Result<Self> {
        Self::new(t_end, t_end / steps as f64, &[])
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn step_sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }
}

/// Reusable Crank-Nicolson integrator for one grid and schedule.
pub struct CrankNicolson<'a> {
    grid: &'a SpatialGrid,
    units: &'a UnitSystem,
    schedule: &'a BarrierSchedule,
    potential: Vec<f64>,
    /// Rectangles the current `potential` was sampled from.
    sampled: Option<Vec<(f64, f64, f64)>>,
    offset: f64,
    cache: Option<(f64, ConstOffDiagonalFactor)>,
    work: Vec<Complex64>,
}

impl<'a> CrankNicolson<'a> {
    pub fn new(grid: &'a SpatialGrid, units: &'a UnitSystem, schedule: &'a BarrierSchedule) -> Self {
        Self {
            grid,
            units,
            schedule,
            potential: vec![0.0; grid.len()],
            sampled: None,
            offset: 0.0,
            cache: None,
            work: vec![Complex64::new(0.0, 0.0); grid.len().saturating_sub(2)],
        }
    }

    fn kinetic_coupling(&self) -> f64 {
        // H_{i,i±1} = -ħ²/(2m dx²)
        let dx = self.grid.dx();
        -self.units.hbar * self.units.hbar / (2.0 * self.units.mass * dx * dx)
    }

    /// Samples `V` at `t`; returns whether it changed.
    fn refresh_potential(&mut self, t: f64) -> bool {
        let segments = self.schedule.segments(t);
        if self.sampled.as_ref() == Some(&segments) {
            return false;
        }
        self.schedule.sample_into(self.grid, t, &mut self.potential);
        let n = self.grid.len();
        self.offset = self.potential[1..n - 1].iter().copied().fold(f64::INFINITY, f64::min);
        self.sampled = Some(segments);
        true
    }

    fn refresh_factor(&mut self, dt: f64, potential_changed: bool) -> Result<()> {
        if let Some((cached_dt, _)) = &self.cache {
            if *cached_dt == dt && !potential_changed {
                return Ok(());
            }
        }
        let tau = dt / (2.0 * self.units.hbar);
        let a = self.kinetic_coupling();
        let n = self.grid.len();
        let c = self.offset;
        let diag: Vec<Complex64> = self.potential[1..n - 1]
            .iter()
            .map(|&v| Complex64::new(1.0, tau * (v - c - 2.0 * a)))
            .collect();
        let factor = ConstOffDiagonalFactor::new(Complex64::new(0.0, tau * a), &diag)?;
        self.cache = Some((dt, factor));
        Ok(())
    }

    /// Advances `state` by `dt` in place.
    pub fn step(&mut self, state: &mut WaveState, dt: f64) -> Result<()> {
        let n = self.grid.len();
        let t_mid = state.time + 0.5 * dt;
        let changed = self.refresh_potential(t_mid);
        self.refresh_factor(dt, changed)?;

        let tau = dt / (2.0 * self.units.hbar);
        let a = self.kinetic_coupling();
        let psi = &mut state.amplitudes;
        psi[0] = Complex64::new(0.0, 0.0);
        psi[n - 1] = Complex64::new(0.0, 0.0);
        let interior = &psi[1..n - 1];
        let (peak, finite) = amplitude_scan(interior);
        if !finite {
            return Err(Error::Divergence { time: state.time });
        }
        if peak == 0.0 {
            state.time += dt;
            return Ok(());
        }
        // Amplitudes this far below the peak are dropped; left alone they
        // decay into subnormal floats, which are very slow to compute with.
        let cutoff = SUPPORT_CUTOFF * peak;
        let big = |z: &Complex64| z.re.abs() >= cutoff || z.im.abs() >= cutoff;
        let first = interior.iter().position(big).unwrap_or(0);
        let last = interior.iter().rposition(big).unwrap_or(0);
        let get = |k: usize| if k > first && k <= last + 1 { psi[k] } else { Complex64::new(0.0, 0.0) };
        let lo = first.saturating_sub(1);
        let hi = (last + 1).min(n - 3);
        let off = Complex64::new(0.0, -tau * a);
        for i in lo..=hi {
            let k = i + 1;
            let d = Complex64::new(1.0, -tau * (self.potential[k] - self.offset - 2.0 * a));
            self.work[i] = d * get(k) + off * (get(k - 1) + get(k + 1));
        }
        let (_, factor) = self.cache.as_ref().expect("factor prepared");
        let (s, e) = factor.solve_supported(&mut self.work, (lo, hi), cutoff);
        if self.offset != 0.0 {
            let phase = Complex64::from_polar(1.0, -self.offset * dt / self.units.hbar);
            self.work[s..=e].iter_mut().for_each(|z| *z *= phase);
        }
        psi[1..s + 1].fill(Complex64::new(0.0, 0.0));
        psi[e + 2..n - 1].fill(Complex64::new(0.0, 0.0));
        psi[s + 1..e + 2].copy_from_slice(&self.work[s..=e]);
        state.time += dt;
        Ok(())
    }
}

/// Largest component magnitude, and whether every component is finite.
/// Written with independent lanes so that it vectorizes.
fn amplitude_scan(z: &[Complex64]) -> (f64, bool) {
    let mut peak = [0.0f64; 4];
    let mut sum = [0.0f64; 4];
    let mut lanes = z.chunks_exact(2);
    for c in &mut lanes {
        let v = [c[0].re.abs(), c[0].im.abs(), c[1].re.abs(), c[1].im.abs()];
        for k in 0..4 {
            if v[k] > peak[k] {
                peak[k] = v[k];
            }
            sum[k] += v[k];
        }
    }
    for c in lanes.remainder() {
        let v = [c.re.abs(), c.im.abs()];
        for k in 0..2 {
            if v[k] > peak[k] {
                peak[k] = v[k];
            }
            sum[k] += v[k];
        }
    }
    let p = peak.iter().copied().fold(0.0, f64::max);
    (p, sum.iter().sum::<f64>().is_finite())
}

/// One Crank-Nicolson step from `state`.
pub fn step(
    state: &WaveState,
    schedule: &BarrierSchedule,
    grid: &SpatialGrid,
    units: &UnitSystem,
    dt: f64,
) -> Result<WaveState> {
    state.check_shape(grid)?;
    let mut next = state.clone();
    CrankNicolson::new(grid, units, schedule).step(&mut next, dt)?;
    check_finite(&next)?;
    Ok(next)
}

fn check_finite(state: &WaveState) -> Result<()> {
    let s: f64 = state.amplitudes.iter().map(|z| z.re.abs() + z.im.abs()).sum();
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { time: state.time })
    }
}

/// What an observer sees at a stored step.
pub struct Frame<'a> {
    pub step: usize,
    pub state: &'a WaveState,
    pub grid: &'a SpatialGrid,
    pub units: &'a UnitSystem,
    pub schedule: &'a BarrierSchedule,
}

impl Frame<'_> {
    pub fn time(&self) -> f64 {
        self.state.time
    }
}

pub trait Observer {
    fn observe(&mut self, frame: &Frame<'_>) -> Result<()>;
}

impl<F> Observer for F
where
    F: FnMut(&Frame<'_>) -> Result<()>,
{
    fn observe(&mut self, frame: &Frame<'_>) -> Result<()> {
        self(frame)
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub final_state: WaveState,
    pub steps: usize,
    pub observed_times: Vec<f64>,
}

/// Integrates over `time_grid`, calling every observer at step 0, every
/// `store_every`-th step and the last step.
pub fn propagate_on(
    initial: &WaveState,
    schedule: &BarrierSchedule,
    grid: &SpatialGrid,
    units: &UnitSystem,
    time_grid: &TimeGrid,
    store_every: usize,
    observers: &mut [&mut dyn Observer],
) -> Result<RunRecord> {
    initial.check_shape(grid)?;
    if store_every == 0 {
        return Err(Error::validation("propagator.store_every", "store_every >= 1"));
    }
    let mut state = initial.clone();
    state.time = time_grid.times()[0];
    let mut cn = CrankNicolson::new(grid, units, schedule);
    let mut observed = Vec::new();
    let mut notify = |state: &WaveState, step: usize, observed: &mut Vec<f64>| -> Result<()> {
        check_finite(state)?;
        let frame = Frame { step, state, grid, units, schedule };
        for o in observers.iter_mut() {
            o.observe(&frame)?;
        }
        observed.push(state.time);
        Ok(())
    };
    notify(&state, 0, &mut observed)?;
    let steps = time_grid.steps();
    for (k, (w, &dt)) in time_grid.times().windows(2).zip(time_grid.step_sizes()).enumerate() {
        cn.step(&mut state, dt)?;
        // Land exactly on the grid time to avoid drift in the accumulated sum.
        state.time = w[1];
        let idx = k + 1;
        if idx % store_every == 0 || idx == steps {
            notify(&state, idx, &mut observed)?;
        }
    }
    Ok(RunRecord {
        final_state: state,
        steps,
        observed_times: observed,
    })
}

/// Integrates from `t = 0` to `config.t_end`, hitting the schedule's
/// breakpoints exactly.
pub fn propagate(
    initial: &WaveState,
    schedule: &BarrierSchedule,
    grid: &SpatialGrid,
    units: &UnitSystem,
    config: &PropagatorConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<RunRecord> {
    config.validate(schedule, units)?;
    schedule.validate()?;
    let tg = TimeGrid::new(config.t_end, config.dt, &schedule.breakpoints())?;
    propagate_on(initial, schedule, grid, units, &tg, config.store_every, observers)
}
