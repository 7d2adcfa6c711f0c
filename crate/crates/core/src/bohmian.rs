//! Bohmian trajectories guided by stored or streamed Crank-Nicolson frames.
//!
//! The guidance velocity `∇S/m` is evaluated at grid nodes from neighbouring
//! amplitudes, interpolated linearly in `x` inside a frame and linearly in
//! `t` between consecutive frames. Paths are advanced with classical RK4 whose
//! step is the frame interval.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, WaveState};
use crate::observables::{local_phase_gradient, local_quantum_potential, R_FLOOR};
use crate::packet::{build_packet, PacketSpec};
use crate::potential::BarrierSchedule;
use crate::propagator::{Frame, Observer};
use crate::units::UnitSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Transmitted,
    Reflected,
    Undecided,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Transmitted => "transmitted",
            Classification::Reflected => "reflected",
            Classification::Undecided => "undecided",
        }
    }

    /// Final position against the detector, with an undecided band of
    /// half-width `band`.
    pub fn from_final(x: f64, x_d: f64, band: f64) -> Self {
        if (x - x_d).abs() <= band {
            Classification::Undecided
        } else if x > x_d {
            Classification::Transmitted
        } else {
            Classification::Reflected
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_position: f64,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub classification: Classification,
}

impl Trajectory {
    fn start(x0: f64, t0: f64) -> Self {
        Self {
            initial_position: x0,
            times: vec![t0],
            positions: vec![x0],
            classification: Classification::Undecided,
        }
    }

    pub fn final_position(&self) -> f64 {
        *self.positions.last().expect("trajectory has a start")
    }

    /// First time the path reaches `x`, by linear interpolation.
    pub fn arrival_time(&self, x: f64) -> Option<f64> {
        self.positions.windows(2).zip(self.times.windows(2)).find_map(|(p, t)| {
            (p[0] < x && p[1] >= x).then(|| t[0] + (x - p[0]) / (p[1] - p[0]) * (t[1] - t[0]))
        })
    }
}

/// A cropped copy of `ψ` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceFrame {
    pub time: f64,
    /// Grid index of `psi[0]`.
    pub offset: usize,
    pub psi: Vec<Complex64>,
    /// Amplitude floor below which the guidance field is masked.
    pub floor: f64,
}

impl GuidanceFrame {
    pub fn capture(state: &WaveState, window: (usize, usize)) -> Self {
        let (lo, hi) = window;
        let psi = state.amplitudes[lo..=hi].to_vec();
        let r_max = state.amplitudes.iter().map(|z| z.norm()).fold(0.0, f64::max);
        Self { time: state.time, offset: lo, psi, floor: R_FLOOR * r_max }
    }

    /// Neighbour-safe local index range: nodes with both neighbours present.
    fn local(&self, i: usize) -> Option<usize> {
        let k = i.checked_sub(self.offset)?;
        (k >= 1 && k + 1 < self.psi.len()).then_some(k)
    }

    /// `∇S` at grid node `i`, or `None` where masked or outside the window.
    pub fn phase_gradient_at_node(&self, i: usize, dx: f64, hbar: f64) -> Option<f64> {
        let k = self.local(i)?;
        if self.psi[k].norm() <= self.floor {
            return None;
        }
        Some(local_phase_gradient(self.psi[k - 1], self.psi[k + 1], dx, hbar))
    }

    pub fn quantum_potential_at_node(&self, i: usize, dx: f64, units: &UnitSystem) -> Option<f64> {
        let k = self.local(i)?;
        let r = self.psi[k].norm();
        if r <= self.floor {
            return None;
        }
        Some(local_quantum_potential(self.psi[k - 1].norm(), r, self.psi[k + 1].norm(), dx, units))
    }

    /// Guidance velocity at `x`, linear in `x` between the bracketing nodes.
    pub fn velocity(&self, grid: &SpatialGrid, units: &UnitSystem, x: f64) -> Option<f64> {
        let (j, f) = grid.locate(x);
        let a = self.phase_gradient_at_node(j, grid.dx(), units.hbar)?;
        let b = self.phase_gradient_at_node(j + 1, grid.dx(), units.hbar)?;
        Some(((1.0 - f) * a + f * b) / units.mass)
    }

    /// `∂Q/∂x` at `x` from central differences, interpolated linearly.
    pub fn quantum_force_gradient(&self, grid: &SpatialGrid, units: &UnitSystem, x: f64) -> Option<f64> {
        let dx = grid.dx();
        let (j, f) = grid.locate(x);
        let grad = |i: usize| -> Option<f64> {
            let qp = self.quantum_potential_at_node(i + 1, dx, units)?;
            let qm = self.quantum_potential_at_node(i.checked_sub(1)?, dx, units)?;
            Some((qp - qm) / (2.0 * dx))
        };
        Some((1.0 - f) * grad(j)? + f * grad(j + 1)?)
    }

    fn window_bounds(&self, grid: &SpatialGrid) -> (f64, f64) {
        let lo = grid.x(self.offset + 1);
        let hi = grid.x(self.offset + self.psi.len() - 2);
        (lo, hi)
    }
}

/// Stored frames of one run, suitable for integrating any number of paths.
#[derive(Debug, Clone)]
pub struct SnapshotRecord {
    pub grid: SpatialGrid,
    pub window: (usize, usize),
    pub frames: Vec<GuidanceFrame>,
}

impl SnapshotRecord {
    /// Records the whole grid.
    pub fn new(grid: &SpatialGrid) -> Self {
        Self::with_window(grid, grid.x_min(), grid.x_max())
    }

    /// Records only nodes in `[x_lo, x_hi]` (widened by one node each side).
    pub fn with_window(grid: &SpatialGrid, x_lo: f64, x_hi: f64) -> Self {
        Self { grid: *grid, window: node_window(grid, x_lo, x_hi), frames: Vec::new() }
    }

    pub fn t_end(&self) -> Option<f64> {
        self.frames.last().map(|f| f.time)
    }
}

pub(crate) fn node_window(grid: &SpatialGrid, x_lo: f64, x_hi: f64) -> (usize, usize) {
    let (lo, _) = grid.locate(x_lo.max(grid.x_min()));
    let (hi, f) = grid.locate(x_hi.min(grid.x_max()));
    let hi = if f > 0.0 { hi + 1 } else { hi };
    (lo.saturating_sub(1), (hi + 1).min(grid.len() - 1))
}

impl Observer for SnapshotRecord {
    fn observe(&mut self, frame: &Frame<'_>) -> Result<()> {
        self.frames.push(GuidanceFrame::capture(frame.state, self.window));
        Ok(())
    }
}

/// Largest `h·|∂v/∂x|` allowed per RK4 substep.
const MAX_STIFFNESS: f64 = 0.2;
const MAX_SUBSTEPS: usize = 512;

impl GuidanceFrame {
    /// `|∂v/∂x|` of the interpolated field in the cell holding `x`.
    fn velocity_slope(&self, grid: &SpatialGrid, units: &UnitSystem, x: f64) -> Option<f64> {
        let (j, _) = grid.locate(x);
        let a = self.phase_gradient_at_node(j, grid.dx(), units.hbar)?;
        let b = self.phase_gradient_at_node(j + 1, grid.dx(), units.hbar)?;
        Some((b - a).abs() / (grid.dx() * units.mass))
    }
}

/// Advances `x` from frame `a` to frame `b` with RK4; the field is linear
/// in time between the frames. The interval is split into equal substeps
/// where the field is steep (near density minima) so that each substep
/// keeps `h·|∂v/∂x|` small. `None` if a stage is masked.
pub fn rk4_advance(
    x: f64,
    a: &GuidanceFrame,
    b: &GuidanceFrame,
    grid: &SpatialGrid,
    units: &UnitSystem,
) -> Option<f64> {
    let h = b.time - a.time;
    let (lo, hi) = a.window_bounds(grid);
    let clamp = |x: f64| x.clamp(lo, hi);
    let v = |theta: f64, x: f64| -> Option<f64> {
        let x = clamp(x);
        Some((1.0 - theta) * a.velocity(grid, units, x)? + theta * b.velocity(grid, units, x)?)
    };
    let slope = a.velocity_slope(grid, units, x)?.max(b.velocity_slope(grid, units, x)?);
    let n = ((h * slope / MAX_STIFFNESS).ceil() as usize).clamp(1, MAX_SUBSTEPS);
    let hs = h / n as f64;
    let mut x = x;
    for s in 0..n {
        let t0 = s as f64 / n as f64;
        let tm = (s as f64 + 0.5) / n as f64;
        let t1 = (s + 1) as f64 / n as f64;
        let k1 = v(t0, x)?;
        let k2 = v(tm, x + 0.5 * hs * k1)?;
        let k3 = v(tm, x + 0.5 * hs * k2)?;
        let k4 = v(t1, x + hs * k3)?;
        x = clamp(x + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    }
    Some(x)
}

/// Integrates the guidance equation from `x_start` through the stored frames,
/// classifying the end point against `x_d` with an undecided band of `band`.
pub fn integrate_trajectory(
    x_start: f64,
    record: &SnapshotRecord,
    units: &UnitSystem,
    x_d: f64,
    band: f64,
) -> Result<Trajectory> {
    let first = record
        .frames
        .first()
        .ok_or_else(|| Error::Domain("snapshot record is empty".into()))?;
    let mut traj = Trajectory::start(x_start, first.time);
    if first.velocity(&record.grid, units, x_start).is_none() {
        return Err(Error::IntegrationDegenerate {
            x0: x_start,
            time: first.time,
            partial: Box::new(traj),
        });
    }
    let mut x = x_start;
    for pair in record.frames.windows(2) {
        match rk4_advance(x, &pair[0], &pair[1], &record.grid, units) {
            Some(next) => {
                x = next;
                traj.times.push(pair[1].time);
                traj.positions.push(x);
            }
            None => {
                return Err(Error::IntegrationDegenerate {
                    x0: x_start,
                    time: pair[0].time,
                    partial: Box::new(traj),
                })
            }
        }
    }
    traj.classification = Classification::from_final(x, x_d, band);
    Ok(traj)
}

/// Advances a set of paths alongside a propagation, keeping only the
/// previous frame in memory. Produces the same paths as
/// [`integrate_trajectory`] over a record of the same frames.
pub struct TrajectoryEnsemble {
    grid: SpatialGrid,
    units: UnitSystem,
    window: (usize, usize),
    previous: Option<GuidanceFrame>,
    pub trajectories: Vec<Trajectory>,
    /// Time at which each failed path hit a masked region.
    pub failures: Vec<Option<f64>>,
    keep_paths: bool,
}

impl TrajectoryEnsemble {
    pub fn new(grid: &SpatialGrid, units: &UnitSystem, starts: &[f64], window: (f64, f64), keep_paths: bool) -> Self {
        Self {
            grid: *grid,
            units: *units,
            window: node_window(grid, window.0, window.1),
            previous: None,
            trajectories: starts.iter().map(|&x| Trajectory::start(x, 0.0)).collect(),
            failures: vec![None; starts.len()],
            keep_paths,
        }
    }

    pub fn classify(&mut self, x_d: f64, band: f64) {
        for t in &mut self.trajectories {
            t.classification = Classification::from_final(t.final_position(), x_d, band);
        }
    }

    /// Fraction of paths (failed ones included at their last position) beyond `x`.
    pub fn fraction_beyond(&self, x: f64) -> f64 {
        let n = self.trajectories.len().max(1);
        self.trajectories.iter().filter(|t| t.final_position() > x).count() as f64 / n as f64
    }
}

impl Observer for TrajectoryEnsemble {
    fn observe(&mut self, frame: &Frame<'_>) -> Result<()> {
        let current = GuidanceFrame::capture(frame.state, self.window);
        match &self.previous {
            None => {
                for (t, fail) in self.trajectories.iter_mut().zip(&mut self.failures) {
                    t.times[0] = current.time;
                    if current.velocity(&self.grid, &self.units, t.initial_position).is_none() {
                        *fail = Some(current.time);
                    }
                }
            }
            Some(prev) => {
                for (t, fail) in self.trajectories.iter_mut().zip(&mut self.failures) {
                    if fail.is_some() {
                        continue;
                    }
                    match rk4_advance(t.final_position(), prev, &current, &self.grid, &self.units) {
                        Some(x) => {
                            if self.keep_paths {
                                t.times.push(current.time);
                                t.positions.push(x);
                            } else {
                                t.times = vec![current.time];
                                t.positions = vec![x];
                            }
                        }
                        None => *fail = Some(prev.time),
                    }
                }
            }
        }
        self.previous = Some(current);
        Ok(())
    }
}

/// Position `x_c` whose right-hand tail of the initial Gaussian density holds
/// `t_infinity`: solves `½ erfc((x_c - x0) / (√2 σ0)) = T∞` by bisection.
pub fn critical_initial_position(t_infinity: f64, x0: f64, sigma0: f64) -> Result<f64> {
    if !(t_infinity > 0.0 && t_infinity < 1.0) {
        return Err(Error::Domain(format!("T∞ = {t_infinity} must lie in (0, 1)")));
    }
    if !(sigma0 > 0.0) {
        return Err(Error::Domain("sigma0 must be positive".into()));
    }
    let tail = |x: f64| 0.5 * erfc((x - x0) / (std::f64::consts::SQRT_2 * sigma0)) - t_infinity;
    // tail is decreasing in x
    let (mut lo, mut hi) = (x0 - 40.0 * sigma0, x0 + 40.0 * sigma0);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let r = tail(mid);
        if r.abs() < 1e-12 && (hi - lo) < 1e-12 * sigma0 {
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * (x0.abs() + sigma0) {
            break;
        }
    }
    Ok(mid)
}

/// Deterministic quantile sampling of `|ψ|²`: the points `F⁻¹((i + ½)/n)`.
pub fn quantile_positions(n: usize, state: &WaveState, grid: &SpatialGrid) -> Result<Vec<f64>> {
    state.check_shape(grid)?;
    if n == 0 {
        return Err(Error::invalid("n", "need at least one position"));
    }
    let rho: Vec<f64> = state.density().collect();
    let dx = grid.dx();
    let mut cum = Vec::with_capacity(rho.len());
    cum.push(0.0);
    for w in rho.windows(2) {
        cum.push(cum.last().unwrap() + 0.5 * dx * (w[0] + w[1]));
    }
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::Numerical("state has zero norm".into()));
    }
    let cdf = |x: f64| {
        let (j, f) = grid.locate(x);
        (cum[j] + f * 0.5 * dx * (rho[j] + rho[j + 1])) / total
    };
    Ok((0..n)
        .map(|i| {
            let target = (i as f64 + 0.5) / n as f64;
            let (mut lo, mut hi) = (grid.x_min(), grid.x_max());
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 * (grid.x_max() - grid.x_min()) {
                    break;
                }
            }
            0.5 * (lo + hi)
        })
        .collect())
}

pub fn ensemble_positions(n: usize, packet: &PacketSpec, grid: &SpatialGrid, units: &UnitSystem) -> Result<Vec<f64>> {
    let psi = build_packet(packet, grid, units)?;
    quantile_positions(n, &psi, grid)
}

/// `m ẍ + ∂ₓ(V + Q)` along a path, at every interior stored frame.
/// Entries are `None` where the fields are masked.
pub fn quantum_force_residual(
    trajectory: &Trajectory,
    record: &SnapshotRecord,
    schedule: &BarrierSchedule,
    units: &UnitSystem,
) -> Result<Vec<(f64, Option<f64>)>> {
    let grid = &record.grid;
    let n = trajectory.positions.len();
    if n > record.frames.len() {
        return Err(Error::Shape { expected: record.frames.len(), found: n });
    }
    let dx = grid.dx();
    let mut out = Vec::with_capacity(n.saturating_sub(2));
    for k in 1..n.saturating_sub(1) {
        let (t0, t1, t2) = (trajectory.times[k - 1], trajectory.times[k], trajectory.times[k + 1]);
        let (x0, x1, x2) = (trajectory.positions[k - 1], trajectory.positions[k], trajectory.positions[k + 1]);
        let (h1, h2) = (t1 - t0, t2 - t1);
        let accel = 2.0 * ((x2 - x1) / h2 - (x1 - x0) / h1) / (h1 + h2);
        let frame = &record.frames[k];
        let dq = frame.quantum_force_gradient(grid, units, x1);
        let (j, f) = grid.locate(x1);
        let v = |i: usize| schedule.sample_node(grid, t1, i);
        let dv_node = |i: usize| (v(i + 1) - v(i.saturating_sub(1))) / (2.0 * dx);
        let dv = (1.0 - f) * dv_node(j) + f * dv_node(j + 1);
        out.push((t1, dq.map(|dq| units.mass * accel + dv + dq)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::{propagate, PropagatorConfig};

    #[test]
    fn critical_position_examples() {
        let (x0, s) = (-0.3, 0.035);
        assert!((critical_initial_position(0.5, x0, s).unwrap() - x0).abs() < 1e-12);
        let xs = critical_initial_position(0.79, x0, s).unwrap();
        assert!(((xs - x0) / s + 0.82).abs() < 0.02, "{}", (xs - x0) / s);
        let xp = critical_initial_position(0.11, x0, s).unwrap();
        assert!(((xp - x0) / s - 1.2).abs() < 0.05, "{}", (xp - x0) / s);
        for t in [1e-9, 0.11, 0.79, 0.999] {
            let x = critical_initial_position(t, x0, s).unwrap();
            let r = 0.5 * erfc((x - x0) / (std::f64::consts::SQRT_2 * s)) - t;
            assert!(r.abs() < 1e-12);
        }
        for bad in [0.0, 1.0, -0.2, f64::NAN] {
            assert!(matches!(critical_initial_position(bad, x0, s), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn quantiles_of_gaussian() {
        let u = UnitSystem::default();
        let g = SpatialGrid::symmetric(40.0 * u.sigma0, 8001).unwrap();
        let spec = PacketSpec::gaussian(&u);
        let one = ensemble_positions(1, &spec, &g, &u).unwrap();
        assert!((one[0] - spec.x0).abs() < 1e-6 * u.sigma0);
        let three = ensemble_positions(3, &spec, &g, &u).unwrap();
        assert!((three[1] - spec.x0).abs() < 1e-6 * u.sigma0);
        // F⁻¹(5/6) - x0 = σ0 · Φ⁻¹(5/6) = 0.967421566 σ0
        assert!(((three[2] - spec.x0) / u.sigma0 - 0.967_421_566).abs() < 1e-4);
        assert!(((spec.x0 - three[0]) / u.sigma0 - 0.967_421_566).abs() < 1e-4);
    }

    #[test]
    fn classification_band() {
        assert_eq!(Classification::from_final(1.0, 0.5, 0.1), Classification::Transmitted);
        assert_eq!(Classification::from_final(0.0, 0.5, 0.1), Classification::Reflected);
        assert_eq!(Classification::from_final(0.55, 0.5, 0.1), Classification::Undecided);
    }

    #[test]
    fn free_centre_path_is_classical() {
        let u = UnitSystem::default();
        let g = SpatialGrid::symmetric(60.0 * u.sigma0, 8193).unwrap();
        let spec = PacketSpec::gaussian(&u);
        let psi = build_packet(&spec, &g, &u).unwrap();
        let cfg = PropagatorConfig { dt: u.t0 / 128.0, t_end: 10.0 * u.t0, store_every: 4 };
        let mut rec = SnapshotRecord::new(&g);
        propagate(&psi, &BarrierSchedule::Free, &g, &u, &cfg, &mut [&mut rec]).unwrap();
        let traj = integrate_trajectory(spec.x0, &rec, &u, 0.0, u.sigma1).unwrap();
        let t = traj.times.last().unwrap();
        let expected = spec.x0 + u.p0 * t / u.mass;
        let travelled = expected - spec.x0;
        assert!((traj.final_position() - expected).abs() < 2e-3 * travelled);
        assert_eq!(traj.classification, Classification::Transmitted);

        let res = quantum_force_residual(&traj, &rec, &BarrierSchedule::Free, &u).unwrap();
        let scale = u.p0 * u.p0 / (u.mass * u.sigma0);
        assert!(res.iter().all(|(_, r)| r.unwrap().abs() < 1e-2 * scale));
    }
}
