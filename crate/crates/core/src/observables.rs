//! Physical read-outs of a state: transmission past the detector, sector
//! expectation values, and the pilot-wave fields `R`, `∇S` and `Q`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::grid::{partial_norm, SpatialGrid, WaveState};
use crate::packet::free_width;
use crate::potential::BarrierSchedule;
use crate::propagator::{Frame, Observer};
use crate::units::UnitSystem;

/// Below this transmission, sector expectation values are not reported.
pub const T_FLOOR: f64 = 1e-6;
/// Relative amplitude floor for the pilot fields.
pub const R_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesLabel {
    Static,
    Perturbed,
    Free,
    FreeAnalytic,
}

impl SeriesLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeriesLabel::Static => "static",
            SeriesLabel::Perturbed => "perturbed",
            SeriesLabel::Free => "free",
            SeriesLabel::FreeAnalytic => "free_analytic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "static" => SeriesLabel::Static,
            "perturbed" => SeriesLabel::Perturbed,
            "free" => SeriesLabel::Free,
            "free_analytic" => SeriesLabel::FreeAnalytic,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub x_d: f64,
    pub label: SeriesLabel,
}

impl TransmissionSeries {
    pub fn new(x_d: f64, label: SeriesLabel) -> Self {
        Self { times: Vec::new(), values: Vec::new(), x_d, label }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_value(&self) -> Option<f64> {
        self.values.last().copied()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::Shape { expected: self.times.len(), found: self.values.len() });
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("series times must be strictly increasing".into()));
        }
        // Quadrature round-off may push a probability a hair outside [0, 1].
        if self.values.iter().any(|v| !(-1e-9..=1.0 + 1e-9).contains(v)) {
            return Err(Error::Domain("transmission outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Linear interpolation, clamped to the ends.
    pub fn value_at(&self, t: f64) -> f64 {
        let ts = &self.times;
        if t <= ts[0] {
            return self.values[0];
        }
        let k = ts.partition_point(|&s| s < t);
        if k >= ts.len() {
            return *self.values.last().unwrap();
        }
        let (t0, t1) = (ts[k - 1], ts[k]);
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Analytic free-particle transmission sampled on `times`.
    pub fn free_analytic(times: &[f64], x0: f64, sigma0: f64, p0: f64, x_d: f64, units: &UnitSystem) -> Self {
        Self {
            values: times
                .iter()
                .map(|&t| free_transmission(t, x0, sigma0, p0, x_d, units))
                .collect(),
            times: times.to_vec(),
            x_d,
            label: SeriesLabel::FreeAnalytic,
        }
    }
}

/// `T_f(t) = ½ [1 + erf((p0 t/m + x0 - x_d) / (√2 σ_t))]` for a free Gaussian,
/// with `σ_t = σ0 √(1 + (ħt / 2mσ0²)²)`.
pub fn free_transmission(t: f64, x0: f64, sigma0: f64, p0: f64, x_d: f64, units: &UnitSystem) -> f64 {
    let sigma_t = free_width(sigma0, t, units);
    let centre = x0 + p0 * t / units.mass;
    0.5 * (1.0 + erf((centre - x_d) / (std::f64::consts::SQRT_2 * sigma_t)))
}

pub fn transmission(state: &WaveState, grid: &SpatialGrid, x_d: f64) -> Result<f64> {
    partial_norm(state, grid, x_d)
}

/// Trapezoid weights on `[from_x, x_max]`, matching `partial_norm`.
fn sector_quadrature(
    grid: &SpatialGrid,
    from_x: f64,
    mut f: impl FnMut(usize) -> Complex64,
) -> Complex64 {
    let (j, frac) = grid.locate(from_x);
    let dx = grid.dx();
    let n = grid.len();
    let mut acc = (f(j) + f(j + 1)) * (0.5 * dx * (1.0 - frac));
    for i in j + 1..n - 1 {
        acc += (f(i) + f(i + 1)) * (0.5 * dx);
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorExpectations {
    pub transmission: f64,
    pub energy: f64,
    pub momentum: f64,
    pub position: f64,
    /// Largest `|Im|` of the truncated energy and momentum integrals,
    /// relative to `T`.
    pub imaginary_residue: f64,
}

/// `⟨H⟩_T`, `⟨p⟩_T` and `⟨x⟩_T` of the part of the packet beyond `x_d`.
pub fn transmitted_expectations(
    state: &WaveState,
    grid: &SpatialGrid,
    units: &UnitSystem,
    schedule: &BarrierSchedule,
    x_d: f64,
) -> Result<SectorExpectations> {
    let t = transmission(state, grid, x_d)?;
    if t <= T_FLOOR {
        return Err(Error::UndefinedSector { transmission: t });
    }
    let psi = &state.amplitudes;
    let n = psi.len();
    let dx = grid.dx();
    let hbar = units.hbar;
    let kin = -hbar * hbar / (2.0 * units.mass * dx * dx);
    let potential = schedule.sample_on_grid(grid, state.time);
    let zero = Complex64::new(0.0, 0.0);
    let at = |i: isize| if i < 0 || i as usize >= n { zero } else { psi[i as usize] };

    let momentum = sector_quadrature(grid, x_d, |i| {
        let i = i as isize;
        let d = (at(i + 1) - at(i - 1)) / (2.0 * dx);
        psi[i as usize].conj() * Complex64::new(0.0, -hbar) * d
    }) / t;
    let energy = sector_quadrature(grid, x_d, |i| {
        let ii = i as isize;
        let lap = at(ii + 1) - 2.0 * at(ii) + at(ii - 1);
        psi[i].conj() * (lap * kin + psi[i] * potential[i])
    }) / t;
    let position = sector_quadrature(grid, x_d, |i| Complex64::new(psi[i].norm_sqr() * grid.x(i), 0.0)) / t;

    Ok(SectorExpectations {
        transmission: t,
        energy: energy.re,
        momentum: momentum.re,
        position: position.re,
        imaginary_residue: energy.im.abs().max(momentum.im.abs()),
    })
}

/// Plain expectation values over the whole grid (energy, momentum, position).
pub fn full_expectations(
    state: &WaveState,
    grid: &SpatialGrid,
    units: &UnitSystem,
    schedule: &BarrierSchedule,
) -> Result<SectorExpectations> {
    transmitted_expectations(state, grid, units, schedule, grid.x_min())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotFields {
    pub amplitude: Vec<f64>,
    /// `∇S` (momentum units); NaN where masked.
    pub phase_gradient: Vec<f64>,
    /// Quantum potential; NaN where masked.
    pub quantum_potential: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PilotFields {
    pub fn velocity(&self, i: usize, units: &UnitSystem) -> f64 {
        self.phase_gradient[i] / units.mass
    }
}

/// Local phase gradient from `arg(ψ_{i+1} ψ*_{i-1}) / 2dx`; exact for a
/// linear phase and free of unwrapping.
#[inline]
pub(crate) fn local_phase_gradient(prev: Complex64, next: Complex64, dx: f64, hbar: f64) -> f64 {
    hbar * (next * prev.conj()).arg() / (2.0 * dx)
}

#[inline]
pub(crate) fn local_quantum_potential(r_prev: f64, r: f64, r_next: f64, dx: f64, units: &UnitSystem) -> f64 {
    -units.hbar * units.hbar / (2.0 * units.mass) * (r_next - 2.0 * r + r_prev) / (dx * dx * r)
}

pub fn pilot_fields(state: &WaveState, grid: &SpatialGrid, units: &UnitSystem) -> Result<PilotFields> {
    state.check_shape(grid)?;
    let psi = &state.amplitudes;
    let n = psi.len();
    let dx = grid.dx();
    let amplitude: Vec<f64> = psi.iter().map(|z| z.norm()).collect();
    let floor = R_FLOOR * amplitude.iter().copied().fold(0.0, f64::max);
    let mut phase_gradient = vec![f64::NAN; n];
    let mut quantum_potential = vec![f64::NAN; n];
    let mut mask = vec![false; n];
    for i in 1..n - 1 {
        if amplitude[i] <= floor || amplitude[i] == 0.0 {
            continue;
        }
        mask[i] = true;
        phase_gradient[i] = local_phase_gradient(psi[i - 1], psi[i + 1], dx, units.hbar);
        quantum_potential[i] =
            local_quantum_potential(amplitude[i - 1], amplitude[i], amplitude[i + 1], dx, units);
    }
    Ok(PilotFields { amplitude, phase_gradient, quantum_potential, mask })
}

/// Probability current `R² ∇S / m` at `x`, linearly interpolated.
pub fn probability_current(state: &WaveState, grid: &SpatialGrid, units: &UnitSystem, x: f64) -> Result<f64> {
    state.check_shape(grid)?;
    let psi = &state.amplitudes;
    let (j, f) = grid.locate(x);
    let node = |i: usize| -> f64 {
        if i == 0 || i + 1 >= psi.len() {
            return 0.0;
        }
        let g = local_phase_gradient(psi[i - 1], psi[i + 1], grid.dx(), units.hbar);
        psi[i].norm_sqr() * g / units.mass
    };
    Ok((1.0 - f) * node(j) + f * node(j + 1))
}

/// Records `T(t)` at a detector plane.
pub struct TransmissionRecorder {
    pub series: TransmissionSeries,
}

impl TransmissionRecorder {
    pub fn new(x_d: f64, label: SeriesLabel) -> Self {
        Self { series: TransmissionSeries::new(x_d, label) }
    }
}

impl Observer for TransmissionRecorder {
    fn observe(&mut self, frame: &Frame<'_>) -> Result<()> {
        let t = transmission(frame.state, frame.grid, self.series.x_d)?;
        self.series.times.push(frame.time());
        self.series.values.push(t);
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectationSeries {
    pub times: Vec<f64>,
    pub energy_t: Vec<Option<f64>>,
    pub momentum_t: Vec<Option<f64>>,
    pub position_t: Vec<Option<f64>>,
    pub max_imaginary_residue: f64,
}

impl ExpectationSeries {
    pub fn last_defined(&self) -> Option<(f64, f64, f64, f64)> {
        let k = self.times.len().checked_sub(1)?;
        Some((self.times[k], self.energy_t[k]?, self.momentum_t[k]?, self.position_t[k]?))
    }
}

/// Records transmitted-sector expectation values, absent below `T_FLOOR`.
pub struct ExpectationRecorder {
    pub x_d: f64,
    pub series: ExpectationSeries,
}

impl ExpectationRecorder {
    pub fn new(x_d: f64) -> Self {
        Self { x_d, series: ExpectationSeries::default() }
    }
}

impl Observer for ExpectationRecorder {
    fn observe(&mut self, frame: &Frame<'_>) -> Result<()> {
        let s = &mut self.series;
        s.times.push(frame.time());
        match transmitted_expectations(frame.state, frame.grid, frame.units, frame.schedule, self.x_d) {
            Ok(e) => {
                s.energy_t.push(Some(e.energy));
                s.momentum_t.push(Some(e.momentum));
                s.position_t.push(Some(e.position));
                s.max_imaginary_residue = s.max_imaginary_residue.max(e.imaginary_residue);
            }
            Err(Error::UndefinedSector { .. }) => {
                s.energy_t.push(None);
                s.momentum_t.push(None);
                s.position_t.push(None);
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{build_packet, PacketSpec};

    fn setup(n: usize) -> (UnitSystem, SpatialGrid, PacketSpec, WaveState) {
        let u = UnitSystem::default();
        let g = SpatialGrid::symmetric(60.0 * u.sigma0, n).unwrap();
        let spec = PacketSpec::gaussian(&u);
        let psi = build_packet(&spec, &g, &u).unwrap();
        (u, g, spec, psi)
    }

    #[test]
    fn initial_transmission_is_negligible() {
        let (u, g, _, psi) = setup(8193);
        assert!(transmission(&psi, &g, 10.0 * u.sigma1).unwrap() < 1e-10);
    }

    #[test]
    fn free_transmission_limits() {
        let u = UnitSystem::default();
        let (x0, xd) = (-6.0 * u.sigma1, 10.0 * u.sigma1);
        let t_half = (xd - x0) * u.mass / u.p0;
        assert!((free_transmission(t_half, x0, u.sigma0, u.p0, xd, &u) - 0.5).abs() < 1e-15);
        assert!(free_transmission(100.0 * u.t0, x0, u.sigma0, u.p0, xd, &u) > 1.0 - 1e-12);
        assert!(free_transmission(0.0, x0, u.sigma0, u.p0, xd, &u) < 1e-12);
    }

    #[test]
    fn phase_gradient_of_gaussian_is_p0() {
        let (u, g, spec, psi) = setup(8193);
        let f = pilot_fields(&psi, &g, &u).unwrap();
        let mut checked = 0;
        for i in 0..g.len() {
            if f.mask[i] {
                assert!((f.phase_gradient[i] - u.p0).abs() < 1e-6 * u.p0);
                checked += 1;
            }
        }
        assert!(checked > 100);
        // Q at the centre and its quadratic fall-off.
        let q0 = u.hbar * u.hbar / (4.0 * u.mass * u.sigma0 * u.sigma0);
        let (j, _) = g.locate(spec.x0);
        let xc = g.x(j);
        let q_model = |x: f64| {
            q0 - u.hbar * u.hbar * (x - spec.x0).powi(2) / (8.0 * u.mass * u.sigma0.powi(4))
        };
        assert!((f.quantum_potential[j] - q_model(xc)).abs() < 1e-3 * q0);
        let curvature = -u.hbar * u.hbar / (8.0 * u.mass * u.sigma0.powi(4));
        for i in 0..g.len() {
            let y = g.x(i) - spec.x0;
            if y.abs() < 0.5 * u.sigma0 || y.abs() > 2.0 * u.sigma0 {
                continue;
            }
            let c = (f.quantum_potential[i] - q_model(spec.x0)) / (y * y);
            assert!((c / curvature - 1.0).abs() < 5e-3, "c = {c}, expected {curvature}");
        }
    }

    #[test]
    fn real_state_has_no_phase_gradient() {
        let (u, g, _, mut psi) = setup(2049);
        psi.amplitudes.iter_mut().for_each(|z| *z = Complex64::new(z.norm(), 0.0));
        let f = pilot_fields(&psi, &g, &u).unwrap();
        assert!(f.mask.iter().zip(&f.phase_gradient).all(|(&m, &v)| !m || v == 0.0));
        let total: f64 = f.amplitude.iter().map(|r| r * r).sum::<f64>() * g.dx();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_sector_recovers_plain_expectations() {
        let (u, g, spec, psi) = setup(16385);
        let e = full_expectations(&psi, &g, &u, &BarrierSchedule::Free).unwrap();
        assert!((e.momentum / u.p0 - 1.0).abs() < 1e-3, "{}", e.momentum / u.p0);
        assert!((e.energy / u.e0 - 1.0).abs() < 1e-3, "{}", e.energy / u.e0);
        assert!((e.position - spec.x0).abs() < 1e-8);
        let err = transmitted_expectations(&psi, &g, &u, &BarrierSchedule::Free, 20.0 * u.sigma1);
        assert!(matches!(err, Err(Error::UndefinedSector { .. })));
    }
}
