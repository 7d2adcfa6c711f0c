//! Uniform spatial grid and the wavefunction container.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    x_min: f64,
    x_max: f64,
    n_points: usize,
    dx: f64,
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(Error::invalid(
                "grid",
                format!("need finite x_min < x_max, got [{x_min}, {x_max}]"),
            ));
        }
        if n_points < 3 {
            return Err(Error::invalid("grid.n_points", "need at least 3 points"));
        }
        Ok(Self {
            x_min,
            x_max,
            n_points,
            dx: (x_max - x_min) / (n_points - 1) as f64,
        })
    }

    /// Symmetric box `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64, n_points: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n_points)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        // Pin the last node so that x(n-1) == x_max exactly.
        if i + 1 == self.n_points {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx
        }
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|i| self.x(i))
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Cell index `j` and fraction `f` with `x = x_j + f dx`, `0 <= f <= 1`,
    /// `j <= n - 2`.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = ((x - self.x_min) / self.dx).max(0.0);
        let j = (s.floor() as usize).min(self.n_points - 2);
        (j, (s - j as f64).clamp(0.0, 1.0))
    }

    fn check_inside(&self, x: f64, what: &str) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "{what} = {x} outside grid [{}, {}]",
                self.x_min, self.x_max
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub amplitudes: Vec<Complex64>,
    pub time: f64,
}

impl WaveState {
    pub fn new(amplitudes: Vec<Complex64>, time: f64) -> Self {
        Self { amplitudes, time }
    }

    pub fn zeros(grid: &SpatialGrid) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); grid.len()], 0.0)
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn check_shape(&self, grid: &SpatialGrid) -> Result<()> {
        if self.amplitudes.len() == grid.len() {
            Ok(())
        } else {
            Err(Error::Shape {
                expected: grid.len(),
                found: self.amplitudes.len(),
            })
        }
    }

    pub fn density(&self) -> impl Iterator<Item = f64> + '_ {
        self.amplitudes.iter().map(|z| z.norm_sqr())
    }

    /// Divides by the square root of the trapezoid norm.
    pub fn normalize(&mut self, grid: &SpatialGrid) -> Result<f64> {
        let n = norm(self, grid)?;
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Numerical(format!("cannot normalize state with norm {n}")));
        }
        let s = 1.0 / n.sqrt();
        self.amplitudes.iter_mut().for_each(|z| *z *= s);
        Ok(n)
    }
}

/// Trapezoid-rule `∫|ψ|² dx` over the whole grid.
pub fn norm(state: &WaveState, grid: &SpatialGrid) -> Result<f64> {
    state.check_shape(grid)?;
    Ok(trapezoid_density(&state.amplitudes, grid.dx()))
}

pub(crate) fn trapezoid_density(amps: &[Complex64], dx: f64) -> f64 {
    let n = amps.len();
    if n < 2 {
        return 0.0;
    }
    let interior: f64 = amps[1..n - 1].iter().map(|z| z.norm_sqr()).sum();
    dx * (interior + 0.5 * (amps[0].norm_sqr() + amps[n - 1].norm_sqr()))
}

/// Trapezoid quadrature of `|ψ|²` over `[from_x, x_max]`. When `from_x`
/// falls inside a cell, that cell contributes its trapezoid area scaled by
/// the covered fraction.
pub fn partial_norm(state: &WaveState, grid: &SpatialGrid, from_x: f64) -> Result<f64> {
    state.check_shape(grid)?;
    grid.check_inside(from_x, "from_x")?;
    Ok(partial_density(&state.amplitudes, grid, from_x))
}

pub(crate) fn partial_density(amps: &[Complex64], grid: &SpatialGrid, from_x: f64) -> f64 {
    let (j, f) = grid.locate(from_x);
    let dx = grid.dx();
    let n = amps.len();
    let first = (1.0 - f) * 0.5 * dx * (amps[j].norm_sqr() + amps[j + 1].norm_sqr());
    first + trapezoid_density(&amps[j + 1..n], dx)
}

/// Trapezoid quadrature of `|ψ|²` over `[a, b]`, with fractional end cells.
pub fn norm_between(state: &WaveState, grid: &SpatialGrid, a: f64, b: f64) -> Result<f64> {
    state.check_shape(grid)?;
    grid.check_inside(a, "a")?;
    grid.check_inside(b, "b")?;
    if a > b {
        return Err(Error::Domain(format!("interval [{a}, {b}] is reversed")));
    }
    let amps = &state.amplitudes;
    Ok(partial_density(amps, grid, a) - partial_density(amps, grid, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian(grid: &SpatialGrid, center: f64, sigma: f64) -> WaveState {
        let amps = grid
            .positions()
            .map(|x| {
                let a = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25)
                    * (-(x - center).powi(2) / (4.0 * sigma * sigma)).exp();
                Complex64::new(a, 0.0)
            })
            .collect();
        WaveState::new(amps, 0.0)
    }

    #[test]
    fn grid_validation() {
        assert!(SpatialGrid::new(1.0, 0.0, 10).is_err());
        assert!(SpatialGrid::new(0.0, 1.0, 2).is_err());
        let g = SpatialGrid::new(0.0, 1.0, 11).unwrap();
        assert_relative_eq!(g.dx(), 0.1);
        assert_eq!(g.x(10), 1.0);
    }

    #[test]
    fn norm_examples() {
        let g = SpatialGrid::symmetric(10.0, 2001).unwrap();
        let psi = gaussian(&g, 0.3, 0.7);
        assert!((norm(&psi, &g).unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(norm(&WaveState::zeros(&g), &g).unwrap(), 0.0);
        let mut twice = psi.clone();
        twice.amplitudes.iter_mut().for_each(|z| *z *= 2.0);
        assert_relative_eq!(
            norm(&twice, &g).unwrap(),
            4.0 * norm(&psi, &g).unwrap(),
            max_relative = 1e-14
        );
        let short = WaveState::new(vec![Complex64::new(0.0, 0.0); 5], 0.0);
        assert!(matches!(norm(&short, &g), Err(Error::Shape { .. })));
    }

    #[test]
    fn partial_norm_examples() {
        let g = SpatialGrid::symmetric(10.0, 2001).unwrap();
        let psi = gaussian(&g, 0.3217, 0.7);
        assert_relative_eq!(
            partial_norm(&psi, &g, g.x_min()).unwrap(),
            norm(&psi, &g).unwrap(),
            max_relative = 1e-14
        );
        assert!(partial_norm(&psi, &g, g.x_max()).unwrap().abs() < 1e-30);
        assert!((partial_norm(&psi, &g, 0.3217).unwrap() - 0.5).abs() < 1e-6);
        assert!(matches!(partial_norm(&psi, &g, 11.0), Err(Error::Domain(_))));
    }

    #[test]
    fn quadrature_linearity() {
        let g = SpatialGrid::symmetric(10.0, 1001).unwrap();
        let psi = gaussian(&g, -0.4, 1.1);
        for c in [-3.3337, 0.0, 0.01, 2.5] {
            let lhs = partial_norm(&psi, &g, g.x_min()).unwrap();
            let rhs = partial_norm(&psi, &g, c).unwrap()
                + norm_between(&psi, &g, g.x_min(), c).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn refinement_is_second_order() {
        // Truncated packet so that the endpoint correction dominates.
        let exact = statrs::function::erf::erf(2f64.sqrt());
        let errs: Vec<f64> = [101usize, 201, 401]
            .iter()
            .map(|&n| {
                let g = SpatialGrid::symmetric(1.0, n).unwrap();
                (norm(&gaussian(&g, 0.0, 0.5), &g).unwrap() - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.1, "{errs:?}");
        }
    }
}
