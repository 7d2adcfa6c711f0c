//! Natural units of the scattering problem.
//!
//! Everything is measured with ħ = 1. The derived scales `t0 = m σ0 / p0`
//! and `E0 = p0²/2m + ħ²/(8 m σ0²)` are the axis units used for reporting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MASS: f64 = 0.5;
pub const DEFAULT_SIGMA1: f64 = 0.05;
pub const DEFAULT_P0: f64 = 50.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub hbar: f64,
    pub mass: f64,
    pub sigma1: f64,
    pub sigma0: f64,
    pub p0: f64,
    pub t0: f64,
    pub e0: f64,
}

/// Optional replacements for the default constants. `sigma0` wins over
/// `sigma1` when both are given.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitOverrides {
    pub mass: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma0: Option<f64>,
    pub p0: Option<f64>,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
    }
}

pub fn make_units(overrides: &UnitOverrides) -> Result<UnitSystem> {
    let hbar = 1.0;
    let mass = positive("mass", overrides.mass.unwrap_or(DEFAULT_MASS))?;
    let (sigma0, sigma1) = match (overrides.sigma0, overrides.sigma1) {
        (Some(s0), _) => {
            let s0 = positive("sigma0", s0)?;
            (s0, s0 * std::f64::consts::SQRT_2)
        }
        (None, s1) => {
            let s1 = positive("sigma1", s1.unwrap_or(DEFAULT_SIGMA1))?;
            (s1 / std::f64::consts::SQRT_2, s1)
        }
    };
    let p0 = positive("p0", overrides.p0.unwrap_or(DEFAULT_P0))?;
    Ok(UnitSystem {
        hbar,
        mass,
        sigma1,
        sigma0,
        p0,
        t0: mass * sigma0 / p0,
        e0: gaussian_energy(hbar, mass, sigma0, p0),
    })
}

/// Mean energy of a free Gaussian packet with drift momentum `p0`.
pub fn gaussian_energy(hbar: f64, mass: f64, sigma0: f64, p0: f64) -> f64 {
    p0 * p0 / (2.0 * mass) + hbar * hbar / (8.0 * mass * sigma0 * sigma0)
}

impl Default for UnitSystem {
    fn default() -> Self {
        make_units(&UnitOverrides::default()).expect("default units are valid")
    }
}

impl UnitSystem {
    /// Group velocity p0/m.
    pub fn velocity(&self) -> f64 {
        self.p0 / self.mass
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_constants() {
        let u = UnitSystem::default();
        assert_eq!(u.hbar, 1.0);
        assert!((u.sigma0 - 0.05 / 2f64.sqrt()).abs() < 1e-15);
        // p0² + 1/(4 σ0²) with m = 1/2
        let expected = (50.0 * std::f64::consts::PI).powi(2) + 200.0;
        assert!((u.e0 - expected).abs() < 1e-9);
        assert!((u.e0 - 24874.01).abs() < 0.01, "E0 = {}", u.e0);
        assert!((u.t0 - 1.1254e-4).abs() < 1e-8, "t0 = {}", u.t0);
    }

    #[test]
    fn unit_overrides() {
        let u = make_units(&UnitOverrides {
            mass: Some(1.0),
            p0: Some(1.0),
            sigma0: Some(1.0),
            ..Default::default()
        })
        .unwrap();
        assert!((u.e0 - 0.625).abs() < 1e-15);
        assert!((u.t0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive() {
        for o in [
            UnitOverrides { mass: Some(0.0), ..Default::default() },
            UnitOverrides { sigma0: Some(-1.0), ..Default::default() },
            UnitOverrides { p0: Some(f64::NAN), ..Default::default() },
        ] {
            assert!(matches!(make_units(&o), Err(Error::InvalidParameter { .. })));
        }
    }
}
