//! Time-dependent rectangular barriers.
//!
//! Step functions use `θ(0) = 1`, so a barrier contains its edges. On the
//! grid, the node whose cell `[x_i - dx/2, x_i + dx/2]` is cut by an edge
//! carries the covered fraction of the cell, which keeps `Σ V_i dx` equal to
//! the barrier's true strength while an edge moves between nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;

const SUM_TOLERANCE: f64 = 1e-12;

/// Start and duration of a perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub t_p: f64,
    pub epsilon: f64,
}

impl Timing {
    /// Ramp progress in `[0, 1]`: 0 up to `t_p`, 1 after `t_p + ε`.
    pub fn progress(&self, t: f64) -> f64 {
        if t <= self.t_p {
            0.0
        } else if t <= self.t_p + self.epsilon {
            (t - self.t_p) / self.epsilon
        } else {
            1.0
        }
    }

    pub fn end(&self) -> f64 {
        self.t_p + self.epsilon
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::validation("timing.epsilon", "epsilon > 0"));
        }
        if !(self.t_p.is_finite() && self.t_p >= 0.0) {
            return Err(Error::validation("timing.t_p", "t_p >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BarrierSchedule {
    /// No potential at all.
    Free,
    StaticRect { v0: f64, left_edge: f64, width: f64 },
    /// Left edge fixed at 0, right edge moves from `w_i` to `w_f`.
    LinearWidth { v0: f64, w_i: f64, w_f: f64, timing: Timing },
    /// Barrier on `[-w/2, w/2]` whose height follows `a s + b s²`.
    HeightRamp { v0: f64, width: f64, a: f64, b: f64, timing: Timing },
    /// Two barriers of equal width on either side of a gap of `separation`
    /// centred at 0, ramped together.
    DoubleHeightRamp {
        v0: f64,
        width: f64,
        separation: f64,
        a: f64,
        b: f64,
        timing: Timing,
    },
}

fn check_coefficients(a: f64, b: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return Err(Error::validation(
            "barrier.a/b",
            format!("nonlinear coefficients need 0 <= a, b <= 1 (a = {a}, b = {b})"),
        ));
    }
    if (a + b - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::validation(
            "barrier.a/b",
            format!("height ramp requires a + b = 1 (a + b = {})", a + b),
        ));
    }
    Ok(())
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be > 0, got {v}")))
    }
}

impl BarrierSchedule {
    pub fn validate(&self) -> Result<()> {
        if !self.v0().is_finite() {
            return Err(Error::validation("barrier.v0", "must be finite"));
        }
        match *self {
            BarrierSchedule::Free => Ok(()),
            BarrierSchedule::StaticRect { left_edge, width, .. } => {
                if !left_edge.is_finite() {
                    return Err(Error::validation("barrier.left_edge", "must be finite"));
                }
                positive("barrier.width", width)
            }
            BarrierSchedule::LinearWidth { w_i, w_f, timing, .. } => {
                positive("barrier.w_i", w_i)?;
                if !(w_f.is_finite() && w_f >= w_i) {
                    return Err(Error::validation(
                        "barrier.w_f",
                        format!("final width must satisfy w_f >= w_i ({w_f} < {w_i})"),
                    ));
                }
                timing.validate()
            }
            BarrierSchedule::HeightRamp { width, a, b, timing, .. } => {
                positive("barrier.width", width)?;
                check_coefficients(a, b)?;
                timing.validate()
            }
            BarrierSchedule::DoubleHeightRamp { width, separation, a, b, timing, .. } => {
                positive("barrier.width", width)?;
                if !(separation.is_finite() && separation >= 0.0) {
                    return Err(Error::validation("barrier.separation", "must be >= 0"));
                }
                check_coefficients(a, b)?;
                timing.validate()
            }
        }
    }

    pub fn v0(&self) -> f64 {
        match *self {
            BarrierSchedule::Free => 0.0,
            BarrierSchedule::StaticRect { v0, .. }
            | BarrierSchedule::LinearWidth { v0, .. }
            | BarrierSchedule::HeightRamp { v0, .. }
            | BarrierSchedule::DoubleHeightRamp { v0, .. } => v0,
        }
    }

    pub fn timing(&self) -> Option<Timing> {
        match *self {
            BarrierSchedule::Free | BarrierSchedule::StaticRect { .. } => None,
            BarrierSchedule::LinearWidth { timing, .. }
            | BarrierSchedule::HeightRamp { timing, .. }
            | BarrierSchedule::DoubleHeightRamp { timing, .. } => Some(timing),
        }
    }

    /// Times at which the schedule switches branch.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.timing().map(|t| vec![t.t_p, t.end()]).unwrap_or_default()
    }

    /// Height multiplier of the nonlinear ramp, `a s + b s²` on the ramp.
    pub fn height_factor(&self, t: f64) -> f64 {
        match *self {
            BarrierSchedule::HeightRamp { a, b, timing, .. }
            | BarrierSchedule::DoubleHeightRamp { a, b, timing, .. } => {
                let s = timing.progress(t);
                if s >= 1.0 {
                    1.0
                } else {
                    a * s + b * s * s
                }
            }
            _ => 1.0,
        }
    }

    /// Instantaneous width of the growing barrier.
    pub fn width_at(&self, t: f64) -> Option<f64> {
        match *self {
            BarrierSchedule::LinearWidth { w_i, w_f, timing, .. } => {
                let s = timing.progress(t);
                Some(if s >= 1.0 { w_f } else { w_i + (w_f - w_i) * s })
            }
            BarrierSchedule::StaticRect { width, .. } | BarrierSchedule::HeightRamp { width, .. } => {
                Some(width)
            }
            _ => None,
        }
    }

    /// Rectangles `(left, right, height)` making up the potential at `t`.
    pub fn segments(&self, t: f64) -> Vec<(f64, f64, f64)> {
        match *self {
            BarrierSchedule::Free => Vec::new(),
            BarrierSchedule::StaticRect { v0, left_edge, width } => {
                vec![(left_edge, left_edge + width, v0)]
            }
            BarrierSchedule::LinearWidth { v0, .. } => {
                vec![(0.0, self.width_at(t).unwrap_or(0.0), v0)]
            }
            BarrierSchedule::HeightRamp { v0, width, .. } => {
                vec![(-0.5 * width, 0.5 * width, v0 * self.height_factor(t))]
            }
            BarrierSchedule::DoubleHeightRamp { v0, width, separation, .. } => {
                let h = v0 * self.height_factor(t);
                let g = 0.5 * separation;
                vec![(-g - width, -g, h), (g, g + width, h)]
            }
        }
    }

    /// Pointwise `V(x, t)`.
    pub fn potential_at(&self, x: f64, t: f64) -> f64 {
        self.segments(t)
            .into_iter()
            .filter(|&(l, r, _)| x >= l && x <= r)
            .map(|(_, _, h)| h)
            .sum()
    }

    /// Potential sampled on every node at time `t`, writing into `out`.
    pub fn sample_into(&self, grid: &SpatialGrid, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), grid.len());
        out.iter_mut().for_each(|v| *v = 0.0);
        let dx = grid.dx();
        let n = grid.len();
        for (l, r, h) in self.segments(t) {
            if h == 0.0 || r < grid.x_min() - dx || l > grid.x_max() + dx {
                continue;
            }
            let first = (((l - grid.x_min()) / dx - 0.5).floor().max(0.0)) as usize;
            let last = (((r - grid.x_min()) / dx + 0.5).ceil().max(0.0) as usize).min(n - 1);
            for (i, v) in out.iter_mut().enumerate().take(last + 1).skip(first) {
                let x = grid.x(i);
                let covered = (x + 0.5 * dx).min(r) - (x - 0.5 * dx).max(l);
                if covered > 0.0 {
                    *v += h * (covered / dx).min(1.0);
                }
            }
        }
    }

    /// Cell-averaged value at a single node; agrees with `sample_into`.
    pub fn sample_node(&self, grid: &SpatialGrid, t: f64, i: usize) -> f64 {
        let dx = grid.dx();
        let x = grid.x(i);
        self.segments(t)
            .into_iter()
            .map(|(l, r, h)| {
                let covered = (x + 0.5 * dx).min(r) - (x - 0.5 * dx).max(l);
                if covered > 0.0 { h * (covered / dx).min(1.0) } else { 0.0 }
            })
            .sum()
    }

    pub fn sample_on_grid(&self, grid: &SpatialGrid, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; grid.len()];
        self.sample_into(grid, t, &mut v);
        v
    }

    /// `dV0/dt` of the ramping height, zero outside `(t_p, t_p + ε]`.
    pub fn height_rate(&self, t: f64) -> Result<f64> {
        match *self {
            BarrierSchedule::HeightRamp { v0, a, b, timing, .. }
            | BarrierSchedule::DoubleHeightRamp { v0, a, b, timing, .. } => {
                if t <= timing.t_p || t > timing.end() {
                    return Ok(0.0);
                }
                let eps = timing.epsilon;
                Ok(v0 * (a / eps + 2.0 * b * (t - timing.t_p) / (eps * eps)))
            }
            _ => Err(Error::Unsupported(
                "height rate is defined for height-ramp schedules only".into(),
            )),
        }
    }

    /// Largest `|V|` the schedule ever reaches.
    pub fn max_abs_potential(&self) -> f64 {
        self.v0().abs()
    }

    /// Same schedule with the perturbation start shifted.
    pub fn with_onset(self, t_p: f64) -> Self {
        let mut s = self;
        match &mut s {
            BarrierSchedule::LinearWidth { timing, .. }
            | BarrierSchedule::HeightRamp { timing, .. }
            | BarrierSchedule::DoubleHeightRamp { timing, .. } => timing.t_p = t_p,
            _ => {}
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const T: Timing = Timing { t_p: 1.0, epsilon: 0.5 };

    fn width_schedule() -> BarrierSchedule {
        BarrierSchedule::LinearWidth { v0: 3.0, w_i: 0.2, w_f: 1.0, timing: T }
    }

    fn ramp(a: f64, b: f64) -> BarrierSchedule {
        BarrierSchedule::HeightRamp { v0: 2.0, width: 0.4, a, b, timing: T }
    }

    #[test]
    fn linear_width_midpoint() {
        let s = width_schedule();
        let t = T.t_p + 0.5 * T.epsilon;
        assert!((s.width_at(t).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(s.potential_at(0.6 - 1e-3, t), 3.0);
        assert_eq!(s.potential_at(0.6 + 1e-3, t), 0.0);
        // θ(0) = 1 at both edges
        assert_eq!(s.potential_at(0.0, 0.0), 3.0);
        assert_eq!(s.potential_at(0.2, 0.0), 3.0);
    }

    #[test]
    fn height_ramp_quarter_point() {
        let s = ramp(0.1, 0.9);
        let v = s.potential_at(0.0, T.t_p + 0.5 * T.epsilon);
        assert!((v - 0.275 * 2.0).abs() < 1e-15);
        assert_eq!(s.potential_at(0.0, 0.0), 0.0);
        assert_eq!(s.potential_at(0.0, 10.0), 2.0);
    }

    #[test]
    fn aligned_static_barrier_samples() {
        let g = SpatialGrid::new(-1.0, 1.0, 201).unwrap();
        let k = 7;
        let left = g.x(120);
        let s = BarrierSchedule::StaticRect { v0: 5.0, left_edge: left, width: k as f64 * g.dx() };
        let v = s.sample_on_grid(&g, 0.0);
        let full: Vec<usize> = (0..g.len()).filter(|&i| (v[i] - 5.0).abs() < 1e-9).collect();
        assert_eq!(full, (121..127).collect::<Vec<_>>());
        // Edge nodes sit on the edges and carry half a cell each.
        assert!((v[120] - 2.5).abs() < 1e-9 && (v[127] - 2.5).abs() < 1e-9);
        let strength: f64 = v.iter().sum::<f64>() * g.dx();
        assert!((strength - 5.0 * k as f64 * g.dx()).abs() < 1e-12);
        assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), k + 1);
    }

    #[test]
    fn edge_cell_fraction() {
        let g = SpatialGrid::new(-1.0, 1.0, 201).unwrap();
        let node = 150;
        let s = BarrierSchedule::StaticRect {
            v0: 4.0,
            left_edge: g.x(node) + 0.25 * g.dx(),
            width: 10.0 * g.dx(),
        };
        let v = s.sample_on_grid(&g, 0.0);
        assert!((v[node] - 0.25 * 4.0).abs() < 1e-9, "{}", v[node]);
        assert_eq!(v[node - 1], 0.0);
        assert_eq!(v[node + 1], 4.0);
    }

    #[test]
    fn double_barrier_plateaus() {
        let g = SpatialGrid::new(-1.0, 1.0, 401).unwrap();
        let s = BarrierSchedule::DoubleHeightRamp {
            v0: 1.0,
            width: 0.1,
            separation: 0.3,
            a: 0.5,
            b: 0.5,
            timing: T,
        };
        let v = s.sample_on_grid(&g, 2.0);
        let x = |i: usize| g.x(i);
        for i in 0..g.len() {
            if x(i) > -0.24 && x(i) < -0.16 || x(i) > 0.16 && x(i) < 0.24 {
                assert!((v[i] - 1.0).abs() < 1e-12);
            }
            if x(i).abs() < 0.145 {
                assert_eq!(v[i], 0.0);
            }
        }
        assert_eq!(s.potential_at(0.0, 2.0), 0.0);
    }

    #[test]
    fn height_rate_values() {
        let lin = ramp(1.0, 0.0);
        for s in [0.1, 0.5, 1.0] {
            let r = lin.height_rate(T.t_p + s * T.epsilon).unwrap();
            assert!((r - 2.0 / T.epsilon).abs() < 1e-12);
        }
        let quad = ramp(0.0, 1.0);
        assert!(quad.height_rate(T.t_p + 1e-12).unwrap().abs() < 1e-9);
        let r = ramp(0.1, 0.9).height_rate(T.end()).unwrap();
        assert!((r - 1.9 * 2.0 / T.epsilon).abs() < 1e-12);
        assert_eq!(ramp(0.1, 0.9).height_rate(0.0).unwrap(), 0.0);
        assert!(width_schedule().height_rate(1.2).is_err());
    }

    #[test]
    fn validation_rules() {
        let bad_width = BarrierSchedule::LinearWidth { v0: 1.0, w_i: 0.5, w_f: 0.2, timing: T };
        assert!(matches!(bad_width.validate(), Err(Error::Validation { field, .. }) if field == "barrier.w_f"));
        let bad_sum = ramp(0.3, 0.3);
        match bad_sum.validate() {
            Err(Error::Validation { constraint, .. }) => assert!(constraint.contains("a + b = 1")),
            other => panic!("{other:?}"),
        }
        let bad_eps = BarrierSchedule::HeightRamp {
            v0: 1.0,
            width: 0.1,
            a: 1.0,
            b: 0.0,
            timing: Timing { t_p: 0.0, epsilon: 0.0 },
        };
        assert!(bad_eps.validate().is_err());
        assert!(ramp(0.1, 0.9).validate().is_ok());
    }

    #[test]
    fn settled_width_matches_static() {
        let g = SpatialGrid::new(-1.0, 2.0, 301).unwrap();
        let s = width_schedule();
        let st = BarrierSchedule::StaticRect { v0: 3.0, left_edge: 0.0, width: 1.0 };
        for t in [1.51, 3.0, 100.0] {
            assert_eq!(s.sample_on_grid(&g, t), st.sample_on_grid(&g, t));
            for x in [-0.1, 0.0, 0.5, 1.0, 1.0001] {
                assert_eq!(s.potential_at(x, t), st.potential_at(x, t));
            }
        }
    }

    proptest! {
        #[test]
        fn continuous_across_branch_joins(a in 0.0f64..=1.0, x in -0.3f64..1.2) {
            let b = 1.0 - a;
            for s in [ramp(a, b), width_schedule()] {
                for tj in [T.t_p, T.end()] {
                    let h = 1e-9;
                    // Width schedules jump only when the moving edge crosses x.
                    if let Some(w) = s.width_at(tj) {
                        if (x - w).abs() < 1e-6 { continue; }
                    }
                    let d = (s.potential_at(x, tj + h) - s.potential_at(x, tj - h)).abs();
                    prop_assert!(d < 1e-6, "jump {} at t = {}", d, tj);
                }
            }
        }

        #[test]
        fn ramp_is_monotone(a in 0.0f64..=1.0, t1 in 0.9f64..1.6, dt in 0.0f64..0.3) {
            let r = ramp(a, 1.0 - a);
            prop_assert!(r.height_factor(t1 + dt) >= r.height_factor(t1) - 1e-15);
            let w = width_schedule();
            prop_assert!(w.width_at(t1 + dt).unwrap() >= w.width_at(t1).unwrap());
        }

        #[test]
        fn sampled_strength_tracks_width(t in 0.9f64..1.6) {
            let g = SpatialGrid::new(-1.0, 2.0, 301).unwrap();
            let s = width_schedule();
            let strength: f64 = s.sample_on_grid(&g, t).iter().sum::<f64>() * g.dx();
            prop_assert!((strength - 3.0 * s.width_at(t).unwrap()).abs() < 1e-12);
        }
    }
}
