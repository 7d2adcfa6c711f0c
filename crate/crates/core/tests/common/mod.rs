#![allow(dead_code)]

use tdbarrier::config::RunConfig;
use tdbarrier::{BarrierSchedule, PacketSpec, SpatialGrid, Timing, UnitSystem, WaveState};

/// A ±80σ0 box at the default node spacing: the default geometry, cropped.
pub fn reduced_grid(u: &UnitSystem) -> SpatialGrid {
    SpatialGrid::symmetric(80.0 * u.sigma0, 20_973).unwrap()
}

pub fn packet(u: &UnitSystem, g: &SpatialGrid) -> WaveState {
    tdbarrier::build_packet(&PacketSpec::gaussian(u), g, u).unwrap()
}

pub fn static_barrier(u: &UnitSystem) -> BarrierSchedule {
    BarrierSchedule::StaticRect { v0: 1.5 * u.e0, left_edge: 0.0, width: 0.08 * u.sigma1 }
}

pub fn growing_barrier(u: &UnitSystem) -> BarrierSchedule {
    BarrierSchedule::LinearWidth {
        v0: 1.5 * u.e0,
        w_i: 0.08 * u.sigma1,
        w_f: 0.48 * u.sigma1,
        timing: Timing { t_p: 7.14 * u.t0, epsilon: 0.27 * u.t0 },
    }
}

/// Config for quick CLI runs: cropped box, coarse grid and time step.
pub fn quick_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.grid.half_width_sigma0 = 80.0;
    c.grid.n_points = 6000;
    c.propagator.dt = 40.0 / 2048.0;
    c.propagator.store_every = 4;
    c
}
