mod common;

use std::sync::OnceLock;

use common::*;
use tdbarrier::bohmian::{critical_initial_position, quantile_positions, Classification, TrajectoryEnsemble};
use tdbarrier::observables::{SeriesLabel, TransmissionRecorder};
use tdbarrier::propagator::{propagate_on, TimeGrid};
use tdbarrier::{BarrierSchedule, PacketSpec, SpatialGrid, UnitSystem};

struct Run {
    grid: SpatialGrid,
    ensemble: TrajectoryEnsemble,
    t_end_value: f64,
}

struct Fixture {
    units: UnitSystem,
    x_d: f64,
    stat: Run,
    pert: Run,
}

fn run(u: &UnitSystem, schedule: &BarrierSchedule, tg: &TimeGrid, x_d: f64) -> Run {
    let g = SpatialGrid::symmetric(120.0 * u.sigma0, 31_459).unwrap();
    let psi = packet(u, &g);
    let starts = quantile_positions(512, &psi, &g).unwrap();
    let mut ens = TrajectoryEnsemble::new(&g, u, &starts, (-60.0 * u.sigma1, 80.0 * u.sigma1), true);
    let mut rec = TransmissionRecorder::new(x_d, SeriesLabel::Static);
    propagate_on(&psi, schedule, &g, u, tg, 1, &mut [&mut ens, &mut rec]).unwrap();
    ens.classify(x_d, u.sigma1);
    Run { grid: g, ensemble: ens, t_end_value: rec.series.last_value().unwrap() }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let u = UnitSystem::default();
        let x_d = 10.0 * u.sigma1;
        let pert_schedule = growing_barrier(&u);
        let tg = TimeGrid::new(40.0 * u.t0, 40.0 * u.t0 / 8192.0, &pert_schedule.breakpoints()).unwrap();
        Fixture {
            stat: run(&u, &static_barrier(&u), &tg, x_d),
            pert: run(&u, &pert_schedule, &tg, x_d),
            units: u,
            x_d,
        }
    })
}

#[test]
fn paths_never_cross() {
    let f = fixture();
    for r in [&f.stat, &f.pert] {
        let half = 0.5 * r.grid.dx();
        let paths = &r.ensemble.trajectories;
        for w in paths.windows(2) {
            assert!(w[0].initial_position < w[1].initial_position);
            for (a, b) in w[0].positions.iter().zip(&w[1].positions) {
                assert!(*b >= *a - half, "crossing: {a} > {b}");
            }
        }
    }
}

#[test]
fn ensemble_fraction_tracks_transmission() {
    let f = fixture();
    for r in [&f.stat, &f.pert] {
        assert!(r.ensemble.failures.iter().all(Option::is_none));
        let frac = r.ensemble.fraction_beyond(f.x_d);
        assert!((frac - r.t_end_value).abs() < 0.02, "fraction {frac} vs T {}", r.t_end_value);
    }
}

#[test]
fn classification_flips_at_the_critical_start() {
    let f = fixture();
    let spec = PacketSpec::gaussian(&f.units);
    for r in [&f.stat, &f.pert] {
        let x_c = critical_initial_position(r.t_end_value, spec.x0, spec.sigma0).unwrap();
        let dx = r.grid.dx();
        for t in &r.ensemble.trajectories {
            match t.classification {
                Classification::Undecided => {}
                c if t.initial_position > x_c + dx => assert_eq!(c, Classification::Transmitted),
                c if t.initial_position < x_c - dx => assert_eq!(c, Classification::Reflected),
                _ => {}
            }
        }
    }
}

#[test]
fn perturbation_speeds_up_most_transmitted_paths() {
    let f = fixture();
    let (mut earlier, mut total) = (0, 0);
    for (s, p) in f.stat.ensemble.trajectories.iter().zip(&f.pert.ensemble.trajectories) {
        if let (Some(ts), Some(tp)) = (s.arrival_time(f.x_d), p.arrival_time(f.x_d)) {
            total += 1;
            if tp < ts {
                earlier += 1;
            }
        }
    }
    assert!(total > 20, "only {total} paths reach the detector in both runs");
    assert!(2 * earlier > total, "{earlier} of {total} arrive earlier");
}
