//! Superarrival detection, the η measure, paired runs and parameter sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BarrierKind, ReferenceKind, RunConfig, Scenario, SweepAxis};
use crate::error::{Error, Result};
use crate::observables::{ExpectationRecorder, ExpectationSeries, SeriesLabel, TransmissionRecorder, TransmissionSeries};
use crate::packet::{build_packet, PacketKind};
use crate::potential::BarrierSchedule;
use crate::propagator::{propagate_on, Frame, Observer, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperarrivalReport {
    pub t_d: f64,
    pub t_c: f64,
    pub delta_t: f64,
    pub i_p: f64,
    pub i_s: f64,
    pub eta: f64,
}

fn check_axes(reference: &TransmissionSeries, perturbed: &TransmissionSeries) -> Result<()> {
    reference.validate()?;
    perturbed.validate()?;
    if reference.times.len() != perturbed.times.len() {
        return Err(Error::Shape { expected: reference.times.len(), found: perturbed.times.len() });
    }
    if reference.times.iter().zip(&perturbed.times).any(|(a, b)| a != b) {
        return Err(Error::invalid("perturbed", "series must share the same time axis"));
    }
    Ok(())
}

/// Finds `(t_d, t_c)`.
///
/// `t_d` is the first sample at or after `onset` where the perturbed curve
/// exceeds the reference by more than `delta_dev`; `t_c` is the next sign
/// change of the difference, interpolated linearly. `Ok(None)` means no
/// superarrival; a difference that never turns back is `WindowOpen`.
pub fn detect_window(
    reference: &TransmissionSeries,
    perturbed: &TransmissionSeries,
    onset: f64,
    delta_dev: f64,
) -> Result<Option<(f64, f64)>> {
    check_axes(reference, perturbed)?;
    if !(delta_dev > 0.0) {
        return Err(Error::invalid("delta_dev", "must be > 0"));
    }
    let t = &reference.times;
    let d: Vec<f64> = perturbed.values.iter().zip(&reference.values).map(|(p, s)| p - s).collect();
    let Some(i_d) = (0..t.len()).find(|&i| t[i] >= onset && d[i] > delta_dev) else {
        return Ok(None);
    };
    for j in i_d + 1..t.len() {
        if d[j] <= 0.0 {
            let (d0, d1) = (d[j - 1], d[j]);
            let t_c = if d1 == 0.0 { t[j] } else { t[j - 1] + d0 / (d0 - d1) * (t[j] - t[j - 1]) };
            return Ok(Some((t[i_d], t_c)));
        }
    }
    Err(Error::WindowOpen { t_d: t[i_d] })
}

/// Trapezoid area of `series` over `[a, b]`, with the partial end cells
/// taken from linear interpolation.
pub fn window_area(series: &TransmissionSeries, a: f64, b: f64) -> f64 {
    let mut pts = vec![(a, series.value_at(a))];
    pts.extend(series.times.iter().zip(&series.values).filter(|(t, _)| **t > a && **t < b).map(|(t, v)| (*t, *v)));
    pts.push((b, series.value_at(b)));
    pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

/// η = (I_p − I_s)/I_s over `window`.
pub fn superarrivality(
    reference: &TransmissionSeries,
    perturbed: &TransmissionSeries,
    window: (f64, f64),
) -> Result<SuperarrivalReport> {
    check_axes(reference, perturbed)?;
    let (t_d, t_c) = window;
    let (lo, hi) = (reference.times[0], *reference.times.last().unwrap_or(&reference.times[0]));
    if !(t_d < t_c) || t_d < lo || t_c > hi {
        return Err(Error::invalid("window", format!("need {lo} <= t_d < t_c <= {hi}")));
    }
    let i_p = window_area(perturbed, t_d, t_c);
    let i_s = window_area(reference, t_d, t_c);
    if !(i_s > 0.0) {
        return Err(Error::DegenerateReference);
    }
    Ok(SuperarrivalReport { t_d, t_c, delta_t: t_c - t_d, i_p, i_s, eta: (i_p - i_s) / i_s })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Superarrival(SuperarrivalReport),
    NoSuperarrival,
    WindowOpen { t_d: f64 },
}

impl Verdict {
    pub fn report(&self) -> Option<&SuperarrivalReport> {
        match self {
            Verdict::Superarrival(r) => Some(r),
            _ => None,
        }
    }
}

/// Detection followed by η.
pub fn analyze_pair(
    reference: &TransmissionSeries,
    perturbed: &TransmissionSeries,
    onset: f64,
    delta_dev: f64,
) -> Result<Verdict> {
    match detect_window(reference, perturbed, onset, delta_dev) {
        Ok(Some(w)) => superarrivality(reference, perturbed, w).map(Verdict::Superarrival),
        Ok(None) => Ok(Verdict::NoSuperarrival),
        Err(Error::WindowOpen { t_d }) => Ok(Verdict::WindowOpen { t_d }),
        Err(e) => Err(e),
    }
}

/// The schedule a perturbation is compared against: the barrier as it stood
/// before the perturbation (static `w_i` for width growth, nothing for ramps
/// from zero height).
pub fn reference_schedule(perturbed: &BarrierSchedule) -> Result<BarrierSchedule> {
    match *perturbed {
        BarrierSchedule::LinearWidth { v0, w_i, .. } => Ok(BarrierSchedule::StaticRect { v0, left_edge: 0.0, width: w_i }),
        BarrierSchedule::HeightRamp { .. } | BarrierSchedule::DoubleHeightRamp { .. } => Ok(BarrierSchedule::Free),
        BarrierSchedule::Free | BarrierSchedule::StaticRect { .. } => {
            Err(Error::Configuration("a paired run needs a time-dependent barrier".into()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct PairResult {
    pub reference: TransmissionSeries,
    pub perturbed: TransmissionSeries,
    pub expectations: ExpectationSeries,
    pub verdict: Verdict,
    pub t_inf_reference: f64,
    pub t_inf_perturbed: f64,
}

struct Fanout<'a, 'b>(&'a mut [&'b mut dyn Observer]);

impl Observer for Fanout<'_, '_> {
    fn observe(&mut self, frame: &Frame<'_>) -> Result<()> {
        self.0.iter_mut().try_for_each(|o| o.observe(frame))
    }
}

/// Runs the reference and perturbed propagations on a shared time axis.
pub fn run_pair(scenario: &Scenario) -> Result<PairResult> {
    run_pair_observed(scenario, &mut [], &mut [])
}

/// `run_pair` with extra observers attached to the reference and perturbed
/// propagations (no reference propagation happens for `FreeAnalytic`).
pub fn run_pair_observed(
    sc: &Scenario,
    reference_observers: &mut [&mut dyn Observer],
    perturbed_observers: &mut [&mut dyn Observer],
) -> Result<PairResult> {
    let units = &sc.units;
    let initial = build_packet(&sc.packet, &sc.grid, units)?;
    let schedule = &sc.schedule;
    let onset = schedule
        .timing()
        .ok_or_else(|| Error::Configuration("a paired run needs a time-dependent barrier".into()))?
        .t_p;
    sc.propagator.validate(schedule, units)?;
    let tg = TimeGrid::new(sc.propagator.t_end, sc.propagator.dt, &schedule.breakpoints())?;
    let every = sc.propagator.store_every;

    let mut pert = TransmissionRecorder::new(sc.x_d, SeriesLabel::Perturbed);
    let mut expect = ExpectationRecorder::new(sc.x_d);
    {
        let mut extra = Fanout(perturbed_observers);
        propagate_on(&initial, schedule, &sc.grid, units, &tg, every, &mut [&mut pert, &mut expect, &mut extra])?;
    }

    let reference = match sc.reference {
        ReferenceKind::FreeAnalytic => {
            if sc.packet.kind != PacketKind::Gaussian {
                return Err(Error::Unsupported("analytic free reference needs a Gaussian packet".into()));
            }
            let p = &sc.packet;
            TransmissionSeries::free_analytic(&pert.series.times, p.x0, p.sigma0, p.p0, sc.x_d, units)
        }
        kind => {
            let ref_schedule = match kind {
                ReferenceKind::Free => BarrierSchedule::Free,
                _ => reference_schedule(schedule)?,
            };
            let label = if ref_schedule == BarrierSchedule::Free { SeriesLabel::Free } else { SeriesLabel::Static };
            let mut rec = TransmissionRecorder::new(sc.x_d, label);
            let mut extra = Fanout(reference_observers);
            propagate_on(&initial, &ref_schedule, &sc.grid, units, &tg, every, &mut [&mut rec, &mut extra])?;
            rec.series
        }
    };
    let verdict = analyze_pair(&reference, &pert.series, onset, sc.delta_dev)?;
    Ok(PairResult {
        t_inf_reference: reference.last_value().unwrap_or(f64::NAN),
        t_inf_perturbed: pert.series.last_value().unwrap_or(f64::NAN),
        reference,
        perturbed: pert.series,
        expectations: expect.series,
        verdict,
    })
}

/// Sets one sweep parameter (in config units).
pub fn apply_axis(config: &mut RunConfig, axis: SweepAxis, value: f64) {
    match axis {
        SweepAxis::Epsilon => config.barrier.epsilon = value,
        SweepAxis::FinalWidth => config.barrier.w_f = value,
        SweepAxis::DetectorPosition => config.analysis.x_d = value,
        SweepAxis::NonlinearB => {
            config.barrier.b = value;
            config.barrier.a = 1.0 - value;
        }
        SweepAxis::Separation => {
            config.barrier.kind = BarrierKind::DoubleHeightRamp;
            config.barrier.separation = value;
        }
        SweepAxis::Alpha => {
            config.packet.kind = PacketKind::NonGaussian;
            config.packet.alpha = value;
        }
        SweepAxis::BarrierHeight => config.barrier.v0 = value,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub verdict: Verdict,
    pub t_inf_reference: f64,
    pub t_inf_perturbed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub outcome: std::result::Result<PointSummary, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// η per point, `None` where no report exists.
    pub fn etas(&self) -> Vec<Option<f64>> {
        self.points
            .iter()
            .map(|p| p.outcome.as_ref().ok().and_then(|s| s.verdict.report()).map(|r| r.eta))
            .collect()
    }
}

/// Runs `run_pair` for every value along `axis`, on at most `threads`
/// workers. Failed points are kept with their error message.
pub fn sweep(axis: SweepAxis, values: &[f64], base: &RunConfig, threads: Option<usize>) -> Result<SweepResult> {
    if values.len() < 2 {
        return Err(Error::invalid("sweep_values", "need at least two points"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("sweep_values", "values must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let run = |&value: &f64| -> SweepPoint {
        let mut cfg = base.clone();
        apply_axis(&mut cfg, axis, value);
        let outcome = cfg
            .resolve()
            .and_then(|sc| run_pair(&sc))
            .map(|r| PointSummary {
                verdict: r.verdict,
                t_inf_reference: r.t_inf_reference,
                t_inf_perturbed: r.t_inf_perturbed,
            })
            .map_err(|e| e.to_string());
        SweepPoint { value, outcome }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Configuration(e.to_string()))?;
    let points = pool.install(|| sorted.par_iter().map(run).collect());
    Ok(SweepResult { axis, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(times: &[f64], values: &[f64], label: SeriesLabel) -> TransmissionSeries {
        TransmissionSeries { times: times.to_vec(), values: values.to_vec(), x_d: 0.0, label }
    }

    fn axis(n: usize, t_end: f64) -> Vec<f64> {
        (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn identical_series_have_no_window() {
        let t = axis(50, 10.0);
        let v: Vec<f64> = t.iter().map(|x| (x / 10.0).powi(2)).collect();
        let s = series(&t, &v, SeriesLabel::Static);
        let p = series(&t, &v, SeriesLabel::Perturbed);
        assert_eq!(detect_window(&s, &p, 0.0, 1e-3).unwrap(), None);
        assert_eq!(analyze_pair(&s, &p, 0.0, 1e-12).unwrap(), Verdict::NoSuperarrival);
    }

    #[test]
    fn crossing_of_a_sine_difference() {
        // Difference 0.1·sin(π(t − 2)/5) is positive on (2, 7) and crosses at 7.
        let t = axis(401, 20.0);
        let s: Vec<f64> = t.iter().map(|_| 0.3).collect();
        let p: Vec<f64> = t
            .iter()
            .map(|&x| 0.3 + if x >= 2.0 { 0.1 * (std::f64::consts::PI * (x - 2.0) / 5.0).sin() } else { 0.0 })
            .collect();
        let (t_d, t_c) = detect_window(
            &series(&t, &s, SeriesLabel::Static),
            &series(&t, &p, SeriesLabel::Perturbed),
            1.0,
            1e-3,
        )
        .unwrap()
        .unwrap();
        let h = t[1] - t[0];
        assert!((t_c - 7.0).abs() <= h);
        assert!(t_d > 2.0 && t_d < 2.0 + 2.0 * h);
    }

    #[test]
    fn onset_after_the_axis_means_no_superarrival() {
        let t = axis(10, 1.0);
        let s = series(&t, &[0.0; 10], SeriesLabel::Static);
        let p = series(&t, &[0.5; 10], SeriesLabel::Perturbed);
        assert_eq!(detect_window(&s, &p, 2.0, 1e-3).unwrap(), None);
    }

    #[test]
    fn open_window_reports_t_d() {
        let t = axis(10, 9.0);
        let s = series(&t, &[0.1; 10], SeriesLabel::Static);
        let mut pv = vec![0.1; 10];
        pv[4..].iter_mut().for_each(|v| *v = 0.2);
        let p = series(&t, &pv, SeriesLabel::Perturbed);
        assert!(matches!(detect_window(&s, &p, 0.0, 1e-3), Err(Error::WindowOpen { t_d }) if t_d == 4.0));
    }

    #[test]
    fn eta_arithmetic() {
        let t = axis(11, 10.0);
        let s = series(&t, &[0.2; 11], SeriesLabel::Static);
        let r = superarrivality(&s, &series(&t, &[0.2; 11], SeriesLabel::Perturbed), (1.0, 9.0)).unwrap();
        assert_eq!(r.eta, 0.0);
        let r = superarrivality(&s, &series(&t, &[0.3; 11], SeriesLabel::Perturbed), (1.5, 8.5)).unwrap();
        assert!((r.eta - 0.5).abs() < 1e-12);
        // Constant excess c: η = c·Δt / I_s.
        let c = 0.05;
        let r = superarrivality(&s, &series(&t, &[0.2 + c; 11], SeriesLabel::Perturbed), (2.25, 7.75)).unwrap();
        assert!((r.eta - c * r.delta_t / r.i_s).abs() < 1e-12);
        assert!(matches!(
            superarrivality(&series(&t, &[0.0; 11], SeriesLabel::Static), &s, (1.0, 2.0)),
            Err(Error::DegenerateReference)
        ));
        assert!(superarrivality(&s, &s, (3.0, 3.0)).is_err());
    }

    #[test]
    fn reference_rule() {
        let timing = crate::potential::Timing { t_p: 1.0, epsilon: 0.1 };
        let lw = BarrierSchedule::LinearWidth { v0: 3.0, w_i: 0.1, w_f: 0.2, timing };
        assert_eq!(
            reference_schedule(&lw).unwrap(),
            BarrierSchedule::StaticRect { v0: 3.0, left_edge: 0.0, width: 0.1 }
        );
        let hr = BarrierSchedule::HeightRamp { v0: 3.0, width: 0.1, a: 1.0, b: 0.0, timing };
        assert_eq!(reference_schedule(&hr).unwrap(), BarrierSchedule::Free);
        assert!(reference_schedule(&BarrierSchedule::Free).is_err());
    }

    #[test]
    fn sweep_needs_two_points() {
        let cfg = RunConfig::default();
        assert!(sweep(SweepAxis::Epsilon, &[0.3], &cfg, Some(1)).is_err());
        assert!(sweep(SweepAxis::Epsilon, &[0.3, f64::NAN], &cfg, Some(1)).is_err());
    }

    proptest! {
        #[test]
        fn identical_pair_is_never_a_window(
            vals in proptest::collection::vec(0.0f64..1.0, 3..60),
            delta in 1e-12f64..0.5,
        ) {
            let t = axis(vals.len(), 5.0);
            let s = series(&t, &vals, SeriesLabel::Static);
            let p = series(&t, &vals, SeriesLabel::Perturbed);
            prop_assert_eq!(analyze_pair(&s, &p, 0.0, delta).unwrap(), Verdict::NoSuperarrival);
        }

        #[test]
        fn report_reconstructs(
            base in proptest::collection::vec(0.1f64..1.0, 20..40),
            bump in 0.01f64..0.3,
        ) {
            let n = base.len();
            let t = axis(n, 10.0);
            let pert: Vec<f64> = base
                .iter()
                .zip(&t)
                .map(|(b, &x)| b + bump * (std::f64::consts::PI * (x - 2.0) / 5.0).sin().max(-1.0) * f64::from(x >= 2.0))
                .collect();
            let s = series(&t, &base, SeriesLabel::Static);
            let p = series(&t, &pert, SeriesLabel::Perturbed);
            if let Ok(Verdict::Superarrival(r)) = analyze_pair(&s, &p, 0.0, 1e-3) {
                prop_assert!(r.t_d < r.t_c && r.delta_t > 0.0 && r.i_s > 0.0);
                let i_p = window_area(&p, r.t_d, r.t_c);
                let i_s = window_area(&s, r.t_d, r.t_c);
                prop_assert!(((i_p - i_s) / i_s - r.eta).abs() < 1e-12);
            }
        }
    }
}
