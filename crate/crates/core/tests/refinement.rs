//! Refinement studies and end-to-end examples that need full runs.

use std::f64::consts::PI;
use std::sync::Arc;

use gbulab_core::analysis::{self, full_monitors};
use gbulab_core::spectral::{self, blowup_functional, principal_eigenpair};
use gbulab_core::stepper::{self, MonitorSpec};
use gbulab_core::{GridDomain, ProblemSpec, Profile, StepControl, Verdict};

fn sine_spec(n: usize, p: f64, q: f64, amp: f64, eps: f64) -> ProblemSpec {
    let grid = Arc::new(GridDomain::unit_interval(n).unwrap());
    let u0 = Profile::Sine { amplitude: amp }.sample(&grid);
    ProblemSpec::new(grid, p, q, u0, vec![0.0; n]).unwrap().with_eps(eps).unwrap()
}

fn control(t_end: f64, g: f64) -> StepControl {
    StepControl {
        t_end,
        gbu_threshold: g,
        ..Default::default()
    }
}

#[test]
fn criterion_threshold_refines_monotonically() {
    let mut thresholds = Vec::new();
    for n in [51usize, 101, 201] {
        let grid = Arc::new(GridDomain::unit_interval(n).unwrap());
        let r = spectral::criterion_experiment(
            spectral::sine_family(grid, 3.0, 4.0, 1e-6),
            2.0,
            (0.5, 2.0),
            0.005,
            &control(0.2, 100.0),
        )
        .unwrap();
        thresholds.push(r.amplitude_hi);
    }
    assert!(thresholds.windows(2).all(|w| w[1] <= w[0]), "{thresholds:?}");
    let (a, b) = (thresholds[1], thresholds[2]);
    assert!((a - b).abs() <= 0.05 * b, "{thresholds:?}");
}

#[test]
fn large_amplitude_blows_up() {
    let spec = sine_spec(51, 3.0, 4.0, 4.0, 1e-6);
    let (_, rep) = stepper::run(&spec, &control(1.0, 100.0)).unwrap();
    assert_eq!(rep.verdict, Verdict::GbuDetected);
    assert!(rep.t_detect.unwrap() < 1.0);
    // u itself stays bounded while the gradient crosses the threshold
    assert!(rep.series.last().unwrap().max_u <= 4.0 + 1e-12);
}

#[test]
fn functional_quadrature_is_second_order() {
    let mut ys = Vec::new();
    for n in [41usize, 81, 161, 321] {
        let g = GridDomain::unit_interval(n).unwrap();
        let e = principal_eigenpair(&g, 1e-12).unwrap();
        let u = g.sample(|x, _| (1.0 + x).ln() + x * x);
        ys.push(blowup_functional(&g, &u, &e.phi, 1.5));
    }
    let d: Vec<f64> = ys.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    for w in d.windows(2) {
        assert!((w[0] / w[1]).log2() >= 1.8, "{d:?}");
    }
}

#[test]
fn fitted_c1_stays_positive_over_late_window() {
    let spec = sine_spec(101, 3.0, 4.0, 1.6, 1e-6);
    let window = spectral::alpha_window(3.0, 4.0).unwrap();
    let eig = principal_eigenpair(spec.grid(), 1e-10).unwrap();
    let monitors = MonitorSpec {
        y_weights: Some(spectral::functional_weights(spec.grid(), &eig.phi, window.midpoint())),
        ..Default::default()
    };
    let (_, rep) = stepper::run_with(&spec, &control(0.2, 100.0), monitors).unwrap();
    let t_detect = rep.t_detect.unwrap();
    for (lo, hi) in [(0.5, 0.75), (0.75, 1.0)] {
        let (t, y): (Vec<f64>, Vec<f64>) = rep
            .series
            .iter()
            .filter(|r| r.t >= lo * t_detect && r.t <= hi * t_detect)
            .map(|r| (r.t, r.y.unwrap()))
            .unzip();
        let fit = spectral::blowup_ode_fit(&t, &y, 4.0).unwrap();
        assert!(fit.compliant && fit.c1 > 0.0, "{fit:?} on [{lo}, {hi}]T");
    }
}

#[test]
fn energy_ratio_below_one_and_grid_stable() {
    let mut ratios = Vec::new();
    for n in [101usize, 201] {
        let spec = sine_spec(n, 3.0, 2.5, 1.0, 1e-6);
        let (_, rep) = stepper::run_with(&spec, &control(0.1, 1e3), full_monitors(None)).unwrap();
        let e = analysis::energy_estimate(&rep.series, &spec, 0.0).unwrap();
        assert!(e.report.pass && e.ratio < 1.0, "{e:?}");
        ratios.push(e.ratio);
    }
    assert!((ratios[0] - ratios[1]).abs() < 0.1 * ratios[1], "{ratios:?}");
}

#[test]
fn stationary_run_is_interior_bounded() {
    let grid = Arc::new(GridDomain::unit_interval(61).unwrap());
    let spec = analysis::constant_spec(grid.clone(), 3.0, 4.0, 0.25).unwrap();
    let c = StepControl {
        snapshot_every: 10,
        ..control(0.01, 1e3)
    };
    let (traj, rep) = stepper::run_with(&spec, &c, full_monitors(Some(1.0 / 3.0))).unwrap();
    let st = spec.initial_state();
    let fit = analysis::gradient_profile_check(&st, 3.0, 4.0, &Default::default()).unwrap();
    assert_eq!((fit.c1, fit.c2), (0.0, 0.0));
    assert!(analysis::interior_boundedness_check(&traj, 1.0 / 3.0, &fit).unwrap().pass);
    assert!(analysis::interior_boundedness_from_monitors(&grid, &rep.series, 1.0 / 3.0, &fit).unwrap().pass);
}

#[test]
fn compliance_reports_are_deterministic() {
    let spec = sine_spec(41, 3.0, 2.5, 1.0, 1e-6);
    let c = control(0.02, 1e3);
    let (a, _) = analysis::compliance_suite(&spec, &c).unwrap();
    let (b, _) = analysis::compliance_suite(&spec, &c).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.all_pass, "{}", a.to_json());
}

#[test]
fn ordered_sines_stay_ordered_under_refinement() {
    for n in [51usize, 101] {
        let h = 1.0 / (n - 1) as f64;
        let lo = sine_spec(n, 3.0, 2.5, 1.0, 1e-6);
        let hi = sine_spec(n, 3.0, 2.5, 2.0, 1e-6);
        let run = stepper::run_lockstep(&lo, &hi, &control(0.05, 1e3)).unwrap();
        let r = analysis::comparison_check_lockstep(&run, 2.0 * h).unwrap();
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn eigenfunction_approaches_sine() {
    let mut errs = Vec::new();
    for n in [51usize, 101, 201] {
        let g = GridDomain::unit_interval(n).unwrap();
        let e = principal_eigenpair(&g, 1e-12).unwrap();
        errs.push((e.lambda - PI * PI).abs());
    }
    assert!(errs.windows(2).all(|w| w[1] < 0.3 * w[0]), "{errs:?}");
}

#[test]
fn subcritical_source_keeps_gradient_bounded() {
    let mut peaks = Vec::new();
    for n in [51usize, 101, 201] {
        let spec = sine_spec(n, 3.0, 2.5, 1.0, 1e-6);
        let (_, rep) = stepper::run(&spec, &control(0.2, 1e3)).unwrap();
        assert_eq!(rep.verdict, Verdict::Completed);
        peaks.push(rep.series.iter().map(|r| r.grad_inf).fold(0.0, f64::max));
    }
    let hi = peaks.iter().copied().fold(0.0, f64::max);
    let lo = peaks.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(hi - lo < 0.05 * hi, "{peaks:?}");
}
