use fastab_core::experiments::{
    self, planar_model, planar_priors, fitted_rate, occupation_time, run_planar, ExperimentOptions, FilterKind,
    ObsMode,
};
use fastab_core::{kalman, GaussianMeasure, Nonlinearity};
use nalgebra::{DMatrix, DVector};

#[test]
fn occupation_agrees_with_fitted_exponential() {
    let opts = ExperimentOptions::default();
    let r = run_planar(-1.0, 1.0, 1.0, ObsMode::UnstableOnly, 30.0, 1e-3, 4, &opts).unwrap();
    let report = &r.report;
    let counted = occupation_time(report, 0.1);
    // Fit ln gap = c + k t on the tail, then solve for the crossing time of 0.1.
    let tail: Vec<(f64, f64)> = report
        .times
        .iter()
        .zip(&report.posterior_gap)
        .filter(|(t, g)| **t >= 5.0 && **t <= 20.0 && **g > 0.0)
        .map(|(t, g)| (*t, g.ln()))
        .collect();
    let n = tail.len() as f64;
    let mt = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let k = tail.iter().map(|(t, y)| (t - mt) * (y - my)).sum::<f64>() / tail.iter().map(|(t, _)| (t - mt).powi(2)).sum::<f64>();
    let c = my - k * mt;
    let t0 = (0.1f64.ln() - c) / k;
    let predicted = t0 / 30.0;
    assert!((counted - predicted).abs() < 0.02, "counted {counted} predicted {predicted}");
    assert_eq!(occupation_time(report, 0.0), 1.0);
    assert_eq!(occupation_time(report, 1e9), 0.0);
}

#[test]
fn more_information_never_hurts_stabilization() {
    let opts = ExperimentOptions::default();
    for (l1, l2, h) in [(-1.0, 1.0, 1.0), (-0.5, 0.5, 2.0), (-2.0, 0.3, 0.5)] {
        let run = |mode| run_planar(l1, l2, h, mode, 30.0, 1e-2, 6, &opts).unwrap();
        let stable = run(ObsMode::StableOnly);
        let unstable = run(ObsMode::UnstableOnly);
        let sum = run(ObsMode::Sum);
        assert!(!stable.stabilized(), "({l1}, {l2}, {h}) stable_only");
        assert!(unstable.stabilized() && sum.stabilized(), "({l1}, {l2}, {h})");
    }
}

#[test]
fn linear_rate_respects_closed_loop_decay() {
    let opts = ExperimentOptions::default();
    for (l1, l2, h, mode) in [(-1.0, 1.0, 1.0, ObsMode::UnstableOnly), (-1.0, 1.0, 1.0, ObsMode::Sum), (-0.7, 0.4, 1.5, ObsMode::UnstableOnly)] {
        let r = run_planar(l1, l2, h, mode, 30.0, 1e-3, 2, &opts).unwrap();
        let decay = r.are.as_ref().unwrap().slowest_decay;
        let rate = r.report.fitted_posterior_rate;
        assert!(rate <= -decay + 0.2, "({l1}, {l2}, {h}, {}) rate {rate} decay {decay}", mode.name());
        assert!((rate - fitted_rate(&r.report.times, &r.report.posterior_gap)).abs() < 1e-12);
    }
}

#[test]
fn equal_priors_in_a_nonlinear_run_sit_at_the_noise_floor() {
    let mut model = planar_model(-1.0, 1.0, 1.0, ObsMode::UnstableOnly).unwrap();
    model.drift_nonlinear = Nonlinearity::Tanh { epsilon: 0.5 };
    let (pt, _) = planar_priors();
    let r = experiments::run_nonlinear_boundedness(&model, &pt, &pt, 4.0, 1e-2, 4, 13, 256, &ExperimentOptions::default()).unwrap();
    let floor = r.noise_floor.as_ref().unwrap();
    for (k, (g, f)) in r.posterior_gap.iter().zip(floor).enumerate() {
        assert!(*g < 3.0 * f + 1e-12, "checkpoint {k}: gap {g} floor {f}");
    }
}

#[test]
fn linear_particle_twin_decays_toward_its_floor() {
    let model = planar_model(-1.0, 1.0, 1.0, ObsMode::UnstableOnly).unwrap();
    let (pt, pw) = planar_priors();
    let r = experiments::run_nonlinear_boundedness(&model, &pt, &pw, 8.0, 1e-2, 4, 14, 512, &ExperimentOptions::default()).unwrap();
    let floor = r.noise_floor.as_ref().unwrap();
    assert!(r.posterior_gap[0] > 10.0 * floor[0]);
    assert!(r.final_posterior_gap() < 3.0 * floor.last().unwrap(), "{} vs {}", r.final_posterior_gap(), floor.last().unwrap());
    assert!(r.final_prior_gap() > 100.0 * r.final_posterior_gap());
}

#[test]
fn twin_runs_share_one_observation_path() {
    let model = planar_model(-1.0, 1.0, 1.0, ObsMode::Sum).unwrap();
    let (pt, pw) = planar_priors();
    let r = experiments::run_twin_filter(&model, &pt, &pw, 2.0, 1e-2, 3, FilterKind::Particle { particles: 128 }).unwrap();
    assert!(r.observation_checksums.windows(2).all(|w| w[0] == w[1]));
    assert!(!r.observation_checksums.is_empty());
}

#[test]
fn rank_deficient_prior_is_still_forgotten_by_the_kalman_pair() {
    let model = planar_model(-1.0, 1.0, 1.0, ObsMode::UnstableOnly).unwrap();
    let (pt, _) = planar_priors();
    let point = GaussianMeasure::new(DVector::from_vec(vec![3.0, -3.0]), DMatrix::zeros(2, 2)).unwrap();
    let r = experiments::run_twin_filter(&model, &pt, &point, 30.0, 1e-3, 8, FilterKind::Kalman).unwrap();
    assert!(r.final_posterior_gap() < 1e-3);
    let are = kalman::solve_are(&model, 1e-12, 200.0).unwrap();
    assert!((are.slowest_decay - 1.0).abs() < 1e-9);
}
