use fastab_core::error_growth::{fit_error_model, integrate_error_model, ErrorGrowthParams, ErrorModelKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn noisy_samples(kind: ErrorModelKind, p: &ErrorGrowthParams, t_end: f64, points: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let dt = 1e-3;
    let series = integrate_error_model(kind, p, t_end, dt).unwrap();
    let stride = ((t_end / dt).round() as usize) / (points - 1);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..points)
        .map(|i| {
            let k = i * stride;
            let factor = if i == 0 { 1.0 } else { 1.0 + noise.sample(&mut rng) };
            (series.times[k], series.values[k] * factor)
        })
        .unzip()
}

#[test]
fn dk_recovery_under_five_percent_noise() {
    let truth = ErrorGrowthParams {
        s: 6.0,
        ..ErrorGrowthParams::comparison_defaults()
    };
    let mut errs = [Vec::new(), Vec::new(), Vec::new()];
    for seed in 0..20 {
        let (t, v) = noisy_samples(ErrorModelKind::Dk, &truth, 15.0, 50, seed);
        let fit = fit_error_model(ErrorModelKind::Dk, &t, &v, seed).unwrap();
        errs[0].push((fit.params.alpha / truth.alpha - 1.0).abs());
        errs[1].push((fit.params.s / truth.s - 1.0).abs());
        errs[2].push((fit.params.v_inf / truth.v_inf - 1.0).abs());
    }
    for (name, e) in ["alpha", "S", "V_inf"].iter().zip(errs) {
        let m = median(e);
        assert!(m < 0.15, "{name}: median relative error {m:.3}");
    }
}

#[test]
fn lorenz_recovery_under_five_percent_noise() {
    let truth = ErrorGrowthParams::comparison_defaults();
    let mut errs = [Vec::new(), Vec::new()];
    for seed in 0..20 {
        let (t, v) = noisy_samples(ErrorModelKind::Lorenz, &truth, 20.0, 50, 100 + seed);
        let fit = fit_error_model(ErrorModelKind::Lorenz, &t, &v, seed).unwrap();
        errs[0].push((fit.params.a_lorenz / truth.a_lorenz - 1.0).abs());
        errs[1].push((fit.params.v_inf / truth.v_inf - 1.0).abs());
    }
    for (name, e) in ["a", "V_inf"].iter().zip(errs) {
        let m = median(e);
        assert!(m < 0.15, "{name}: median relative error {m:.3}");
    }
}

#[test]
fn fit_is_reproducible_for_a_seed() {
    let truth = ErrorGrowthParams::comparison_defaults();
    let (t, v) = noisy_samples(ErrorModelKind::Dk, &truth, 12.0, 30, 7);
    let a = fit_error_model(ErrorModelKind::Dk, &t, &v, 5).unwrap();
    let b = fit_error_model(ErrorModelKind::Dk, &t, &v, 5).unwrap();
    assert_eq!(a, b);
}
