//! Forecast-error growth models for the mean-square error `V(t)`.
//!
//! | kind          | `dV/dt`                                  |
//! |---------------|------------------------------------------|
//! | `leith`       | `α V + S`                                |
//! | `lorenz`      | `2 a √V∞ V (1 - √(V/V∞))`                |
//! | `dk`          | `(α V + S)(1 - V/V∞)`                    |
//! | `stroe_royer` | `-a V ln(V/V∞)`                          |

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::csv::CsvTable;
use crate::error::{Error, Result};
use crate::model::grid_steps;
use crate::rng::{self, StreamTag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorGrowthParams {
    /// Growth coefficient, 1/time.
    pub alpha: f64,
    /// Systematic model error, variance/time.
    pub s: f64,
    /// Saturation variance.
    pub v_inf: f64,
    /// Lorenz (and Stroe-Royer) coefficient.
    pub a_lorenz: f64,
    /// Initial variance.
    pub v0: f64,
}

impl ErrorGrowthParams {
    /// α = 1, V₀ = 1, V∞ = 100, S = 0, with `a = α / (2 √V∞)` so that all
    /// models share the same short-term growth.
    pub fn comparison_defaults() -> Self {
        let alpha = 1.0;
        let v_inf = 100.0;
        ErrorGrowthParams {
            alpha,
            s: 0.0,
            v_inf,
            a_lorenz: matched_lorenz_coefficient(alpha, v_inf),
            v0: 1.0,
        }
    }
}

/// `a = α / (2 √V∞)`.
pub fn matched_lorenz_coefficient(alpha: f64, v_inf: f64) -> f64 {
    alpha / (2.0 * v_inf.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorModelKind {
    Leith,
    Lorenz,
    Dk,
    StroeRoyer,
}

impl ErrorModelKind {
    pub const ALL: [ErrorModelKind; 4] = [
        ErrorModelKind::Leith,
        ErrorModelKind::Lorenz,
        ErrorModelKind::Dk,
        ErrorModelKind::StroeRoyer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorModelKind::Leith => "leith",
            ErrorModelKind::Lorenz => "lorenz",
            ErrorModelKind::Dk => "dk",
            ErrorModelKind::StroeRoyer => "stroe_royer",
        }
    }

    pub fn rhs(self, p: &ErrorGrowthParams, v: f64) -> f64 {
        match self {
            ErrorModelKind::Leith => p.alpha * v + p.s,
            ErrorModelKind::Lorenz => {
                let v = v.max(0.0);
                2.0 * p.a_lorenz * p.v_inf.sqrt() * v * (1.0 - (v / p.v_inf).sqrt())
            }
            ErrorModelKind::Dk => (p.alpha * v + p.s) * (1.0 - v / p.v_inf),
            ErrorModelKind::StroeRoyer => {
                if v <= 0.0 {
                    0.0
                } else {
                    -p.a_lorenz * v * (v / p.v_inf).ln()
                }
            }
        }
    }

    fn check(self, p: &ErrorGrowthParams) -> Result<()> {
        let finite = [p.alpha, p.s, p.v_inf, p.a_lorenz, p.v0].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidErrorModel("parameters must be finite".into()));
        }
        if !(p.v0 >= 0.0) {
            return Err(Error::InvalidErrorModel(format!("V0 must be nonnegative, got {}", p.v0)));
        }
        if self != ErrorModelKind::Leith {
            if !(p.v_inf > 0.0) {
                return Err(Error::InvalidErrorModel(format!("V_inf must be positive, got {}", p.v_inf)));
            }
            if p.v0 > p.v_inf {
                return Err(Error::InvalidErrorModel(format!(
                    "V0 = {} exceeds V_inf = {}",
                    p.v0, p.v_inf
                )));
            }
        }
        if self == ErrorModelKind::StroeRoyer && p.v0 == 0.0 {
            return Err(Error::SingularInitialCondition(
                "stroe_royer needs V0 > 0 (log singularity at zero)".into(),
            ));
        }
        Ok(())
    }
}

/// `(V₀ + S/α) e^{αt} - S/α`; the α → 0 limit `V₀ + S t` when α = 0.
pub fn leith_closed_form(t: f64, p: &ErrorGrowthParams) -> f64 {
    if p.alpha == 0.0 {
        return p.v0 + p.s * t;
    }
    (p.v0 + p.s / p.alpha) * (p.alpha * t).exp() - p.s / p.alpha
}

#[inline]
fn rk4(kind: ErrorModelKind, p: &ErrorGrowthParams, v: f64, h: f64) -> f64 {
    let k1 = kind.rhs(p, v);
    let k2 = kind.rhs(p, v + 0.5 * h * k1);
    let k3 = kind.rhs(p, v + 0.5 * h * k2);
    let k4 = kind.rhs(p, v + h * k3);
    v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Fixed-step RK4 on `[0, t_end]`.
pub fn integrate_error_model(kind: ErrorModelKind, p: &ErrorGrowthParams, t_end: f64, dt: f64) -> Result<ErrorSeries> {
    kind.check(p)?;
    let steps = grid_steps(dt, t_end).map_err(|e| Error::InvalidErrorModel(e.to_string()))?;
    let mut values = Vec::with_capacity(steps + 1);
    let mut v = p.v0;
    values.push(v);
    for _ in 0..steps {
        v = rk4(kind, p, v, dt);
        values.push(v);
    }
    Ok(ErrorSeries {
        times: (0..=steps).map(|k| k as f64 * dt).collect(),
        values,
    })
}

/// Perfect (S = 0) and imperfect (S = `s_imperfect`) model curves on one grid.
/// Lorenz has no systematic-error term, so it appears only once.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelComparison {
    pub times: Vec<f64>,
    pub leith_s0: Vec<f64>,
    pub lorenz_s0: Vec<f64>,
    pub dk_s0: Vec<f64>,
    pub leith_s6: Vec<f64>,
    pub dk_s6: Vec<f64>,
}

impl ModelComparison {
    /// `t,leith_s0,lorenz_s0,dk_s0,leith_s6,dk_s6`.
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["t", "leith_s0", "lorenz_s0", "dk_s0", "leith_s6", "dk_s6"]);
        for k in 0..self.times.len() {
            t.row(&[
                self.times[k],
                self.leith_s0[k],
                self.lorenz_s0[k],
                self.dk_s0[k],
                self.leith_s6[k],
                self.dk_s6[k],
            ]);
        }
        t
    }
}

pub fn compare_models(base: &ErrorGrowthParams, s_imperfect: f64, t_end: f64, dt: f64) -> Result<ModelComparison> {
    let perfect = ErrorGrowthParams { s: 0.0, ..*base };
    let imperfect = ErrorGrowthParams { s: s_imperfect, ..*base };
    let run = |kind, p: &ErrorGrowthParams| integrate_error_model(kind, p, t_end, dt);
    let leith_s0 = run(ErrorModelKind::Leith, &perfect)?;
    Ok(ModelComparison {
        lorenz_s0: run(ErrorModelKind::Lorenz, &perfect)?.values,
        dk_s0: run(ErrorModelKind::Dk, &perfect)?.values,
        leith_s6: run(ErrorModelKind::Leith, &imperfect)?.values,
        dk_s6: run(ErrorModelKind::Dk, &imperfect)?.values,
        times: leith_s0.times,
        leith_s0: leith_s0.values,
    })
}

/// First grid time at which `series` reaches `level`, if ever.
pub fn first_crossing(series: &ErrorSeries, level: f64) -> Option<f64> {
    series
        .values
        .iter()
        .position(|v| *v >= level)
        .map(|k| series.times[k])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorModelFit {
    pub kind: ErrorModelKind,
    pub params: ErrorGrowthParams,
    pub rms_residual: f64,
    /// False when every start exhausted its evaluation budget.
    pub converged: bool,
    /// The growth coefficient collapsed to the zero boundary.
    pub degenerate: bool,
}

const FIT_STARTS: usize = 8;
const FIT_MAX_EVALS: usize = 4000;
const FIT_SUBSTEP: f64 = 1e-2;

/// Maps unconstrained coordinates to parameters: rates and saturation levels
/// through `exp`, systematic error through a square so zero is reachable.
fn decode(kind: ErrorModelKind, theta: &[f64], v0: f64) -> ErrorGrowthParams {
    let mut p = ErrorGrowthParams {
        alpha: 0.0,
        s: 0.0,
        v_inf: f64::INFINITY,
        a_lorenz: 0.0,
        v0,
    };
    match kind {
        ErrorModelKind::Leith => {
            p.alpha = theta[0].exp();
            p.s = theta[1] * theta[1];
        }
        ErrorModelKind::Dk => {
            p.alpha = theta[0].exp();
            p.s = theta[1] * theta[1];
            p.v_inf = theta[2].exp();
        }
        ErrorModelKind::Lorenz | ErrorModelKind::StroeRoyer => {
            p.a_lorenz = theta[0].exp();
            p.v_inf = theta[1].exp();
        }
    }
    p
}

/// Model values at `times`, integrated from `(times[0], v0)`.
fn predict(kind: ErrorModelKind, p: &ErrorGrowthParams, times: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut v = p.v0;
    out.push(v);
    for w in times.windows(2) {
        let span = w[1] - w[0];
        let n = (span / FIT_SUBSTEP).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for _ in 0..n {
            v = rk4(kind, p, v, h);
        }
        out.push(v);
    }
    out
}

fn rms(pred: &[f64], obs: &[f64]) -> f64 {
    let s: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    let r = (s / obs.len() as f64).sqrt();
    if r.is_finite() {
        r
    } else {
        f64::MAX
    }
}

/// Least-squares fit of the free parameters of `kind` to `(times, values)`.
///
/// Free parameters: leith (α, S), dk (α, S, V∞), lorenz (a, V∞),
/// stroe_royer (a, V∞); V₀ is pinned to the first observation. Nelder-Mead on
/// the RMS residual from `FIT_STARTS` seeded starting simplexes; the best
/// result is polished by one restart.
pub fn fit_error_model(kind: ErrorModelKind, times: &[f64], values: &[f64], seed: u64) -> Result<ErrorModelFit> {
    if times.len() < 4 || times.len() != values.len() {
        return Err(Error::InvalidErrorModel(format!(
            "need at least 4 (t, V) pairs of equal length, got {} and {}",
            times.len(),
            values.len()
        )));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidErrorModel("observed values must be positive".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidErrorModel("times must be strictly increasing".into()));
    }
    let v0 = values[0];
    let span = times[times.len() - 1] - times[0];
    let vmax = values.iter().cloned().fold(0.0, f64::max);
    let k = times.len().min(4);
    let early_rate = ((values[k - 1] / v0).ln() / (times[k - 1] - times[0])).max(1e-2);

    let objective = |theta: &[f64]| {
        let p = decode(kind, theta, v0);
        if kind != ErrorModelKind::Leith && p.v_inf < v0 {
            return f64::MAX;
        }
        rms(&predict(kind, &p, times), values)
    };

    let guess: Vec<f64> = match kind {
        ErrorModelKind::Leith => vec![early_rate.ln(), (0.1 * v0 * early_rate).sqrt()],
        ErrorModelKind::Dk => vec![early_rate.ln(), (0.1 * v0 * early_rate).sqrt(), (1.2 * vmax).ln()],
        ErrorModelKind::Lorenz => {
            let v_inf = 1.2 * vmax;
            vec![matched_lorenz_coefficient(early_rate, v_inf).ln(), v_inf.ln()]
        }
        ErrorModelKind::StroeRoyer => {
            let v_inf = 1.2 * vmax;
            let a = early_rate / (v_inf / v0).ln().max(1e-3);
            vec![a.ln(), v_inf.ln()]
        }
    };

    let mut rng = rng::stream(seed, StreamTag::Fitting, 0);
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for start in 0..FIT_STARTS {
        let x0: Vec<f64> = if start == 0 {
            guess.clone()
        } else {
            guess.iter().map(|g| g + rng.random_range(-1.0..1.0)).collect()
        };
        let (x, f, converged) = nelder_mead(&objective, &x0, 0.5, FIT_MAX_EVALS);
        if best.as_ref().map_or(true, |b| f < b.1) {
            best = Some((x, f, converged));
        }
    }
    let (x, f, converged) = best.expect("at least one start");
    let (x, f, converged) = {
        let (x2, f2, c2) = nelder_mead(&objective, &x, 0.05, FIT_MAX_EVALS);
        if f2 <= f {
            (x2, f2, c2 || converged)
        } else {
            (x, f, converged)
        }
    };
    let params = decode(kind, &x, v0);
    let rate = match kind {
        ErrorModelKind::Leith | ErrorModelKind::Dk => params.alpha,
        ErrorModelKind::Lorenz => 2.0 * params.a_lorenz * params.v_inf.sqrt(),
        ErrorModelKind::StroeRoyer => params.a_lorenz,
    };
    Ok(ErrorModelFit {
        kind,
        params,
        rms_residual: f,
        converged,
        degenerate: rate * span < 1e-3,
    })
}

/// Plain Nelder-Mead (reflection 1, expansion 2, contraction ½, shrink ½).
/// Returns the best vertex, its value, and whether the tolerance was met.
fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64, bool) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut evals = n + 1;
    let centroid_of = |simplex: &[Vec<f64>], skip: usize| {
        let mut c = vec![0.0; n];
        for (i, x) in simplex.iter().enumerate() {
            if i != skip {
                for (cj, xj) in c.iter_mut().zip(x) {
                    *cj += xj / n as f64;
                }
            }
        }
        c
    };
    let along = |c: &[f64], x: &[f64], t: f64| -> Vec<f64> { c.iter().zip(x).map(|(ci, xi)| ci + t * (xi - ci)).collect() };

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= 1e-14 * (1.0 + values[0].abs()) && size < 1e-10 {
            return (simplex[0].clone(), values[0], true);
        }

        let c = centroid_of(&simplex, n);
        let xr = along(&c, &simplex[n], -1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(&c, &simplex[n], -2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(&c, &simplex[n], -0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(&c, &simplex[n], 0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = along(&simplex[0], &simplex[i], 0.5);
                    values[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[best].clone(), values[best], false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ErrorGrowthParams {
        ErrorGrowthParams::comparison_defaults()
    }

    #[test]
    fn leith_closed_form_examples() {
        let p = base();
        assert_eq!(leith_closed_form(0.0, &p), 1.0);
        assert!((leith_closed_form(1.0, &p) - std::f64::consts::E).abs() < 1e-12);
        let p6 = ErrorGrowthParams { s: 6.0, ..p };
        assert!((leith_closed_form(1.0, &p6) - (7.0 * std::f64::consts::E - 6.0)).abs() < 1e-12);
        assert!((leith_closed_form(1.0, &p6) - 13.0280).abs() < 1e-4);
    }

    #[test]
    fn integrated_leith_matches_closed_form() {
        let p = ErrorGrowthParams { s: 6.0, ..base() };
        let s = integrate_error_model(ErrorModelKind::Leith, &p, 3.0, 1e-3).unwrap();
        assert!((s.values.last().unwrap() - leith_closed_form(3.0, &p)).abs() / leith_closed_form(3.0, &p) < 1e-12);
    }

    #[test]
    fn saturation_is_a_fixed_point() {
        for kind in [ErrorModelKind::Lorenz, ErrorModelKind::Dk, ErrorModelKind::StroeRoyer] {
            let p = ErrorGrowthParams { v0: 100.0, s: 6.0, a_lorenz: 0.05, ..base() };
            assert!(kind.rhs(&p, p.v_inf).abs() < 1e-12, "{kind:?}");
            let s = integrate_error_model(kind, &p, 5.0, 1e-2).unwrap();
            assert!(s.values.iter().all(|v| (v - 100.0).abs() < 1e-10));
        }
    }

    #[test]
    fn stroe_royer_rejects_zero_initial_error() {
        let p = ErrorGrowthParams { v0: 0.0, ..base() };
        assert!(matches!(
            integrate_error_model(ErrorModelKind::StroeRoyer, &p, 1.0, 1e-2),
            Err(Error::SingularInitialCondition(_))
        ));
        assert!(integrate_error_model(ErrorModelKind::Dk, &p, 1.0, 1e-2).is_ok());
    }

    #[test]
    fn initial_error_above_saturation_is_rejected() {
        let p = ErrorGrowthParams { v0: 200.0, ..base() };
        assert!(integrate_error_model(ErrorModelKind::Dk, &p, 1.0, 1e-2).is_err());
    }

    #[test]
    fn matched_lorenz_slope_agrees_with_leith_when_far_from_saturation() {
        // Lorenz's initial slope is α V₀ (1 - √(V₀/V∞)); the match is within
        // 2 % once V₀/V∞ ≤ 4e-4.
        let p = ErrorGrowthParams { v0: 0.01, ..base() };
        let lorenz = ErrorModelKind::Lorenz.rhs(&p, p.v0);
        let leith = ErrorModelKind::Leith.rhs(&p, p.v0);
        assert!((lorenz - leith).abs() / leith < 0.02);
        // At the comparison point V₀ = 1, V∞ = 100 the slopes differ by exactly 10 %.
        let p = base();
        let ratio = ErrorModelKind::Lorenz.rhs(&p, 1.0) / ErrorModelKind::Leith.rhs(&p, 1.0);
        assert!((ratio - 0.9).abs() < 1e-12);
    }

    #[test]
    fn dk_saturates_before_lorenz() {
        let p = base();
        let dk = integrate_error_model(ErrorModelKind::Dk, &p, 20.0, 1e-3).unwrap();
        let lz = integrate_error_model(ErrorModelKind::Lorenz, &p, 20.0, 1e-3).unwrap();
        let tdk = first_crossing(&dk, 99.0).unwrap();
        let tlz = first_crossing(&lz, 99.0).unwrap();
        assert!(tdk < tlz, "{tdk} vs {tlz}");
    }

    #[test]
    fn dk_with_huge_saturation_is_leith() {
        let p = ErrorGrowthParams { v_inf: 1e9, s: 6.0, ..base() };
        let dk = integrate_error_model(ErrorModelKind::Dk, &p, 5.0, 1e-3).unwrap();
        for (t, v) in dk.times.iter().zip(&dk.values) {
            let l = leith_closed_form(*t, &p);
            assert!((v - l).abs() / l < 1e-3);
        }
    }

    #[test]
    fn saturating_models_are_monotone() {
        for kind in [ErrorModelKind::Lorenz, ErrorModelKind::Dk, ErrorModelKind::StroeRoyer] {
            for s in [0.0, 6.0] {
                let p = ErrorGrowthParams { s, a_lorenz: 0.3, ..base() };
                let series = integrate_error_model(kind, &p, 30.0, 1e-2).unwrap();
                assert!(series.values.windows(2).all(|w| w[1] >= w[0]), "{kind:?}");
            }
        }
    }

    #[test]
    fn halving_the_step_barely_moves_endpoints() {
        for kind in ErrorModelKind::ALL {
            let p = ErrorGrowthParams { s: 6.0, a_lorenz: 0.05, ..base() };
            let a = integrate_error_model(kind, &p, 10.0, 1e-3).unwrap();
            let b = integrate_error_model(kind, &p, 10.0, 5e-4).unwrap();
            let (x, y) = (a.values.last().unwrap(), b.values.last().unwrap());
            assert!((x - y).abs() / y.abs() < 1e-8, "{kind:?}");
        }
    }

    #[test]
    fn comparison_table_properties() {
        let c = compare_models(&base(), 6.0, 15.0, 1e-2).unwrap();
        let last = c.times.len() - 1;
        assert!(c.leith_s0[last] > 100.0 && c.leith_s0.windows(2).all(|w| w[1] > w[0]));
        assert!((c.dk_s0[last] - 100.0).abs() < 1.0);
        assert!((c.lorenz_s0[last] - 100.0).abs() < 1.0);
        for k in 1..c.times.len() {
            assert!(c.leith_s6[k] > c.leith_s0[k]);
            assert!(c.dk_s6[k] > c.dk_s0[k]);
        }
        // Short-term agreement: DK tracks Leith within 10 % up to t = 1; the
        // matched Lorenz curve starts 10 % slower and lags by ~12 % at t = 1.
        for k in 0..=100 {
            assert!((c.dk_s0[k] - c.leith_s0[k]).abs() / c.leith_s0[k] < 0.1);
            assert!((c.lorenz_s0[k] - c.leith_s0[k]).abs() / c.leith_s0[k] < 0.13);
        }
        let csv = c.to_csv().into_string();
        assert!(csv.starts_with("t,leith_s0,lorenz_s0,dk_s0,leith_s6,dk_s6\n"));
    }

    fn sample(kind: ErrorModelKind, p: &ErrorGrowthParams, n: usize, t_end: f64) -> (Vec<f64>, Vec<f64>) {
        let dt = 1e-3;
        let series = integrate_error_model(kind, p, t_end, dt).unwrap();
        let stride = series.times.len() / n;
        (0..n).map(|i| (series.times[i * stride], series.values[i * stride])).unzip()
    }

    #[test]
    fn dk_round_trip_fit_recovers_parameters() {
        let truth = ErrorGrowthParams { s: 6.0, ..base() };
        let (t, v) = sample(ErrorModelKind::Dk, &truth, 50, 10.0);
        let fit = fit_error_model(ErrorModelKind::Dk, &t, &v, 1).unwrap();
        assert!((fit.params.alpha - 1.0).abs() < 0.01, "{fit:?}");
        assert!((fit.params.s - 6.0).abs() / 6.0 < 0.01, "{fit:?}");
        assert!((fit.params.v_inf - 100.0).abs() / 100.0 < 0.01, "{fit:?}");
    }

    #[test]
    fn other_kinds_round_trip() {
        let truth = ErrorGrowthParams { a_lorenz: 0.05, ..base() };
        let (t, v) = sample(ErrorModelKind::Lorenz, &truth, 40, 15.0);
        let fit = fit_error_model(ErrorModelKind::Lorenz, &t, &v, 2).unwrap();
        assert!((fit.params.a_lorenz - 0.05).abs() / 0.05 < 0.01, "{fit:?}");
        assert!((fit.params.v_inf - 100.0).abs() / 100.0 < 0.01, "{fit:?}");

        let truth = ErrorGrowthParams { a_lorenz: 0.3, ..base() };
        let (t, v) = sample(ErrorModelKind::StroeRoyer, &truth, 40, 15.0);
        let fit = fit_error_model(ErrorModelKind::StroeRoyer, &t, &v, 3).unwrap();
        assert!((fit.params.a_lorenz - 0.3).abs() / 0.3 < 0.01, "{fit:?}");

        let truth = ErrorGrowthParams { alpha: 0.7, s: 2.0, ..base() };
        let (t, v) = sample(ErrorModelKind::Leith, &truth, 20, 4.0);
        let fit = fit_error_model(ErrorModelKind::Leith, &t, &v, 4).unwrap();
        assert!((fit.params.alpha - 0.7).abs() / 0.7 < 0.01, "{fit:?}");
        assert!((fit.params.s - 2.0).abs() / 2.0 < 0.01, "{fit:?}");
    }

    #[test]
    fn constant_series_is_flagged_degenerate() {
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let v = vec![5.0; 10];
        let fit = fit_error_model(ErrorModelKind::Leith, &t, &v, 0).unwrap();
        assert!(fit.degenerate, "{fit:?}");
        assert!(fit.rms_residual < 1e-2);
    }

    #[test]
    fn fit_input_validation() {
        assert!(fit_error_model(ErrorModelKind::Dk, &[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0], 0).is_err());
        assert!(fit_error_model(ErrorModelKind::Dk, &[0.0, 1.0, 2.0, 3.0], &[1.0, -2.0, 3.0, 4.0], 0).is_err());
    }
}
