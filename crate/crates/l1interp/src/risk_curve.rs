//! Sweeps over the aspect ratio: the analytic derivative nu'(delta) via the
//! implicit-function formula, descent/ascent regime tags, and the closed-form
//! limit curves (zero-estimator risk, the eps -> 0 curve H, the l2 interpolator,
//! and the OLS branch for delta > 1).

use crate::fixed_point::{
    solve_interpolator, FixedPointSolution, SolverConfig, SolverError, SparseContext,
};
use crate::prior::SparseModel;
use crate::special::{g_fn, norm_cdf, norm_cdf_inv, phi};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RiskCurveError {
    #[error("derivative denominator {0} is numerically singular")]
    SingularDerivative(f64),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Partial derivatives of F1 or F2 with respect to (nu, delta, alpha).
#[derive(Debug, Clone, Copy)]
pub struct Partials {
    pub d_nu: f64,
    pub d_delta: f64,
    pub d_alpha: f64,
}

/// Closed-form gradient of F1 at (nu, delta, alpha).
pub fn partials_f1(ctx: &SparseContext, nu: f64, delta: f64, alpha: f64) -> Partials {
    let (eps, a) = (ctx.eps, alpha);
    let b = delta.sqrt() * nu;
    let diff = phi(a - b) - phi(a + b);
    Partials {
        d_nu: eps * delta.sqrt() * diff,
        d_delta: eps * nu / (2.0 * delta.sqrt()) * diff - 1.0,
        d_alpha: -eps * (phi(a - b) + phi(a + b)) - 2.0 * (1.0 - eps) * phi(a),
    }
}

/// Closed-form gradient of F2 at (nu, delta, alpha).
pub fn partials_f2(ctx: &SparseContext, nu: f64, delta: f64, alpha: f64) -> Partials {
    let (eps, m, a) = (ctx.eps, ctx.m, alpha);
    let b = delta.sqrt() * nu;
    let phi_sum = phi(a + b) + phi(a - b);
    let cdf_sum = norm_cdf(-a - b) + norm_cdf(-a + b);
    let d_alpha_f22 = -2.0 * phi_sum + 2.0 * a * cdf_sum;
    let d_alpha_f23 = -4.0 * g_fn(a);
    let d_alpha = eps / delta * d_alpha_f22 + (1.0 - eps) / delta * d_alpha_f23;
    // F22 - delta * dF22/ddelta collapses to a b-symmetric form
    let f22_minus = -(a - b) * phi(a + b) - (a + b) * phi(a - b) + (a * a + 1.0) * cdf_sum;
    let d_delta = -eps / (delta * delta) * f22_minus
        - (1.0 - eps) / (delta * delta) * SparseContext::f23(a);
    let d_nu_f22 = 2.0 * nu * delta * (norm_cdf(a - b) - norm_cdf(-a - b));
    let d_nu = 2.0 * nu / (m * m) + eps / delta * d_nu_f22;
    Partials { d_nu, d_delta, d_alpha }
}

/// nu*'(delta) by the implicit-function formula
///   - (dF2/ddelta dF1/dalpha - dF2/dalpha dF1/ddelta)
///     / (dF2/dnu dF1/dalpha - dF2/dalpha dF1/dnu),
/// with all partials at the solution point.
pub fn nu_prime(
    ctx: &SparseContext,
    delta: f64,
    solution: &FixedPointSolution,
) -> Result<f64, RiskCurveError> {
    let nu = solution
        .nu_star
        .expect("nu_prime requires a sparse-prior solution");
    let alpha = solution.alpha_star;
    let p1 = partials_f1(ctx, nu, delta, alpha);
    let p2 = partials_f2(ctx, nu, delta, alpha);
    let numerator = p2.d_delta * p1.d_alpha - p2.d_alpha * p1.d_delta;
    let denominator = p2.d_nu * p1.d_alpha - p2.d_alpha * p1.d_nu;
    if denominator.abs() < 1e-14 {
        return Err(RiskCurveError::SingularDerivative(denominator));
    }
    Ok(-numerator / denominator)
}

/// Numerator and denominator of the nu'(delta) formula separately (used by
/// the small-delta asymptote diagnostics).
pub fn nu_prime_parts(ctx: &SparseContext, nu: f64, delta: f64, alpha: f64) -> (f64, f64) {
    let p1 = partials_f1(ctx, nu, delta, alpha);
    let p2 = partials_f2(ctx, nu, delta, alpha);
    (
        p2.d_delta * p1.d_alpha - p2.d_alpha * p1.d_delta,
        p2.d_nu * p1.d_alpha - p2.d_alpha * p1.d_nu,
    )
}

/// Risk-curve regime as a function of the over-parameterization ratio p/n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// risk decreasing in p/n (nu*'(delta) < 0)
    Descending,
    /// risk increasing in p/n
    Ascending,
}

#[derive(Debug, Clone)]
pub struct RiskPoint {
    pub delta: f64,
    pub overparam_ratio: f64,
    pub tau_sq: f64,
    pub alpha: f64,
    pub nu: f64,
    pub nu_prime: Option<f64>,
    pub regime: Regime,
}

#[derive(Debug, Clone)]
pub struct RiskCurve {
    pub points: Vec<RiskPoint>,
    pub model: SparseModel,
    /// grid points where the solver failed, with the error text
    pub failures: Vec<(f64, String)>,
}

impl RiskCurve {
    /// Count of interior sign alternations of the slope of tau*^2 vs p/n.
    pub fn regime_alternations(&self) -> usize {
        self.points
            .windows(2)
            .filter(|w| w[0].regime != w[1].regime)
            .count()
    }

    /// Interior local maxima and minima of tau*^2 as a function of p/n.
    /// Points are ordered by increasing delta, i.e. decreasing p/n, so a
    /// Descending->Ascending switch (read along increasing delta) marks a
    /// local minimum in p/n.
    pub fn extrema_in_overparam(&self) -> (usize, usize) {
        let mut maxima = 0;
        let mut minima = 0;
        for w in self.points.windows(2) {
            match (w[0].regime, w[1].regime) {
                (Regime::Descending, Regime::Ascending) => minima += 1,
                (Regime::Ascending, Regime::Descending) => maxima += 1,
                _ => {}
            }
        }
        (maxima, minima)
    }

    pub fn csv_header() -> &'static str {
        "delta,inv_delta,tau_sq,alpha,nu,nu_prime,regime"
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.points
            .iter()
            .map(|p| {
                format!(
                    "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{}",
                    p.delta,
                    p.overparam_ratio,
                    p.tau_sq,
                    p.alpha,
                    p.nu,
                    p.nu_prime.map_or_else(|| "nan".to_string(), |v| format!("{v:.12e}")),
                    match p.regime {
                        Regime::Descending => "descending",
                        Regime::Ascending => "ascending",
                    }
                )
            })
            .collect()
    }
}

/// deltas corresponding to a log-spaced grid of 1/delta = p/n in [lo, hi],
/// returned in increasing delta order.
pub fn log_grid_inv_delta(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (l0, l1) = (lo.ln(), hi.ln());
    let mut deltas: Vec<f64> = (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            1.0 / (l0 + t * (l1 - l0)).exp()
        })
        .collect();
    deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    deltas
}

/// Per-point solve + analytic derivative + regime tag over a delta grid.
/// The sparse prior is rebuilt per grid point (the M sqrt(delta) scaling).
/// Grid points are independent and solved in parallel; solver failures are
/// recorded and skipped.
pub fn sweep(model: &SparseModel, deltas: &[f64], cfg: &SolverConfig) -> RiskCurve {
    let mut sorted: Vec<f64> = deltas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ctx = SparseContext::normalized(model.eps, model.m, model.sigma);
    let results: Vec<(f64, Result<RiskPoint, String>)> = sorted
        .par_iter()
        .map(|&delta| {
            let out = (|| -> Result<RiskPoint, String> {
                let params = model.params_at(delta).map_err(|e| e.to_string())?;
                let sol = solve_interpolator(&params, cfg).map_err(|e| e.to_string())?;
                let np = nu_prime(&ctx, delta, &sol).ok();
                let regime = match np {
                    Some(v) if v >= 0.0 => Regime::Ascending,
                    _ => Regime::Descending,
                };
                Ok(RiskPoint {
                    delta,
                    overparam_ratio: 1.0 / delta,
                    tau_sq: sol.risk(),
                    alpha: sol.alpha_star,
                    nu: sol.nu_star.unwrap_or(model.m / sol.tau_star),
                    nu_prime: np,
                    regime,
                })
            })();
            (delta, out)
        })
        .collect();
    let mut points = Vec::with_capacity(sorted.len());
    let mut failures = Vec::new();
    for (delta, r) in results {
        match r {
            Ok(p) => points.push(p),
            Err(e) => failures.push((delta, e)),
        }
    }
    RiskCurve { points, model: *model, failures }
}

/// H(delta) = sqrt((a phi(a) - a^2 Phi(-a)) / Phi(-a)) with a = -Phi^{-1}(delta/2):
/// the eps -> 0 limit of nu*/M at fixed SNR. Decreasing on (0,1), with
/// H -> 1 as delta -> 0+ and H -> 0 as delta -> 1-.
pub fn h_fn(delta: f64) -> f64 {
    assert!(delta > 0.0 && delta < 1.0, "h_fn requires delta in (0,1), got {delta}");
    let a = -norm_cdf_inv(delta / 2.0).expect("delta/2 in (0,1/2)");
    let tail = norm_cdf(-a);
    ((a * phi(a) - a * a * tail) / tail).max(0.0).sqrt()
}

/// The eps -> 0 limits at fixed delta: alpha* -> alpha0 = -Phi^{-1}(delta/2)
/// and nu*/M -> sqrt(1 - (2/delta)[-alpha0 phi(alpha0) + (alpha0^2 + 1) Phi(-alpha0)]).
/// Depends on delta alone.
pub fn eps_to_zero_limits(delta: f64) -> (f64, f64) {
    assert!(delta > 0.0 && delta < 1.0);
    let a0 = -norm_cdf_inv(delta / 2.0).expect("delta/2 in (0,1/2)");
    let inner = 1.0 - 2.0 / delta * (-a0 * phi(a0) + (a0 * a0 + 1.0) * norm_cdf(-a0));
    (a0, inner.max(0.0).sqrt())
}

/// OLS branch of the lambda -> 0 Lasso limit for delta > 1: delta sigma^2 / (delta - 1).
pub fn ols_limit(delta: f64, sigma: f64) -> f64 {
    assert!(delta > 1.0, "ols_limit requires delta > 1, got {delta}");
    delta * sigma * sigma / (delta - 1.0)
}

/// Asymptotic risk of the minimum l2-norm (ridgeless) interpolator under the
/// sparse model: eps M^2 (1 - delta) + sigma^2/(1 - delta) for delta < 1,
/// and the OLS value for delta > 1. delta = 1 rejected.
pub fn l2_interpolator_risk(delta: f64, eps: f64, m: f64, sigma: f64) -> f64 {
    assert!(delta > 0.0 && delta != 1.0, "l2 risk undefined at delta = 1");
    if delta > 1.0 {
        ols_limit(delta, sigma)
    } else {
        eps * m * m * (1.0 - delta) + sigma * sigma / (1.0 - delta)
    }
}

/// One row of the small-delta asymptote diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct AsymptoteRow {
    pub delta: f64,
    pub alpha_star: f64,
    pub nu_star: f64,
    /// delta alpha*/phi(alpha*), approaching 2
    pub delta_alpha_over_phi: f64,
    /// numerator of nu'(delta) times alpha*^3
    pub numerator_alpha_cubed: f64,
    /// denominator of nu'(delta) times -nu0/(4 phi(alpha*)), approaching 1
    pub denominator_scaled: f64,
}

/// Evaluate the delta -> 0+ asymptote diagnostics along a grid of small deltas.
pub fn asymptote_report(
    model: &SparseModel,
    deltas: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<AsymptoteRow>, RiskCurveError> {
    let ctx = SparseContext::normalized(model.eps, model.m, model.sigma);
    let nu0 = ctx.m / (1.0 + ctx.eps * ctx.m * ctx.m).sqrt();
    deltas
        .iter()
        .map(|&delta| {
            let sol = solve_interpolator(&model.params_at(delta).unwrap(), cfg)?;
            let (nu, a) = (sol.nu_star.unwrap(), sol.alpha_star);
            let (num, den) = nu_prime_parts(&ctx, nu, delta, a);
            Ok(AsymptoteRow {
                delta,
                alpha_star: a,
                nu_star: nu,
                delta_alpha_over_phi: delta * a / phi(a),
                numerator_alpha_cubed: num * a.powi(3),
                denominator_scaled: den * (-nu0 / (4.0 * phi(a))),
            })
        })
        .collect()
}

/// Smallest epsilon whose sweep still shows an ascending regime, located by
/// bisection on the predicate "the sweep has an interior ascending regime"
/// at fixed SNR. The returned value is an empirical boundary on the probe
/// grid, not a closed form.
pub fn epsilon_star(
    snr: f64,
    sigma: f64,
    deltas: &[f64],
    cfg: &SolverConfig,
    tol: f64,
) -> f64 {
    let has_ascent = |eps: f64| -> bool {
        let model = match SparseModel::from_snr(eps, snr, sigma) {
            Ok(m) => m,
            Err(_) => return false,
        };
        sweep(&model, deltas, cfg)
            .points
            .iter()
            .any(|p| p.regime == Regime::Ascending)
    };
    let mut lo = 1e-4; // ascending expected
    let mut hi = 1.0; // single descent expected
    if !has_ascent(lo) {
        return lo;
    }
    if has_ascent(hi) {
        return hi;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if has_ascent(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_point::solve_interpolator;

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn partials_match_finite_differences() {
        let ctx = SparseContext { eps: 0.2, m: 3.0 };
        let mut st = 99u64;
        for _ in 0..60 {
            let nu = 0.2 + 2.0 * lcg(&mut st);
            let d = 0.1 + 0.8 * lcg(&mut st);
            let a = 0.2 + 2.0 * lcg(&mut st);
            let p1 = partials_f1(&ctx, nu, d, a);
            let p2 = partials_f2(&ctx, nu, d, a);
            let h = 1e-6;
            let checks = [
                (p1.d_nu, (ctx.f1(nu + h * nu, d, a) - ctx.f1(nu - h * nu, d, a)) / (2.0 * h * nu)),
                (p1.d_delta, (ctx.f1(nu, d + h * d, a) - ctx.f1(nu, d - h * d, a)) / (2.0 * h * d)),
                (p1.d_alpha, (ctx.f1(nu, d, a + h * a) - ctx.f1(nu, d, a - h * a)) / (2.0 * h * a)),
                (p2.d_nu, (ctx.f2(nu + h * nu, d, a) - ctx.f2(nu - h * nu, d, a)) / (2.0 * h * nu)),
                (p2.d_delta, (ctx.f2(nu, d + h * d, a) - ctx.f2(nu, d - h * d, a)) / (2.0 * h * d)),
                (p2.d_alpha, (ctx.f2(nu, d, a + h * a) - ctx.f2(nu, d, a - h * a)) / (2.0 * h * a)),
            ];
            for (i, (analytic, fd)) in checks.iter().enumerate() {
                let scale = analytic.abs().max(1e-6);
                assert!(
                    (analytic - fd).abs() / scale < 1e-5,
                    "partial {i} at (nu={nu}, d={d}, a={a}): analytic {analytic}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn grad_alpha_f1_negative() {
        let ctx = SparseContext { eps: 0.35, m: 2.0 };
        let mut st = 5u64;
        for _ in 0..1000 {
            let nu = 0.05 + 3.0 * lcg(&mut st);
            let d = 0.02 + 0.95 * lcg(&mut st);
            let a = 0.02 + 4.0 * lcg(&mut st);
            assert!(partials_f1(&ctx, nu, d, a).d_alpha < 0.0);
        }
    }

    #[test]
    fn nu_prime_matches_solver_finite_difference() {
        let cfg = SolverConfig::default();
        let model = SparseModel::from_snr(0.3, 10.0, 1.0).unwrap();
        let ctx = SparseContext::normalized(model.eps, model.m, model.sigma);
        for &delta in &[0.05, 0.2, 0.5, 0.8, 0.95] {
            let sol = solve_interpolator(&model.params_at(delta).unwrap(), &cfg).unwrap();
            let analytic = nu_prime(&ctx, delta, &sol).unwrap();
            let h = delta * 1e-4;
            let up = solve_interpolator(&model.params_at(delta + h).unwrap(), &cfg).unwrap();
            let dn = solve_interpolator(&model.params_at(delta - h).unwrap(), &cfg).unwrap();
            let fd = (up.nu_star.unwrap() - dn.nu_star.unwrap()) / (2.0 * h);
            assert!(
                (analytic - fd).abs() / analytic.abs().max(1e-6) < 1e-3,
                "delta={delta}: analytic {analytic}, fd {fd}"
            );
        }
    }

    #[test]
    fn nu_prime_signs() {
        let cfg = SolverConfig::default();
        let model = SparseModel::from_snr(0.3, 10.0, 1.0).unwrap();
        let ctx = SparseContext::normalized(model.eps, model.m, model.sigma);
        for &delta in &[1e-3, 0.99] {
            let sol = solve_interpolator(&model.params_at(delta).unwrap(), &cfg).unwrap();
            assert!(nu_prime(&ctx, delta, &sol).unwrap() < 0.0, "delta={delta}");
        }
        let sol = solve_interpolator(&model.params_at(0.999).unwrap(), &cfg).unwrap();
        assert!(nu_prime(&ctx, 0.999, &sol).unwrap() <= -10.0);
    }

    #[test]
    fn sweep_shapes() {
        let cfg = SolverConfig::default();
        let grid = log_grid_inv_delta(1.01, 100.0, 160);
        // small eps: multi-descent (at least two interior slope alternations)
        let sparse = SparseModel::from_snr(0.01, 2.0, 1.0).unwrap();
        let curve = sweep(&sparse, &grid, &cfg);
        assert!(curve.failures.is_empty(), "{:?}", curve.failures);
        assert!(curve.regime_alternations() >= 2, "alternations = {}", curve.regime_alternations());
        let (maxima, minima) = curve.extrema_in_overparam();
        assert!(maxima >= 1 && minima >= 1);
        // large eps at the same SNR: no ascending regime
        let dense = SparseModel::from_snr(0.5, 2.0, 1.0).unwrap();
        let curve2 = sweep(&dense, &grid, &cfg);
        assert!(curve2.points.iter().all(|p| p.regime == Regime::Descending));
        // deltas strictly increasing and residual-gated points only
        for w in curve.points.windows(2) {
            assert!(w[0].delta < w[1].delta);
        }
        // endpoint: largest p/n (smallest delta) approaches tau0^2 loosely
        let first = &curve.points[0];
        assert!((first.tau_sq / 3.0 - 1.0).abs() < 0.25, "tau_sq={}", first.tau_sq);
    }

    #[test]
    fn support_fraction_identity() {
        // P(|Theta + tau* Z| > alpha* tau*) = delta at every solved point
        use crate::fixed_point::expected_eta_deriv;
        let cfg = SolverConfig::default();
        let model = SparseModel::from_snr(0.05, 4.0, 1.0).unwrap();
        for &delta in &[0.1, 0.25, 0.6, 0.9] {
            let params = model.params_at(delta).unwrap();
            let sol = solve_interpolator(&params, &cfg).unwrap();
            let p = expected_eta_deriv(sol.tau_star, sol.zeta_star, &params.prior);
            assert!((p - delta).abs() < 1e-10, "delta={delta}: P={p}");
        }
    }

    #[test]
    fn h_function_endpoints_and_identity() {
        // limits: H -> 1 (delta -> 0+, approached at a 1/log(1/delta) rate)
        // and H -> 0 (delta -> 1-)
        assert!(h_fn(1e-6) > h_fn(1e-4));
        assert!(h_fn(1.0 - 1e-6) <= 0.02);
        assert!(h_fn(1e-6) < 1.0);
        // decreasing
        let mut prev = f64::INFINITY;
        for &d in &[1e-6, 1e-3, 0.1, 0.3, 0.5, 0.7, 0.9, 0.999] {
            let h = h_fn(d);
            assert!(h < prev);
            prev = h;
        }
        // the two printed forms of the eps -> 0 limit agree
        for i in 1..=10 {
            let d = i as f64 / 11.0;
            let (_, nu_over_m) = eps_to_zero_limits(d);
            assert!((nu_over_m - h_fn(d)).abs() < 1e-10, "d={d}");
        }
        // frozen value
        assert!((h_fn(0.5) - 0.63435932).abs() < 1e-7);
    }

    #[test]
    fn limit_curves() {
        assert_eq!(ols_limit(2.0, 1.0), 2.0);
        // strictly decreasing in delta on (1, inf)
        let mut prev = f64::INFINITY;
        for &d in &[1.01, 1.5, 2.0, 5.0, 50.0] {
            let v = ols_limit(d, 1.0);
            assert!(v < prev);
            prev = v;
        }
        // l2 risk at delta -> 0+ approaches eps M^2 + sigma^2
        let v = l2_interpolator_risk(1e-12, 0.3, 2.0, 1.0);
        assert!((v - (0.3 * 4.0 + 1.0)).abs() < 1e-9);
        assert_eq!(l2_interpolator_risk(2.0, 0.3, 2.0, 1.0), ols_limit(2.0, 1.0));
    }

    #[test]
    fn asymptote_trend() {
        let cfg = SolverConfig::default();
        let model = SparseModel::from_snr(0.3, 10.0, 1.0).unwrap();
        let rows = asymptote_report(&model, &[1e-3, 1e-4, 1e-5], &cfg).unwrap();
        // delta alpha*/phi(alpha*) approaches 2 monotonically on this range
        let dev2: Vec<f64> = rows.iter().map(|r| (r.delta_alpha_over_phi - 2.0).abs()).collect();
        assert!(dev2[2] <= dev2[0], "{dev2:?}");
        // scaled denominator approaches 1
        let dev1: Vec<f64> = rows.iter().map(|r| (r.denominator_scaled - 1.0).abs()).collect();
        assert!(dev1[2] <= dev1[0], "{dev1:?}");
        for r in &rows {
            assert!(r.numerator_alpha_cubed < 0.0);
        }
    }
}
