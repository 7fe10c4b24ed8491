//! Solvers for the nonlinear systems characterizing the asymptotic risk:
//! the interpolator equations, the Lasso equations with positive penalty,
//! and the auxiliary maps alpha_min(delta), tau*(alpha), lambda(alpha).
//!
//! For the two-point sparse prior the system is solved in (nu, alpha)
//! coordinates with nu = M/tau: nu stays bounded as delta -> 1 while tau
//! blows up. The noise scale is normalized away first (the system with
//! (prior, sigma) maps to (prior/sigma, 1) with tau scaled back by sigma;
//! nu and alpha are invariant).

use crate::prior::{ModelParams, Prior};
use crate::special::{norm_cdf, phi, soft_threshold, truncated_second_moment};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("no sign change found for {what} on bracket [{lo}, {hi}] after {doublings} expansions")]
    BracketFailure { what: &'static str, lo: f64, hi: f64, doublings: u32 },
    #[error("aspect ratio delta must lie in (0,1) for this system, got {0}")]
    DeltaDomain(f64),
    #[error("alpha = {alpha} is not above alpha_min(delta) = {alpha_min}")]
    AlphaBelowMin { alpha: f64, alpha_min: f64 },
    #[error("interpolator system requires P(Theta != 0) > 0")]
    ZeroPrior,
    #[error("lambda must be non-negative, got {0}")]
    LambdaDomain(f64),
    #[error("residual gate failed: |F1| = {f1}, |F2| = {f2} exceed {tol}")]
    ResidualGate { f1: f64, f2: f64, tol: f64 },
}

/// Bisection tolerances and bracket policy.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// absolute tolerance on the root variable
    pub root_tol: f64,
    /// residual gate |F1|, |F2| at the returned solution
    pub residual_tol: f64,
    /// cap on bracket-expansion doublings
    pub max_doublings: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { root_tol: 1e-12, residual_tol: 1e-11, max_doublings: 200 }
    }
}

/// Solution of one of the two-unknown systems.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointSolution {
    pub alpha_star: f64,
    pub tau_star: f64,
    /// M/tau*, present for the sparse prior route
    pub nu_star: Option<f64>,
    /// alpha* tau*
    pub zeta_star: f64,
    /// (|F1|, |F2|) at the solution (normalized residuals on the general route)
    pub residuals: (f64, f64),
    pub iterations: u64,
}

impl FixedPointSolution {
    pub fn risk(&self) -> f64 {
        self.tau_star * self.tau_star
    }
}

/// Closed forms of the sparse-prior system in (nu, delta, alpha)
/// coordinates, with sigma normalized to 1 (use `SparseContext::normalized`).
#[derive(Debug, Clone, Copy)]
pub struct SparseContext {
    pub eps: f64,
    pub m: f64,
}

impl SparseContext {
    /// Fold sigma into the magnitude: the (eps, M, sigma) system in nu-alpha
    /// coordinates equals the (eps, M/sigma, 1) system.
    pub fn normalized(eps: f64, m: f64, sigma: f64) -> Self {
        SparseContext { eps, m: m / sigma }
    }

    /// F1 = eps[Phi(-a+b) + Phi(-a-b)] + 2(1-eps)Phi(-a) - delta, b = sqrt(delta) nu.
    pub fn f1(&self, nu: f64, delta: f64, alpha: f64) -> f64 {
        let b = delta.sqrt() * nu;
        self.eps * (norm_cdf(-alpha + b) + norm_cdf(-alpha - b))
            + 2.0 * (1.0 - self.eps) * norm_cdf(-alpha)
            - delta
    }

    /// F22 = E[(eta(b+Z; a) - b)^2], b = sqrt(delta) nu, in closed form.
    pub fn f22(nu: f64, delta: f64, alpha: f64) -> f64 {
        let (a, b) = (alpha, delta.sqrt() * nu);
        (b - a) * phi(a + b) + (-b - a) * phi(a - b)
            + (a * a + 1.0 - b * b) * (norm_cdf(-a - b) + norm_cdf(-a + b))
            + b * b
    }

    /// F23 = E[eta(Z; a)^2] = 2[-a phi(a) + (a^2+1) Phi(-a)].
    pub fn f23(alpha: f64) -> f64 {
        2.0 * (-alpha * phi(alpha) + (alpha * alpha + 1.0) * norm_cdf(-alpha))
    }

    /// F2 = nu^2/M^2 - 1 + (eps/delta) F22 + ((1-eps)/delta) F23.
    pub fn f2(&self, nu: f64, delta: f64, alpha: f64) -> f64 {
        nu * nu / (self.m * self.m) - 1.0
            + self.eps / delta * Self::f22(nu, delta, alpha)
            + (1.0 - self.eps) / delta * Self::f23(alpha)
    }

    /// Unique root of F1 in alpha (F1 is strictly decreasing in alpha, with
    /// F1 -> 1 - delta > 0 at 0+ and -delta < 0 at infinity).
    pub fn solve_alpha(
        &self,
        nu: f64,
        delta: f64,
        cfg: &SolverConfig,
    ) -> Result<f64, SolverError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(SolverError::DeltaDomain(delta));
        }
        let lo = 0.0;
        let mut hi = 1.0;
        let mut doublings = 0;
        while self.f1(nu, delta, hi) > 0.0 {
            hi *= 2.0;
            doublings += 1;
            if doublings > cfg.max_doublings {
                return Err(SolverError::BracketFailure {
                    what: "F1 root in alpha",
                    lo,
                    hi,
                    doublings,
                });
            }
        }
        Ok(bisect(lo, hi, cfg.root_tol * 0.01, |a| self.f1(nu, delta, a)))
    }

    /// F3(nu, delta) = F2 at the F1-eliminating alpha.
    pub fn f3(&self, nu: f64, delta: f64, cfg: &SolverConfig) -> Result<f64, SolverError> {
        Ok(self.f2(nu, delta, self.solve_alpha(nu, delta, cfg)?, ))
    }
}

// plain bisection on a bracket with f(lo) > 0 > f(hi) or f(lo) < 0 < f(hi)
fn bisect<F: Fn(f64) -> f64>(mut lo: f64, mut hi: f64, tol: f64, f: F) -> f64 {
    let rising = f(lo) < 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < tol {
            return mid;
        }
        let v = f(mid);
        if (v < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// E[(eta(v + tau Z; zeta) - v)^2] in closed form for a single atom value v.
fn atom_denoise_mse(v: f64, tau: f64, zeta: f64) -> f64 {
    if tau == 0.0 {
        let e = soft_threshold(v, zeta) - v;
        return e * e;
    }
    let a = zeta / tau;
    let r = v / tau;
    tau * tau * (truncated_second_moment(a, a - r) + truncated_second_moment(a, a + r))
        + v * v * (norm_cdf(a - r) - norm_cdf(-a - r))
}

/// State-evolution map F(tau^2, zeta) = sigma^2 + (1/delta) E[(eta(Theta + tau Z; zeta) - Theta)^2].
pub fn state_evolution_map(tau_sq: f64, zeta: f64, params: &ModelParams) -> f64 {
    debug_assert!(tau_sq >= 0.0 && zeta >= 0.0);
    let tau = tau_sq.sqrt();
    let e = params.prior.expect(|v| atom_denoise_mse(v, tau, zeta));
    params.sigma * params.sigma + e / params.delta
}

/// E[eta'(Theta + tau Z; zeta)] = P(|Theta + tau Z| > zeta), atomwise.
pub fn expected_eta_deriv(tau: f64, zeta: f64, prior: &Prior) -> f64 {
    if tau == 0.0 {
        return prior.expect(|v| if v.abs() > zeta { 1.0 } else { 0.0 });
    }
    prior.expect(|v| norm_cdf((v - zeta) / tau) + norm_cdf((-v - zeta) / tau))
}

/// Non-negative root of (1 + a^2) Phi(-a) - a phi(a) = delta / 2.
/// The left side decreases from 1/2 at a = 0, so alpha_min(1) = 0 and
/// alpha_min is decreasing in delta.
pub fn alpha_min(delta: f64) -> f64 {
    assert!(delta > 0.0 && delta <= 1.0, "alpha_min requires delta in (0,1], got {delta}");
    let half = delta / 2.0;
    let f = |a: f64| (1.0 + a * a) * norm_cdf(-a) - a * phi(a) - half;
    if f(0.0) <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    bisect(0.0, hi, 1e-15, f)
}

/// tau*(alpha): unique solution of tau^2 = F(tau^2, alpha tau) for
/// alpha > alpha_min(delta). The map tau^2 -> F(tau^2, alpha tau) is concave
/// with F(0,0) = sigma^2 > 0, so bisection on G = F - tau^2 applies.
pub fn tau_of_alpha(alpha: f64, params: &ModelParams, cfg: &SolverConfig) -> Result<f64, SolverError> {
    let amin = alpha_min(params.delta.min(1.0));
    if alpha <= amin {
        return Err(SolverError::AlphaBelowMin { alpha, alpha_min: amin });
    }
    let g = |t2: f64| state_evolution_map(t2, alpha * t2.sqrt(), params) - t2;
    let mut hi = params.tau0_sq().max(params.sigma * params.sigma) * 2.0;
    let mut doublings = 0;
    while g(hi) > 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > cfg.max_doublings {
            return Err(SolverError::BracketFailure { what: "tau*(alpha)", lo: 0.0, hi, doublings });
        }
    }
    Ok(bisect(0.0, hi, cfg.root_tol * 0.01, g).sqrt())
}

/// lambda(alpha) = alpha tau*(alpha) [1 - (1/delta) E eta'(Theta + tau* Z; alpha tau*)].
pub fn lambda_of_alpha(alpha: f64, params: &ModelParams, cfg: &SolverConfig) -> Result<f64, SolverError> {
    let tau = tau_of_alpha(alpha, params, cfg)?;
    let p = expected_eta_deriv(tau, alpha * tau, &params.prior);
    Ok(alpha * tau * (1.0 - p / params.delta))
}

/// Solve the interpolator system (tau^2 = F(tau^2, alpha tau),
/// delta = P(|Theta + tau Z| > alpha tau)) for delta in (0,1).
pub fn solve_interpolator(
    params: &ModelParams,
    cfg: &SolverConfig,
) -> Result<FixedPointSolution, SolverError> {
    solve_interpolator_bracketed(params, cfg, None)
}

/// Same, with an optional initial bracket on the outer root variable
/// (nu for the sparse route, tau for the general route); the bracket is
/// expanded to a sign change before bisection. Used by the uniqueness probe.
pub fn solve_interpolator_bracketed(
    params: &ModelParams,
    cfg: &SolverConfig,
    bracket: Option<(f64, f64)>,
) -> Result<FixedPointSolution, SolverError> {
    if !(params.delta > 0.0 && params.delta < 1.0) {
        return Err(SolverError::DeltaDomain(params.delta));
    }
    if !params.prior.has_nonzero_mass() {
        return Err(SolverError::ZeroPrior);
    }
    if let Some((eps, m)) = params.prior.as_sparse(params.delta) {
        solve_sparse_nu(params, eps, m, cfg, bracket)
    } else {
        solve_general_tau(params, cfg, bracket)
    }
}

fn solve_sparse_nu(
    params: &ModelParams,
    eps: f64,
    m: f64,
    cfg: &SolverConfig,
    bracket: Option<(f64, f64)>,
) -> Result<FixedPointSolution, SolverError> {
    let delta = params.delta;
    let ctx = SparseContext::normalized(eps, m, params.sigma);
    let mut iterations: u64 = 0;
    let mut f3 = |nu: f64| -> Result<f64, SolverError> {
        iterations += 1;
        ctx.f3(nu, delta, cfg)
    };
    // F3 < 0 near nu = 0 and F3(M~) > 0 (tau = sigma is below any solution)
    const NU_FLOOR: f64 = 1e-14;
    let (mut lo, mut hi) = bracket.unwrap_or((NU_FLOOR, ctx.m));
    lo = lo.max(NU_FLOOR);
    hi = hi.min(ctx.m);
    let mut doublings = 0;
    while f3(lo)? > 0.0 {
        lo *= 0.25;
        doublings += 1;
        if lo < 1e-300 || doublings > cfg.max_doublings {
            return Err(SolverError::BracketFailure { what: "F3 lower bracket in nu", lo, hi, doublings });
        }
    }
    while f3(hi)? < 0.0 {
        hi = (hi * 1.5).min(ctx.m);
        doublings += 1;
        if (ctx.m - hi).abs() < 1e-300 || doublings > cfg.max_doublings {
            if f3(ctx.m)? >= 0.0 {
                hi = ctx.m;
                break;
            }
            return Err(SolverError::BracketFailure { what: "F3 upper bracket in nu", lo, hi, doublings });
        }
    }
    for _ in 0..220 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < cfg.root_tol {
            break;
        }
        if f3(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    let alpha = ctx.solve_alpha(nu, delta, cfg)?;
    let tau = m / nu; // back to the sigma-scaled problem
    let res = (ctx.f1(nu, delta, alpha).abs(), ctx.f2(nu, delta, alpha).abs());
    if res.0 > cfg.residual_tol || res.1 > cfg.residual_tol {
        return Err(SolverError::ResidualGate { f1: res.0, f2: res.1, tol: cfg.residual_tol });
    }
    Ok(FixedPointSolution {
        alpha_star: alpha,
        tau_star: tau,
        nu_star: Some(nu),
        zeta_star: alpha * tau,
        residuals: res,
        iterations,
    })
}

fn solve_general_tau(
    params: &ModelParams,
    cfg: &SolverConfig,
    bracket: Option<(f64, f64)>,
) -> Result<FixedPointSolution, SolverError> {
    let delta = params.delta;
    // alpha(tau) from P(|Theta + tau Z| > alpha tau) = delta, decreasing in alpha
    let alpha_of_tau = |tau: f64| -> Result<f64, SolverError> {
        let f = |a: f64| expected_eta_deriv(tau, a * tau, &params.prior) - delta;
        let mut hi = 1.0;
        let mut doublings = 0;
        while f(hi) > 0.0 {
            hi *= 2.0;
            doublings += 1;
            if doublings > cfg.max_doublings {
                return Err(SolverError::BracketFailure { what: "alpha(tau)", lo: 0.0, hi, doublings });
            }
        }
        Ok(bisect(0.0, hi, cfg.root_tol * 0.01, f))
    };
    let mut iterations: u64 = 0;
    // G(tau) = F(tau^2, alpha(tau) tau) - tau^2: positive below the root
    let mut g = |tau: f64| -> Result<f64, SolverError> {
        iterations += 1;
        let a = alpha_of_tau(tau)?;
        Ok(state_evolution_map(tau * tau, a * tau, params) - tau * tau)
    };
    let tau0 = params.tau0_sq().sqrt();
    let (mut lo, mut hi) = bracket.unwrap_or((params.sigma, tau0 * 10.0));
    lo = lo.max(params.sigma);
    let mut doublings = 0;
    while g(hi)? > 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > cfg.max_doublings {
            return Err(SolverError::BracketFailure { what: "G upper bracket in tau", lo, hi, doublings });
        }
    }
    while g(lo)? < 0.0 {
        lo = params.sigma + (lo - params.sigma) * 0.5;
        doublings += 1;
        if doublings > cfg.max_doublings || (lo - params.sigma).abs() < 1e-300 {
            lo = params.sigma;
            break;
        }
    }
    for _ in 0..220 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < cfg.root_tol {
            break;
        }
        if g(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    let alpha = alpha_of_tau(tau)?;
    // normalized residuals analogous to (F1, F2)
    let r1 = (expected_eta_deriv(tau, alpha * tau, &params.prior) - delta).abs();
    let r2 = ((state_evolution_map(tau * tau, alpha * tau, params) - tau * tau) / (tau * tau)).abs();
    if r1 > cfg.residual_tol || r2 > cfg.residual_tol {
        return Err(SolverError::ResidualGate { f1: r1, f2: r2, tol: cfg.residual_tol });
    }
    Ok(FixedPointSolution {
        alpha_star: alpha,
        tau_star: tau,
        nu_star: None,
        zeta_star: alpha * tau,
        residuals: (r1, r2),
        iterations,
    })
}

/// Solve the Lasso system at penalty lambda >= 0; lambda = 0 delegates to
/// the interpolator system. Outer bisection on alpha against the strictly
/// increasing map lambda(alpha).
pub fn solve_lasso(
    lambda: f64,
    params: &ModelParams,
    cfg: &SolverConfig,
) -> Result<FixedPointSolution, SolverError> {
    if lambda < 0.0 {
        return Err(SolverError::LambdaDomain(lambda));
    }
    if lambda == 0.0 {
        return solve_interpolator(params, cfg);
    }
    if !(params.delta > 0.0 && params.delta < 1.0) {
        return Err(SolverError::DeltaDomain(params.delta));
    }
    let amin = alpha_min(params.delta);
    let lam_gap = |a: f64| -> Result<f64, SolverError> { Ok(lambda_of_alpha(a, params, cfg)? - lambda) };
    // lambda(alpha) -> -inf at alpha_min+ and +inf at infinity
    let mut lo = amin + amin.max(1e-3) * 1e-9 + 1e-12;
    let mut hi = amin + 1.0;
    let mut doublings = 0;
    while lam_gap(hi)? < 0.0 {
        hi = amin + (hi - amin) * 2.0;
        doublings += 1;
        if doublings > cfg.max_doublings {
            return Err(SolverError::BracketFailure { what: "lambda(alpha) upper bracket", lo, hi, doublings });
        }
    }
    while lam_gap(lo)? > 0.0 {
        lo = amin + (lo - amin) * 0.25;
        doublings += 1;
        if doublings > cfg.max_doublings {
            return Err(SolverError::BracketFailure { what: "lambda(alpha) lower bracket", lo, hi, doublings });
        }
    }
    let mut iterations: u64 = 0;
    for _ in 0..220 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < cfg.root_tol {
            break;
        }
        iterations += 1;
        if lam_gap(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let tau = tau_of_alpha(alpha, params, cfg)?;
    let r1 = (lambda_of_alpha(alpha, params, cfg)? - lambda).abs();
    let r2 = ((state_evolution_map(tau * tau, alpha * tau, params) - tau * tau) / (tau * tau)).abs();
    let nu = params.prior.as_sparse(params.delta).map(|(_, m)| m / tau);
    Ok(FixedPointSolution {
        alpha_star: alpha,
        tau_star: tau,
        nu_star: nu,
        zeta_star: alpha * tau,
        residuals: (r1, r2),
        iterations,
    })
}
