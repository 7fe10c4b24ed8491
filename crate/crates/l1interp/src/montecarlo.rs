//! Finite-sample validation: deterministic instance generation, exact
//! minimum l1-norm interpolation (operator-splitting basis pursuit with an
//! LP-vertex polish), Lasso coordinate descent, risk measurement, and the
//! figure-reproduction sweeps.

use crate::fixed_point::{solve_interpolator, SolverConfig};
use crate::linalg::{lu_solve, lu_solve_transpose, norm2, Cholesky, Mat};
use crate::prior::SparseModel;
use crate::risk_curve::ols_limit;
use crate::special::soft_threshold;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum McError {
    #[error("basis pursuit did not certify optimality within {iters} iterations (primal residual {residual:.3e})")]
    BpIterationCap { iters: u64, residual: f64 },
    #[error("coordinate descent did not reach KKT tolerance within {sweeps} sweeps (violation {violation:.3e})")]
    CdIterationCap { sweeps: u64, violation: f64 },
    #[error("equality projection requires p > n or consistent dimensions (n = {n}, p = {p})")]
    BadShape { n: usize, p: usize },
    #[error("gram factorization failed: {0}")]
    Gram(#[from] crate::linalg::LinalgError),
}

/// Entry law for the design matrix; every law is scaled to variance 1/n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignLaw {
    Gaussian,
    /// +-1/sqrt(n) signs
    Rademacher,
    /// t(3)/sqrt(3), then 1/sqrt(n)
    StudentT3,
}

/// One synthetic regression instance y = X theta* + z.
#[derive(Debug, Clone)]
pub struct Instance {
    pub x: Mat,
    pub theta_star: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub trial: u64,
}

// Stream tags for the per-trial substreams.
const STREAM_DESIGN: u64 = 1;
const STREAM_SIGNAL: u64 = 2;
const STREAM_NOISE: u64 = 3;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Counter-style generator keyed by (master seed, trial, stream tag):
/// trials own disjoint deterministic streams, so parallel scheduling can
/// never reorder draws.
pub fn trial_rng(seed: u64, trial: u64, stream: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    let mut s = splitmix(seed ^ splitmix(trial) ^ splitmix(stream.wrapping_mul(0x517cc1b727220a95)));
    for chunk in key.chunks_exact_mut(8) {
        s = splitmix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Draw an instance with X entries of variance 1/n, theta* i.i.d. from the
/// sparse prior at delta = n/p, and N(0, sigma^2) noise. Reconstructible
/// bit-exactly from (seed, trial, dims, model).
pub fn gen_instance(
    n: usize,
    p: usize,
    model: &SparseModel,
    law: DesignLaw,
    seed: u64,
    trial: u64,
) -> Instance {
    assert!(n >= 1 && p >= 1);
    let scale = 1.0 / (n as f64).sqrt();
    let mut rng = trial_rng(seed, trial, STREAM_DESIGN);
    let mut data = Vec::with_capacity(n * p);
    match law {
        DesignLaw::Gaussian => {
            for _ in 0..n * p {
                let g: f64 = StandardNormal.sample(&mut rng);
                data.push(g * scale);
            }
        }
        DesignLaw::Rademacher => {
            for _ in 0..n * p {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                data.push(sign * scale);
            }
        }
        DesignLaw::StudentT3 => {
            let t3 = StudentT::new(3.0).unwrap();
            let unit = 3f64.sqrt().recip();
            for _ in 0..n * p {
                let v: f64 = t3.sample(&mut rng);
                data.push(v * unit * scale);
            }
        }
    }
    let x = Mat::from_rows(n, p, data);

    let delta = n as f64 / p as f64;
    let magnitude = model.m * delta.sqrt();
    let mut rng = trial_rng(seed, trial, STREAM_SIGNAL);
    let theta_star: Vec<f64> = (0..p)
        .map(|_| if rng.gen::<f64>() < model.eps { magnitude } else { 0.0 })
        .collect();

    let mut rng = trial_rng(seed, trial, STREAM_NOISE);
    let z: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * model.sigma
        })
        .collect();

    let xt = x.matvec(&theta_star);
    let y: Vec<f64> = xt.iter().zip(&z).map(|(a, b)| a + b).collect();
    Instance { x, theta_star, z, y, n, p, seed, trial }
}

#[derive(Debug, Clone, Copy)]
pub struct BpOptions {
    /// primal/dual residual scale: stop at <= tol_scale * sqrt(p)
    pub tol_scale: f64,
    /// dual-certificate slack for the vertex polish
    pub cert_tol: f64,
    pub max_iters: u64,
    pub rho: f64,
    pub over_relaxation: f64,
    /// try the vertex polish every this many iterations
    pub polish_every: u64,
}

impl Default for BpOptions {
    fn default() -> Self {
        BpOptions {
            tol_scale: 1e-8,
            cert_tol: 1e-9,
            max_iters: 200_000,
            rho: 1.0,
            over_relaxation: 1.8,
            polish_every: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BpSolution {
    pub theta: Vec<f64>,
    pub iterations: u64,
    /// final primal residual (0 for a certified vertex)
    pub residual: f64,
    /// true when the dual certificate verified exact optimality
    pub certified: bool,
}

/// Minimum l1-norm interpolator argmin ||theta||_1 s.t. X theta = y, for
/// p > n, by operator splitting: alternate projection onto the affine
/// constraint (one n x n Gram factorization, reused) with soft thresholding
/// and a scaled dual update. Every `polish_every` iterations the support of
/// the thresholded iterate is tested as an LP vertex: solve the n x n system
/// on the top-n support and accept exactly when the dual certificate
/// ||X^T w||_inf <= 1 holds, which pins the optimum to machine precision.
/// For p <= n the least-squares solution is returned instead.
pub fn min_l1_interpolator(inst: &Instance, opts: &BpOptions) -> Result<BpSolution, McError> {
    let (n, p) = (inst.n, inst.p);
    if p <= n {
        return least_squares(inst).map(|theta| BpSolution {
            theta,
            iterations: 0,
            residual: 0.0,
            certified: false,
        });
    }
    let x = &inst.x;
    let y = &inst.y;
    let gram = x.gram_rows();
    let chol = Cholesky::new(&gram)?;
    let project = |v: &[f64]| -> Vec<f64> {
        // v + X^T (X X^T)^{-1} (y - X v)
        let xv = x.matvec(v);
        let w: Vec<f64> = y.iter().zip(&xv).map(|(a, b)| a - b).collect();
        let t = chol.solve(&w);
        let correction = x.t_matvec(&t);
        v.iter().zip(&correction).map(|(a, b)| a + b).collect()
    };

    let mut theta = vec![0.0; p];
    let mut psi = vec![0.0; p];
    let mut dual = vec![0.0; p];
    let mut rho = opts.rho;
    let alpha = opts.over_relaxation;
    let tol = opts.tol_scale * (p as f64).sqrt();
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iters {
        let v: Vec<f64> = psi.iter().zip(&dual).map(|(a, b)| a - b).collect();
        theta = project(&v);
        let mut primal_sq = 0.0;
        let mut dual_sq = 0.0;
        for j in 0..p {
            let relaxed = alpha * theta[j] + (1.0 - alpha) * psi[j];
            let new_psi = soft_threshold(relaxed + dual[j], 1.0 / rho);
            dual[j] += relaxed - new_psi;
            let dpsi = new_psi - psi[j];
            dual_sq += dpsi * dpsi;
            psi[j] = new_psi;
            let r = theta[j] - psi[j];
            primal_sq += r * r;
        }
        let r = primal_sq.sqrt();
        let s = rho * dual_sq.sqrt();
        residual = r;
        if it % opts.polish_every == 0 {
            if let Some(theta_v) = vertex_polish(x, y, &psi, opts.cert_tol) {
                return Ok(BpSolution { theta: theta_v, iterations: it, residual: 0.0, certified: true });
            }
        }
        if r < tol && s < tol {
            return Ok(BpSolution { theta, iterations: it, residual: r, certified: false });
        }
        if it % 10 == 0 {
            if r > 10.0 * s && rho < 1e8 {
                rho *= 2.0;
                dual.iter_mut().for_each(|d| *d *= 0.5);
            } else if s > 10.0 * r && rho > 1e-8 {
                rho *= 0.5;
                dual.iter_mut().for_each(|d| *d *= 2.0);
            }
        }
    }
    Err(McError::BpIterationCap { iters: opts.max_iters, residual })
}

// Take the n largest |psi| coordinates as the candidate support, solve the
// square system exactly, and verify the dual certificate.
fn vertex_polish(x: &Mat, y: &[f64], psi: &[f64], cert_tol: f64) -> Option<Vec<f64>> {
    let n = x.rows();
    let p = x.cols();
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| psi[b].abs().partial_cmp(&psi[a].abs()).unwrap());
    let support: Vec<usize> = idx[..n].to_vec();
    let xs = x.square_from_cols(&support);
    let theta_s = lu_solve(&xs, y).ok()?;
    let signs: Vec<f64> = theta_s.iter().map(|v| v.signum()).collect();
    let w = lu_solve_transpose(&xs, &signs).ok()?;
    let xtw = x.t_matvec(&w);
    let max_abs = xtw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs <= 1.0 + cert_tol {
        let mut theta = vec![0.0; p];
        for (k, &j) in support.iter().enumerate() {
            theta[j] = theta_s[k];
        }
        Some(theta)
    } else {
        None
    }
}

fn least_squares(inst: &Instance) -> Result<Vec<f64>, McError> {
    let (n, p) = (inst.n, inst.p);
    if p > n {
        return Err(McError::BadShape { n, p });
    }
    // normal equations with the p x p Gram of columns
    let x = &inst.x;
    let mut gram = Mat::zeros(p, p);
    for i in 0..n {
        let row = x.row(i);
        for a in 0..p {
            let ra = row[a];
            if ra != 0.0 {
                for b in a..p {
                    let v = gram.get(a, b) + ra * row[b];
                    gram.set(a, b, v);
                }
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram.set(a, b, gram.get(b, a));
        }
    }
    let chol = Cholesky::new(&gram)?;
    let xty = x.t_matvec(&inst.y);
    Ok(chol.solve(&xty))
}

#[derive(Debug, Clone, Copy)]
pub struct CdOptions {
    /// max absolute KKT violation at exit
    pub kkt_tol: f64,
    pub max_sweeps: u64,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions { kkt_tol: 1e-8, max_sweeps: 200_000 }
    }
}

#[derive(Debug, Clone)]
pub struct CdSolution {
    pub theta: Vec<f64>,
    pub sweeps: u64,
    pub kkt_violation: f64,
}

/// Cyclic coordinate descent for (1/2)||y - X theta||^2 + lambda ||theta||_1,
/// run to the KKT tolerance.
pub fn lasso_cd(inst: &Instance, lambda: f64, opts: &CdOptions) -> Result<CdSolution, McError> {
    assert!(lambda > 0.0, "lasso_cd requires lambda > 0");
    let (n, p) = (inst.n, inst.p);
    let x = &inst.x;
    let col_sq: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| x.get(i, j) * x.get(i, j)).sum())
        .collect();
    let mut theta = vec![0.0; p];
    let mut resid = inst.y.clone();
    let mut violation = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = theta[j];
            let mut rho_j = 0.0;
            for i in 0..n {
                rho_j += x.get(i, j) * resid[i];
            }
            rho_j += col_sq[j] * old;
            let new = soft_threshold(rho_j, lambda) / col_sq[j];
            if new != old {
                let d = new - old;
                for i in 0..n {
                    resid[i] -= x.get(i, j) * d;
                }
                theta[j] = new;
            }
        }
        let grad = x.t_matvec(&resid);
        violation = 0.0f64;
        for j in 0..p {
            let v = if theta[j] != 0.0 {
                (grad[j] - lambda * theta[j].signum()).abs()
            } else {
                (grad[j].abs() - lambda).max(0.0)
            };
            violation = violation.max(v);
        }
        if violation <= opts.kkt_tol {
            return Ok(CdSolution { theta, sweeps: sweep, kkt_violation: violation });
        }
    }
    Err(McError::CdIterationCap { sweeps: opts.max_sweeps, violation })
}

/// Risk(theta_hat) = (1/n)||theta_hat - theta*||^2 + sigma^2.
pub fn risk_of(theta_hat: &[f64], inst: &Instance, sigma: f64) -> f64 {
    let sq: f64 = theta_hat
        .iter()
        .zip(&inst.theta_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    sq / inst.n as f64 + sigma * sigma
}

/// Support-enumeration oracle for tiny instances (p <= 12): solve every
/// size-n support's square system, keep the feasible vertex of smallest
/// l1 norm. A minimum l1-norm interpolator can always be chosen among such
/// vertices.
pub fn enumeration_oracle(inst: &Instance) -> Option<(Vec<f64>, f64)> {
    let (n, p) = (inst.n, inst.p);
    assert!(p <= 12, "enumeration oracle is bounded to p <= 12");
    if p < n {
        return None;
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut support = vec![0usize; n];
    enumerate_supports(p, n, 0, 0, &mut support, &mut |s: &[usize]| {
        let xs = inst.x.square_from_cols(s);
        if let Ok(theta_s) = lu_solve(&xs, &inst.y) {
            // reject wildly ill-conditioned solves by feasibility check
            let mut theta = vec![0.0; p];
            for (k, &j) in s.iter().enumerate() {
                theta[j] = theta_s[k];
            }
            let xt = inst.x.matvec(&theta);
            let feas = xt
                .iter()
                .zip(&inst.y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if feas <= 1e-8 * (1.0 + norm2(&inst.y)) {
                let l1: f64 = theta.iter().map(|v| v.abs()).sum();
                if best.as_ref().map_or(true, |(_, b)| l1 < *b) {
                    best = Some((theta, l1));
                }
            }
        }
    });
    best
}

fn enumerate_supports(
    p: usize,
    n: usize,
    depth: usize,
    from: usize,
    buf: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == n {
        visit(buf);
        return;
    }
    for j in from..p {
        if p - j < n - depth {
            break;
        }
        buf[depth] = j;
        enumerate_supports(p, n, depth + 1, j + 1, buf, visit);
    }
}

/// Which solver produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverTag {
    BpAdmm,
    LassoCd,
    Amp,
}

impl SolverTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverTag::BpAdmm => "bp-admm",
            SolverTag::LassoCd => "lasso-cd",
            SolverTag::Amp => "amp",
        }
    }
}

/// Per-trial result.
#[derive(Debug, Clone)]
pub struct SimRecord {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub trial: u64,
    pub risk: f64,
    pub support_fraction: f64,
    pub l1_norm_per_p: f64,
    pub solver: SolverTag,
    pub iters: u64,
    pub residual: f64,
}

/// Configuration of a figure-reproduction sweep.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub trials: u64,
    pub model: SparseModel,
    /// p/n grid
    pub grid: Vec<f64>,
    pub seed: u64,
    pub law: DesignLaw,
    pub lambda: Option<f64>,
    pub solver: SolverTag,
    pub bp: BpOptions,
    pub cd: CdOptions,
    pub fp: SolverConfig,
}

/// Aggregates for one p/n grid point.
#[derive(Debug, Clone)]
pub struct SimAggregate {
    pub p_over_n: f64,
    pub n: usize,
    pub p: usize,
    pub trials: u64,
    pub mean_risk: f64,
    pub stderr_risk: f64,
    pub theory_risk: f64,
    pub mean_support_frac: f64,
    pub mean_zero_risk: f64,
    pub stderr_zero_risk: f64,
    pub solver: SolverTag,
    pub failures: u64,
    pub records: Vec<SimRecord>,
}

impl SimAggregate {
    pub fn csv_header() -> &'static str {
        "p_over_n,n,p,trials,mean_risk,stderr_risk,theory_risk,mean_support_frac,solver"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.9e},{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            self.p_over_n,
            self.n,
            self.p,
            self.trials,
            self.mean_risk,
            self.stderr_risk,
            self.theory_risk,
            self.mean_support_frac,
            self.solver.as_str()
        )
    }
}

/// Count of nonzero entries above a relative threshold (the ADMM path
/// reports exact vertex supports; the relative cutoff covers the
/// uncertified fallback iterate).
pub fn support_fraction(theta: &[f64]) -> f64 {
    let max = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0.0;
    }
    let cut = 1e-6 * max;
    theta.iter().filter(|v| v.abs() > cut).count() as f64 / theta.len() as f64
}

fn run_trial(cfg: &SimConfig, p: usize, trial: u64) -> Result<SimRecord, McError> {
    let inst = gen_instance(cfg.n, p, &cfg.model, cfg.law, cfg.seed, trial);
    let (theta, iters, residual) = match cfg.solver {
        SolverTag::LassoCd => {
            let lam = cfg.lambda.unwrap_or(1e-6);
            let sol = lasso_cd(&inst, lam, &cfg.cd)?;
            (sol.theta, sol.sweeps, sol.kkt_violation)
        }
        _ => {
            let sol = min_l1_interpolator(&inst, &cfg.bp)?;
            (sol.theta, sol.iterations, sol.residual)
        }
    };
    let l1: f64 = theta.iter().map(|v| v.abs()).sum();
    Ok(SimRecord {
        n: cfg.n,
        p,
        seed: cfg.seed,
        trial,
        risk: risk_of(&theta, &inst, cfg.model.sigma),
        support_fraction: support_fraction(&theta),
        l1_norm_per_p: l1 / p as f64,
        solver: cfg.solver,
        iters,
        residual,
    })
}

/// Monte Carlo sweep over the p/n grid: per point, `trials` independent
/// instances solved in parallel, aggregated against the theoretical risk
/// (interpolator fixed point for p > n, OLS limit for p < n).
pub fn figure_sweep(cfg: &SimConfig) -> Vec<SimAggregate> {
    cfg.grid
        .iter()
        .map(|&p_over_n| {
            let p = (p_over_n * cfg.n as f64).round().max(1.0) as usize;
            let delta = cfg.n as f64 / p as f64;
            let theory = if p > cfg.n {
                cfg.model
                    .params_at(delta)
                    .ok()
                    .and_then(|params| solve_interpolator(&params, &cfg.fp).ok())
                    .map_or(f64::NAN, |s| s.risk())
            } else if p < cfg.n {
                ols_limit(delta, cfg.model.sigma)
            } else {
                f64::NAN // delta = 1 excluded by both formulas
            };
            let results: Vec<Result<SimRecord, McError>> = (0..cfg.trials)
                .into_par_iter()
                .map(|trial| run_trial(cfg, p, trial))
                .collect();
            let mut records = Vec::with_capacity(results.len());
            let mut failures = 0;
            for r in results {
                match r {
                    Ok(rec) => records.push(rec),
                    Err(_) => failures += 1,
                }
            }
            let k = records.len().max(1) as f64;
            let mean_risk = records.iter().map(|r| r.risk).sum::<f64>() / k;
            let var = records
                .iter()
                .map(|r| (r.risk - mean_risk) * (r.risk - mean_risk))
                .sum::<f64>()
                / (k - 1.0).max(1.0);
            let mean_support = records.iter().map(|r| r.support_fraction).sum::<f64>() / k;
            // zero-estimator risk on the same instances
            let zero_risks: Vec<f64> = records
                .iter()
                .map(|r| {
                    let inst = gen_instance(cfg.n, p, &cfg.model, cfg.law, cfg.seed, r.trial);
                    let sq: f64 = inst.theta_star.iter().map(|v| v * v).sum();
                    sq / cfg.n as f64 + cfg.model.sigma * cfg.model.sigma
                })
                .collect();
            let mean_zero = zero_risks.iter().sum::<f64>() / k;
            let var_zero = zero_risks
                .iter()
                .map(|r| (r - mean_zero) * (r - mean_zero))
                .sum::<f64>()
                / (k - 1.0).max(1.0);
            SimAggregate {
                p_over_n,
                n: cfg.n,
                p,
                trials: cfg.trials,
                mean_risk,
                stderr_risk: (var / k).sqrt(),
                theory_risk: theory,
                mean_support_frac: mean_support,
                mean_zero_risk: mean_zero,
                stderr_zero_risk: (var_zero / k).sqrt(),
                solver: cfg.solver,
                failures,
                records,
            }
        })
        .collect()
}
