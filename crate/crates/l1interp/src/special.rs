//! Standard-normal primitives, soft thresholding, and the closed-form
//! Gaussian integrals the fixed-point systems are built on.

use thiserror::Error;

/// 1/sqrt(2*pi)
pub const FRAC_1_SQRT_2PI: f64 = 0.39894228040143267793994605993438;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum SpecialError {
    #[error("quantile argument must lie in (0,1), got {0}")]
    QuantileDomain(f64),
    #[error("integrand returned a non-finite value at x = {0}")]
    NonFiniteIntegrand(f64),
}

/// Standard normal density phi(x) = exp(-x^2/2)/sqrt(2*pi).
#[inline]
pub fn phi(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

// erf/erfc rational approximation (the classic FreeBSD/SunPro scheme, ~1-2 ulp
// over the double range). Coefficients are the standard published set.
const ERX: f64 = 8.45062911510467529297e-01;
const PP: [f64; 5] = [
    1.28379167095512558561e-01,
    -3.25042107247001499370e-01,
    -2.84817495755985104766e-02,
    -5.77027029648944159157e-03,
    -2.37630166566501626084e-05,
];
const QQ: [f64; 5] = [
    3.97917223959155352819e-01,
    6.50222499887672944485e-02,
    5.08130628187576562776e-03,
    1.32494738004321644526e-04,
    -3.96022827877536812320e-06,
];
const PA: [f64; 7] = [
    -2.36211856075265944077e-03,
    4.14856118683748331666e-01,
    -3.72207876035701323847e-01,
    3.18346619901161753674e-01,
    -1.10894694282396677476e-01,
    3.54783043256182359371e-02,
    -2.16637559486879084300e-03,
];
const QA: [f64; 6] = [
    1.06420880400844228286e-01,
    5.40397917702171048937e-01,
    7.18286544141962662868e-02,
    1.26171219808761642112e-01,
    1.36370839120290507362e-02,
    1.19844998467991074170e-02,
];
const RA: [f64; 8] = [
    -9.86494403484714822705e-03,
    -6.93858572707181764372e-01,
    -1.05586262253232909814e+01,
    -6.23753324503260060396e+01,
    -1.62396669462573470355e+02,
    -1.84605092906711035994e+02,
    -8.12874355063065934246e+01,
    -9.81432934416914548592e+00,
];
const SA: [f64; 8] = [
    1.96512716674392571292e+01,
    1.37657754143519042600e+02,
    4.34565877475229228821e+02,
    6.45387271733267880336e+02,
    4.29008140027567833386e+02,
    1.08635005541779435134e+02,
    6.57024977031928170135e+00,
    -6.04244152148580987438e-02,
];
const RB: [f64; 7] = [
    -9.86494292470009928597e-03,
    -7.99283237680523006574e-01,
    -1.77579549177547519889e+01,
    -1.60636384855821916062e+02,
    -6.37566443368389627722e+02,
    -1.02509513161107724954e+03,
    -4.83519191608651397019e+02,
];
const SB: [f64; 7] = [
    3.03380607434824582924e+01,
    3.25792512996573918826e+02,
    1.53672958608443695994e+03,
    3.19985821950859553908e+03,
    2.55305040643316442583e+03,
    4.74528541206955367215e+02,
    -2.24409524465858183362e+01,
];

// Clear the low mantissa word so (z-x)(z+x) recovers -x^2 exactly enough for
// the split exp in the tail branch.
#[inline]
fn trunc_low(x: f64) -> f64 {
    f64::from_bits(x.to_bits() & 0xffff_ffff_0000_0000)
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    if ax < 0.84375 {
        if ax < 1e-28 {
            return 1.0 - x;
        }
        let z = x * x;
        let r = PP[0] + z * (PP[1] + z * (PP[2] + z * (PP[3] + z * PP[4])));
        let s = 1.0 + z * (QQ[0] + z * (QQ[1] + z * (QQ[2] + z * (QQ[3] + z * QQ[4]))));
        let y = r / s;
        if x < 0.25 {
            return 1.0 - (x + x * y);
        }
        let r = x * y;
        return 0.5 - (r + (x - 0.5));
    }
    if ax < 1.25 {
        let s = ax - 1.0;
        let p = PA[0]
            + s * (PA[1] + s * (PA[2] + s * (PA[3] + s * (PA[4] + s * (PA[5] + s * PA[6])))));
        let q = 1.0
            + s * (QA[0] + s * (QA[1] + s * (QA[2] + s * (QA[3] + s * (QA[4] + s * QA[5])))));
        if x >= 0.0 {
            return 1.0 - ERX - p / q;
        }
        return 1.0 + (ERX + p / q);
    }
    if x < -6.0 {
        return 2.0 - f64::MIN_POSITIVE; // 2 - tiny
    }
    if ax >= 28.0 {
        // underflow region for positive x
        return if x > 0.0 { 0.0 } else { 2.0 };
    }
    let s = 1.0 / (ax * ax);
    let (r, big_s) = if ax < 1.0 / 0.35 {
        (
            RA[0]
                + s * (RA[1]
                    + s * (RA[2]
                        + s * (RA[3] + s * (RA[4] + s * (RA[5] + s * (RA[6] + s * RA[7])))))),
            1.0 + s
                * (SA[0]
                    + s * (SA[1]
                        + s * (SA[2]
                            + s * (SA[3]
                                + s * (SA[4] + s * (SA[5] + s * (SA[6] + s * SA[7]))))))),
        )
    } else {
        (
            RB[0] + s * (RB[1] + s * (RB[2] + s * (RB[3] + s * (RB[4] + s * (RB[5] + s * RB[6]))))),
            1.0 + s
                * (SB[0]
                    + s * (SB[1]
                        + s * (SB[2] + s * (SB[3] + s * (SB[4] + s * (SB[5] + s * SB[6])))))),
        )
    };
    let z = trunc_low(ax);
    let e = (-z * z - 0.5625).exp() * ((z - ax) * (z + ax) + r / big_s).exp();
    if x > 0.0 {
        e / ax
    } else {
        2.0 - e / ax
    }
}

/// Error function, via erfc for |x| >= 0.84375.
pub fn erf(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 0.84375 {
        if ax < 3.7252902984e-09 {
            return x + 1.28379167095512586316e-01 * x;
        }
        let z = x * x;
        let r = PP[0] + z * (PP[1] + z * (PP[2] + z * (PP[3] + z * PP[4])));
        let s = 1.0 + z * (QQ[0] + z * (QQ[1] + z * (QQ[2] + z * (QQ[3] + z * QQ[4]))));
        return x + x * (r / s);
    }
    if ax >= 6.0 {
        return if x > 0.0 { 1.0 } else { -1.0 };
    }
    let c = erfc(ax);
    if x >= 0.0 {
        1.0 - c
    } else {
        c - 1.0
    }
}

/// Standard normal CDF Phi(x), accurate in both tails.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// log of the upper-tail probability Phi(-x) for x > 0, stable far past the
/// point where Phi(-x) itself underflows. Asymptotic (Mills-ratio) series for
/// large x, direct log otherwise.
pub fn ln_norm_cdf_neg(x: f64) -> f64 {
    if x <= 8.0 {
        return norm_cdf(-x).ln();
    }
    let s = 1.0 / (x * x);
    // 1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8
    let series = 1.0 + s * (-1.0 + s * (3.0 + s * (-15.0 + s * 105.0)));
    -0.5 * x * x - (x * FRAC_1_SQRT_2PI.recip()).ln() + series.ln()
}

/// Standard normal quantile Phi^{-1}(p): Acklam's rational approximation
/// refined by two Newton steps, good to ~1e-15 over (0,1).
pub fn norm_cdf_inv(p: f64) -> Result<f64, SpecialError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(SpecialError::QuantileDomain(p));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    for _ in 0..2 {
        let e = norm_cdf(x) - p;
        let d = phi(x);
        if d > 0.0 {
            x -= e / d;
        }
    }
    Ok(x)
}

/// Soft-thresholding eta(x; zeta) = (|x| - zeta)_+ sign(x).
#[inline]
pub fn soft_threshold(x: f64, zeta: f64) -> f64 {
    assert!(zeta >= 0.0, "soft_threshold requires zeta >= 0, got {zeta}");
    if x > zeta {
        x - zeta
    } else if x < -zeta {
        x + zeta
    } else {
        0.0
    }
}

/// eta'(x; zeta) in the first argument: 1 on {|x| > zeta}, else 0
/// (the kink |x| = zeta is assigned 0).
#[inline]
pub fn soft_threshold_deriv(x: f64, zeta: f64) -> f64 {
    assert!(zeta >= 0.0, "soft_threshold_deriv requires zeta >= 0, got {zeta}");
    if x.abs() > zeta {
        1.0
    } else {
        0.0
    }
}

/// int_b^inf (z-a)^2 phi(z) dz = (b - 2a) phi(b) + (a^2 + 1)(1 - Phi(b)).
#[inline]
pub fn truncated_second_moment(a: f64, b: f64) -> f64 {
    (b - 2.0 * a) * phi(b) + (a * a + 1.0) * norm_cdf(-b)
}

/// g(x) = phi(x) - x Phi(-x); positive for all x.
#[inline]
pub fn g_fn(x: f64) -> f64 {
    phi(x) - x * norm_cdf(-x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    GaussHermiteProbabilist,
    AdaptiveInterval,
}

/// A node/weight quadrature rule. The probabilist Gauss-Hermite rule
/// integrates against the standard normal density (weights sum to 1); an
/// adaptive-interval rule is a materialized composite Simpson refinement of
/// a plain interval integral.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: RuleKind,
}

/// Default Gauss-Hermite order used for E_Z[f(Z)] throughout the crate.
pub const DEFAULT_GH_ORDER: usize = 61;

impl QuadratureRule {
    /// Probabilist Gauss-Hermite rule of the given order: nodes are the roots
    /// of He_n, weights normalized so that sum w_i = 1 (expectation against
    /// the N(0,1) density).
    pub fn gauss_hermite(order: usize) -> Self {
        assert!(order >= 1);
        let (nodes, weights) = hermite_nodes_weights(order);
        QuadratureRule { nodes, weights, kind: RuleKind::GaussHermiteProbabilist }
    }

    /// Materialize an adaptive Simpson refinement of int_a^b f(z) dz as a
    /// composite node/weight rule meeting `tol`.
    pub fn adaptive_interval<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Self {
        let mut panels = Vec::new();
        adaptive_panels(&f, a, b, f(a), f(b), f(0.5 * (a + b)), tol, 48, &mut panels);
        // each panel contributes Simpson nodes (a, m, b) with weights h/6*(1,4,1)
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(panels.len() * 3);
        for &(lo, hi) in &panels {
            let h = hi - lo;
            let m = 0.5 * (lo + hi);
            pairs.push((lo, h / 6.0));
            pairs.push((m, 4.0 * h / 6.0));
            pairs.push((hi, h / 6.0));
        }
        pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        // merge shared endpoints
        let mut nodes = Vec::with_capacity(pairs.len());
        let mut weights = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            match nodes.last() {
                Some(&last) if last == x => *weights.last_mut().unwrap() += w,
                _ => {
                    nodes.push(x);
                    weights.push(w);
                }
            }
        }
        QuadratureRule { nodes, weights, kind: RuleKind::AdaptiveInterval }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    /// Sum w_i f(x_i).
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// E_Z[f(Z)] over Z ~ N(0,1) via a quadrature rule; reports non-finite
/// integrand values.
pub fn gaussian_expectation<F: Fn(f64) -> f64>(
    f: F,
    rule: &QuadratureRule,
) -> Result<f64, SpecialError> {
    let mut acc = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let v = f(x);
        if !v.is_finite() {
            return Err(SpecialError::NonFiniteIntegrand(x));
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Adaptive Simpson integral of f over [a, b] to absolute tolerance `tol`.
pub fn adaptive_quadrature<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    simpson_rec(&f, a, b, f(a), f(b), f(m), tol, 48)
}

fn simpson_estimate(a: f64, b: f64, fa: f64, fb: f64, fm: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fm: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let whole = simpson_estimate(a, b, fa, fb, fm);
    let left = simpson_estimate(a, m, fa, fm, flm);
    let right = simpson_estimate(m, b, fm, fb, frm);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        return left + right + err / 15.0;
    }
    simpson_rec(f, a, m, fa, fm, flm, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, fb, frm, 0.5 * tol, depth - 1)
}

fn adaptive_panels<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fm: f64,
    tol: f64,
    depth: u32,
    out: &mut Vec<(f64, f64)>,
) {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let whole = simpson_estimate(a, b, fa, fb, fm);
    let left = simpson_estimate(a, m, fa, fm, flm);
    let right = simpson_estimate(m, b, fm, fb, frm);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        out.push((a, m));
        out.push((m, b));
        return;
    }
    adaptive_panels(f, a, m, fa, fm, flm, 0.5 * tol, depth - 1, out);
    adaptive_panels(f, m, b, fm, fb, frm, 0.5 * tol, depth - 1, out);
}

// Orthonormal probabilist Hermite recurrence: p_{k+1} = (x p_k - sqrt(k) p_{k-1})/sqrt(k+1).
// Returns (p_n(x), p_{n-1}(x)).
fn hermite_ortho(n: usize, x: f64) -> (f64, f64) {
    let mut pkm1 = 0.0f64;
    let mut pk = 1.0f64;
    for k in 0..n {
        let pkp1 = (x * pk - (k as f64).sqrt() * pkm1) / ((k + 1) as f64).sqrt();
        pkm1 = pk;
        pk = pkp1;
    }
    (pk, pkm1)
}

fn hermite_nodes_weights(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 1 {
        return (vec![0.0], vec![1.0]);
    }
    let limit = (4.0 * n as f64 + 2.0).sqrt() + 1.0;
    let step = std::f64::consts::PI / (4.0 * (n as f64).sqrt());
    // scan for sign changes of p_n, then bisect + Newton polish
    let mut roots = Vec::with_capacity(n);
    let mut x_prev = -limit;
    let mut f_prev = hermite_ortho(n, x_prev).0;
    let mut x = x_prev + step;
    while x <= limit + step {
        let fx = hermite_ortho(n, x).0;
        if f_prev == 0.0 {
            roots.push(x_prev);
        } else if f_prev * fx < 0.0 {
            let (mut lo, mut hi) = (x_prev, x);
            let mut flo = f_prev;
            for _ in 0..70 {
                let mid = 0.5 * (lo + hi);
                let fm = hermite_ortho(n, mid).0;
                if flo * fm <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            let mut r = 0.5 * (lo + hi);
            for _ in 0..3 {
                let (pn, pnm1) = hermite_ortho(n, r);
                let dpn = (n as f64).sqrt() * pnm1;
                if dpn != 0.0 {
                    r -= pn / dpn;
                }
            }
            roots.push(r);
        }
        x_prev = x;
        f_prev = fx;
        x += step;
    }
    debug_assert_eq!(roots.len(), n, "expected {n} Hermite roots, found {}", roots.len());
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Christoffel weights for the orthonormal family: w_i = 1 / sum_k p_k(x_i)^2
    let weights: Vec<f64> = roots
        .iter()
        .map(|&r| {
            let mut sum = 0.0;
            let mut pkm1 = 0.0f64;
            let mut pk = 1.0f64;
            sum += pk * pk;
            for k in 0..n - 1 {
                let pkp1 = (r * pk - (k as f64).sqrt() * pkm1) / ((k + 1) as f64).sqrt();
                pkm1 = pk;
                pk = pkp1;
                sum += pk * pk;
            }
            1.0 / sum
        })
        .collect();
    (roots, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_reference_values() {
        assert!((phi(0.0) - 0.3989422804014327).abs() < 1e-16);
        assert!((phi(1.0) - 0.24197072451914337).abs() < 1e-16);
        assert_eq!(phi(1.5), phi(-1.5));
    }

    #[test]
    fn cdf_reference_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert!((norm_cdf(-1.0) - 0.15865525393145707).abs() < 1e-16);
        assert!((norm_cdf(1.96) - 0.9750021048517795).abs() < 1e-15);
        // deep tail, relative accuracy
        let t = norm_cdf(-10.0);
        assert!((t / 7.61985302416053e-24 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_roundtrip() {
        for i in -80..=80 {
            let x = i as f64 * 0.1;
            let p = norm_cdf(x);
            let back = norm_cdf_inv(p).unwrap();
            assert!((back - x).abs() < 1e-12, "x={x} back={back}");
        }
        assert_eq!(norm_cdf_inv(0.5).unwrap(), 0.0);
        assert!(norm_cdf_inv(0.0).is_err());
        assert!(norm_cdf_inv(1.0).is_err());
        assert!(norm_cdf_inv(-0.2).is_err());
    }

    #[test]
    fn ln_tail_matches_direct() {
        for &x in &[8.5, 10.0, 20.0, 37.0] {
            let direct = norm_cdf(-x);
            if direct > 0.0 {
                assert!((ln_norm_cdf_neg(x) - direct.ln()).abs() < 1e-9, "x={x}");
            }
        }
        // beyond underflow of Phi itself
        assert!(ln_norm_cdf_neg(50.0).is_finite());
    }

    #[test]
    fn soft_threshold_basics() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-2.5, 1.0), -1.5);
        for &x in &[-3.0, -0.2, 0.0, 1.7, 9.0] {
            assert_eq!(soft_threshold(x, 0.0), x);
        }
        assert_eq!(soft_threshold_deriv(2.0, 1.0), 1.0);
        assert_eq!(soft_threshold_deriv(1.0, 1.0), 0.0);
        assert_eq!(soft_threshold_deriv(0.3, 1.0), 0.0);
    }

    #[test]
    #[should_panic]
    fn soft_threshold_rejects_negative_zeta() {
        soft_threshold(1.0, -0.1);
    }

    #[test]
    fn truncated_second_moment_values() {
        assert!((truncated_second_moment(0.0, 0.0) - 0.5).abs() < 1e-15);
        assert!((truncated_second_moment(0.0, -20.0) - 1.0).abs() < 1e-12);
        // against adaptive quadrature on [2, 20]
        let oracle = adaptive_quadrature(|z| (z - 1.0) * (z - 1.0) * phi(z), 2.0, 20.0, 1e-13);
        assert!((truncated_second_moment(1.0, 2.0) - oracle).abs() < 1e-10);
    }

    #[test]
    fn g_fn_values_and_tail() {
        assert!((g_fn(0.0) - 0.3989422804014327).abs() < 1e-15);
        assert!((g_fn(1.0) - 0.08331547).abs() < 1e-8);
        // x^2 g(x)/phi(x) -> 1
        let x = 10.0;
        let ratio = x * x * g_fn(x) / phi(x);
        assert!((0.95..=1.05).contains(&ratio), "ratio={ratio}");
        for &x in &[-5.0, -1.0, 0.0, 1.0, 4.0, 12.0] {
            assert!(g_fn(x) > 0.0);
        }
    }

    #[test]
    fn gauss_hermite_rule() {
        let rule = QuadratureRule::gauss_hermite(DEFAULT_GH_ORDER);
        assert_eq!(rule.nodes().len(), 61);
        let wsum: f64 = rule.weights().iter().sum();
        assert!((wsum - 1.0).abs() < 1e-12, "weight sum {wsum}");
        for w in rule.weights() {
            assert!(*w > 0.0);
        }
        for pair in rule.nodes().windows(2) {
            assert!(pair[0] < pair[1]);
        }
        assert!(rule.integrate(|x| x).abs() < 1e-12);
        assert!((rule.integrate(|x| x * x) - 1.0).abs() < 1e-10);
        assert!((rule.integrate(|x| x.powi(4)) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_expectation_cases() {
        let rule = QuadratureRule::gauss_hermite(DEFAULT_GH_ORDER);
        assert!(gaussian_expectation(|z| z, &rule).unwrap().abs() < 1e-12);
        assert!((gaussian_expectation(|z| z * z, &rule).unwrap() - 1.0).abs() < 1e-10);
        assert!(gaussian_expectation(|z| if z > 3.0 { f64::NAN } else { z }, &rule).is_err());
    }

    #[test]
    fn adaptive_rule_matches_direct() {
        let rule = QuadratureRule::adaptive_interval(|z| z.sin() * phi(z), 0.0, 5.0, 1e-12);
        assert_eq!(rule.kind(), RuleKind::AdaptiveInterval);
        for pair in rule.nodes().windows(2) {
            assert!(pair[0] < pair[1]);
        }
        let via_rule = rule.integrate(|z| z.sin() * phi(z));
        let direct = adaptive_quadrature(|z| z.sin() * phi(z), 0.0, 5.0, 1e-13);
        assert!((via_rule - direct).abs() < 1e-9);
    }

    #[test]
    fn moment_limit_ratios_at_12() {
        // the three ratios approach 1, 1, -2
        let a: f64 = 12.0;
        let r1 = a * norm_cdf(-a) / phi(a);
        let r2 = a * a * (phi(a) - a * norm_cdf(-a)) / phi(a);
        let r3 = a.powi(3) * (a * phi(a) - (a * a + 1.0) * norm_cdf(-a)) / phi(a);
        assert!((r1 - 1.0).abs() < 0.05, "r1={r1}");
        assert!((r2 - 1.0).abs() < 0.05, "r2={r2}");
        assert!((r3 + 2.0).abs() < 0.1, "r3={r3}");
    }
}
