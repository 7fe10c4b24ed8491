//! The signal distribution P_Theta as a finite atom list, plus the
//! (delta, sigma, prior) bundle describing one asymptotic problem instance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("atom probabilities must be non-negative, got {0}")]
    NegativeProbability(f64),
    #[error("atom probabilities must sum to 1, got {0}")]
    ProbabilitySum(f64),
    #[error("prior must have at least one atom")]
    Empty,
    #[error("sparsity epsilon must lie in (0, 1], got {0}")]
    EpsilonDomain(f64),
    #[error("signal magnitude M must be positive, got {0}")]
    MagnitudeDomain(f64),
    #[error("aspect ratio delta must be positive, got {0}")]
    DeltaDomain(f64),
    #[error("noise level sigma must be positive, got {0}")]
    SigmaDomain(f64),
}

/// Finite-atom signal distribution: a list of (value, probability) pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prior {
    atoms: Vec<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    label: Option<String>,
}

const PROB_SUM_TOL: f64 = 1e-12;

impl Prior {
    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Result<Self, PriorError> {
        if atoms.is_empty() {
            return Err(PriorError::Empty);
        }
        let mut sum = 0.0;
        for &(_, p) in &atoms {
            if p < 0.0 || !p.is_finite() {
                return Err(PriorError::NegativeProbability(p));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(PriorError::ProbabilitySum(sum));
        }
        Ok(Prior { atoms, label: None })
    }

    /// The two-point sparse model: value M*sqrt(delta) with probability
    /// epsilon, zero otherwise. The delta-dependent scaling keeps
    /// SNR = eps*M^2/sigma^2 fixed along a delta sweep.
    pub fn sparse(epsilon: f64, m: f64, delta: f64) -> Result<Self, PriorError> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(PriorError::EpsilonDomain(epsilon));
        }
        if !(m > 0.0) {
            return Err(PriorError::MagnitudeDomain(m));
        }
        if !(delta > 0.0) {
            return Err(PriorError::DeltaDomain(delta));
        }
        Ok(Prior {
            atoms: vec![(m * delta.sqrt(), epsilon), (0.0, 1.0 - epsilon)],
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// E[Theta^2].
    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|&(v, p)| p * v * v).sum()
    }

    /// E[f(Theta)], atomwise.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|&(v, p)| p * f(v)).sum()
    }

    /// P(Theta != 0) > 0, required by the interpolator fixed-point system.
    pub fn has_nonzero_mass(&self) -> bool {
        self.atoms.iter().any(|&(v, p)| v != 0.0 && p > 0.0)
    }

    pub fn max_abs_value(&self) -> f64 {
        self.atoms.iter().map(|&(v, _)| v.abs()).fold(0.0, f64::max)
    }

    /// Recognize the two-point sparse pattern and recover (epsilon, M) for
    /// the given delta; None when the prior is not of that form.
    pub fn as_sparse(&self, delta: f64) -> Option<(f64, f64)> {
        if self.atoms.len() > 2 || delta <= 0.0 {
            return None;
        }
        let mut eps = 0.0;
        let mut value = None;
        for &(v, p) in &self.atoms {
            if v == 0.0 {
                continue;
            }
            match value {
                None => {
                    value = Some(v);
                    eps = p;
                }
                Some(_) => return None, // two distinct nonzero atoms
            }
        }
        let v = value?;
        if v < 0.0 || eps <= 0.0 {
            return None;
        }
        Some((eps, v / delta.sqrt()))
    }

    /// Serialize as {"atoms": [[value, prob], ...]}.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("prior serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let raw: Prior = serde_json::from_str(s)?;
        Prior::from_atoms(raw.atoms).map_err(serde::de::Error::custom).map(|p| match raw.label {
            Some(l) => p.with_label(l),
            None => p,
        })
    }
}

/// One asymptotic problem instance: aspect ratio delta = n/p, noise level
/// sigma, and the signal prior.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub delta: f64,
    pub sigma: f64,
    pub prior: Prior,
}

impl ModelParams {
    pub fn new(delta: f64, sigma: f64, prior: Prior) -> Result<Self, PriorError> {
        if !(delta > 0.0) {
            return Err(PriorError::DeltaDomain(delta));
        }
        if !(sigma > 0.0) {
            return Err(PriorError::SigmaDomain(sigma));
        }
        Ok(ModelParams { delta, sigma, prior })
    }

    /// Risk of the zero estimator / state-evolution start:
    /// tau_0^2 = sigma^2 + E[Theta^2]/delta.
    pub fn tau0_sq(&self) -> f64 {
        self.sigma * self.sigma + self.prior.second_moment() / self.delta
    }
}

/// Sweep template for the sparse model: (epsilon, M, sigma) with the prior
/// rebuilt per grid point as Prior::sparse(eps, m, delta).
#[derive(Debug, Clone, Copy)]
pub struct SparseModel {
    pub eps: f64,
    pub m: f64,
    pub sigma: f64,
}

impl SparseModel {
    pub fn new(eps: f64, m: f64, sigma: f64) -> Result<Self, PriorError> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(PriorError::EpsilonDomain(eps));
        }
        if !(m > 0.0) {
            return Err(PriorError::MagnitudeDomain(m));
        }
        if !(sigma > 0.0) {
            return Err(PriorError::SigmaDomain(sigma));
        }
        Ok(SparseModel { eps, m, sigma })
    }

    /// Derive M from SNR = eps*M^2/sigma^2.
    pub fn from_snr(eps: f64, snr: f64, sigma: f64) -> Result<Self, PriorError> {
        if !(snr > 0.0) {
            return Err(PriorError::MagnitudeDomain(snr));
        }
        let m = (snr / eps).sqrt() * sigma;
        SparseModel::new(eps, m, sigma)
    }

    pub fn snr(&self) -> f64 {
        self.eps * self.m * self.m / (self.sigma * self.sigma)
    }

    pub fn params_at(&self, delta: f64) -> Result<ModelParams, PriorError> {
        ModelParams::new(delta, self.sigma, Prior::sparse(self.eps, self.m, delta)?)
    }

    /// tau_0^2 = sigma^2 + eps*M^2 (independent of delta for this model).
    pub fn tau0_sq(&self) -> f64 {
        self.sigma * self.sigma + self.eps * self.m * self.m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_constructor() {
        let p = Prior::sparse(1.0, 2.0, 0.25).unwrap();
        assert_eq!(p.atoms(), &[(1.0, 1.0), (0.0, 0.0)]);

        let p = Prior::sparse(0.5, 2.0, 1.0).unwrap();
        assert!((p.second_moment() - 2.0).abs() < 1e-15);

        // SNR = eps*M^2 with sigma = 1
        let p = Prior::sparse(0.01, 200f64.sqrt(), 0.5).unwrap();
        let snr: f64 = 0.01 * 200.0;
        assert!((snr - 2.0).abs() < 1e-12);
        assert!((p.second_moment() - 0.01 * 200.0 * 0.5).abs() < 1e-12);

        assert!(Prior::sparse(0.0, 1.0, 1.0).is_err());
        assert!(Prior::sparse(1.5, 1.0, 1.0).is_err());
        assert!(Prior::sparse(0.5, -1.0, 1.0).is_err());
    }

    #[test]
    fn moments_and_expectations() {
        let p = Prior::from_atoms(vec![(0.0, 1.0)]).unwrap();
        assert_eq!(p.second_moment(), 0.0);
        assert!(!p.has_nonzero_mass());

        let p = Prior::sparse(0.02, 10.0, 1.0).unwrap();
        let params = ModelParams::new(1.0, 1.0, p).unwrap();
        assert!((params.tau0_sq() - 3.0).abs() < 1e-12);

        let (eps, m, d) = (0.3, 2.0, 0.49);
        let p = Prior::sparse(eps, m, d).unwrap();
        let e_abs = p.expect(f64::abs);
        assert!((e_abs - eps * m * d.sqrt()).abs() < 1e-14);
        // expect(z -> z^2) equals second_moment exactly
        assert_eq!(p.expect(|v| v * v), p.second_moment());
    }

    #[test]
    fn snr_invariance_under_rescaling() {
        let a = SparseModel::new(0.2, 2.0, 1.0).unwrap();
        let b = SparseModel::new(0.05, 4.0, 1.0).unwrap();
        assert!((a.snr() - b.snr()).abs() < 1e-14);
        assert!((a.tau0_sq() - b.tau0_sq()).abs() < 1e-14);
    }

    #[test]
    fn sparse_detection() {
        let p = Prior::sparse(0.3, 2.5, 0.7).unwrap();
        let (eps, m) = p.as_sparse(0.7).unwrap();
        assert!((eps - 0.3).abs() < 1e-15);
        assert!((m - 2.5).abs() < 1e-12);

        let p = Prior::from_atoms(vec![(1.0, 0.3), (-1.0, 0.3), (0.0, 0.4)]).unwrap();
        assert!(p.as_sparse(0.5).is_none());
    }

    #[test]
    fn json_round_trip() {
        let p = Prior::sparse(0.25, 3.0, 0.5).unwrap();
        let s = p.to_json();
        assert!(s.contains("atoms"));
        let q = Prior::from_json(&s).unwrap();
        assert_eq!(p.atoms(), q.atoms());
        assert!(Prior::from_json(r#"{"atoms": [[1.0, 0.7]]}"#).is_err());
    }

    #[test]
    fn invalid_atoms_rejected() {
        assert!(Prior::from_atoms(vec![]).is_err());
        assert!(Prior::from_atoms(vec![(1.0, -0.1), (0.0, 1.1)]).is_err());
        assert!(Prior::from_atoms(vec![(1.0, 0.6), (0.0, 0.6)]).is_err());
    }
}
