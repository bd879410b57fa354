//! Marginal laws of a single site's right-step probability.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};
use crate::numeric::integrate;

/// Law of `omega_0`. Sites of an environment are drawn i.i.d. from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvLaw {
    /// Finitely many atoms `values[i]` with weights `probs[i]`.
    Discrete { values: Vec<f64>, probs: Vec<f64> },
    /// Beta(a, b) clamped into `[eps, 1 - eps]`.
    Beta { a: f64, b: f64, eps: f64 },
}

/// Odds ratio `(1 - omega) / omega`; exactly 0 at a reflecting site.
#[inline]
pub fn rho_of(omega: f64) -> f64 {
    (1.0 - omega) / omega
}

impl EnvLaw {
    pub fn discrete(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let law = EnvLaw::Discrete { values, probs };
        law.validate()?;
        Ok(law)
    }

    pub fn beta(a: f64, b: f64, eps: f64) -> Result<Self> {
        let law = EnvLaw::Beta { a, b, eps };
        law.validate()?;
        Ok(law)
    }

    /// Two-point law with `P(rho = rho_hi) = q` and `P(rho = rho_lo) = 1 - q`.
    pub fn two_point(rho_hi: f64, rho_lo: f64, q: f64) -> Result<Self> {
        Self::discrete(
            vec![1.0 / (1.0 + rho_hi), 1.0 / (1.0 + rho_lo)],
            vec![q, 1.0 - q],
        )
    }

    /// The `rho in {2, 1/2}` family used throughout the test-suite.
    pub fn doubling(q: f64) -> Result<Self> {
        Self::two_point(2.0, 0.5, q)
    }

    /// Single atom: a homogeneous environment.
    pub fn constant(omega: f64) -> Result<Self> {
        Self::discrete(vec![omega], vec![1.0])
    }

    /// Three atoms with incommensurable log-odds; zero-speed, transient.
    pub fn three_atom() -> Self {
        EnvLaw::Discrete {
            values: vec![0.3, 0.6, 0.75],
            probs: vec![0.35, 0.4, 0.25],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvLaw::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::InvalidLaw(
                        "values and probs must be non-empty and of equal length".into(),
                    ));
                }
                if let Some(w) = values.iter().find(|&&w| !(w > 0.0 && w < 1.0)) {
                    return Err(Error::InvalidLaw(format!("omega {w} not in (0,1)")));
                }
                if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::InvalidLaw("negative probability".into()));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidLaw(format!("probs sum to {total}")));
                }
                Ok(())
            }
            EnvLaw::Beta { a, b, eps } => {
                if !(*a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::InvalidLaw("beta shapes must be positive".into()));
                }
                if !(*eps > 0.0 && *eps < 0.5) {
                    return Err(Error::InvalidLaw("eps must lie in (0, 1/2)".into()));
                }
                Ok(())
            }
        }
    }

    /// `E_P rho^gamma`.
    pub fn rho_moment(&self, gamma: f64) -> f64 {
        self.expect(|rho| rho.powf(gamma))
    }

    /// `E_P log rho`.
    pub fn mean_log_rho(&self) -> f64 {
        self.expect(f64::ln)
    }

    /// `E_P rho`.
    pub fn mean_rho(&self) -> f64 {
        self.expect(|rho| rho)
    }

    /// Expectation of `g(rho_0)`.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        match self {
            EnvLaw::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(_, &p)| p > 0.0)
                .map(|(&w, &p)| p * g(rho_of(w)))
                .sum(),
            EnvLaw::Beta { a, b, eps } => {
                let (a, b, eps) = (*a, *b, *eps);
                let ln_norm = ln_beta(a, b);
                let dens = |w: f64| ((a - 1.0) * w.ln() + (b - 1.0) * (1.0 - w).ln() - ln_norm).exp();
                let lo_mass = beta_reg(a, b, eps);
                let hi_mass = 1.0 - beta_reg(a, b, 1.0 - eps);
                let body = integrate(&|w: f64| dens(w) * g(rho_of(w)), eps, 1.0 - eps, 1e-14);
                body + lo_mass * g(rho_of(eps)) + hi_mass * g(rho_of(1.0 - eps))
            }
        }
    }

    pub fn sampler(&self) -> Result<LawSampler> {
        self.validate()?;
        Ok(match self {
            EnvLaw::Discrete { values, probs } => {
                let mut cdf = Vec::with_capacity(probs.len());
                let mut acc = 0.0;
                for p in probs {
                    acc += p;
                    cdf.push(acc);
                }
                LawSampler::Discrete { values: values.clone(), cdf }
            }
            EnvLaw::Beta { a, b, eps } => LawSampler::Beta {
                dist: Beta::new(*a, *b).map_err(|e| Error::InvalidLaw(e.to_string()))?,
                eps: *eps,
            },
        })
    }
}

/// Prepared sampler for an [`EnvLaw`].
#[derive(Debug, Clone)]
pub enum LawSampler {
    Discrete { values: Vec<f64>, cdf: Vec<f64> },
    Beta { dist: Beta<f64>, eps: f64 },
}

impl LawSampler {
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LawSampler::Discrete { values, cdf } => {
                let u: f64 = rng.random();
                let idx = cdf.iter().position(|&c| u < c).unwrap_or(values.len() - 1);
                values[idx]
            }
            LawSampler::Beta { dist, eps } => dist.sample(rng).clamp(*eps, 1.0 - *eps),
        }
    }
}
