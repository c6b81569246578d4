//! Exponential-family models over which error surfaces are bounded.
//!
//! Everything downstream (tilt bounds, validation bands, calibrated
//! thresholds) needs exactly one analytic object from the model: the log
//! partition function A(theta). For the families here the cumulant transform
//! of a likelihood tilt reduces to a difference of log partitions,
//!
//! ```text
//! psi(theta, v, q) = log E_theta[ exp(q * (loglik(theta+v) - loglik(theta))) ]
//!                  = A(theta + q v) - A(theta),
//! ```
//!
//! so arbitrarily strong tilts cost two evaluations of A.

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{standard_normal, unit_uniform};
use crate::special::{sigmoid, softplus};

/// A parameter vector with validated, finite coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamPoint {
    coords: Vec<f64>,
}

impl ParamPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("parameter vector"));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite parameter {bad}")));
        }
        Ok(ParamPoint { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Simulated data for one run of a design, shaped per model family.
/// Adjacent tagging keeps the payload arrays self-describing in JSON data
/// files, e.g. {"kind": "z_scores", "data": [0.41]}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum OutcomeMatrix {
    /// One draw per Gaussian coordinate, already shifted by the mean.
    ZScores(Vec<f64>),
    /// Per-arm success counts; sufficient when the design ignores ordering.
    ArmCounts { successes: Vec<u64>, sizes: Vec<u64> },
    /// Per-arm 0/1 subject rows in draw order, for stage-aware designs.
    ArmRows(Vec<Vec<u8>>),
    /// One 0/1 response per covariate row.
    GlmResponses(Vec<u8>),
}

/// The exponential families supported by the bound machinery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFamily {
    /// `dim` independent unit-variance Gaussians with unknown means.
    NormalLocation { dim: usize },
    /// Independent binomial arms; coordinate i is arm i's log odds and
    /// `sizes[i]` its number of subjects.
    BernoulliArms { sizes: Vec<u64> },
    /// Bernoulli responses through a logistic link: row j succeeds with
    /// probability sigmoid(x_j . theta).
    CanonicalGlm { covariates: Vec<Vec<f64>> },
}

impl ModelFamily {
    /// Parameter dimension d.
    pub fn dim(&self) -> usize {
        match self {
            ModelFamily::NormalLocation { dim } => *dim,
            ModelFamily::BernoulliArms { sizes } => sizes.len(),
            ModelFamily::CanonicalGlm { covariates } => {
                covariates.first().map_or(0, |row| row.len())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelFamily::NormalLocation { dim } => {
                if *dim == 0 {
                    return Err(Error::invalid("normal family needs dim >= 1"));
                }
            }
            ModelFamily::BernoulliArms { sizes } => {
                if sizes.is_empty() {
                    return Err(Error::Empty("arm sizes"));
                }
                if sizes.iter().any(|&n| n == 0) {
                    return Err(Error::invalid("every arm needs at least one subject"));
                }
            }
            ModelFamily::CanonicalGlm { covariates } => {
                if covariates.is_empty() {
                    return Err(Error::Empty("covariate rows"));
                }
                let d = covariates[0].len();
                if d == 0 {
                    return Err(Error::Empty("covariate row"));
                }
                for row in covariates {
                    if row.len() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            got: row.len(),
                        });
                    }
                    if row.iter().any(|x| !x.is_finite()) {
                        return Err(Error::invalid("non-finite covariate"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Log partition function A(theta).
    pub fn log_partition(&self, theta: &[f64]) -> Result<f64> {
        self.check_dim(theta.len())?;
        Ok(match self {
            ModelFamily::NormalLocation { .. } => {
                0.5 * theta.iter().map(|t| t * t).sum::<f64>()
            }
            ModelFamily::BernoulliArms { sizes } => sizes
                .iter()
                .zip(theta)
                .map(|(&n, &t)| n as f64 * softplus(t))
                .sum(),
            ModelFamily::CanonicalGlm { covariates } => covariates
                .iter()
                .map(|row| softplus(dot(row, theta)))
                .sum(),
        })
    }

    /// Tilt cumulant psi(theta0, v, q) = A(theta0 + q v) - A(theta0),
    /// the log moment generating function of the log likelihood ratio
    /// between theta0 + v and theta0, evaluated at q.
    pub fn psi(&self, theta0: &ParamPoint, v: &[f64], q: f64) -> Result<f64> {
        self.check_dim(theta0.dim())?;
        self.check_dim(v.len())?;
        if !(q.is_finite() && q >= 0.0) {
            return Err(Error::invalid(format!("psi needs finite q >= 0, got {q}")));
        }
        match self {
            // Expanding the squares avoids forming theta + qv explicitly:
            // psi = q <theta, v> + q^2 |v|^2 / 2, exact for all q.
            ModelFamily::NormalLocation { .. } => {
                let tv = dot(theta0.coords(), v);
                let vv = dot(v, v);
                Ok(q * tv + 0.5 * q * q * vv)
            }
            _ => {
                let shifted: Vec<f64> = theta0
                    .coords()
                    .iter()
                    .zip(v)
                    .map(|(t, dv)| t + q * dv)
                    .collect();
                Ok(self.log_partition(&shifted)? - self.log_partition(theta0.coords())?)
            }
        }
    }

    /// Renyi divergence of order q between theta0 + v and theta0:
    /// D_q = (psi(q) - q psi(1)) / (q - 1).
    pub fn renyi_divergence(&self, theta0: &ParamPoint, v: &[f64], q: f64) -> Result<f64> {
        if !(q.is_finite() && q > 1.0) {
            return Err(Error::invalid(format!(
                "Renyi divergence needs finite q > 1, got {q}"
            )));
        }
        let psi_q = self.psi(theta0, v, q)?;
        let psi_1 = self.psi(theta0, v, 1.0)?;
        Ok((psi_q - q * psi_1) / (q - 1.0))
    }

    /// Kullback-Leibler divergence KL(theta0 + v || theta0). Closed form for
    /// the normal family; other families take the q -> 1 limit numerically
    /// would lose precision, so only the normal case is exposed.
    pub fn kl_divergence(&self, v: &[f64]) -> Option<f64> {
        match self {
            ModelFamily::NormalLocation { dim } => {
                (v.len() == *dim).then(|| 0.5 * dot(v, v))
            }
            _ => None,
        }
    }

    /// Draw one outcome set at `theta`. Draw order and word consumption are
    /// fixed by the family shape alone, so a shared stream yields common
    /// random numbers across parameter points. With `raw` set, Bernoulli
    /// families keep per-subject rows instead of collapsing to counts; the
    /// underlying draws are identical either way.
    pub fn sample_outcomes<R: RngCore>(
        &self,
        theta: &ParamPoint,
        rng: &mut R,
        raw: bool,
    ) -> Result<OutcomeMatrix> {
        self.check_dim(theta.dim())?;
        match self {
            ModelFamily::NormalLocation { dim } => {
                let draws = (0..*dim)
                    .map(|i| theta.coords()[i] + standard_normal(rng))
                    .collect();
                Ok(OutcomeMatrix::ZScores(draws))
            }
            ModelFamily::BernoulliArms { sizes } => {
                let probs: Vec<f64> = theta.coords().iter().map(|&t| sigmoid(t)).collect();
                if raw {
                    let rows = sizes
                        .iter()
                        .zip(&probs)
                        .map(|(&n, &p)| {
                            (0..n).map(|_| u8::from(unit_uniform(rng) < p)).collect()
                        })
                        .collect();
                    Ok(OutcomeMatrix::ArmRows(rows))
                } else {
                    let successes = sizes
                        .iter()
                        .zip(&probs)
                        .map(|(&n, &p)| {
                            (0..n).map(|_| u64::from(unit_uniform(rng) < p)).sum()
                        })
                        .collect();
                    Ok(OutcomeMatrix::ArmCounts {
                        successes,
                        sizes: sizes.clone(),
                    })
                }
            }
            ModelFamily::CanonicalGlm { covariates } => {
                let responses = covariates
                    .iter()
                    .map(|row| {
                        let p = sigmoid(dot(row, theta.coords()));
                        u8::from(unit_uniform(rng) < p)
                    })
                    .collect();
                Ok(OutcomeMatrix::GlmResponses(responses))
            }
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        let expected = self.dim();
        if got != expected {
            return Err(Error::DimensionMismatch { expected, got });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
