use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::CovarianceType;
use super::special::{log_sum_exp, LN_2PI};
use super::variational::forward_solve_sq_norm;
use crate::error::{Error, Result};

/// Covariance of one component, in the structure the mixture was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    Spherical(f64),
    Diagonal(Vec<f64>),
    /// Row-major dense matrix.
    Full(Vec<Vec<f64>>),
}

impl Covariance {
    fn kind(&self) -> CovarianceType {
        match self {
            Covariance::Spherical(_) => CovarianceType::Spherical,
            Covariance::Diagonal(_) => CovarianceType::Diagonal,
            Covariance::Full(_) => CovarianceType::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Covariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub final_elbo: f64,
    pub iterations: usize,
    pub components_pruned: usize,
    /// Set when every component fell below the prune threshold and the
    /// heaviest one was kept anyway.
    pub all_pruned: bool,
    pub seed: u64,
    /// Index of the winning restart.
    pub restart: usize,
    /// How `log_likelihood` turns the posterior into a density.
    pub scoring: String,
}

/// A trained Gaussian mixture with plug-in (posterior-mean) parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MixtureParams", into = "MixtureParams")]
pub struct FittedMixture {
    params: MixtureParams,
    scorers: Vec<ComponentScorer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MixtureParams {
    covariance_type: CovarianceType,
    components: Vec<Component>,
    metadata: TrainingMetadata,
}

impl PartialEq for FittedMixture {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl From<FittedMixture> for MixtureParams {
    fn from(m: FittedMixture) -> Self {
        m.params
    }
}

impl TryFrom<MixtureParams> for FittedMixture {
    type Error = Error;

    fn try_from(params: MixtureParams) -> Result<Self> {
        FittedMixture::new(params.covariance_type, params.components, params.metadata)
    }
}

/// `ln w + ln N(· | μ, Σ)` without the quadratic form, plus what the
/// quadratic form needs.
#[derive(Debug, Clone)]
struct ComponentScorer {
    constant: f64,
    shape: ScorerShape,
}

#[derive(Debug, Clone)]
enum ScorerShape {
    Spherical(f64),
    Diagonal(Vec<f64>),
    /// Lower Cholesky factor of Σ.
    Full(DMatrix<f64>),
}

impl FittedMixture {
    /// Validate parameters and precompute per-component scoring terms.
    pub fn new(
        covariance_type: CovarianceType,
        components: Vec<Component>,
        metadata: TrainingMetadata,
    ) -> Result<Self> {
        let first = components
            .first()
            .ok_or(Error::Empty("a mixture needs at least one component"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::Validation("mixture dimension must be positive".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }

        let mut scorers = Vec::with_capacity(components.len());
        for (j, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::Validation(format!(
                    "component {j} weight {} is outside (0, 1]",
                    c.weight
                )));
            }
            if c.mean.len() != dim {
                return Err(Error::Dimension { expected: dim, found: c.mean.len() });
            }
            if c.covariance.kind() != covariance_type {
                return Err(Error::Validation(format!(
                    "component {j} covariance does not match declared type {}",
                    covariance_type.as_str()
                )));
            }
            let d = dim as f64;
            let (ln_det, shape) = match &c.covariance {
                Covariance::Spherical(v) => {
                    if !(*v > 0.0) {
                        return Err(Error::Validation(format!("component {j} variance {v} is not positive")));
                    }
                    (d * v.ln(), ScorerShape::Spherical(1.0 / v))
                }
                Covariance::Diagonal(vars) => {
                    if vars.len() != dim {
                        return Err(Error::Dimension { expected: dim, found: vars.len() });
                    }
                    if let Some(v) = vars.iter().find(|v| !(**v > 0.0)) {
                        return Err(Error::Validation(format!("component {j} variance {v} is not positive")));
                    }
                    (
                        vars.iter().map(|v| v.ln()).sum(),
                        ScorerShape::Diagonal(vars.iter().map(|v| 1.0 / v).collect()),
                    )
                }
                Covariance::Full(rows) => {
                    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                        return Err(Error::Validation(format!(
                            "component {j} covariance is not {dim}×{dim}"
                        )));
                    }
                    let m = DMatrix::from_fn(dim, dim, |r, c| rows[r][c]);
                    let chol = nalgebra::Cholesky::new(m).ok_or_else(|| {
                        Error::Validation(format!(
                            "component {j} covariance is not positive definite"
                        ))
                    })?;
                    let l = chol.unpack();
                    let ln_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
                    (ln_det, ScorerShape::Full(l))
                }
            };
            scorers.push(ComponentScorer {
                constant: c.weight.ln() - 0.5 * (d * LN_2PI + ln_det),
                shape,
            });
        }

        Ok(FittedMixture {
            params: MixtureParams {
                covariance_type,
                components,
                metadata,
            },
            scorers,
        })
    }

    pub fn covariance_type(&self) -> CovarianceType {
        self.params.covariance_type
    }

    pub fn components(&self) -> &[Component] {
        &self.params.components
    }

    pub fn metadata(&self) -> &TrainingMetadata {
        &self.params.metadata
    }

    pub fn dim(&self) -> usize {
        self.params.components[0].mean.len()
    }

    /// `log Σ_j w_j N(x | μ_j, Σ_j)`, via log-sum-exp over components.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if x.len() != dim {
            return Err(Error::Dimension { expected: dim, found: x.len() });
        }
        let mut diff = vec![0.0; dim];
        let mut scratch = vec![0.0; dim];
        let terms: Vec<f64> = self
            .scorers
            .iter()
            .zip(&self.params.components)
            .map(|(s, c)| {
                let quad = match &s.shape {
                    ScorerShape::Spherical(p) => {
                        p * x.iter().zip(&c.mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                    }
                    ScorerShape::Diagonal(p) => x
                        .iter()
                        .zip(&c.mean)
                        .zip(p)
                        .map(|((a, b), p)| p * (a - b) * (a - b))
                        .sum(),
                    ScorerShape::Full(l) => {
                        for ((d, a), b) in diff.iter_mut().zip(x).zip(&c.mean) {
                            *d = a - b;
                        }
                        forward_solve_sq_norm(l, &diff, &mut scratch)
                    }
                };
                s.constant - 0.5 * quad
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }
}
