use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceType {
    /// One variance shared by every dimension of a component.
    Spherical,
    /// Independent per-dimension variances.
    Diagonal,
    /// Dense symmetric positive-definite matrix.
    Full,
}

impl CovarianceType {
    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceType::Spherical => "spherical",
            CovarianceType::Diagonal => "diagonal",
            CovarianceType::Full => "full",
        }
    }
}

/// Rate of the Gamma prior on component precisions.
///
/// `Empirical` uses the per-dimension variance of the data being fitted
/// (floored at `variance_floor`); `Fixed` uses the same rate for every
/// dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorRate {
    Empirical,
    Fixed(f64),
}

impl Serialize for PriorRate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PriorRate::Empirical => s.serialize_str("empirical"),
            PriorRate::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for PriorRate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Value(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Name(s) if s == "empirical" => Ok(PriorRate::Empirical),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "precision_prior_rate must be a number or \"empirical\", got {s:?}"
            ))),
            Raw::Value(v) => Ok(PriorRate::Fixed(v)),
        }
    }
}

/// Hyperparameters of one variational mixture fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawBgmmConfig")]
pub struct BgmmConfig {
    pub max_components: usize,
    pub covariance_type: CovarianceType,
    /// Symmetric Dirichlet concentration on the mixing weights.
    pub weight_concentration_prior: f64,
    /// Pseudo-count of the Gaussian prior on component means.
    pub mean_prior_strength: f64,
    pub precision_prior_shape: f64,
    pub precision_prior_rate: PriorRate,
    pub variance_floor: f64,
    pub max_iterations: usize,
    pub elbo_tolerance: f64,
    pub prune_threshold: f64,
    pub n_restarts: usize,
}

impl Default for BgmmConfig {
    fn default() -> Self {
        RawBgmmConfig::default().into()
    }
}

impl BgmmConfig {
    pub fn with_covariance(mut self, covariance_type: CovarianceType) -> Self {
        self.covariance_type = covariance_type;
        self
    }

    /// Set the component budget; the weight prior follows it as `1 / max_components`.
    pub fn with_max_components(mut self, max_components: usize) -> Self {
        self.max_components = max_components;
        self.weight_concentration_prior = 1.0 / max_components.max(1) as f64;
        self
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("bgmm.{name} must be positive, got {v}")))
            }
        }
        if self.max_components == 0 {
            return Err(Error::Config("bgmm.max_components must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("bgmm.max_iterations must be positive".into()));
        }
        if self.n_restarts == 0 {
            return Err(Error::Config("bgmm.n_restarts must be positive".into()));
        }
        positive("weight_concentration_prior", self.weight_concentration_prior)?;
        positive("mean_prior_strength", self.mean_prior_strength)?;
        positive("precision_prior_shape", self.precision_prior_shape)?;
        if let PriorRate::Fixed(rate) = self.precision_prior_rate {
            positive("precision_prior_rate", rate)?;
        }
        positive("variance_floor", self.variance_floor)?;
        positive("elbo_tolerance", self.elbo_tolerance)?;
        if !(self.prune_threshold > 0.0 && self.prune_threshold < 1.0) {
            return Err(Error::Config(format!(
                "bgmm.prune_threshold must lie in (0, 1), got {}",
                self.prune_threshold
            )));
        }
        Ok(())
    }
}

/// Wire form: every field optional. The weight prior default depends on the
/// resolved component budget.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBgmmConfig {
    max_components: Option<usize>,
    covariance_type: Option<CovarianceType>,
    weight_concentration_prior: Option<f64>,
    mean_prior_strength: Option<f64>,
    precision_prior_shape: Option<f64>,
    precision_prior_rate: Option<PriorRate>,
    variance_floor: Option<f64>,
    max_iterations: Option<usize>,
    elbo_tolerance: Option<f64>,
    prune_threshold: Option<f64>,
    n_restarts: Option<usize>,
}

impl From<RawBgmmConfig> for BgmmConfig {
    fn from(raw: RawBgmmConfig) -> Self {
        let max_components = raw.max_components.unwrap_or(10);
        BgmmConfig {
            max_components,
            covariance_type: raw.covariance_type.unwrap_or(CovarianceType::Diagonal),
            weight_concentration_prior: raw
                .weight_concentration_prior
                .unwrap_or(1.0 / max_components.max(1) as f64),
            mean_prior_strength: raw.mean_prior_strength.unwrap_or(1.0),
            precision_prior_shape: raw.precision_prior_shape.unwrap_or(1.0),
            precision_prior_rate: raw.precision_prior_rate.unwrap_or(PriorRate::Empirical),
            variance_floor: raw.variance_floor.unwrap_or(1e-6),
            max_iterations: raw.max_iterations.unwrap_or(500),
            elbo_tolerance: raw.elbo_tolerance.unwrap_or(1e-6),
            prune_threshold: raw.prune_threshold.unwrap_or(1e-2),
            n_restarts: raw.n_restarts.unwrap_or(1),
        }
    }
}
