//! Variational Bayesian Gaussian mixtures with post-convergence pruning.

mod config;
mod mixture;
pub mod special;
mod variational;

use nalgebra::SymmetricEigen;

pub use config::{BgmmConfig, CovarianceType, PriorRate};
pub use mixture::{Component, Covariance, FittedMixture, TrainingMetadata};
pub use variational::{ComponentPosterior, PrecisionPosterior, Priors, VariationalState};

use crate::error::{Error, Result};
use crate::seed;
use variational::PlugIn;

/// Recorded in metadata: scoring plugs posterior means into a plain mixture density.
pub const PLUG_IN_SCORING: &str = "posterior_mean_plug_in";

/// Fit a mixture to `data` by variational EM.
///
/// Restart `0` uses `seed` directly; restart `i > 0` uses a seed derived from
/// `(seed, i)`. The restart with the highest final bound wins, ties going to
/// the lowest index. The returned state is the winner's, before pruning.
pub fn fit<T: AsRef<[f64]>>(
    data: &[T],
    config: &BgmmConfig,
    seed: u64,
) -> Result<(FittedMixture, VariationalState)> {
    config.validate()?;
    let first = data.first().ok_or(Error::Empty("cannot fit a mixture to zero samples"))?;
    let dim = first.as_ref().len();
    if dim == 0 {
        return Err(Error::Validation("sample dimension must be positive".into()));
    }
    for (i, x) in data.iter().enumerate() {
        let x = x.as_ref();
        if x.len() != dim {
            return Err(Error::Dimension { expected: dim, found: x.len() });
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("sample {i} contains non-finite value {v}")));
        }
    }

    let priors = Priors::from_data(data, config);
    let mut best: Option<(usize, u64, VariationalState)> = None;
    for restart in 0..config.n_restarts {
        let restart_seed = if restart == 0 {
            seed
        } else {
            seed::derive(seed, &(restart as u64).to_le_bytes())
        };
        let state = variational::run(data, config, priors.clone(), restart_seed)?;
        let bound = final_bound(&state);
        if best.as_ref().map_or(true, |(_, _, b)| bound > final_bound(b)) {
            best = Some((restart, restart_seed, state));
        }
    }
    let (restart, restart_seed, state) = best.expect("n_restarts validated positive");
    let mixture = prune(&state, config, restart_seed, restart)?;
    Ok((mixture, state))
}

fn final_bound(state: &VariationalState) -> f64 {
    *state.elbo_trace().last().expect("trace is never empty")
}

/// Drop components whose expected weight is below the threshold and turn the
/// survivors' posteriors into plug-in parameters.
fn prune(
    state: &VariationalState,
    config: &BgmmConfig,
    seed: u64,
    restart: usize,
) -> Result<FittedMixture> {
    let weights = state.expected_weights();
    let mut kept: Vec<usize> = (0..weights.len())
        .filter(|&j| weights[j] >= config.prune_threshold)
        .collect();
    let all_pruned = kept.is_empty();
    if all_pruned {
        let heaviest = (0..weights.len())
            .fold(0, |best, j| if weights[j] > weights[best] { j } else { best });
        kept.push(heaviest);
    }

    let kept_mass: f64 = kept.iter().map(|&j| state.components()[j].concentration).sum();
    let floor = config.variance_floor;
    let components = kept
        .iter()
        .map(|&j| {
            let post = &state.components()[j];
            let covariance = match post.precision.plug_in_variances() {
                PlugIn::Spherical(v) => Covariance::Spherical(v.max(floor)),
                PlugIn::Diagonal(v) => Covariance::Diagonal(v.into_iter().map(|x| x.max(floor)).collect()),
                PlugIn::Full(m) => {
                    let m = floor_eigenvalues(m, floor);
                    Covariance::Full(m.row_iter().map(|r| r.iter().copied().collect()).collect())
                }
            };
            Component {
                weight: post.concentration / kept_mass,
                mean: post.mean_location.clone(),
                covariance,
            }
        })
        .collect();

    FittedMixture::new(
        state.covariance_type(),
        components,
        TrainingMetadata {
            final_elbo: final_bound(state),
            iterations: state.elbo_trace().len(),
            components_pruned: weights.len() - kept.len(),
            all_pruned,
            seed,
            restart,
            scoring: PLUG_IN_SCORING.to_string(),
        },
    )
    .map_err(|e| match e {
        Error::Validation(msg) => Error::Numerical(msg),
        other => other,
    })
}

fn floor_eigenvalues(m: nalgebra::DMatrix<f64>, floor: f64) -> nalgebra::DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return m;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let rebuilt = &eig.eigenvectors
        * nalgebra::DMatrix::from_diagonal(&clamped)
        * eig.eigenvectors.transpose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

/// `log Σ_j w_j N(x | μ_j, Σ_j)` under the fitted plug-in parameters.
pub fn log_likelihood(mixture: &FittedMixture, x: &[f64]) -> Result<f64> {
    mixture.log_likelihood(x)
}

/// Evidence lower bound of the state's current posteriors; equal to the last
/// trace entry for every state produced by [`fit`].
pub fn elbo(state: &VariationalState) -> f64 {
    state.compute_elbo().unwrap_or(f64::NAN)
}

/// Number of components whose expected mixing weight is at least `threshold`.
pub fn effective_components(state: &VariationalState, threshold: f64) -> usize {
    state
        .expected_weights()
        .into_iter()
        .filter(|&w| w >= threshold)
        .count()
}
