//! Coordinate-ascent variational inference for a finite Gaussian mixture with
//! conjugate priors.
//!
//! Model, for components `j = 1..J`:
//!
//! * `π ~ Dirichlet(α0, …, α0)`
//! * spherical: `λ_j ~ Gamma(a0, b0)`, `μ_j | λ_j ~ N(m0, (β0 λ_j)^-1 I)`
//! * diagonal:  `λ_jd ~ Gamma(a0, b0_d)`, `μ_jd | λ_jd ~ N(m0_d, (β0 λ_jd)^-1)`
//! * full:      `Λ_j ~ Wishart(W0, ν0)`, `μ_j | Λ_j ~ N(m0, (β0 Λ_j)^-1)`
//!
//! with `ν0 = D - 1 + 2 a0` and `W0^-1 = 2 diag(b0)`, which makes the full
//! prior coincide with the Gamma prior when `D = 1`.
//!
//! The posterior factorises as `q(Z) q(π) Π_j q(μ_j, Λ_j)` and every factor
//! stays in its conjugate family, so both half-steps are closed form. After an
//! M-step the bound collapses to
//!
//! `H(r) - (N D / 2) ln 2π + ln B(α) - ln B(α0) + Σ_j [ln Z(post_j) - ln Z(prior)]`
//!
//! where `Z` is the normaliser of the Normal-Gamma / Normal-Wishart density.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{BgmmConfig, CovarianceType, PriorRate};
use super::special::{digamma, ln_beta_fn, ln_gamma, ln_multigamma, log_sum_exp, multi_digamma, LN_2PI};
use crate::error::{Error, Result};

/// Conjugate prior hyperparameters, resolved against the data being fitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub weight_concentration: f64,
    pub mean_location: Vec<f64>,
    pub mean_strength: f64,
    /// Gamma shape `a0`; the Wishart uses `ν0 = D - 1 + 2 a0`.
    pub precision_shape: f64,
    /// Per-dimension Gamma rate `b0_d`.
    pub precision_rate: Vec<f64>,
}

impl Priors {
    pub fn from_data<T: AsRef<[f64]>>(data: &[T], config: &BgmmConfig) -> Priors {
        let n = data.len() as f64;
        let dim = data[0].as_ref().len();
        let mut mean = vec![0.0; dim];
        for x in data {
            for (m, v) in mean.iter_mut().zip(x.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let rate = match config.precision_prior_rate {
            PriorRate::Fixed(r) => vec![r; dim],
            PriorRate::Empirical => {
                let mut var = vec![0.0; dim];
                for x in data {
                    for ((s, v), m) in var.iter_mut().zip(x.as_ref()).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.into_iter()
                    .map(|s| (s / n).max(config.variance_floor))
                    .collect()
            }
        };

        Priors {
            weight_concentration: config.weight_concentration_prior,
            mean_location: mean,
            mean_strength: config.mean_prior_strength,
            precision_shape: config.precision_prior_shape,
            precision_rate: rate,
        }
    }

    fn dim(&self) -> usize {
        self.mean_location.len()
    }

    fn spherical_rate(&self) -> f64 {
        self.precision_rate.iter().sum::<f64>() / self.dim() as f64
    }

    fn wishart_dof(&self) -> f64 {
        self.dim() as f64 - 1.0 + 2.0 * self.precision_shape
    }

    fn wishart_scale_inv(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.dim(),
            self.precision_rate.iter().map(|b| 2.0 * b),
        ))
    }
}

/// Posterior over one component's precision.
#[derive(Debug, Clone, PartialEq)]
pub enum PrecisionPosterior {
    Spherical { shape: f64, rate: f64 },
    Diagonal { shape: f64, rate: Vec<f64> },
    /// Wishart with `dof` degrees of freedom and inverse scale matrix `W^-1`.
    Full { dof: f64, scale_inv: DMatrix<f64> },
}

impl PrecisionPosterior {
    /// Inverse of the posterior-mean precision, i.e. the plug-in covariance.
    pub(crate) fn plug_in_variances(&self) -> PlugIn {
        match self {
            PrecisionPosterior::Spherical { shape, rate } => PlugIn::Spherical(rate / shape),
            PrecisionPosterior::Diagonal { shape, rate } => {
                PlugIn::Diagonal(rate.iter().map(|b| b / shape).collect())
            }
            PrecisionPosterior::Full { dof, scale_inv } => PlugIn::Full(scale_inv / *dof),
        }
    }
}

pub(crate) enum PlugIn {
    Spherical(f64),
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

/// Variational posterior of one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPosterior {
    /// Dirichlet concentration `α_j`.
    pub concentration: f64,
    /// Strength `β_j` of the Gaussian posterior on the mean.
    pub mean_strength: f64,
    /// Location `m_j` of the Gaussian posterior on the mean.
    pub mean_location: Vec<f64>,
    pub precision: PrecisionPosterior,
}

/// Full state of a variational fit: soft assignments, per-component
/// posteriors, and the bound recorded after every M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub(crate) covariance_type: CovarianceType,
    pub(crate) n_samples: usize,
    pub(crate) priors: Priors,
    /// Row-major `N × J`.
    pub(crate) responsibilities: Vec<f64>,
    pub(crate) components: Vec<ComponentPosterior>,
    pub(crate) elbo_trace: Vec<f64>,
}

impl VariationalState {
    pub fn covariance_type(&self) -> CovarianceType {
        self.covariance_type
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.priors.dim()
    }

    pub fn priors(&self) -> &Priors {
        &self.priors
    }

    pub fn components(&self) -> &[ComponentPosterior] {
        &self.components
    }

    pub fn responsibilities(&self) -> &[f64] {
        &self.responsibilities
    }

    pub fn responsibility_row(&self, i: usize) -> &[f64] {
        let j = self.n_components();
        &self.responsibilities[i * j..(i + 1) * j]
    }

    pub fn elbo_trace(&self) -> &[f64] {
        &self.elbo_trace
    }

    /// Posterior-mean mixing weights `α_j / Σ α`.
    pub fn expected_weights(&self) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.concentration).sum();
        self.components
            .iter()
            .map(|c| c.concentration / total)
            .collect()
    }

    /// Rebuild a state from explicit responsibilities by running one M-step.
    /// The trace holds the single resulting bound.
    pub fn from_responsibilities<T: AsRef<[f64]>>(
        data: &[T],
        priors: Priors,
        covariance_type: CovarianceType,
        responsibilities: Vec<f64>,
    ) -> Result<VariationalState> {
        let n = data.len();
        if n == 0 || responsibilities.is_empty() || responsibilities.len() % n != 0 {
            return Err(Error::Validation(
                "responsibility matrix must be N × J with N, J ≥ 1".into(),
            ));
        }
        let n_components = responsibilities.len() / n;
        let components = m_step(data, &responsibilities, n_components, &priors, covariance_type)?;
        let mut state = VariationalState {
            covariance_type,
            n_samples: n,
            priors,
            responsibilities,
            components,
            elbo_trace: Vec::new(),
        };
        let bound = state.compute_elbo()?;
        state.elbo_trace.push(bound);
        Ok(state)
    }

    /// Swap component labels: component `perm[j]` of `self` becomes component `j`.
    pub fn permuted(&self, perm: &[usize]) -> VariationalState {
        let j = self.n_components();
        assert_eq!(perm.len(), j, "permutation length must equal component count");
        let mut responsibilities = vec![0.0; self.responsibilities.len()];
        for i in 0..self.n_samples {
            for (dst, &src) in perm.iter().enumerate() {
                responsibilities[i * j + dst] = self.responsibilities[i * j + src];
            }
        }
        VariationalState {
            responsibilities,
            components: perm.iter().map(|&p| self.components[p].clone()).collect(),
            ..self.clone()
        }
    }

    /// Evidence lower bound for the current responsibilities and posteriors.
    ///
    /// Exact only when the posteriors are the M-step optimum for the stored
    /// responsibilities, which holds for every state produced by this module.
    pub(crate) fn compute_elbo(&self) -> Result<f64> {
        let dim = self.dim();
        let n_comp = self.n_components();
        let priors = &self.priors;

        let entropy: f64 = self
            .responsibilities
            .iter()
            .filter(|&&r| r > 0.0)
            .map(|&r| -r * r.ln())
            .sum();

        let alpha: Vec<f64> = self.components.iter().map(|c| c.concentration).collect();
        let dirichlet = ln_beta_fn(&alpha) - ln_beta_fn(&vec![priors.weight_concentration; n_comp]);

        let prior_norm = ln_normaliser(
            &prior_precision(priors, self.covariance_type),
            priors.mean_strength,
            dim,
        )?;
        let mut gaussians = 0.0;
        for c in &self.components {
            gaussians += ln_normaliser(&c.precision, c.mean_strength, dim)? - prior_norm;
        }

        let bound = entropy - 0.5 * (self.n_samples * dim) as f64 * LN_2PI + dirichlet + gaussians;
        if bound.is_finite() {
            Ok(bound)
        } else {
            Err(Error::Numerical(format!("evidence lower bound is {bound}")))
        }
    }
}

fn prior_precision(priors: &Priors, covariance_type: CovarianceType) -> PrecisionPosterior {
    match covariance_type {
        CovarianceType::Spherical => PrecisionPosterior::Spherical {
            shape: priors.precision_shape,
            rate: priors.spherical_rate(),
        },
        CovarianceType::Diagonal => PrecisionPosterior::Diagonal {
            shape: priors.precision_shape,
            rate: priors.precision_rate.clone(),
        },
        CovarianceType::Full => PrecisionPosterior::Full {
            dof: priors.wishart_dof(),
            scale_inv: priors.wishart_scale_inv(),
        },
    }
}

/// Log normaliser of a Normal-Gamma / Normal-Wishart density with mean strength `β`.
fn ln_normaliser(precision: &PrecisionPosterior, strength: f64, dim: usize) -> Result<f64> {
    let d = dim as f64;
    let mean_part = 0.5 * d * (LN_2PI - strength.ln());
    let precision_part = match precision {
        PrecisionPosterior::Spherical { shape, rate } => ln_gamma(*shape) - shape * rate.ln(),
        PrecisionPosterior::Diagonal { shape, rate } => rate
            .iter()
            .map(|b| ln_gamma(*shape) - shape * b.ln())
            .sum(),
        PrecisionPosterior::Full { dof, scale_inv } => {
            let ln_det_scale_inv = ln_det_spd(scale_inv)?;
            0.5 * dof * d * std::f64::consts::LN_2 - 0.5 * dof * ln_det_scale_inv
                + ln_multigamma(0.5 * dof, dim)
        }
    };
    Ok(mean_part + precision_part)
}

fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(m.clone())
        .map(|c| c.unpack())
        .ok_or_else(|| Error::Numerical("Wishart scale matrix is not positive definite".into()))
}

fn ln_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky_lower(m)?;
    Ok(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Per-component quantities the E-step needs, computed once per iteration.
enum ExpectedTerms {
    Spherical { constant: f64, precision: f64 },
    Diagonal { constant: f64, precision: Vec<f64> },
    Full { constant: f64, dof: f64, scale_inv_chol: DMatrix<f64> },
}

fn expected_terms(components: &[ComponentPosterior], dim: usize) -> Result<Vec<ExpectedTerms>> {
    let d = dim as f64;
    let alpha_total: f64 = components.iter().map(|c| c.concentration).sum();
    let psi_total = digamma(alpha_total);
    components
        .iter()
        .map(|c| {
            let ln_weight = digamma(c.concentration) - psi_total;
            let base = ln_weight - 0.5 * d * LN_2PI - 0.5 * d / c.mean_strength;
            Ok(match &c.precision {
                PrecisionPosterior::Spherical { shape, rate } => ExpectedTerms::Spherical {
                    constant: base + 0.5 * d * (digamma(*shape) - rate.ln()),
                    precision: shape / rate,
                },
                PrecisionPosterior::Diagonal { shape, rate } => {
                    let psi = digamma(*shape);
                    ExpectedTerms::Diagonal {
                        constant: base + 0.5 * rate.iter().map(|b| psi - b.ln()).sum::<f64>(),
                        precision: rate.iter().map(|b| shape / b).collect(),
                    }
                }
                PrecisionPosterior::Full { dof, scale_inv } => {
                    let chol = cholesky_lower(scale_inv)?;
                    let ln_det_scale_inv = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
                    let e_ln_det = multi_digamma(*dof, dim) + d * std::f64::consts::LN_2
                        - ln_det_scale_inv;
                    ExpectedTerms::Full {
                        constant: base + 0.5 * e_ln_det,
                        dof: *dof,
                        scale_inv_chol: chol,
                    }
                }
            })
        })
        .collect()
}

/// Squared norm of `L^-1 v` for lower-triangular `L`.
pub(crate) fn forward_solve_sq_norm(l: &DMatrix<f64>, v: &[f64], scratch: &mut [f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut s = v[i];
        for k in 0..i {
            s -= l[(i, k)] * scratch[k];
        }
        let y = s / l[(i, i)];
        scratch[i] = y;
        acc += y * y;
    }
    acc
}

/// Responsibilities `r_nj ∝ exp(E[ln π_j] + E[ln N(x_n | μ_j, Λ_j)])`, row-normalised.
pub(crate) fn e_step<T: AsRef<[f64]>>(
    data: &[T],
    components: &[ComponentPosterior],
) -> Result<Vec<f64>> {
    let n_comp = components.len();
    let dim = data[0].as_ref().len();
    let terms = expected_terms(components, dim)?;
    let mut resp = vec![0.0; data.len() * n_comp];
    let mut log_rho = vec![0.0; n_comp];
    let mut scratch = vec![0.0; dim];
    let mut diff = vec![0.0; dim];

    for (i, x) in data.iter().enumerate() {
        let x = x.as_ref();
        for (j, (term, comp)) in terms.iter().zip(components).enumerate() {
            let m = &comp.mean_location;
            log_rho[j] = match term {
                ExpectedTerms::Spherical { constant, precision } => {
                    let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                    constant - 0.5 * precision * sq
                }
                ExpectedTerms::Diagonal { constant, precision } => {
                    let q: f64 = x
                        .iter()
                        .zip(m)
                        .zip(precision)
                        .map(|((a, b), p)| p * (a - b) * (a - b))
                        .sum();
                    constant - 0.5 * q
                }
                ExpectedTerms::Full { constant, dof, scale_inv_chol } => {
                    for ((d, a), b) in diff.iter_mut().zip(x).zip(m) {
                        *d = a - b;
                    }
                    constant - 0.5 * dof * forward_solve_sq_norm(scale_inv_chol, &diff, &mut scratch)
                }
            };
        }
        let norm = log_sum_exp(&log_rho);
        if !norm.is_finite() {
            return Err(Error::Numerical(format!(
                "responsibilities for sample {i} are not normalisable"
            )));
        }
        let row = &mut resp[i * n_comp..(i + 1) * n_comp];
        for (r, lr) in row.iter_mut().zip(&log_rho) {
            *r = (lr - norm).exp();
        }
    }
    Ok(resp)
}

/// Closed-form posterior update from responsibility-weighted statistics.
pub(crate) fn m_step<T: AsRef<[f64]>>(
    data: &[T],
    resp: &[f64],
    n_comp: usize,
    priors: &Priors,
    covariance_type: CovarianceType,
) -> Result<Vec<ComponentPosterior>> {
    let dim = priors.dim();
    let beta0 = priors.mean_strength;
    let m0 = &priors.mean_location;

    (0..n_comp)
        .map(|j| {
            let weights = data.iter().enumerate().map(|(i, _)| resp[i * n_comp + j]);
            let nk: f64 = weights.clone().sum();
            let strength = beta0 + nk;

            // m = (β0 m0 + Σ r x) / β
            let mut location: Vec<f64> = m0.iter().map(|v| beta0 * v).collect();
            for (x, r) in data.iter().zip(weights.clone()) {
                if r > 0.0 {
                    for (l, v) in location.iter_mut().zip(x.as_ref()) {
                        *l += r * v;
                    }
                }
            }
            location.iter_mut().for_each(|l| *l /= strength);

            // Scatter about m plus the prior-mean term β0 (m - m0)(m - m0)^T.
            let precision = match covariance_type {
                CovarianceType::Spherical | CovarianceType::Diagonal => {
                    let mut scatter: Vec<f64> = location
                        .iter()
                        .zip(m0)
                        .map(|(m, p)| beta0 * (m - p) * (m - p))
                        .collect();
                    for (x, r) in data.iter().zip(weights.clone()) {
                        if r > 0.0 {
                            for ((s, v), m) in scatter.iter_mut().zip(x.as_ref()).zip(&location) {
                                *s += r * (v - m) * (v - m);
                            }
                        }
                    }
                    if covariance_type == CovarianceType::Spherical {
                        PrecisionPosterior::Spherical {
                            shape: priors.precision_shape + 0.5 * nk * dim as f64,
                            rate: priors.spherical_rate() + 0.5 * scatter.iter().sum::<f64>(),
                        }
                    } else {
                        PrecisionPosterior::Diagonal {
                            shape: priors.precision_shape + 0.5 * nk,
                            rate: priors
                                .precision_rate
                                .iter()
                                .zip(&scatter)
                                .map(|(b, s)| b + 0.5 * s)
                                .collect(),
                        }
                    }
                }
                CovarianceType::Full => {
                    let active: Vec<(usize, f64)> = weights
                        .clone()
                        .enumerate()
                        .filter(|(_, r)| *r > 0.0)
                        .collect();
                    let mut centered = DMatrix::<f64>::zeros(active.len(), dim);
                    for (row, &(i, r)) in active.iter().enumerate() {
                        let w = r.sqrt();
                        for (d, (v, m)) in data[i].as_ref().iter().zip(&location).enumerate() {
                            centered[(row, d)] = w * (v - m);
                        }
                    }
                    let mut scale_inv = priors.wishart_scale_inv() + centered.tr_mul(&centered);
                    let shift = DVector::from_iterator(
                        dim,
                        location.iter().zip(m0).map(|(m, p)| m - p),
                    );
                    scale_inv += (&shift * shift.transpose()) * beta0;
                    // Symmetrise against rounding in the products above.
                    let sym = (&scale_inv + scale_inv.transpose()) * 0.5;
                    PrecisionPosterior::Full {
                        dof: priors.wishart_dof() + nk,
                        scale_inv: sym,
                    }
                }
            };

            Ok(ComponentPosterior {
                concentration: priors.weight_concentration + nk,
                mean_strength: strength,
                mean_location: location,
                precision,
            })
        })
        .collect()
}

fn lexicographic_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Hard initial responsibilities from farthest-point centre selection.
///
/// The first centre is the extreme point along a direction drawn from `seed`;
/// each later centre is the point farthest from all chosen centres. Ties go to
/// the lexicographically smallest point and then to the lowest centre index,
/// so the result does not depend on the order of `data`.
pub(crate) fn farthest_point_responsibilities<T: AsRef<[f64]>>(
    data: &[T],
    n_comp: usize,
    seed: u64,
) -> Vec<f64> {
    let dim = data[0].as_ref().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();

    let pick = |score: &dyn Fn(usize) -> f64| -> usize {
        let mut best = 0;
        let mut best_score = score(0);
        for i in 1..data.len() {
            let s = score(i);
            if s > best_score
                || (s == best_score && lexicographic_less(data[i].as_ref(), data[best].as_ref()))
            {
                best = i;
                best_score = s;
            }
        }
        best
    };

    let sq_dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let first = pick(&|i| {
        data[i]
            .as_ref()
            .iter()
            .zip(&direction)
            .map(|(x, u)| x * u)
            .sum()
    });
    let mut centres: Vec<&[f64]> = vec![data[first].as_ref()];
    let mut nearest: Vec<f64> = data.iter().map(|x| sq_dist(x.as_ref(), centres[0])).collect();
    while centres.len() < n_comp {
        let next = pick(&|i| nearest[i]);
        let c = data[next].as_ref();
        centres.push(c);
        for (d, x) in nearest.iter_mut().zip(data) {
            *d = d.min(sq_dist(x.as_ref(), c));
        }
    }

    let mut resp = vec![0.0; data.len() * n_comp];
    for (i, x) in data.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centres.iter().enumerate() {
            let d = sq_dist(x.as_ref(), c);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        resp[i * n_comp + best] = 1.0;
    }
    resp
}

/// One seeded variational EM run from farthest-point initialisation.
pub(crate) fn run<T: AsRef<[f64]>>(
    data: &[T],
    config: &BgmmConfig,
    priors: Priors,
    seed: u64,
) -> Result<VariationalState> {
    let n_comp = config.max_components;
    let resp = farthest_point_responsibilities(data, n_comp, seed);
    let mut state =
        VariationalState::from_responsibilities(data, priors, config.covariance_type, resp)?;

    while state.elbo_trace.len() < config.max_iterations {
        state.responsibilities = e_step(data, &state.components)?;
        state.components = m_step(
            data,
            &state.responsibilities,
            n_comp,
            &state.priors,
            state.covariance_type,
        )?;
        let bound = state.compute_elbo()?;
        let previous = *state.elbo_trace.last().expect("trace starts non-empty");
        state.elbo_trace.push(bound);
        if (bound - previous).abs() < config.elbo_tolerance {
            break;
        }
    }
    Ok(state)
}
