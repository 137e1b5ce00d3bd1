//! Special functions and stable reductions used by the variational updates.

use std::f64::consts::PI;

pub use statrs::function::gamma::{digamma, ln_gamma};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log(sum(exp(values)))` without overflow. Returns `-inf` for an empty
/// slice or when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log of the multivariate gamma function `Γ_p(x)`.
pub fn ln_multigamma(x: f64, p: usize) -> f64 {
    let p_f = p as f64;
    let mut acc = p_f * (p_f - 1.0) / 4.0 * PI.ln();
    for i in 0..p {
        acc += ln_gamma(x - i as f64 / 2.0);
    }
    acc
}

/// `Σ_{i=1..p} ψ((dof + 1 - i) / 2)`, the digamma part of `E[ln |Λ|]` under a Wishart.
pub fn multi_digamma(dof: f64, p: usize) -> f64 {
    (0..p).map(|i| digamma((dof - i as f64) / 2.0)).sum()
}

/// Log of the Dirichlet normaliser `B(α) = Π Γ(α_j) / Γ(Σ α_j)`.
pub fn ln_beta_fn(alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(total)
}
