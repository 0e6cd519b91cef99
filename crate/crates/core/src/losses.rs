//! Loss functions on the scalar score s, their (sub)gradients in s, and the
//! local Lipschitz envelopes H(y, x) used by the bound calculators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported regression losses. The score s is the linear or network output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossFn {
    /// Check loss ρ_τ(y − s) with ρ_τ(u) = u·[τ − 1(u<0)].
    Quantile { tau: f64 },
    /// Negative Bernoulli log-likelihood −[y·s − log(1+e^s)], y ∈ {0,1}.
    Logistic,
    /// Negative binomial negative log-likelihood with known dispersion η:
    /// −{y[s − log(η+e^s)] − η·log(η+e^s)}, y ∈ {0,1,2,…}.
    NegBinomial { eta: f64 },
}

/// log(1 + e^s) without overflow.
#[inline]
pub fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// e^s / (1 + e^s) without overflow.
#[inline]
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

impl LossFn {
    /// Parse a CLI-facing loss name: "quantile:<tau>", "logistic", "nbr:<eta>".
    pub fn from_name(name: &str) -> Result<Self> {
        if name == "logistic" {
            return Ok(LossFn::Logistic);
        }
        if let Some(tau) = name.strip_prefix("quantile:") {
            let tau: f64 = tau
                .parse()
                .map_err(|_| Error::Config(format!("bad quantile level: {name}")))?;
            let loss = LossFn::Quantile { tau };
            loss.validate()?;
            return Ok(loss);
        }
        if let Some(eta) = name.strip_prefix("nbr:") {
            let eta: f64 = eta
                .parse()
                .map_err(|_| Error::Config(format!("bad dispersion: {name}")))?;
            let loss = LossFn::NegBinomial { eta };
            loss.validate()?;
            return Ok(loss);
        }
        Err(Error::Config(format!("unknown loss: {name}")))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossFn::Quantile { tau } => {
                if tau > 0.0 && tau < 1.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("tau must be in (0,1), got {tau}")))
                }
            }
            LossFn::Logistic => Ok(()),
            LossFn::NegBinomial { eta } => {
                if eta > 0.0 && eta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("eta must be positive, got {eta}")))
                }
            }
        }
    }

    fn check_response(&self, y: f64) -> Result<()> {
        match *self {
            LossFn::Quantile { .. } => {
                if y.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("quantile response must be finite, got {y}")))
                }
            }
            LossFn::Logistic => {
                if y == 0.0 || y == 1.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("logistic response must be 0 or 1, got {y}")))
                }
            }
            LossFn::NegBinomial { .. } => {
                if y >= 0.0 && y.fract() == 0.0 && y.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("count response must be in {{0,1,2,…}}, got {y}")))
                }
            }
        }
    }

    /// l(y, s).
    pub fn value(&self, y: f64, s: f64) -> Result<f64> {
        self.check_response(y)?;
        Ok(self.value_unchecked(y, s))
    }

    /// l(y, s) without response validation; hot path for the solvers.
    #[inline]
    pub fn value_unchecked(&self, y: f64, s: f64) -> f64 {
        match *self {
            LossFn::Quantile { tau } => rho_tau(tau, y - s),
            LossFn::Logistic => softplus(s) - y * s,
            LossFn::NegBinomial { eta } => {
                // likelihood normalization keeps the loss positive:
                // y·log(1 + η·e^{−s}) + η·log(1 + e^s/η)
                y * softplus(eta.ln() - s) + eta * softplus(s - eta.ln())
            }
        }
    }

    /// d/ds l(y, s). At the quantile kink (y = s) the subgradient uses the
    /// left value τ−1 of ρ'_τ.
    pub fn grad(&self, y: f64, s: f64) -> Result<f64> {
        self.check_response(y)?;
        Ok(self.grad_unchecked(y, s))
    }

    #[inline]
    pub fn grad_unchecked(&self, y: f64, s: f64) -> f64 {
        match *self {
            LossFn::Quantile { tau } => {
                let u = y - s;
                let rho_slope = if u > 0.0 { tau } else { tau - 1.0 };
                -rho_slope
            }
            LossFn::Logistic => sigmoid(s) - y,
            LossFn::NegBinomial { eta } => (y + eta) * sigmoid(s - eta.ln()) - y,
        }
    }

    /// H(y, x): local Lipschitz envelope of θ ↦ l(y, xᵀθ) in the ℓ2 norm.
    pub fn lipschitz_h(&self, y: f64, x_norm: f64) -> LipschitzEnvelope {
        let value = match *self {
            LossFn::Quantile { tau } => l_tau(tau) * x_norm,
            LossFn::Logistic => 2.0 * x_norm,
            LossFn::NegBinomial { eta } => (y + eta) * x_norm,
        };
        LipschitzEnvelope { value }
    }
}

/// The envelope value H(y, x) ≥ |∂_s l|·‖x‖.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEnvelope {
    pub value: f64,
}

/// ρ_τ(u) = u·[τ − 1(u<0)].
#[inline]
pub fn rho_tau(tau: f64, u: f64) -> f64 {
    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
}

/// l_τ = max{1+τ, 2−τ}, the quantile-loss Lipschitz constant.
#[inline]
pub fn l_tau(tau: f64) -> f64 {
    (1.0 + tau).max(2.0 - tau)
}

/// Residual of the exact expansion
/// ρ_τ(u−v) − ρ_τ(u) = −v[τ − 1(u<0)] + ∫₀ᵛ [1(u≤s) − 1(u≤0)] ds,
/// with the integral in closed piecewise form. Exact up to rounding.
pub fn knight_identity_check(tau: f64, u: f64, v: f64) -> f64 {
    let lhs = rho_tau(tau, u - v) - rho_tau(tau, u);
    let linear = -v * (tau - if u < 0.0 { 1.0 } else { 0.0 });
    let integral = if v >= 0.0 {
        if u <= 0.0 {
            0.0
        } else {
            (v - u).max(0.0)
        }
    } else if u > 0.0 || u <= v {
        0.0
    } else {
        u - v
    };
    (lhs - (linear + integral)).abs()
}

/// Worst knight-identity residual over seeded random (τ, u, v) triples.
pub fn max_knight_residual(n_triples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_triples {
        let tau = rng.gen_range(0.01..0.99);
        let u: f64 = rng.gen_range(-50.0..50.0);
        let v: f64 = rng.gen_range(-50.0..50.0);
        worst = worst.max(knight_identity_check(tau, u, v));
    }
    worst
}
