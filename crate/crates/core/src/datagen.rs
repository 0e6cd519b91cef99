//! Seeded synthetic data: contaminated designs, heavy-tailed noise draws,
//! GLM/quantile response mechanisms, and the additive nonparametric target
//! for the network benchmarks.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Covariate contamination models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    /// Entrywise additive Pareto(β) draws on [1,∞), scale 1. With `centered`
    /// the known mean β/(β−1) is subtracted, keeping the design heavy-tailed
    /// but mean-zero.
    Pareto { beta: f64, centered: bool },
    /// ξ = Z·ξ' with ξ'ᵢⱼ ~ U(lo,hi) and Z = diag of Bernoulli(ψ) per
    /// coordinate. The mask is drawn once per replication unless `per_row`.
    UniformMask { lo: f64, hi: f64, psi: f64, per_row: bool },
    /// Each entry independently contaminated with N(mu, sigma²) with the
    /// given probability.
    GaussianFraction { mu: f64, sigma: f64, proportion: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Pareto { beta, .. } => {
                if beta > 1.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("pareto shape must exceed 1 (finite mean), got {beta}")))
                }
            }
            NoiseSpec::UniformMask { lo, hi, psi, .. } => {
                if lo < hi && psi > 0.0 && psi < 1.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!(
                        "uniform mask needs lo < hi and psi in (0,1), got ({lo},{hi},{psi})"
                    )))
                }
            }
            NoiseSpec::GaussianFraction { sigma, proportion, .. } => {
                if sigma > 0.0 && proportion > 0.0 && proportion < 1.0 {
                    Ok(())
                } else {
                    Err(Error::Domain("gaussian fraction needs sigma > 0, proportion in (0,1)".into()))
                }
            }
        }
    }

    /// Short label for reports: "pareto", "mask", "gauss".
    pub fn label(&self) -> &'static str {
        match self {
            NoiseSpec::Pareto { .. } => "pareto",
            NoiseSpec::UniformMask { .. } => "mask",
            NoiseSpec::GaussianFraction { .. } => "gauss",
        }
    }

    /// The β or ψ column of the report.
    pub fn level(&self) -> f64 {
        match *self {
            NoiseSpec::Pareto { beta, .. } => beta,
            NoiseSpec::UniformMask { psi, .. } => psi,
            NoiseSpec::GaussianFraction { proportion, .. } => proportion,
        }
    }
}

/// A generated or loaded benchmark dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub theta_star: Option<Array1<f64>>,
    pub meta: GeneratorFingerprint,
}

/// Provenance of a dataset: the seed and a human-readable spec string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorFingerprint {
    pub seed: u64,
    pub spec: String,
}

/// i.i.d. Pareto(β) draws via inverse CDF x = (1−U)^{−1/β}, scale 1.
pub fn sample_pareto(beta: f64, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if beta <= 1.0 {
        return Err(Error::Domain(format!("pareto shape must exceed 1, got {beta}")));
    }
    Ok((0..count)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..1.0);
            (1.0 - u).powf(-1.0 / beta)
        })
        .collect())
}

/// Contaminated design X = X' + ξ and the clean X'.
pub fn gen_design(
    n: usize,
    p: usize,
    noise: Option<&NoiseSpec>,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if n == 0 || p == 0 {
        return Err(Error::Domain("n and p must be >= 1".into()));
    }
    let clean = Array2::from_shape_fn((n, p), |_| StandardNormal.sample(rng));
    let Some(noise) = noise else {
        return Ok((clean.clone(), clean));
    };
    noise.validate()?;
    let mut x = clean.clone();
    match *noise {
        NoiseSpec::Pareto { beta, centered } => {
            let shift = if centered { beta / (beta - 1.0) } else { 0.0 };
            for v in x.iter_mut() {
                let u: f64 = rng.gen_range(0.0..1.0);
                *v += (1.0 - u).powf(-1.0 / beta) - shift;
            }
        }
        NoiseSpec::UniformMask { lo, hi, psi, per_row } => {
            let shared_mask: Vec<bool> = (0..p).map(|_| rng.gen_range(0.0..1.0) < psi).collect();
            for i in 0..n {
                let row_mask: Vec<bool> = if per_row {
                    (0..p).map(|_| rng.gen_range(0.0..1.0) < psi).collect()
                } else {
                    shared_mask.clone()
                };
                for j in 0..p {
                    if row_mask[j] {
                        x[[i, j]] += rng.gen_range(lo..hi);
                    }
                }
            }
        }
        NoiseSpec::GaussianFraction { mu, sigma, proportion } => {
            for v in x.iter_mut() {
                if rng.gen_range(0.0..1.0) < proportion {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += mu + sigma * z;
                }
            }
        }
    }
    Ok((x, clean))
}

/// θ* with i.i.d. U(0,1) entries.
pub fn gen_true_theta(p: usize, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
    if p == 0 {
        return Err(Error::Domain("p must be >= 1".into()));
    }
    Ok(Array1::from_shape_fn(p, |_| rng.gen_range(0.0..1.0)))
}

/// Noise shape for the quantile response mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QuantileNoise {
    /// N(0, sigma²) shifted so its τ-quantile is 0.
    Gaussian { sigma: f64 },
    /// Pareto(β) shifted so its τ-quantile is 0.
    Pareto { beta: f64 },
}

/// Which response mechanism to attach to a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ResponseKind {
    Logistic,
    Nbr { eta: f64 },
    Quantile { tau: f64, noise: QuantileNoise },
}

/// y given the scalar scores s = f(x). Logistic draws Bernoulli(σ(s)),
/// NBR draws the gamma–poisson mixture with mean e^s (erroring past e³⁰),
/// quantile adds noise recentered to τ-quantile zero.
pub fn gen_response_from_scores(
    scores: &Array1<f64>,
    kind: ResponseKind,
    rng: &mut ChaCha8Rng,
) -> Result<Array1<f64>> {
    let n = scores.len();
    let mut y = Array1::zeros(n);
    match kind {
        ResponseKind::Logistic => {
            for (i, &s) in scores.iter().enumerate() {
                let prob = crate::losses::sigmoid(s);
                y[i] = if rng.gen_range(0.0..1.0) < prob { 1.0 } else { 0.0 };
            }
        }
        ResponseKind::Nbr { eta } => {
            if eta <= 0.0 {
                return Err(Error::Domain(format!("dispersion must be positive, got {eta}")));
            }
            for (i, &s) in scores.iter().enumerate() {
                if s > 30.0 {
                    return Err(Error::Data(format!(
                        "nbr mean overflow at row {i}: score {s} exceeds the e^30 cap"
                    )));
                }
                let mu = s.exp();
                let gamma = Gamma::new(eta, mu / eta)
                    .map_err(|e| Error::Data(format!("gamma draw at row {i}: {e}")))?;
                let rate: f64 = gamma.sample(rng);
                let pois = Poisson::new(rate.max(1e-300))
                    .map_err(|e| Error::Data(format!("poisson draw at row {i}: {e}")))?;
                y[i] = pois.sample(rng);
            }
        }
        ResponseKind::Quantile { tau, noise } => {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::Domain(format!("tau must be in (0,1), got {tau}")));
            }
            match noise {
                QuantileNoise::Gaussian { sigma } => {
                    let shift = Normal::new(0.0, 1.0).unwrap().inverse_cdf(tau) * sigma;
                    for (i, &s) in scores.iter().enumerate() {
                        let z: f64 = StandardNormal.sample(rng);
                        y[i] = s + sigma * z - shift;
                    }
                }
                QuantileNoise::Pareto { beta } => {
                    if beta <= 1.0 {
                        return Err(Error::Domain(format!("pareto shape must exceed 1, got {beta}")));
                    }
                    let shift = (1.0 - tau).powf(-1.0 / beta);
                    for (i, &s) in scores.iter().enumerate() {
                        let u: f64 = rng.gen_range(0.0..1.0);
                        y[i] = s + (1.0 - u).powf(-1.0 / beta) - shift;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// y from the linear mechanism xᵀθ*.
pub fn gen_response(
    x: &Array2<f64>,
    theta_star: &Array1<f64>,
    kind: ResponseKind,
    rng: &mut ChaCha8Rng,
) -> Result<Array1<f64>> {
    if x.ncols() != theta_star.len() {
        return Err(Error::Dimension(format!(
            "design has {} columns, theta has {}",
            x.ncols(),
            theta_star.len()
        )));
    }
    let scores = x.dot(theta_star);
    gen_response_from_scores(&scores, kind, rng)
}

/// The three univariate component functions of the additive target.
pub fn additive_component(index: u8, x: f64) -> f64 {
    match index {
        1 => -10.0 * x + 0.3,
        2 => 0.7 * x.powi(3) - 0.2 * x.powi(2) + 0.3 * x - 0.3,
        3 => 0.3 * x.sin() * x.abs().sqrt(),
        _ => panic!("component index must be 1..=3"),
    }
}

/// Additive nonparametric data: latent score f₀(Xᵢ + ξᵢ) with
/// f₀(x) = Σⱼ f_j(x_j), each f_j drawn uniformly from the three components
/// (one index per column). The observed design is the clean X.
pub struct AdditiveData {
    pub x: Array2<f64>,
    pub scores: Array1<f64>,
    pub component_indices: Vec<u8>,
}

pub fn gen_additive_dnn_data(
    n: usize,
    p: usize,
    noise: Option<&NoiseSpec>,
    rng: &mut ChaCha8Rng,
) -> Result<AdditiveData> {
    let (contaminated, clean) = gen_design(n, p, noise, rng)?;
    let component_indices: Vec<u8> = (0..p).map(|_| rng.gen_range(1..=3u8)).collect();
    let mut scores = Array1::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..p {
            acc += additive_component(component_indices[j], contaminated[[i, j]]);
        }
        scores[i] = acc;
    }
    Ok(AdditiveData {
        x: clean,
        scores,
        component_indices,
    })
}

/// Write a dataset as CSV with columns x_1..x_p, y.
pub fn export_csv(dataset: &Dataset, path: &std::path::Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let p = dataset.x.ncols();
    let mut header: Vec<String> = (1..=p).map(|j| format!("x_{j}")).collect();
    header.push("y".into());
    writer
        .write_record(&header)
        .map_err(|e| Error::Data(format!("csv write: {e}")))?;
    for (row, &yi) in dataset.x.outer_iter().zip(dataset.y.iter()) {
        let mut record: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        record.push(format!("{yi:.17e}"));
        writer
            .write_record(&record)
            .map_err(|e| Error::Data(format!("csv write: {e}")))?;
    }
    writer.flush()?;
    Ok(())
}

#[doc(hidden)]
pub mod tests_support {
    use super::*;

    /// Small clean logistic dataset for unit tests elsewhere in the crate.
    pub fn small_logistic(n: usize, p: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, _) = gen_design(n, p, None, &mut rng).unwrap();
        let theta = gen_true_theta(p, &mut rng).unwrap();
        let y = gen_response(&x, &theta, ResponseKind::Logistic, &mut rng).unwrap();
        (x, y)
    }
}
