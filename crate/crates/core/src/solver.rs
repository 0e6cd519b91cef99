//! Truncated empirical risk, its chain-rule gradient, the closed-form default
//! tuning scale α, SGD over mini-batches with ℓ2-norm regularization, holdout
//! hyperparameter search, and negative-binomial dispersion pre-estimation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::losses::LossFn;
use crate::model::{backward, predict_unchecked, Gradient, ModelKind, Params};
use crate::truncation::{lambda_eval, HighOrderFn, TruncationSpec};

/// Whether the per-sample loss passes through ψ_λ or untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TruncationMode {
    /// ψ_λ(α·l)/α with the spec's λ and α.
    Log(TruncationSpec),
    /// Plain empirical risk; the baseline arm.
    None,
}

impl TruncationMode {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            TruncationMode::Log(spec) => Some(spec.alpha),
            TruncationMode::None => None,
        }
    }
}

/// The regularized objective: truncated (or plain) mean loss + ρ‖θ‖₂.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedObjective {
    pub loss: LossFn,
    pub mode: TruncationMode,
    pub ridge_rho: f64,
}

impl TruncatedObjective {
    pub fn new(loss: LossFn, mode: TruncationMode, ridge_rho: f64) -> Result<Self> {
        loss.validate()?;
        if ridge_rho < 0.0 || !ridge_rho.is_finite() {
            return Err(Error::Domain(format!("rho must be >= 0, got {ridge_rho}")));
        }
        Ok(TruncatedObjective { loss, mode, ridge_rho })
    }
}

/// (1/(nα))·Σ ψ_λ(α·lᵢ) + ρ‖θ‖₂, or the plain penalized risk when untruncated.
pub fn truncated_risk(
    obj: &TruncatedObjective,
    params: &Params,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::Data("empty data".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} responses",
            x.nrows(),
            y.len()
        )));
    }
    let mut acc = 0.0;
    for (row, &yi) in x.outer_iter().zip(y.iter()) {
        let s = predict_unchecked(params, row);
        let l = obj.loss.value_unchecked(yi, s);
        acc += match obj.mode {
            TruncationMode::Log(spec) => spec.apply(l),
            TruncationMode::None => l,
        };
    }
    Ok(acc / x.nrows() as f64 + obj.ridge_rho * params.norm())
}

/// (1/n)·Σ ψ̇_λ(α·lᵢ)·∇_θ lᵢ + ρ·θ/‖θ‖₂ (0 at θ = 0). The weight is 1 when
/// untruncated.
pub fn truncated_risk_grad(
    obj: &TruncatedObjective,
    params: &Params,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<Gradient> {
    if x.nrows() == 0 {
        return Err(Error::Data("empty data".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs {} responses",
            x.nrows(),
            y.len()
        )));
    }
    let mut grad = Gradient::zeros_like(params);
    let inv_n = 1.0 / x.nrows() as f64;
    for (row, &yi) in x.outer_iter().zip(y.iter()) {
        let s = predict_unchecked(params, row);
        let dl = obj.loss.grad_unchecked(yi, s);
        let weight = match obj.mode {
            TruncationMode::Log(spec) => spec.score_weight(obj.loss.value_unchecked(yi, s)),
            TruncationMode::None => 1.0,
        };
        let sample = backward(params, row, dl * weight)?;
        grad.add_assign(&sample, inv_n);
    }
    let norm = params.norm();
    if norm > 0.0 {
        grad.add_params(params, obj.ridge_rho / norm);
    }
    Ok(grad)
}

/// Inputs of the closed-form α from the power-law bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlphaInputs {
    pub n: usize,
    pub p: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub r: f64,
    pub sup_risk: f64,
}

impl AlphaInputs {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::Domain("n and p must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Domain(format!("epsilon must be in (0,1], got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::Domain(format!("delta must be in (0,1/2), got {}", self.delta)));
        }
        if !(self.r > 0.0 && self.sup_risk > 0.0) {
            return Err(Error::Domain("r and sup_risk must be positive".into()));
        }
        Ok(())
    }
}

/// n^{−1/(1+ε)}·((log δ⁻² + p·log(1+2rn)) / ((2^ε+1)·sup_risk))^{1/(1+ε)}.
pub fn default_alpha(inp: &AlphaInputs) -> Result<f64> {
    inp.validate()?;
    let n = inp.n as f64;
    let p = inp.p as f64;
    let num = (inp.delta.powi(-2)).ln() + p * (1.0 + 2.0 * inp.r * n).ln();
    let alpha = n.powf(-1.0 / (1.0 + inp.epsilon))
        * (num / ((2f64.powf(inp.epsilon) + 1.0) * inp.sup_risk)).powf(1.0 / (1.0 + inp.epsilon));
    if alpha.is_finite() && alpha > 0.0 {
        Ok(alpha)
    } else {
        Err(Error::Domain(format!("non-finite alpha from {inp:?}")))
    }
}

/// Plug-in estimate of sup_θ E λ(l): the empirical mean of λ(|l|) at the
/// warm-start parameters, clipped below at 1e-6.
pub fn plug_in_sup_risk(
    lambda: HighOrderFn,
    loss: LossFn,
    params: &Params,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<f64> {
    let mut acc = 0.0;
    for (row, &yi) in x.outer_iter().zip(y.iter()) {
        let l = loss.value_unchecked(yi, predict_unchecked(params, row));
        acc += lambda_eval(lambda, l.abs())?;
    }
    Ok((acc / x.nrows().max(1) as f64).max(1e-6))
}

/// SGD schedule and bookkeeping knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    /// r_t = learning_rate / (1 + t/t_decay), t counting mini-batch steps.
    pub t_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub projection_radius: Option<f64>,
}

impl SgdConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Domain("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Domain("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::Domain(format!(
                "batch_size must be in 1..={n}, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Fitted parameters plus the per-epoch objective trace.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Params,
    pub trace: Vec<f64>,
}

/// Mini-batch SGD on the (possibly truncated) penalized objective:
/// θ ← θ − (r_t/α)·∇[ψ_λ(α·l) + ρ‖θ‖] per eq-of-motion, which reduces to
/// ψ̇_λ(α·l)·∇l + (ρ/α)·∂‖θ‖ per step; the untruncated arm drops both α
/// factors. Epoch order is a seeded shuffle; bit-reproducible sequentially.
pub fn sgd_fit(
    obj: &TruncatedObjective,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    cfg: &SgdConfig,
    init: Params,
) -> Result<FitResult> {
    let n = x.nrows();
    cfg.validate(n)?;
    if n != y.len() {
        return Err(Error::Dimension(format!("{n} rows vs {} responses", y.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..n).collect();
    let penalty_scale = match obj.mode {
        TruncationMode::Log(spec) => obj.ridge_rho / spec.alpha,
        TruncationMode::None => obj.ridge_rho,
    };
    let mut t = 0usize;
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(cfg.batch_size) {
            let mut grad = Gradient::zeros_like(&params);
            let inv_b = 1.0 / batch.len() as f64;
            for &i in batch {
                let row = x.row(i);
                let s = predict_unchecked(&params, row);
                let yi = y[i];
                let dl = obj.loss.grad_unchecked(yi, s);
                let weight = match obj.mode {
                    TruncationMode::Log(spec) => {
                        spec.score_weight(obj.loss.value_unchecked(yi, s))
                    }
                    TruncationMode::None => 1.0,
                };
                let sample = backward(&params, row, dl * weight)?;
                grad.add_assign(&sample, inv_b);
            }
            let norm = params.norm();
            if norm > 0.0 {
                grad.add_params(&params, penalty_scale / norm);
            }
            let rate = cfg.learning_rate / (1.0 + t as f64 / cfg.t_decay);
            params.axpy(rate, &grad);
            if let Some(radius) = cfg.projection_radius {
                params.project(radius);
            }
            t += 1;
        }
        let objective = truncated_risk(obj, &params, x, y)?;
        trace.push(objective);
        if !objective.is_finite() || objective > 1e12 || !params.is_finite() {
            return Err(Error::Divergence {
                epoch,
                objective,
                trace,
            });
        }
    }
    Ok(FitResult { params, trace })
}

/// Five untruncated epochs from a zero/seed init, used to initialize both
/// arms identically.
pub fn warm_start(
    loss: LossFn,
    model: &ModelKind,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    rho: f64,
    cfg: &SgdConfig,
) -> Result<Params> {
    let init = match model {
        ModelKind::Linear => Params::zeros_linear(x.ncols()),
        ModelKind::Mlp { widths } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
            Params::init_mlp(widths, &mut rng)?
        }
    };
    let obj = TruncatedObjective::new(loss, TruncationMode::None, rho)?;
    let warm_cfg = SgdConfig {
        epochs: 5.min(cfg.epochs),
        ..cfg.clone()
    };
    Ok(sgd_fit(&obj, x, y, &warm_cfg, init)?.params)
}

/// How one hyperparameter axis is searched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SearchRange {
    Fixed(f64),
    /// Ternary search on log2 scale over [lo, hi], `iters` interval cuts.
    Log { lo: f64, hi: f64, iters: usize },
}

impl SearchRange {
    pub fn log_default() -> Self {
        SearchRange::Log { lo: 1e-4, hi: 1e2, iters: 12 }
    }
}

/// Search specification for (α, ρ, ε).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpec {
    pub eps_grid: Vec<f64>,
    pub alpha: SearchRange,
    pub rho: SearchRange,
    pub holdout_fraction: f64,
    pub seed: u64,
}

/// Chosen hyperparameters and the holdout loss that selected them.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TunedParams {
    pub alpha: Option<f64>,
    pub rho: f64,
    pub epsilon: f64,
    pub holdout_loss: f64,
}

pub struct TuneProblem<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView1<'a, f64>,
    pub loss: LossFn,
    pub model: ModelKind,
    pub lambda_name: String,
    pub sgd: SgdConfig,
}

fn holdout_mean_loss(
    loss: LossFn,
    params: &Params,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> f64 {
    let mut acc = 0.0;
    for (row, &yi) in x.outer_iter().zip(y.iter()) {
        acc += loss.value_unchecked(yi, predict_unchecked(params, row));
    }
    acc / x.nrows().max(1) as f64
}

/// Coarse log-spaced bracketing followed by `iters` ternary cuts inside the
/// best bracket. The holdout objective is not unimodal in the truncation
/// scale (a frozen-fit plateau competes with the interior dip), so pure
/// interval cutting can lock onto the wrong basin without the grid stage.
fn ternary_search_log2<F: FnMut(f64) -> f64>(lo: f64, hi: f64, iters: usize, mut f: F) -> (f64, f64) {
    let (lo_l, hi_l) = (lo.log2(), hi.log2());
    let coarse = 13usize;
    let step = (hi_l - lo_l) / (coarse - 1) as f64;
    let mut best_k = 0;
    let mut best_val = f64::INFINITY;
    for k in 0..coarse {
        let v = f(2f64.powf(lo_l + step * k as f64));
        if v < best_val {
            best_val = v;
            best_k = k;
        }
    }
    let mut lo = lo_l + step * (best_k.saturating_sub(1)) as f64;
    let mut hi = (lo_l + step * (best_k + 1) as f64).min(hi_l);
    for _ in 0..iters {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(2f64.powf(m1)) <= f(2f64.powf(m2)) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let mid = 2f64.powf(0.5 * (lo + hi));
    let val = f(mid);
    if val <= best_val {
        (mid, val)
    } else {
        (2f64.powf(lo_l + step * best_k as f64), best_val)
    }
}

/// Grid over ε × log-scale search over α and ρ, selecting the candidate with
/// the smallest untruncated holdout loss; ties break toward smaller α then
/// smaller ρ. Passing a single fixed candidate returns it evaluated.
///
/// Candidates that diverge score +∞; if every candidate diverges the search
/// fails.
pub fn tune_hyperparams(problem: &TuneProblem<'_>, spec: &SearchSpec) -> Result<TunedParams> {
    if spec.eps_grid.is_empty() {
        return Err(Error::Config("eps grid must be nonempty".into()));
    }
    if !(spec.holdout_fraction > 0.0 && spec.holdout_fraction < 1.0) {
        return Err(Error::Config(format!(
            "holdout fraction must be in (0,1), got {}",
            spec.holdout_fraction
        )));
    }
    let n = problem.x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let n_train = ((1.0 - spec.holdout_fraction) * n as f64).round().max(1.0) as usize;
    let n_train = n_train.min(n - 1);
    let train_idx = &order[..n_train];
    let hold_idx = &order[n_train..];
    let take = |idx: &[usize]| -> (Array2<f64>, Array1<f64>) {
        let mut xm = Array2::zeros((idx.len(), problem.x.ncols()));
        let mut ym = Array1::zeros(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            xm.row_mut(k).assign(&problem.x.row(i));
            ym[k] = problem.y[i];
        }
        (xm, ym)
    };
    let (x_tr, y_tr) = take(train_idx);
    let (x_ho, y_ho) = take(hold_idx);

    let warm = warm_start(
        problem.loss,
        &problem.model,
        x_tr.view(),
        y_tr.view(),
        1e-3,
        &problem.sgd,
    )?;

    let fit_eval = |alpha: Option<f64>, rho: f64, lambda: HighOrderFn| -> f64 {
        let mode = match alpha {
            Some(a) => match TruncationSpec::new(lambda, a) {
                Ok(spec) => TruncationMode::Log(spec),
                Err(_) => return f64::INFINITY,
            },
            None => TruncationMode::None,
        };
        let obj = match TruncatedObjective::new(problem.loss, mode, rho) {
            Ok(o) => o,
            Err(_) => return f64::INFINITY,
        };
        match sgd_fit(&obj, x_tr.view(), y_tr.view(), &problem.sgd, warm.clone()) {
            Ok(fit) => holdout_mean_loss(problem.loss, &fit.params, x_ho.view(), y_ho.view()),
            Err(_) => f64::INFINITY,
        }
    };

    let mut best: Option<TunedParams> = None;
    for &epsilon in &spec.eps_grid {
        let lambda = HighOrderFn::from_name(&problem.lambda_name, epsilon)?;
        // alpha pass at a mid-range rho, then rho pass at the chosen alpha
        let rho_probe = match spec.rho {
            SearchRange::Fixed(v) => v,
            SearchRange::Log { lo, hi, .. } => (lo.log2() / 2.0 + hi.log2() / 2.0).exp2(),
        };
        let alpha = match spec.alpha {
            SearchRange::Fixed(v) => v,
            SearchRange::Log { lo, hi, iters } => {
                ternary_search_log2(lo, hi, iters, |a| fit_eval(Some(a), rho_probe, lambda)).0
            }
        };
        let (rho, loss_val) = match spec.rho {
            SearchRange::Fixed(v) => (v, fit_eval(Some(alpha), v, lambda)),
            SearchRange::Log { lo, hi, iters } => {
                ternary_search_log2(lo, hi, iters, |r| fit_eval(Some(alpha), r, lambda))
            }
        };
        let candidate = TunedParams {
            alpha: Some(alpha),
            rho,
            epsilon,
            holdout_loss: loss_val,
        };
        // lexicographic (loss, alpha, rho)
        let better = match &best {
            None => true,
            Some(b) => {
                let ka = (candidate.holdout_loss, candidate.alpha.unwrap_or(0.0), candidate.rho);
                let kb = (b.holdout_loss, b.alpha.unwrap_or(0.0), b.rho);
                ka < kb
            }
        };
        if better {
            best = Some(candidate);
        }
    }
    let best = best.expect("nonempty grid");
    if best.holdout_loss.is_infinite() {
        return Err(Error::Data("all hyperparameter candidates diverged".into()));
    }
    Ok(best)
}

/// Tune ρ alone for an arm whose α (possibly none) is already fixed.
pub fn tune_rho_only(
    problem: &TuneProblem<'_>,
    spec: &SearchSpec,
    alpha: Option<f64>,
    epsilon: f64,
) -> Result<TunedParams> {
    let one_candidate = SearchSpec {
        eps_grid: vec![epsilon],
        alpha: match alpha {
            Some(a) => SearchRange::Fixed(a),
            // untruncated arm: signal via alpha=None below
            None => SearchRange::Fixed(f64::NAN),
        },
        ..spec.clone()
    };
    if alpha.is_some() {
        return tune_hyperparams(problem, &one_candidate);
    }
    // untruncated path shares the machinery but pins the mode to None
    let n = problem.x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let n_train = ((1.0 - spec.holdout_fraction) * n as f64).round().max(1.0) as usize;
    let n_train = n_train.min(n - 1);
    let (train_idx, hold_idx) = order.split_at(n_train);
    let take = |idx: &[usize]| -> (Array2<f64>, Array1<f64>) {
        let mut xm = Array2::zeros((idx.len(), problem.x.ncols()));
        let mut ym = Array1::zeros(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            xm.row_mut(k).assign(&problem.x.row(i));
            ym[k] = problem.y[i];
        }
        (xm, ym)
    };
    let (x_tr, y_tr) = take(train_idx);
    let (x_ho, y_ho) = take(hold_idx);
    let warm = warm_start(
        problem.loss,
        &problem.model,
        x_tr.view(),
        y_tr.view(),
        1e-3,
        &problem.sgd,
    )?;
    let mut eval_rho = |rho: f64| -> f64 {
        let obj = match TruncatedObjective::new(problem.loss, TruncationMode::None, rho) {
            Ok(o) => o,
            Err(_) => return f64::INFINITY,
        };
        match sgd_fit(&obj, x_tr.view(), y_tr.view(), &problem.sgd, warm.clone()) {
            Ok(fit) => holdout_mean_loss(problem.loss, &fit.params, x_ho.view(), y_ho.view()),
            Err(_) => f64::INFINITY,
        }
    };
    let (rho, loss_val) = match spec.rho {
        SearchRange::Fixed(v) => (v, eval_rho(v)),
        SearchRange::Log { lo, hi, iters } => ternary_search_log2(lo, hi, iters, &mut eval_rho),
    };
    if loss_val.is_infinite() {
        return Err(Error::Data("all rho candidates diverged".into()));
    }
    Ok(TunedParams {
        alpha: None,
        rho,
        epsilon,
        holdout_loss: loss_val,
    })
}

/// Negative-binomial log-likelihood with the mean pinned at ȳ, maximized in
/// η over log-scale [1e-4, 1e4] by golden-section search.
pub fn estimate_dispersion(y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::Data("empty count vector".into()));
    }
    for &v in y {
        if !(v >= 0.0 && v.fract() == 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("counts must be nonnegative integers, got {v}")));
        }
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::Data("zero-variance counts: dispersion not identifiable".into()));
    }
    let loglik = |eta: f64| -> f64 {
        let mut acc = 0.0;
        for &yi in y {
            acc += ln_gamma(eta + yi) - ln_gamma(eta) - ln_gamma(yi + 1.0)
                + yi * (mean / (eta + mean)).ln()
                + eta * (eta / (eta + mean)).ln();
        }
        acc
    };
    // golden section on log eta
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (lo0, hi0) = ((1e-4f64).ln(), (1e4f64).ln());
    let (mut lo, mut hi) = (lo0, hi0);
    let mut m1 = hi - phi * (hi - lo);
    let mut m2 = lo + phi * (hi - lo);
    let mut f1 = loglik(m1.exp());
    let mut f2 = loglik(m2.exp());
    for _ in 0..80 {
        if f1 < f2 {
            lo = m1;
            m1 = m2;
            f1 = f2;
            m2 = lo + phi * (hi - lo);
            f2 = loglik(m2.exp());
        } else {
            hi = m2;
            m2 = m1;
            f2 = f1;
            m1 = hi - phi * (hi - lo);
            f1 = loglik(m1.exp());
        }
    }
    // a flat or monotone profile (Poisson-like counts) stalls the interior
    // search; hand the boundary back when it is at least as good
    let interior = (0.5 * (lo + hi)).exp();
    let f_interior = loglik(interior);
    let slack = 1e-7 * f_interior.abs().max(1.0);
    if loglik(hi0.exp()) >= f_interior - slack {
        return Ok(hi0.exp());
    }
    if loglik(lo0.exp()) >= f_interior - slack {
        return Ok(lo0.exp());
    }
    Ok(interior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen;
    use approx::assert_relative_eq;
    use ndarray::{arr1, arr2};

    fn chen(alpha: f64, epsilon: f64) -> TruncationMode {
        TruncationMode::Log(
            TruncationSpec::new(HighOrderFn::ChenPower { epsilon }, alpha).unwrap(),
        )
    }

    #[test]
    fn risk_zero_on_perfect_fit() {
        // quantile residuals all zero => psi(0) = 0
        let x = arr2(&[[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]]);
        let theta = arr1(&[1.0, -1.0]);
        let y = x.dot(&theta);
        let obj = TruncatedObjective::new(
            LossFn::Quantile { tau: 0.5 },
            chen(1.0, 1.0),
            0.0,
        )
        .unwrap();
        let r = truncated_risk(&obj, &Params::Linear(theta), x.view(), y.view()).unwrap();
        assert_relative_eq!(r, 0.0);
    }

    #[test]
    fn risk_single_term_closed_form() {
        // n=1, tau=0.5, residual 2 => rho=1, psi_chen1(1)/1 = ln 2.5
        let x = arr2(&[[1.0]]);
        let y = arr1(&[2.0]);
        let obj = TruncatedObjective::new(LossFn::Quantile { tau: 0.5 }, chen(1.0, 1.0), 0.0).unwrap();
        let r = truncated_risk(&obj, &Params::Linear(arr1(&[0.0])), x.view(), y.view()).unwrap();
        assert_relative_eq!(r, 2.5f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn risk_rejects_empty_data() {
        let x = Array2::<f64>::zeros((0, 2));
        let y = Array1::<f64>::zeros(0);
        let obj = TruncatedObjective::new(LossFn::Logistic, TruncationMode::None, 0.0).unwrap();
        assert!(truncated_risk(&obj, &Params::zeros_linear(2), x.view(), y.view()).is_err());
    }

    #[test]
    fn small_alpha_approaches_untruncated_risk() {
        let (x, y) = datagen::tests_support::small_logistic(60, 5, 3);
        let params = Params::Linear(Array1::from_elem(5, 0.2));
        let plain = TruncatedObjective::new(LossFn::Logistic, TruncationMode::None, 0.0).unwrap();
        let base = truncated_risk(&plain, &params, x.view(), y.view()).unwrap();
        let mut prev_gap = f64::INFINITY;
        for &alpha in &[1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6] {
            let obj = TruncatedObjective::new(LossFn::Logistic, chen(alpha, 1.0), 0.0).unwrap();
            let r = truncated_risk(&obj, &params, x.view(), y.view()).unwrap();
            let gap = (r - base).abs();
            assert!(gap <= prev_gap + 1e-15, "gap should shrink with alpha");
            prev_gap = gap;
        }
        assert!(prev_gap / base.abs() < 1e-4);
    }

    #[test]
    fn grad_matches_finite_differences_linear() {
        let (x, y) = datagen::tests_support::small_logistic(40, 6, 9);
        let obj = TruncatedObjective::new(LossFn::Logistic, chen(0.7, 0.5), 0.05).unwrap();
        let theta = Array1::from_shape_fn(6, |i| 0.1 * (i as f64 + 1.0) - 0.3);
        let params = Params::Linear(theta.clone());
        let Gradient::Linear(g) = truncated_risk_grad(&obj, &params, x.view(), y.view()).unwrap()
        else {
            unreachable!()
        };
        for j in 0..6 {
            let h = 1e-6;
            let mut plus = theta.clone();
            plus[j] += h;
            let mut minus = theta.clone();
            minus[j] -= h;
            let fp = truncated_risk(&obj, &Params::Linear(plus), x.view(), y.view()).unwrap();
            let fm = truncated_risk(&obj, &Params::Linear(minus), x.view(), y.view()).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert_relative_eq!(g[j], fd, max_relative = 1e-5, epsilon = 1e-10);
        }
    }

    #[test]
    fn grad_weight_is_one_at_zero_loss() {
        // perfect-fit quantile data: psi'(0) = 1 and gradient equals plain
        // subgradient path; with rho = 0 the step leaves params unchanged
        // only when the subgradient is zero too, so probe the weight itself.
        let spec = TruncationSpec::new(HighOrderFn::ChenPower { epsilon: 1.0 }, 0.8).unwrap();
        assert_eq!(spec.score_weight(0.0), 1.0);
    }

    #[test]
    fn tiny_alpha_gradient_matches_erm_gradient() {
        let (x, y) = datagen::tests_support::small_logistic(50, 4, 21);
        let params = Params::Linear(Array1::from_elem(4, 0.15));
        let plain = TruncatedObjective::new(LossFn::Logistic, TruncationMode::None, 0.0).unwrap();
        let trunc = TruncatedObjective::new(LossFn::Logistic, chen(1e-8, 1.0), 0.0).unwrap();
        let Gradient::Linear(g0) = truncated_risk_grad(&plain, &params, x.view(), y.view()).unwrap()
        else {
            unreachable!()
        };
        let Gradient::Linear(g1) = truncated_risk_grad(&trunc, &params, x.view(), y.view()).unwrap()
        else {
            unreachable!()
        };
        for j in 0..4 {
            assert!((g0[j] - g1[j]).abs() < 1e-4);
        }
    }

    #[test]
    fn default_alpha_golden_value() {
        let inp = AlphaInputs {
            n: 200,
            p: 100,
            epsilon: 1.0,
            delta: 0.05,
            r: 10.0,
            sup_risk: 1.0,
        };
        // ((ln 400 + 100 ln 4001)/3)^{1/2} / sqrt(200), computed independently
        // at high precision
        assert_relative_eq!(
            default_alpha(&inp).unwrap(),
            1.179986882294906,
            max_relative = 1e-12
        );
    }

    #[test]
    fn default_alpha_scalings() {
        let base = AlphaInputs {
            n: 200,
            p: 100,
            epsilon: 1.0,
            delta: 0.05,
            r: 10.0,
            sup_risk: 1.0,
        };
        let a = default_alpha(&base).unwrap();
        // quadrupling sup_risk halves alpha at eps = 1
        let a4 = default_alpha(&AlphaInputs { sup_risk: 4.0, ..base }).unwrap();
        assert_relative_eq!(a4, a / 2.0, max_relative = 1e-12);
        // strictly decreasing in n
        let mut prev = f64::INFINITY;
        for n in [100, 400, 1600, 6400] {
            let v = default_alpha(&AlphaInputs { n, ..base }).unwrap();
            assert!(v < prev);
            prev = v;
        }
        // strictly increasing in p, decreasing in sup_risk
        let more_p = default_alpha(&AlphaInputs { p: 200, ..base }).unwrap();
        assert!(more_p > a);
        let more_sup = default_alpha(&AlphaInputs { sup_risk: 2.0, ..base }).unwrap();
        assert!(more_sup < a);
    }

    #[test]
    fn sgd_zero_gradient_start_stays_put() {
        // perfect-fit smooth-loss data with rho = 0: logistic cannot be
        // fit perfectly, so use quantile with residuals exactly 0 and note
        // the subgradient convention keeps a -(tau-1) pull; instead verify
        // with an explicit zero-gradient construction: y such that
        // sigmoid(s) = y is impossible for {0,1}; so use the documented
        // trivial case of upstream zero via weight*grad = 0 on NBR at its
        // stationary point y = eta*e^s/(eta) ... simplest honest check:
        // gradient at optimum of 1-d logistic with balanced data is ~0.
        let x = arr2(&[[1.0], [1.0], [1.0], [1.0]]);
        let y = arr1(&[0.0, 1.0, 0.0, 1.0]);
        let obj = TruncatedObjective::new(LossFn::Logistic, TruncationMode::None, 0.0).unwrap();
        // theta = 0 gives sigmoid(0) = 0.5 = mean(y): exact stationary point
        let Gradient::Linear(g) =
            truncated_risk_grad(&obj, &Params::zeros_linear(1), x.view(), y.view()).unwrap()
        else {
            unreachable!()
        };
        assert_relative_eq!(g[0], 0.0);
        let cfg = SgdConfig {
            learning_rate: 0.5,
            t_decay: 1e9,
            epochs: 3,
            batch_size: 4, // full batch keeps the gradient exactly zero
            seed: 5,
            projection_radius: None,
        };
        let fit = sgd_fit(&obj, x.view(), y.view(), &cfg, Params::zeros_linear(1)).unwrap();
        let Params::Linear(theta) = fit.params else { unreachable!() };
        assert_relative_eq!(theta[0], 0.0);
    }

    #[test]
    fn sgd_descends_on_quantile_median() {
        // 1-d median regression: symmetric residuals around 1.0
        let x = arr2(&[[1.0], [1.0], [1.0], [1.0], [1.0]]);
        let y = arr1(&[-1.0, 0.5, 1.0, 1.5, 3.0]);
        let obj = TruncatedObjective::new(LossFn::Quantile { tau: 0.5 }, chen(0.5, 1.0), 0.0).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.2,
            t_decay: 50.0,
            epochs: 60,
            batch_size: 1,
            seed: 11,
            projection_radius: None,
        };
        let fit = sgd_fit(&obj, x.view(), y.view(), &cfg, Params::zeros_linear(1)).unwrap();
        let first = fit.trace[0];
        let last = *fit.trace.last().unwrap();
        assert!(last <= first, "objective rose: {first} -> {last}");
        let Params::Linear(theta) = fit.params else { unreachable!() };
        assert!((theta[0] - 1.0).abs() < 0.5, "median fit {theta}");
    }

    #[test]
    fn sgd_bit_reproducible() {
        let (x, y) = datagen::tests_support::small_logistic(30, 3, 33);
        let obj = TruncatedObjective::new(LossFn::Logistic, chen(0.5, 1.0), 1e-3).unwrap();
        let cfg = SgdConfig {
            learning_rate: 0.1,
            t_decay: 100.0,
            epochs: 8,
            batch_size: 3,
            seed: 77,
            projection_radius: Some(5.0),
        };
        let a = sgd_fit(&obj, x.view(), y.view(), &cfg, Params::zeros_linear(3)).unwrap();
        let b = sgd_fit(&obj, x.view(), y.view(), &cfg, Params::zeros_linear(3)).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn untruncated_sgd_matches_direct_implementation() {
        // oracle: a standalone re-implementation of the plain update
        let (x, y) = datagen::tests_support::small_logistic(20, 2, 55);
        let cfg = SgdConfig {
            learning_rate: 0.3,
            t_decay: 40.0,
            epochs: 4,
            batch_size: 1,
            seed: 13,
            projection_radius: None,
        };
        let rho = 0.01;
        let obj = TruncatedObjective::new(LossFn::Logistic, TruncationMode::None, rho).unwrap();
        let fit = sgd_fit(&obj, x.view(), y.view(), &cfg, Params::zeros_linear(2)).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut theta = vec![0.0f64; 2];
        let mut idx: Vec<usize> = (0..20).collect();
        let mut t = 0usize;
        for _ in 0..cfg.epochs {
            idx.shuffle(&mut rng);
            for &i in &idx {
                let s: f64 = (0..2).map(|j| x[[i, j]] * theta[j]).sum();
                let g_s = crate::losses::sigmoid(s) - y[i];
                let norm: f64 = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
                let rate = cfg.learning_rate / (1.0 + t as f64 / cfg.t_decay);
                for j in 0..2 {
                    let mut g = x[[i, j]] * g_s;
                    if norm > 0.0 {
                        g += rho * theta[j] / norm;
                    }
                    theta[j] -= rate * g;
                }
                t += 1;
            }
        }
        let Params::Linear(fitted) = fit.params else { unreachable!() };
        for j in 0..2 {
            assert_relative_eq!(fitted[j], theta[j], max_relative = 1e-12);
        }
    }

    #[test]
    fn projection_keeps_iterates_in_ball() {
        let (x, y) = datagen::tests_support::small_logistic(40, 4, 70);
        let obj = TruncatedObjective::new(LossFn::Logistic, TruncationMode::None, 0.0).unwrap();
        let radius = 0.05;
        let cfg = SgdConfig {
            learning_rate: 2.0, // deliberately hot
            t_decay: 1e6,
            epochs: 6,
            batch_size: 1,
            seed: 3,
            projection_radius: Some(radius),
        };
        let fit = sgd_fit(&obj, x.view(), y.view(), &cfg, Params::zeros_linear(4)).unwrap();
        assert!(fit.params.norm() <= radius * (1.0 + 1e-12));
    }

    #[test]
    fn divergence_is_detected() {
        // absurd learning rate overflows the iterate within an epoch
        let x = arr2(&[[40.0], [-40.0], [35.0], [-30.0]]);
        let y = arr1(&[1000.0, 0.0, 2000.0, 1.0]);
        let obj = TruncatedObjective::new(
            LossFn::NegBinomial { eta: 0.1 },
            TruncationMode::None,
            0.0,
        )
        .unwrap();
        let cfg = SgdConfig {
            learning_rate: 1e300,
            t_decay: 1e9,
            epochs: 3,
            batch_size: 1,
            seed: 2,
            projection_radius: None,
        };
        let err = sgd_fit(&obj, x.view(), y.view(), &cfg, Params::zeros_linear(1)).unwrap_err();
        let Error::Divergence { trace, .. } = err else {
            panic!("expected divergence error, got {err}");
        };
        let last = *trace.last().expect("trace attached");
        assert!(!last.is_finite() || last > 1e12);
    }

    #[test]
    fn tune_single_candidate_returns_it() {
        let (x, y) = datagen::tests_support::small_logistic(60, 3, 91);
        let problem = TuneProblem {
            x: x.view(),
            y: y.view(),
            loss: LossFn::Logistic,
            model: ModelKind::Linear,
            lambda_name: "chen".into(),
            sgd: SgdConfig {
                learning_rate: 0.1,
                t_decay: 200.0,
                epochs: 10,
                batch_size: 1,
                seed: 4,
                projection_radius: None,
            },
        };
        let spec = SearchSpec {
            eps_grid: vec![1.0],
            alpha: SearchRange::Fixed(0.5),
            rho: SearchRange::Fixed(0.01),
            holdout_fraction: 0.25,
            seed: 8,
        };
        let tuned = tune_hyperparams(&problem, &spec).unwrap();
        assert_eq!(tuned.alpha, Some(0.5));
        assert_eq!(tuned.rho, 0.01);
        assert_eq!(tuned.epsilon, 1.0);
        assert!(tuned.holdout_loss.is_finite());
    }

    #[test]
    fn tune_picks_strictly_better_candidate() {
        let (x, y) = datagen::tests_support::small_logistic(80, 3, 95);
        let sgd = SgdConfig {
            learning_rate: 0.1,
            t_decay: 200.0,
            epochs: 10,
            batch_size: 1,
            seed: 4,
            projection_radius: None,
        };
        let problem = TuneProblem {
            x: x.view(),
            y: y.view(),
            loss: LossFn::Logistic,
            model: ModelKind::Linear,
            lambda_name: "chen".into(),
            sgd,
        };
        // the two-candidate selection must return the strictly better one:
        // the grid result can never lose to either single-candidate run
        let mk = |eps_grid: Vec<f64>| SearchSpec {
            eps_grid,
            alpha: SearchRange::Fixed(0.5),
            rho: SearchRange::Fixed(1e-3),
            holdout_fraction: 0.25,
            seed: 8,
        };
        let only_half = tune_hyperparams(&problem, &mk(vec![0.5])).unwrap();
        let only_one = tune_hyperparams(&problem, &mk(vec![1.0])).unwrap();
        let both = tune_hyperparams(&problem, &mk(vec![0.5, 1.0])).unwrap();
        let best = only_half.holdout_loss.min(only_one.holdout_loss);
        assert_eq!(both.holdout_loss, best);
        let winner = if only_half.holdout_loss <= only_one.holdout_loss { 0.5 } else { 1.0 };
        assert_eq!(both.epsilon, winner);
    }

    #[test]
    fn dispersion_recovery() {
        // NB(eta=0.1, mu=2) via gamma-poisson mixture
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let eta = 0.1;
        let mu = 2.0;
        let y: Vec<f64> = (0..10_000)
            .map(|_| {
                let g: f64 =
                    rand_distr::Distribution::sample(&rand_distr::Gamma::new(eta, mu / eta).unwrap(), &mut rng);
                rand_distr::Distribution::sample(&rand_distr::Poisson::new(g.max(1e-12)).unwrap(), &mut rng)
            })
            .collect();
        let eta_hat = estimate_dispersion(&y).unwrap();
        assert!(
            (0.08..=0.12).contains(&eta_hat),
            "eta_hat = {eta_hat}, expected near 0.1"
        );
        // local-optimum certificate
        let ll = |e: f64| -> f64 {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            y.iter()
                .map(|&yi| {
                    ln_gamma(e + yi) - ln_gamma(e) - ln_gamma(yi + 1.0)
                        + yi * (mean / (e + mean)).ln()
                        + e * (e / (e + mean)).ln()
                })
                .sum()
        };
        assert!(ll(eta_hat) >= ll(0.5 * eta_hat));
        assert!(ll(eta_hat) >= ll(2.0 * eta_hat));
    }

    #[test]
    fn dispersion_poisson_limit() {
        // variance <= mean: the profile likelihood increases in eta all the
        // way, so the estimate lands on the upper search bound
        let y: Vec<f64> = [2.0, 4.0, 3.0, 3.0].into_iter().cycle().take(2000).collect();
        let eta_hat = estimate_dispersion(&y).unwrap();
        assert!(
            (eta_hat - 1e4).abs() < 1.0,
            "equi/under-dispersed counts should hit the upper bound, got {eta_hat}"
        );
    }

    #[test]
    fn dispersion_rejects_degenerate() {
        assert!(estimate_dispersion(&[2.0, 2.0, 2.0]).is_err());
        assert!(estimate_dispersion(&[1.5, 2.0]).is_err());
        assert!(estimate_dispersion(&[]).is_err());
    }
}
