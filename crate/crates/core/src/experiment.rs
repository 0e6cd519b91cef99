//! Experiment orchestration: truncated-vs-untruncated head-to-head runs with
//! replications, per-arm hyperparameter selection, and metric aggregation.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    gen_additive_dnn_data, gen_design, gen_response_from_scores, gen_true_theta, NoiseSpec,
    QuantileNoise, ResponseKind,
};
use crate::error::{Error, Result};
use crate::losses::LossFn;
use crate::metrics::{accuracy, l2_error, mae};
use crate::model::{predict_unchecked, ModelKind, Params};
use crate::solver::{
    default_alpha, plug_in_sup_risk, sgd_fit, tune_hyperparams, tune_rho_only, warm_start,
    AlphaInputs, SearchRange, SearchSpec, SgdConfig, TruncatedObjective, TruncationMode,
    TuneProblem,
};
use crate::truncation::{HighOrderFn, TruncationSpec};

/// Benchmark task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Logistic,
    Nbr,
    Quantile,
    DnnLogistic,
    DnnNbr,
    DnnLad,
}

impl Task {
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "logistic" => Task::Logistic,
            "nbr" => Task::Nbr,
            "quantile" => Task::Quantile,
            "dnn_logistic" => Task::DnnLogistic,
            "dnn_nbr" => Task::DnnNbr,
            "dnn_lad" => Task::DnnLad,
            _ => return Err(Error::Config(format!("unknown task: {name}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::Logistic => "logistic",
            Task::Nbr => "nbr",
            Task::Quantile => "quantile",
            Task::DnnLogistic => "dnn_logistic",
            Task::DnnNbr => "dnn_nbr",
            Task::DnnLad => "dnn_lad",
        }
    }

    pub fn is_dnn(&self) -> bool {
        matches!(self, Task::DnnLogistic | Task::DnnNbr | Task::DnnLad)
    }

    fn metric_name(&self) -> &'static str {
        match self {
            Task::Logistic | Task::Nbr | Task::Quantile => "l2_error",
            Task::DnnLogistic => "accuracy",
            Task::DnnNbr | Task::DnnLad => "mae",
        }
    }
}

/// Which design generates the responses of the linear tasks, and which one
/// the estimator fits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseDesign {
    /// y from the clean X', fit on the contaminated X: contamination acts
    /// as covariate measurement error.
    Clean,
    /// y from the contaminated X, fit on the same X: a well-specified model
    /// over a heavy-tailed design.
    Observed,
    /// y from the contaminated X, fit on the clean X': contamination hides
    /// in the response mechanism, mirroring the additive network target
    /// f₀(X + ξ) with the clean X observed.
    Latent,
}

/// How α is chosen for the truncated arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlphaMode {
    /// Closed-form bound value with the plug-in sup-risk estimate.
    Theory,
    /// Log-scale holdout search.
    Search,
}

/// How ρ is chosen (per arm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RhoMode {
    Fixed(f64),
    Search,
}

/// Whether hyperparameters are selected once on a dedicated tuning
/// replication or freshly on each replication's own data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuneMode {
    Once,
    PerRep,
}

/// Synthetic-data description for a simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub noise: Option<NoiseSpec>,
    pub response_design: ResponseDesign,
    /// NBR dispersion; quantile tasks ignore it.
    pub eta: f64,
    pub quantile_tau: f64,
    pub quantile_noise: QuantileNoise,
}

/// SGD knobs with task-dependent defaults resolved at run time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    /// None: 1 for linear tasks, n/4 for network tasks.
    pub batch: Option<usize>,
    /// None: half the total step count.
    pub t_decay: Option<f64>,
    pub projection_radius: Option<f64>,
}

impl SgdSettings {
    pub fn resolve(&self, n: usize, is_dnn: bool, seed: u64) -> SgdConfig {
        let batch_size = self.batch.unwrap_or(if is_dnn { (n / 4).max(1) } else { 1 }).min(n);
        let steps_per_epoch = n.div_ceil(batch_size);
        let total = (steps_per_epoch * self.epochs) as f64;
        SgdConfig {
            learning_rate: self.learning_rate,
            t_decay: self.t_decay.unwrap_or(total / 2.0),
            epochs: self.epochs,
            batch_size,
            seed,
            projection_radius: self.projection_radius,
        }
    }
}

/// A full benchmark run description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub synthetic: SyntheticSpec,
    pub model: ModelKind,
    pub reps: usize,
    pub seed: u64,
    pub eps_grid: Vec<f64>,
    pub lambda_name: String,
    pub alpha_mode: AlphaMode,
    pub rho_mode: RhoMode,
    pub tune_mode: TuneMode,
    pub sgd: SgdSettings,
    pub holdout_fraction: f64,
    /// Confidence and radius inputs of the closed-form α.
    pub delta: f64,
    pub r: f64,
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::Config("eps grid must be nonempty within (0,1]".into()));
        }
        Ok(())
    }

    fn loss(&self, eta: f64) -> LossFn {
        match self.task {
            Task::Logistic | Task::DnnLogistic => LossFn::Logistic,
            Task::Nbr | Task::DnnNbr => LossFn::NegBinomial { eta },
            Task::Quantile => LossFn::Quantile { tau: self.synthetic.quantile_tau },
            Task::DnnLad => LossFn::Quantile { tau: 0.5 },
        }
    }
}

/// One replication's generated problem.
struct Replication {
    x: Array2<f64>,
    y: Array1<f64>,
    theta_star: Option<Array1<f64>>,
}

fn generate_replication(cfg: &ExperimentConfig, rep_seed: u64) -> Result<Replication> {
    let spec = &cfg.synthetic;
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    if cfg.task.is_dnn() {
        let data = gen_additive_dnn_data(spec.n, spec.p, spec.noise.as_ref(), &mut rng)?;
        let kind = match cfg.task {
            Task::DnnLogistic => ResponseKind::Logistic,
            Task::DnnNbr => ResponseKind::Nbr { eta: spec.eta },
            Task::DnnLad => ResponseKind::Quantile {
                tau: 0.5,
                noise: spec.quantile_noise,
            },
            _ => unreachable!(),
        };
        let y = gen_response_from_scores(&data.scores, kind, &mut rng)?;
        Ok(Replication { x: data.x, y, theta_star: None })
    } else {
        let theta_star = gen_true_theta(spec.p, &mut rng)?;
        let (contaminated, clean) = gen_design(spec.n, spec.p, spec.noise.as_ref(), &mut rng)?;
        let (score_design, fit_design) = match spec.response_design {
            ResponseDesign::Clean => (&clean, contaminated.clone()),
            ResponseDesign::Observed => (&contaminated, contaminated.clone()),
            ResponseDesign::Latent => (&contaminated, clean.clone()),
        };
        let scores = score_design.dot(&theta_star);
        let kind = match cfg.task {
            Task::Logistic => ResponseKind::Logistic,
            Task::Nbr => ResponseKind::Nbr { eta: spec.eta },
            Task::Quantile => ResponseKind::Quantile {
                tau: spec.quantile_tau,
                noise: spec.quantile_noise,
            },
            _ => unreachable!(),
        };
        let y = gen_response_from_scores(&scores, kind, &mut rng)?;
        Ok(Replication { x: fit_design, y, theta_star: Some(theta_star) })
    }
}

/// Hyperparameters chosen for both arms on the tuning replication.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChosenHyperparams {
    pub alpha: f64,
    pub rho_truncated: f64,
    pub rho_untruncated: f64,
    pub epsilon: f64,
}

/// Per-arm aggregated statistics. `values` holds one metric per replication;
/// diverged replications are None.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmStats {
    pub arm: String,
    pub values: Vec<Option<f64>>,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub diverged: usize,
    pub alpha: Option<f64>,
    pub rho: f64,
}

pub fn aggregate_arm(arm: &str, values: Vec<Option<f64>>, alpha: Option<f64>, rho: f64) -> ArmStats {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let k = ok.len().max(1) as f64;
    let mean = ok.iter().sum::<f64>() / k;
    let var = ok.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
    let sd = var.sqrt();
    let se = sd / k.sqrt();
    ArmStats {
        arm: arm.to_string(),
        diverged: values.iter().filter(|v| v.is_none()).count(),
        values,
        mean,
        sd,
        se,
        alpha,
        rho,
    }
}

/// The aggregated result of a benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub noise: String,
    pub beta_or_psi: f64,
    pub n: usize,
    pub p: usize,
    pub one_plus_eps: f64,
    pub metric: String,
    pub truncated: ArmStats,
    pub untruncated: ArmStats,
    pub seed: u64,
    pub reps: usize,
    pub wall_secs: f64,
    /// Set when reps == 1 (standard errors are meaningless) or when either
    /// arm diverged in more than 20% of replications.
    pub flagged_invalid: bool,
    pub flag_reason: Option<String>,
}

fn fit_metric(
    cfg: &ExperimentConfig,
    rep: &Replication,
    eta: f64,
    chosen: &ChosenHyperparams,
    rep_seed: u64,
) -> (Option<f64>, Option<f64>) {
    let loss = cfg.loss(eta);
    let sgd = cfg.sgd.resolve(rep.x.nrows(), cfg.task.is_dnn(), rep_seed ^ 0x5851_f42d);
    let warm = match warm_start(loss, &cfg.model, rep.x.view(), rep.y.view(), 1e-3, &sgd) {
        Ok(w) => w,
        Err(_) => return (None, None),
    };
    let lambda = HighOrderFn::from_name(&cfg.lambda_name, chosen.epsilon)
        .expect("lambda validated at tuning time");
    let fit_arm = |mode: TruncationMode, rho: f64| -> Option<Params> {
        let obj = TruncatedObjective::new(loss, mode, rho).ok()?;
        sgd_fit(&obj, rep.x.view(), rep.y.view(), &sgd, warm.clone())
            .ok()
            .map(|f| f.params)
    };
    let trunc_mode = match TruncationSpec::new(lambda, chosen.alpha) {
        Ok(spec) => TruncationMode::Log(spec),
        Err(_) => return (None, None),
    };
    let params_t = fit_arm(trunc_mode, chosen.rho_truncated);
    let params_u = fit_arm(TruncationMode::None, chosen.rho_untruncated);

    let measure = |params: &Params| -> Option<f64> {
        match cfg.task {
            Task::Logistic | Task::Nbr | Task::Quantile => {
                let Params::Linear(theta) = params else { return None };
                let star = rep.theta_star.as_ref()?;
                l2_error(theta.view(), star.view()).ok()
            }
            Task::DnnLogistic => {
                let y_hat = Array1::from_shape_fn(rep.x.nrows(), |i| {
                    if predict_unchecked(params, rep.x.row(i)) > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                });
                accuracy(y_hat.view(), rep.y.view()).ok()
            }
            Task::DnnNbr => {
                let y_hat = Array1::from_shape_fn(rep.x.nrows(), |i| {
                    predict_unchecked(params, rep.x.row(i)).min(30.0).exp()
                });
                mae(y_hat.view(), rep.y.view()).ok()
            }
            Task::DnnLad => {
                let y_hat = Array1::from_shape_fn(rep.x.nrows(), |i| {
                    predict_unchecked(params, rep.x.row(i))
                });
                mae(y_hat.view(), rep.y.view()).ok()
            }
        }
    };
    (
        params_t.as_ref().and_then(&measure),
        params_u.as_ref().and_then(&measure),
    )
}

/// Select (α, ρ, ε) for both arms on the given replication's data.
fn choose_on_data(
    cfg: &ExperimentConfig,
    rep: &Replication,
    eta: f64,
    tune_seed: u64,
) -> Result<ChosenHyperparams> {
    let loss = cfg.loss(eta);
    let sgd = cfg.sgd.resolve(rep.x.nrows(), cfg.task.is_dnn(), tune_seed ^ 0x9e37_79b9);
    let problem = TuneProblem {
        x: rep.x.view(),
        y: rep.y.view(),
        loss,
        model: cfg.model.clone(),
        lambda_name: cfg.lambda_name.clone(),
        sgd: sgd.clone(),
    };
    let rho_range = match cfg.rho_mode {
        RhoMode::Fixed(v) => SearchRange::Fixed(v),
        RhoMode::Search => SearchRange::log_default(),
    };
    let search = SearchSpec {
        eps_grid: cfg.eps_grid.clone(),
        alpha: SearchRange::log_default(),
        rho: rho_range,
        holdout_fraction: cfg.holdout_fraction,
        seed: tune_seed ^ 0x2545_f491,
    };
    let untruncated = tune_rho_only(&problem, &search, None, cfg.eps_grid[0])?;

    let truncated = match cfg.alpha_mode {
        AlphaMode::Search => tune_hyperparams(&problem, &search)?,
        AlphaMode::Theory => {
            // plug-in sup-risk at the warm start, then the closed-form α;
            // with several ε candidates the holdout picks among them
            let warm = warm_start(loss, &cfg.model, rep.x.view(), rep.y.view(), 1e-3, &sgd)?;
            let mut best: Option<crate::solver::TunedParams> = None;
            for &epsilon in &cfg.eps_grid {
                let lambda = HighOrderFn::from_name(&cfg.lambda_name, epsilon)?;
                let sup = plug_in_sup_risk(lambda, loss, &warm, rep.x.view(), rep.y.view())?;
                let alpha = default_alpha(&AlphaInputs {
                    n: rep.x.nrows(),
                    p: rep.x.ncols(),
                    epsilon,
                    delta: cfg.delta,
                    r: cfg.r,
                    sup_risk: sup,
                })?;
                let candidate = tune_rho_only(&problem, &search, Some(alpha), epsilon)?;
                let better = match &best {
                    None => true,
                    Some(b) => candidate.holdout_loss < b.holdout_loss,
                };
                if better {
                    best = Some(candidate);
                }
            }
            best.expect("nonempty eps grid")
        }
    };
    Ok(ChosenHyperparams {
        alpha: truncated.alpha.expect("truncated arm has alpha"),
        rho_truncated: truncated.rho,
        rho_untruncated: untruncated.rho,
        epsilon: truncated.epsilon,
    })
}

/// Select hyperparameters on a dedicated tuning replication whose seed sits
/// just past the replication range.
pub fn choose_hyperparams(cfg: &ExperimentConfig, eta: f64) -> Result<ChosenHyperparams> {
    let tune_seed = cfg.seed.wrapping_add(cfg.reps as u64);
    let rep = generate_replication(cfg, tune_seed)?;
    choose_on_data(cfg, &rep, eta, tune_seed)
}

/// Run the full head-to-head benchmark. Deterministic given (config, seed) in
/// sequential mode; with jobs > 1 replications fan out but aggregate by index
/// so the report is identical.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let start = Instant::now();
    let eta = cfg.synthetic.eta;
    let once = match cfg.tune_mode {
        TuneMode::Once => Some(choose_hyperparams(cfg, eta)?),
        TuneMode::PerRep => None,
    };

    let rep_indices: Vec<usize> = (0..cfg.reps).collect();
    type RepOutcome = (usize, Option<f64>, Option<f64>, Option<ChosenHyperparams>);
    let run_one = |&i: &usize| -> RepOutcome {
        let rep_seed = cfg.seed.wrapping_add(i as u64);
        match generate_replication(cfg, rep_seed) {
            Ok(rep) => {
                let chosen = match &once {
                    Some(c) => *c,
                    None => match choose_on_data(cfg, &rep, eta, rep_seed) {
                        Ok(c) => c,
                        Err(_) => return (i, None, None, None),
                    },
                };
                let (t, u) = fit_metric(cfg, &rep, eta, &chosen, rep_seed);
                (i, t, u, Some(chosen))
            }
            Err(_) => (i, None, None, None),
        }
    };
    let mut outcomes: Vec<RepOutcome> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| rep_indices.par_iter().map(run_one).collect())
    } else {
        rep_indices.iter().map(run_one).collect()
    };
    outcomes.sort_by_key(|(i, _, _, _)| *i);

    let values_t: Vec<Option<f64>> = outcomes.iter().map(|(_, t, _, _)| *t).collect();
    let values_u: Vec<Option<f64>> = outcomes.iter().map(|(_, _, u, _)| *u).collect();
    // reported hyperparameters: the unique once-tuned set, or the per-rep
    // medians
    let median = |mut v: Vec<f64>| -> f64 {
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        v[v.len() / 2]
    };
    let chosen_sets: Vec<ChosenHyperparams> =
        outcomes.iter().filter_map(|(_, _, _, c)| *c).collect();
    let chosen = ChosenHyperparams {
        alpha: median(chosen_sets.iter().map(|c| c.alpha).collect()),
        rho_truncated: median(chosen_sets.iter().map(|c| c.rho_truncated).collect()),
        rho_untruncated: median(chosen_sets.iter().map(|c| c.rho_untruncated).collect()),
        epsilon: median(chosen_sets.iter().map(|c| c.epsilon).collect()),
    };
    let truncated = aggregate_arm("truncated", values_t, Some(chosen.alpha), chosen.rho_truncated);
    let untruncated = aggregate_arm("untruncated", values_u, None, chosen.rho_untruncated);

    let mut flagged_invalid = false;
    let mut flag_reason = None;
    if cfg.reps == 1 {
        flagged_invalid = true;
        flag_reason = Some("single replication: standard errors degenerate".into());
    }
    let limit = (0.2 * cfg.reps as f64).ceil() as usize;
    for arm in [&truncated, &untruncated] {
        if arm.diverged > limit {
            flagged_invalid = true;
            flag_reason = Some(format!(
                "{} arm diverged in {}/{} replications",
                arm.arm, arm.diverged, cfg.reps
            ));
        }
    }

    let (noise, beta_or_psi) = match &cfg.synthetic.noise {
        Some(spec) => (spec.label().to_string(), spec.level()),
        None => ("none".to_string(), 0.0),
    };
    let one_plus_eps = 1.0 + chosen.epsilon;
    Ok(MetricsReport {
        task: cfg.task.name().to_string(),
        noise,
        beta_or_psi,
        n: cfg.synthetic.n,
        p: cfg.synthetic.p,
        one_plus_eps,
        metric: cfg.task.metric_name().to_string(),
        truncated,
        untruncated,
        seed: cfg.seed,
        reps: cfg.reps,
        wall_secs: start.elapsed().as_secs_f64(),
        flagged_invalid,
        flag_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            task: Task::Logistic,
            synthetic: SyntheticSpec {
                n: 60,
                p: 5,
                noise: None,
                response_design: ResponseDesign::Clean,
                eta: 0.1,
                quantile_tau: 0.5,
                quantile_noise: QuantileNoise::Gaussian { sigma: 1.0 },
            },
            model: ModelKind::Linear,
            reps: 3,
            seed: 11,
            eps_grid: vec![1.0],
            lambda_name: "chen".into(),
            alpha_mode: AlphaMode::Theory,
            rho_mode: RhoMode::Fixed(1e-3),
            tune_mode: TuneMode::Once,
            sgd: SgdSettings {
                learning_rate: 0.1,
                epochs: 8,
                batch: None,
                t_decay: None,
                projection_radius: Some(10.0),
            },
            holdout_fraction: 0.25,
            delta: 0.05,
            r: 10.0,
            jobs: 1,
        }
    }

    #[test]
    fn experiment_end_to_end_determinism() {
        let cfg = tiny_config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.truncated.values, b.truncated.values);
        assert_eq!(a.untruncated.values, b.untruncated.values);
        assert_eq!(a.truncated.alpha, b.truncated.alpha);
    }

    #[test]
    fn parallel_matches_sequential() {
        let seq = run_experiment(&tiny_config()).unwrap();
        let par = run_experiment(&ExperimentConfig { jobs: 2, ..tiny_config() }).unwrap();
        assert_eq!(seq.truncated.values, par.truncated.values);
        assert_eq!(seq.untruncated.values, par.untruncated.values);
    }

    #[test]
    fn single_rep_is_flagged() {
        let report = run_experiment(&ExperimentConfig { reps: 1, ..tiny_config() }).unwrap();
        assert!(report.flagged_invalid);
        assert_eq!(report.truncated.se, 0.0);
    }

    #[test]
    fn both_arms_present_and_finite_on_clean_data() {
        let report = run_experiment(&tiny_config()).unwrap();
        assert_eq!(report.truncated.values.len(), 3);
        assert_eq!(report.truncated.diverged, 0);
        assert_eq!(report.untruncated.diverged, 0);
        assert!(report.truncated.mean.is_finite());
        assert!(report.untruncated.mean.is_finite());
        assert_eq!(report.metric, "l2_error");
    }
}
