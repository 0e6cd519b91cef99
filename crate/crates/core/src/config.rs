//! Plain-text run configuration: `[section]` headers with `key = value`
//! lines, `#` comments, and CLI `--set section.key=value` overrides.

use std::collections::BTreeMap;
use std::path::Path;

use crate::datagen::{NoiseSpec, QuantileNoise};
use crate::error::{Error, Result};
use crate::experiment::{
    AlphaMode, ExperimentConfig, ResponseDesign, RhoMode, SgdSettings, SyntheticSpec, Task, TuneMode,
};
use crate::model::ModelKind;

/// Parsed configuration text: section → key → value.
#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ConfigMap::default();
        let mut current = String::from("experiment");
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section", k + 1)))?;
                current = name.trim().to_string();
                map.sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", k + 1)))?;
            map.sections
                .entry(current.clone())
                .or_default()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Apply a `section.key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override must be section.key=value: {assignment}")))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override must be section.key=value: {assignment}")))?;
        self.sections
            .entry(section.trim().to_string())
            .or_default()
            .insert(key.trim().to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }

    fn parse_as<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad value for {section}.{key}: '{v}'"))),
        }
    }

    fn parse_opt<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some("auto") | Some("none") => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value for {section}.{key}: '{v}'"))),
        }
    }

    fn parse_list(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad list entry in {section}.{key}: '{s}'")))
                })
                .collect(),
        }
    }

    /// Assemble the full experiment description, filling documented defaults.
    pub fn to_experiment(&self) -> Result<ExperimentConfig> {
        let task = Task::from_name(self.get("experiment", "task").unwrap_or("logistic"))?;
        let n: usize = self.parse_as("data", "n", 200)?;
        let p: usize = self.parse_as("data", "p", 100)?;

        let noise = match self.get("data", "noise").unwrap_or("none") {
            "none" => None,
            "pareto" => Some(NoiseSpec::Pareto {
                beta: self.parse_as("data", "beta", 2.01)?,
                centered: self.parse_as("data", "centered", false)?,
            }),
            "mask" => {
                // paper defaults: U(10,20) for logistic-family tasks, U(1,5)
                // for counts
                let (dlo, dhi) = match task {
                    Task::Nbr | Task::DnnNbr => (1.0, 5.0),
                    _ => (10.0, 20.0),
                };
                Some(NoiseSpec::UniformMask {
                    lo: self.parse_as("data", "lo", dlo)?,
                    hi: self.parse_as("data", "hi", dhi)?,
                    psi: self.parse_as("data", "psi", 0.3)?,
                    per_row: self.parse_as("data", "per_row", false)?,
                })
            }
            "gauss" => Some(NoiseSpec::GaussianFraction {
                mu: self.parse_as("data", "mu", 0.5)?,
                sigma: self.parse_as("data", "sigma", 2.0)?,
                proportion: self.parse_as("data", "proportion", 0.2)?,
            }),
            other => return Err(Error::Config(format!("unknown noise model: {other}"))),
        };
        if let Some(spec) = &noise {
            spec.validate()?;
        }

        let response_design = match self.get("data", "response_design").unwrap_or("clean") {
            "clean" => ResponseDesign::Clean,
            "observed" => ResponseDesign::Observed,
            "latent" => ResponseDesign::Latent,
            other => return Err(Error::Config(format!("unknown response design: {other}"))),
        };

        // dispersion defaults: 0.1 for linear NBR, 0.03 for the network NBR
        let default_eta = if task == Task::DnnNbr { 0.03 } else { 0.1 };
        let quantile_noise = match self.get("data", "quantile_noise").unwrap_or("gaussian") {
            "gaussian" => QuantileNoise::Gaussian {
                sigma: self.parse_as("data", "quantile_sigma", 1.0)?,
            },
            "pareto" => QuantileNoise::Pareto {
                beta: self.parse_as("data", "quantile_beta", 2.01)?,
            },
            other => return Err(Error::Config(format!("unknown quantile noise: {other}"))),
        };
        let synthetic = SyntheticSpec {
            n,
            p,
            noise,
            response_design,
            eta: self.parse_as("data", "eta", default_eta)?,
            quantile_tau: self.parse_as("data", "tau", 0.5)?,
            quantile_noise,
        };

        let default_model = if task.is_dnn() { "mlp:2" } else { "linear" };
        let model = match self.get("model", "widths") {
            Some(widths) => {
                let widths: Vec<usize> = widths
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| Error::Config(format!("bad width: '{s}'")))
                    })
                    .collect::<Result<_>>()?;
                ModelKind::Mlp { widths }
            }
            None => ModelKind::from_name(self.get("model", "kind").unwrap_or(default_model), p)?,
        };

        let alpha_mode = match self.get("experiment", "alpha_mode").unwrap_or("theory") {
            "theory" => AlphaMode::Theory,
            "search" => AlphaMode::Search,
            other => return Err(Error::Config(format!("unknown alpha mode: {other}"))),
        };
        let rho_mode = match self.get("search", "rho").unwrap_or("search") {
            "search" => RhoMode::Search,
            v => RhoMode::Fixed(
                v.parse()
                    .map_err(|_| Error::Config(format!("bad search.rho: '{v}'")))?,
            ),
        };
        let tune_mode = match self.get("search", "tune").unwrap_or("per_rep") {
            "per_rep" => TuneMode::PerRep,
            "once" => TuneMode::Once,
            other => return Err(Error::Config(format!("unknown tune mode: {other}"))),
        };

        let default_lr = if task.is_dnn() { 0.05 } else { 0.05 };
        let sgd = SgdSettings {
            learning_rate: self.parse_as("sgd", "learning_rate", default_lr)?,
            epochs: self.parse_as("sgd", "epochs", if task.is_dnn() { 200 } else { 60 })?,
            batch: self.parse_opt("sgd", "batch")?,
            t_decay: self.parse_opt("sgd", "t_decay")?,
            projection_radius: self.parse_opt("sgd", "projection_radius")?,
        };

        let cfg = ExperimentConfig {
            task,
            synthetic,
            model,
            reps: self.parse_as("experiment", "reps", 20)?,
            seed: self.parse_as("experiment", "seed", 1)?,
            eps_grid: self.parse_list("experiment", "eps_grid", &[1.0])?,
            lambda_name: self
                .get("experiment", "lambda")
                .unwrap_or("chen")
                .to_string(),
            alpha_mode,
            tune_mode,
            rho_mode,
            sgd,
            holdout_fraction: self.parse_as("search", "holdout_fraction", 0.25)?,
            delta: self.parse_as("search", "delta", 0.05)?,
            r: self.parse_as("search", "r", 10.0)?,
            jobs: self.parse_as("experiment", "jobs", 1)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
