//! Scenario configuration: one TOML file per scenario, every field optional
//! and defaulting to the reference experiment.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use gridinv_core::bayes::GaussianPrior;
use gridinv_core::model::{DisturbanceEvent, SystemData};
use gridinv_core::observation::{Coordinates, NoiseModel};
use gridinv_core::pce::RuleKind;
use gridinv_core::scenario::Scenario;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Adjoint,
    Pce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub mean: Vec<f64>,
    /// Diagonal of the prior covariance.
    pub variances: Vec<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mean: vec![24.0, 6.0, 3.1],
            variances: vec![5.76, 0.36, 0.09],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PceConfig {
    pub order: usize,
    pub rule: RuleKind,
    /// Random starts of the surrogate MAP search besides the prior mean.
    pub starts: usize,
}

impl Default for PceConfig {
    fn default() -> Self {
        Self {
            order: 2,
            rule: RuleKind::StochasticTesting,
            starts: gridinv_core::pce::DEFAULT_STARTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// TOML network and machine data. Unset means the bundled WSCC 9-bus set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<PathBuf>,
    pub t_final: f64,
    pub dt: f64,
    pub dt_obs: f64,
    /// Empty means no disturbance.
    #[serde(rename = "disturbance")]
    pub disturbances: Vec<DisturbanceEvent>,
    /// Observed buses (1-based); empty means all.
    pub buses: Vec<usize>,
    pub coordinates: Coordinates,
    /// Variance of the measurement noise on every observed component.
    pub noise_variance: f64,
    pub prior: PriorConfig,
    /// Parameters used to synthesize data and to score estimates; empty
    /// when unknown.
    pub truth: Vec<f64>,
    pub seed: u64,
    pub method: Method,
    pub pce: PceConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            system: None,
            t_final: 5.0,
            dt: 0.01,
            dt_obs: 0.05,
            disturbances: vec![DisturbanceEvent {
                bus: 5,
                start: 0.1,
                duration: 0.2,
                load: 5.5,
            }],
            buses: Vec::new(),
            coordinates: Coordinates::Rectangular,
            noise_variance: 1e-4,
            prior: PriorConfig::default(),
            truth: vec![23.64, 6.40, 3.01],
            seed: 1,
            method: Method::Adjoint,
            pce: PceConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing scenario config")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(
            self.dt > 0.0 && self.t_final > 0.0,
            "t_final and dt must be positive"
        );
        let ratio = self.dt_obs / self.dt;
        ensure!(
            self.dt_obs > 0.0 && (ratio - ratio.round()).abs() <= 1e-9 * ratio,
            "dt_obs = {} is not an integer multiple of dt = {}",
            self.dt_obs,
            self.dt
        );
        for ev in &self.disturbances {
            ensure!(
                ev.end() <= self.t_final + 1e-9 * self.dt,
                "disturbance ends at {} s, after t_final = {} s",
                ev.end(),
                self.t_final
            );
        }
        ensure!(
            self.noise_variance > 0.0 && self.noise_variance.is_finite(),
            "noise variance must be positive"
        );
        let n = self.prior.mean.len();
        ensure!(
            n == self.prior.variances.len(),
            "prior mean and variances differ in length"
        );
        ensure!(
            self.truth.is_empty() || self.truth.len() == n,
            "truth has {} entries, prior has {n}",
            self.truth.len()
        );
        ensure!(self.pce.order >= 1, "PCE order must be at least 1");
        Ok(())
    }

    pub fn system_data(&self) -> anyhow::Result<SystemData> {
        let text = match &self.system {
            Some(path) => std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?,
            None => gridinv_core::WSCC9_DATA.to_owned(),
        };
        let data: SystemData = toml::from_str(&text).context("parsing system data")?;
        data.validate()?;
        Ok(data)
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            t_final: self.t_final,
            dt: self.dt,
            dt_obs: self.dt_obs,
            events: self.disturbances.clone(),
            buses: self.buses.clone(),
            coordinates: self.coordinates,
        }
    }

    pub fn prior(&self) -> anyhow::Result<GaussianPrior> {
        Ok(GaussianPrior::new(
            self.prior.mean.clone(),
            self.prior.variances.clone(),
        )?)
    }

    pub fn noise(&self, q: usize) -> anyhow::Result<NoiseModel> {
        Ok(NoiseModel::uniform(q, self.noise_variance)?)
    }

    pub fn truth(&self) -> anyhow::Result<&[f64]> {
        if self.truth.is_empty() {
            bail!("the config has no truth to synthesize data from");
        }
        Ok(&self.truth)
    }

    /// The truth for scoring estimates, if known.
    pub fn known_truth(&self) -> Option<&[f64]> {
        (!self.truth.is_empty()).then_some(self.truth.as_slice())
    }
}

/// Command-line overrides; every field left unset keeps the file value.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub dt_obs: Option<f64>,
    /// Disturbed load value during the switching window.
    #[arg(long)]
    pub load: Option<f64>,
    /// Remove every disturbance.
    #[arg(long)]
    pub no_disturbance: bool,
    #[arg(long)]
    pub noise_variance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub pce_order: Option<usize>,
    #[arg(long, value_parser = parse_rule)]
    pub pce_rule: Option<RuleKind>,
}

fn parse_rule(s: &str) -> Result<RuleKind, String> {
    match s {
        "tensor" => Ok(RuleKind::Tensor),
        "sparse" => Ok(RuleKind::Sparse),
        "stochastic-testing" => Ok(RuleKind::StochasticTesting),
        _ => Err(format!(
            "unknown rule {s:?} (tensor, sparse, stochastic-testing)"
        )),
    }
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> anyhow::Result<()> {
        if let Some(v) = self.t_final {
            cfg.t_final = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.dt_obs {
            cfg.dt_obs = v;
        }
        if self.no_disturbance {
            cfg.disturbances.clear();
        }
        if let Some(v) = self.load {
            if cfg.disturbances.is_empty() {
                bail!("--load needs a disturbance in the config");
            }
            cfg.disturbances.iter_mut().for_each(|ev| ev.load = v);
        }
        if let Some(v) = self.noise_variance {
            cfg.noise_variance = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.pce_order {
            cfg.pce.order = v;
        }
        if let Some(v) = self.pce_rule {
            cfg.pce.rule = v;
        }
        Ok(())
    }
}

/// Reads the optional config file, applies overrides and validates.
pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}
