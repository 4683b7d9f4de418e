//! Experiment orchestration: data synthesis, the two estimation back ends,
//! the gradient check and parameter sweeps. Independent model solves run on
//! the rayon pool; results are collected in a fixed order so the output does
//! not depend on scheduling.

use anyhow::{bail, ensure, Context};
use gridinv_core::bayes::{
    self, GaussianPrior, InverseProblem, PosteriorSummary, SolveCounts, SolverStats,
};
use gridinv_core::observation::{NoiseModel, ObservationSet};
use gridinv_core::optimizer::IterationRecord;
use gridinv_core::pce::{surrogate_map, Design, MultiIndexSet, Surrogate, SurrogatePosterior};
use gridinv_core::rng::{derive_seed, NormalStream};
use gridinv_core::scenario::ForwardModel;
use gridinv_core::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Method, ScenarioConfig};

/// Stream index of the surrogate multi-start draws under the scenario seed.
const STARTS_STREAM: u64 = 1;

/// Forward model, prior and noise resolved from a config.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ScenarioConfig,
    pub forward: ForwardModel,
    pub prior: GaussianPrior,
    pub noise: NoiseModel,
}

impl Experiment {
    pub fn new(config: &ScenarioConfig) -> anyhow::Result<Self> {
        config.validate()?;
        let forward = ForwardModel::new(&config.system_data()?, &config.scenario())?;
        let prior = config.prior()?;
        ensure!(
            prior.dim() == forward.n_params(),
            "prior has {} entries for {} machines",
            prior.dim(),
            forward.n_params()
        );
        let noise = config.noise(forward.layout.len())?;
        Ok(Self {
            config: config.clone(),
            forward,
            prior,
            noise,
        })
    }

    /// Noisy data from the configured truth and seed.
    pub fn synthesize(&self) -> anyhow::Result<ObservationSet> {
        Ok(self
            .forward
            .synthesize(self.config.truth()?, &self.noise, self.config.seed)?)
    }

    pub fn problem<'a>(&'a self, obs: &'a ObservationSet) -> anyhow::Result<InverseProblem<'a>> {
        Ok(InverseProblem::new(
            &self.forward,
            obs,
            &self.noise,
            &self.prior,
        )?)
    }
}

/// Cost of one estimate beyond what [`SolverStats`] records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtraCost {
    /// Gradient evaluations of the finite-difference Laplace Hessian
    /// (adjoint back end; not part of the MAP counts).
    pub laplace_gradients: usize,
    /// Forward solves of the Laplace step.
    pub laplace_solves: SolveCounts,
    /// Surrogate construction simulations (PCE back end).
    pub surrogate_simulations: usize,
}

/// Result of [`estimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub method: Method,
    pub summary: PosteriorSummary,
    pub extra: ExtraCost,
    /// Iterations of the MAP search (adjoint back end).
    #[serde(skip)]
    pub history: Vec<IterationRecord>,
    #[serde(skip)]
    pub surrogate: Option<Surrogate>,
}

/// Adjoint MAP followed by a parallel finite-difference Laplace Hessian.
/// Solve counts in the summary cover the MAP search only.
pub fn estimate_adjoint(exp: &Experiment, obs: &ObservationSet) -> anyhow::Result<Estimate> {
    let problem = exp.problem(obs)?;
    let opt = bayes::map_estimate(&problem, &exp.prior.mean, &bayes::map_options(&exp.prior))?;
    let map_solves = problem.solves();
    let points = bayes::hessian_points(&opt.x);
    let grads = points
        .par_iter()
        .map(|p| problem.value_and_gradient(p).map(|(_, g)| g))
        .collect::<Result<Vec<_>, Error>>()?;
    let cov = bayes::covariance_from_hessian(&bayes::hessian_from_gradients(&opt.x, &grads)?)?;
    let total = problem.solves();
    let stats = SolverStats {
        iterations: opt.iterations,
        evaluations: opt.evaluations,
        forward_solves: map_solves.forward,
        adjoint_solves: map_solves.adjoint,
        converged: opt.converged(),
        grad_norm: opt.grad_norm,
    };
    let extra = ExtraCost {
        laplace_gradients: points.len(),
        laplace_solves: SolveCounts {
            forward: total.forward - map_solves.forward,
            adjoint: total.adjoint - map_solves.adjoint,
        },
        surrogate_simulations: 0,
    };
    let summary = PosteriorSummary::new(opt.x, &cov, exp.config.known_truth(), stats)?;
    Ok(Estimate {
        method: Method::Adjoint,
        summary,
        extra,
        history: opt.history,
        surrogate: None,
    })
}

/// Builds the configured surrogate, running the design nodes in parallel.
pub fn build_surrogate(exp: &Experiment) -> anyhow::Result<Surrogate> {
    let basis = MultiIndexSet::total_order(exp.prior.dim(), exp.config.pce.order)?;
    let design = Design::for_order(exp.config.pce.rule, &basis)?;
    let values = design
        .nodes(&exp.prior)
        .par_iter()
        .map(|m| {
            exp.forward.observe(m).map_err(|e| Error::ForwardFailed {
                m: m.clone(),
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(Surrogate::fit(basis, &design, exp.prior.clone(), &values)?)
}

/// Surrogate MAP and exact surrogate Hessian. A given surrogate is reused
/// and costs no simulations.
pub fn estimate_pce(
    exp: &Experiment,
    obs: &ObservationSet,
    surrogate: Option<Surrogate>,
) -> anyhow::Result<Estimate> {
    let (surrogate, simulations) = match surrogate {
        Some(s) => (s, 0),
        None => {
            let s = build_surrogate(exp)?;
            let n = s.forward_solves;
            (s, n)
        }
    };
    ensure!(
        surrogate.prior == exp.prior,
        "the surrogate was built for a different prior"
    );
    ensure!(
        obs.layout == exp.forward.layout,
        "observation layout does not match the scenario"
    );
    let post = SurrogatePosterior::new(&surrogate, obs, &exp.noise, &exp.prior)?;
    let mut summary = surrogate_map(
        &post,
        exp.config.pce.starts,
        derive_seed(exp.config.seed, STARTS_STREAM),
        exp.config.known_truth(),
        &bayes::map_options(&exp.prior),
    )?;
    summary.stats.forward_solves = simulations;
    let extra = ExtraCost {
        surrogate_simulations: simulations,
        ..ExtraCost::default()
    };
    Ok(Estimate {
        method: Method::Pce,
        summary,
        extra,
        history: Vec::new(),
        surrogate: Some(surrogate),
    })
}

pub fn estimate(exp: &Experiment, obs: &ObservationSet) -> anyhow::Result<Estimate> {
    match exp.config.method {
        Method::Adjoint => estimate_adjoint(exp, obs),
        Method::Pce => estimate_pce(exp, obs, None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRow {
    pub point: usize,
    pub component: usize,
    pub m: f64,
    pub adjoint: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

/// The prior mean followed by `n_random` points drawn uniformly within
/// `±spread` (relative) of it.
pub fn check_points(
    prior: &GaussianPrior,
    n_random: usize,
    spread: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = NormalStream::new(seed);
    let mut pts = vec![prior.mean.clone()];
    for _ in 0..n_random {
        pts.push(
            prior
                .mean
                .iter()
                .map(|&mu| mu * (1.0 + spread * (2.0 * rng.uniform() - 1.0)))
                .collect(),
        );
    }
    pts
}

/// Adjoint gradient against central differences of `J` with relative step
/// `rel_step`, at every point.
pub fn gradient_check(
    exp: &Experiment,
    obs: &ObservationSet,
    points: &[Vec<f64>],
    rel_step: f64,
) -> anyhow::Result<Vec<GradientRow>> {
    ensure!(rel_step > 0.0, "finite-difference step must be positive");
    let problem = exp.problem(obs)?;
    let rows = points
        .par_iter()
        .enumerate()
        .map(|(p, m)| -> anyhow::Result<Vec<GradientRow>> {
            let (_, g) = problem.value_and_gradient(m)?;
            let fd = (0..m.len())
                .into_par_iter()
                .map(|i| -> anyhow::Result<f64> {
                    let h = rel_step * m[i].abs().max(1e-8);
                    let (mut mp, mut mm) = (m.clone(), m.clone());
                    mp[i] += h;
                    mm[i] -= h;
                    Ok((problem.value(&mp)? - problem.value(&mm)?) / (2.0 * h))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            Ok((0..m.len())
                .map(|i| GradientRow {
                    point: p,
                    component: i + 1,
                    m: m[i],
                    adjoint: g[i],
                    finite_difference: fd[i],
                    rel_error: (g[i] - fd[i]).abs()
                        / g[i].abs().max(fd[i].abs()).max(f64::MIN_POSITIVE),
                })
                .collect())
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Axes of a sweep. Unset axes keep the base config value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub t_final: Option<Vec<f64>>,
    pub dt_obs: Option<Vec<f64>>,
    pub load: Option<Vec<f64>>,
    pub noise_variance: Option<Vec<f64>>,
}

impl SweepGrid {
    /// Parses `axis=v1,v2,...` with axis one of `t_final`, `dt_obs`, `load`,
    /// `noise_variance`.
    pub fn set(&mut self, spec: &str) -> anyhow::Result<()> {
        let (axis, list) = spec
            .split_once('=')
            .with_context(|| format!("expected axis=values, got {spec:?}"))?;
        let values = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad value {s:?} for {axis}"))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let slot = match axis.trim() {
            "t_final" => &mut self.t_final,
            "dt_obs" => &mut self.dt_obs,
            "load" => &mut self.load,
            "noise_variance" => &mut self.noise_variance,
            other => bail!("unknown sweep axis {other:?}"),
        };
        *slot = Some(values);
        Ok(())
    }

    /// Scenario configs in row-major order (`t_final` slowest, noise
    /// fastest), each with the seed `derive_seed(base.seed, index)`.
    pub fn expand(&self, base: &ScenarioConfig) -> anyhow::Result<Vec<ScenarioConfig>> {
        let axes = [
            &self.t_final,
            &self.dt_obs,
            &self.load,
            &self.noise_variance,
        ];
        ensure!(axes.iter().any(|a| a.is_some()), "empty sweep grid");
        ensure!(
            axes.iter()
                .all(|a| a.as_ref().map_or(true, |v| !v.is_empty())),
            "empty sweep grid axis"
        );
        if self.load.is_some() {
            ensure!(
                !base.disturbances.is_empty(),
                "a load sweep needs a disturbance in the base config"
            );
        }
        let pick = |axis: &Option<Vec<f64>>| {
            axis.clone()
                .map_or(vec![None], |v| v.into_iter().map(Some).collect())
        };
        let mut out = Vec::new();
        for tf in pick(&self.t_final) {
            for dto in pick(&self.dt_obs) {
                for load in pick(&self.load) {
                    for nv in pick(&self.noise_variance) {
                        let mut cfg = base.clone();
                        cfg.t_final = tf.unwrap_or(cfg.t_final);
                        cfg.dt_obs = dto.unwrap_or(cfg.dt_obs);
                        cfg.noise_variance = nv.unwrap_or(cfg.noise_variance);
                        if let Some(l) = load {
                            cfg.disturbances.iter_mut().for_each(|ev| ev.load = l);
                        }
                        cfg.seed = derive_seed(base.seed, out.len() as u64);
                        cfg.validate()
                            .with_context(|| format!("sweep scenario {}", out.len()))?;
                        out.push(cfg);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub seed: u64,
    pub t_final: f64,
    pub dt: f64,
    pub dt_obs: f64,
    pub load: Option<f64>,
    pub noise_variance: f64,
    pub method: Method,
    pub summary: PosteriorSummary,
    pub extra: ExtraCost,
}

/// Synthesizes data and estimates for one config.
pub fn run_scenario(config: &ScenarioConfig) -> anyhow::Result<Estimate> {
    let exp = Experiment::new(config)?;
    let obs = exp.synthesize()?;
    estimate(&exp, &obs)
}

/// Runs every scenario of the grid in parallel.
pub fn sweep(base: &ScenarioConfig, grid: &SweepGrid) -> anyhow::Result<Vec<SweepRow>> {
    let configs = grid.expand(base)?;
    configs
        .par_iter()
        .enumerate()
        .map(|(index, cfg)| {
            let est = run_scenario(cfg).with_context(|| format!("sweep scenario {index}"))?;
            Ok(SweepRow {
                index,
                seed: cfg.seed,
                t_final: cfg.t_final,
                dt: cfg.dt,
                dt_obs: cfg.dt_obs,
                load: cfg.disturbances.first().map(|ev| ev.load),
                noise_variance: cfg.noise_variance,
                method: cfg.method,
                summary: est.summary,
                extra: est.extra,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_expansion_order_and_seeds() {
        let mut grid = SweepGrid::default();
        grid.set("load=4.25,7").unwrap();
        grid.set("noise_variance=1e-4, 1e-2").unwrap();
        let base = ScenarioConfig::default();
        let cfgs = grid.expand(&base).unwrap();
        assert_eq!(cfgs.len(), 4);
        let keys: Vec<(f64, f64)> = cfgs
            .iter()
            .map(|c| (c.disturbances[0].load, c.noise_variance))
            .collect();
        assert_eq!(keys, [(4.25, 1e-4), (4.25, 1e-2), (7.0, 1e-4), (7.0, 1e-2)]);
        for (i, c) in cfgs.iter().enumerate() {
            assert_eq!(c.seed, derive_seed(base.seed, i as u64));
            assert_eq!(c.t_final, base.t_final);
        }
    }

    #[test]
    fn empty_grids_are_rejected() {
        let base = ScenarioConfig::default();
        assert!(SweepGrid::default().expand(&base).is_err());
        let mut grid = SweepGrid::default();
        grid.set("t_final=").unwrap();
        assert!(grid.expand(&base).is_err());
        assert!(grid.set("speed=1").is_err());
        assert!(grid.set("load").is_err());
    }

    #[test]
    fn invalid_scenarios_in_grid_are_rejected() {
        let mut grid = SweepGrid::default();
        grid.set("dt_obs=0.05,0.015").unwrap();
        assert!(grid.expand(&ScenarioConfig::default()).is_err());
    }

    #[test]
    fn check_points_stay_in_range() {
        let prior = ScenarioConfig::default().prior().unwrap();
        let pts = check_points(&prior, 10, 0.2, 3);
        assert_eq!(pts.len(), 11);
        assert_eq!(pts[0], prior.mean);
        for p in &pts[1..] {
            for (x, mu) in p.iter().zip(&prior.mean) {
                assert!((x / mu - 1.0).abs() <= 0.2);
            }
        }
    }
}
