use std::path::PathBuf;

use anyhow::ensure;
use clap::{Args, Parser, Subcommand};
use gridinv::config::{resolve, Method, Overrides, ScenarioConfig};
use gridinv::io;
use gridinv::run::{self, Experiment, SweepGrid};

/// Bayesian inertia estimation for multi-machine power systems.
#[derive(Debug, Parser)]
#[command(name = "gridinv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML). Without it the reference experiment is used.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<ScenarioConfig> {
        resolve(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the scenario and write noise-free observables.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Inertias to simulate with (comma separated); defaults to the truth.
        #[arg(long, value_delimiter = ',')]
        at: Option<Vec<f64>>,
        #[arg(long)]
        observables: PathBuf,
        /// Also write the full state trajectory.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Simulate at the truth and add seeded measurement noise.
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// MAP point and Laplace posterior with the configured method.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Observation file; synthesized from the truth when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Posterior summary (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Iteration log (JSON Lines, adjoint method).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Reuse a saved surrogate instead of building one (pce method).
        #[arg(long)]
        surrogate: Option<PathBuf>,
        /// Save the surrogate (pce method).
        #[arg(long)]
        save_surrogate: Option<PathBuf>,
    },
    /// Estimate over a grid of scenarios and write one CSV row each.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid axis, e.g. `load=4.25,5.5,7`; axes are t_final, dt_obs,
        /// load and noise_variance. Repeat for more axes.
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the adjoint gradient with central finite differences.
    GradientCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Random points besides the prior mean.
        #[arg(long, default_value_t = 10)]
        points: usize,
        /// Relative half-width of the sampling box around the prior mean.
        #[arg(long, default_value_t = 0.2)]
        spread: f64,
        /// Relative finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Fail when any relative error exceeds this.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_data(
    exp: &Experiment,
    data: Option<&PathBuf>,
) -> anyhow::Result<gridinv_core::observation::ObservationSet> {
    match data {
        Some(path) => {
            let obs = io::read_observations(path, exp.config.dt)?;
            ensure!(
                obs.layout == exp.forward.layout,
                "{} does not match the scenario's observation times and buses",
                path.display()
            );
            Ok(obs)
        }
        None => exp.synthesize(),
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            common,
            at,
            observables,
            trajectory,
        } => {
            let cfg = common.resolve()?;
            let exp = Experiment::new(&cfg)?;
            let m = match at {
                Some(m) => m,
                None => cfg.truth()?.to_vec(),
            };
            let traj = exp.forward.simulate(&m)?;
            let f = gridinv_core::observation::observe(
                &exp.forward.system,
                &traj,
                &exp.forward.layout,
            )?;
            let obs =
                gridinv_core::observation::ObservationSet::new(exp.forward.layout.clone(), f)?;
            io::write_observations(&observables, &cfg, &obs, cfg.seed)?;
            if let Some(path) = &trajectory {
                io::write_trajectory(path, &cfg, &exp.forward.system, &traj)?;
            }
            println!(
                "{} steps to t = {} s, {} Newton iterations, {} restarts; {} observations at {} times",
                traj.steps(),
                traj.final_time(),
                traj.newton_iterations,
                traj.restarts.len(),
                obs.data.len(),
                obs.layout.times.len()
            );
        }
        Command::SynthData { common, out } => {
            let cfg = common.resolve()?;
            let exp = Experiment::new(&cfg)?;
            let obs = exp.synthesize()?;
            io::write_observations(&out, &cfg, &obs, cfg.seed)?;
            println!("wrote {} values to {}", obs.data.len(), out.display());
        }
        Command::Estimate {
            common,
            data,
            out,
            log,
            surrogate,
            save_surrogate,
        } => {
            let cfg = common.resolve()?;
            let exp = Experiment::new(&cfg)?;
            let obs = load_data(&exp, data.as_ref())?;
            let est = match cfg.method {
                Method::Adjoint => run::estimate_adjoint(&exp, &obs)?,
                Method::Pce => {
                    let s = surrogate.as_deref().map(io::read_surrogate).transpose()?;
                    run::estimate_pce(&exp, &obs, s)?
                }
            };
            if let Some(path) = &log {
                let mut w = io::JsonLines::create(path, &cfg)?;
                for rec in &est.history {
                    w.write(rec)?;
                }
                w.finish()?;
            }
            if let (Some(path), Some(s)) = (&save_surrogate, &est.surrogate) {
                io::write_surrogate(path, &cfg, s)?;
            }
            if let Some(path) = &out {
                io::write_json(path, &cfg, &est)?;
            }
            print!("{}", gridinv::report::render(&cfg, &est));
        }
        Command::Sweep { common, grid, out } => {
            let cfg = common.resolve()?;
            let mut g = SweepGrid::default();
            for spec in &grid {
                g.set(spec)?;
            }
            let rows = run::sweep(&cfg, &g)?;
            io::write_sweep(&out, &cfg, &rows)?;
            println!("wrote {} scenarios to {}", rows.len(), out.display());
        }
        Command::GradientCheck {
            common,
            data,
            points,
            spread,
            step,
            tol,
            out,
        } => {
            let cfg = common.resolve()?;
            let exp = Experiment::new(&cfg)?;
            let obs = load_data(&exp, data.as_ref())?;
            let pts = run::check_points(&exp.prior, points, spread, cfg.seed);
            let rows = run::gradient_check(&exp, &obs, &pts, step)?;
            if let Some(path) = &out {
                io::write_gradient_check(path, &cfg, &rows)?;
            }
            let worst = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
            println!(
                "{} points, {} components, worst relative error {worst:.3e}",
                pts.len(),
                rows.len()
            );
            ensure!(worst <= tol, "relative error {worst:e} exceeds {tol:e}");
        }
    }
    Ok(())
}
