//! Human-readable estimation report in the layout of the horizon and
//! frequency study tables.

use std::fmt::Write;

use crate::config::{Method, ScenarioConfig};
use crate::run::Estimate;

pub fn render(config: &ScenarioConfig, est: &Estimate) -> String {
    let s = &est.summary;
    let n = s.map.len();
    let mut out = String::new();
    let load = config.disturbances.first().map_or_else(
        || "none".to_owned(),
        |ev| format!("{} at bus {}", ev.load, ev.bus),
    );
    let _ = writeln!(
        out,
        "t_f = {} s, dt = {} s, dt_obs = {} s, load {load}, noise variance {:e}, method {}",
        config.t_final,
        config.dt,
        config.dt_obs,
        config.noise_variance,
        match est.method {
            Method::Adjoint => "adjoint".to_owned(),
            Method::Pce => format!("pce (order {}, {:?})", config.pce.order, config.pce.rule),
        }
    );
    let mut head = format!("{:>6}", "t_f");
    for i in 1..=n {
        let _ = write!(head, " {:>9}", format!("m{i}"));
    }
    let _ = write!(head, " {:>6} {:>10} {:>10}", "#iter", "tau", "Err");
    for i in 1..=n {
        let _ = write!(head, " {:>7}", format!("p{i}"));
    }
    let _ = writeln!(out, "{head}");
    let mut row = format!("{:>6}", config.t_final);
    for m in &s.map {
        let _ = write!(row, " {m:>9.4}");
    }
    let _ = write!(row, " {:>6}", s.stats.iterations);
    match &s.metrics {
        Some(m) => {
            let _ = write!(row, " {:>10.3e} {:>10.3e}", m.tau, m.err);
            for p in &m.cns {
                let _ = write!(row, " {p:>7.4}");
            }
        }
        None => {
            let _ = write!(row, " {:>10} {:>10}", "-", "-");
        }
    }
    let _ = writeln!(out, "{row}");
    let sd: Vec<String> = s.std_devs.iter().map(|v| format!("{v:.4}")).collect();
    let _ = writeln!(
        out,
        "posterior std devs: [{}], trace {:.4e}",
        sd.join(", "),
        s.trace()
    );
    match est.method {
        Method::Adjoint => {
            let _ = writeln!(
                out,
                "MAP: {} iterations, {} forward + {} adjoint solves, |grad| {:.2e}, {}; Laplace Hessian: {} gradients",
                s.stats.iterations,
                s.stats.forward_solves,
                s.stats.adjoint_solves,
                s.stats.grad_norm,
                if s.stats.converged { "converged" } else { "NOT converged" },
                est.extra.laplace_gradients
            );
        }
        Method::Pce => {
            let _ = writeln!(
                out,
                "surrogate: {} forward simulations; surrogate MAP {}",
                est.extra.surrogate_simulations,
                if s.stats.converged {
                    "converged"
                } else {
                    "NOT converged"
                }
            );
        }
    }
    out
}
