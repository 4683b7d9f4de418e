//! A measurement experiment: horizon, step, disturbance and sampling.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{self, NewtonOptions, Trajectory};
use crate::model::{DisturbanceEvent, LoadSchedule, PowerSystem, SystemData};
use crate::observation::{self, Coordinates, NoiseModel, ObservationLayout, ObservationSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub t_final: f64,
    pub dt: f64,
    pub dt_obs: f64,
    pub events: Vec<DisturbanceEvent>,
    /// Observed buses (1-based). Empty means all buses.
    #[serde(default)]
    pub buses: Vec<usize>,
    #[serde(default)]
    pub coordinates: Coordinates,
}

impl Scenario {
    /// Bus-5 load step to `load` on `[0.1, 0.3)`.
    pub fn load_step(t_final: f64, dt: f64, dt_obs: f64, load: f64) -> Self {
        Self {
            t_final,
            dt,
            dt_obs,
            events: alloc::vec![DisturbanceEvent {
                bus: 5,
                start: 0.1,
                duration: 0.2,
                load
            }],
            buses: Vec::new(),
            coordinates: Coordinates::Rectangular,
        }
    }

    /// No disturbance at all: the system stays at equilibrium.
    pub fn quiet(t_final: f64, dt: f64, dt_obs: f64) -> Self {
        Self {
            events: Vec::new(),
            ..Self::load_step(t_final, dt, dt_obs, 0.0)
        }
    }
}

/// Parameter-to-observable map `m -> f(m)` for one scenario.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    pub system: PowerSystem,
    pub u0: Vec<f64>,
    pub schedule: LoadSchedule,
    pub layout: ObservationLayout,
    pub t_final: f64,
    pub dt: f64,
    pub newton: NewtonOptions,
}

impl ForwardModel {
    pub fn new(data: &SystemData, scenario: &Scenario) -> Result<Self> {
        let (system, u0) = PowerSystem::initialize(data)?;
        let schedule = system.schedule(scenario.events.clone())?;
        for ev in &scenario.events {
            ev.check_alignment(scenario.dt)?;
            if ev.end() > scenario.t_final + 1e-9 * scenario.dt {
                return Err(Error::Invalid(alloc::format!(
                    "disturbance ends at {} s, after the horizon {} s",
                    ev.end(),
                    scenario.t_final
                )));
            }
        }
        let buses = if scenario.buses.is_empty() {
            (1..=system.n_bus()).collect()
        } else {
            scenario.buses.clone()
        };
        let layout = ObservationLayout::uniform(
            scenario.t_final,
            scenario.dt,
            scenario.dt_obs,
            buses,
            scenario.coordinates,
        )?;
        Ok(Self {
            system,
            u0,
            schedule,
            layout,
            t_final: scenario.t_final,
            dt: scenario.dt,
            newton: NewtonOptions::default(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.system.n_gen()
    }

    pub fn simulate(&self, m: &[f64]) -> Result<Trajectory> {
        integrator::simulate(
            &self.system,
            &self.u0,
            m,
            self.t_final,
            self.dt,
            &self.schedule,
            &self.newton,
        )
    }

    /// `f(m)`.
    pub fn observe(&self, m: &[f64]) -> Result<Vec<f64>> {
        let traj = self.simulate(m)?;
        observation::observe(&self.system, &traj, &self.layout)
    }

    /// Synthetic data `d = f(m_true) + eta`.
    pub fn synthesize(
        &self,
        m_true: &[f64],
        noise: &NoiseModel,
        seed: u64,
    ) -> Result<ObservationSet> {
        let clean = self.observe(m_true)?;
        let data = observation::add_noise(&clean, noise, seed)?;
        ObservationSet::new(self.layout.clone(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{wscc9, M_TRUE};

    #[test]
    fn synthesize_is_reproducible_and_centered() {
        let fwd = ForwardModel::new(&wscc9(), &Scenario::load_step(1.0, 0.01, 0.05, 5.5)).unwrap();
        let q = fwd.layout.len();
        assert_eq!(q, 2 * 9 * 20);
        let noise = NoiseModel::uniform(q, 1e-4).unwrap();
        let a = fwd.synthesize(&M_TRUE, &noise, 1).unwrap();
        let b = fwd.synthesize(&M_TRUE, &noise, 1).unwrap();
        assert_eq!(a, b);
        let tiny = NoiseModel::uniform(q, 1e-30).unwrap();
        let clean = fwd.observe(&M_TRUE).unwrap();
        let d = fwd.synthesize(&M_TRUE, &tiny, 5).unwrap();
        assert!(d
            .data
            .iter()
            .zip(&clean)
            .all(|(x, y)| (x - y).abs() <= 1e-10));
    }

    #[test]
    fn horizon_must_cover_disturbance() {
        assert!(ForwardModel::new(&wscc9(), &Scenario::load_step(0.2, 0.01, 0.05, 5.5)).is_err());
    }
}
