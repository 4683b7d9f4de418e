//! Parameter-to-observable map and synthetic measurements.
//!
//! Observables are bus voltages sampled on the integration grid. The data
//! vector is time-major: for every observation time, for every observed bus,
//! two components (`Vre, Vim` in rectangular mode, `|V|, angle` in polar
//! mode).

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::math::{atan2, grid_index, sqrt};
use crate::model::PowerSystem;
use crate::rng::NormalStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinates {
    #[default]
    Rectangular,
    Polar,
}

/// Which grid points and buses are observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub times: Vec<f64>,
    /// Grid index of every entry of `times`.
    pub steps: Vec<usize>,
    /// 1-based bus ids.
    pub buses: Vec<usize>,
    pub coordinates: Coordinates,
}

impl ObservationLayout {
    /// Observations every `dt_obs` on `(0, t_final]`.
    pub fn uniform(
        t_final: f64,
        dt: f64,
        dt_obs: f64,
        buses: Vec<usize>,
        coordinates: Coordinates,
    ) -> Result<Self> {
        if !(dt_obs > 0.0) {
            return Err(Error::Invalid(format!(
                "observation interval must be positive, got {dt_obs}"
            )));
        }
        let stride = grid_index(dt_obs, dt).filter(|&s| s > 0).ok_or_else(|| {
            Error::Invalid(format!("dt_obs = {dt_obs} is not a multiple of dt = {dt}"))
        })?;
        let n_grid = crate::integrator::step_count(t_final, dt)?;
        let steps: Vec<usize> = (1..)
            .map(|j| j * stride)
            .take_while(|&k| k <= n_grid)
            .collect();
        if steps.is_empty() {
            return Err(Error::Invalid(format!(
                "no observation falls in (0, {t_final}]"
            )));
        }
        let times = steps.iter().map(|&k| k as f64 * dt).collect();
        Self::from_parts(times, steps, buses, coordinates)
    }

    fn from_parts(
        times: Vec<f64>,
        steps: Vec<usize>,
        buses: Vec<usize>,
        coordinates: Coordinates,
    ) -> Result<Self> {
        if buses.is_empty() || buses.contains(&0) {
            return Err(Error::Invalid(
                "observed buses must be non-empty 1-based ids".into(),
            ));
        }
        if steps.windows(2).any(|w| w[1] <= w[0]) || steps.first() == Some(&0) {
            return Err(Error::Invalid(
                "observation times must be increasing and positive".into(),
            ));
        }
        Ok(Self {
            times,
            steps,
            buses,
            coordinates,
        })
    }

    /// Layout for explicit times; every time must be a positive grid point.
    pub fn at_times(
        times: Vec<f64>,
        dt: f64,
        buses: Vec<usize>,
        coordinates: Coordinates,
    ) -> Result<Self> {
        let steps = times
            .iter()
            .map(|&t| grid_index(t, dt).ok_or(Error::OffGrid(t)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(times, steps, buses, coordinates)
    }

    /// Number of scalar observations `q`.
    pub fn len(&self) -> usize {
        2 * self.buses.len() * self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position of the first component for observation time `j`, bus slot `b`.
    pub fn offset(&self, j: usize, b: usize) -> usize {
        2 * (j * self.buses.len() + b)
    }
}

/// The two observed components of a bus voltage.
pub fn voltage_components(re: f64, im: f64, coords: Coordinates) -> [f64; 2] {
    match coords {
        Coordinates::Rectangular => [re, im],
        Coordinates::Polar => [sqrt(re * re + im * im), atan2(im, re)],
    }
}

/// Derivatives of [`voltage_components`] as `[[d0/dre, d0/dim], [d1/dre, d1/dim]]`.
pub fn voltage_components_jac(re: f64, im: f64, coords: Coordinates) -> [[f64; 2]; 2] {
    match coords {
        Coordinates::Rectangular => [[1.0, 0.0], [0.0, 1.0]],
        Coordinates::Polar => {
            let n2 = re * re + im * im;
            let n = sqrt(n2);
            [[re / n, im / n], [-im / n2, re / n2]]
        }
    }
}

/// Extracts `f(m)` from a trajectory. Pure extraction, no interpolation.
pub fn observe(
    sys: &PowerSystem,
    traj: &Trajectory,
    layout: &ObservationLayout,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(layout.len());
    for (&t, &k) in layout.times.iter().zip(&layout.steps) {
        if k >= traj.states.len() || traj.index_of(t) != Some(k) {
            return Err(Error::OffGrid(t));
        }
        let u = &traj.states[k];
        for &bus in &layout.buses {
            if bus > sys.n_bus() {
                return Err(Error::Invalid(format!("bus {bus} does not exist")));
            }
            let vo = sys.voltage_offset(bus);
            out.extend_from_slice(&voltage_components(u[vo], u[vo + 1], layout.coordinates));
        }
    }
    Ok(out)
}

/// Diagonal measurement noise covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub variances: Vec<f64>,
}

impl NoiseModel {
    pub fn new(variances: Vec<f64>) -> Result<Self> {
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Invalid("noise variances must be positive".into()));
        }
        Ok(Self { variances })
    }

    pub fn uniform(q: usize, variance: f64) -> Result<Self> {
        Self::new(alloc::vec![variance; q])
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    /// The same model with every variance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.variances.iter().map(|v| v * factor).collect())
    }
}

/// Measured data `d` together with its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub layout: ObservationLayout,
    pub data: Vec<f64>,
}

impl ObservationSet {
    pub fn new(layout: ObservationLayout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::Dimension {
                what: "observation data",
                expected: layout.len(),
                got: data.len(),
            });
        }
        Ok(Self { layout, data })
    }
}

/// `d = f + eta`, `eta_i ~ N(0, variance_i)` drawn from the seeded stream in
/// data-vector order.
pub fn add_noise(clean: &[f64], noise: &NoiseModel, seed: u64) -> Result<Vec<f64>> {
    if clean.len() != noise.len() {
        return Err(Error::Dimension {
            what: "noise model",
            expected: clean.len(),
            got: noise.len(),
        });
    }
    let mut stream = NormalStream::new(seed);
    Ok(clean
        .iter()
        .zip(&noise.variances)
        .map(|(f, v)| f + sqrt(*v) * stream.normal())
        .collect())
}
