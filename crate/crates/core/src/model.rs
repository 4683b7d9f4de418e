//! Multi-machine power-system DAE.
//!
//! Each machine is a two-axis synchronous generator with an IEEE Type-I
//! exciter: seven differential states `(delta, omega, E'q, E'd, Efd, Rf, Vr)`
//! and two algebraic stator currents `(Id, Iq)`. Every bus contributes the
//! rectangular voltage components `(Vre, Vim)` and the two real current
//! balance equations. For the WSCC 9-bus case this yields 21 differential and
//! 24 algebraic variables.
//!
//! State layout (`n_gen` machines, `n_bus` buses):
//!
//! ```text
//! [ x_0 .. x_{n_gen-1} | Id_0 Iq_0 .. | Vre_1 Vim_1 .. Vre_nbus Vim_nbus ]
//!   7 per machine        2 per machine  2 per bus
//! ```
//!
//! Residual rows follow the same ordering. The inertia constants `H` are
//! not part of [`SystemData`]: they are the parameter vector `m` and enter
//! only the speed equations.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dae::{Dae, Schedule};
use crate::error::{Error, Result};
use crate::math::{cos, exp, grid_index, sin, sqrt};
use crate::powerflow::{self, PowerFlowSolution};

/// Differential states per machine.
pub const STATES_PER_MACHINE: usize = 7;

/// Offsets of the per-machine differential states.
pub mod state {
    pub const DELTA: usize = 0;
    pub const OMEGA: usize = 1;
    pub const EQ_PRIME: usize = 2;
    pub const ED_PRIME: usize = 3;
    pub const EFD: usize = 4;
    pub const RF: usize = 5;
    pub const VR: usize = 6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusData {
    pub id: usize,
    pub kind: BusKind,
    /// Voltage set-point (slack and PV buses), pu.
    #[serde(default = "one")]
    pub v: f64,
    #[serde(default)]
    pub p_gen: f64,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
}

fn one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchData {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    #[serde(default)]
    pub b: f64,
}

/// Constants of one machine and its exciter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineData {
    pub bus: usize,
    #[serde(default)]
    pub rs: f64,
    pub xd: f64,
    pub xd_prime: f64,
    pub xq: f64,
    pub xq_prime: f64,
    pub td0_prime: f64,
    pub tq0_prime: f64,
    pub ka: f64,
    pub ta: f64,
    pub ke: f64,
    pub te: f64,
    pub kf: f64,
    pub tf: f64,
    #[serde(default)]
    pub sat_a: f64,
    #[serde(default)]
    pub sat_b: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadModel {
    /// `I = conj(S / V)` with `S` the scheduled demand.
    ConstantPower,
    /// Admittance fixed from the scheduled demand at the initial voltage.
    ConstantImpedance,
}

/// Network and machine data as stored in the system data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemData {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    pub frequency_hz: f64,
    pub load_model: LoadModel,
    /// Exciter saturation on/off.
    #[serde(default = "default_true")]
    pub saturation: bool,
    #[serde(rename = "bus")]
    pub buses: Vec<BusData>,
    #[serde(rename = "branch")]
    pub branches: Vec<BranchData>,
    #[serde(rename = "generator")]
    pub generators: Vec<MachineData>,
}

impl SystemData {
    pub fn omega_s(&self) -> f64 {
        2.0 * core::f64::consts::PI * self.frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.buses.len();
        for (k, bus) in self.buses.iter().enumerate() {
            if bus.id != k + 1 {
                return Err(invalid(format!("bus ids must be 1..={n} in order")));
            }
        }
        if self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count()
            != 1
        {
            return Err(invalid("exactly one slack bus is required".into()));
        }
        for br in &self.branches {
            if br.from == 0 || br.from > n || br.to == 0 || br.to > n || br.from == br.to {
                return Err(invalid(format!(
                    "branch {}-{} references an unknown bus",
                    br.from, br.to
                )));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(invalid(format!(
                    "branch {}-{} has zero impedance",
                    br.from, br.to
                )));
            }
        }
        if self.frequency_hz <= 0.0 {
            return Err(invalid("frequency must be positive".into()));
        }
        for (i, g) in self.generators.iter().enumerate() {
            let bus = self
                .buses
                .get(g.bus.wrapping_sub(1))
                .ok_or_else(|| invalid(format!("generator {i} sits on unknown bus {}", g.bus)))?;
            if bus.kind == BusKind::Pq {
                return Err(invalid(format!("generator {i} sits on PQ bus {}", g.bus)));
            }
            let times = [g.td0_prime, g.tq0_prime, g.ta, g.te, g.tf];
            if times.iter().any(|&t| !(t > 0.0)) {
                return Err(invalid(format!(
                    "generator {i}: time constants must be positive"
                )));
            }
            if !(g.xd_prime > 0.0 && g.xd >= g.xd_prime && g.xq_prime > 0.0 && g.xq >= g.xq_prime) {
                return Err(invalid(format!(
                    "generator {i}: reactances violate X >= X' > 0"
                )));
            }
        }
        let gen_buses = self.buses.iter().filter(|b| b.kind != BusKind::Pq).count();
        if gen_buses != self.generators.len() {
            return Err(invalid(
                "every slack/PV bus needs exactly one generator".into(),
            ));
        }
        Ok(())
    }

    /// Bus admittance matrix as `(G, B)`.
    pub fn admittance(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.buses.len();
        let mut g = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, n);
        for br in &self.branches {
            let (i, j) = (br.from - 1, br.to - 1);
            let z2 = br.r * br.r + br.x * br.x;
            let (gs, bs) = (br.r / z2, -br.x / z2);
            g[(i, i)] += gs;
            g[(j, j)] += gs;
            g[(i, j)] -= gs;
            g[(j, i)] -= gs;
            b[(i, i)] += bs + 0.5 * br.b;
            b[(j, j)] += bs + 0.5 * br.b;
            b[(i, j)] -= bs;
            b[(j, i)] -= bs;
        }
        (g, b)
    }
}

fn invalid(msg: String) -> Error {
    Error::Invalid(msg)
}

/// Inertia constants `H` (s), one per machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(invalid(format!(
                "inertias must be positive and finite: {values:?}"
            )));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Load step at one bus: the active demand is replaced by `load` during
/// `[start, start + duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEvent {
    pub bus: usize,
    pub start: f64,
    pub duration: f64,
    pub load: f64,
}

impl DisturbanceEvent {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn validate(&self, n_bus: usize) -> Result<()> {
        if self.bus == 0 || self.bus > n_bus {
            return Err(invalid(format!(
                "disturbance bus {} out of range",
                self.bus
            )));
        }
        if !(self.start >= 0.0) || !(self.duration > 0.0) {
            return Err(invalid(
                "disturbance needs start >= 0 and duration > 0".into(),
            ));
        }
        Ok(())
    }

    /// Rejects boundaries that do not fall on the `dt` grid.
    pub fn check_alignment(&self, dt: f64) -> Result<()> {
        for time in [self.start, self.end()] {
            if grid_index(time, dt).is_none() {
                return Err(Error::EventMisaligned { time, dt });
            }
        }
        Ok(())
    }
}

/// Slack used when comparing times against event boundaries.
const TIME_EPS: f64 = 1e-9;

/// Active bus demand over time: nominal values overridden by events.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSchedule {
    nominal: Vec<f64>,
    events: Vec<DisturbanceEvent>,
}

impl LoadSchedule {
    pub fn new(nominal: Vec<f64>, events: Vec<DisturbanceEvent>) -> Result<Self> {
        for ev in &events {
            ev.validate(nominal.len())?;
        }
        Ok(Self { nominal, events })
    }

    pub fn events(&self) -> &[DisturbanceEvent] {
        &self.events
    }
}

impl Schedule<Vec<f64>> for LoadSchedule {
    fn mode_at(&self, t: f64) -> Vec<f64> {
        let mut p = self.nominal.clone();
        for ev in &self.events {
            if t >= ev.start - TIME_EPS && t < ev.end() - TIME_EPS {
                p[ev.bus - 1] = ev.load;
            }
        }
        p
    }

    fn switch_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .events
            .iter()
            .flat_map(|e| [e.start, e.end()])
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        times
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Machine {
    data: MachineData,
    bus: usize,
    /// Mechanical torque, fixed at the initial operating point.
    tm: f64,
    /// Exciter voltage reference, fixed at the initial operating point.
    vref: f64,
}

/// The assembled DAE of a multi-machine system around its initial
/// operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSystem {
    machines: Vec<Machine>,
    g: DMatrix<f64>,
    b: DMatrix<f64>,
    load_p: Vec<f64>,
    load_q: Vec<f64>,
    /// |V|^2 at the initial point, used by the constant-impedance model.
    v0_sq: Vec<f64>,
    load_model: LoadModel,
    saturation: bool,
    omega_s: f64,
}

impl PowerSystem {
    /// Solves the power flow, derives a consistent steady state and freezes
    /// the torque and voltage set-points. Returns the system and `u0`.
    ///
    /// The result does not depend on the inertias: they scale a derivative
    /// that is zero at equilibrium.
    pub fn initialize(data: &SystemData) -> Result<(Self, Vec<f64>)> {
        data.validate()?;
        let pf = powerflow::solve(data)?;
        Self::from_power_flow(data, &pf)
    }

    fn from_power_flow(data: &SystemData, pf: &PowerFlowSolution) -> Result<(Self, Vec<f64>)> {
        let (g, b) = data.admittance();
        let n_bus = data.buses.len();
        let n_gen = data.generators.len();
        let mut sys = PowerSystem {
            machines: Vec::with_capacity(n_gen),
            g,
            b,
            load_p: data.buses.iter().map(|b| b.p_load).collect(),
            load_q: data.buses.iter().map(|b| b.q_load).collect(),
            v0_sq: pf.vm.iter().map(|v| v * v).collect(),
            load_model: data.load_model,
            saturation: data.saturation,
            omega_s: data.omega_s(),
        };
        let mut u0 = vec![0.0; STATES_PER_MACHINE * n_gen + 2 * n_gen + 2 * n_bus];

        let net0 = (STATES_PER_MACHINE + 2) * n_gen;
        for k in 0..n_bus {
            let vo = net0 + 2 * k;
            u0[vo] = pf.vm[k] * cos(pf.va[k]);
            u0[vo + 1] = pf.vm[k] * sin(pf.va[k]);
        }

        for (i, md) in data.generators.iter().enumerate() {
            let k = md.bus - 1;
            let (vre, vim) = (u0[net0 + 2 * k], u0[net0 + 2 * k + 1]);
            let (p, q) = (
                pf.p_inj[k] + data.buses[k].p_load,
                pf.q_inj[k] + data.buses[k].q_load,
            );
            // I = conj(S / V)
            let v2 = vre * vre + vim * vim;
            let ire = (p * vre + q * vim) / v2;
            let iim = (p * vim - q * vre) / v2;
            // Rotor angle from E = V + (rs + j xq) I.
            let ere = vre + md.rs * ire - md.xq * iim;
            let eim = vim + md.rs * iim + md.xq * ire;
            let delta = crate::math::atan2(eim, ere);
            let (s, c) = (sin(delta), cos(delta));
            let id = ire * s - iim * c;
            let iq = ire * c + iim * s;
            let vd = vre * s - vim * c;
            let vq = vre * c + vim * s;
            let ed = vd + md.rs * id - md.xq_prime * iq;
            let eq = vq + md.rs * iq + md.xd_prime * id;
            let efd = eq + (md.xd - md.xd_prime) * id;
            let tm = ed * id + eq * iq + (md.xq_prime - md.xd_prime) * id * iq;
            let sat = if data.saturation {
                md.sat_a * exp(md.sat_b * efd)
            } else {
                0.0
            };
            let vr = md.ke * efd + sat;
            let rf = md.kf / md.tf * efd;
            let vref = sqrt(v2) + vr / md.ka;

            let xo = STATES_PER_MACHINE * i;
            u0[xo + state::DELTA] = delta;
            u0[xo + state::OMEGA] = sys.omega_s;
            u0[xo + state::EQ_PRIME] = eq;
            u0[xo + state::ED_PRIME] = ed;
            u0[xo + state::EFD] = efd;
            u0[xo + state::RF] = rf;
            u0[xo + state::VR] = vr;
            let io = STATES_PER_MACHINE * n_gen + 2 * i;
            u0[io] = id;
            u0[io + 1] = iq;

            sys.machines.push(Machine {
                data: md.clone(),
                bus: k,
                tm,
                vref,
            });
        }
        Ok((sys, u0))
    }

    pub fn n_gen(&self) -> usize {
        self.machines.len()
    }

    pub fn n_bus(&self) -> usize {
        self.load_p.len()
    }

    pub fn n_differential(&self) -> usize {
        STATES_PER_MACHINE * self.n_gen()
    }

    pub fn omega_s(&self) -> f64 {
        self.omega_s
    }

    /// Nominal active demand per bus (the schedule baseline).
    pub fn nominal_load(&self) -> &[f64] {
        &self.load_p
    }

    /// A schedule with the given events on top of the nominal demand.
    pub fn schedule(&self, events: Vec<DisturbanceEvent>) -> Result<LoadSchedule> {
        LoadSchedule::new(self.load_p.clone(), events)
    }

    /// Index of `Vre` for a 1-based bus id; `Vim` follows.
    pub fn voltage_offset(&self, bus: usize) -> usize {
        STATES_PER_MACHINE * self.n_gen() + 2 * self.n_gen() + 2 * (bus - 1)
    }

    /// Index of machine `i`'s `Id`; `Iq` follows.
    pub fn current_offset(&self, i: usize) -> usize {
        STATES_PER_MACHINE * self.n_gen() + 2 * i
    }

    pub fn machine_bus(&self, i: usize) -> usize {
        self.machines[i].bus + 1
    }

    pub fn mechanical_torque(&self, i: usize) -> f64 {
        self.machines[i].tm
    }

    pub fn damping(&self, i: usize) -> f64 {
        self.machines[i].data.damping
    }

    /// `M u' - F(t, u; m)` with the load active at `t`.
    pub fn residual(
        &self,
        t: f64,
        u: &[f64],
        udot: &[f64],
        m: &[f64],
        schedule: &LoadSchedule,
    ) -> Result<Vec<f64>> {
        self.check_inputs(u, m)?;
        check_len("state derivative", udot, self.dim())?;
        if udot.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state derivative"));
        }
        let mut f = vec![0.0; self.dim()];
        self.rhs(u, m, &schedule.mode_at(t), &mut f);
        for (i, fi) in f.iter_mut().enumerate() {
            let mass = if self.is_differential(i) {
                udot[i]
            } else {
                0.0
            };
            *fi = mass - *fi;
        }
        Ok(f)
    }

    /// Exact `(F_u, F_m)` with the load active at `t`.
    pub fn jacobians(
        &self,
        t: f64,
        u: &[f64],
        m: &[f64],
        schedule: &LoadSchedule,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_inputs(u, m)?;
        let mode = schedule.mode_at(t);
        Ok((self.jac_u(u, m, &mode), self.jac_m(u, m, &mode)))
    }

    pub fn check_inputs(&self, u: &[f64], m: &[f64]) -> Result<()> {
        check_len("state", u, self.dim())?;
        check_len("parameter vector", m, self.n_gen())?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(())
    }

    /// Bus voltage magnitude and angle (rad) for a 1-based bus id.
    pub fn bus_polar(&self, u: &[f64], bus: usize) -> (f64, f64) {
        let vo = self.voltage_offset(bus);
        let (re, im) = (u[vo], u[vo + 1]);
        (sqrt(re * re + im * im), crate::math::atan2(im, re))
    }

    fn load_current(&self, k: usize, p: f64, vre: f64, vim: f64) -> (f64, f64) {
        let q = self.load_q[k];
        match self.load_model {
            LoadModel::ConstantPower => {
                let n2 = vre * vre + vim * vim;
                ((p * vre + q * vim) / n2, (p * vim - q * vre) / n2)
            }
            LoadModel::ConstantImpedance => {
                let gl = p / self.v0_sq[k];
                let bl = -q / self.v0_sq[k];
                (gl * vre - bl * vim, gl * vim + bl * vre)
            }
        }
    }

    /// `d(Ire, Iim)/d(Vre, Vim)` as `[[dre/dvr, dre/dvi], [dim/dvr, dim/dvi]]`.
    fn load_current_jac(&self, k: usize, p: f64, vre: f64, vim: f64) -> [[f64; 2]; 2] {
        let q = self.load_q[k];
        match self.load_model {
            LoadModel::ConstantPower => {
                let n2 = vre * vre + vim * vim;
                let ire = (p * vre + q * vim) / n2;
                let iim = (p * vim - q * vre) / n2;
                [
                    [p / n2 - 2.0 * vre * ire / n2, q / n2 - 2.0 * vim * ire / n2],
                    [
                        -q / n2 - 2.0 * vre * iim / n2,
                        p / n2 - 2.0 * vim * iim / n2,
                    ],
                ]
            }
            LoadModel::ConstantImpedance => {
                let gl = p / self.v0_sq[k];
                let bl = -q / self.v0_sq[k];
                [[gl, -bl], [bl, gl]]
            }
        }
    }

    fn saturation(&self, md: &MachineData, efd: f64) -> (f64, f64) {
        if self.saturation {
            let s = md.sat_a * exp(md.sat_b * efd);
            (s, md.sat_b * s)
        } else {
            (0.0, 0.0)
        }
    }
}

fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Dimension {
            what,
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

impl Dae for PowerSystem {
    type Mode = Vec<f64>;

    fn dim(&self) -> usize {
        (STATES_PER_MACHINE + 2) * self.n_gen() + 2 * self.n_bus()
    }

    fn n_params(&self) -> usize {
        self.n_gen()
    }

    fn is_differential(&self, i: usize) -> bool {
        i < self.n_differential()
    }

    fn rhs(&self, u: &[f64], m: &[f64], load_p: &Vec<f64>, f: &mut [f64]) {
        let n_bus = self.n_bus();
        let ws = self.omega_s;
        let net0 = self.voltage_offset(1);

        // Network: -Y V - I_load, generator injections added below.
        for k in 0..n_bus {
            let (mut re, mut im) = (0.0, 0.0);
            for j in 0..n_bus {
                let (gkj, bkj) = (self.g[(k, j)], self.b[(k, j)]);
                if gkj == 0.0 && bkj == 0.0 {
                    continue;
                }
                let (vr, vi) = (u[net0 + 2 * j], u[net0 + 2 * j + 1]);
                re += gkj * vr - bkj * vi;
                im += gkj * vi + bkj * vr;
            }
            let (vr, vi) = (u[net0 + 2 * k], u[net0 + 2 * k + 1]);
            let (lre, lim) = if load_p[k] != 0.0 || self.load_q[k] != 0.0 {
                self.load_current(k, load_p[k], vr, vi)
            } else {
                (0.0, 0.0)
            };
            f[net0 + 2 * k] = -re - lre;
            f[net0 + 2 * k + 1] = -im - lim;
        }

        for (i, mach) in self.machines.iter().enumerate() {
            let md = &mach.data;
            let xo = STATES_PER_MACHINE * i;
            let io = self.current_offset(i);
            let vo = net0 + 2 * mach.bus;
            let delta = u[xo + state::DELTA];
            let omega = u[xo + state::OMEGA];
            let eq = u[xo + state::EQ_PRIME];
            let ed = u[xo + state::ED_PRIME];
            let efd = u[xo + state::EFD];
            let rf = u[xo + state::RF];
            let vr_exc = u[xo + state::VR];
            let (id, iq) = (u[io], u[io + 1]);
            let (vre, vim) = (u[vo], u[vo + 1]);
            let (s, c) = (sin(delta), cos(delta));
            let vd = vre * s - vim * c;
            let vq = vre * c + vim * s;
            let te = ed * id + eq * iq + (md.xq_prime - md.xd_prime) * id * iq;
            let vm = sqrt(vre * vre + vim * vim);
            let (sat, _) = self.saturation(md, efd);
            let h = m[i];

            f[xo + state::DELTA] = omega - ws;
            f[xo + state::OMEGA] = ws / (2.0 * h) * (mach.tm - te - md.damping * (omega - ws) / ws);
            f[xo + state::EQ_PRIME] = (-eq - (md.xd - md.xd_prime) * id + efd) / md.td0_prime;
            f[xo + state::ED_PRIME] = (-ed + (md.xq - md.xq_prime) * iq) / md.tq0_prime;
            f[xo + state::EFD] = (-md.ke * efd - sat + vr_exc) / md.te;
            f[xo + state::RF] = (-rf + md.kf / md.tf * efd) / md.tf;
            f[xo + state::VR] = (-vr_exc + md.ka * rf - md.ka * md.kf / md.tf * efd
                + md.ka * (mach.vref - vm))
                / md.ta;

            f[io] = ed - vd - md.rs * id + md.xq_prime * iq;
            f[io + 1] = eq - vq - md.rs * iq - md.xd_prime * id;

            f[vo] += id * s + iq * c;
            f[vo + 1] += -id * c + iq * s;
        }
    }

    fn jac_u(&self, u: &[f64], m: &[f64], load_p: &Vec<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let n_bus = self.n_bus();
        let ws = self.omega_s;
        let net0 = self.voltage_offset(1);
        let mut jac = DMatrix::zeros(n, n);

        for k in 0..n_bus {
            let (rre, rim) = (net0 + 2 * k, net0 + 2 * k + 1);
            for j in 0..n_bus {
                let (gkj, bkj) = (self.g[(k, j)], self.b[(k, j)]);
                let (cre, cim) = (net0 + 2 * j, net0 + 2 * j + 1);
                jac[(rre, cre)] -= gkj;
                jac[(rre, cim)] += bkj;
                jac[(rim, cre)] -= bkj;
                jac[(rim, cim)] -= gkj;
            }
            if load_p[k] != 0.0 || self.load_q[k] != 0.0 {
                let (vr, vi) = (u[rre], u[rim]);
                let dl = self.load_current_jac(k, load_p[k], vr, vi);
                jac[(rre, rre)] -= dl[0][0];
                jac[(rre, rim)] -= dl[0][1];
                jac[(rim, rre)] -= dl[1][0];
                jac[(rim, rim)] -= dl[1][1];
            }
        }

        for (i, mach) in self.machines.iter().enumerate() {
            let md = &mach.data;
            let xo = STATES_PER_MACHINE * i;
            let io = self.current_offset(i);
            let vo = net0 + 2 * mach.bus;
            let (d, w, eq, ed, efd, rf, vr) = (
                xo + state::DELTA,
                xo + state::OMEGA,
                xo + state::EQ_PRIME,
                xo + state::ED_PRIME,
                xo + state::EFD,
                xo + state::RF,
                xo + state::VR,
            );
            let (cid, ciq, cvre, cvim) = (io, io + 1, vo, vo + 1);
            let delta = u[d];
            let (id, iq) = (u[cid], u[ciq]);
            let (vre, vim) = (u[cvre], u[cvim]);
            let (s, c) = (sin(delta), cos(delta));
            let vd = vre * s - vim * c;
            let vq = vre * c + vim * s;
            let vm = sqrt(vre * vre + vim * vim);
            let (_, dsat) = self.saturation(md, u[efd]);
            let kh = ws / (2.0 * m[i]);
            let dxq = md.xq_prime - md.xd_prime;

            jac[(d, w)] = 1.0;

            jac[(w, w)] = -kh * md.damping / ws;
            jac[(w, eq)] = -kh * iq;
            jac[(w, ed)] = -kh * id;
            jac[(w, cid)] = -kh * (u[ed] + dxq * iq);
            jac[(w, ciq)] = -kh * (u[eq] + dxq * id);

            jac[(eq, eq)] = -1.0 / md.td0_prime;
            jac[(eq, cid)] = -(md.xd - md.xd_prime) / md.td0_prime;
            jac[(eq, efd)] = 1.0 / md.td0_prime;

            jac[(ed, ed)] = -1.0 / md.tq0_prime;
            jac[(ed, ciq)] = (md.xq - md.xq_prime) / md.tq0_prime;

            jac[(efd, efd)] = (-md.ke - dsat) / md.te;
            jac[(efd, vr)] = 1.0 / md.te;

            jac[(rf, rf)] = -1.0 / md.tf;
            jac[(rf, efd)] = md.kf / (md.tf * md.tf);

            jac[(vr, vr)] = -1.0 / md.ta;
            jac[(vr, rf)] = md.ka / md.ta;
            jac[(vr, efd)] = -md.ka * md.kf / (md.tf * md.ta);
            jac[(vr, cvre)] = -md.ka / md.ta * vre / vm;
            jac[(vr, cvim)] = -md.ka / md.ta * vim / vm;

            // Ed' - Vd - rs Id + X'q Iq
            jac[(cid, ed)] = 1.0;
            jac[(cid, cid)] = -md.rs;
            jac[(cid, ciq)] = md.xq_prime;
            jac[(cid, d)] = -vq;
            jac[(cid, cvre)] = -s;
            jac[(cid, cvim)] = c;

            // Eq' - Vq - rs Iq - X'd Id
            jac[(ciq, eq)] = 1.0;
            jac[(ciq, ciq)] = -md.rs;
            jac[(ciq, cid)] = -md.xd_prime;
            jac[(ciq, d)] = vd;
            jac[(ciq, cvre)] = -c;
            jac[(ciq, cvim)] = -s;

            // Generator current injection.
            jac[(cvre, cid)] += s;
            jac[(cvre, ciq)] += c;
            jac[(cvre, d)] += id * c - iq * s;
            jac[(cvim, cid)] += -c;
            jac[(cvim, ciq)] += s;
            jac[(cvim, d)] += id * s + iq * c;
        }
        jac
    }

    fn jac_m(&self, u: &[f64], m: &[f64], _load_p: &Vec<f64>) -> DMatrix<f64> {
        let ws = self.omega_s;
        let mut jac = DMatrix::zeros(self.dim(), self.n_gen());
        for (i, mach) in self.machines.iter().enumerate() {
            let md = &mach.data;
            let xo = STATES_PER_MACHINE * i;
            let io = self.current_offset(i);
            let (id, iq) = (u[io], u[io + 1]);
            let (eq, ed) = (u[xo + state::EQ_PRIME], u[xo + state::ED_PRIME]);
            let omega = u[xo + state::OMEGA];
            let te = ed * id + eq * iq + (md.xq_prime - md.xd_prime) * id * iq;
            let accel = mach.tm - te - md.damping * (omega - ws) / ws;
            jac[(xo + state::OMEGA, i)] = -ws / (2.0 * m[i] * m[i]) * accel;
        }
        jac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dae::Constant;
    use crate::testutil::{fd_jacobian, wscc9, M_TRUE};

    #[test]
    fn dimensions_match_nine_bus_layout() {
        let (sys, u0) = PowerSystem::initialize(&wscc9()).unwrap();
        assert_eq!(sys.n_differential(), 21);
        assert_eq!(sys.dim() - sys.n_differential(), 24);
        assert_eq!(u0.len(), 45);
    }

    #[test]
    fn steady_state_residual_vanishes() {
        let (sys, u0) = PowerSystem::initialize(&wscc9()).unwrap();
        let sched = sys.schedule(vec![]).unwrap();
        let r = sys
            .residual(0.0, &u0, &vec![0.0; 45], &M_TRUE, &sched)
            .unwrap();
        let worst = r.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        assert!(worst <= 1e-10, "residual {worst:e}");
        for i in 0..3 {
            assert_eq!(u0[7 * i + state::OMEGA], sys.omega_s());
        }
    }

    #[test]
    fn steady_state_voltages_in_band() {
        let (sys, u0) = PowerSystem::initialize(&wscc9()).unwrap();
        for bus in 1..=9 {
            let (vm, _) = sys.bus_polar(&u0, bus);
            assert!((0.9..=1.1).contains(&vm), "bus {bus}: {vm}");
        }
    }

    #[test]
    fn swing_row_hand_evaluation() {
        let (sys, u0) = PowerSystem::initialize(&wscc9()).unwrap();
        let sched = sys.schedule(vec![]).unwrap();
        let ws = sys.omega_s();
        // Raise the mechanical torque of machine 1 by 0.1 at the equilibrium.
        let mut sys2 = sys.clone();
        sys2.machines[0].tm += 0.1;
        let m = [5.0, 6.4, 3.01];
        let r = sys2.residual(0.0, &u0, &vec![0.0; 45], &m, &sched).unwrap();
        let expected = -0.1 * ws / (2.0 * 5.0);
        assert!((r[state::OMEGA] - expected).abs() < 1e-9 * ws);
        assert!((expected - (-0.01 * ws)).abs() < 1e-12);
    }

    #[test]
    fn event_changes_only_disturbed_bus_rows() {
        let (sys, u0) = PowerSystem::initialize(&wscc9()).unwrap();
        let quiet = sys.schedule(vec![]).unwrap();
        let ev = DisturbanceEvent {
            bus: 5,
            start: 0.1,
            duration: 0.2,
            load: 5.5,
        };
        let loud = sys.schedule(vec![ev]).unwrap();
        let z = vec![0.0; 45];
        let r0 = sys.residual(0.2, &u0, &z, &M_TRUE, &quiet).unwrap();
        let r1 = sys.residual(0.2, &u0, &z, &M_TRUE, &loud).unwrap();
        let bus5 = sys.voltage_offset(5);
        for i in 0..45 {
            if i == bus5 || i == bus5 + 1 {
                assert!((r0[i] - r1[i]).abs() > 1e-3);
            } else {
                assert_eq!(r0[i], r1[i], "row {i}");
            }
        }
        // Outside the window the event is inactive.
        let r2 = sys.residual(0.3, &u0, &z, &M_TRUE, &loud).unwrap();
        assert_eq!(r0, r2);
    }

    fn perturbed_state(u0: &[f64], seed: u64) -> Vec<f64> {
        let mut s = seed;
        u0.iter()
            .map(|&x| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                let r = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
                x + 0.05 * r * (1.0 + x.abs().min(2.0))
            })
            .collect()
    }

    #[test]
    fn jacobians_match_finite_differences() {
        for model in [LoadModel::ConstantPower, LoadModel::ConstantImpedance] {
            let mut data = wscc9();
            data.load_model = model;
            let (sys, u0) = PowerSystem::initialize(&data).unwrap();
            let mode = {
                let mut p = sys.nominal_load().to_vec();
                p[4] = 5.5;
                p
            };
            for seed in 0..10 {
                let u = perturbed_state(&u0, seed + 1);
                let m = [23.64 * (1.0 + 0.01 * seed as f64), 6.4, 3.01];
                let ju = sys.jac_u(&u, &m, &mode);
                let fd = fd_jacobian(&sys, &u, &m, &Constant(mode.clone()), false);
                for r in 0..45 {
                    for c in 0..45 {
                        let (a, b) = (ju[(r, c)], fd[(r, c)]);
                        let scale = a.abs().max(b.abs()).max(1.0);
                        assert!(
                            (a - b).abs() / scale <= 1e-5,
                            "F_u[{r},{c}] analytic {a} fd {b}"
                        );
                    }
                }
                let jm = sys.jac_m(&u, &m, &mode);
                let fdm = fd_jacobian(&sys, &u, &m, &Constant(mode.clone()), true);
                for r in 0..45 {
                    for c in 0..3 {
                        let (a, b) = (jm[(r, c)], fdm[(r, c)]);
                        let scale = a.abs().max(b.abs()).max(1e-8);
                        assert!(
                            (a - b).abs() / scale <= 1e-5,
                            "F_m[{r},{c}] analytic {a} fd {b}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn inertia_enters_only_own_speed_row() {
        let (sys, u0) = PowerSystem::initialize(&wscc9()).unwrap();
        let mut u = perturbed_state(&u0, 7);
        u[state::OMEGA] += 0.5;
        let jm = sys.jac_m(&u, &M_TRUE, &sys.nominal_load().to_vec());
        for c in 0..3 {
            for r in 0..45 {
                if r != 7 * c + state::OMEGA {
                    assert_eq!(jm[(r, c)], 0.0);
                }
            }
            assert!(jm[(7 * c + state::OMEGA, c)] != 0.0);
        }
    }

    #[test]
    fn residual_derivative_in_inertia_has_hand_sign() {
        // d(residual)/dH = -dF/dH = +(T_M - T_E - D dw/ws) ws / (2 H^2)
        let (sys, u0) = PowerSystem::initialize(&wscc9()).unwrap();
        let mut u = u0.clone();
        u[state::OMEGA] += 0.3;
        let sched = sys.schedule(vec![]).unwrap();
        let z = vec![0.0; 45];
        let h = 1e-6 * M_TRUE[0];
        let mut mp = M_TRUE;
        mp[0] += h;
        let mut mm = M_TRUE;
        mm[0] -= h;
        let rp = sys.residual(0.0, &u, &z, &mp, &sched).unwrap();
        let rm = sys.residual(0.0, &u, &z, &mm, &sched).unwrap();
        let fd = (rp[1] - rm[1]) / (2.0 * h);
        let ws = sys.omega_s();
        let te = sys.mechanical_torque(0); // electrical torque unchanged from equilibrium
        let hand = (sys.mechanical_torque(0) - te - sys.damping(0) * 0.3 / ws) * ws
            / (2.0 * M_TRUE[0] * M_TRUE[0]);
        assert!(
            (fd - hand).abs() <= 1e-5 * hand.abs(),
            "fd {fd} hand {hand}"
        );
        assert!(hand < 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (sys, u0) = PowerSystem::initialize(&wscc9()).unwrap();
        let sched = sys.schedule(vec![]).unwrap();
        assert!(matches!(
            sys.residual(0.0, &u0[..44], &vec![0.0; 44], &M_TRUE, &sched),
            Err(Error::Dimension { .. })
        ));
        let mut bad = u0.clone();
        bad[3] = f64::NAN;
        assert!(matches!(
            sys.residual(0.0, &bad, &vec![0.0; 45], &M_TRUE, &sched),
            Err(Error::NonFinite(_))
        ));
        assert!(ParameterVector::new(vec![1.0, -2.0, 3.0]).is_err());
    }

    #[test]
    fn steady_state_is_independent_of_inertia() {
        // u0 has no inertia input at all; check it is an equilibrium for any H.
        let (sys, u0) = PowerSystem::initialize(&wscc9()).unwrap();
        let sched = sys.schedule(vec![]).unwrap();
        for m in [[1.0, 1.0, 1.0], [50.0, 0.5, 9.0]] {
            let r = sys.residual(0.0, &u0, &vec![0.0; 45], &m, &sched).unwrap();
            assert!(r.iter().all(|x| x.abs() <= 1e-10));
        }
    }
}
