//! File formats. Every file starts with a reproducibility header: CSV files
//! carry `#` comment lines, JSON files a `generator` and a `config` field.
//!
//! | file | columns |
//! |---|---|
//! | observations | `time,bus,v_re,v_im` (`v_mag,v_ang` for polar layouts) |
//! | trajectory | `time`, every state by name, then `vm_<bus>,va_<bus>` |
//! | sweep | see [`SWEEP_HEADER`] |
//! | gradient check | `point,component,m,adjoint,finite_difference,rel_error` |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use gridinv_core::integrator::Trajectory;
use gridinv_core::model::{state, PowerSystem, STATES_PER_MACHINE};
use gridinv_core::observation::{Coordinates, ObservationLayout, ObservationSet};
use gridinv_core::pce::Surrogate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::run::{GradientRow, SweepRow};

pub const GENERATOR: &str = concat!("gridinv ", env!("CARGO_PKG_VERSION"));

/// A JSON document with the reproducibility header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub generator: String,
    pub config: ScenarioConfig,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Document<T> {
    pub fn new(config: &ScenarioConfig, body: T) -> Self {
        Self {
            generator: GENERATOR.to_owned(),
            config: config.clone(),
            body,
        }
    }
}

pub fn write_json<T: Serialize>(
    path: &Path,
    config: &ScenarioConfig,
    body: &T,
) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(&Document::new(config, body))?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Document<T>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn header_lines(config: &ScenarioConfig) -> String {
    format!(
        "# {GENERATOR}\n# config: {}\n",
        serde_json::to_string(config).expect("config serializes")
    )
}

fn csv_writer(
    path: &Path,
    config: &ScenarioConfig,
) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    out.write_all(header_lines(config).as_bytes())?;
    Ok(csv::Writer::from_writer(out))
}

fn csv_reader(path: &Path) -> anyhow::Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file))
}

/// The config embedded in a CSV header, if any.
pub fn csv_config(path: &Path) -> anyhow::Result<Option<ScenarioConfig>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    for line in BufReader::new(file).lines() {
        let line = line?;
        match line.strip_prefix("# config: ") {
            Some(json) => return Ok(Some(serde_json::from_str(json)?)),
            None if line.starts_with('#') => continue,
            None => break,
        }
    }
    Ok(None)
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn component_names(coords: Coordinates) -> [&'static str; 2] {
    match coords {
        Coordinates::Rectangular => ["v_re", "v_im"],
        Coordinates::Polar => ["v_mag", "v_ang"],
    }
}

/// Sidecar written next to an observation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationMeta {
    pub coordinates: Coordinates,
    pub noise_variance: f64,
    pub seed: u64,
    pub n_values: usize,
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".meta.json");
    csv.with_file_name(name)
}

/// Writes `obs` to `path` and the metadata sidecar to [`meta_path`].
pub fn write_observations(
    path: &Path,
    config: &ScenarioConfig,
    obs: &ObservationSet,
    seed: u64,
) -> anyhow::Result<()> {
    let layout = &obs.layout;
    let mut w = csv_writer(path, config)?;
    let [c0, c1] = component_names(layout.coordinates);
    w.write_record(["time", "bus", c0, c1])?;
    for (j, &t) in layout.times.iter().enumerate() {
        for (b, &bus) in layout.buses.iter().enumerate() {
            let o = layout.offset(j, b);
            w.write_record([
                fmt(t),
                bus.to_string(),
                fmt(obs.data[o]),
                fmt(obs.data[o + 1]),
            ])?;
        }
    }
    w.flush()?;
    let meta = ObservationMeta {
        coordinates: layout.coordinates,
        noise_variance: config.noise_variance,
        seed,
        n_values: obs.data.len(),
    };
    write_json(&meta_path(path), config, &meta)
}

/// Reads an observation file. Rows must be grouped by time with the same
/// bus order at every time; `dt` places the times on the integration grid.
pub fn read_observations(path: &Path, dt: f64) -> anyhow::Result<ObservationSet> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    let coordinates = match headers.iter().collect::<Vec<_>>().as_slice() {
        ["time", "bus", "v_re", "v_im"] => Coordinates::Rectangular,
        ["time", "bus", "v_mag", "v_ang"] => Coordinates::Polar,
        other => bail!("{}: unexpected header {other:?}", path.display()),
    };
    let mut times: Vec<f64> = Vec::new();
    let mut buses: Vec<usize> = Vec::new();
    let mut rows: Vec<(f64, usize, f64, f64)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| -> anyhow::Result<f64> {
            rec.get(k)
                .context("missing column")?
                .trim()
                .parse::<f64>()
                .with_context(|| format!("{}: row {}", path.display(), i + 1))
        };
        let bus: usize = rec.get(1).context("missing bus")?.trim().parse()?;
        let row = (parse(0)?, bus, parse(2)?, parse(3)?);
        if times.last() != Some(&row.0) {
            times.push(row.0);
        }
        if times.len() == 1 {
            buses.push(bus);
        }
        rows.push(row);
    }
    ensure!(!rows.is_empty(), "{}: no observations", path.display());
    ensure!(
        rows.len() == times.len() * buses.len(),
        "{}: rows are not a full time × bus grid",
        path.display()
    );
    let mut data = Vec::with_capacity(2 * rows.len());
    for (k, &(t, bus, a, b)) in rows.iter().enumerate() {
        let (j, s) = (k / buses.len(), k % buses.len());
        ensure!(
            t == times[j] && bus == buses[s],
            "{}: row {} breaks the time × bus order",
            path.display(),
            k + 1
        );
        data.extend([a, b]);
    }
    let layout = ObservationLayout::at_times(times, dt, buses, coordinates)?;
    Ok(ObservationSet::new(layout, data)?)
}

/// Column names of a state vector, machine-major then currents then bus
/// voltages.
pub fn state_names(sys: &PowerSystem) -> Vec<String> {
    const X: [(usize, &str); STATES_PER_MACHINE] = [
        (state::DELTA, "delta"),
        (state::OMEGA, "omega"),
        (state::EQ_PRIME, "eq_prime"),
        (state::ED_PRIME, "ed_prime"),
        (state::EFD, "efd"),
        (state::RF, "rf"),
        (state::VR, "vr"),
    ];
    let n = sys.voltage_offset(sys.n_bus()) + 2;
    let mut names = vec![String::new(); n];
    for i in 0..sys.n_gen() {
        for (off, name) in X {
            names[STATES_PER_MACHINE * i + off] = format!("{name}_{}", i + 1);
        }
        let c = sys.current_offset(i);
        names[c] = format!("id_{}", i + 1);
        names[c + 1] = format!("iq_{}", i + 1);
    }
    for bus in 1..=sys.n_bus() {
        let v = sys.voltage_offset(bus);
        names[v] = format!("vre_{bus}");
        names[v + 1] = format!("vim_{bus}");
    }
    names
}

pub fn write_trajectory(
    path: &Path,
    config: &ScenarioConfig,
    sys: &PowerSystem,
    traj: &Trajectory,
) -> anyhow::Result<()> {
    let mut w = csv_writer(path, config)?;
    let mut header = vec!["time".to_owned()];
    header.extend(state_names(sys));
    for bus in 1..=sys.n_bus() {
        header.extend([format!("vm_{bus}"), format!("va_{bus}")]);
    }
    w.write_record(&header)?;
    for (t, u) in traj.times.iter().zip(&traj.states) {
        let mut row = vec![fmt(*t)];
        row.extend(u.iter().map(|&x| fmt(x)));
        for bus in 1..=sys.n_bus() {
            let v = sys.voltage_offset(bus);
            row.extend([fmt(u[v].hypot(u[v + 1])), fmt(u[v + 1].atan2(u[v]))]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns of the sweep table; `m_*`, `sd_*` and `cns_*` repeat per parameter.
pub const SWEEP_HEADER: &str = "index,seed,t_final,dt,dt_obs,load,noise_variance,method,m_*,sd_*,trace,err,tau,cns_*,iterations,evaluations,forward_solves,adjoint_solves,converged";

pub fn write_sweep(path: &Path, config: &ScenarioConfig, rows: &[SweepRow]) -> anyhow::Result<()> {
    let n = config.prior.mean.len();
    let mut w = csv_writer(path, config)?;
    let mut header: Vec<String> = Vec::new();
    for col in SWEEP_HEADER.split(',') {
        match col.strip_suffix('*') {
            Some(stem) => header.extend((1..=n).map(|i| format!("{stem}{i}"))),
            None => header.push(col.to_owned()),
        }
    }
    w.write_record(&header)?;
    for r in rows {
        let s = &r.summary;
        let nan = f64::NAN;
        let metrics = s.metrics.as_ref();
        let mut row = vec![
            r.index.to_string(),
            r.seed.to_string(),
            fmt(r.t_final),
            fmt(r.dt),
            fmt(r.dt_obs),
            r.load.map_or_else(String::new, fmt),
            fmt(r.noise_variance),
            format!("{:?}", r.method).to_lowercase(),
        ];
        row.extend(s.map.iter().map(|&x| fmt(x)));
        row.extend(s.std_devs.iter().map(|&x| fmt(x)));
        row.push(fmt(s.trace()));
        row.push(fmt(metrics.map_or(nan, |m| m.err)));
        row.push(fmt(metrics.map_or(nan, |m| m.tau)));
        match metrics {
            Some(m) => row.extend(m.cns.iter().map(|&x| fmt(x))),
            None => row.extend((0..n).map(|_| fmt(nan))),
        }
        row.extend([
            s.stats.iterations.to_string(),
            s.stats.evaluations.to_string(),
            s.stats.forward_solves.to_string(),
            s.stats.adjoint_solves.to_string(),
            s.stats.converged.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gradient_check(
    path: &Path,
    config: &ScenarioConfig,
    rows: &[GradientRow],
) -> anyhow::Result<()> {
    let mut w = csv_writer(path, config)?;
    w.write_record([
        "point",
        "component",
        "m",
        "adjoint",
        "finite_difference",
        "rel_error",
    ])?;
    for r in rows {
        w.write_record([
            r.point.to_string(),
            r.component.to_string(),
            fmt(r.m),
            fmt(r.adjoint),
            fmt(r.finite_difference),
            fmt(r.rel_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFile {
    pub surrogate: Surrogate,
}

pub fn write_surrogate(
    path: &Path,
    config: &ScenarioConfig,
    surrogate: &Surrogate,
) -> anyhow::Result<()> {
    write_json(
        path,
        config,
        &SurrogateFile {
            surrogate: surrogate.clone(),
        },
    )
}

pub fn read_surrogate(path: &Path) -> anyhow::Result<Surrogate> {
    let doc: Document<SurrogateFile> = read_json(path)?;
    doc.body.surrogate.validate()?;
    Ok(doc.body.surrogate)
}

/// JSON Lines writer whose first line is the reproducibility header.
pub struct JsonLines {
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path, config: &ScenarioConfig) -> anyhow::Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, &Document::new(config, serde_json::Map::new()))?;
        out.write_all(b"\n")?;
        Ok(Self { out })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> anyhow::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
