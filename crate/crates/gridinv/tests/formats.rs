use gridinv::config::{Method, ScenarioConfig};
use gridinv::io;
use gridinv::run::{self, Experiment};
use gridinv_core::observation::Coordinates;

fn short() -> ScenarioConfig {
    ScenarioConfig {
        t_final: 1.0,
        ..Default::default()
    }
}

#[test]
fn observations_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for coordinates in [Coordinates::Rectangular, Coordinates::Polar] {
        let cfg = ScenarioConfig {
            coordinates,
            buses: vec![4, 5, 9],
            ..short()
        };
        let exp = Experiment::new(&cfg).unwrap();
        let obs = exp.synthesize().unwrap();
        let path = dir.path().join("obs.csv");
        io::write_observations(&path, &cfg, &obs, cfg.seed).unwrap();
        let back = io::read_observations(&path, cfg.dt).unwrap();
        assert_eq!(back, obs);
        assert_eq!(io::csv_config(&path).unwrap(), Some(cfg.clone()));
        let meta: io::Document<io::ObservationMeta> = io::read_json(&io::meta_path(&path)).unwrap();
        assert_eq!(meta.body.n_values, obs.data.len());
        assert_eq!(meta.body.coordinates, coordinates);
        assert_eq!(meta.config, cfg);
    }
}

#[test]
fn malformed_observations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(
        &path,
        "time,bus,v_re,v_im\n0.05,1,1.0,0.0\n0.05,2,1.0,0.0\n0.1,1,1.0,0.0\n",
    )
    .unwrap();
    assert!(io::read_observations(&path, 0.01).is_err());
    std::fs::write(&path, "time,bus,a,b\n0.05,1,1.0,0.0\n").unwrap();
    assert!(io::read_observations(&path, 0.01).is_err());
    std::fs::write(&path, "time,bus,v_re,v_im\n0.055,1,1.0,0.0\n").unwrap();
    assert!(io::read_observations(&path, 0.01).is_err());
}

#[test]
fn trajectory_has_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short();
    let exp = Experiment::new(&cfg).unwrap();
    let traj = exp.forward.simulate(cfg.truth().unwrap()).unwrap();
    let path = dir.path().join("traj.csv");
    io::write_trajectory(&path, &cfg, &exp.forward.system, &traj).unwrap();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&path)
        .unwrap();
    let header = r.headers().unwrap().clone();
    assert_eq!(header.len(), 1 + 45 + 18);
    assert_eq!(&header[2], "omega_1");
    assert_eq!(&header[46], "vm_1");
    assert_eq!(r.records().count(), 101);
}

#[test]
fn surrogate_reload_evaluates_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        method: Method::Pce,
        ..short()
    };
    let exp = Experiment::new(&cfg).unwrap();
    let s = run::build_surrogate(&exp).unwrap();
    let path = dir.path().join("s.json");
    io::write_surrogate(&path, &cfg, &s).unwrap();
    let back = io::read_surrogate(&path).unwrap();
    assert_eq!(back, s);
    for m in [[24.0, 6.0, 3.1], [21.3, 6.77, 2.91]] {
        let (a, b) = (s.evaluate(&m).unwrap(), back.evaluate(&m).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    // A reused surrogate gives the same estimate and costs nothing.
    let obs = exp.synthesize().unwrap();
    let fresh = run::estimate_pce(&exp, &obs, None).unwrap();
    let reused = run::estimate_pce(&exp, &obs, Some(back)).unwrap();
    assert_eq!(fresh.summary.map, reused.summary.map);
    assert_eq!(fresh.extra.surrogate_simulations, 10);
    assert_eq!(reused.extra.surrogate_simulations, 0);
}

#[test]
fn surrogate_for_another_prior_is_rejected() {
    let cfg = ScenarioConfig {
        method: Method::Pce,
        ..short()
    };
    let exp = Experiment::new(&cfg).unwrap();
    let s = run::build_surrogate(&exp).unwrap();
    let mut other = cfg.clone();
    other.prior.mean[0] = 25.0;
    let exp2 = Experiment::new(&other).unwrap();
    let obs = exp2.synthesize().unwrap();
    assert!(run::estimate_pce(&exp2, &obs, Some(s)).is_err());
}

#[test]
fn estimate_reports_map_and_laplace_costs_separately() {
    let cfg = short();
    let est = run::run_scenario(&cfg).unwrap();
    let st = &est.summary.stats;
    assert!(st.converged);
    assert_eq!(st.forward_solves, st.evaluations);
    assert_eq!(st.adjoint_solves, st.evaluations);
    assert_eq!(est.extra.laplace_gradients, 6);
    assert_eq!(est.extra.laplace_solves.forward, 6);
    assert_eq!(est.history.len(), st.iterations + 1);
    let m = est.summary.metrics.as_ref().unwrap();
    assert!(m.err < 0.05 && m.tau > 0.0);
}

#[test]
fn parallel_laplace_matches_sequential_pipeline() {
    let cfg = short();
    let exp = Experiment::new(&cfg).unwrap();
    let obs = exp.synthesize().unwrap();
    let par = run::estimate_adjoint(&exp, &obs).unwrap();
    let problem = exp.problem(&obs).unwrap();
    let seq = gridinv_core::bayes::estimate(
        &problem,
        &exp.prior.mean,
        cfg.known_truth(),
        &gridinv_core::bayes::map_options(&exp.prior),
    )
    .unwrap();
    assert_eq!(par.summary.map, seq.map);
    assert_eq!(par.summary.covariance, seq.covariance);
}

#[test]
fn sweep_rows_follow_grid_order() {
    let dir = tempfile::tempdir().unwrap();
    let base = short();
    let mut grid = run::SweepGrid::default();
    grid.set("dt_obs=0.05,0.1").unwrap();
    grid.set("noise_variance=1e-4,1e-2").unwrap();
    let rows = run::sweep(&base, &grid).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().enumerate().all(|(i, r)| r.index == i));
    // More noise, wider posterior.
    assert!(rows[1].summary.trace() > rows[0].summary.trace());
    assert!(rows[3].summary.trace() > rows[2].summary.trace());
    let path = dir.path().join("sweep.csv");
    io::write_sweep(&path, &base, &rows).unwrap();
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&path)
        .unwrap();
    let header = r.headers().unwrap().clone();
    assert_eq!(header.len(), 8 + 3 + 3 + 3 + 3 + 5);
    assert_eq!(&header[8], "m_1");
    let recs: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(recs.len(), 4);
    assert_eq!(&recs[3][4], "0.1");
    assert_eq!(recs[2][8].parse::<f64>().unwrap(), rows[2].summary.map[0]);
}
