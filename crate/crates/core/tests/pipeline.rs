use gridinv_core::bayes::{self, GaussianPrior, InverseProblem};
use gridinv_core::model::SystemData;
use gridinv_core::observation::NoiseModel;
use gridinv_core::scenario::{ForwardModel, Scenario};

const M_TRUE: [f64; 3] = [23.64, 6.40, 3.01];

fn wscc9() -> SystemData {
    toml::from_str(gridinv_core::WSCC9_DATA).unwrap()
}

fn prior() -> GaussianPrior {
    GaussianPrior::new(vec![24.0, 6.0, 3.1], vec![5.76, 0.36, 0.09]).unwrap()
}

#[test]
fn quiet_network_stays_at_equilibrium() {
    let fwd = ForwardModel::new(&wscc9(), &Scenario::quiet(2.0, 0.01, 0.1)).unwrap();
    let f = fwd.observe(&M_TRUE).unwrap();
    let per_time = 2 * fwd.layout.buses.len();
    for row in f.chunks(per_time) {
        for (a, b) in row.iter().zip(&f[..per_time]) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let fwd = ForwardModel::new(&wscc9(), &Scenario::load_step(1.0, 0.01, 0.05, 5.5)).unwrap();
    let noise = NoiseModel::uniform(fwd.layout.len(), 1e-4).unwrap();
    let obs = fwd.synthesize(&M_TRUE, &noise, 3).unwrap();
    let prior = prior();
    let problem = InverseProblem::new(&fwd, &obs, &noise, &prior).unwrap();
    let m = [22.0, 6.6, 2.9];
    let (_, g) = problem.value_and_gradient(&m).unwrap();
    for i in 0..3 {
        let h = 1e-5 * m[i];
        let (mut mp, mut mm) = (m, m);
        mp[i] += h;
        mm[i] -= h;
        let fd = (problem.value(&mp).unwrap() - problem.value(&mm).unwrap()) / (2.0 * h);
        assert!(
            (g[i] - fd).abs() <= 1e-5 * g[i].abs().max(fd.abs()),
            "{i}: {} vs {fd}",
            g[i]
        );
    }
}

#[test]
fn short_experiment_recovers_inertias() {
    let fwd = ForwardModel::new(&wscc9(), &Scenario::load_step(1.0, 0.01, 0.05, 5.5)).unwrap();
    let noise = NoiseModel::uniform(fwd.layout.len(), 1e-4).unwrap();
    let obs = fwd.synthesize(&M_TRUE, &noise, 1).unwrap();
    let prior = prior();
    let problem = InverseProblem::new(&fwd, &obs, &noise, &prior).unwrap();
    let post = bayes::estimate(
        &problem,
        &prior.mean,
        Some(&M_TRUE),
        &bayes::map_options(&prior),
    )
    .unwrap();
    assert!(post.stats.converged);
    let metrics = post.metrics.unwrap();
    assert!(metrics.err < 0.05, "{}", metrics.err);
    for (sd, prior_sd) in post.std_devs.iter().zip(prior.std_devs()) {
        assert!(*sd < prior_sd);
    }
}
