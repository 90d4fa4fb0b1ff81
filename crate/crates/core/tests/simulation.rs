use std::collections::BTreeMap;

use roadmix::simgen::{generate, simulate_coefficients, GeneratorConfig, GroupSizes};
use roadmix::{encode_design, fit_mixed, Error, MixedFit, MixedSettings, ModelSpec, Term};

fn fitted(sigma: f64, seed: u64) -> MixedFit {
    let data = generate(&GeneratorConfig {
        n_groups: 25,
        n_per_group: GroupSizes::Uniform(60),
        intercept: -0.7,
        beta: BTreeMap::from([(Term::Pavement, -0.34), (Term::Education, 0.46)]),
        sigma_intercept: sigma,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let spec = ModelSpec::random_intercept(vec![Term::Pavement, Term::Education]);
    let fit = fit_mixed(&encode_design(&data, &spec).unwrap(), &spec, &MixedSettings::default()).unwrap();
    assert!(fit.converged);
    fit
}

#[test]
fn single_draw_collapses_intervals() {
    let fit = fitted(0.9, 1);
    let sim = simulate_coefficients(&fit, 1, 3).unwrap();
    assert_eq!(sim.draws, 1);
    for iv in &sim.fixed_intervals {
        assert_eq!((iv.lower, iv.upper), (iv.mean, iv.mean), "{}", iv.term);
    }
}

#[test]
fn pavement_interval_covers_estimate() {
    let fit = fitted(0.9, 2);
    let sim = simulate_coefficients(&fit, 200, 1).unwrap();
    let k = fit.column_names.iter().position(|c| c == "pavement").unwrap();
    let iv = &sim.fixed_intervals[k];
    assert_eq!(iv.term, "pavement");
    assert!(iv.lower < fit.fixed[k] && fit.fixed[k] < iv.upper, "{iv:?} vs {}", fit.fixed[k]);
    assert_eq!(sim.road_intercepts.len(), 25);
}

#[test]
fn means_converge_to_estimates() {
    let fit = fitted(0.9, 3);
    let draws = 2000;
    let sim = simulate_coefficients(&fit, draws, 5).unwrap();
    for (k, iv) in sim.fixed_intervals.iter().enumerate() {
        let bound = 3.0 * fit.fixed_std_errors[k] / (draws as f64).sqrt();
        assert!((iv.mean - fit.fixed[k]).abs() <= bound, "{}: {} vs {}", iv.term, iv.mean, fit.fixed[k]);
    }
}

#[test]
fn near_zero_variance_gives_flat_road_intercepts() {
    let fit = fitted(0.0, 4);
    assert!(fit.intercept_variance() < 0.05, "{}", fit.intercept_variance());
    let draws = 200;
    let sim = simulate_coefficients(&fit, draws, 8).unwrap();
    let max_sd = fit
        .conditional_sds
        .iter()
        .map(|s| s[0])
        .fold(0.0f64, f64::max);
    let values: Vec<f64> = sim.road_intercepts.iter().map(|(_, v)| *v).collect();
    let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread <= 3.0 * max_sd / (draws as f64).sqrt(), "spread {spread}");
}

#[test]
fn reproducible_per_seed() {
    let fit = fitted(0.9, 6);
    let a = simulate_coefficients(&fit, 50, 9).unwrap();
    assert_eq!(a, simulate_coefficients(&fit, 50, 9).unwrap());
    assert_ne!(a, simulate_coefficients(&fit, 50, 10).unwrap());
}

#[test]
fn unusable_fits_are_rejected() {
    let mut fit = fitted(0.9, 7);
    assert!(matches!(simulate_coefficients(&fit, 0, 1), Err(Error::InvalidConfig(_))));
    fit.converged = false;
    assert!(matches!(simulate_coefficients(&fit, 10, 1), Err(Error::NotConverged)));
}

#[test]
fn csv_layout() {
    let fit = fitted(0.9, 8);
    let sim = simulate_coefficients(&fit, 20, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    sim.write_csvs(dir.path()).unwrap();
    let roads = std::fs::read_to_string(dir.path().join("roads_intercepts.csv")).unwrap();
    let fixed = std::fs::read_to_string(dir.path().join("fixed_intervals.csv")).unwrap();
    assert_eq!(roads.lines().next(), Some("road_id,mean_intercept"));
    assert_eq!(roads.lines().count(), 26);
    assert_eq!(fixed.lines().next(), Some("term,mean,lo,hi"));
    assert_eq!(fixed.lines().count(), 1 + fit.fixed.len());
}
