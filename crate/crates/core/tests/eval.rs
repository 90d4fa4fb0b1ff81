use std::collections::BTreeMap;

use proptest::prelude::*;

use roadmix::eval::{auc, compare_models, confusion, metrics, roc_curve, ThresholdRule};
use roadmix::simgen::{generate, GeneratorConfig, GroupSizes};
use roadmix::{
    encode_design, fit_glm, fit_mixed, split, Error, FittedModel, GlmSettings, MixedSettings, ModelSpec,
    PredictionMode, Term,
};

fn labelled() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
    (3usize..120).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(0.001f64..0.999, n),
        )
            .prop_map(|(mut l, s)| {
                l[0] = true;
                l[1] = false;
                (l, s)
            })
    })
}

proptest! {
    #[test]
    fn auc_is_rank_invariant((labels, scores) in labelled()) {
        let a = auc(&labels, &scores).unwrap();
        let logit: Vec<f64> = scores.iter().map(|p| (p / (1.0 - p)).ln()).collect();
        let cubed: Vec<f64> = scores.iter().map(|p| 3.0 * p * p * p + p).collect();
        prop_assert!((auc(&labels, &logit).unwrap() - a).abs() <= 1e-12);
        prop_assert!((auc(&labels, &cubed).unwrap() - a).abs() <= 1e-12);
    }

    #[test]
    fn roc_is_monotone_from_origin_to_corner((labels, scores) in labelled()) {
        let pts = roc_curve(&labels, &scores).unwrap();
        prop_assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in pts.windows(2) {
            prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
        }
    }

    #[test]
    fn accuracy_symmetric_under_complement((labels, scores) in labelled(), t in 0.05f64..0.95) {
        prop_assume!(scores.iter().all(|&s| s != t));
        let flipped: Vec<bool> = labels.iter().map(|y| !y).collect();
        let reflected: Vec<f64> = scores.iter().map(|s| 2.0 * t - s).collect();
        let c = confusion(&labels, &scores, t).unwrap();
        let r = confusion(&flipped, &reflected, t).unwrap();
        prop_assert_eq!((r.tp, r.tn, r.fp, r.fn_), (c.tn, c.tp, c.fn_, c.fp));
        prop_assert_eq!(metrics(&c).accuracy, metrics(&r).accuracy);
        prop_assert_eq!(c.total(), labels.len());
    }

    #[test]
    fn f1_is_harmonic_mean((labels, scores) in labelled(), t in 0.05f64..0.95) {
        let m = metrics(&confusion(&labels, &scores, t).unwrap());
        if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
            prop_assert!((f - 2.0 * p * r / (p + r)).abs() <= 1e-12);
        }
    }
}

#[test]
fn comparison_on_high_icc_data() {
    let data = generate(&GeneratorConfig {
        n_groups: 40,
        n_per_group: GroupSizes::Uniform(80),
        intercept: -0.7,
        beta: BTreeMap::from([(Term::Pavement, -0.34), (Term::Education, 0.46)]),
        sigma_intercept: 0.84f64.sqrt(),
        sigma_slopes: BTreeMap::from([(Term::Pavement, 0.26f64.sqrt())]),
        seed: 12,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let (train, test) = split(&data, 0.8, 12).unwrap();
    let terms = vec![Term::Pavement, Term::Education];
    let glm_spec = ModelSpec::glm(terms.clone());
    let rc_spec = ModelSpec::random_coefficients(terms, vec![Term::Pavement]);
    let glm = FittedModel::Glm {
        fit: fit_glm(&encode_design(&train, &glm_spec).unwrap(), &GlmSettings::default()).unwrap(),
        spec: glm_spec,
    };
    let rc = FittedModel::Mixed {
        fit: fit_mixed(&encode_design(&train, &rc_spec).unwrap(), &rc_spec, &MixedSettings::default()).unwrap(),
    };
    let fits = vec![
        ("glm".to_string(), glm.clone()),
        ("rc".to_string(), rc),
        ("glm_again".to_string(), glm),
    ];
    let rule = ThresholdRule::Fixed(0.5);
    let report = compare_models(&fits, &test, PredictionMode::Conditional, rule).unwrap();
    let rows = &report.classification;
    assert!(rows[1].auc > rows[0].auc, "{} vs {}", rows[1].auc, rows[0].auc);
    let strip = |r: &roadmix::eval::ClassificationRow| {
        let mut r = r.clone();
        r.model.clear();
        r
    };
    assert_eq!(strip(&rows[0]), strip(&rows[2]));
    assert_eq!(
        report.to_json().unwrap(),
        compare_models(&fits, &test, PredictionMode::Conditional, rule).unwrap().to_json().unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    report.write_all(dir.path()).unwrap();
    for f in ["comparison.json", "metrics.csv", "coefficients.csv", "roc_glm.csv", "roc_rc.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let roc = std::fs::read_to_string(dir.path().join("roc_rc.csv")).unwrap();
    assert_eq!(roc.lines().next(), Some("fpr,tpr"));

    assert!(matches!(
        compare_models(&[], &test, PredictionMode::Conditional, rule),
        Err(Error::EmptyComparison)
    ));
}
