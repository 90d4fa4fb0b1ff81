use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use roadmix::datamodel::{parse_terms, Term};
use roadmix::eval::{compare_models, ThresholdRule};
use roadmix::mixed::{icc, CovarianceStructure, LOGISTIC_VARIANCE};
use roadmix::simgen::{generate, simulate_coefficients, GeneratorConfig, GroupSizes};
use roadmix::{
    encode_design, fit_glm, fit_mixed, load_dataset, split, write_dataset, Dataset, Error, FitDocument,
    FittedModel, GlmSettings, MixedFit, MixedSettings, ModelSpec, PredictionMode,
};

use crate::failure::{Failure, EXIT_NOT_CONVERGED};
use crate::output::Staging;
use crate::{
    Command, CompareArgs, CovarianceArg, DataArgs, EvaluateArgs, FitArgs, GenerateArgs, IccArgs, ModelArgs,
    ModelKind, PredictionArg, Preset, RunConfig, ScoringArgs, SimulateArgs, ThresholdMode,
};

/// Runs one resolved command. Artifacts are committed when the command
/// completes, including when a fit did not converge.
pub fn run(cfg: &RunConfig) -> Result<(), Failure> {
    let staging = Staging::new(&cfg.out_dir)?;
    staging.write_json("run.json", cfg)?;
    let converged = match &cfg.command {
        Command::Generate(a) => cmd_generate(a, cfg.seed, &staging)?,
        Command::Fit(a) => cmd_fit(a, &staging)?,
        Command::Compare(a) => cmd_compare(a, cfg.seed, &staging)?,
        Command::Simulate(a) => cmd_simulate(a, cfg.seed, &staging)?,
        Command::Evaluate(a) => cmd_evaluate(a, &staging)?,
        Command::Icc(a) => cmd_icc(a, &staging)?,
    };
    for path in staging.commit()? {
        println!("wrote {}", path.display());
    }
    if converged {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NOT_CONVERGED,
            message: "at least one fit did not converge (artifacts written with converged=false)".into(),
        })
    }
}

fn high_icc(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_groups: 100,
        n_per_group: GroupSizes::Uniform(200),
        intercept: -0.7,
        beta: BTreeMap::from([
            (Term::Education, 0.46),
            (Term::Age, 0.26),
            (Term::Light, 0.12),
            (Term::Pavement, -0.34),
        ]),
        sigma_intercept: 0.84f64.sqrt(),
        sigma_slopes: BTreeMap::from([(Term::Pavement, 0.26f64.sqrt())]),
        seed,
        ..GeneratorConfig::default()
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))
}

fn cmd_generate(args: &GenerateArgs, seed: u64, out: &Staging) -> Result<bool, Failure> {
    let mut config = match &args.config {
        Some(path) => serde_json::from_str(&read_text(path)?)
            .map_err(|e| Failure::usage(format!("{}: invalid generator configuration: {e}", path.display())))?,
        None => match args.preset {
            Preset::PaperLike => GeneratorConfig::paper_like(seed),
            Preset::HighIcc => high_icc(seed),
        },
    };
    config.seed = seed;
    if let Some(j) = args.groups {
        config.n_groups = j;
    }
    if let Some(n) = args.per_group {
        config.n_per_group = GroupSizes::Uniform(n);
    }
    let dataset = generate(&config)?;
    write_dataset(&dataset, out.path("crashes.csv"), out.path("roads.csv"))?;
    out.write_json("generator.json", &config)?;
    println!("generated {} crashes on {} roads", dataset.len(), dataset.n_roads());
    Ok(true)
}

fn load(data: &DataArgs) -> Result<Dataset, Failure> {
    let loaded = load_dataset(&data.crashes, &data.roads)?;
    if !loaded.dropped.is_empty() {
        eprintln!("dropped {} rows with missing fields:", loaded.dropped.len());
        for d in loaded.dropped.iter().take(10) {
            eprintln!("  {} row {}: {}", d.file, d.row, d.reason);
        }
    }
    Ok(loaded.dataset)
}

fn model_spec(kind: ModelKind, args: &ModelArgs) -> Result<ModelSpec, Failure> {
    let terms = parse_terms(&args.terms)?;
    let mut spec = match kind {
        ModelKind::Glm => ModelSpec::glm(terms),
        ModelKind::Null => ModelSpec::null(),
        ModelKind::Ri => ModelSpec::random_intercept(terms),
        ModelKind::Rc => ModelSpec::random_coefficients(terms, parse_terms(&args.random_slopes)?),
    };
    spec.center_road_level = args.center_road;
    spec.validate()?;
    Ok(spec)
}

fn mixed_settings(args: &ModelArgs) -> MixedSettings {
    MixedSettings {
        covariance: match args.covariance {
            CovarianceArg::Diagonal => CovarianceStructure::Diagonal,
            CovarianceArg::Full => CovarianceStructure::Full,
        },
        outer_tolerance: args.tolerance,
        outer_max_iter: args.max_iter,
        ..MixedSettings::default()
    }
}

fn fit_model(kind: ModelKind, data: &Dataset, args: &ModelArgs) -> Result<FittedModel, Failure> {
    let spec = model_spec(kind, args)?;
    let design = encode_design(data, &spec)?;
    Ok(match kind {
        ModelKind::Glm => FittedModel::Glm {
            fit: fit_glm(&design, &GlmSettings::default())?,
            spec,
        },
        _ => FittedModel::Mixed {
            fit: fit_mixed(&design, &spec, &mixed_settings(args))?,
        },
    })
}

fn write_fit(out: &Staging, name: &str, model: &FittedModel) -> Result<(), Failure> {
    let doc = model.to_document(name);
    out.write(&format!("fit_{name}.json"), doc.to_json()? + "\n")
}

fn distinct(models: &[ModelKind]) -> Result<(), Failure> {
    for (i, m) in models.iter().enumerate() {
        if models[..i].contains(m) {
            return Err(Failure::usage(format!("model `{}` requested twice", m.name())));
        }
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs, out: &Staging) -> Result<bool, Failure> {
    distinct(&args.models)?;
    let data = load(&args.data)?;
    let mut converged = true;
    for &kind in &args.models {
        let model = fit_model(kind, &data, &args.model)?;
        let block = model.fit_block();
        println!(
            "{}: log-likelihood {:.4}, deviance {:.4}, converged {}",
            kind.name(),
            block.log_likelihood,
            block.deviance,
            block.converged
        );
        converged &= block.converged;
        write_fit(out, kind.name(), &model)?;
    }
    Ok(converged)
}

fn threshold_rule(s: &ScoringArgs) -> ThresholdRule {
    match s.threshold_mode {
        ThresholdMode::Fixed => ThresholdRule::Fixed(s.threshold),
        ThresholdMode::Prevalence => ThresholdRule::PrevalenceMatched,
    }
}

fn prediction_mode(s: &ScoringArgs) -> PredictionMode {
    match s.prediction {
        PredictionArg::Conditional => PredictionMode::Conditional,
        PredictionArg::Marginal => PredictionMode::Marginal,
    }
}

fn print_classification(report: &roadmix::eval::ComparisonReport) {
    for row in &report.classification {
        let show = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
        println!(
            "{}: auc {:.4}, accuracy {}, precision {}, recall {}, f1 {}",
            row.model,
            row.auc,
            show(row.accuracy),
            show(row.precision),
            show(row.recall),
            show(row.f1)
        );
    }
}

fn cmd_compare(args: &CompareArgs, seed: u64, out: &Staging) -> Result<bool, Failure> {
    if args.models.len() < 2 {
        return Err(Failure::usage("compare needs at least two models"));
    }
    distinct(&args.models)?;
    let data = load(&args.data)?;
    let (train, test) = split(&data, args.train_fraction, seed)?;
    let mut fits = Vec::with_capacity(args.models.len());
    for &kind in &args.models {
        let model = fit_model(kind, &train, &args.model)?;
        write_fit(out, kind.name(), &model)?;
        fits.push((kind.name().to_string(), model));
    }
    let report = compare_models(&fits, &test, prediction_mode(&args.scoring), threshold_rule(&args.scoring))?;
    report.write_all(out.dir())?;
    print_classification(&report);
    Ok(fits.iter().all(|(_, m)| m.converged()))
}

fn read_fit(path: &Path) -> Result<FitDocument, Failure> {
    FitDocument::from_json(&read_text(path)?)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn cmd_evaluate(args: &EvaluateArgs, out: &Staging) -> Result<bool, Failure> {
    let doc = read_fit(&args.fit)?;
    let data = load(&args.data)?;
    let fits = [(doc.model.clone(), doc.raw)];
    let report = compare_models(&fits, &data, prediction_mode(&args.scoring), threshold_rule(&args.scoring))?;
    report.write_all(out.dir())?;
    print_classification(&report);
    Ok(true)
}

fn mixed_from(doc: FitDocument, path: &Path) -> Result<MixedFit, Failure> {
    match doc.raw {
        FittedModel::Mixed { fit } => Ok(fit),
        FittedModel::Glm { .. } => Err(Failure::usage(format!(
            "{} holds a single-level fit; a multilevel fit is required",
            path.display()
        ))),
    }
}

fn cmd_simulate(args: &SimulateArgs, seed: u64, out: &Staging) -> Result<bool, Failure> {
    let fit = match (&args.fit, &args.crashes, &args.roads) {
        (Some(path), _, _) => mixed_from(read_fit(path)?, path)?,
        (None, Some(crashes), Some(roads)) => {
            let data = load(&DataArgs {
                crashes: crashes.clone(),
                roads: roads.clone(),
            })?;
            let model = fit_model(ModelKind::Rc, &data, &args.model)?;
            write_fit(out, "rc", &model)?;
            match model {
                FittedModel::Mixed { fit } => fit,
                FittedModel::Glm { .. } => unreachable!("rc is multilevel"),
            }
        }
        _ => return Err(Failure::usage("simulate needs --fit or both --crashes and --roads")),
    };
    let summary = simulate_coefficients(&fit, args.runs, seed)?;
    summary.write_csvs(out.dir())?;
    for iv in &summary.fixed_intervals {
        println!("{}: mean {:.4} [{:.4}, {:.4}]", iv.term, iv.mean, iv.lower, iv.upper);
    }
    Ok(true)
}

#[derive(Serialize)]
struct IccReport {
    sigma0_sq: f64,
    level1_variance: f64,
    icc: f64,
}

fn cmd_icc(args: &IccArgs, out: &Staging) -> Result<bool, Failure> {
    let sigma0_sq = match (&args.variance, &args.fit) {
        (Some(v), _) => *v,
        (None, Some(path)) => mixed_from(read_fit(path)?, path)?.intercept_variance(),
        (None, None) => return Err(Failure::usage("icc needs --variance or --fit")),
    };
    let value = icc(sigma0_sq).map_err(|e| match e {
        Error::NegativeVariance(_) => Failure::usage(e.to_string()),
        other => other.into(),
    })?;
    println!("icc = {value:.6}");
    out.write_json(
        "icc.json",
        &IccReport {
            sigma0_sq,
            level1_variance: LOGISTIC_VARIANCE,
            icc: value,
        },
    )?;
    Ok(true)
}
