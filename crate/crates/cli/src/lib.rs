//! Command-line front end: `simulate`, `fit`, `evaluate` and `meta`.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use preddir_core::data::{detect_outcome_kind, load_dataset, write_dataset, OutcomeKind, TrialDataset};
use preddir_core::evaluate::{effect_record, evaluate_rule, write_effects_csv, Polarity, Scorer};
use preddir_core::imputer::ImputationMode;
use preddir_core::kernel::{write_scores_csv, KernelSpec};
use preddir_core::meta::{run_meta, FitMode};
use preddir_core::pipeline::{train, Method, PipelineConfig, TrainedModel, PSEUDO_OUTCOME_SURVIVAL};
use preddir_core::simulate::{simulate, CovariateLaw, NonlinearForm, OutcomeModel, ScenarioSpec, TreatmentEffect};
use preddir_core::sir::SirConfig;
use preddir_core::Error;

use config::KeyValues;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const CONFIG_HELP: &str = "\
CONFIG FILE
  Flat 'key = value' lines, '#' starts a comment. Flags override file values.

  All commands
    seed                      required, no default (no implicit entropy)
    out_dir                   default: current directory

  simulate
    n, p                      required
    study                     default: study (data file is <study>.csv)
    covariates                standard_normal | elliptical | skewed_lognormal (default standard_normal)
    covariates.dof            default 5 (elliptical only)
    main_effect               comma list of p numbers, default all 0
    effect                    null | constant | linear | nonlinear (default null)
    effect.value              constant effect (default 0)
    effect.beta               comma list of p numbers (linear)
    effect.form               quadratic_z1 | abs_z1 | sin_z1 | step_z1 (nonlinear)
    outcome                   continuous | survival (default continuous)
    outcome.sigma             default 1
    outcome.base_rate         default 1
    outcome.censor_fraction   default 0.3

  fit / evaluate / meta
    data                      dataset path (meta: comma-separated list)
    model                     model.json path (evaluate)
    outcome                   continuous | survival (default: detected from the header)
    method                    linear | kernel (default linear)
    imputation                joint | per_arm (default joint)
    forest.n_trees            default 500
    forest.mtry               default ceil(features / 3)
    forest.min_node           default 5
    forest.bootstrap          default true
    slices                    default 10
    ridge                     default 1e-8 * trace(cov) / p
    kernel                    gaussian | matern | generalized_cauchy | powered_exponential
                              (default gaussian with the median-heuristic rho)
    kernel.rho                gaussian rho (default: median heuristic)
    kernel.c                  scale for the other families (default 1)
    kernel.nu                 matern smoothness 0.5 | 1.5 | 2.5 (default 1.5)
    kernel.alpha              default 1
    kernel.tau                default 1
    lambda                    default 1.0
    optimize                  split-sample tuning, default false
    tune.rho                  comma list of gaussian rho values (default: median * 0.25, 1, 4)
    tune.lambda               comma list (default 0.1, 1, 10)
    k                         threshold, default 0
    polarity                  greater | lesser (default: treat predicted benefit)

EXIT CODES
  0 success, 2 input or config validation error, 3 numerical or estimation failure";

#[derive(Debug, Parser)]
#[command(name = "preddir", version, about = "Predictive directions for treatment selection", after_help = CONFIG_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a randomized trial with known treatment-effect structure.
    Simulate(SimulateArgs),
    /// Impute contrasts and fit a linear (SIR) or kernel risk score.
    Fit(FitArgs),
    /// Evaluate a fitted rule on an independent trial.
    Evaluate(EvaluateArgs),
    /// Train on each study and evaluate on the pooled others.
    Meta(MetaArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Config file (key = value).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// linear or kernel.
    #[arg(long)]
    pub method: Option<String>,
    /// Split-sample tuning of the kernel (kernel method).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub optimize: Option<bool>,
    /// Treatment threshold k.
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<f64>,
    #[arg(long)]
    pub polarity: Option<String>,
    /// Number of SIR slices.
    #[arg(long)]
    pub slices: Option<usize>,
    /// Kernel family.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Gaussian kernel rho.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Kernel-machine regularization.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// continuous or survival.
    #[arg(long)]
    pub outcome: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// model.json written by `fit`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Test dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<f64>,
    #[arg(long)]
    pub polarity: Option<String>,
    #[arg(long)]
    pub outcome: Option<String>,
}

#[derive(Debug, Args)]
pub struct MetaArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Study datasets; repeat the flag (the file stem is the study label).
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
}

/// Failure carrying the exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(e: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }

    fn numerical(e: impl std::fmt::Display) -> Self {
        CliError {
            code: EXIT_NUMERICAL,
            message: e.to_string(),
        }
    }

    /// Classifies by the error itself (used where both kinds can arise).
    fn classify(e: Error) -> Self {
        if e.is_input_error() {
            Self::input(e)
        } else {
            Self::numerical(e)
        }
    }
}

type CliResult<T> = Result<T, CliError>;

const SCENARIO_KEYS: &[&str] = &[
    "seed",
    "out_dir",
    "n",
    "p",
    "study",
    "covariates",
    "covariates.dof",
    "main_effect",
    "effect",
    "effect.value",
    "effect.beta",
    "effect.form",
    "outcome",
    "outcome.sigma",
    "outcome.base_rate",
    "outcome.censor_fraction",
];

const RUN_KEYS: &[&str] = &[
    "seed",
    "out_dir",
    "data",
    "model",
    "outcome",
    "method",
    "imputation",
    "forest.n_trees",
    "forest.mtry",
    "forest.min_node",
    "forest.bootstrap",
    "slices",
    "ridge",
    "kernel",
    "kernel.rho",
    "kernel.c",
    "kernel.nu",
    "kernel.alpha",
    "kernel.tau",
    "lambda",
    "optimize",
    "tune.rho",
    "tune.lambda",
    "k",
    "polarity",
];

fn load_config(common: &CommonArgs, allowed: &[&str]) -> CliResult<KeyValues> {
    let mut kv = match &common.config {
        Some(path) => KeyValues::load(path).map_err(CliError::input)?,
        None => KeyValues::default(),
    };
    if let Some(bad) = kv.keys().find(|k| !allowed.contains(k)) {
        return Err(CliError::input(format!("unknown config field '{bad}'")));
    }
    if let Some(seed) = common.seed {
        kv.set("seed", seed);
    }
    if let Some(dir) = &common.out_dir {
        kv.set("out_dir", dir.display());
    }
    Ok(kv)
}

fn apply_model_flags(kv: &mut KeyValues, m: &ModelArgs) {
    if let Some(v) = &m.method {
        kv.set("method", v);
    }
    if let Some(v) = m.optimize {
        kv.set("optimize", v);
    }
    if let Some(v) = m.k {
        kv.set("k", v);
    }
    if let Some(v) = &m.polarity {
        kv.set("polarity", v);
    }
    if let Some(v) = m.slices {
        kv.set("slices", v);
    }
    if let Some(v) = &m.kernel {
        kv.set("kernel", v);
    }
    if let Some(v) = m.rho {
        kv.set("kernel.rho", v);
    }
    if let Some(v) = m.lambda {
        kv.set("lambda", v);
    }
    if let Some(v) = &m.outcome {
        kv.set("outcome", v);
    }
}

fn out_dir(kv: &KeyValues) -> PathBuf {
    PathBuf::from(kv.raw("out_dir").unwrap_or("."))
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<(), Error>) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf).map_err(CliError::classify)?;
        buf.flush().map_err(CliError::input)?;
    }
    tmp.persist(path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn prepare_outputs(dir: &Path, names: &[&str], inputs: &[&Path]) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    let outputs: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    for (i, out) in outputs.iter().enumerate() {
        if outputs[..i].contains(out) {
            return Err(CliError::input(format!("output path {} is used twice", out.display())));
        }
        for input in inputs {
            let same = match (fs::canonicalize(input), fs::canonicalize(out)) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            };
            if same {
                return Err(CliError::input(format!(
                    "output {} would overwrite input {}",
                    out.display(),
                    input.display()
                )));
            }
        }
    }
    Ok(outputs)
}

fn scenario_from(kv: &KeyValues) -> CliResult<ScenarioSpec> {
    let seed: u64 = kv.require("seed").map_err(CliError::input)?;
    let n: usize = kv.require("n").map_err(CliError::input)?;
    let p: usize = kv.require("p").map_err(CliError::input)?;
    let covariate_law = match kv.raw("covariates").unwrap_or("standard_normal") {
        "standard_normal" => CovariateLaw::StandardNormal,
        "elliptical" => CovariateLaw::Elliptical {
            dof: kv.get_or("covariates.dof", 5.0).map_err(CliError::input)?,
        },
        "skewed_lognormal" => CovariateLaw::SkewedLognormal,
        other => return Err(CliError::input(format!("config field 'covariates': unknown law '{other}'"))),
    };
    let main_effect = kv.list("main_effect").map_err(CliError::input)?.unwrap_or_else(|| vec![0.0; p]);
    let effect = match kv.raw("effect").unwrap_or("null") {
        "null" => TreatmentEffect::Null,
        "constant" => TreatmentEffect::Constant(kv.get_or("effect.value", 0.0).map_err(CliError::input)?),
        "linear" => TreatmentEffect::Linear {
            beta: kv
                .list("effect.beta")
                .map_err(CliError::input)?
                .ok_or_else(|| CliError::input("missing required config field 'effect.beta'"))?,
        },
        "nonlinear" => TreatmentEffect::Nonlinear(
            kv.require::<NonlinearForm>("effect.form").map_err(CliError::input)?,
        ),
        other => return Err(CliError::input(format!("config field 'effect': unknown effect '{other}'"))),
    };
    let outcome = match kv.raw("outcome").unwrap_or("continuous") {
        "continuous" => OutcomeModel::ContinuousGaussian {
            sigma: kv.get_or("outcome.sigma", 1.0).map_err(CliError::input)?,
        },
        "survival" => OutcomeModel::ExponentialSurvival {
            base_rate: kv.get_or("outcome.base_rate", 1.0).map_err(CliError::input)?,
            censor_fraction: kv.get_or("outcome.censor_fraction", 0.3).map_err(CliError::input)?,
        },
        other => return Err(CliError::input(format!("config field 'outcome': unknown outcome '{other}'"))),
    };
    let spec = ScenarioSpec {
        n,
        p,
        covariate_law,
        main_effect,
        effect,
        outcome,
        seed,
        study_label: kv.raw("study").unwrap_or("study").to_string(),
    };
    spec.validate().map_err(CliError::input)?;
    Ok(spec)
}

fn kernel_from(kv: &KeyValues) -> Result<Option<KernelSpec>, Error> {
    let family = match kv.raw("kernel") {
        None => {
            return match kv.get::<f64>("kernel.rho")? {
                Some(rho) => KernelSpec::gaussian(rho).map(Some),
                None => Ok(None),
            }
        }
        Some(f) => f.to_ascii_lowercase(),
    };
    let c = kv.get_or("kernel.c", 1.0)?;
    let alpha = kv.get_or("kernel.alpha", 1.0)?;
    match family.as_str() {
        "gaussian" => match kv.get::<f64>("kernel.rho")? {
            Some(rho) => KernelSpec::gaussian(rho).map(Some),
            None => Ok(None),
        },
        "matern" => KernelSpec::matern(c, kv.get_or("kernel.nu", 1.5)?).map(Some),
        "generalized_cauchy" | "cauchy" => {
            KernelSpec::generalized_cauchy(c, alpha, kv.get_or("kernel.tau", 1.0)?).map(Some)
        }
        "powered_exponential" => KernelSpec::powered_exponential(c, alpha).map(Some),
        other => Err(Error::Validation(format!("config field 'kernel': unknown family '{other}'"))),
    }
}

pub fn pipeline_config_from(kv: &KeyValues) -> Result<PipelineConfig, Error> {
    let seed: u64 = kv.require("seed")?;
    let method: Method = kv.get_or("method", Method::Linear)?;
    let mut cfg = PipelineConfig::new(method, seed);
    cfg.forest.n_trees = kv.get_or("forest.n_trees", cfg.forest.n_trees)?;
    cfg.forest.mtry = kv.get("forest.mtry")?;
    cfg.forest.min_node = kv.get_or("forest.min_node", cfg.forest.min_node)?;
    cfg.forest.bootstrap = kv.bool("forest.bootstrap", true)?;
    cfg.imputation = kv.get_or("imputation", ImputationMode::Joint)?;
    cfg.sir = SirConfig {
        slices: kv.get_or("slices", SirConfig::default().slices)?,
        ridge: kv.get("ridge")?,
    };
    cfg.kernel = kernel_from(kv)?;
    cfg.lambda = kv.get_or("lambda", cfg.lambda)?;
    if !(cfg.lambda > 0.0) {
        return Err(Error::Validation(format!("config field 'lambda' must be > 0, got {}", cfg.lambda)));
    }
    cfg.optimize = kv.bool("optimize", false)?;
    match (kv.list("tune.rho")?, kv.list("tune.lambda")?) {
        (Some(rhos), lambdas) => {
            let lambdas = lambdas.unwrap_or_else(|| vec![0.1, 1.0, 10.0]);
            for &rho in &rhos {
                for &l in &lambdas {
                    if !(l > 0.0) {
                        return Err(Error::Validation(format!("tune.lambda values must be > 0, got {l}")));
                    }
                    cfg.grid.push((KernelSpec::gaussian(rho)?, l));
                }
            }
        }
        (None, Some(_)) => {
            return Err(Error::Validation("config field 'tune.lambda' requires 'tune.rho'".into()));
        }
        (None, None) => {}
    }
    cfg.k = kv.get_or("k", 0.0)?;
    cfg.polarity = kv.get::<Polarity>("polarity")?;
    Ok(cfg)
}

fn load_study(path: &Path, kv: &KeyValues) -> CliResult<TrialDataset> {
    let kind = match kv.get::<OutcomeKind>("outcome").map_err(CliError::input)? {
        Some(kind) => kind,
        None => detect_outcome_kind(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?,
    };
    load_dataset(path, kind).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn required_path(kv: &KeyValues, key: &str) -> CliResult<PathBuf> {
    kv.raw(key)
        .map(PathBuf::from)
        .ok_or_else(|| CliError::input(format!("missing required config field '{key}' (or --{key})")))
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let kv = load_config(&args.common, SCENARIO_KEYS)?;
    let spec = scenario_from(&kv)?;
    let data_name = format!("{}.csv", spec.study_label);
    let outputs = prepare_outputs(&out_dir(&kv), &[&data_name, "truth.csv"], &[])?;
    let (data, truth) = simulate(&spec).map_err(CliError::classify)?;
    write_atomic(&outputs[0], |w| write_dataset(&data, w))?;
    write_atomic(&outputs[1], |w| truth.write_csv(&data, w))?;
    info!("wrote {} and {}", outputs[0].display(), outputs[1].display());
    Ok(())
}

fn log_tuning(model: &TrainedModel) {
    if let Some(t) = &model.tuning {
        info!(
            "tuning chose {} with lambda = {} (cv mse {}, held-out mse {})",
            t.spec, t.lambda, t.cv_mse[t.best_index], t.holdout_mse
        );
    }
}

fn write_kernel_summary(model: &TrainedModel, w: &mut dyn Write) -> Result<(), Error> {
    if let Scorer::Kernel(k) = &model.rule.scorer {
        writeln!(w, "family,parameters,lambda,intercept,n_train,tuned")?;
        writeln!(
            w,
            "{},\"{}\",{},{},{},{}",
            k.spec.family_name(),
            k.spec,
            k.lambda,
            k.intercept,
            k.n(),
            model.tuning.is_some()
        )?;
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let mut kv = load_config(&args.common, RUN_KEYS)?;
    apply_model_flags(&mut kv, &args.model);
    if let Some(d) = &args.data {
        kv.set("data", d.display());
    }
    let cfg = pipeline_config_from(&kv).map_err(CliError::input)?;
    let data_path = required_path(&kv, "data")?;
    let summary = match cfg.method {
        Method::Linear => "directions.csv",
        Method::Kernel => "kernel.csv",
    };
    let outputs = prepare_outputs(
        &out_dir(&kv),
        &["model.json", summary, "scores.csv", "contrasts.csv"],
        &[&data_path],
    )?;
    let data = load_study(&data_path, &kv)?;
    if data.outcome_kind() == OutcomeKind::Survival {
        info!("pre-step: {PSEUDO_OUTCOME_SURVIVAL} computed as the imputation target");
    }
    let model = train(&data, &cfg).map_err(CliError::numerical)?;
    log_tuning(&model);
    let json = serde_json::to_string_pretty(&model).map_err(CliError::numerical)?;
    write_atomic(&outputs[0], |w| {
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    match &model.rule.scorer {
        Scorer::Linear(dm) => write_atomic(&outputs[1], |w| dm.write_csv(w))?,
        Scorer::Kernel(_) => write_atomic(&outputs[1], |w| write_kernel_summary(&model, w))?,
    }
    let ids = data.ids();
    write_atomic(&outputs[2], |w| write_scores_csv(&ids, &model.training_scores, w))?;
    write_atomic(&outputs[3], |w| model.contrasts.write_csv(&ids, w))?;
    info!("fitted {} model on {} subjects", cfg.method.as_str(), data.n());
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let mut kv = load_config(&args.common, RUN_KEYS)?;
    if let Some(m) = &args.model {
        kv.set("model", m.display());
    }
    if let Some(d) = &args.data {
        kv.set("data", d.display());
    }
    if let Some(k) = args.k {
        kv.set("k", k);
    }
    if let Some(p) = &args.polarity {
        kv.set("polarity", p);
    }
    if let Some(o) = &args.outcome {
        kv.set("outcome", o);
    }
    kv.require::<u64>("seed").map_err(CliError::input)?;
    let model_path = required_path(&kv, "model")?;
    let data_path = required_path(&kv, "data")?;
    let outputs = prepare_outputs(&out_dir(&kv), &["effects.csv"], &[&model_path, &data_path])?;
    let text = fs::read_to_string(&model_path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", model_path.display())))?;
    let mut model: TrainedModel =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", model_path.display())))?;
    if let Some(k) = kv.get::<f64>("k").map_err(CliError::input)? {
        model.rule.k = k;
    }
    if let Some(p) = kv.get::<Polarity>("polarity").map_err(CliError::input)? {
        model.rule.polarity = p;
    }
    let test = load_study(&data_path, &kv)?;
    if test.covariate_names() != model.covariate_names.as_slice() || test.outcome_kind() != model.outcome_kind {
        return Err(CliError::input(format!(
            "schema mismatch: model covariates [{}] ({}) vs test [{}] ({})",
            model.covariate_names.join(","),
            model.outcome_kind.as_str(),
            test.covariate_names().join(","),
            test.outcome_kind().as_str()
        )));
    }
    let eval = evaluate_rule(&model.rule, &test).map_err(CliError::classify)?;
    let mode = if model.tuning.is_some() {
        FitMode::WithOptimization
    } else {
        FitMode::WithoutOptimization
    };
    let row = effect_record(test.study_label(), mode.as_str(), Some(&eval), None);
    write_atomic(&outputs[0], |w| write_effects_csv(&[row], w))?;
    info!(
        "concordance subgroup: {} treated, {} control of {}",
        eval.n_concordant_treated, eval.n_concordant_control, eval.n_test
    );
    Ok(())
}

fn cmd_meta(args: &MetaArgs) -> CliResult<()> {
    let mut kv = load_config(&args.common, RUN_KEYS)?;
    apply_model_flags(&mut kv, &args.model);
    if !args.data.is_empty() {
        let joined: Vec<String> = args.data.iter().map(|p| p.display().to_string()).collect();
        kv.set("data", joined.join(","));
    }
    let cfg = pipeline_config_from(&kv).map_err(CliError::input)?;
    let paths: Vec<PathBuf> = required_path(&kv, "data")?
        .to_string_lossy()
        .split(',')
        .map(|s| PathBuf::from(s.trim()))
        .collect();
    if paths.len() < 2 {
        return Err(CliError::input(format!("meta needs at least 2 datasets, got {}", paths.len())));
    }
    let inputs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    let outputs = prepare_outputs(
        &out_dir(&kv),
        &["directions.csv", "effects.csv", "scores_by_study.csv", "concordance_matrix.csv"],
        &inputs,
    )?;
    let studies: Vec<TrialDataset> = paths.iter().map(|p| load_study(p, &kv)).collect::<CliResult<_>>()?;
    if studies[0].outcome_kind() == OutcomeKind::Survival {
        info!("pre-step: {PSEUDO_OUTCOME_SURVIVAL} computed per training study");
    }
    let result = run_meta(&studies, &cfg).map_err(CliError::classify)?;
    for mode in result.modes() {
        for (study, reason) in result.failure_reasons(mode) {
            info!("{study} ({}): {reason}", mode.as_str());
        }
    }
    write_atomic(&outputs[0], |w| result.write_directions_csv(w))?;
    write_atomic(&outputs[1], |w| result.write_effects_csv(w))?;
    write_atomic(&outputs[2], |w| result.write_scores_csv(w))?;
    write_atomic(&outputs[3], |w| result.write_concordance_csv(w))?;
    info!("meta-analysis over {} studies written to {}", studies.len(), out_dir(&kv).display());
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Meta(a) => cmd_meta(a),
    }
}
