//! Predictive directions for heterogeneous treatment effects in randomized
//! trials: imputed potential-outcome contrasts, sliced inverse regression and
//! kernel-machine risk scores, and concordance-subgroup evaluation across studies.

pub mod data;
pub mod error;
pub mod evaluate;
pub mod imputer;
pub mod kernel;
pub mod linalg;
pub mod meta;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod sir;
pub mod survival;

pub use data::{
    contrast, load_dataset, read_dataset, write_dataset, ImputedContrasts, Outcome, OutcomeKind,
    SubjectRecord, TrialDataset,
};
pub use error::{Error, Result};
pub use evaluate::{
    assign_treatment, evaluate_rule, overall_effect, split_tune, Effect, EffectEstimate, Polarity,
    RuleEvaluation, Scorer, TreatmentRule, TuneResult,
};
pub use imputer::{fit_forest, impute_contrasts, ForestConfig, ImputationMode, RegressionForest};
pub use kernel::{
    fit_kernel_machine, gram, kernel_eval, score_nonlinear, KernelModel, KernelSpec,
    MaternSmoothness,
};
pub use meta::{run_meta, FitMode, MetaResult};
pub use pipeline::{train, Method, PipelineConfig, TrainedModel};
pub use simulate::{simulate, ScenarioSpec, Truth};
pub use sir::{fit_sir, score_linear, DirectionModel, SirConfig};
pub use survival::{cox_score, fit_cox_two_group, martingale_residuals, HazardRatioReport};
