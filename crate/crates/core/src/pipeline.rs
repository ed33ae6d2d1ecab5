//! End-to-end training: pseudo-outcome, imputed contrasts, then either SIR or a
//! kernel machine, wrapped into a treatment rule.

use serde::{Deserialize, Serialize};

use crate::data::{ImputedContrasts, OutcomeKind, TrialDataset};
use crate::error::{Error, Result};
use crate::evaluate::{split_tune, Polarity, Scorer, TreatmentRule, TuneResult};
use crate::imputer::{impute_contrasts, ForestConfig, ImputationMode};
use crate::kernel::{fit_kernel_machine, median_heuristic_rho, KernelSpec};
use crate::rng::derive_seed;
use crate::sir::{fit_sir, SirConfig};
use crate::survival::martingale_residuals;

pub const PSEUDO_OUTCOME_SURVIVAL: &str = "martingale residuals (null model)";
pub const PSEUDO_OUTCOME_CONTINUOUS: &str = "observed outcome";

/// Lambda used when tuning is switched off.
pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Linear,
    Kernel,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Linear => "linear",
            Method::Kernel => "kernel",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "sir" => Ok(Method::Linear),
            "kernel" => Ok(Method::Kernel),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (expected linear or kernel)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    pub forest: ForestConfig,
    pub imputation: ImputationMode,
    pub sir: SirConfig,
    /// Kernel used without tuning; `None` means Gaussian with the median-heuristic ρ.
    pub kernel: Option<KernelSpec>,
    pub lambda: f64,
    /// Tuning grid; empty means the default grid around the median heuristic.
    pub grid: Vec<(KernelSpec, f64)>,
    pub optimize: bool,
    pub k: f64,
    /// `None` orients the rule so that predicted benefit is treated.
    pub polarity: Option<Polarity>,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        PipelineConfig {
            method,
            forest: ForestConfig::default(),
            imputation: ImputationMode::Joint,
            sir: SirConfig::default(),
            kernel: None,
            lambda: DEFAULT_LAMBDA,
            grid: Vec::new(),
            optimize: false,
            k: 0.0,
            polarity: None,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub rule: TreatmentRule,
    pub covariate_names: Vec<String>,
    pub outcome_kind: OutcomeKind,
    pub pseudo_outcome: String,
    pub contrasts: ImputedContrasts,
    pub tuning: Option<TuneResult>,
    pub training_scores: Vec<f64>,
}

/// Regression target for imputation: the outcome itself, or null-model
/// martingale residuals for survival data.
pub fn pseudo_outcome(data: &TrialDataset) -> Result<(Vec<f64>, &'static str)> {
    match data.outcome_kind() {
        OutcomeKind::Continuous => Ok((data.continuous_outcomes()?, PSEUDO_OUTCOME_CONTINUOUS)),
        OutcomeKind::Survival => Ok((martingale_residuals(data)?, PSEUDO_OUTCOME_SURVIVAL)),
    }
}

/// Larger contrast means benefit for continuous outcomes; for survival the
/// residual counts excess events, so smaller is better.
fn benefit_polarity(kind: OutcomeKind) -> Polarity {
    match kind {
        OutcomeKind::Continuous => Polarity::GreaterTreats,
        OutcomeKind::Survival => Polarity::LesserTreats,
    }
}

fn flip(p: Polarity) -> Polarity {
    match p {
        Polarity::GreaterTreats => Polarity::LesserTreats,
        Polarity::LesserTreats => Polarity::GreaterTreats,
    }
}

fn covariance_sign(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>()
}

/// Gaussian ρ ∈ median·{1/4, 1, 4} crossed with λ ∈ {0.1, 1, 10}.
pub fn default_grid(z: &nalgebra::DMatrix<f64>) -> Result<Vec<(KernelSpec, f64)>> {
    let rho = median_heuristic_rho(z)?;
    let mut grid = Vec::with_capacity(9);
    for scale in [0.25, 1.0, 4.0] {
        for lambda in [0.1, 1.0, 10.0] {
            grid.push((KernelSpec::gaussian(rho * scale)?, lambda));
        }
    }
    Ok(grid)
}

pub fn train(data: &TrialDataset, config: &PipelineConfig) -> Result<TrainedModel> {
    let (target, label) = pseudo_outcome(data).map_err(|e| e.in_module("survival"))?;
    let contrasts = impute_contrasts(
        data,
        &target,
        &config.forest,
        config.imputation,
        derive_seed(config.seed, 0),
    )
    .map_err(|e| e.in_module("imputer"))?;
    let z = data.covariates();
    let mut tuning = None;
    let scorer = match config.method {
        Method::Linear => Scorer::Linear(
            fit_sir(data, &contrasts.contrast, &config.sir).map_err(|e| e.in_module("sir"))?,
        ),
        Method::Kernel => {
            let kernel_err = |e: Error| e.in_module("kernelmachine");
            let (spec, lambda) = if config.optimize {
                let grid = if config.grid.is_empty() {
                    default_grid(&z).map_err(kernel_err)?
                } else {
                    config.grid.clone()
                };
                let tuned = split_tune(&z, &contrasts.contrast, &grid, derive_seed(config.seed, 1))
                    .map_err(|e| e.in_module("evaluate"))?;
                let chosen = (tuned.spec, tuned.lambda);
                tuning = Some(tuned);
                chosen
            } else {
                let spec = match config.kernel {
                    Some(spec) => spec,
                    None => median_heuristic_rho(&z)
                        .and_then(KernelSpec::gaussian)
                        .map_err(kernel_err)?,
                };
                (spec, config.lambda)
            };
            Scorer::Kernel(
                fit_kernel_machine(&z, &contrasts.contrast, spec, lambda).map_err(kernel_err)?,
            )
        }
    };
    let training_scores = scorer.score_dataset(data)?;
    let polarity = match config.polarity {
        Some(p) => p,
        None => {
            let base = benefit_polarity(data.outcome_kind());
            // SIR directions carry an arbitrary sign; align the score with the contrast.
            if matches!(scorer, Scorer::Linear(_))
                && covariance_sign(&training_scores, &contrasts.contrast) < 0.0
            {
                flip(base)
            } else {
                base
            }
        }
    };
    Ok(TrainedModel {
        rule: TreatmentRule {
            scorer,
            k: config.k,
            polarity,
        },
        covariate_names: data.covariate_names().to_vec(),
        outcome_kind: data.outcome_kind(),
        pseudo_outcome: label.to_string(),
        contrasts,
        tuning,
        training_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate, CovariateLaw, OutcomeModel, ScenarioSpec, TreatmentEffect};

    fn spec(outcome: OutcomeModel, effect: TreatmentEffect, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            n: 300,
            p: 3,
            covariate_law: CovariateLaw::StandardNormal,
            main_effect: vec![0.0; 3],
            effect,
            outcome,
            seed,
            study_label: "s".into(),
        }
    }

    fn quick(method: Method) -> PipelineConfig {
        let mut c = PipelineConfig::new(method, 9);
        c.forest.n_trees = 50;
        c
    }

    #[test]
    fn survival_uses_residuals_and_lesser_polarity() {
        let s = spec(
            OutcomeModel::ExponentialSurvival {
                base_rate: 1.0,
                censor_fraction: 0.3,
            },
            TreatmentEffect::Linear { beta: vec![1.0, 0.0, 0.0] },
            2,
        );
        let (data, _) = simulate(&s).unwrap();
        let m = train(&data, &quick(Method::Kernel)).unwrap();
        assert_eq!(m.pseudo_outcome, PSEUDO_OUTCOME_SURVIVAL);
        assert_eq!(m.rule.polarity, Polarity::LesserTreats);
        assert_eq!(m.training_scores.len(), 300);
    }

    #[test]
    fn linear_rule_treats_predicted_benefit() {
        let s = spec(
            OutcomeModel::ContinuousGaussian { sigma: 0.5 },
            TreatmentEffect::Linear { beta: vec![-1.0, 0.0, 0.0] },
            4,
        );
        let (data, _) = simulate(&s).unwrap();
        let m = train(&data, &quick(Method::Linear)).unwrap();
        // benefit when z1 < 0
        assert!(m.rule.assign(&[-2.0, 0.0, 0.0]).unwrap());
        assert!(!m.rule.assign(&[2.0, 0.0, 0.0]).unwrap());
    }

    #[test]
    fn explicit_polarity_is_kept() {
        let s = spec(
            OutcomeModel::ContinuousGaussian { sigma: 0.5 },
            TreatmentEffect::Linear { beta: vec![-1.0, 0.0, 0.0] },
            4,
        );
        let (data, _) = simulate(&s).unwrap();
        let mut c = quick(Method::Linear);
        c.polarity = Some(Polarity::GreaterTreats);
        assert_eq!(train(&data, &c).unwrap().rule.polarity, Polarity::GreaterTreats);
    }

    #[test]
    fn optimize_records_tuning() {
        let s = spec(
            OutcomeModel::ContinuousGaussian { sigma: 0.5 },
            TreatmentEffect::Linear { beta: vec![1.0, 0.0, 0.0] },
            5,
        );
        let (data, _) = simulate(&s).unwrap();
        let mut c = quick(Method::Kernel);
        c.optimize = true;
        let m = train(&data, &c).unwrap();
        let t = m.tuning.unwrap();
        assert_eq!(t.cv_mse.len(), 9);
        match &m.rule.scorer {
            Scorer::Kernel(k) => assert_eq!((k.spec, k.lambda), (t.spec, t.lambda)),
            _ => panic!("expected kernel scorer"),
        }
    }
}
