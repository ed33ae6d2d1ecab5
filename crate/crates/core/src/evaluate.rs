//! Treatment rules of the form `score > k`, concordance-subgroup evaluation on
//! an independent trial, and split-sample kernel tuning.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{csv_io, TrialDataset};
use crate::error::{Error, Result};
use crate::kernel::{fit_kernel_machine, fit_kernel_machine_gram, gram, score_nonlinear, KernelModel, KernelSpec};
use crate::rng::rng_from_seed;
use crate::sir::{score_linear, DirectionModel};
use crate::survival::{fit_cox_two_group, HazardRatioReport, Z_95};

/// A fitted risk score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scorer {
    /// Leading SIR direction.
    Linear(DirectionModel),
    Kernel(KernelModel),
}

impl Scorer {
    pub fn p(&self) -> usize {
        match self {
            Scorer::Linear(m) => m.p(),
            Scorer::Kernel(m) => m.p(),
        }
    }

    pub fn score(&self, z: &[f64]) -> Result<f64> {
        match self {
            Scorer::Linear(m) => score_linear(m, z, 0),
            Scorer::Kernel(m) => score_nonlinear(m, z),
        }
    }

    /// Scores from covariates only, in subject order.
    pub fn score_dataset(&self, data: &TrialDataset) -> Result<Vec<f64>> {
        data.subjects().iter().map(|s| self.score(&s.covariates)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    /// Treat when score > k.
    GreaterTreats,
    /// Treat when score < k.
    LesserTreats,
}

impl std::str::FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "greater" | "greater_treats" => Ok(Polarity::GreaterTreats),
            "lesser" | "lesser_treats" => Ok(Polarity::LesserTreats),
            other => Err(Error::InvalidArgument(format!(
                "unknown polarity '{other}' (expected greater or lesser)"
            ))),
        }
    }
}

/// Strict comparison of a score with the threshold; equality never treats.
pub fn assign_from_score(score: f64, k: f64, polarity: Polarity) -> bool {
    match polarity {
        Polarity::GreaterTreats => score > k,
        Polarity::LesserTreats => score < k,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentRule {
    pub scorer: Scorer,
    pub k: f64,
    pub polarity: Polarity,
}

impl TreatmentRule {
    pub fn new(scorer: Scorer) -> Self {
        TreatmentRule {
            scorer,
            k: 0.0,
            polarity: Polarity::GreaterTreats,
        }
    }

    pub fn assign(&self, z: &[f64]) -> Result<bool> {
        Ok(assign_from_score(self.scorer.score(z)?, self.k, self.polarity))
    }
}

pub fn assign_treatment(rule: &TreatmentRule, z: &[f64]) -> Result<bool> {
    rule.assign(z)
}

/// Treated minus control mean with a Welch standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanDifferenceReport {
    pub diff: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_treated: usize,
    pub n_control: usize,
}

impl MeanDifferenceReport {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Effect {
    /// Treated vs control hazard ratio.
    HazardRatio(HazardRatioReport),
    MeanDifference(MeanDifferenceReport),
}

impl Effect {
    pub fn estimate(&self) -> f64 {
        match self {
            Effect::HazardRatio(r) => r.hr,
            Effect::MeanDifference(r) => r.diff,
        }
    }

    pub fn interval(&self) -> (f64, f64) {
        match self {
            Effect::HazardRatio(r) => (r.ci_low, r.ci_high),
            Effect::MeanDifference(r) => (r.ci_low, r.ci_high),
        }
    }

    /// Whether the interval contains "no effect" (HR 1 or difference 0).
    pub fn covers_null(&self) -> bool {
        match self {
            Effect::HazardRatio(r) => r.covers(1.0),
            Effect::MeanDifference(r) => r.covers(0.0),
        }
    }

    pub fn measure(&self) -> &'static str {
        match self {
            Effect::HazardRatio(_) => "hazard_ratio",
            Effect::MeanDifference(_) => "mean_difference",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EffectEstimate {
    Estimated(Effect),
    /// The effect could not be computed (e.g. an arm of the subgroup is empty).
    Failed { reason: String },
}

impl EffectEstimate {
    pub fn effect(&self) -> Option<&Effect> {
        match self {
            EffectEstimate::Estimated(e) => Some(e),
            EffectEstimate::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleEvaluation {
    pub n_test: usize,
    pub n_assigned_treatment: usize,
    pub n_concordant_treated: usize,
    pub n_concordant_control: usize,
    pub effect: EffectEstimate,
}

fn mean_difference(y: &[f64], group: &[bool]) -> std::result::Result<MeanDifferenceReport, String> {
    let pick = |arm: bool| -> Vec<f64> {
        y.iter().zip(group).filter(|(_, &g)| g == arm).map(|(&v, _)| v).collect()
    };
    let treated = pick(true);
    let control = pick(false);
    if treated.len() < 2 || control.len() < 2 {
        return Err(format!(
            "need at least 2 subjects per arm (treated {}, control {})",
            treated.len(),
            control.len()
        ));
    }
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        (m, var)
    };
    let (m1, v1) = stats(&treated);
    let (m0, v0) = stats(&control);
    let diff = m1 - m0;
    let se = (v1 / treated.len() as f64 + v0 / control.len() as f64).sqrt();
    Ok(MeanDifferenceReport {
        diff,
        se,
        ci_low: diff - Z_95 * se,
        ci_high: diff + Z_95 * se,
        n_treated: treated.len(),
        n_control: control.len(),
    })
}

/// Treated-vs-control effect among the subjects flagged in `keep`.
fn effect_within(data: &TrialDataset, keep: &[bool]) -> EffectEstimate {
    let rows: Vec<usize> = (0..data.n()).filter(|&i| keep[i]).collect();
    let group: Vec<bool> = rows.iter().map(|&i| data.subjects()[i].treatment).collect();
    let n_treated = group.iter().filter(|&&g| g).count();
    if n_treated == 0 || n_treated == group.len() {
        return EffectEstimate::Failed {
            reason: format!(
                "concordance subgroup has an empty arm (treated {}, control {})",
                n_treated,
                group.len() - n_treated
            ),
        };
    }
    let result = match data.outcome_kind() {
        crate::data::OutcomeKind::Survival => {
            let (times, events) = data.survival_outcomes().expect("survival kind");
            let t: Vec<f64> = rows.iter().map(|&i| times[i]).collect();
            let e: Vec<bool> = rows.iter().map(|&i| events[i]).collect();
            fit_cox_two_group(&t, &e, &group)
                .map(Effect::HazardRatio)
                .map_err(|err| err.to_string())
        }
        crate::data::OutcomeKind::Continuous => {
            let y = data.continuous_outcomes().expect("continuous kind");
            let y: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
            mean_difference(&y, &group).map(Effect::MeanDifference)
        }
    };
    match result {
        Ok(effect) => EffectEstimate::Estimated(effect),
        Err(reason) => EffectEstimate::Failed { reason },
    }
}

/// Unfiltered treated-vs-control effect on a whole trial.
pub fn overall_effect(data: &TrialDataset) -> EffectEstimate {
    effect_within(data, &vec![true; data.n()])
}

/// Scores every test subject from covariates alone, keeps those whose assigned
/// treatment equals the randomized one, and compares arms within that subgroup.
pub fn evaluate_rule(rule: &TreatmentRule, test: &TrialDataset) -> Result<RuleEvaluation> {
    if rule.scorer.p() != test.p() {
        return Err(Error::Validation(format!(
            "test covariate dimension {} does not match the rule's {}",
            test.p(),
            rule.scorer.p()
        )));
    }
    let assigned: Vec<bool> = test
        .subjects()
        .iter()
        .map(|s| rule.assign(&s.covariates))
        .collect::<Result<_>>()?;
    let concordant: Vec<bool> = test
        .subjects()
        .iter()
        .zip(&assigned)
        .map(|(s, &a)| s.treatment == a)
        .collect();
    let count = |arm: bool| {
        test.subjects()
            .iter()
            .zip(&concordant)
            .filter(|(s, &c)| c && s.treatment == arm)
            .count()
    };
    Ok(RuleEvaluation {
        n_test: test.n(),
        n_assigned_treatment: assigned.iter().filter(|&&a| a).count(),
        n_concordant_treated: count(true),
        n_concordant_control: count(false),
        effect: effect_within(test, &concordant),
    })
}

pub const EFFECT_HEADER: [&str; 13] = [
    "study",
    "mode",
    "measure",
    "estimate",
    "ci_low",
    "ci_high",
    "log_hr",
    "se",
    "n_test",
    "n_concordant_treated",
    "n_concordant_control",
    "status",
    "reason",
];

/// One row in the effects layout: hazard ratio (or mean difference) with its
/// 95% interval, or a failure row with the reason.
pub fn effect_record(study: &str, mode: &str, eval: Option<&RuleEvaluation>, failure: Option<&str>) -> Vec<String> {
    let mut row = vec![study.to_string(), mode.to_string()];
    let blank = |row: &mut Vec<String>, k: usize| row.extend(std::iter::repeat_n(String::new(), k));
    match eval.map(|e| &e.effect) {
        Some(EffectEstimate::Estimated(effect)) => {
            let (lo, hi) = effect.interval();
            row.push(effect.measure().into());
            row.push(effect.estimate().to_string());
            row.push(lo.to_string());
            row.push(hi.to_string());
            match effect {
                Effect::HazardRatio(r) => {
                    row.push(r.log_hr.to_string());
                    row.push(r.se_log_hr.to_string());
                }
                Effect::MeanDifference(r) => {
                    row.push(String::new());
                    row.push(r.se.to_string());
                }
            }
        }
        _ => {
            row.push(String::new());
            blank(&mut row, 5);
        }
    }
    match eval {
        Some(e) => {
            row.push(e.n_test.to_string());
            row.push(e.n_concordant_treated.to_string());
            row.push(e.n_concordant_control.to_string());
        }
        None => blank(&mut row, 3),
    }
    match (eval.map(|e| &e.effect), failure) {
        (Some(EffectEstimate::Estimated(_)), _) => {
            row.push("ok".into());
            row.push(String::new());
        }
        (Some(EffectEstimate::Failed { reason }), _) => {
            row.push("failed".into());
            row.push(reason.clone());
        }
        (None, reason) => {
            row.push("failed".into());
            row.push(reason.unwrap_or("unknown failure").to_string());
        }
    }
    row
}

pub fn write_effects_csv<W: Write>(rows: &[Vec<String>], writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    wtr.write_record(EFFECT_HEADER).map_err(csv_io)?;
    for r in rows {
        wtr.write_record(r).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Outcome of split-sample tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_index: usize,
    pub spec: KernelSpec,
    pub lambda: f64,
    /// 5-fold cross-validated MSE within the first half, per grid point.
    pub cv_mse: Vec<f64>,
    /// MSE on the second half of the winner refit on the first half.
    pub holdout_mse: f64,
}

pub const TUNE_FOLDS: usize = 5;

/// Random half split; 5-fold CV inside the first half picks the grid point
/// with the smallest MSE (first wins on ties).
pub fn split_tune(
    z: &DMatrix<f64>,
    target: &[f64],
    grid: &[(KernelSpec, f64)],
    seed: u64,
) -> Result<TuneResult> {
    let n = z.nrows();
    if target.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: target.len(),
        });
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("tuning grid is empty".into()));
    }
    if n < 20 {
        return Err(Error::InvalidArgument(format!(
            "split-sample tuning needs n ≥ 20, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let (half_a, half_b) = perm.split_at(n / 2);
    let za = z.select_rows(half_a);
    let ya: Vec<f64> = half_a.iter().map(|&i| target[i]).collect();
    let m = half_a.len();

    let mut cv_mse = Vec::with_capacity(grid.len());
    for (spec, lambda) in grid {
        let k = gram(spec, &za)?;
        let mut sse = 0.0;
        for fold in 0..TUNE_FOLDS {
            let train: Vec<usize> = (0..m).filter(|i| i % TUNE_FOLDS != fold).collect();
            let held: Vec<usize> = (0..m).filter(|i| i % TUNE_FOLDS == fold).collect();
            let k_train = k.select_rows(&train).select_columns(&train);
            let y_train: Vec<f64> = train.iter().map(|&i| ya[i]).collect();
            let (alpha, _, intercept) = fit_kernel_machine_gram(&k_train, &y_train, *lambda)?;
            for &h in &held {
                let pred: f64 = intercept + train.iter().zip(&alpha).map(|(&t, a)| a * k[(h, t)]).sum::<f64>();
                sse += (pred - ya[h]).powi(2);
            }
        }
        cv_mse.push(sse / m as f64);
    }
    let mut best_index = 0;
    for (i, &mse) in cv_mse.iter().enumerate() {
        if mse < cv_mse[best_index] {
            best_index = i;
        }
    }
    let (spec, lambda) = grid[best_index];
    let model = fit_kernel_machine(&za, &ya, spec, lambda)?;
    let mut holdout = 0.0;
    for &i in half_b {
        let zi: Vec<f64> = z.row(i).iter().copied().collect();
        holdout += (score_nonlinear(&model, &zi)? - target[i]).powi(2);
    }
    Ok(TuneResult {
        best_index,
        spec,
        lambda,
        cv_mse,
        holdout_mse: holdout / half_b.len() as f64,
    })
}
