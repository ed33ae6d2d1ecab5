//! Leave-one-study-in harness: train on each study, evaluate on the pooled rest.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{csv_io, TrialDataset};
use crate::error::{Error, Result};
use crate::evaluate::{effect_record, evaluate_rule, write_effects_csv, Effect, EffectEstimate, RuleEvaluation, Scorer};
use crate::pipeline::{train, Method, PipelineConfig};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FitMode {
    WithoutOptimization,
    WithOptimization,
}

impl FitMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMode::WithoutOptimization => "without_optimization",
            FitMode::WithOptimization => "with_optimization",
        }
    }
}

/// One (training study, mode) pairing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRun {
    pub study: String,
    pub mode: FitMode,
    pub evaluation: Option<RuleEvaluation>,
    /// Set when training or evaluation errored before an estimate existed.
    pub error: Option<String>,
    pub direction: Option<Vec<f64>>,
    pub eigenvalue: Option<f64>,
    /// Training-study ids and scores (score distribution per study).
    pub scores: Vec<(String, f64)>,
}

impl StudyRun {
    pub fn effect(&self) -> Option<&Effect> {
        self.evaluation.as_ref().and_then(|e| e.effect.effect())
    }

    pub fn failure_reason(&self) -> Option<String> {
        if let Some(err) = &self.error {
            return Some(err.clone());
        }
        match self.evaluation.as_ref().map(|e| &e.effect) {
            Some(EffectEstimate::Failed { reason }) => Some(reason.clone()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaResult {
    pub method: Method,
    pub covariate_names: Vec<String>,
    /// In input study order, modes ordered without → with optimization.
    pub runs: Vec<StudyRun>,
}

impl MetaResult {
    pub fn modes(&self) -> Vec<FitMode> {
        let mut modes: Vec<FitMode> = self.runs.iter().map(|r| r.mode).collect();
        modes.sort();
        modes.dedup();
        modes
    }

    pub fn per_training_study(&self, mode: FitMode) -> BTreeMap<String, Effect> {
        self.runs
            .iter()
            .filter(|r| r.mode == mode)
            .filter_map(|r| r.effect().map(|e| (r.study.clone(), e.clone())))
            .collect()
    }

    pub fn failure_reasons(&self, mode: FitMode) -> BTreeMap<String, String> {
        self.runs
            .iter()
            .filter(|r| r.mode == mode)
            .filter_map(|r| r.failure_reason().map(|e| (r.study.clone(), e)))
            .collect()
    }

    /// Study × covariate direction coefficients (linear method only).
    pub fn directions_table(&self) -> Vec<(String, Vec<f64>)> {
        self.runs
            .iter()
            .filter(|r| r.mode == FitMode::WithoutOptimization)
            .filter_map(|r| r.direction.clone().map(|d| (r.study.clone(), d)))
            .collect()
    }

    fn writer<W: Write>(writer: W) -> csv::Writer<W> {
        csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer)
    }

    /// study, covariates…, eigenvalue.
    pub fn write_directions_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = Self::writer(writer);
        let mut header = vec!["study".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        header.push("eigenvalue".into());
        wtr.write_record(&header).map_err(csv_io)?;
        for r in self.runs.iter().filter(|r| r.mode == FitMode::WithoutOptimization) {
            if let (Some(d), Some(ev)) = (&r.direction, r.eigenvalue) {
                let mut row = vec![r.study.clone()];
                row.extend(d.iter().map(|v| v.to_string()));
                row.push(ev.to_string());
                wtr.write_record(&row).map_err(csv_io)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// study, covariates… (coefficients only).
    pub fn write_concordance_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = Self::writer(writer);
        let mut header = vec!["study".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        wtr.write_record(&header).map_err(csv_io)?;
        for (study, d) in self.directions_table() {
            let mut row = vec![study];
            row.extend(d.iter().map(|v| v.to_string()));
            wtr.write_record(&row).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_effects_csv<W: Write>(&self, writer: W) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .runs
            .iter()
            .map(|r| effect_record(&r.study, r.mode.as_str(), r.evaluation.as_ref(), r.error.as_deref()))
            .collect();
        write_effects_csv(&rows, writer)
    }

    /// study, mode, id, score.
    pub fn write_scores_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = Self::writer(writer);
        wtr.write_record(["study", "mode", "id", "score"]).map_err(csv_io)?;
        for r in &self.runs {
            for (id, s) in &r.scores {
                wtr.write_record([r.study.as_str(), r.mode.as_str(), id.as_str(), &s.to_string()])
                    .map_err(csv_io)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn run_one(train_set: &TrialDataset, test: &std::result::Result<TrialDataset, String>, config: &PipelineConfig, mode: FitMode) -> StudyRun {
    let mut run = StudyRun {
        study: train_set.study_label().to_string(),
        mode,
        evaluation: None,
        error: None,
        direction: None,
        eigenvalue: None,
        scores: Vec::new(),
    };
    let mut cfg = config.clone();
    cfg.optimize = mode == FitMode::WithOptimization;
    let model = match train(train_set, &cfg) {
        Ok(m) => m,
        Err(e) => {
            run.error = Some(format!("training failed: {e}"));
            return run;
        }
    };
    if let Scorer::Linear(dm) = &model.rule.scorer {
        run.direction = Some(dm.leading_direction().to_vec());
        run.eigenvalue = dm.eigenvalues.first().copied();
    }
    run.scores = train_set
        .ids()
        .into_iter()
        .map(String::from)
        .zip(model.training_scores.iter().copied())
        .collect();
    match test {
        Ok(test) => match evaluate_rule(&model.rule, test) {
            Ok(ev) => run.evaluation = Some(ev),
            Err(e) => run.error = Some(format!("evaluation failed: {e}")),
        },
        Err(e) => run.error = Some(format!("test set unavailable: {e}")),
    }
    run
}

/// Trains on each study in turn and evaluates on the others pooled. Per-study
/// failures are recorded, never propagated.
pub fn run_meta(studies: &[TrialDataset], config: &PipelineConfig) -> Result<MetaResult> {
    if studies.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "meta-analysis needs at least 2 studies, got {}",
            studies.len()
        )));
    }
    for s in &studies[1..] {
        if !studies[0].same_schema(s) {
            return Err(Error::Validation(format!(
                "study '{}' does not share the covariate schema of '{}'",
                s.study_label(),
                studies[0].study_label()
            )));
        }
    }
    let mut labels: Vec<&str> = studies.iter().map(|s| s.study_label()).collect();
    labels.sort();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Validation("study labels must be unique".into()));
    }
    let modes: Vec<FitMode> = if config.method == Method::Kernel && config.optimize {
        vec![FitMode::WithoutOptimization, FitMode::WithOptimization]
    } else {
        vec![FitMode::WithoutOptimization]
    };
    let jobs: Vec<(usize, FitMode)> = (0..studies.len())
        .flat_map(|i| modes.iter().map(move |&m| (i, m)))
        .collect();
    let runs: Vec<StudyRun> = jobs
        .par_iter()
        .map(|&(i, mode)| {
            let rest = studies
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, s)| s);
            let test = TrialDataset::pooled(rest, format!("pooled_without_{}", studies[i].study_label()))
                .map_err(|e| e.to_string());
            let mut cfg = config.clone();
            cfg.seed = derive_seed(config.seed, i as u64);
            run_one(&studies[i], &test, &cfg, mode)
        })
        .collect();
    Ok(MetaResult {
        method: config.method,
        covariate_names: studies[0].covariate_names().to_vec(),
        runs,
    })
}
