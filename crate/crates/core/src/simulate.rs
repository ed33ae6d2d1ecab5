//! Randomized-trial simulator with known treatment-effect structure.
//!
//! Potential outcomes follow Y(t) = m′Z + t·τ(Z) + ε (continuous) or an
//! exponential hazard base·exp(m′Z + t·τ(Z)) (survival). Treatment is a fair
//! coin per subject. The per-subject τ(Z) is returned as ground truth.

use std::io::Write;

use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{csv_io, Outcome, OutcomeKind, SubjectRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CovariateLaw {
    StandardNormal,
    /// Multivariate t: a Gaussian scale mixture with `dof` degrees of freedom.
    Elliptical { dof: f64 },
    /// Independent centered, unit-variance lognormal coordinates.
    SkewedLognormal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NonlinearForm {
    /// z₁² − 1
    QuadraticZ1,
    /// |z₁| − √(2/π)
    AbsZ1,
    /// sin(2 z₁)
    SinZ1,
    /// sign(z₁)
    StepZ1,
}

impl NonlinearForm {
    pub fn eval(&self, z: &[f64]) -> f64 {
        let z1 = z[0];
        match self {
            NonlinearForm::QuadraticZ1 => z1 * z1 - 1.0,
            NonlinearForm::AbsZ1 => z1.abs() - (2.0 / std::f64::consts::PI).sqrt(),
            NonlinearForm::SinZ1 => (2.0 * z1).sin(),
            NonlinearForm::StepZ1 => {
                if z1 > 0.0 {
                    1.0
                } else if z1 < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for NonlinearForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "quadratic_z1" => Ok(NonlinearForm::QuadraticZ1),
            "abs_z1" => Ok(NonlinearForm::AbsZ1),
            "sin_z1" => Ok(NonlinearForm::SinZ1),
            "step_z1" => Ok(NonlinearForm::StepZ1),
            other => Err(Error::InvalidArgument(format!(
                "unknown nonlinear form '{other}' (quadratic_z1, abs_z1, sin_z1, step_z1)"
            ))),
        }
    }
}

/// τ(Z): the individual treatment effect on the linear predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreatmentEffect {
    Null,
    Constant(f64),
    Linear { beta: Vec<f64> },
    Nonlinear(NonlinearForm),
}

impl TreatmentEffect {
    pub fn tau(&self, z: &[f64]) -> f64 {
        match self {
            TreatmentEffect::Null => 0.0,
            TreatmentEffect::Constant(c) => *c,
            TreatmentEffect::Linear { beta } => beta.iter().zip(z).map(|(b, x)| b * x).sum(),
            TreatmentEffect::Nonlinear(form) => form.eval(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OutcomeModel {
    ContinuousGaussian { sigma: f64 },
    /// Exponential event times; independent exponential censoring calibrated
    /// so that roughly `censor_fraction` of subjects are censored.
    ExponentialSurvival { base_rate: f64, censor_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub p: usize,
    pub covariate_law: CovariateLaw,
    pub main_effect: Vec<f64>,
    pub effect: TreatmentEffect,
    pub outcome: OutcomeModel,
    pub seed: u64,
    pub study_label: String,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n < 2 {
            return bad(format!("n ≥ 2 required, got {}", self.n));
        }
        if self.p < 1 {
            return bad("p ≥ 1 required".into());
        }
        if self.main_effect.len() != self.p {
            return bad(format!(
                "main_effect has {} entries, expected p = {}",
                self.main_effect.len(),
                self.p
            ));
        }
        if let TreatmentEffect::Linear { beta } = &self.effect {
            if beta.len() != self.p {
                return bad(format!("beta has {} entries, expected p = {}", beta.len(), self.p));
            }
        }
        if let CovariateLaw::Elliptical { dof } = self.covariate_law {
            if !(dof > 2.0) {
                return bad(format!("elliptical dof must exceed 2, got {dof}"));
            }
        }
        match self.outcome {
            OutcomeModel::ContinuousGaussian { sigma } if !(sigma >= 0.0) => {
                bad(format!("sigma must be ≥ 0, got {sigma}"))
            }
            OutcomeModel::ExponentialSurvival {
                base_rate,
                censor_fraction,
            } if !(base_rate > 0.0) || !(0.0..1.0).contains(&censor_fraction) => bad(format!(
                "base_rate must be > 0 and censor_fraction in [0, 1) (got {base_rate}, {censor_fraction})"
            )),
            _ => Ok(()),
        }
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        match self.outcome {
            OutcomeModel::ContinuousGaussian { .. } => OutcomeKind::Continuous,
            OutcomeModel::ExponentialSurvival { .. } => OutcomeKind::Survival,
        }
    }
}

/// Ground truth emitted alongside a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub tau: Vec<f64>,
    /// The true direction when τ is linear.
    pub beta: Option<Vec<f64>>,
    /// (Y(1), Y(0)) per subject for continuous outcomes.
    pub potential_outcomes: Option<(Vec<f64>, Vec<f64>)>,
    /// Censoring rate chosen by calibration (survival only).
    pub censor_rate: Option<f64>,
}

impl Truth {
    /// `id,tau,<covariates…>`; subject rows leave the covariate cells empty and
    /// a final `beta` row carries the true direction when τ is linear.
    pub fn write_csv<W: Write>(&self, data: &TrialDataset, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["id".to_string(), "tau".to_string()];
        header.extend(data.covariate_names().iter().cloned());
        wtr.write_record(&header).map_err(csv_io)?;
        let blanks = vec![String::new(); data.p()];
        for (s, tau) in data.subjects().iter().zip(&self.tau) {
            let mut row = vec![s.id.clone(), tau.to_string()];
            row.extend(blanks.iter().cloned());
            wtr.write_record(&row).map_err(csv_io)?;
        }
        if let Some(beta) = &self.beta {
            let mut row = vec!["beta".to_string(), String::new()];
            row.extend(beta.iter().map(f64::to_string));
            wtr.write_record(&row).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn draw_covariates(law: &CovariateLaw, p: usize, rng: &mut Rng) -> Vec<f64> {
    let normals: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    match *law {
        CovariateLaw::StandardNormal => normals,
        CovariateLaw::Elliptical { dof } => {
            let w: f64 = ChiSquared::new(dof).expect("dof validated").sample(rng);
            // unit marginal variance: t_ν has variance ν/(ν−2)
            let scale = (dof / w).sqrt() / (dof / (dof - 2.0)).sqrt();
            normals.into_iter().map(|x| x * scale).collect()
        }
        CovariateLaw::SkewedLognormal => {
            let e = std::f64::consts::E;
            let mean = e.sqrt();
            let sd = ((e - 1.0) * e).sqrt();
            normals.into_iter().map(|x| (x.exp() - mean) / sd).collect()
        }
    }
}

fn censored_fraction(event_times: &[f64], censor_draws: &[f64], rate: f64) -> f64 {
    let censored = event_times
        .iter()
        .zip(censor_draws)
        .filter(|(&e, &u)| -u.ln() / rate < e)
        .count();
    censored as f64 / event_times.len() as f64
}

/// Bisection on log(rate) using fixed censoring uniforms, so the realized
/// censored fraction is monotone in the rate.
fn calibrate_censor_rate(event_times: &[f64], censor_draws: &[f64], target: f64) -> f64 {
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    let mut best = (f64::INFINITY, hi.exp());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let frac = censored_fraction(event_times, censor_draws, mid.exp());
        let gap = (frac - target).abs();
        if gap < best.0 {
            best = (gap, mid.exp());
        }
        if gap <= 0.005 {
            break;
        }
        if frac < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best.1
}

pub fn simulate(spec: &ScenarioSpec) -> Result<(TrialDataset, Truth)> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let n = spec.n;
    let mut covariates = Vec::with_capacity(n);
    let mut treatments = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    let mut censor_u = Vec::with_capacity(n);
    for _ in 0..n {
        covariates.push(draw_covariates(&spec.covariate_law, spec.p, &mut rng));
        treatments.push(rng.random_bool(0.5));
        match spec.outcome {
            OutcomeModel::ContinuousGaussian { .. } => {
                noise.push(rng.sample::<f64, _>(StandardNormal));
            }
            OutcomeModel::ExponentialSurvival { .. } => {
                noise.push(rng.sample::<f64, _>(Open01));
                censor_u.push(rng.sample::<f64, _>(Open01));
            }
        }
    }
    // both arms must be represented for a valid trial
    if treatments.iter().all(|&t| t) || treatments.iter().all(|&t| !t) {
        treatments[0] = !treatments[0];
    }

    let tau: Vec<f64> = covariates.iter().map(|z| spec.effect.tau(z)).collect();
    let prognostic: Vec<f64> = covariates
        .iter()
        .map(|z| spec.main_effect.iter().zip(z).map(|(m, x)| m * x).sum())
        .collect();

    let mut potential = None;
    let mut censor_rate = None;
    let outcomes: Vec<Outcome> = match spec.outcome {
        OutcomeModel::ContinuousGaussian { sigma } => {
            let y0: Vec<f64> = (0..n).map(|i| prognostic[i] + sigma * noise[i]).collect();
            let y1: Vec<f64> = (0..n).map(|i| y0[i] + tau[i]).collect();
            let observed = (0..n)
                .map(|i| Outcome::Continuous(if treatments[i] { y1[i] } else { y0[i] }))
                .collect();
            potential = Some((y1, y0));
            observed
        }
        OutcomeModel::ExponentialSurvival {
            base_rate,
            censor_fraction,
        } => {
            let event_times: Vec<f64> = (0..n)
                .map(|i| {
                    let lp = prognostic[i] + if treatments[i] { tau[i] } else { 0.0 };
                    -noise[i].ln() / (base_rate * lp.exp())
                })
                .collect();
            let rate = if censor_fraction > 0.0 {
                calibrate_censor_rate(&event_times, &censor_u, censor_fraction)
            } else {
                0.0
            };
            censor_rate = Some(rate);
            (0..n)
                .map(|i| {
                    let c = if rate > 0.0 { -censor_u[i].ln() / rate } else { f64::INFINITY };
                    let e = event_times[i];
                    if e <= c {
                        Outcome::Survival { time: e, event: true }
                    } else {
                        Outcome::Survival { time: c, event: false }
                    }
                })
                .collect()
        }
    };

    let subjects = (0..n)
        .map(|i| SubjectRecord {
            id: (i + 1).to_string(),
            treatment: treatments[i],
            covariates: covariates[i].clone(),
            outcome: outcomes[i],
        })
        .collect();
    let names = (1..=spec.p).map(|j| format!("z{j}")).collect();
    let data = TrialDataset::new(subjects, names, spec.outcome_kind(), spec.study_label.clone())?;
    let beta = match &spec.effect {
        TreatmentEffect::Linear { beta } => Some(beta.clone()),
        _ => None,
    };
    Ok((
        data,
        Truth {
            tau,
            beta,
            potential_outcomes: potential,
            censor_rate,
        },
    ))
}
