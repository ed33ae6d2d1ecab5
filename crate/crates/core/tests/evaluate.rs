use nalgebra::DMatrix;
use preddir_core::evaluate::{evaluate_rule, overall_effect, split_tune, Effect, EffectEstimate, Polarity, Scorer, TreatmentRule};
use preddir_core::kernel::KernelSpec;
use preddir_core::meta::{run_meta, FitMode};
use preddir_core::pipeline::{Method, PipelineConfig};
use preddir_core::simulate::{simulate, CovariateLaw, OutcomeModel, ScenarioSpec, TreatmentEffect};
use preddir_core::sir::DirectionModel;
use preddir_core::{SubjectRecord, TrialDataset};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn scenario(n: usize, p: usize, effect: TreatmentEffect, outcome: OutcomeModel, seed: u64, label: &str) -> ScenarioSpec {
    ScenarioSpec {
        n,
        p,
        covariate_law: CovariateLaw::StandardNormal,
        main_effect: vec![0.0; p],
        effect,
        outcome,
        seed,
        study_label: label.into(),
    }
}

fn survival() -> OutcomeModel {
    OutcomeModel::ExponentialSurvival {
        base_rate: 0.5,
        censor_fraction: 0.3,
    }
}

fn projection_rule(p: usize, axis: usize) -> TreatmentRule {
    let mut dir = vec![0.0; p];
    dir[axis] = 1.0;
    TreatmentRule {
        scorer: Scorer::Linear(DirectionModel {
            covariate_names: (1..=p).map(|j| format!("z{j}")).collect(),
            mu: vec![0.0; p],
            whitener: DMatrix::identity(p, p),
            theta: DMatrix::zeros(p, p),
            eigenvalues: vec![1.0; p],
            directions: vec![dir],
            n_slices: 10,
        }),
        k: 0.0,
        polarity: Polarity::GreaterTreats,
    }
}

fn abs_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

fn quick_config(method: Method, seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::new(method, seed);
    c.forest.n_trees = 100;
    c
}

#[test]
fn everyone_treated_gives_one_arm_failure() {
    let (test, _) = simulate(&scenario(200, 2, TreatmentEffect::Null, survival(), 1, "t")).unwrap();
    let mut rule = projection_rule(2, 0);
    rule.k = -1e9;
    let ev = evaluate_rule(&rule, &test).unwrap();
    let n_treated = test.treatments().iter().filter(|&&t| t).count();
    assert_eq!(ev.n_concordant_treated, n_treated);
    assert_eq!(ev.n_concordant_control, 0);
    assert!(matches!(ev.effect, EffectEstimate::Failed { .. }));
}

#[test]
fn beneficial_subgroup_beats_overall_effect() {
    let effect = TreatmentEffect::Linear {
        beta: vec![1.0, 0.0, 0.0],
    };
    let (test, _) = simulate(&scenario(
        2000,
        3,
        effect,
        OutcomeModel::ContinuousGaussian { sigma: 1.0 },
        2,
        "t",
    ))
    .unwrap();
    let ev = evaluate_rule(&projection_rule(3, 0), &test).unwrap();
    let sub = ev.effect.effect().unwrap().estimate();
    let all = overall_effect(&test).effect().unwrap().estimate();
    assert!(sub > 0.0 && sub > all, "subgroup {sub}, overall {all}");
}

#[test]
fn null_survival_subgroup_hr_is_calibrated() {
    let mut inside = 0;
    for seed in 0..100 {
        let (test, _) = simulate(&scenario(1000, 2, TreatmentEffect::Null, survival(), 1000 + seed, "t")).unwrap();
        let ev = evaluate_rule(&projection_rule(2, 0), &test).unwrap();
        if let Some(Effect::HazardRatio(r)) = ev.effect.effect() {
            if r.hr > 0.8 && r.hr < 1.25 {
                inside += 1;
            }
        }
    }
    assert!(inside >= 90, "{inside} of 100 inside (0.8, 1.25)");
}

#[test]
fn schema_mismatch_is_an_error() {
    let (test, _) = simulate(&scenario(50, 3, TreatmentEffect::Null, survival(), 3, "t")).unwrap();
    assert!(evaluate_rule(&projection_rule(2, 0), &test).is_err());
}

#[test]
fn split_tune_finds_true_bandwidth() {
    let mut hits = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = 400;
        let z = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let centres = DMatrix::from_fn(15, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let weights: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                (0..15)
                    .map(|l| {
                        let d2 = (z[(i, 0)] - centres[(l, 0)]).powi(2) + (z[(i, 1)] - centres[(l, 1)]).powi(2);
                        weights[l] * (-d2).exp()
                    })
                    .sum()
            })
            .collect();
        let grid: Vec<(KernelSpec, f64)> = [0.01, 1.0, 100.0]
            .iter()
            .map(|&rho| (KernelSpec::gaussian(rho).unwrap(), 0.1))
            .collect();
        let r = split_tune(&z, &y, &grid, seed).unwrap();
        hits += usize::from(r.best_index == 1);
        assert!(r.holdout_mse.is_finite());
    }
    assert!(hits >= 16, "ρ = 1 chosen in {hits} of 20 runs");
}

#[test]
fn identical_studies_give_concordant_directions() {
    let effect = TreatmentEffect::Linear {
        beta: vec![1.0, 0.5, 0.0, 0.0],
    };
    let spec = scenario(400, 4, effect, OutcomeModel::ContinuousGaussian { sigma: 0.5 }, 5, "a");
    let (a, _) = simulate(&spec).unwrap();
    let b = a.clone().with_label("b");
    let result = run_meta(&[a, b], &quick_config(Method::Linear, 1)).unwrap();
    let table = result.directions_table();
    assert_eq!(table.len(), 2);
    assert!(abs_cos(&table[0].1, &table[1].1) >= 0.9);
}

#[test]
fn null_studies_disagree() {
    let studies: Vec<TrialDataset> = (0..12)
        .map(|s| {
            let spec = scenario(200, 4, TreatmentEffect::Null, OutcomeModel::ContinuousGaussian { sigma: 1.0 }, 40 + s, &format!("s{s:02}"));
            simulate(&spec).unwrap().0
        })
        .collect();
    let result = run_meta(&studies, &quick_config(Method::Linear, 2)).unwrap();
    let table = result.directions_table();
    assert_eq!(table.len(), 12);
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..12 {
        for j in i + 1..12 {
            total += abs_cos(&table[i].1, &table[j].1);
            pairs += 1;
        }
    }
    let mean = total / pairs as f64;
    assert!(mean < 0.5, "mean pairwise |cos| {mean}");
}

fn shifted(data: &TrialDataset, shift: f64, label: &str) -> TrialDataset {
    let subjects: Vec<SubjectRecord> = data
        .subjects()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.covariates.iter_mut().for_each(|v| *v += shift);
            s
        })
        .collect();
    TrialDataset::new(subjects, data.covariate_names().to_vec(), data.outcome_kind(), label).unwrap()
}

#[test]
fn emptied_arm_is_isolated_in_failures() {
    let effect = TreatmentEffect::Linear {
        beta: vec![1.0, 0.0],
    };
    let (a, _) = simulate(&scenario(300, 2, effect.clone(), survival(), 6, "a")).unwrap();
    let (b, _) = simulate(&scenario(300, 2, effect.clone(), survival(), 7, "b")).unwrap();
    let (c, _) = simulate(&scenario(300, 2, effect, survival(), 8, "c")).unwrap();
    // the studies trained far away see a mixed test pool, but the rule from "a"
    // scores every far subject on one side of k
    let studies = [a, shifted(&b, 100.0, "far1"), shifted(&c, 100.0, "far2")];
    let result = run_meta(&studies, &quick_config(Method::Linear, 3)).unwrap();
    let ok = result.per_training_study(FitMode::WithoutOptimization);
    let failed = result.failure_reasons(FitMode::WithoutOptimization);
    // each study appears exactly once
    let mut seen: Vec<&String> = ok.keys().chain(failed.keys()).collect();
    seen.sort();
    assert_eq!(seen, vec!["a", "far1", "far2"]);
    assert!(failed.contains_key("a"), "expected a failure for study a: {failed:?}");
    assert!(!ok.is_empty(), "other studies must still report");
}

#[test]
fn meta_is_deterministic_and_ordered() {
    let studies: Vec<TrialDataset> = (0..3)
        .map(|s| {
            let spec = scenario(150, 3, TreatmentEffect::Linear { beta: vec![1.0, 0.0, 0.0] }, survival(), 70 + s, &format!("s{s}"));
            simulate(&spec).unwrap().0
        })
        .collect();
    let mut cfg = quick_config(Method::Kernel, 4);
    cfg.optimize = true;
    let a = run_meta(&studies, &cfg).unwrap();
    let b = run_meta(&studies, &cfg).unwrap();
    assert_eq!(a, b);
    let order: Vec<(&str, FitMode)> = a.runs.iter().map(|r| (r.study.as_str(), r.mode)).collect();
    assert_eq!(order[0], ("s0", FitMode::WithoutOptimization));
    assert_eq!(order[1], ("s0", FitMode::WithOptimization));
    assert_eq!(order[5], ("s2", FitMode::WithOptimization));
    let mut buf = Vec::new();
    a.write_effects_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
}

#[test]
fn meta_rejects_single_study() {
    let (a, _) = simulate(&scenario(50, 2, TreatmentEffect::Null, survival(), 1, "a")).unwrap();
    assert!(run_meta(&[a], &quick_config(Method::Linear, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn randomization_is_balanced(seed in 0u64..1_000_000, n in 20usize..2000) {
        let (d, _) = simulate(&scenario(n, 2, TreatmentEffect::Null, OutcomeModel::ContinuousGaussian { sigma: 1.0 }, seed, "r")).unwrap();
        let mean = d.treatments().iter().filter(|&&t| t).count() as f64 / n as f64;
        prop_assert!((mean - 0.5).abs() < 3.0 / (n as f64).sqrt());
    }
}
