//! Invariants of the families, engine, problems and analysis modules.

use ce_core::analysis::{
    brute_force_optimum, expected_gain, optimal_percentage, truncated_expected_length,
};
use ce_core::engine::{
    run_ce, run_ce_classical, run_ce_rejection, select_weights, CERunConfig, ImportanceMap,
    SelectionScheme,
};
use ce_core::families::{
    geometric_update, truncated_update, CategoricalParams, ConditionalCategoricalParams,
    GeometricStoppingParams, LawFamily, Sampler, WeightedSamples,
};
use ce_core::problems::{example1, random_problem, sequence_problem, Problem, SimplexMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weighted_loglik<F: LawFamily>(law: &F, samples: &WeightedSamples<F::Outcome>) -> f64 {
    samples
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|(o, w)| w * law.log_prob(o).unwrap())
        .sum()
}

fn is_normalized(p: &CategoricalParams) -> bool {
    (p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9
        && p.probs().iter().all(|&x| (0.0..=1.0).contains(&x))
}

fn categorical_batch() -> impl Strategy<Value = (usize, Vec<usize>, Vec<f64>)> {
    (2usize..8).prop_flat_map(|k| {
        (1usize..40).prop_flat_map(move |n| {
            (
                Just(k),
                prop::collection::vec(0..k, n),
                prop::collection::vec(0.0f64..5.0, n),
            )
        })
    })
}

fn length_batch(max_len: u64) -> impl Strategy<Value = (Vec<u64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(move |n| {
        (
            prop::collection::vec(1..=max_len, n),
            prop::collection::vec(0.0f64..5.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn categorical_update_is_normalized_and_mle((k, outcomes, mut weights) in categorical_batch(), seed in any::<u64>()) {
        weights[0] += 0.1;
        let samples = WeightedSamples::new(outcomes, weights).unwrap();
        let fitted = CategoricalParams::uniform(k).unwrap().fit(&samples).unwrap();
        prop_assert!(is_normalized(&fitted));
        let best = weighted_loglik(&fitted, &samples);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let raw: Vec<f64> = fitted.probs().iter().map(|p| (p + rng.random_range(-0.05..0.05)).max(0.0)).collect();
            let total: f64 = raw.iter().sum();
            let other = CategoricalParams::new(raw.into_iter().map(|v| v / total).collect()).unwrap();
            prop_assert!(weighted_loglik(&other, &samples) <= best + 1e-9);
        }
    }

    #[test]
    fn mix_output_is_normalized(a in prop::collection::vec(0.01f64..1.0, 2..10), b_seed in any::<u64>(), alpha in 0.0f64..0.999) {
        let total: f64 = a.iter().sum();
        let p = CategoricalParams::new(a.iter().map(|v| v / total).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(b_seed);
        let raw: Vec<f64> = (0..p.len()).map(|_| rng.random::<f64>() + 1e-3).collect();
        let t: f64 = raw.iter().sum();
        let q = CategoricalParams::new(raw.into_iter().map(|v| v / t).collect()).unwrap();
        let m = p.mix(&q, alpha).unwrap();
        prop_assert!(is_normalized(&m));
        prop_assert_eq!(p.mix(&p, alpha).unwrap(), p.clone());
        prop_assert_eq!(p.mix(&q, 0.0).unwrap(), q);
    }

    #[test]
    fn geometric_update_matches_grid_and_bound((lengths, mut weights) in length_batch(12), horizon in 12u64..20) {
        weights[0] += 0.1;
        let samples = WeightedSamples::new(lengths, weights).unwrap();
        let fitted = geometric_update(&samples).unwrap();
        prop_assert!(fitted.lambda() <= 1.0 - 1.0 / horizon as f64 + 1e-15);
        // grid argmax of the weighted untruncated log-likelihood
        let (mut arg, mut best) = (0.0, f64::NEG_INFINITY);
        for i in 0..100_000 {
            let l = i as f64 / 100_000.0;
            let law = GeometricStoppingParams::untruncated(l).unwrap();
            let v = weighted_loglik(&law, &samples);
            if v > best {
                best = v;
                arg = l;
            }
        }
        prop_assert!((fitted.lambda() - arg).abs() < 1e-3, "{} vs {}", fitted.lambda(), arg);
    }

    #[test]
    fn truncated_update_matches_grid((lengths, mut weights) in length_batch(6)) {
        weights[0] += 0.1;
        let horizon = 6;
        let samples = WeightedSamples::new(lengths, weights).unwrap();
        let fitted = truncated_update(&samples, horizon).unwrap();
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0.0;
        for i in 0..=10_000 {
            let l = i as f64 / 10_000.0;
            let law = GeometricStoppingParams::truncated(l, horizon).unwrap();
            let v = weighted_loglik(&law, &samples);
            if v > best {
                best = v;
                arg = l;
            }
        }
        let achieved = weighted_loglik(&fitted, &samples);
        prop_assert!(achieved >= best - 1e-9);
        prop_assert!((fitted.lambda() - arg).abs() < 1e-3 || (achieved - best).abs() < 1e-9);
    }

    #[test]
    fn truncated_density_normalizes(lambda in 0.0f64..0.9999, horizon in 1u64..60) {
        let law = GeometricStoppingParams::truncated(lambda, horizon).unwrap();
        let total: f64 = (1..=horizon).map(|t| law.log_prob(&t).unwrap().exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quantile_equals_step_smooth(values in prop::collection::vec(-3.0f64..3.0, 1..60), rho in 0.01f64..0.99) {
        let keep = ce_core::engine::elite_count(rho, values.len());
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let threshold = sorted[keep - 1];
        let step: Vec<f64> = values.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect();
        // continuous draws: no ties at the threshold
        if step.iter().sum::<f64>() as usize == keep {
            let quantile = select_weights(&values, &SelectionScheme::Quantile { rho }).unwrap();
            prop_assert_eq!(quantile, step);
        }
    }

    #[test]
    fn oracle_dominates_any_law(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..12);
        let problem = random_problem(n, SimplexMode::Uniform, &mut rng).unwrap();
        let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let t: f64 = raw.iter().sum();
        let law = CategoricalParams::new(raw.into_iter().map(|v| v / t).collect()).unwrap();
        let gain = expected_gain(&problem, &law).unwrap();
        prop_assert!(gain <= brute_force_optimum(&problem).gain + 1e-12);
        let pct = optimal_percentage(&problem, &law).unwrap();
        prop_assert!(pct > 0.0 && pct <= 1.0 + 1e-12);
    }

    #[test]
    fn optimal_percentage_scale_equivariant(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = random_problem(5, SimplexMode::Uniform, &mut rng).unwrap();
        let rewards: Vec<f64> = (0..5).flat_map(|d| problem.reward_row(d).to_vec()).map(|v| v * scale).collect();
        let scaled = Problem::new(5, 5, problem.system_law().to_vec(), rewards, false).unwrap();
        let law = CategoricalParams::uniform(5).unwrap();
        let a = optimal_percentage(&problem, &law).unwrap();
        let b = optimal_percentage(&scaled, &law).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn expected_length_identity(lambda in 0.0f64..0.999, horizon in 1u64..50) {
        let direct_num: f64 = (1..=horizon).map(|t| t as f64 * lambda.powi(t as i32 - 1) * (1.0 - lambda)).sum();
        let direct_den: f64 = (1..=horizon).map(|t| lambda.powi(t as i32 - 1) * (1.0 - lambda)).sum();
        prop_assert!((truncated_expected_length(lambda, horizon) - direct_num / direct_den).abs() < 1e-12 * horizon as f64);
    }
}

#[test]
fn rejection_gap_for_small_lambda() {
    let best = truncated_expected_length(1.0, 2);
    for i in 0..=500 {
        let lambda = i as f64 / 1000.0;
        assert!(best - truncated_expected_length(lambda, 2) >= 1.0 / 6.0 - 1e-15);
    }
    assert!((1.0 / 6.0) / best > 0.11);
}

/// Upper 1e-3 quantile of chi-square with `k` degrees of freedom (Wilson-Hilferty).
fn chi2_critical(k: usize) -> f64 {
    let k = k as f64;
    let z = 3.090_232;
    let c = 2.0 / (9.0 * k);
    k * (1.0 - c + z * c.sqrt()).powi(3)
}

/// Pearson statistic after merging cells with expected count below 5 into their neighbour.
fn chi2(observed: &[f64], expected: &[f64]) -> (f64, usize) {
    let (mut stat, mut cells) = (0.0, 0);
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            stat += (o_acc - e_acc).powi(2) / e_acc;
            cells += 1;
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 {
        stat += (o_acc - e_acc).powi(2) / e_acc;
        cells += 1;
    }
    (stat, cells)
}

#[test]
fn sampling_matches_stated_densities() {
    const DRAWS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for point in 0..5 {
        // categorical
        let k = 2 + point * 2;
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.01).collect();
        let t: f64 = raw.iter().sum();
        let law = CategoricalParams::new(raw.into_iter().map(|v| v / t).collect()).unwrap();
        let mut counts = vec![0.0; k];
        for _ in 0..DRAWS {
            counts[law.sample(&mut rng).unwrap()] += 1.0;
        }
        let expected: Vec<f64> = law.probs().iter().map(|p| p * DRAWS as f64).collect();
        let (stat, cells) = chi2(&counts, &expected);
        assert!(
            stat < chi2_critical(cells - 1),
            "categorical point {point}: {stat}"
        );

        // conditional: each row checked through sample_given
        let cond = ConditionalCategoricalParams::new(vec![
            law.clone(),
            CategoricalParams::uniform(k).unwrap(),
        ])
        .unwrap();
        let mut counts = vec![0.0; k];
        for _ in 0..DRAWS {
            counts[cond.sample_given(1, &mut rng).unwrap()] += 1.0;
        }
        let expected = vec![DRAWS as f64 / k as f64; k];
        let (stat, cells) = chi2(&counts, &expected);
        assert!(
            stat < chi2_critical(cells - 1),
            "conditional point {point}: {stat}"
        );

        // geometric, untruncated and truncated
        let lambda = 0.1 + 0.18 * point as f64;
        for truncation in [None, Some(3 + point as u64 * 2)] {
            let law = GeometricStoppingParams::new(lambda, truncation).unwrap();
            let cap = truncation.unwrap_or(200) as usize;
            let mut counts = vec![0.0; cap + 1];
            for _ in 0..DRAWS {
                let t = law.sample(&mut rng).unwrap() as usize;
                counts[t.min(cap + 1) - 1] += 1.0;
            }
            let mut expected: Vec<f64> = (1..=cap as u64)
                .map(|t| law.log_prob(&t).unwrap().exp() * DRAWS as f64)
                .collect();
            expected.push(DRAWS as f64 - expected.iter().sum::<f64>());
            let (stat, cells) = chi2(&counts, &expected);
            assert!(
                stat < chi2_critical(cells - 1),
                "geometric {lambda} {truncation:?}: {stat}"
            );
        }
    }
}

#[test]
fn random_problem_marginals() {
    let n = 3;
    let trials = 10_000;
    for mode in [SimplexMode::Uniform, SimplexMode::NormalizedComponents] {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut v_sum = 0.0;
        let mut p_sum = vec![0.0; n];
        for _ in 0..trials {
            let p = random_problem(n, mode, &mut rng).unwrap();
            v_sum += (0..n).flat_map(|d| p.reward_row(d).to_vec()).sum::<f64>();
            for (acc, x) in p_sum.iter_mut().zip(p.system_law()) {
                *acc += x;
            }
        }
        assert!((v_sum / (trials * n * n) as f64 - 0.5).abs() < 0.01);
        for acc in p_sum {
            assert!((acc / trials as f64 - 1.0 / n as f64).abs() < 0.01);
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let problem = example1();
    let init = ConditionalCategoricalParams::uniform(2, 2).unwrap();
    let cfg = CERunConfig {
        alpha: 0.5,
        seed: 99,
        ..CERunConfig::default()
    };
    let a = run_ce(&problem, &init, &cfg).unwrap();
    let b = run_ce(&problem, &init, &cfg).unwrap();
    assert_eq!(a, b);
    let c = run_ce(&problem, &init, &CERunConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn dominant_action_mass_never_decreases() {
    let problem = Problem::deterministic(vec![0.0, 0.3, 1.0, 0.5]).unwrap();
    for seed in 0..20 {
        let cfg = CERunConfig {
            alpha: 0.0,
            seed,
            ..CERunConfig::default()
        };
        let trace = run_ce(&problem, &CategoricalParams::uniform(4).unwrap(), &cfg).unwrap();
        let mut last = 0.25;
        for r in &trace.records {
            let mass = r.params.as_ref().unwrap()[2];
            assert!(mass >= last);
            last = mass;
        }
        assert_eq!(last, 1.0);
    }
}

#[test]
fn unselected_condition_rows_are_bit_identical() {
    let init = ConditionalCategoricalParams::new(vec![
        CategoricalParams::new(vec![0.3, 0.7]).unwrap(),
        CategoricalParams::uniform(2).unwrap(),
    ])
    .unwrap();
    for seed in 0..20 {
        let cfg = CERunConfig {
            alpha: 0.0,
            seed,
            max_iters: 50,
            ..CERunConfig::default()
        };
        let trace = run_ce(&example1(), &init, &cfg).unwrap();
        for r in &trace.records {
            let p = r.params.as_ref().unwrap();
            assert_eq!(p[0].to_bits(), 0.3f64.to_bits());
            assert_eq!(p[1].to_bits(), 0.7f64.to_bits());
        }
    }
}

#[test]
fn rejection_accounting_and_bound() {
    let problem = sequence_problem(3).unwrap();
    let init = GeometricStoppingParams::untruncated(0.9).unwrap();
    let cfg = CERunConfig {
        alpha: 0.0,
        seed: 5,
        max_iters: 30,
        ..CERunConfig::default()
    };
    let trace = run_ce_rejection(&problem, &init, &cfg).unwrap();
    assert!(trace.records[0].rejected > 0);
    for r in &trace.records {
        assert_eq!(
            r.acceptance_rate,
            r.accepted as f64 / (r.accepted + r.rejected) as f64
        );
        assert!(r.params.as_ref().unwrap()[0] <= 1.0 - 1.0 / 3.0 + 1e-15);
    }
}

#[test]
fn smoothing_slows_classical_convergence_but_keeps_it() {
    let problem = sequence_problem(5).unwrap();
    let init = GeometricStoppingParams::truncated(0.5, 5).unwrap();
    let cfg = CERunConfig {
        alpha: 0.7,
        seed: 3,
        ..CERunConfig::default()
    };
    let trace = run_ce_classical(&problem, &init, &cfg).unwrap();
    assert!(trace.final_params.lambda() >= 0.99);
}

#[test]
fn exponential_importance_runs() {
    let problem = Problem::deterministic(vec![0.0, 1.0, 0.2]).unwrap();
    let cfg = CERunConfig {
        scheme: SelectionScheme::Smooth {
            importance: ImportanceMap::Exponential { beta: 5.0 },
        },
        alpha: 0.5,
        seed: 1,
        ..CERunConfig::default()
    };
    let trace = run_ce(&problem, &CategoricalParams::uniform(3).unwrap(), &cfg).unwrap();
    assert!(trace.final_params.prob(1) > 0.99);
}

#[test]
fn expectation_variant_solves_small_random_problems() {
    let mut good = 0;
    for i in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(ce_core::experiment::derive_seed(11, i));
        let problem = random_problem(5, SimplexMode::Uniform, &mut rng).unwrap();
        let cfg = CERunConfig {
            seed: ce_core::experiment::derive_seed(12, i),
            ..CERunConfig::default()
        };
        let trace = ce_core::engine::run_ce_expectation(
            &problem,
            &CategoricalParams::uniform(5).unwrap(),
            &cfg,
        )
        .unwrap();
        if optimal_percentage(&problem, &trace.final_params).unwrap() >= 0.98 {
            good += 1;
        }
    }
    assert!(good >= 95, "{good}/100");
}
