use anchored_eq::diagnostics::{cancellation_check, density_ratio_max, gap_terms_report};
use anchored_eq::gamd::{external_regret, ftl_consistency, run_gamd, TraceMode};
use anchored_eq::game::{
    EmpiricalModel, FunctionClass, GameSpec, JointPolicy, RewardTensor, Shape,
};
use anchored_eq::gane::{run_gane, solve_regularized_ne, SolverSettings};
use anchored_eq::offline::sample_dataset;
use anchored_eq::regression::{erm_finite_class, fit_model, in_sample_sq_error, Estimator};
use anchored_eq::synth::{random_game, random_mixture, random_model, random_shape, random_tensor};
use anchored_eq::values::{exploitability, gibbs_best_response, marginal_q, ne_gap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng) -> GameSpec {
    let m = rng.random_range(2..=3);
    let shape = random_shape(rng, m, &[2, 3], &[1, 4]);
    let eta = [0.5, 1.0, 2.0][rng.random_range(0..3)];
    random_game(rng, &shape, eta, false).unwrap()
}

#[test]
fn tabular_error_halves_with_sample_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shape = Shape::new(vec![2, 2], 4).unwrap();
    let spec = random_game(&mut rng, &shape, 1.0, true).unwrap();
    let mu = spec.reference_behavior();
    let sizes = [512, 1024, 2048, 4096, 8192];
    let mean_err: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            (0..50u64)
                .map(|s| {
                    let data = sample_dataset(&spec, &mu, n, 0.1, s * 1000 + n as u64).unwrap();
                    let model = fit_model(&data, &Estimator::Tabular).unwrap();
                    in_sample_sq_error(&model, 0, &spec, &mu).unwrap()
                })
                .sum::<f64>()
                / 50.0
        })
        .collect();
    for w in mean_err.windows(2) {
        let ratio = w[1] / w[0];
        assert!(
            (0.35..=0.65).contains(&ratio),
            "ratio {ratio} in {mean_err:?}"
        );
    }
}

#[test]
fn erm_recovers_truth_without_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let shape = Shape::new(vec![2, 3], 2).unwrap();
    let spec = random_game(&mut rng, &shape, 1.0, true).unwrap();
    let data = sample_dataset(&spec, &spec.reference_behavior(), 400, 0.0, 1).unwrap();
    for i in 0..2 {
        let mut members: Vec<RewardTensor> =
            (0..4).map(|_| random_tensor(&mut rng, &shape)).collect();
        members.insert(2, spec.reward(i).clone());
        let class = FunctionClass::new(members, Some(spec.reward(i))).unwrap();
        assert!(class.realizable());
        assert_eq!(erm_finite_class(&data, &class, i).unwrap(), 2);
    }
}

#[test]
fn erm_index_is_a_member() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let shape = Shape::new(vec![3, 2], 3).unwrap();
    let spec = random_game(&mut rng, &shape, 1.0, false).unwrap();
    for s in 0..20 {
        let data = sample_dataset(&spec, &spec.reference_behavior(), 50, 0.5, s).unwrap();
        let k = rng.random_range(1..6);
        let class = FunctionClass::new(
            (0..k).map(|_| random_tensor(&mut rng, &shape)).collect(),
            None,
        )
        .unwrap();
        assert!(erm_finite_class(&data, &class, s as usize % 2).unwrap() < k);
    }
}

#[test]
fn noiseless_realizable_pipeline_hits_true_equilibrium() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let shape = Shape::new(vec![2, 2], 2).unwrap();
    let spec = random_game(&mut rng, &shape, 1.0, true).unwrap();
    let data = sample_dataset(&spec, &spec.reference_behavior(), 200, 0.0, 3).unwrap();
    let classes = (0..2)
        .map(|i| {
            let members = vec![random_tensor(&mut rng, &shape), spec.reward(i).clone()];
            FunctionClass::new(members, Some(spec.reward(i))).unwrap()
        })
        .collect();
    let out = run_gane(
        &data,
        spec.reference(),
        spec.eta(),
        &Estimator::FiniteClass(classes),
        &SolverSettings::default(),
    )
    .unwrap();
    assert!(out.report.converged);
    assert!(ne_gap(out.policy(), &spec).unwrap() <= 1e-8);
}

#[test]
fn constant_rewards_give_reference() {
    let shape = Shape::new(vec![2, 3], 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut raw = random_game(&mut rng, &shape, 1.0, false).unwrap().to_raw();
    raw.rewards = vec![vec![0.4; shape.num_cells()]; 2];
    let spec = GameSpec::try_from(raw).unwrap();
    let data = sample_dataset(&spec, &spec.reference_behavior(), 300, 0.0, 0).unwrap();
    let out = run_gane(
        &data,
        spec.reference(),
        1.0,
        &Estimator::Tabular,
        &SolverSettings::default(),
    )
    .unwrap();
    assert!(out.policy().max_abs_diff(spec.reference()) < 1e-15);
    for row in &out.values {
        for v in row {
            assert!((v - 0.4).abs() < 1e-15);
        }
    }
}

#[test]
fn gane_invariants_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let settings = SolverSettings::default();
    for _ in 0..40 {
        let spec = random_instance(&mut rng);
        let model = random_model(&mut rng, spec.shape());
        let report = solve_regularized_ne(&model, spec.reference(), spec.eta(), &settings).unwrap();
        if !report.converged {
            continue;
        }
        let empirical = exploitability(
            &report.policy,
            model.payoffs(),
            spec.rho(),
            spec.reference(),
            spec.eta(),
        )
        .unwrap();
        assert!(empirical <= settings.tol);
        for i in 0..spec.num_players() {
            for x in 0..spec.num_contexts() {
                let q = marginal_q(model.payoff(i), &report.policy, i, x).unwrap();
                let g = gibbs_best_response(&q, spec.reference().dist(i, x), spec.eta()).unwrap();
                let d = g
                    .iter()
                    .zip(report.policy.dist(i, x))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(d <= 10.0 * settings.tol, "Gibbs consistency {d}");
            }
        }
        for r in density_ratio_max(&report.policy, spec.reference()).unwrap() {
            assert!(r <= spec.eta().exp() * (1.0 + 1e-9));
        }
        let check = cancellation_check(&report, &model, &spec).unwrap();
        for row in &check.rows {
            assert!(row.term_ii + row.term_iii <= row.rhs_smoothness + 1e-9);
        }
    }
}

#[test]
fn decomposition_identity_for_mixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..50 {
        let spec = random_instance(&mut rng);
        let model = random_model(&mut rng, spec.shape());
        let mix = random_mixture(&mut rng, spec.shape(), 3);
        for row in gap_terms_report(&mix, &model, &spec).unwrap() {
            assert!(row.identity_error() <= 1e-9);
        }
    }
}

fn sup_error(model: &EmpiricalModel, spec: &GameSpec) -> f64 {
    (0..spec.num_players())
        .flat_map(|i| model.regression_error(spec.reward(i), i))
        .fold(0.0, |a, z| a.max(z.abs()))
}

#[test]
fn gamd_invariants_on_random_games() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..20 {
        let spec = random_instance(&mut rng);
        let data =
            sample_dataset(&spec, &spec.reference_behavior(), 300, 0.1, rng.random()).unwrap();
        let model = fit_model(&data, &Estimator::Tabular).unwrap();
        let eta = spec.eta();
        let reference = spec.reference();
        let out = run_gamd(&model, reference, eta, 60, TraceMode::Full).unwrap();
        let trace = out.trace.as_ref().unwrap();

        assert!(ftl_consistency(trace, reference, eta).unwrap() <= 1e-8);
        for pi in &trace.snapshots {
            for r in density_ratio_max(pi, reference).unwrap() {
                assert!(r <= eta.exp() * (1.0 + 1e-9));
            }
        }
        for r in density_ratio_max(&out.mixture, reference).unwrap() {
            assert!(r <= eta.exp() * (1.0 + 1e-9));
        }

        let empirical_gap =
            exploitability(&out.mixture, model.payoffs(), spec.rho(), reference, eta).unwrap();
        let regret_sum: f64 = (0..spec.num_players())
            .map(|i| {
                (0..spec.num_contexts())
                    .map(|x| external_regret(trace, i, x, reference.dist(i, x), eta).unwrap())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        assert!(
            empirical_gap <= regret_sum + 1e-9,
            "{empirical_gap} > {regret_sum}"
        );

        let z = sup_error(&model, &spec);
        for row in gap_terms_report(&out.mixture, &model, &spec).unwrap() {
            assert!((row.term_ii + row.term_iii).abs() <= 2.0 * z + 1e-12);
        }
        for (a, b) in out
            .values
            .iter()
            .flatten()
            .zip(out.values_component_kl.iter().flatten())
        {
            assert!(a >= &(b - 1e-12));
        }
        assert_eq!(out.mixture.len(), 60);
        assert_eq!(out.mixture.shape(), spec.shape());
    }
}
