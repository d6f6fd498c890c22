use mmse_bounds::bounds::*;
use mmse_bounds::mechanism::{apply_mechanism, out_of_range_prob, MechanismConfig, PostProcessedLaw, PostProcessing};
use mmse_bounds::scenario::{sample_raw, ConditionalLaw, Scenario};
use mmse_bounds::special::QuadratureSpec;
use proptest::prelude::*;

fn config(sigma: f64, mode: PostProcessing) -> MechanismConfig {
    MechanismConfig::new(sigma, 2.0, mode).unwrap()
}

/// Monte-Carlo `E[(Y - m(X̃))²]` with its standard error.
fn monte_carlo(sc: &Scenario, c: &MechanismConfig, m: impl Fn(f64) -> f64, seed: u64) -> (f64, f64) {
    let out = apply_mechanism(&sample_raw(sc, 1_000_000, seed).unwrap(), c, seed + 1).unwrap();
    let sq: Vec<f64> = out.iter().map(|(x, y)| (y - m(x)).powi(2)).collect();
    let n = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn independent_observation_gives_maximal_mmse() {
    let law = ConditionalLaw::uniform(-0.5, 0.8).unwrap();
    let sc = Scenario::new(0.5, law.clone(), law).unwrap();
    for mode in [PostProcessing::Truncate, PostProcessing::Randomize] {
        for sigma in [0.3, 2.0, 10.0] {
            let v = exact_mmse(&sc, &config(sigma, mode), &QuadratureSpec::default()).unwrap();
            assert!((v - 1.0).abs() < 1e-9, "{mode:?} {sigma}: {v}");
        }
    }
}

#[test]
fn vanishing_noise_reveals_the_label() {
    let v = exact_mmse(&Scenario::identity_channel(), &config(0.05, PostProcessing::Truncate), &QuadratureSpec::default()).unwrap();
    assert!(v < 1e-9, "{v}");
}

#[test]
fn monotone_in_noise_level() {
    let sc = Scenario::identity_channel();
    let values: Vec<f64> = [0.5, 1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|&s| exact_mmse(&sc, &config(s, PostProcessing::Truncate), &QuadratureSpec::default()).unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]), "{values:?}");
}

#[test]
fn randomized_release_matches_monte_carlo() {
    let sc = Scenario::identity_channel();
    let c = config(5.0, PostProcessing::Randomize);
    let exact = exact_mmse(&sc, &c, &QuadratureSpec::default()).unwrap();
    // tanh θ̃ is the conditional mean once λ± carry the prior weights
    let (qp, qm) = out_of_range_prob(&sc, &c).unwrap();
    let law = PostProcessedLaw::with_lambdas(&sc, &c, 0.5 * qp / 4.0, 0.5 * qm / 4.0).unwrap();
    let (mc, se) = monte_carlo(&sc, &c, |x| law.theta_sigma(x).unwrap().tanh(), 21);
    assert!((mc - exact).abs() < 3.0 * se, "{exact} vs {mc} ± {se}");
}

#[test]
fn truncated_release_matches_monte_carlo_with_unequal_retention() {
    // one side escapes [-r, r] far more often, so the retained prior moves
    let sc = Scenario::new(0.7, ConditionalLaw::uniform(0.7, 1.0).unwrap(), ConditionalLaw::point_mass(-0.2).unwrap()).unwrap();
    let c = config(1.0, PostProcessing::Truncate);
    let exact = exact_mmse(&sc, &c, &QuadratureSpec::default()).unwrap();
    let law = PostProcessedLaw::new(&sc, &c).unwrap();
    let (qp, qm) = out_of_range_prob(&sc, &c).unwrap();
    let (kp, km) = (0.7 * (1.0 - qp), 0.3 * (1.0 - qm));
    let mean = |x: f64| {
        let (fp, fm) = law.observed_densities(x).unwrap();
        (kp * fp - km * fm) / (kp * fp + km * fm)
    };
    let (mc, se) = monte_carlo(&sc, &c, mean, 33);
    assert!((mc - exact).abs() < 3.0 * se, "{exact} vs {mc} ± {se}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_mmse_lies_in_unit_interval(p in 0.1f64..0.9, a in -0.9f64..0.5, w in 0.05f64..0.5, b in -0.9f64..0.5, sigma in 0.2f64..8.0, randomize in any::<bool>()) {
        let sc = Scenario::new(p, ConditionalLaw::uniform(a, a + w).unwrap(), ConditionalLaw::triangular(b, b + w, b).unwrap()).unwrap();
        let mode = if randomize { PostProcessing::Randomize } else { PostProcessing::Truncate };
        let v = exact_mmse(&sc, &config(sigma, mode), &QuadratureSpec::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }
}

proptest! {
    #[test]
    fn epsilon_decreases_in_n_and_k(k in 1usize..10_000, n in 1usize..1_000_000, delta in 0.001f64..0.5, c in 0.0f64..5.0) {
        for eps in [epsilon_identity, epsilon_tanh] {
            let base = eps(k, n, delta, c).unwrap();
            prop_assert!(eps(k, n + 1, delta, c).unwrap() < base);
            if c > 0.0 {
                prop_assert!(eps(k + 1, n, delta, c).unwrap() < base);
            }
            prop_assert!(base > 0.0);
        }
        prop_assert!(epsilon_tanh(k, n, delta, c).unwrap() <= epsilon_identity(k, n, delta, c).unwrap());
    }
}

#[test]
fn clamped_certificate_when_slack_exceeds_estimate() {
    let c = config(6.0, PostProcessing::Randomize);
    let report = mmse_bounds::barron::randomization_report(&Scenario::identity_channel(), &c).unwrap();
    let small_n = certify(0.3, mmse_bounds::estimator::Method::Dp, 1, 10, 0.05, &report, BoundPath::TanhTheta, false).unwrap();
    assert!(small_n.epsilon >= 0.3);
    assert_eq!((small_n.lower_bound, small_n.perror_lower), (0.0, 0.0));
}
