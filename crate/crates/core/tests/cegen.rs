use psce::cegen::loss::{delta_hinge, loss_clf, loss_del, loss_ldist, loss_var, variance_hinge};
use psce::cegen::{
    delta_eps_membership, generate_bayescf, generate_psce, generate_schut_greedy, BayesCfConfig, EarlyStop,
    EvaluationPolicy, PsceConfig, SchutConfig,
};
use psce::data::synth_two_gaussians;
use psce::generative::{OutputActivation, Vae};
use psce::models::{
    sample_probabilities, tabular_sizes, train, BayesMlp, Classifier, PosteriorClassifier, PredictiveSummary,
    SampledNetwork, TrainConfig,
};
use psce::rng::{self, RngStream};
use psce::tape::{ComputationTape, Var};
use psce::{Error, Tensor};
use rand::Rng;

/// Single-layer BNN with (near) zero posterior variance: logits = x W + b.
fn linear_model(weights: Vec<f64>, inputs: usize, bias: Vec<f64>) -> BayesMlp {
    let classes = bias.len();
    let mut m = BayesMlp::new(&[inputs, classes], 0.1, 0).unwrap();
    let l = &mut m.layers[0];
    l.weight_mu = Tensor::matrix(inputs, classes, weights).unwrap();
    l.bias_mu = Tensor::vector(bias);
    l.weight_log_sigma = l.weight_log_sigma.map(|_| -30.0);
    l.bias_log_sigma = l.bias_log_sigma.map(|_| -30.0);
    m
}

fn full_budget(config: PsceConfig) -> PsceConfig {
    PsceConfig {
        early_stop: EarlyStop::Never,
        ..config
    }
}

#[test]
fn classification_loss_values() {
    let mut r = rng::stream(0, &[]);
    let sure = linear_model(vec![0.0, 0.0], 1, vec![-50.0, 50.0]);
    assert!(loss_clf(&sure, &[0.3], 1, 10, &mut r).unwrap().abs() < 1e-12);
    let even = linear_model(vec![0.0, 0.0], 1, vec![0.0, 0.0]);
    assert!((loss_clf(&even, &[0.3], 1, 10, &mut r).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn classification_loss_matches_sample_trace() {
    let mut m = BayesMlp::new(&[3, 5, 2], 0.1, 4).unwrap();
    for l in &mut m.layers {
        l.weight_log_sigma = l.weight_log_sigma.map(|_| 0.5f64.ln());
    }
    let x = [0.2, -0.4, 1.0];
    let probs = sample_probabilities(&m, &x, 25, &mut rng::stream(8, &[])).unwrap();
    let hand = -(0..25).map(|s| probs.row(s)[1].ln()).sum::<f64>() / 25.0;
    let got = loss_clf(&m, &x, 1, 25, &mut rng::stream(8, &[])).unwrap();
    assert!((got - hand).abs() < 1e-12);
}

#[test]
fn hinge_values() {
    assert_eq!(delta_hinge(0.99, 0.05), 0.0);
    assert!((delta_hinge(0.90, 0.05) - 0.05).abs() < 1e-12);
    assert_eq!(delta_hinge(0.95, 0.05), 0.0);
    assert!((variance_hinge(0.02, 0.01) - 0.01).abs() < 1e-15);
    assert_eq!(variance_hinge(0.005, 0.01), 0.0);
}

/// Alternates between two fixed probability vectors.
struct TwoPoint;

impl PosteriorClassifier for TwoPoint {
    fn input_dim(&self) -> usize {
        1
    }
    fn num_classes(&self) -> usize {
        2
    }
    fn sample_weights(&self, _: &mut RngStream) -> SampledNetwork {
        unimplemented!()
    }
    fn sample_log_probs(&self, tape: &mut ComputationTape, _: Var, samples: usize, _: &mut RngStream) -> Var {
        let rows = (0..samples)
            .flat_map(|s| if s % 2 == 0 { [0.8f64, 0.2] } else { [0.6, 0.4] })
            .map(f64::ln)
            .collect();
        tape.constant(Tensor::matrix(samples, 2, rows).unwrap())
    }
}

#[test]
fn posterior_hinges_on_sampled_model() {
    let mut r = rng::stream(0, &[]);
    assert!((loss_var(&TwoPoint, &[0.0], 0, 0.005, 2, &mut r).unwrap() - 0.005).abs() < 1e-12);
    assert!((loss_del(&TwoPoint, &[0.0], 0, 0.05, 2, &mut r).unwrap() - 0.25).abs() < 1e-12);
    assert_eq!(loss_del(&TwoPoint, &[0.0], 0, 0.3, 2, &mut r).unwrap(), 0.0);
}

/// VAE whose encoder mean is the identity on R².
fn identity_encoder() -> Vae {
    let mut v = Vae::new(2, 4, 2, OutputActivation::Linear, 0).unwrap();
    v.encoder_hidden.weights = Tensor::matrix(2, 4, vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]).unwrap();
    v.encoder_hidden.bias = Tensor::zeros(&[4]);
    v.encoder_mu.weights = Tensor::matrix(4, 2, vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]).unwrap();
    v.encoder_mu.bias = Tensor::zeros(&[2]);
    v
}

#[test]
fn latent_distance_values() {
    let id = identity_encoder();
    assert_eq!(loss_ldist(&id, &[0.0, 0.0], &[1.0, 1.0]).unwrap(), 2.0);
    let vae = Vae::new(3, 5, 2, OutputActivation::Linear, 3).unwrap();
    let mut g = rng::stream(4, &[]);
    for _ in 0..10 {
        let a: Vec<f64> = (0..3).map(|_| g.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| g.random_range(-2.0..2.0)).collect();
        assert_eq!(loss_ldist(&vae, &a, &a).unwrap(), 0.0);
        let (ma, mb) = (vae.encode_mean(&a).unwrap(), vae.encode_mean(&b).unwrap());
        let oracle: f64 = ma.iter().zip(&mb).map(|(u, v)| (u - v).powi(2)).sum();
        assert!((loss_ldist(&vae, &a, &b).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(loss_ldist(&vae, &a, &b).unwrap(), loss_ldist(&vae, &b, &a).unwrap());
    }
}

#[test]
fn membership_boundaries() {
    let s = |mean: f64, variance: f64| PredictiveSummary {
        target_class: 0,
        mean,
        variance,
        sample_count: 2,
        per_sample_probs: vec![mean; 2],
    };
    assert_eq!(delta_eps_membership(&s(0.95, 0.01), 0.05, 0.01), (true, true, true));
    assert_eq!(delta_eps_membership(&s(0.949, 0.0), 0.05, 0.01), (false, true, false));
    assert_eq!(delta_eps_membership(&s(1.0, 0.011), 0.05, 0.01), (true, false, false));
}

#[test]
fn zero_weights_leave_the_input_in_place() {
    let m = linear_model(vec![1.0, -1.0], 1, vec![0.0, 0.0]);
    let cfg = PsceConfig {
        lambda_clf: 0.0,
        lambda_del: 0.0,
        lambda_ldist: 0.0,
        lambda_var: 0.0,
        lambda_elbo: 0.0,
        max_iterations: 50,
        ..full_budget(PsceConfig::default())
    };
    let r = generate_psce(&m, None, &[1.0], None, &cfg, 0, &EvaluationPolicy::default()).unwrap();
    assert_eq!(r.x_cf, vec![1.0]);
    assert_eq!(r.iterations_used, 50);
}

#[test]
fn logistic_counterfactual_moves_along_the_weight() {
    // p(1 | x) = sigmoid(2x); start at x = -1 (class 0) and ask for class 1.
    let m = linear_model(vec![0.0, 2.0], 1, vec![0.0, 0.0]);
    let cfg = full_budget(PsceConfig::default()).classification_only();
    let cfg = PsceConfig {
        max_iterations: 200,
        ..cfg
    };
    let r = generate_psce(&m, None, &[-1.0], None, &cfg, 0, &EvaluationPolicy::default()).unwrap();
    assert_eq!((r.y_orig, r.y_target), (0, 1));
    assert!(r.x_cf[0] > -1.0);
    for w in r.loss_trace.windows(2) {
        assert!(
            w[1].clf.unwrap() < w[0].clf.unwrap(),
            "x' must move monotonically towards class 1"
        );
    }
    // With the sign of w flipped the counterfactual moves the other way.
    let m = linear_model(vec![0.0, -2.0], 1, vec![0.0, 0.0]);
    let r = generate_psce(&m, None, &[1.0], None, &cfg, 0, &EvaluationPolicy::default()).unwrap();
    assert!(r.x_cf[0] < 1.0);
}

#[test]
fn input_already_in_target_class_is_returned() {
    let m = linear_model(vec![0.0, 2.0], 1, vec![0.0, 0.0]);
    let r = generate_psce(
        &m,
        None,
        &[3.0],
        Some(1),
        &PsceConfig::default(),
        0,
        &EvaluationPolicy::default(),
    )
    .unwrap();
    assert!(r.already_target);
    assert_eq!(r.x_cf, vec![3.0]);
    assert_eq!(r.iterations_used, 0);
}

#[test]
fn configuration_errors() {
    let m = linear_model(vec![0.0, 2.0], 1, vec![0.0, 0.0]);
    let p = EvaluationPolicy::default();
    let bad = PsceConfig {
        delta: 1.5,
        ..PsceConfig::default()
    };
    assert!(matches!(
        generate_psce(&m, None, &[0.0], None, &bad, 0, &p),
        Err(Error::InvalidConfig(_))
    ));
    let bad = PsceConfig {
        lambda_var: -1.0,
        ..PsceConfig::default()
    };
    assert!(generate_psce(&m, None, &[0.0], None, &bad, 0, &p).is_err());
    // Latent terms without a VAE.
    assert!(generate_psce(&m, None, &[-1.0], None, &PsceConfig::default(), 0, &p).is_err());
    assert!(matches!(
        generate_psce(
            &m,
            None,
            &[0.0, 1.0],
            None,
            &PsceConfig::default().classification_only(),
            0,
            &p
        ),
        Err(Error::Dimension { .. })
    ));
    assert!(matches!(
        generate_psce(
            &m,
            None,
            &[0.0],
            Some(4),
            &PsceConfig::default().classification_only(),
            0,
            &p
        ),
        Err(Error::InvalidClass { .. })
    ));
}

#[test]
fn diverging_optimization_returns_the_trace() {
    let m = linear_model(vec![0.0, 2.0], 1, vec![0.0, 0.0]);
    let cfg = PsceConfig {
        learning_rate: 1e300,
        ..full_budget(PsceConfig::default()).classification_only()
    };
    match generate_psce(&m, None, &[-1.0], None, &cfg, 0, &EvaluationPolicy::default()) {
        Err(Error::NonFiniteLoss { iteration, trace }) => {
            assert_eq!(trace.len(), iteration + 1);
            assert!(!trace.last().unwrap().total.is_finite());
        }
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

struct Bench {
    model: Classifier,
    vae: Vae,
    points: Vec<Vec<f64>>,
}

fn two_d_benchmark() -> Bench {
    let d = synth_two_gaussians(500, 2, 4.0, 21)
        .unwrap()
        .split(0.1, 1, false)
        .unwrap();
    let mut model = Classifier::Bnn(BayesMlp::new(&tabular_sizes(2, 2), 0.1, 1).unwrap());
    train(
        &mut model,
        &d,
        &d.split.train,
        &TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let mut vae = Vae::tabular(2, 1).unwrap();
    let fit = psce::generative::FitConfig {
        epochs: 20,
        ..Default::default()
    };
    psce::generative::train_vae(&mut vae, &d, &d.split.train, &fit).unwrap();
    let points = d.split.test.iter().take(50).map(|&i| d.row(i).to_vec()).collect();
    Bench { model, vae, points }
}

#[test]
fn psce_is_reproducible_and_meets_constraints_on_two_blobs() {
    let b = two_d_benchmark();
    let policy = EvaluationPolicy::default();
    let cfg = PsceConfig::default();
    let mut inside = 0;
    for (k, x) in b.points.iter().enumerate() {
        let r = generate_psce(&b.model, Some(&b.vae), x, None, &cfg, k as u64, &policy).unwrap();
        assert_eq!(
            r.recompute_flags().unwrap(),
            (r.is_delta_safe, r.is_eps_robust, r.in_delta_eps_set)
        );
        assert_eq!(r.in_delta_eps_set, r.is_delta_safe && r.is_eps_robust);
        inside += r.in_delta_eps_set as usize;
        if k < 3 {
            let again = generate_psce(&b.model, Some(&b.vae), x, None, &cfg, k as u64, &policy).unwrap();
            assert_eq!(again, r);
        }
    }
    assert!(inside >= 45, "{inside} of 50 in the set");
}

#[test]
fn bayescf_limits_and_validity() {
    let b = two_d_benchmark();
    let policy = EvaluationPolicy::default();
    let x = &b.points[0];

    let stiff = BayesCfConfig {
        lambda_prox: 1e9,
        early_stop: EarlyStop::Never,
        max_iterations: 100,
        ..Default::default()
    };
    let r = generate_bayescf(&b.model, x, None, &stiff, 0, &policy).unwrap();
    for (a, c) in r.x_cf.iter().zip(x) {
        assert!((a - c).abs() < 1e-3);
    }

    let free = BayesCfConfig {
        lambda_prox: 0.0,
        early_stop: EarlyStop::Never,
        max_iterations: 150,
        ..Default::default()
    };
    let psce = PsceConfig {
        max_iterations: 150,
        ..full_budget(PsceConfig::default()).classification_only()
    };
    let a = generate_bayescf(&b.model, x, None, &free, 7, &policy).unwrap();
    let c = generate_psce(&b.model, None, x, None, &psce, 7, &policy).unwrap();
    assert_eq!(a.x_cf, c.x_cf);
    let clf = |r: &psce::cegen::CounterfactualResult| r.loss_trace.iter().map(|l| l.clf.unwrap()).collect::<Vec<_>>();
    assert_eq!(clf(&a), clf(&c));

    let valid = b
        .points
        .iter()
        .enumerate()
        .filter(|(k, x)| {
            generate_bayescf(&b.model, x, None, &BayesCfConfig::default(), *k as u64, &policy)
                .unwrap()
                .is_valid
        })
        .count();
    assert!(valid >= 40, "{valid} of 50 valid");
}

#[test]
fn greedy_search_single_feature() {
    let m = linear_model(vec![0.0, 2.0], 1, vec![0.0, 0.0]);
    let cfg = SchutConfig {
        step_size: 0.25,
        max_iterations: 5,
        confidence_threshold: 1.0,
        ..Default::default()
    };
    let r = generate_schut_greedy(&m, &[-1.0], None, &cfg, 0, &EvaluationPolicy::default()).unwrap();
    assert!((r.x_cf[0] - (-1.0 + 5.0 * 0.25)).abs() < 1e-12);
    assert_eq!(r.iterations_used, 5);
}

#[test]
fn greedy_search_prefers_the_steepest_feature() {
    // logit difference 3 x0 + 1 x1: feature 0 has the larger gradient.
    let m = linear_model(vec![0.0, 3.0, 0.0, 1.0], 2, vec![0.0, 0.0]);
    let cfg = SchutConfig {
        max_iterations: 1,
        ..Default::default()
    };
    let r = generate_schut_greedy(&m, &[-1.0, -1.0], None, &cfg, 0, &EvaluationPolicy::default()).unwrap();
    assert!((r.x_cf[0] - (-0.9)).abs() < 1e-12);
    assert_eq!(r.x_cf[1], -1.0);
    // Once feature 0 is exhausted the search turns to feature 1.
    let cfg = SchutConfig {
        max_iterations: 3,
        max_changes_per_feature: 2,
        confidence_threshold: 1.0,
        ..Default::default()
    };
    let r = generate_schut_greedy(&m, &[-1.0, -1.0], None, &cfg, 0, &EvaluationPolicy::default()).unwrap();
    assert!((r.x_cf[0] - (-0.8)).abs() < 1e-12);
    assert!((r.x_cf[1] - (-0.9)).abs() < 1e-12);
}

#[test]
fn greedy_search_without_moves_is_invalid() {
    let m = linear_model(vec![0.0, 2.0], 1, vec![0.0, 0.0]);
    let cfg = SchutConfig {
        max_changes_per_feature: 0,
        ..Default::default()
    };
    let r = generate_schut_greedy(&m, &[-1.0], None, &cfg, 0, &EvaluationPolicy::default()).unwrap();
    assert_eq!(r.x_cf, vec![-1.0]);
    assert!(!r.is_valid);
}
