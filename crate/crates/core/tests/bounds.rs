use psce::bounds::*;
use psce::models::{BayesMlp, Classifier, DropoutMlp, GaussianPosterior, PredictiveSummary};
use psce::rng;
use psce::Error;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(mus: Vec<f64>, variances: Vec<f64>) -> GaussianPosterior {
    GaussianPosterior::new(mus, variances).unwrap()
}

/// Mean and standard error of `ln q(w) − ln p(w)` for `w ~ q`.
fn monte_carlo_kl(q: &GaussianPosterior, p: &GaussianPosterior, n: usize, seed: u64) -> (f64, f64) {
    let mut r = rng::stream(seed, &[]);
    let log_density = |w: f64, mu: f64, var: f64| -0.5 * ((w - mu).powi(2) / var + var.ln());
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut ratio = 0.0;
        for i in 0..q.len() {
            let z: f64 = StandardNormal.sample(&mut r);
            let w = q.mus[i] + q.variances[i].sqrt() * z;
            ratio += log_density(w, q.mus[i], q.variances[i]) - log_density(w, p.mus[i], p.variances[i]);
        }
        sum += ratio;
        sq += ratio * ratio;
    }
    let mean = sum / n as f64;
    (mean, ((sq / n as f64 - mean * mean) / n as f64).sqrt())
}

#[test]
fn kl_examples() {
    let a = gaussian(vec![0.3, -1.0], vec![0.5, 2.0]);
    assert_eq!(diag_gaussian_kl(&a, &a).unwrap(), 0.0);
    let kl = diag_gaussian_kl(&gaussian(vec![1.0], vec![1.0]), &gaussian(vec![0.0], vec![1.0])).unwrap();
    assert!((kl - 0.5).abs() < 1e-15);
    let (mc, se) = monte_carlo_kl(
        &gaussian(vec![1.0], vec![1.0]),
        &gaussian(vec![0.0], vec![1.0]),
        200_000,
        1,
    );
    assert!((mc - 0.5).abs() < 3.0 * se, "{mc} ± {se}");
}

#[test]
fn kl_is_additive_and_asymmetric() {
    let mut r = rng::stream(3, &[]);
    let q = gaussian(
        (0..6).map(|_| r.random_range(-1.0..1.0)).collect(),
        (0..6).map(|_| r.random_range(0.1..2.0)).collect(),
    );
    let p = gaussian(
        (0..6).map(|_| r.random_range(-1.0..1.0)).collect(),
        (0..6).map(|_| r.random_range(0.1..2.0)).collect(),
    );
    let total = diag_gaussian_kl(&q, &p).unwrap();
    let parts: f64 = (0..6)
        .map(|i| {
            diag_gaussian_kl(
                &gaussian(vec![q.mus[i]], vec![q.variances[i]]),
                &gaussian(vec![p.mus[i]], vec![p.variances[i]]),
            )
            .unwrap()
        })
        .sum();
    assert!((total - parts).abs() < 1e-12);
    assert!(total > 0.0);
    assert!((total - diag_gaussian_kl(&p, &q).unwrap()).abs() > 1e-6);
}

#[test]
fn kl_matches_monte_carlo_on_random_pairs() {
    let mut r = rng::stream(5, &[]);
    for k in 0..5 {
        let q = gaussian(
            (0..4).map(|_| r.random_range(-1.0..1.0)).collect(),
            (0..4).map(|_| r.random_range(0.2..2.0)).collect(),
        );
        let p = gaussian(
            (0..4).map(|_| r.random_range(-1.0..1.0)).collect(),
            (0..4).map(|_| r.random_range(0.2..2.0)).collect(),
        );
        let (mc, se) = monte_carlo_kl(&q, &p, 100_000, k);
        let exact = diag_gaussian_kl(&q, &p).unwrap();
        assert!((mc - exact).abs() < 3.0 * se, "pair {k}: {exact} vs {mc} ± {se}");
    }
}

#[test]
fn kl_errors() {
    assert!(matches!(
        diag_gaussian_kl_raw(&[0.0, 1.0], &[1.0, 1.0], &[0.0], &[1.0]),
        Err(Error::Dimension { .. })
    ));
    assert!(matches!(
        diag_gaussian_kl_raw(&[0.0], &[0.0], &[0.0], &[1.0]),
        Err(Error::Contract(_))
    ));
    assert!(diag_gaussian_kl_raw(&[0.0], &[1.0], &[0.0], &[-1.0]).is_err());
}

#[test]
fn lower_bound_examples() {
    assert!((predictive_lower_bound(0.9971, 0.000096) - 0.9832).abs() < 5e-5);
    assert_eq!(predictive_lower_bound(0.7, 0.0), 0.7);
    assert!((conservative_lower_bound(0.05, 0.10125) - 0.5).abs() < 1e-12);
    assert_eq!(predictive_lower_bound(0.1, 1.0), 0.0);
    assert!(raw_predictive_lower_bound(0.1, 1.0) < 0.0);
}

#[test]
fn variance_bound_examples() {
    assert_eq!(variance_upper_bound(0.003, 0.0), 0.003);
    // 0.01 + 6 * sqrt(0.000048) = 0.051569219...
    assert!((variance_upper_bound(0.01, 0.000096) - 0.0516).abs() < 1e-4);
    assert_eq!(variance_upper_bound(0.25, 0.3), 0.25);
    assert!(raw_variance_upper_bound(0.25, 0.3) > 0.25);
}

/// Bisection for the largest kl in `[0, hi]` satisfying `ok`.
fn root(ok: impl Fn(f64) -> bool, hi: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn budget_examples_and_root_finding() {
    assert!((kl_budget_for_delta(0.05, 0.5) - 0.10125).abs() < 1e-12);
    assert_eq!(kl_budget_for_probability(0.5, 0.5), 0.0);
    assert_eq!(kl_budget_for_probability(0.4, 0.5), 0.0);
    assert!((kl_budget_for_delta(0.10, 0.5) - 0.08).abs() < 1e-12);
    let found = root(|kl| predictive_lower_bound(0.9, kl) >= 0.5, 1.0);
    assert!((found - 0.08).abs() < 1e-12);

    assert_eq!(kl_budget_for_variance(0.01, 0.01), 0.0);
    assert!((kl_budget_for_variance(0.005, 0.01) - 0.005f64.powi(2) / 18.0).abs() < 1e-18);
    assert!((kl_budget_for_variance(0.005, 0.01) - 1.3889e-6).abs() < 1e-10);
    assert!((kl_budget_for_variance(0.0, 0.01) - 5.5556e-6).abs() < 1e-10);
    for (eps, cap) in [(0.005, 0.01), (0.0, 0.01)] {
        let found = root(|kl| variance_upper_bound(eps, kl) <= cap, 1.0);
        assert!((found - kl_budget_for_variance(eps, cap)).abs() < 1e-15);
    }
}

#[test]
fn budgets_invert_the_bounds() {
    let mut r = rng::stream(9, &[]);
    for _ in 0..200 {
        let t: f64 = r.random_range(0.0..0.9);
        let p1: f64 = r.random_range(t..1.0);
        let back = predictive_lower_bound(p1, kl_budget_for_probability(p1, t));
        assert!((back - t).abs() < 1e-12);
        let eps: f64 = r.random_range(0.0..0.1);
        let cap: f64 = r.random_range(eps..0.25);
        let back = variance_upper_bound(eps, kl_budget_for_variance(eps, cap));
        assert!((back - cap).abs() < 1e-12);
    }
}

#[test]
fn bounds_are_monotone_in_kl() {
    let kls: Vec<f64> = (0..100).map(|i| (i as f64 * 0.01).powi(2)).collect();
    for w in kls.windows(2) {
        assert!(predictive_lower_bound(0.97, w[1]) <= predictive_lower_bound(0.97, w[0]));
        assert!(variance_upper_bound(0.004, w[1]) >= variance_upper_bound(0.004, w[0]));
    }
}

fn summary(probs: Vec<f64>) -> PredictiveSummary {
    PredictiveSummary::from_probs(1, probs).unwrap()
}

#[test]
fn report_flags_and_invariants() {
    let before = summary(vec![0.99, 0.97, 0.98, 0.96]);
    let after = summary(vec![0.95, 0.96, 0.97, 0.94]);
    let r = BoundReport::from_summaries(&before, &after, 1e-4, 0.05, 3.0).unwrap();
    assert!(r.lower_bound <= r.p1 && r.variance_upper_bound >= r.var1);
    assert!((r.lower_bound - (0.975 - 2.0 * (0.5e-4f64).sqrt())).abs() < 1e-12);
    assert_eq!(r.holds, r.p2 >= r.lower_bound);
    assert_eq!(r.bound_form, BoundForm::ObservedProbability);
    assert!(r.pinsker_consistent(4.0));

    let far = summary(vec![0.5, 0.6, 0.4, 0.5]);
    let r = BoundReport::from_summaries(&before, &far, 1e-6, 0.05, 3.0).unwrap();
    assert!(!r.holds && !r.holds_within_mc_error);
    assert!(!r.pinsker_consistent(4.0));
    assert!(BoundReport::from_summaries(&before, &after, -1.0, 0.05, 3.0).is_err());
    assert_eq!(r.table_record().len(), BoundReport::TABLE_COLUMNS.len());
}

#[test]
fn unchanged_model_has_zero_kl() {
    let m = Classifier::Bnn(BayesMlp::new(&[3, 8, 2], 0.1, 2).unwrap());
    let r = build_bound_report(
        &m,
        &m,
        &[0.1, 0.2, -0.3],
        0,
        &BoundSettings {
            samples: 200,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(r.kl, 0.0);
    assert!(r.holds && r.variance_holds);
    assert!((r.p2 - r.p1).abs() <= 3.0 * r.combined_std_error());
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<BoundReport>(&json).unwrap(), r);
}

#[test]
fn report_rejects_dropout_and_mismatched_models() {
    let bnn = Classifier::Bnn(BayesMlp::new(&[3, 8, 2], 0.1, 2).unwrap());
    let other = Classifier::Bnn(BayesMlp::new(&[3, 4, 2], 0.1, 2).unwrap());
    let drop = Classifier::Dropout(DropoutMlp::new(&[3, 8, 2], 0.5, 2).unwrap());
    let s = BoundSettings::default();
    assert!(matches!(
        build_bound_report(&drop, &bnn, &[0.0; 3], 0, &s),
        Err(Error::UnsupportedModel(_))
    ));
    assert!(matches!(
        build_bound_report(&bnn, &drop, &[0.0; 3], 0, &s),
        Err(Error::UnsupportedModel(_))
    ));
    assert!(matches!(
        build_bound_report(&bnn, &other, &[0.0; 3], 0, &s),
        Err(Error::Dimension { .. })
    ));
}
