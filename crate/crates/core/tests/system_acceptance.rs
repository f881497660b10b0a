//! Acceptance checks. Each test writes one `PASS`/`FAIL` line to stdout,
//! bypassing the test harness capture so the lines are always visible.

use std::io::Write;
use std::sync::OnceLock;

use psce::bounds::{diag_gaussian_kl, kl_budget_for_delta, pinsker_tv, predictive_lower_bound};
use psce::cegen::loss::{elbo_term, ldist_term, posterior_terms};
use psce::cegen::{generate_bayescf, generate_psce, BayesCfConfig, CounterfactualResult, EvaluationPolicy, PsceConfig};
use psce::data::synth_two_gaussians;
use psce::experiment::{learning_rate_sweep, ModelChangeConfig, ModelChangeReport};
use psce::generative::{ClassAutoencoder, ElboEstimator, OutputActivation, Vae};
use psce::metrics::{im1, implausibility, robustness_ratio, validity, validity_under, Distance, Perturbation};
use psce::models::{
    tabular_sizes, train, BayesMlp, Classifier, DenseLayer, GaussianPosterior, PredictiveSummary, TrainConfig,
};
use psce::rng::{self, RngStream};
use psce::tape::{ComputationTape, Var};
use psce::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(id: usize, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "\ncriterion {id:>2} {name}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn check(id: usize, name: &str, pass: bool, detail: String) {
    report(id, name, pass, &detail);
    assert!(pass, "criterion {id} {name}: {detail}");
}

#[test]
fn c01_kl_budget_exactness() {
    let budget = kl_budget_for_delta(0.05, 0.5);
    let back = predictive_lower_bound(0.95, budget);
    let pass = (budget - 0.10125).abs() <= 1e-12 && (back - 0.5).abs() <= 1e-12;
    check(
        1,
        "kl budget",
        pass,
        format!("budget {budget:.15}, bound at budget {back:.15}"),
    );
}

#[test]
fn c02_bound_arithmetic() {
    // (p1, KL, reference bound) per update row.
    let rows = [
        ("95% → 96%", 0.9977, 0.000330, 0.9720),
        ("96% → 97%", 0.9981, 0.000355, 0.9714),
        ("97% → 98%", 0.9971, 0.000096, 0.9832),
        ("98% → 99%", 0.9976, 0.000423, 0.9685),
        ("99% → 100%", 0.9998, 0.000477, 0.9689),
    ];
    let pinned = (predictive_lower_bound(0.9971, 0.000096) - 0.9832).abs();
    let mut misses = Vec::new();
    let mut worst: f64 = 0.0;
    for (label, p1, kl, reference) in rows {
        let got = predictive_lower_bound(p1, kl);
        let diff = (got - reference).abs();
        worst = worst.max(diff);
        if diff > 5e-5 {
            misses.push(format!("{label}: {got:.7} vs {reference} (off by {diff:.2e})"));
        }
    }
    let pass = pinned <= 5e-5 && misses.is_empty();
    let detail = if misses.is_empty() {
        format!("pinned row off by {pinned:.2e}, worst row {worst:.2e}")
    } else {
        format!(
            "pinned row off by {pinned:.2e}; rows outside 5e-5: {}; the reference bounds equal the recomputed values truncated to four decimals",
            misses.join("; ")
        )
    };
    check(2, "bound arithmetic", pass, detail);
}

/// Base model, δ-safe counterfactual and learning-rate sweep shared by 3, 9 and 10.
fn sweep() -> &'static Vec<ModelChangeReport> {
    static SWEEP: OnceLock<Vec<ModelChangeReport>> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let data = synth_two_gaussians(1000, 10, 4.0, 0)
            .unwrap()
            .split(0.2, 0, false)
            .unwrap();
        learning_rate_sweep(&data, &ModelChangeConfig::default(), &[1e-5, 1e-4, 1e-1]).unwrap()
    })
}

#[test]
fn c03_model_change_replication() {
    let run = &sweep()[0];
    assert_eq!(run.learning_rate, 1e-5);
    let cf = run.baseline.counterfactual.as_ref().expect("generated counterfactual");
    let n = run.reports.len();
    let holds = run.reports.iter().filter(|r| r.holds_within_mc_error).count();
    let var_holds = run.reports.iter().filter(|r| r.variance_holds_within_mc_error).count();
    let samples_ok = run.reports.iter().all(|r| r.samples == 1000);
    let pass = cf.is_delta_safe && n == 5 && holds == 5 && var_holds == 5 && samples_ok;
    let kls: Vec<String> = run.reports.iter().map(|r| format!("{:.1e}", r.kl)).collect();
    check(
        3,
        "model-change replication",
        pass,
        format!(
            "p1 {:.4}, {n} increments, probability bound {holds}/{n}, variance bound {var_holds}/{n}, kl [{}]",
            cf.final_summary.mean,
            kls.join(", ")
        ),
    );
}

/// Mean and standard error of `ln q(w) − ln p(w)` for `w ~ q`.
fn monte_carlo_kl(q: &GaussianPosterior, p: &GaussianPosterior, n: usize, r: &mut RngStream) -> (f64, f64) {
    let log_density = |w: f64, mu: f64, var: f64| -0.5 * ((w - mu).powi(2) / var + var.ln());
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut ratio = 0.0;
        for i in 0..q.len() {
            let z: f64 = StandardNormal.sample(r);
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
fn c04_closed_form_kl() {
    let mut r = rng::stream(404, &[]);
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    for _ in 0..20 {
        let mut draw = || {
            let mus = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
            let vars = (0..10).map(|_| r.random_range(0.3..2.0)).collect();
            GaussianPosterior::new(mus, vars).unwrap()
        };
        let (q, p) = (draw(), draw());
        let exact = diag_gaussian_kl(&q, &p).unwrap();
        let (mc, se) = monte_carlo_kl(&q, &p, 1_000_000, &mut r);
        let z = (mc - exact).abs() / se;
        worst = worst.max(z);
        fails += (z > 3.0) as usize;
    }
    check(
        4,
        "closed-form kl",
        fails == 0,
        format!("20 pairs, worst deviation {worst:.2} standard errors"),
    );
}

fn gradient_error(f: impl Fn(&[f64]) -> (f64, Vec<f64>), x: &[f64]) -> f64 {
    let (_, g) = f(x);
    let h = 1e-4;
    let fd: Vec<f64> = (0..x.len())
        .map(|j| {
            let mut p = x.to_vec();
            p[j] += h;
            let mut m = x.to_vec();
            m[j] -= h;
            (f(&p).0 - f(&m).0) / (2.0 * h)
        })
        .collect();
    let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm(&g).max(norm(&fd)).max(1e-300)
}

#[test]
fn c05_gradient_integrity() {
    let names = ["clf", "del", "var", "ldist", "elbo"];
    let mut worst = [0.0f64; 5];
    let mut r = rng::stream(505, &[]);
    for config in 0..10u64 {
        let dim = r.random_range(2..6);
        let classes = r.random_range(2..4);
        let hidden = r.random_range(3..8);
        let model = BayesMlp::new(&[dim, hidden, classes], 0.1, config).unwrap();
        let vae = Vae::new(
            dim,
            r.random_range(3..7),
            r.random_range(1..4),
            OutputActivation::Linear,
            config,
        )
        .unwrap();
        let x0: Vec<f64> = (0..dim).map(|_| r.random_range(-1.5..1.5)).collect();
        let anchor: Vec<f64> = (0..dim).map(|_| r.random_range(-1.5..1.5)).collect();
        let mu_orig = vae.encode_mean(&anchor).unwrap();
        let target = r.random_range(0..classes);
        let seed = r.random::<u64>();
        let samples = 8;

        // Hinges are kept strictly active so that the finite differences never straddle the kink.
        let variance_at_x0 = {
            let mut tape = ComputationTape::new();
            let xv = tape.constant(Tensor::vector(x0.clone()));
            let t = posterior_terms(
                &mut tape,
                &model,
                xv,
                target,
                0.0,
                0.0,
                samples,
                &mut rng::stream(seed, &[]),
            );
            tape.value(t.variance).item()
        };
        let delta = 0.01;
        let epsilon = 0.5 * variance_at_x0;

        for (k, name) in names.iter().enumerate() {
            let f = |x: &[f64]| -> (f64, Vec<f64>) {
                let mut tape = ComputationTape::new();
                let xv = tape.leaf(Tensor::vector(x.to_vec()));
                let out: Var = match *name {
                    "clf" | "del" | "var" => {
                        let t = posterior_terms(
                            &mut tape,
                            &model,
                            xv,
                            target,
                            delta,
                            epsilon,
                            samples,
                            &mut rng::stream(seed, &[]),
                        );
                        match *name {
                            "clf" => t.clf,
                            "del" => t.del,
                            _ => t.var,
                        }
                    }
                    "ldist" => {
                        let vars = vae.bind(&mut tape, false);
                        ldist_term(&mut tape, &vae, &vars, &mu_orig, xv)
                    }
                    _ => {
                        let vars = vae.bind(&mut tape, false);
                        let mut noise = rng::stream(seed, &[1]);
                        elbo_term(&mut tape, &vae, &vars, xv, ElboEstimator::ClosedFormKl, &mut noise)
                    }
                };
                let g = tape.backward(out).unwrap().wrt(xv).into_data();
                (tape.value(out).item(), g)
            };
            worst[k] = worst[k].max(gradient_error(f, &x0));
        }
    }
    let pass = worst.iter().all(|e| *e <= 1e-3);
    let detail: Vec<String> = names.iter().zip(&worst).map(|(n, e)| format!("{n} {e:.1e}")).collect();
    check(
        5,
        "gradient integrity",
        pass,
        format!("10 configurations, worst relative error: {}", detail.join(", ")),
    );
}

struct Benchmark {
    model: Classifier,
    vae: Vae,
    points: Vec<Vec<f64>>,
}

/// Two 2-D unit Gaussian blobs four standard deviations apart.
fn benchmark() -> &'static Benchmark {
    static BENCH: OnceLock<Benchmark> = OnceLock::new();
    BENCH.get_or_init(|| {
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
        Benchmark { model, vae, points }
    })
}

fn psce_results() -> &'static Vec<CounterfactualResult> {
    static RESULTS: OnceLock<Vec<CounterfactualResult>> = OnceLock::new();
    RESULTS.get_or_init(|| {
        let b = benchmark();
        let policy = EvaluationPolicy::default();
        b.points
            .iter()
            .enumerate()
            .map(|(k, x)| {
                generate_psce(
                    &b.model,
                    Some(&b.vae),
                    x,
                    None,
                    &PsceConfig::default(),
                    k as u64,
                    &policy,
                )
                .unwrap()
            })
            .collect()
    })
}

#[test]
fn c06_set_attainment() {
    let results = psce_results();
    let inside = results.iter().filter(|r| r.in_delta_eps_set).count();
    let valid = results.iter().filter(|r| r.is_valid).count();
    let pass = results.len() == 50 && inside * 10 >= 9 * results.len() && valid == results.len();
    check(
        6,
        "⟨δ,ε⟩-set attainment",
        pass,
        format!("{inside}/50 in the set, {valid}/50 valid"),
    );
}

#[test]
fn c07_directional_superiority() {
    let b = benchmark();
    let policy = EvaluationPolicy::default();
    let psce = psce_results();
    let bayescf: Vec<CounterfactualResult> = b
        .points
        .iter()
        .enumerate()
        .map(|(k, x)| generate_bayescf(&b.model, x, None, &BayesCfConfig::default(), k as u64, &policy).unwrap())
        .collect();
    let mean_var =
        |rs: &[CounterfactualResult]| rs.iter().map(|r| r.final_summary.variance).sum::<f64>() / rs.len() as f64;
    let (a, c) = (mean_var(psce), mean_var(&bayescf));
    check(
        7,
        "directional superiority",
        a <= c,
        format!("mean variance psce {a:.3e}, bayescf {c:.3e}"),
    );
}

fn random_vec(r: &mut RngStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-2.0..2.0)).collect()
}

fn random_layer(r: &mut RngStream, inputs: usize, outputs: usize) -> DenseLayer {
    DenseLayer {
        weights: Tensor::matrix(inputs, outputs, random_vec(r, inputs * outputs)).unwrap(),
        bias: Tensor::vector(random_vec(r, outputs)),
    }
}

/// Row-major `x W + b`, ReLU on every layer but the last.
fn loop_forward(layers: &[DenseLayer], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (li, l) in layers.iter().enumerate() {
        let (n_in, n_out) = (l.weights.shape()[0], l.weights.shape()[1]);
        let mut out = vec![0.0; n_out];
        for o in 0..n_out {
            let mut acc = l.bias.data()[o];
            for i in 0..n_in {
                acc += h[i] * l.weights.data()[i * n_out + o];
            }
            out[o] = if li + 1 < layers.len() { acc.max(0.0) } else { acc };
        }
        h = out;
    }
    h
}

fn loop_sq(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

/// Single-layer BNN with effectively zero posterior variance.
fn linear_bnn(r: &mut RngStream, inputs: usize, classes: usize) -> (BayesMlp, DenseLayer) {
    let layer = random_layer(r, inputs, classes);
    let mut m = BayesMlp::new(&[inputs, classes], 0.1, 0).unwrap();
    let l = &mut m.layers[0];
    l.weight_mu = layer.weights.clone();
    l.bias_mu = layer.bias.clone();
    l.weight_log_sigma = l.weight_log_sigma.map(|_| -30.0);
    l.bias_log_sigma = l.bias_log_sigma.map(|_| -30.0);
    (m, layer)
}

fn result_at(x_cf: Vec<f64>, target: usize, valid: bool) -> CounterfactualResult {
    CounterfactualResult {
        method: "oracle".into(),
        x_orig: vec![0.0; x_cf.len()],
        x_cf,
        y_orig: 0,
        y_target: target,
        iterations_used: 0,
        already_target: false,
        loss_trace: Vec::new(),
        final_summary: PredictiveSummary::from_probs(target, vec![0.5, 0.5]).unwrap(),
        delta: 0.05,
        epsilon: 0.01,
        is_valid: valid,
        is_delta_safe: false,
        is_eps_robust: true,
        in_delta_eps_set: false,
    }
}

#[test]
fn c08_metric_oracles() {
    let mut r = rng::stream(808, &[]);
    let mut bad = [0usize; 4];
    for _ in 0..100 {
        let d = r.random_range(1..6);
        let h = r.random_range(1..6);

        let ta = vec![random_layer(&mut r, d, h), random_layer(&mut r, h, d)];
        let oa = vec![random_layer(&mut r, d, h), random_layer(&mut r, h, d)];
        let x = random_vec(&mut r, d);
        let den = loop_sq(&x, &loop_forward(&oa, &x));
        if den > 1e-6 {
            let oracle = loop_sq(&x, &loop_forward(&ta, &x)) / den;
            let t = ClassAutoencoder::from_layers(1, ta).unwrap();
            let o = ClassAutoencoder::from_layers(0, oa).unwrap();
            bad[0] += !close(im1(&x, &t, &o).unwrap(), oracle) as usize;
        }

        let set: Vec<Vec<f64>> = (0..r.random_range(1..25)).map(|_| random_vec(&mut r, d)).collect();
        let mut oracle = 0.0;
        for p in &set {
            oracle += loop_sq(p, &x).sqrt();
        }
        oracle /= set.len() as f64;
        bad[1] += !close(
            implausibility(&x, set.iter().map(Vec::as_slice), Distance::L2).unwrap(),
            oracle,
        ) as usize;

        let cf = random_vec(&mut r, d);
        let kappa = r.random_range(1e-4..0.5);
        let gain = random_vec(&mut r, d);
        let generator = |v: &[f64]| -> Vec<f64> { v.iter().zip(&gain).map(|(a, g)| a + g * a.sin()).collect() };
        let mut shifted = x.clone();
        for v in &mut shifted {
            *v += kappa;
        }
        let oracle = loop_sq(&generator(&shifted), &cf) / loop_sq(&cf, &x);
        let got = robustness_ratio(|v: &[f64]| Ok(generator(v)), &x, &cf, kappa, Perturbation::Constant).unwrap();
        bad[2] += !close(got, oracle) as usize;

        let classes = r.random_range(2..5);
        let (model, layer) = linear_bnn(&mut r, d, classes);
        let results: Vec<CounterfactualResult> = (0..r.random_range(1..15))
            .map(|_| result_at(random_vec(&mut r, d), r.random_range(0..classes), r.random_bool(0.5)))
            .collect();
        let mut hits = 0;
        let mut flagged = 0;
        for res in &results {
            let logits = loop_forward(std::slice::from_ref(&layer), &res.x_cf);
            let mut best = 0;
            for k in 1..classes {
                if logits[k] > logits[best] {
                    best = k;
                }
            }
            hits += (best == res.y_target) as usize;
            flagged += res.is_valid as usize;
        }
        let n = results.len() as f64;
        let under = validity_under(&model, &results, &EvaluationPolicy::default()).unwrap();
        bad[3] += (!close(under, hits as f64 / n) || !close(validity(&results).unwrap(), flagged as f64 / n)) as usize;
    }
    let names = ["im1", "implausibility", "robustness_ratio", "validity"];
    let detail: Vec<String> = names
        .iter()
        .zip(&bad)
        .map(|(n, b)| format!("{n} {}/100", 100 - b))
        .collect();
    check(
        8,
        "metric oracles",
        bad.iter().all(|b| *b == 0),
        format!("agreeing cases: {}", detail.join(", ")),
    );
}

#[test]
fn c09_pinsker_consistency() {
    let mut total = 0;
    let mut ok = 0;
    let mut tightest = f64::INFINITY;
    for run in sweep() {
        for rep in &run.reports {
            total += 1;
            ok += rep.pinsker_consistent(4.0) as usize;
            let room = 2.0 * pinsker_tv(rep.kl) + 4.0 * rep.combined_std_error() - (rep.p2 - rep.p1).abs();
            tightest = tightest.min(room);
        }
    }
    check(
        9,
        "pinsker consistency",
        total > 0 && ok == total,
        format!(
            "{ok}/{total} updates across {} runs, smallest margin {tightest:.2e}",
            sweep().len()
        ),
    );
}

#[test]
fn c10_learning_rate_sensitivity() {
    let runs = sweep();
    let (slow, fast) = (&runs[0], &runs[1]);
    assert_eq!((slow.learning_rate, fast.learning_rate), (1e-5, 1e-4));
    let paired = slow.reports.len() == fast.reports.len() && !slow.reports.is_empty();
    let per_step = slow
        .reports
        .iter()
        .zip(&fast.reports)
        .filter(|(a, b)| b.kl >= a.kl)
        .count();
    let sum = |r: &ModelChangeReport| r.reports.iter().map(|x| x.kl).sum::<f64>();
    let pass = paired && per_step == slow.reports.len();
    check(
        10,
        "learning-rate sensitivity",
        pass,
        format!(
            "kl(1e-4) >= kl(1e-5) in {per_step}/{} increments, totals {:.2e} vs {:.2e}",
            slow.reports.len(),
            sum(fast),
            sum(slow)
        ),
    );
}
