use psce::cegen::PsceConfig;
use psce::data::{synth_two_gaussians, Dataset};
use psce::experiment::*;
use psce::models::{BayesMlp, Classifier, DropoutMlp};
use psce::Error;

fn data() -> Dataset {
    synth_two_gaussians(250, 4, 4.0, 1)
        .unwrap()
        .split(0.2, 0, false)
        .unwrap()
}

fn quick() -> ModelChangeConfig {
    let psce = PsceConfig {
        max_iterations: 300,
        ..psce::cegen::Preset::Synthetic.psce()
    };
    ModelChangeConfig {
        source: CounterfactualSource::Generate { psce, max_attempts: 10 },
        bounds: psce::bounds::BoundSettings {
            samples: 300,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn small_learning_rate_updates_satisfy_the_bounds() {
    let d = data();
    let r = model_change(&d, &quick()).unwrap();
    let cf = r.baseline.counterfactual.as_ref().unwrap();
    assert!(cf.is_delta_safe && cf.is_valid);
    assert_eq!(r.reports.len(), 5);
    let labels: Vec<_> = r.reports.iter().map(|b| b.label.as_str()).collect();
    assert_eq!(
        labels,
        ["95% → 96%", "96% → 97%", "97% → 98%", "98% → 99%", "99% → 100%"]
    );
    for b in &r.reports {
        assert!(b.kl > 0.0);
        assert!(b.holds_within_mc_error && b.variance_holds_within_mc_error, "{b:?}");
        assert!(b.pinsker_consistent(4.0));
    }
    // Chained: each step starts where the previous one ended.
    for w in r.reports.windows(2) {
        assert_eq!(w[0].after, w[1].before);
    }
}

#[test]
fn kl_grows_with_the_learning_rate() {
    let d = data();
    let sweep = learning_rate_sweep(&d, &quick(), &[1e-5, 1e-4, 1e-1]).unwrap();
    let total = |i: usize| sweep[i].reports.iter().map(|b| b.kl).sum::<f64>();
    assert!(total(0) <= total(1) && total(1) <= total(2));
    for k in 0..5 {
        assert!(sweep[2].reports[k].kl >= 10.0 * sweep[0].reports[k].kl);
    }
    assert_eq!(sweep[0].baseline, sweep[2].baseline);
}

#[test]
fn full_base_set_has_no_increments() {
    let d = data();
    let cfg = ModelChangeConfig {
        base_fraction: 1.0,
        ..quick()
    };
    let r = model_change(&d, &cfg).unwrap();
    assert!(r.reports.is_empty());
}

#[test]
fn given_counterfactual_is_used_as_is() {
    let d = data();
    let cfg = ModelChangeConfig {
        source: CounterfactualSource::Given {
            x_cf: vec![2.0, 0.0, 0.0, 0.0],
            target: 1,
        },
        ..quick()
    };
    let r = model_change(&d, &cfg).unwrap();
    assert!(r.baseline.counterfactual.is_none() && r.baseline.vae.is_none());
    assert!(r.reports.iter().all(|b| b.target_class == 1));
}

#[test]
fn dropout_models_are_rejected() {
    let d = data();
    let mut baseline = prepare_baseline(&d, &quick()).unwrap();
    baseline.model = Classifier::Dropout(DropoutMlp::new(baseline.model.sizes(), 0.5, 0).unwrap());
    let cfg = quick();
    assert!(matches!(
        run_increments(&d, &baseline, &cfg.finetune, &cfg.bounds),
        Err(Error::UnsupportedModel(_))
    ));
}

#[test]
fn fine_tuning_touches_only_the_final_layer() {
    let d = data();
    let b = prepare_baseline(&d, &quick()).unwrap();
    let mut model = b.model.clone();
    let cfg = psce::models::TrainConfig {
        learning_rate: 1e-2,
        ..quick().finetune
    };
    psce::models::train(&mut model, &d, &b.schedule.sets[1], &cfg).unwrap();
    let (Classifier::Bnn(before), Classifier::Bnn(after)) = (&b.model, &model) else {
        panic!()
    };
    let last = before.layers.len() - 1;
    assert_eq!(before.layers[..last], after.layers[..last]);
    assert_ne!(before.layers[last], after.layers[last]);
    let _: &BayesMlp = before;
}
