mod common;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skelfuse::checkpoint::{check_compatible, Checkpoint};
use skelfuse::params::Params;
use skelfuse::tape::Graph;
use skelfuse::training::{evaluate, label_smooth_ce, predict, sample_rng, total_loss};
use skelfuse::{Error, Model, ModelConfig, ModelDims, Prepared, TrainConfig, Variant};

/// Mean cross-entropy of both heads against a random label over fresh
/// initializations of the full-width model.
#[test]
fn fresh_heads_score_near_log_c() {
    let inits = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut pre, mut fin) = (0.0, 0.0);
    for seed in 0..inits {
        let sample = common::random_sample(&mut rng, 4, 5, 3, 3, 4);
        let model = Model::new(common::tiny_config(ModelDims::full(), Variant::Joint), seed).unwrap();
        let x = Prepared::new::<ChaCha8Rng>(&sample, &[0, 1, 2, 3], 0, None);
        let mut g = Graph::new(&model.params);
        let f = model.forward(&mut g, &x).unwrap();
        let label = rng.gen_range(0..3);
        let a = label_smooth_ce(&mut g, f.logits_preliminary, label, 0.0);
        let b = label_smooth_ce(&mut g, f.logits_final.unwrap(), label, 0.0);
        pre += g.scalar(a);
        fin += g.scalar(b);
    }
    let (pre, fin) = (pre / inits as f64, fin / inits as f64);
    let ln_c = 3f64.ln();
    assert!((pre - ln_c).abs() <= 0.1, "preliminary head {pre} vs {ln_c}");
    assert!((fin - ln_c).abs() <= 0.1, "final head {fin} vs {ln_c}");
}

#[test]
fn identical_inputs_give_bitwise_identical_logits() {
    let (model, x) = common::tiny_instance(4, ModelDims::compact());
    let run = || {
        let mut g = Graph::new(&model.params);
        let f = model.forward(&mut g, &x).unwrap();
        (g.value(f.logits_preliminary).clone(), g.value(f.logits_final.unwrap()).clone())
    };
    assert_eq!(run(), run());
}

/// The final-head loss must reach the localizer's parameters: its
/// derivative along a few localizer coordinates is nonzero both
/// analytically and by central differences.
#[test]
fn final_loss_gradient_reaches_the_localizer() {
    let (mut model, x) = common::tiny_instance(21, ModelDims::compact());
    common::perturb(&mut model, 22, 0.05);
    let l_a2 = |params: &Params| {
        let mut g = Graph::new(params);
        let f = model.forward(&mut g, &x).unwrap();
        let l = label_smooth_ce(&mut g, f.logits_final.unwrap(), x.label, 0.1);
        g.scalar(l)
    };
    let mut g = Graph::new(&model.params);
    let f = model.forward(&mut g, &x).unwrap();
    let l = label_smooth_ce(&mut g, f.logits_final.unwrap(), x.label, 0.1);
    let grads = g.backward(l);

    let mut checked = 0;
    for id in model.params.ids().filter(|&id| model.params.name(id).starts_with("loc.")) {
        let analytic = grads.get(id);
        assert!(analytic.iter().any(|&v| v != 0.0), "{} receives no gradient", model.params.name(id));
        let (pos, _) = analytic
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
        let mut work = model.params.clone();
        let h = 1e-5;
        work.get_mut(id).as_slice_mut().unwrap()[pos] += h;
        let up = l_a2(&work);
        work.get_mut(id).as_slice_mut().unwrap()[pos] -= 2.0 * h;
        let down = l_a2(&work);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.as_slice().unwrap()[pos];
        assert!(numeric != 0.0, "{}", model.params.name(id));
        assert!((numeric - a).abs() <= 1e-4 * a.abs().max(1e-6), "{}: {a} vs {numeric}", model.params.name(id));
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn backbone_gradient_comes_only_from_the_preliminary_loss() {
    let (mut model, x) = common::tiny_instance(5, ModelDims::compact());
    common::perturb(&mut model, 6, 0.05);
    let mut g = Graph::new(&model.params);
    let f = model.forward(&mut g, &x).unwrap();
    let l = label_smooth_ce(&mut g, f.logits_final.unwrap(), x.label, 0.1);
    let grads = g.backward(l);
    for id in model.params.ids().filter(|&id| model.params.name(id).starts_with("sgn.")) {
        assert!(grads.get(id).iter().all(|&v| v == 0.0), "{}", model.params.name(id));
    }
}

#[test]
fn zeroing_the_consistency_weight_removes_the_timeline_from_the_loss() {
    let (model, x) = common::tiny_instance(9, ModelDims::compact());
    let cfg = TrainConfig {
        lambda2: 0.0,
        ..TrainConfig::default()
    };
    let mut g = Graph::new(&model.params);
    let f = model.forward(&mut g, &x).unwrap();
    let (total, parts) = total_loss(&mut g, &f, x.label, &cfg);
    assert!(parts.l_con >= 0.0);
    assert_eq!(g.scalar(total), parts.l_a1 + 2.0 * parts.l_a2);
}

#[test]
fn attention_changes_the_final_logits() {
    let (mut model, x) = common::tiny_instance(12, ModelDims::compact());
    common::perturb(&mut model, 13, 0.05);
    let mut g = Graph::new(&model.params);
    let f = model.forward(&mut g, &x).unwrap();
    let informative = g.value(f.logits_final.unwrap()).clone();
    let frames = x.input.frames;
    let slots = x.candidates.slots();
    let mut flat = Array2::from_elem((frames, slots), 1e-6);
    flat.column_mut(0).fill(1.0);
    let att = g.constant(flat);
    let e_o = model.localizer.embed_candidates(&mut g, &x.candidates);
    let zeroed = model.fusion.forward(&mut g, &x.input, att, e_o);
    let diff = (&informative - g.value(zeroed)).iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(diff > 1e-6, "{diff}");
}

#[test]
fn predictions_are_distributions_averaged_over_repeats() {
    let (dataset, samples) = common::random_dataset(30, 8);
    for variant in [Variant::Joint, Variant::NoActionAssist, Variant::SkeletonOnly] {
        let model = Model::new(ModelConfig::for_dataset(&dataset, ModelDims::compact(), variant), 1).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let p = predict(&model, s, &dataset, 5, &mut sample_rng(0, i as u64)).unwrap();
            assert_eq!(p.views.len(), 5);
            assert!((p.probabilities.sum() - 1.0).abs() <= 1e-6);
            let mean: ndarray::Array1<f64> = p
                .views
                .iter()
                .map(|v| {
                    let x = Prepared::new::<ChaCha8Rng>(s, &v.frame_indices, 0, None);
                    model.view(&x).unwrap().probabilities
                })
                .fold(ndarray::Array1::zeros(3), |acc, q| acc + q)
                / 5.0;
            assert!((&mean - &p.probabilities).iter().all(|d| d.abs() <= 1e-12));
            assert_eq!(p.views[0].attention.is_some(), variant != Variant::SkeletonOnly);
        }
    }
}

/// Labels drawn independently of the input leave any predictor at chance:
/// accuracy stays within three binomial deviations of 1/12.
#[test]
fn chance_accuracy_on_unrelated_labels() {
    let (mut dataset, mut samples) = common::random_dataset(31, 600);
    dataset.classes = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for s in &mut samples {
        s.action_label = rng.gen_range(0..12);
    }
    let model = Model::new(ModelConfig::for_dataset(&dataset, ModelDims::compact(), Variant::SkeletonOnly), 2).unwrap();
    let m = evaluate(&model, &samples, &dataset, 1, 0).unwrap();
    let p = 1.0 / 12.0;
    let sigma = (p * (1.0 - p) / samples.len() as f64).sqrt();
    assert!((m.top1_accuracy - p).abs() <= 3.0 * sigma, "{} vs {p} ± {}", m.top1_accuracy, 3.0 * sigma);
    assert!(m.localization_frame_accuracy.is_none());
}

#[test]
fn evaluation_reports_localization_within_unit_interval() {
    let (dataset, samples) = common::random_dataset(33, 10);
    let model = Model::new(ModelConfig::for_dataset(&dataset, ModelDims::compact(), Variant::Joint), 2).unwrap();
    let m = evaluate(&model, &samples, &dataset, 2, 0).unwrap();
    let loc = m.localization_frame_accuracy.unwrap();
    assert!((0.0..=1.0).contains(&loc));
    assert!(m.mean_consistency.unwrap() >= 0.0);
    assert!(matches!(evaluate(&model, &[], &dataset, 1, 0), Err(Error::EmptyDataset)));
}

#[test]
fn checkpoint_file_round_trip_reproduces_predictions() {
    let (dataset, samples) = common::random_dataset(34, 4);
    let model = Model::new(ModelConfig::for_dataset(&dataset, ModelDims::compact(), Variant::Joint), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    Checkpoint::from_model(&model, serde_json::json!({"dataset": dataset})).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    check_compatible(&loaded.manifest.model, &dataset).unwrap();
    let restored = loaded.into_model().unwrap();
    for (i, s) in samples.iter().enumerate() {
        let a = predict(&model, s, &dataset, 3, &mut sample_rng(0, i as u64)).unwrap();
        let b = predict(&restored, s, &dataset, 3, &mut sample_rng(0, i as u64)).unwrap();
        assert!((&a.probabilities - &b.probabilities).iter().all(|d| d.abs() <= 1e-4));
        assert_eq!(a.views[0].frame_indices, b.views[0].frame_indices);
    }

    let mut other = dataset.clone();
    other.classes += 1;
    assert!(matches!(check_compatible(&restored.config, &other), Err(Error::CheckpointMismatch(_))));
    other = dataset.clone();
    other.k = 9;
    assert!(matches!(check_compatible(&restored.config, &other), Err(Error::CheckpointMismatch(_))));
    assert!(matches!(Checkpoint::load(&dir.path().join("missing.ckpt")), Err(Error::Io { .. })));
}
