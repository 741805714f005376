//! Property checks shared by the focused test files and the acceptance run.
//! Each returns a description of the first violation it finds.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skelfuse::dataset::{
    center_skeleton, rotate_augment, segment_indices, select_candidates, DatasetConfig, Detection, SkeletonSequence,
};
use skelfuse::localizer::{self, EPS_NORM};
use skelfuse::oracles::{self, check_gradients, GradCheckReport};
use skelfuse::params::Params;
use skelfuse::tape::Graph;
use skelfuse::training::{label_smooth_ce, predict, sample_rng, total_loss, LossBreakdown};
use skelfuse::{Model, ModelDims, Prepared, TrainConfig, Variant};

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

/// Worst disagreement of each fast kernel with its loop oracle over
/// `instances` random shapes with `T, N_v <= 6` and `N_o <= 4`.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleErrors {
    pub affinity: f64,
    pub gcn: f64,
    pub timeline: f64,
    pub consistency: f64,
}

impl OracleErrors {
    pub fn max(&self) -> f64 {
        self.affinity.max(self.gcn).max(self.timeline).max(self.consistency)
    }
}

pub fn oracle_errors(instances: usize, seed: u64) -> OracleErrors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let empty = Params::new();
    let mut err = OracleErrors::default();
    for _ in 0..instances {
        let frames = rng.gen_range(1..=6);
        let joints = rng.gen_range(1..=6);
        let slots = rng.gen_range(1..=4);
        let dim = rng.gen_range(1..=8);
        let columns = rng.gen_range(2..=6);

        let f_sa = random_matrix(&mut rng, frames * joints, dim);
        let e_o = random_matrix(&mut rng, frames * slots, dim);
        let s = random_matrix(&mut rng, frames * joints, joints);
        let z = random_matrix(&mut rng, frames * joints, dim);
        let out = rng.gen_range(1..=5);
        let w = random_matrix(&mut rng, dim, out);
        let att = Array2::from_shape_simple_fn((frames, slots), || rng.gen_range(0.01..0.99));
        let cats = Array2::from_shape_simple_fn((frames, slots), || rng.gen_range(0..columns));

        let mut g = Graph::new(&empty);
        let (a, b) = (g.constant(f_sa.clone()), g.constant(e_o.clone()));
        let fast = localizer::joint_object_affinity(&mut g, a, b, frames);
        err.affinity = err.affinity.max(max_abs_diff(g.value(fast), &oracles::naive_affinity(&f_sa, &e_o, frames)));

        let (sv, zv, wv) = (g.constant(s.clone()), g.constant(z.clone()), g.constant(w.clone()));
        let mixed = g.block_matmul(sv, zv, frames);
        let fast = g.matmul(mixed, wv);
        err.gcn = err.gcn.max(max_abs_diff(g.value(fast), &oracles::naive_gcn(&z, &s, &w, frames)));

        let av = g.constant(att.clone());
        let timeline = localizer::category_timeline(&mut g, av, cats.clone(), columns);
        let reference = oracles::naive_timeline(&att, &cats, columns, EPS_NORM);
        err.timeline = err.timeline.max(max_abs_diff(g.value(timeline), &reference));

        let con = localizer::consistency_loss(&mut g, timeline);
        err.consistency = err.consistency.max((g.scalar(con) - oracles::naive_variance(&reference)).abs());
    }
    err
}

/// Learning-rate schedule, loss identity, uniform-logit cross-entropy,
/// simplex predictions and epoch-1 reproducibility of `first_epoch_loss`.
pub fn recipe_fidelity(first_epoch_loss: impl Fn() -> f64) -> Check {
    let cfg = TrainConfig::default();
    let expected = [(1, 1e-3), (60, 1e-3), (61, 1e-4), (90, 1e-4), (91, 1e-5), (110, 1e-5), (111, 1e-6), (120, 1e-6)];
    for (epoch, lr) in expected {
        let got = cfg.learning_rate(epoch);
        ensure((got - lr).abs() <= lr * 1e-12, || format!("lr at epoch {epoch} is {got}, expected {lr}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (a1, a2, con) = (rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0), rng.gen_range(0.0..1.0));
        let b = LossBreakdown::new(a1, a2, con, cfg.lambda1, cfg.lambda2);
        ensure(b.total == a1 + 2.0 * a2 + con, || format!("total {} != {a1} + 2*{a2} + {con}", b.total))?;
    }

    let empty = Params::new();
    for classes in [2usize, 3, 12, 60] {
        for eps in [0.0, 0.1, 0.5] {
            let mut g = Graph::new(&empty);
            let logits = g.constant(Array2::from_elem((1, classes), 0.37));
            let ce = label_smooth_ce(&mut g, logits, classes - 1, eps);
            let got = g.scalar(ce);
            ensure((got - (classes as f64).ln()).abs() <= 1e-6, || {
                format!("uniform CE with C={classes}, eps={eps} is {got}")
            })?;
        }
    }

    let (dataset, samples) = crate::common::random_dataset(9, 6);
    for variant in [Variant::Joint, Variant::SkeletonOnly, Variant::NoActionAssist] {
        let model = Model::new(skelfuse::ModelConfig::for_dataset(&dataset, ModelDims::compact(), variant), 3)
            .map_err(|e| e.to_string())?;
        for (i, sample) in samples.iter().enumerate() {
            let p = predict(&model, sample, &dataset, 5, &mut sample_rng(1, i as u64)).map_err(|e| e.to_string())?;
            let sum: f64 = p.probabilities.sum();
            ensure((sum - 1.0).abs() <= 1e-6 && p.probabilities.iter().all(|&v| v >= 0.0), || {
                format!("{variant:?} prediction sums to {sum}")
            })?;
        }
    }

    let (a, b) = (first_epoch_loss(), first_epoch_loss());
    ensure(a.to_bits() == b.to_bits(), || format!("epoch-1 loss differs between runs: {a} vs {b}"))
}

fn random_sequence(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> SkeletonSequence {
    let joints = Array3::from_shape_simple_fn((frames, joints, 3), || rng.gen_range(-2.0..2.0));
    SkeletonSequence::new(joints, 0).unwrap()
}

fn pairwise_distances(seq: &SkeletonSequence) -> Vec<f64> {
    let (frames, joints) = (seq.frame_count(), seq.joint_count());
    let mut out = Vec::new();
    for t in 0..frames {
        for i in 0..joints {
            for j in i + 1..joints {
                let d: f64 = (0..3).map(|c| (seq.joints[[t, i, c]] - seq.joints[[t, j, c]]).powi(2)).sum();
                out.push(d.sqrt());
            }
        }
    }
    out
}

pub fn centering(rng: &mut ChaCha8Rng) -> Check {
    let frames = rng.gen_range(1..12);
    let joints = rng.gen_range(1..16);
    let seq = random_sequence(rng, frames, joints);
    let reference = rng.gen_range(0..joints);
    let once = center_skeleton(&seq, reference);
    let twice = center_skeleton(&once, reference);
    let idem = once.joints.iter().zip(&twice.joints).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(idem <= 1e-6, || format!("centering is not idempotent (diff {idem:e})"))?;
    let offset = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
    let mut shifted = seq.clone();
    for (idx, v) in shifted.joints.indexed_iter_mut() {
        *v += offset[idx.2];
    }
    let moved = center_skeleton(&shifted, reference);
    let cancel = once.joints.iter().zip(&moved.joints).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(cancel <= 1e-6, || format!("translation survives centering (diff {cancel:e})"))
}

pub fn rotation(rng: &mut ChaCha8Rng) -> Check {
    let (frames, joints) = (rng.gen_range(1..8), rng.gen_range(2..16));
    let seq = random_sequence(rng, frames, joints);
    let degrees = rng.gen_range(0.0..180.0);
    let rotated = rotate_augment(&seq, rng, degrees);
    let worst = pairwise_distances(&seq)
        .iter()
        .zip(pairwise_distances(&rotated))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 1e-5, || format!("rotation by up to {degrees:.1} degrees moved a distance by {worst:e}"))
}

pub fn candidate_selection(rng: &mut ChaCha8Rng) -> Check {
    let categories = rng.gen_range(2..10);
    let slots = rng.gen_range(1..12);
    let config = DatasetConfig {
        joints: 5,
        candidates: slots,
        categories,
        classes: 2,
        k: 4,
        score_threshold: 0.1,
        prior_union: (0..categories).filter(|_| rng.gen_bool(0.7)).collect::<BTreeSet<_>>(),
        rotation_max_degrees: 0.0,
        seed: 0,
        reference_joint: 0,
    };
    let mut detections: Vec<Detection> = (0..rng.gen_range(0..20))
        .map(|_| {
            let (x, y) = (rng.gen_range(0.0..500.0), rng.gen_range(0.0..400.0));
            Detection {
                bbox: [x, y, x + rng.gen_range(1.0..100.0), y + rng.gen_range(1.0..100.0)],
                score: rng.gen_range(0.0..1.0),
                category_id: rng.gen_range(0..categories),
            }
        })
        .collect();
    let size = [640.0, 480.0];
    let picked = select_candidates(&detections, &config, size);
    ensure(picked.len() == slots, || format!("{} slots instead of {slots}", picked.len()))?;
    ensure(picked[0].category_id == categories && picked[0].bbox == [0.0; 4], || "slot 0 is not background".into())?;
    for c in &picked[1..] {
        let background = c.category_id == categories;
        ensure(background || (config.prior_union.contains(&c.category_id) && c.score > 0.1), || {
            format!("slot holds a filtered-out detection {c:?}")
        })?;
    }
    detections.shuffle(rng);
    ensure(select_candidates(&detections, &config, size) == picked, || "selection depends on input order".into())
}

/// One index per segment of the (padded) index pool, in order.
pub fn frame_sampling(rng: &mut ChaCha8Rng) -> Check {
    let frames = rng.gen_range(1..=300);
    let k = rng.gen_range(1..=40);
    let idx = segment_indices(frames, k, rng);
    ensure(idx.len() == k, || format!("T={frames}, k={k}: {} indices", idx.len()))?;
    ensure(idx.windows(2).all(|w| w[0] <= w[1]), || format!("T={frames}, k={k}: indices decrease"))?;
    ensure(idx.iter().all(|&i| i < frames), || format!("T={frames}, k={k}: index out of range"))?;
    if frames >= k {
        ensure(idx.windows(2).all(|w| w[0] < w[1]), || format!("T={frames}, k={k}: repeated index"))?;
        for (i, &t) in idx.iter().enumerate() {
            // The first T % k segments are one frame longer.
            let (base, extra) = (frames / k, frames % k);
            let start = i * base + i.min(extra);
            let end = start + base + usize::from(i < extra);
            ensure((start..end).contains(&t), || format!("T={frames}, k={k}: index {t} outside segment {i} [{start}, {end})"))?;
        }
    } else {
        let copies = k.div_ceil(frames);
        let pool: Vec<usize> = (0..frames).flat_map(|t| std::iter::repeat(t).take(copies)).collect();
        let (base, extra) = (pool.len() / k, pool.len() % k);
        for (i, &t) in idx.iter().enumerate() {
            let start = i * base + i.min(extra);
            let end = start + base + usize::from(i < extra);
            ensure(pool[start..end].contains(&t), || format!("T={frames}, k={k}: index {t} not in padded segment {i}"))?;
        }
    }
    Ok(())
}

/// Runs a property `cases` times from one seed.
pub fn repeat(cases: usize, seed: u64, mut property: impl FnMut(&mut ChaCha8Rng) -> Check) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases).try_for_each(|_| property(&mut rng))
}

pub fn data_path_invariants() -> Check {
    repeat(200, 1, centering)?;
    repeat(200, 2, rotation)?;
    repeat(500, 3, candidate_selection)?;
    repeat(1000, 4, frame_sampling)
}

/// The weighted objective with the detached action distribution held at `probs`.
pub fn objective(model: &Model, params: &Params, x: &Prepared, probs: &Array1<f64>, cfg: &TrainConfig) -> f64 {
    let mut g = Graph::new(params);
    let f = model.forward_conditioned(&mut g, x, Some(probs)).unwrap();
    let (total, _) = total_loss(&mut g, &f, x.label, cfg);
    g.scalar(total)
}

/// Every coordinate of every tensor of the compact model on the k = 4,
/// N_v = 5, N_o = 3, C = 3 instance, step 1e-5, tolerance 1e-4.
pub fn compact_gradient_report() -> GradCheckReport {
    let cfg = TrainConfig::default();
    let (mut model, x) = crate::common::tiny_instance(11, ModelDims::compact());
    crate::common::perturb(&mut model, 12, 0.05);
    let mut g = Graph::new(&model.params);
    let f = model.forward(&mut g, &x).unwrap();
    let probs = f.action_probs.clone();
    let (total, _) = total_loss(&mut g, &f, x.label, &cfg);
    let grads = g.backward(total);
    check_gradients(&model.params, &grads, |p| objective(&model, p, &x, &probs, &cfg), 1e-5, 1e-4, None).unwrap()
}
