#![allow(dead_code)]

pub mod checks;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelfuse::dataset::{Candidate, CandidateSet, DatasetConfig, Sample, SkeletonSequence};
use skelfuse::{Model, ModelConfig, ModelDims, Prepared, Variant};

/// A random sample with `frames` frames, `joints` joints and `slots`
/// candidates per frame (slot 0 background).
pub fn random_sample(rng: &mut ChaCha8Rng, frames: usize, joints: usize, slots: usize, classes: usize, categories: usize) -> Sample {
    let joints_arr = Array3::from_shape_simple_fn((frames, joints, 3), || rng.gen_range(-1.0..1.0));
    let skeleton = SkeletonSequence::new(joints_arr, 0).unwrap();
    let frames_c = (0..frames)
        .map(|_| {
            let mut f = vec![Candidate::background(categories)];
            for _ in 1..slots {
                f.push(Candidate {
                    bbox: [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3)],
                    score: rng.gen_range(0.2..1.0),
                    category_id: rng.gen_range(0..categories),
                });
            }
            f
        })
        .collect();
    Sample {
        video_id: "v".into(),
        skeleton,
        candidates: CandidateSet::new(frames_c).unwrap(),
        action_label: rng.gen_range(0..classes),
        gt_object: None,
    }
}

pub fn tiny_config(dims: ModelDims, variant: Variant) -> ModelConfig {
    ModelConfig {
        joints: 5,
        classes: 3,
        categories: 4,
        max_frames: 4,
        dims,
        variant,
    }
}

/// The k=4, N_v=5, N_o=3, C=3 instance.
pub fn tiny_instance(seed: u64, dims: ModelDims) -> (Model, Prepared) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = random_sample(&mut rng, 4, 5, 3, 3, 4);
    let model = Model::new(tiny_config(dims, Variant::Joint), seed).unwrap();
    let x = Prepared::new::<ChaCha8Rng>(&sample, &[0, 1, 2, 3], 0, None);
    (model, x)
}

/// Moves every parameter by U(-scale, scale) so that no rectifier or max
/// sits exactly on a tie, as it does at the zero-bias initialization.
pub fn perturb(model: &mut Model, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in model.params.ids().collect::<Vec<_>>() {
        model.params.get_mut(id).mapv_inplace(|v| v + rng.gen_range(-scale..scale));
    }
}

/// A small random dataset (5 joints, 4 slots, 3 classes, 4 categories,
/// k = 4) with ground-truth slots, sequence lengths between 2 and 9.
pub fn random_dataset(seed: u64, n: usize) -> (DatasetConfig, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dataset = DatasetConfig {
        joints: 5,
        candidates: 4,
        categories: 4,
        classes: 3,
        k: 4,
        score_threshold: 0.1,
        prior_union: (0..4).collect(),
        rotation_max_degrees: 0.0,
        seed,
        reference_joint: 0,
    };
    let samples = (0..n)
        .map(|i| {
            let frames = rng.gen_range(2..10);
            let mut s = random_sample(&mut rng, frames, 5, 4, 3, 4);
            s.video_id = format!("v{i}");
            s.gt_object = Some((0..frames).map(|_| Some(rng.gen_range(1..4))).collect());
            s
        })
        .collect();
    (dataset, samples)
}
