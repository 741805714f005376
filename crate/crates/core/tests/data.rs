mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::checks;
use skelfuse::dataset::{
    generate_records, load_dataset_dir, read_meta, segment_indices, write_dataset_dir, write_meta, SynthConfig,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn centering_is_idempotent_and_cancels_translation(seed in any::<u64>()) {
        let r = checks::centering(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(r.is_ok(), "{:?}", r);
    }

    #[test]
    fn rotation_is_rigid(seed in any::<u64>()) {
        let r = checks::rotation(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(r.is_ok(), "{:?}", r);
    }

    #[test]
    fn candidate_selection_has_fixed_slots_and_background_first(seed in any::<u64>()) {
        let r = checks::candidate_selection(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(r.is_ok(), "{:?}", r);
    }

    #[test]
    fn frame_sampling_draws_one_index_per_segment(seed in any::<u64>()) {
        let r = checks::frame_sampling(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(r.is_ok(), "{:?}", r);
    }
}

#[test]
fn frame_sampling_law_on_a_thousand_pairs() {
    checks::repeat(1000, 99, checks::frame_sampling).unwrap();
}

#[test]
fn every_draw_for_three_frames_into_five() {
    // Padded pool [0,0,1,1,2,2] in segments [0,0] [1] [1] [2] [2].
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..200 {
        seen.insert(segment_indices(3, 5, &mut ChaCha8Rng::seed_from_u64(seed)));
    }
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![vec![0, 1, 1, 2, 2]]);
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        train_samples: 24,
        test_samples: 8,
        seed: 3,
        ..SynthConfig::default()
    }
}

#[test]
fn synthetic_dataset_survives_a_disk_round_trip() {
    let cfg = small_synth();
    let (train, test) = generate_records(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_meta(dir.path(), &cfg.dataset_config()).unwrap();
    write_dataset_dir(&dir.path().join("train"), &train).unwrap();
    write_dataset_dir(&dir.path().join("test"), &test).unwrap();

    let meta = read_meta(dir.path()).unwrap();
    assert_eq!(meta, cfg.dataset_config());
    let loaded = load_dataset_dir(&dir.path().join("train"), &meta).unwrap();
    assert_eq!(loaded.len(), train.len());
    for (sample, raw) in loaded.iter().zip(&train) {
        assert_eq!(sample.video_id, raw.skeleton.video_id);
        assert_eq!(sample.action_label, raw.skeleton.action_label);
        assert_eq!(sample.candidates.slots(), meta.candidates);
        let gt = sample.gt_object.as_ref().expect("synthetic data carries ground truth");
        assert_eq!(gt.len(), sample.frame_count());
        for (t, slot) in gt.iter().enumerate() {
            let slot = slot.expect("noise-free object is always detected");
            let c = sample.candidates.frames[t][slot];
            assert_eq!(c.category_id, sample.action_label, "true object has the action's category");
        }
    }
    assert_eq!(load_dataset_dir(&dir.path().join("test"), &meta).unwrap().len(), test.len());
}

#[test]
fn generation_is_reproducible_and_labels_are_balanced() {
    let cfg = small_synth();
    let (a, _) = generate_records(&cfg).unwrap();
    let (b, _) = generate_records(&cfg).unwrap();
    assert_eq!(a, b);
    let mut counts = vec![0; cfg.classes];
    for r in &a {
        counts[r.skeleton.action_label] += 1;
    }
    assert!(counts.iter().all(|&c| c == counts[0]), "{counts:?}");
}

#[test]
fn data_path_invariants_hold() {
    checks::data_path_invariants().unwrap();
}
