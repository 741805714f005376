//! Synthetic interaction benchmark with known interacted objects.
//!
//! Actions come in pairs `(2m, 2m + 1)` that share motion pattern `m` exactly
//! and differ only in the category of the object handled (action `a` uses
//! object category `a`). An effector hand reaches for the object and then
//! manipulates it in place, so the skeleton alone cannot separate a pair while
//! the object near the hand can.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::{PersonRecord, RawRecord, SkeletonRecord};
use super::{split_multi_person, DatasetConfig, Detection, Sample};
use crate::error::{Error, Result};

/// Rest pose, world meters, x right, y up, z toward the camera.
const TEMPLATE: [[f64; 3]; 15] = [
    [0.0, 0.0, 0.0],     // pelvis
    [0.0, 0.45, 0.0],    // chest
    [0.0, 0.75, 0.0],    // head
    [0.25, -0.05, 0.05], // right hand
    [-0.25, -0.05, 0.05],// left hand
    [0.24, 0.2, 0.0],    // right elbow
    [-0.24, 0.2, 0.0],   // left elbow
    [0.18, 0.45, 0.0],   // right shoulder
    [-0.18, 0.45, 0.0],  // left shoulder
    [0.1, -0.45, 0.0],   // right knee
    [-0.1, -0.45, 0.0],  // left knee
    [0.1, -0.9, 0.0],    // right foot
    [-0.1, -0.9, 0.0],   // left foot
    [0.0, 0.6, 0.0],     // neck
    [0.0, 0.22, 0.0],    // mid spine
];
const HAND: [usize; 2] = [3, 4];
const ELBOW: [usize; 2] = [5, 6];
const SHOULDER: [usize; 2] = [7, 8];

/// World-to-image scale around the image center, normalized units per meter.
const PROJECTION_SCALE: f64 = 0.3;
const OSCILLATION: f64 = 0.06;
/// Range of image distances between a neighbor distractor and the true object.
const NEIGHBOR_DISTANCE: [f64; 2] = [0.05, 0.08];

pub fn project(p: [f64; 3]) -> [f64; 2] {
    [0.5 + PROJECTION_SCALE * p[0], 0.5 - PROJECTION_SCALE * p[1]]
}

fn default_classes() -> usize {
    4
}
fn default_joints() -> usize {
    10
}
fn default_slots() -> usize {
    10
}
fn default_frames_min() -> usize {
    24
}
fn default_frames_max() -> usize {
    40
}
fn default_k() -> usize {
    8
}
fn default_train() -> usize {
    600
}
fn default_test() -> usize {
    200
}
fn default_dmin() -> usize {
    2
}
fn default_dmax() -> usize {
    4
}
fn default_one() -> f64 {
    1.0
}
fn default_half() -> f64 {
    0.5
}
fn default_junk() -> usize {
    2
}
fn default_eps_reach() -> f64 {
    0.03
}
fn default_reach_fraction() -> f64 {
    0.3
}
fn default_clearance() -> f64 {
    0.12
}
fn default_image() -> [f64; 2] {
    [640.0, 480.0]
}
fn default_threshold() -> f64 {
    0.1
}
fn default_rotation() -> f64 {
    17.0
}
fn default_non_interactable() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// C_syn.
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// N_v, between 5 and 15.
    #[serde(default = "default_joints")]
    pub joints: usize,
    /// N_o.
    #[serde(default = "default_slots")]
    pub candidates: usize,
    /// N; defaults to `classes + 4`.
    #[serde(default)]
    pub categories: Option<usize>,
    /// Trailing categories left out of the prior union.
    #[serde(default = "default_non_interactable")]
    pub non_interactable: usize,
    #[serde(default = "default_frames_min")]
    pub frames_min: usize,
    #[serde(default = "default_frames_max")]
    pub frames_max: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_train")]
    pub train_samples: usize,
    #[serde(default = "default_test")]
    pub test_samples: usize,
    #[serde(default = "default_dmin")]
    pub distractors_min: usize,
    #[serde(default = "default_dmax")]
    pub distractors_max: usize,
    /// Probability that the paired action's object is among the distractors.
    #[serde(default = "default_one")]
    pub confuser_prob: f64,
    /// Probability of a far distractor sharing the true object's category.
    #[serde(default = "default_half")]
    pub decoy_prob: f64,
    /// Probability of a distractor of an unrelated category resting at the
    /// idle hand.
    #[serde(default = "default_half")]
    pub idle_prob: f64,
    /// Probability of a distractor right beside the true object whose
    /// category belongs to an action of another pair.
    #[serde(default = "default_half")]
    pub neighbor_prob: f64,
    /// Place the confuser and the decoy where the effector could plausibly
    /// reach, so that box position alone does not reveal the true object.
    #[serde(default)]
    pub reachable_confusers: bool,
    /// Upper bound on below-threshold detections per frame.
    #[serde(default = "default_junk")]
    pub junk_detections: usize,
    /// Std of per-frame box-center jitter, normalized image units.
    #[serde(default)]
    pub jitter: f64,
    /// Per-frame, per-detection drop probability.
    #[serde(default)]
    pub dropout: f64,
    /// Max distance between the final effector projection and the true box center.
    #[serde(default = "default_eps_reach")]
    pub eps_reach: f64,
    #[serde(default = "default_reach_fraction")]
    pub reach_fraction: f64,
    /// Min normalized distance between a distractor and the effector path.
    #[serde(default = "default_clearance")]
    pub clearance: f64,
    #[serde(default = "default_image")]
    pub image_size: [f64; 2],
    #[serde(default = "default_threshold")]
    pub score_threshold: f64,
    #[serde(default = "default_rotation")]
    pub rotation_max_degrees: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn categories(&self) -> usize {
        self.categories.unwrap_or(self.classes + 4)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(5..=TEMPLATE.len()).contains(&self.joints) {
            return bad("synthetic joints must be between 5 and 15");
        }
        if self.classes < 2 {
            return bad("at least one skeleton-identical class pair is required");
        }
        if self.categories() < (self.classes + self.non_interactable).max(3) {
            return bad("categories must cover one interactable category per class plus one unrelated category");
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return bad("frames_min must be in [1, frames_max]");
        }
        if self.distractors_min > self.distractors_max {
            return bad("distractors_min > distractors_max");
        }
        let probs = [self.dropout, self.confuser_prob, self.decoy_prob, self.idle_prob, self.neighbor_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.reach_fraction) || self.reach_fraction <= 0.0 {
            return bad("reach_fraction must lie in (0, 1)");
        }
        if self.jitter < 0.0 || self.eps_reach <= 0.0 {
            return bad("jitter must be >= 0 and eps_reach > 0");
        }
        if OSCILLATION * PROJECTION_SCALE > self.eps_reach {
            return bad("eps_reach is smaller than the manipulation amplitude");
        }
        Ok(())
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let n = self.categories();
        DatasetConfig {
            joints: self.joints,
            candidates: self.candidates,
            categories: n,
            classes: self.classes,
            k: self.k,
            score_threshold: self.score_threshold,
            prior_union: (0..n - self.non_interactable).collect(),
            rotation_max_degrees: self.rotation_max_degrees,
            seed: self.seed,
            reference_joint: 0,
        }
    }
}

/// The other action of a skeleton-identical pair, if any.
pub fn partner(action: usize, classes: usize) -> Option<usize> {
    let p = action ^ 1;
    (p < classes).then_some(p)
}

#[derive(Debug, Clone, Copy)]
enum Placement {
    Anywhere,
    /// On the band of positions the effector can reach.
    Reachable,
    /// Next to the hand that does not act.
    IdleHand,
    /// Beside the true object, inside the effector's workspace.
    Neighbor,
}

struct PlacedObject {
    category: usize,
    center: [f64; 2],
    size: [f64; 2],
    score: f64,
}

/// Effector-path samples for a motion pattern, in world coordinates, plus the rest pose.
struct Motion {
    joints: Vec<Array2<f64>>, // per frame [15, 3]
    target: [f64; 3],
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn motion<R: Rng>(cfg: &SynthConfig, pattern: usize, frames: usize, rng: &mut R) -> Motion {
    let side = pattern % 2;
    let style = pattern / 2;
    let mirror = if side == 0 { 1.0 } else { -1.0 };
    let shoulder = TEMPLATE[SHOULDER[side]];
    let angle = rng.gen_range(-50f64..50.0).to_radians();
    let reach = rng.gen_range(0.45..0.6);
    let target = [
        shoulder[0] + mirror * reach * angle.cos(),
        shoulder[1] + reach * angle.sin(),
        0.15,
    ];
    let sway_amp = rng.gen_range(0.0..0.03);
    let sway_phase = rng.gen_range(0.0..2.0 * PI);
    let reach_frames = ((cfg.reach_fraction * frames as f64).ceil() as usize).max(1);
    let axis = style % 3;
    let cycles = 1.0 + (style / 3) as f64;

    let rest = TEMPLATE[HAND[side]];
    let joints = (0..frames)
        .map(|t| {
            let mut pose = Array2::from_shape_fn((TEMPLATE.len(), 3), |(j, c)| TEMPLATE[j][c]);
            let sway = sway_amp * (2.0 * PI * t as f64 / frames as f64 + sway_phase).sin();
            for j in [1, 2, 7, 8, 13, 14] {
                pose[[j, 0]] += sway;
            }
            let hand = if t < reach_frames {
                let a = smoothstep(t as f64 / reach_frames as f64);
                [0, 1, 2].map(|c| rest[c] + a * (target[c] - rest[c]))
            } else {
                let hold = frames - reach_frames;
                let phase = (t - reach_frames) as f64 / hold.max(1) as f64;
                let mut p = target;
                p[axis] += OSCILLATION * (2.0 * PI * cycles * phase).sin();
                p
            };
            let sh = [pose[[SHOULDER[side], 0]], pose[[SHOULDER[side], 1]], pose[[SHOULDER[side], 2]]];
            for c in 0..3 {
                pose[[HAND[side], c]] = hand[c];
                pose[[ELBOW[side], c]] = 0.5 * (sh[c] + hand[c]);
            }
            pose[[ELBOW[side], 1]] -= 0.06;
            pose
        })
        .collect();
    Motion { joints, target }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// One synthetic video for `action`. Every draw that shapes the skeleton
/// happens before any object-category draw, so the two actions of a pair
/// given identically seeded generators produce identical joints.
pub fn generate_record<R: Rng>(
    cfg: &SynthConfig,
    action: usize,
    video_id: String,
    rng: &mut R,
) -> Result<RawRecord> {
    let n_categories = cfg.categories();
    let pattern = action / 2;
    let frames = rng.gen_range(cfg.frames_min..=cfg.frames_max);
    let mot = motion(cfg, pattern, frames, rng);
    let side = pattern % 2;

    let path: Vec<[f64; 2]> = mot
        .joints
        .iter()
        .map(|p| project([p[[HAND[side], 0]], p[[HAND[side], 1]], p[[HAND[side], 2]]]))
        .collect();
    let gt_center = project(mot.target);
    let last = *path.last().expect("at least one frame");
    if distance(last, gt_center) > cfg.eps_reach {
        return Err(Error::Generation(format!(
            "effector ends {:.4} from its object (eps_reach {})",
            distance(last, gt_center),
            cfg.eps_reach
        )));
    }

    // Object draws; everything below may differ between paired actions.
    let mut size = || [rng.gen_range(0.06..0.14), rng.gen_range(0.06..0.14)];
    let gt_size = size();
    let mut objects = vec![PlacedObject {
        category: action,
        center: gt_center,
        size: gt_size,
        score: rng.gen_range(0.4..0.99),
    }];
    let confuser = partner(action, cfg.classes).filter(|_| rng.gen_bool(cfg.confuser_prob));
    let decoy = rng.gen_bool(cfg.decoy_prob);
    let idle = rng.gen_bool(cfg.idle_prob);
    // Categories handled by actions outside this pair.
    let foreign: Vec<usize> = (0..cfg.classes).filter(|&c| c != action && Some(c) != partner(action, cfg.classes)).collect();
    let neighbor = (!foreign.is_empty() && rng.gen_bool(cfg.neighbor_prob)).then(|| foreign[rng.gen_range(0..foreign.len())]);
    // The idle-hand object goes first since its position is the most constrained.
    let near = if cfg.reachable_confusers { Placement::Reachable } else { Placement::Anywhere };
    let mut planned: Vec<(Option<usize>, Placement)> = Vec::new();
    if idle {
        planned.push((None, Placement::IdleHand));
    }
    planned.extend(neighbor.map(|c| (Some(c), Placement::Neighbor)));
    planned.extend(confuser.map(|c| (Some(c), near)));
    if decoy {
        planned.push((Some(action), near));
    }
    let n_distract = rng.gen_range(cfg.distractors_min..=cfg.distractors_max).max(planned.len());
    planned.resize(n_distract, (None, Placement::Anywhere));
    let idle_hand = project(TEMPLATE[HAND[1 - side]]);
    let shoulder = TEMPLATE[SHOULDER[side]];
    let mirror = if side == 0 { 1.0 } else { -1.0 };
    for (d, (category, placement)) in planned.into_iter().enumerate() {
        let category = category.unwrap_or_else(|| loop {
            let c = rng.gen_range(0..n_categories);
            if c != action && Some(c) != partner(action, cfg.classes) {
                break c;
            }
        });
        let mut placed = None;
        for _ in 0..500 {
            let c = match placement {
                Placement::IdleHand => {
                    [idle_hand[0] + rng.gen_range(-0.02..0.02), idle_hand[1] + rng.gen_range(-0.02..0.02)]
                }
                Placement::Reachable => {
                    let angle = rng.gen_range(-90f64..90.0).to_radians();
                    let reach = rng.gen_range(0.4..0.65);
                    project([
                        shoulder[0] + mirror * reach * angle.cos(),
                        shoulder[1] + reach * angle.sin(),
                        0.15,
                    ])
                }
                Placement::Neighbor => {
                    let angle = rng.gen_range(0.0..2.0 * PI);
                    let r = rng.gen_range(NEIGHBOR_DISTANCE[0]..NEIGHBOR_DISTANCE[1]);
                    [gt_center[0] + r * angle.cos(), gt_center[1] + r * angle.sin()]
                }
                Placement::Anywhere => [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)],
            };
            let beside = matches!(placement, Placement::Neighbor);
            let clear_path = beside || path.iter().all(|&p| distance(p, c) >= cfg.clearance);
            let clear_objects = objects
                .iter()
                .enumerate()
                .all(|(i, o)| (beside && i == 0) || distance(o.center, c) >= cfg.clearance);
            if clear_path && clear_objects {
                placed = Some(c);
                break;
            }
        }
        let center = placed.ok_or_else(|| {
            Error::Generation(format!("could not place distractor {d} of video {video_id}"))
        })?;
        objects.push(PlacedObject {
            category,
            center,
            size: [rng.gen_range(0.06..0.14), rng.gen_range(0.06..0.14)],
            score: rng.gen_range(0.4..0.99),
        });
    }
    // Raw order in the detections list carries no information.
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.shuffle(rng);
    let gt_raw = order.iter().position(|&o| o == 0).expect("gt is present");

    let [w, h] = cfg.image_size;
    let jitter = Normal::new(0.0, cfg.jitter.max(f64::MIN_POSITIVE)).expect("valid std");
    let to_pixels = |c: [f64; 2], s: [f64; 2]| {
        [
            (c[0] - s[0] / 2.0) * w,
            (c[1] - s[1] / 2.0) * h,
            (c[0] + s[0] / 2.0) * w,
            (c[1] + s[1] / 2.0) * h,
        ]
    };
    let mut detections = Vec::with_capacity(frames);
    let mut truth = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut frame = Vec::new();
        let mut gt_index = None;
        for &o in &order {
            let obj = &objects[o];
            let dropped = cfg.dropout > 0.0 && rng.gen_bool(cfg.dropout);
            let mut center = obj.center;
            if cfg.jitter > 0.0 {
                center[0] += jitter.sample(rng);
                center[1] += jitter.sample(rng);
            }
            if dropped {
                continue;
            }
            if o == 0 {
                gt_index = Some(frame.len());
            }
            frame.push(Detection {
                bbox: to_pixels(center, obj.size),
                score: obj.score,
                category_id: obj.category,
            });
        }
        for _ in 0..rng.gen_range(0..=cfg.junk_detections) {
            let c = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
            frame.push(Detection {
                bbox: to_pixels(c, [0.05, 0.05]),
                score: rng.gen_range(0.0..cfg.score_threshold),
                category_id: rng.gen_range(0..n_categories),
            });
        }
        detections.push(frame);
        truth.push(gt_index);
    }
    debug_assert!(gt_raw < objects.len());

    let joints = mot
        .joints
        .iter()
        .map(|pose| {
            (0..cfg.joints)
                .map(|j| [pose[[j, 0]], pose[[j, 1]], pose[[j, 2]]])
                .collect()
        })
        .collect();
    Ok(RawRecord {
        skeleton: SkeletonRecord {
            video_id,
            image_size: cfg.image_size,
            persons: vec![PersonRecord {
                person_id: 0,
                joints,
            }],
            action_label: action,
        },
        detections,
        truth: Some(truth),
    })
}

/// Train and test raw records, labels balanced round-robin, one independent
/// generator per video (`seed ^ video index`).
pub fn generate_records(cfg: &SynthConfig) -> Result<(Vec<RawRecord>, Vec<RawRecord>)> {
    cfg.validate()?;
    let make = |split: &str, count: usize, offset: usize| -> Result<Vec<RawRecord>> {
        (0..count)
            .map(|i| {
                let index = offset + i;
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                generate_record(cfg, i % cfg.classes, format!("{split}{index:05}"), &mut rng)
            })
            .collect()
    };
    let train = make("train", cfg.train_samples, 0)?;
    let test = make("test", cfg.test_samples, cfg.train_samples)?;
    Ok((train, test))
}

/// `train_samples` samples with ground truth attached, drawn from `rng`.
pub fn generate_synthetic<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let dataset = cfg.dataset_config();
    (0..cfg.train_samples)
        .map(|i| {
            let mut video_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            let raw = generate_record(cfg, i % cfg.classes, format!("syn{i:05}"), &mut video_rng)?;
            Ok(split_multi_person(&raw, &dataset)?.remove(0))
        })
        .collect()
}
