//! Skeleton and detection ingestion, preprocessing, candidate construction and
//! the synthetic interaction benchmark.

mod candidates;
mod io;
mod preprocess;
pub mod synthetic;

use std::collections::BTreeSet;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use candidates::{select_candidate_sources, select_candidates};
pub use io::{
    load_dataset_dir, load_samples, read_meta, split_multi_person, write_dataset_dir, write_meta,
    DetectionsFile, FrameDetections, PersonRecord, RawRecord, SkeletonRecord, TruthFile, DETECTION_FILE,
    META_FILE, SKELETON_FILE, TRUTH_FILE,
};
pub use preprocess::{
    center_skeleton, rotate_augment, rotation_matrix, sample_frames, segment_indices,
};
pub use synthetic::{generate_records, generate_synthetic, partner, project, SynthConfig};

/// Joint coordinates of one person, `[T, N_v, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub joints: Array3<f64>,
    pub person_id: i64,
}

impl SkeletonSequence {
    pub fn new(joints: Array3<f64>, person_id: i64) -> Result<Self> {
        let (frames, _, dims) = joints.dim();
        if frames == 0 {
            return Err(Error::Config("skeleton sequence has no frames".into()));
        }
        if dims != 3 {
            return Err(Error::Config(format!("joints must be 3-D, got {dims}")));
        }
        if joints.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("skeleton contains non-finite coordinates".into()));
        }
        Ok(SkeletonSequence { joints, person_id })
    }

    pub fn frame_count(&self) -> usize {
        self.joints.len_of(Axis(0))
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len_of(Axis(1))
    }

    pub fn select_frames(&self, indices: &[usize]) -> SkeletonSequence {
        SkeletonSequence {
            joints: self.joints.select(Axis(0), indices),
            person_id: self.person_id,
        }
    }
}

/// A raw detector output in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: [f64; 4],
    pub score: f64,
    pub category_id: usize,
}

impl Detection {
    pub fn validate(&self, categories: usize) -> std::result::Result<(), String> {
        let [x1, y1, x2, y2] = self.bbox;
        if !self.bbox.iter().all(|v| v.is_finite()) {
            return Err("bbox has non-finite coordinates".into());
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(format!("degenerate bbox {:?}", self.bbox));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        if self.category_id >= categories {
            return Err(format!(
                "category_id {} outside [0, {categories})",
                self.category_id
            ));
        }
        Ok(())
    }
}

/// One candidate slot: normalized `(cx, cy, w, h)`, score and category.
/// Category `N` (the dataset's category count) is background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bbox: [f64; 4],
    pub score: f64,
    pub category_id: usize,
}

impl Candidate {
    pub fn background(categories: usize) -> Self {
        Candidate {
            bbox: [0.0; 4],
            score: 1.0,
            category_id: categories,
        }
    }

    pub fn is_background(&self, categories: usize) -> bool {
        self.category_id == categories
    }

    /// The five scalars fed to the box embedding.
    pub fn features(&self) -> [f64; 5] {
        let [cx, cy, w, h] = self.bbox;
        [cx, cy, w, h, self.score]
    }
}

/// Exactly `slots` candidates for each frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub frames: Vec<Vec<Candidate>>,
}

impl CandidateSet {
    pub fn new(frames: Vec<Vec<Candidate>>) -> Result<Self> {
        let slots = frames.first().map(Vec::len).unwrap_or(0);
        if slots == 0 || frames.iter().any(|f| f.len() != slots) {
            return Err(Error::Config(
                "every frame needs the same non-zero number of candidates".into(),
            ));
        }
        Ok(CandidateSet { frames })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn slots(&self) -> usize {
        self.frames[0].len()
    }

    pub fn select_frames(&self, indices: &[usize]) -> CandidateSet {
        CandidateSet {
            frames: indices.iter().map(|&t| self.frames[t].clone()).collect(),
        }
    }
}

/// One training/evaluation unit: a single person in one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub video_id: String,
    pub skeleton: SkeletonSequence,
    pub candidates: CandidateSet,
    pub action_label: usize,
    /// Per-frame slot of the true interacted object; `None` where it was not detected.
    pub gt_object: Option<Vec<Option<usize>>>,
}

impl Sample {
    pub fn frame_count(&self) -> usize {
        self.skeleton.frame_count()
    }
}

fn default_slots() -> usize {
    10
}
fn default_k() -> usize {
    20
}
fn default_threshold() -> f64 {
    0.1
}
fn default_rotation() -> f64 {
    17.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// N_v.
    pub joints: usize,
    /// N_o, background slot included.
    #[serde(default = "default_slots")]
    pub candidates: usize,
    /// N, object categories excluding background.
    pub categories: usize,
    /// C.
    pub classes: usize,
    /// Frames kept by segment sampling.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_threshold")]
    pub score_threshold: f64,
    /// Category ids that can plausibly be interacted with.
    pub prior_union: BTreeSet<usize>,
    #[serde(default = "default_rotation")]
    pub rotation_max_degrees: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reference_joint: usize,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates < 1 {
            return Err(Error::Config("candidates (N_o) must be at least 1".into()));
        }
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.score_threshold) {
            return Err(Error::Config("score_threshold must lie in [0, 1)".into()));
        }
        if self.joints == 0 || self.classes == 0 {
            return Err(Error::Config("joints and classes must be positive".into()));
        }
        if self.reference_joint >= self.joints {
            return Err(Error::Config("reference_joint out of range".into()));
        }
        if let Some(&c) = self.prior_union.iter().find(|&&c| c >= self.categories) {
            return Err(Error::Config(format!("prior_union category {c} >= {}", self.categories)));
        }
        Ok(())
    }

    /// Id of the background category.
    pub fn background(&self) -> usize {
        self.categories
    }
}
