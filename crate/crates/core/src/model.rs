//! The serialized pipeline: preliminary classifier, action-assisted localizer,
//! object-assisted classifier.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::Backbone;
use crate::dataset::{center_skeleton, rotate_augment, CandidateSet, DatasetConfig, Sample};
use crate::error::{Error, Result};
use crate::fusion::FusionRecognizer;
use crate::localizer::{self, Localizer};
use crate::nn::{ModelConfig, ModelDims, SkeletonInput, Variant};
use crate::params::Params;
use crate::tape::{softmax_rows, Graph, Var};

/// A frame-sampled, preprocessed view of one sample.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub input: SkeletonInput,
    pub candidates: CandidateSet,
    pub label: usize,
    pub frame_indices: Vec<usize>,
    pub gt_object: Option<Vec<Option<usize>>>,
}

impl Prepared {
    /// Centers on the first frame's reference joint, keeps `indices`, then
    /// optionally applies one random rotation.
    pub fn new<R: Rng>(
        sample: &Sample,
        indices: &[usize],
        reference_joint: usize,
        rotation: Option<(&mut R, f64)>,
    ) -> Self {
        let centered = center_skeleton(&sample.skeleton, reference_joint);
        let mut seq = centered.select_frames(indices);
        if let Some((rng, degrees)) = rotation {
            seq = rotate_augment(&seq, rng, degrees);
        }
        Prepared {
            input: SkeletonInput::new(&seq),
            candidates: sample.candidates.select_frames(indices),
            label: sample.action_label,
            frame_indices: indices.to_vec(),
            gt_object: sample
                .gt_object
                .as_ref()
                .map(|gt| indices.iter().map(|&t| gt[t]).collect()),
        }
    }
}

/// Nodes produced by one forward pass. The localization and second-head
/// fields are `None` for [`Variant::SkeletonOnly`].
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits_preliminary: Var,
    /// Softmax of the preliminary logits, detached from the graph.
    pub action_probs: Array1<f64>,
    pub affinity: Option<Var>,
    /// Affinity max-pooled over joints, `[k, N_o]`.
    pub pooled: Option<Var>,
    pub attention: Option<Var>,
    pub timeline: Option<Var>,
    pub consistency: Option<Var>,
    pub logits_final: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    pub backbone: Backbone,
    pub localizer: Localizer,
    pub fusion: FusionRecognizer,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let backbone = Backbone::new(&mut params, &config, &mut rng);
        let localizer = Localizer::new(&mut params, &config, &mut rng);
        let fusion = FusionRecognizer::new(&mut params, &config, &mut rng);
        Ok(Model {
            config,
            params,
            backbone,
            localizer,
            fusion,
        })
    }

    /// Rebuilds the model layout for `config` and fills it from `params`,
    /// which must have exactly the same names and shapes.
    pub fn with_params(config: ModelConfig, params: &Params) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let src = params
                .by_name(&name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name}")))?;
            let dst = model.params.get_mut(id);
            if src.dim() != dst.dim() {
                return Err(Error::CheckpointMismatch(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    dst.dim(),
                    src.dim()
                )));
            }
            dst.assign(src);
        }
        Ok(model)
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, x: &Prepared) -> Result<Forward> {
        self.forward_conditioned(g, x, None)
    }

    /// Like [`Model::forward`], but the localizer is conditioned on
    /// `action_probs` instead of the preliminary head's own softmax. Since
    /// that input is detached either way, this evaluates exactly the function
    /// whose gradient the tape computes.
    pub fn forward_conditioned<'p>(
        &'p self,
        g: &mut Graph<'p>,
        x: &Prepared,
        action_probs: Option<&Array1<f64>>,
    ) -> Result<Forward> {
        let variant = self.config.variant;
        if x.input.joints != self.config.joints {
            return Err(Error::CheckpointMismatch(format!(
                "model expects {} joints, sample has {}",
                self.config.joints, x.input.joints
            )));
        }
        if x.input.frames > self.config.max_frames {
            return Err(Error::CheckpointMismatch(format!(
                "model supports {} frames, sample has {}",
                self.config.max_frames, x.input.frames
            )));
        }
        let logits_preliminary = self.backbone.forward(g, &x.input);
        let action_probs = match action_probs {
            Some(p) => p.clone(),
            None => softmax_rows(g.value(logits_preliminary)).row(0).to_owned(),
        };
        let mut out = Forward {
            logits_preliminary,
            action_probs,
            affinity: None,
            pooled: None,
            attention: None,
            timeline: None,
            consistency: None,
            logits_final: None,
        };
        if variant == Variant::SkeletonOnly {
            return Ok(out);
        }
        let assist = variant != Variant::NoActionAssist;
        let frames = x.input.frames;
        let f_sa = self.localizer.fuse_action_context(g, &x.input, &out.action_probs, assist)?;
        let e_o = self.localizer.embed_candidates(g, &x.candidates);
        let affinity = localizer::joint_object_affinity(g, f_sa, e_o, frames);
        let pooled = localizer::pool_affinity(g, affinity, x.input.joints);
        let attention = g.sigmoid(pooled);
        let timeline = localizer::category_timeline(
            g,
            attention,
            localizer::category_index(&x.candidates),
            self.config.categories + 1,
        );
        let consistency = localizer::consistency_loss(g, timeline);
        let logits_final = self.fusion.forward(g, &x.input, attention, e_o);
        out.affinity = Some(affinity);
        out.pooled = Some(pooled);
        out.attention = Some(attention);
        out.timeline = Some(timeline);
        out.consistency = Some(consistency);
        out.logits_final = Some(logits_final);
        Ok(out)
    }

    /// Runs one view without recording gradients for later use.
    pub fn view(&self, x: &Prepared) -> Result<ViewOutput> {
        let mut g = Graph::new(&self.params);
        let f = self.forward(&mut g, x)?;
        let probabilities = match f.logits_final {
            Some(l2) => (&f.action_probs + &softmax_rows(g.value(l2)).row(0)) * 0.5,
            None => f.action_probs.clone(),
        };
        Ok(ViewOutput {
            probabilities,
            attention: f.attention.map(|a| g.value(a).clone()),
            pooled: f.pooled.map(|a| g.value(a).clone()),
            consistency: f.consistency.map(|c| g.scalar(c)),
        })
    }
}

/// Detached results of one view.
#[derive(Debug, Clone)]
pub struct ViewOutput {
    /// Mean of both heads' softmax, or the preliminary head alone for the
    /// skeleton-only variant.
    pub probabilities: Array1<f64>,
    /// `[k, N_o]`.
    pub attention: Option<Array2<f64>>,
    /// Pre-sigmoid attention, `[k, N_o]`.
    pub pooled: Option<Array2<f64>>,
    pub consistency: Option<f64>,
}

impl ModelConfig {
    /// Shapes taken from a dataset: one frame-semantics row per sampled frame.
    pub fn for_dataset(dataset: &DatasetConfig, dims: ModelDims, variant: Variant) -> Self {
        ModelConfig {
            joints: dataset.joints,
            classes: dataset.classes,
            categories: dataset.categories,
            max_frames: dataset.k,
            dims,
            variant,
        }
    }
}
