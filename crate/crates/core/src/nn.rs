//! Layer building blocks and model dimensions.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SkeletonSequence;
use crate::error::{Error, Result};
use crate::params::{ParamId, Params};
use crate::tape::{Graph, Var};

/// `x · W + b`, `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    pub fn new<R: Rng>(params: &mut Params, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Affine {
            weight: params.uniform(format!("{name}.weight"), fan_in, fan_out, rng),
            bias: params.zeros(format!("{name}.bias"), 1, fan_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(x, w);
        g.add_bias(h, b)
    }
}

/// Two stacked affine layers with a rectifier between them and, optionally, after.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub first: Affine,
    pub second: Affine,
    pub final_relu: bool,
}

impl Mlp2 {
    pub fn new<R: Rng>(
        params: &mut Params,
        name: &str,
        dims: [usize; 3],
        final_relu: bool,
        rng: &mut R,
    ) -> Self {
        Mlp2 {
            first: Affine::new(params, &format!("{name}.0"), dims[0], dims[1], rng),
            second: Affine::new(params, &format!("{name}.1"), dims[1], dims[2], rng),
            final_relu,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.first.forward(g, x);
        let h = g.relu(h);
        let out = self.second.forward(g, h);
        if self.final_relu {
            g.relu(out)
        } else {
            out
        }
    }
}

/// Embedding table `[rows, dim]` initialized like an affine map applied to one-hot rows.
pub fn table<R: Rng>(params: &mut Params, name: &str, rows: usize, dim: usize, rng: &mut R) -> ParamId {
    params.uniform(name, rows, dim, rng)
}

/// Layer widths. [`ModelDims::full`] is the reference setting; [`ModelDims::compact`]
/// is a narrower variant for single-core experiments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub dynamics: usize,
    pub joint_semantics: usize,
    pub adjacency: usize,
    pub gcn: [usize; 3],
    pub temporal: usize,
    pub pointwise: usize,
    pub localizer: usize,
    pub category_embed: usize,
    pub box_embed: usize,
}

impl ModelDims {
    pub fn full() -> Self {
        ModelDims {
            dynamics: 64,
            joint_semantics: 64,
            adjacency: 256,
            gcn: [128, 256, 256],
            temporal: 256,
            pointwise: 512,
            localizer: 128,
            category_embed: 192,
            box_embed: 64,
        }
    }

    pub fn compact() -> Self {
        ModelDims {
            dynamics: 16,
            joint_semantics: 16,
            adjacency: 16,
            gcn: [32, 32, 32],
            temporal: 32,
            pointwise: 64,
            localizer: 32,
            category_embed: 48,
            box_embed: 16,
        }
    }

    /// Width of the joint-side input to the backbone graph layers.
    pub fn node(&self) -> usize {
        self.dynamics + self.joint_semantics
    }

    /// Width of fused joint/action features, candidate embeddings and the
    /// interacted-object representation.
    pub fn object(&self) -> usize {
        2 * self.localizer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Preliminary classifier, action-assisted localizer and object-assisted classifier.
    #[default]
    Joint,
    /// Preliminary classifier only.
    SkeletonOnly,
    /// Joint model with the action embedding replaced by zeros.
    NoActionAssist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub joints: usize,
    pub classes: usize,
    /// Object categories excluding background.
    pub categories: usize,
    /// Rows of the frame-index semantics table.
    pub max_frames: usize,
    pub dims: ModelDims,
    #[serde(default)]
    pub variant: Variant,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        if d.category_embed + d.box_embed != d.object() {
            return Err(Error::Config(format!(
                "category_embed + box_embed must equal 2 * localizer ({})",
                d.object()
            )));
        }
        if self.joints == 0 || self.classes == 0 || self.max_frames == 0 {
            return Err(Error::Config("joints, classes and max_frames must be positive".into()));
        }
        Ok(())
    }
}

/// Centered, frame-sampled joint positions and their frame-to-frame velocities,
/// flattened to `[k * N_v, 3]` with frame-major rows.
#[derive(Debug, Clone)]
pub struct SkeletonInput {
    pub positions: Array2<f64>,
    pub velocities: Array2<f64>,
    pub frames: usize,
    pub joints: usize,
}

impl SkeletonInput {
    /// Velocity of frame 0 is zero.
    pub fn new(seq: &SkeletonSequence) -> Self {
        let (frames, joints) = (seq.frame_count(), seq.joint_count());
        let positions = Array2::from_shape_fn((frames * joints, 3), |(r, c)| {
            seq.joints[[r / joints, r % joints, c]]
        });
        let velocities = Array2::from_shape_fn((frames * joints, 3), |(r, c)| {
            let (t, i) = (r / joints, r % joints);
            if t == 0 {
                0.0
            } else {
                seq.joints[[t, i, c]] - seq.joints[[t - 1, i, c]]
            }
        });
        SkeletonInput {
            positions,
            velocities,
            frames,
            joints,
        }
    }
}
