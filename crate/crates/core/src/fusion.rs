//! Object-assisted action recognition: attention-weighted candidate fusion and
//! node-feature extension feeding an independently parameterized graph trunk.

use rand::Rng;

use crate::backbone::{GraphTrunk, JointEncoder};
use crate::localizer::EPS_NORM;
use crate::nn::{Affine, ModelConfig, SkeletonInput};
use crate::params::Params;
use crate::tape::{Graph, Var};

/// `r[t] = Σ_j w_j e_o[t, j] / (Σ_j w_j + ε)`, `[k, D]`.
pub fn fuse_object_feature(g: &mut Graph, attention: Var, e_o: Var, frames: usize) -> Var {
    let weights = g.row_normalize(attention, EPS_NORM);
    g.block_matmul(weights, e_o, frames)
}

#[derive(Debug, Clone, Copy)]
pub struct FusionRecognizer {
    pub encoder: JointEncoder,
    pub joint_embed: Affine,
    pub extend: Affine,
    pub trunk: GraphTrunk,
}

impl FusionRecognizer {
    pub const PREFIX: &'static str = "fusion";

    pub fn new<R: Rng>(params: &mut Params, config: &ModelConfig, rng: &mut R) -> Self {
        let d = &config.dims;
        let p = Self::PREFIX;
        let encoder = JointEncoder::new(params, p, config.joints, d.dynamics, d.joint_semantics, rng);
        let joint_embed = Affine::new(params, &format!("{p}.joint_embed"), d.node(), d.object(), rng);
        let extend = Affine::new(params, &format!("{p}.extend"), 2 * d.object(), d.object(), rng);
        let trunk = GraphTrunk::new(params, p, d.object(), config, rng);
        FusionRecognizer {
            encoder,
            joint_embed,
            extend,
            trunk,
        }
    }

    /// Skeleton-side node features `[k * N_v, D]`.
    pub fn joint_embedding(&self, g: &mut Graph, input: &SkeletonInput) -> Var {
        let z = self.encoder.forward(g, input);
        let h = self.joint_embed.forward(g, z);
        g.relu(h)
    }

    /// `extend(joint ⊕ r[t])` with `r[t]` broadcast to every joint of frame `t`.
    pub fn extend_node_features(&self, g: &mut Graph, joint: Var, r: Var, joints: usize) -> Var {
        let frames = g.value(r).nrows();
        let index = (0..frames).flat_map(|t| std::iter::repeat(t).take(joints)).collect();
        let broadcast = g.gather_rows(r, index);
        let joined = g.concat_cols(joint, broadcast);
        self.extend.forward(g, joined)
    }

    /// Class logits `[1, C]` from the skeleton and the localizer's attention
    /// over the candidate embeddings `e_o`.
    pub fn forward(&self, g: &mut Graph, input: &SkeletonInput, attention: Var, e_o: Var) -> Var {
        let r = fuse_object_feature(g, attention, e_o, input.frames);
        let joint = self.joint_embedding(g, input);
        let nodes = self.extend_node_features(g, joint, r, input.joints);
        self.trunk.forward(g, nodes, input.frames, input.joints)
    }
}
