//! Skeleton-only action recognizer: joint dynamics with joint-type semantics,
//! data-dependent adjacency, three graph-convolution layers, a frame-level
//! temporal module and a linear classifier.

use rand::Rng;

use crate::nn::{table, Affine, ModelConfig, Mlp2, SkeletonInput};
use crate::params::{ParamId, Params};
use crate::tape::{Graph, Var};

/// Position/velocity embedding plus the joint-type semantics table.
#[derive(Debug, Clone, Copy)]
pub struct JointEncoder {
    pub phi1: Mlp2,
    pub phi2: Mlp2,
    pub joint_sem: ParamId,
}

impl JointEncoder {
    pub fn new<R: Rng>(
        params: &mut Params,
        prefix: &str,
        joints: usize,
        dynamics: usize,
        semantics: usize,
        rng: &mut R,
    ) -> Self {
        JointEncoder {
            phi1: Mlp2::new(params, &format!("{prefix}.phi1"), [3, dynamics, dynamics], true, rng),
            phi2: Mlp2::new(params, &format!("{prefix}.phi2"), [3, dynamics, dynamics], true, rng),
            joint_sem: table(params, &format!("{prefix}.joint_sem"), joints, semantics, rng),
        }
    }

    /// `Φ1(v) + Φ2(v_t - v_{t-1})`, `[k * N_v, dynamics]`.
    pub fn joint_dynamics(&self, g: &mut Graph, input: &SkeletonInput) -> Var {
        let pos = g.constant(input.positions.clone());
        let vel = g.constant(input.velocities.clone());
        let a = self.phi1.forward(g, pos);
        let b = self.phi2.forward(g, vel);
        g.add(a, b)
    }

    /// Concatenates each joint's semantics row: `[k * N_v, dynamics + semantics]`.
    pub fn attach_joint_semantics(&self, g: &mut Graph, z: Var, frames: usize) -> Var {
        let sem = g.param(self.joint_sem);
        let tiled = g.tile_rows(sem, frames);
        g.concat_cols(z, tiled)
    }

    pub fn forward(&self, g: &mut Graph, input: &SkeletonInput) -> Var {
        let z = self.joint_dynamics(g, input);
        self.attach_joint_semantics(g, z, input.frames)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GcnLayer {
    pub aggregate: Affine,
    /// Projection for the skip path when the width changes.
    pub residual: Option<ParamId>,
}

impl GcnLayer {
    fn new<R: Rng>(params: &mut Params, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        GcnLayer {
            aggregate: Affine::new(params, name, fan_in, fan_out, rng),
            residual: (fan_in != fan_out)
                .then(|| params.uniform(format!("{name}.res.weight"), fan_in, fan_out, rng)),
        }
    }

    /// `relu(S·z·W + b + skip(z))`.
    pub fn forward(&self, g: &mut Graph, z: Var, s: Var, frames: usize) -> Var {
        let mixed = g.block_matmul(s, z, frames);
        let h = self.aggregate.forward(g, mixed);
        let skip = match self.residual {
            Some(w) => {
                let w = g.param(w);
                g.matmul(z, w)
            }
            None => z,
        };
        let sum = g.add(h, skip);
        g.relu(sum)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FrameModule {
    pub frame_sem: ParamId,
    pub temporal: Affine,
    pub pointwise: Affine,
}

/// Everything downstream of the per-joint node features.
#[derive(Debug, Clone, Copy)]
pub struct GraphTrunk {
    pub theta: Affine,
    pub phi: Affine,
    pub layers: [GcnLayer; 3],
    pub frame: FrameModule,
    pub classifier: Affine,
}

impl GraphTrunk {
    pub fn new<R: Rng>(params: &mut Params, prefix: &str, node_dim: usize, config: &ModelConfig, rng: &mut R) -> Self {
        let d = &config.dims;
        let theta = Affine::new(params, &format!("{prefix}.adj.theta"), node_dim, d.adjacency, rng);
        let phi = Affine::new(params, &format!("{prefix}.adj.phi"), node_dim, d.adjacency, rng);
        let widths = [node_dim, d.gcn[0], d.gcn[1], d.gcn[2]];
        let layers = [0, 1, 2].map(|i| {
            GcnLayer::new(params, &format!("{prefix}.gcn{i}"), widths[i], widths[i + 1], rng)
        });
        let top = d.gcn[2];
        let frame = FrameModule {
            frame_sem: table(params, &format!("{prefix}.frame.sem"), config.max_frames, top, rng),
            temporal: Affine::new(params, &format!("{prefix}.frame.tconv"), 3 * top, d.temporal, rng),
            pointwise: Affine::new(params, &format!("{prefix}.frame.pconv"), d.temporal, d.pointwise, rng),
        };
        let classifier = Affine::new(params, &format!("{prefix}.cls"), d.pointwise, config.classes, rng);
        GraphTrunk {
            theta,
            phi,
            layers,
            frame,
            classifier,
        }
    }

    /// Raw per-frame scores `θ(z_i)ᵀ φ(z_j)`, `[k * N_v, N_v]`.
    pub fn adjacency_scores(&self, g: &mut Graph, z: Var, frames: usize) -> Var {
        let a = self.theta.forward(g, z);
        let b = self.phi.forward(g, z);
        g.block_matmul_nt(a, b, frames)
    }

    /// Row-softmax of [`Self::adjacency_scores`].
    pub fn adaptive_adjacency(&self, g: &mut Graph, z: Var, frames: usize) -> Var {
        let scores = self.adjacency_scores(g, z, frames);
        g.softmax_rows(scores)
    }

    pub fn gcn_stack(&self, g: &mut Graph, z: Var, s: Var, frames: usize) -> Var {
        self.layers.iter().fold(z, |z, layer| layer.forward(g, z, s, frames))
    }

    /// Joint max-pool, frame semantics, width-3 temporal conv, pointwise conv,
    /// frame max-pool: `[k * N_v, D] -> [1, pointwise]`.
    pub fn frame_module(&self, g: &mut Graph, z: Var, frames: usize, joints: usize) -> Var {
        let pooled = g.group_max(z, joints);
        let sem = g.param(self.frame.frame_sem);
        let sem = g.gather_rows(sem, (0..frames).collect());
        let x = g.add(pooled, sem);
        let prev = g.shift_rows(x, -1);
        let next = g.shift_rows(x, 1);
        let window = g.concat_cols(prev, x);
        let window = g.concat_cols(window, next);
        let h = self.frame.temporal.forward(g, window);
        let h = g.relu(h);
        let h = self.frame.pointwise.forward(g, h);
        let h = g.relu(h);
        g.group_max(h, frames)
    }

    /// Node features to class logits `[1, C]`.
    pub fn forward(&self, g: &mut Graph, nodes: Var, frames: usize, joints: usize) -> Var {
        let s = self.adaptive_adjacency(g, nodes, frames);
        let z = self.gcn_stack(g, nodes, s, frames);
        let pooled = self.frame_module(g, z, frames, joints);
        self.classifier.forward(g, pooled)
    }
}

/// The preliminary, skeleton-only classifier.
#[derive(Debug, Clone, Copy)]
pub struct Backbone {
    pub encoder: JointEncoder,
    pub trunk: GraphTrunk,
}

impl Backbone {
    pub const PREFIX: &'static str = "sgn";

    pub fn new<R: Rng>(params: &mut Params, config: &ModelConfig, rng: &mut R) -> Self {
        let d = &config.dims;
        let encoder = JointEncoder::new(params, Self::PREFIX, config.joints, d.dynamics, d.joint_semantics, rng);
        let trunk = GraphTrunk::new(params, Self::PREFIX, d.node(), config, rng);
        Backbone { encoder, trunk }
    }

    /// Class logits `[1, C]`.
    pub fn forward(&self, g: &mut Graph, input: &SkeletonInput) -> Var {
        let nodes = self.encoder.forward(g, input);
        self.trunk.forward(g, nodes, input.frames, input.joints)
    }
}
