//! Action-assisted interacted-object localization.
//!
//! Joints and the preliminary action distribution are embedded and
//! concatenated per joint; candidates are embedded from category, box and
//! score. Joint-candidate inner products are max-pooled over joints and
//! squashed into per-candidate attention, which also induces a per-frame
//! distribution over object categories used by the consistency loss.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;

use crate::dataset::CandidateSet;
use crate::error::{Error, Result};
use crate::nn::{table, Affine, ModelConfig, Mlp2, SkeletonInput};
use crate::params::{ParamId, Params};
use crate::tape::{sigmoid, Graph, Var};

/// Added to attention-mass normalizers.
pub const EPS_NORM: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct Localizer {
    pub phi_j: Mlp2,
    pub phi_a: Mlp2,
    pub category_embed: ParamId,
    pub boxes: Affine,
    pub mixer: Affine,
}

impl Localizer {
    pub const PREFIX: &'static str = "loc";

    pub fn new<R: Rng>(params: &mut Params, config: &ModelConfig, rng: &mut R) -> Self {
        let d = &config.dims;
        let p = Self::PREFIX;
        Localizer {
            phi_j: Mlp2::new(params, &format!("{p}.phi_j"), [3, d.localizer, d.localizer], false, rng),
            phi_a: Mlp2::new(params, &format!("{p}.phi_a"), [config.classes, d.localizer, d.localizer], false, rng),
            category_embed: table(params, &format!("{p}.cat_embed"), config.categories + 1, d.category_embed, rng),
            boxes: Affine::new(params, &format!("{p}.box"), 5, d.box_embed, rng),
            mixer: Affine::new(params, &format!("{p}.mixer"), d.object(), d.object(), rng),
        }
    }

    /// `Φ_j(v) ⊕ Φ_a(p)` per joint, `[k * N_v, 2 * localizer]`. With `assist == false`
    /// the action half is zero.
    pub fn fuse_action_context(
        &self,
        g: &mut Graph,
        input: &SkeletonInput,
        action_probs: &Array1<f64>,
        assist: bool,
    ) -> Result<Var> {
        let sum = action_probs.sum();
        if (sum - 1.0).abs() > 1e-4 || action_probs.iter().any(|&p| p < 0.0) {
            return Err(Error::NotASimplex { sum });
        }
        let pos = g.constant(input.positions.clone());
        let joint = self.phi_j.forward(g, pos);
        let rows = input.positions.nrows();
        let action = if assist {
            let probs = g.constant(action_probs.clone().insert_axis(ndarray::Axis(0)));
            let a = self.phi_a.forward(g, probs);
            g.tile_rows(a, rows)
        } else {
            let width = g.params().get(self.phi_a.second.bias).ncols();
            g.constant(Array2::zeros((rows, width)))
        };
        Ok(g.concat_cols(joint, action))
    }

    /// `mixer(category_embed(c) ⊕ relu(box(cx, cy, w, h, score)))`, `[k * N_o, 2 * localizer]`.
    pub fn embed_candidates(&self, g: &mut Graph, candidates: &CandidateSet) -> Var {
        let slots = candidates.frames.iter().flatten();
        let cats: Vec<usize> = slots.clone().map(|c| c.category_id).collect();
        let feats: Vec<f64> = slots.flat_map(|c| c.features()).collect();
        let feats = Array2::from_shape_vec((cats.len(), 5), feats).expect("five features per slot");
        let table = g.param(self.category_embed);
        let cat = g.gather_rows(table, cats);
        let feats = g.constant(feats);
        let boxes = self.boxes.forward(g, feats);
        let boxes = g.relu(boxes);
        let joined = g.concat_cols(cat, boxes);
        self.mixer.forward(g, joined)
    }
}

/// `A[t, i, j] = <f_sa[t, i], e_o[t, j]>` as `[k * N_v, N_o]`.
pub fn joint_object_affinity(g: &mut Graph, f_sa: Var, e_o: Var, frames: usize) -> Var {
    g.block_matmul_nt(f_sa, e_o, frames)
}

/// `max_i A[t, i, j]`, `[k, N_o]`.
pub fn pool_affinity(g: &mut Graph, affinity: Var, joints: usize) -> Var {
    g.group_max(affinity, joints)
}

/// `sigmoid(max_i A[t, i, j])`, `[k, N_o]`.
pub fn pool_attention(g: &mut Graph, affinity: Var, joints: usize) -> Var {
    let pooled = pool_affinity(g, affinity, joints);
    g.sigmoid(pooled)
}

pub fn category_index(candidates: &CandidateSet) -> Array2<usize> {
    Array2::from_shape_fn((candidates.frame_count(), candidates.slots()), |(t, j)| {
        candidates.frames[t][j].category_id
    })
}

/// Per-frame attention mass by category, normalized: `[k, N + 1]`.
/// Duplicate (padded) slots contribute once per copy.
pub fn category_timeline(g: &mut Graph, attention: Var, categories: Array2<usize>, columns: usize) -> Var {
    let mass = g.scatter_cols(attention, categories, columns);
    g.row_normalize(mass, EPS_NORM)
}

/// Mean over categories of the population variance over frames.
pub fn consistency_loss(g: &mut Graph, timeline: Var) -> Var {
    g.col_variance_mean(timeline)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Localization {
    pub slot: usize,
    pub bbox: [f64; 4],
    pub category_id: usize,
    pub attention: f64,
    /// `false` when the background slot wins.
    pub interaction: bool,
}

/// Per-frame argmax of the attention; ties go to the lowest slot.
///
/// Takes the pooled affinity `max_i A[t, i, j]` rather than its sigmoid: the
/// argmax is the same, but large affinities that all round to an attention of
/// one stay distinguishable.
pub fn localize(pooled: &Array2<f64>, candidates: &CandidateSet, categories: usize) -> Vec<Localization> {
    pooled
        .rows()
        .into_iter()
        .zip(&candidates.frames)
        .map(|(row, frame)| {
            let mut slot = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[slot] {
                    slot = j;
                }
            }
            let c = frame[slot];
            Localization {
                slot,
                bbox: c.bbox,
                category_id: c.category_id,
                attention: sigmoid(row[slot]),
                interaction: !c.is_background(categories),
            }
        })
        .collect()
}
