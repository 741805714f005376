use ndarray::{s, Axis};
use rand::Rng;

use super::{CandidateSet, SkeletonSequence};

/// Subtracts the reference joint's frame-0 position from every joint of every frame.
pub fn center_skeleton(seq: &SkeletonSequence, reference_joint: usize) -> SkeletonSequence {
    let origin = seq.joints.slice(s![0, reference_joint, ..]).to_owned();
    let mut joints = seq.joints.clone();
    for mut frame in joints.axis_iter_mut(Axis(0)) {
        for mut joint in frame.axis_iter_mut(Axis(0)) {
            joint -= &origin;
        }
    }
    SkeletonSequence {
        joints,
        person_id: seq.person_id,
    }
}

/// One frame index per segment, strictly increasing when `frames >= k`.
///
/// The sequence is cut into `k` contiguous segments, the first `frames % k` of
/// which get one extra frame. Sequences shorter than `k` first repeat every
/// index `ceil(k / frames)` times (kept in order) so the result is
/// non-decreasing.
pub fn segment_indices<R: Rng>(frames: usize, k: usize, rng: &mut R) -> Vec<usize> {
    assert!(frames >= 1 && k >= 1);
    let pool: Vec<usize> = if frames >= k {
        (0..frames).collect()
    } else {
        let copies = k.div_ceil(frames);
        (0..frames).flat_map(|t| std::iter::repeat(t).take(copies)).collect()
    };
    let (base, extra) = (pool.len() / k, pool.len() % k);
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let pick = if len == 1 { 0 } else { rng.gen_range(0..len) };
            let idx = pool[start + pick];
            start += len;
            idx
        })
        .collect()
}

/// Draws `repeats` segment samplings, applying the same indices to skeleton and candidates.
pub fn sample_frames<R: Rng>(
    seq: &SkeletonSequence,
    candidates: &CandidateSet,
    k: usize,
    rng: &mut R,
    repeats: usize,
) -> Vec<(SkeletonSequence, CandidateSet)> {
    (0..repeats)
        .map(|_| {
            let idx = segment_indices(seq.frame_count(), k, rng);
            (seq.select_frames(&idx), candidates.select_frames(&idx))
        })
        .collect()
}

/// `Rx(ax) · Ry(ay) · Rz(az)`, angles in radians.
pub fn rotation_matrix(ax: f64, ay: f64, az: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = ax.sin_cos();
    let (sy, cy) = ay.sin_cos();
    let (sz, cz) = az.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat3_mul(&mat3_mul(&rx, &ry), &rz)
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|m| a[i][m] * b[m][j]).sum();
        }
    }
    out
}

/// Applies one rigid rotation, angles uniform in `[-max_degrees, max_degrees]` per axis.
pub fn rotate_augment<R: Rng>(
    seq: &SkeletonSequence,
    rng: &mut R,
    max_degrees: f64,
) -> SkeletonSequence {
    if max_degrees <= 0.0 {
        return seq.clone();
    }
    let max = max_degrees.to_radians();
    let mut angle = || rng.gen_range(-max..=max);
    let (ax, ay, az) = (angle(), angle(), angle());
    let r = rotation_matrix(ax, ay, az);
    let mut joints = seq.joints.clone();
    for mut frame in joints.axis_iter_mut(Axis(0)) {
        for mut joint in frame.axis_iter_mut(Axis(0)) {
            let v = [joint[0], joint[1], joint[2]];
            for (i, row) in r.iter().enumerate() {
                joint[i] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
            }
        }
    }
    SkeletonSequence {
        joints,
        person_id: seq.person_id,
    }
}
