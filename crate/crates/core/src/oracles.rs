//! Brute-force reference computations for the test suite.
//!
//! Everything here is written with explicit loops in `f64` and deliberately
//! avoids the tape and the model code, so agreement between the two is
//! meaningful.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::params::{Grads, Params};

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe);
        probe[i] = x[i] - step;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(i));
        }
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Per-frame inner products: `out[t*ra + i, j] = <a[t*ra + i], b[t*rb + j]>`.
pub fn naive_affinity(a: &Array2<f64>, b: &Array2<f64>, frames: usize) -> Array2<f64> {
    let ra = a.nrows() / frames;
    let rb = b.nrows() / frames;
    let mut out = Array2::zeros((a.nrows(), rb));
    for t in 0..frames {
        for i in 0..ra {
            for j in 0..rb {
                let mut acc = 0.0;
                for d in 0..a.ncols() {
                    acc += a[[t * ra + i, d]] * b[[t * rb + j, d]];
                }
                out[[t * ra + i, j]] = acc;
            }
        }
    }
    out
}

/// Mean over columns of the population variance down each column.
pub fn naive_variance(p: &Array2<f64>) -> f64 {
    let (rows, cols) = p.dim();
    let mut total = 0.0;
    for c in 0..cols {
        let mut mean = 0.0;
        for t in 0..rows {
            mean += p[[t, c]];
        }
        mean /= rows as f64;
        let mut var = 0.0;
        for t in 0..rows {
            var += (p[[t, c]] - mean) * (p[[t, c]] - mean);
        }
        total += var / rows as f64;
    }
    total / cols as f64
}

/// Per-frame `S_t · z_t · W` with `S: [frames * n, n]`, `z: [frames * n, d_in]`.
pub fn naive_gcn(z: &Array2<f64>, s: &Array2<f64>, w: &Array2<f64>, frames: usize) -> Array2<f64> {
    let n = z.nrows() / frames;
    let mut out = Array2::zeros((z.nrows(), w.ncols()));
    for t in 0..frames {
        for i in 0..n {
            for o in 0..w.ncols() {
                let mut acc = 0.0;
                for j in 0..n {
                    for d in 0..z.ncols() {
                        acc += s[[t * n + i, j]] * z[[t * n + j, d]] * w[[d, o]];
                    }
                }
                out[[t * n + i, o]] = acc;
            }
        }
    }
    out
}

/// Scatter attention mass by category and normalize each frame.
pub fn naive_timeline(att: &Array2<f64>, categories: &Array2<usize>, columns: usize, eps: f64) -> Array2<f64> {
    let mut out = Array2::zeros((att.nrows(), columns));
    for t in 0..att.nrows() {
        let mut total = 0.0;
        for j in 0..att.ncols() {
            out[[t, categories[[t, j]]]] += att[[t, j]];
            total += att[[t, j]];
        }
        for c in 0..columns {
            out[[t, c]] /= total + eps;
        }
    }
    out
}

/// Sigmoid of the max over each frame's joints: `[frames * n, m] -> [frames, m]`.
pub fn naive_pool_attention(affinity: &Array2<f64>, frames: usize) -> Array2<f64> {
    let n = affinity.nrows() / frames;
    let mut out = Array2::zeros((frames, affinity.ncols()));
    for t in 0..frames {
        for j in 0..affinity.ncols() {
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                if affinity[[t * n + i, j]] > best {
                    best = affinity[[t * n + i, j]];
                }
            }
            out[[t, j]] = 1.0 / (1.0 + (-best).exp());
        }
    }
    out
}

/// Attention-weighted average of each frame's candidate embeddings.
pub fn naive_weighted_fusion(att: &Array2<f64>, embed: &Array2<f64>, eps: f64) -> Array2<f64> {
    let (frames, slots) = att.dim();
    let mut out = Array2::zeros((frames, embed.ncols()));
    for t in 0..frames {
        let mut total = 0.0;
        for j in 0..slots {
            total += att[[t, j]];
        }
        for d in 0..embed.ncols() {
            let mut acc = 0.0;
            for j in 0..slots {
                acc += att[[t, j]] * embed[[t * slots + j, d]];
            }
            out[[t, d]] = acc / (total + eps);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub step: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_relative_error).fold(0.0, f64::max)
    }
}

/// Compares analytic gradients against central differences of `objective`.
///
/// Each tensor's error is `max_i |analytic_i - numeric_i|` divided by the
/// largest gradient magnitude in that tensor (floored at `1e-6`). With
/// `per_tensor = Some(n)`, only `n` evenly spaced coordinates per tensor are
/// probed; `None` probes all of them.
pub fn check_gradients(
    params: &Params,
    analytic: &Grads,
    mut objective: impl FnMut(&Params) -> f64,
    step: f64,
    tolerance: f64,
    per_tensor: Option<usize>,
) -> Result<GradCheckReport> {
    let mut work = params.clone();
    let mut tensors = Vec::new();
    for id in params.ids() {
        let len = params.get(id).len();
        let coords: Vec<usize> = match per_tensor {
            Some(n) if n < len => (0..n).map(|i| i * len / n).collect(),
            _ => (0..len).collect(),
        };
        let a = analytic.get(id);
        let mut max_diff = 0.0f64;
        let mut scale = 1e-6f64;
        for &c in &coords {
            let original = params.get(id).as_slice().expect("standard layout")[c];
            let mut eval = |v: f64| {
                work.get_mut(id).as_slice_mut().expect("standard layout")[c] = v;
                objective(&work)
            };
            let up = eval(original + step);
            let down = eval(original - step);
            eval(original);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(c));
            }
            let numeric = (up - down) / (2.0 * step);
            let analytic = a.as_slice().expect("standard layout")[c];
            max_diff = max_diff.max((analytic - numeric).abs());
            scale = scale.max(analytic.abs()).max(numeric.abs());
        }
        tensors.push(TensorCheck {
            name: params.name(id).to_string(),
            checked: coords.len(),
            max_relative_error: max_diff / scale,
        });
    }
    let pass = tensors.iter().all(|t| t.max_relative_error <= tolerance);
    Ok(GradCheckReport {
        tensors,
        step,
        tolerance,
        pass,
    })
}
