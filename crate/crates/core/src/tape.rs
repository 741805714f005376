//! Minimal reverse-mode differentiation over row-major 2-D `f64` arrays.
//!
//! Every per-sample tensor in the pipeline is stored as a matrix whose rows
//! are the flattened leading axes (for example `[T * N_v, D]` for joint
//! features). Ops that act "per frame" take the number of frames as a block
//! count and treat consecutive row ranges as independent matrices.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::params::{Grads, ParamId, Params};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    /// Block-wise `A_t · B_tᵀ`.
    BlockMatMulNT { a: Var, b: Var, blocks: usize },
    /// Block-wise `A_t · B_t`.
    BlockMatMul { a: Var, b: Var, blocks: usize },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    /// Column-wise max over consecutive groups of rows; stores the winning row.
    GroupMax { x: Var, argmax: Array2<usize> },
    ShiftRows { x: Var, offset: isize },
    ScatterCols { x: Var, index: Array2<usize> },
    RowNormalize { x: Var, eps: f64 },
    ColVarianceMean(Var),
    WeightedSum { x: Var, weights: Array2<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    // `None` for parameter leaves, whose value lives in the parameter store.
    value: Option<Array2<f64>>,
}

/// A recording of one forward computation.
pub struct Graph<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p Params) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p Params {
        self.params
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(value), _) => value,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.dim(), (1, 1));
        value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), out)
    }

    /// `x + b` with `b` a single row broadcast over every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.nrows(), 1, "bias must be a single row");
        let out = self.value(x) + &bias.row(0);
        self.push(Op::AddBias(x, b), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), out)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x) * factor;
        self.push(Op::Scale(x, factor), out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols: row count mismatch");
        self.push(Op::ConcatCols(a, b), out)
    }

    /// Output row `r` is input row `index[r]`. Covers lookup, tiling and slicing.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Var {
        let out = self.value(x).select(Axis(0), &index);
        self.push(Op::GatherRows(x, index), out)
    }

    /// Repeat the rows of `x` `times` times, e.g. a `[N, D]` table into `[times * N, D]`.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Var {
        let n = self.value(x).nrows();
        let index = (0..times).flat_map(|_| 0..n).collect();
        self.gather_rows(x, index)
    }

    pub fn block_matmul_nt(&mut self, a: Var, b: Var, blocks: usize) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (ra, rb) = (block_rows(av, blocks), block_rows(bv, blocks));
        let mut out = Array2::zeros((blocks * ra, rb));
        for t in 0..blocks {
            let prod = block(av, t, ra).dot(&block(bv, t, rb).t());
            out.slice_mut(s![t * ra..(t + 1) * ra, ..]).assign(&prod);
        }
        self.push(Op::BlockMatMulNT { a, b, blocks }, out)
    }

    pub fn block_matmul(&mut self, a: Var, b: Var, blocks: usize) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (ra, rb) = (block_rows(av, blocks), block_rows(bv, blocks));
        assert_eq!(av.ncols(), rb, "block_matmul: inner dimension mismatch");
        let mut out = Array2::zeros((blocks * ra, bv.ncols()));
        for t in 0..blocks {
            let prod = block(av, t, ra).dot(&block(bv, t, rb));
            out.slice_mut(s![t * ra..(t + 1) * ra, ..]).assign(&prod);
        }
        self.push(Op::BlockMatMul { a, b, blocks }, out)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        self.push(Op::SoftmaxRows(x), out)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        self.push(Op::LogSoftmaxRows(x), out)
    }

    /// Max over each run of `group` consecutive rows, per column: `[G * group, D] -> [G, D]`.
    /// Ties resolve to the earliest row.
    pub fn group_max(&mut self, x: Var, group: usize) -> Var {
        let xv = self.value(x);
        assert!(group > 0 && xv.nrows() % group == 0, "group_max: bad group size");
        let groups = xv.nrows() / group;
        let mut out = Array2::zeros((groups, xv.ncols()));
        let mut argmax = Array2::zeros((groups, xv.ncols()));
        for gi in 0..groups {
            for c in 0..xv.ncols() {
                let mut best = gi * group;
                for r in gi * group + 1..(gi + 1) * group {
                    if xv[[r, c]] > xv[[best, c]] {
                        best = r;
                    }
                }
                out[[gi, c]] = xv[[best, c]];
                argmax[[gi, c]] = best;
            }
        }
        self.push(Op::GroupMax { x, argmax }, out)
    }

    /// `out[t] = x[t + offset]`, zero outside the valid range.
    pub fn shift_rows(&mut self, x: Var, offset: isize) -> Var {
        let xv = self.value(x);
        let n = xv.nrows() as isize;
        let mut out = Array2::zeros(xv.raw_dim());
        for t in 0..n {
            let src = t + offset;
            if (0..n).contains(&src) {
                out.row_mut(t as usize).assign(&xv.row(src as usize));
            }
        }
        self.push(Op::ShiftRows { x, offset }, out)
    }

    /// `out[r, index[r, j]] += x[r, j]` into `columns` output columns.
    pub fn scatter_cols(&mut self, x: Var, index: Array2<usize>, columns: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.dim(), index.dim(), "scatter_cols: index shape mismatch");
        let mut out = Array2::zeros((xv.nrows(), columns));
        for ((r, j), &c) in index.indexed_iter() {
            out[[r, c]] += xv[[r, j]];
        }
        self.push(Op::ScatterCols { x, index }, out)
    }

    /// `x[r, :] / (Σ x[r, :] + eps)`.
    pub fn row_normalize(&mut self, x: Var, eps: f64) -> Var {
        let mut out = self.value(x).clone();
        for mut row in out.rows_mut() {
            let denom = row.sum() + eps;
            row.mapv_inplace(|v| v / denom);
        }
        self.push(Op::RowNormalize { x, eps }, out)
    }

    /// Population variance of every column along the rows, averaged over columns.
    pub fn col_variance_mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let mean = xv.mean_axis(Axis(0)).expect("non-empty");
        let total: f64 = (xv - &mean).mapv(|d| d * d).sum();
        let out = Array2::from_elem((1, 1), total / (rows * cols) as f64);
        self.push(Op::ColVarianceMean(x), out)
    }

    /// `Σ x ⊙ weights` as a 1×1 node.
    pub fn weighted_sum(&mut self, x: Var, weights: Array2<f64>) -> Var {
        let total = (self.value(x) * &weights).sum();
        self.push(
            Op::WeightedSum { x, weights },
            Array2::from_elem((1, 1), total),
        )
    }

    /// Reverse pass from a 1×1 output. Returns gradients for every parameter
    /// the graph touched; untouched parameters get zeros.
    pub fn backward(&self, output: Var) -> Grads {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::ones(self.value(output).raw_dim()));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Constant => {}
                Op::Param(_) => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale(x, factor) => {
                    accumulate(&mut grads, *x, g * *factor);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(Var(i)))
                        .for_each(|gx, &y| {
                            if y <= 0.0 {
                                *gx = 0.0;
                            }
                        });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(Var(i)))
                        .for_each(|gx, &y| *gx *= y * (1.0 - y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(*a).ncols();
                    accumulate(&mut grads, *a, g.slice(s![.., ..split]).to_owned());
                    accumulate(&mut grads, *b, g.slice(s![.., split..]).to_owned());
                }
                Op::GatherRows(x, index) => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for (r, &src) in index.iter().enumerate() {
                        let mut row = gx.row_mut(src);
                        row += &g.row(r);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::BlockMatMulNT { a, b, blocks } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (ra, rb) = (block_rows(av, *blocks), block_rows(bv, *blocks));
                    let mut ga = Array2::zeros(av.raw_dim());
                    let mut gb = Array2::zeros(bv.raw_dim());
                    for t in 0..*blocks {
                        let gt = block(&g, t, ra);
                        ga.slice_mut(s![t * ra..(t + 1) * ra, ..])
                            .assign(&gt.dot(&block(bv, t, rb)));
                        gb.slice_mut(s![t * rb..(t + 1) * rb, ..])
                            .assign(&gt.t().dot(&block(av, t, ra)));
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::BlockMatMul { a, b, blocks } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (ra, rb) = (block_rows(av, *blocks), block_rows(bv, *blocks));
                    let mut ga = Array2::zeros(av.raw_dim());
                    let mut gb = Array2::zeros(bv.raw_dim());
                    for t in 0..*blocks {
                        let gt = block(&g, t, ra);
                        ga.slice_mut(s![t * ra..(t + 1) * ra, ..])
                            .assign(&gt.dot(&block(bv, t, rb).t()));
                        gb.slice_mut(s![t * rb..(t + 1) * rb, ..])
                            .assign(&block(av, t, ra).t().dot(&gt));
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SoftmaxRows(x) => {
                    let y = self.value(Var(i));
                    let mut gx = g;
                    for (mut grow, yrow) in gx.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|gv, &yv| *gv = yv * (*gv - dot));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LogSoftmaxRows(x) => {
                    let y = self.value(Var(i));
                    let mut gx = g;
                    for (mut grow, yrow) in gx.rows_mut().into_iter().zip(y.rows()) {
                        let total = grow.sum();
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|gv, &yv| *gv -= yv.exp() * total);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::GroupMax { x, argmax } => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    for ((gi, c), &r) in argmax.indexed_iter() {
                        gx[[r, c]] += g[[gi, c]];
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ShiftRows { x, offset } => {
                    let n = g.nrows() as isize;
                    let mut gx = Array2::zeros(g.raw_dim());
                    for t in 0..n {
                        let src = t + offset;
                        if (0..n).contains(&src) {
                            gx.row_mut(src as usize).assign(&g.row(t as usize));
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ScatterCols { x, index } => {
                    let mut gx = Array2::zeros(index.raw_dim());
                    for ((r, j), &c) in index.indexed_iter() {
                        gx[[r, j]] = g[[r, c]];
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::RowNormalize { x, eps } => {
                    let xv = self.value(*x);
                    let mut gx = Array2::zeros(xv.raw_dim());
                    for r in 0..xv.nrows() {
                        let denom = xv.row(r).sum() + eps;
                        let gdotx: f64 = g.row(r).dot(&xv.row(r));
                        for c in 0..xv.ncols() {
                            gx[[r, c]] = g[[r, c]] / denom - gdotx / (denom * denom);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ColVarianceMean(x) => {
                    let xv = self.value(*x);
                    let (rows, cols) = xv.dim();
                    let mean = xv.mean_axis(Axis(0)).expect("non-empty");
                    let factor = 2.0 * g[[0, 0]] / (rows * cols) as f64;
                    accumulate(&mut grads, *x, (xv - &mean) * factor);
                }
                Op::WeightedSum { x, weights } => {
                    accumulate(&mut grads, *x, weights * g[[0, 0]]);
                }
            }
        }

        let mut out = Grads::zeros_like(self.params);
        for (pid, slot) in self.param_nodes.iter().enumerate() {
            if let Some(v) = slot {
                if let Some(g) = grads[v.0].take() {
                    out.add_assign_at(pid, &g);
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn block_rows(x: &Array2<f64>, blocks: usize) -> usize {
    assert!(
        blocks > 0 && x.nrows() % blocks == 0,
        "row count {} not divisible into {} blocks",
        x.nrows(),
        blocks
    );
    x.nrows() / blocks
}

fn block(x: &Array2<f64>, t: usize, rows: usize) -> ArrayView2<'_, f64> {
    x.slice(s![t * rows..(t + 1) * rows, ..])
}

/// Logistic function, clamped so the result stays strictly inside (0, 1) in `f64`.
pub fn sigmoid(v: f64) -> f64 {
    const EDGE: f64 = 1e-15;
    let y = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    y.clamp(EDGE, 1.0 - EDGE)
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}
