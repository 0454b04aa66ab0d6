//! Reverse-mode tape over dense matrices.
//!
//! Every forward op appends one node holding its value plus whatever the
//! backward pass needs. [`Graph::backward`] walks the tape in reverse and
//! returns parameter gradients aligned with the [`ParamStore`] the graph was
//! built against. Inference builds the same graph and simply never calls
//! `backward`, so training and scoring share one code path.

use super::matrix::{gemm, MatRef};
use super::{Gradients, Matrix, ParamId, ParamStore};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// How attention rows are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionLayout {
    /// Every query row attends to every key row.
    Dense,
    /// Rows form `groups` independent sets of `size` members; member `j` of
    /// set `i` lives at row `j * groups + i`. Attention stays inside a set.
    Grouped { groups: usize, size: usize },
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        rstd: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    RepeatRows(Var),
    SumSquares(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: AttentionLayout,
        probs: Vec<f64>,
    },
    SoftmaxNll {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
        floored: Vec<bool>,
    },
    MixtureNll {
        logits: Var,
        mu: Var,
        log_sigma: Var,
        targets: Vec<f64>,
        weights: Matrix,
        resp: Matrix,
        sigma: Vec<f64>,
        sigma_floored: Vec<bool>,
        floored: Vec<bool>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Floors used by the fused likelihood ops.
#[derive(Debug, Clone, Copy)]
pub struct MixtureFloors {
    pub sigma: f64,
    pub density: f64,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    softmax_deviation: f64,
}

const LN_EPS: f64 = 1e-5;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;
/// `1 / √(2π)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            param_nodes: vec![None; params.len()],
            softmax_deviation: 0.0,
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest `|Σp − 1|` over every probability row produced by the fused
    /// likelihood ops on this tape.
    pub fn softmax_deviation(&self) -> f64 {
        self.softmax_deviation
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Leaf bound to a stored parameter; repeated calls reuse one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        Matrix::from_vec(x.rows(), x.cols(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Matrix {
        let x = self.value(a);
        Matrix::from_vec(x.rows(), x.cols(), x.data().iter().map(|v| f(*v)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p + q);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p - q);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |p, q| p * q);
        self.push(out, Op::Mul(a, b))
    }

    /// `a + row` with `row: 1×cols` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1);
        assert_eq!(x.cols(), r.cols(), "broadcast width mismatch");
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.map(a, |v| scale * v + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| {
            0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
        });
        self.push(out, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Row-wise layer normalization with learned `gain` and `bias` (`1×d`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xm = self.value(x);
        let (n, d) = xm.shape();
        let (gm, bm) = (self.value(gain), self.value(bias));
        assert_eq!(gm.shape(), (1, d));
        assert_eq!(bm.shape(), (1, d));
        let mut xhat = Matrix::zeros(n, d);
        let mut out = Matrix::zeros(n, d);
        let mut rstd = Vec::with_capacity(n);
        for i in 0..n {
            let row = xm.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            for j in 0..d {
                let xh = (row[j] - mean) * r;
                xhat.set(i, j, xh);
                out.set(i, j, xh * gm.data()[j] + bm.data()[j]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for p in parts {
                let m = self.value(*p);
                assert_eq!(m.rows(), rows, "concat_cols row mismatch");
                out.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
                off += m.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_rows(start, len);
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.rows(), len);
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Tiles a `1×d` row into `n×d`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows(), 1);
        let mut data = Vec::with_capacity(n * x.cols());
        for _ in 0..n {
            data.extend_from_slice(x.data());
        }
        let out = Matrix::from_vec(n, x.cols(), data);
        self.push(out, Op::RepeatRows(a))
    }

    /// `Σ x²` as a `1×1` node.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).norm_sq();
        self.push(Matrix::filled(1, 1, s), Op::SumSquares(a))
    }

    /// Scaled dot-product multi-head attention over pre-projected `q`, `k`, `v`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        layout: AttentionLayout,
    ) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let d = qm.cols();
        assert_eq!(km.cols(), d);
        assert_eq!(vm.cols(), d);
        assert_eq!(km.rows(), vm.rows());
        assert!(heads >= 1 && d % heads == 0, "width not divisible by heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (out, probs) = match layout {
            AttentionLayout::Dense => dense_attention_forward(qm, km, vm, heads, dh, scale),
            AttentionLayout::Grouped { groups, size } => {
                assert_eq!(qm.rows(), groups * size);
                assert_eq!(km.rows(), groups * size);
                grouped_attention_forward(qm, km, vm, heads, dh, scale, groups, size)
            }
        };
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                layout,
                probs,
            },
        )
    }

    /// Summed categorical NLL `Σ_i −ln max(softmax(logits_i)[target_i], floor)`.
    pub fn softmax_nll(&mut self, logits: Var, targets: &[usize], floor: f64) -> Var {
        let lm = self.value(logits);
        assert_eq!(lm.rows(), targets.len());
        let probs = softmax_rows(lm);
        let mut total = 0.0;
        let mut floored = Vec::with_capacity(targets.len());
        let mut dev: f64 = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < lm.cols(), "target index out of range");
            let row = probs.row(i);
            dev = dev.max((row.iter().sum::<f64>() - 1.0).abs());
            let p = row[t];
            floored.push(p < floor);
            total += -(p.max(floor)).ln();
        }
        self.softmax_deviation = self.softmax_deviation.max(dev);
        self.push(
            Matrix::filled(1, 1, total),
            Op::SoftmaxNll {
                logits,
                targets: targets.to_vec(),
                probs,
                floored,
            },
        )
    }

    /// Summed Gaussian-mixture NLL with softmax weights from `logits`
    /// (`n×K`), shared means `mu` and log-stds `log_sigma` (`1×K`).
    pub fn mixture_nll(
        &mut self,
        logits: Var,
        mu: Var,
        log_sigma: Var,
        targets: &[f64],
        floors: MixtureFloors,
    ) -> Var {
        let lm = self.value(logits);
        let (n, k) = lm.shape();
        assert_eq!(n, targets.len());
        let mum = self.value(mu);
        let lsm = self.value(log_sigma);
        assert_eq!(mum.shape(), (1, k));
        assert_eq!(lsm.shape(), (1, k));
        let weights = softmax_rows(lm);
        let mut sigma = Vec::with_capacity(k);
        let mut sigma_floored = Vec::with_capacity(k);
        for &ls in lsm.data() {
            let s = ls.exp();
            sigma_floored.push(s < floors.sigma);
            sigma.push(s.max(floors.sigma));
        }
        let mut resp = Matrix::zeros(n, k);
        let mut floored = Vec::with_capacity(n);
        let mut total = 0.0;
        let mut dev: f64 = 0.0;
        for i in 0..n {
            let w = weights.row(i);
            dev = dev.max((w.iter().sum::<f64>() - 1.0).abs());
            let d = targets[i];
            let mut density = 0.0;
            for j in 0..k {
                let z = (d - mum.data()[j]) / sigma[j];
                let term = w[j] * (INV_SQRT_2PI / sigma[j]) * (-0.5 * z * z).exp();
                resp.set(i, j, term);
                density += term;
            }
            let is_floored = density < floors.density;
            floored.push(is_floored);
            total += -(density.max(floors.density)).ln();
            if !is_floored {
                resp.row_mut(i).iter_mut().for_each(|r| *r /= density);
            }
        }
        self.softmax_deviation = self.softmax_deviation.max(dev);
        self.push(
            Matrix::filled(1, 1, total),
            Op::MixtureNll {
                logits,
                mu,
                log_sigma,
                targets: targets.to_vec(),
                weights,
                resp,
                sigma,
                sigma_floored,
                floored,
            },
        )
    }

    /// Reverse pass from a `1×1` loss node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients::empty(self.params.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let mut da = Matrix::zeros(am.rows(), am.cols());
                    gemm(
                        g.rows(),
                        g.cols(),
                        bm.rows(),
                        MatRef::plain(&g),
                        MatRef::transposed(bm),
                        da.data_mut(),
                        am.cols(),
                        0.0,
                    );
                    let mut db = Matrix::zeros(bm.rows(), bm.cols());
                    gemm(
                        am.cols(),
                        am.rows(),
                        g.cols(),
                        MatRef::transposed(am),
                        MatRef::plain(&g),
                        db.data_mut(),
                        bm.cols(),
                        0.0,
                    );
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let mut neg = g.clone();
                    neg.scale_in_place(-1.0);
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let da = elementwise(&g, bm, |x, y| x * y);
                    let db = elementwise(&g, am, |x, y| x * y);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, column_sums(&g));
                    acc(&mut grads, *a, g);
                }
                Op::Affine(a, s) => {
                    let mut da = g;
                    da.scale_in_place(*s);
                    acc(&mut grads, *a, da);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let da = elementwise(&g, x, |gi, x| {
                        let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                        let t = u.tanh();
                        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
                        gi * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    });
                    acc(&mut grads, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = elementwise(&g, &node.value, |gi, y| gi * y * (1.0 - y));
                    acc(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let da = elementwise(&g, &node.value, |gi, y| gi * (1.0 - y * y));
                    acc(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gm = self.value(*gain);
                    let (n, d) = xhat.shape();
                    let mut dgain = Matrix::zeros(1, d);
                    let mut dbias = Matrix::zeros(1, d);
                    let mut dx = Matrix::zeros(n, d);
                    let mut dxhat = vec![0.0; d];
                    for i in 0..n {
                        let gr = g.row(i);
                        let xr = xhat.row(i);
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..d {
                            dgain.data_mut()[j] += gr[j] * xr[j];
                            dbias.data_mut()[j] += gr[j];
                            dxhat[j] = gr[j] * gm.data()[j];
                            mean_dxhat += dxhat[j];
                            mean_dxhat_xhat += dxhat[j] * xr[j];
                        }
                        mean_dxhat /= d as f64;
                        mean_dxhat_xhat /= d as f64;
                        let out = dx.row_mut(i);
                        for j in 0..d {
                            out[j] = rstd[i] * (dxhat[j] - mean_dxhat - xr[j] * mean_dxhat_xhat);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gain, dgain);
                    acc(&mut grads, *bias, dbias);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (r, c) = self.value(*p).shape();
                        let mut dp = Matrix::zeros(r, c);
                        for i in 0..r {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        off += c;
                        acc(&mut grads, *p, dp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let r = self.value(*p).rows();
                        acc(&mut grads, *p, g.slice_rows(off, r));
                        off += r;
                    }
                }
                Op::SliceRows(a, start) => {
                    let am = self.value(*a);
                    let mut da = Matrix::zeros(am.rows(), am.cols());
                    let c = am.cols();
                    da.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *a, da);
                }
                Op::SliceCols(a, start) => {
                    let am = self.value(*a);
                    let mut da = Matrix::zeros(am.rows(), am.cols());
                    for i in 0..am.rows() {
                        da.row_mut(i)[*start..start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::RepeatRows(a) => acc(&mut grads, *a, column_sums(&g)),
                Op::SumSquares(a) => {
                    let s = 2.0 * g.data()[0];
                    let da = self.map(*a, |x| s * x);
                    acc(&mut grads, *a, da);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    layout,
                    probs,
                } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let dh = qm.cols() / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let (dq, dk, dv) = match *layout {
                        AttentionLayout::Dense => {
                            dense_attention_backward(&g, qm, km, vm, *heads, dh, scale, probs)
                        }
                        AttentionLayout::Grouped { groups, size } => grouped_attention_backward(
                            &g, qm, km, vm, *heads, dh, scale, probs, groups, size,
                        ),
                    };
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::SoftmaxNll {
                    logits,
                    targets,
                    probs,
                    floored,
                } => {
                    let scale = g.data()[0];
                    let mut dl = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        let row = dl.row_mut(i);
                        if floored[i] {
                            row.iter_mut().for_each(|x| *x = 0.0);
                        } else {
                            row[t] -= 1.0;
                            row.iter_mut().for_each(|x| *x *= scale);
                        }
                    }
                    acc(&mut grads, *logits, dl);
                }
                Op::MixtureNll {
                    logits,
                    mu,
                    log_sigma,
                    targets,
                    weights,
                    resp,
                    sigma,
                    sigma_floored,
                    floored,
                } => {
                    let scale = g.data()[0];
                    let (n, k) = weights.shape();
                    let mum = self.value(*mu);
                    let mut dl = Matrix::zeros(n, k);
                    let mut dmu = Matrix::zeros(1, k);
                    let mut dls = Matrix::zeros(1, k);
                    for i in 0..n {
                        if floored[i] {
                            continue;
                        }
                        let d = targets[i];
                        for j in 0..k {
                            let r = resp.get(i, j);
                            dl.set(i, j, scale * (weights.get(i, j) - r));
                            let z = (d - mum.data()[j]) / sigma[j];
                            dmu.data_mut()[j] -= scale * r * z / sigma[j];
                            if !sigma_floored[j] {
                                dls.data_mut()[j] -= scale * r * (z * z - 1.0);
                            }
                        }
                    }
                    acc(&mut grads, *logits, dl);
                    acc(&mut grads, *mu, dmu);
                    acc(&mut grads, *log_sigma, dls);
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn dense_attention_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: usize,
    dh: usize,
    scale: f64,
) -> (Matrix, Vec<f64>) {
    let (nq, d) = q.shape();
    let nk = k.rows();
    let mut out = Matrix::zeros(nq, d);
    let mut probs = vec![0.0; heads * nq * nk];
    for h in 0..heads {
        let off = h * dh;
        let p = &mut probs[h * nq * nk..(h + 1) * nq * nk];
        gemm(
            nq,
            dh,
            nk,
            MatRef::new(&q.data()[off..], d as isize, 1),
            MatRef::new(&k.data()[off..], 1, d as isize),
            p,
            nk,
            0.0,
        );
        for row in p.chunks_mut(nk) {
            row.iter_mut().for_each(|x| *x *= scale);
            softmax_in_place(row);
        }
        gemm(
            nq,
            nk,
            dh,
            MatRef::new(p, nk as isize, 1),
            MatRef::new(&v.data()[off..], d as isize, 1),
            &mut out.data_mut()[off..],
            d,
            0.0,
        );
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
fn dense_attention_backward(
    g: &Matrix,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: usize,
    dh: usize,
    scale: f64,
    probs: &[f64],
) -> (Matrix, Matrix, Matrix) {
    let (nq, d) = q.shape();
    let nk = k.rows();
    let mut dq = Matrix::zeros(nq, d);
    let mut dk = Matrix::zeros(nk, d);
    let mut dv = Matrix::zeros(nk, d);
    let mut dp = vec![0.0; nq * nk];
    for h in 0..heads {
        let off = h * dh;
        let p = &probs[h * nq * nk..(h + 1) * nq * nk];
        // dP = dO_h · V_hᵀ
        gemm(
            nq,
            dh,
            nk,
            MatRef::new(&g.data()[off..], d as isize, 1),
            MatRef::new(&v.data()[off..], 1, d as isize),
            &mut dp,
            nk,
            0.0,
        );
        // dV_h = Pᵀ · dO_h
        gemm(
            nk,
            nq,
            dh,
            MatRef::new(p, 1, nk as isize),
            MatRef::new(&g.data()[off..], d as isize, 1),
            &mut dv.data_mut()[off..],
            d,
            0.0,
        );
        // dS = P ⊙ (dP − rowsum(dP ⊙ P)) · scale
        for (dprow, prow) in dp.chunks_mut(nk).zip(p.chunks(nk)) {
            let dot: f64 = dprow.iter().zip(prow).map(|(a, b)| a * b).sum();
            for (x, pv) in dprow.iter_mut().zip(prow) {
                *x = pv * (*x - dot) * scale;
            }
        }
        gemm(
            nq,
            nk,
            dh,
            MatRef::new(&dp, nk as isize, 1),
            MatRef::new(&k.data()[off..], d as isize, 1),
            &mut dq.data_mut()[off..],
            d,
            0.0,
        );
        gemm(
            nk,
            nq,
            dh,
            MatRef::new(&dp, 1, nk as isize),
            MatRef::new(&q.data()[off..], d as isize, 1),
            &mut dk.data_mut()[off..],
            d,
            0.0,
        );
    }
    (dq, dk, dv)
}

#[allow(clippy::too_many_arguments)]
fn grouped_attention_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: usize,
    dh: usize,
    scale: f64,
    groups: usize,
    size: usize,
) -> (Matrix, Vec<f64>) {
    let d = q.cols();
    let mut out = Matrix::zeros(q.rows(), d);
    let mut probs = vec![0.0; groups * heads * size * size];
    let mut scores = vec![0.0; size];
    for gi in 0..groups {
        for h in 0..heads {
            let off = h * dh;
            for a in 0..size {
                let qa = &q.row(a * groups + gi)[off..off + dh];
                for (b, s) in scores.iter_mut().enumerate() {
                    let kb = &k.row(b * groups + gi)[off..off + dh];
                    *s = qa.iter().zip(kb).map(|(x, y)| x * y).sum::<f64>() * scale;
                }
                softmax_in_place(&mut scores);
                let base = ((gi * heads + h) * size + a) * size;
                probs[base..base + size].copy_from_slice(&scores);
                let orow = &mut out.row_mut(a * groups + gi)[off..off + dh];
                for (b, pb) in scores.iter().enumerate() {
                    let vb = &v.row(b * groups + gi)[off..off + dh];
                    for (o, x) in orow.iter_mut().zip(vb) {
                        *o += pb * x;
                    }
                }
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
fn grouped_attention_backward(
    g: &Matrix,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: usize,
    dh: usize,
    scale: f64,
    probs: &[f64],
    groups: usize,
    size: usize,
) -> (Matrix, Matrix, Matrix) {
    let d = q.cols();
    let n = q.rows();
    let mut dq = Matrix::zeros(n, d);
    let mut dk = Matrix::zeros(n, d);
    let mut dv = Matrix::zeros(n, d);
    let mut dp = vec![0.0; size];
    for gi in 0..groups {
        for h in 0..heads {
            let off = h * dh;
            for a in 0..size {
                let ra = a * groups + gi;
                let base = ((gi * heads + h) * size + a) * size;
                let p = &probs[base..base + size];
                let go = &g.row(ra)[off..off + dh];
                for b in 0..size {
                    let rb = b * groups + gi;
                    let vb = &v.row(rb)[off..off + dh];
                    dp[b] = go.iter().zip(vb).map(|(x, y)| x * y).sum();
                    let dvb = &mut dv.row_mut(rb)[off..off + dh];
                    for (o, x) in dvb.iter_mut().zip(go) {
                        *o += p[b] * x;
                    }
                }
                let dot: f64 = dp.iter().zip(p).map(|(x, y)| x * y).sum();
                for b in 0..size {
                    let ds = p[b] * (dp[b] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let rb = b * groups + gi;
                    for j in 0..dh {
                        let qv = q.get(ra, off + j);
                        let kv = k.get(rb, off + j);
                        dq.data_mut()[ra * d + off + j] += ds * kv;
                        dk.data_mut()[rb * d + off + j] += ds * qv;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
