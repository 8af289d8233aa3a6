//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar node with respect
//! to every parameter that took part. Parameters are read from a borrowed
//! [`ParamStore`] without copying.

use ndarray::{s, Array2, Axis, Zip};
use std::rc::Rc;

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Mat,
    pub trainable: bool,
}

/// Named parameter tensors, all stored as matrices (vectors are `1 x n`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(self.id_of(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.entries[id.0].trainable)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }
}

/// Per-parameter gradients indexed like the store; `None` means zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Option<Mat>>,
}

impl Grads {
    pub fn zeros(n: usize) -> Self {
        Self {
            tensors: vec![None; n],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.tensors[id.0].as_ref()
    }

    fn accumulate(&mut self, id: ParamId, g: Mat) {
        match &mut self.tensors[id.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn add_assign(&mut self, other: &Grads) {
        for (i, g) in other.tensors.iter().enumerate() {
            if let Some(g) = g {
                match &mut self.tensors[i] {
                    Some(acc) => *acc += g,
                    slot => *slot = Some(g.clone()),
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .flatten()
            .all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Which attention scores may be non-zero; `true` = allowed.
pub type Mask = Rc<Array2<bool>>;

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Gelu(Var),
    Sigmoid(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    LeftMul {
        c: Mat,
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Mat,
    },
    BceLogits {
        logits: Var,
        targets: Mat,
    },
}

struct Node {
    value: Option<Mat>,
    op: Op,
    needs_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    track_params: bool,
}

fn exact_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn exact_gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)) + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax restricted to allowed entries; rows with nothing allowed
/// become all zeros.
pub fn masked_softmax(x: &Mat, mask: Option<&Array2<bool>>) -> Mat {
    let mut out = Mat::zeros(x.raw_dim());
    for (i, row) in x.outer_iter().enumerate() {
        let allowed = |j: usize| mask.is_none_or(|m| m[[i, j]]);
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if allowed(j) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        let mut orow = out.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            if allowed(j) {
                let e = (v - max).exp();
                orow[j] = e;
                sum += e;
            }
        }
        orow.mapv_inplace(|e| e / sum);
    }
    out
}

impl<'a> Tape<'a> {
    /// A tape that records gradients for trainable parameters.
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(512),
            track_params: true,
        }
    }

    /// A tape for forward-only evaluation.
    pub fn inference(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(512),
            track_params: false,
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let n = &self.nodes[v.0];
        match (&n.value, &n.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let needs_grad = self.track_params && self.store.entry(id).trainable;
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    /// Adds the `1 x n` row `r` to every row of `x`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Var {
        let rv = self.value(r);
        assert_eq!(rv.nrows(), 1, "add_row expects a single row");
        let v = self.value(x) + &rv.row(0);
        let ng = self.ng(x) || self.ng(r);
        self.push(v, Op::AddRow(x, r), ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) * c;
        let ng = self.ng(x);
        self.push(v, Op::Scale(x, c), ng)
    }

    /// Multiplies `x` by the `1 x 1` variable `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Var {
        let c = self.value(s)[[0, 0]];
        let v = self.value(x) * c;
        let ng = self.ng(x) || self.ng(s);
        self.push(v, Op::ScaleBy(x, s), ng)
    }

    /// Per-row normalization followed by the affine map `gain, bias` (`1 x d` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.outer_iter_mut() {
            let mean = row.sum() / d;
            row.mapv_inplace(|a| a - mean);
            let var = row.iter().map(|a| a * a).sum::<f64>() / d;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|a| a * is);
            inv_std.push(is);
        }
        let g = self.value(gain).row(0).to_owned();
        let b = self.value(bias).row(0).to_owned();
        let mut y = &xhat * &g;
        y += &b;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn softmax(&mut self, x: Var, mask: Option<&Mask>) -> Var {
        let v = masked_softmax(self.value(x), mask.map(|m| m.as_ref()));
        let ng = self.ng(x);
        self.push(v, Op::Softmax(x), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(exact_gelu);
        let ng = self.ng(x);
        self.push(v, Op::Gelu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        let ng = self.ng(x);
        self.push(v, Op::Sigmoid(x), ng)
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Mat::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).assign(&t.row(id));
        }
        let ng = self.ng(table);
        self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(x);
        self.push(v, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        let views: Vec<_> = xs.iter().map(|&x| self.value(x).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        let ng = xs.iter().any(|&x| self.ng(x));
        self.push(v, Op::ConcatCols(xs.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Var {
        let views: Vec<_> = xs.iter().map(|&x| self.value(x).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        let ng = xs.iter().any(|&x| self.ng(x));
        self.push(v, Op::ConcatRows(xs.to_vec()), ng)
    }

    /// `c * x` for a constant matrix `c` (pooling, row selection).
    pub fn left_mul(&mut self, c: Mat, x: Var) -> Var {
        let v = c.dot(self.value(x));
        let ng = self.ng(x);
        self.push(v, Op::LeftMul { c, x }, ng)
    }

    /// Summed token cross-entropy of row-wise `logits` against `targets`;
    /// `None` targets are ignored. Produces a `1 x 1` node.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len());
        let probs = masked_softmax(lv, None);
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = lv.row(i);
                let max = row.fold(f64::NEG_INFINITY, |m, &a| m.max(a));
                let lse = max + row.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
                total += lse - row[t];
            }
        }
        let ng = self.ng(logits);
        self.push(
            Mat::from_elem((1, 1), total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Summed binary cross-entropy of `logits` against same-shape 0/1 `targets`.
    pub fn bce_logits_sum(&mut self, logits: Var, targets: Mat) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.raw_dim(), targets.raw_dim());
        let total: f64 = Zip::from(lv).and(&targets).fold(0.0, |acc, &x, &y| {
            acc + x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
        });
        let ng = self.ng(logits);
        self.push(
            Mat::from_elem((1, 1), total),
            Op::BceLogits { logits, targets },
            ng,
        )
    }

    /// Gradients of the `1 x 1` node `root` with respect to every trainable
    /// parameter read on this tape.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(
            self.value(root).dim(),
            (1, 1),
            "backward needs a scalar root"
        );
        let mut out = Grads::zeros(self.store.len());
        let mut grads: Vec<Option<Mat>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Mat::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let send = |grads: &mut Vec<Option<Mat>>, v: Var, d: Mat| {
                if self.nodes[v.0].needs_grad {
                    match &mut grads[v.0] {
                        Some(acc) => *acc += &d,
                        slot => *slot = Some(d),
                    }
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        send(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.ng(*b) {
                        send(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.ng(*a) {
                        send(&mut grads, *a, g.dot(self.value(*b)));
                    }
                    if self.ng(*b) {
                        send(&mut grads, *b, g.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        send(&mut grads, *b, g.clone());
                    }
                    send(&mut grads, *a, g);
                }
                Op::AddRow(x, r) => {
                    if self.ng(*r) {
                        send(&mut grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    send(&mut grads, *x, g);
                }
                Op::Scale(x, c) => send(&mut grads, *x, g * *c),
                Op::ScaleBy(x, s) => {
                    let c = self.value(*s)[[0, 0]];
                    if self.ng(*s) {
                        let d = Zip::from(&g)
                            .and(self.value(*x))
                            .fold(0.0, |a, &gi, &xi| a + gi * xi);
                        send(&mut grads, *s, Mat::from_elem((1, 1), d));
                    }
                    send(&mut grads, *x, g * c);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    if self.ng(*bias) {
                        send(&mut grads, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*gain) {
                        send(
                            &mut grads,
                            *gain,
                            (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                        );
                    }
                    if self.ng(*x) {
                        let gv = self.value(*gain).row(0).to_owned();
                        let mut dx = &g * &gv;
                        let d = dx.ncols() as f64;
                        for (r, mut row) in dx.outer_iter_mut().enumerate() {
                            let xr = xhat.row(r);
                            let sum = row.sum();
                            let dot = row.dot(&xr);
                            let is = inv_std[r];
                            Zip::from(&mut row)
                                .and(&xr)
                                .for_each(|a, &xh| *a = is / d * (d * *a - sum - xh * dot));
                        }
                        send(&mut grads, *x, dx);
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let mut dx = &g * y;
                    for (r, mut row) in dx.outer_iter_mut().enumerate() {
                        let sum = row.sum();
                        let yr = y.row(r);
                        Zip::from(&mut row).and(&yr).for_each(|a, &p| *a -= p * sum);
                    }
                    send(&mut grads, *x, dx);
                }
                Op::Gelu(x) => {
                    let mut d = self.value(*x).mapv(exact_gelu_grad);
                    d *= &g;
                    send(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().expect("sigmoid value");
                    let mut d = y.mapv(|p| p * (1.0 - p));
                    d *= &g;
                    send(&mut grads, *x, d);
                }
                Op::Gather { table, ids } => {
                    let mut d = Mat::zeros(self.value(*table).raw_dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = d.row_mut(id);
                        row += &g.row(r);
                    }
                    send(&mut grads, *table, d);
                }
                Op::SliceCols { x, start } => {
                    let mut d = Mat::zeros(self.value(*x).raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    send(&mut grads, *x, d);
                }
                Op::ConcatCols(xs) => {
                    let mut at = 0;
                    for &x in xs {
                        let w = self.value(x).ncols();
                        if self.ng(x) {
                            send(&mut grads, x, g.slice(s![.., at..at + w]).to_owned());
                        }
                        at += w;
                    }
                }
                Op::ConcatRows(xs) => {
                    let mut at = 0;
                    for &x in xs {
                        let h = self.value(x).nrows();
                        if self.ng(x) {
                            send(&mut grads, x, g.slice(s![at..at + h, ..]).to_owned());
                        }
                        at += h;
                    }
                }
                Op::LeftMul { c, x } => send(&mut grads, *x, c.t().dot(&g)),
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g[[0, 0]];
                    let mut d = Mat::zeros(probs.raw_dim());
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let mut row = d.row_mut(r);
                            row.assign(&probs.row(r));
                            row[t] -= 1.0;
                            row.mapv_inplace(|a| a * scale);
                        }
                    }
                    send(&mut grads, *logits, d);
                }
                Op::BceLogits { logits, targets } => {
                    let scale = g[[0, 0]];
                    let mut d = self.value(*logits).mapv(sigmoid);
                    d -= targets;
                    d.mapv_inplace(|a| a * scale);
                    send(&mut grads, *logits, d);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of every trainable parameter for a scalar
    /// function built on a tape.
    fn check(store: &ParamStore, f: impl Fn(&mut Tape) -> Var) {
        let mut t = Tape::new(store);
        let root = f(&mut t);
        let g = t.backward(root);
        let eval = |s: &ParamStore| {
            let mut t = Tape::inference(s);
            let r = f(&mut t);
            t.value(r)[[0, 0]]
        };
        for id in store.trainable_ids() {
            let shape = store.value(id).raw_dim();
            let analytic = g.get(id).cloned().unwrap_or_else(|| Mat::zeros(shape));
            let mut s = store.clone();
            for idx in ndarray::indices(shape) {
                let orig = s.value(id)[idx];
                s.value_mut(id)[idx] = orig + 1e-5;
                let up = eval(&s);
                s.value_mut(id)[idx] = orig - 1e-5;
                let down = eval(&s);
                s.value_mut(id)[idx] = orig;
                let numeric = (up - down) / 2e-5;
                let a = analytic[idx];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())),
                    "{} {idx:?}: analytic {a} numeric {numeric}",
                    store.entry(id).name
                );
            }
        }
    }

    fn store_with(mats: &[(&str, Mat)]) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = mats
            .iter()
            .map(|(n, m)| s.add(*n, m.clone(), true))
            .collect();
        (s, ids)
    }

    fn sum_all(t: &mut Tape, x: Var) -> Var {
        let (r, c) = t.value(x).dim();
        let left = t.left_mul(Mat::ones((1, r)), x);
        let ones = t.input(Mat::ones((c, 1)));
        t.matmul(left, ones)
    }

    #[test]
    fn matmul_family_gradients() {
        let (s, ids) = store_with(&[
            ("a", array![[0.3, -1.2, 0.5], [0.7, 0.1, -0.4]]),
            ("b", array![[1.1, 0.2], [-0.3, 0.8], [0.4, -0.6]]),
            ("r", array![[0.2, -0.1]]),
            ("k", array![[0.9, -0.2, 0.3], [0.1, 0.5, -0.7]]),
        ]);
        check(&s, |t| {
            let a = t.param(ids[0]);
            let b = t.param(ids[1]);
            let r = t.param(ids[2]);
            let k = t.param(ids[3]);
            let ab = t.matmul(a, b);
            let abr = t.add_row(ab, r);
            let akt = t.matmul_t(a, k);
            let sum = t.add(abr, akt);
            let sc = t.scale(sum, 0.7);
            let sq = t.matmul_t(sc, sc);
            sum_all(t, sq)
        });
    }

    #[test]
    fn nonlinear_gradients() {
        let (s, ids) = store_with(&[
            (
                "x",
                array![
                    [0.3, -1.2, 0.5, 2.0],
                    [0.7, 0.1, -0.4, -0.9],
                    [0.0, 0.2, 0.1, 0.3]
                ],
            ),
            ("g", array![[1.1, 0.9, 1.3, 0.7]]),
            ("b", array![[0.1, -0.2, 0.0, 0.3]]),
            ("beta", array![[0.4]]),
            (
                "w",
                array![[0.5, -0.3], [0.2, 0.8], [-0.6, 0.1], [0.3, 0.3]],
            ),
        ]);
        let mask = Rc::new(array![
            [true, false, true],
            [false, false, false],
            [true, true, true]
        ]);
        check(&s, |t| {
            let x = t.param(ids[0]);
            let (g, b) = (t.param(ids[1]), t.param(ids[2]));
            let ln = t.layer_norm(x, g, b);
            let ge = t.gelu(ln);
            let sc = t.matmul_t(ge, ge);
            let p = t.softmax(sc, Some(&mask));
            let mixed = t.matmul(p, ge);
            let w = t.param(ids[4]);
            let proj = t.matmul(mixed, w);
            let sg = t.sigmoid(proj);
            let beta = t.param(ids[3]);
            let sb = t.scale_by(sg, beta);
            let g = t.gather(sb, &[2, 0, 2]);
            let c0 = t.slice_cols(g, 1, 1);
            let cc = t.concat_cols(&[g, c0]);
            let cr = t.concat_rows(&[cc, cc]);
            let ce = t.cross_entropy_sum(cr, &[Some(0), None, Some(2), Some(1), Some(1), None]);
            let bce = t.bce_logits_sum(proj, array![[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]]);
            t.add(ce, bce)
        });
    }

    #[test]
    fn masked_softmax_rows() {
        let x = array![[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]];
        let m = array![[true, true, false], [false, false, false]];
        let p = masked_softmax(&x, Some(&m));
        assert!((p.row(0).sum() - 1.0).abs() < 1e-15);
        assert_eq!(p[[0, 2]], 0.0);
        assert!(p.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut s = ParamStore::new();
        let a = s.add("a", array![[1.0, 2.0]], false);
        let b = s.add("b", array![[3.0], [4.0]], true);
        let mut t = Tape::new(&s);
        let (va, vb) = (t.param(a), t.param(b));
        let y = t.matmul(va, vb);
        let g = t.backward(y);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap(), &array![[1.0], [2.0]]);
    }

    #[test]
    fn stable_losses() {
        let s = ParamStore::new();
        let mut t = Tape::inference(&s);
        let x = t.input(array![[1000.0, 0.0, -1000.0]]);
        let ce = t.cross_entropy_sum(x, &[Some(0)]);
        assert!(t.value(ce)[[0, 0]].abs() < 1e-12);
        let b = t.bce_logits_sum(x, array![[1.0, 0.0, 0.0]]);
        assert!(t.value(b)[[0, 0]].is_finite());
        let u = t.input(Mat::zeros((1, 5)));
        let ce = t.cross_entropy_sum(u, &[Some(3)]);
        assert!((t.value(ce)[[0, 0]] - 5f64.ln()).abs() < 1e-12);
    }
}
