use std::borrow::Cow;
use std::sync::Arc;

use super::kernels::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{Gradients, ParamId, ParamStore, Scalar};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        scale: T,
        probs: Vec<T>,
    },
    Bce {
        logit: Var,
        label: T,
        scale: T,
    },
    Sum(Var),
}

struct Node<'a, T: Scalar> {
    rows: usize,
    cols: usize,
    data: Cow<'a, [T]>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation for one training context. A tape borrows
/// the parameter store it reads from and must stay on one thread.
pub struct Tape<'a, T: Scalar = f32> {
    nodes: Vec<Node<'a, T>>,
    param_vars: Vec<Option<Var>>,
    non_finite: Option<String>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        data: Cow<'a, [T]>,
        op: Op<T>,
        needs_grad: bool,
    ) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        #[cfg(debug_assertions)]
        if self.non_finite.is_none() {
            if let Some(bad) = data.iter().position(|x| !x.is_finite()) {
                self.non_finite = Some(format!(
                    "non-finite value at element {bad} of node {} ({})",
                    self.nodes.len(),
                    op_name(&op)
                ));
            }
        }
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a, T> {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).data
    }

    /// Fails with the first operation that produced a NaN or infinity.
    /// Values are only scanned in debug builds.
    pub fn check_finite(&self) -> Result<()> {
        match &self.non_finite {
            Some(detail) => Err(Error::NonFinite {
                step: 0,
                detail: detail.clone(),
            }),
            None => Ok(()),
        }
    }

    /// The single element of a 1×1 value.
    pub fn scalar(&self, v: Var) -> T {
        let n = self.node(v);
        assert_eq!(n.data.len(), 1, "scalar() on a {}x{} value", n.rows, n.cols);
        n.data[0]
    }

    /// A constant input that does not receive gradients.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "constant of shape [{rows}, {cols}] with {} elements",
                data.len()
            )));
        }
        Ok(self.push(rows, cols, Cow::Owned(data), Op::Leaf, false))
    }

    pub fn constant_f32(&mut self, rows: usize, cols: usize, data: &[f32]) -> Result<Var> {
        self.constant(
            rows,
            cols,
            data.iter().map(|&x| T::cast(x as f64)).collect(),
        )
    }

    /// Records a parameter leaf; repeated calls for the same id share a node.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        if self.param_vars.len() < store.len() {
            self.param_vars.resize(store.len(), None);
        }
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let t = store.get(id);
        let (rows, cols) = t.matrix_dims();
        let v = self.push(
            rows,
            cols,
            T::load(t.data()),
            Op::Param(id),
            t.requires_grad(),
        );
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (k2, m) = self.dims(b);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul of [{n}, {k}] by [{k2}, {m}]"
            )));
        }
        let mut out = vec![T::zero(); n * m];
        matmul_acc(self.value(a), self.value(b), &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(n, m, Cow::Owned(out), Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a);
        let (m, k2) = self.dims(b);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul of [{n}, {k}] by transpose of [{m}, {k2}]"
            )));
        }
        let mut out = vec![T::zero(); n * m];
        matmul_nt_acc(self.value(a), self.value(b), &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(n, m, Cow::Owned(out), Op::MatMulNt(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(Error::Dimension(format!(
                "{what} of [{}, {}] and [{}, {}]",
                da.0, da.1, db.0, db.1
            )));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x + *y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, Cow::Owned(out), Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "sub")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x - *y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, Cow::Owned(out), Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x * *y)
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, Cow::Owned(out), Op::Mul(a, b), ng))
    }

    /// Adds a single row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != c {
            return Err(Error::Dimension(format!(
                "broadcast add of [{rr}, {rc}] onto [{r}, {c}]"
            )));
        }
        let b = self.value(row);
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|x| x.iter().zip(b).map(|(p, q)| *p + *q))
            .collect();
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(r, c, Cow::Owned(out), Op::AddRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::cast(s);
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|x| *x * s).collect();
        let ng = self.ng(a);
        self.push(r, c, Cow::Owned(out), Op::Scale(a, s), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let k = T::cast(GELU_C);
        let ca = T::cast(GELU_A);
        let half = T::cast(0.5);
        let out = self
            .value(a)
            .iter()
            .map(|&x| half * x * (T::one() + (k * (x + ca * x * x * x)).tanh()))
            .collect();
        let ng = self.ng(a);
        self.push(r, c, Cow::Owned(out), Op::Gelu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let ng = self.ng(a);
        self.push(r, c, Cow::Owned(out), Op::Tanh(a), ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        self.masked_softmax_rows(x, None)
    }

    /// Row-wise softmax where `mask[i*cols + j] == false` forces a zero
    /// probability. A row with no allowed entries produces zeros.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: Option<&Arc<[bool]>>) -> Var {
        let (r, c) = self.dims(x);
        if let Some(m) = mask {
            assert_eq!(m.len(), r * c, "softmax mask does not match [{r}, {c}]");
        }
        let xs = self.value(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
            let mut mx = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > mx {
                    mx = v;
                }
            }
            if mx == T::neg_infinity() {
                continue;
            }
            let o = &mut out[i * c..(i + 1) * c];
            let mut z = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    let e = (v - mx).exp();
                    o[j] = e;
                    z += e;
                }
            }
            let inv = T::one() / z;
            o.iter_mut().for_each(|p| *p = *p * inv);
        }
        let ng = self.ng(x);
        self.push(r, c, Cow::Owned(out), Op::Softmax(x), ng)
    }

    /// Per-row normalization to zero mean and unit variance followed by an
    /// affine map with `gain` and `bias` (both single rows).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(gain) != (1, c) || self.dims(bias) != (1, c) {
            return Err(Error::Dimension(format!(
                "layer norm of width {c} with gain {:?} and bias {:?}",
                self.dims(gain),
                self.dims(bias)
            )));
        }
        let eps = T::cast(eps);
        let n = T::cast(c as f64);
        let xs = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let mut out = Vec::with_capacity(r * c);
        let mut means = Vec::with_capacity(r);
        let mut rstds = Vec::with_capacity(r);
        for row in xs.chunks(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rstd = T::one() / (var + eps).sqrt();
            for j in 0..c {
                out.push((row[j] - mean) * rstd * g[j] + b[j]);
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(
            r,
            c,
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean: means,
                rstd: rstds,
            },
            ng,
        ))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!("row {bad} of a table with {r} rows")));
        }
        if ids.is_empty() {
            return Err(Error::Dimension("gather of zero rows".into()));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&t[i * c..(i + 1) * c]);
        }
        let ng = self.ng(table);
        Ok(self.push(
            ids.len(),
            c,
            Cow::Owned(out),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > r {
            return Err(Error::Dimension(format!(
                "rows {start}..{} of a [{r}, {c}] value",
                start + len
            )));
        }
        let out = self.value(x)[start * c..(start + len) * c].to_vec();
        let ng = self.ng(x);
        Ok(self.push(len, c, Cow::Owned(out), Op::SliceRows(x, start), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(Error::Dimension(format!(
                "columns {start}..{} of a [{r}, {c}] value",
                start + len
            )));
        }
        let xs = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for row in xs.chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(r, len, Cow::Owned(out), Op::SliceCols(x, start), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts
            .first()
            .map(|&p| self.dims(p).1)
            .ok_or_else(|| Error::Dimension("concat of zero values".into()))?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims(p);
            if pc != c {
                return Err(Error::Dimension(format!(
                    "row concat of widths {c} and {pc}"
                )));
            }
            out.extend_from_slice(self.value(p));
            rows += r;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(rows, c, Cow::Owned(out), Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|&p| self.dims(p).0)
            .ok_or_else(|| Error::Dimension("concat of zero values".into()))?;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(Error::Dimension(format!(
                    "column concat of heights {r} and {pr}"
                )));
            }
            cols += pc;
        }
        let mut out = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let pc = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(r, cols, Cow::Owned(out), Op::ConcatCols(parts.to_vec()), ng))
    }

    /// `scale · Σ_rows −log softmax(logits_row)[target]` over rows whose
    /// target is `Some`.
    pub fn cross_entropy_sum(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        scale: f64,
    ) -> Result<Var> {
        let (r, v) = self.dims(logits);
        if targets.len() != r {
            return Err(Error::Dimension(format!(
                "{} targets for {r} logit rows",
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(Error::Index(format!(
                "target id {bad} outside vocabulary of size {v}"
            )));
        }
        let xs = self.value(logits);
        let mut probs = vec![T::zero(); r * v];
        let mut total = T::zero();
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = &xs[i * v..(i + 1) * v];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let p = &mut probs[i * v..(i + 1) * v];
            let mut z = T::zero();
            for (pj, &x) in p.iter_mut().zip(row) {
                *pj = (x - mx).exp();
                z += *pj;
            }
            let inv = T::one() / z;
            p.iter_mut().for_each(|q| *q = *q * inv);
            total += mx + z.ln() - row[t];
        }
        let scale = T::cast(scale);
        let ng = self.ng(logits);
        Ok(self.push(
            1,
            1,
            Cow::Owned(vec![total * scale]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                scale,
                probs,
            },
            ng,
        ))
    }

    /// Mean cross-entropy over positions whose target differs from
    /// `ignore_id`. With every position ignored the result is 0 and carries
    /// zero gradient.
    pub fn cross_entropy_logits(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_id: usize,
    ) -> Result<Var> {
        let t: Vec<Option<usize>> = targets
            .iter()
            .map(|&x| (x != ignore_id).then_some(x))
            .collect();
        let count = t.iter().flatten().count();
        let scale = if count == 0 { 0.0 } else { 1.0 / count as f64 };
        self.cross_entropy_sum(logits, &t, scale)
    }

    /// `scale · BCE(σ(logit), label)` in the stable softplus form.
    pub fn bce_with_logit(&mut self, logit: Var, label: f64, scale: f64) -> Result<Var> {
        if self.dims(logit) != (1, 1) {
            return Err(Error::Dimension(format!(
                "binary cross-entropy expects a scalar logit, got {:?}",
                self.dims(logit)
            )));
        }
        let x = self.scalar(logit);
        let label = T::cast(label);
        let scale = T::cast(scale);
        let softplus = x.max(T::zero()) + (-x.abs()).exp().ln_1p();
        let val = (softplus - label * x) * scale;
        let ng = self.ng(logit);
        Ok(self.push(
            1,
            1,
            Cow::Owned(vec![val]),
            Op::Bce {
                logit,
                label,
                scale,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum::<T>();
        let ng = self.ng(x);
        self.push(1, 1, Cow::Owned(vec![s]), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a scalar. Returns d(loss)/d(param) for every
    /// parameter reachable from `loss` that requires gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check_finite()?;
        let (r, c) = self.dims(loss);
        if (r, c) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward from a non-scalar value of shape [{r}, {c}]"
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients::empty(self.param_vars.len());
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node<'a, T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        out: &mut Gradients<T>,
    ) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let slot = &mut out.by_param[id.index()];
                match slot {
                    Some(s) => s.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
                    None => *slot = Some(g.to_vec()),
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = self.dims(*a);
                let m = cols;
                if self.ng(*a) {
                    let da = self.grad_buf(grads, *a);
                    matmul_nt_acc(g, self.value(*b), da, n, m, k);
                }
                if self.ng(*b) {
                    let av = self.value(*a);
                    let db = self.grad_buf(grads, *b);
                    matmul_tn_acc(av, g, db, n, k, m);
                }
            }
            Op::MatMulNt(a, b) => {
                let (n, k) = self.dims(*a);
                let m = cols;
                if self.ng(*a) {
                    let bv = self.value(*b);
                    let da = self.grad_buf(grads, *a);
                    matmul_acc(g, bv, da, n, m, k);
                }
                if self.ng(*b) {
                    let av = self.value(*a);
                    let db = self.grad_buf(grads, *b);
                    matmul_tn_acc(g, av, db, n, m, k);
                }
            }
            Op::Add(a, b) => {
                for (v, sign) in [(*a, T::one()), (*b, T::one())] {
                    if self.ng(v) {
                        let d = self.grad_buf(grads, v);
                        d.iter_mut().zip(g).for_each(|(x, y)| *x += sign * *y);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, T::one()), (*b, -T::one())] {
                    if self.ng(v) {
                        let d = self.grad_buf(grads, v);
                        d.iter_mut().zip(g).for_each(|(x, y)| *x += sign * *y);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.ng(*a) {
                    let d = self.grad_buf(grads, *a);
                    d.iter_mut().zip(g).for_each(|(x, y)| *x += *y);
                }
                if self.ng(*row) {
                    let d = self.grad_buf(grads, *row);
                    for gr in g.chunks(cols) {
                        d.iter_mut().zip(gr).for_each(|(x, y)| *x += *y);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.value(*b);
                    let d = self.grad_buf(grads, *a);
                    for ((x, gy), o) in d.iter_mut().zip(g).zip(bv) {
                        *x += *gy * *o;
                    }
                }
                if self.ng(*b) {
                    let av = self.value(*a);
                    let d = self.grad_buf(grads, *b);
                    for ((x, gy), o) in d.iter_mut().zip(g).zip(av) {
                        *x += *gy * *o;
                    }
                }
            }
            Op::Scale(a, s) => {
                let d = self.grad_buf(grads, *a);
                d.iter_mut().zip(g).for_each(|(x, y)| *x += *s * *y);
            }
            Op::Gelu(a) => {
                let k = T::cast(GELU_C);
                let ca = T::cast(GELU_A);
                let half = T::cast(0.5);
                let three = T::cast(3.0);
                let xv = self.value(*a);
                let d = self.grad_buf(grads, *a);
                for ((dx, gy), &x) in d.iter_mut().zip(g).zip(xv) {
                    let t = (k * (x + ca * x * x * x)).tanh();
                    let dt = (T::one() - t * t) * k * (T::one() + three * ca * x * x);
                    *dx += *gy * (half * (T::one() + t) + half * x * dt);
                }
            }
            Op::Tanh(a) => {
                let y = &node.data;
                let d = self.grad_buf(grads, *a);
                for ((dx, gy), &yv) in d.iter_mut().zip(g).zip(y.iter()) {
                    *dx += *gy * (T::one() - yv * yv);
                }
            }
            Op::Softmax(x) => {
                let y = &node.data;
                let d = self.grad_buf(grads, *x);
                for i in 0..rows {
                    let yr = &y[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let dotp = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum::<T>();
                    let dr = &mut d[i * cols..(i + 1) * cols];
                    for j in 0..cols {
                        dr[j] += yr[j] * (gr[j] - dotp);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let n = T::cast(cols as f64);
                if self.ng(*gain) || self.ng(*bias) {
                    let mut dg = vec![T::zero(); cols];
                    let mut db = vec![T::zero(); cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            let xh = (xv[i * cols + j] - mean[i]) * rstd[i];
                            dg[j] += g[i * cols + j] * xh;
                            db[j] += g[i * cols + j];
                        }
                    }
                    if self.ng(*gain) {
                        let d = self.grad_buf(grads, *gain);
                        d.iter_mut().zip(&dg).for_each(|(a, b)| *a += *b);
                    }
                    if self.ng(*bias) {
                        let d = self.grad_buf(grads, *bias);
                        d.iter_mut().zip(&db).for_each(|(a, b)| *a += *b);
                    }
                }
                if self.ng(*x) {
                    let d = self.grad_buf(grads, *x);
                    let mut dxh = vec![T::zero(); cols];
                    let mut xh = vec![T::zero(); cols];
                    for i in 0..rows {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..cols {
                            xh[j] = (xv[i * cols + j] - mean[i]) * rstd[i];
                            dxh[j] = g[i * cols + j] * gv[j];
                            s1 += dxh[j];
                            s2 += dxh[j] * xh[j];
                        }
                        let m1 = s1 / n;
                        let m2 = s2 / n;
                        for j in 0..cols {
                            d[i * cols + j] += rstd[i] * (dxh[j] - m1 - xh[j] * m2);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let d = self.grad_buf(grads, *table);
                for (r, &id) in ids.iter().enumerate() {
                    let dr = &mut d[id * cols..(id + 1) * cols];
                    dr.iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                        .for_each(|(a, b)| *a += *b);
                }
            }
            Op::SliceRows(x, start) => {
                let d = self.grad_buf(grads, *x);
                d[start * cols..(start + rows) * cols]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += *b);
            }
            Op::SliceCols(x, start) => {
                let xc = self.dims(*x).1;
                let d = self.grad_buf(grads, *x);
                for i in 0..rows {
                    d[i * xc + start..i * xc + start + cols]
                        .iter_mut()
                        .zip(&g[i * cols..(i + 1) * cols])
                        .for_each(|(a, b)| *a += *b);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.ng(p) {
                        let d = self.grad_buf(grads, p);
                        d.iter_mut()
                            .zip(&g[offset..offset + n])
                            .for_each(|(a, b)| *a += *b);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.dims(p).1;
                    if self.ng(p) {
                        let d = self.grad_buf(grads, p);
                        for i in 0..rows {
                            d[i * pc..(i + 1) * pc]
                                .iter_mut()
                                .zip(&g[i * cols + offset..i * cols + offset + pc])
                                .for_each(|(a, b)| *a += *b);
                        }
                    }
                    offset += pc;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                scale,
                probs,
            } => {
                let v = self.dims(*logits).1;
                let coef = g[0] * *scale;
                let d = self.grad_buf(grads, *logits);
                for (i, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let dr = &mut d[i * v..(i + 1) * v];
                    let pr = &probs[i * v..(i + 1) * v];
                    for j in 0..v {
                        dr[j] += coef * pr[j];
                    }
                    dr[t] -= coef;
                }
            }
            Op::Bce {
                logit,
                label,
                scale,
            } => {
                let x = self.scalar(*logit);
                let sig = T::one() / (T::one() + (-x).exp());
                let d = self.grad_buf(grads, *logit);
                d[0] += g[0] * *scale * (sig - *label);
            }
            Op::Sum(x) => {
                let d = self.grad_buf(grads, *x);
                d.iter_mut().for_each(|a| *a += g[0]);
            }
        }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut Vec<T> {
        let n = self.value(v).len();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }
}

#[cfg(debug_assertions)]
fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "constant",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::MatMulNt(..) => "matmul_nt",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::AddRow(..) => "add_row",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Gelu(_) => "gelu",
        Op::Tanh(_) => "tanh",
        Op::Softmax(_) => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Gather { .. } => "gather",
        Op::SliceRows(..) => "slice_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::ConcatRows(_) => "concat_rows",
        Op::ConcatCols(_) => "concat_cols",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::Bce { .. } => "bce",
        Op::Sum(_) => "sum",
    }
}
