use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Powf(Var, f64),
    Log(Var),
    Sum(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    Unfold { x: Var, window: usize, stride: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
///
/// Node indices are assigned in execution order, so walking them backwards
/// is a reverse topological traversal.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Splits `shape` around `axis` into (outer, n, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// `a[m×k] · b[k×n]` into a fresh buffer.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g[m×n] · bᵀ` where `b` is `k×n`.
fn matmul_nt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// Offsets into the source buffer for each element of the permuted output.
fn permute_offsets(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let n: usize = shape.iter().product();
    let mut offsets = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    for _ in 0..n {
        offsets.push(idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    offsets
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated for a leaf by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds this leaf's gradient into `target`'s grad buffer.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) -> Result<()> {
        if let Some(g) = self.grad(v) {
            target.accumulate_grad(g)?;
        }
        Ok(())
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, name: &'static str) -> Result<Var> {
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name} (element {bad})")));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            op => self.inputs(op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        // Constant subgraphs keep their values but not their history.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::SubRow(a, b)
            | Op::MulRow(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Powf(a, _)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::SumAxis(a, _)
            | Op::MeanAxis(a, _)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Pick(a, _) => vec![*a],
            Op::Unfold { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
        }
    }

    /// Records a leaf. Its gradient is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that always tracks gradients.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Records a leaf that never tracks gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            data: t.into_data(),
            op: Op::Leaf,
            requires_grad: false,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, vars: &[Var]) -> Error {
        Error::Shape {
            op,
            shapes: vars.iter().map(|v| self.nodes[v.0].shape.clone()).collect(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.shape_err("matmul", &[a, b]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        self.push(vec![m, n], out, Op::MatMul(a, b), "matmul")
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(self.shape_err(name, &[a, b]));
        }
        let out = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn row_op(&mut self, x: Var, r: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let width = self.nodes[r.0].data.len();
        let xs = &self.nodes[x.0];
        if width == 0 || xs.shape.last() != Some(&width) {
            return Err(self.shape_err(name, &[x, r]));
        }
        let row = &self.nodes[r.0].data;
        let out = xs
            .data
            .chunks(width)
            .flat_map(|chunk| chunk.iter().zip(row).map(|(a, b)| f(*a, *b)))
            .collect();
        let shape = xs.shape.clone();
        self.push(shape, out, op, name)
    }

    /// `x + r` with `r` broadcast over the leading rows of `x`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.row_op(x, r, "add_row", |a, b| a + b, Op::AddRow(x, r))
    }

    pub fn sub_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.row_op(x, r, "sub_row", |a, b| a - b, Op::SubRow(x, r))
    }

    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.row_op(x, r, "mul_row", |a, b| a * b, Op::MulRow(x, r))
    }

    fn map(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.nodes[a.0].data.iter().map(|v| f(*v)).collect();
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, out, op, name)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(a, "scale", |v| v * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(a, "add_scalar", |v| v + s, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, "relu", |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.map(a, "powf", |v| v.powf(p), Op::Powf(a, p))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map(a, "log", f64::ln, Op::Log(a))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].data.iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].data.len();
        if n == 0 {
            return Err(self.shape_err("mean", &[a]));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let name = if mean { "mean_axis" } else { "sum_axis" };
        let shape = self.nodes[a.0].shape.clone();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(self.shape_err(name, &[a]));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = &self.nodes[a.0].data;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..n {
                let base = (o * n + i) * inner;
                add_into(&mut out[o * inner..(o + 1) * inner], &src[base..base + inner]);
            }
        }
        if mean {
            let s = 1.0 / n as f64;
            out.iter_mut().for_each(|v| *v *= s);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let op = if mean { Op::MeanAxis(a, axis) } else { Op::SumAxis(a, axis) };
        self.push(out_shape, out, op, name)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    fn last_dim(&self, a: Var, name: &'static str) -> Result<usize> {
        match self.nodes[a.0].shape.last() {
            Some(&c) if c > 0 => Ok(c),
            _ => Err(self.shape_err(name, &[a])),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let c = self.last_dim(a, "softmax")?;
        let mut out = self.nodes[a.0].data.clone();
        for row in out.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, out, Op::Softmax(a), "softmax")
    }

    /// Numerically stable `log(softmax(a))` over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let c = self.last_dim(a, "log_softmax")?;
        let mut out = self.nodes[a.0].data.clone();
        for row in out.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let shape = self.nodes[a.0].shape.clone();
        self.push(shape, out, Op::LogSoftmax(a), "log_softmax")
    }

    /// Sliding windows over the last axis: `[.., T]` → `[.., n_windows, window]`.
    pub fn unfold(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let t = match shape.last() {
            Some(&t) if window > 0 && stride > 0 && t >= window => t,
            _ => return Err(self.shape_err("unfold", &[x])),
        };
        let n_win = (t - window) / stride + 1;
        let rows = self.nodes[x.0].data.len() / t;
        let src = &self.nodes[x.0].data;
        let mut out = Vec::with_capacity(rows * n_win * window);
        for r in 0..rows {
            let row = &src[r * t..(r + 1) * t];
            for w in 0..n_win {
                out.extend_from_slice(&row[w * stride..w * stride + window]);
            }
        }
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.extend([n_win, window]);
        self.push(out_shape, out, Op::Unfold { x, window, stride }, "unfold")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(v) => self.nodes[v.0].shape.clone(),
            None => return Err(Error::Shape { op: "concat", shapes: vec![] }),
        };
        if axis >= first.len() {
            return Err(self.shape_err("concat", parts));
        }
        for p in parts {
            let s = &self.nodes[p.0].shape;
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(self.shape_err("concat", parts));
            }
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let total: usize = parts.iter().map(|p| self.nodes[p.0].shape[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let n = self.nodes[p.0].shape[axis];
                let d = &self.nodes[p.0].data;
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            "concat",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.nodes[a.0].data.len() {
            return Err(Error::Shape {
                op: "reshape",
                shapes: vec![self.nodes[a.0].shape.clone(), shape.to_vec()],
            });
        }
        let data = self.nodes[a.0].data.clone();
        self.push(shape.to_vec(), data, Op::Reshape(a), "reshape")
    }

    /// Axis permutation; output axis `d` is input axis `axes[d]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.nodes[a.0].shape.clone();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&d| d >= shape.len() || std::mem::replace(&mut seen[d], true)) {
            return Err(self.shape_err("permute", &[a]));
        }
        let src = &self.nodes[a.0].data;
        let out = permute_offsets(&shape, axes).into_iter().map(|o| src[o]).collect();
        let out_shape = axes.iter().map(|&d| shape[d]).collect();
        self.push(out_shape, out, Op::Permute(a, axes.to_vec()), "permute")
    }

    /// Selects `a[i, indices[i]]` from a `[N×C]` matrix.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let shape = &self.nodes[a.0].shape;
        if shape.len() != 2 || shape[0] != indices.len() {
            return Err(self.shape_err("pick", &[a]));
        }
        let c = shape[1];
        if let Some(bad) = indices.iter().find(|&&i| i >= c) {
            return Err(Error::contract(format!("pick: index {bad} out of range for {c} classes")));
        }
        let d = &self.nodes[a.0].data;
        let out = indices.iter().enumerate().map(|(r, &i)| d[r * c + i]).collect();
        self.push(vec![indices.len()], out, Op::Pick(a, indices.to_vec()), "pick")
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls
    /// until [`Tape::clear`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward on an empty tape"));
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut g: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        g[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match self.grads[i].as_mut() {
                    Some(acc) => add_into(acc, &gi),
                    None => self.grads[i] = Some(gi),
                }
                continue;
            }
            for (input, contrib) in self.vjp(i, &gi) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match g[input.0].as_mut() {
                    Some(acc) => add_into(acc, &contrib),
                    None => g[input.0] = Some(contrib),
                }
            }
        }
        for (i, gr) in self.grads.iter().enumerate() {
            if let Some(gr) = gr {
                if gr.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of node {i}")));
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for upstream gradient `g`.
    fn vjp(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let val = |v: &Var| &self.nodes[v.0].data;
        let shp = |v: &Var| &self.nodes[v.0].shape;
        let need = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (m, k, n) = (shp(a)[0], shp(a)[1], shp(b)[1]);
                let mut out = Vec::new();
                if need(a) {
                    out.push((*a, matmul_nt(g, val(b), m, k, n)));
                }
                if need(b) {
                    out.push((*b, matmul_tn(val(a), g, m, k, n)));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|v| -v).collect())],
            Op::Mul(a, b) => vec![
                (*a, g.iter().zip(val(b)).map(|(x, y)| x * y).collect()),
                (*b, g.iter().zip(val(a)).map(|(x, y)| x * y).collect()),
            ],
            Op::AddRow(x, r) | Op::SubRow(x, r) => {
                let w = val(r).len();
                let mut gr = vec![0.0; w];
                for chunk in g.chunks(w) {
                    add_into(&mut gr, chunk);
                }
                if matches!(node.op, Op::SubRow(..)) {
                    gr.iter_mut().for_each(|v| *v = -*v);
                }
                vec![(*x, g.to_vec()), (*r, gr)]
            }
            Op::MulRow(x, r) => {
                let row = val(r);
                let w = row.len();
                let gx = g
                    .chunks(w)
                    .flat_map(|c| c.iter().zip(row).map(|(a, b)| a * b))
                    .collect();
                let mut gr = vec![0.0; w];
                for (gc, xc) in g.chunks(w).zip(val(x).chunks(w)) {
                    for ((acc, a), b) in gr.iter_mut().zip(gc).zip(xc) {
                        *acc += a * b;
                    }
                }
                vec![(*x, gx), (*r, gr)]
            }
            Op::Scale(a, s) => vec![(*a, g.iter().map(|v| v * s).collect())],
            Op::AddScalar(a) | Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Relu(a) => vec![(
                *a,
                g.iter()
                    .zip(val(a))
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect(),
            )],
            Op::Powf(a, p) => vec![(
                *a,
                g.iter().zip(val(a)).map(|(gv, x)| gv * p * x.powf(p - 1.0)).collect(),
            )],
            Op::Log(a) => vec![(*a, g.iter().zip(val(a)).map(|(gv, x)| gv / x).collect())],
            Op::Sum(a) => vec![(*a, vec![g[0]; val(a).len()])],
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let (outer, n, inner) = split_axis(shp(a), *axis);
                let s = if matches!(node.op, Op::MeanAxis(..)) { 1.0 / n as f64 } else { 1.0 };
                let mut ga = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let gs = &g[o * inner..(o + 1) * inner];
                    for k in 0..n {
                        let base = (o * n + k) * inner;
                        for (dst, gv) in ga[base..base + inner].iter_mut().zip(gs) {
                            *dst = gv * s;
                        }
                    }
                }
                vec![(*a, ga)]
            }
            Op::Softmax(a) => {
                let c = *node.shape.last().unwrap();
                let mut ga = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(node.data.chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    ga.extend(gr.iter().zip(yr).map(|(gv, y)| y * (gv - dot)));
                }
                vec![(*a, ga)]
            }
            Op::LogSoftmax(a) => {
                let c = *node.shape.last().unwrap();
                let mut ga = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(c).zip(node.data.chunks(c)) {
                    let total: f64 = gr.iter().sum();
                    ga.extend(gr.iter().zip(yr).map(|(gv, y)| gv - y.exp() * total));
                }
                vec![(*a, ga)]
            }
            Op::Unfold { x, window, stride } => {
                let t = *shp(x).last().unwrap();
                let rows = val(x).len() / t;
                let n_win = (t - window) / stride + 1;
                let mut gx = vec![0.0; rows * t];
                for r in 0..rows {
                    for w in 0..n_win {
                        let src = &g[(r * n_win + w) * window..(r * n_win + w + 1) * window];
                        let start = r * t + w * stride;
                        add_into(&mut gx[start..start + window], src);
                    }
                }
                vec![(*x, gx)]
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let n = shp(p)[*axis];
                    let mut gp = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        gp.extend_from_slice(&g[base..base + n * inner]);
                    }
                    offset += n;
                    out.push((*p, gp));
                }
                out
            }
            Op::Permute(a, axes) => {
                let mut ga = vec![0.0; g.len()];
                for (gv, o) in g.iter().zip(permute_offsets(shp(a), axes)) {
                    ga[o] = *gv;
                }
                vec![(*a, ga)]
            }
            Op::Pick(a, idx) => {
                let c = shp(a)[1];
                let mut ga = vec![0.0; val(a).len()];
                for (r, (&k, gv)) in idx.iter().zip(g).enumerate() {
                    ga[r * c + k] = *gv;
                }
                vec![(*a, ga)]
            }
        }
    }
}
