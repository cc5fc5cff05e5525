//! Reverse-mode automatic differentiation over row-major 2-D tensors.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! walks the record in reverse and returns the gradient of a scalar with
//! respect to the parameter vector the graph read from.

use crate::params::{ParamId, ParamStore};

/// Row-major matrix with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "tensor value count does not match shape {rows}x{cols}");
        Self {
            rows,
            cols,
            values,
            grad: None,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Prelu(Var, Var),
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Scale(Var, f64),
    Mean(Vec<Var>),
    Mse(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    linear: bool,
}

// out(m×n) += a(m×k) · b(k×n)
fn mm_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += s * bv;
            }
        }
    }
}

// out(m×n) += a(m×k) · b(n×k)ᵀ
fn mm_bt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b[j * k..(j + 1) * k];
            out[i * n + j] += ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

// out(k×n) += a(m×k)ᵀ · b(m×n)
fn mm_at_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            if s == 0.0 {
                continue;
            }
            for (o, bv) in out[p * n..(p + 1) * n].iter_mut().zip(br) {
                *o += s * bv;
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose rectifiers are the identity and whose attention uses
    /// uniform weights, so every model output is linear in its inputs.
    pub fn linear() -> Self {
        Self {
            linear: true,
            ..Self::default()
        }
    }

    pub fn is_linear(&self) -> bool {
        self.linear
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_vars.len() < store.count() {
            self.param_vars.resize(store.count(), None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let entry = &store.entries()[id.0];
        let t = Tensor::new(entry.rows, entry.cols, store.slice(id).to_vec());
        let v = self.push(t, Op::Param(entry.offset));
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Parameters read by this graph so far.
    pub fn used_params(&self) -> Vec<ParamId> {
        self.param_vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some())
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul {m}x{k} by {k2}x{n}");
        let mut out = vec![0.0; m * n];
        mm_acc(&self.value(a).values, &self.value(b).values, m, k, n, &mut out);
        self.push(Tensor::new(m, n, out), Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_bt {m}x{k} by ({n}x{k2})ᵀ");
        let mut out = vec![0.0; m * n];
        mm_bt_acc(&self.value(a).values, &self.value(b).values, m, k, n, &mut out);
        self.push(Tensor::new(m, n, out), Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let (r, c) = self.shape(a);
        let out = self.value(a).values.iter().zip(&self.value(b).values).map(|(x, y)| x + y).collect();
        self.push(Tensor::new(r, c, out), Op::Add(a, b))
    }

    /// Adds the `1 × c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (1, c), "bias shape mismatch");
        let bias = &self.value(b).values;
        let out = self
            .value(a)
            .values
            .chunks_exact(c)
            .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
            .collect();
        self.push(Tensor::new(r, c, out), Op::AddRow(a, b))
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        if self.linear {
            return a;
        }
        let (r, c) = self.shape(a);
        // written so that NaN propagates (f64::max would drop it)
        let out = self.value(a).values.iter().map(|&x| if x < 0.0 { 0.0 } else { x }).collect();
        self.push(Tensor::new(r, c, out), Op::Relu(a))
    }

    /// Parametric rectifier with a single learned negative slope `alpha` (1×1).
    pub fn prelu(&mut self, a: Var, alpha: Var) -> Var {
        if self.linear {
            return a;
        }
        assert_eq!(self.shape(alpha), (1, 1), "prelu slope must be 1x1");
        let s = self.value(alpha).values[0];
        let (r, c) = self.shape(a);
        let out = self.value(a).values.iter().map(|&x| if x > 0.0 { x } else { s * x }).collect();
        self.push(Tensor::new(r, c, out), Op::Prelu(a, alpha))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).values.clone();
        for row in out.chunks_exact_mut(c) {
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
        self.push(Tensor::new(r, c, out), Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let src = &self.value(a).values;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(Tensor::new(c, r, out), Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, rows, "concat_cols row mismatch");
                self.shape(p).1
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).values[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::new(rows, total, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut out = Vec::new();
        for &p in parts {
            assert_eq!(self.shape(p).1, cols, "concat_rows column mismatch");
            out.extend_from_slice(&self.value(p).values);
        }
        let rows = out.len() / cols.max(1);
        self.push(Tensor::new(rows, cols, out), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + width <= c, "slice {start}+{width} exceeds {c} columns");
        let src = &self.value(a).values;
        let out = (0..r).flat_map(|i| src[i * c + start..i * c + start + width].iter().copied()).collect();
        self.push(Tensor::new(r, width, out), Op::SliceCols(a, start))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).values.iter().map(|x| x * s).collect();
        self.push(Tensor::new(r, c, out), Op::Scale(a, s))
    }

    /// Elementwise mean of equally shaped tensors.
    pub fn mean(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "mean of no tensors");
        let (r, c) = self.shape(parts[0]);
        let mut out = vec![0.0; r * c];
        for &p in parts {
            assert_eq!(self.shape(p), (r, c), "mean shape mismatch");
            add_into(&mut out, &self.value(p).values);
        }
        let inv = 1.0 / parts.len() as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        self.push(Tensor::new(r, c, out), Op::Mean(parts.to_vec()))
    }

    /// Mean squared difference to a constant target, as a 1×1 tensor.
    pub fn mse(&mut self, a: Var, target: &[f64]) -> Var {
        let v = &self.value(a).values;
        assert_eq!(v.len(), target.len(), "mse target length mismatch");
        let loss = v.iter().zip(target).map(|(x, t)| (x - t) * (x - t)).sum::<f64>() / v.len() as f64;
        self.push(Tensor::new(1, 1, vec![loss]), Op::Mse(a, target.to_vec()))
    }

    /// Gradients of every node with respect to the scalar `root`, seeded
    /// with `d root = 1`. Entry `i` is `None` when node `i` does not reach `root`.
    pub fn node_grads(&self, root: Var) -> Vec<Option<Vec<f64>>> {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let (r, c) = node.value.shape();
            let acc = |v: Var, delta: &[f64], grads: &mut Vec<Option<Vec<f64>>>| match &mut grads[v.0] {
                Some(existing) => add_into(existing, delta),
                slot @ None => *slot = Some(delta.to_vec()),
            };
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let av = &self.value(*a).values;
                    let bv = &self.value(*b).values;
                    let mut da = vec![0.0; m * k];
                    mm_bt_acc(&g, bv, m, c, k, &mut da);
                    let mut db = vec![0.0; k * c];
                    mm_at_acc(av, &g, m, k, c, &mut db);
                    acc(*a, &da, &mut grads);
                    acc(*b, &db, &mut grads);
                }
                Op::MatMulBt(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = c;
                    let av = &self.value(*a).values;
                    let bv = &self.value(*b).values;
                    let mut da = vec![0.0; m * k];
                    mm_acc(&g, bv, m, n, k, &mut da);
                    let mut db = vec![0.0; n * k];
                    mm_at_acc(&g, av, m, n, k, &mut db);
                    acc(*a, &da, &mut grads);
                    acc(*b, &db, &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, &g, &mut grads);
                    acc(*b, &g, &mut grads);
                }
                Op::AddRow(a, b) => {
                    let mut db = vec![0.0; c];
                    for row in g.chunks_exact(c) {
                        add_into(&mut db, row);
                    }
                    acc(*a, &g, &mut grads);
                    acc(*b, &db, &mut grads);
                }
                Op::Relu(a) => {
                    let x = &self.value(*a).values;
                    let d: Vec<f64> = g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                    acc(*a, &d, &mut grads);
                }
                Op::Prelu(a, alpha) => {
                    let x = &self.value(*a).values;
                    let s = self.value(*alpha).values[0];
                    let mut ds = 0.0;
                    let d: Vec<f64> = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| {
                            if x > 0.0 {
                                *g
                            } else {
                                ds += g * x;
                                s * g
                            }
                        })
                        .collect();
                    acc(*a, &d, &mut grads);
                    acc(*alpha, &[ds], &mut grads);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value.values;
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..c {
                            d[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(*a, &d, &mut grads);
                }
                Op::Transpose(a) => {
                    // node is r×c, parent is c×r
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            d[j * r + i] = g[i * c + j];
                        }
                    }
                    acc(*a, &d, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        let d: Vec<f64> = (0..r).flat_map(|i| g[i * c + start..i * c + start + w].iter().copied()).collect();
                        acc(p, &d, &mut grads);
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let len = self.value(p).values.len();
                        acc(p, &g[start..start + len], &mut grads);
                        start += len;
                    }
                }
                Op::SliceCols(a, start) => {
                    let pc = self.shape(*a).1;
                    let mut d = vec![0.0; r * pc];
                    for i in 0..r {
                        d[i * pc + start..i * pc + start + c].copy_from_slice(&g[i * c..(i + 1) * c]);
                    }
                    acc(*a, &d, &mut grads);
                }
                Op::Scale(a, s) => {
                    let d: Vec<f64> = g.iter().map(|x| x * s).collect();
                    acc(*a, &d, &mut grads);
                }
                Op::Mean(parts) => {
                    let inv = 1.0 / parts.len() as f64;
                    let d: Vec<f64> = g.iter().map(|x| x * inv).collect();
                    for &p in parts {
                        acc(p, &d, &mut grads);
                    }
                }
                Op::Mse(a, target) => {
                    let x = &self.value(*a).values;
                    let f = 2.0 * g[0] / x.len() as f64;
                    let d: Vec<f64> = x.iter().zip(target).map(|(x, t)| f * (x - t)).collect();
                    acc(*a, &d, &mut grads);
                }
            }
            grads[i] = Some(g);
        }
        grads
    }

    /// Gradient of `root` with respect to the flat parameter vector of the
    /// store the graph read from (length `param_len`).
    pub fn backward(&self, root: Var, param_len: usize) -> Vec<f64> {
        let grads = self.node_grads(root);
        let mut out = vec![0.0; param_len];
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Op::Param(offset), Some(g)) = (&node.op, g) {
                add_into(&mut out[*offset..*offset + g.len()], g);
            }
        }
        out
    }

    /// Gradient of `root` with respect to node `v` (zeros when unreachable).
    pub fn grad_of(&self, root: Var, v: Var) -> Tensor {
        let grads = self.node_grads(root);
        let (r, c) = self.shape(v);
        let mut t = self.value(v).clone();
        t.grad = Some(grads.get(v.0).cloned().flatten().unwrap_or_else(|| vec![0.0; r * c]));
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Checks d loss / d input against central differences, where `build`
    /// maps the input node to a scalar.
    fn check_input_grad(x: Tensor, build: impl Fn(&mut Graph, Var) -> Var) {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let root = build(&mut g, xv);
        let analytic = g.grad_of(root, xv).grad.unwrap();
        let h = 1e-6;
        for i in 0..x.values.len() {
            let eval = |delta: f64| {
                let mut xp = x.clone();
                xp.values[i] += delta;
                let mut g = Graph::new();
                let v = g.input(xp);
                let r = build(&mut g, v);
                g.value(r).values[0]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (numeric - analytic[i]).abs() / (numeric.abs() + analytic[i].abs()).max(1e-6);
            assert!(err < 1e-6, "entry {i}: analytic {} numeric {numeric}", analytic[i]);
        }
    }

    #[test]
    fn matmul_values() {
        let mut g = Graph::new();
        let a = g.input(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = g.input(Tensor::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = g.matmul(a, b);
        assert_eq!(g.value(c).values, vec![58.0, 64.0, 139.0, 154.0]);
        let bt = g.transpose(b);
        let d = g.matmul_bt(a, bt);
        assert_eq!(g.value(d).values, g.value(c).values);
    }

    #[test]
    fn op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(&mut rng, 4, 3);
        let w2 = random(&mut rng, 5, 3);
        let target: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = random(&mut rng, 5, 4);
        check_input_grad(x.clone(), |g, x| {
            let wv = g.input(w.clone());
            let y = g.matmul(x, wv);
            let y = g.relu(y);
            g.mse(y, &target)
        });
        check_input_grad(x.clone(), |g, x| {
            let w2v = g.input(w2.clone());
            let wv = g.input(w.clone());
            let y = g.matmul(x, wv);
            let s = g.matmul_bt(y, w2v);
            let p = g.softmax_rows(s);
            let t = g.transpose(p);
            let z = g.slice_cols(t, 1, 3);
            let z = g.scale(z, 1.7);
            g.mse(z, &target)
        });
        check_input_grad(x.clone(), |g, x| {
            let a = g.input(Tensor::new(1, 1, vec![0.3]));
            let y = g.prelu(x, a);
            let t = g.transpose(x);
            let tt = g.transpose(t);
            let m = g.mean(&[y, tt, x]);
            let c = g.concat_cols(&[m, x]);
            let r = g.concat_rows(&[c, c]);
            let tgt: Vec<f64> = (0..80).map(|i| (i as f64).cos()).collect();
            g.mse(r, &tgt)
        });
        let b = random(&mut rng, 1, 4);
        check_input_grad(x, |g, x| {
            let bv = g.input(b.clone());
            let y = g.add_row(x, bv);
            let z = g.add(y, x);
            let tgt = vec![0.5; 20];
            g.mse(z, &tgt)
        });
    }

    #[test]
    fn prelu_slope_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(1, 3, vec![-2.0, 1.0, -0.5]));
        let a = g.input(Tensor::new(1, 1, vec![0.25]));
        let y = g.prelu(x, a);
        let loss = g.mse(y, &[0.0, 0.0, 0.0]);
        // d/da of mean((a x_neg)²) = 2 a Σ x_neg² / n
        let expected = 2.0 * 0.25 * (4.0 + 0.25) / 3.0;
        let ga = g.grad_of(loss, a).grad.unwrap()[0];
        assert!((ga - expected).abs() < 1e-14);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::new();
        let x = g.input(random(&mut rng, 6, 7));
        let x = g.scale(x, 40.0);
        let s = g.softmax_rows(x);
        for row in g.value(s).values.chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_graph_skips_rectifiers() {
        let mut g = Graph::linear();
        let x = g.input(Tensor::new(1, 2, vec![-1.0, 2.0]));
        assert_eq!(g.relu(x), x);
        let a = g.input(Tensor::new(1, 1, vec![0.1]));
        assert_eq!(g.prelu(x, a), x);
    }

    #[test]
    fn zero_loss_has_zero_output_gradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(2, 2, vec![1.0, -2.0, 3.0, 0.5]));
        let loss = g.mse(x, &[1.0, -2.0, 3.0, 0.5]);
        assert!(g.grad_of(loss, x).grad.unwrap().iter().all(|&d| d == 0.0));
    }
}
