//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every op appends a node holding its forward value. [`Graph::backward`]
//! walks the tape in reverse and returns one gradient per node that feeds
//! the loss and descends from a parameter leaf.

use super::kernels::{self, col2im, gemm, im2col, ConvGeom};
use super::tensor::Tensor;
use crate::error::{invalid, shape_err, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, Vec<f64>),
    Relu(Var),
    Sigmoid(Var),
    Concat(Var, Var),
    Reshape(Var),
    Sum(Var),
    Mse(Var, Vec<f64>),
    Conv2d { x: Var, w: Var, geom: ConvGeom, cols: Vec<f64> },
    ConvTranspose2d { x: Var, w: Var, geom: ConvGeom },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients from one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the loss.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant leaf; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, true)
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul of {sa:?} and {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// Adds a `[n]` bias along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        let bs = self.value(bias).shape();
        let n = *xs.last().unwrap();
        if bs.len() != 1 || bs[0] != n {
            return shape_err(format!("bias {bs:?} does not match last axis of {xs:?}"));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddBias(x, bias), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "{what} of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += v;
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= v;
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Elementwise product with a constant of the same shape (dropout masks).
    pub fn scale(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        if factors.len() != self.value(x).len() {
            return shape_err(format!(
                "scale factors of length {} for {:?}",
                factors.len(),
                self.value(x).shape()
            ));
        }
        let mut out = self.value(x).clone();
        for (o, f) in out.data_mut().iter_mut().zip(&factors) {
            *o *= f;
        }
        let ng = self.needs(x);
        Ok(self.push(out, Op::Scale(x, factors), ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = kernels::sigmoid(*v);
        }
        let ng = self.needs(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    /// Concatenates two `[m,_]` matrices column-wise.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return shape_err(format!("concat of {sa:?} and {sb:?}"));
        }
        let (m, ca, cb) = (sa[0], sa[1], sb[1]);
        let mut out = Vec::with_capacity(m * (ca + cb));
        for i in 0..m {
            out.extend_from_slice(self.value(a).row(i));
            out.extend_from_slice(self.value(b).row(i));
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, ca + cb], out), Op::Concat(a, b), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Mean squared error against a constant target of the same length.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        if target.len() != self.value(pred).len() {
            return shape_err(format!(
                "mse target of length {} for prediction {:?}",
                target.len(),
                self.value(pred).shape()
            ));
        }
        let n = target.len() as f64;
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let ng = self.needs(pred);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(pred, target.to_vec()), ng))
    }

    /// Strided convolution of an NHWC image `[n,h,w,c_in]` with a weight of
    /// shape `[k*k*c_in, c_out]`, padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, w: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 2 || ws[0] != kernel * kernel * xs[3] {
            return shape_err(format!("conv2d input {xs:?} with weight {ws:?}, kernel {kernel}"));
        }
        if stride == 0 || xs[1] + 2 * pad < kernel || xs[2] + 2 * pad < kernel {
            return invalid(format!("conv2d geometry: input {xs:?}, kernel {kernel}, stride {stride}"));
        }
        let geom = ConvGeom {
            batch: xs[0],
            image_h: xs[1],
            image_w: xs[2],
            image_c: xs[3],
            grid_h: (xs[1] + 2 * pad - kernel) / stride + 1,
            grid_w: (xs[2] + 2 * pad - kernel) / stride + 1,
            kernel,
            stride,
            pad,
        };
        let cols = im2col(&geom, self.value(x).data());
        let c_out = ws[1];
        let mut out = vec![0.0; geom.positions() * c_out];
        gemm(geom.positions(), geom.patch_len(), c_out, &cols, false, self.value(w).data(), false, &mut out, false);
        let shape = vec![geom.batch, geom.grid_h, geom.grid_w, c_out];
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Conv2d { x, w, geom, cols }, ng))
    }

    /// Transposed convolution (the adjoint of [`Graph::conv2d`]) of an NHWC
    /// input `[n,h,w,c_in]` with weight `[c_in, k*k*c_out]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 2 || ws[0] != xs[3] || ws[1] % (kernel * kernel) != 0 {
            return shape_err(format!("conv_transpose2d input {xs:?} with weight {ws:?}"));
        }
        if stride == 0 || (xs[1] - 1) * stride + kernel < 2 * pad + 1 {
            return invalid(format!("conv_transpose2d geometry: input {xs:?}, kernel {kernel}"));
        }
        let c_out = ws[1] / (kernel * kernel);
        let geom = ConvGeom {
            batch: xs[0],
            image_h: (xs[1] - 1) * stride + kernel - 2 * pad,
            image_w: (xs[2] - 1) * stride + kernel - 2 * pad,
            image_c: c_out,
            grid_h: xs[1],
            grid_w: xs[2],
            kernel,
            stride,
            pad,
        };
        let mut cols = vec![0.0; geom.positions() * geom.patch_len()];
        gemm(geom.positions(), xs[3], geom.patch_len(), self.value(x).data(), false, self.value(w).data(), false, &mut cols, false);
        let out = col2im(&geom, &cols);
        let shape = vec![geom.batch, geom.image_h, geom.image_w, c_out];
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor::from_parts(shape, out), Op::ConvTranspose2d { x, w, geom }, ng))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Vec<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(&delta) {
                    *e += d;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::from_parts(self.value(v).shape().to_vec(), delta));
            }
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, bv.data(), true, &mut da, false);
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, gd, false, &mut db, false);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, gd.to_vec());
                if self.needs(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        for (d, r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    self.accumulate(grads, *a, gd.iter().zip(bv).map(|(g, b)| g * b).collect());
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, gd.iter().zip(av).map(|(g, a)| g * a).collect());
                }
            }
            Op::Scale(x, f) => {
                self.accumulate(grads, *x, gd.iter().zip(f).map(|(g, f)| g * f).collect());
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = gd.iter().zip(xv).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = gd.iter().zip(out.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Concat(a, b) => {
                let ca = self.value(*a).shape()[1];
                let cb = self.value(*b).shape()[1];
                let m = out.shape()[0];
                let (mut da, mut db) = (Vec::with_capacity(m * ca), Vec::with_capacity(m * cb));
                for row in gd.chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gd.to_vec()),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gd[0]; n]);
            }
            Op::Mse(p, target) => {
                let n = target.len() as f64;
                let d = self
                    .value(*p)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(p, t)| gd[0] * 2.0 * (p - t) / n)
                    .collect();
                self.accumulate(grads, *p, d);
            }
            Op::Conv2d { x, w, geom, cols } => {
                let c_out = self.value(*w).shape()[1];
                let (pos, plen) = (geom.positions(), geom.patch_len());
                if self.needs(*w) {
                    let mut dw = vec![0.0; plen * c_out];
                    gemm(plen, pos, c_out, cols, true, gd, false, &mut dw, false);
                    self.accumulate(grads, *w, dw);
                }
                if self.needs(*x) {
                    let mut dcols = vec![0.0; pos * plen];
                    gemm(pos, c_out, plen, gd, false, self.value(*w).data(), true, &mut dcols, false);
                    self.accumulate(grads, *x, col2im(geom, &dcols));
                }
            }
            Op::ConvTranspose2d { x, w, geom } => {
                let c_in = self.value(*x).shape()[3];
                let (pos, plen) = (geom.positions(), geom.patch_len());
                let dcols = im2col(geom, gd);
                if self.needs(*w) {
                    let mut dw = vec![0.0; c_in * plen];
                    gemm(c_in, pos, plen, self.value(*x).data(), true, &dcols, false, &mut dw, false);
                    self.accumulate(grads, *w, dw);
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; pos * c_in];
                    gemm(pos, plen, c_in, &dcols, false, self.value(*w).data(), true, &mut dx, false);
                    self.accumulate(grads, *x, dx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let t = g.param(&Tensor::scalar(3.0));
        let sq = g.mul(t, t).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(t).unwrap().data(), &[6.0]);
    }

    #[test]
    fn inactive_relu_has_zero_gradient() {
        let mut g = Graph::new();
        let t = g.param(&Tensor::scalar(-1.0));
        let r = g.relu(t);
        let loss = g.sum(r);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(t).unwrap().data(), &[0.0]);
    }

    #[test]
    fn backward_on_empty_graph_is_rejected() {
        let g = Graph::new();
        assert!(matches!(g.backward(Var(0)), Err(Error::NoForward)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let t = g.param(&Tensor::zeros(&[2, 2]));
        let r = g.relu(t);
        assert!(matches!(g.backward(r), Err(Error::NonScalarLoss(s)) if s == vec![2, 2]));
    }

    #[test]
    fn matmul_rejects_incompatible_shapes() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_output_geometry() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 32, 32, 3]));
        let w = g.param(&Tensor::zeros(&[4 * 4 * 3, 8]));
        let y = g.conv2d(x, w, 4, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 16, 16, 8]);
        let wt = g.param(&Tensor::zeros(&[8, 4 * 4 * 3]));
        let z = g.conv_transpose2d(y, wt, 4, 2, 1).unwrap();
        assert_eq!(g.value(z).shape(), &[2, 32, 32, 3]);
    }
}
