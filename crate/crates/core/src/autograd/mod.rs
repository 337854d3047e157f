//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied to its variables. Model parameters
//! enter the tape lazily through [`Graph::param`]; only parameters of the networks
//! declared trainable at construction receive gradients, everything else is a
//! constant. A fresh graph is built for every forward pass.

pub mod kernels;

use std::collections::{BTreeMap, HashMap};

use crate::error::{MsnetError, Result};
use crate::params::{Net, ParamStore};
use crate::tensor::{gemm, Real, Tensor};

use kernels::ConvGeom;

/// Handle to a node on the tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, F),
    LeakyRelu(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Clamp(Var, F, F),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<F>,
    },
    UpsampleNearest2(Var),
    ResizeBilinear {
        x: Var,
        ah: Vec<F>,
        aw: Vec<F>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Mse(Var, Var),
    MeanAll(Var),
    Reshape(Var),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Graph<'p, F: Real> {
    store: Option<&'p ParamStore<F>>,
    trainable: [bool; 7],
    nodes: Vec<Node<F>>,
    param_vars: HashMap<String, Var>,
}

impl<F: Real> Default for Graph<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Real> Graph<'p, F> {
    /// A graph without model parameters.
    pub fn new() -> Self {
        Graph {
            store: None,
            trainable: [false; 7],
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    /// A graph reading parameters from `store`. Parameters of `trainable` networks
    /// receive gradients; all others are constants.
    pub fn with_params(store: &'p ParamStore<F>, trainable: &[Net]) -> Self {
        let mut flags = [false; 7];
        for n in trainable {
            flags[n.index()] = true;
        }
        Graph {
            store: Some(store),
            trainable: flags,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn is_trainable(&self, net: Net) -> bool {
        self.trainable[net.index()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives a gradient regardless of the trainable set.
    pub fn variable(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The named model parameter, entered on the tape once per graph.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.param_vars.get(name) {
            return Ok(*v);
        }
        let store = self
            .store
            .ok_or_else(|| MsnetError::MissingParam(name.to_string()))?;
        let t = store.get(name)?.clone();
        let train = Net::of_param(name).is_some_and(|n| self.trainable[n.index()]);
        let v = self.push(t, Op::Leaf, train);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value.item()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(MsnetError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same numel");
        let rg = self.rg(a) || self.rg(b);
        self.push(t, op, rg)
    }

    fn unary(&mut self, x: Var, op: Op<F>, f: impl Fn(F) -> F) -> Var {
        let t = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (F::of(scale), F::of(shift));
        self.unary(x, Op::Affine(x, s), |v| s * v + t)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = F::of(slope);
        self.unary(x, Op::LeakyRelu(x, s), |v| {
            if v > F::zero() {
                v
            } else {
                s * v
            }
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| {
            if v >= F::zero() {
                F::one() / (F::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (F::one() + e)
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |v| v.ln())
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (F::of(lo), F::of(hi));
        self.unary(x, Op::Clamp(x, l, h), |v| v.max(l).min(h))
    }

    /// 2-D convolution. `x: [n, c, h, w]`, `w: [co, c, kh, kw]`, `b: [co]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(MsnetError::Shape(format!(
                "conv2d input {xs:?} with weight {ws:?}"
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(MsnetError::Shape(format!(
                    "conv2d bias {:?} for {} output channels",
                    self.shape(b),
                    ws[0]
                )));
            }
        }
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
        };
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(MsnetError::Shape(format!(
                "conv2d kernel {ws:?} larger than padded input {xs:?}"
            )));
        }
        let (ho, wo) = geom.out_hw();
        let co = ws[0];
        let p = ho * wo;
        let col = kernels::im2col(self.value(x).data(), &geom);
        let mut out_cm = vec![F::zero(); co * geom.n * p];
        gemm(
            co,
            geom.k(),
            geom.n * p,
            self.value(w).data(),
            false,
            &col,
            false,
            &mut out_cm,
            false,
        );
        let mut out = kernels::cm_to_nchw(&out_cm, geom.n, co, p);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for plane in 0..geom.n * co {
                let bv = bias[plane % co];
                for v in &mut out[plane * p..(plane + 1) * p] {
                    *v += bv;
                }
            }
        }
        let t = Tensor::new(vec![geom.n, co, ho, wo], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Normalizes each `(n, c)` plane of a 4-D tensor to zero mean, unit variance.
    pub fn instance_norm(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(MsnetError::Shape(format!("instance_norm on {xs:?}")));
        }
        let (out, inv_std) = kernels::instance_norm(self.value(x).data(), xs[0] * xs[1], 1e-5);
        let t = Tensor::new(xs, out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::InstanceNorm { x, inv_std }, rg))
    }

    /// Nearest-neighbour 2x spatial upsampling.
    pub fn upsample_nearest2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(MsnetError::Shape(format!("upsample on {xs:?}")));
        }
        let (h, w) = (xs[2], xs[3]);
        let src = self.value(x).data();
        let mut out = vec![F::zero(); src.len() * 4];
        for (pi, plane) in src.chunks_exact(h * w).enumerate() {
            let dst = &mut out[pi * 4 * h * w..(pi + 1) * 4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
                }
            }
        }
        let t = Tensor::new(vec![xs[0], xs[1], 2 * h, 2 * w], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::UpsampleNearest2(x), rg))
    }

    /// Bilinear resize of every plane to `ho x wo`.
    pub fn resize_bilinear(&mut self, x: Var, ho: usize, wo: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(MsnetError::Shape(format!("resize on {xs:?}")));
        }
        let (hi, wi) = (xs[2], xs[3]);
        let ah: Vec<F> = kernels::bilinear_matrix(hi, ho);
        let aw: Vec<F> = kernels::bilinear_matrix(wi, wo);
        let planes = xs[0] * xs[1];
        let src = self.value(x).data();
        let mut out = vec![F::zero(); planes * ho * wo];
        let mut tmp = vec![F::zero(); ho * wi];
        for pi in 0..planes {
            let plane = &src[pi * hi * wi..(pi + 1) * hi * wi];
            gemm(ho, hi, wi, &ah, false, plane, false, &mut tmp, false);
            gemm(
                ho,
                wi,
                wo,
                &tmp,
                false,
                &aw,
                true,
                &mut out[pi * ho * wo..(pi + 1) * ho * wo],
                false,
            );
        }
        let t = Tensor::new(vec![xs[0], xs[1], ho, wo], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::ResizeBilinear { x, ah, aw }, rg))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| MsnetError::Empty("concat of zero tensors".into()))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(MsnetError::Shape(format!("concat axis {axis} on {s0:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != s0.len()
                || s.iter()
                    .zip(&s0)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(MsnetError::Shape(format!("concat {s:?} with {s0:?}")));
            }
            total += s[axis];
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis] * inner;
                data.extend_from_slice(&self.value(*p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let t = Tensor::new(shape, data)?;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(MsnetError::Shape(format!(
                "narrow axis {axis} [{start}, {}) of {xs:?}",
                start + len
            )));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * xs[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Narrow { x, axis, start }, rg))
    }

    /// `[n, c, h, w]` → `[n, c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(MsnetError::Shape(format!("global_avg_pool on {xs:?}")));
        }
        let p = xs[2] * xs[3];
        let inv = F::of(1.0 / p as f64);
        let data = self
            .value(x)
            .data()
            .chunks_exact(p)
            .map(|c| c.iter().copied().sum::<F>() * inv)
            .collect();
        let t = Tensor::new(vec![xs[0], xs[1]], data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::GlobalAvgPool(x), rg))
    }

    /// `x: [n, in]`, `w: [out, in]`, `b: [out]` → `[n, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.shape(b) != [ws[0]] {
            return Err(MsnetError::Shape(format!(
                "linear input {xs:?}, weight {ws:?}, bias {:?}",
                self.shape(b)
            )));
        }
        let (n, o) = (xs[0], ws[0]);
        let mut out = vec![F::zero(); n * o];
        gemm(
            n,
            xs[1],
            o,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            &mut out,
            false,
        );
        let bias = self.value(b).data();
        for row in out.chunks_exact_mut(o) {
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        let t = Tensor::new(vec![n, o], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(t, Op::Linear { x, w, b }, rg))
    }

    /// Mean squared difference over all elements, as a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let s: F = va.iter().zip(vb).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let t = Tensor::scalar(s / F::of(va.len() as f64));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mse(a, b), rg))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: F = v.data().iter().copied().sum();
        let t = Tensor::scalar(s / F::of(v.numel() as f64));
        let rg = self.rg(x);
        self.push(t, Op::MeanAll(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Gradients of the scalar `loss` with respect to every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return Err(MsnetError::Shape(format!(
                "backward from non-scalar {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), F::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .filter(|(_, v)| self.rg(**v))
            .filter_map(|(k, v)| grads[v.0].clone().map(|g| (k.clone(), g)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, node: &Node<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, || gd.to_vec());
                self.acc(grads, *b, || gd.to_vec());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, || gd.to_vec());
                self.acc(grads, *b, || gd.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, || {
                    gd.iter().zip(vb).map(|(&g, &y)| g * y).collect()
                });
                self.acc(grads, *b, || {
                    gd.iter().zip(va).map(|(&g, &x)| g * x).collect()
                });
            }
            Op::Affine(x, s) => self.acc(grads, *x, || gd.iter().map(|&g| g * *s).collect()),
            Op::LeakyRelu(x, s) => {
                let vx = self.value(*x).data();
                self.acc(grads, *x, || {
                    gd.iter()
                        .zip(vx)
                        .map(|(&g, &v)| if v > F::zero() { g } else { g * *s })
                        .collect()
                })
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.acc(grads, *x, || {
                    gd.iter()
                        .zip(y)
                        .map(|(&g, &y)| g * y * (F::one() - y))
                        .collect()
                })
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                self.acc(grads, *x, || {
                    gd.iter()
                        .zip(y)
                        .map(|(&g, &y)| g * (F::one() - y * y))
                        .collect()
                })
            }
            Op::Log(x) => {
                let vx = self.value(*x).data();
                self.acc(grads, *x, || {
                    gd.iter().zip(vx).map(|(&g, &v)| g / v).collect()
                })
            }
            Op::Clamp(x, lo, hi) => {
                let vx = self.value(*x).data();
                self.acc(grads, *x, || {
                    gd.iter()
                        .zip(vx)
                        .map(|(&g, &v)| if v >= *lo && v <= *hi { g } else { F::zero() })
                        .collect()
                })
            }
            Op::Conv2d { x, w, b, geom } => self.conv_backward(*x, *w, *b, geom, g, grads),
            Op::InstanceNorm { x, inv_std } => {
                if self.rg(*x) {
                    let mut dx = vec![F::zero(); gd.len()];
                    kernels::instance_norm_backward(gd, node.value.data(), inv_std, &mut dx);
                    self.acc(grads, *x, || dx);
                }
            }
            Op::UpsampleNearest2(x) => {
                let xs = self.shape(*x);
                let (h, w) = (xs[2], xs[3]);
                self.acc(grads, *x, || {
                    let mut dx = vec![F::zero(); gd.len() / 4];
                    for (pi, plane) in gd.chunks_exact(4 * h * w).enumerate() {
                        let dst = &mut dx[pi * h * w..(pi + 1) * h * w];
                        for y in 0..2 * h {
                            for xx in 0..2 * w {
                                dst[(y / 2) * w + xx / 2] += plane[y * 2 * w + xx];
                            }
                        }
                    }
                    dx
                })
            }
            Op::ResizeBilinear { x, ah, aw } => {
                let xs = self.shape(*x);
                let (hi, wi) = (xs[2], xs[3]);
                let gs = g.shape();
                let (ho, wo) = (gs[2], gs[3]);
                self.acc(grads, *x, || {
                    let planes = xs[0] * xs[1];
                    let mut dx = vec![F::zero(); planes * hi * wi];
                    let mut tmp = vec![F::zero(); hi * wo];
                    for pi in 0..planes {
                        let gp = &gd[pi * ho * wo..(pi + 1) * ho * wo];
                        gemm(hi, ho, wo, ah, true, gp, false, &mut tmp, false);
                        gemm(
                            hi,
                            wo,
                            wi,
                            &tmp,
                            false,
                            aw,
                            false,
                            &mut dx[pi * hi * wi..(pi + 1) * hi * wi],
                            false,
                        );
                    }
                    dx
                })
            }
            Op::Concat { parts, axis } => {
                let s = node.value.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[*axis + 1..].iter().product();
                let total = s[*axis] * inner;
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis] * inner;
                    self.acc(grads, *p, || {
                        let mut d = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            d.extend_from_slice(&gd[o * total + offset..o * total + offset + len]);
                        }
                        d
                    });
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let xs = self.shape(*x);
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[*axis + 1..].iter().product();
                let len = g.shape()[*axis] * inner;
                let full = xs[*axis] * inner;
                self.acc(grads, *x, || {
                    let mut d = vec![F::zero(); outer * full];
                    for o in 0..outer {
                        let base = o * full + start * inner;
                        d[base..base + len].copy_from_slice(&gd[o * len..(o + 1) * len]);
                    }
                    d
                })
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let p = xs[2] * xs[3];
                let inv = F::of(1.0 / p as f64);
                self.acc(grads, *x, || {
                    gd.iter()
                        .flat_map(|&g| std::iter::repeat_n(g * inv, p))
                        .collect()
                })
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let (n, i, o) = (xs[0], xs[1], ws[0]);
                if self.rg(*x) {
                    let mut dx = vec![F::zero(); n * i];
                    gemm(
                        n,
                        o,
                        i,
                        gd,
                        false,
                        self.value(*w).data(),
                        false,
                        &mut dx,
                        false,
                    );
                    self.acc(grads, *x, || dx);
                }
                if self.rg(*w) {
                    let mut dw = vec![F::zero(); o * i];
                    gemm(
                        o,
                        n,
                        i,
                        gd,
                        true,
                        self.value(*x).data(),
                        false,
                        &mut dw,
                        false,
                    );
                    self.acc(grads, *w, || dw);
                }
                self.acc(grads, *b, || {
                    let mut db = vec![F::zero(); o];
                    for row in gd.chunks_exact(o) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    db
                });
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let k = gd[0] * F::of(2.0 / va.len() as f64);
                self.acc(grads, *a, || {
                    va.iter().zip(vb).map(|(&x, &y)| k * (x - y)).collect()
                });
                self.acc(grads, *b, || {
                    va.iter().zip(vb).map(|(&x, &y)| k * (y - x)).collect()
                });
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).numel();
                let v = gd[0] / F::of(n as f64);
                self.acc(grads, *x, || vec![v; n]);
            }
            Op::Reshape(x) => self.acc(grads, *x, || gd.to_vec()),
        }
    }

    fn conv_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &ConvGeom,
        g: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) {
        let (ho, wo) = geom.out_hw();
        let p = ho * wo;
        let co = self.shape(w)[0];
        let cols = geom.n * p;
        let gcm = kernels::nchw_to_cm(g.data(), geom.n, co, p);
        if self.rg(w) {
            let col = kernels::im2col(self.value(x).data(), geom);
            let mut dw = vec![F::zero(); co * geom.k()];
            gemm(co, cols, geom.k(), &gcm, false, &col, true, &mut dw, false);
            self.acc(grads, w, || dw);
        }
        if let Some(b) = b {
            self.acc(grads, b, || {
                gcm.chunks_exact(cols)
                    .map(|row| row.iter().copied().sum())
                    .collect()
            });
        }
        if self.rg(x) {
            let mut dcol = vec![F::zero(); geom.k() * cols];
            gemm(
                geom.k(),
                co,
                cols,
                self.value(w).data(),
                true,
                &gcm,
                false,
                &mut dcol,
                false,
            );
            let mut dx = vec![F::zero(); geom.n * geom.c * geom.h * geom.w];
            kernels::col2im(&dcol, geom, &mut dx);
            self.acc(grads, x, || dx);
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<F>>], v: Var, make: impl FnOnce() -> Vec<F>) {
        if !self.rg(v) {
            return;
        }
        let d = make();
        match &mut grads[v.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(d) {
                    *a += b;
                }
            }
            slot @ None => {
                *slot = Some(
                    Tensor::new(self.shape(v).to_vec(), d).expect("gradient matches value shape"),
                )
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    params: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a trainable parameter that the loss depends on.
    pub fn param(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.get(name)
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<F>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<F>> {
        self.params
    }
}
