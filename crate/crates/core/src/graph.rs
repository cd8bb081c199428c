//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operator appends a node holding its output
//! value and enough saved state to apply its vector-Jacobian product. Nodes
//! are appended after their inputs, so the tape is topologically ordered and
//! [`Graph::backward`] is a single reverse sweep.

use crate::error::{invalid, Result};
use crate::kernels::{self, ConvGeom, NormCache};
use crate::tensor::{Shape, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of a user-supplied operator: receives the input
/// values, the output value and the upstream gradient, returns one gradient
/// buffer per input.
pub type CustomVjp = Box<dyn Fn(&[&Tensor], &Tensor, &[f64]) -> Vec<Vec<f64>>>;

/// Element-wise activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

enum Op {
    Leaf,
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom },
    DepthwiseS2 { x: Var, k: Var, b: Var },
    MaxPool2 { x: Var, arg: Vec<usize> },
    Upsample2x { x: Var },
    GlobalAvgPool { x: Var },
    ChannelAvg { x: Var },
    FullyConnected { v: Var, w: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    ScaleBy { x: Var, s: Var },
    Concat { a: Var, b: Var },
    SliceChannels { x: Var, start: usize },
    SpatialNorm { x: Var, gamma: Var, beta: Var, cache: NormCache },
    Sum { x: Var },
    Dot { x: Var, weights: Tensor },
    CrossEntropy { probs: Var, target: Tensor },
    Custom { name: String, inputs: Vec<Var>, vjp: CustomVjp },
}

impl Op {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::DepthwiseS2 { .. } => "depthwise_conv2d_s2",
            Op::MaxPool2 { .. } => "max_pool2",
            Op::Upsample2x { .. } => "bilinear_upsample_2x",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::ChannelAvg { .. } => "channel_avg",
            Op::FullyConnected { .. } => "fully_connected",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Softmax { .. } => "softmax_channels",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::ScaleBy { .. } => "scale_by",
            Op::Concat { .. } => "concat_channels",
            Op::SliceChannels { .. } => "slice_channels",
            Op::SpatialNorm { .. } => "spatial_norm",
            Op::Sum { .. } => "sum",
            Op::Dot { .. } => "dot",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Custom { name, .. } => name,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Lower clamp applied to probabilities inside the cross-entropy log.
pub const LOG_CLAMP: f64 = 1e-12;

/// A gradient tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`]: dLoss/dNode for every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Borrowed gradient buffer, `None` when unreached.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn same_shape(op: &str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(invalid(format!("{op}: shape mismatch {a} vs {b}")));
    }
    Ok(())
}

fn vector_len(op: &str, what: &str, t: &Tensor, expected: usize) -> Result<()> {
    let s = t.shape();
    if s != Shape::new(expected, 1, 1, 1) {
        return Err(invalid(format!(
            "{op}: {what} must have shape {expected}x1x1x1, got {s}"
        )));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the operator that produced `v`.
    pub fn op_name(&self, v: Var) -> &str {
        self.nodes[v.0].op.name()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        debug_assert!(value.is_finite() || !inputs.iter().all(|v| self.value(*v).is_finite()));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf (gradient is tracked).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, shape: Shape) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    /// 2-D cross-correlation. `kernel` is `(Cout, Cin, k, k)` with `k` in
    /// {1, 3}, `bias` is `(Cout, 1, 1, 1)`, `pad` must equal `k / 2` so the
    /// output extent is `ceil(H / stride)`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x);
        let ks = self.shape(kernel);
        if ks.c != xs.c {
            return Err(invalid(format!(
                "conv2d: kernel input channels {} != input channels {}",
                ks.c, xs.c
            )));
        }
        if ks.h != ks.w || !(ks.h == 1 || ks.h == 3) {
            return Err(invalid(format!(
                "conv2d: kernel height/width must be 1 or 3 and equal, got {}x{}",
                ks.h, ks.w
            )));
        }
        if !(stride == 1 || stride == 2) {
            return Err(invalid(format!("conv2d: stride must be 1 or 2, got {stride}")));
        }
        if pad != ks.h / 2 {
            return Err(invalid(format!(
                "conv2d: pad {pad} does not give same padding for kernel size {}",
                ks.h
            )));
        }
        vector_len("conv2d", "bias", self.value(bias), ks.n)?;
        let geom = ConvGeom { stride, pad };
        let out = kernels::conv2d_forward(self.value(x), self.value(kernel), self.value(bias), geom);
        Ok(self.push(
            out,
            Op::Conv2d {
                x,
                k: kernel,
                b: bias,
                geom,
            },
            &[x, kernel, bias],
        ))
    }

    /// `conv2d` with same padding derived from the kernel size.
    pub fn conv2d_same(&mut self, x: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let pad = self.shape(kernel).h / 2;
        self.conv2d(x, kernel, bias, stride, pad)
    }

    /// Per-channel 3x3 convolution with stride 2 and same padding.
    /// `kernel` is `(C, 1, 3, 3)`.
    pub fn depthwise_conv2d_s2(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ks = self.shape(kernel);
        if ks != Shape::new(xs.c, 1, 3, 3) {
            return Err(invalid(format!(
                "depthwise_conv2d_s2: kernel must be {}x1x3x3 for {} input channels, got {ks}",
                xs.c, xs.c
            )));
        }
        vector_len("depthwise_conv2d_s2", "bias", self.value(bias), xs.c)?;
        let out = kernels::depthwise_s2_forward(self.value(x), self.value(kernel), self.value(bias));
        Ok(self.push(
            out,
            Op::DepthwiseS2 {
                x,
                k: kernel,
                b: bias,
            },
            &[x, kernel, bias],
        ))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.h % 2 != 0 || xs.w % 2 != 0 {
            return Err(invalid(format!(
                "max_pool2: spatial extent must be even, got height {} width {}",
                xs.h, xs.w
            )));
        }
        let (out, arg) = kernels::max_pool2_forward(self.value(x));
        Ok(self.push(out, Op::MaxPool2 { x, arg }, &[x]))
    }

    /// Half-pixel-centred bilinear 2x upsampling.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.h == 0 || xs.w == 0 {
            return Err(invalid(format!("bilinear_upsample_2x: empty spatial extent {xs}")));
        }
        let out = kernels::upsample2x_forward(self.value(x));
        Ok(self.push(out, Op::Upsample2x { x }, &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let m = xs.plane() as f64;
        let xd = self.value(x).data();
        let out: Vec<f64> = xd
            .chunks(xs.plane())
            .map(|p| p.iter().sum::<f64>() / m)
            .collect();
        let out = Tensor::new(Shape::new(xs.n, xs.c, 1, 1), out).expect("gap shape");
        self.push(out, Op::GlobalAvgPool { x }, &[x])
    }

    /// Per-pixel mean across channels, `(N, 1, H, W)`.
    pub fn channel_avg(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let t = self.value(x);
        let out = Tensor::from_fn(Shape::new(xs.n, 1, xs.h, xs.w), |n, _, y, x_| {
            let mut acc = 0.0;
            for c in 0..xs.c {
                acc += t.at(n, c, y, x_);
            }
            acc / xs.c as f64
        });
        self.push(out, Op::ChannelAvg { x }, &[x])
    }

    /// Affine map on `(N, C, 1, 1)` vectors; `weight` is `(Cout, C, 1, 1)`.
    pub fn fully_connected(&mut self, v: Var, weight: Var, bias: Var) -> Result<Var> {
        let vs = self.shape(v);
        let ws = self.shape(weight);
        if vs.h != 1 || vs.w != 1 {
            return Err(invalid(format!("fully_connected: input must be Nx Cx1x1, got {vs}")));
        }
        if ws.c != vs.c || ws.h != 1 || ws.w != 1 {
            return Err(invalid(format!(
                "fully_connected: weight inner dimension {} != input channels {}",
                ws.c, vs.c
            )));
        }
        vector_len("fully_connected", "bias", self.value(bias), ws.n)?;
        let geom = ConvGeom { stride: 1, pad: 0 };
        let out = kernels::conv2d_forward(self.value(v), self.value(weight), self.value(bias), geom);
        Ok(self.push(
            out,
            Op::FullyConnected {
                v,
                w: weight,
                b: bias,
            },
            &[v, weight, bias],
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(x),
            Activation::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid { x }, &[x])
    }

    /// Softmax across the channel axis at every `(n, y, x)`.
    pub fn softmax_channels(&mut self, x: Var) -> Var {
        let out = kernels::softmax_channels(self.value(x));
        self.push(out, Op::Softmax { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    /// `x ⊗ s` where `s` is broadcast over every axis on which its extent is 1
    /// (batch extents must agree). Covers per-channel `(N,C,1,1)` and
    /// per-pixel `(N,1,H,W)` weights.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ss = self.shape(s);
        let ok = ss.n == xs.n
            && (ss.c == xs.c || ss.c == 1)
            && (ss.h == xs.h || ss.h == 1)
            && (ss.w == xs.w || ss.w == 1);
        if !ok {
            return Err(invalid(format!("scale_by: {ss} does not broadcast to {xs}")));
        }
        let (tx, ts) = (self.value(x), self.value(s));
        let out = Tensor::from_fn(xs, |n, c, y, x_| {
            tx.at(n, c, y, x_) * ts.data()[kernels::bcast_index(xs, ss, n, c, y, x_)]
        });
        Ok(self.push(out, Op::ScaleBy { x, s }, &[x, s]))
    }

    /// Channel concatenation, `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(invalid(format!(
                "concat_channels: batch/height/width mismatch {sa} vs {sb}"
            )));
        }
        let out = kernels::concat_channels(self.value(a), self.value(b));
        Ok(self.push(out, Op::Concat { a, b }, &[a, b]))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, end)?;
        Ok(self.push(out, Op::SliceChannels { x, start }, &[x]))
    }

    /// Per-`(n, c)` plane normalisation with learned per-channel affine.
    pub fn spatial_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x);
        if xs.plane() < 2 {
            return Err(invalid(format!(
                "spatial_norm: plane must hold at least 2 values, got {}x{}",
                xs.h, xs.w
            )));
        }
        vector_len("spatial_norm", "gamma", self.value(gamma), xs.c)?;
        vector_len("spatial_norm", "beta", self.value(beta), xs.c)?;
        let (out, cache) =
            kernels::spatial_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps);
        Ok(self.push(out, Op::SpatialNorm { x, gamma, beta, cache }, &[x, gamma, beta]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum { x }, &[x])
    }

    /// `sum(x ⊗ weights)` for a constant weight tensor.
    pub fn dot(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        same_shape("dot", self.shape(x), weights.shape())?;
        let v = kernels::compensated_sum(
            self.value(x).data().iter().zip(weights.data()).map(|(a, b)| a * b),
        );
        Ok(self.push(Tensor::scalar(v), Op::Dot { x, weights }, &[x]))
    }

    /// Pixel-mean cross-entropy `-Σ_c g_c log(max(p_c, 1e-12))` between
    /// softmax probabilities and a one-hot target.
    pub fn cross_entropy(&mut self, probs: Var, target: &Tensor) -> Result<Var> {
        let ps = self.shape(probs);
        same_shape("cross_entropy", ps, target.shape())?;
        let npix = (ps.n * ps.plane()) as f64;
        let loss = kernels::compensated_sum(
            self.value(probs)
                .data()
                .iter()
                .zip(target.data())
                .filter(|(_, &g)| g != 0.0)
                .map(|(&p, &g)| -g * p.max(LOG_CLAMP).ln()),
        ) / npix;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                target: target.clone(),
            },
            &[probs],
        ))
    }

    /// Appends an operator with caller-supplied forward value and VJP.
    pub fn custom(&mut self, name: &str, inputs: &[Var], value: Tensor, vjp: CustomVjp) -> Var {
        self.push(
            value,
            Op::Custom {
                name: name.to_string(),
                inputs: inputs.to_vec(),
                vjp,
            },
            inputs,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if ls != Shape::scalar() {
            return Err(invalid(format!("backward: loss must be a scalar, got shape {ls}")));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(go) = grads[i].take() else { continue };
            self.propagate(node, &go, &mut grads);
            grads[i] = Some(go);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, go: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(g) => g.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, b, geom } => {
                let (dx, dk, db) = kernels::conv2d_backward(val(*x), val(*k), go, *geom);
                acc(*x, dx);
                acc(*k, dk);
                acc(*b, db);
            }
            Op::FullyConnected { v, w, b } => {
                let geom = ConvGeom { stride: 1, pad: 0 };
                let (dv, dw, db) = kernels::conv2d_backward(val(*v), val(*w), go, geom);
                acc(*v, dv);
                acc(*w, dw);
                acc(*b, db);
            }
            Op::DepthwiseS2 { x, k, b } => {
                let (dx, dk, db) = kernels::depthwise_s2_backward(val(*x), val(*k), go);
                acc(*x, dx);
                acc(*k, dk);
                acc(*b, db);
            }
            Op::MaxPool2 { x, arg } => {
                let mut dx = vec![0.0; val(*x).len()];
                for (g, &i) in go.iter().zip(arg) {
                    dx[i] += g;
                }
                acc(*x, dx);
            }
            Op::Upsample2x { x } => acc(*x, kernels::upsample2x_backward(val(*x).shape(), go)),
            Op::GlobalAvgPool { x } => {
                let xs = val(*x).shape();
                let m = xs.plane();
                let mut dx = Vec::with_capacity(xs.len());
                for g in go {
                    dx.extend(std::iter::repeat(g / m as f64).take(m));
                }
                acc(*x, dx);
            }
            Op::ChannelAvg { x } => {
                let xs = val(*x).shape();
                let plane = xs.plane();
                let mut dx = vec![0.0; xs.len()];
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        for p in 0..plane {
                            dx[(n * xs.c + c) * plane + p] = go[n * plane + p] / xs.c as f64;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Relu { x } => {
                let dx = val(*x)
                    .data()
                    .iter()
                    .zip(go)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                acc(*x, dx);
            }
            Op::Sigmoid { x } => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(go)
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect();
                acc(*x, dx);
            }
            Op::Softmax { x } => acc(*x, kernels::softmax_channels_backward(&node.value, go)),
            Op::Add { a, b } => {
                acc(*a, go.to_vec());
                acc(*b, go.to_vec());
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                acc(*a, go.iter().zip(tb).map(|(g, y)| g * y).collect());
                acc(*b, go.iter().zip(ta).map(|(g, y)| g * y).collect());
            }
            Op::ScaleBy { x, s } => {
                let (tx, ts) = (val(*x), val(*s));
                let (xs, ss) = (tx.shape(), ts.shape());
                let mut dx = vec![0.0; xs.len()];
                let mut ds = vec![0.0; ss.len()];
                for n in 0..xs.n {
                    for c in 0..xs.c {
                        for y in 0..xs.h {
                            for x_ in 0..xs.w {
                                let i = xs.index(n, c, y, x_);
                                let j = kernels::bcast_index(xs, ss, n, c, y, x_);
                                dx[i] = go[i] * ts.data()[j];
                                ds[j] += go[i] * tx.data()[i];
                            }
                        }
                    }
                }
                acc(*x, dx);
                acc(*s, ds);
            }
            Op::Concat { a, b } => {
                let (da, db) = kernels::split_channels(go, val(*a).shape(), val(*b).shape());
                acc(*a, da);
                acc(*b, db);
            }
            Op::SliceChannels { x, start } => {
                let xs = val(*x).shape();
                let os = node.value.shape();
                let plane = xs.plane();
                let mut dx = vec![0.0; xs.len()];
                for n in 0..xs.n {
                    let src = n * os.c * plane;
                    let dst = (n * xs.c + start) * plane;
                    dx[dst..dst + os.c * plane].copy_from_slice(&go[src..src + os.c * plane]);
                }
                acc(*x, dx);
            }
            Op::SpatialNorm { x, gamma, beta, cache } => {
                let xs = val(*x).shape();
                let (dx, dg, db) = kernels::spatial_norm_backward(xs, val(*gamma), cache, go);
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::Sum { x } => acc(*x, vec![go[0]; val(*x).len()]),
            Op::Dot { x, weights } => acc(*x, weights.data().iter().map(|w| w * go[0]).collect()),
            Op::CrossEntropy { probs, target } => {
                let ps = val(*probs).shape();
                let npix = (ps.n * ps.plane()) as f64;
                let dp = val(*probs)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &g)| {
                        if g != 0.0 && p > LOG_CLAMP {
                            -g / p / npix * go[0]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(*probs, dp);
            }
            Op::Custom { inputs, vjp, .. } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                for (v, d) in inputs.iter().zip(vjp(&ins, &node.value, go)) {
                    acc(*v, d);
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(3.0));
        let c = g.constant(Tensor::scalar(2.0));
        let p = g.mul(a, c).unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.wrt(a).item().unwrap(), 2.0);
        assert!(grads.get(c).is_none());
        assert!(!g.requires_grad(c));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(1.5));
        let b = g.add(a, a).unwrap();
        let c = g.mul(b, a).unwrap();
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.wrt(a).item().unwrap(), 6.0);
    }

    #[test]
    fn op_names_recorded() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::ones(Shape::new(1, 2, 2, 2)));
        let r = g.relu(a);
        let s = g.sum(r);
        assert_eq!(g.op_name(a), "leaf");
        assert_eq!(g.op_name(r), "relu");
        assert_eq!(g.op_name(s), "sum");
        assert_eq!(g.len(), 3);
    }

    #[test]
    fn custom_vjp_is_applied() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(&[1.0, 2.0]));
        let v = g.value(a).map(|x| 3.0 * x);
        let y = g.custom("triple", &[a], v, Box::new(|_, _, go| vec![go.iter().map(|g| 3.0 * g).collect()]));
        let s = g.sum(y);
        assert_eq!(g.op_name(y), "triple");
        assert_eq!(g.backward(s).unwrap().wrt(a).data(), &[3.0, 3.0]);
    }

    #[test]
    fn activation_dispatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(&[-1.0, 0.0]));
        let r = g.activation(a, Activation::Relu);
        let s = g.activation(a, Activation::Sigmoid);
        assert_eq!(g.value(r).data(), &[0.0, 0.0]);
        assert_eq!(g.value(s).data()[1], 0.5);
    }
}
