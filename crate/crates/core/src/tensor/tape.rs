//! The recording tape: forward ops append nodes, `backward` replays them in
//! reverse to accumulate adjoints.
//!
//! A tape lives for one computation. Nodes are append-only, so an operand's
//! index is always smaller than its consumer's, and the reverse sweep is a
//! simple right-to-left scan. Adjoint work is skipped for subgraphs that no
//! `requires_grad` leaf feeds.

use super::hsv;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub struct Value(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Conv2d { x: usize, k: usize, stride: usize },
    Relu { x: usize },
    Tanh { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    MulScalar { x: usize, s: f64 },
    AddScalar { x: usize },
    Sign,
    Clamp { x: usize, lo: f64, hi: f64 },
    Square { x: usize },
    Sqrt { x: usize },
    Sum { x: usize },
    Index { x: usize, i: usize },
    Reshape { x: usize },
    GlobalAvgPool { x: usize },
    SoftmaxCrossEntropy { logits: usize, class: usize },
    LogitMargin { logits: usize, class: usize, k: f64 },
    BilinearResize { x: usize, in_side: usize, out_side: usize },
    PadZero { x: usize, left: usize, top: usize },
    FlipH { x: usize },
    AdjustContrast { x: usize, beta: f64 },
    AdjustSatHue { x: usize, alpha: f64, theta: f64 },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward sweep.
///
/// Leaves that do not lie on a path to the output get a zero tensor.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Value) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => Tensor::from_raw(self.shapes[v.0].clone(), g.clone()),
            None => Tensor::zeros(self.shapes[v.0].clone()),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Places a tensor on the tape as a leaf, honoring its `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Value {
        self.push(
            t.data().to_vec(),
            t.shape().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Places a constant leaf regardless of the tensor's grad flag.
    pub fn constant(&mut self, t: &Tensor) -> Value {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf, false)
    }

    pub fn shape(&self, v: Value) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Value) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// Copies a node's current value out as a plain tensor.
    pub fn tensor(&self, v: Value) -> Tensor {
        Tensor::from_raw(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, needs_grad: bool) -> Value {
        self.nodes.push(Node {
            data,
            shape,
            op,
            needs_grad,
        });
        Value(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    // ---- shape-checked forward ops ----

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Dimension(format!(
                "matmul expects rank-2 operands, got {sa:?} and {sb:?}"
            )));
        }
        let (m, k, k2, n) = (sa[0], sa[1], sb[0], sb[1]);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions disagree: {sa:?} x {sb:?}"
            )));
        }
        let (ad, bd) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(out, vec![m, n], Op::Matmul { a: a.0, b: b.0 }, needs))
    }

    /// Valid cross-correlation of `[H,W,Cin]` with kernels `[kh,kw,Cin,Cout]`.
    pub fn conv2d(&mut self, x: Value, kernels: Value, stride: usize) -> Result<Value> {
        let (sx, sk) = (&self.nodes[x.0].shape, &self.nodes[kernels.0].shape);
        if sx.len() != 3 || sk.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d expects image [H,W,Cin] and kernels [kh,kw,Cin,Cout], got {sx:?} and {sk:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::Contract("conv2d stride must be positive".into()));
        }
        let (h, w, cin) = (sx[0], sx[1], sx[2]);
        let (kh, kw, kcin, cout) = (sk[0], sk[1], sk[2], sk[3]);
        if kcin != cin {
            return Err(Error::Dimension(format!(
                "conv2d channel mismatch: image has {cin}, kernels expect {kcin}"
            )));
        }
        if kh > h || kw > w {
            return Err(Error::Dimension(format!(
                "conv2d kernel {kh}x{kw} larger than input {h}x{w}"
            )));
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let xd = &self.nodes[x.0].data;
        let kd = &self.nodes[kernels.0].data;
        let mut out = vec![0.0; oh * ow * cout];
        for oy in 0..oh {
            for ox in 0..ow {
                let obase = (oy * ow + ox) * cout;
                for ky in 0..kh {
                    let iy = oy * stride + ky;
                    for kx in 0..kw {
                        let ix = ox * stride + kx;
                        let xbase = (iy * w + ix) * cin;
                        let kbase = (ky * kw + kx) * cin;
                        for ci in 0..cin {
                            let xv = xd[xbase + ci];
                            let krow = &kd[(kbase + ci) * cout..(kbase + ci + 1) * cout];
                            let orow = &mut out[obase..obase + cout];
                            for co in 0..cout {
                                orow[co] += xv * krow[co];
                            }
                        }
                    }
                }
            }
        }
        let needs = self.needs(x.0) || self.needs(kernels.0);
        Ok(self.push(
            out,
            vec![oh, ow, cout],
            Op::Conv2d {
                x: x.0,
                k: kernels.0,
                stride,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Value) -> Value {
        let data = self.nodes[x.0].data.iter().map(|&v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(x.0);
        self.push(data, shape, Op::Relu { x: x.0 }, needs)
    }

    pub fn tanh(&mut self, x: Value) -> Value {
        let data = self.nodes[x.0].data.iter().map(|&v| v.tanh()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(x.0);
        self.push(data, shape, Op::Tanh { x: x.0 }, needs)
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary(a, b, |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.binary(a, b, |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    fn binary(
        &mut self,
        a: Value,
        b: Value,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Value> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dimension(format!(
                "elementwise op on {:?} vs {:?}",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(data, shape, op, needs))
    }

    pub fn mul_scalar(&mut self, x: Value, s: f64) -> Value {
        let data = self.nodes[x.0].data.iter().map(|&v| v * s).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(x.0);
        self.push(data, shape, Op::MulScalar { x: x.0, s }, needs)
    }

    pub fn add_scalar(&mut self, x: Value, s: f64) -> Value {
        let data = self.nodes[x.0].data.iter().map(|&v| v + s).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(x.0);
        self.push(data, shape, Op::AddScalar { x: x.0 }, needs)
    }

    /// Pointwise sign with `sign(0) = 0`; gradient is zero everywhere.
    pub fn sign(&mut self, x: Value) -> Value {
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push(data, shape, Op::Sign, false)
    }

    /// Clamp with identity gradient inside `[lo, hi]` and zero outside.
    pub fn clamp(&mut self, x: Value, lo: f64, hi: f64) -> Result<Value> {
        if lo > hi {
            return Err(Error::Contract(format!("clamp bounds reversed: [{lo}, {hi}]")));
        }
        let data = self.nodes[x.0]
            .data
            .iter()
            .map(|&v| v.clamp(lo, hi))
            .collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(x.0);
        Ok(self.push(data, shape, Op::Clamp { x: x.0, lo, hi }, needs))
    }

    pub fn square(&mut self, x: Value) -> Value {
        let data = self.nodes[x.0].data.iter().map(|&v| v * v).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(x.0);
        self.push(data, shape, Op::Square { x: x.0 }, needs)
    }

    /// Pointwise square root; rejects negative inputs. The gradient at exactly
    /// zero is unbounded and comes out infinite.
    pub fn sqrt(&mut self, x: Value) -> Result<Value> {
        if self.nodes[x.0].data.iter().any(|&v| v < 0.0) {
            return Err(Error::Numeric("sqrt of negative element".into()));
        }
        let data = self.nodes[x.0].data.iter().map(|&v| v.sqrt()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let needs = self.needs(x.0);
        Ok(self.push(data, shape, Op::Sqrt { x: x.0 }, needs))
    }

    /// Sum of all elements into a scalar.
    pub fn sum(&mut self, x: Value) -> Value {
        let s: f64 = self.nodes[x.0].data.iter().sum();
        let needs = self.needs(x.0);
        self.push(vec![s], vec![1], Op::Sum { x: x.0 }, needs)
    }

    /// Picks one element of a rank-1 tensor as a scalar.
    pub fn index(&mut self, x: Value, i: usize) -> Result<Value> {
        let shape = &self.nodes[x.0].shape;
        if shape.len() != 1 {
            return Err(Error::Dimension(format!("index expects rank-1, got {shape:?}")));
        }
        if i >= shape[0] {
            return Err(Error::Index(format!("index {i} out of range {}", shape[0])));
        }
        let v = self.nodes[x.0].data[i];
        let needs = self.needs(x.0);
        Ok(self.push(vec![v], vec![1], Op::Index { x: x.0, i }, needs))
    }

    pub fn reshape(&mut self, x: Value, shape: Vec<usize>) -> Result<Value> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].data.len() {
            return Err(Error::Dimension(format!(
                "reshape of {:?} to {:?}",
                self.nodes[x.0].shape, shape
            )));
        }
        let data = self.nodes[x.0].data.clone();
        let needs = self.needs(x.0);
        Ok(self.push(data, shape, Op::Reshape { x: x.0 }, needs))
    }

    /// Spatial mean of `[H,W,C]` into `[C]`.
    pub fn global_avg_pool(&mut self, x: Value) -> Result<Value> {
        let shape = &self.nodes[x.0].shape;
        if shape.len() != 3 {
            return Err(Error::Dimension(format!(
                "global_avg_pool expects [H,W,C], got {shape:?}"
            )));
        }
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; c];
        for p in 0..h * w {
            for ch in 0..c {
                out[ch] += xd[p * c + ch];
            }
        }
        let inv = 1.0 / (h * w) as f64;
        for v in &mut out {
            *v *= inv;
        }
        let needs = self.needs(x.0);
        Ok(self.push(out, vec![c], Op::GlobalAvgPool { x: x.0 }, needs))
    }

    /// Numerically stable `-log softmax(logits)[class]`.
    pub fn softmax_cross_entropy(&mut self, logits: Value, class: usize) -> Result<Value> {
        let shape = &self.nodes[logits.0].shape;
        if shape.len() != 1 {
            return Err(Error::Dimension(format!(
                "softmax_cross_entropy expects rank-1 logits, got {shape:?}"
            )));
        }
        let c = shape[0];
        if class >= c {
            return Err(Error::Index(format!("class {class} out of range {c}")));
        }
        let z = &self.nodes[logits.0].data;
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln() + m;
        let loss = lse - z[class];
        let needs = self.needs(logits.0);
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                class,
            },
            needs,
        ))
    }

    /// Margin of the true class over its strongest competitor, floored at
    /// `-k`: `max(z[class] - max_{i != class} z[i], -k)`.
    pub fn logit_margin(&mut self, logits: Value, class: usize, k: f64) -> Result<Value> {
        let shape = &self.nodes[logits.0].shape;
        if shape.len() != 1 || shape[0] < 2 {
            return Err(Error::Dimension(format!(
                "logit_margin expects rank-1 logits with >= 2 classes, got {shape:?}"
            )));
        }
        if class >= shape[0] {
            return Err(Error::Index(format!(
                "class {class} out of range {}",
                shape[0]
            )));
        }
        let z = &self.nodes[logits.0].data;
        let mut other = f64::NEG_INFINITY;
        for (i, &v) in z.iter().enumerate() {
            if i != class && v > other {
                other = v;
            }
        }
        let margin = (z[class] - other).max(-k);
        let needs = self.needs(logits.0);
        Ok(self.push(
            vec![margin],
            vec![1],
            Op::LogitMargin {
                logits: logits.0,
                class,
                k,
            },
            needs,
        ))
    }

    /// Bilinear resize of a square `[n,n,C]` image to `[out,out,C]` using
    /// half-pixel centers with edge clamping. A linear operator in the image,
    /// so the backward pass is its exact transpose.
    pub fn bilinear_resize(&mut self, x: Value, out_side: usize) -> Result<Value> {
        let shape = &self.nodes[x.0].shape;
        if shape.len() != 3 || shape[0] != shape[1] {
            return Err(Error::Dimension(format!(
                "bilinear_resize expects square [n,n,C], got {shape:?}"
            )));
        }
        if out_side == 0 {
            return Err(Error::Contract("resize target must be positive".into()));
        }
        let (n, c) = (shape[0], shape[2]);
        let taps = resize_taps(n, out_side);
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; out_side * out_side * c];
        for oy in 0..out_side {
            let (y0, y1, fy) = taps[oy];
            for ox in 0..out_side {
                let (x0, x1, fx) = taps[ox];
                let w00 = (1.0 - fy) * (1.0 - fx);
                let w01 = (1.0 - fy) * fx;
                let w10 = fy * (1.0 - fx);
                let w11 = fy * fx;
                let obase = (oy * out_side + ox) * c;
                let b00 = (y0 * n + x0) * c;
                let b01 = (y0 * n + x1) * c;
                let b10 = (y1 * n + x0) * c;
                let b11 = (y1 * n + x1) * c;
                for ch in 0..c {
                    out[obase + ch] = w00 * xd[b00 + ch]
                        + w01 * xd[b01 + ch]
                        + w10 * xd[b10 + ch]
                        + w11 * xd[b11 + ch];
                }
            }
        }
        let needs = self.needs(x.0);
        Ok(self.push(
            out,
            vec![out_side, out_side, c],
            Op::BilinearResize {
                x: x.0,
                in_side: n,
                out_side,
            },
            needs,
        ))
    }

    /// Zero-pads `[n,n,C]` onto a `[pad_to,pad_to,C]` canvas with the image's
    /// top-left corner at `(top, left)`.
    pub fn pad_zero(&mut self, x: Value, pad_to: usize, left: usize, top: usize) -> Result<Value> {
        let shape = &self.nodes[x.0].shape;
        if shape.len() != 3 || shape[0] != shape[1] {
            return Err(Error::Dimension(format!(
                "pad_zero expects square [n,n,C], got {shape:?}"
            )));
        }
        let (n, c) = (shape[0], shape[2]);
        if n + left > pad_to || n + top > pad_to {
            return Err(Error::Contract(format!(
                "pad offsets ({left},{top}) overflow canvas: {n} -> {pad_to}"
            )));
        }
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; pad_to * pad_to * c];
        for y in 0..n {
            let src = y * n * c;
            let dst = ((y + top) * pad_to + left) * c;
            out[dst..dst + n * c].copy_from_slice(&xd[src..src + n * c]);
        }
        let needs = self.needs(x.0);
        Ok(self.push(
            out,
            vec![pad_to, pad_to, c],
            Op::PadZero {
                x: x.0,
                left,
                top,
            },
            needs,
        ))
    }

    /// Horizontal (left-right) mirror of `[H,W,C]`.
    pub fn flip_h(&mut self, x: Value) -> Result<Value> {
        let shape = &self.nodes[x.0].shape;
        if shape.len() != 3 {
            return Err(Error::Dimension(format!("flip_h expects [H,W,C], got {shape:?}")));
        }
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; xd.len()];
        for y in 0..h {
            for xcol in 0..w {
                let src = (y * w + (w - 1 - xcol)) * c;
                let dst = (y * w + xcol) * c;
                out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
            }
        }
        let needs = self.needs(x.0);
        Ok(self.push(out, shape.clone(), Op::FlipH { x: x.0 }, needs))
    }

    /// Mean-anchored contrast: per channel, `m + beta * (x - m)` with `m` the
    /// channel's spatial mean.
    pub fn adjust_contrast(&mut self, x: Value, beta: f64) -> Result<Value> {
        let shape = &self.nodes[x.0].shape;
        if shape.len() != 3 {
            return Err(Error::Dimension(format!(
                "adjust_contrast expects [H,W,C], got {shape:?}"
            )));
        }
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        let xd = &self.nodes[x.0].data;
        let mut means = vec![0.0; c];
        for p in 0..h * w {
            for ch in 0..c {
                means[ch] += xd[p * c + ch];
            }
        }
        let inv = 1.0 / (h * w) as f64;
        for m in &mut means {
            *m *= inv;
        }
        let mut out = vec![0.0; xd.len()];
        for p in 0..h * w {
            for ch in 0..c {
                let m = means[ch];
                out[p * c + ch] = m + beta * (xd[p * c + ch] - m);
            }
        }
        let needs = self.needs(x.0);
        Ok(self.push(out, shape.clone(), Op::AdjustContrast { x: x.0, beta }, needs))
    }

    /// Saturation scale and hue shift through an HSV round trip; requires
    /// three channels.
    pub fn adjust_sat_hue(&mut self, x: Value, alpha: f64, theta: f64) -> Result<Value> {
        let shape = &self.nodes[x.0].shape;
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::Contract(format!(
                "saturation/hue adjustment requires 3 channels, got shape {shape:?}"
            )));
        }
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; xd.len()];
        for p in 0..xd.len() / 3 {
            let rgb = [xd[3 * p], xd[3 * p + 1], xd[3 * p + 2]];
            let (adj, _) = hsv::adjust_pixel(rgb, alpha, theta);
            out[3 * p..3 * p + 3].copy_from_slice(&adj);
        }
        let needs = self.needs(x.0);
        Ok(self.push(
            out,
            shape.clone(),
            Op::AdjustSatHue {
                x: x.0,
                alpha,
                theta,
            },
            needs,
        ))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar output. Every `requires_grad` leaf receives
    /// its total adjoint; repeated calls on the same tape are independent and
    /// bit-identical.
    pub fn backward(&self, output: Value) -> Result<Gradients> {
        let out_node = &self.nodes[output.0];
        if out_node.data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, got shape {:?}",
                out_node.shape
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let g_out = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(i, &g_out, &mut grads);
            grads[i] = Some(g_out);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.shape.clone()).collect(),
        })
    }

    fn add_into(&self, grads: &mut Vec<Option<Vec<f64>>>, idx: usize, contribution: &[f64]) {
        if !self.nodes[idx].needs_grad {
            return;
        }
        let slot = grads[idx].get_or_insert_with(|| vec![0.0; self.nodes[idx].data.len()]);
        for (s, c) in slot.iter_mut().zip(contribution) {
            *s += c;
        }
    }

    #[allow(clippy::too_many_lines)]
    fn accumulate(&self, i: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        if !self.nodes[i].needs_grad {
            return;
        }
        match &self.nodes[i].op {
            Op::Leaf | Op::Sign => {}
            Op::Matmul { a, b } => {
                let (m, k) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                let n = self.nodes[*b].shape[1];
                if self.needs(*a) {
                    let bd = &self.nodes[*b].data;
                    let mut ga = vec![0.0; m * k];
                    for i0 in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            let grow = &g[i0 * n..(i0 + 1) * n];
                            let brow = &bd[p * n..(p + 1) * n];
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            ga[i0 * k + p] = s;
                        }
                    }
                    self.add_into(grads, *a, &ga);
                }
                if self.needs(*b) {
                    let ad = &self.nodes[*a].data;
                    let mut gb = vec![0.0; k * n];
                    for i0 in 0..m {
                        for p in 0..k {
                            let aip = ad[i0 * k + p];
                            let grow = &g[i0 * n..(i0 + 1) * n];
                            let brow = &mut gb[p * n..(p + 1) * n];
                            for j in 0..n {
                                brow[j] += aip * grow[j];
                            }
                        }
                    }
                    self.add_into(grads, *b, &gb);
                }
            }
            Op::Conv2d { x, k, stride } => {
                let sx = &self.nodes[*x].shape;
                let sk = &self.nodes[*k].shape;
                let (h, w, cin) = (sx[0], sx[1], sx[2]);
                let (kh, kw, _, cout) = (sk[0], sk[1], sk[2], sk[3]);
                let oh = (h - kh) / stride + 1;
                let ow = (w - kw) / stride + 1;
                if self.needs(*x) {
                    let kd = &self.nodes[*k].data;
                    let mut gx = vec![0.0; h * w * cin];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gbase = (oy * ow + ox) * cout;
                            let grow = &g[gbase..gbase + cout];
                            for ky in 0..kh {
                                let iy = oy * stride + ky;
                                for kx in 0..kw {
                                    let ix = ox * stride + kx;
                                    let xbase = (iy * w + ix) * cin;
                                    let kbase = (ky * kw + kx) * cin;
                                    for ci in 0..cin {
                                        let krow =
                                            &kd[(kbase + ci) * cout..(kbase + ci + 1) * cout];
                                        let mut s = 0.0;
                                        for co in 0..cout {
                                            s += grow[co] * krow[co];
                                        }
                                        gx[xbase + ci] += s;
                                    }
                                }
                            }
                        }
                    }
                    self.add_into(grads, *x, &gx);
                }
                if self.needs(*k) {
                    let xd = &self.nodes[*x].data;
                    let mut gk = vec![0.0; kh * kw * cin * cout];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gbase = (oy * ow + ox) * cout;
                            let grow = &g[gbase..gbase + cout];
                            for ky in 0..kh {
                                let iy = oy * stride + ky;
                                for kx in 0..kw {
                                    let ix = ox * stride + kx;
                                    let xbase = (iy * w + ix) * cin;
                                    let kbase = (ky * kw + kx) * cin;
                                    for ci in 0..cin {
                                        let xv = xd[xbase + ci];
                                        let krow =
                                            &mut gk[(kbase + ci) * cout..(kbase + ci + 1) * cout];
                                        for co in 0..cout {
                                            krow[co] += xv * grow[co];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.add_into(grads, *k, &gk);
                }
            }
            Op::Relu { x } => {
                let xd = &self.nodes[*x].data;
                let gx: Vec<f64> = xd
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                self.add_into(grads, *x, &gx);
            }
            Op::Tanh { x } => {
                let yd = &self.nodes[i].data;
                let gx: Vec<f64> = yd.iter().zip(g).map(|(&y, &gv)| gv * (1.0 - y * y)).collect();
                self.add_into(grads, *x, &gx);
            }
            Op::Add { a, b } => {
                self.add_into(grads, *a, g);
                self.add_into(grads, *b, g);
            }
            Op::Sub { a, b } => {
                self.add_into(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|&v| -v).collect();
                self.add_into(grads, *b, &neg);
            }
            Op::MulScalar { x, s } => {
                let gx: Vec<f64> = g.iter().map(|&v| v * s).collect();
                self.add_into(grads, *x, &gx);
            }
            Op::AddScalar { x } | Op::Reshape { x } => {
                self.add_into(grads, *x, g);
            }
            Op::Clamp { x, lo, hi } => {
                let xd = &self.nodes[*x].data;
                let gx: Vec<f64> = xd
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v >= *lo && v <= *hi { gv } else { 0.0 })
                    .collect();
                self.add_into(grads, *x, &gx);
            }
            Op::Square { x } => {
                let xd = &self.nodes[*x].data;
                let gx: Vec<f64> = xd.iter().zip(g).map(|(&v, &gv)| 2.0 * v * gv).collect();
                self.add_into(grads, *x, &gx);
            }
            Op::Sqrt { x } => {
                let yd = &self.nodes[i].data;
                let gx: Vec<f64> = yd.iter().zip(g).map(|(&y, &gv)| gv / (2.0 * y)).collect();
                self.add_into(grads, *x, &gx);
            }
            Op::Sum { x } => {
                let gx = vec![g[0]; self.nodes[*x].data.len()];
                self.add_into(grads, *x, &gx);
            }
            Op::Index { x, i: idx } => {
                let mut gx = vec![0.0; self.nodes[*x].data.len()];
                gx[*idx] = g[0];
                self.add_into(grads, *x, &gx);
            }
            Op::GlobalAvgPool { x } => {
                let sx = &self.nodes[*x].shape;
                let (h, w, c) = (sx[0], sx[1], sx[2]);
                let inv = 1.0 / (h * w) as f64;
                let mut gx = vec![0.0; h * w * c];
                for p in 0..h * w {
                    for ch in 0..c {
                        gx[p * c + ch] = g[ch] * inv;
                    }
                }
                self.add_into(grads, *x, &gx);
            }
            Op::SoftmaxCrossEntropy { logits, class } => {
                let z = &self.nodes[*logits].data;
                let p = super::softmax(z);
                let gx: Vec<f64> = p
                    .iter()
                    .enumerate()
                    .map(|(j, &pj)| g[0] * (pj - if j == *class { 1.0 } else { 0.0 }))
                    .collect();
                self.add_into(grads, *logits, &gx);
            }
            Op::LogitMargin { logits, class, k } => {
                let z = &self.nodes[*logits].data;
                let mut other = f64::NEG_INFINITY;
                let mut other_idx = 0;
                for (j, &v) in z.iter().enumerate() {
                    if j != *class && v > other {
                        other = v;
                        other_idx = j;
                    }
                }
                let mut gx = vec![0.0; z.len()];
                if z[*class] - other > -k {
                    gx[*class] = g[0];
                    gx[other_idx] = -g[0];
                }
                self.add_into(grads, *logits, &gx);
            }
            Op::BilinearResize {
                x,
                in_side,
                out_side,
            } => {
                let c = self.nodes[*x].shape[2];
                let taps = resize_taps(*in_side, *out_side);
                let mut gx = vec![0.0; in_side * in_side * c];
                for oy in 0..*out_side {
                    let (y0, y1, fy) = taps[oy];
                    for ox in 0..*out_side {
                        let (x0, x1, fx) = taps[ox];
                        let w00 = (1.0 - fy) * (1.0 - fx);
                        let w01 = (1.0 - fy) * fx;
                        let w10 = fy * (1.0 - fx);
                        let w11 = fy * fx;
                        let gbase = (oy * out_side + ox) * c;
                        let b00 = (y0 * in_side + x0) * c;
                        let b01 = (y0 * in_side + x1) * c;
                        let b10 = (y1 * in_side + x0) * c;
                        let b11 = (y1 * in_side + x1) * c;
                        for ch in 0..c {
                            let gv = g[gbase + ch];
                            gx[b00 + ch] += w00 * gv;
                            gx[b01 + ch] += w01 * gv;
                            gx[b10 + ch] += w10 * gv;
                            gx[b11 + ch] += w11 * gv;
                        }
                    }
                }
                self.add_into(grads, *x, &gx);
            }
            Op::PadZero { x, left, top } => {
                let sx = &self.nodes[*x].shape;
                let (n, c) = (sx[0], sx[2]);
                let pad_to = self.nodes[i].shape[0];
                let mut gx = vec![0.0; n * n * c];
                for y in 0..n {
                    let src = ((y + top) * pad_to + left) * c;
                    let dst = y * n * c;
                    gx[dst..dst + n * c].copy_from_slice(&g[src..src + n * c]);
                }
                self.add_into(grads, *x, &gx);
            }
            Op::FlipH { x } => {
                let sx = &self.nodes[*x].shape;
                let (h, w, c) = (sx[0], sx[1], sx[2]);
                let mut gx = vec![0.0; h * w * c];
                for y in 0..h {
                    for xcol in 0..w {
                        let src = (y * w + xcol) * c;
                        let dst = (y * w + (w - 1 - xcol)) * c;
                        gx[dst..dst + c].copy_from_slice(&g[src..src + c]);
                    }
                }
                self.add_into(grads, *x, &gx);
            }
            Op::AdjustContrast { x, beta } => {
                let sx = &self.nodes[*x].shape;
                let (h, w, c) = (sx[0], sx[1], sx[2]);
                let npix = (h * w) as f64;
                let mut channel_sums = vec![0.0; c];
                for p in 0..h * w {
                    for ch in 0..c {
                        channel_sums[ch] += g[p * c + ch];
                    }
                }
                let mut gx = vec![0.0; h * w * c];
                for p in 0..h * w {
                    for ch in 0..c {
                        gx[p * c + ch] =
                            beta * g[p * c + ch] + (1.0 - beta) * channel_sums[ch] / npix;
                    }
                }
                self.add_into(grads, *x, &gx);
            }
            Op::AdjustSatHue { x, alpha, theta } => {
                let xd = &self.nodes[*x].data;
                let mut gx = vec![0.0; xd.len()];
                for p in 0..xd.len() / 3 {
                    let rgb = [xd[3 * p], xd[3 * p + 1], xd[3 * p + 2]];
                    let (_, jac) = hsv::adjust_pixel(rgb, *alpha, *theta);
                    for inp in 0..3 {
                        let mut s = 0.0;
                        for out in 0..3 {
                            s += g[3 * p + out] * jac[out][inp];
                        }
                        gx[3 * p + inp] = s;
                    }
                }
                self.add_into(grads, *x, &gx);
            }
        }
    }
}

/// Source taps for one output coordinate: `(lo, hi, frac)` with the source
/// position `(dst + 0.5) * n / out - 0.5` clamped to the image.
fn resize_taps(n: usize, out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n as f64 / out as f64;
    (0..out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let eye = tape.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let a = tape.leaf(&t(&[2, 2], &[3.0, -1.0, 2.0, 5.0]));
        let prod = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.data(prod), t(&[2, 2], &[3.0, -1.0, 2.0, 5.0]).data());

        let m = tape.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let v = tape.leaf(&t(&[2, 1], &[1.0, 1.0]));
        let mv = tape.matmul(m, v).unwrap();
        assert_eq!(tape.data(mv), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2, 3], &[0.0; 6]));
        let b = tape.leaf(&t(&[2, 2], &[0.0; 4]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv_identity_kernel_and_hand_case() {
        let mut tape = Tape::new();
        let img = tape.leaf(&t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]));
        let k1 = tape.leaf(&t(&[1, 1, 1, 1], &[1.0]));
        let same = tape.conv2d(img, k1, 1).unwrap();
        assert_eq!(tape.data(same), &[1.0, 2.0, 3.0, 4.0]);

        let ksum = tape.leaf(&t(&[2, 2, 1, 1], &[1.0, 1.0, 1.0, 1.0]));
        let summed = tape.conv2d(img, ksum, 1).unwrap();
        assert_eq!(tape.data(summed), &[10.0]);
        assert_eq!(tape.shape(summed), &[1, 1, 1]);
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let mut tape = Tape::new();
        let img = tape.leaf(&t(&[2, 2, 1], &[0.0; 4]));
        let k = tape.leaf(&t(&[3, 3, 1, 1], &[0.0; 9]));
        assert!(matches!(tape.conv2d(img, k, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn elementwise_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.data(r), &[0.0, 0.0, 2.0]);

        let s = tape.leaf(&t(&[3], &[-3.2, 0.0, 0.1]));
        let sg = tape.sign(s);
        assert_eq!(tape.data(sg), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_uniform_and_stability() {
        let mut tape = Tape::new();
        let z = tape.leaf(&t(&[4], &[0.0; 4]));
        let loss = tape.softmax_cross_entropy(z, 2).unwrap();
        assert!((tape.data(loss)[0] - 4.0_f64.ln()).abs() < 1e-12);

        let z = tape.leaf(&t(&[2], &[1000.0, 0.0]));
        let loss = tape.softmax_cross_entropy(z, 0).unwrap();
        assert!(tape.data(loss)[0].abs() < 1e-12);

        let z = tape.leaf(&t(&[2], &[0.0, 0.0]));
        assert!(matches!(
            tape.softmax_cross_entropy(z, 2),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn backward_of_sum_is_ones_and_off_path_leaf_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[1.0, 2.0, 3.0]).with_grad());
        let unused = tape.leaf(&t(&[2], &[5.0, 6.0]).with_grad());
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(grads.get(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]).with_grad());
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2, 2], &[0.3, -0.7, 1.2, 0.05]).with_grad());
        let w = tape.leaf(&t(&[2, 2], &[0.5, 1.0, -0.25, 2.0]));
        let prod = tape.matmul(w, x).unwrap();
        let act = tape.relu(prod);
        let s = tape.sum(act);
        let g1 = tape.backward(s).unwrap().get(x);
        let g2 = tape.backward(s).unwrap().get(x);
        assert_eq!(g1.data(), g2.data());
    }

    #[test]
    fn resize_is_identity_at_same_side() {
        let mut tape = Tape::new();
        let img = t(&[3, 3, 2], &(0..18).map(|v| v as f64 / 18.0).collect::<Vec<_>>());
        let x = tape.leaf(&img);
        let y = tape.bilinear_resize(x, 3).unwrap();
        assert_eq!(tape.data(y), img.data());
    }

    #[test]
    fn resize_constant_image_stays_constant() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 1, 1], &[0.6]));
        let y = tape.bilinear_resize(x, 2).unwrap();
        assert_eq!(tape.data(y), &[0.6, 0.6, 0.6, 0.6]);
    }

    #[test]
    fn pad_places_image_and_preserves_energy() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[1, 1, 1], &[0.5]));
        let up = tape.bilinear_resize(x, 2).unwrap();
        let padded = tape.pad_zero(up, 3, 1, 0).unwrap();
        assert_eq!(
            tape.data(padded),
            &[0.0, 0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0]
        );
        let in_sum: f64 = tape.data(up).iter().sum();
        let out_sum: f64 = tape.data(padded).iter().sum();
        assert_eq!(in_sum, out_sum);
    }

    #[test]
    fn flip_is_self_inverse() {
        let mut tape = Tape::new();
        let img = t(&[2, 3, 1], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = tape.leaf(&img);
        let f = tape.flip_h(x).unwrap();
        assert_eq!(tape.data(f), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        let ff = tape.flip_h(f).unwrap();
        assert_eq!(tape.data(ff), img.data());
    }

    #[test]
    fn logit_margin_values() {
        let mut tape = Tape::new();
        let z = tape.leaf(&t(&[3], &[2.0, 5.0, 1.0]));
        let m = tape.logit_margin(z, 0, 0.0).unwrap();
        assert_eq!(tape.data(m), &[0.0]);
        let m2 = tape.logit_margin(z, 1, 0.0).unwrap();
        assert_eq!(tape.data(m2), &[3.0]);
        let clamped = tape.logit_margin(z, 0, 1.5).unwrap();
        assert_eq!(tape.data(clamped), &[-1.5]);
    }
}
