use super::conv::{self, ConvGeom};
use super::upsample::UpsamplePlan;
use super::{dims5, Element, Tensor};
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
    Conv3d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Upsample {
        input: Var,
        spatial: [usize; 3],
    },
    Relu(Var),
    Sigmoid(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Square(Var),
    Sum(Var),
    L1Loss(Var, Var),
    L2Loss(Var, Var),
    Kl {
        mu: Var,
        logvar: Var,
    },
    Reparam {
        mu: Var,
        logvar: Var,
        eps: Var,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv3d {
                input,
                weight,
                bias,
                ..
            }
            | Op::Linear {
                input,
                weight,
                bias,
            } => vec![input, weight, bias],
            Op::Upsample { input, .. } => vec![input],
            Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Reshape(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Sum(a) => vec![a],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::L1Loss(a, b) | Op::L2Loss(a, b) => {
                vec![a, b]
            }
            Op::Kl { mu, logvar } => vec![mu, logvar],
            Op::Reparam { mu, logvar, eps } => vec![mu, logvar, eps],
        }
    }
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation so that [`Tape::backward`] can replay it in reverse.
///
/// Nodes are appended in evaluation order; a node's inputs always carry lower
/// indices, so the reverse sweep is a valid reverse topological order.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    /// Branch pattern imposed on ReLU and L1 nodes, and how much of it has
    /// been consumed.
    frozen: Option<(Vec<bool>, usize)>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn same_shape<T: Element>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn batch_len<T: Element>(t: &Tensor<T>) -> usize {
    t.shape()[0]
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            frozen: None,
        }
    }

    /// A forward-only tape whose ReLU and L1 nodes follow `pattern` (as
    /// reported by [`Tape::branches`]) instead of the signs of their inputs.
    ///
    /// The graph then evaluates the smooth piece selected by `pattern`, which
    /// agrees with the true graph wherever the signs match.
    pub fn with_branches(pattern: Vec<bool>) -> Self {
        Self {
            nodes: Vec::new(),
            frozen: Some((pattern, 0)),
        }
    }

    /// The next `n` imposed branch bits, if this tape is frozen.
    fn take_branches(&mut self, n: usize) -> Result<Option<Vec<bool>>> {
        let Some((pattern, used)) = &mut self.frozen else {
            return Ok(None);
        };
        let bits = pattern.get(*used..*used + n).ok_or_else(|| {
            Error::Contract(format!(
                "branch pattern of {} bits exhausted at {}",
                pattern.len(),
                *used + n
            ))
        })?;
        *used += n;
        Ok(Some(bits.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input; its gradient is reported iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op, name: &str) -> Result<Var> {
        value.ensure_finite(name)?;
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn make(&self, shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
        Tensor {
            shape,
            data,
            requires_grad: false,
        }
    }

    fn unary(&mut self, a: Var, op: Op, name: &str, f: impl Fn(T) -> T) -> Result<Var> {
        let t = self.value(a).map(f);
        self.push(t, op, name)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, name)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = self.make(ta.shape().to_vec(), data);
        self.push(t, op, name)
    }

    /// 3D cross-correlation: input `[N,C,D,H,W]`, weight `[F,C,kd,kh,kw]`, bias `[F]`.
    pub fn conv3d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = dims5(self.value(input).shape(), "conv3d input")?;
        let ws = dims5(self.value(weight).shape(), "conv3d weight")?;
        if stride == 0 {
            return Err(Error::Parameter("conv3d stride must be >= 1".into()));
        }
        if xs[1] != ws[1] {
            return Err(Error::Dimension(format!(
                "conv3d: input has {} channels but weight expects {}",
                xs[1], ws[1]
            )));
        }
        if self.value(bias).shape() != [ws[0]] {
            return Err(Error::Dimension(format!(
                "conv3d: bias shape {:?} does not match {} filters",
                self.value(bias).shape(),
                ws[0]
            )));
        }
        for (axis, name) in ["D", "H", "W"].iter().enumerate() {
            if ws[2 + axis] > xs[2 + axis] + 2 * padding {
                return Err(Error::Dimension(format!(
                    "conv3d: kernel extent {} exceeds padded {name} extent {}",
                    ws[2 + axis],
                    xs[2 + axis] + 2 * padding
                )));
            }
        }
        let geom = ConvGeom {
            input: xs,
            weight: ws,
            stride,
            padding,
        };
        let data = conv::forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let t = self.make(geom.output().to_vec(), data);
        self.push(
            t,
            Op::Conv3d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            "conv3d",
        )
    }

    /// Trilinear upsampling by an integer factor (half-pixel centers, edge clamp).
    pub fn upsample_trilinear(&mut self, input: Var, scale: usize) -> Result<Var> {
        if scale < 1 {
            return Err(Error::Parameter(format!(
                "upsample scale must be >= 1, got {scale}"
            )));
        }
        let xs = dims5(self.value(input).shape(), "upsample input")?;
        let spatial = [xs[2] * scale, xs[3] * scale, xs[4] * scale];
        let plan = UpsamplePlan::new(xs, spatial);
        let data = plan.forward(self.value(input).data());
        let t = self.make(plan.output.to_vec(), data);
        self.push(t, Op::Upsample { input, spatial }, "upsample_trilinear")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let Some(bits) = self.take_branches(self.value(a).numel())? else {
            return self.unary(a, Op::Relu(a), "relu", |x| {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            });
        };
        let x = self.value(a);
        let data = x
            .data()
            .iter()
            .zip(bits)
            .map(|(&v, on)| if on { v } else { T::zero() })
            .collect();
        let t = self.make(x.shape().to_vec(), data);
        self.push(t, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), "sigmoid", |x| {
            T::one() / (T::one() + (-x).exp())
        })
    }

    /// `input [N,K] · weightᵀ [K,M] + bias [M]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (&[n, k], &[m, kw]) = (x.shape(), w.shape()) else {
            return Err(Error::Dimension(format!(
                "linear expects [N,K] input and [M,K] weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            )));
        };
        if k != kw || b.shape() != [m] {
            return Err(Error::Dimension(format!(
                "linear: input {:?}, weight {:?}, bias {:?} do not agree",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let mut out = Vec::with_capacity(n * m);
        for row in x.data().chunks(k) {
            for (wrow, &bv) in w.data().chunks(k).zip(b.data()) {
                let dot: T = row.iter().zip(wrow).map(|(&a, &c)| a * c).sum();
                out.push(dot + bv);
            }
        }
        let t = self.make(vec![n, m], out);
        self.push(
            t,
            Op::Linear {
                input,
                weight,
                bias,
            },
            "linear",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let mut t = self.value(a).reshaped(shape)?;
        t.requires_grad = false;
        self.push(t, Op::Reshape(a), "reshape")
    }

    /// Collapses all trailing axes: `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(a, &[n, rest])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = T::from_f64(c);
        self.unary(a, Op::Scale(a, c), "scale", |x| x * k)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), "exp", |x| x.exp())
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), "square", |x| x * x)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a), "sum")
    }

    /// Σ|x − x̂| over every element, divided by the batch size `shape[0]`.
    pub fn l1_loss(&mut self, x: Var, x_hat: Var) -> Result<Var> {
        same_shape(self.value(x), self.value(x_hat), "l1_loss")?;
        let bits = self.take_branches(self.value(x).numel())?;
        let (a, b) = (self.value(x), self.value(x_hat));
        let pairs = a.data().iter().zip(b.data());
        let total: T = match bits {
            None => pairs.map(|(&p, &q)| (p - q).abs()).sum(),
            Some(bits) => pairs
                .zip(bits)
                .map(|((&p, &q), above)| if above { p - q } else { q - p })
                .sum(),
        };
        let t = Tensor::scalar(total / T::from_f64(batch_len(a) as f64));
        self.push(t, Op::L1Loss(x, x_hat), "l1_loss")
    }

    /// Σ(x − x̂)² over every element, divided by the batch size `shape[0]`.
    pub fn l2_loss(&mut self, x: Var, x_hat: Var) -> Result<Var> {
        let (a, b) = (self.value(x), self.value(x_hat));
        same_shape(a, b, "l2_loss")?;
        let total: T = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum();
        let t = Tensor::scalar(total / T::from_f64(batch_len(a) as f64));
        self.push(t, Op::L2Loss(x, x_hat), "l2_loss")
    }

    /// KL(N(μ, e^logvar) ‖ N(0, I)), summed over latent dims, averaged over the batch.
    pub fn kl_divergence(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        let (m, lv) = (self.value(mu), self.value(logvar));
        same_shape(m, lv, "kl_divergence")?;
        m.ensure_finite("kl_divergence mu")?;
        lv.ensure_finite("kl_divergence logvar")?;
        let half = T::from_f64(0.5);
        let total: T = m
            .data()
            .iter()
            .zip(lv.data())
            .map(|(&u, &l)| u * u + l.exp() - T::one() - l)
            .sum();
        let t = Tensor::scalar(half * total / T::from_f64(batch_len(m) as f64));
        self.push(t, Op::Kl { mu, logvar }, "kl_divergence")
    }

    /// z = μ + exp(logvar / 2) ⊙ eps.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, eps: Var) -> Result<Var> {
        let (m, lv, e) = (self.value(mu), self.value(logvar), self.value(eps));
        same_shape(m, lv, "reparameterize")?;
        same_shape(m, e, "reparameterize")?;
        let half = T::from_f64(0.5);
        let data = m
            .data()
            .iter()
            .zip(lv.data())
            .zip(e.data())
            .map(|((&u, &l), &n)| u + (l * half).exp() * n)
            .collect();
        let t = self.make(m.shape().to_vec(), data);
        self.push(t, Op::Reparam { mu, logvar, eps }, "reparameterize")
    }

    /// Which side of its kink every piecewise-linear element sits on: the sign
    /// of each ReLU input and of each L1 residual, in recording order.
    ///
    /// Two evaluations of the same graph with equal signatures lie on the same
    /// smooth piece, so a difference quotient between them is meaningful.
    pub fn branches(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) => out.extend(self.value(a).data().iter().map(|&v| v > T::zero())),
                Op::L1Loss(x, x_hat) => {
                    let (a, b) = (self.value(x), self.value(x_hat));
                    out.extend(a.data().iter().zip(b.data()).map(|(&p, &q)| p > q));
                }
                _ => {}
            }
        }
        out
    }

    /// Reverse sweep from a scalar `loss`, seeded with 1.
    ///
    /// Every leaf created with `requires_grad` receives a gradient of its own
    /// shape, zero if the loss does not depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if self.frozen.is_some() {
            return Err(Error::Contract(
                "a tape with imposed branches is forward-only".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads)?;
            // Keep the seed for non-leaf queries on the loss itself.
            if idx == loss.0 {
                grads[idx] = Some(g);
            }
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                let is_param = matches!(node.op, Op::Leaf) && node.needs_grad;
                match g {
                    Some(data) => Some(self.make(node.value.shape().to_vec(), data)),
                    None if is_param => Some(Tensor::zeros(node.value.shape())),
                    None => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        match node.op {
            Op::Leaf => {}
            Op::Conv3d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let geom = ConvGeom {
                    input: dims5(self.value(input).shape(), "conv3d input")?,
                    weight: dims5(self.value(weight).shape(), "conv3d weight")?,
                    stride,
                    padding,
                };
                let (gx, gw, gb) = conv::backward(
                    val(input),
                    val(weight),
                    g,
                    &geom,
                    self.wants(input),
                    self.wants(weight),
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, input, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, weight, gw);
                }
                self.accumulate(grads, bias, gb);
            }
            Op::Upsample { input, spatial } => {
                let plan =
                    UpsamplePlan::new(dims5(self.value(input).shape(), "upsample")?, spatial);
                self.accumulate(grads, input, plan.backward(g));
            }
            Op::Relu(a) => {
                let gx = val(a)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, a, gx);
            }
            Op::Sigmoid(a) => {
                let gx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, a, gx);
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (n, k) = (self.value(input).shape()[0], self.value(input).shape()[1]);
                let m = self.value(weight).shape()[0];
                let (x, w) = (val(input), val(weight));
                if self.wants(input) {
                    let mut gx = vec![T::zero(); n * k];
                    for (grow, gxrow) in g.chunks(m).zip(gx.chunks_mut(k)) {
                        for (&gv, wrow) in grow.iter().zip(w.chunks(k)) {
                            for (o, &wv) in gxrow.iter_mut().zip(wrow) {
                                *o += gv * wv;
                            }
                        }
                    }
                    self.accumulate(grads, input, gx);
                }
                if self.wants(weight) {
                    let mut gw = vec![T::zero(); m * k];
                    for (grow, xrow) in g.chunks(m).zip(x.chunks(k)) {
                        for (&gv, gwrow) in grow.iter().zip(gw.chunks_mut(k)) {
                            for (o, &xv) in gwrow.iter_mut().zip(xrow) {
                                *o += gv * xv;
                            }
                        }
                    }
                    self.accumulate(grads, weight, gw);
                }
                if self.wants(bias) {
                    let mut gb = vec![T::zero(); m];
                    for grow in g.chunks(m) {
                        gb.iter_mut().zip(grow).for_each(|(o, &gv)| *o += gv);
                    }
                    self.accumulate(grads, bias, gb);
                }
            }
            Op::Reshape(a) => self.accumulate(grads, a, g.to_vec()),
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.to_vec());
                self.accumulate(grads, b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let ga = g.iter().zip(val(b)).map(|(&gv, &y)| gv * y).collect();
                let gb = g.iter().zip(val(a)).map(|(&gv, &x)| gv * x).collect();
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::Scale(a, c) => {
                let k = T::from_f64(c);
                self.accumulate(grads, a, g.iter().map(|&v| v * k).collect());
            }
            Op::Exp(a) => {
                let gx = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| gv * y)
                    .collect();
                self.accumulate(grads, a, gx);
            }
            Op::Square(a) => {
                let two = T::from_f64(2.0);
                let gx = g.iter().zip(val(a)).map(|(&gv, &x)| two * x * gv).collect();
                self.accumulate(grads, a, gx);
            }
            Op::Sum(a) => {
                let n = self.value(a).numel();
                self.accumulate(grads, a, vec![g[0]; n]);
            }
            Op::L1Loss(x, xh) => {
                let scale = g[0] / T::from_f64(batch_len(self.value(x)) as f64);
                let gx: Vec<T> = val(x)
                    .iter()
                    .zip(val(xh))
                    .map(|(&p, &q)| {
                        let d = p - q;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.wants(xh) {
                    self.accumulate(grads, xh, gx.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, x, gx);
            }
            Op::L2Loss(x, xh) => {
                let scale = T::from_f64(2.0) * g[0] / T::from_f64(batch_len(self.value(x)) as f64);
                let gx: Vec<T> = val(x)
                    .iter()
                    .zip(val(xh))
                    .map(|(&p, &q)| scale * (p - q))
                    .collect();
                if self.wants(xh) {
                    self.accumulate(grads, xh, gx.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, x, gx);
            }
            Op::Kl { mu, logvar } => {
                let scale = g[0] / T::from_f64(batch_len(self.value(mu)) as f64);
                let half = T::from_f64(0.5);
                self.accumulate(grads, mu, val(mu).iter().map(|&u| u * scale).collect());
                let glv = val(logvar)
                    .iter()
                    .map(|&l| half * (l.exp() - T::one()) * scale)
                    .collect();
                self.accumulate(grads, logvar, glv);
            }
            Op::Reparam { mu, logvar, eps } => {
                let half = T::from_f64(0.5);
                self.accumulate(grads, mu, g.to_vec());
                let sigma: Vec<T> = val(logvar).iter().map(|&l| (l * half).exp()).collect();
                let glv = g
                    .iter()
                    .zip(&sigma)
                    .zip(val(eps))
                    .map(|((&gv, &s), &e)| gv * e * s * half)
                    .collect();
                self.accumulate(grads, logvar, glv);
                let geps = g.iter().zip(&sigma).map(|(&gv, &s)| gv * s).collect();
                self.accumulate(grads, eps, geps);
            }
        }
        Ok(())
    }
}
