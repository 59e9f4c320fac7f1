//! Reverse-mode autodiff over 4D `[batch, channel, height, width]` tensors.
//!
//! A `Graph` is a tape: operations compute eagerly on insertion and record
//! enough to run `backward` from any scalar node. The engine is generic over
//! `f32` / `f64`; training runs in `f32`, while verification harnesses rebuild
//! the same graphs in `f64` and compare analytic gradients against central
//! finite differences.
//!
//! Determinism: every reduction runs in a fixed sequential order; the only
//! parallel loops (convolution batch dimension) write disjoint output slices,
//! so results are bitwise reproducible regardless of scheduling.

use ndarray::{Array1, Array2, Array4, Axis};
use rayon::prelude::*;

use crate::nn::convops::{
    col2im_add, conv_out_size, im2col, pad, sep_pass_adj, sep_pass_fwd, unpad_adjoint, PadMode,
};
use crate::nn::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy)]
pub enum Unary<F> {
    Relu,
    LeakyRelu(F),
    Sigmoid,
    Abs,
    /// `sqrt(x)`; callers must keep `x` strictly positive.
    Sqrt,
    Square,
    /// `max(x, eps) ^ p` with zero gradient on the clamped branch.
    PowConst(F, F),
    AddConst(F),
    MulConst(F),
}

#[derive(Debug, Clone, Copy)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
pub enum Reduce {
    /// `[B,C,H,W] -> [B,C,1,1]`, mean over the spatial dims.
    SpatialMean,
    /// `[B,C,H,W] -> [B,1,H,W]`, sum over channels.
    ChannelSum,
    /// `[B,C,H,W] -> [B,1,1,1]`, sum over everything but batch.
    SampleSum,
    /// `[B,C,H,W] -> [1,1,1,1]`, mean over everything.
    MeanAll,
}

enum Op<F: Scalar> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
        mode: PadMode,
    },
    DepthwiseFixed {
        x: NodeId,
        kernel: Vec<F>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Array4<F>,
        inv_std: Array1<F>,
        batch_stats: bool,
    },
    AvgPool {
        x: NodeId,
        k: usize,
    },
    Upsample2 {
        x: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Unary {
        x: NodeId,
        kind: Unary<F>,
    },
    Binary {
        a: NodeId,
        b: NodeId,
        kind: Binary,
    },
    Reduce {
        x: NodeId,
        kind: Reduce,
    },
}

struct Node<F: Scalar> {
    value: Array4<F>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    named: Vec<(String, NodeId)>,
    training: bool,
}

pub struct Grads<F: Scalar> {
    slots: Vec<Option<Array4<F>>>,
}

impl<F: Scalar> Grads<F> {
    pub fn get(&self, id: NodeId) -> Option<&Array4<F>> {
        self.slots[id.0].as_ref()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new(training: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            named: Vec::new(),
            training,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn value(&self, id: NodeId) -> &Array4<F> {
        &self.nodes[id.0].value
    }

    /// Value of a `[1,1,1,1]` node.
    pub fn scalar(&self, id: NodeId) -> F {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "scalar() called on non-scalar node");
        v[(0, 0, 0, 0)]
    }

    pub fn named_leaves(&self) -> &[(String, NodeId)] {
        &self.named
    }

    fn push(&mut self, value: Array4<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant leaf (no gradient).
    pub fn input(&mut self, v: Array4<F>) -> NodeId {
        self.push(v, Op::Leaf, false)
    }

    /// Gradient leaf.
    pub fn leaf(&mut self, v: Array4<F>) -> NodeId {
        self.push(v, Op::Leaf, true)
    }

    /// Named gradient leaf (a model parameter).
    pub fn param(&mut self, name: impl Into<String>, v: Array4<F>) -> NodeId {
        let id = self.push(v, Op::Leaf, true);
        self.named.push((name.into(), id));
        id
    }

    // -- structural ops ----------------------------------------------------

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad_by: usize,
        mode: PadMode,
    ) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let (bsz, cin, h, wd) = xv.dim();
        let (cout, wcin, kh, kw) = wv.dim();
        assert_eq!(cin, wcin, "conv2d: input has {cin} channels, weight expects {wcin}");
        let ho = conv_out_size(h, pad_by, kh, stride);
        let wo = conv_out_size(wd, pad_by, kw, stride);
        let wmat = wv
            .to_shape((cout, cin * kh * kw))
            .expect("weight reshape")
            .to_owned();
        let bias = b.map(|bid| {
            let bv = &self.nodes[bid.0].value;
            assert_eq!(bv.dim(), (1, cout, 1, 1), "conv2d bias must be [1,Cout,1,1]");
            bv.clone()
        });

        let mut out = Array4::zeros((bsz, cout, ho, wo));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(xv.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(mut ob, xb)| {
                let xp = pad(&xb, pad_by, mode);
                let cols = im2col(&xp, kh, kw, stride);
                let y = wmat.dot(&cols); // [Cout, Ho*Wo]
                for c in 0..cout {
                    let base = bias.as_ref().map(|bv| bv[(0, c, 0, 0)]).unwrap_or(F::zero());
                    for i in 0..ho {
                        for j in 0..wo {
                            ob[(c, i, j)] = y[(c, i * wo + j)] + base;
                        }
                    }
                }
            });

        let needs = self.needs(x) || self.needs(w) || b.map(|bb| self.needs(bb)).unwrap_or(false);
        self.push(
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad: pad_by,
                mode,
            },
            needs,
        )
    }

    /// Depthwise convolution with a fixed separable symmetric kernel and
    /// reflective padding; output shape equals input shape.
    pub fn depthwise_fixed(&mut self, x: NodeId, kernel: Vec<F>) -> NodeId {
        assert!(kernel.len() % 2 == 1, "separable kernel must have odd length");
        let xv = &self.nodes[x.0].value;
        let (bsz, c, h, w) = xv.dim();
        // Reflective indexing is periodic, so windows larger than the map are
        // well-defined (MS-SSIM's coarsest scale relies on this).
        let mut out = Array4::zeros((bsz, c, h, w));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(xv.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(mut ob, xb)| {
                let tmp = sep_pass_fwd(&xb, &kernel, 2);
                let res = sep_pass_fwd(&tmp.view(), &kernel, 1);
                ob.assign(&res);
            });
        let needs = self.needs(x);
        self.push(out, Op::DepthwiseFixed { x, kernel }, needs)
    }

    /// Batch normalization over `(batch, spatial)` per channel.
    ///
    /// In training mode the batch statistics are used and returned so the
    /// caller can update running buffers; in eval mode `running` must be
    /// provided. `gamma` / `beta` are `[1,C,1,1]` leaves.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: Option<(&Array1<F>, &Array1<F>)>,
        eps: F,
    ) -> (NodeId, Option<(Array1<F>, Array1<F>)>) {
        let xv = self.nodes[x.0].value.clone();
        let (bsz, c, h, w) = xv.dim();
        let n = F::from_f64((bsz * h * w) as f64);
        let batch_stats = self.training;

        let (mean, var) = if batch_stats {
            let mut mean = Array1::zeros(c);
            let mut var = Array1::zeros(c);
            for ch in 0..c {
                let mut acc = F::zero();
                for b in 0..bsz {
                    for i in 0..h {
                        for j in 0..w {
                            acc = acc + xv[(b, ch, i, j)];
                        }
                    }
                }
                let m = acc / n;
                let mut vacc = F::zero();
                for b in 0..bsz {
                    for i in 0..h {
                        for j in 0..w {
                            let d = xv[(b, ch, i, j)] - m;
                            vacc = vacc + d * d;
                        }
                    }
                }
                mean[ch] = m;
                var[ch] = vacc / n;
            }
            (mean, var)
        } else {
            let (rm, rv) = running.expect("batch_norm in eval mode requires running stats");
            assert_eq!(rm.len(), c);
            (rm.clone(), rv.clone())
        };

        let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
        let mut xhat = Array4::zeros((bsz, c, h, w));
        for b in 0..bsz {
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        xhat[(b, ch, i, j)] = (xv[(b, ch, i, j)] - mean[ch]) * inv_std[ch];
                    }
                }
            }
        }
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        assert_eq!(gv.dim(), (1, c, 1, 1), "batch_norm gamma must be [1,C,1,1]");
        assert_eq!(bv.dim(), (1, c, 1, 1), "batch_norm beta must be [1,C,1,1]");
        let mut out = Array4::zeros((bsz, c, h, w));
        for b in 0..bsz {
            for ch in 0..c {
                let (g, be) = (gv[(0, ch, 0, 0)], bv[(0, ch, 0, 0)]);
                for i in 0..h {
                    for j in 0..w {
                        out[(b, ch, i, j)] = g * xhat[(b, ch, i, j)] + be;
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let id = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            needs,
        );
        let stats = if batch_stats { Some((mean, var)) } else { None };
        (id, stats)
    }

    /// Non-overlapping `k x k` block means (stride `k`).
    pub fn avg_pool(&mut self, x: NodeId, k: usize) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (bsz, c, h, w) = xv.dim();
        assert!(
            h % k == 0 && w % k == 0,
            "avg_pool: dims {h}x{w} not divisible by {k}"
        );
        let (ho, wo) = (h / k, w / k);
        let inv = F::one() / F::from_f64((k * k) as f64);
        let mut out = Array4::zeros((bsz, c, ho, wo));
        for b in 0..bsz {
            for ch in 0..c {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = F::zero();
                        for di in 0..k {
                            for dj in 0..k {
                                acc = acc + xv[(b, ch, i * k + di, j * k + dj)];
                            }
                        }
                        out[(b, ch, i, j)] = acc * inv;
                    }
                }
            }
        }
        let needs = self.needs(x);
        self.push(out, Op::AvgPool { x, k }, needs)
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (bsz, c, h, w) = xv.dim();
        let mut out = Array4::zeros((bsz, c, 2 * h, 2 * w));
        for b in 0..bsz {
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let v = xv[(b, ch, i, j)];
                        out[(b, ch, 2 * i, 2 * j)] = v;
                        out[(b, ch, 2 * i + 1, 2 * j)] = v;
                        out[(b, ch, 2 * i, 2 * j + 1)] = v;
                        out[(b, ch, 2 * i + 1, 2 * j + 1)] = v;
                    }
                }
            }
        }
        let needs = self.needs(x);
        self.push(out, Op::Upsample2 { x }, needs)
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let (ba, ca, ha, wa) = av.dim();
        let (bb, cb, hb, wb) = bv.dim();
        assert_eq!(
            (ba, ha, wa),
            (bb, hb, wb),
            "concat: non-channel dims must match"
        );
        let mut out = Array4::zeros((ba, ca + cb, ha, wa));
        out.slice_mut(ndarray::s![.., ..ca, .., ..]).assign(av);
        out.slice_mut(ndarray::s![.., ca.., .., ..]).assign(bv);
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Concat { a, b }, needs)
    }

    // -- pointwise ops ------------------------------------------------------

    pub fn unary(&mut self, x: NodeId, kind: Unary<F>) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let out = match kind {
            Unary::Relu => xv.mapv(|v| if v > F::zero() { v } else { F::zero() }),
            Unary::LeakyRelu(s) => xv.mapv(|v| if v > F::zero() { v } else { s * v }),
            Unary::Sigmoid => xv.mapv(|v| F::one() / (F::one() + (-v).exp())),
            Unary::Abs => xv.mapv(|v| v.abs()),
            Unary::Sqrt => xv.mapv(|v| v.sqrt()),
            Unary::Square => xv.mapv(|v| v * v),
            Unary::PowConst(p, eps) => xv.mapv(|v| v.max(eps).powf(p)),
            Unary::AddConst(c) => xv.mapv(|v| v + c),
            Unary::MulConst(c) => xv.mapv(|v| v * c),
        };
        let needs = self.needs(x);
        self.push(out, Op::Unary { x, kind }, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Unary::Relu)
    }
    pub fn leaky_relu(&mut self, x: NodeId, slope: F) -> NodeId {
        self.unary(x, Unary::LeakyRelu(slope))
    }
    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Unary::Sigmoid)
    }
    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Unary::Abs)
    }
    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Unary::Sqrt)
    }
    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Unary::Square)
    }
    pub fn pow_const(&mut self, x: NodeId, p: F, eps: F) -> NodeId {
        self.unary(x, Unary::PowConst(p, eps))
    }
    pub fn add_const(&mut self, x: NodeId, c: F) -> NodeId {
        self.unary(x, Unary::AddConst(c))
    }
    pub fn mul_const(&mut self, x: NodeId, c: F) -> NodeId {
        self.unary(x, Unary::MulConst(c))
    }

    fn broadcast_shape(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> [usize; 4] {
        let a = [a.0, a.1, a.2, a.3];
        let b = [b.0, b.1, b.2, b.3];
        let mut out = [0usize; 4];
        for i in 0..4 {
            assert!(
                a[i] == b[i] || a[i] == 1 || b[i] == 1,
                "broadcast mismatch at dim {i}: {a:?} vs {b:?}"
            );
            out[i] = a[i].max(b[i]);
        }
        out
    }

    pub fn binary(&mut self, a: NodeId, b: NodeId, kind: Binary) -> NodeId {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let shape = Self::broadcast_shape(av.dim(), bv.dim());
        let ab = av.broadcast(shape).expect("lhs broadcast");
        let bb = bv.broadcast(shape).expect("rhs broadcast");
        let mut out = Array4::zeros(shape);
        ndarray::Zip::from(&mut out)
            .and(&ab)
            .and(&bb)
            .for_each(|o, &x, &y| {
                *o = match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                }
            });
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Binary { a, b, kind }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Binary::Add)
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Binary::Sub)
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Binary::Mul)
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Binary::Div)
    }

    pub fn reduce(&mut self, x: NodeId, kind: Reduce) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (bsz, c, h, w) = xv.dim();
        let out = match kind {
            Reduce::SpatialMean => {
                let inv = F::one() / F::from_f64((h * w) as f64);
                let mut out = Array4::zeros((bsz, c, 1, 1));
                for b in 0..bsz {
                    for ch in 0..c {
                        let mut acc = F::zero();
                        for i in 0..h {
                            for j in 0..w {
                                acc = acc + xv[(b, ch, i, j)];
                            }
                        }
                        out[(b, ch, 0, 0)] = acc * inv;
                    }
                }
                out
            }
            Reduce::ChannelSum => {
                let mut out = Array4::zeros((bsz, 1, h, w));
                for b in 0..bsz {
                    for ch in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                out[(b, 0, i, j)] = out[(b, 0, i, j)] + xv[(b, ch, i, j)];
                            }
                        }
                    }
                }
                out
            }
            Reduce::SampleSum => {
                let mut out = Array4::zeros((bsz, 1, 1, 1));
                for b in 0..bsz {
                    let mut acc = F::zero();
                    for ch in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                acc = acc + xv[(b, ch, i, j)];
                            }
                        }
                    }
                    out[(b, 0, 0, 0)] = acc;
                }
                out
            }
            Reduce::MeanAll => {
                let mut acc = F::zero();
                for v in xv.iter() {
                    acc = acc + *v;
                }
                let mut out = Array4::zeros((1, 1, 1, 1));
                out[(0, 0, 0, 0)] = acc / F::from_f64(xv.len() as f64);
                out
            }
        };
        let needs = self.needs(x);
        self.push(out, Op::Reduce { x, kind }, needs)
    }

    pub fn spatial_mean(&mut self, x: NodeId) -> NodeId {
        self.reduce(x, Reduce::SpatialMean)
    }
    pub fn channel_sum(&mut self, x: NodeId) -> NodeId {
        self.reduce(x, Reduce::ChannelSum)
    }
    pub fn sample_sum(&mut self, x: NodeId) -> NodeId {
        self.reduce(x, Reduce::SampleSum)
    }
    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        self.reduce(x, Reduce::MeanAll)
    }

    // -- backward -----------------------------------------------------------

    /// Reverse pass from a scalar `[1,1,1,1]` node. Gradient slots of interior
    /// nodes are freed as soon as they have been consumed; leaf gradients stay
    /// available in the returned `Grads`.
    pub fn backward(&self, loss: NodeId) -> Grads<F> {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward requires a scalar loss node"
        );
        let mut slots: Vec<Option<Array4<F>>> = vec![None; self.nodes.len()];
        slots[loss.0] = Some(Array4::ones((1, 1, 1, 1)));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                slots[id] = None;
                continue;
            }
            let g = match &slots[id] {
                None => continue,
                Some(_) => {
                    if matches!(self.nodes[id].op, Op::Leaf) {
                        continue; // keep leaf grads in place
                    }
                    slots[id].take().unwrap()
                }
            };
            self.backprop_node(id, &g, &mut slots);
        }
        Grads { slots }
    }

    fn accumulate(slots: &mut [Option<Array4<F>>], id: NodeId, g: Array4<F>) {
        match &mut slots[id.0] {
            Some(existing) => *existing = &*existing + &g,
            slot @ None => *slot = Some(g),
        }
    }

    /// Sum `g` down to `shape` over broadcast dimensions.
    fn reduce_to(g: &Array4<F>, shape: (usize, usize, usize, usize)) -> Array4<F> {
        let target = [shape.0, shape.1, shape.2, shape.3];
        let mut cur = g.clone();
        for axis in 0..4 {
            if cur.shape()[axis] != target[axis] {
                debug_assert_eq!(target[axis], 1);
                let summed = cur.sum_axis(Axis(axis)).insert_axis(Axis(axis));
                cur = summed
                    .into_dimensionality::<ndarray::Ix4>()
                    .expect("rank preserved");
            }
        }
        cur
    }

    fn backprop_node(&self, id: usize, g: &Array4<F>, slots: &mut Vec<Option<Array4<F>>>) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad: pad_by,
                mode,
            } => {
                let xv = &self.nodes[x.0].value;
                let wv = &self.nodes[w.0].value;
                let (bsz, cin, h, wd) = xv.dim();
                let (cout, _, kh, kw) = wv.dim();
                let (hp, wp) = (h + 2 * pad_by, wd + 2 * pad_by);
                let (ho, wo) = (g.dim().2, g.dim().3);
                let wmat = wv
                    .to_shape((cout, cin * kh * kw))
                    .expect("weight reshape")
                    .to_owned();

                if let Some(bid) = b {
                    if self.needs(*bid) {
                        let mut db = Array4::zeros((1, cout, 1, 1));
                        for c in 0..cout {
                            let mut acc = F::zero();
                            for bi in 0..bsz {
                                for i in 0..ho {
                                    for j in 0..wo {
                                        acc = acc + g[(bi, c, i, j)];
                                    }
                                }
                            }
                            db[(0, c, 0, 0)] = acc;
                        }
                        Self::accumulate(slots, *bid, db);
                    }
                }

                let per_sample: Vec<(Option<Array2<F>>, Option<Array4<F>>)> = (0..bsz)
                    .into_par_iter()
                    .map(|bi| {
                        let xb = xv.index_axis(Axis(0), bi);
                        let gb = g.index_axis(Axis(0), bi);
                        let gmat = gb
                            .to_shape((cout, ho * wo))
                            .expect("grad reshape")
                            .to_owned();
                        let dw_b = if self.needs(*w) {
                            let xp = pad(&xb, *pad_by, *mode);
                            let cols = im2col(&xp, kh, kw, *stride);
                            Some(gmat.dot(&cols.t()))
                        } else {
                            None
                        };
                        let dx_b = if self.needs(*x) {
                            let dcols = wmat.t().dot(&gmat);
                            let mut dpad = ndarray::Array3::zeros((cin, hp, wp));
                            col2im_add(&dcols, cin, hp, wp, kh, kw, *stride, &mut dpad);
                            let dxb = unpad_adjoint(&dpad, *pad_by, *mode, h, wd);
                            let mut out = Array4::zeros((1, cin, h, wd));
                            out.index_axis_mut(Axis(0), 0).assign(&dxb);
                            Some(out)
                        } else {
                            None
                        };
                        (dw_b, dx_b)
                    })
                    .collect();

                if self.needs(*w) {
                    let mut dw = Array2::zeros((cout, cin * kh * kw));
                    for (dw_b, _) in &per_sample {
                        dw = dw + dw_b.as_ref().unwrap();
                    }
                    let dw4 = dw
                        .to_shape((cout, cin, kh, kw))
                        .expect("dw reshape")
                        .to_owned();
                    Self::accumulate(slots, *w, dw4);
                }
                if self.needs(*x) {
                    let mut dx = Array4::zeros((bsz, cin, h, wd));
                    for (bi, (_, dx_b)) in per_sample.iter().enumerate() {
                        dx.index_axis_mut(Axis(0), bi)
                            .assign(&dx_b.as_ref().unwrap().index_axis(Axis(0), 0));
                    }
                    Self::accumulate(slots, *x, dx);
                }
            }
            Op::DepthwiseFixed { x, kernel } => {
                if !self.needs(*x) {
                    return;
                }
                let (bsz, c, h, w) = g.dim();
                let mut dx = Array4::zeros((bsz, c, h, w));
                dx.axis_iter_mut(Axis(0))
                    .into_par_iter()
                    .zip(g.axis_iter(Axis(0)).into_par_iter())
                    .for_each(|(mut db, gb)| {
                        // Forward was horizontal then vertical; adjoint reverses.
                        let t = sep_pass_adj(&gb, kernel, 1);
                        let res = sep_pass_adj(&t.view(), kernel, 2);
                        db.assign(&res);
                    });
                Self::accumulate(slots, *x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (bsz, c, h, w) = g.dim();
                let n = F::from_f64((bsz * h * w) as f64);
                let gv = &self.nodes[gamma.0].value;

                let mut dbeta = Array1::zeros(c);
                let mut dgamma = Array1::zeros(c);
                for ch in 0..c {
                    let mut db = F::zero();
                    let mut dg = F::zero();
                    for b in 0..bsz {
                        for i in 0..h {
                            for j in 0..w {
                                let gij = g[(b, ch, i, j)];
                                db = db + gij;
                                dg = dg + gij * xhat[(b, ch, i, j)];
                            }
                        }
                    }
                    dbeta[ch] = db;
                    dgamma[ch] = dg;
                }
                if self.needs(*beta) {
                    let mut d = Array4::zeros((1, c, 1, 1));
                    for ch in 0..c {
                        d[(0, ch, 0, 0)] = dbeta[ch];
                    }
                    Self::accumulate(slots, *beta, d);
                }
                if self.needs(*gamma) {
                    let mut d = Array4::zeros((1, c, 1, 1));
                    for ch in 0..c {
                        d[(0, ch, 0, 0)] = dgamma[ch];
                    }
                    Self::accumulate(slots, *gamma, d);
                }
                if self.needs(*x) {
                    let mut dx = Array4::zeros((bsz, c, h, w));
                    for ch in 0..c {
                        let scale = gv[(0, ch, 0, 0)] * inv_std[ch];
                        for b in 0..bsz {
                            for i in 0..h {
                                for j in 0..w {
                                    let gij = g[(b, ch, i, j)];
                                    dx[(b, ch, i, j)] = if *batch_stats {
                                        scale / n
                                            * (n * gij
                                                - dbeta[ch]
                                                - xhat[(b, ch, i, j)] * dgamma[ch])
                                    } else {
                                        scale * gij
                                    };
                                }
                            }
                        }
                    }
                    Self::accumulate(slots, *x, dx);
                }
            }
            Op::AvgPool { x, k } => {
                if !self.needs(*x) {
                    return;
                }
                let (bsz, c, ho, wo) = g.dim();
                let inv = F::one() / F::from_f64((k * k) as f64);
                let mut dx = Array4::zeros((bsz, c, ho * k, wo * k));
                for b in 0..bsz {
                    for ch in 0..c {
                        for i in 0..ho {
                            for j in 0..wo {
                                let v = g[(b, ch, i, j)] * inv;
                                for di in 0..*k {
                                    for dj in 0..*k {
                                        dx[(b, ch, i * k + di, j * k + dj)] = v;
                                    }
                                }
                            }
                        }
                    }
                }
                Self::accumulate(slots, *x, dx);
            }
            Op::Upsample2 { x } => {
                if !self.needs(*x) {
                    return;
                }
                let (bsz, c, h2, w2) = g.dim();
                let (h, w) = (h2 / 2, w2 / 2);
                let mut dx = Array4::zeros((bsz, c, h, w));
                for b in 0..bsz {
                    for ch in 0..c {
                        for i in 0..h {
                            for j in 0..w {
                                dx[(b, ch, i, j)] = g[(b, ch, 2 * i, 2 * j)]
                                    + g[(b, ch, 2 * i + 1, 2 * j)]
                                    + g[(b, ch, 2 * i, 2 * j + 1)]
                                    + g[(b, ch, 2 * i + 1, 2 * j + 1)];
                            }
                        }
                    }
                }
                Self::accumulate(slots, *x, dx);
            }
            Op::Concat { a, b } => {
                let ca = self.nodes[a.0].value.dim().1;
                if self.needs(*a) {
                    let da = g.slice(ndarray::s![.., ..ca, .., ..]).to_owned();
                    Self::accumulate(slots, *a, da);
                }
                if self.needs(*b) {
                    let db = g.slice(ndarray::s![.., ca.., .., ..]).to_owned();
                    Self::accumulate(slots, *b, db);
                }
            }
            Op::Unary { x, kind } => {
                if !self.needs(*x) {
                    return;
                }
                let xv = &self.nodes[x.0].value;
                let yv = &self.nodes[id].value;
                let dx = match kind {
                    Unary::Relu => {
                        let mut d = g.clone();
                        ndarray::Zip::from(&mut d).and(xv).for_each(|dv, &x| {
                            if x <= F::zero() {
                                *dv = F::zero();
                            }
                        });
                        d
                    }
                    Unary::LeakyRelu(s) => {
                        let mut d = g.clone();
                        ndarray::Zip::from(&mut d).and(xv).for_each(|dv, &x| {
                            if x <= F::zero() {
                                *dv = *dv * *s;
                            }
                        });
                        d
                    }
                    Unary::Sigmoid => {
                        let mut d = g.clone();
                        ndarray::Zip::from(&mut d).and(yv).for_each(|dv, &y| {
                            *dv = *dv * y * (F::one() - y);
                        });
                        d
                    }
                    Unary::Abs => {
                        let mut d = g.clone();
                        ndarray::Zip::from(&mut d).and(xv).for_each(|dv, &x| {
                            *dv = if x > F::zero() {
                                *dv
                            } else if x < F::zero() {
                                -*dv
                            } else {
                                F::zero()
                            };
                        });
                        d
                    }
                    Unary::Sqrt => {
                        let half = F::from_f64(0.5);
                        let mut d = g.clone();
                        ndarray::Zip::from(&mut d).and(yv).for_each(|dv, &y| {
                            *dv = *dv * half / y;
                        });
                        d
                    }
                    Unary::Square => {
                        let two = F::from_f64(2.0);
                        let mut d = g.clone();
                        ndarray::Zip::from(&mut d).and(xv).for_each(|dv, &x| {
                            *dv = *dv * two * x;
                        });
                        d
                    }
                    Unary::PowConst(p, eps) => {
                        let mut d = g.clone();
                        ndarray::Zip::from(&mut d).and(xv).for_each(|dv, &x| {
                            *dv = if x > *eps {
                                *dv * *p * x.powf(*p - F::one())
                            } else {
                                F::zero()
                            };
                        });
                        d
                    }
                    Unary::AddConst(_) => g.clone(),
                    Unary::MulConst(c) => g.mapv(|v| v * *c),
                };
                Self::accumulate(slots, *x, dx);
            }
            Op::Binary { a, b, kind } => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let shape = g.dim();
                match kind {
                    Binary::Add => {
                        if self.needs(*a) {
                            Self::accumulate(slots, *a, Self::reduce_to(g, av.dim()));
                        }
                        if self.needs(*b) {
                            Self::accumulate(slots, *b, Self::reduce_to(g, bv.dim()));
                        }
                    }
                    Binary::Sub => {
                        if self.needs(*a) {
                            Self::accumulate(slots, *a, Self::reduce_to(g, av.dim()));
                        }
                        if self.needs(*b) {
                            let neg = g.mapv(|v| -v);
                            Self::accumulate(slots, *b, Self::reduce_to(&neg, bv.dim()));
                        }
                    }
                    Binary::Mul => {
                        if self.needs(*a) {
                            let bb = bv.broadcast(shape).expect("broadcast");
                            let da = g * &bb;
                            Self::accumulate(slots, *a, Self::reduce_to(&da, av.dim()));
                        }
                        if self.needs(*b) {
                            let ab = av.broadcast(shape).expect("broadcast");
                            let db = g * &ab;
                            Self::accumulate(slots, *b, Self::reduce_to(&db, bv.dim()));
                        }
                    }
                    Binary::Div => {
                        let bb = bv.broadcast(shape).expect("broadcast").to_owned();
                        if self.needs(*a) {
                            let da = g / &bb;
                            Self::accumulate(slots, *a, Self::reduce_to(&da, av.dim()));
                        }
                        if self.needs(*b) {
                            let ab = av.broadcast(shape).expect("broadcast");
                            let mut db = g.clone();
                            ndarray::Zip::from(&mut db)
                                .and(&ab)
                                .and(&bb)
                                .for_each(|dv, &x, &y| {
                                    *dv = -*dv * x / (y * y);
                                });
                            Self::accumulate(slots, *b, Self::reduce_to(&db, bv.dim()));
                        }
                    }
                }
            }
            Op::Reduce { x, kind } => {
                if !self.needs(*x) {
                    return;
                }
                let xv = &self.nodes[x.0].value;
                let (bsz, c, h, w) = xv.dim();
                let dx = match kind {
                    Reduce::SpatialMean => {
                        let inv = F::one() / F::from_f64((h * w) as f64);
                        let mut dx = Array4::zeros((bsz, c, h, w));
                        for b in 0..bsz {
                            for ch in 0..c {
                                let v = g[(b, ch, 0, 0)] * inv;
                                for i in 0..h {
                                    for j in 0..w {
                                        dx[(b, ch, i, j)] = v;
                                    }
                                }
                            }
                        }
                        dx
                    }
                    Reduce::ChannelSum => {
                        let mut dx = Array4::zeros((bsz, c, h, w));
                        for b in 0..bsz {
                            for ch in 0..c {
                                for i in 0..h {
                                    for j in 0..w {
                                        dx[(b, ch, i, j)] = g[(b, 0, i, j)];
                                    }
                                }
                            }
                        }
                        dx
                    }
                    Reduce::SampleSum => {
                        let mut dx = Array4::zeros((bsz, c, h, w));
                        for b in 0..bsz {
                            let v = g[(b, 0, 0, 0)];
                            for ch in 0..c {
                                for i in 0..h {
                                    for j in 0..w {
                                        dx[(b, ch, i, j)] = v;
                                    }
                                }
                            }
                        }
                        dx
                    }
                    Reduce::MeanAll => {
                        let inv = F::one() / F::from_f64(xv.len() as f64);
                        let v = g[(0, 0, 0, 0)] * inv;
                        Array4::from_elem((bsz, c, h, w), v)
                    }
                };
                Self::accumulate(slots, *x, dx);
            }
        }
    }
}
