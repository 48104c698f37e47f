//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the tape index is already a
//! topological order and `backward` walks it in reverse. Parameters enter the
//! tape through [`Graph::param`], which keys them by the address of their
//! storage; [`Gradients::get`] looks them up the same way.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::conv::{conv_backward, conv_forward, Axis, ConvGeom, ConvLayerSpec};
use super::logistic::{discrete_logistic, discrete_logistic_mixture};
use super::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A strided sub-lattice of a `[C,H,W]` tensor: rows `row_off + i·row_step`,
/// columns `col_off + j·col_step`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lattice {
    pub row_off: usize,
    pub col_off: usize,
    pub row_step: usize,
    pub col_step: usize,
}

impl Lattice {
    pub const fn new(row_off: usize, col_off: usize, row_step: usize, col_step: usize) -> Self {
        Self {
            row_off,
            col_off,
            row_step,
            col_step,
        }
    }

    fn index(&self, h: usize, w: usize, i: usize, j: usize) -> usize {
        let _ = h;
        (self.row_off + i * self.row_step) * w + self.col_off + j * self.col_step
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Normalize {
        x: Var,
        scale: f32,
    },
    RoundSte(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Channels {
        x: Var,
        start: usize,
    },
    Gather {
        x: Var,
        lattice: Lattice,
    },
    Scatter {
        parts: Vec<(Var, Lattice)>,
    },
    Sum(Var),
    Logistic {
        z: Var,
        mu: Var,
        log_s: Var,
        per_channel: bool,
    },
    Mixture {
        z: Var,
        mu: Var,
        log_s: Var,
        logits: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. One graph per forward pass.
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    non_finite: Option<&'static str>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            non_finite: None,
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.all_finite() {
            self.non_finite = Some(name);
        }
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

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// A free leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true, "variable")
    }

    /// Leaf bound to a model parameter. Repeated calls with the same tensor
    /// return the same node, so shared parameters accumulate one gradient.
    pub fn param(&mut self, t: &Tensor) -> Var {
        let key = t.data().as_ptr() as usize;
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(t.clone(), Op::Leaf, true, "parameter");
        self.params.insert(key, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// First operation that produced a NaN or infinity, if any.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite {
            Some(name) => Err(Error::NonFinite(name)),
            None => Ok(()),
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::contract(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn chw(&self, v: Var) -> Result<(usize, usize, usize)> {
        self.value(v).chw()
    }

    /// Applies one conv layer to a `[C,H,W]` node. Rank-1 layers slide along
    /// `axis` with every other row or column treated as batch.
    pub fn conv(&mut self, x: Var, layer: &ConvLayerSpec, axis: Axis) -> Result<Var> {
        layer.validate()?;
        let (c, h, w) = self.chw(x)?;
        let geom = layer.geometry(c, h, w, axis)?;
        let wv = self.param(&layer.weight);
        let bv = self.param(&layer.bias);
        let out = conv_forward(
            self.value(x).data(),
            self.value(wv).data(),
            self.value(bv).data(),
            &geom,
        );
        let t = Tensor::new(vec![geom.o, geom.ho, geom.wo], out)?;
        let rg = self.rg(x) || self.rg(wv) || self.rg(bv);
        Ok(self.push(
            t,
            Op::Conv {
                x,
                w: wv,
                b: bv,
                geom,
            },
            rg,
            "conv",
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg, "sigmoid")
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same-shape operands")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg, "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg, "sub"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg, "mul"))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let t = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, factor), rg, "scale")
    }

    /// `(x − offset) / scale`, evaluated with a true division.
    pub fn normalize(&mut self, x: Var, offset: f32, scale: f32) -> Var {
        let t = self.value(x).map(|v| (v - offset) / scale);
        let rg = self.rg(x);
        self.push(t, Op::Normalize { x, scale }, rg, "normalize")
    }

    /// `⌊x + ½⌋` forward; identity on the backward pass.
    pub fn round_ste(&mut self, x: Var) -> Var {
        let t = self.value(x).map(super::round_half_up);
        let rg = self.rg(x);
        self.push(t, Op::RoundSte(x), rg, "round")
    }

    /// Same data under a new shape.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg, "reshape"))
    }

    /// Concatenates `[C_i,H,W]` nodes along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of nothing"))?;
        let (_, h, w) = self.chw(first)?;
        let mut c = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pc, ph, pw) = self.chw(p)?;
            if (ph, pw) != (h, w) {
                return Err(Error::contract(format!(
                    "concat: spatial {ph}x{pw} vs {h}x{w}"
                )));
            }
            c += pc;
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(vec![c, h, w], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(t, Op::Concat(parts.to_vec()), rg, "concat"))
    }

    /// Channels `start..start+count` of a `[C,H,W]` node.
    pub fn channels(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        if start + count > c {
            return Err(Error::contract(format!(
                "channel slice {start}..{} of {c}",
                start + count
            )));
        }
        let plane = h * w;
        let data = self.value(x).data()[start * plane..(start + count) * plane].to_vec();
        let t = Tensor::new(vec![count, h, w], data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Channels { x, start }, rg, "channels"))
    }

    pub fn gather(&mut self, x: Var, lattice: Lattice) -> Result<Var> {
        let (c, h, w) = self.chw(x)?;
        if lattice.row_step == 0
            || lattice.col_step == 0
            || h % lattice.row_step != 0
            || w % lattice.col_step != 0
        {
            return Err(Error::contract(format!(
                "lattice {lattice:?} does not tile {h}x{w}"
            )));
        }
        let (oh, ow) = (h / lattice.row_step, w / lattice.col_step);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    data.push(plane[lattice.index(h, w, i, j)]);
                }
            }
        }
        let t = Tensor::new(vec![c, oh, ow], data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Gather { x, lattice }, rg, "gather"))
    }

    /// Inverse of a set of [`gather`](Self::gather)s: writes each part onto
    /// its lattice of a `[C,H,W]` output. Together the parts must cover every
    /// output element exactly once.
    pub fn scatter(&mut self, parts: &[(Var, Lattice)], h: usize, w: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("scatter of nothing"))?
            .0;
        let (c, _, _) = self.chw(first)?;
        let mut data = vec![0.0f32; c * h * w];
        let mut hits = vec![0u8; h * w];
        for &(p, lat) in parts {
            let (pc, ph, pw) = self.chw(p)?;
            if pc != c || ph * lat.row_step != h || pw * lat.col_step != w {
                return Err(Error::contract(format!(
                    "scatter part [{pc},{ph},{pw}] does not fit [{c},{h},{w}] via {lat:?}"
                )));
            }
            let src = self.value(p).data();
            for ch in 0..c {
                for i in 0..ph {
                    for j in 0..pw {
                        let idx = lat.index(h, w, i, j);
                        if ch == 0 {
                            hits[idx] += 1;
                        }
                        data[ch * h * w + idx] = src[(ch * ph + i) * pw + j];
                    }
                }
            }
        }
        if hits.iter().any(|&n| n != 1) {
            return Err(Error::contract(
                "scatter lattices must tile the output exactly",
            ));
        }
        let t = Tensor::new(vec![c, h, w], data)?;
        let rg = parts.iter().any(|&(p, _)| self.rg(p));
        Ok(self.push(
            t,
            Op::Scatter {
                parts: parts.to_vec(),
            },
            rg,
            "scatter",
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|&v| v as f64).sum::<f64>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s as f32), Op::Sum(x), rg, "sum")
    }

    /// Total discrete-logistic log-likelihood (nats) of `z` over unbounded
    /// support. `mu`/`log_s` either match `z`'s shape or hold one value per
    /// channel (any shape with `C` elements).
    pub fn logistic_log_prob(&mut self, z: Var, mu: Var, log_s: Var) -> Result<Var> {
        self.same_shape(mu, log_s, "logistic parameters")?;
        let (c, _, _) = self.chw(z)?;
        let per_channel = if self.shape(mu) == self.shape(z) {
            false
        } else if self.value(mu).len() == c {
            true
        } else {
            return Err(Error::contract(format!(
                "logistic parameters {:?} fit neither {:?} nor [{c}]",
                self.shape(mu),
                self.shape(z)
            )));
        };
        let (lp, _) = self.logistic_eval(z, mu, log_s, per_channel, false);
        let rg = self.rg(z) || self.rg(mu) || self.rg(log_s);
        Ok(self.push(
            Tensor::scalar(lp as f32),
            Op::Logistic {
                z,
                mu,
                log_s,
                per_channel,
            },
            rg,
            "logistic log-prob",
        ))
    }

    fn logistic_eval(
        &self,
        z: Var,
        mu: Var,
        log_s: Var,
        per_channel: bool,
        want_grad: bool,
    ) -> (f64, Option<[Vec<f32>; 3]>) {
        let zt = self.value(z);
        let plane = zt.len() / zt.shape()[0];
        let (m, l) = (self.value(mu).data(), self.value(log_s).data());
        let mut total = 0.0f64;
        let mut grads = want_grad.then(|| {
            [
                vec![0.0f32; zt.len()],
                vec![0.0f32; m.len()],
                vec![0.0f32; l.len()],
            ]
        });
        for (i, &zv) in zt.data().iter().enumerate() {
            let p = if per_channel { i / plane } else { i };
            let e = discrete_logistic(zv as f64, m[p] as f64, l[p] as f64, None, None);
            total += e.log_p;
            if let Some([gz, gm, gl]) = grads.as_mut() {
                gz[i] = e.d_z as f32;
                gm[p] += e.d_mu as f32;
                gl[p] += e.d_log_s as f32;
            }
        }
        (total, grads)
    }

    /// Total log-likelihood (nats) of `z` under a per-channel K-component
    /// discrete logistic mixture; parameters are `[C,K]`.
    pub fn mixture_log_prob(&mut self, z: Var, mu: Var, log_s: Var, logits: Var) -> Result<Var> {
        let (c, _, _) = self.chw(z)?;
        let k = match self.shape(mu) {
            [pc, k] if *pc == c => *k,
            s => {
                return Err(Error::contract(format!(
                    "mixture parameters {s:?} for {c} channels"
                )))
            }
        };
        if k == 0 {
            return Err(Error::contract("mixture needs at least one component"));
        }
        self.same_shape(mu, log_s, "mixture log_s")?;
        self.same_shape(mu, logits, "mixture logits")?;
        let (lp, _) = self.mixture_eval(z, mu, log_s, logits, false);
        let rg = self.rg(z) || self.rg(mu) || self.rg(log_s) || self.rg(logits);
        Ok(self.push(
            Tensor::scalar(lp as f32),
            Op::Mixture {
                z,
                mu,
                log_s,
                logits,
            },
            rg,
            "mixture log-prob",
        ))
    }

    fn mixture_eval(
        &self,
        z: Var,
        mu: Var,
        log_s: Var,
        logits: Var,
        want_grad: bool,
    ) -> (f64, Option<[Vec<f32>; 4]>) {
        let zt = self.value(z);
        let plane = zt.len() / zt.shape()[0];
        let k = self.shape(mu)[1];
        let widen =
            |v: Var| -> Vec<f64> { self.value(v).data().iter().map(|&x| x as f64).collect() };
        let (m, l, g) = (widen(mu), widen(log_s), widen(logits));
        let mut total = 0.0;
        let mut grads = want_grad.then(|| {
            [
                vec![0.0f32; zt.len()],
                vec![0.0f32; m.len()],
                vec![0.0f32; m.len()],
                vec![0.0f32; m.len()],
            ]
        });
        for (i, &zv) in zt.data().iter().enumerate() {
            let r = (i / plane) * k..(i / plane + 1) * k;
            let e = discrete_logistic_mixture(
                zv as f64,
                &m[r.clone()],
                &l[r.clone()],
                &g[r.clone()],
                None,
                None,
            );
            total += e.log_p;
            if let Some([gz, gm, gl, gg]) = grads.as_mut() {
                gz[i] = e.d_z as f32;
                for (j, idx) in r.enumerate() {
                    gm[idx] += e.d_mu[j] as f32;
                    gl[idx] += e.d_log_s[j] as f32;
                    gg[idx] += e.d_logits[j] as f32;
                }
            }
        }
        (total, grads)
    }

    /// Reverse-mode sweep from a scalar `loss`. Allowed once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Autodiff(
                "backward already ran on this graph; call reset_backward first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.check_finite()?;
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            params: self.params.clone(),
        })
    }

    /// Allows another `backward` on this graph.
    pub fn reset_backward(&mut self) {
        self.backward_done = false;
    }

    fn propagate(&self, idx: usize, gout: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let acc = |v: Var, g: &[f32], grads: &mut [Option<Vec<f32>>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            // Nodes are created after their inputs, so v.0 < idx always.
            assert!(v.0 < idx, "graph cycle");
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, &x) in existing.iter_mut().zip(g) {
                        *e += x;
                    }
                }
                slot @ None => *slot = Some(g.to_vec()),
            }
        };
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let (gx, gw, gb) =
                    conv_backward(self.value(*x).data(), self.value(*w).data(), gout, geom);
                acc(*x, &gx, grads);
                acc(*w, &gw, grads);
                acc(*b, &gb, grads);
            }
            Op::Relu(x) => {
                let g: Vec<f32> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                acc(*x, &g, grads);
            }
            Op::Sigmoid(x) => {
                let g: Vec<f32> = node
                    .value
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect();
                acc(*x, &g, grads);
            }
            Op::Add(a, b) => {
                acc(*a, gout, grads);
                acc(*b, gout, grads);
            }
            Op::Sub(a, b) => {
                acc(*a, gout, grads);
                let neg: Vec<f32> = gout.iter().map(|g| -g).collect();
                acc(*b, &neg, grads);
            }
            Op::Mul(a, b) => {
                let ga: Vec<f32> = gout
                    .iter()
                    .zip(self.value(*b).data())
                    .map(|(g, y)| g * y)
                    .collect();
                let gb: Vec<f32> = gout
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(g, x)| g * x)
                    .collect();
                acc(*a, &ga, grads);
                acc(*b, &gb, grads);
            }
            Op::Scale(x, f) => {
                let g: Vec<f32> = gout.iter().map(|g| g * f).collect();
                acc(*x, &g, grads);
            }
            Op::Normalize { x, scale } => {
                let g: Vec<f32> = gout.iter().map(|g| g / scale).collect();
                acc(*x, &g, grads);
            }
            Op::RoundSte(x) | Op::Reshape(x) => acc(*x, gout, grads),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, &gout[off..off + n], grads);
                    off += n;
                }
            }
            Op::Channels { x, start } => {
                let xt = self.value(*x);
                let plane = xt.len() / xt.shape()[0];
                let mut g = vec![0.0f32; xt.len()];
                g[start * plane..start * plane + gout.len()].copy_from_slice(gout);
                acc(*x, &g, grads);
            }
            Op::Gather { x, lattice } => {
                let (c, h, w) = self.value(*x).chw().expect("rank-3 gather input");
                let (oh, ow) = (h / lattice.row_step, w / lattice.col_step);
                let mut g = vec![0.0f32; c * h * w];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            g[ch * h * w + lattice.index(h, w, i, j)] +=
                                gout[(ch * oh + i) * ow + j];
                        }
                    }
                }
                acc(*x, &g, grads);
            }
            Op::Scatter { parts } => {
                let (c, h, w) = node.value.chw().expect("rank-3 scatter output");
                for &(p, lat) in parts {
                    let (_, ph, pw) = self.value(p).chw().expect("rank-3 scatter part");
                    let mut g = vec![0.0f32; c * ph * pw];
                    for ch in 0..c {
                        for i in 0..ph {
                            for j in 0..pw {
                                g[(ch * ph + i) * pw + j] =
                                    gout[ch * h * w + lat.index(h, w, i, j)];
                            }
                        }
                    }
                    acc(p, &g, grads);
                }
            }
            Op::Sum(x) => {
                let g = vec![gout[0]; self.value(*x).len()];
                acc(*x, &g, grads);
            }
            Op::Logistic {
                z,
                mu,
                log_s,
                per_channel,
            } => {
                let (_, g) = self.logistic_eval(*z, *mu, *log_s, *per_channel, true);
                let [gz, gm, gl] = g.expect("requested gradients");
                let s = gout[0];
                let scaled = |v: Vec<f32>| -> Vec<f32> { v.into_iter().map(|x| x * s).collect() };
                acc(*z, &scaled(gz), grads);
                acc(*mu, &scaled(gm), grads);
                acc(*log_s, &scaled(gl), grads);
            }
            Op::Mixture {
                z,
                mu,
                log_s,
                logits,
            } => {
                let (_, g) = self.mixture_eval(*z, *mu, *log_s, *logits, true);
                let [gz, gm, gl, gg] = g.expect("requested gradients");
                let s = gout[0];
                let scaled = |v: Vec<f32>| -> Vec<f32> { v.into_iter().map(|x| x * s).collect() };
                acc(*z, &scaled(gz), grads);
                acc(*mu, &scaled(gm), grads);
                acc(*log_s, &scaled(gl), grads);
                acc(*logits, &scaled(gg), grads);
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
    params: HashMap<usize, Var>,
}

impl Gradients {
    /// Gradient with respect to any node, if one reached it.
    pub fn wrt(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shapes[v.0].clone(), g.clone()).ok()
    }

    /// Gradient for a parameter tensor that entered via [`Graph::param`].
    /// Parameters the loss never touched get zeros.
    pub fn get(&self, param: &Tensor) -> Tensor {
        self.params
            .get(&(param.data().as_ptr() as usize))
            .and_then(|&v| self.wrt(v))
            .unwrap_or_else(|| Tensor::zeros(param.shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::conv::Padding;

    #[test]
    fn square_at_three_has_gradient_six() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![1, 1, 1], vec![3.0]).unwrap());
        let y = g.mul(x, x).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_of_relu_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![1, 1, 2], vec![-1.0, 2.0]).unwrap());
        let r = g.relu(x);
        let l = g.sum(r);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(1.0));
        let l = g.sum(x);
        g.backward(l).unwrap();
        assert!(matches!(g.backward(l), Err(Error::Autodiff(_))));
        g.reset_backward();
        assert!(g.backward(l).is_ok());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(&[1, 1, 2]));
        assert!(matches!(g.backward(x), Err(Error::Autodiff(_))));
    }

    #[test]
    fn shared_parameter_accumulates() {
        let p = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let mut g = Graph::new();
        let a = g.param(&p);
        let b = g.param(&p);
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(&p).data(), &[4.0]);
    }

    #[test]
    fn gather_scatter_round_trip() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2, 4], (0..8).map(|v| v as f32).collect()).unwrap());
        let lats = [
            Lattice::new(0, 0, 2, 2),
            Lattice::new(0, 1, 2, 2),
            Lattice::new(1, 0, 2, 2),
            Lattice::new(1, 1, 2, 2),
        ];
        let parts: Vec<(Var, Lattice)> =
            lats.iter().map(|&l| (g.gather(x, l).unwrap(), l)).collect();
        assert_eq!(g.value(parts[1].0).data(), &[1.0, 3.0]);
        let y = g.scatter(&parts, 2, 4).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn round_ste_passes_gradient_through() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![1, 1, 3], vec![0.5, -0.5, 1.2]).unwrap());
        let r = g.round_ste(x);
        assert_eq!(g.value(r).data(), &[1.0, 0.0, 1.0]);
        let l = g.sum(r);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn conv_node_matches_tensor_conv() {
        let mut layer = ConvLayerSpec::zeros(2, 2, 3, 3, Padding::ReplicateBoth);
        for (i, w) in layer.weight.data_mut().iter_mut().enumerate() {
            *w = ((i * 7) % 11) as f32 * 0.1 - 0.5;
        }
        let x = Tensor::new(vec![2, 4, 4], (0..32).map(|v| (v as f32).sin()).collect()).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = g.conv(xv, &layer, Axis::Width).unwrap();
        assert_eq!(g.value(y), &crate::numerics::conv2d(&x, &layer).unwrap());
    }
}
