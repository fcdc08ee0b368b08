//! Reverse-mode automatic differentiation over a flat tape.
//!
//! Every operation appends a node holding its value and enough of its inputs
//! to run the backward rule. Nodes are only ever appended, so the tape order
//! is a topological order and `backward` is a single reverse sweep.

use std::sync::Arc;

use num_complex::Complex64;

use super::gemm::{gemm, View};
use super::spectral::{mix, mix_backward, SpectralPlan, SpectralWeights};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Gelu(Var),
    Add(Var, Var),
    Sum(Var),
    Mse { pred: Var, target: Var },
    DeepOnet { branch: Var, trunk: Var, bias: Var },
    Spectral { x: Var, w: [Var; 4], plan: Arc<SpectralPlan>, xhat: Vec<Complex64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient after [`Tape::backward`]; `None` if the node did not receive one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Affine map over the last axis: `y = x Wᵀ + b` with `W` of shape `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if ws.len() != 2 || bs != [ws[0]] || xs.last() != Some(&ws[1]) {
            return Err(Error::shape(format!("linear: x {xs:?}, W {ws:?}, b {bs:?}")));
        }
        let (out, inp) = (ws[0], ws[1]);
        let rows = self.value(x).numel() / inp;
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = out;
        let mut y = vec![0.0; rows * out];
        let bias = self.value(b).data();
        for r in 0..rows {
            y[r * out..(r + 1) * out].copy_from_slice(bias);
        }
        gemm(
            View::row_major(self.value(x).data(), rows, inp),
            View::row_major(self.value(w).data(), out, inp).t(),
            1.0,
            &mut y,
            out,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(&shape, y)?, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let t = Tensor::new(v.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| gelu(a)).collect();
        let t = Tensor::new(v.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Gelu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(format!("add: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::shape(format!("mse: {:?} vs {:?}", p.shape(), t.shape())));
        }
        let n = p.numel().max(1) as f64;
        let s = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(s), Op::Mse { pred, target }, rg))
    }

    /// Branch–trunk product. `branch` is `[B, d_o·N_tr]`, `trunk` `[N_x, N_tr]`,
    /// `bias` `[d_o]`; the result `[B, d_o·N_x]` is component-blocked:
    /// `out[b, c·N_x + j] = Σ_k branch[b, c·N_tr + k] trunk[j, k] + bias[c]`.
    pub fn deeponet_product(&mut self, branch: Var, trunk: Var, bias: Var) -> Result<Var> {
        let (bs, ts, cs) = (self.value(branch).shape(), self.value(trunk).shape(), self.value(bias).shape());
        if bs.len() != 2 || ts.len() != 2 || cs.len() != 1 || bs[1] != cs[0] * ts[1] {
            return Err(Error::shape(format!("deeponet: branch {bs:?}, trunk {ts:?}, bias {cs:?}")));
        }
        let (nb, nx, ntr, d_o) = (bs[0], ts[0], ts[1], cs[0]);
        let mut out = vec![0.0; nb * d_o * nx];
        let br = self.value(branch).data();
        let tr = self.value(trunk).data();
        let bias_v = self.value(bias).data();
        for c in 0..d_o {
            for b in 0..nb {
                out[b * d_o * nx + c * nx..b * d_o * nx + (c + 1) * nx].fill(bias_v[c]);
            }
            let a = View { data: &br[c * ntr..], rows: nb, cols: ntr, rs: d_o * ntr, cs: 1 };
            gemm(a, View::row_major(tr, nx, ntr).t(), 1.0, &mut out[c * nx..], d_o * nx);
        }
        let rg = self.rg(branch) || self.rg(trunk) || self.rg(bias);
        Ok(self.push(Tensor::new(&[nb, d_o * nx], out)?, Op::DeepOnet { branch, trunk, bias }, rg))
    }

    /// Truncated spectral convolution on a channel-last field `[B, n1, n2, C]`.
    /// `w` holds the real and imaginary parts of the two weight blocks,
    /// `[w1_re, w1_im, w2_re, w2_im]`, each `[C, C, k, k]`.
    pub fn spectral_conv(&mut self, x: Var, w: [Var; 4], plan: Arc<SpectralPlan>) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || xs[1] != plan.n1() || xs[2] != plan.n2() {
            return Err(Error::shape(format!(
                "spectral conv on {}x{} grid got input {xs:?}",
                plan.n1(),
                plan.n2()
            )));
        }
        let (nb, c) = (xs[0], xs[3]);
        let k = plan.modes();
        for v in w {
            if self.value(v).shape() != [c, c, k, k] {
                return Err(Error::shape(format!("spectral weight {:?}, expected {:?}", self.value(v).shape(), [c, c, k, k])));
            }
        }
        let xhat = plan.analyze(self.value(x).data(), nb, c);
        let weights = SpectralWeights {
            re: [self.value(w[0]).data(), self.value(w[2]).data()],
            im: [self.value(w[1]).data(), self.value(w[3]).data()],
        };
        let o = mix(&plan, &xhat, &weights, nb, c);
        let y = plan.synthesize(&o, nb, c);
        let rg = self.rg(x) || w.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::new(&xs, y)?, Op::Spectral { x, w, plan, xhat }, rg))
    }

    /// Populates gradients of `loss` with respect to every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = self.grads[id].take() else { continue };
            if self.nodes[id].requires_grad {
                self.propagate(id, &g)?;
            }
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64], &Tensor)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let g = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(g, &self.nodes[v.0].value);
    }

    fn propagate(&mut self, id: usize, g: &[f64]) -> Result<()> {
        // Temporarily take the op out so inputs can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (out, inp) = {
                    let s = self.value(*w).shape();
                    (s[0], s[1])
                };
                let rows = self.value(*x).numel() / inp;
                if self.rg(*x) {
                    let wv = self.value(*w).data().to_vec();
                    self.accumulate(*x, |gx, _| {
                        gemm(View::row_major(g, rows, out), View::row_major(&wv, out, inp), 1.0, gx, inp)
                    });
                }
                if self.rg(*w) {
                    let xv = self.value(*x).data().to_vec();
                    self.accumulate(*w, |gw, _| {
                        gemm(View::row_major(g, rows, out).t(), View::row_major(&xv, rows, inp), 1.0, gw, inp)
                    });
                }
                self.accumulate(*b, |gb, _| {
                    for r in 0..rows {
                        for (a, v) in gb.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                            *a += v;
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data().to_vec();
                self.accumulate(*x, |gx, _| {
                    for ((a, v), xi) in gx.iter_mut().zip(g).zip(&xv) {
                        if *xi > 0.0 {
                            *a += v;
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data().to_vec();
                self.accumulate(*x, |gx, _| {
                    for ((a, v), xi) in gx.iter_mut().zip(g).zip(&xv) {
                        *a += v * gelu_grad(*xi);
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(v, |gv, _| gv.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::Sum(x) => {
                self.accumulate(*x, |gx, _| gx.iter_mut().for_each(|v| *v += g[0]));
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data().to_vec();
                let t = self.value(*target).data().to_vec();
                let scale = 2.0 * g[0] / p.len().max(1) as f64;
                self.accumulate(*pred, |gp, _| {
                    for ((a, pi), ti) in gp.iter_mut().zip(&p).zip(&t) {
                        *a += scale * (pi - ti);
                    }
                });
                self.accumulate(*target, |gt, _| {
                    for ((a, pi), ti) in gt.iter_mut().zip(&p).zip(&t) {
                        *a -= scale * (pi - ti);
                    }
                });
            }
            Op::DeepOnet { branch, trunk, bias } => {
                let (nb, nx, ntr, d_o) = {
                    let bs = self.value(*branch).shape();
                    let ts = self.value(*trunk).shape();
                    (bs[0], ts[0], ts[1], self.value(*bias).numel())
                };
                let ld = d_o * nx;
                if self.rg(*branch) {
                    let tr = self.value(*trunk).data().to_vec();
                    self.accumulate(*branch, |gb, _| {
                        for c in 0..d_o {
                            let gv = View { data: &g[c * nx..], rows: nb, cols: nx, rs: ld, cs: 1 };
                            gemm(gv, View::row_major(&tr, nx, ntr), 1.0, &mut gb[c * ntr..], d_o * ntr);
                        }
                    });
                }
                if self.rg(*trunk) {
                    let br = self.value(*branch).data().to_vec();
                    self.accumulate(*trunk, |gt, _| {
                        for c in 0..d_o {
                            let gv = View { data: &g[c * nx..], rows: nb, cols: nx, rs: ld, cs: 1 };
                            let bv = View { data: &br[c * ntr..], rows: nb, cols: ntr, rs: d_o * ntr, cs: 1 };
                            gemm(gv.t(), bv, 1.0, gt, ntr);
                        }
                    });
                }
                self.accumulate(*bias, |gc, _| {
                    for b in 0..nb {
                        for c in 0..d_o {
                            gc[c] += g[b * ld + c * nx..b * ld + (c + 1) * nx].iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::Spectral { x, w, plan, xhat } => {
                let xs = self.value(*x).shape().to_vec();
                let (nb, c) = (xs[0], xs[3]);
                let k = plan.modes();
                let norm = 1.0 / (plan.n1() * plan.n2()) as f64;
                let mut go = plan.analyze(g, nb, c);
                for (idx, v) in go.iter_mut().enumerate() {
                    let ky = (idx / c) % k;
                    *v *= plan.column_weight(ky) * norm;
                }
                let wlen = c * c * k * k;
                let mut gw_re = [vec![0.0; wlen], vec![0.0; wlen]];
                let mut gw_im = [vec![0.0; wlen], vec![0.0; wlen]];
                let mut gx = {
                    let weights = SpectralWeights {
                        re: [self.value(w[0]).data(), self.value(w[2]).data()],
                        im: [self.value(w[1]).data(), self.value(w[3]).data()],
                    };
                    mix_backward(plan, xhat, &go, &weights, nb, c, &mut gw_re, &mut gw_im)
                };
                if self.rg(*x) {
                    for (idx, v) in gx.iter_mut().enumerate() {
                        let ky = (idx / c) % k;
                        *v /= plan.column_weight(ky) * norm;
                    }
                    let gxr = plan.synthesize(&gx, nb, c);
                    self.accumulate(*x, |a, _| a.iter_mut().zip(&gxr).for_each(|(p, q)| *p += q));
                }
                let parts = [&gw_re[0], &gw_im[0], &gw_re[1], &gw_im[1]];
                for (v, part) in w.iter().zip(parts) {
                    self.accumulate(*v, |a, _| a.iter_mut().zip(part.iter()).for_each(|(p, q)| *p += q));
                }
            }
        }
        self.nodes[id].op = op;
        Ok(())
    }
}
