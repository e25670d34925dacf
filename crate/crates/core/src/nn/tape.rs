use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::kernels::{self, Conv2dSpec, ConvDims};
use super::{ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Arc<Vec<f64>>),
    Scale(Var, f64),
    AddBias(Var, Var),
    AddBroadcast(Var, Var),
    Matmul(Var, Var),
    Bmm(Var, Var),
    Transpose12(Var),
    Gelu(Var),
    Reshape(Var),
    ConcatLast(Vec<Var>),
    SliceLast { x: Var, start: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    BroadcastRows(Var),
    MovingAvg { x: Var, kernel: usize },
    Feb { x: Var, w: Var, modes: usize, spectrum: Vec<Complex64> },
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec },
    GroupNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    AvgPoolHw(Var),
    Softmax(Var),
    WeightedCe { logits: Var, labels: Vec<u8>, w: [f64; 2] },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode autodiff recording. A tape lives for one forward/backward
/// pass; parameters are copied in from a [`ParamStore`].
pub struct Tape {
    nodes: Vec<Node>,
    fft: FftPlanner<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn fft_inplace(planner: &mut FftPlanner<f64>, buf: &mut [Complex64], inverse: bool) {
    let plan = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    plan.process(buf);
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fft: FftPlanner::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(va.shape(), data);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape(), data);
        self.push(out, Op::Mul(a, b))
    }

    /// Elementwise product with a constant of the same size.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Var {
        let va = self.value(a);
        assert_eq!(va.len(), c.len(), "mul_const: size mismatch");
        let data = va.data().iter().zip(&c).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape(), data);
        self.push(out, Op::MulConst(a, Arc::new(c)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let va = self.value(a);
        let out = Tensor::new(va.shape(), va.data().iter().map(|x| x * s).collect());
        self.push(out, Op::Scale(a, s))
    }

    /// `x[..., n] + bias[n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let n = self.value(x).last_dim();
        assert_eq!(self.value(bias).len(), n, "add_bias: width mismatch");
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        self.push(out, Op::AddBias(x, bias))
    }

    /// `x[B, rest] + y[rest]`.
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Var {
        assert_eq!(&self.shape(x)[1..], self.shape(y), "add_broadcast: shape mismatch");
        let mut out = self.value(x).clone();
        let yv = self.value(y).data().to_vec();
        for chunk in out.data_mut().chunks_mut(yv.len()) {
            for (v, w) in chunk.iter_mut().zip(&yv) {
                *v += w;
            }
        }
        self.push(out, Op::AddBroadcast(x, y))
    }

    /// `a[n, k] · b[k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0], "matmul: {sa:?} x {sb:?}");
        let mut out = vec![0.0; sa[0] * sb[1]];
        kernels::matmul(self.value(a).data(), self.value(b).data(), &mut out, sa[0], sa[1], sb[1]);
        self.push(Tensor::new(&[sa[0], sb[1]], out), Op::Matmul(a, b))
    }

    /// `a[B, n, k] · b[B, k, m]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(
            sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1],
            "bmm: {sa:?} x {sb:?}"
        );
        let (bs, n, k, m) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * n * m];
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            kernels::matmul(
                &va[i * n * k..(i + 1) * n * k],
                &vb[i * k * m..(i + 1) * k * m],
                &mut out[i * n * m..(i + 1) * n * m],
                n,
                k,
                m,
            );
        }
        self.push(Tensor::new(&[bs, n, m], out), Op::Bmm(a, b))
    }

    /// Swaps the last two axes of a 3-D tensor.
    pub fn transpose12(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "transpose12 needs 3-D input");
        let out = transpose_last2(self.value(x).data(), s[0], s[1], s[2]);
        self.push(Tensor::new(&[s[0], s[2], s[1]], out), Op::Transpose12(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let out = Tensor::new(vx.shape(), vx.data().iter().map(|&v| kernels::gelu(v)).collect());
        self.push(out, Op::Gelu(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshaped(shape);
        self.push(out, Op::Reshape(x))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Var {
        let lead = self.shape(xs[0])[..self.shape(xs[0]).len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let s = self.shape(v);
                assert_eq!(&s[..s.len() - 1], &lead[..], "concat_last: leading shape mismatch");
                s[s.len() - 1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(Tensor::new(&shape, out), Op::ConcatLast(xs.to_vec()))
    }

    /// `x[..., start..start+len]`.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.shape(x).to_vec();
        let w = s[s.len() - 1];
        assert!(start + len <= w, "slice_last out of range");
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(w)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = s;
        *shape.last_mut().expect("non-empty shape") = len;
        self.push(Tensor::new(&shape, out), Op::SliceLast { x, start })
    }

    /// Rows `idx` of `x` viewed as `[n, rest]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let vx = self.value(x);
        let s = vx.shape().to_vec();
        let w = vx.len() / s[0];
        let mut out = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            out.extend_from_slice(&vx.data()[i * w..(i + 1) * w]);
        }
        let mut shape = s;
        shape[0] = idx.len();
        self.push(Tensor::new(&shape, out), Op::GatherRows { x, idx: idx.to_vec() })
    }

    /// Repeats a vector `[m]` into `[rows, m]`.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Var {
        let v = self.value(x).data().to_vec();
        let m = v.len();
        let out: Vec<f64> = (0..rows).flat_map(|_| v.iter().copied()).collect();
        self.push(Tensor::new(&[rows, m], out), Op::BroadcastRows(x))
    }

    /// Centered moving average along axis 1 of `[B, L, d]` with reflect
    /// padding. `kernel` must be odd with `(kernel-1)/2 < L`.
    pub fn moving_avg(&mut self, x: Var, kernel: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "moving_avg needs [B, L, d]");
        let (bs, l, d) = (s[0], s[1], s[2]);
        assert!(kernel % 2 == 1, "moving_avg kernel must be odd");
        let half = (kernel / 2) as isize;
        assert!(kernel == 1 || (half as usize) < l, "moving_avg kernel too large");
        let vx = self.value(x).data();
        let mut out = vec![0.0; bs * l * d];
        let inv = 1.0 / kernel as f64;
        for b in 0..bs {
            for t in 0..l {
                let o = &mut out[(b * l + t) * d..][..d];
                for j in -half..=half {
                    let src = kernels::reflect(t as isize + j, l);
                    let xr = &vx[(b * l + src) * d..][..d];
                    for (ov, xv) in o.iter_mut().zip(xr) {
                        *ov += xv;
                    }
                }
                o.iter_mut().for_each(|v| *v *= inv);
            }
        }
        self.push(Tensor::new(&s, out), Op::MovingAvg { x, kernel })
    }

    /// Frequency-enhanced block: real FFT of `x[B, L, d]` along L, the lowest
    /// `modes` bins mixed by complex weights `w[modes, d, d, 2]`, other bins
    /// dropped, inverse real FFT back to `[B, L, d]`.
    pub fn feb(&mut self, x: Var, w: Var, modes: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3, "feb needs [B, L, d]");
        let (bs, l, d) = (s[0], s[1], s[2]);
        assert!(modes >= 1 && modes <= l / 2 + 1, "feb: modes out of range");
        assert_eq!(self.shape(w), &[modes, d, d, 2], "feb: weight shape");
        let xv = self.value(x).data().to_vec();
        let wv = self.value(w).data().to_vec();

        // spectrum[b][k][i]
        let mut spectrum = vec![Complex64::new(0.0, 0.0); bs * modes * d];
        let mut buf = vec![Complex64::new(0.0, 0.0); l];
        for b in 0..bs {
            for i in 0..d {
                for t in 0..l {
                    buf[t] = Complex64::new(xv[(b * l + t) * d + i], 0.0);
                }
                fft_inplace(&mut self.fft, &mut buf, false);
                for k in 0..modes {
                    spectrum[(b * modes + k) * d + i] = buf[k];
                }
            }
        }

        let mut out = vec![0.0; bs * l * d];
        for b in 0..bs {
            for o in 0..d {
                buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                for k in 0..modes {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..d {
                        let wi = ((k * d + i) * d + o) * 2;
                        acc += spectrum[(b * modes + k) * d + i] * Complex64::new(wv[wi], wv[wi + 1]);
                    }
                    place_hermitian(&mut buf, k, acc);
                }
                fft_inplace(&mut self.fft, &mut buf, true);
                for t in 0..l {
                    out[(b * l + t) * d + o] = buf[t].re / l as f64;
                }
            }
        }
        self.push(Tensor::new(&s, out), Op::Feb { x, w, modes, spectrum })
    }

    /// `x[B, Cin, H, W]` convolved with `w[Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Var {
        let dims = self.conv_dims(x, w, &spec);
        let bias = b.map(|b| self.value(b).data().to_vec());
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            bias.as_deref(),
            &dims,
            &spec,
        );
        let t = Tensor::new(&[dims.b, dims.cout, dims.ho, dims.wo], out);
        self.push(t, Op::Conv2d { x, w, b, spec })
    }

    fn conv_dims(&self, x: Var, w: Var, spec: &Conv2dSpec) -> ConvDims {
        let sx = self.shape(x);
        let sw = self.shape(w);
        assert!(sx.len() == 4 && sw.len() == 4, "conv2d: 4-D input and weight required");
        assert_eq!(sx[1] % spec.groups, 0, "conv2d: channels not divisible by groups");
        assert_eq!(sw[0] % spec.groups, 0, "conv2d: out channels not divisible by groups");
        assert_eq!(sw[1], sx[1] / spec.groups, "conv2d: weight/input channel mismatch");
        let ho = spec.out_size(sx[2], sw[2]).expect("conv2d: input smaller than kernel span");
        let wo = spec.out_size(sx[3], sw[3]).expect("conv2d: input smaller than kernel span");
        ConvDims {
            b: sx[0],
            cin: sx[1],
            h: sx[2],
            w: sx[3],
            cout: sw[0],
            kh: sw[2],
            kw: sw[3],
            ho,
            wo,
        }
    }

    /// Per-sample normalization over `(C, H, W)` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "group_norm needs [B, C, H, W]");
        let (bs, c, hw) = (s[0], s[1], s[2] * s[3]);
        let n = c * hw;
        let (g, be) = (self.value(gamma).data().to_vec(), self.value(beta).data().to_vec());
        assert!(g.len() == c && be.len() == c, "group_norm: affine size");
        let xv = self.value(x).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; bs];
        for b in 0..bs {
            let xs = &xv[b * n..(b + 1) * n];
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + NORM_EPS).sqrt();
            rstd[b] = r;
            for ch in 0..c {
                for p in 0..hw {
                    let i = b * n + ch * hw + p;
                    xhat[i] = (xv[i] - mean) * r;
                    out[i] = xhat[i] * g[ch] + be[ch];
                }
            }
        }
        self.push(Tensor::new(&s, out), Op::GroupNorm { x, gamma, beta, xhat, rstd })
    }

    /// Normalization over the last axis with per-feature affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let s = self.shape(x).to_vec();
        let n = s[s.len() - 1];
        let (g, be) = (self.value(gamma).data().to_vec(), self.value(beta).data().to_vec());
        assert!(g.len() == n && be.len() == n, "layer_norm: affine size");
        let xv = self.value(x).data();
        let rows = xv.len() / n;
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let xs = &xv[r * n..(r + 1) * n];
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let i = r * n + j;
                xhat[i] = (xv[i] - mean) * rs;
                out[i] = xhat[i] * g[j] + be[j];
            }
        }
        self.push(Tensor::new(&s, out), Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    /// Mean over the spatial axes: `[B, C, H, W]` → `[B, C]`.
    pub fn avg_pool_hw(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "avg_pool_hw needs [B, C, H, W]");
        let hw = s[2] * s[3];
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        self.push(Tensor::new(&[s[0], s[1]], out), Op::AvgPoolHw(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let n = vx.last_dim();
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_inplace(row);
        }
        let t = Tensor::new(vx.shape(), out);
        self.push(t, Op::Softmax(x))
    }

    /// Mean over the batch of `-w[y] * log softmax(logits)[y]`, computed
    /// from logits with log-sum-exp.
    pub fn weighted_ce(&mut self, logits: Var, labels: &[u8], w: [f64; 2]) -> Var {
        let s = self.shape(logits);
        assert!(s.len() == 2 && s[1] == 2 && s[0] == labels.len(), "weighted_ce: shape");
        let z = self.value(logits).data();
        let loss = weighted_ce_from_logits(z, labels, w);
        self.push(
            Tensor::scalar(loss),
            Op::WeightedCe { logits, labels: labels.to_vec(), w },
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        let mut planner = FftPlanner::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, &mut planner);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        planner: &mut FftPlanner<f64>,
    ) {
        let node = &self.nodes[i];
        let gd = g.data();
        let mut acc = |v: Var, data: Vec<f64>| {
            let shape = self.nodes[v.0].value.shape();
            let t = Tensor::new(shape, data);
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, gd.iter().zip(vb).map(|(g, y)| g * y).collect());
                acc(*b, gd.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::MulConst(a, c) => acc(*a, gd.iter().zip(c.iter()).map(|(g, y)| g * y).collect()),
            Op::Scale(a, s) => acc(*a, gd.iter().map(|g| g * s).collect()),
            Op::AddBias(x, b) => {
                let n = self.value(*b).len();
                let mut db = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                acc(*x, gd.to_vec());
                acc(*b, db);
            }
            Op::AddBroadcast(x, y) => {
                let n = self.value(*y).len();
                let mut dy = vec![0.0; n];
                for chunk in gd.chunks(n) {
                    for (d, g) in dy.iter_mut().zip(chunk) {
                        *d += g;
                    }
                }
                acc(*x, gd.to_vec());
                acc(*y, dy);
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let mut da = vec![0.0; n * k];
                kernels::matmul_bt(gd, self.value(*b).data(), &mut da, n, m, k);
                let mut db = vec![0.0; k * m];
                kernels::matmul_at(self.value(*a).data(), gd, &mut db, n, k, m);
                acc(*a, da);
                acc(*b, db);
            }
            Op::Bmm(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, n, k, m) = (sa[0], sa[1], sa[2], sb[2]);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let mut da = vec![0.0; bs * n * k];
                let mut db = vec![0.0; bs * k * m];
                for i in 0..bs {
                    let gi = &gd[i * n * m..(i + 1) * n * m];
                    kernels::matmul_bt(gi, &vb[i * k * m..(i + 1) * k * m], &mut da[i * n * k..(i + 1) * n * k], n, m, k);
                    kernels::matmul_at(&va[i * n * k..(i + 1) * n * k], gi, &mut db[i * k * m..(i + 1) * k * m], n, k, m);
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Transpose12(x) => {
                let s = self.shape(*x);
                // g has shape [B, m, n]; transpose back
                acc(*x, transpose_last2(gd, s[0], s[2], s[1]));
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                acc(*x, gd.iter().zip(vx).map(|(g, &v)| g * kernels::gelu_grad(v)).collect());
            }
            Op::Reshape(x) => acc(*x, gd.to_vec()),
            Op::ConcatLast(xs) => {
                let widths: Vec<usize> = xs.iter().map(|&v| self.value(v).last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = gd.len() / total;
                let mut parts: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (p, &w) in parts.iter_mut().zip(&widths) {
                        p.extend_from_slice(&gd[off..off + w]);
                        off += w;
                    }
                }
                for (&v, p) in xs.iter().zip(parts) {
                    acc(v, p);
                }
            }
            Op::SliceLast { x, start } => {
                let w = self.value(*x).last_dim();
                let len = g.last_dim();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (r, row) in gd.chunks(len).enumerate() {
                    dx[r * w + start..r * w + start + len].copy_from_slice(row);
                }
                acc(*x, dx);
            }
            Op::GatherRows { x, idx } => {
                let vx = self.value(*x);
                let w = vx.len() / vx.dim(0);
                let mut dx = vec![0.0; vx.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for (d, g) in dx[src * w..(src + 1) * w].iter_mut().zip(&gd[r * w..(r + 1) * w]) {
                        *d += g;
                    }
                }
                acc(*x, dx);
            }
            Op::BroadcastRows(x) => {
                let m = self.value(*x).len();
                let mut dx = vec![0.0; m];
                for row in gd.chunks(m) {
                    for (d, g) in dx.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                acc(*x, dx);
            }
            Op::MovingAvg { x, kernel } => {
                let s = self.shape(*x);
                let (bs, l, d) = (s[0], s[1], s[2]);
                let half = (*kernel / 2) as isize;
                let inv = 1.0 / *kernel as f64;
                let mut dx = vec![0.0; bs * l * d];
                for b in 0..bs {
                    for t in 0..l {
                        let gr = &gd[(b * l + t) * d..][..d];
                        for j in -half..=half {
                            let src = kernels::reflect(t as isize + j, l);
                            for (dv, gv) in dx[(b * l + src) * d..][..d].iter_mut().zip(gr) {
                                *dv += gv * inv;
                            }
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Feb { x, w, modes, spectrum } => {
                let (dx, dw) = self.feb_backward(*x, *w, *modes, spectrum, gd, planner);
                acc(*x, dx);
                acc(*w, dw);
            }
            Op::Conv2d { x, w, b, spec } => {
                let dims = self.conv_dims(*x, *w, spec);
                let (dx, dw, db) =
                    kernels::conv2d_backward(self.value(*x).data(), self.value(*w).data(), gd, &dims, spec);
                acc(*x, dx);
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::GroupNorm { x, gamma, beta, xhat, rstd } => {
                let s = self.shape(*x);
                let (bs, c, hw) = (s[0], s[1], s[2] * s[3]);
                let gam = self.value(*gamma).data();
                let n = c * hw;
                let mut dx = vec![0.0; xhat.len()];
                let mut dg = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for b in 0..bs {
                    let mut dxhat = vec![0.0; n];
                    for ch in 0..c {
                        for p in 0..hw {
                            let i = b * n + ch * hw + p;
                            dxhat[ch * hw + p] = gd[i] * gam[ch];
                            dg[ch] += gd[i] * xhat[i];
                            dbeta[ch] += gd[i];
                        }
                    }
                    norm_input_grad(&dxhat, &xhat[b * n..(b + 1) * n], rstd[b], &mut dx[b * n..(b + 1) * n]);
                }
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, dbeta);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gam = self.value(*gamma).data();
                let n = gam.len();
                let mut dx = vec![0.0; xhat.len()];
                let mut dg = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for (r, &rs) in rstd.iter().enumerate() {
                    let mut dxhat = vec![0.0; n];
                    for j in 0..n {
                        let i = r * n + j;
                        dxhat[j] = gd[i] * gam[j];
                        dg[j] += gd[i] * xhat[i];
                        dbeta[j] += gd[i];
                    }
                    norm_input_grad(&dxhat, &xhat[r * n..(r + 1) * n], rs, &mut dx[r * n..(r + 1) * n]);
                }
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, dbeta);
            }
            Op::AvgPoolHw(x) => {
                let s = self.shape(*x);
                let hw = s[2] * s[3];
                let dx = gd.iter().flat_map(|&v| std::iter::repeat_n(v / hw as f64, hw)).collect();
                acc(*x, dx);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(gd.chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::WeightedCe { logits, labels, w } => {
                let z = self.value(*logits).data();
                let bsz = labels.len() as f64;
                let mut dz = vec![0.0; z.len()];
                for (r, &y) in labels.iter().enumerate() {
                    let mut p = [z[2 * r], z[2 * r + 1]];
                    softmax_inplace(&mut p);
                    let wy = w[y as usize] * gd[0] / bsz;
                    for c in 0..2 {
                        let onehot = if c == y as usize { 1.0 } else { 0.0 };
                        dz[2 * r + c] = wy * (p[c] - onehot);
                    }
                }
                acc(*logits, dz);
            }
            Op::Sum(x) => acc(*x, vec![gd[0]; self.value(*x).len()]),
        }
    }

    fn feb_backward(
        &self,
        x: Var,
        w: Var,
        modes: usize,
        spectrum: &[Complex64],
        gd: &[f64],
        planner: &mut FftPlanner<f64>,
    ) -> (Vec<f64>, Vec<f64>) {
        let s = self.shape(x);
        let (bs, l, d) = (s[0], s[1], s[2]);
        let wv = self.value(w).data();
        let mut dx = vec![0.0; bs * l * d];
        let mut dw = vec![0.0; modes * d * d * 2];
        let mut buf = vec![Complex64::new(0.0, 0.0); l];
        let mut gy = vec![Complex64::new(0.0, 0.0); modes * d];
        for b in 0..bs {
            // gradient w.r.t. the kept output bins
            for o in 0..d {
                for t in 0..l {
                    buf[t] = Complex64::new(gd[(b * l + t) * d + o], 0.0);
                }
                fft_inplace(planner, &mut buf, false);
                for k in 0..modes {
                    let c = if k == 0 || 2 * k == l { 1.0 } else { 2.0 };
                    gy[k * d + o] = buf[k] * (c / l as f64);
                }
            }
            // through the complex mixing
            let mut gx = vec![Complex64::new(0.0, 0.0); modes * d];
            for k in 0..modes {
                for i in 0..d {
                    let xi = spectrum[(b * modes + k) * d + i];
                    for o in 0..d {
                        let wi = ((k * d + i) * d + o) * 2;
                        let wc = Complex64::new(wv[wi], wv[wi + 1]);
                        let g = gy[k * d + o];
                        gx[k * d + i] += g * wc.conj();
                        let gwc = g * xi.conj();
                        dw[wi] += gwc.re;
                        dw[wi + 1] += gwc.im;
                    }
                }
            }
            // through the forward transform
            for i in 0..d {
                buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                for k in 0..modes {
                    buf[k] = gx[k * d + i];
                }
                fft_inplace(planner, &mut buf, true);
                for t in 0..l {
                    dx[(b * l + t) * d + i] = buf[t].re;
                }
            }
        }
        (dx, dw)
    }
}

/// Places bin `k` of a real signal's spectrum (and its mirror) into a full
/// length-L buffer. DC and Nyquist keep only the real part.
fn place_hermitian(buf: &mut [Complex64], k: usize, v: Complex64) {
    let l = buf.len();
    if k == 0 || 2 * k == l {
        buf[k] = Complex64::new(v.re, 0.0);
    } else {
        buf[k] = v;
        buf[l - k] = v.conj();
    }
}

fn norm_input_grad(dxhat: &[f64], xhat: &[f64], rstd: f64, dx: &mut [f64]) {
    let n = dxhat.len() as f64;
    let s1: f64 = dxhat.iter().sum();
    let s2: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
    for j in 0..dxhat.len() {
        dx[j] = rstd / n * (n * dxhat[j] - s1 - xhat[j] * s2);
    }
}

fn transpose_last2(x: &[f64], b: usize, n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..b {
        for r in 0..n {
            for c in 0..m {
                out[(i * m + c) * n + r] = x[(i * n + r) * m + c];
            }
        }
    }
    out
}

pub fn softmax_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Batch mean of `-w[y] * log softmax(z)[y]` for two-class logits.
pub fn weighted_ce_from_logits(z: &[f64], labels: &[u8], w: [f64; 2]) -> f64 {
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let (a, b) = (z[2 * r], z[2 * r + 1]);
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        total += -w[y as usize] * (z[2 * r + y as usize] - lse);
    }
    total / labels.len() as f64
}

/// Gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Per-parameter gradients aligned with `store`; zeros for parameters
    /// that did not take part in the pass.
    pub fn for_params(&self, tape: &Tape, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect();
        for (node, g) in tape.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                out[id.index()].add_assign(g);
            }
        }
        out
    }
}
