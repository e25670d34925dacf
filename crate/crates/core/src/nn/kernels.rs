//! Dense loops shared by forward and backward passes.

use rayon::prelude::*;

const PAR_THRESHOLD: usize = 1 << 15;

/// `c[n×m] (+)= a[n×k] · b[k×m]`.
pub fn matmul(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    let row = |(i, ci): (usize, &mut [f64])| {
        let ai = &a[i * k..(i + 1) * k];
        for (p, &av) in ai.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let bp = &b[p * m..(p + 1) * m];
            for (cv, &bv) in ci.iter_mut().zip(bp) {
                *cv += av * bv;
            }
        }
    };
    if n * k * m >= PAR_THRESHOLD && n > 1 {
        c.par_chunks_mut(m).enumerate().for_each(row);
    } else {
        c.chunks_mut(m).enumerate().for_each(row);
    }
}

/// `c[n×m] += a[n×k] · b[m×k]ᵀ`.
pub fn matmul_bt(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    let row = |(i, ci): (usize, &mut [f64])| {
        let ai = &a[i * k..(i + 1) * k];
        for (j, cv) in ci.iter_mut().enumerate() {
            let bj = &b[j * k..(j + 1) * k];
            *cv += ai.iter().zip(bj).map(|(x, y)| x * y).sum::<f64>();
        }
    };
    if n * k * m >= PAR_THRESHOLD && n > 1 {
        c.par_chunks_mut(m).enumerate().for_each(row);
    } else {
        c.chunks_mut(m).enumerate().for_each(row);
    }
}

/// `c[k×m] += a[n×k]ᵀ · b[n×m]`.
pub fn matmul_at(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    let row = |(p, cp): (usize, &mut [f64])| {
        for i in 0..n {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let bi = &b[i * m..(i + 1) * m];
            for (cv, &bv) in cp.iter_mut().zip(bi) {
                *cv += av * bv;
            }
        }
    };
    if n * k * m >= PAR_THRESHOLD && k > 1 {
        c.par_chunks_mut(m).enumerate().for_each(row);
    } else {
        c.chunks_mut(m).enumerate().for_each(row);
    }
}

/// Convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn same(kernel: usize, dilation: usize, groups: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
            groups,
        }
    }

    pub fn out_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        (input + 2 * self.padding).checked_sub(span).map(|v| v / self.stride + 1)
    }
}

pub struct ConvDims {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
}

#[inline]
fn src_index(o: usize, k: usize, s: &Conv2dSpec, limit: usize) -> Option<usize> {
    let v = (o * s.stride + k * s.dilation).checked_sub(s.padding)?;
    (v < limit).then_some(v)
}

pub fn conv2d_forward(x: &[f64], wt: &[f64], bias: Option<&[f64]>, d: &ConvDims, s: &Conv2dSpec) -> Vec<f64> {
    let cin_g = d.cin / s.groups;
    let cout_g = d.cout / s.groups;
    let plane = d.ho * d.wo;
    let mut out = vec![0.0; d.b * d.cout * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(bo, op)| {
        let (b, o) = (bo / d.cout, bo % d.cout);
        let g = o / cout_g;
        if let Some(bias) = bias {
            op.iter_mut().for_each(|v| *v = bias[o]);
        }
        for ci in 0..cin_g {
            let ic = g * cin_g + ci;
            let xp = &x[(b * d.cin + ic) * d.h * d.w..][..d.h * d.w];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = wt[((o * cin_g + ci) * d.kh + ky) * d.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..d.ho {
                        let Some(iy) = src_index(oy, ky, s, d.h) else { continue };
                        let xrow = &xp[iy * d.w..(iy + 1) * d.w];
                        let orow = &mut op[oy * d.wo..(oy + 1) * d.wo];
                        for (ox, ov) in orow.iter_mut().enumerate() {
                            if let Some(ix) = src_index(ox, kx, s, d.w) {
                                *ov += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Returns `(dx, dw, db)`.
pub fn conv2d_backward(
    x: &[f64],
    wt: &[f64],
    dy: &[f64],
    d: &ConvDims,
    s: &Conv2dSpec,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let cin_g = d.cin / s.groups;
    let cout_g = d.cout / s.groups;
    let plane = d.ho * d.wo;
    let kk = d.kh * d.kw;

    let mut dx = vec![0.0; d.b * d.cin * d.h * d.w];
    dx.par_chunks_mut(d.h * d.w).enumerate().for_each(|(bc, dxp)| {
        let (b, ic) = (bc / d.cin, bc % d.cin);
        let g = ic / cin_g;
        let ci = ic % cin_g;
        for o in g * cout_g..(g + 1) * cout_g {
            let dyp = &dy[(b * d.cout + o) * plane..][..plane];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = wt[(o * cin_g + ci) * kk + ky * d.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..d.ho {
                        let Some(iy) = src_index(oy, ky, s, d.h) else { continue };
                        for ox in 0..d.wo {
                            if let Some(ix) = src_index(ox, kx, s, d.w) {
                                dxp[iy * d.w + ix] += wv * dyp[oy * d.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    });

    let mut dw = vec![0.0; d.cout * cin_g * kk];
    dw.par_chunks_mut(cin_g * kk).enumerate().for_each(|(o, dwo)| {
        let g = o / cout_g;
        for b in 0..d.b {
            let dyp = &dy[(b * d.cout + o) * plane..][..plane];
            for ci in 0..cin_g {
                let ic = g * cin_g + ci;
                let xp = &x[(b * d.cin + ic) * d.h * d.w..][..d.h * d.w];
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let mut acc = 0.0;
                        for oy in 0..d.ho {
                            let Some(iy) = src_index(oy, ky, s, d.h) else { continue };
                            for ox in 0..d.wo {
                                if let Some(ix) = src_index(ox, kx, s, d.w) {
                                    acc += dyp[oy * d.wo + ox] * xp[iy * d.w + ix];
                                }
                            }
                        }
                        dwo[ci * kk + ky * d.kw + kx] += acc;
                    }
                }
            }
        }
    });

    let mut db = vec![0.0; d.cout];
    for b in 0..d.b {
        for (o, dbo) in db.iter_mut().enumerate() {
            *dbo += dy[(b * d.cout + o) * plane..][..plane].iter().sum::<f64>();
        }
    }
    (dx, dw, db)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Reflect-mode index (edge not repeated) into `0..len`.
pub fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}
