//! Dense kernels for the matrix and image primitives.
//!
//! Every adjoint accumulates (`+=`) into its target buffer.

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `out = a · b` with `a: [m, k]` and `b: [k, n]` (`n == 1` for a vector).
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if n == 1 {
        for i in 0..m {
            out[i] = dot(&a[i * k..(i + 1) * k], b);
        }
    } else {
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                axpy(a[i * k + p], &b[p * n..(p + 1) * n], row);
            }
        }
    }
    out
}

pub fn matmul_grad_a(g: &[f64], b: &[f64], m: usize, k: usize, n: usize, ga: &mut [f64]) {
    if n == 1 {
        for i in 0..m {
            axpy(g[i], b, &mut ga[i * k..(i + 1) * k]);
        }
    } else {
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                ga[i * k + p] += dot(grow, &b[p * n..(p + 1) * n]);
            }
        }
    }
}

pub fn matmul_grad_b(g: &[f64], a: &[f64], m: usize, k: usize, n: usize, gb: &mut [f64]) {
    if n == 1 {
        for i in 0..m {
            axpy(g[i], &a[i * k..(i + 1) * k], gb);
        }
    } else {
        for i in 0..m {
            for p in 0..k {
                axpy(a[i * k + p], &g[i * n..(i + 1) * n], &mut gb[p * n..(p + 1) * n]);
            }
        }
    }
}

/// Geometry of a valid-padding 2D convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        (self.height - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width - self.kw) / self.stride + 1
    }
}

pub fn conv2d(x: &[f64], w: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let (oh, ow) = (d.out_h(), d.out_w());
    let mut out = vec![0.0; d.filters * oh * ow];
    for f in 0..d.filters {
        let plane = &mut out[f * oh * ow..(f + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = bias[f]);
        for c in 0..d.channels {
            let xc = &x[c * d.height * d.width..(c + 1) * d.height * d.width];
            for ki in 0..d.kh {
                for kj in 0..d.kw {
                    let wv = w[((f * d.channels + c) * d.kh + ki) * d.kw + kj];
                    if wv == 0.0 {
                        continue;
                    }
                    for oi in 0..oh {
                        let row_start = (oi * d.stride + ki) * d.width + kj;
                        let orow = &mut plane[oi * ow..(oi + 1) * ow];
                        if d.stride == 1 {
                            axpy(wv, &xc[row_start..row_start + ow], orow);
                        } else {
                            for (oj, o) in orow.iter_mut().enumerate() {
                                *o += wv * xc[row_start + oj * d.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv2d_grad_input(g: &[f64], w: &[f64], d: ConvDims, gx: &mut [f64]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    for f in 0..d.filters {
        let plane = &g[f * oh * ow..(f + 1) * oh * ow];
        for c in 0..d.channels {
            let gxc = &mut gx[c * d.height * d.width..(c + 1) * d.height * d.width];
            for ki in 0..d.kh {
                for kj in 0..d.kw {
                    let wv = w[((f * d.channels + c) * d.kh + ki) * d.kw + kj];
                    for oi in 0..oh {
                        let row_start = (oi * d.stride + ki) * d.width + kj;
                        let grow = &plane[oi * ow..(oi + 1) * ow];
                        if d.stride == 1 {
                            axpy(wv, grow, &mut gxc[row_start..row_start + ow]);
                        } else {
                            for (oj, gv) in grow.iter().enumerate() {
                                gxc[row_start + oj * d.stride] += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_grad_weight(g: &[f64], x: &[f64], d: ConvDims, gw: &mut [f64]) {
    let (oh, ow) = (d.out_h(), d.out_w());
    for f in 0..d.filters {
        let plane = &g[f * oh * ow..(f + 1) * oh * ow];
        for c in 0..d.channels {
            let xc = &x[c * d.height * d.width..(c + 1) * d.height * d.width];
            for ki in 0..d.kh {
                for kj in 0..d.kw {
                    let mut acc = 0.0;
                    for oi in 0..oh {
                        let row_start = (oi * d.stride + ki) * d.width + kj;
                        let grow = &plane[oi * ow..(oi + 1) * ow];
                        if d.stride == 1 {
                            acc += dot(grow, &xc[row_start..row_start + ow]);
                        } else {
                            for (oj, gv) in grow.iter().enumerate() {
                                acc += gv * xc[row_start + oj * d.stride];
                            }
                        }
                    }
                    gw[((f * d.channels + c) * d.kh + ki) * d.kw + kj] += acc;
                }
            }
        }
    }
}

pub fn conv2d_grad_bias(g: &[f64], d: ConvDims, gb: &mut [f64]) {
    let plane = d.out_h() * d.out_w();
    for f in 0..d.filters {
        gb[f] += g[f * plane..(f + 1) * plane].iter().sum::<f64>();
    }
}

/// Index (into `x`) of the first maximal element of every pooling window.
pub fn maxpool_argmax(x: &[f64], c: usize, h: usize, w: usize, size: usize) -> Vec<usize> {
    let (oh, ow) = (h / size, w / size);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = ch * h * w + (oi * size) * w + oj * size;
                for di in 0..size {
                    for dj in 0..size {
                        let k = ch * h * w + (oi * size + di) * w + oj * size + dj;
                        if x[k] > x[best] {
                            best = k;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}
