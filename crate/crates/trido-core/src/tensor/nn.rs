//! Network building blocks: softmax, layer norm, GELU, 2D convolution,
//! pixel shuffle/unshuffle.

use std::sync::Arc;

use super::{Elem, Tape, Tensor};

impl<E: Elem> Tape<E> {
    /// Softmax over the last axis with subtract-max stabilization.
    pub fn softmax(&self, x: &Tensor<E>) -> Tensor<E> {
        let shape = x.shape().to_vec();
        let d = *shape.last().expect("softmax requires rank >= 1");
        assert!(d > 0, "softmax: empty last axis");
        let rows = x.numel() / d;
        let mut out = vec![E::zero(); x.numel()];
        for r in 0..rows {
            let xs = &x.data()[r * d..(r + 1) * d];
            let os = &mut out[r * d..(r + 1) * d];
            let m = xs.iter().copied().fold(E::neg_infinity(), E::max);
            let mut s = E::zero();
            for (o, &v) in os.iter_mut().zip(xs) {
                *o = (v - m).exp();
                s += *o;
            }
            for o in os.iter_mut() {
                *o = *o / s;
            }
        }
        let xn = x.node();
        let out = Arc::new(out);
        let p = Arc::clone(&out);
        let node = self.record(&[x], p.len(), {
            Box::new(move |g, store| {
                if let Some(n) = xn {
                    let buf = store.buf(n);
                    for r in 0..rows {
                        let ps = &p[r * d..(r + 1) * d];
                        let gs = &g[r * d..(r + 1) * d];
                        let mut dot = E::zero();
                        for i in 0..d {
                            dot += gs[i] * ps[i];
                        }
                        for i in 0..d {
                            buf[r * d + i] += ps[i] * (gs[i] - dot);
                        }
                    }
                }
            })
        });
        Tensor::tracked(shape, out, node)
    }

    /// Layer normalization over the last axis, epsilon 1e-5, with affine
    /// parameters gamma and beta of the last-axis length.
    pub fn layer_norm(&self, x: &Tensor<E>, gamma: &Tensor<E>, beta: &Tensor<E>) -> Tensor<E> {
        let shape = x.shape().to_vec();
        let d = *shape.last().expect("layer_norm requires rank >= 1");
        assert!(d > 0, "layer_norm: empty last axis");
        assert_eq!(gamma.shape(), &[d], "layer_norm: gamma shape");
        assert_eq!(beta.shape(), &[d], "layer_norm: beta shape");
        let rows = x.numel() / d;
        let eps = E::elem(1e-5);
        let inv_d = E::one() / E::elem(d as f64);
        let mut out = vec![E::zero(); x.numel()];
        let mut xhat = vec![E::zero(); x.numel()];
        let mut inv_sigma = vec![E::zero(); rows];
        for r in 0..rows {
            let xs = &x.data()[r * d..(r + 1) * d];
            let mut mu = E::zero();
            for &v in xs {
                mu += v;
            }
            mu = mu * inv_d;
            let mut var = E::zero();
            for &v in xs {
                var += (v - mu) * (v - mu);
            }
            var = var * inv_d;
            let is = E::one() / (var + eps).sqrt();
            inv_sigma[r] = is;
            for i in 0..d {
                let xh = (xs[i] - mu) * is;
                xhat[r * d + i] = xh;
                out[r * d + i] = gamma.data()[i] * xh + beta.data()[i];
            }
        }
        let (xn, gn, bn) = (x.node(), gamma.node(), beta.node());
        let gamma_d = gamma.data_arc();
        let xhat = Arc::new(xhat);
        let inv_sigma = Arc::new(inv_sigma);
        let node = self.record(&[x, gamma, beta], out.len(), {
            let xhat = Arc::clone(&xhat);
            Box::new(move |g, store| {
                if let Some(n) = bn {
                    let buf = store.buf(n);
                    for r in 0..rows {
                        for i in 0..d {
                            buf[i] += g[r * d + i];
                        }
                    }
                }
                if let Some(n) = gn {
                    let buf = store.buf(n);
                    for r in 0..rows {
                        for i in 0..d {
                            buf[i] += g[r * d + i] * xhat[r * d + i];
                        }
                    }
                }
                if let Some(n) = xn {
                    let buf = store.buf(n);
                    for r in 0..rows {
                        let mut mean_gg = E::zero();
                        let mut mean_ggx = E::zero();
                        for i in 0..d {
                            let gg = g[r * d + i] * gamma_d[i];
                            mean_gg += gg;
                            mean_ggx += gg * xhat[r * d + i];
                        }
                        mean_gg = mean_gg * inv_d;
                        mean_ggx = mean_ggx * inv_d;
                        for i in 0..d {
                            let gg = g[r * d + i] * gamma_d[i];
                            buf[r * d + i] +=
                                (gg - mean_gg - xhat[r * d + i] * mean_ggx) * inv_sigma[r];
                        }
                    }
                }
            })
        });
        Tensor::tracked(shape, Arc::new(out), node)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self, x: &Tensor<E>) -> Tensor<E> {
        let c = E::elem(0.7978845608028654); // sqrt(2/pi)
        let a = E::elem(0.044715);
        let half = E::elem(0.5);
        let data: Vec<E> = x
            .data()
            .iter()
            .map(|&v| {
                let u = c * (v + a * v * v * v);
                half * v * (E::one() + u.tanh())
            })
            .collect();
        let xn = x.node();
        let xd = x.data_arc();
        let node = self.record(&[x], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = xn {
                    let buf = store.buf(n);
                    let three = E::elem(3.0);
                    for i in 0..g.len() {
                        let v = xd[i];
                        let u = c * (v + a * v * v * v);
                        let t = u.tanh();
                        let d = half * (E::one() + t)
                            + half * v * (E::one() - t * t) * c * (E::one() + three * a * v * v);
                        buf[i] += g[i] * d;
                    }
                }
            })
        });
        Tensor::tracked(x.shape().to_vec(), Arc::new(data), node)
    }

    /// 2D convolution (cross-correlation), odd square kernel, zero padding
    /// of (k-1)/2 so the spatial size is preserved, stride 1.
    pub fn conv2d(&self, x: &Tensor<E>, w: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
        let xs = x.shape();
        let ws = w.shape();
        assert_eq!(xs.len(), 3, "conv2d: input must be [C,H,W]");
        assert_eq!(ws.len(), 4, "conv2d: weight must be [O,C,k,k]");
        let (c_in, h, wid) = (xs[0], xs[1], xs[2]);
        let (c_out, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(c_in, wc, "conv2d: channel mismatch {c_in} vs {wc}");
        assert_eq!(kh, kw, "conv2d: kernel must be square");
        assert_eq!(kh % 2, 1, "conv2d: kernel size must be odd");
        assert_eq!(b.shape(), &[c_out], "conv2d: bias shape");
        let k = kh;
        let hw = h * wid;
        let ckk = c_in * k * k;

        let col = if k == 1 {
            x.data_arc() // 1x1 kernel: the column matrix is the input itself
        } else {
            Arc::new(im2col(x.data(), c_in, h, wid, k))
        };
        let mut out = vec![E::zero(); c_out * hw];
        unsafe {
            E::gemm(
                c_out,
                ckk,
                hw,
                E::one(),
                w.data().as_ptr(),
                ckk as isize,
                1,
                col.as_ptr(),
                hw as isize,
                1,
                E::zero(),
                out.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        for o in 0..c_out {
            let bias = b.data()[o];
            for v in &mut out[o * hw..(o + 1) * hw] {
                *v += bias;
            }
        }

        let (xn, wn, bn) = (x.node(), w.node(), b.node());
        let wd = w.data_arc();
        let node = self.record(&[x, w, b], out.len(), {
            Box::new(move |g, store| {
                if let Some(n) = bn {
                    let buf = store.buf(n);
                    for o in 0..c_out {
                        let mut s = E::zero();
                        for i in 0..hw {
                            s += g[o * hw + i];
                        }
                        buf[o] += s;
                    }
                }
                if let Some(n) = wn {
                    // dW = dOut . col^T
                    let buf = store.buf(n);
                    unsafe {
                        E::gemm(
                            c_out,
                            hw,
                            ckk,
                            E::one(),
                            g.as_ptr(),
                            hw as isize,
                            1,
                            col.as_ptr(),
                            1,
                            hw as isize,
                            E::one(),
                            buf.as_mut_ptr(),
                            ckk as isize,
                            1,
                        );
                    }
                }
                if let Some(n) = xn {
                    // dX = col2im(W^T . dOut)
                    let mut dcol = vec![E::zero(); ckk * hw];
                    unsafe {
                        E::gemm(
                            ckk,
                            c_out,
                            hw,
                            E::one(),
                            wd.as_ptr(),
                            1,
                            ckk as isize,
                            g.as_ptr(),
                            hw as isize,
                            1,
                            E::zero(),
                            dcol.as_mut_ptr(),
                            hw as isize,
                            1,
                        );
                    }
                    let buf = store.buf(n);
                    if k == 1 {
                        for (o, &v) in buf.iter_mut().zip(&dcol) {
                            *o += v;
                        }
                    } else {
                        col2im_add(&dcol, c_in, h, wid, k, buf);
                    }
                }
            })
        });
        Tensor::tracked(vec![c_out, h, wid], Arc::new(out), node)
    }

    /// [C,H,W] -> [C*r^2, H/r, W/r]; output channel c*r^2 + dy*r + dx at
    /// (i,j) is input channel c at (i*r+dy, j*r+dx).
    pub fn pixel_unshuffle(&self, x: &Tensor<E>, r: usize) -> Tensor<E> {
        let xs = x.shape();
        assert_eq!(xs.len(), 3, "pixel_unshuffle: input must be [C,H,W]");
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        assert!(
            r > 0 && h % r == 0 && w % r == 0,
            "pixel_unshuffle: r={r} does not divide {h}x{w}"
        );
        let data = unshuffle_data(x.data(), c, h, w, r);
        let xn = x.node();
        let node = self.record(&[x], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = xn {
                    let gs = shuffle_data(g, c * r * r, h / r, w / r, r);
                    store.add(n, &gs);
                }
            })
        });
        Tensor::tracked(vec![c * r * r, h / r, w / r], Arc::new(data), node)
    }

    /// [C*r^2, H, W] -> [C, H*r, W*r]; exact inverse of `pixel_unshuffle`.
    pub fn pixel_shuffle(&self, x: &Tensor<E>, r: usize) -> Tensor<E> {
        let xs = x.shape();
        assert_eq!(xs.len(), 3, "pixel_shuffle: input must be [C,H,W]");
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        assert!(
            r > 0 && c % (r * r) == 0,
            "pixel_shuffle: r^2={} does not divide channels {c}",
            r * r
        );
        let data = shuffle_data(x.data(), c, h, w, r);
        let xn = x.node();
        let node = self.record(&[x], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = xn {
                    let gs = unshuffle_data(g, c / (r * r), h * r, w * r, r);
                    store.add(n, &gs);
                }
            })
        });
        Tensor::tracked(vec![c / (r * r), h * r, w * r], Arc::new(data), node)
    }
}

fn im2col<E: Elem>(x: &[E], c_in: usize, h: usize, w: usize, k: usize) -> Vec<E> {
    let p = (k - 1) / 2;
    let hw = h * w;
    let mut col = vec![E::zero(); c_in * k * k * hw];
    for c in 0..c_in {
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                let base = row * hw;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < p || sy >= h + p {
                        continue;
                    }
                    let sy = sy - p;
                    for xx in 0..w {
                        let sx = xx + dx;
                        if sx < p || sx >= w + p {
                            continue;
                        }
                        col[base + y * w + xx] = x[c * hw + sy * w + (sx - p)];
                    }
                }
            }
        }
    }
    col
}

fn col2im_add<E: Elem>(dcol: &[E], c_in: usize, h: usize, w: usize, k: usize, out: &mut [E]) {
    let p = (k - 1) / 2;
    let hw = h * w;
    for c in 0..c_in {
        for dy in 0..k {
            for dx in 0..k {
                let row = (c * k + dy) * k + dx;
                let base = row * hw;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < p || sy >= h + p {
                        continue;
                    }
                    let sy = sy - p;
                    for xx in 0..w {
                        let sx = xx + dx;
                        if sx < p || sx >= w + p {
                            continue;
                        }
                        out[c * hw + sy * w + (sx - p)] += dcol[base + y * w + xx];
                    }
                }
            }
        }
    }
}

fn unshuffle_data<E: Elem>(x: &[E], c: usize, h: usize, w: usize, r: usize) -> Vec<E> {
    let (ho, wo) = (h / r, w / r);
    let mut out = vec![E::zero(); x.len()];
    for ch in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let oc = ch * r * r + dy * r + dx;
                for i in 0..ho {
                    for j in 0..wo {
                        out[(oc * ho + i) * wo + j] = x[(ch * h + i * r + dy) * w + j * r + dx];
                    }
                }
            }
        }
    }
    out
}

fn shuffle_data<E: Elem>(x: &[E], c: usize, h: usize, w: usize, r: usize) -> Vec<E> {
    let co = c / (r * r);
    let mut out = vec![E::zero(); x.len()];
    for ch in 0..co {
        for dy in 0..r {
            for dx in 0..r {
                let ic = ch * r * r + dy * r + dx;
                for i in 0..h {
                    for j in 0..w {
                        out[(ch * h * r + i * r + dy) * w * r + j * r + dx] =
                            x[(ic * h + i) * w + j];
                    }
                }
            }
        }
    }
    out
}
