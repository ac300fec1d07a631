//! Differentiable 2D real-to-complex Fourier transforms.
//!
//! Convention, fixed project-wide: the forward transform is unnormalized
//! (kernel e^{-2pi i}), the inverse applies the 1/(H*W) factor. Spectra are
//! stored Hermitian-reduced: only the W/2+1 lowest non-negative column
//! frequencies are kept, so a real-valued filter multiplied in and inverted
//! back always lands exactly in the real image domain.

use std::sync::Arc;

use rustfft::num_complex::Complex;

use super::{numel, Elem, Tape, Tensor};

/// Complex tensor stored as interleaved (re, im) pairs in a real tensor of
/// shape `logical + [2]`, so complex values ride the real autodiff tape.
#[derive(Clone)]
pub struct ComplexTensor<E: Elem> {
    inner: Tensor<E>,
}

impl<E: Elem> ComplexTensor<E> {
    pub fn from_interleaved(inner: Tensor<E>) -> Self {
        assert_eq!(
            inner.shape().last(),
            Some(&2),
            "complex tensor requires a trailing extent of 2"
        );
        ComplexTensor { inner }
    }

    /// Logical complex shape (without the trailing re/im axis).
    pub fn shape(&self) -> &[usize] {
        let s = self.inner.shape();
        &s[..s.len() - 1]
    }

    pub fn inner(&self) -> &Tensor<E> {
        &self.inner
    }

    pub fn to_complex_vec(&self) -> Vec<Complex<E>> {
        self.inner
            .data()
            .chunks_exact(2)
            .map(|p| Complex::new(p[0], p[1]))
            .collect()
    }
}

impl<E: Elem> std::fmt::Debug for ComplexTensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ComplexTensor{:?}", self.shape())
    }
}

pub fn reduced_width(w: usize) -> usize {
    w / 2 + 1
}

/// In-place unnormalized 2D FFT over a row-major h x w complex buffer.
pub fn fft2_inplace<E: Elem>(buf: &mut [Complex<E>], h: usize, w: usize, inverse: bool) {
    assert_eq!(buf.len(), h * w);
    for row in buf.chunks_exact_mut(w) {
        E::fft_inplace(row, inverse);
    }
    let mut colbuf = vec![Complex::new(E::zero(), E::zero()); h];
    for x in 0..w {
        for y in 0..h {
            colbuf[y] = buf[y * w + x];
        }
        E::fft_inplace(&mut colbuf, inverse);
        for y in 0..h {
            buf[y * w + x] = colbuf[y];
        }
    }
}

/// Forward 2D DFT of one real channel, Hermitian-reduced to h x (w/2+1).
pub fn rdft2_channel<E: Elem>(x: &[E], h: usize, w: usize) -> Vec<Complex<E>> {
    assert_eq!(x.len(), h * w);
    let mut full: Vec<Complex<E>> = x.iter().map(|&v| Complex::new(v, E::zero())).collect();
    fft2_inplace(&mut full, h, w, false);
    let wr = reduced_width(w);
    let mut out = Vec::with_capacity(h * wr);
    for y in 0..h {
        out.extend_from_slice(&full[y * w..y * w + wr]);
    }
    out
}

/// Rebuilds the full h x w spectrum from the reduced layout using
/// X[ky, kx] = conj(X[(h-ky)%h, w-kx]).
pub fn hermitian_extend<E: Elem>(xr: &[Complex<E>], h: usize, w: usize) -> Vec<Complex<E>> {
    let wr = reduced_width(w);
    assert_eq!(xr.len(), h * wr);
    let mut full = vec![Complex::new(E::zero(), E::zero()); h * w];
    for y in 0..h {
        full[y * w..y * w + wr].copy_from_slice(&xr[y * wr..(y + 1) * wr]);
        for x in wr..w {
            let sy = (h - y) % h;
            let sx = w - x;
            full[y * w + x] = xr[sy * wr + sx].conj();
        }
    }
    full
}

/// Inverse of `rdft2_channel`: reduced spectrum back to a real channel,
/// normalization 1/(h*w) applied here.
pub fn irdft2_channel<E: Elem>(xr: &[Complex<E>], h: usize, w: usize) -> Vec<E> {
    let mut full = hermitian_extend(xr, h, w);
    fft2_inplace(&mut full, h, w, true);
    let norm = E::one() / E::elem((h * w) as f64);
    full.iter().map(|c| c.re * norm).collect()
}

/// Sum of |X|^2 over the FULL spectrum, computed from the reduced layout
/// by doubling the columns that have a distinct mirror.
pub fn full_spectrum_power<E: Elem>(xr: &[Complex<E>], h: usize, w: usize) -> f64 {
    let wr = reduced_width(w);
    assert_eq!(xr.len(), h * wr);
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..wr {
            let c = xr[y * wr + x];
            let p = (c.re * c.re + c.im * c.im).as_f64();
            let self_conjugate_col = x == 0 || (w % 2 == 0 && x == w / 2);
            total += if self_conjugate_col { p } else { 2.0 * p };
        }
    }
    total
}

impl<E: Elem> Tape<E> {
    /// Real-to-complex 2D DFT over [C,H,W], reduced to [C,H,W/2+1].
    pub fn rdft2(&self, x: &Tensor<E>) -> ComplexTensor<E> {
        let xs = x.shape();
        assert_eq!(xs.len(), 3, "rdft2: input must be [C,H,W]");
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let wr = reduced_width(w);
        let mut out = Vec::with_capacity(c * h * wr * 2);
        for ch in 0..c {
            let spec = rdft2_channel(&x.data()[ch * h * w..(ch + 1) * h * w], h, w);
            for v in spec {
                out.push(v.re);
                out.push(v.im);
            }
        }
        let xn = x.node();
        let node = self.record(&[x], out.len(), {
            Box::new(move |g, store| {
                if let Some(n) = xn {
                    // adjoint of slice = zero-pad; adjoint of e^{-i} DFT is the
                    // unnormalized e^{+i} transform, real part kept
                    let buf = store.buf(n);
                    for ch in 0..c {
                        let gs = &g[ch * h * wr * 2..(ch + 1) * h * wr * 2];
                        let mut full = vec![Complex::new(E::zero(), E::zero()); h * w];
                        for y in 0..h {
                            for xk in 0..wr {
                                let p = 2 * (y * wr + xk);
                                full[y * w + xk] = Complex::new(gs[p], gs[p + 1]);
                            }
                        }
                        fft2_inplace(&mut full, h, w, true);
                        for (o, v) in buf[ch * h * w..(ch + 1) * h * w].iter_mut().zip(&full) {
                            *o += v.re;
                        }
                    }
                }
            })
        });
        ComplexTensor::from_interleaved(Tensor::tracked(
            vec![c, h, wr, 2],
            Arc::new(out),
            node,
        ))
    }

    /// Complex-to-real inverse 2D DFT from the reduced layout back to the
    /// declared [C,H,W] spatial extents.
    pub fn irdft2(&self, x: &ComplexTensor<E>, hw: (usize, usize)) -> Tensor<E> {
        let (h, w) = hw;
        let ls = x.shape();
        assert_eq!(ls.len(), 3, "irdft2: input must be [C,H,W/2+1]");
        let (c, lh, lwr) = (ls[0], ls[1], ls[2]);
        let wr = reduced_width(w);
        assert!(
            lh == h && lwr == wr,
            "irdft2: spectrum extents {lh}x{lwr} do not match declared {h}x{w} (reduced {wr})"
        );
        let xd = x.inner().data();
        let mut out = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let spec: Vec<Complex<E>> = xd[ch * h * wr * 2..(ch + 1) * h * wr * 2]
                .chunks_exact(2)
                .map(|p| Complex::new(p[0], p[1]))
                .collect();
            out.extend(irdft2_channel(&spec, h, w));
        }
        let xn = x.inner().node();
        let node = self.record(&[x.inner()], out.len(), {
            Box::new(move |g, store| {
                if let Some(n) = xn {
                    let buf = store.buf(n);
                    let norm = E::one() / E::elem((h * w) as f64);
                    for ch in 0..c {
                        let gs = &g[ch * h * w..(ch + 1) * h * w];
                        let mut full: Vec<Complex<E>> =
                            gs.iter().map(|&v| Complex::new(v, E::zero())).collect();
                        fft2_inplace(&mut full, h, w, false);
                        let bufc = &mut buf[ch * h * wr * 2..(ch + 1) * h * wr * 2];
                        // direct part
                        for y in 0..h {
                            for xk in 0..wr {
                                let gfull = full[y * w + xk] * norm;
                                let p = 2 * (y * wr + xk);
                                bufc[p] += gfull.re;
                                bufc[p + 1] += gfull.im;
                            }
                        }
                        // mirrored part: full column kxp >= wr was read as
                        // conj of reduced column w-kxp, row (h-ky)%h
                        for y in 0..h {
                            for xk in wr..w {
                                let gfull = full[y * w + xk] * norm;
                                let sy = (h - y) % h;
                                let sx = w - xk;
                                let p = 2 * (sy * wr + sx);
                                bufc[p] += gfull.re;
                                bufc[p + 1] -= gfull.im;
                            }
                        }
                    }
                }
            })
        });
        Tensor::tracked(vec![c, h, w], Arc::new(out), node)
    }

    /// Elementwise product of a real filter with a complex spectrum,
    /// differentiable in both operands.
    pub fn cscale_real(&self, a: &Tensor<E>, x: &ComplexTensor<E>) -> ComplexTensor<E> {
        assert_eq!(
            a.shape(),
            x.shape(),
            "cscale_real: filter shape {:?} does not match spectrum {:?}",
            a.shape(),
            x.shape()
        );
        let n = a.numel();
        let xd = x.inner().data();
        let mut out = vec![E::zero(); 2 * n];
        for i in 0..n {
            out[2 * i] = a.data()[i] * xd[2 * i];
            out[2 * i + 1] = a.data()[i] * xd[2 * i + 1];
        }
        let (an, xn) = (a.node(), x.inner().node());
        let ad = a.data_arc();
        let xarc = x.inner().data_arc();
        let node = self.record(&[a, x.inner()], out.len(), {
            Box::new(move |g, store| {
                if let Some(nn) = xn {
                    let buf = store.buf(nn);
                    for i in 0..n {
                        buf[2 * i] += g[2 * i] * ad[i];
                        buf[2 * i + 1] += g[2 * i + 1] * ad[i];
                    }
                }
                if let Some(nn) = an {
                    let buf = store.buf(nn);
                    for i in 0..n {
                        // d/dA Re-part + Im-part = Re(g * conj(x))
                        buf[i] += g[2 * i] * xarc[2 * i] + g[2 * i + 1] * xarc[2 * i + 1];
                    }
                }
            })
        });
        let mut shape = a.shape().to_vec();
        shape.push(2);
        ComplexTensor::from_interleaved(Tensor::tracked(shape, Arc::new(out), node))
    }
}

/// Radial power profile of a real image: full-spectrum |X|^2 binned by the
/// integer-rounded frequency radius. The last ring absorbs everything at or
/// beyond its radius so the rings always partition the full spectrum.
pub struct RadialSpectrum {
    pub ring_power: Vec<f64>,
    pub ring_counts: Vec<usize>,
}

impl RadialSpectrum {
    pub fn mean_power(&self) -> Vec<f64> {
        self.ring_power
            .iter()
            .zip(&self.ring_counts)
            .map(|(&p, &c)| if c == 0 { 0.0 } else { p / c as f64 })
            .collect()
    }

    pub fn total_power(&self) -> f64 {
        self.ring_power.iter().sum()
    }
}

pub fn radial_spectrum<E: Elem>(img: &[E], h: usize, w: usize, n_rings: usize) -> RadialSpectrum {
    let spec = rdft2_channel(img, h, w);
    let wr = reduced_width(w);
    let mut power = vec![0.0; n_rings];
    let mut counts = vec![0usize; n_rings];
    for y in 0..h {
        let fy = if y <= h / 2 { y as f64 } else { y as f64 - h as f64 };
        for x in 0..wr {
            let fx = x as f64;
            let ring = ((fy * fy + fx * fx).sqrt().round() as usize).min(n_rings - 1);
            let c = spec[y * wr + x];
            let p = (c.re * c.re + c.im * c.im).as_f64();
            let self_conjugate_col = x == 0 || (w % 2 == 0 && x == w / 2);
            let mult = if self_conjugate_col { 1 } else { 2 };
            power[ring] += p * mult as f64;
            counts[ring] += mult;
        }
    }
    RadialSpectrum {
        ring_power: power,
        ring_counts: counts,
    }
}

/// Checked wrapper used by the metrics module: square images only, ring
/// count bounded by the Nyquist radius.
pub fn radial_spectrum_checked<E: Elem>(
    img: &Tensor<E>,
    n_rings: usize,
) -> Result<RadialSpectrum, String> {
    let s = img.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(format!("radial spectrum requires a square image, got {s:?}"));
    }
    let nyquist = s[0] / 2;
    if n_rings == 0 || n_rings > nyquist + 1 {
        return Err(format!(
            "n_rings {n_rings} outside 1..={} for image size {}",
            nyquist + 1,
            s[0]
        ));
    }
    Ok(radial_spectrum(img.data(), s[0], s[1], n_rings))
}

pub fn numel_of(shape: &[usize]) -> usize {
    numel(shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive O(N^4) double-sum DFT, the independent oracle.
    fn naive_dft2(x: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
        let mut out = vec![Complex::new(0.0, 0.0); h * w];
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * (ky as f64 * y as f64 / h as f64 + kx as f64 * xx as f64 / w as f64);
                        acc += Complex::new(ang.cos(), ang.sin()) * x[y * w + xx];
                    }
                }
                out[ky * w + kx] = acc;
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 1.0
            })
            .collect()
    }

    #[test]
    fn constant_image_has_only_dc() {
        let (h, w) = (8, 6);
        let v = 1.7;
        let img = vec![v; h * w];
        let spec = rdft2_channel(&img, h, w);
        assert!((spec[0].re - v * (h * w) as f64).abs() < 1e-9);
        assert!(spec[0].im.abs() < 1e-9);
        for (i, c) in spec.iter().enumerate().skip(1) {
            assert!(c.norm() < 1e-6, "bin {i} should be ~0, got {c}");
        }
    }

    #[test]
    fn matches_naive_dft_oracle() {
        let (h, w) = (8, 8);
        let img = pseudo(h * w, 42);
        let spec = rdft2_channel(&img, h, w);
        let full = naive_dft2(&img, h, w);
        let wr = reduced_width(w);
        for y in 0..h {
            for x in 0..wr {
                let d = spec[y * wr + x] - full[y * w + x];
                assert!(d.norm() < 1e-8, "bin ({y},{x}) differs by {d}");
            }
        }
    }

    #[test]
    fn parseval_identity() {
        let (h, w) = (16, 12);
        let img = pseudo(h * w, 7);
        let spatial: f64 = img.iter().map(|v| v * v).sum();
        let spec = rdft2_channel(&img, h, w);
        let spectral = full_spectrum_power(&spec, h, w) / (h * w) as f64;
        assert!(
            (spatial - spectral).abs() / spatial.abs() < 1e-6,
            "{spatial} vs {spectral}"
        );
    }

    #[test]
    fn roundtrip_identity_f64() {
        let (h, w) = (16, 16);
        let img = pseudo(h * w, 99);
        let spec = rdft2_channel(&img, h, w);
        let back = irdft2_channel(&spec, h, w);
        for (a, b) in img.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn roundtrip_odd_width() {
        let (h, w) = (6, 9);
        let img = pseudo(h * w, 3);
        let spec = rdft2_channel(&img, h, w);
        let back = irdft2_channel(&spec, h, w);
        for (a, b) in img.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn dc_only_spectrum_gives_constant_image() {
        let (h, w) = (8, 8);
        let wr = reduced_width(w);
        let v = 2.5;
        let mut spec = vec![Complex::new(0.0, 0.0); h * wr];
        spec[0] = Complex::new(v * (h * w) as f64, 0.0);
        let img = irdft2_channel::<f64>(&spec, h, w);
        for &p in &img {
            assert!((p - v).abs() < 1e-10);
        }
    }

    #[test]
    fn irdft2_linearity() {
        let (h, w) = (8, 6);
        let wr = reduced_width(w);
        let a = pseudo(h * wr * 2, 11);
        let b = pseudo(h * wr * 2, 13);
        let ac: Vec<Complex<f64>> = a.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect();
        let bc: Vec<Complex<f64>> = b.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect();
        let sum: Vec<Complex<f64>> = ac.iter().zip(&bc).map(|(x, y)| x + y).collect();
        let ia = irdft2_channel(&ac, h, w);
        let ib = irdft2_channel(&bc, h, w);
        let isum = irdft2_channel(&sum, h, w);
        for i in 0..h * w {
            assert!((isum[i] - (ia[i] + ib[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn tape_roundtrip_and_shapes() {
        let tape = Tape::<f64>::disabled();
        let img = pseudo(2 * 8 * 8, 5);
        let x = Tensor::new(&[2, 8, 8], img.clone());
        let spec = tape.rdft2(&x);
        assert_eq!(spec.shape(), &[2, 8, 5]);
        let back = tape.irdft2(&spec, (8, 8));
        for (a, b) in img.iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn radial_spectrum_constant_is_ring0() {
        let img = vec![3.0_f64; 16 * 16];
        let rs = radial_spectrum(&img, 16, 16, 9);
        assert!(rs.ring_power[0] > 0.0);
        for k in 1..9 {
            assert!(rs.ring_power[k] < 1e-9, "ring {k} should be empty");
        }
    }

    #[test]
    fn radial_spectrum_cosine_concentrates_at_its_frequency() {
        let (h, w) = (16, 16);
        let kf = 3.0;
        let img: Vec<f64> = (0..h * w)
            .map(|i| {
                let x = (i % w) as f64;
                (2.0 * std::f64::consts::PI * kf * x / w as f64).cos()
            })
            .collect();
        let rs = radial_spectrum(&img, h, w, 9);
        let total = rs.total_power();
        assert!(rs.ring_power[3] / total > 0.99, "power should sit in ring 3");
    }

    #[test]
    fn radial_spectrum_rings_partition_parseval() {
        let (h, w) = (16, 16);
        let img = pseudo(h * w, 21);
        let rs = radial_spectrum(&img, h, w, 9);
        let spec = rdft2_channel(&img, h, w);
        let total = full_spectrum_power(&spec, h, w);
        assert!((rs.total_power() - total).abs() / total < 1e-6);
    }
}
