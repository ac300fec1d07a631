//! Discrete parallel-beam Radon transform and its exact adjoint.
//!
//! A ray is sampled at unit-pixel steps; each sample spreads a bilinear
//! weight over its four neighboring pixels. Forward projection and
//! back-projection enumerate exactly the same (pixel, weight) pairs, which
//! makes the pair adjoint to floating-point accuracy by construction.

use super::{Geometry, ImageGrid, Sinogram};
use crate::error::{Error, Result};

/// Visits every (pixel index, weight) pair along the ray of one
/// (angle, bin), sampling at `step`-pixel intervals.
fn visit_ray<F: FnMut(usize, f64)>(geo: &Geometry, a: usize, b: usize, step: f64, mut visit: F) {
    let size = geo.image_size;
    let center = (size as f64 - 1.0) / 2.0;
    let theta = geo.angle(a);
    let (sin_t, cos_t) = theta.sin_cos();
    // detector axis u, ray direction d perpendicular to it
    let r = (b as f64 - (geo.n_bins as f64 - 1.0) / 2.0) * geo.bin_spacing;
    let half_span = (size as f64) * std::f64::consts::FRAC_1_SQRT_2 + 1.0;
    let n_steps = (2.0 * half_span / step).ceil() as usize;
    for i in 0..=n_steps {
        let t = -half_span + i as f64 * step;
        let px = center + r * cos_t - t * sin_t;
        let py = center + r * sin_t + t * cos_t;
        let x0 = px.floor();
        let y0 = py.floor();
        let fx = px - x0;
        let fy = py - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        for (dx, dy, w) in [
            (0isize, 0isize, (1.0 - fx) * (1.0 - fy)),
            (1, 0, fx * (1.0 - fy)),
            (0, 1, (1.0 - fx) * fy),
            (1, 1, fx * fy),
        ] {
            let (x, y) = (x0 + dx, y0 + dy);
            if x < 0 || y < 0 || x >= size as isize || y >= size as isize || w == 0.0 {
                continue;
            }
            visit(y as usize * size + x as usize, w * step);
        }
    }
}

/// Line integrals of `img` over the listed angles; rows follow the order
/// of `angles`.
pub fn project_angles(img: &ImageGrid, geo: &Geometry, angles: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; angles.len() * geo.n_bins];
    for (ai, &a) in angles.iter().enumerate() {
        for b in 0..geo.n_bins {
            let mut acc = 0.0;
            visit_ray(geo, a, b, 1.0, |pix, w| acc += w * img.data()[pix]);
            out[ai * geo.n_bins + b] = acc;
        }
    }
    out
}

/// Adjoint of `project_angles`: smears `values` (rows matching `angles`)
/// back into image space with identical weights.
pub fn backproject_angles(values: &[f64], geo: &Geometry, angles: &[usize]) -> Vec<f64> {
    assert_eq!(values.len(), angles.len() * geo.n_bins);
    let mut img = vec![0.0; geo.image_size * geo.image_size];
    for (ai, &a) in angles.iter().enumerate() {
        for b in 0..geo.n_bins {
            let v = values[ai * geo.n_bins + b];
            if v == 0.0 {
                continue;
            }
            visit_ray(geo, a, b, 1.0, |pix, w| img[pix] += w * v);
        }
    }
    img
}

/// Full forward projection over all view angles.
pub fn forward_project(img: &ImageGrid, geo: &Geometry) -> Result<Sinogram> {
    geo.validate()?;
    if img.size() != geo.image_size {
        return Err(Error::Shape(format!(
            "image size {} does not match geometry {}",
            img.size(),
            geo.image_size
        )));
    }
    let angles: Vec<usize> = (0..geo.n_angles).collect();
    let data = project_angles(img, geo, &angles);
    // line integrals of a nonnegative image with nonnegative weights
    Sinogram::new(*geo, data)
}

/// Full back-projection; the exact adjoint of [`forward_project`].
pub fn back_project(sino: &Sinogram, geo: &Geometry) -> Result<ImageGrid> {
    geo.validate()?;
    if sino.geometry() != geo {
        return Err(Error::Shape("sinogram geometry mismatch".into()));
    }
    let angles: Vec<usize> = (0..geo.n_angles).collect();
    let data = backproject_angles(sino.data(), geo, &angles);
    ImageGrid::new(geo.image_size, data)
}

/// Fine-step reference projector for tests (same ray model, smaller step).
#[doc(hidden)]
pub fn project_angles_fine(img: &ImageGrid, geo: &Geometry, angles: &[usize], step: f64) -> Vec<f64> {
    let mut out = vec![0.0; angles.len() * geo.n_bins];
    for (ai, &a) in angles.iter().enumerate() {
        for b in 0..geo.n_bins {
            let mut acc = 0.0;
            visit_ray(geo, a, b, step, |pix, w| acc += w * img.data()[pix]);
            out[ai * geo.n_bins + b] = acc;
        }
    }
    out
}
