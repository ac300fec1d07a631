//! Ordered-subsets expectation maximization.

use super::{backproject_angles, project_angles, Geometry, ImageGrid, Sinogram};
use crate::error::{Error, Result};

/// Multiplicative EM over angle-strided subsets, starting from the
/// all-ones image:
///
/// x <- x * P_s^T(y_s / P_s x) / P_s^T 1
///
/// Ratio terms with a zero denominator are set to 0, which keeps rays with
/// no data and pixels with no sensitivity from producing NaNs. Calls
/// `on_iteration` after every full pass over all subsets.
pub fn osem_reconstruct_with<F>(
    sino: &Sinogram,
    geo: &Geometry,
    n_subsets: usize,
    n_iters: usize,
    mut on_iteration: F,
) -> Result<ImageGrid>
where
    F: FnMut(usize, &ImageGrid),
{
    geo.validate()?;
    if sino.geometry() != geo {
        return Err(Error::Shape("sinogram geometry mismatch".into()));
    }
    if n_subsets == 0 || geo.n_angles % n_subsets != 0 {
        return Err(Error::Invalid(format!(
            "n_subsets {n_subsets} must divide n_angles {}",
            geo.n_angles
        )));
    }

    let subsets: Vec<Vec<usize>> = (0..n_subsets)
        .map(|s| (s..geo.n_angles).step_by(n_subsets).collect())
        .collect();
    // subset sensitivities P_s^T 1 are constant across iterations
    let ones_img = ImageGrid::new(geo.image_size, vec![1.0; geo.image_size * geo.image_size])?;
    let sensitivities: Vec<Vec<f64>> = subsets
        .iter()
        .map(|angles| {
            let ones_proj = vec![1.0; angles.len() * geo.n_bins];
            backproject_angles(&ones_proj, geo, angles)
        })
        .collect();
    let _ = &ones_img;

    let npix = geo.image_size * geo.image_size;
    let mut x = vec![1.0; npix];
    let mut current = ImageGrid::new(geo.image_size, x.clone())?;
    for iter in 0..n_iters {
        for (angles, sens) in subsets.iter().zip(&sensitivities) {
            let proj = project_angles(&current, geo, angles);
            let mut ratio = vec![0.0; proj.len()];
            for (ri, (&p, r)) in proj.iter().zip(&mut ratio).enumerate() {
                let y = sino.data()[angles[ri / geo.n_bins] * geo.n_bins + ri % geo.n_bins];
                if p > 0.0 {
                    *r = y / p;
                }
            }
            let correction = backproject_angles(&ratio, geo, angles);
            for i in 0..npix {
                x[i] = if sens[i] > 0.0 {
                    x[i] * correction[i] / sens[i]
                } else {
                    0.0
                };
            }
            current = ImageGrid::new(geo.image_size, x.clone())?;
        }
        on_iteration(iter, &current);
    }
    Ok(current)
}

pub fn osem_reconstruct(
    sino: &Sinogram,
    geo: &Geometry,
    n_subsets: usize,
    n_iters: usize,
) -> Result<ImageGrid> {
    osem_reconstruct_with(sino, geo, n_subsets, n_iters, |_, _| {})
}
