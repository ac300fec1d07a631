//! Paired training data: (low-dose sinogram, standard-dose sinogram,
//! OSEM ground-truth image) per slice.

use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    forward_project, osem_reconstruct, random_phantom, render_phantom, simulate_dose, Geometry,
    ImageGrid, Sinogram,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SampleTriple {
    /// Low-dose sinogram (network input), normalized to [0, 1].
    pub s_l: Sinogram,
    /// Standard-dose sinogram (sinogram-domain target), same normalization.
    pub s_s: Sinogram,
    /// OSEM reconstruction of the standard-dose sinogram (image target).
    pub i_s: ImageGrid,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DatasetParams {
    pub n_slices: usize,
    pub geometry: Geometry,
    pub dose_factor: f64,
    pub seed: u64,
    /// Standard-dose scaling: the max sinogram bin is scaled to about this
    /// many counts before thinning, fixing the Poisson SNR gap.
    pub count_scale: f64,
    /// Disables the Poisson path entirely (S_L = S_S).
    pub noise: bool,
    pub osem_subsets: usize,
    pub osem_iters: usize,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            n_slices: 1,
            geometry: Geometry::default(),
            dose_factor: 0.25,
            seed: 0,
            count_scale: 1e4,
            noise: true,
            osem_subsets: 8,
            osem_iters: 10,
        }
    }
}

/// Normalization and provenance recorded next to the tensors.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub geometry: Geometry,
    pub dose_factor: f64,
    pub seed: u64,
    pub count_scale: f64,
    pub noise: bool,
    /// Max over every sinogram bin (both doses); sinograms are stored
    /// divided by this.
    pub sino_max: f64,
    /// Max over every ground-truth image pixel; images are stored divided
    /// by this.
    pub img_max: f64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<SampleTriple>,
    pub meta: DatasetMeta,
}

fn slice_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Generates `n_slices` independent slices. Each slice draws a randomized
/// phantom, forward-projects it, scales to the standard-dose count budget,
/// thins to the low dose, and reconstructs the ground truth with OSEM.
/// All intensities are finally normalized to [0, 1] by per-family maxima
/// recorded in the metadata.
pub fn make_dataset(params: &DatasetParams) -> Result<Dataset> {
    if params.n_slices == 0 {
        return Err(Error::Invalid("n_slices must be >= 1".into()));
    }
    params.geometry.validate()?;
    if !(params.dose_factor > 0.0 && params.dose_factor <= 1.0) {
        return Err(Error::Invalid(format!(
            "dose_factor {} outside (0, 1]",
            params.dose_factor
        )));
    }

    let raw: Vec<SampleTriple> = (0..params.n_slices)
        .into_par_iter()
        .map(|i| -> Result<SampleTriple> {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(i as u64);
            let spec = random_phantom(&mut rng);
            let phantom = render_phantom(&spec, params.geometry.image_size)?;
            let sino = forward_project(&phantom, &params.geometry)?;
            let peak = sino.max();
            let scale = if peak > 0.0 {
                params.count_scale / peak
            } else {
                1.0
            };
            let s_s = sino.scaled(scale);
            let s_l = if params.noise {
                simulate_dose(&s_s, params.dose_factor, slice_seed(params.seed, i))?
            } else {
                s_s.clone()
            };
            let i_s = osem_reconstruct(
                &s_s,
                &params.geometry,
                params.osem_subsets,
                params.osem_iters,
            )?;
            Ok(SampleTriple { s_l, s_s, i_s })
        })
        .collect::<Result<Vec<_>>>()?;

    let sino_max = raw
        .iter()
        .flat_map(|s| [s.s_l.max(), s.s_s.max()])
        .fold(0.0, f64::max);
    let img_max = raw.iter().map(|s| s.i_s.max()).fold(0.0, f64::max);
    let sino_div = if sino_max > 0.0 { sino_max } else { 1.0 };
    let img_div = if img_max > 0.0 { img_max } else { 1.0 };

    let samples = raw
        .into_iter()
        .map(|s| SampleTriple {
            s_l: s.s_l.scaled(1.0 / sino_div),
            s_s: s.s_s.scaled(1.0 / sino_div),
            i_s: s.i_s.scaled(1.0 / img_div),
        })
        .collect();

    Ok(Dataset {
        samples,
        meta: DatasetMeta {
            geometry: params.geometry,
            dose_factor: params.dose_factor,
            seed: params.seed,
            count_scale: params.count_scale,
            noise: params.noise,
            sino_max,
            img_max,
        },
    })
}
