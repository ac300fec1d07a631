//! Acquisition simulator: phantoms, parallel-beam projection, dose
//! thinning, and OSEM reconstruction. Everything here is a pure function
//! of its inputs plus an explicit seed, so slices can be generated
//! concurrently without shared state.

mod dataset;
mod dose;
mod osem;
mod phantom;
mod projector;

pub use dataset::{make_dataset, Dataset, DatasetMeta, DatasetParams, SampleTriple};
pub use dose::simulate_dose;
pub use osem::{osem_reconstruct, osem_reconstruct_with};
pub use phantom::{random_phantom, render_phantom, Ellipse, PhantomSpec};
pub use projector::{back_project, backproject_angles, forward_project, project_angles};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parallel-beam projection geometry. Angles are uniform over [0, pi);
/// each sinogram row is one projection view angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    pub n_angles: usize,
    pub n_bins: usize,
    pub bin_spacing: f64,
    pub image_size: usize,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            n_angles: 64,
            n_bins: 64,
            bin_spacing: 1.0,
            image_size: 64,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_angles == 0 {
            return Err(Error::Config("n_angles must be >= 1".into()));
        }
        if self.n_bins < self.image_size {
            return Err(Error::Config(format!(
                "n_bins {} must cover the image ({} pixels)",
                self.n_bins, self.image_size
            )));
        }
        if !(self.bin_spacing > 0.0) {
            return Err(Error::Config("bin_spacing must be positive".into()));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        Ok(())
    }

    pub fn angle(&self, a: usize) -> f64 {
        std::f64::consts::PI * a as f64 / self.n_angles as f64
    }
}

/// Projection data: n_angles x n_bins nonnegative counts.
#[derive(Clone, Debug)]
pub struct Sinogram {
    data: Vec<f64>,
    geometry: Geometry,
}

impl Sinogram {
    pub fn new(geometry: Geometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geometry.n_angles * geometry.n_bins {
            return Err(Error::Shape(format!(
                "sinogram data length {} does not match {}x{}",
                data.len(),
                geometry.n_angles,
                geometry.n_bins
            )));
        }
        if data.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Invalid("sinogram entries must be finite and >= 0".into()));
        }
        Ok(Sinogram { data, geometry })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        Sinogram {
            data: vec![0.0; geometry.n_angles * geometry.n_bins],
            geometry,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.geometry.n_bins..(a + 1) * self.geometry.n_bins]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Sinogram {
        Sinogram {
            data: self.data.iter().map(|v| v * s).collect(),
            geometry: self.geometry,
        }
    }

    /// [n_angles, n_bins] tensor view of the counts.
    pub fn to_tensor<E: crate::tensor::Elem>(&self) -> crate::tensor::Tensor<E> {
        crate::tensor::Tensor::from_f64_slice(
            &[self.geometry.n_angles, self.geometry.n_bins],
            &self.data,
        )
    }
}

/// Square nonnegative activity image.
#[derive(Clone, Debug)]
pub struct ImageGrid {
    data: Vec<f64>,
    size: usize,
}

impl ImageGrid {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::Shape(format!(
                "image data length {} does not match {size}x{size}",
                data.len()
            )));
        }
        if data.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Invalid("image entries must be finite and >= 0".into()));
        }
        Ok(ImageGrid { data, size })
    }

    pub fn zeros(size: usize) -> Self {
        ImageGrid {
            data: vec![0.0; size * size],
            size,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> ImageGrid {
        ImageGrid {
            data: self.data.iter().map(|v| v * s).collect(),
            size: self.size,
        }
    }

    /// [size, size] tensor view of the activity.
    pub fn to_tensor<E: crate::tensor::Elem>(&self) -> crate::tensor::Tensor<E> {
        crate::tensor::Tensor::from_f64_slice(&[self.size, self.size], &self.data)
    }

    /// Builds an image from a square tensor, clamping tiny negatives at 0.
    pub fn from_tensor<E: crate::tensor::Elem>(t: &crate::tensor::Tensor<E>) -> Result<ImageGrid> {
        let s = t.shape();
        let size = match s {
            [a, b] if a == b => *a,
            [1, a, b] if a == b => *a,
            _ => return Err(Error::Shape(format!("not a square image tensor: {s:?}"))),
        };
        let data = t.data().iter().map(|v| v.as_f64().max(0.0)).collect();
        ImageGrid::new(size, data)
    }
}
