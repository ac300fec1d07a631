//! Ellipse phantoms standing in for clinical slices.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ImageGrid;
use crate::error::{Error, Result};

/// One additive ellipse in normalized coordinates: the image spans
/// [-1, 1] x [-1, 1], centers and semi-axes are fractions of the half-width.
#[derive(Clone, Copy, Debug)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub rotation: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub ellipses: Vec<Ellipse>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ellipses.is_empty() {
            return Err(Error::Invalid("phantom needs at least one ellipse".into()));
        }
        for (i, e) in self.ellipses.iter().enumerate() {
            let ok_center = e.center.0.abs() <= 1.0 && e.center.1.abs() <= 1.0;
            let ok_axes = e.semi_axes.0 > 0.0
                && e.semi_axes.0 <= 1.0
                && e.semi_axes.1 > 0.0
                && e.semi_axes.1 <= 1.0;
            if !ok_center || !ok_axes || !e.intensity.is_finite() {
                return Err(Error::Invalid(format!("ellipse {i} out of range")));
            }
        }
        Ok(())
    }
}

/// Rasterizes a phantom: each pixel sums the intensities of the ellipses
/// containing its center; the sum is clamped at 0 from below.
pub fn render_phantom(spec: &PhantomSpec, size: usize) -> Result<ImageGrid> {
    if size < 8 {
        return Err(Error::Invalid(format!("image size {size} must be >= 8")));
    }
    spec.validate()?;
    let mut data = vec![0.0; size * size];
    for row in 0..size {
        // normalized pixel-center coordinates
        let v = (row as f64 + 0.5) / size as f64 * 2.0 - 1.0;
        for col in 0..size {
            let u = (col as f64 + 0.5) / size as f64 * 2.0 - 1.0;
            let mut acc = 0.0;
            for e in &spec.ellipses {
                let dx = u - e.center.0;
                let dy = v - e.center.1;
                let (s, c) = e.rotation.sin_cos();
                let rx = dx * c + dy * s;
                let ry = -dx * s + dy * c;
                let q = (rx / e.semi_axes.0).powi(2) + (ry / e.semi_axes.1).powi(2);
                if q <= 1.0 {
                    acc += e.intensity;
                }
            }
            data[row * size + col] = acc.max(0.0);
        }
    }
    ImageGrid::new(size, data)
}

/// Randomized phantom: one large body ellipse plus a few hot or cold
/// internal features. Negative intensities model cold spots; the render
/// clamp keeps the result nonnegative.
pub fn random_phantom(rng: &mut ChaCha8Rng) -> PhantomSpec {
    let mut ellipses = vec![Ellipse {
        center: (rng.random_range(-0.12..0.12), rng.random_range(-0.12..0.12)),
        semi_axes: (rng.random_range(0.55..0.85), rng.random_range(0.5..0.8)),
        rotation: rng.random_range(0.0..std::f64::consts::PI),
        intensity: rng.random_range(0.5..1.0),
    }];
    let n_extra = rng.random_range(2..=5);
    for _ in 0..n_extra {
        ellipses.push(Ellipse {
            center: (rng.random_range(-0.45..0.45), rng.random_range(-0.45..0.45)),
            semi_axes: (rng.random_range(0.06..0.28), rng.random_range(0.06..0.28)),
            rotation: rng.random_range(0.0..std::f64::consts::PI),
            intensity: rng.random_range(-0.35..0.9),
        });
    }
    PhantomSpec { ellipses }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(intensity: f64) -> PhantomSpec {
        PhantomSpec {
            ellipses: vec![Ellipse {
                center: (0.0, 0.0),
                semi_axes: (0.5, 0.5),
                rotation: 0.0,
                intensity,
            }],
        }
    }

    #[test]
    fn zero_intensity_gives_zero_image() {
        let img = render_phantom(&circle(0.0), 32).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_circle_containment() {
        let img = render_phantom(&circle(1.0), 64).unwrap();
        assert_eq!(img.at(32, 32), 1.0);
        assert_eq!(img.at(1, 1), 0.0);
    }

    #[test]
    fn overlapping_ellipses_are_additive() {
        let spec = PhantomSpec {
            ellipses: vec![
                Ellipse {
                    center: (-0.1, 0.0),
                    semi_axes: (0.4, 0.4),
                    rotation: 0.0,
                    intensity: 1.0,
                },
                Ellipse {
                    center: (0.1, 0.0),
                    semi_axes: (0.4, 0.4),
                    rotation: 0.0,
                    intensity: 0.5,
                },
            ],
        };
        let img = render_phantom(&spec, 64).unwrap();
        // center lies inside both
        assert_eq!(img.at(32, 32), 1.5);
    }

    #[test]
    fn negative_sum_clamps_to_zero() {
        let spec = PhantomSpec {
            ellipses: vec![Ellipse {
                center: (0.0, 0.0),
                semi_axes: (0.5, 0.5),
                rotation: 0.0,
                intensity: -1.0,
            }],
        };
        let img = render_phantom(&spec, 32).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_spec_and_small_size_error() {
        assert!(render_phantom(&PhantomSpec { ellipses: vec![] }, 32).is_err());
        assert!(render_phantom(&circle(1.0), 4).is_err());
    }
}
