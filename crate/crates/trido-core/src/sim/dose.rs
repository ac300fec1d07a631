//! Low-dose acquisition surrogate: Poisson count thinning.

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rand_distr::Poisson;

use super::Sinogram;
use crate::error::{Error, Result};

/// Draws each bin from Poisson(dose_factor * count) and rescales by
/// 1/dose_factor, so the expectation matches the input while the variance
/// grows as 1/dose_factor. Deterministic per (seed, bin index): every bin
/// samples from its own counter-addressed stream.
pub fn simulate_dose(sino: &Sinogram, dose_factor: f64, seed: u64) -> Result<Sinogram> {
    if !(dose_factor > 0.0 && dose_factor <= 1.0) {
        return Err(Error::Invalid(format!(
            "dose_factor {dose_factor} outside (0, 1]"
        )));
    }
    let mut data = vec![0.0; sino.data().len()];
    for (i, (&count, out)) in sino.data().iter().zip(&mut data).enumerate() {
        let lambda = dose_factor * count;
        if lambda == 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let draw: f64 = rng.sample(Poisson::new(lambda).expect("lambda > 0"));
        *out = draw / dose_factor;
    }
    Sinogram::new(*sino.geometry(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Geometry;

    fn small_geo() -> Geometry {
        Geometry {
            n_angles: 2,
            n_bins: 8,
            bin_spacing: 1.0,
            image_size: 8,
        }
    }

    #[test]
    fn zero_sinogram_stays_zero() {
        let sino = Sinogram::zeros(small_geo());
        for seed in [0u64, 1, 99] {
            let out = simulate_dose(&sino, 0.25, seed).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let geo = small_geo();
        let sino = Sinogram::new(geo, (0..16).map(|i| (i * 37) as f64).collect()).unwrap();
        let a = simulate_dose(&sino, 0.25, 7).unwrap();
        let b = simulate_dose(&sino, 0.25, 7).unwrap();
        assert_eq!(a.data(), b.data());
        let c = simulate_dose(&sino, 0.25, 8).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn monte_carlo_mean_matches_poisson_moments() {
        // bin value 400 at dose 0.25: per-sample sigma = sqrt(400/0.25) = 40,
        // so the mean of 1e4 seeds must land within 400 +- 3*sigma/100
        let geo = Geometry {
            n_angles: 1,
            n_bins: 1,
            bin_spacing: 1.0,
            image_size: 1,
        };
        let sino = Sinogram::new(geo, vec![400.0]).unwrap();
        let n = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for seed in 0..n {
            let v = simulate_dose(&sino, 0.25, seed as u64).unwrap().data()[0];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let sigma = (400.0f64 / 0.25).sqrt();
        assert!(
            (mean - 400.0).abs() < 3.0 * sigma / 100.0,
            "sample mean {mean}"
        );
        // variance should scale as 1/dose_factor: ~1600 here
        let var = sumsq / n as f64 - mean * mean;
        assert!(
            (var - sigma * sigma).abs() < 0.1 * sigma * sigma,
            "sample variance {var} vs {}",
            sigma * sigma
        );
    }

    #[test]
    fn invalid_dose_factor_errors() {
        let sino = Sinogram::zeros(small_geo());
        assert!(simulate_dose(&sino, 0.0, 1).is_err());
        assert!(simulate_dose(&sino, 1.5, 1).is_err());
        assert!(simulate_dose(&sino, -0.1, 1).is_err());
        assert!(simulate_dose(&sino, 1.0, 1).is_ok());
    }
}
