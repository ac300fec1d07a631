//! Human-readable run configuration (TOML) covering every default the
//! pipeline uses. Unknown keys are rejected; values are validated against
//! the module invariants before any compute starts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SEFormerConfig, SSRFormerConfig};
use crate::sim::{DatasetParams, Geometry};
use crate::train::checkpoint::fnv1a64;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub dose_factor: f64,
    pub seed: u64,
    pub count_scale: f64,
    pub noise: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 200,
            n_val: 40,
            dose_factor: 0.25,
            seed: 7,
            count_scale: 1e4,
            noise: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeFormerSection {
    pub d: usize,
    pub t_blocks: usize,
    pub n_heads: usize,
    pub ffn_ratio: usize,
}

impl Default for SeFormerSection {
    fn default() -> Self {
        SeFormerSection {
            d: 256,
            t_blocks: 2,
            n_heads: 4,
            ffn_ratio: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsrFormerSection {
    pub channels: [usize; 4],
    pub heads: [usize; 4],
    pub window: usize,
    pub ffn_ratio: usize,
}

impl Default for SsrFormerSection {
    fn default() -> Self {
        let d = SSRFormerConfig::default();
        SsrFormerSection {
            channels: d.channels,
            heads: d.heads,
            window: d.window,
            ffn_ratio: d.ffn_ratio,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OsemConfig {
    pub n_subsets: usize,
    pub n_iters: usize,
}

impl Default for OsemConfig {
    fn default() -> Self {
        OsemConfig {
            n_subsets: 8,
            n_iters: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub dataset: DatasetConfig,
    pub se_former: SeFormerSection,
    pub ssr_former: SsrFormerSection,
    pub train: TrainConfig,
    pub osem: OsemConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Canonical TOML rendering; field order is fixed, so equal configs
    /// produce identical strings and digests.
    pub fn to_canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn digest(&self) -> Result<u64> {
        Ok(fnv1a64(self.to_canonical_toml()?.as_bytes()))
    }

    pub fn se_config(&self) -> SEFormerConfig {
        SEFormerConfig {
            h_s: self.geometry.n_angles,
            w_s: self.geometry.n_bins,
            c_s: 1,
            d: self.se_former.d,
            t_blocks: self.se_former.t_blocks,
            n_heads: self.se_former.n_heads,
            ffn_ratio: self.se_former.ffn_ratio,
        }
    }

    pub fn ssr_config(&self) -> SSRFormerConfig {
        SSRFormerConfig {
            channels: self.ssr_former.channels,
            heads: self.ssr_former.heads,
            window: self.ssr_former.window,
            input_size: (self.geometry.n_angles, self.geometry.n_bins),
            in_channels: 1,
            out_channels: 1,
            ffn_ratio: self.ssr_former.ffn_ratio,
        }
    }

    pub fn dataset_params(&self, n_slices: usize) -> DatasetParams {
        DatasetParams {
            n_slices,
            geometry: self.geometry,
            dose_factor: self.dataset.dose_factor,
            seed: self.dataset.seed,
            count_scale: self.dataset.count_scale,
            noise: self.dataset.noise,
            osem_subsets: self.osem.n_subsets,
            osem_iters: self.osem.n_iters,
        }
    }

    /// Invariants needed to simulate a dataset (geometry and dose only;
    /// model shapes are irrelevant until training).
    pub fn validate_for_simulate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.dataset.n_train == 0 {
            return Err(Error::Config("n_train must be >= 1".into()));
        }
        if !(self.dataset.dose_factor > 0.0 && self.dataset.dose_factor <= 1.0) {
            return Err(Error::Config("dose_factor outside (0, 1]".into()));
        }
        if !(self.dataset.count_scale > 0.0) {
            return Err(Error::Config("count_scale must be positive".into()));
        }
        Ok(())
    }

    /// Full validation for training/reconstruction: every module invariant,
    /// including the sinogram/image congruence the U-shape requires.
    pub fn validate(&self) -> Result<()> {
        self.validate_for_simulate()?;
        self.se_config().validate()?;
        self.ssr_config().validate()?;
        self.train.validate()?;
        if self.geometry.n_angles != self.geometry.image_size
            || self.geometry.n_bins != self.geometry.image_size
        {
            return Err(Error::Config(format!(
                "sinogram extents {}x{} must match the image size {} so the \
                 reconstructor's skip connections line up",
                self.geometry.n_angles, self.geometry.n_bins, self.geometry.image_size
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_carry_protocol_values() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.se_former.t_blocks, 2);
        assert_eq!(cfg.ssr_former.window, 4);
        assert_eq!(cfg.train.lambda, 10.0);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.dataset.dose_factor, 0.25);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml("[train]\nbogus_key = 1\n");
        assert!(err.is_err(), "unknown keys must be rejected");
        let err = RunConfig::from_toml("[nonexistent_section]\nx = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_toml("[train]\nepochs = 42\nwarm_epochs = 10\n").unwrap();
        assert_eq!(cfg.train.epochs, 42);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.geometry.image_size, 64);
    }

    #[test]
    fn invalid_values_rejected_before_compute() {
        // embedding width not a multiple of the bin count
        let cfg = RunConfig::from_toml("[se_former]\nd = 250\n").unwrap();
        assert!(cfg.validate().is_err());
        // incongruent sinogram/image extents
        let cfg = RunConfig::from_toml("[geometry]\nn_angles = 128\n").unwrap();
        assert!(cfg.validate().is_err());
        // lambda invariant
        let cfg = RunConfig::from_toml("[train]\nlambda = 0.0\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn canonical_toml_roundtrip_and_digest_stability() {
        let cfg = RunConfig::default();
        let text = cfg.to_canonical_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.digest().unwrap(), back.digest().unwrap());
        let mut changed = cfg;
        changed.train.seed = 1234;
        assert_ne!(cfg.digest().unwrap(), changed.digest().unwrap());
    }
}
