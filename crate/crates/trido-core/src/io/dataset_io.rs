//! On-disk dataset layout: one directory per split of tensor files plus a
//! metadata file recording geometry, dose, normalization, and seed.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensorfile;
use crate::error::{Error, Result};
use crate::sim::{DatasetMeta, ImageGrid, SampleTriple, Sinogram};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_train: usize,
    pub n_val: usize,
    pub dataset: DatasetMeta,
}

pub const META_FILE: &str = "meta.toml";

fn slice_paths(dir: &Path, i: usize) -> [std::path::PathBuf; 3] {
    [
        dir.join(format!("slice_{i:05}.s_l.tdt")),
        dir.join(format!("slice_{i:05}.s_s.tdt")),
        dir.join(format!("slice_{i:05}.i_s.tdt")),
    ]
}

fn save_split(dir: &Path, samples: &[SampleTriple]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        let [pl, ps, pi] = slice_paths(dir, i);
        let geo = s.s_l.geometry();
        let shape = [geo.n_angles, geo.n_bins];
        let f32ify = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        tensorfile::write_f32(&pl, &shape, &f32ify(s.s_l.data()))?;
        tensorfile::write_f32(&ps, &shape, &f32ify(s.s_s.data()))?;
        tensorfile::write_f32(&pi, &[s.i_s.size(), s.i_s.size()], &f32ify(s.i_s.data()))?;
    }
    Ok(())
}

pub fn save_dataset(
    dir: &Path,
    train: &[SampleTriple],
    val: &[SampleTriple],
    meta: &DatasetMeta,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_split(&dir.join("train"), train)?;
    save_split(&dir.join("val"), val)?;
    let manifest = DatasetManifest {
        n_train: train.len(),
        n_val: val.len(),
        dataset: *meta,
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(META_FILE), text)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join(META_FILE))?;
    toml::from_str(&text).map_err(|e| Error::Format(format!("bad dataset metadata: {e}")))
}

fn load_split(dir: &Path, n: usize, manifest: &DatasetManifest) -> Result<Vec<SampleTriple>> {
    let geo = manifest.dataset.geometry;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let [pl, ps, pi] = slice_paths(dir, i);
        let read_sino = |p: &Path| -> Result<Sinogram> {
            let (shape, data) = tensorfile::read(p)?.to_f64()?;
            if shape != [geo.n_angles, geo.n_bins] {
                return Err(Error::Shape(format!(
                    "{}: extents {shape:?} do not match geometry {}x{}",
                    p.display(),
                    geo.n_angles,
                    geo.n_bins
                )));
            }
            Sinogram::new(geo, data)
        };
        let (ishape, idata) = tensorfile::read(&pi)?.to_f64()?;
        if ishape != [geo.image_size, geo.image_size] {
            return Err(Error::Shape(format!(
                "{}: extents {ishape:?} do not match image size {}",
                pi.display(),
                geo.image_size
            )));
        }
        out.push(SampleTriple {
            s_l: read_sino(&pl)?,
            s_s: read_sino(&ps)?,
            i_s: ImageGrid::new(geo.image_size, idata)?,
        });
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<(Vec<SampleTriple>, Vec<SampleTriple>, DatasetManifest)> {
    let manifest = load_manifest(dir)?;
    let train = load_split(&dir.join("train"), manifest.n_train, &manifest)?;
    let val = load_split(&dir.join("val"), manifest.n_val, &manifest)?;
    Ok((train, val, manifest))
}
