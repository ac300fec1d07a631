//! Checkpoint container: named parameter tensors, Adam moments, step and
//! epoch counters, and the run configuration that produced them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::optim::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TDC1";
const VERSION: u16 = 1;

/// FNV-1a digest used to fingerprint the configuration.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub struct Checkpoint {
    pub store: ParamStore<f32>,
    pub completed_epochs: usize,
    pub step: u64,
    pub config_toml: String,
}

impl Checkpoint {
    pub fn config_digest(&self) -> u64 {
        fnv1a64(self.config_toml.as_bytes())
    }
}

pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore<f32>,
    completed_epochs: usize,
    step: u64,
    config_toml: &str,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(completed_epochs as u32)?;
    w.write_u64::<LittleEndian>(step)?;
    w.write_u64::<LittleEndian>(fnv1a64(config_toml.as_bytes()))?;
    let cfg = config_toml.as_bytes();
    w.write_u32::<LittleEndian>(cfg.len() as u32)?;
    w.write_all(cfg)?;
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for (name, p) in store.iter() {
        let nb = name.as_bytes();
        w.write_u16::<LittleEndian>(nb.len() as u16)?;
        w.write_all(nb)?;
        w.write_u8(p.trainable() as u8)?;
        w.write_u8(p.shape().len() as u8)?;
        for &e in p.shape() {
            w.write_u32::<LittleEndian>(e as u32)?;
        }
        w.write_u64::<LittleEndian>(p.step())?;
        let (m, v) = p.moments();
        for &x in p.value().data() {
            w.write_f32::<LittleEndian>(x)?;
        }
        for &x in m {
            w.write_f32::<LittleEndian>(x)?;
        }
        for &x in v {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "not a checkpoint file (magic {magic:?})"
        )));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let completed_epochs = r.read_u32::<LittleEndian>()? as usize;
    let step = r.read_u64::<LittleEndian>()?;
    let digest = r.read_u64::<LittleEndian>()?;
    let cfg_len = r.read_u32::<LittleEndian>()? as usize;
    let mut cfg = vec![0u8; cfg_len];
    r.read_exact(&mut cfg)?;
    let config_toml = String::from_utf8(cfg)
        .map_err(|_| Error::Format("checkpoint config is not valid UTF-8".into()))?;
    if fnv1a64(config_toml.as_bytes()) != digest {
        return Err(Error::Format("checkpoint config digest mismatch".into()));
    }

    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut nb = vec![0u8; name_len];
        r.read_exact(&mut nb)?;
        let name = String::from_utf8(nb)
            .map_err(|_| Error::Format("parameter name is not valid UTF-8".into()))?;
        let trainable = r.read_u8()? != 0;
        let rank = r.read_u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let p_step = r.read_u64::<LittleEndian>()?;
        let n: usize = shape.iter().product();
        let mut read_vec = |n: usize| -> Result<Vec<f32>> {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(r.read_f32::<LittleEndian>()?);
            }
            Ok(v)
        };
        let value = read_vec(n)?;
        let m = read_vec(n)?;
        let v = read_vec(n)?;
        if trainable {
            store.insert(&name, Tensor::new(&shape, value));
        } else {
            store.insert_frozen(&name, Tensor::new(&shape, value));
        }
        store.set_state(&name, m, v, p_step);
    }
    Ok(Checkpoint {
        store,
        completed_epochs,
        step,
        config_toml,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SEFormerConfig, SSRFormerConfig};
    use crate::sim::{make_dataset, DatasetParams, Geometry};
    use crate::train::{TrainConfig, TrainSession};

    fn tiny_session(seed: u64, epochs: usize) -> (TrainSession, Vec<crate::sim::SampleTriple>) {
        let geo = Geometry {
            n_angles: 16,
            n_bins: 16,
            bin_spacing: 1.0,
            image_size: 16,
        };
        let ds = make_dataset(&DatasetParams {
            n_slices: 2,
            geometry: geo,
            seed: 3,
            count_scale: 1e3,
            osem_subsets: 4,
            osem_iters: 3,
            ..DatasetParams::default()
        })
        .unwrap();
        let se_cfg = SEFormerConfig {
            h_s: 16,
            w_s: 16,
            c_s: 1,
            d: 16,
            t_blocks: 1,
            n_heads: 2,
            ffn_ratio: 2,
        };
        let ssr_cfg = SSRFormerConfig {
            channels: [4, 4, 8, 8],
            heads: [1, 2, 2, 2],
            window: 2,
            input_size: (16, 16),
            in_channels: 1,
            out_channels: 1,
            ffn_ratio: 2,
        };
        let cfg = TrainConfig {
            epochs,
            warm_epochs: 1,
            batch_size: 2,
            base_lr: 1e-3,
            seed,
            ..TrainConfig::default()
        };
        (
            TrainSession::new(se_cfg, ssr_cfg, cfg).unwrap(),
            ds.samples,
        )
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.tdc");
        let (mut session, samples) = tiny_session(7, 2);
        session.train(&samples, &[], |_, _, _, _| Ok(())).unwrap();
        save_checkpoint(&path, &session.store, 2, session.step, "cfg = 1\n").unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.completed_epochs, 2);
        assert_eq!(ck.step, session.step);
        assert_eq!(ck.config_toml, "cfg = 1\n");
        for (name, p) in session.store.iter() {
            let q = ck.store.get(name);
            assert_eq!(p.value().data(), q.value().data(), "{name} value");
            assert_eq!(p.moments().0, q.moments().0, "{name} first moment");
            assert_eq!(p.moments().1, q.moments().1, "{name} second moment");
            assert_eq!(p.step(), q.step(), "{name} step");
            assert_eq!(p.trainable(), q.trainable(), "{name} trainable");
        }
    }

    #[test]
    fn resume_reproduces_uninterrupted_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.tdc");

        // uninterrupted: 4 epochs
        let (mut full, samples) = tiny_session(11, 4);
        let full_history = full.train(&samples, &[], |_, _, _, _| Ok(())).unwrap();

        // interrupted: 2 epochs, checkpoint, resume for the remaining 2
        let (mut first, _) = tiny_session(11, 2);
        first.train(&samples, &[], |_, _, _, _| Ok(())).unwrap();
        save_checkpoint(&path, &first.store, 2, first.step, "").unwrap();

        let ck = load_checkpoint(&path).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            ..first.cfg
        };
        let mut resumed =
            TrainSession::resume(first.se.cfg, first.ssr.cfg, cfg, ck.store, ck.step, 2).unwrap();
        let tail = resumed.train(&samples, &[], |_, _, _, _| Ok(())).unwrap();
        assert_eq!(
            &full_history[2..],
            &tail[..],
            "resumed run must match the uninterrupted trajectory bit-exactly"
        );
    }

    #[test]
    fn rejects_corrupted_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tdc");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
