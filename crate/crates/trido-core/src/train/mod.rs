//! Triple-domain objective and the end-to-end training loop: one joint
//! loss over the denoised sinogram and the reconstructed image, with
//! gradients flowing through the denoiser.

pub mod checkpoint;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{psnr, Psnr};
use crate::model::{SEFormer, SEFormerConfig, SSRFormer, SSRFormerConfig};
use crate::sim::{ImageGrid, SampleTriple};
use crate::tensor::optim::{lr_at, AdamParams, ParamStore};
use crate::tensor::{Elem, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warm_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Weight of the image-domain loss in the joint objective.
    pub lambda: f64,
    pub seed: u64,
    pub dose_factor: f64,
    /// Checkpoint cadence in epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Ablation switch: keep every GFP filter at its all-ones start and
    /// exclude it from optimization.
    pub freeze_gfp: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            warm_epochs: 50,
            batch_size: 4,
            base_lr: 4e-4,
            lambda: 10.0,
            seed: 0,
            dose_factor: 0.25,
            checkpoint_every: 0,
            freeze_gfp: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config("lambda must be > 0".into()));
        }
        if self.warm_epochs >= self.epochs {
            return Err(Error::Config("warm_epochs must be < epochs".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.dose_factor > 0.0 && self.dose_factor <= 1.0) {
            return Err(Error::Config("dose_factor outside (0, 1]".into()));
        }
        Ok(())
    }
}

/// Sinogram-domain loss: the L2 distance ||S_S - S_E||_2 per sample
/// (root of the summed squares, not the mean square).
pub fn loss_sino<E: Elem>(tape: &Tape<E>, s_s: &Tensor<E>, s_e: &Tensor<E>) -> Tensor<E> {
    assert_eq!(s_s.shape(), s_e.shape(), "loss_sino: shape mismatch");
    let d = tape.sub(s_s, s_e);
    let sq = tape.mul(&d, &d);
    let total = tape.sum_all(&sq);
    tape.sqrt(&total)
}

/// Image-domain loss: elementwise-mean absolute error ||I_S - I_E||_1 / n.
pub fn loss_img<E: Elem>(tape: &Tape<E>, i_s: &Tensor<E>, i_e: &Tensor<E>) -> Tensor<E> {
    assert_eq!(i_s.shape(), i_e.shape(), "loss_img: shape mismatch");
    let d = tape.sub(i_s, i_e);
    let a = tape.abs(&d);
    tape.mean_all(&a)
}

/// Joint objective L_sino + lambda * L_img.
pub fn loss_total<E: Elem>(
    tape: &Tape<E>,
    l_sino: &Tensor<E>,
    l_img: &Tensor<E>,
    lambda: f64,
) -> Tensor<E> {
    let weighted = tape.scale(l_img, E::elem(lambda));
    tape.add(l_sino, &weighted)
}

/// One line of the training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_sino: f64,
    pub loss_img: f64,
    pub loss_total: f64,
    pub val_psnr: Option<f64>,
}

/// Holds both networks, their parameters, and the optimizer state.
pub struct TrainSession {
    pub se: SEFormer,
    pub ssr: SSRFormer,
    pub store: ParamStore<f32>,
    pub cfg: TrainConfig,
    pub step: u64,
    pub start_epoch: usize,
    adam: AdamParams,
}

struct SampleOutput {
    l_sino: f64,
    l_img: f64,
    l_total: f64,
    grads: BTreeMap<String, Vec<f32>>,
}

impl TrainSession {
    /// Fresh session: parameters initialized from the config seed.
    pub fn new(se_cfg: SEFormerConfig, ssr_cfg: SSRFormerConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let se = SEFormer::new(se_cfg)?;
        let ssr = SSRFormer::new(ssr_cfg)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        se.init_params(&mut store, &mut rng);
        ssr.init_params(&mut store, &mut rng);
        if cfg.freeze_gfp {
            for name in ssr.gfp_param_names() {
                store.set_trainable(&name, false);
            }
        }
        Ok(TrainSession {
            se,
            ssr,
            store,
            cfg,
            step: 0,
            start_epoch: 0,
            adam: AdamParams::default(),
        })
    }

    /// Session resuming from checkpointed parameters and optimizer state.
    pub fn resume(
        se_cfg: SEFormerConfig,
        ssr_cfg: SSRFormerConfig,
        cfg: TrainConfig,
        store: ParamStore<f32>,
        step: u64,
        completed_epochs: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let se = SEFormer::new(se_cfg)?;
        let ssr = SSRFormer::new(ssr_cfg)?;
        Ok(TrainSession {
            se,
            ssr,
            store,
            cfg,
            step,
            start_epoch: completed_epochs,
            adam: AdamParams::default(),
        })
    }

    /// Denoised sinogram S_E at inference (no gradient tracking).
    pub fn denoise(&self, s_l: &Tensor<f32>) -> Tensor<f32> {
        let tape = Tape::disabled();
        let view = self.store.leaf_all(&tape);
        self.se.forward(&tape, &view, s_l)
    }

    /// Full pipeline at inference: (S_E, I_E). The image is clamped
    /// nonnegative here, matching the inference-only clamp contract.
    pub fn reconstruct(&self, s_l: &Tensor<f32>) -> (Tensor<f32>, Tensor<f32>) {
        let tape = Tape::disabled();
        let view = self.store.leaf_all(&tape);
        let s_e = self.se.forward(&tape, &view, s_l);
        let i_e = self.ssr.forward(&tape, &view, &s_e);
        let (h, w) = self.ssr.cfg.input_size;
        let i_e = tape.reshape(&i_e, &[h, w]).clamp_min_zero();
        (s_e, i_e)
    }

    fn forward_backward(&self, sample: &SampleTriple) -> Result<SampleOutput> {
        let tape = Tape::new();
        let view = self.store.leaf_all(&tape);
        let s_l: Tensor<f32> = sample.s_l.to_tensor();
        let s_s: Tensor<f32> = sample.s_s.to_tensor();
        let i_s: Tensor<f32> = sample.i_s.to_tensor();

        let s_e = self.se.forward(&tape, &view, &s_l);
        let i_e = self.ssr.forward(&tape, &view, &s_e);
        let (h, w) = self.ssr.cfg.input_size;
        let i_e = tape.reshape(&i_e, &[h, w]);

        let l_s = loss_sino(&tape, &s_s, &s_e);
        let l_i = loss_img(&tape, &i_s, &i_e);
        let l_t = loss_total(&tape, &l_s, &l_i, self.cfg.lambda);
        let grads = tape.backward(&l_t);
        Ok(SampleOutput {
            l_sino: l_s.item() as f64,
            l_img: l_i.item() as f64,
            l_total: l_t.item() as f64,
            grads: view.collect_grads(&grads),
        })
    }

    /// Name of the first parameter group with a non-finite gradient or
    /// value, for the divergence diagnostic.
    fn offending_param_group(&self, grads: &BTreeMap<String, Vec<f32>>) -> String {
        for (name, g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return name.clone();
            }
        }
        for (name, p) in self.store.iter() {
            if p.value().data().iter().any(|v| !v.is_finite()) {
                return name.to_string();
            }
        }
        "unknown".to_string()
    }

    /// Mean validation PSNR of the clamped reconstruction against the
    /// OSEM ground truth.
    pub fn validation_psnr(&self, val: &[SampleTriple]) -> Result<f64> {
        let scores: Vec<f64> = val
            .par_iter()
            .map(|sample| -> Result<f64> {
                let (_, i_e) = self.reconstruct(&sample.s_l.to_tensor());
                let img = ImageGrid::from_tensor(&i_e)?;
                match psnr(&img, &sample.i_s)? {
                    Psnr::Db(db) => Ok(db),
                    // an exact match is effectively unbounded quality
                    Psnr::Identical => Ok(f64::INFINITY),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len() as f64)
    }

    /// Validation-split MSE of the denoised sinogram against the
    /// standard-dose target, and of the raw low-dose input for comparison.
    pub fn sinogram_mse(&self, val: &[SampleTriple]) -> (f64, f64) {
        let per: Vec<(f64, f64)> = val
            .par_iter()
            .map(|sample| {
                let s_e = self.denoise(&sample.s_l.to_tensor());
                let mse = |a: &[f32], b: &[f64]| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (*x as f64 - y) * (*x as f64 - y))
                        .sum::<f64>()
                        / a.len() as f64
                };
                let denoised = mse(s_e.data(), sample.s_s.data());
                let raw = sample
                    .s_l
                    .data()
                    .iter()
                    .zip(sample.s_s.data())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    / sample.s_l.data().len() as f64;
                (denoised, raw)
            })
            .collect();
        let n = per.len() as f64;
        (
            per.iter().map(|p| p.0).sum::<f64>() / n,
            per.iter().map(|p| p.1).sum::<f64>() / n,
        )
    }

    /// Trains over `train_data`, recording per-epoch mean losses and
    /// validation PSNR. `on_epoch` fires after every epoch (checkpoint
    /// hook). Deterministic under a fixed seed: shuffles come from an
    /// epoch-seeded stream and batch gradients reduce in sample order.
    pub fn train<F>(
        &mut self,
        train_data: &[SampleTriple],
        val_data: &[SampleTriple],
        mut on_epoch: F,
    ) -> Result<Vec<EpochRecord>>
    where
        F: FnMut(&ParamStore<f32>, u64, usize, &EpochRecord) -> Result<()>,
    {
        if train_data.is_empty() {
            return Err(Error::Invalid("training dataset is empty".into()));
        }
        self.cfg.validate()?;
        let mut history = Vec::new();
        for epoch in self.start_epoch..self.cfg.epochs {
            let lr = lr_at(epoch, self.cfg.base_lr, self.cfg.warm_epochs, self.cfg.epochs);
            let mut order: Vec<usize> = (0..train_data.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);

            let (mut sum_s, mut sum_i, mut sum_t) = (0.0, 0.0, 0.0);
            let mut n_batches = 0usize;
            for chunk in order.chunks(self.cfg.batch_size) {
                let outputs: Vec<SampleOutput> = chunk
                    .par_iter()
                    .map(|&i| self.forward_backward(&train_data[i]))
                    .collect::<Result<Vec<_>>>()?;
                let inv = 1.0f32 / outputs.len() as f32;
                let mut batch_grads: BTreeMap<String, Vec<f32>> = BTreeMap::new();
                let (mut b_s, mut b_i, mut b_t) = (0.0, 0.0, 0.0);
                for out in &outputs {
                    b_s += out.l_sino;
                    b_i += out.l_img;
                    b_t += out.l_total;
                    for (name, g) in &out.grads {
                        let acc = batch_grads
                            .entry(name.clone())
                            .or_insert_with(|| vec![0.0; g.len()]);
                        for (a, v) in acc.iter_mut().zip(g) {
                            *a += v * inv;
                        }
                    }
                }
                let k = outputs.len() as f64;
                let (b_s, b_i, b_t) = (b_s / k, b_i / k, b_t / k);
                if !b_t.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step: self.step,
                        param_group: self.offending_param_group(&batch_grads),
                    });
                }
                self.store.adam_step(&batch_grads, lr, self.adam)?;
                self.step += 1;
                sum_s += b_s;
                sum_i += b_i;
                sum_t += b_t;
                n_batches += 1;
            }

            let val_psnr = if val_data.is_empty() {
                None
            } else {
                Some(self.validation_psnr(val_data)?)
            };
            let record = EpochRecord {
                epoch,
                lr,
                loss_sino: sum_s / n_batches as f64,
                loss_img: sum_i / n_batches as f64,
                loss_total: sum_t / n_batches as f64,
                val_psnr,
            };
            log::info!(
                "epoch {:>4}  lr {:.3e}  L_sino {:.5}  L_img {:.5}  L_total {:.5}  val PSNR {}",
                record.epoch,
                record.lr,
                record.loss_sino,
                record.loss_img,
                record.loss_total,
                record
                    .val_psnr
                    .map(|v| format!("{v:.3} dB"))
                    .unwrap_or_else(|| "-".into())
            );
            on_epoch(&self.store, self.step, epoch, &record)?;
            history.push(record);
        }
        Ok(history)
    }
}
