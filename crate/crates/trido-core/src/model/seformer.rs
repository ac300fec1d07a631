//! Sinogram-domain denoiser. Each sinogram row is one projection view
//! angle; rows become tokens, a learnable position embedding keeps the
//! angular order, stacked transformer encoder blocks mix information across
//! view angles, and a feature-mapping head emits a residual that is added
//! back onto the input sinogram.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    ffn_forward, init_attn, init_ffn, init_layer_norm, layer_norm_at, multi_head_attention,
    AttnParams,
};
use crate::error::{Error, Result};
use crate::tensor::optim::{normal_tensor, ParamStore, ParamView};
use crate::tensor::{Elem, Tape, Tensor};

pub const PARAM_PREFIX: &str = "se_former";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SEFormerConfig {
    /// Projection view angles (token count).
    pub h_s: usize,
    /// Radial bins per row.
    pub w_s: usize,
    /// Sinogram channels; the pipeline uses single-channel data.
    pub c_s: usize,
    /// Embedding width; must be a multiple of `w_s` so the feature mapping
    /// can reshape tokens back onto the sinogram grid.
    pub d: usize,
    /// Number of encoder blocks (T).
    pub t_blocks: usize,
    pub n_heads: usize,
    pub ffn_ratio: usize,
}

impl Default for SEFormerConfig {
    fn default() -> Self {
        SEFormerConfig {
            h_s: 64,
            w_s: 64,
            c_s: 1,
            d: 256,
            t_blocks: 2,
            n_heads: 4,
            ffn_ratio: 4,
        }
    }
}

impl SEFormerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_s != 1 {
            return Err(Error::Config("sinogram channel count must be 1".into()));
        }
        if self.t_blocks == 0 {
            return Err(Error::Config("t_blocks must be >= 1".into()));
        }
        if self.d == 0 || self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {} must divide across {} heads",
                self.d, self.n_heads
            )));
        }
        if self.w_s == 0 || self.d % self.w_s != 0 {
            return Err(Error::Config(format!(
                "embedding width {} must be a multiple of w_s {}",
                self.d, self.w_s
            )));
        }
        if self.h_s == 0 || self.ffn_ratio == 0 {
            return Err(Error::Config("h_s and ffn_ratio must be positive".into()));
        }
        Ok(())
    }

    /// Channel count after reshaping tokens back to the sinogram grid.
    pub fn c_prime(&self) -> usize {
        self.d / self.w_s
    }
}

pub struct SEFormer {
    pub cfg: SEFormerConfig,
}

impl SEFormer {
    pub fn new(cfg: SEFormerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SEFormer { cfg })
    }

    /// Registers all parameters under the `se_former/` prefix.
    pub fn init_params<E: Elem>(&self, store: &mut ParamStore<E>, rng: &mut ChaCha8Rng) {
        let c = &self.cfg;
        let d = c.d;
        store.insert(
            &format!("{PARAM_PREFIX}/embed.w"),
            normal_tensor(rng, &[c.w_s * c.c_s, d], 0.02),
        );
        store.insert(&format!("{PARAM_PREFIX}/embed.b"), Tensor::zeros(&[d]));
        store.insert(
            &format!("{PARAM_PREFIX}/pos"),
            normal_tensor(rng, &[c.h_s, d], 0.02),
        );
        for j in 0..c.t_blocks {
            let b = format!("{PARAM_PREFIX}/block{j}");
            init_layer_norm(store, &format!("{b}.ln1"), d);
            init_attn(store, &format!("{b}.attn"), d, rng);
            init_layer_norm(store, &format!("{b}.ln2"), d);
            init_ffn(store, &format!("{b}.ffn"), d, d * c.ffn_ratio, rng);
        }
        store.insert(
            &format!("{PARAM_PREFIX}/map.w"),
            normal_tensor(rng, &[c.c_s, c.c_prime(), 1, 1], 0.02),
        );
        store.insert(&format!("{PARAM_PREFIX}/map.b"), Tensor::zeros(&[c.c_s]));
    }

    /// Row tokenization and embedding: rows flattened to length D, linearly
    /// projected to d, then the position embedding added. Returns F_0.
    pub fn embed_rows<E: Elem>(
        &self,
        tape: &Tape<E>,
        view: &ParamView<E>,
        s_l: &Tensor<E>,
    ) -> Tensor<E> {
        let c = &self.cfg;
        assert_eq!(
            s_l.shape(),
            &[c.h_s, c.w_s],
            "sinogram shape {:?} does not match config {}x{}",
            s_l.shape(),
            c.h_s,
            c.w_s
        );
        let proj = tape.matmul(s_l, view.get(&format!("{PARAM_PREFIX}/embed.w")));
        let proj = tape.add_bcast(&proj, view.get(&format!("{PARAM_PREFIX}/embed.b")));
        tape.add(&proj, view.get(&format!("{PARAM_PREFIX}/pos")))
    }

    /// One encoder block: G = F + MSA(LN(F)); F' = G + FFN(LN(G)).
    pub fn encoder_block<E: Elem>(
        &self,
        tape: &Tape<E>,
        view: &ParamView<E>,
        block: usize,
        f_prev: &Tensor<E>,
    ) -> Tensor<E> {
        let b = format!("{PARAM_PREFIX}/block{block}");
        let ln1 = layer_norm_at(tape, f_prev, view, &format!("{b}.ln1"));
        let attn = AttnParams::from_store(view, &format!("{b}.attn"));
        let (msa, _) = multi_head_attention(tape, &ln1, &attn, self.cfg.n_heads, None);
        let g = tape.add(f_prev, &msa);
        let ln2 = layer_norm_at(tape, &g, view, &format!("{b}.ln2"));
        let ff = ffn_forward(tape, &ln2, view, &format!("{b}.ffn"));
        tape.add(&g, &ff)
    }

    /// Feature mapping: tokens back onto the sinogram grid, then a 1x1
    /// channel projection from C' down to C_s. Returns the residual S_R.
    pub fn feature_map<E: Elem>(
        &self,
        tape: &Tape<E>,
        view: &ParamView<E>,
        f_t: &Tensor<E>,
    ) -> Tensor<E> {
        let c = &self.cfg;
        let cp = c.c_prime();
        let grid = tape.reshape(f_t, &[c.h_s, cp, c.w_s]);
        let grid = tape.permute(&grid, &[1, 0, 2]); // [C', H_s, W_s]
        let out = tape.conv2d(
            &grid,
            view.get(&format!("{PARAM_PREFIX}/map.w")),
            view.get(&format!("{PARAM_PREFIX}/map.b")),
        );
        tape.reshape(&out, &[c.h_s, c.w_s])
    }

    /// Full denoiser: S_E = S_L + feature_map(blocks(embed_rows(S_L))).
    pub fn forward<E: Elem>(
        &self,
        tape: &Tape<E>,
        view: &ParamView<E>,
        s_l: &Tensor<E>,
    ) -> Tensor<E> {
        let mut f = self.embed_rows(tape, view, s_l);
        for j in 0..self.cfg.t_blocks {
            f = self.encoder_block(tape, view, j, &f);
        }
        let s_r = self.feature_map(tape, view, &f);
        tape.add(s_l, &s_r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn tiny_cfg() -> SEFormerConfig {
        SEFormerConfig {
            h_s: 6,
            w_s: 8,
            c_s: 1,
            d: 16,
            t_blocks: 2,
            n_heads: 2,
            ffn_ratio: 2,
        }
    }

    fn setup(cfg: SEFormerConfig, seed: u64) -> (SEFormer, ParamStore<f64>) {
        let model = SEFormer::new(cfg).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.init_params(&mut store, &mut rng);
        (model, store)
    }

    fn random_sino(cfg: &SEFormerConfig, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        normal_tensor(&mut rng, &[cfg.h_s, cfg.w_s], 1.0)
    }

    #[test]
    fn config_validation_catches_reshape_constraint() {
        let mut cfg = tiny_cfg();
        cfg.d = 12; // not a multiple of w_s = 8
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg();
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        assert!(tiny_cfg().validate().is_ok());
    }

    #[test]
    fn zero_sinogram_embeds_to_position_embedding() {
        let (model, store) = setup(tiny_cfg(), 3);
        let tape = Tape::disabled();
        let view = store.leaf_all(&tape);
        let zero = Tensor::zeros(&[6, 8]);
        let f0 = model.embed_rows(&tape, &view, &zero);
        let pos = store.get("se_former/pos").value();
        assert_eq!(f0.data(), pos.data());
    }

    #[test]
    fn embedding_shape_and_row_independence() {
        let (model, store) = setup(tiny_cfg(), 4);
        let tape = Tape::disabled();
        let view = store.leaf_all(&tape);
        let s = random_sino(&model.cfg, 10);
        let f0 = model.embed_rows(&tape, &view, &s);
        assert_eq!(f0.shape(), &[6, 16]);

        // swapping two input rows swaps the pre-embedding projections
        let mut swapped = s.data().to_vec();
        for k in 0..8 {
            swapped.swap(k, 8 + k); // rows 0 and 1
        }
        let s2 = Tensor::new(&[6, 8], swapped);
        let pos = store.get("se_former/pos").value();
        let f0s = model.embed_rows(&tape, &view, &s2);
        let proj = |f: &Tensor<f64>, row: usize| {
            (0..16)
                .map(|c| f.data()[row * 16 + c] - pos.data()[row * 16 + c])
                .collect::<Vec<_>>()
        };
        for c in 0..16 {
            assert!((proj(&f0, 0)[c] - proj(&f0s, 1)[c]).abs() < 1e-12);
            assert!((proj(&f0, 1)[c] - proj(&f0s, 0)[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_block_residual_identity_when_projections_zero() {
        let (model, mut store) = setup(tiny_cfg(), 5);
        store.set_value("se_former/block0.attn.wo", vec![0.0; 16 * 16]);
        store.set_value("se_former/block0.attn.bo", vec![0.0; 16]);
        store.set_value("se_former/block0.ffn.w2", vec![0.0; 32 * 16]);
        store.set_value("se_former/block0.ffn.b2", vec![0.0; 16]);
        let tape = Tape::disabled();
        let view = store.leaf_all(&tape);
        let f = random_sino(&model.cfg, 11); // any [6,8] -> embed first
        let f0 = model.embed_rows(&tape, &view, &f);
        let f1 = model.encoder_block(&tape, &view, 0, &f0);
        assert_eq!(f1.data(), f0.data(), "zeroed block must be the identity");
        assert_eq!(f1.shape(), &[6, 16]);
    }

    #[test]
    fn token_permutation_equivariance_without_pos() {
        // block(P.F) = P.block(F) since attention is set-equivariant
        let (model, store) = setup(
            SEFormerConfig {
                h_s: 4,
                ..tiny_cfg()
            },
            6,
        );
        let tape = Tape::disabled();
        let view = store.leaf_all(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = normal_tensor::<f64>(&mut rng, &[4, 16], 1.0);
        let perm = [2usize, 0, 3, 1];
        let mut pf = vec![0.0; 4 * 16];
        for (i, &src) in perm.iter().enumerate() {
            pf[i * 16..(i + 1) * 16].copy_from_slice(&f.data()[src * 16..(src + 1) * 16]);
        }
        let out = model.encoder_block(&tape, &view, 0, &f);
        let out_p = model.encoder_block(&tape, &view, 0, &Tensor::new(&[4, 16], pf));
        for (i, &src) in perm.iter().enumerate() {
            for c in 0..16 {
                assert!(
                    (out_p.data()[i * 16 + c] - out.data()[src * 16 + c]).abs() < 1e-10,
                    "row {i} channel {c}"
                );
            }
        }
    }

    #[test]
    fn feature_map_identity_projection() {
        // C' = 1 when d == w_s; unit projection weight passes tokens through
        let cfg = SEFormerConfig {
            h_s: 6,
            w_s: 16,
            d: 16,
            n_heads: 2,
            ..tiny_cfg()
        };
        let (model, mut store) = setup(cfg, 7);
        store.set_value("se_former/map.w", vec![1.0]);
        store.set_value("se_former/map.b", vec![0.0]);
        let tape = Tape::disabled();
        let view = store.leaf_all(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f_t = normal_tensor::<f64>(&mut rng, &[6, 16], 1.0);
        let s_r = model.feature_map(&tape, &view, &f_t);
        assert_eq!(s_r.shape(), &[6, 16]);
        assert_eq!(s_r.data(), f_t.data());
    }

    #[test]
    fn zero_feature_map_makes_forward_exact_identity() {
        let (model, mut store) = setup(tiny_cfg(), 8);
        let cp = model.cfg.c_prime();
        store.set_value("se_former/map.w", vec![0.0; cp]);
        store.set_value("se_former/map.b", vec![0.0]);
        let tape = Tape::disabled();
        let view = store.leaf_all(&tape);
        let s = random_sino(&model.cfg, 14);
        let s_e = model.forward(&tape, &view, &s);
        assert_eq!(s_e.data(), s.data(), "residual-only path must pass through");
        assert_eq!(s_e.shape(), s.shape());
    }

    #[test]
    fn forward_gradcheck_on_random_parameters() {
        let (model, mut store) = setup(tiny_cfg(), 9);
        let s = random_sino(&model.cfg, 15);
        let err = crate::tensor::gradcheck::grad_check_params(
            |tape, view| {
                let s_e = model.forward(tape, view, &s);
                let sq = tape.mul(&s_e, &s_e);
                tape.sum_all(&sq)
            },
            &mut store,
            8,
            1e-5,
            42,
        )
        .unwrap();
        assert!(err < 1e-3, "gradcheck error {err}");
    }
}
