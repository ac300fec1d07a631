//! Sinogram-to-image reconstruction network: a 4-level U-shape where every
//! level is a spatial-spectral transformer block (SSTB). An SSTB stacks two
//! spatial-spectral transformer layers (SSTLs) around a 3x3 convolution; a
//! window-shift between the two SSTLs lets information cross window
//! borders. Each SSTL performs window-based multi-head self-attention
//! (W-SMSA) and passes the attention branch through a global frequency
//! parser (GFP): a learnable real-valued filter applied to the 2D DFT of
//! the feature map and inverted back. Pixel-unshuffle/shuffle resample
//! between levels, and skip connections merge encoder features into the
//! decoder by concatenation plus a 1x1 convolution.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    ffn_forward, init_attn, init_conv, init_ffn, init_layer_norm, layer_norm_at,
    multi_head_attention, AttnParams,
};
use crate::error::{Error, Result};
use crate::tensor::fft::reduced_width;
use crate::tensor::optim::{ParamStore, ParamView};
use crate::tensor::{Elem, Tape, Tensor};

pub const PARAM_PREFIX: &str = "ssr_former";
pub const LEVELS: usize = 4;

/// Encoder, bottleneck, and decoder block names in forward order, paired
/// with their level index (0 = full resolution).
pub const BLOCKS: [(&str, usize); 7] = [
    ("enc0", 0),
    ("enc1", 1),
    ("enc2", 2),
    ("mid", 3),
    ("dec2", 2),
    ("dec1", 1),
    ("dec0", 0),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SSRFormerConfig {
    /// Channel width per level.
    pub channels: [usize; 4],
    /// Attention heads per level.
    pub heads: [usize; 4],
    /// Window size M; the shift between the two SSTLs is M/2.
    pub window: usize,
    /// Input spatial size (H_I, W_I); the sinogram enters the U-shape as a
    /// spatially congruent grid.
    pub input_size: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub ffn_ratio: usize,
}

impl Default for SSRFormerConfig {
    fn default() -> Self {
        SSRFormerConfig {
            channels: [16, 32, 64, 128],
            heads: [2, 4, 4, 8],
            window: 4,
            input_size: (64, 64),
            in_channels: 1,
            out_channels: 1,
            ffn_ratio: 4,
        }
    }
}

impl SSRFormerConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        let div = self.window * (1 << (LEVELS - 1));
        if self.window == 0 {
            return Err(Error::Config("window size must be >= 1".into()));
        }
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "input size {h}x{w} must be divisible by window*2^(levels-1) = {div}"
            )));
        }
        for l in 0..LEVELS {
            if self.heads[l] == 0 || self.channels[l] == 0 || self.channels[l] % self.heads[l] != 0
            {
                return Err(Error::Config(format!(
                    "level {l}: channels {} must divide across {} heads",
                    self.channels[l], self.heads[l]
                )));
            }
        }
        if self.in_channels != 1 || self.out_channels != 1 {
            return Err(Error::Config("single-channel input/output expected".into()));
        }
        if self.ffn_ratio == 0 {
            return Err(Error::Config("ffn_ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn shift(&self) -> usize {
        self.window / 2
    }

    /// Spatial resolution at a level.
    pub fn level_size(&self, level: usize) -> (usize, usize) {
        (self.input_size.0 >> level, self.input_size.1 >> level)
    }
}

pub struct SSRFormer {
    pub cfg: SSRFormerConfig,
}

impl SSRFormer {
    pub fn new(cfg: SSRFormerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SSRFormer { cfg })
    }

    pub fn init_params<E: Elem>(&self, store: &mut ParamStore<E>, rng: &mut ChaCha8Rng) {
        let c = &self.cfg;
        let m = c.window;
        init_conv(store, &format!("{PARAM_PREFIX}/head"), c.channels[0], c.in_channels, 3, rng);
        for (blk, level) in BLOCKS {
            let ch = c.channels[level];
            let (h, w) = c.level_size(level);
            for k in 0..2 {
                let p = format!("{PARAM_PREFIX}/{blk}.sstl{k}");
                init_layer_norm(store, &format!("{p}.ln1"), ch);
                init_attn(store, &format!("{p}.attn"), ch, rng);
                store.insert(
                    &format!("{p}.relbias"),
                    Tensor::zeros(&[(2 * m - 1) * (2 * m - 1), c.heads[level]]),
                );
                // identity filter start: the spectrum passes unmodified
                store.insert(&format!("{p}.gfp"), Tensor::ones(&[ch, h, reduced_width(w)]));
                init_layer_norm(store, &format!("{p}.ln2"), ch);
                init_ffn(store, &format!("{p}.ffn"), ch, ch * c.ffn_ratio, rng);
            }
            init_conv(store, &format!("{PARAM_PREFIX}/{blk}.conv"), ch, ch, 3, rng);
        }
        for l in 0..LEVELS - 1 {
            init_conv(
                store,
                &format!("{PARAM_PREFIX}/down{l}"),
                c.channels[l + 1],
                4 * c.channels[l],
                1,
                rng,
            );
            init_conv(
                store,
                &format!("{PARAM_PREFIX}/up{l}"),
                4 * c.channels[l],
                c.channels[l + 1],
                1,
                rng,
            );
            init_conv(
                store,
                &format!("{PARAM_PREFIX}/skip{l}"),
                c.channels[l],
                2 * c.channels[l],
                1,
                rng,
            );
        }
        init_conv(store, &format!("{PARAM_PREFIX}/tail"), c.out_channels, c.channels[0], 3, rng);
    }

    /// Names of every GFP filter parameter (for freezing and export).
    pub fn gfp_param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (blk, _) in BLOCKS {
            for k in 0..2 {
                names.push(format!("{PARAM_PREFIX}/{blk}.sstl{k}.gfp"));
            }
        }
        names
    }

    fn sstl_forward<E: Elem>(
        &self,
        tape: &Tape<E>,
        view: &ParamView<E>,
        blk: &str,
        k: usize,
        level: usize,
        x: &Tensor<E>,
        shifted: bool,
    ) -> Tensor<E> {
        let p = format!("{PARAM_PREFIX}/{blk}.sstl{k}");
        let (h, w) = self.cfg.level_size(level);
        // attention branch in token layout, then GFP on the spatial result
        let t = tape.permute(x, &[1, 2, 0]); // [H,W,C]
        let ln1 = layer_norm_at(tape, &t, view, &format!("{p}.ln1"));
        let attn = AttnParams::from_store(view, &format!("{p}.attn"));
        let (att, _) = w_smsa(
            tape,
            &ln1,
            &attn,
            view.get(&format!("{p}.relbias")),
            self.cfg.heads[level],
            self.cfg.window,
            if shifted { self.cfg.shift() } else { 0 },
        );
        let att = tape.permute(&att, &[2, 0, 1]); // [C,H,W]
        let filtered = gfp(tape, &att, view.get(&format!("{p}.gfp")));
        let u = tape.add(x, &filtered);

        let tu = tape.permute(&u, &[1, 2, 0]);
        let ln2 = layer_norm_at(tape, &tu, view, &format!("{p}.ln2"));
        let ff = ffn_forward(tape, &ln2, view, &format!("{p}.ffn"));
        let ff = tape.permute(&ff, &[2, 0, 1]);
        let _ = (h, w);
        tape.add(&u, &ff)
    }

    fn sstb_forward<E: Elem>(
        &self,
        tape: &Tape<E>,
        view: &ParamView<E>,
        blk: &str,
        level: usize,
        x: &Tensor<E>,
    ) -> Tensor<E> {
        let y = self.sstl_forward(tape, view, blk, 0, level, x, false);
        let y = self.sstl_forward(tape, view, blk, 1, level, &y, true);
        let y = tape.conv2d(
            &y,
            view.get(&format!("{PARAM_PREFIX}/{blk}.conv.w")),
            view.get(&format!("{PARAM_PREFIX}/{blk}.conv.b")),
        );
        tape.add(&y, x)
    }

    fn downsample<E: Elem>(
        &self,
        tape: &Tape<E>,
        view: &ParamView<E>,
        l: usize,
        x: &Tensor<E>,
    ) -> Tensor<E> {
        let u = tape.pixel_unshuffle(x, 2);
        tape.conv2d(
            &u,
            view.get(&format!("{PARAM_PREFIX}/down{l}.w")),
            view.get(&format!("{PARAM_PREFIX}/down{l}.b")),
        )
    }

    fn upsample<E: Elem>(
        &self,
        tape: &Tape<E>,
        view: &ParamView<E>,
        l: usize,
        x: &Tensor<E>,
    ) -> Tensor<E> {
        let c = tape.conv2d(
            x,
            view.get(&format!("{PARAM_PREFIX}/up{l}.w")),
            view.get(&format!("{PARAM_PREFIX}/up{l}.b")),
        );
        tape.pixel_shuffle(&c, 2)
    }

    fn skip_merge<E: Elem>(
        &self,
        tape: &Tape<E>,
        view: &ParamView<E>,
        l: usize,
        up: &Tensor<E>,
        skip: &Tensor<E>,
    ) -> Tensor<E> {
        let cat = tape.concat0(up, skip);
        tape.conv2d(
            &cat,
            view.get(&format!("{PARAM_PREFIX}/skip{l}.w")),
            view.get(&format!("{PARAM_PREFIX}/skip{l}.b")),
        )
    }

    /// Full reconstruction: head conv, three encoder SSTB+downsample
    /// stages, bottleneck SSTB, three upsample+skip-merge+SSTB stages, and
    /// the tail conv down to one channel. Output is [1, H, W], unclamped;
    /// clamp nonnegative at inference with [`Tensor::clamp_min_zero`].
    pub fn forward<E: Elem>(
        &self,
        tape: &Tape<E>,
        view: &ParamView<E>,
        s_e: &Tensor<E>,
    ) -> Tensor<E> {
        let (h, w) = self.cfg.input_size;
        let x = if s_e.shape().len() == 2 {
            assert_eq!(s_e.shape(), &[h, w], "input spatial size mismatch");
            tape.reshape(s_e, &[1, h, w])
        } else {
            assert_eq!(s_e.shape(), &[self.cfg.in_channels, h, w], "input shape mismatch");
            s_e.clone()
        };
        let x0 = tape.conv2d(
            &x,
            view.get(&format!("{PARAM_PREFIX}/head.w")),
            view.get(&format!("{PARAM_PREFIX}/head.b")),
        );
        let e0 = self.sstb_forward(tape, view, "enc0", 0, &x0);
        let e1 = self.sstb_forward(tape, view, "enc1", 1, &self.downsample(tape, view, 0, &e0));
        let e2 = self.sstb_forward(tape, view, "enc2", 2, &self.downsample(tape, view, 1, &e1));
        let mid = self.sstb_forward(tape, view, "mid", 3, &self.downsample(tape, view, 2, &e2));

        let u2 = self.upsample(tape, view, 2, &mid);
        let d2 = self.sstb_forward(tape, view, "dec2", 2, &self.skip_merge(tape, view, 2, &u2, &e2));
        let u1 = self.upsample(tape, view, 1, &d2);
        let d1 = self.sstb_forward(tape, view, "dec1", 1, &self.skip_merge(tape, view, 1, &u1, &e1));
        let u0 = self.upsample(tape, view, 0, &d1);
        let d0 = self.sstb_forward(tape, view, "dec0", 0, &self.skip_merge(tape, view, 0, &u0, &e0));

        tape.conv2d(
            &d0,
            view.get(&format!("{PARAM_PREFIX}/tail.w")),
            view.get(&format!("{PARAM_PREFIX}/tail.b")),
        )
    }
}

/// Splits [C,H,W] into non-overlapping M x M tiles in row-major window
/// order: a pure permutation to [N, C, M, M].
pub fn window_partition<E: Elem>(tape: &Tape<E>, x: &Tensor<E>, m: usize) -> Tensor<E> {
    let s = x.shape();
    assert_eq!(s.len(), 3, "window_partition: input must be [C,H,W]");
    let (c, h, w) = (s[0], s[1], s[2]);
    assert!(
        m > 0 && h % m == 0 && w % m == 0,
        "window_partition: window {m} does not divide {h}x{w}"
    );
    let t = tape.reshape(x, &[c, h / m, m, w / m, m]);
    let t = tape.permute(&t, &[1, 3, 0, 2, 4]); // [H/m, W/m, C, m, m]
    tape.reshape(&t, &[(h / m) * (w / m), c, m, m])
}

/// Exact inverse of [`window_partition`].
pub fn window_reverse<E: Elem>(
    tape: &Tape<E>,
    windows: &Tensor<E>,
    hw: (usize, usize),
    m: usize,
) -> Tensor<E> {
    let s = windows.shape();
    assert_eq!(s.len(), 4, "window_reverse: input must be [N,C,m,m]");
    let (h, w) = hw;
    let c = s[1];
    assert!(m > 0 && h % m == 0 && w % m == 0, "window_reverse: extents");
    assert_eq!(
        s[0],
        (h / m) * (w / m),
        "window_reverse: window count {} does not match {h}x{w}/{m}^2",
        s[0]
    );
    assert_eq!(s[2], m, "window_reverse: window extent");
    let t = tape.reshape(windows, &[h / m, w / m, c, m, m]);
    let t = tape.permute(&t, &[2, 0, 3, 1, 4]); // [C, H/m, m, W/m, m]
    tape.reshape(&t, &[c, h, w])
}

/// Flat relative-offset index table for an m x m window: entry (i, j) is
/// the index of token j's offset relative to token i in a (2m-1)^2 table.
pub fn relative_bias_indices(m: usize) -> Vec<usize> {
    let n = m * m;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (yi, xi) = (i / m, i % m);
        for j in 0..n {
            let (yj, xj) = (j / m, j % m);
            idx.push((yi + m - 1 - yj) * (2 * m - 1) + (xi + m - 1 - xj));
        }
    }
    idx
}

/// Window-based spatial multi-head self-attention over an [H,W,C] feature
/// map. Tokens are the per-pixel channel vectors inside each M x M window;
/// a learnable relative position bias is added to the logits. A non-zero
/// `shift` cyclically rolls the feature before partitioning and rolls it
/// back after the reverse. Returns the output and the attention
/// probabilities [N, heads, M^2, M^2].
pub(crate) fn w_smsa<E: Elem>(
    tape: &Tape<E>,
    x_hwc: &Tensor<E>,
    attn: &AttnParams<E>,
    relbias_table: &Tensor<E>,
    n_heads: usize,
    m: usize,
    shift: usize,
) -> (Tensor<E>, Tensor<E>) {
    let s = x_hwc.shape();
    assert_eq!(s.len(), 3, "w_smsa: input must be [H,W,C]");
    let (h, w, c) = (s[0], s[1], s[2]);
    assert!(h % m == 0 && w % m == 0, "w_smsa: window must divide extents");
    let x = if shift > 0 {
        let r = tape.roll(x_hwc, 0, -(shift as isize));
        tape.roll(&r, 1, -(shift as isize))
    } else {
        x_hwc.clone()
    };
    // partition to [N, m*m, C] token windows
    let t = tape.reshape(&x, &[h / m, m, w / m, m, c]);
    let t = tape.permute(&t, &[0, 2, 1, 3, 4]);
    let windows = tape.reshape(&t, &[(h / m) * (w / m), m * m, c]);

    let bias = tape.gather_rows(relbias_table, &relative_bias_indices(m));
    let bias = tape.reshape(&bias, &[m * m, m * m, n_heads]);
    let bias = tape.permute(&bias, &[2, 0, 1]); // [heads, m^2, m^2]

    let (out, probs) = multi_head_attention(tape, &windows, attn, n_heads, Some(&bias));

    let t = tape.reshape(&out, &[h / m, w / m, m, m, c]);
    let t = tape.permute(&t, &[0, 2, 1, 3, 4]);
    let merged = tape.reshape(&t, &[h, w, c]);
    let merged = if shift > 0 {
        let r = tape.roll(&merged, 0, shift as isize);
        tape.roll(&r, 1, shift as isize)
    } else {
        merged
    };
    (merged, probs)
}

/// Global frequency parser: e' = irdft2(A * rdft2(e)) with a real-valued
/// learnable filter A at the feature's resolution (Hermitian-reduced
/// width). Linear in the feature and differentiable in both arguments.
pub fn gfp<E: Elem>(tape: &Tape<E>, x_chw: &Tensor<E>, filter: &Tensor<E>) -> Tensor<E> {
    let s = x_chw.shape();
    assert_eq!(s.len(), 3, "gfp: input must be [C,H,W]");
    let (h, w) = (s[1], s[2]);
    assert_eq!(
        filter.shape(),
        &[s[0], h, reduced_width(w)],
        "gfp: filter resolution {:?} does not match feature {:?}",
        filter.shape(),
        s
    );
    let spec = tape.rdft2(x_chw);
    let scaled = tape.cscale_real(filter, &spec);
    tape.irdft2(&scaled, (h, w))
}
