//! The two reconstruction networks and their shared attention machinery.

pub mod seformer;
pub mod ssrformer;

pub use seformer::{SEFormer, SEFormerConfig};
pub use ssrformer::{SSRFormer, SSRFormerConfig};

use rand_chacha::ChaCha8Rng;

use crate::tensor::optim::{normal_tensor, ParamStore, ParamView};
use crate::tensor::{Elem, Tape, Tensor};

/// Projection weights for one multi-head attention module.
pub(crate) struct AttnParams<'a, E: Elem> {
    pub wq: &'a Tensor<E>,
    pub bq: &'a Tensor<E>,
    pub wk: &'a Tensor<E>,
    pub bk: &'a Tensor<E>,
    pub wv: &'a Tensor<E>,
    pub bv: &'a Tensor<E>,
    pub wo: &'a Tensor<E>,
    pub bo: &'a Tensor<E>,
}

impl<'a, E: Elem> AttnParams<'a, E> {
    pub fn from_store(view: &'a ParamView<E>, prefix: &str) -> Self {
        AttnParams {
            wq: view.get(&format!("{prefix}.wq")),
            bq: view.get(&format!("{prefix}.bq")),
            wk: view.get(&format!("{prefix}.wk")),
            bk: view.get(&format!("{prefix}.bk")),
            wv: view.get(&format!("{prefix}.wv")),
            bv: view.get(&format!("{prefix}.bv")),
            wo: view.get(&format!("{prefix}.wo")),
            bo: view.get(&format!("{prefix}.bo")),
        }
    }
}

pub(crate) fn init_attn<E: Elem>(store: &mut ParamStore<E>, prefix: &str, d: usize, rng: &mut ChaCha8Rng) {
    for w in ["wq", "wk", "wv", "wo"] {
        store.insert(&format!("{prefix}.{w}"), normal_tensor(rng, &[d, d], 0.02));
    }
    for b in ["bq", "bk", "bv", "bo"] {
        store.insert(&format!("{prefix}.{b}"), Tensor::zeros(&[d]));
    }
}

pub(crate) fn init_layer_norm<E: Elem>(store: &mut ParamStore<E>, prefix: &str, d: usize) {
    store.insert(&format!("{prefix}.g"), Tensor::ones(&[d]));
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[d]));
}

pub(crate) fn init_ffn<E: Elem>(
    store: &mut ParamStore<E>,
    prefix: &str,
    d: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) {
    store.insert(&format!("{prefix}.w1"), normal_tensor(rng, &[d, hidden], 0.02));
    store.insert(&format!("{prefix}.b1"), Tensor::zeros(&[hidden]));
    store.insert(&format!("{prefix}.w2"), normal_tensor(rng, &[hidden, d], 0.02));
    store.insert(&format!("{prefix}.b2"), Tensor::zeros(&[d]));
}

/// He-style init for a conv kernel [O, C, k, k].
pub(crate) fn init_conv<E: Elem>(
    store: &mut ParamStore<E>,
    prefix: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) {
    let std = (2.0 / (c_in * k * k) as f64).sqrt();
    store.insert(
        &format!("{prefix}.w"),
        normal_tensor(rng, &[c_out, c_in, k, k], std),
    );
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[c_out]));
}

/// Standard multi-head scaled dot-product attention over tokens.
///
/// `x` is [n, d] or [batch, n, d]; `bias`, when given, is [heads, n, n] and
/// is added to the logits of every batch (the relative position bias).
/// Returns the projected output (same shape as `x`) and the attention
/// probabilities [batch, heads, n, n], whose rows each sum to 1.
pub(crate) fn multi_head_attention<E: Elem>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    p: &AttnParams<E>,
    n_heads: usize,
    bias: Option<&Tensor<E>>,
) -> (Tensor<E>, Tensor<E>) {
    let orig_rank = x.shape().len();
    assert!(orig_rank == 2 || orig_rank == 3, "attention input rank");
    let (b, n, d) = if orig_rank == 2 {
        (1, x.shape()[0], x.shape()[1])
    } else {
        (x.shape()[0], x.shape()[1], x.shape()[2])
    };
    assert_eq!(d % n_heads, 0, "d must divide across heads");
    let dh = d / n_heads;
    let xb = tape.reshape(x, &[b, n, d]);

    let project = |w, bias_t| {
        let y = tape.matmul(&xb, w);
        tape.add_bcast(&y, bias_t)
    };
    let q = project(p.wq, p.bq);
    let k = project(p.wk, p.bk);
    let v = project(p.wv, p.bv);

    let split = |t: &Tensor<E>| {
        let t = tape.reshape(t, &[b, n, n_heads, dh]);
        tape.permute(&t, &[0, 2, 1, 3]) // [b, heads, n, dh]
    };
    let qh = split(&q);
    let kh = split(&k);
    let vh = split(&v);

    let kt = tape.permute(&kh, &[0, 1, 3, 2]); // [b, heads, dh, n]
    let scores = tape.matmul(&qh, &kt);
    let scores = tape.scale(&scores, E::elem(1.0 / (dh as f64).sqrt()));
    let scores = match bias {
        Some(bt) => {
            assert_eq!(bt.shape(), &[n_heads, n, n], "attention bias shape");
            tape.add_bcast(&scores, bt)
        }
        None => scores,
    };
    let probs = tape.softmax(&scores); // [b, heads, n, n]

    let ctx = tape.matmul(&probs, &vh); // [b, heads, n, dh]
    let ctx = tape.permute(&ctx, &[0, 2, 1, 3]); // [b, n, heads, dh]
    let ctx = tape.reshape(&ctx, &[b, n, d]);
    let out = tape.matmul(&ctx, p.wo);
    let out = tape.add_bcast(&out, p.bo);
    let out = if orig_rank == 2 {
        tape.reshape(&out, &[n, d])
    } else {
        out
    };
    (out, probs)
}

/// Token-wise feed-forward: two linear layers around a GELU.
pub(crate) fn ffn_forward<E: Elem>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    view: &ParamView<E>,
    prefix: &str,
) -> Tensor<E> {
    let h = tape.matmul(x, view.get(&format!("{prefix}.w1")));
    let h = tape.add_bcast(&h, view.get(&format!("{prefix}.b1")));
    let h = tape.gelu(&h);
    let o = tape.matmul(&h, view.get(&format!("{prefix}.w2")));
    tape.add_bcast(&o, view.get(&format!("{prefix}.b2")))
}

pub(crate) fn layer_norm_at<E: Elem>(
    tape: &Tape<E>,
    x: &Tensor<E>,
    view: &ParamView<E>,
    prefix: &str,
) -> Tensor<E> {
    tape.layer_norm(
        x,
        view.get(&format!("{prefix}.g")),
        view.get(&format!("{prefix}.b")),
    )
}
