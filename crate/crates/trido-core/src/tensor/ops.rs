//! Structural and arithmetic ops: elementwise math, batched matmul,
//! permutation, reshape, concat, roll, gather, reductions.

use std::sync::Arc;

use super::{numel, strides, Elem, Tape, Tensor};

fn same_shape<E: Elem>(a: &Tensor<E>, b: &Tensor<E>, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl<E: Elem> Tape<E> {
    /// Elementwise a + b.
    pub fn add(&self, a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
        same_shape(a, b, "add");
        let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let (an, bn) = (a.node(), b.node());
        let node = self.record(&[a, b], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = an {
                    store.add(n, g);
                }
                if let Some(n) = bn {
                    store.add(n, g);
                }
            })
        });
        Tensor::tracked(a.shape().to_vec(), Arc::new(data), node)
    }

    /// Elementwise a - b.
    pub fn sub(&self, a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
        same_shape(a, b, "sub");
        let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        let (an, bn) = (a.node(), b.node());
        let node = self.record(&[a, b], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = an {
                    store.add(n, g);
                }
                if let Some(n) = bn {
                    let buf = store.buf(n);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o -= gi;
                    }
                }
            })
        });
        Tensor::tracked(a.shape().to_vec(), Arc::new(data), node)
    }

    /// Elementwise a * b.
    pub fn mul(&self, a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
        same_shape(a, b, "mul");
        let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let (an, bn) = (a.node(), b.node());
        let (ad, bd) = (a.data_arc(), b.data_arc());
        let node = self.record(&[a, b], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = an {
                    let buf = store.buf(n);
                    for i in 0..g.len() {
                        buf[i] += g[i] * bd[i];
                    }
                }
                if let Some(n) = bn {
                    let buf = store.buf(n);
                    for i in 0..g.len() {
                        buf[i] += g[i] * ad[i];
                    }
                }
            })
        });
        Tensor::tracked(a.shape().to_vec(), Arc::new(data), node)
    }

    /// a * s for a constant scalar.
    pub fn scale(&self, a: &Tensor<E>, s: E) -> Tensor<E> {
        let data: Vec<E> = a.data().iter().map(|&x| x * s).collect();
        let an = a.node();
        let node = self.record(&[a], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = an {
                    let buf = store.buf(n);
                    for i in 0..g.len() {
                        buf[i] += g[i] * s;
                    }
                }
            })
        });
        Tensor::tracked(a.shape().to_vec(), Arc::new(data), node)
    }

    /// a + b where b's shape is a suffix of a's shape (broadcast over the
    /// leading axes). Covers bias adds and per-window attention bias.
    pub fn add_bcast(&self, a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
        let (ash, bsh) = (a.shape(), b.shape());
        assert!(
            bsh.len() <= ash.len() && ash[ash.len() - bsh.len()..] == *bsh,
            "add_bcast: {bsh:?} is not a suffix of {ash:?}"
        );
        let bn_len = b.numel().max(1);
        let data: Vec<E> = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b.data()[i % bn_len])
            .collect();
        let (an, bn) = (a.node(), b.node());
        let node = self.record(&[a, b], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = an {
                    store.add(n, g);
                }
                if let Some(n) = bn {
                    let buf = store.buf(n);
                    for (i, &gi) in g.iter().enumerate() {
                        buf[i % bn_len] += gi;
                    }
                }
            })
        });
        Tensor::tracked(ash.to_vec(), Arc::new(data), node)
    }

    /// Batched matrix product over the last two axes. Leading (batch) axes
    /// must match exactly, or be absent on one operand, which is then
    /// broadcast across the other's batches.
    pub fn matmul(&self, a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
        let (ash, bsh) = (a.shape(), b.shape());
        assert!(ash.len() >= 2 && bsh.len() >= 2, "matmul requires rank >= 2");
        let (m, ka) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (kb, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        assert_eq!(ka, kb, "matmul: inner extents {ka} vs {kb}");
        let abatch = &ash[..ash.len() - 2];
        let bbatch = &bsh[..bsh.len() - 2];
        let (batch_shape, a_batched, b_batched) = if abatch == bbatch {
            (abatch.to_vec(), true, true)
        } else if bbatch.is_empty() {
            (abatch.to_vec(), true, false)
        } else if abatch.is_empty() {
            (bbatch.to_vec(), false, true)
        } else {
            panic!("matmul: incompatible batch extents {abatch:?} vs {bbatch:?}");
        };
        let nb = numel(&batch_shape).max(1);
        let k = ka;
        let mut out = vec![E::zero(); nb * m * n];
        let ad = a.data();
        let bd = b.data();
        for bi in 0..nb {
            let ao = if a_batched { bi * m * k } else { 0 };
            let bo = if b_batched { bi * k * n } else { 0 };
            unsafe {
                E::gemm(
                    m,
                    k,
                    n,
                    E::one(),
                    ad.as_ptr().add(ao),
                    k as isize,
                    1,
                    bd.as_ptr().add(bo),
                    n as isize,
                    1,
                    E::zero(),
                    out.as_mut_ptr().add(bi * m * n),
                    n as isize,
                    1,
                );
            }
        }
        let mut out_shape = batch_shape;
        out_shape.push(m);
        out_shape.push(n);
        let (an, bn) = (a.node(), b.node());
        let (ad, bd) = (a.data_arc(), b.data_arc());
        let node = self.record(&[a, b], out.len(), {
            Box::new(move |g, store| {
                // dA = dC . B^T, dB = A^T . dC; transposes expressed by strides.
                if let Some(na) = an {
                    let buf = store.buf(na);
                    for bi in 0..nb {
                        let go = bi * m * n;
                        let bo = if b_batched { bi * k * n } else { 0 };
                        let ao = if a_batched { bi * m * k } else { 0 };
                        unsafe {
                            E::gemm(
                                m,
                                n,
                                k,
                                E::one(),
                                g.as_ptr().add(go),
                                n as isize,
                                1,
                                bd.as_ptr().add(bo),
                                1,
                                n as isize,
                                E::one(),
                                buf.as_mut_ptr().add(ao),
                                k as isize,
                                1,
                            );
                        }
                    }
                }
                if let Some(nbid) = bn {
                    let buf = store.buf(nbid);
                    for bi in 0..nb {
                        let go = bi * m * n;
                        let ao = if a_batched { bi * m * k } else { 0 };
                        let bo = if b_batched { bi * k * n } else { 0 };
                        unsafe {
                            E::gemm(
                                k,
                                m,
                                n,
                                E::one(),
                                ad.as_ptr().add(ao),
                                1,
                                k as isize,
                                g.as_ptr().add(go),
                                n as isize,
                                1,
                                E::one(),
                                buf.as_mut_ptr().add(bo),
                                n as isize,
                                1,
                            );
                        }
                    }
                }
            })
        });
        Tensor::tracked(out_shape, Arc::new(out), node)
    }

    /// Axis permutation (generalized transpose). Data is materialized.
    pub fn permute(&self, a: &Tensor<E>, axes: &[usize]) -> Tensor<E> {
        let rank = a.shape().len();
        assert_eq!(axes.len(), rank, "permute: axes length");
        let mut seen = vec![false; rank];
        for &ax in axes {
            assert!(ax < rank && !seen[ax], "permute: invalid axes {axes:?}");
            seen[ax] = true;
        }
        let out_shape: Vec<usize> = axes.iter().map(|&ax| a.shape()[ax]).collect();
        let data = permute_data(a.data(), a.shape(), axes);
        let an = a.node();
        let in_shape = a.shape().to_vec();
        let axes_v = axes.to_vec();
        let out_shape_b = out_shape.clone();
        let node = self.record(&[a], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = an {
                    let mut inv = vec![0usize; axes_v.len()];
                    for (i, &ax) in axes_v.iter().enumerate() {
                        inv[ax] = i;
                    }
                    debug_assert_eq!(numel(&in_shape), g.len());
                    let gp = permute_data(g, &out_shape_b, &inv);
                    store.add(n, &gp);
                }
            })
        });
        Tensor::tracked(out_shape, Arc::new(data), node)
    }

    /// Zero-copy reshape: shares both the buffer and (when tracked) the tape
    /// node, since gradients are flat buffers of identical length.
    pub fn reshape(&self, a: &Tensor<E>, new_shape: &[usize]) -> Tensor<E> {
        assert_eq!(
            numel(new_shape),
            a.numel(),
            "reshape: {:?} -> {new_shape:?} changes element count",
            a.shape()
        );
        Tensor::tracked(new_shape.to_vec(), a.data_arc(), a.node())
    }

    /// Concatenation along axis 0.
    pub fn concat0(&self, a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
        assert_eq!(
            a.shape()[1..],
            b.shape()[1..],
            "concat0: trailing shapes differ"
        );
        let mut out_shape = a.shape().to_vec();
        out_shape[0] += b.shape()[0];
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        data.extend_from_slice(a.data());
        data.extend_from_slice(b.data());
        let (an, bn) = (a.node(), b.node());
        let split = a.numel();
        let node = self.record(&[a, b], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = an {
                    store.add(n, &g[..split]);
                }
                if let Some(n) = bn {
                    store.add(n, &g[split..]);
                }
            })
        });
        Tensor::tracked(out_shape, Arc::new(data), node)
    }

    /// Cyclic roll along one axis by `shift` (may be negative).
    pub fn roll(&self, a: &Tensor<E>, axis: usize, shift: isize) -> Tensor<E> {
        let shape = a.shape().to_vec();
        assert!(axis < shape.len(), "roll: axis out of range");
        let data = roll_data(a.data(), &shape, axis, shift);
        let an = a.node();
        let shape_b = shape.clone();
        let node = self.record(&[a], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = an {
                    let gr = roll_data(g, &shape_b, axis, -shift);
                    store.add(n, &gr);
                }
            })
        });
        Tensor::tracked(shape, Arc::new(data), node)
    }

    /// Row gather: out[i, :] = table[idx[i], :]. Backward scatter-adds.
    pub fn gather_rows(&self, table: &Tensor<E>, idx: &[usize]) -> Tensor<E> {
        assert_eq!(table.shape().len(), 2, "gather_rows: table must be 2D");
        let (rows, cols) = (table.shape()[0], table.shape()[1]);
        for &i in idx {
            assert!(i < rows, "gather_rows: index {i} out of {rows}");
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&table.data()[i * cols..(i + 1) * cols]);
        }
        let tn = table.node();
        let idx_v = idx.to_vec();
        let node = self.record(&[table], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = tn {
                    let buf = store.buf(n);
                    for (r, &i) in idx_v.iter().enumerate() {
                        for c in 0..cols {
                            buf[i * cols + c] += g[r * cols + c];
                        }
                    }
                }
            })
        });
        Tensor::tracked(vec![idx.len(), cols], Arc::new(data), node)
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum_all(&self, a: &Tensor<E>) -> Tensor<E> {
        let s: E = a.data().iter().copied().sum();
        let an = a.node();
        let len = a.numel();
        let node = self.record(&[a], 1, {
            Box::new(move |g, store| {
                if let Some(n) = an {
                    let buf = store.buf(n);
                    for i in 0..len {
                        buf[i] += g[0];
                    }
                }
            })
        });
        Tensor::tracked(vec![], Arc::new(vec![s]), node)
    }

    /// Mean of all elements, as a scalar tensor.
    pub fn mean_all(&self, a: &Tensor<E>) -> Tensor<E> {
        let n = a.numel();
        let s = self.sum_all(a);
        self.scale(&s, E::one() / E::elem(n as f64))
    }

    /// Elementwise |x|; subgradient at 0 is 0.
    pub fn abs(&self, a: &Tensor<E>) -> Tensor<E> {
        let data: Vec<E> = a.data().iter().map(|&x| x.abs()).collect();
        let an = a.node();
        let ad = a.data_arc();
        let node = self.record(&[a], data.len(), {
            Box::new(move |g, store| {
                if let Some(n) = an {
                    let buf = store.buf(n);
                    for i in 0..g.len() {
                        let s = if ad[i] > E::zero() {
                            E::one()
                        } else if ad[i] < E::zero() {
                            -E::one()
                        } else {
                            E::zero()
                        };
                        buf[i] += g[i] * s;
                    }
                }
            })
        });
        Tensor::tracked(a.shape().to_vec(), Arc::new(data), node)
    }

    /// Elementwise sqrt; derivative taken as 0 where the input is 0.
    pub fn sqrt(&self, a: &Tensor<E>) -> Tensor<E> {
        let data: Vec<E> = a.data().iter().map(|&x| x.sqrt()).collect();
        let an = a.node();
        let out = Arc::new(data);
        let out_b = Arc::clone(&out);
        let node = self.record(&[a], out.len(), {
            Box::new(move |g, store| {
                if let Some(n) = an {
                    let buf = store.buf(n);
                    let half = E::elem(0.5);
                    for i in 0..g.len() {
                        if out_b[i] > E::zero() {
                            buf[i] += g[i] * half / out_b[i];
                        }
                    }
                }
            })
        });
        Tensor::tracked(a.shape().to_vec(), out, node)
    }
}

/// Materializes `data` (of `shape`) permuted by `axes`.
fn permute_data<E: Elem>(data: &[E], shape: &[usize], axes: &[usize]) -> Vec<E> {
    let rank = shape.len();
    if rank == 0 {
        return data.to_vec();
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
    let stride_for_out: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut in_off = 0usize;
    for _ in 0..n {
        out.push(data[in_off]);
        // odometer increment over the output index space
        for d in (0..rank).rev() {
            idx[d] += 1;
            in_off += stride_for_out[d];
            if idx[d] < out_shape[d] {
                break;
            }
            in_off -= stride_for_out[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

fn roll_data<E: Elem>(data: &[E], shape: &[usize], axis: usize, shift: isize) -> Vec<E> {
    let len = shape[axis];
    let sh = shift.rem_euclid(len as isize) as usize;
    if sh == 0 {
        return data.to_vec();
    }
    let st = strides(shape);
    let outer: usize = shape[..axis].iter().product();
    let inner = st[axis];
    let mut out = vec![E::zero(); data.len()];
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..len {
            let j = (i + sh) % len; // element at i moves to position j
            let src = base + i * inner;
            let dst = base + j * inner;
            out[dst..dst + inner].copy_from_slice(&data[src..src + inner]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec())
    }

    /// Triple-loop reference for (m,k) x (k,n).
    fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::<f64>::disabled();
        let a = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let c = tape.matmul(&a, &eye);
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn matmul_known_values() {
        let tape = Tape::<f64>::disabled();
        let a = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t64(&[2, 1], &[5.0, 6.0]);
        let c = tape.matmul(&a, &b);
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let tape = Tape::<f64>::disabled();
        let (m, k, n) = (5, 7, 4);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 53 % 13) as f64) * 0.5).collect();
        let c = tape.matmul(&t64(&[m, k], &a), &t64(&[k, n], &b));
        let want = matmul_oracle(&a, &b, m, k, n);
        for (x, y) in c.data().iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_batch_broadcast_rhs() {
        let tape = Tape::<f64>::disabled();
        let a = t64(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]); // two batches of (1,2)
        let b = t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let c = tape.matmul(&a, &b);
        assert_eq!(c.shape(), &[2, 1, 2]);
        assert_eq!(c.data(), a.data());
    }

    #[test]
    #[should_panic(expected = "inner extents")]
    fn matmul_extent_mismatch_panics() {
        let tape = Tape::<f64>::disabled();
        let a = t64(&[2, 3], &[0.0; 6]);
        let b = t64(&[2, 2], &[0.0; 4]);
        let _ = tape.matmul(&a, &b);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(&[3], &[1.0, -2.0, 5.0]));
        let loss = tape.sum_all(&x);
        let grads = tape.backward(&loss);
        assert_eq!(grads.get(&x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_sum_of_squares_gives_2x() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(&[3], &[1.0, -2.0, 5.0]));
        let sq = tape.mul(&x, &x);
        let loss = tape.sum_all(&sq);
        let grads = tape.backward(&loss);
        assert_eq!(grads.get(&x).data(), &[2.0, -4.0, 10.0]);
    }

    #[test]
    fn diamond_graph_accumulates_both_paths() {
        // z = sum(x*x + 3*x): dz/dx = 2x + 3 through two paths sharing x.
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(&[2], &[1.5, -0.5]));
        let a = tape.mul(&x, &x);
        let b = tape.scale(&x, 3.0);
        let y = tape.add(&a, &b);
        let loss = tape.sum_all(&y);
        let grads = tape.backward(&loss);
        assert_eq!(grads.get(&x).data(), &[2.0 * 1.5 + 3.0, 2.0 * -0.5 + 3.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_grad() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(&[2], &[1.0, 2.0]));
        let unused = tape.leaf(&t64(&[2], &[5.0, 6.0]));
        let loss = tape.sum_all(&x);
        let grads = tape.backward(&loss);
        assert_eq!(grads.get(&unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn permute_roundtrip_and_transpose() {
        let tape = Tape::<f64>::disabled();
        let a = t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let at = tape.permute(&a, &[1, 0]);
        assert_eq!(at.shape(), &[3, 2]);
        assert_eq!(at.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let back = tape.permute(&at, &[1, 0]);
        assert_eq!(back.data(), a.data());
    }

    #[test]
    fn permute_matches_manual_3d() {
        let tape = Tape::<f64>::disabled();
        let data: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let a = t64(&[2, 3, 4], &data);
        let p = tape.permute(&a, &[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        let st = strides(&[2, 3, 4]);
        for i in 0..4 {
            for j in 0..2 {
                for k in 0..3 {
                    let got = p.data()[i * 6 + j * 3 + k];
                    let want = data[j * st[0] + k * st[1] + i * st[2]];
                    assert_eq!(got, want);
                }
            }
        }
    }

    #[test]
    fn roll_shifts_cyclically() {
        let tape = Tape::<f64>::disabled();
        let a = t64(&[4], &[0.0, 1.0, 2.0, 3.0]);
        let r = tape.roll(&a, 0, 1);
        assert_eq!(r.data(), &[3.0, 0.0, 1.0, 2.0]);
        let r2 = tape.roll(&r, 0, -1);
        assert_eq!(r2.data(), a.data());
    }

    #[test]
    fn gather_rows_forward_and_backward() {
        let tape = Tape::<f64>::new();
        let table = tape.leaf(&t64(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let g = tape.gather_rows(&table, &[2, 0, 2]);
        assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = tape.sum_all(&g);
        let grads = tape.backward(&loss);
        // row 2 gathered twice, row 0 once, row 1 never
        assert_eq!(grads.get(&table).data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn add_bcast_bias_and_backward() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(&[2, 3], &[0.0; 6]));
        let b = tape.leaf(&t64(&[3], &[1.0, 2.0, 3.0]));
        let y = tape.add_bcast(&x, &b);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let loss = tape.sum_all(&y);
        let grads = tape.backward(&loss);
        assert_eq!(grads.get(&b).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn reshape_shares_gradient_node() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(&t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let flat = tape.reshape(&x, &[4]);
        let sq = tape.mul(&flat, &flat);
        let loss = tape.sum_all(&sq);
        let grads = tape.backward(&loss);
        assert_eq!(grads.get(&x).data(), &[2.0, 4.0, 6.0, 8.0]);
    }
}
