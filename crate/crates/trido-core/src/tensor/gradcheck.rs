//! Central-finite-difference gradient verification, run at 64-bit.

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use super::optim::{ParamStore, ParamView};
use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Relative-error denominator floor. Coordinates whose analytic and
/// numerical gradients are both far below this are compared absolutely,
/// which keeps finite-difference roundoff from manufacturing failures.
const REL_FLOOR: f64 = 1e-2;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Checks autodiff gradients of a scalar-valued function against central
/// differences at every coordinate of `x`. Returns the max relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, &Tensor<f64>) -> Tensor<f64>,
{
    let tape = Tape::new();
    let xt = tape.leaf(x);
    let loss = f(&tape, &xt);
    if loss.numel() != 1 {
        return Err(Error::Invalid("grad_check requires a scalar output".into()));
    }
    if !loss.item().is_finite() {
        return Err(Error::Numeric("non-finite output in grad_check".into()));
    }
    let autodiff = tape.backward(&loss).get(&xt);

    let eval = |data: Vec<f64>| -> Result<f64> {
        let t = Tape::disabled();
        let v = f(&t, &Tensor::new(x.shape(), data)).item();
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite output in grad_check".into()));
        }
        Ok(v)
    };

    let mut max_err = 0.0f64;
    for i in 0..x.numel() {
        let step = h * x.data()[i].abs().max(1.0);
        let mut plus = x.data().to_vec();
        plus[i] += step;
        let mut minus = x.data().to_vec();
        minus[i] -= step;
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * step);
        max_err = max_err.max(rel_err(autodiff.data()[i], fd));
    }
    Ok(max_err)
}

/// Gradient check of a model-level function against a sample of parameter
/// coordinates drawn across the whole store.
pub fn grad_check_params<F>(
    f: F,
    store: &mut ParamStore<f64>,
    n_coords: usize,
    h: f64,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&Tape<f64>, &ParamView<f64>) -> Tensor<f64>,
{
    let tape = Tape::new();
    let view = store.leaf_all(&tape);
    let loss = f(&tape, &view);
    if loss.numel() != 1 {
        return Err(Error::Invalid("grad_check requires a scalar output".into()));
    }
    if !loss.item().is_finite() {
        return Err(Error::Numeric("non-finite output in grad_check".into()));
    }
    let grads = tape.backward(&loss);
    let per_param = view.collect_grads(&grads);
    drop(tape);

    let names: Vec<String> = store.names().map(String::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    for _ in 0..n_coords {
        let name = &names[rng.random_range(0..names.len())];
        let n = store.get(name).value().numel();
        let idx = rng.random_range(0..n);
        let base = store.get(name).value().data().to_vec();
        let step = h * base[idx].abs().max(1.0);

        let mut eval_at = |v: f64| -> Result<f64> {
            let mut data = base.clone();
            data[idx] = v;
            store.set_value(name, data);
            let t = Tape::disabled();
            let pv = store.leaf_all(&t);
            let out = f(&t, &pv).item();
            if !out.is_finite() {
                return Err(Error::Numeric("non-finite output in grad_check".into()));
            }
            Ok(out)
        };
        let fp = eval_at(base[idx] + step)?;
        let fm = eval_at(base[idx] - step)?;
        store.set_value(name, base);

        let fd = (fp - fm) / (2.0 * step);
        let ad = per_param[name][idx];
        max_err = max_err.max(rel_err(ad, fd));
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_under_central_differences() {
        let x = Tensor::new(&[4], vec![0.3, -1.2, 2.0, 0.05]);
        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x);
                t.sum_all(&sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "quadratic gradcheck error {err}");
    }

    #[test]
    fn softmax_matmul_composite() {
        let x = Tensor::new(&[2, 3], vec![0.1, -0.4, 0.9, 1.5, -0.2, 0.3]);
        let w = Tensor::new(&[3, 3], vec![0.5, -0.1, 0.2, 0.7, 0.3, -0.6, 0.05, 0.4, 0.9]);
        let err = grad_check(
            |t, x| {
                let y = t.matmul(x, &w);
                let p = t.softmax(&y);
                let sq = t.mul(&p, &p);
                t.sum_all(&sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "softmax+matmul gradcheck error {err}");
    }

    #[test]
    fn detects_wrong_gradients() {
        // a deliberately wrong "gradient" of x^3 read as if it were x^2
        let ad = 3.0 * 0.8f64 * 0.8;
        let fd = 2.0 * 0.8f64;
        assert!(rel_err(ad, fd) > 1e-2);
    }

    #[test]
    fn matmul_gradcheck_both_operands() {
        let a = Tensor::new(&[2, 3], vec![0.2, -0.7, 1.1, 0.4, 0.9, -0.3]);
        let b = Tensor::new(&[3, 2], vec![0.6, -0.2, 0.1, 0.8, -0.5, 0.3]);
        let err_a = grad_check(
            |t, x| {
                let y = t.matmul(x, &b);
                let sq = t.mul(&y, &y);
                t.sum_all(&sq)
            },
            &a,
            1e-5,
        )
        .unwrap();
        let err_b = grad_check(
            |t, x| {
                let y = t.matmul(&a, x);
                let sq = t.mul(&y, &y);
                t.sum_all(&sq)
            },
            &b,
            1e-5,
        )
        .unwrap();
        assert!(err_a < 1e-6 && err_b < 1e-6, "{err_a} {err_b}");
    }
}
