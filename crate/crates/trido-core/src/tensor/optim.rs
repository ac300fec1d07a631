//! Named parameters, Adam updates, and the learning-rate schedule.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{numel, Elem, Grads, Tape, Tensor};
use crate::error::{Error, Result};

/// One learnable tensor plus its Adam state.
pub struct Param<E: Elem> {
    shape: Vec<usize>,
    value: Arc<Vec<E>>,
    m: Vec<E>,
    v: Vec<E>,
    step: u64,
    trainable: bool,
}

impl<E: Elem> Param<E> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn value(&self) -> Tensor<E> {
        Tensor::tracked(self.shape.clone(), Arc::clone(&self.value), None)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn moments(&self) -> (&[E], &[E]) {
        (&self.m, &self.v)
    }
}

/// Adam moment constants; the paper fixes only the optimizer name, so the
/// standard defaults apply.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Name-ordered collection of parameters. Iteration order is the sorted
/// name order, which keeps updates and serialization deterministic.
pub struct ParamStore<E: Elem> {
    params: BTreeMap<String, Param<E>>,
}

impl<E: Elem> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<E>) {
        self.insert_with(name, value, true);
    }

    pub fn insert_frozen(&mut self, name: &str, value: Tensor<E>) {
        self.insert_with(name, value, false);
    }

    fn insert_with(&mut self, name: &str, value: Tensor<E>, trainable: bool) {
        let n = value.numel();
        let prev = self.params.insert(
            name.to_string(),
            Param {
                shape: value.shape().to_vec(),
                value: value.data_arc(),
                m: vec![E::zero(); n],
                v: vec![E::zero(); n],
                step: 0,
                trainable,
            },
        );
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> &Param<E> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param<E> {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<E>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Replaces a parameter's value buffer (used by checkpoint restore and
    /// the finite-difference harness).
    pub fn set_value(&mut self, name: &str, data: Vec<E>) {
        let p = self.get_mut(name);
        assert_eq!(numel(&p.shape), data.len(), "set_value: length mismatch");
        p.value = Arc::new(data);
    }

    /// Restores Adam state (checkpoint resume).
    pub fn set_state(&mut self, name: &str, m: Vec<E>, v: Vec<E>, step: u64) {
        let p = self.get_mut(name);
        assert_eq!(p.m.len(), m.len(), "set_state: moment length mismatch");
        assert_eq!(p.v.len(), v.len(), "set_state: moment length mismatch");
        p.m = m;
        p.v = v;
        p.step = step;
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        self.get_mut(name).trainable = trainable;
    }

    /// Registers every parameter as a leaf on `tape`, preserving shapes.
    pub fn leaf_all(&self, tape: &Tape<E>) -> ParamView<E> {
        let mut map = BTreeMap::new();
        for (name, p) in &self.params {
            let t = Tensor::tracked(p.shape.clone(), Arc::clone(&p.value), None);
            map.insert(name.clone(), tape.leaf(&t));
        }
        ParamView { map }
    }

    /// Bias-corrected Adam step over every trainable parameter. Missing
    /// grads are treated as zeros. Errors on a grad/param length mismatch.
    pub fn adam_step(
        &mut self,
        grads: &BTreeMap<String, Vec<E>>,
        lr: f64,
        hp: AdamParams,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = self.params.get(name).ok_or_else(|| {
                Error::Invalid(format!("gradient for unknown parameter {name}"))
            })?;
            if g.len() != numel(&p.shape) {
                return Err(Error::Shape(format!(
                    "gradient length {} does not match parameter {name} ({})",
                    g.len(),
                    numel(&p.shape)
                )));
            }
        }
        let zero = Vec::new();
        let (b1, b2, eps) = (
            E::elem(hp.beta1),
            E::elem(hp.beta2),
            E::elem(hp.eps),
        );
        let lr_e = E::elem(lr);
        for (name, p) in self.params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let g = grads.get(name).map(|v| v.as_slice()).unwrap_or(&zero);
            p.step += 1;
            let bc1 = E::one() - E::elem(hp.beta1.powi(p.step as i32));
            let bc2 = E::one() - E::elem(hp.beta2.powi(p.step as i32));
            let value = Arc::make_mut(&mut p.value);
            for i in 0..value.len() {
                let gi = if g.is_empty() { E::zero() } else { g[i] };
                p.m[i] = b1 * p.m[i] + (E::one() - b1) * gi;
                p.v[i] = b2 * p.v[i] + (E::one() - b2) * gi * gi;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                value[i] = value[i] - lr_e * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Tape-bound view of a parameter store: every parameter as a tracked leaf.
pub struct ParamView<E: Elem> {
    map: BTreeMap<String, Tensor<E>>,
}

impl<E: Elem> ParamView<E> {
    pub fn get(&self, name: &str) -> &Tensor<E> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Collects per-parameter gradients from a backward sweep, in name order.
    pub fn collect_grads(&self, grads: &Grads<E>) -> BTreeMap<String, Vec<E>> {
        self.map
            .iter()
            .map(|(name, t)| (name.clone(), grads.get(t).data().to_vec()))
            .collect()
    }
}

/// Flat learning-rate warm period followed by a linear decay to zero at
/// `total_epochs`; epochs past the total clamp to zero.
pub fn lr_at(epoch: usize, base_lr: f64, warm_epochs: usize, total_epochs: usize) -> f64 {
    assert!(warm_epochs < total_epochs, "warm_epochs must be < total");
    if epoch < warm_epochs {
        base_lr
    } else if epoch >= total_epochs {
        0.0
    } else {
        base_lr * (total_epochs - epoch) as f64 / (total_epochs - warm_epochs) as f64
    }
}

/// Normal-initialized tensor, mean 0, given standard deviation.
pub fn normal_tensor<E: Elem>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<E> {
    let dist = rand_distr::Normal::new(0.0, std).expect("valid std");
    let data: Vec<E> = (0..numel(shape))
        .map(|_| E::elem(rng.sample(dist)))
        .collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_paper_defaults() {
        assert_eq!(lr_at(0, 4e-4, 50, 150), 4e-4);
        assert_eq!(lr_at(49, 4e-4, 50, 150), 4e-4);
        assert!((lr_at(100, 4e-4, 50, 150) - 2e-4).abs() < 1e-18);
        assert_eq!(lr_at(150, 4e-4, 50, 150), 0.0);
        assert_eq!(lr_at(200, 4e-4, 50, 150), 0.0);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // for scalar g=1 the bias-corrected first step is -lr/(1+eps)
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::scalar(3.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![1.0]);
        store.adam_step(&grads, 0.1, AdamParams::default()).unwrap();
        let got = store.get("w").value().item();
        assert!((got - 2.9).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn adam_zero_grad_leaves_param_unchanged() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::new(&[2], vec![1.0, -2.0]));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![0.0, 0.0]);
        store.adam_step(&grads, 0.5, AdamParams::default()).unwrap();
        assert_eq!(store.get("w").value().data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_deterministic_across_runs() {
        let run = || {
            let mut store = ParamStore::<f32>::new();
            store.insert("w", Tensor::new(&[3], vec![0.5f32, -1.0, 2.0]));
            for step in 0..10 {
                let mut grads = BTreeMap::new();
                grads.insert(
                    "w".to_string(),
                    vec![0.1 * step as f32, -0.2, 0.05 * step as f32],
                );
                store.adam_step(&grads, 1e-2, AdamParams::default()).unwrap();
            }
            store.get("w").value().data().to_vec()
        };
        assert_eq!(run(), run(), "same inputs must give bit-identical params");
    }

    #[test]
    fn adam_grad_shape_mismatch_errors() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::new(&[2], vec![1.0, 2.0]));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![1.0]);
        assert!(store.adam_step(&grads, 0.1, AdamParams::default()).is_err());
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut store = ParamStore::<f64>::new();
        store.insert_frozen("a", Tensor::scalar(5.0));
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), vec![100.0]);
        store.adam_step(&grads, 0.1, AdamParams::default()).unwrap();
        assert_eq!(store.get("a").value().item(), 5.0);
    }

    #[test]
    #[should_panic(expected = "warm_epochs must be < total")]
    fn lr_invalid_totals_panics() {
        let _ = lr_at(0, 1e-3, 10, 10);
    }
}
