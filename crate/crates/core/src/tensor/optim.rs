use std::cell::RefCell;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Owns every learnable tensor of a model, addressed by [`ParamId`].
///
/// Registration order is stable and defines checkpoint blob order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let grad = Tensor::zeros(value.shape().to_vec());
        self.params.push(Param { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: Vec<(ParamId, Tensor<T>)>) {
        for (id, g) in grads {
            self.params[id.0].grad.add_assign(&g);
        }
    }

    /// Overwrites every parameter with seeded `N(0, std²)` draws.
    pub fn randomize(&mut self, seed: u64, std: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("finite std");
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = T::lit(normal.sample(&mut rng));
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}

/// Binds parameters of a store into graph leaves for one forward pass.
///
/// With `track = true` the leaves require gradients and [`Binder::take_grads`]
/// collects them after `backward`.
pub struct Binder<'a, T: Real> {
    store: &'a ParamStore<T>,
    track: bool,
    bound: RefCell<Vec<Option<Var<T>>>>,
}

impl<'a, T: Real> Binder<'a, T> {
    pub fn new(store: &'a ParamStore<T>, track: bool) -> Self {
        Binder {
            store,
            track,
            bound: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn inference(store: &'a ParamStore<T>) -> Self {
        Self::new(store, false)
    }

    pub fn training(store: &'a ParamStore<T>) -> Self {
        Self::new(store, true)
    }

    pub fn var(&self, id: ParamId) -> Var<T> {
        let mut bound = self.bound.borrow_mut();
        bound[id.0]
            .get_or_insert_with(|| Var::leaf(self.store.get(id).value.clone(), self.track))
            .clone()
    }

    pub fn take_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.bound
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = v.as_ref()?;
                let g = v.grad()?.clone();
                v.zero_grad();
                Some((ParamId(i), g))
            })
            .collect()
    }
}

/// Adam moments and step counter for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self::with_hyper(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(store: &ParamStore<T>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || store.params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamState {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update from the store's accumulated grads.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if lr <= 0.0 || !lr.is_finite() {
            return Err(Error::invalid("adam_step", format!("learning rate must be positive, got {lr}")));
        }
        if self.m.len() != store.len() {
            return Err(Error::invalid(
                "adam_step",
                format!("state tracks {} tensors, store has {}", self.m.len(), store.len()),
            ));
        }
        for (p, m) in store.params.iter().zip(&self.m) {
            if p.grad.shape() != m.shape() {
                return Err(Error::shape("adam_step", p.grad.shape(), m.shape()));
            }
            if !p.grad.all_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of {}", p.name),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(lr), T::lit(self.epsilon));
        let one = T::one();
        for ((p, m), v) in store.params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for (((x, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate: `lr0 · (1 + cos(π·step/total)) / 2`.
pub fn cosine_lr(step: u64, total: u64, lr0: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("cosine_lr", "total steps must be positive"));
    }
    if step > total {
        return Err(Error::invalid("cosine_lr", format!("step {step} exceeds total {total}")));
    }
    Ok(lr0 * (1.0 + (PI * step as f64 / total as f64).cos()) / 2.0)
}
