//! Parameterized layers shared by the learnable components.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{Binder, Padding, ParamId, ParamStore, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `N(0, 2 / fan_in)`.
    He,
    Zero,
}

fn init_tensor<T: Real>(shape: Vec<usize>, fan_in: usize, init: Init, rng: &mut impl Rng) -> Tensor<T> {
    match init {
        Init::Zero => Tensor::zeros(shape),
        Init::He => {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive fan-in");
            Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
        }
    }
}

/// `K×K` convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = kernel * kernel * in_channels;
        let weight = store.register(
            format!("{name}.weight"),
            init_tensor(vec![kernel, kernel, in_channels, out_channels], fan_in, init, rng),
        );
        let bias = store.register(format!("{name}.bias"), Tensor::zeros([out_channels]));
        Conv {
            weight,
            bias,
            kernel,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Real>(&self, b: &Binder<T>, x: &Var<T>, padding: Padding) -> Result<Var<T>> {
        x.conv2d(&b.var(self.weight), Some(&b.var(self.bias)), padding)
    }
}

/// Convolutions with ReLU between consecutive layers (none after the last).
#[derive(Clone, Debug)]
pub struct ConvStack {
    pub layers: Vec<Conv>,
}

impl ConvStack {
    /// `kernels[i]` and `widths[i] → widths[i + 1]` describe layer `i`.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        kernels: &[usize],
        widths: &[usize],
        last_init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        debug_assert_eq!(kernels.len() + 1, widths.len());
        let n = kernels.len();
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n { last_init } else { Init::He };
                Conv::new(store, &format!("{name}.conv{i}"), kernels[i], widths[i], widths[i + 1], init, rng)
            })
            .collect();
        ConvStack { layers }
    }

    pub fn forward<T: Real>(&self, b: &Binder<T>, x: &Var<T>, padding: Padding) -> Result<Var<T>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(b, &h, padding)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Fully connected layers with ReLU between consecutive layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub widths: Vec<usize>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, widths: &[usize], last_init: Init, rng: &mut impl Rng) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n { last_init } else { Init::He };
                let weight = store.register(
                    format!("{name}.fc{i}.weight"),
                    init_tensor(vec![widths[i], widths[i + 1]], widths[i], init, rng),
                );
                let bias = store.register(format!("{name}.fc{i}.bias"), Tensor::zeros([widths[i + 1]]));
                Linear { weight, bias }
            })
            .collect();
        Mlp {
            layers,
            widths: widths.to_vec(),
        }
    }

    pub fn forward<T: Real>(&self, b: &Binder<T>, x: &Var<T>) -> Result<Var<T>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.linear(&b.var(layer.weight), &b.var(layer.bias))?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }
}
