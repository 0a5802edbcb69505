//! Invertible hiding network: a stack of affine coupling blocks.
//!
//! Each block updates the cover branch additively from the payload branch,
//! then the payload branch affinely from the updated cover branch:
//!
//! ```text
//! y1 = x1 + ψ(x2)
//! y2 = x2 ⊙ exp(clamp ⊙ tanh(ρ(y1))) + η(y1)
//! ```
//!
//! The inverse is exact for any subnet weights, so revealing with the true
//! lost branch `n` reproduces the inputs up to float rounding.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{ConvStack, Init};
use crate::tensor::{Binder, Padding, ParamId, ParamStore, Real, Tensor, Var};

pub const CLAMP_INIT: f64 = 2.0;

/// Channel layout and size of the coupling stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IhnLayout {
    pub cover_channels: usize,
    pub payload_channels: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub padding: Padding,
}

#[derive(Clone, Debug)]
pub struct CouplingBlock {
    pub psi: ConvStack,
    pub rho: ConvStack,
    pub eta: ConvStack,
    /// Per-payload-channel bound on the log-scale.
    pub clamp: ParamId,
}

fn subnet<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, hidden: usize, cout: usize, rng: &mut impl Rng) -> ConvStack {
    ConvStack::new(store, name, &[3, 3, 1], &[cin, hidden, hidden, cout], Init::Zero, rng)
}

impl CouplingBlock {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, layout: &IhnLayout, rng: &mut impl Rng) -> Self {
        let (c1, c2, h) = (layout.cover_channels, layout.payload_channels, layout.hidden);
        CouplingBlock {
            psi: subnet(store, &format!("{name}.psi"), c2, h, c1, rng),
            rho: subnet(store, &format!("{name}.rho"), c1, h, c2, rng),
            eta: subnet(store, &format!("{name}.eta"), c1, h, c2, rng),
            clamp: store.register(format!("{name}.clamp"), Tensor::full([c2], T::lit(CLAMP_INIT))),
        }
    }

    /// `clamp ⊙ tanh(ρ(y1))`, bounded elementwise by `|clamp|`.
    pub fn log_scale<T: Real>(&self, b: &Binder<T>, y1: &Var<T>, padding: Padding) -> Result<Var<T>> {
        self.rho.forward(b, y1, padding)?.tanh().mul_channel(&b.var(self.clamp))
    }

    pub fn forward<T: Real>(&self, b: &Binder<T>, x1: &Var<T>, x2: &Var<T>, padding: Padding) -> Result<(Var<T>, Var<T>)> {
        let y1 = x1.add(&self.psi.forward(b, x2, padding)?)?;
        let s = self.log_scale(b, &y1, padding)?;
        let y2 = x2.mul(&s.exp())?.add(&self.eta.forward(b, &y1, padding)?)?;
        Ok((y1, y2))
    }

    pub fn inverse<T: Real>(&self, b: &Binder<T>, y1: &Var<T>, y2: &Var<T>, padding: Padding) -> Result<(Var<T>, Var<T>)> {
        let s = self.log_scale(b, y1, padding)?;
        let x2 = y2.sub(&self.eta.forward(b, y1, padding)?)?.mul(&s.neg().exp())?;
        let x1 = y1.sub(&self.psi.forward(b, &x2, padding)?)?;
        Ok((x1, x2))
    }
}

#[derive(Clone, Debug)]
pub struct Ihn {
    pub layout: IhnLayout,
    pub blocks: Vec<CouplingBlock>,
}

impl Ihn {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, layout: IhnLayout, rng: &mut impl Rng) -> Self {
        let blocks = (0..layout.blocks)
            .map(|i| CouplingBlock::new(store, &format!("{name}.block{i}"), &layout, rng))
            .collect();
        Ihn { layout, blocks }
    }

    fn check_branches<T: Real>(&self, op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
        let (sa, sb) = (a.shape(), b.shape());
        let ok = sa.len() == 4
            && sb.len() == 4
            && sa[..3] == sb[..3]
            && sa[3] == self.layout.cover_channels
            && sb[3] == self.layout.payload_channels;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(op, sa, sb))
        }
    }

    pub fn block_forward<T: Real>(&self, b: &Binder<T>, index: usize, x1: &Var<T>, x2: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        self.check_branches("block_forward", x1, x2)?;
        self.blocks[index].forward(b, x1, x2, self.layout.padding)
    }

    pub fn block_inverse<T: Real>(&self, b: &Binder<T>, index: usize, y1: &Var<T>, y2: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        self.check_branches("block_inverse", y1, y2)?;
        self.blocks[index].inverse(b, y1, y2, self.layout.padding)
    }

    /// Runs every block forward; returns `(stego branch, lost branch n)`.
    pub fn hide<T: Real>(&self, b: &Binder<T>, cover: &Var<T>, payload: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        self.check_branches("ihn hide", cover, payload)?;
        let (mut x1, mut x2) = (cover.clone(), payload.clone());
        for block in &self.blocks {
            (x1, x2) = block.forward(b, &x1, &x2, self.layout.padding)?;
        }
        Ok((x1, x2))
    }

    /// Runs every block inverse in reverse order; returns `(cover, payload)` estimates.
    pub fn reveal<T: Real>(&self, b: &Binder<T>, stego: &Var<T>, aux: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        self.check_branches("ihn reveal", stego, aux)?;
        let (mut y1, mut y2) = (stego.clone(), aux.clone());
        for block in self.blocks.iter().rev() {
            (y1, y2) = block.inverse(b, &y1, &y2, self.layout.padding)?;
        }
        Ok((y1, y2))
    }
}

/// Distribution of the substitute for the lost branch at reveal time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AuxMode {
    #[default]
    Zeros,
    Gaussian {
        seed: u64,
    },
}

impl fmt::Display for AuxMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuxMode::Zeros => f.write_str("zeros"),
            AuxMode::Gaussian { seed } => write!(f, "gaussian:{seed}"),
        }
    }
}

impl FromStr for AuxMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "zeros" => Ok(AuxMode::Zeros),
            Some(("gaussian", seed)) => seed
                .parse()
                .map(|seed| AuxMode::Gaussian { seed })
                .map_err(|e| format!("bad gaussian seed `{seed}`: {e}")),
            _ => Err(format!("unknown aux mode `{s}` (expected zeros|gaussian:<seed>)")),
        }
    }
}

pub fn sample_aux<T: Real>(shape: &[usize], mode: AuxMode) -> Tensor<T> {
    match mode {
        AuxMode::Zeros => Tensor::zeros(shape.to_vec()),
        AuxMode::Gaussian { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Tensor::from_fn(shape.to_vec(), |_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                T::lit(v)
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(blocks: usize) -> IhnLayout {
        IhnLayout {
            cover_channels: 4,
            payload_channels: 5,
            hidden: 6,
            blocks,
            padding: Padding::Zero,
        }
    }

    fn random<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-1.0..1.0)))
    }

    fn network<T: Real>(blocks: usize, weight_seed: Option<u64>) -> (ParamStore<T>, Ihn) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let ihn = Ihn::new(&mut store, "ihn", layout(blocks), &mut rng);
        if let Some(seed) = weight_seed {
            store.randomize(seed, 0.2);
        }
        (store, ihn)
    }

    #[test]
    fn zero_weights_are_identity() {
        let (store, ihn) = network::<f64>(2, None);
        let b = Binder::inference(&store);
        let x1 = Var::constant(random(&[1, 4, 6, 4], 1));
        let x2 = Var::constant(random(&[1, 4, 6, 5], 2));
        let (y1, y2) = ihn.block_forward(&b, 0, &x1, &x2).unwrap();
        assert_eq!(y1.value(), x1.value());
        assert_eq!(y2.value(), x2.value());
        let (s, n) = ihn.hide(&b, &x1, &x2).unwrap();
        assert_eq!(s.value(), x1.value());
        assert_eq!(n.value(), x2.value());
    }

    #[test]
    fn block_round_trip_random_weights_f32() {
        let (store, ihn) = network::<f32>(1, Some(9));
        let b = Binder::inference(&store);
        let x1 = Var::constant(random(&[1, 6, 4, 4], 4));
        let x2 = Var::constant(random(&[1, 6, 4, 5], 5));
        let (y1, y2) = ihn.block_forward(&b, 0, &x1, &x2).unwrap();
        let (r1, r2) = ihn.block_inverse(&b, 0, &y1, &y2).unwrap();
        assert!(r1.value().max_abs_diff(x1.value()).unwrap() < 1e-5);
        assert!(r2.value().max_abs_diff(x2.value()).unwrap() < 1e-5);
    }

    #[test]
    fn zero_is_a_fixed_point_of_identity_blocks() {
        let (store, ihn) = network::<f64>(3, None);
        let b = Binder::inference(&store);
        let z1 = Var::constant(Tensor::zeros([1, 2, 2, 4]));
        let z2 = Var::constant(Tensor::zeros([1, 2, 2, 5]));
        let (x1, x2) = ihn.reveal(&b, &z1, &z2).unwrap();
        assert!(x1.value().data().iter().chain(x2.value().data()).all(|&v| v == 0.0));
    }

    #[test]
    fn eight_block_round_trip() {
        let (store, ihn) = network::<f32>(8, Some(21));
        let b = Binder::inference(&store);
        let x1 = Var::constant(random(&[1, 8, 8, 4], 6));
        let x2 = Var::constant(random(&[1, 8, 8, 5], 7));
        let (s, n) = ihn.hide(&b, &x1, &x2).unwrap();
        assert_eq!(s.shape(), x1.shape());
        assert_eq!(n.shape(), x2.shape());
        let (c, p) = ihn.reveal(&b, &s, &n).unwrap();
        assert!(c.value().max_abs_diff(x1.value()).unwrap() < 1e-4);
        assert!(p.value().max_abs_diff(x2.value()).unwrap() < 1e-4);
        let (c2, p2) = ihn.reveal(&b, &s, &n).unwrap();
        assert_eq!(c.value(), c2.value());
        assert_eq!(p.value(), p2.value());
    }

    #[test]
    fn log_scale_is_bounded_by_clamp() {
        let (mut store, ihn) = network::<f64>(1, Some(5));
        let clamp = ihn.blocks[0].clamp;
        store.value_mut(clamp).data_mut().copy_from_slice(&[0.5, -1.0, 2.0, 0.1, 3.0]);
        let b = Binder::inference(&store);
        let y1 = Var::constant(random::<f64>(&[1, 5, 5, 4], 8).map(|v| v * 50.0));
        let s = ihn.blocks[0].log_scale(&b, &y1, Padding::Zero).unwrap();
        let bounds = store.get(clamp).value.data().to_vec();
        for px in s.value().data().chunks_exact(5) {
            for (v, bound) in px.iter().zip(&bounds) {
                assert!(v.abs() <= bound.abs() + 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_branches_are_rejected() {
        let (store, ihn) = network::<f64>(1, None);
        let b = Binder::inference(&store);
        let x1 = Var::constant(Tensor::zeros([1, 4, 4, 4]));
        let wrong_c = Var::constant(Tensor::zeros([1, 4, 4, 6]));
        let wrong_hw = Var::constant(Tensor::zeros([1, 4, 2, 5]));
        assert!(ihn.hide(&b, &x1, &wrong_c).is_err());
        assert!(ihn.reveal(&b, &x1, &wrong_hw).is_err());
    }

    #[test]
    fn aux_sampling() {
        let z: Tensor<f64> = sample_aux(&[2, 3], AuxMode::Zeros);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let a: Tensor<f64> = sample_aux(&[4, 5], AuxMode::Gaussian { seed: 7 });
        let b: Tensor<f64> = sample_aux(&[4, 5], AuxMode::Gaussian { seed: 7 });
        assert_eq!(a, b);
        let big: Tensor<f64> = sample_aux(&[1_000_000], AuxMode::Gaussian { seed: 1 });
        let mean = big.data().iter().sum::<f64>() / 1e6;
        assert!(mean.abs() < 0.01, "{mean}");
        for m in [AuxMode::Zeros, AuxMode::Gaussian { seed: 42 }] {
            assert_eq!(m.to_string().parse::<AuxMode>().unwrap(), m);
        }
    }
}
