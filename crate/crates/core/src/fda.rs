//! Frequency decoupling: a cover-aligned global basis plus a detail latent.
//!
//! The basis is the secret resampled to the cover grid. The residual is what
//! resampling the basis back to the secret grid fails to reproduce, so
//! `resample(basis) + residual` rebuilds the secret exactly. A small encoder
//! folds the residual onto the cover grid as a `c_lat`-channel latent.

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::{resample, resample_tensor, resample_var, ImageTensor};
use crate::nn::{ConvStack, Init};
use crate::tensor::{Binder, Padding, ParamStore, Real, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Decomposition {
    /// Secret resampled to the cover dims, clamped to `[0, 1]`.
    pub global_basis: ImageTensor,
    /// Signed `[1, H_sec, W_sec, C]` residual, not clamped.
    pub residual: Tensor<f64>,
}

impl Decomposition {
    pub fn secret_dims(&self) -> (usize, usize) {
        let s = self.residual.shape();
        (s[1], s[2])
    }

    /// The back-projection of the basis that the residual complements.
    pub fn upsampled_basis(&self) -> Result<Tensor<f64>> {
        resample_tensor(&self.global_basis.to_batch::<f64>(), self.secret_dims())
    }

    /// `resample(basis) + residual`, equal to the secret up to rounding.
    pub fn reconstruct(&self) -> Result<Tensor<f64>> {
        Ok(self.upsampled_basis()?.zip_map(&self.residual, |a, b| a + b))
    }
}

/// Splits a secret into the cover-grid basis and the full-resolution residual.
pub fn decompose(secret: &ImageTensor, cover_dims: (usize, usize)) -> Result<Decomposition> {
    let (hc, wc) = cover_dims;
    if hc == 0 || wc == 0 || hc % 2 != 0 || wc % 2 != 0 {
        return Err(Error::invalid("decompose", format!("cover dims {hc}x{wc} must be positive and even")));
    }
    let global_basis = resample(secret, cover_dims)?;
    let back = resample_tensor(&global_basis.to_batch::<f64>(), secret.dims())?;
    let residual = secret.to_batch::<f64>().zip_map(&back, |s, b| s - b);
    Ok(Decomposition { global_basis, residual })
}

/// Folds the residual onto the cover grid and projects it to `c_lat` channels.
///
/// The residual is clamped to `[-1, 1]`, resampled to `fold` times the cover
/// dims, space-to-depth folded by `fold`, then passed through
/// 3×3 conv → relu → 3×3 conv → relu → 1×1 conv.
#[derive(Clone, Debug)]
pub struct DetailEncoder {
    pub fold: usize,
    pub latent_channels: usize,
    pub convs: ConvStack,
}

impl DetailEncoder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        fold: usize,
        channels: usize,
        hidden: usize,
        latent_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let cin = fold * fold * channels;
        let convs = ConvStack::new(store, name, &[3, 3, 1], &[cin, hidden, hidden, latent_channels], Init::He, rng);
        DetailEncoder {
            fold,
            latent_channels,
            convs,
        }
    }

    /// `[1, H_sec, W_sec, C] → [1, Hc, Wc, c_lat]` for any secret size.
    pub fn forward<T: Real>(
        &self,
        b: &Binder<T>,
        residual: &Var<T>,
        cover_dims: (usize, usize),
        padding: Padding,
    ) -> Result<Var<T>> {
        let (hc, wc) = cover_dims;
        let k = self.fold;
        let grid = resample_var(&residual.clamp(-1.0, 1.0), (k * hc, k * wc))?;
        self.convs.forward(b, &grid.space_to_depth(k)?, padding)
    }
}

pub fn encode_detail<T: Real>(
    b: &Binder<T>,
    encoder: &DetailEncoder,
    residual: &Tensor<f64>,
    cover_dims: (usize, usize),
    padding: Padding,
) -> Result<Var<T>> {
    encoder.forward(b, &Var::constant(residual.cast()), cover_dims, padding)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gradcheck::{check_input, check_params, DEFAULT_STEP};

    fn textured(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        ImageTensor::new(h, w, 3, data).unwrap()
    }

    fn encoder(store: &mut ParamStore<f64>) -> DetailEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        DetailEncoder::new(store, "fda", 2, 3, 6, 4, &mut rng)
    }

    #[test]
    fn same_size_secret_has_zero_residual() {
        let x = textured(16, 12, 1);
        let d = decompose(&x, (16, 12)).unwrap();
        assert_eq!(d.global_basis, x);
        assert!(d.residual.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_secret_has_zero_residual() {
        for (h, w) in [(20, 20), (37, 90), (8, 8)] {
            let x = ImageTensor::constant(h, w, 3, 0.3).unwrap();
            let d = decompose(&x, (16, 16)).unwrap();
            assert!(d.residual.data().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn reconstruction_identity() {
        for (i, (h, w)) in [(64, 64), (96, 128), (200, 200), (256, 64), (31, 17)].into_iter().enumerate() {
            let x = textured(h, w, i as u64);
            let d = decompose(&x, (64, 64)).unwrap();
            assert_eq!(d.global_basis.dims(), (64, 64));
            assert_eq!(d.secret_dims(), (h, w));
            let err = d.reconstruct().unwrap().max_abs_diff(&x.to_batch::<f64>()).unwrap();
            assert!(err < 1e-12, "{h}x{w}: {err}");
        }
    }

    #[test]
    fn smooth_secret_has_sparse_residual() {
        let x = ImageTensor::from_fn(128, 128, 3, |y, x, c| 0.1 + 0.5 * y as f64 / 127.0 + 0.3 * x as f64 / 127.0 + 0.02 * c as f64).unwrap();
        let d = decompose(&x, (64, 64)).unwrap();
        let mean = d.residual.data().iter().map(|v| v.abs()).sum::<f64>() / d.residual.len() as f64;
        assert!(mean < 0.01, "{mean}");
    }

    #[test]
    fn odd_cover_dims_are_rejected() {
        assert!(decompose(&textured(8, 8, 0), (7, 8)).is_err());
    }

    #[test]
    fn latent_shape_is_resolution_agnostic() {
        let mut store = ParamStore::new();
        let enc = encoder(&mut store);
        let b = Binder::inference(&store);
        for (h, w) in [(64, 64), (128, 96), (200, 200)] {
            let d = decompose(&textured(h, w, 3), (64, 64)).unwrap();
            let z = encode_detail(&b, &enc, &d.residual, (64, 64), Padding::Zero).unwrap();
            assert_eq!(z.shape(), &[1, 64, 64, 4]);
        }
    }

    #[test]
    fn zero_residual_with_zero_bias_gives_zero_latent() {
        let mut store = ParamStore::new();
        let enc = encoder(&mut store);
        let b = Binder::inference(&store);
        let z = encode_detail(&b, &enc, &Tensor::zeros([1, 20, 30, 3]), (8, 8), Padding::Zero).unwrap();
        assert!(z.value().data().iter().all(|&v| v == 0.0));
        let z2 = encode_detail(&b, &enc, &Tensor::zeros([1, 20, 30, 3]), (8, 8), Padding::Zero).unwrap();
        assert_eq!(z.value(), z2.value());
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let enc = encoder(&mut store);
        store.randomize(11, 0.3);
        let d = decompose(&textured(10, 14, 5), (4, 4)).unwrap();
        let r = d.residual.clone();
        let probe = Var::constant(Tensor::from_fn([1, 4, 4, 4], |i| ((i * 37) % 11) as f64 / 11.0 - 0.5));
        let picks: Vec<_> = store.iter().flat_map(|(id, p)| [(id, 0), (id, p.value.len() - 1)]).collect();
        let rep = check_params(&mut store, &picks, DEFAULT_STEP, |b| {
            Ok(enc.forward(b, &Var::constant(r.clone()), (4, 4), Padding::Zero)?.mul(&probe)?.sum())
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{}", rep.worst);

        let b = Binder::inference(&store);
        let rep = check_input(&r, DEFAULT_STEP, |v| Ok(enc.forward(&b, v, (4, 4), Padding::Zero)?.mul(&probe)?.sum())).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{}", rep.worst);
    }
}
