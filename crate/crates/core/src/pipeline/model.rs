use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fda::{decompose, DetailEncoder};
use crate::ihn::{sample_aux, Ihn, IhnLayout};
use crate::imaging::{resample, resample_var, ImageTensor};
use crate::irc::{decode_map, encode_map, quantize_resolution, ResolutionDecode};
use crate::lgir::{Lgir, LgirLayout};
use crate::tensor::{Binder, ParamStore, Real, Tensor, Var};
use crate::wavelet::{dwt2_var, iwt2_var};

use super::config::ArdisConfig;

const IMAGE_CHANNELS: usize = 3;
const IMAGE_BANDS: usize = 4 * IMAGE_CHANNELS;

pub const LOSS_TERMS: [&str; 5] = ["stego", "secret", "basis", "latent", "map"];

/// Every learnable component plus the configuration that shaped it.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub config: ArdisConfig,
    pub store: ParamStore<T>,
    pub ihn: Ihn,
    pub detail: DetailEncoder,
    pub lgir: Lgir,
}

/// What the hiding side feeds the coupling network, before DWT.
pub struct Payload<T: Real> {
    pub basis: ImageTensor,
    pub latent: Var<T>,
    pub map: Tensor<T>,
    pub secret_dims: (usize, usize),
    pub branch: Var<T>,
}

/// Payload estimates recovered from a stego.
pub struct Recovered<T: Real> {
    pub basis: Var<T>,
    pub latent: Var<T>,
    pub map: Var<T>,
}

/// Graph values of one training forward pass.
pub struct Forward<T: Real> {
    pub stego_raw: Var<T>,
    pub stego: Var<T>,
    pub cover: Var<T>,
    pub payload: Payload<T>,
    pub recovered: Recovered<T>,
    pub secret_pred: Var<T>,
    pub secret_target: Var<T>,
}

/// Per-term values in [`LOSS_TERMS`] order and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub terms: [f64; 5],
}

#[derive(Clone, Debug)]
pub struct HideOutput<T: Real> {
    pub stego: ImageTensor,
    /// The coupling network's second output, discarded in normal use.
    pub lost: Tensor<T>,
    pub secret_dims: (usize, usize),
}

#[derive(Clone, Debug)]
pub struct RevealOutput {
    pub secret: ImageTensor,
    pub decode: ResolutionDecode,
    pub warning: Option<String>,
}

fn as_image<T: Real>(v: &Var<T>) -> Result<ImageTensor> {
    let t = v.value();
    if !t.all_finite() {
        return Err(Error::NonFinite { what: "image output".into() });
    }
    ImageTensor::from_batch(t)
}

impl<T: Real> Model<T> {
    /// Builds a freshly initialized model seeded from `config.seed`.
    pub fn new(config: ArdisConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let ihn = Ihn::new(
            &mut store,
            "ihn",
            IhnLayout {
                cover_channels: IMAGE_BANDS,
                payload_channels: config.payload_channels(),
                hidden: config.ihn_hidden,
                blocks: config.ihn_blocks,
                padding: config.padding,
            },
            &mut rng,
        );
        let detail = DetailEncoder::new(
            &mut store,
            "fda",
            config.detail_fold,
            IMAGE_CHANNELS,
            config.detail_hidden,
            config.latent_channels,
            &mut rng,
        );
        let lgir = Lgir::new(
            &mut store,
            "lgir",
            LgirLayout {
                image_channels: IMAGE_CHANNELS,
                latent_channels: config.latent_channels,
                feature_channels: config.feature_channels,
                mlp_hidden: config.mlp_hidden.clone(),
                padding: config.padding,
            },
            &mut rng,
        );
        Ok(Model {
            config,
            store,
            ihn,
            detail,
            lgir,
        })
    }

    pub fn check_cover(&self, cover: &ImageTensor) -> Result<()> {
        let want = self.config.cover_dims();
        if cover.dims() != want {
            return Err(Error::invalid(
                "hide",
                format!(
                    "cover is {}x{} but the model expects {}x{}",
                    cover.height(),
                    cover.width(),
                    want.0,
                    want.1
                ),
            ));
        }
        Ok(())
    }

    /// Basis, detail latent and resolution map, concatenated in the frequency domain.
    pub fn payload(&self, b: &Binder<T>, secret: &ImageTensor) -> Result<Payload<T>> {
        let cfg = &self.config;
        let secret = secret.to_rgb();
        let secret_dims = secret.dims();
        let word = quantize_resolution(secret_dims.0, secret_dims.1, cfg.resolution_bits)?;
        let dec = decompose(&secret, cfg.cover_dims())?;
        let (hc, wc) = cfg.cover_dims();
        let latent = if cfg.fda_enabled {
            self.detail.forward(b, &Var::constant(dec.residual.cast()), cfg.cover_dims(), cfg.padding)?
        } else {
            Var::constant(Tensor::zeros([1, hc, wc, cfg.latent_channels]))
        };
        let (mh, mw) = cfg.map_dims();
        let map: Tensor<T> = encode_map(&word, (mh, mw))?.cast().reshape([1, mh, mw, 1])?;
        let basis_f = dwt2_var(&Var::constant(dec.global_basis.to_batch::<T>()))?;
        let latent_f = dwt2_var(&latent)?;
        let branch = Var::concat_last(&[&basis_f, &latent_f, &Var::constant(map.clone())])?;
        Ok(Payload {
            basis: dec.global_basis,
            latent,
            map,
            secret_dims,
            branch,
        })
    }

    /// Unclamped stego and the lost branch.
    pub fn hide_graph(&self, b: &Binder<T>, cover: &ImageTensor, payload: &Payload<T>) -> Result<(Var<T>, Var<T>)> {
        self.check_cover(cover)?;
        let cover_f = dwt2_var(&Var::constant(cover.to_rgb().to_batch::<T>()))?;
        let (s, n) = self.ihn.hide(b, &cover_f, &payload.branch)?;
        Ok((iwt2_var(&s)?, n))
    }

    /// Inverse pass with the configured substitute for the lost branch.
    pub fn recover(&self, b: &Binder<T>, stego: &Var<T>) -> Result<Recovered<T>> {
        let cfg = &self.config;
        let sf = dwt2_var(stego)?;
        let (mh, mw) = cfg.map_dims();
        if sf.shape()[1..3] != [mh, mw] {
            return Err(Error::shape("reveal", stego.shape(), &[1, cfg.cover_height, cfg.cover_width, IMAGE_CHANNELS]));
        }
        let aux = Var::constant(sample_aux(&[1, mh, mw, cfg.payload_channels()], cfg.aux_mode));
        let (_, p) = self.ihn.reveal(b, &sf, &aux)?;
        let lat = 4 * cfg.latent_channels;
        Ok(Recovered {
            basis: iwt2_var(&p.slice_last(0, IMAGE_BANDS)?)?,
            latent: iwt2_var(&p.slice_last(IMAGE_BANDS, lat)?)?,
            map: p.slice_last(IMAGE_BANDS + lat, 1)?,
        })
    }

    /// Secret prediction at flat pixel indices of `dims`: `[P, 3]`.
    pub(crate) fn secret_pixels(&self, b: &Binder<T>, rec: &Recovered<T>, dims: (usize, usize), pixels: &[usize]) -> Result<Var<T>> {
        if self.config.lgir_enabled {
            let grid = self.lgir.build_latent(b, &rec.basis, &rec.latent)?;
            self.lgir.render_pixels(b, &grid, &rec.basis, dims, pixels)
        } else {
            resample_var(&rec.basis, dims)?.reshape([dims.0 * dims.1, IMAGE_CHANNELS])?.gather_rows(pixels)
        }
    }

    /// Full-resolution secret at `dims`, clamped to `[0, 1]`.
    pub(crate) fn render_secret(&self, b: &Binder<T>, rec: &Recovered<T>, dims: (usize, usize)) -> Result<ImageTensor> {
        if self.config.lgir_enabled {
            let grid = self.lgir.build_latent(b, &rec.basis, &rec.latent)?;
            self.lgir.render(b, &grid, &rec.basis, dims)
        } else {
            resample(&ImageTensor::from_batch(rec.basis.value())?, dims)
        }
    }

    /// One training forward pass; the secret is supervised at `pixels` of its true grid.
    pub fn forward(&self, b: &Binder<T>, cover: &ImageTensor, secret: &ImageTensor, pixels: &[usize]) -> Result<Forward<T>> {
        let secret = secret.to_rgb();
        let payload = self.payload(b, &secret)?;
        let (stego_raw, _) = self.hide_graph(b, cover, &payload)?;
        let stego = stego_raw.clamp(0.0, 1.0);
        let recovered = self.recover(b, &stego)?;
        let secret_pred = self.secret_pixels(b, &recovered, payload.secret_dims, pixels)?;
        let (h, w) = payload.secret_dims;
        let secret_target = Var::constant(secret.to_batch::<T>()).reshape([h * w, IMAGE_CHANNELS])?.gather_rows(pixels)?;
        Ok(Forward {
            stego_raw,
            stego,
            cover: Var::constant(cover.to_rgb().to_batch::<T>()),
            payload,
            recovered,
            secret_pred,
            secret_target,
        })
    }

    /// Weighted multi-term objective; a non-finite term is an error naming it.
    pub fn loss(&self, f: &Forward<T>) -> Result<(Var<T>, LossTerms)> {
        let cfg = &self.config;
        let basis_target = Var::constant(f.payload.basis.to_batch::<T>());
        let map_target = Var::constant(f.payload.map.clone());
        let parts = [
            (cfg.lambda_stego, f.stego_raw.mse(&f.cover)?),
            (cfg.lambda_secret, f.secret_pred.mse(&f.secret_target)?),
            (cfg.lambda_basis, f.recovered.basis.mse(&basis_target)?),
            (cfg.lambda_latent, f.recovered.latent.mse(&f.payload.latent)?),
            (cfg.lambda_map, f.recovered.map.mse(&map_target)?),
        ];
        let mut terms = [0.0; 5];
        let mut total: Option<Var<T>> = None;
        for (i, (lambda, term)) in parts.iter().enumerate() {
            let v = term.value().data()[0].as_f64();
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("loss term `{}`", LOSS_TERMS[i]),
                });
            }
            terms[i] = v;
            let weighted = term.mul_scalar(*lambda);
            total = Some(match total {
                None => weighted,
                Some(t) => t.add(&weighted)?,
            });
        }
        let total = total.expect("five terms");
        let value = total.value().data()[0].as_f64();
        Ok((total, LossTerms { total: value, terms }))
    }

    /// Embeds `secret` into `cover`; the stego has the cover's dims.
    pub fn hide(&self, cover: &ImageTensor, secret: &ImageTensor) -> Result<HideOutput<T>> {
        let b = Binder::inference(&self.store);
        let payload = self.payload(&b, secret)?;
        let (stego, lost) = self.hide_graph(&b, cover, &payload)?;
        Ok(HideOutput {
            stego: as_image(&stego.clamp(0.0, 1.0))?,
            lost: lost.value().clone(),
            secret_dims: payload.secret_dims,
        })
    }

    /// Blind recovery: the secret's resolution is read from the stego itself.
    pub fn reveal(&self, stego: &ImageTensor) -> Result<RevealOutput> {
        let b = Binder::inference(&self.store);
        let want = self.config.cover_dims();
        if stego.dims() != want {
            return Err(Error::invalid(
                "reveal",
                format!("stego is {}x{} but the model expects {}x{}", stego.height(), stego.width(), want.0, want.1),
            ));
        }
        let rec = self.recover(&b, &Var::constant(stego.to_rgb().to_batch::<T>()))?;
        let decode = self.decode_resolution(&rec)?;
        let (h, w) = decode.dims();
        if h == 0 || w == 0 {
            return Err(Error::invalid(
                "reveal",
                format!("decoded resolution {h}x{w} is empty; the stego carries no readable resolution map"),
            ));
        }
        let secret = self.render_secret(&b, &rec, (h, w))?;
        let warning = decode.warning(self.config.margin_threshold);
        Ok(RevealOutput { secret, decode, warning })
    }

    pub(crate) fn decode_resolution(&self, rec: &Recovered<T>) -> Result<ResolutionDecode> {
        if !rec.map.value().all_finite() {
            return Err(Error::NonFinite {
                what: "recovered resolution map".into(),
            });
        }
        decode_map(rec.map.value().data(), self.config.map_dims(), self.config.resolution_bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_params;
    use crate::metrics::psnr;
    use crate::pipeline::data::synthetic_image;

    fn tiny() -> ArdisConfig {
        ArdisConfig {
            cover_height: 16,
            cover_width: 16,
            latent_channels: 2,
            resolution_bits: 8,
            ihn_blocks: 1,
            ihn_hidden: 4,
            detail_hidden: 4,
            feature_channels: 3,
            mlp_hidden: vec![6],
            ..Default::default()
        }
    }

    #[test]
    fn untrained_model_is_near_identity() {
        let model = Model::<f32>::new(ArdisConfig::toy()).unwrap();
        let cover = synthetic_image(64, 64, 1);
        let secret = synthetic_image(90, 120, 2);
        let out = model.hide(&cover, &secret).unwrap();
        assert_eq!(out.stego.dims(), (64, 64));
        assert_eq!(out.secret_dims, (90, 120));
        assert!(psnr(&out.stego, &cover).unwrap() > 35.0);
        let again = model.hide(&cover, &secret).unwrap();
        assert_eq!(out.stego, again.stego);
    }

    #[test]
    fn payload_layout() {
        let model = Model::<f64>::new(tiny()).unwrap();
        let b = Binder::inference(&model.store);
        let p = model.payload(&b, &synthetic_image(14, 12, 3)).unwrap();
        assert_eq!(p.branch.shape(), &[1, 8, 8, 12 + 8 + 1]);
        assert_eq!(p.latent.shape(), &[1, 16, 16, 2]);
        let map: Vec<f64> = p.branch.value().data().iter().skip(20).step_by(21).copied().collect();
        assert_eq!(map, p.map.data());
        assert!(map.iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn true_lost_branch_recovers_payload() {
        let mut model = Model::<f64>::new(tiny()).unwrap();
        model.store.randomize(3, 0.1);
        let b = Binder::inference(&model.store);
        let secret = synthetic_image(13, 11, 4);
        let p = model.payload(&b, &secret).unwrap();
        let cover = synthetic_image(16, 16, 5);
        let (stego, n) = model.hide_graph(&b, &cover, &p).unwrap();
        let sf = dwt2_var(&stego).unwrap();
        let (_, rp) = model.ihn.reveal(&b, &sf, &n).unwrap();
        assert!(rp.value().max_abs_diff(p.branch.value()).unwrap() < 1e-10);
        let map = rp.slice_last(20, 1).unwrap();
        let d = decode_map(map.value().data(), (8, 8), 8).unwrap();
        assert_eq!(d.dims(), (13, 11));
    }

    #[test]
    fn reveal_of_untrained_model_reports_empty_resolution() {
        let model = Model::<f32>::new(tiny()).unwrap();
        let err = model.reveal(&synthetic_image(16, 16, 6)).unwrap_err().to_string();
        assert!(err.contains("0x0"), "{err}");
    }

    #[test]
    fn cover_mismatch_names_both_sizes() {
        let model = Model::<f32>::new(tiny()).unwrap();
        let err = model.hide(&synthetic_image(32, 32, 0), &synthetic_image(8, 8, 1)).unwrap_err().to_string();
        assert!(err.contains("32x32") && err.contains("16x16"), "{err}");
        let wide = ImageTensor::constant(1, 16, 3, 0.5).unwrap();
        assert!(model.hide(&synthetic_image(16, 16, 0), &wide).is_err(), "16 exceeds 4-bit width");
    }

    #[test]
    fn loss_terms_and_weights() {
        let model = Model::<f64>::new(tiny()).unwrap();
        let b = Binder::inference(&model.store);
        let cover = synthetic_image(16, 16, 7);
        let secret = synthetic_image(10, 9, 8);
        let pixels: Vec<usize> = (0..90).collect();
        let f = model.forward(&b, &cover, &secret, &pixels).unwrap();
        let (total, terms) = model.loss(&f).unwrap();
        // identity network: stego equals cover exactly
        assert!(terms.terms[0] < 1e-20);
        assert!(terms.terms[4] > 0.5, "map is lost without training");
        let want: f64 = [1.0, 1.0, 0.5, 0.1, 1.0].iter().zip(terms.terms).map(|(l, t)| l * t).sum();
        assert!((total.value().data()[0] - want).abs() < 1e-12);

        let mut only_stego = model.clone();
        only_stego.config.lambda_secret = 0.0;
        only_stego.config.lambda_basis = 0.0;
        only_stego.config.lambda_latent = 0.0;
        only_stego.config.lambda_map = 0.0;
        let (_, t) = only_stego.loss(&f).unwrap();
        assert_eq!(t.total, t.terms[0]);
    }

    #[test]
    fn nan_loss_names_the_term() {
        let mut model = Model::<f64>::new(tiny()).unwrap();
        let id = model.store.find("lgir.mlp.fc1.bias").unwrap();
        model.store.value_mut(id).data_mut()[0] = f64::NAN;
        let b = Binder::inference(&model.store);
        let f = model.forward(&b, &synthetic_image(16, 16, 1), &synthetic_image(5, 5, 2), &[0, 1, 2]).unwrap();
        let err = model.loss(&f).unwrap_err().to_string();
        assert!(err.contains("secret"), "{err}");
    }

    #[test]
    fn clamp_gradient_matches_finite_differences() {
        let mut model = Model::<f64>::new(tiny()).unwrap();
        model.store.randomize(9, 0.2);
        let clamp = model.store.find("ihn.block0.clamp").unwrap();
        let cover = synthetic_image(16, 16, 10);
        let secret = synthetic_image(7, 11, 11);
        let pixels: Vec<usize> = (0..77).step_by(3).collect();
        let m = model.clone();
        let rep = check_params(&mut model.store, &[(clamp, 0), (clamp, 20)], 1e-5, |b| {
            let f = m.forward(b, &cover, &secret, &pixels)?;
            Ok(m.loss(&f)?.0)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-4, "{}", rep.worst);
    }

    #[test]
    fn ablation_variants_run() {
        for (fda, lgir) in [(false, false), (true, false), (false, true), (true, true)] {
            let cfg = ArdisConfig {
                fda_enabled: fda,
                lgir_enabled: lgir,
                ..tiny()
            };
            let model = Model::<f32>::new(cfg).unwrap();
            let b = Binder::training(&model.store);
            let f = model.forward(&b, &synthetic_image(16, 16, 0), &synthetic_image(12, 14, 1), &[0, 5, 100]).unwrap();
            let (loss, _) = model.loss(&f).unwrap();
            loss.backward().unwrap();
            let grads = b.take_grads();
            assert!(!grads.is_empty());
            let out = model.hide(&synthetic_image(16, 16, 0), &synthetic_image(12, 14, 1)).unwrap();
            assert_eq!(out.stego.dims(), (16, 16));
        }
    }
}
