//! Pairwise evaluation: hide, optional quantization, blind reveal, metrics.

use crate::error::Result;
use crate::imaging::{resample, BitDepth, ImageTensor};
use crate::irc::ResolutionDecode;
use crate::metrics::{psnr, rre, ssim, MetricRow};
use crate::tensor::{Binder, Real, Var};

use super::model::Model;

#[derive(Clone, Debug)]
pub struct PairResult {
    pub row: MetricRow,
    pub stego: ImageTensor,
    /// `None` when the decoded resolution was empty.
    pub secret: Option<ImageTensor>,
    pub decode: ResolutionDecode,
}

/// Hides `secret` in `cover`, optionally quantizes the stego, then recovers
/// blindly. An empty decoded resolution scores 100% RRE and no secret metrics;
/// a wrong non-empty one is scored after resampling to the true dims.
pub fn evaluate_pair<T: Real>(
    model: &Model<T>,
    id: &str,
    cover: &ImageTensor,
    secret: &ImageTensor,
    quantize: Option<BitDepth>,
) -> Result<PairResult> {
    let cover = cover.to_rgb();
    let secret = secret.to_rgb();
    let hidden = model.hide(&cover, &secret)?;
    let stego = match quantize {
        Some(depth) => hidden.stego.quantize(depth),
        None => hidden.stego,
    };
    let b = Binder::inference(&model.store);
    let rec = model.recover(&b, &Var::constant(stego.to_batch::<T>()))?;
    let decode = model.decode_resolution(&rec)?;
    let dims = decode.dims();
    let mut row = MetricRow {
        id: id.to_string(),
        stego_psnr: Some(psnr(&stego, &cover)?),
        stego_ssim: Some(ssim(&stego, &cover)?),
        secret_psnr: None,
        secret_ssim: None,
        rre_percent: Some(rre(dims, secret.dims())?),
    };
    let revealed = if dims.0 == 0 || dims.1 == 0 {
        None
    } else {
        let out = model.render_secret(&b, &rec, dims)?;
        let scored = if dims == secret.dims() { out.clone() } else { resample(&out, secret.dims())? };
        row.secret_psnr = Some(psnr(&scored, &secret)?);
        row.secret_ssim = Some(ssim(&scored, &secret)?);
        Some(out)
    };
    Ok(PairResult {
        row,
        stego,
        secret: revealed,
        decode,
    })
}

/// Secret PSNR with the true resolution supplied, bypassing the resolution map.
/// Separates reconstruction quality from resolution decoding.
pub fn teacher_forced_secret_psnr<T: Real>(model: &Model<T>, cover: &ImageTensor, secret: &ImageTensor) -> Result<f64> {
    let secret = secret.to_rgb();
    let hidden = model.hide(&cover.to_rgb(), &secret)?;
    let b = Binder::inference(&model.store);
    let rec = model.recover(&b, &Var::constant(hidden.stego.to_batch::<T>()))?;
    let out = model.render_secret(&b, &rec, secret.dims())?;
    psnr(&out, &secret)
}
