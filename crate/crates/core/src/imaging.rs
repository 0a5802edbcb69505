//! PNG I/O and the bicubic resampling operator.
//!
//! Resampling uses the Catmull-Rom kernel (a = -0.5) with pixel centers at
//! `(i + 0.5) / N` and clamped border indices. The same separable weights back
//! the image-level [`resample`] and the differentiable [`resample_var`].

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Catmull-Rom parameter.
pub const CUBIC_A: f64 = -0.5;

/// An `H×W×C` raster with values in `[0, 1]`, C ∈ {1, 3}.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    tensor: Tensor<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid("image", format!("channels must be 1 or 3, got {channels}")));
        }
        let tensor = Tensor::new([height, width, channels], data)?;
        if let Some(v) = tensor.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("image", format!("value {v} outside [0, 1]")));
        }
        Ok(ImageTensor { tensor })
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]`.
    pub fn from_unclamped(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let data = data.into_iter().map(clamp01).collect();
        Self::new(height, width, channels, data)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(clamp01(f(y, x, c)));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Drops the batch axis of a `[1, H, W, C]` tensor and clamps.
    pub fn from_batch<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (n, h, w, c) = t.nhwc()?;
        if n != 1 {
            return Err(Error::invalid("image", format!("expected batch of one, got {n}")));
        }
        Self::from_unclamped(h, w, c, t.data().iter().map(|v| v.as_f64()).collect())
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn as_tensor(&self) -> &Tensor<f64> {
        &self.tensor
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.tensor.data()[(y * self.width() + x) * self.channels() + c]
    }

    /// `[1, H, W, C]` copy in the requested precision.
    pub fn to_batch<T: Real>(&self) -> Tensor<T> {
        let (h, w, c) = (self.height(), self.width(), self.channels());
        Tensor::from_parts(vec![1, h, w, c], self.tensor.data().iter().map(|&v| T::lit(v)).collect())
    }

    /// Grayscale replicated into three channels; RGB unchanged.
    pub fn to_rgb(&self) -> ImageTensor {
        if self.channels() == 3 {
            return self.clone();
        }
        let data = self.tensor.data().iter().flat_map(|&v| [v, v, v]).collect();
        ImageTensor {
            tensor: Tensor::from_parts(vec![self.height(), self.width(), 3], data),
        }
    }

    /// Rounds every value to the nearest code of the given bit depth.
    pub fn quantize(&self, depth: BitDepth) -> ImageTensor {
        let q = depth.max_code();
        ImageTensor {
            tensor: self.tensor.map(|v| (v * q).round() / q),
        }
    }
}

#[inline]
pub(crate) fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn image_err(path: &Path, reason: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Loads an 8- or 16-bit grayscale or RGB PNG, scaled to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path).map_err(|e| image_err(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| image_err(path, e))?;
    if reader.format() != Some(image::ImageFormat::Png) {
        return Err(image_err(path, "not a PNG file"));
    }
    let img = reader.decode().map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        other => {
            return Err(image_err(
                path,
                format!("unsupported pixel layout {:?} (expected 8/16-bit gray or RGB)", other.color()),
            ))
        }
    };
    ImageTensor::new(h, w, channels, data)
}

/// Loads a PNG and expands grayscale to RGB.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<ImageTensor> {
    load_image(path).map(|img| img.to_rgb())
}

/// Writes a PNG at the given bit depth; values are clamped and rounded.
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let q = depth.max_code();
    let codes = img.data().iter().map(move |&v| (clamp01(v) * q).round());
    let result = match (depth, img.channels()) {
        (BitDepth::Eight, 1) => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, codes.map(|v| v as u8).collect::<Vec<u8>>())
            .map(|b| b.save_with_format(path, image::ImageFormat::Png)),
        (BitDepth::Eight, _) => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, codes.map(|v| v as u8).collect::<Vec<u8>>())
            .map(|b| b.save_with_format(path, image::ImageFormat::Png)),
        (BitDepth::Sixteen, 1) => ImageBuffer::<Luma<u16>, _>::from_raw(w, h, codes.map(|v| v as u16).collect::<Vec<u16>>())
            .map(|b| b.save_with_format(path, image::ImageFormat::Png)),
        (BitDepth::Sixteen, _) => ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, codes.map(|v| v as u16).collect::<Vec<u16>>())
            .map(|b| b.save_with_format(path, image::ImageFormat::Png)),
    };
    match result {
        Some(Ok(())) => Ok(()),
        Some(Err(e)) => Err(image_err(path, e)),
        None => Err(image_err(path, "buffer size does not match dimensions")),
    }
}

/// Catmull-Rom cubic convolution kernel.
pub fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Four-tap interpolation weights for fractional offset `t ∈ [0, 1)` from
/// the left-center sample.
pub fn cubic_weights(t: f64) -> [f64; 4] {
    [cubic_kernel(t + 1.0), cubic_kernel(t), cubic_kernel(1.0 - t), cubic_kernel(2.0 - t)]
}

/// Per-output-index taps along one axis.
#[derive(Clone, Debug)]
pub(crate) struct AxisTaps {
    pub src_len: usize,
    pub idx: Vec<[usize; 4]>,
    pub weight: Vec<[f64; 4]>,
}

impl AxisTaps {
    pub fn new(src_len: usize, dst_len: usize) -> Self {
        let scale = src_len as f64 / dst_len as f64;
        let last = src_len as isize - 1;
        let mut idx = Vec::with_capacity(dst_len);
        let mut weight = Vec::with_capacity(dst_len);
        for i in 0..dst_len {
            let x = (i as f64 + 0.5) * scale - 0.5;
            let x0 = x.floor();
            let base = x0 as isize;
            idx.push(std::array::from_fn(|k| (base - 1 + k as isize).clamp(0, last) as usize));
            weight.push(cubic_weights(x - x0));
        }
        AxisTaps { src_len, idx, weight }
    }

    pub fn dst_len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_identity(&self) -> bool {
        self.src_len == self.dst_len()
    }
}

/// Interpolates a sampled 1D signal at continuous source coordinate `x`
/// (sample `i` sits at coordinate `i`), clamping indices at the borders.
pub fn cubic_sample_1d(values: &[f64], x: f64) -> f64 {
    let last = values.len() as isize - 1;
    let x0 = x.floor();
    let w = cubic_weights(x - x0);
    (0..4)
        .map(|k| values[(x0 as isize - 1 + k as isize).clamp(0, last) as usize] * w[k])
        .sum()
}

/// Resamples along axis 1 (rows) or axis 2 (cols) of an NHWC buffer.
fn resample_axis<T: Real>(src: &[T], shape: [usize; 4], axis: usize, taps: &AxisTaps) -> Vec<T> {
    let [n, h, w, c] = shape;
    let w4: Vec<[T; 4]> = taps.weight.iter().map(|ws| ws.map(T::lit)).collect();
    match axis {
        1 => {
            let oh = taps.dst_len();
            let row = w * c;
            let mut out = vec![T::zero(); n * oh * row];
            for b in 0..n {
                for (oy, (ix, ws)) in taps.idx.iter().zip(&w4).enumerate() {
                    let dst = &mut out[(b * oh + oy) * row..(b * oh + oy + 1) * row];
                    for k in 0..4 {
                        let s = &src[(b * h + ix[k]) * row..(b * h + ix[k] + 1) * row];
                        let wk = ws[k];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += wk * v;
                        }
                    }
                }
            }
            out
        }
        _ => {
            let ow = taps.dst_len();
            let mut out = vec![T::zero(); n * h * ow * c];
            for r in 0..n * h {
                for (ox, (ix, ws)) in taps.idx.iter().zip(&w4).enumerate() {
                    let dst = &mut out[(r * ow + ox) * c..(r * ow + ox + 1) * c];
                    for k in 0..4 {
                        let s = &src[(r * w + ix[k]) * c..(r * w + ix[k] + 1) * c];
                        let wk = ws[k];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += wk * v;
                        }
                    }
                }
            }
            out
        }
    }
}

/// Adjoint of [`resample_axis`].
fn resample_axis_adjoint<T: Real>(grad: &[T], src_shape: [usize; 4], axis: usize, taps: &AxisTaps) -> Vec<T> {
    let [n, h, w, c] = src_shape;
    let w4: Vec<[T; 4]> = taps.weight.iter().map(|ws| ws.map(T::lit)).collect();
    let mut out = vec![T::zero(); n * h * w * c];
    match axis {
        1 => {
            let oh = taps.dst_len();
            let row = w * c;
            for b in 0..n {
                for (oy, (ix, ws)) in taps.idx.iter().zip(&w4).enumerate() {
                    let g = &grad[(b * oh + oy) * row..(b * oh + oy + 1) * row];
                    for k in 0..4 {
                        let d = &mut out[(b * h + ix[k]) * row..(b * h + ix[k] + 1) * row];
                        let wk = ws[k];
                        for (o, &v) in d.iter_mut().zip(g) {
                            *o += wk * v;
                        }
                    }
                }
            }
        }
        _ => {
            let ow = taps.dst_len();
            for r in 0..n * h {
                for (ox, (ix, ws)) in taps.idx.iter().zip(&w4).enumerate() {
                    let g = &grad[(r * ow + ox) * c..(r * ow + ox + 1) * c];
                    for k in 0..4 {
                        let d = &mut out[(r * w + ix[k]) * c..(r * w + ix[k] + 1) * c];
                        let wk = ws[k];
                        for (o, &v) in d.iter_mut().zip(g) {
                            *o += wk * v;
                        }
                    }
                }
            }
        }
    }
    out
}

fn check_target(op: &'static str, target: (usize, usize)) -> Result<()> {
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::invalid(op, format!("target size {}x{} must be positive", target.0, target.1)));
    }
    Ok(())
}

/// Linear bicubic resampling of an NHWC tensor; no clamping.
pub fn resample_tensor<T: Real>(x: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    check_target("resample", target)?;
    let (n, h, w, c) = x.nhwc()?;
    if (h, w) == target {
        return Ok(x.clone());
    }
    let (th, tw) = target;
    let rows = AxisTaps::new(h, th);
    let cols = AxisTaps::new(w, tw);
    let mid = if rows.is_identity() {
        x.data().to_vec()
    } else {
        resample_axis(x.data(), [n, h, w, c], 1, &rows)
    };
    let out = if cols.is_identity() {
        mid
    } else {
        resample_axis(&mid, [n, th, w, c], 2, &cols)
    };
    Ok(Tensor::from_parts(vec![n, th, tw, c], out))
}

/// Differentiable bicubic resampling of an NHWC graph value; no clamping.
pub fn resample_var<T: Real>(x: &Var<T>, target: (usize, usize)) -> Result<Var<T>> {
    let value = resample_tensor(x.value(), target)?;
    let (n, h, w, c) = x.value().nhwc()?;
    let (th, tw) = target;
    Ok(Var::from_op(
        "resample",
        value,
        vec![x.clone()],
        Box::new(move |g, _, _| {
            if (h, w) == (th, tw) {
                return vec![Some(g.clone())];
            }
            let rows = AxisTaps::new(h, th);
            let cols = AxisTaps::new(w, tw);
            let mid = if cols.is_identity() {
                g.data().to_vec()
            } else {
                resample_axis_adjoint(g.data(), [n, th, w, c], 2, &cols)
            };
            let dx = if rows.is_identity() {
                mid
            } else {
                resample_axis_adjoint(&mid, [n, h, w, c], 1, &rows)
            };
            vec![Some(Tensor::from_parts(vec![n, h, w, c], dx))]
        }),
    ))
}

/// Resamples an image to `target = (H, W)`, clamping the result to `[0, 1]`.
///
/// Same-size requests return an exact copy.
pub fn resample(x: &ImageTensor, target: (usize, usize)) -> Result<ImageTensor> {
    check_target("resample", target)?;
    if x.dims() == target {
        return Ok(x.clone());
    }
    let out = resample_tensor(&x.to_batch::<f64>(), target)?;
    ImageTensor::from_batch(&out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_input, DEFAULT_STEP};

    fn gradient_image(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, 3, |y, x, c| 0.1 + 0.6 * (y as f64 + 0.5) / h as f64 + 0.2 * (x as f64 + 0.5) / w as f64 + 0.02 * c as f64).unwrap()
    }

    #[test]
    fn kernel_weights_at_midpoint() {
        let w = cubic_weights(0.5);
        assert_eq!(w, [-0.0625, 0.5625, 0.5625, -0.0625]);
        assert_eq!(cubic_sample_1d(&[0.0, 1.0], 0.5), 0.5);
        assert_eq!(cubic_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_resample_is_bit_exact() {
        let img = ImageTensor::from_fn(9, 13, 3, |y, x, c| ((y * 31 + x * 7 + c) % 17) as f64 / 16.0).unwrap();
        assert_eq!(resample(&img, (9, 13)).unwrap(), img);
        let t = img.to_batch::<f64>();
        assert_eq!(resample_tensor(&t, (9, 13)).unwrap(), t);
    }

    #[test]
    fn constants_survive_any_target() {
        let img = ImageTensor::constant(10, 14, 3, 0.3).unwrap();
        for target in [(1, 1), (5, 7), (10, 30), (33, 14), (64, 3)] {
            let out = resample_tensor(&img.to_batch::<f64>(), target).unwrap();
            assert_eq!(out.shape(), &[1, target.0, target.1, 3]);
            assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-12), "{target:?}");
        }
    }

    #[test]
    fn linear_gradient_survives_down_then_up_in_interior() {
        let img = gradient_image(48, 40);
        let small = resample(&img, (24, 20)).unwrap();
        let back = resample(&small, (48, 40)).unwrap();
        let mut worst: f64 = 0.0;
        for y in 6..42 {
            for x in 6..34 {
                for c in 0..3 {
                    worst = worst.max((back.get(y, x, c) - img.get(y, x, c)).abs());
                }
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn non_positive_target_is_rejected() {
        let img = ImageTensor::constant(8, 8, 3, 0.5).unwrap();
        assert!(resample(&img, (0, 4)).is_err());
        assert!(resample(&img, (4, 0)).is_err());
    }

    #[test]
    fn resample_adjoint_matches_finite_differences() {
        let x = Tensor::from_fn([1, 5, 6, 2], |i| ((i * 37 % 11) as f64) / 11.0);
        let w = Var::constant(Tensor::from_fn([1, 8, 4, 2], |i| ((i * 13 % 7) as f64) - 3.0));
        let r = check_input(&x, DEFAULT_STEP, |v| Ok(resample_var(v, (8, 4))?.mul(&w)?.sum())).unwrap();
        assert!(r.max_rel_error < 1e-4, "{}", r.worst);
    }

    #[test]
    fn gray_png_loads_with_linear_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        image::GrayImage::from_raw(2, 2, vec![0, 128, 255, 64]).unwrap().save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
        let rgb = load_rgb(&path).unwrap();
        assert_eq!(rgb.channels(), 3);
        assert_eq!(rgb.get(0, 1, 2), 128.0 / 255.0);
    }

    #[test]
    fn save_load_round_trip_within_half_step() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::from_fn(11, 9, 3, |y, x, c| ((y * 11 + x) as f64 * 0.0137 + c as f64 * 0.31) % 1.0).unwrap();
        for (depth, tol) in [(BitDepth::Eight, 1.0 / 510.0), (BitDepth::Sixteen, 1.0 / 131070.0)] {
            let path = dir.path().join(format!("{depth:?}.png"));
            save_image(&img, &path, depth).unwrap();
            let back = load_image(&path).unwrap();
            let err = back.as_tensor().max_abs_diff(img.as_tensor()).unwrap();
            assert!(err <= tol + 1e-12, "{depth:?}: {err}");
            assert_eq!(back, img.quantize(depth));
        }
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_image("/nonexistent/dir/x.png").unwrap_err().to_string();
        assert!(err.contains("/nonexistent/dir/x.png"), "{err}");
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(ImageTensor::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageTensor::new(1, 1, 2, vec![0.5, 0.5]).is_err());
        assert_eq!(ImageTensor::from_unclamped(1, 2, 1, vec![-0.5, 2.0]).unwrap().data(), &[0.0, 1.0]);
    }
}

#[cfg(test)]
mod proptests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn round_trip_stays_in_unit_range(
            h in 8usize..24, w in 8usize..24, sh in 2usize..16, sw in 2usize..16, seed in 0u64..1000
        ) {
            let img = ImageTensor::from_fn(h, w, 3, |y, x, c| {
                (((y * 131 + x * 71 + c * 29) as u64 ^ seed) % 2) as f64
            }).unwrap();
            let back = resample(&resample(&img, (sh, sw)).unwrap(), (h, w)).unwrap();
            prop_assert_eq!(back.dims(), (h, w));
            prop_assert!(back.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
