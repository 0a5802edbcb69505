//! Single-level orthonormal 2D Haar transform.
//!
//! For each 2×2 block `(a b; c d)` and input channel `k`, output channels
//! `4k..4k+4` hold `LL, LH, HL, HH`:
//!
//! ```text
//! LL = (a + b + c + d) / 2    LH = (a - b + c - d) / 2
//! HL = (a + b - c - d) / 2    HH = (a - b - c + d) / 2
//! ```
//!
//! The block matrix is symmetric and orthogonal, so the inverse applies the
//! same butterfly and each transform is the other's adjoint.

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::tensor::{Real, Tensor, Var};

pub const SUBBANDS: usize = 4;

#[inline]
fn butterfly<T: Real>(a: T, b: T, c: T, d: T) -> [T; 4] {
    let half = T::lit(0.5);
    [
        (a + b + c + d) * half,
        (a - b + c - d) * half,
        (a + b - c - d) * half,
        (a - b - c + d) * half,
    ]
}

/// `[N, H, W, C] → [N, H/2, W/2, 4C]`.
pub fn dwt2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = x.nhwc()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid("dwt2", format!("spatial dims must be even, got {h}x{w}")));
    }
    let (oh, ow, oc) = (h / 2, w / 2, 4 * c);
    let src = x.data();
    let mut out = vec![T::zero(); n * oh * ow * oc];
    let at = |b: usize, y: usize, xx: usize, k: usize| src[((b * h + y) * w + xx) * c + k];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let base = ((b * oh + i) * ow + j) * oc;
                for k in 0..c {
                    let bands = butterfly(
                        at(b, 2 * i, 2 * j, k),
                        at(b, 2 * i, 2 * j + 1, k),
                        at(b, 2 * i + 1, 2 * j, k),
                        at(b, 2 * i + 1, 2 * j + 1, k),
                    );
                    out[base + 4 * k..base + 4 * k + 4].copy_from_slice(&bands);
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, oh, ow, oc], out))
}

/// `[N, H, W, 4C] → [N, 2H, 2W, C]`, exact inverse of [`dwt2`].
pub fn iwt2<T: Real>(f: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, fc) = f.nhwc()?;
    if fc % SUBBANDS != 0 {
        return Err(Error::invalid("iwt2", format!("channel count {fc} is not a multiple of 4")));
    }
    let c = fc / SUBBANDS;
    let (oh, ow) = (2 * h, 2 * w);
    let src = f.data();
    let mut out = vec![T::zero(); n * oh * ow * c];
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let base = ((b * h + i) * w + j) * fc;
                for k in 0..c {
                    let s = &src[base + 4 * k..base + 4 * k + 4];
                    let [a, bb, cc, d] = butterfly(s[0], s[1], s[2], s[3]);
                    let px = |y: usize, x: usize| ((b * oh + y) * ow + x) * c + k;
                    out[px(2 * i, 2 * j)] = a;
                    out[px(2 * i, 2 * j + 1)] = bb;
                    out[px(2 * i + 1, 2 * j)] = cc;
                    out[px(2 * i + 1, 2 * j + 1)] = d;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, oh, ow, c], out))
}

/// DWT of an image as a `[1, H/2, W/2, 4C]` tensor.
pub fn dwt2_image(img: &ImageTensor) -> Result<Tensor<f64>> {
    dwt2(&img.to_batch::<f64>())
}

pub fn dwt2_var<T: Real>(x: &Var<T>) -> Result<Var<T>> {
    let value = dwt2(x.value())?;
    Ok(Var::from_op(
        "dwt2",
        value,
        vec![x.clone()],
        Box::new(|g, _, _| vec![Some(iwt2(g).expect("dwt2 grad has valid shape"))]),
    ))
}

pub fn iwt2_var<T: Real>(f: &Var<T>) -> Result<Var<T>> {
    let value = iwt2(f.value())?;
    Ok(Var::from_op(
        "iwt2",
        value,
        vec![f.clone()],
        Box::new(|g, _, _| vec![Some(dwt2(g).expect("iwt2 grad has valid shape"))]),
    ))
}
