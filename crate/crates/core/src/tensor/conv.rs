use std::fmt;
use std::str::FromStr;

use super::{gemm, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Border handling for stride-1 "same" convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Padding {
    #[default]
    Zero,
    Reflect,
}

impl fmt::Display for Padding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Padding::Zero => "zero",
            Padding::Reflect => "reflect",
        })
    }
}

impl FromStr for Padding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "zero" => Ok(Padding::Zero),
            "reflect" => Ok(Padding::Reflect),
            other => Err(format!("unknown padding `{other}` (expected zero|reflect)")),
        }
    }
}

#[inline]
fn source_index(i: isize, len: usize, padding: Padding) -> Option<usize> {
    let n = len as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflect => {
            let r = if i < 0 { -i } else { 2 * (n - 1) - i };
            (0..n).contains(&r).then_some(r as usize)
        }
    }
}

struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    padding: Padding,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.n * self.h * self.w
    }

    fn cols(&self) -> usize {
        self.k * self.k * self.c
    }

    /// Patch matrix `[N·H·W, K·K·C]` with columns ordered (ky, kx, c).
    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let Self { n, h, w, c, k, padding } = *self;
        let r = (k / 2) as isize;
        let cols = self.cols();
        let mut out = vec![T::zero(); self.rows() * cols];
        for b in 0..n {
            for oy in 0..h {
                for ox in 0..w {
                    let row = ((b * h + oy) * w + ox) * cols;
                    for ky in 0..k {
                        let Some(iy) = source_index(oy as isize + ky as isize - r, h, padding) else {
                            continue;
                        };
                        for kx in 0..k {
                            let Some(ix) = source_index(ox as isize + kx as isize - r, w, padding)
                            else {
                                continue;
                            };
                            let src = ((b * h + iy) * w + ix) * c;
                            let dst = row + (ky * k + kx) * c;
                            out[dst..dst + c].copy_from_slice(&x[src..src + c]);
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of `im2col`: scatter-adds patch gradients back onto the input grid.
    fn col2im<T: Real>(&self, cols_grad: &[T]) -> Vec<T> {
        let Self { n, h, w, c, k, padding } = *self;
        let r = (k / 2) as isize;
        let cols = self.cols();
        let mut out = vec![T::zero(); n * h * w * c];
        for b in 0..n {
            for oy in 0..h {
                for ox in 0..w {
                    let row = ((b * h + oy) * w + ox) * cols;
                    for ky in 0..k {
                        let Some(iy) = source_index(oy as isize + ky as isize - r, h, padding) else {
                            continue;
                        };
                        for kx in 0..k {
                            let Some(ix) = source_index(ox as isize + kx as isize - r, w, padding)
                            else {
                                continue;
                            };
                            let dst = ((b * h + iy) * w + ix) * c;
                            let src = row + (ky * k + kx) * c;
                            for (o, &g) in out[dst..dst + c].iter_mut().zip(&cols_grad[src..src + c]) {
                                *o += g;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

impl<T: Real> Var<T> {
    /// Stride-1 "same" 2D convolution over NHWC input.
    ///
    /// `weight` is `[K, K, C_in, C_out]` with odd `K`; `bias` is `[C_out]`.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, padding: Padding) -> Result<Var<T>> {
        let (n, h, w, c) = self.value().nhwc().map_err(|_| Error::shape("conv2d", self.shape(), weight.shape()))?;
        let (k, cin, cout) = match weight.shape() {
            &[k1, k2, cin, cout] if k1 == k2 && k1 % 2 == 1 => (k1, cin, cout),
            _ => {
                return Err(Error::invalid(
                    "conv2d",
                    format!("kernel must be [K, K, C_in, C_out] with odd K, got {:?}", weight.shape()),
                ))
            }
        };
        if cin != c {
            return Err(Error::shape("conv2d", self.shape(), weight.shape()));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::shape("conv2d bias", b.shape(), &[cout]));
            }
        }
        if padding == Padding::Reflect && (h <= k / 2 || w <= k / 2) {
            return Err(Error::invalid(
                "conv2d",
                format!("reflect padding needs spatial dims > {}, got {h}x{w}", k / 2),
            ));
        }

        let geom = ConvGeom { n, h, w, c, k, padding };
        let x = self.value().data();
        let patches;
        let lhs: &[T] = if k == 1 {
            x
        } else {
            patches = geom.im2col(x);
            &patches
        };
        let rows = geom.rows();
        let mut out = vec![T::zero(); rows * cout];
        gemm(rows, geom.cols(), cout, lhs, false, weight.value().data(), false, &mut out, false);
        if let Some(b) = bias {
            let bd = b.value().data();
            for row in out.chunks_exact_mut(cout) {
                for (o, &bv) in row.iter_mut().zip(bd) {
                    *o += bv;
                }
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Var::from_op(
            "conv2d",
            Tensor::from_parts(vec![n, h, w, cout], out),
            parents,
            Box::new(move |g, _out, parents| {
                let geom = ConvGeom { n, h, w, c, k, padding };
                let (rows, cols) = (geom.rows(), geom.cols());
                let gd = g.data();
                let x = &parents[0];
                let wt = &parents[1];
                let need_x = x.requires_grad();
                let need_w = wt.requires_grad() || parents.get(2).is_some_and(Var::requires_grad);

                let patches = (need_w && k != 1).then(|| geom.im2col(x.value().data()));
                let lhs: &[T] = patches.as_deref().unwrap_or(x.value().data());

                let dx = need_x.then(|| {
                    let mut dcols = vec![T::zero(); rows * cols];
                    gemm(rows, cout, cols, gd, false, wt.value().data(), true, &mut dcols, false);
                    let dx = if k == 1 { dcols } else { geom.col2im(&dcols) };
                    Tensor::from_parts(x.shape().to_vec(), dx)
                });
                let dw = wt.requires_grad().then(|| {
                    let mut dw = vec![T::zero(); cols * cout];
                    gemm(cols, rows, cout, lhs, true, gd, false, &mut dw, false);
                    Tensor::from_parts(wt.shape().to_vec(), dw)
                });
                let mut grads = vec![dx, dw];
                if parents.len() == 3 {
                    let db = parents[2].requires_grad().then(|| {
                        let mut db = vec![T::zero(); cout];
                        for row in gd.chunks_exact(cout) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        Tensor::from_parts(vec![cout], db)
                    });
                    grads.push(db);
                }
                grads
            }),
        ))
    }
}
