//! Latent-guided implicit reconstruction.
//!
//! Two conv encoders turn the recovered basis and detail latent into a
//! feature grid on the cover lattice. An MLP decodes a residual colour at any
//! continuous coordinate from the four surrounding feature vectors, their
//! offsets to the query and the target pixel footprint; the four decodings
//! are blended with area weights and added to the bicubically resampled basis.

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::{resample_var, ImageTensor};
use crate::nn::{ConvStack, Init, Mlp};
use crate::tensor::{Binder, Padding, ParamStore, Real, Tensor, Var};

/// Target pixels decoded per batch when rendering a full image.
pub const RENDER_CHUNK: usize = 16384;

/// Fractional offsets this close to a lattice point snap onto it.
const SNAP: f64 = 1e-9;

/// Centre of cell `i` of `n` in `[-1, 1]`.
pub fn cell_center(i: usize, n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / n as f64
}

/// Per-axis pixel footprint of the render target, in `[-1, 1]` units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellDecoding {
    pub cell: (f64, f64),
    pub scale: (f64, f64),
}

impl CellDecoding {
    /// `c = 2 / (r·H_sec)` per axis with `r = H_sec / H_grid`, capped at 2.
    pub fn new(target: (usize, usize), grid: (usize, usize)) -> Self {
        let axis = |t: usize, g: usize| {
            let r = t as f64 / g as f64;
            (r, (2.0 / (r * t as f64)).min(2.0))
        };
        let (ry, cy) = axis(target.0, grid.0);
        let (rx, cx) = axis(target.1, grid.1);
        CellDecoding {
            cell: (cy, cx),
            scale: (ry, rx),
        }
    }
}

/// One of the four latents blended for a query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: (usize, usize),
    pub center: (f64, f64),
    pub weight: f64,
}

/// Lower/upper lattice index along one axis (clamped) and the weight of each.
fn axis_pair(q: f64, n: usize) -> [(usize, f64); 2] {
    let p = (q.clamp(-1.0, 1.0) + 1.0) * 0.5 * n as f64 - 0.5;
    let mut lo = p.floor();
    let mut t = p - lo;
    if t < SNAP {
        t = 0.0;
    } else if t > 1.0 - SNAP {
        lo += 1.0;
        t = 0.0;
    }
    let last = n as f64 - 1.0;
    let idx = |v: f64| v.clamp(0.0, last) as usize;
    [(idx(lo), 1.0 - t), (idx(lo + 1.0), t)]
}

/// The four latents around `q` in order 00, 01, 10, 11 (row, column).
///
/// Each weight is the area of the rectangle spanned by `q` and the diagonally
/// opposite latent, normalized over the four; indices past the border are
/// clamped onto the edge latents.
pub fn ensemble_weights(q: (f64, f64), grid: (usize, usize)) -> [Neighbor; 4] {
    let ys = axis_pair(q.0, grid.0);
    let xs = axis_pair(q.1, grid.1);
    std::array::from_fn(|t| {
        let (iy, wy) = ys[t / 2];
        let (ix, wx) = xs[t % 2];
        Neighbor {
            index: (iy, ix),
            center: (cell_center(iy, grid.0), cell_center(ix, grid.1)),
            weight: wy * wx,
        }
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LgirLayout {
    pub image_channels: usize,
    pub latent_channels: usize,
    /// Output width of each encoder; the grid has twice this many channels.
    pub feature_channels: usize,
    pub mlp_hidden: Vec<usize>,
    pub padding: Padding,
}

/// Feature grid `[1, Hg, Wg, D]` on the cover lattice.
#[derive(Clone)]
pub struct LatentGrid<T: Real> {
    pub features: Var<T>,
}

impl<T: Real> LatentGrid<T> {
    pub fn dims(&self) -> (usize, usize) {
        let s = self.features.shape();
        (s[1], s[2])
    }

    pub fn depth(&self) -> usize {
        self.features.shape()[3]
    }
}

#[derive(Clone, Debug)]
pub struct Lgir {
    pub layout: LgirLayout,
    pub basis_encoder: ConvStack,
    pub detail_encoder: ConvStack,
    pub decoder: Mlp,
}

impl Lgir {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, layout: LgirLayout, rng: &mut impl Rng) -> Self {
        let f = layout.feature_channels;
        let basis_encoder =
            ConvStack::new(store, &format!("{name}.enc_g"), &[3, 3, 3], &[layout.image_channels, f, f, f], Init::He, rng);
        let detail_encoder =
            ConvStack::new(store, &format!("{name}.enc_d"), &[3, 3, 3], &[layout.latent_channels, f, f, f], Init::He, rng);
        let mut widths = vec![2 * f + 4];
        widths.extend(&layout.mlp_hidden);
        widths.push(layout.image_channels);
        let decoder = Mlp::new(store, &format!("{name}.mlp"), &widths, Init::Zero, rng);
        Lgir {
            layout,
            basis_encoder,
            detail_encoder,
            decoder,
        }
    }

    /// Concatenates the two encoders' features along channels.
    pub fn build_latent<T: Real>(&self, b: &Binder<T>, basis: &Var<T>, detail: &Var<T>) -> Result<LatentGrid<T>> {
        let (bs, ds) = (basis.shape(), detail.shape());
        if bs.len() != 4 || ds.len() != 4 || bs[..3] != ds[..3] {
            return Err(Error::shape("build_latent", bs, ds));
        }
        let g = self.basis_encoder.forward(b, basis, self.layout.padding)?;
        let d = self.detail_encoder.forward(b, detail, self.layout.padding)?;
        Ok(LatentGrid {
            features: Var::concat_last(&[&g, &d])?,
        })
    }

    /// Decoder input for one latent: `[z, δ·grid, c·grid]`.
    pub fn decode_single<T: Real>(&self, b: &Binder<T>, z: &Var<T>, delta: (f64, f64), cell: (f64, f64)) -> Result<Var<T>> {
        let extra = Tensor::new([1, 4], [delta.0, delta.1, cell.0, cell.1].map(T::lit).to_vec())?;
        self.decoder.forward(b, &Var::concat_last(&[z, &Var::constant(extra)])?)
    }

    /// Blended residual at each coordinate: `[P, C]`.
    pub fn decode_coords<T: Real>(
        &self,
        b: &Binder<T>,
        grid: &LatentGrid<T>,
        coords: &[(f64, f64)],
        cell: &CellDecoding,
    ) -> Result<Var<T>> {
        if coords.is_empty() {
            return Err(Error::invalid("decode_coords", "no query coordinates"));
        }
        let (gh, gw) = grid.dims();
        let (gy, gx) = (gh as f64, gw as f64);
        let p = coords.len();
        let mut rows = vec![0usize; 4 * p];
        let mut weights = vec![T::zero(); 4 * p];
        let mut extra = vec![T::zero(); 4 * p * 4];
        let cell_feat = [T::lit(cell.cell.0 * gy), T::lit(cell.cell.1 * gx)];
        for (i, &q) in coords.iter().enumerate() {
            for (t, nb) in ensemble_weights(q, (gh, gw)).iter().enumerate() {
                let r = t * p + i;
                rows[r] = nb.index.0 * gw + nb.index.1;
                weights[r] = T::lit(nb.weight);
                let e = &mut extra[4 * r..4 * r + 4];
                e[0] = T::lit((q.0 - nb.center.0) * gy);
                e[1] = T::lit((q.1 - nb.center.1) * gx);
                e[2] = cell_feat[0];
                e[3] = cell_feat[1];
            }
        }
        let flat = grid.features.reshape([gh * gw, grid.depth()])?;
        let z = flat.gather_rows(&rows)?;
        let extra = Var::constant(Tensor::from_parts(vec![4 * p, 4], extra));
        let out = self.decoder.forward(b, &Var::concat_last(&[&z, &extra])?)?;
        out.scale_rows(&weights)?.sum_blocks(4)
    }

    /// Residual prediction at one coordinate, `[C]`.
    pub fn query<T: Real>(&self, b: &Binder<T>, grid: &LatentGrid<T>, q: (f64, f64), cell: &CellDecoding) -> Result<Tensor<T>> {
        let v = self.decode_coords(b, grid, &[q], cell)?;
        Tensor::new([self.layout.image_channels], v.value().data().to_vec())
    }

    /// Unclamped render at the given flat pixel indices of `target`: `[P, C]`.
    pub fn render_pixels<T: Real>(
        &self,
        b: &Binder<T>,
        grid: &LatentGrid<T>,
        basis: &Var<T>,
        target: (usize, usize),
        pixels: &[usize],
    ) -> Result<Var<T>> {
        let (h, w) = target;
        if let Some(&bad) = pixels.iter().find(|&&i| i >= h * w) {
            return Err(Error::invalid("render", format!("pixel {bad} outside {h}x{w} target")));
        }
        let cell = CellDecoding::new(target, grid.dims());
        let coords: Vec<_> = pixels.iter().map(|&i| (cell_center(i / w, h), cell_center(i % w, w))).collect();
        let residual = self.decode_coords(b, grid, &coords, &cell)?;
        let c = self.layout.image_channels;
        let base = resample_var(basis, target)?.reshape([h * w, c])?.gather_rows(pixels)?;
        base.add(&residual)
    }

    /// Renders the full target in chunks and clamps to `[0, 1]`.
    pub fn render<T: Real>(&self, b: &Binder<T>, grid: &LatentGrid<T>, basis: &Var<T>, target: (usize, usize)) -> Result<ImageTensor> {
        let (h, w) = target;
        if h == 0 || w == 0 {
            return Err(Error::invalid("render", format!("target size {h}x{w} must be positive")));
        }
        let c = self.layout.image_channels;
        let cell = CellDecoding::new(target, grid.dims());
        let base = resample_var(basis, target)?;
        let mut data = Vec::with_capacity(h * w * c);
        let all: Vec<usize> = (0..h * w).collect();
        for chunk in all.chunks(RENDER_CHUNK) {
            let coords: Vec<_> = chunk.iter().map(|&i| (cell_center(i / w, h), cell_center(i % w, w))).collect();
            let res = self.decode_coords(b, grid, &coords, &cell)?;
            let base_rows = &base.value().data()[chunk[0] * c..(chunk[0] + chunk.len()) * c];
            data.extend(res.value().data().iter().zip(base_rows).map(|(&r, &v)| (r + v).as_f64()));
        }
        ImageTensor::from_unclamped(h, w, c, data)
    }
}
