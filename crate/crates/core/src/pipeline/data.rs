//! Dataset loading, synthetic images and per-step sampling.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{load_rgb, resample, ImageTensor};

/// Sorted `*.png` files directly inside `dir`.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("reading directory {}", dir.display()), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("reading directory {}", dir.display()), e))?.path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every PNG in `dir` as RGB, sorted by file name.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<(String, ImageTensor)>> {
    let dir = dir.as_ref();
    let files = list_pngs(dir)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!("no PNG images in {}", dir.display())));
    }
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, load_rgb(&p)?))
        })
        .collect()
}

/// Smooth seeded RGB pattern: a colour ramp plus a few random plane waves.
pub fn synthetic_image(height: usize, width: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_1A6E);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
    let ramp: [(f64, f64); 3] = std::array::from_fn(|_| (rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)));
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            let amp = std::array::from_fn(|_| rng.random_range(-0.08..0.08));
            (rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0), rng.random_range(0.0..6.3), amp)
        })
        .collect();
    ImageTensor::from_fn(height, width, 3, |y, x, c| {
        let (fy, fx) = ((y as f64 + 0.5) / height as f64, (x as f64 + 0.5) / width as f64);
        let mut v = base[c] + ramp[c].0 * (fy - 0.5) + ramp[c].1 * (fx - 0.5);
        for (ky, kx, phase, amp) in &waves {
            v += amp[c] * (ky * fy + kx * fx + phase).sin();
        }
        v.clamp(0.0, 1.0)
    })
    .expect("valid synthetic dims")
}

/// Random crop of exactly `dims` when the image is large enough in both
/// axes, otherwise a resize.
pub fn sample_cover(img: &ImageTensor, dims: (usize, usize), rng: &mut impl Rng) -> Result<ImageTensor> {
    let (h, w) = img.dims();
    if h >= dims.0 && w >= dims.1 {
        crop(img, rng.random_range(0..=h - dims.0), rng.random_range(0..=w - dims.1), dims)
    } else {
        resample(img, dims)
    }
}

/// Secret at `cover_dims` scaled by factors drawn from `[min, max]` per axis:
/// a random crop (up to the target size) resampled to the target.
pub fn sample_secret(
    img: &ImageTensor,
    cover_dims: (usize, usize),
    scale: (f64, f64),
    rng: &mut impl Rng,
) -> Result<ImageTensor> {
    let draw = |rng: &mut dyn rand::RngCore| if scale.1 > scale.0 { rng.random_range(scale.0..=scale.1) } else { scale.0 };
    let sy = draw(rng);
    let sx = draw(rng);
    let target = (
        ((cover_dims.0 as f64 * sy).round() as usize).max(1),
        ((cover_dims.1 as f64 * sx).round() as usize).max(1),
    );
    let (h, w) = img.dims();
    let win = (h.min(target.0), w.min(target.1));
    let patch = crop(img, rng.random_range(0..=h - win.0), rng.random_range(0..=w - win.1), win)?;
    resample(&patch, target)
}

fn crop(img: &ImageTensor, y0: usize, x0: usize, dims: (usize, usize)) -> Result<ImageTensor> {
    ImageTensor::from_fn(dims.0, dims.1, img.channels(), |y, x, c| img.get(y0 + y, x0 + x, c))
}
