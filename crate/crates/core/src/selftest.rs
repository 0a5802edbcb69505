//! No-training property suite behind `ardis selftest`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fda::decompose;
use crate::ihn::{Ihn, IhnLayout};
use crate::imaging::ImageTensor;
use crate::irc::{decode_map, encode_map, quantize_resolution};
use crate::lgir::ensemble_weights;
use crate::metrics::{psnr, psnr_from_mse, rre, ssim};
use crate::tensor::{Binder, Padding, ParamStore, Real, Tensor, Var};
use crate::wavelet::{dwt2, iwt2};

/// Outcome of one property.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Property = fn() -> Result<String, String>;

pub const PROPERTIES: [(&str, Property); 7] = [
    ("dwt_round_trip", dwt_round_trip),
    ("ihn_invertibility", ihn_invertibility),
    ("fda_identity", fda_identity),
    ("lgir_weight_normalization", lgir_weights),
    ("irc_round_trip", irc_round_trip),
    ("irc_noise_monte_carlo", irc_noise),
    ("metric_sanity", metric_sanity),
];

/// Runs every property in order; errors inside a property count as failures.
pub fn run_all(mut each: impl FnMut(&Check)) -> Vec<Check> {
    PROPERTIES
        .iter()
        .map(|&(name, prop)| {
            let start = Instant::now();
            let (passed, detail) = match prop() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            let check = Check {
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            };
            each(&check);
            check
        })
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-1.0..1.0)))
}

fn dwt_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w, c) = (2 * rng.random_range(1..=32), 2 * rng.random_range(1..=32), rng.random_range(1..=3));
        let x = random::<f64>(&[1, h, w, c], &mut rng);
        let f = dwt2(&x).map_err(|e| e.to_string())?;
        worst = worst.max(iwt2(&f).map_err(|e| e.to_string())?.max_abs_diff(&x).map_err(|e| e.to_string())?);
        let g = random::<f64>(&[1, h / 2, w / 2, 4 * c], &mut rng);
        worst = worst.max(dwt2(&iwt2(&g).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?.max_abs_diff(&g).map_err(|e| e.to_string())?);
        worst = worst.max((f.sum_squares() - x.sum_squares()).abs());
    }
    ensure(worst < 1e-10, || format!("max error {worst:e}"))?;
    Ok(format!("max error {worst:.1e}"))
}

fn ihn_round_trip<T: Real>(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<T>::new();
    let layout = IhnLayout {
        cover_channels: 12,
        payload_channels: 9,
        hidden: 8,
        blocks: 8,
        padding: Padding::Zero,
    };
    let ihn = Ihn::new(&mut store, "ihn", layout, &mut rng);
    store.randomize(seed, 0.1);
    let b = Binder::inference(&store);
    let x1 = Var::constant(random::<T>(&[1, 6, 6, 12], &mut rng));
    let x2 = Var::constant(random::<T>(&[1, 6, 6, 9], &mut rng));
    let (s, n) = ihn.hide(&b, &x1, &x2).map_err(|e| e.to_string())?;
    let (c, p) = ihn.reveal(&b, &s, &n).map_err(|e| e.to_string())?;
    let e1 = c.value().max_abs_diff(x1.value()).map_err(|e| e.to_string())?;
    let e2 = p.value().max_abs_diff(x2.value()).map_err(|e| e.to_string())?;
    Ok(e1.max(e2))
}

fn ihn_invertibility() -> Result<String, String> {
    let (mut e32, mut e64) = (0.0f64, 0.0f64);
    for seed in 0..5 {
        e32 = e32.max(ihn_round_trip::<f32>(seed)?);
        e64 = e64.max(ihn_round_trip::<f64>(seed)?);
    }
    ensure(e32 < 1e-4 && e64 < 1e-10, || format!("f32 {e32:e}, f64 {e64:e}"))?;
    Ok(format!("f32 {e32:.1e}, f64 {e64:.1e}"))
}

fn fda_identity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for &(h, w) in &[(64, 64), (96, 128), (200, 200), (256, 64), (31, 17)] {
        let img = ImageTensor::new(h, w, 3, (0..h * w * 3).map(|_| rng.random_range(0.0..1.0)).collect()).map_err(|e| e.to_string())?;
        let d = decompose(&img, (64, 64)).map_err(|e| e.to_string())?;
        let back = d.reconstruct().map_err(|e| e.to_string())?;
        worst = worst.max(back.max_abs_diff(&img.to_batch::<f64>()).map_err(|e| e.to_string())?);
    }
    ensure(worst < 1e-12, || format!("max error {worst:e}"))?;
    Ok(format!("max error {worst:.1e}"))
}

fn lgir_weights() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let grid = (rng.random_range(1..=64), rng.random_range(1..=64));
        let q = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        let n = ensemble_weights(q, grid);
        ensure(n.iter().all(|t| (0.0..=1.0).contains(&t.weight)), || format!("weight out of [0, 1] at {q:?}"))?;
        worst = worst.max((n.iter().map(|t| t.weight).sum::<f64>() - 1.0).abs());
    }
    ensure(worst < 1e-12, || format!("sum error {worst:e}"))?;
    Ok(format!("sum error {worst:.1e}"))
}

fn irc_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut dims: Vec<(usize, usize)> = [1, 225, 256, 512, 720, 1024, 3452, 65535].iter().map(|&v| (v, v)).collect();
    dims.extend((0..192).map(|_| (rng.random_range(1..=65535), rng.random_range(1..=65535))));
    for &(h, w) in &dims {
        let word = quantize_resolution(h, w, 32).map_err(|e| e.to_string())?;
        let map = encode_map(&word, (32, 32)).map_err(|e| e.to_string())?;
        let got = decode_map(map.data(), (32, 32), 32).map_err(|e| e.to_string())?.dims();
        ensure(got == (h, w), || format!("{h}x{w} decoded as {}x{}", got.0, got.1))?;
    }
    Ok(format!("{} sizes exact", dims.len()))
}

fn irc_noise() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..1000 {
        let (h, w) = (rng.random_range(1..=65535), rng.random_range(1..=65535));
        let word = quantize_resolution(h, w, 32).map_err(|e| e.to_string())?;
        let mut map = encode_map(&word, (32, 128)).map_err(|e| e.to_string())?;
        for v in map.data_mut() {
            *v += rng.random_range(-0.9..=0.9);
        }
        let got = decode_map(map.data(), (32, 128), 32).map_err(|e| e.to_string())?.dims();
        ensure(got == (h, w), || format!("trial {trial}: {h}x{w} decoded as {}x{}", got.0, got.1))?;
    }
    Ok("1000/1000 exact under uniform noise 0.9".into())
}

fn metric_sanity() -> Result<String, String> {
    let err = |e: crate::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = ImageTensor::new(24, 24, 3, (0..24 * 24 * 3).map(|_| rng.random_range(0.0..1.0)).collect()).map_err(err)?;
    let flat = ImageTensor::constant(24, 24, 3, 0.5).map_err(err)?;
    let shifted = ImageTensor::constant(24, 24, 3, 0.6).map_err(err)?;
    ensure(psnr(&a, &a).map_err(err)? == 100.0, || "psnr of identical images is not capped".into())?;
    ensure((psnr(&flat, &shifted).map_err(err)? - 20.0).abs() < 1e-9, || "psnr at mse 0.01 is not 20 dB".into())?;
    ensure((psnr_from_mse(1e-4) - 40.0).abs() < 1e-12, || "psnr at mse 1e-4 is not 40 dB".into())?;
    ensure((ssim(&a, &a).map_err(err)? - 1.0).abs() < 1e-12, || "ssim of identical images is not 1".into())?;
    ensure(ssim(&a, &flat).map_err(err)? < 0.1, || "ssim of noise vs flat is not small".into())?;
    ensure(rre((256, 256), (256, 256)).map_err(err)? == 0.0, || "rre of exact dims is not 0".into())?;
    ensure((rre((256, 256), (512, 512)).map_err(err)? - 50.0).abs() < 1e-12, || "rre of half dims is not 50%".into())?;
    Ok("psnr, ssim, rre".into())
}
