//! PSNR, SSIM and relative resolution error, plus the CSV report writer.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_dims(op: &'static str, a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.as_tensor().shape() != b.as_tensor().shape() {
        return Err(Error::shape(op, a.as_tensor().shape(), b.as_tensor().shape()));
    }
    Ok(())
}

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    same_dims("mse", a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// PSNR in dB from a mean squared error, peak 1.0, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    mse(a, b).map(psnr_from_mse)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - r;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter with "valid" extent over a single-channel plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * plane[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity: 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    same_dims("ssim", a, b)?;
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    for c in 0..ch {
        let pa: Vec<f64> = a.data().iter().skip(c).step_by(ch).copied().collect();
        let pb: Vec<f64> = b.data().iter().skip(c).step_by(ch).copied().collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, h, w, &win);
        let mu_b = filter_valid(&pb, h, w, &win);
        let aa = filter_valid(&prod(&pa, &pa), h, w, &win);
        let bb = filter_valid(&prod(&pb, &pb), h, w, &win);
        let ab = filter_valid(&prod(&pa, &pb), h, w, &win);
        let n = mu_a.len() as f64;
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / n;
    }
    Ok(total / ch as f64)
}

/// Relative resolution error in percent: mean of the relative height and
/// width deviations, × 100.
pub fn rre(predicted: (usize, usize), truth: (usize, usize)) -> Result<f64> {
    if truth.0 == 0 || truth.1 == 0 {
        return Err(Error::invalid("rre", format!("ground-truth dims {}x{} must be positive", truth.0, truth.1)));
    }
    let rel = |p: usize, t: usize| (p as f64 - t as f64).abs() / t as f64;
    Ok(0.5 * (rel(predicted.0, truth.0) + rel(predicted.1, truth.1)) * 100.0)
}

/// One report row; absent metrics are written as empty fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricRow {
    pub id: String,
    pub stego_psnr: Option<f64>,
    pub stego_ssim: Option<f64>,
    pub secret_psnr: Option<f64>,
    pub secret_ssim: Option<f64>,
    pub rre_percent: Option<f64>,
}

impl MetricRow {
    fn values(&self) -> [Option<f64>; 5] {
        [self.stego_psnr, self.stego_ssim, self.secret_psnr, self.secret_ssim, self.rre_percent]
    }
}

pub const REPORT_COLUMNS: [&str; 6] = ["id", "stego_psnr", "stego_ssim", "secret_psnr", "secret_ssim", "rre_percent"];

/// Per-image rows plus their column-wise arithmetic mean.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    /// Column means over the rows that carry each metric.
    pub fn aggregate(&self) -> MetricRow {
        let mean = |col: usize| {
            let vals: Vec<f64> = self.rows.iter().filter_map(|r| r.values()[col]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        MetricRow {
            id: "mean".to_string(),
            stego_psnr: mean(0),
            stego_ssim: mean(1),
            secret_psnr: mean(2),
            secret_ssim: mean(3),
            rre_percent: mean(4),
        }
    }

    /// Writes the header, one row per image, and a trailing `mean` row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(REPORT_COLUMNS)?;
        for row in self.rows.iter().chain(std::iter::once(&self.aggregate())) {
            let mut rec = vec![row.id.clone()];
            rec.extend(row.values().iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("flushing report", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(h: usize, w: usize, seed: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, 3, |y, x, c| (((y * 7 + x * 13 + c * 3 + seed) * 2654435761usize) % 1000) as f64 / 999.0).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let x = noisy(12, 12, 1);
        assert_eq!(psnr(&x, &x).unwrap(), 100.0);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert!((psnr_from_mse(1e-4) - 40.0).abs() < 1e-12);
        let a = ImageTensor::constant(4, 4, 1, 0.5).unwrap();
        let b = ImageTensor::constant(4, 4, 1, 0.6).unwrap();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &noisy(4, 4, 0)).is_err());
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let p = psnr_from_mse(k as f64 * 1e-3);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_self_and_symmetry() {
        let a = noisy(20, 17, 2);
        let b = noisy(20, 17, 5);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!(ssim(&noisy(10, 20, 0), &noisy(10, 20, 0)).is_err());
    }

    #[test]
    fn ssim_of_inverted_checkerboard_is_low() {
        let x = ImageTensor::from_fn(16, 16, 1, |y, x, _| ((y + x) % 2) as f64).unwrap();
        let inv = ImageTensor::from_fn(16, 16, 1, |y, x, _| 1.0 - ((y + x) % 2) as f64).unwrap();
        assert!(ssim(&x, &inv).unwrap() < 0.5);
    }

    #[test]
    fn ssim_of_constants_is_luminance_term() {
        let (va, vb) = (0.2, 0.7);
        let a = ImageTensor::constant(12, 12, 3, va).unwrap();
        let b = ImageTensor::constant(12, 12, 3, vb).unwrap();
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * va * vb + c1) / (va * va + vb * vb + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn rre_examples() {
        assert_eq!(rre((256, 256), (256, 256)).unwrap(), 0.0);
        assert!((rre((256, 256), (512, 512)).unwrap() - 50.0).abs() < 1e-12);
        assert!(rre((1, 1), (0, 4)).is_err());
        // equal relative error moved between axes
        assert!((rre((110, 200), (100, 200)).unwrap() - rre((100, 220), (100, 200)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn report_aggregate_is_column_mean() {
        let mut r = MetricReport::default();
        r.push(MetricRow {
            id: "a".into(),
            stego_psnr: Some(30.0),
            rre_percent: Some(0.0),
            ..Default::default()
        });
        r.push(MetricRow {
            id: "b".into(),
            stego_psnr: Some(40.0),
            rre_percent: Some(10.0),
            ..Default::default()
        });
        let agg = r.aggregate();
        assert_eq!(agg.stego_psnr, Some(35.0));
        assert_eq!(agg.rre_percent, Some(5.0));
        assert_eq!(agg.secret_ssim, None);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        r.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REPORT_COLUMNS.join(","));
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("mean,35.000000,,,,5.000000"));
    }
}
