//! Training loop: sampling, Adam with cosine decay, CSV log, checkpoints.

use std::fs::OpenOptions;
use std::path::PathBuf;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::metrics::{psnr_from_mse, rre};
use crate::tensor::{cosine_lr, AdamState, Binder, Real};

use super::checkpoint::save_checkpoint;
use super::config::ArdisConfig;
use super::data::{sample_cover, sample_secret};
use super::model::{Model, LOSS_TERMS};

pub const LOG_COLUMNS: [&str; 11] = [
    "step",
    "lr",
    "total",
    "stego",
    "secret",
    "basis",
    "latent",
    "map",
    "stego_psnr",
    "secret_psnr",
    "rre",
];

/// Batch-averaged values of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub terms: [f64; 5],
    pub stego_psnr: f64,
    pub secret_psnr: f64,
    pub rre: f64,
}

impl LogRow {
    fn record(&self) -> Vec<String> {
        let mut r = vec![self.step.to_string(), format!("{:e}", self.lr), format!("{:.6e}", self.total)];
        r.extend(self.terms.iter().map(|t| format!("{t:.6e}")));
        r.extend([self.stego_psnr, self.secret_psnr, self.rre].iter().map(|v| format!("{v:.4}")));
        r
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub log_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

/// Per-step generator so a resumed run draws the same samples.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step)
}

pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub adam: AdamState<T>,
    images: Vec<ImageTensor>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, adam: Option<AdamState<T>>, images: Vec<ImageTensor>) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::Dataset(format!("training needs at least 2 images, got {}", images.len())));
        }
        let adam = adam.unwrap_or_else(|| AdamState::new(&model.store));
        Ok(Trainer { model, adam, images })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    /// Draws a cover and a differently indexed secret for one batch item.
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<(ImageTensor, ImageTensor, Vec<usize>)> {
        let cfg = &self.model.config;
        let n = self.images.len();
        let ci = rng.random_range(0..n);
        let si = (ci + rng.random_range(1..n)) % n;
        let cover = sample_cover(&self.images[ci], cfg.cover_dims(), rng)?;
        let secret = sample_secret(&self.images[si], cfg.cover_dims(), (cfg.scale_min, cfg.scale_max), rng)?;
        let total = secret.height() * secret.width();
        let pixels = if total <= cfg.query_samples {
            (0..total).collect()
        } else {
            sample(rng, total, cfg.query_samples).into_vec()
        };
        Ok((cover, secret, pixels))
    }

    /// One optimizer step over a batch.
    pub fn step(&mut self) -> Result<LogRow> {
        let cfg = self.model.config.clone();
        let step = self.adam.step;
        let lr = cosine_lr(step, cfg.total_steps.max(step + 1), cfg.learning_rate)?;
        let mut rng = step_rng(cfg.seed, step);
        let batch = cfg.batch_size as f64;
        let mut row = LogRow {
            step: step + 1,
            lr,
            total: 0.0,
            terms: [0.0; 5],
            stego_psnr: 0.0,
            secret_psnr: 0.0,
            rre: 0.0,
        };
        self.model.store.zero_grads();
        for _ in 0..cfg.batch_size {
            let (cover, secret, pixels) = self.draw(&mut rng)?;
            let (terms, decoded, grads) = {
                let b = Binder::training(&self.model.store);
                let f = self.model.forward(&b, &cover, &secret, &pixels)?;
                let (loss, terms) = self.model.loss(&f)?;
                loss.mul_scalar(1.0 / batch).backward()?;
                (terms, self.model.decode_resolution(&f.recovered)?, b.take_grads())
            };
            self.model.store.accumulate(grads);
            row.total += terms.total / batch;
            for (acc, t) in row.terms.iter_mut().zip(terms.terms) {
                *acc += t / batch;
            }
            row.stego_psnr += psnr_from_mse(terms.terms[0]) / batch;
            row.secret_psnr += psnr_from_mse(terms.terms[1]) / batch;
            row.rre += rre(decoded.dims(), secret.dims())? / batch;
        }
        self.adam.step(&mut self.model.store, lr).map_err(|e| match e {
            Error::NonFinite { what } => Error::NonFinite {
                what: format!("{what} at step {}", step + 1),
            },
            e => e,
        })?;
        Ok(row)
    }

    /// Runs until `total_steps`, logging and checkpointing on the configured intervals.
    pub fn run(&mut self, opts: &TrainOptions) -> Result<Vec<LogRow>> {
        self.run_with(opts, |_| {})
    }

    /// [`Trainer::run`] with a callback after every step.
    pub fn run_with(&mut self, opts: &TrainOptions, mut on_step: impl FnMut(&LogRow)) -> Result<Vec<LogRow>> {
        let cfg = self.model.config.clone();
        let mut log = match &opts.log_path {
            Some(path) => {
                let fresh = self.adam.step == 0 || !path.exists();
                let file = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(!fresh)
                    .truncate(fresh)
                    .open(path)
                    .map_err(|e| Error::io(format!("opening log {}", path.display()), e))?;
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
                if fresh {
                    w.write_record(LOG_COLUMNS)?;
                }
                Some(w)
            }
            None => None,
        };
        let mut rows = Vec::new();
        while self.adam.step < cfg.total_steps {
            let row = self.step()?;
            let last = row.step == cfg.total_steps;
            if let Some(w) = log.as_mut() {
                if last || (cfg.log_interval > 0 && row.step % cfg.log_interval == 0) {
                    w.write_record(row.record())?;
                    w.flush().map_err(|e| Error::io("writing training log", e))?;
                }
            }
            if let Some(path) = &opts.checkpoint_path {
                if last || (cfg.checkpoint_interval > 0 && row.step % cfg.checkpoint_interval == 0) {
                    save_checkpoint(path, &self.model, Some(&self.adam))?;
                }
            }
            on_step(&row);
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Trains a fresh model from `config` on `images`.
pub fn train<T: Real>(config: ArdisConfig, images: Vec<ImageTensor>, opts: &TrainOptions) -> Result<(Trainer<T>, Vec<LogRow>)> {
    let model = Model::new(config)?;
    let mut trainer = Trainer::new(model, None, images)?;
    let rows = trainer.run(opts)?;
    Ok((trainer, rows))
}

/// Mean of `values[i - window + 1 ..= i]`, clipped at the start.
pub fn smoothed(values: &[f64], i: usize, window: usize) -> f64 {
    let lo = (i + 1).saturating_sub(window);
    let s = &values[lo..=i];
    s.iter().sum::<f64>() / s.len() as f64
}

pub fn term_index(name: &str) -> Option<usize> {
    LOSS_TERMS.iter().position(|&t| t == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::checkpoint::load_checkpoint;
    use crate::pipeline::data::synthetic_image;

    fn tiny(steps: u64) -> ArdisConfig {
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
            learning_rate: 1e-3,
            total_steps: steps,
            scale_min: 0.5,
            scale_max: 0.9,
            query_samples: 64,
            log_interval: 2,
            checkpoint_interval: 3,
            ..Default::default()
        }
    }

    fn images() -> Vec<ImageTensor> {
        (0..4).map(|i| synthetic_image(16, 16, i)).collect()
    }

    #[test]
    fn rejects_tiny_datasets() {
        let model = Model::<f32>::new(tiny(1)).unwrap();
        assert!(Trainer::new(model, None, vec![synthetic_image(16, 16, 0)]).is_err());
    }

    #[test]
    fn same_seed_gives_identical_curves() {
        let (_, a) = train::<f64>(tiny(4), images(), &TrainOptions::default()).unwrap();
        let (_, b) = train::<f64>(tiny(4), images(), &TrainOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|r| r.total.is_finite()));
    }

    #[test]
    fn resume_continues_the_step_counter() {
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            log_path: Some(dir.path().join("log.csv")),
            checkpoint_path: Some(dir.path().join("m.ards")),
        };
        let (_, full) = train::<f32>(tiny(6), images(), &TrainOptions::default()).unwrap();
        let (_, first) = train::<f32>(tiny(3), images(), &opts).unwrap();
        let (model, adam) = load_checkpoint::<f32>(dir.path().join("m.ards")).unwrap();
        let adam = adam.unwrap();
        assert_eq!(adam.step, 3);
        let mut model = model;
        model.config.total_steps = 6;
        let mut t = Trainer::new(model, Some(adam), images()).unwrap();
        let rest = t.run(&opts).unwrap();
        assert_eq!(rest.first().unwrap().step, 4);
        assert_eq!(t.step_count(), 6);
        // the resumed run sees the same samples; lr differs only through the schedule length
        assert_eq!(first.len() + rest.len(), full.len());

        let text = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], LOG_COLUMNS.join(","));
        let steps: Vec<_> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(steps, vec!["2", "3", "4", "6"]);
    }

    #[test]
    fn smoothing_window() {
        let v = [4.0, 2.0, 6.0, 8.0];
        assert_eq!(smoothed(&v, 0, 3), 4.0);
        assert_eq!(smoothed(&v, 3, 2), 7.0);
        assert_eq!(term_index("map"), Some(4));
    }
}
