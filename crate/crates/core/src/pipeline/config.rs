//! Model and training configuration with a flat `key = value` text form.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys absent from a file keep their defaults, unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ihn::AuxMode;
use crate::irc;
use crate::tensor::Padding;

#[derive(Clone, Debug, PartialEq)]
pub struct ArdisConfig {
    pub cover_height: usize,
    pub cover_width: usize,
    pub latent_channels: usize,
    pub resolution_bits: usize,
    pub ihn_blocks: usize,
    pub ihn_hidden: usize,
    pub detail_fold: usize,
    pub detail_hidden: usize,
    pub feature_channels: usize,
    pub mlp_hidden: Vec<usize>,
    pub padding: Padding,
    pub aux_mode: AuxMode,
    pub margin_threshold: f64,
    pub lambda_stego: f64,
    pub lambda_secret: f64,
    pub lambda_basis: f64,
    pub lambda_latent: f64,
    pub lambda_map: f64,
    pub learning_rate: f64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub query_samples: usize,
    pub log_interval: u64,
    pub checkpoint_interval: u64,
    pub fda_enabled: bool,
    pub lgir_enabled: bool,
}

impl Default for ArdisConfig {
    fn default() -> Self {
        ArdisConfig {
            cover_height: 64,
            cover_width: 64,
            latent_channels: 4,
            resolution_bits: irc::DEFAULT_BITS,
            ihn_blocks: 8,
            ihn_hidden: 32,
            detail_fold: 2,
            detail_hidden: 32,
            feature_channels: 32,
            mlp_hidden: vec![256, 256, 256],
            padding: Padding::Zero,
            aux_mode: AuxMode::Zeros,
            margin_threshold: 0.25,
            lambda_stego: 1.0,
            lambda_secret: 1.0,
            lambda_basis: 0.5,
            lambda_latent: 0.1,
            lambda_map: 1.0,
            learning_rate: 1e-4,
            total_steps: 800,
            batch_size: 1,
            seed: 0,
            scale_min: 1.0,
            scale_max: 2.0,
            query_samples: 4096,
            log_interval: 10,
            checkpoint_interval: 100,
            fda_enabled: true,
            lgir_enabled: true,
        }
    }
}

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::Config {
        field: field.to_string(),
        reason: format!("cannot parse `{value}`: {e}"),
    })
}

fn parse_list(field: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(field, v.trim())).collect()
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl ArdisConfig {
    /// Small model used by the smoke tests and the bundled fixture.
    pub fn toy() -> Self {
        ArdisConfig {
            ihn_blocks: 2,
            ihn_hidden: 16,
            detail_hidden: 16,
            feature_channels: 16,
            mlp_hidden: vec![64, 64],
            // short runs cannot afford the stego damage of equal weighting
            lambda_stego: 30.0,
            learning_rate: 2e-3,
            total_steps: 500,
            query_samples: 1024,
            log_interval: 10,
            checkpoint_interval: 0,
            ..Default::default()
        }
    }

    pub fn cover_dims(&self) -> (usize, usize) {
        (self.cover_height, self.cover_width)
    }

    pub fn map_dims(&self) -> (usize, usize) {
        (self.cover_height / 2, self.cover_width / 2)
    }

    /// `12 | 4·c_lat | 1` for RGB secrets.
    pub fn payload_channels(&self) -> usize {
        12 + 4 * self.latent_channels + 1
    }

    pub fn validate(&self) -> Result<()> {
        let (hc, wc) = self.cover_dims();
        if hc == 0 || hc % 2 != 0 {
            return Err(bad("cover_height", format!("{hc} must be positive and even")));
        }
        if wc == 0 || wc % 2 != 0 {
            return Err(bad("cover_width", format!("{wc} must be positive and even")));
        }
        let l = self.resolution_bits;
        if l < 2 || !l.is_multiple_of(2) || l > 2 * (usize::BITS as usize / 2 - 1) {
            return Err(bad("resolution_bits", format!("{l} must be even and in [2, 62]")));
        }
        if hc / 2 < l {
            return Err(bad("resolution_bits", format!("{l} stripes need cover_height >= {}, got {hc}", 2 * l)));
        }
        for (field, v) in [
            ("latent_channels", self.latent_channels),
            ("ihn_blocks", self.ihn_blocks),
            ("ihn_hidden", self.ihn_hidden),
            ("detail_fold", self.detail_fold),
            ("detail_hidden", self.detail_hidden),
            ("feature_channels", self.feature_channels),
            ("batch_size", self.batch_size),
            ("query_samples", self.query_samples),
        ] {
            if v == 0 {
                return Err(bad(field, "must be positive"));
            }
        }
        if self.mlp_hidden.contains(&0) {
            return Err(bad("mlp_hidden", "layer widths must be positive"));
        }
        for (field, v) in [
            ("lambda_stego", self.lambda_stego),
            ("lambda_secret", self.lambda_secret),
            ("lambda_basis", self.lambda_basis),
            ("lambda_latent", self.lambda_latent),
            ("lambda_map", self.lambda_map),
            ("margin_threshold", self.margin_threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(field, format!("{v} must be finite and >= 0")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("learning_rate", format!("{} must be positive", self.learning_rate)));
        }
        if !(self.scale_min > 0.0 && self.scale_min.is_finite()) {
            return Err(bad("scale_min", format!("{} must be positive", self.scale_min)));
        }
        if !(self.scale_max >= self.scale_min && self.scale_max.is_finite()) {
            return Err(bad("scale_max", format!("{} must be >= scale_min {}", self.scale_max, self.scale_min)));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "cover_height" => self.cover_height = parse(key, value)?,
            "cover_width" => self.cover_width = parse(key, value)?,
            "latent_channels" => self.latent_channels = parse(key, value)?,
            "resolution_bits" => self.resolution_bits = parse(key, value)?,
            "ihn_blocks" => self.ihn_blocks = parse(key, value)?,
            "ihn_hidden" => self.ihn_hidden = parse(key, value)?,
            "detail_fold" => self.detail_fold = parse(key, value)?,
            "detail_hidden" => self.detail_hidden = parse(key, value)?,
            "feature_channels" => self.feature_channels = parse(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse_list(key, value)?,
            "padding" => self.padding = parse(key, value)?,
            "aux_mode" => self.aux_mode = parse(key, value)?,
            "margin_threshold" => self.margin_threshold = parse(key, value)?,
            "lambda_stego" => self.lambda_stego = parse(key, value)?,
            "lambda_secret" => self.lambda_secret = parse(key, value)?,
            "lambda_basis" => self.lambda_basis = parse(key, value)?,
            "lambda_latent" => self.lambda_latent = parse(key, value)?,
            "lambda_map" => self.lambda_map = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "total_steps" => self.total_steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "scale_min" => self.scale_min = parse(key, value)?,
            "scale_max" => self.scale_max = parse(key, value)?,
            "query_samples" => self.query_samples = parse(key, value)?,
            "log_interval" => self.log_interval = parse(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, value)?,
            "fda_enabled" => self.fda_enabled = parse(key, value)?,
            "lgir_enabled" => self.lgir_enabled = parse(key, value)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses and validates; later assignments override earlier ones.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ArdisConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                bad(&format!("line {}", n + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_text(&text)
    }

    /// Canonical form: every key, fixed order, one per line.
    pub fn to_text(&self) -> String {
        let list = self.mlp_hidden.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("cover_height", self.cover_height.to_string());
        put("cover_width", self.cover_width.to_string());
        put("latent_channels", self.latent_channels.to_string());
        put("resolution_bits", self.resolution_bits.to_string());
        put("ihn_blocks", self.ihn_blocks.to_string());
        put("ihn_hidden", self.ihn_hidden.to_string());
        put("detail_fold", self.detail_fold.to_string());
        put("detail_hidden", self.detail_hidden.to_string());
        put("feature_channels", self.feature_channels.to_string());
        put("mlp_hidden", list);
        put("padding", self.padding.to_string());
        put("aux_mode", self.aux_mode.to_string());
        put("margin_threshold", self.margin_threshold.to_string());
        put("lambda_stego", self.lambda_stego.to_string());
        put("lambda_secret", self.lambda_secret.to_string());
        put("lambda_basis", self.lambda_basis.to_string());
        put("lambda_latent", self.lambda_latent.to_string());
        put("lambda_map", self.lambda_map.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("total_steps", self.total_steps.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("scale_min", self.scale_min.to_string());
        put("scale_max", self.scale_max.to_string());
        put("query_samples", self.query_samples.to_string());
        put("log_interval", self.log_interval.to_string());
        put("checkpoint_interval", self.checkpoint_interval.to_string());
        put("fda_enabled", self.fda_enabled.to_string());
        put("lgir_enabled", self.lgir_enabled.to_string());
        s
    }

    /// True when both configs build parameter stores of identical layout.
    pub fn same_architecture(&self, other: &ArdisConfig) -> bool {
        self.cover_dims() == other.cover_dims()
            && self.latent_channels == other.latent_channels
            && self.ihn_blocks == other.ihn_blocks
            && self.ihn_hidden == other.ihn_hidden
            && self.detail_fold == other.detail_fold
            && self.detail_hidden == other.detail_hidden
            && self.feature_channels == other.feature_channels
            && self.mlp_hidden == other.mlp_hidden
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn shipped_toy_file_matches_preset() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.cfg");
        assert_eq!(ArdisConfig::load(path).unwrap(), ArdisConfig::toy());
    }

    #[test]
    fn canonical_text_round_trips() {
        for cfg in [ArdisConfig::default(), ArdisConfig::toy()] {
            let text = cfg.to_text();
            let back = ArdisConfig::from_text(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn partial_files_keep_defaults() {
        let cfg = ArdisConfig::from_text("# toy\n\nihn_blocks = 3  # fewer\nmlp_hidden = 8, 8\nfda_enabled=false\n").unwrap();
        assert_eq!(cfg.ihn_blocks, 3);
        assert_eq!(cfg.mlp_hidden, vec![8, 8]);
        assert!(!cfg.fda_enabled);
        assert_eq!(cfg.cover_height, 64);
        assert_eq!(cfg.payload_channels(), 29);
    }

    fn field_of(text: &str) -> String {
        match ArdisConfig::from_text(text).unwrap_err() {
            Error::Config { field, .. } => field,
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(field_of("ihn_blocks = many"), "ihn_blocks");
        assert_eq!(field_of("colour = red"), "colour");
        assert_eq!(field_of("cover_height = 63"), "cover_height");
        assert_eq!(field_of("cover_height = 32"), "resolution_bits");
        assert_eq!(field_of("lambda_map = -1"), "lambda_map");
        assert_eq!(field_of("scale_max = 0.5"), "scale_max");
        assert_eq!(field_of("learning_rate = 0"), "learning_rate");
        assert_eq!(field_of("padding = mirror"), "padding");
        assert_eq!(field_of("just words"), "line 1");
    }

    proptest! {
        #[test]
        fn arbitrary_valid_configs_round_trip(
            blocks in 1usize..12,
            lr in 1e-6f64..1.0,
            lam in 0.0f64..10.0,
            widths in proptest::collection::vec(1usize..300, 0..5),
            seed in any::<u64>(),
            fda in any::<bool>(),
        ) {
            let cfg = ArdisConfig {
                ihn_blocks: blocks,
                learning_rate: lr,
                lambda_basis: lam,
                mlp_hidden: widths,
                seed,
                fda_enabled: fda,
                aux_mode: AuxMode::Gaussian { seed },
                ..Default::default()
            };
            prop_assert_eq!(ArdisConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        }
    }
}
