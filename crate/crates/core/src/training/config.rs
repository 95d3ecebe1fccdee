use std::fmt;

use crate::data::{MaskKind, MaskSpec};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, UNITS};

/// Hyperparameters of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda_adv: f64,
    pub mask: MaskSpec,
    /// Weight of occluded pixels in the reconstruction loss.
    pub region_weight: f64,
    pub image_size: usize,
    pub channels: [usize; UNITS],
    pub include_mask_channel: bool,
    pub use_batch_norm: bool,
    pub seed: u64,
    pub train_fraction: f64,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Iterations between sample grids; 0 writes only the final one.
    pub sample_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelSpec::default();
        TrainConfig {
            lr: 1e-4,
            batch_size: 8,
            epochs: 20,
            lambda_adv: 1.0,
            mask: MaskSpec::default(),
            region_weight: 1.0,
            image_size: model.image_size,
            channels: model.channels,
            include_mask_channel: model.include_mask_channel,
            use_batch_norm: model.use_batch_norm,
            seed: 0,
            train_fraction: 0.9,
            checkpoint_every: 1000,
            sample_every: 1000,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`]; they double as CLI flag names.
pub const CONFIG_KEYS: &[&str] = &[
    "lr",
    "batch",
    "epochs",
    "lambda-adv",
    "mask",
    "coverage",
    "fill",
    "region-weight",
    "image-size",
    "channels",
    "mask-channel",
    "batch-norm",
    "seed",
    "train-fraction",
    "checkpoint-every",
    "sample-every",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

pub fn parse_channels(value: &str) -> Result<[usize; UNITS]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse::<usize>("channels", p))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<usize>| Error::Config(format!("channels needs {UNITS} comma-separated widths, got {}", v.len())))
}

impl TrainConfig {
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            image_size: self.image_size,
            channels: self.channels,
            in_channels: 3,
            include_mask_channel: self.include_mask_channel,
            use_batch_norm: self.use_batch_norm,
        }
    }

    /// Base mask of the run; random placements are re-seeded per iteration.
    pub fn mask_spec(&self) -> MaskSpec {
        MaskSpec { seed: self.seed, ..self.mask }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lambda_adv >= 0.0 && self.lambda_adv.is_finite()) {
            return Err(Error::Config(format!("lambda-adv must be non-negative, got {}", self.lambda_adv)));
        }
        if !(self.region_weight > 0.0 && self.region_weight.is_finite()) {
            return Err(Error::Config(format!("region-weight must be positive, got {}", self.region_weight)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train-fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        self.mask.side(self.image_size, self.image_size)?;
        self.model_spec().validate()
    }

    /// Set one field from its textual `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lambda-adv" => self.lambda_adv = parse(key, value)?,
            "mask" => self.mask.kind = value.trim().parse::<MaskKind>()?,
            "coverage" => self.mask.coverage = parse(key, value)?,
            "fill" => self.mask.fill = parse(key, value)?,
            "region-weight" => self.region_weight = parse(key, value)?,
            "image-size" => self.image_size = parse(key, value)?,
            "channels" => self.channels = parse_channels(value)?,
            "mask-channel" => self.include_mask_channel = parse_bool(key, value)?,
            "batch-norm" => self.use_batch_norm = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "train-fraction" => self.train_fraction = parse(key, value)?,
            "checkpoint-every" => self.checkpoint_every = parse(key, value)?,
            "sample-every" => self.sample_every = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)`, in [`CONFIG_KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let channels = self.channels.map(|c| c.to_string()).join(",");
        vec![
            ("lr", self.lr.to_string()),
            ("batch", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lambda-adv", self.lambda_adv.to_string()),
            ("mask", self.mask.kind.to_string()),
            ("coverage", self.mask.coverage.to_string()),
            ("fill", self.mask.fill.to_string()),
            ("region-weight", self.region_weight.to_string()),
            ("image-size", self.image_size.to_string()),
            ("channels", channels),
            ("mask-channel", self.include_mask_channel.to_string()),
            ("batch-norm", self.use_batch_norm.to_string()),
            ("seed", self.seed.to_string()),
            ("train-fraction", self.train_fraction.to_string()),
            ("checkpoint-every", self.checkpoint_every.to_string()),
            ("sample-every", self.sample_every.to_string()),
        ]
    }

    /// Defaults, then the config file, then explicit flags; later sources win.
    pub fn resolve(file: &[(String, String)], flags: &[(String, String)]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in file.iter().chain(flags) {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Parse `key = value` lines. Blank lines and `#` comments are ignored.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_follow_the_training_recipe() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.epochs, 20);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.lambda_adv, 1.0);
        assert_eq!(cfg.image_size, 128);
        assert!(!cfg.use_batch_norm);
        cfg.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig { lr: 3.3e-5, channels: [8, 16, 32, 64, 64, 64], ..TrainConfig::default() };
        cfg.mask.kind = MaskKind::RandomBlock;
        cfg.mask.fill = 0.5;
        let parsed = parse_key_values(&cfg.to_string()).unwrap();
        assert_eq!(TrainConfig::resolve(&parsed, &[]).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.set("learning-rate", "1").is_err());
        assert!(cfg.set("batch", "eight").is_err());
        assert!(cfg.set("channels", "1,2,3").is_err());
        assert!(parse_key_values("epochs 3").is_err());
        cfg.image_size = 100;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        /// default < config file < explicit flag, for every key pairing.
        #[test]
        fn flag_precedence(file_epochs in proptest::option::of(1usize..50),
                           flag_epochs in proptest::option::of(1usize..50),
                           file_lr in proptest::option::of(1e-6f64..1e-2),
                           flag_lr in proptest::option::of(1e-6f64..1e-2)) {
            let mut file = Vec::new();
            let mut flags = Vec::new();
            if let Some(e) = file_epochs { file.push(("epochs".to_string(), e.to_string())); }
            if let Some(e) = flag_epochs { flags.push(("epochs".to_string(), e.to_string())); }
            if let Some(l) = file_lr { file.push(("lr".to_string(), l.to_string())); }
            if let Some(l) = flag_lr { flags.push(("lr".to_string(), l.to_string())); }
            let cfg = TrainConfig::resolve(&file, &flags).unwrap();
            prop_assert_eq!(cfg.epochs, flag_epochs.or(file_epochs).unwrap_or(20));
            prop_assert_eq!(cfg.lr, flag_lr.or(file_lr).unwrap_or(1e-4));
            prop_assert_eq!(cfg.batch_size, 8);
        }
    }
}
