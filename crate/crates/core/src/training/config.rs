use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::TrainError;
use crate::models::{RESOLUTION, W_DIM, Z_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendChoice {
    Procedural,
    Neural,
}

impl fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendChoice::Procedural => "procedural",
            BackendChoice::Neural => "neural",
        })
    }
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "procedural" => Ok(BackendChoice::Procedural),
            "neural" => Ok(BackendChoice::Neural),
            other => Err(format!("unknown backend {other:?} (expected procedural or neural)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Complete description of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    /// Seeds the frozen F and decoder weights, independent of `seed`.
    pub generator_seed: u64,
    pub backend: BackendChoice,
    pub z_dim: usize,
    pub w_dim: usize,
    pub resolution: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda_recon: f64,
    pub lambda_adv: f64,
    pub lambda_fm: f64,
    /// Joint training also updates the decoder.
    pub train_generator: bool,
    pub eval_every: usize,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generator_seed: 0,
            backend: BackendChoice::Procedural,
            z_dim: Z_DIM,
            w_dim: W_DIM,
            resolution: RESOLUTION,
            batch_size: 32,
            steps: 5000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lambda_recon: 1.0,
            lambda_adv: 0.1,
            lambda_fm: 1.0,
            train_generator: true,
            eval_every: 100,
            out_dir: PathBuf::from("runs/train"),
        }
    }
}

/// Config-file keys in echo order.
pub const CONFIG_KEYS: [&str; 18] = [
    "seed",
    "generator_seed",
    "backend",
    "z_dim",
    "w_dim",
    "resolution",
    "batch_size",
    "steps",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "lambda_recon",
    "lambda_adv",
    "lambda_fm",
    "train_generator",
    "eval_every",
    "out_dir",
];

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if self.steps < 1 {
            return bad("steps must be >= 1".into());
        }
        if self.eval_every < 1 {
            return bad("eval_every must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) || !(self.eps > 0.0) {
            return bad("lr and eps must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)".into());
        }
        for (name, v) in [
            ("lambda_recon", self.lambda_recon),
            ("lambda_adv", self.lambda_adv),
            ("lambda_fm", self.lambda_fm),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a finite value >= 0"));
            }
        }
        if self.z_dim < 1 || self.w_dim < 1 {
            return bad("z_dim and w_dim must be >= 1".into());
        }
        if self.resolution < 17 {
            return bad("resolution must be >= 17 for the three stride-2 conv stages".into());
        }
        if self.backend == BackendChoice::Procedural && self.w_dim != W_DIM {
            return bad(format!("the procedural renderer needs w_dim = {W_DIM}"));
        }
        Ok(())
    }

    /// Value of one config key as written to `config.resolved`.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "generator_seed" => self.generator_seed.to_string(),
            "backend" => self.backend.to_string(),
            "z_dim" => self.z_dim.to_string(),
            "w_dim" => self.w_dim.to_string(),
            "resolution" => self.resolution.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "steps" => self.steps.to_string(),
            "lr" | "learning_rate" => self.learning_rate.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "eps" => self.eps.to_string(),
            "lambda_recon" => self.lambda_recon.to_string(),
            "lambda_adv" => self.lambda_adv.to_string(),
            "lambda_fm" => self.lambda_fm.to_string(),
            "train_generator" => self.train_generator.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Sets one key from its textual value. `learning_rate` is accepted as
    /// an alias of `lr`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
            value.trim().parse().map_err(|_| TrainError::Value {
                key: key.to_string(),
                value: value.to_string(),
            })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "generator_seed" => self.generator_seed = parse(key, value)?,
            "backend" => self.backend = parse(key, value)?,
            "z_dim" => self.z_dim = parse(key, value)?,
            "w_dim" => self.w_dim = parse(key, value)?,
            "resolution" => self.resolution = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "lr" | "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "lambda_recon" => self.lambda_recon = parse(key, value)?,
            "lambda_adv" => self.lambda_adv = parse(key, value)?,
            "lambda_fm" => self.lambda_fm = parse(key, value)?,
            "train_generator" => self.train_generator = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            other => return Err(TrainError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// `key=value` lines for every key, in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }
}
