//! Flat `key=value` run configuration.
//!
//! Files hold one `key=value` per line; blank lines and `#` comments are
//! ignored. Command-line `--key value` overrides are applied on top. The
//! resolved configuration is echoed verbatim into model files and reports.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::engine::AlphaMode;
use crate::error::{Error, Result};
use crate::models::ModelKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CalibrationSplit {
    Train,
    Dev,
}

impl std::fmt::Display for CalibrationSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CalibrationSplit::Train => "train",
            CalibrationSplit::Dev => "dev",
        })
    }
}

impl FromStr for CalibrationSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(CalibrationSplit::Train),
            "dev" => Ok(CalibrationSplit::Dev),
            other => Err(Error::Config(format!(
                "calibration_split must be train or dev, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub name: Option<String>,
    pub model: ModelKind,
    pub hidden_sizes: Vec<usize>,
    pub embed_dim: usize,
    pub r_l: f64,
    pub r_u: f64,
    pub alpha_mode: AlphaMode,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: Option<u64>,
    pub max_len: usize,
    pub calibration_split: CalibrationSplit,
    pub min_count: usize,
    pub trainable_embeddings: bool,
    pub include_embedding_params: bool,
    /// LSTM sequence length for FLOP accounting; dataset mean when unset.
    pub seq_len: Option<usize>,
    pub split: (f64, f64, f64),
    pub data: Option<PathBuf>,
    pub dev_data: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub classes: usize,
    pub n_per_class: usize,
    pub vocab_per_class: usize,
    pub noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: None,
            model: ModelKind::Dnn,
            hidden_sizes: vec![64, 64, 64],
            embed_dim: 32,
            r_l: 0.3,
            r_u: 1.0,
            alpha_mode: AlphaMode::Fixed,
            lr: 0.1,
            epochs: 20,
            batch_size: 16,
            seed: None,
            max_len: 32,
            calibration_split: CalibrationSplit::Train,
            min_count: 1,
            trainable_embeddings: true,
            include_embedding_params: false,
            seq_len: None,
            split: (0.8, 0.1, 0.1),
            data: None,
            dev_data: None,
            embeddings: None,
            classes: 10,
            n_per_class: 200,
            vocab_per_class: 12,
            noise: 0.3,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}={value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}={value:?}: expected true or false"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "name" => self.name = (!value.is_empty()).then(|| value.to_string()),
            "model" => self.model = value.parse()?,
            "hidden_sizes" => self.hidden_sizes = parse_list(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "r_l" => self.r_l = parse(key, value)?,
            "r_u" => self.r_u = parse(key, value)?,
            "alpha_mode" => self.alpha_mode = value.parse()?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = Some(parse(key, value)?),
            "max_len" => self.max_len = parse(key, value)?,
            "calibration_split" => self.calibration_split = value.parse()?,
            "min_count" => self.min_count = parse(key, value)?,
            "trainable_embeddings" => self.trainable_embeddings = parse_bool(key, value)?,
            "include_embedding_params" => self.include_embedding_params = parse_bool(key, value)?,
            "seq_len" => {
                self.seq_len = if value.is_empty() || value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "split" => {
                let f: Vec<f64> = parse_list(key, value)?;
                let [a, b, c] = f.as_slice() else {
                    return Err(Error::Config(format!("split needs three fractions, got {value:?}")));
                };
                self.split = (*a, *b, *c);
            }
            "data" => self.data = opt_path(value),
            "dev_data" => self.dev_data = opt_path(value),
            "embeddings" => self.embeddings = opt_path(value),
            "classes" => self.classes = parse(key, value)?,
            "n_per_class" => self.n_per_class = parse(key, value)?,
            "vocab_per_class" => self.vocab_per_class = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_pairs<'a, I>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        pairs.into_iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_kv_text(&text)
    }

    /// Every key with its resolved value, in a stable order.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("name", self.name.clone().unwrap_or_default());
        put("model", self.model.to_string());
        put("hidden_sizes", join(&self.hidden_sizes));
        put("embed_dim", self.embed_dim.to_string());
        put("r_l", self.r_l.to_string());
        put("r_u", self.r_u.to_string());
        put("alpha_mode", self.alpha_mode.to_string());
        put("lr", self.lr.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.map(|s| s.to_string()).unwrap_or_default());
        put("max_len", self.max_len.to_string());
        put("calibration_split", self.calibration_split.to_string());
        put("min_count", self.min_count.to_string());
        put("trainable_embeddings", self.trainable_embeddings.to_string());
        put("include_embedding_params", self.include_embedding_params.to_string());
        put(
            "seq_len",
            self.seq_len.map(|s| s.to_string()).unwrap_or_else(|| "auto".into()),
        );
        put("split", join(&[self.split.0, self.split.1, self.split.2]));
        put("data", path(&self.data));
        put("dev_data", path(&self.dev_data));
        put("embeddings", path(&self.embeddings));
        put("classes", self.classes.to_string());
        put("n_per_class", self.n_per_class.to_string());
        put("vocab_per_class", self.vocab_per_class.to_string());
        put("noise", self.noise.to_string());
        m
    }

    pub fn to_kv_text(&self) -> String {
        self.echo().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses an echo back; `seed` is the one key allowed to be blank.
    pub fn from_echo(echo: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in echo {
            if k == "seed" && v.is_empty() {
                continue;
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (pass --seed)".into()))
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.model.to_string())
    }

    pub fn validate_training(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("max_len", self.max_len),
            ("min_count", self.min_count),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden_sizes must list positive layer widths".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be a non-negative number, got {}",
                self.lr
            )));
        }
        if self.seq_len == Some(0) {
            return Err(Error::Config("seq_len must be positive".into()));
        }
        Ok(())
    }
}
