use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::StreamSpec;
use crate::error::{Error, Result};

/// Training recipe plus retrieval strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "FT")]
    Ft,
    #[serde(rename = "FT+KD")]
    FtKd,
    #[serde(rename = "FT+QDC")]
    FtQdc,
    #[serde(rename = "FT+KD+QDC")]
    FtKdQdc,
    #[serde(rename = "FT+REINDEX")]
    FtReindex,
    #[serde(rename = "FT+KD+REINDEX")]
    FtKdReindex,
}

/// How old-task queries reach an index built by an older model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Plain,
    Qdc,
    Reindex,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ft,
        Method::FtKd,
        Method::FtQdc,
        Method::FtKdQdc,
        Method::FtReindex,
        Method::FtKdReindex,
    ];

    pub fn kd(self) -> bool {
        matches!(self, Method::FtKd | Method::FtKdQdc | Method::FtKdReindex)
    }

    pub fn strategy(self) -> Strategy {
        match self {
            Method::Ft | Method::FtKd => Strategy::Plain,
            Method::FtQdc | Method::FtKdQdc => Strategy::Qdc,
            Method::FtReindex | Method::FtKdReindex => Strategy::Reindex,
        }
    }

    pub fn from_parts(kd: bool, strategy: Strategy) -> Self {
        match (kd, strategy) {
            (false, Strategy::Plain) => Method::Ft,
            (true, Strategy::Plain) => Method::FtKd,
            (false, Strategy::Qdc) => Method::FtQdc,
            (true, Strategy::Qdc) => Method::FtKdQdc,
            (false, Strategy::Reindex) => Method::FtReindex,
            (true, Strategy::Reindex) => Method::FtKdReindex,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Ft => "FT",
            Method::FtKd => "FT+KD",
            Method::FtQdc => "FT+QDC",
            Method::FtKdQdc => "FT+KD+QDC",
            Method::FtReindex => "FT+REINDEX",
            Method::FtKdReindex => "FT+KD+REINDEX",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "+");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab: usize,
    pub dim: usize,
    pub temperature: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab: 32768,
            dim: 64,
            temperature: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub hard_negatives: usize,
    pub epochs: usize,
    /// At most this many training queries feed each drift estimate.
    pub drift_sample_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.3,
            weight_decay: 0.01,
            batch_size: 128,
            hard_negatives: 7,
            epochs: 1,
            drift_sample_cap: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub multi_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: 10, multi_k: 1 }
    }
}

/// Where task datasets come from: a synthetic stream or BEIR directories
/// (one per task, in task order).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synthetic: StreamSpec,
    pub beir: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random draw, including synthetic data.
    pub seed: u64,
    pub method: Method,
    pub out: PathBuf,
    pub run_id: String,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub retrieval: RetrievalConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            method: Method::Ft,
            out: PathBuf::from("out"),
            run_id: "default".into(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            retrieval: RetrievalConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative dataset paths are taken from the config's directory
        let dir = std::path::absolute(path)
            .map_err(|e| Error::io(path, e))?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        for p in &mut cfg.data.beir {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.encoder.vocab == 0 || self.encoder.dim == 0 {
            return fail("encoder vocab and dim must be positive");
        }
        if !(self.encoder.temperature > 0.0) {
            return fail("temperature must be positive");
        }
        if !(self.train.lr >= 0.0) || !(self.train.weight_decay >= 0.0) {
            return fail("lr and weight_decay must be non-negative");
        }
        if self.train.batch_size == 0 || self.train.drift_sample_cap == 0 {
            return fail("batch_size and drift_sample_cap must be positive");
        }
        if self.retrieval.k == 0 || self.retrieval.multi_k == 0 {
            return fail("k and multi_k must be at least 1");
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return fail("run_id must be a plain directory name");
        }
        Ok(())
    }

    /// The synthetic spec with its seed tied to the root seed.
    pub fn stream_spec(&self) -> StreamSpec {
        StreamSpec {
            seed: self.seed,
            ..self.data.synthetic.clone()
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.run_id)
    }
}
