//! Flat, versioned TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mimo::Constellation;
use crate::radius_net::TrainConfig;
use crate::sphere::DEFAULT_BUDGET;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Mld,
    Sdirs,
    Dlsd,
    Mmse,
}

impl Detector {
    pub fn as_str(self) -> &'static str {
        match self {
            Detector::Mld => "mld",
            Detector::Sdirs => "sdirs",
            Detector::Dlsd => "dlsd",
            Detector::Mmse => "mmse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub n: usize,
    pub m: usize,
    pub constellation_order: u32,
    pub snr_grid_db: Vec<f64>,
    /// Radii per decode for the learned decoder.
    pub q: usize,
    /// Radii labelled per training example; at least `q`.
    pub label_q: usize,
    pub trials: u64,
    pub seed: u64,
    pub detectors: Vec<Detector>,
    pub sdirs_max_rounds: usize,
    pub mld_budget: u64,
    /// Radius vectors sampled for the analytic learned-decoder complexity.
    pub complexity_samples: usize,
    /// Probability that the fixed validation sphere contains the transmitted point.
    pub fp_coverage: f64,
    pub train_n: usize,
    pub train_batch: usize,
    pub train_epochs: usize,
    pub train_eta: f64,
    pub train_beta1: f64,
    pub train_beta2: f64,
    pub train_eps: f64,
    pub train_hidden: Vec<usize>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            version: CONFIG_VERSION,
            n: 4,
            m: 4,
            constellation_order: 16,
            snr_grid_db: (0..10).map(|i| 8.0 + 2.0 * f64::from(i)).collect(),
            q: 10,
            label_q: 10,
            trials: 100_000,
            seed: 1,
            detectors: vec![Detector::Sdirs, Detector::Dlsd, Detector::Mmse],
            sdirs_max_rounds: 500,
            mld_budget: DEFAULT_BUDGET as u64,
            complexity_samples: 1000,
            fp_coverage: 0.99,
            train_n: 20_000,
            train_batch: t.batch_size,
            train_epochs: t.epochs,
            train_eta: t.eta,
            train_beta1: t.beta1,
            train_beta2: t.beta2,
            train_eps: t.eps,
            train_hidden: t.hidden,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn bad(field: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("field `{field}`: {why}"))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let table: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        if !table.contains_key("version") {
            return Err(parse_err("missing field `version`".into()));
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn constellation(&self) -> Result<Constellation> {
        Constellation::new(self.constellation_order)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.train_hidden.clone(),
            batch_size: self.train_batch,
            epochs: self.train_epochs,
            eta: self.train_eta,
            beta1: self.train_beta1,
            beta2: self.train_beta2,
            eps: self.train_eps,
            seed,
        }
    }

    pub fn has(&self, d: Detector) -> bool {
        self.detectors.contains(&d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(bad("version", format!("expected {CONFIG_VERSION}, found {}", self.version)));
        }
        if self.m == 0 {
            return Err(bad("m", "must be >= 1"));
        }
        if self.n < self.m {
            return Err(bad("n", format!("must be >= m = {}", self.m)));
        }
        let k = Constellation::new(self.constellation_order)
            .map_err(|_| bad("constellation_order", "must be 4, 16 or 64"))?;
        if self.snr_grid_db.is_empty() {
            return Err(bad("snr_grid_db", "must not be empty"));
        }
        if self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(bad("snr_grid_db", "entries must be finite"));
        }
        if self.q == 0 {
            return Err(bad("q", "must be >= 1"));
        }
        if self.label_q < self.q {
            return Err(bad("label_q", format!("must be >= q = {}", self.q)));
        }
        if self.trials == 0 {
            return Err(bad("trials", "must be >= 1"));
        }
        if self.trials >= TRIAL_STREAM_LIMIT {
            return Err(bad("trials", "too large"));
        }
        if self.detectors.is_empty() {
            return Err(bad("detectors", "must not be empty"));
        }
        let mut seen = self.detectors.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.detectors.len() {
            return Err(bad("detectors", "duplicate entry"));
        }
        if self.has(Detector::Mld) {
            let total = u128::from(k.order()).saturating_pow(self.m as u32);
            if total > u128::from(self.mld_budget) {
                return Err(bad(
                    "detectors",
                    format!("mld needs {total} candidates, above mld_budget = {}", self.mld_budget),
                ));
            }
        }
        if self.sdirs_max_rounds == 0 {
            return Err(bad("sdirs_max_rounds", "must be >= 1"));
        }
        if self.complexity_samples == 0 {
            return Err(bad("complexity_samples", "must be >= 1"));
        }
        if !(self.fp_coverage > 0.0 && self.fp_coverage < 1.0) {
            return Err(bad("fp_coverage", "must lie in (0, 1)"));
        }
        if self.train_n == 0 {
            return Err(bad("train_n", "must be >= 1"));
        }
        if self.train_batch == 0 || self.train_batch > self.train_n {
            return Err(bad("train_batch", format!("must be in 1..={}", self.train_n)));
        }
        if !(self.train_eta > 0.0) {
            return Err(bad("train_eta", "must be > 0"));
        }
        for (name, b) in [("train_beta1", self.train_beta1), ("train_beta2", self.train_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(bad(name, "must lie in [0, 1)"));
            }
        }
        if !(self.train_eps > 0.0) {
            return Err(bad("train_eps", "must be > 0"));
        }
        if self.train_hidden.contains(&0) {
            return Err(bad("train_hidden", "layer sizes must be >= 1"));
        }
        Ok(())
    }
}

/// Trial streams stay below this; higher streams are reserved for
/// dataset generation and complexity sampling.
pub const TRIAL_STREAM_LIMIT: u64 = 1 << 60;
