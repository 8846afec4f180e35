//! Single-shot decoding of an observation file with a trained model.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dl_decoder::{bit_errors, DecodePath, DlDecoder};
use crate::error::{Error, Result};
use crate::mimo::{Constellation, Observation};
use crate::radius_net::{read_json, RadiusModel};

pub const RECORD_VERSION: u32 = 1;

/// `[re, im]`
pub type ComplexPair = [f64; 2];

/// On-disk observation: `h` as rows of complex pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationFile {
    pub h: Vec<Vec<ComplexPair>>,
    pub y: Vec<ComplexPair>,
    pub sigma_w2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<ComplexPair>>,
    /// Average SNR for the MMSE fallback; derived from `sigma_w2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

fn pair(c: Complex64) -> ComplexPair {
    [c.re, c.im]
}

fn field(name: &str, why: impl std::fmt::Display) -> Error {
    Error::Invalid(format!("field `{name}`: {why}"))
}

impl ObservationFile {
    pub fn from_observation(obs: &Observation) -> Self {
        Self {
            h: (0..obs.n()).map(|u| obs.h.row(u).iter().map(|&c| pair(c)).collect()).collect(),
            y: obs.y.iter().map(|&c| pair(c)).collect(),
            sigma_w2: obs.sigma_w2,
            truth: obs.truth.as_ref().map(|t| t.iter().map(|&c| pair(c)).collect()),
            snr_db: None,
        }
    }

    pub fn to_observation(&self) -> Result<Observation> {
        let n = self.h.len();
        if n == 0 {
            return Err(field("h", "must have at least one row"));
        }
        let m = self.h[0].len();
        if m == 0 || self.h.iter().any(|r| r.len() != m) {
            return Err(field("h", "rows must be nonempty and of equal length"));
        }
        if n < m {
            return Err(field("h", format!("{n} rows < {m} columns")));
        }
        if self.y.len() != n {
            return Err(field("y", format!("length {} but h has {n} rows", self.y.len())));
        }
        if !(self.sigma_w2 >= 0.0 && self.sigma_w2.is_finite()) {
            return Err(field("sigma_w2", "must be finite and >= 0"));
        }
        let all = self.h.iter().flatten().chain(&self.y).chain(self.truth.iter().flatten());
        if all.flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("fields `h`, `y`, `truth`: entries must be finite".into()));
        }
        let c = |p: &ComplexPair| Complex64::new(p[0], p[1]);
        let h = DMatrix::from_fn(n, m, |u, v| c(&self.h[u][v]));
        let y = DVector::from_iterator(n, self.y.iter().map(c));
        let truth = match &self.truth {
            Some(t) if t.len() != m => return Err(field("truth", format!("length {} but h has {m} columns", t.len()))),
            Some(t) => Some(DVector::from_iterator(m, t.iter().map(c))),
            None => None,
        };
        Observation::new(h, y, self.sigma_w2, truth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeRecord {
    pub version: u32,
    pub solution: Vec<ComplexPair>,
    pub indices: Vec<usize>,
    pub path: DecodePath,
    pub radii: Vec<f64>,
    pub flops: u64,
    pub visited: Vec<u64>,
    pub dist2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_errors: Option<u64>,
}

pub fn load_observation(path: &Path) -> Result<ObservationFile> {
    let file: ObservationFile = read_json(path)?;
    file.to_observation().map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })?;
    Ok(file)
}

/// Decodes `obs` with `model`.
pub fn decode_record(model: &RadiusModel, file: &ObservationFile) -> Result<DecodeRecord> {
    let obs = file.to_observation()?;
    let k = Constellation::new(model.constellation_order)?;
    obs.validate_truth(&k)?;
    let snr = match file.snr_db {
        Some(db) => 10f64.powf(db / 10.0),
        None if obs.sigma_w2 > 0.0 => obs.m() as f64 * k.avg_power() / obs.sigma_w2,
        None => f64::INFINITY,
    };
    let out = DlDecoder::new(model, snr)?.decode(&obs)?;
    let errors = match obs.truth {
        Some(_) => Some(bit_errors(&obs, &k, &out.solution)?),
        None => None,
    };
    Ok(DecodeRecord {
        version: RECORD_VERSION,
        solution: out.solution.iter().map(|&i| pair(k.point(i))).collect(),
        dist2: obs.distance2_indices(&k, &out.solution),
        indices: out.solution,
        path: out.path,
        radii: out.radii_used,
        flops: out.flops,
        visited: out.visited,
        bit_errors: errors,
    })
}

/// Loads both files and decodes.
pub fn cmd_decode(model_path: &Path, observation_path: &Path) -> Result<DecodeRecord> {
    let model = RadiusModel::load(model_path)?;
    let file = load_observation(observation_path)?;
    decode_record(&model, &file).map_err(|e| match e {
        Error::Shape(message) | Error::Invalid(message) => Error::Parse {
            path: observation_path.into(),
            message,
        },
        other => other,
    })
}
