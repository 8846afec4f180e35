//! Learned-radius sphere decoding: predict `q` radii, search each in
//! ascending order, fall back to MMSE when every sphere is empty.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::{f_dn, f_sb};
use crate::error::{Error, Result};
use crate::mimo::{stack_input, Constellation, Observation};
use crate::radius_net::RadiusModel;
use crate::sphere::{babai_distance, count_points_in_sphere, SearchMode, SphereSearch, RADIUS_FLOOR};

/// Linear MMSE estimate `(HᴴH + γ̄⁻¹ I)⁻¹ Hᴴ y`, rounded per real dimension
/// to the nearest (clamped) constellation level. `snr_linear = ∞` gives
/// zero forcing.
pub fn mmse_detect(obs: &Observation, constellation: &Constellation, snr_linear: f64) -> Result<Vec<usize>> {
    if !(snr_linear > 0.0) {
        return Err(Error::Invalid(format!("snr_linear must be > 0, got {snr_linear}")));
    }
    obs.validate()?;
    let hh = obs.h.adjoint();
    let mut gram = &hh * &obs.h;
    let reg = Complex64::new(1.0 / snr_linear, 0.0);
    for i in 0..gram.nrows() {
        gram[(i, i)] += reg;
    }
    let rhs = &hh * &obs.y;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("regularized Gram matrix is not positive definite".into()))?;
    let est = chol.solve(&rhs);
    Ok(est.iter().map(|&c| constellation.nearest(c)).collect())
}

/// Which detector produced the pipeline's answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodePath {
    /// Sphere decoding succeeded in round `c` (1-based).
    Sphere(usize),
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub solution: Vec<usize>,
    pub path: DecodePath,
    /// Post-processed radii, nondecreasing.
    pub radii_used: Vec<f64>,
    /// Visited nodes per complex depth, summed over attempted rounds.
    pub visited: Vec<u64>,
    /// Network, sphere-search and fallback operations.
    pub flops: u64,
    pub sphere_calls: usize,
}

impl PipelineResult {
    pub fn accepting_radius(&self) -> Option<f64> {
        match self.path {
            DecodePath::Sphere(c) => Some(self.radii_used[c - 1]),
            DecodePath::Fallback => None,
        }
    }

    pub fn is_fallback(&self) -> bool {
        self.path == DecodePath::Fallback
    }
}

/// Predict radii, try them in ascending order, fall back to MMSE.
pub struct DlDecoder<'a> {
    model: &'a RadiusModel,
    constellation: Constellation,
    snr_linear: f64,
    f_dn: u64,
    f_sb: u64,
}

impl<'a> DlDecoder<'a> {
    /// `snr_linear` is the average SNR handed to the MMSE fallback.
    pub fn new(model: &'a RadiusModel, snr_linear: f64) -> Result<Self> {
        model.validate()?;
        if !(snr_linear > 0.0) {
            return Err(Error::Invalid(format!("snr_linear must be > 0, got {snr_linear}")));
        }
        Ok(Self {
            model,
            constellation: Constellation::new(model.constellation_order)?,
            snr_linear,
            f_dn: f_dn(&model.params.layer_dims),
            f_sb: f_sb(model.m, model.n),
        })
    }

    pub fn model(&self) -> &RadiusModel {
        self.model
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    /// Sorted, floored radii; non-finite predictions become the Babai distance.
    pub fn radii(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut radii = self.model.predict(&stack_input(obs))?;
        if radii.iter().any(|r| !r.is_finite()) {
            let babai = babai_distance(obs, &self.constellation)?;
            radii.iter_mut().filter(|r| !r.is_finite()).for_each(|r| *r = babai);
        }
        radii.iter_mut().for_each(|r| *r = r.max(RADIUS_FLOOR));
        radii.sort_by(f64::total_cmp);
        Ok(radii)
    }

    pub fn decode(&self, obs: &Observation) -> Result<PipelineResult> {
        if obs.n() != self.model.n || obs.m() != self.model.m {
            return Err(Error::Shape(format!(
                "model is for {}x{}, observation is {}x{}",
                self.model.n,
                self.model.m,
                obs.n(),
                obs.m()
            )));
        }
        let radii = self.radii(obs)?;
        self.decode_with_radii(obs, radii)
    }

    /// Runs the rounds on caller-supplied radii (sorted and floored here).
    pub fn decode_with_radii(&self, obs: &Observation, mut radii: Vec<f64>) -> Result<PipelineResult> {
        radii.iter_mut().for_each(|r| *r = r.max(RADIUS_FLOOR));
        radii.sort_by(f64::total_cmp);
        let search = SphereSearch::new(obs, &self.constellation)?;
        let mut visited = vec![0u64; obs.m()];
        let mut flops = self.f_dn;
        for (c, &r) in radii.iter().enumerate() {
            let out = search.decode(r, SearchMode::SchnorrEuchner);
            for (t, v) in visited.iter_mut().zip(&out.visited) {
                *t += v;
            }
            flops += out.flops;
            if let Some(solution) = out.solution {
                return Ok(PipelineResult {
                    solution,
                    path: DecodePath::Sphere(c + 1),
                    radii_used: radii,
                    visited,
                    flops,
                    sphere_calls: c + 1,
                });
            }
        }
        let sphere_calls = radii.len();
        Ok(PipelineResult {
            solution: mmse_detect(obs, &self.constellation, self.snr_linear)?,
            path: DecodePath::Fallback,
            radii_used: radii,
            visited,
            flops: flops + self.f_sb,
            sphere_calls,
        })
    }
}

/// Single-shot form of [`DlDecoder::decode`].
pub fn dl_sphere_decode(obs: &Observation, model: &RadiusModel, snr_linear: f64) -> Result<PipelineResult> {
    DlDecoder::new(model, snr_linear)?.decode(obs)
}

/// Exact-integer totals over a batch; merging is associative.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchStats {
    pub trials: u64,
    pub bit_errors: u64,
    pub bits: u64,
    pub fallbacks: u64,
    pub flops_sum: u128,
    pub flops_max: u64,
    /// Trials that ended inside a sphere.
    pub sphere_trials: u64,
    pub points_in_sphere_sum: u64,
}

impl BatchStats {
    pub fn merge(&mut self, other: &Self) {
        self.trials += other.trials;
        self.bit_errors += other.bit_errors;
        self.bits += other.bits;
        self.fallbacks += other.fallbacks;
        self.flops_sum += other.flops_sum;
        self.flops_max = self.flops_max.max(other.flops_max);
        self.sphere_trials += other.sphere_trials;
        self.points_in_sphere_sum += other.points_in_sphere_sum;
    }

    pub fn ber(&self) -> f64 {
        ratio(self.bit_errors as f64, self.bits)
    }

    pub fn fallback_rate(&self) -> f64 {
        ratio(self.fallbacks as f64, self.trials)
    }

    pub fn mean_flops(&self) -> f64 {
        ratio(self.flops_sum as f64, self.trials)
    }

    /// Mean lattice points inside the accepting sphere, over non-fallback trials.
    pub fn mean_points_in_sphere(&self) -> f64 {
        ratio(self.points_in_sphere_sum as f64, self.sphere_trials)
    }
}

fn ratio(num: f64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

/// Bit errors of `solution` against the observation's transmitted vector.
pub fn bit_errors(obs: &Observation, constellation: &Constellation, solution: &[usize]) -> Result<u64> {
    let truth = obs
        .truth_indices(constellation)
        .ok_or_else(|| Error::Invalid("observation carries no transmitted vector".into()))?;
    Ok(truth
        .iter()
        .zip(solution)
        .map(|(&a, &b)| u64::from(constellation.bit_errors(a, b)))
        .sum())
}

/// Statistics of one decoded trial.
pub fn trial_stats(obs: &Observation, constellation: &Constellation, result: &PipelineResult) -> Result<BatchStats> {
    let (sphere_trials, points) = match result.accepting_radius() {
        Some(r) => (1, count_points_in_sphere(obs, constellation, r)?),
        None => (0, 0),
    };
    Ok(BatchStats {
        trials: 1,
        bit_errors: bit_errors(obs, constellation, &result.solution)?,
        bits: (obs.m() as u64) * u64::from(constellation.bits_per_symbol()),
        fallbacks: u64::from(result.is_fallback()),
        flops_sum: u128::from(result.flops),
        flops_max: result.flops,
        sphere_trials,
        points_in_sphere_sum: points,
    })
}

/// Decodes every observation (in parallel) and aggregates against the truth.
pub fn decode_batch(observations: &[Observation], decoder: &DlDecoder<'_>) -> Result<(Vec<PipelineResult>, BatchStats)> {
    let per: Vec<(PipelineResult, BatchStats)> = observations
        .par_iter()
        .map(|obs| {
            let r = decoder.decode(obs)?;
            let s = trial_stats(obs, decoder.constellation(), &r)?;
            Ok((r, s))
        })
        .collect::<Result<_>>()?;
    let mut stats = BatchStats::default();
    let mut results = Vec::with_capacity(per.len());
    for (r, s) in per {
        stats.merge(&s);
        results.push(r);
    }
    Ok((results, stats))
}
