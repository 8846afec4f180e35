//! Dataset generation, training and the Monte Carlo experiments.
//!
//! Trial `t` always draws `(H, s, w)` from stream `t` of the configured
//! seed, with the noise drawn at unit scale before scaling, so every
//! detector and every SNR sees the same channels, symbols and noise shapes.

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::complexity::{
    complexity_exponent, expected_complexity_dl, expected_complexity_fixed_radius, expected_complexity_spi, f_sb,
    inv_reg_lower_gamma,
};
use crate::dl_decoder::{bit_errors, mmse_detect, DlDecoder};
use crate::error::{Error, Result};
use crate::harness::config::{Detector, ExperimentConfig, TRIAL_STREAM_LIMIT};
use crate::harness::report::{write_csv, ComplexityRow, ResultRow, COMPLEXITY_HEADER, RESULT_HEADER};
use crate::mimo::{draw_observation, snr_linear, snr_to_sigma, Constellation, Observation};
use crate::radius_net::{gen_training_set, train, Dataset, RadiusModel};
use crate::sphere::{
    brute_force_mld, count_points_in_sphere, sdirs_decode_with, SdirsSchedule, SearchMode, SphereSearch,
};

const DATA_STREAM_BASE: u64 = 1 << 62;
const SAMPLE_STREAM_BASE: u64 = 1 << 61;

pub fn snr_tag(snr_db: f64) -> String {
    format!("{snr_db}")
}

pub fn dataset_path(cfg: &ExperimentConfig, snr_db: f64) -> PathBuf {
    cfg.out_dir.join(format!("dataset_snr{}.json", snr_tag(snr_db)))
}

pub fn model_path(cfg: &ExperimentConfig, q: usize, snr_db: f64) -> PathBuf {
    cfg.out_dir.join(format!("model_q{q}_snr{}.json", snr_tag(snr_db)))
}

pub fn train_log_path(cfg: &ExperimentConfig, q: usize, snr_db: f64) -> PathBuf {
    cfg.out_dir.join(format!("train_log_q{q}_snr{}.csv", snr_tag(snr_db)))
}

pub fn ber_csv_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join(format!("ber_q{}.csv", cfg.q))
}

pub fn complexity_csv_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join(format!("complexity_q{}.csv", cfg.q))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The observation of trial `t`.
pub fn trial_observation(cfg: &ExperimentConfig, k: &Constellation, sigma_w2: f64, t: u64) -> Result<Observation> {
    debug_assert!(t < TRIAL_STREAM_LIMIT);
    draw_observation(&mut stream_rng(cfg.seed, t), k, cfg.n, cfg.m, sigma_w2)
}

fn sigma_for(cfg: &ExperimentConfig, k: &Constellation, snr_db: f64) -> f64 {
    snr_to_sigma(snr_db, cfg.m, k.avg_power())
}

fn train_seed(seed: u64, snr_index: usize, q: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((snr_index as u64) << 32 | q as u64)
}

/// Generates one labelled dataset per SNR.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let k = cfg.constellation()?;
    cfg.snr_grid_db
        .par_iter()
        .enumerate()
        .map(|(i, &snr)| {
            let mut rng = stream_rng(cfg.seed, DATA_STREAM_BASE + i as u64);
            let ds = gen_training_set(cfg.n, cfg.m, &k, snr, cfg.train_n, cfg.label_q, &mut rng)?;
            let path = dataset_path(cfg, snr);
            ds.save(&path)?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub snr_db: f64,
    pub model_path: PathBuf,
    pub log_path: PathBuf,
    pub final_loss: f64,
}

/// Trains a model for every SNR from its dataset, truncated to `q` radii.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<TrainSummary>> {
    cfg.validate()?;
    cfg.snr_grid_db
        .par_iter()
        .enumerate()
        .map(|(i, &snr)| {
            let path = dataset_path(cfg, snr);
            let ds = Dataset::load(&path)?;
            if ds.n != cfg.n || ds.m != cfg.m || ds.constellation_order != cfg.constellation_order {
                return Err(Error::Shape(format!("{} does not match the configured system", path.display())));
            }
            let ds = if ds.q == cfg.q { ds } else { ds.truncate_q(cfg.q)? };
            let out = train(&ds, &cfg.train_config(train_seed(cfg.seed, i, cfg.q)))?;
            let model_path = model_path(cfg, cfg.q, snr);
            out.model.save(&model_path)?;
            let log_path = train_log_path(cfg, cfg.q, snr);
            write_csv(
                &log_path,
                "batch,loss",
                out.batch_losses
                    .iter()
                    .enumerate()
                    .map(|(b, l)| format!("{b},{}", crate::harness::report::fmt_f64(*l))),
            )?;
            Ok(TrainSummary {
                snr_db: snr,
                model_path,
                log_path,
                final_loss: out.batch_losses.last().copied().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Per-trial outcome of one detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub bit_errors: u32,
    pub flops: Option<u64>,
    pub time: f64,
    pub points: Option<u64>,
    pub fallback: bool,
}

struct Detectors<'a> {
    k: Constellation,
    schedule: SdirsSchedule,
    dl: Option<DlDecoder<'a>>,
    snr_linear: f64,
    mld_budget: u128,
    f_sb: u64,
}

impl Detectors<'_> {
    fn run(&self, det: Detector, obs: &Observation) -> Result<Outcome> {
        let start = Instant::now();
        let (solution, flops, radius, fallback) = match det {
            Detector::Mld => (brute_force_mld(obs, &self.k, self.mld_budget)?.solution, None, None, false),
            Detector::Sdirs => {
                let search = SphereSearch::new(obs, &self.k)?;
                let o = sdirs_decode_with(&search, &self.schedule, SearchMode::SchnorrEuchner)?;
                (o.solution, Some(o.flops), Some(o.radius), false)
            }
            Detector::Dlsd => {
                let dl = self.dl.as_ref().expect("model loaded for dlsd");
                let r = dl.decode(obs)?;
                let radius = r.accepting_radius();
                let fallback = r.is_fallback();
                (r.solution, Some(r.flops), radius, fallback)
            }
            Detector::Mmse => (mmse_detect(obs, &self.k, self.snr_linear)?, Some(self.f_sb), None, false),
        };
        let time = start.elapsed().as_secs_f64();
        let points = radius.map(|r| count_points_in_sphere(obs, &self.k, r)).transpose()?;
        Ok(Outcome {
            bit_errors: bit_errors(obs, &self.k, &solution)? as u32,
            flops,
            time,
            points,
            fallback,
        })
    }
}

#[derive(Debug, Default, Clone)]
struct Accum {
    trials: u64,
    bit_errors: u64,
    flops_sum: u128,
    flops_max: u64,
    flops_seen: bool,
    time_sum: f64,
    time_max: f64,
    points_sum: u64,
    points_n: u64,
    fallbacks: u64,
}

impl Accum {
    fn add(&mut self, o: &Outcome) {
        self.trials += 1;
        self.bit_errors += u64::from(o.bit_errors);
        if let Some(f) = o.flops {
            self.flops_seen = true;
            self.flops_sum += u128::from(f);
            self.flops_max = self.flops_max.max(f);
        }
        self.time_sum += o.time;
        self.time_max = self.time_max.max(o.time);
        if let Some(p) = o.points {
            self.points_sum += p;
            self.points_n += 1;
        }
        self.fallbacks += u64::from(o.fallback);
    }

    fn avg_flops(&self) -> Option<f64> {
        self.flops_seen.then(|| self.flops_sum as f64 / self.trials as f64)
    }

    fn avg_points(&self) -> Option<f64> {
        (self.points_n > 0).then(|| self.points_sum as f64 / self.points_n as f64)
    }
}

/// Per-trial bit errors of one detector at one SNR, in trial order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub snr_db: f64,
    pub detector: Detector,
    pub outcomes: Vec<Outcome>,
}

impl Trace {
    pub fn bit_errors(&self) -> Vec<u32> {
        self.outcomes.iter().map(|o| o.bit_errors).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerReport {
    pub rows: Vec<ResultRow>,
    pub traces: Vec<Trace>,
}

fn load_model(cfg: &ExperimentConfig, snr: f64) -> Result<RadiusModel> {
    let path = model_path(cfg, cfg.q, snr);
    let model = RadiusModel::load(&path)?;
    if model.n != cfg.n || model.m != cfg.m || model.constellation_order != cfg.constellation_order || model.q != cfg.q {
        return Err(Error::Shape(format!("{} does not match the configured system", path.display())));
    }
    Ok(model)
}

fn run_trials(
    cfg: &ExperimentConfig,
    detectors: &[Detector],
    snr: f64,
    model: Option<&RadiusModel>,
) -> Result<Vec<Trace>> {
    let k = cfg.constellation()?;
    let sigma = sigma_for(cfg, &k, snr);
    let gamma = snr_linear(snr);
    let ctx = Detectors {
        schedule: SdirsSchedule::new(cfg.n, cfg.sdirs_max_rounds)?,
        dl: model.map(|m| DlDecoder::new(m, gamma)).transpose()?,
        snr_linear: gamma,
        mld_budget: u128::from(cfg.mld_budget),
        f_sb: f_sb(cfg.m, cfg.n),
        k,
    };
    let per_trial: Vec<Vec<Outcome>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let obs = trial_observation(cfg, &ctx.k, sigma, t)?;
            detectors.iter().map(|&d| ctx.run(d, &obs)).collect()
        })
        .collect::<Result<_>>()?;
    Ok(detectors
        .iter()
        .enumerate()
        .map(|(j, &d)| Trace {
            snr_db: snr,
            detector: d,
            outcomes: per_trial.iter().map(|o| o[j]).collect(),
        })
        .collect())
}

fn summarize(trace: &Trace, cfg: &ExperimentConfig, bits_per_trial: u64) -> ResultRow {
    let mut a = Accum::default();
    trace.outcomes.iter().for_each(|o| a.add(o));
    let avg_flops = a.avg_flops();
    ResultRow {
        snr_db: trace.snr_db,
        detector: trace.detector,
        ber: a.bit_errors as f64 / (a.trials * bits_per_trial) as f64,
        avg_flops,
        max_flops: a.flops_seen.then_some(a.flops_max),
        avg_time: a.time_sum / a.trials as f64,
        max_time: a.time_max,
        avg_points_in_sphere: a.avg_points(),
        fallback_rate: (trace.detector == Detector::Dlsd).then(|| a.fallbacks as f64 / a.trials as f64),
        e_c: avg_flops.map(|c| complexity_exponent(c, cfg.m)),
    }
}

/// Monte Carlo BER of every configured detector at every SNR.
pub fn run_ber(cfg: &ExperimentConfig) -> Result<BerReport> {
    cfg.validate()?;
    let k = cfg.constellation()?;
    let bits_per_trial = cfg.m as u64 * u64::from(k.bits_per_symbol());
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for &snr in &cfg.snr_grid_db {
        let model = if cfg.has(Detector::Dlsd) {
            Some(load_model(cfg, snr)?)
        } else {
            None
        };
        for trace in run_trials(cfg, &cfg.detectors, snr, model.as_ref())? {
            rows.push(summarize(&trace, cfg, bits_per_trial));
            traces.push(trace);
        }
    }
    Ok(BerReport { rows, traces })
}

pub fn cmd_ber(cfg: &ExperimentConfig) -> Result<(PathBuf, BerReport)> {
    let report = run_ber(cfg)?;
    let path = ber_csv_path(cfg);
    write_csv(&path, RESULT_HEADER, report.rows.iter().map(ResultRow::to_csv))?;
    Ok((path, report))
}

/// Radius of the fixed validation sphere: `σ_w² · P⁻¹(n, coverage)`.
pub fn fixed_radius(n: usize, sigma_w2: f64, coverage: f64) -> f64 {
    (sigma_w2 * inv_reg_lower_gamma(coverage, n as u32)).sqrt()
}

/// Empirical fixed-radius search without radius tightening: flops and
/// in-sphere point counts, in trial order.
pub fn fixed_radius_trials(cfg: &ExperimentConfig, snr: f64, radius: f64) -> Result<Vec<Outcome>> {
    let k = cfg.constellation()?;
    let sigma = sigma_for(cfg, &k, snr);
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let obs = trial_observation(cfg, &k, sigma, t)?;
            let search = SphereSearch::new(&obs, &k)?;
            let start = Instant::now();
            let out = search.decode(radius, SearchMode::FinckePohst);
            let time = start.elapsed().as_secs_f64();
            let bit_errors = match &out.solution {
                Some(s) => bit_errors(&obs, &k, s)? as u32,
                None => 0,
            };
            Ok(Outcome {
                bit_errors,
                flops: Some(out.flops),
                time,
                points: Some(search.count_within(radius)),
                fallback: out.solution.is_none(),
            })
        })
        .collect()
}

/// Network radius vectors for `count` fresh observations, post-processed
/// as the decoder would use them.
pub fn sample_radius_vectors(
    cfg: &ExperimentConfig,
    model: &RadiusModel,
    snr: f64,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    let k = cfg.constellation()?;
    let sigma = sigma_for(cfg, &k, snr);
    let dec = DlDecoder::new(model, snr_linear(snr))?;
    (0..count as u64)
        .into_par_iter()
        .map(|u| {
            let obs = draw_observation(&mut stream_rng(cfg.seed, SAMPLE_STREAM_BASE + u), &k, cfg.n, cfg.m, sigma)?;
            dec.radii(&obs)
        })
        .collect()
}

fn complexity_row(snr: f64, name: &str, trace: &[Outcome], analytic: f64, m: usize) -> ComplexityRow {
    let mut a = Accum::default();
    trace.iter().for_each(|o| a.add(o));
    let avg = a.avg_flops().unwrap_or(0.0);
    ComplexityRow {
        snr_db: snr,
        detector: name.to_string(),
        avg_flops: avg,
        max_flops: a.flops_max,
        avg_time: a.time_sum / a.trials as f64,
        max_time: a.time_max,
        avg_points_in_sphere: a.avg_points().unwrap_or(0.0),
        analytic_flops: analytic,
        e_c_empirical: complexity_exponent(avg, m),
        e_c_analytic: complexity_exponent(analytic, m),
        flops_ratio_vs_sdirs: None,
        time_ratio_vs_sdirs: None,
    }
}

/// Empirical and analytic complexity per SNR for the fixed-radius search,
/// SDIRS and the learned decoder.
pub fn run_complexity(cfg: &ExperimentConfig) -> Result<Vec<ComplexityRow>> {
    cfg.validate()?;
    let k = cfg.constellation()?;
    let schedule = SdirsSchedule::new(cfg.n, cfg.sdirs_max_rounds)?;
    let mut rows = Vec::new();
    for &snr in &cfg.snr_grid_db {
        let sigma = sigma_for(cfg, &k, snr);
        let d = fixed_radius(cfg.n, sigma, cfg.fp_coverage);
        let fp = fixed_radius_trials(cfg, snr, d)?;
        let fp_analytic = expected_complexity_fixed_radius(cfg.m, cfg.n, sigma, d, &k)?;
        rows.push(complexity_row(snr, "fp", &fp, fp_analytic, cfg.m));

        let model = load_model(cfg, snr)?;
        let traces = run_trials(cfg, &[Detector::Sdirs, Detector::Dlsd], snr, Some(&model))?;
        let sdirs_radii: Vec<f64> = (1..=schedule.max_rounds()).map(|i| schedule.radius(i, sigma)).collect();
        let sdirs_analytic = expected_complexity_spi(cfg.m, cfg.n, sigma, &sdirs_radii, &k)?;
        let samples = sample_radius_vectors(cfg, &model, snr, cfg.complexity_samples)?;
        let dl_analytic = expected_complexity_dl(&samples, cfg.m, cfg.n, sigma, &k, &model.params.layer_dims)?;

        let sd = complexity_row(snr, "sdirs", &traces[0].outcomes, sdirs_analytic, cfg.m);
        let mut dl = complexity_row(snr, "dlsd", &traces[1].outcomes, dl_analytic, cfg.m);
        dl.flops_ratio_vs_sdirs = Some(dl.avg_flops / sd.avg_flops);
        dl.time_ratio_vs_sdirs = Some(dl.avg_time / sd.avg_time);
        rows.push(sd);
        rows.push(dl);
    }
    Ok(rows)
}

pub fn cmd_complexity(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<ComplexityRow>)> {
    let rows = run_complexity(cfg)?;
    let path = complexity_csv_path(cfg);
    write_csv(&path, COMPLEXITY_HEADER, rows.iter().map(ComplexityRow::to_csv))?;
    Ok((path, rows))
}
