//! Radius-bounded closest-point search over the skewed lattice `{H s}`,
//! together with the exhaustive ML oracle, the q-closest-distance label
//! oracle and increasing-radius (SDIRS) decoding.
//!
//! The search runs on the real embedding with columns interleaved as
//! `(Re s_1, Im s_1, ..., Re s_m, Im s_m)`, so that after QR the two real
//! levels `2k−1, 2k` counted from the bottom of the tree together fix the
//! `k`-th complex symbol from the end. `visited[k−1]` counts the partial
//! vectors at complex depth `k` that lie inside the sphere.

use nalgebra::DMatrix;

use crate::complexity::{f_sp, inv_reg_lower_gamma};
use crate::dl_decoder::mmse_detect;
use crate::error::{Error, Result};
use crate::mimo::{real_embedding, Constellation, Observation};

/// Smallest radius ever searched.
pub const RADIUS_FLOOR: f64 = 1e-9;

/// Relative slack on every `≤ r²` test, and the tie window for equal
/// distances (ties resolve to the lexicographically smaller index vector).
pub const REL_SLACK: f64 = 1e-10;

/// Default brute-force enumeration budget.
pub const DEFAULT_BUDGET: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    /// Children in order of increasing partial distance; the radius shrinks
    /// to the best leaf found so far.
    #[default]
    SchnorrEuchner,
    /// Children in natural order, fixed radius throughout.
    FinckePohst,
}

/// Result of one sphere search.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    /// Constellation point indices, or `None` when the sphere is empty.
    pub solution: Option<Vec<usize>>,
    /// `‖y − H s‖²` of the solution, recomputed directly.
    pub dist2: Option<f64>,
    pub visited: Vec<u64>,
    pub flops: u64,
}

impl DecodeOutcome {
    pub fn is_null(&self) -> bool {
        self.solution.is_none()
    }
}

/// Strictly increasing positive hypersphere radii.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusVector(Vec<f64>);

impl RadiusVector {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::Invalid("radius vector is empty".into()));
        }
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Invalid("radii must be finite and positive".into()));
        }
        if radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("radii must be strictly increasing".into()));
        }
        Ok(Self(radii))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Thin QR of a full-column-rank real matrix with `R_ii ≥ 0`.
pub fn qr_preprocess(h_r: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (rows, cols) = h_r.shape();
    if cols == 0 || rows < cols {
        return Err(Error::Dimension(format!("H_r is {rows}x{cols}; need rows >= cols >= 1")));
    }
    let qr = h_r.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |a, d| a.max(d.abs()));
    for i in 0..cols {
        let d = r[(i, i)];
        if !(d.abs() > 1e-12 * scale) {
            return Err(Error::SingularChannel { index: i, diag: d });
        }
        if d < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    Ok((q, r))
}

enum Leaf {
    Continue,
    Tighten(f64),
    Stop,
}

/// Triangularized form of one observation, reusable across radii.
pub struct SphereSearch<'a> {
    obs: &'a Observation,
    constellation: &'a Constellation,
    m: usize,
    dims: usize,
    levels: Vec<f64>,
    /// Row-major upper-triangular `dims × dims`.
    r: Vec<f64>,
    z: Vec<f64>,
    /// `‖y_r‖² − ‖Qᵀ y_r‖²`, the part of the distance no symbol choice can remove.
    resid: f64,
}

impl<'a> SphereSearch<'a> {
    pub fn new(obs: &'a Observation, constellation: &'a Constellation) -> Result<Self> {
        obs.validate()?;
        let m = obs.m();
        let dims = 2 * m;
        let emb = real_embedding(obs);
        let mut h_int = DMatrix::zeros(emb.h_r.nrows(), dims);
        for j in 0..m {
            h_int.set_column(2 * j, &emb.h_r.column(j));
            h_int.set_column(2 * j + 1, &emb.h_r.column(j + m));
        }
        let (q, r) = qr_preprocess(&h_int)?;
        let z = q.transpose() * &emb.y_r;
        let resid = (&emb.y_r - &q * &z).norm_squared();
        let mut r_flat = vec![0.0; dims * dims];
        for i in 0..dims {
            for j in i..dims {
                r_flat[i * dims + j] = r[(i, j)];
            }
        }
        Ok(Self {
            obs,
            constellation,
            m,
            dims,
            levels: constellation.real_levels().iter().map(|&l| f64::from(l)).collect(),
            r: r_flat,
            z: z.iter().copied().collect(),
            resid,
        })
    }

    pub fn observation(&self) -> &Observation {
        self.obs
    }

    /// Squared distance no lattice point can go below.
    pub fn residual(&self) -> f64 {
        self.resid
    }

    fn point_indices(&self, real_idx: &[usize]) -> Vec<usize> {
        let l = self.levels.len();
        real_idx.chunks(2).map(|p| p[0] * l + p[1]).collect()
    }

    fn partial_bound(&self, radius: f64) -> f64 {
        let r = radius.max(RADIUS_FLOOR);
        r * r * (1.0 + REL_SLACK) - self.resid
    }

    fn walk<F>(&self, bound: f64, zigzag: bool, visited: &mut [u64], leaf: &mut F)
    where
        F: FnMut(&[usize], f64) -> Leaf,
    {
        if bound < 0.0 {
            return;
        }
        let mut state = WalkState {
            bound,
            x: vec![0.0; self.dims],
            idx: vec![0; self.dims],
        };
        self.descend(self.dims - 1, 0.0, zigzag, &mut state, visited, leaf);
    }

    // Returns false once the leaf callback asks to stop.
    fn descend<F>(
        &self,
        coord: usize,
        partial: f64,
        zigzag: bool,
        st: &mut WalkState,
        visited: &mut [u64],
        leaf: &mut F,
    ) -> bool
    where
        F: FnMut(&[usize], f64) -> Leaf,
    {
        let row = &self.r[coord * self.dims..(coord + 1) * self.dims];
        let diag = row[coord];
        let mut acc = self.z[coord];
        for j in coord + 1..self.dims {
            acc -= row[j] * st.x[j];
        }
        let center = acc / diag;

        let mut cands = [(0.0f64, 0usize); 8];
        let mut len = 0;
        for (i, &v) in self.levels.iter().enumerate() {
            let e = diag * (v - center);
            let inc = e * e;
            if partial + inc <= st.bound {
                cands[len] = (inc, i);
                len += 1;
            }
        }
        let cands = &mut cands[..len];
        if zigzag {
            // Insertion sort; at most 8 entries.
            for a in 1..cands.len() {
                let mut b = a;
                while b > 0 && cands[b - 1].0 > cands[b].0 {
                    cands.swap(b - 1, b);
                    b -= 1;
                }
            }
        }

        for &(inc, i) in cands.iter() {
            let next = partial + inc;
            if next > st.bound {
                if zigzag {
                    break;
                }
                continue;
            }
            st.x[coord] = self.levels[i];
            st.idx[coord] = i;
            if coord % 2 == 0 {
                visited[self.m - 1 - coord / 2] += 1;
            }
            if coord == 0 {
                match leaf(&st.idx, next) {
                    Leaf::Continue => {}
                    Leaf::Tighten(b) => st.bound = b,
                    Leaf::Stop => return false,
                }
            } else if !self.descend(coord - 1, next, zigzag, st, visited, leaf) {
                return false;
            }
        }
        true
    }

    /// Closest lattice point within `radius`, or null if the sphere is empty.
    pub fn decode(&self, radius: f64, mode: SearchMode) -> DecodeOutcome {
        let mut visited = vec![0u64; self.m];
        let mut best: Option<(f64, Vec<usize>)> = None;
        let tighten = mode == SearchMode::SchnorrEuchner;
        self.walk(self.partial_bound(radius), tighten, &mut visited, &mut |idx, d| {
            let better = match &best {
                None => true,
                Some((bd, bidx)) => {
                    let tol = REL_SLACK * bd.max(f64::MIN_POSITIVE);
                    d < bd - tol || (d <= bd + tol && idx < bidx.as_slice())
                }
            };
            if better {
                best = Some((d, idx.to_vec()));
                if tighten {
                    return Leaf::Tighten(d + REL_SLACK * d.max(f64::MIN_POSITIVE));
                }
            }
            Leaf::Continue
        });
        let levels = self.constellation.levels_per_dim();
        let flops = visited
            .iter()
            .enumerate()
            .map(|(k, &v)| f_sp(k + 1, levels) * v)
            .sum();
        match best {
            Some((_, idx)) => {
                let solution = self.point_indices(&idx);
                let dist2 = self.obs.distance2_indices(self.constellation, &solution);
                DecodeOutcome {
                    solution: Some(solution),
                    dist2: Some(dist2),
                    visited,
                    flops,
                }
            }
            None => DecodeOutcome {
                solution: None,
                dist2: None,
                visited,
                flops,
            },
        }
    }

    /// `|{s : ‖y − H s‖² ≤ radius²}|`.
    pub fn count_within(&self, radius: f64) -> u64 {
        let mut visited = vec![0u64; self.m];
        let mut count = 0u64;
        self.walk(self.partial_bound(radius), false, &mut visited, &mut |_, _| {
            count += 1;
            Leaf::Continue
        });
        count
    }

    /// Every squared distance within `radius`, unsorted. Fails once more
    /// than `cap` points are found.
    pub fn distances_within(&self, radius: f64, cap: u64) -> Result<Vec<f64>> {
        let mut visited = vec![0u64; self.m];
        let mut out = Vec::new();
        let mut overflow = false;
        let resid = self.resid;
        self.walk(self.partial_bound(radius), false, &mut visited, &mut |_, d| {
            if out.len() as u64 >= cap {
                overflow = true;
                return Leaf::Stop;
            }
            out.push(d + resid);
            Leaf::Continue
        });
        if overflow {
            return Err(Error::Budget {
                needed: u128::from(cap) + 1,
                budget: u128::from(cap),
            });
        }
        Ok(out)
    }
}

struct WalkState {
    bound: f64,
    x: Vec<f64>,
    idx: Vec<usize>,
}

/// Schnorr–Euchner sphere decoding at a fixed radius.
pub fn sphere_decode(obs: &Observation, constellation: &Constellation, radius: f64) -> Result<DecodeOutcome> {
    sphere_decode_with(obs, constellation, radius, SearchMode::SchnorrEuchner)
}

pub fn sphere_decode_with(
    obs: &Observation,
    constellation: &Constellation,
    radius: f64,
    mode: SearchMode,
) -> Result<DecodeOutcome> {
    if !(radius > 0.0) {
        return Err(Error::Invalid(format!("radius must be positive, got {radius}")));
    }
    Ok(SphereSearch::new(obs, constellation)?.decode(radius, mode))
}

pub fn count_points_in_sphere(obs: &Observation, constellation: &Constellation, radius: f64) -> Result<u64> {
    if !(radius >= 0.0) {
        return Err(Error::Invalid(format!("radius must be >= 0, got {radius}")));
    }
    Ok(SphereSearch::new(obs, constellation)?.count_within(radius))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForce {
    pub solution: Vec<usize>,
    pub dist2: f64,
    pub candidates: u128,
}

/// Exhaustive ML detection over all `|D|^m` symbol vectors, in
/// lexicographic order of the index vector.
pub fn brute_force_mld(obs: &Observation, constellation: &Constellation, budget: u128) -> Result<BruteForce> {
    obs.validate()?;
    let m = obs.m();
    let order = constellation.order() as usize;
    let total = (order as u128)
        .checked_pow(m as u32)
        .unwrap_or(u128::MAX);
    if total > budget {
        return Err(Error::Budget { needed: total, budget });
    }
    let points = constellation.points();
    let mut idx = vec![0usize; m];
    let mut best = (f64::INFINITY, idx.clone());
    let mut candidates = 0u128;
    let mut residual = obs.y.clone();
    loop {
        residual.copy_from(&obs.y);
        for (j, &i) in idx.iter().enumerate() {
            residual.axpy(-points[i], &obs.h.column(j), num_complex::Complex64::new(1.0, 0.0));
        }
        let d = residual.norm_squared();
        candidates += 1;
        if best.0.is_infinite() || d < best.0 - REL_SLACK * best.0 {
            best = (d, idx.clone());
        }
        // Odometer over the index vector, last position fastest.
        let mut pos = m;
        loop {
            if pos == 0 {
                return Ok(BruteForce {
                    solution: best.1,
                    dist2: best.0,
                    candidates,
                });
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < order {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Distance from `y` to the MMSE-rounded lattice point. Always a radius
/// that contains at least one point.
pub fn babai_distance(obs: &Observation, constellation: &Constellation) -> Result<f64> {
    let m = obs.m();
    let snr = if obs.sigma_w2 > 0.0 {
        m as f64 * constellation.avg_power() / obs.sigma_w2
    } else {
        f64::INFINITY
    };
    let s = mmse_detect(obs, constellation, snr)?;
    Ok(obs.distance2_indices(constellation, &s).sqrt())
}

/// The `q` smallest distinct values of `‖y − H s‖`, ascending, floored at
/// [`RADIUS_FLOOR`].
///
/// Grows the squared radius from the Babai distance, doubling until at least
/// `q` distinct distances fall inside. Fails if more than `budget` points
/// would have to be collected.
pub fn q_closest_distances(
    obs: &Observation,
    constellation: &Constellation,
    q: usize,
    budget: u64,
) -> Result<RadiusVector> {
    if q == 0 {
        return Err(Error::Invalid("q must be >= 1".into()));
    }
    let search = SphereSearch::new(obs, constellation)?;
    let lattice_size = (constellation.order() as u128).saturating_pow(obs.m() as u32);
    let babai = babai_distance(obs, constellation)?;
    let mut r2 = (babai * babai).max(1e-3);
    loop {
        let mut d2 = search.distances_within(r2.sqrt(), budget)?;
        d2.sort_by(f64::total_cmp);
        let distinct = distinct_ascending(&d2);
        if distinct.len() >= q {
            let mut radii: Vec<f64> = distinct[..q].iter().map(|d| d.max(0.0).sqrt()).collect();
            floor_radii(&mut radii);
            return RadiusVector::new(radii);
        }
        if d2.len() as u128 >= lattice_size {
            return Err(Error::Invalid(format!(
                "only {} distinct distances exist, q = {q} requested",
                distinct.len()
            )));
        }
        r2 *= 2.0;
    }
}

fn distinct_ascending(sorted: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(sorted.len());
    for &d in sorted {
        match out.last() {
            Some(&last) if d - last <= 1e-12 * last.max(1e-300) => {}
            _ => out.push(d),
        }
    }
    out
}

/// Floors at [`RADIUS_FLOOR`] while keeping the sequence strictly increasing.
fn floor_radii(radii: &mut [f64]) {
    let mut prev = 0.0f64;
    for r in radii.iter_mut() {
        let mut v = r.max(RADIUS_FLOOR);
        if v <= prev {
            v = prev.next_up();
        }
        *r = v;
        prev = v;
    }
}

/// Squared-radius multipliers `x_i = P⁻¹(n, 1 − 0.99^i)` of the increasing
/// radius schedule; round `i` searches `r_i² = σ_w² x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdirsSchedule {
    n: usize,
    factors: Vec<f64>,
}

/// Per-round miss probability base of the increasing-radius schedule.
pub const SDIRS_BASE: f64 = 0.99;

impl SdirsSchedule {
    pub fn new(n: usize, max_rounds: usize) -> Result<Self> {
        if max_rounds == 0 {
            return Err(Error::Invalid("max_rounds must be >= 1".into()));
        }
        let factors = (1..=max_rounds)
            .map(|i| inv_reg_lower_gamma(sdirs_probability(i), n as u32))
            .collect();
        Ok(Self { n, factors })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_rounds(&self) -> usize {
        self.factors.len()
    }

    pub fn radius(&self, round: usize, sigma_w2: f64) -> f64 {
        (sigma_w2 * self.factors[round - 1]).sqrt()
    }
}

/// `p_c(i) = 1 − 0.99^i`.
pub fn sdirs_probability(round: usize) -> f64 {
    1.0 - SDIRS_BASE.powi(round as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdirsOutcome {
    pub solution: Vec<usize>,
    pub dist2: f64,
    pub rounds_used: usize,
    /// Radius of the round that found the solution.
    pub radius: f64,
    pub total_visited: Vec<u64>,
    pub flops: u64,
}

impl SdirsOutcome {
    pub fn total_nodes(&self) -> u64 {
        self.total_visited.iter().sum()
    }
}

/// Increasing-radius sphere decoding; exact ML.
pub fn sdirs_decode(obs: &Observation, constellation: &Constellation, max_rounds: usize) -> Result<SdirsOutcome> {
    let schedule = SdirsSchedule::new(obs.n(), max_rounds)?;
    sdirs_decode_with(&SphereSearch::new(obs, constellation)?, &schedule, SearchMode::SchnorrEuchner)
}

/// Runs the schedule on a prepared search. The last round widens its radius
/// to the Babai distance if needed, so a solution is always returned.
pub fn sdirs_decode_with(search: &SphereSearch<'_>, schedule: &SdirsSchedule, mode: SearchMode) -> Result<SdirsOutcome> {
    let obs = search.observation();
    if schedule.n() != obs.n() {
        return Err(Error::Shape(format!(
            "schedule built for n = {}, observation has n = {}",
            schedule.n(),
            obs.n()
        )));
    }
    let mut total_visited = vec![0u64; obs.m()];
    let mut flops = 0;
    let last = schedule.max_rounds();
    for round in 1..=last {
        let mut radius = schedule.radius(round, obs.sigma_w2);
        if round == last {
            radius = radius.max(babai_distance(obs, search.constellation)?);
        }
        let out = search.decode(radius, mode);
        for (t, v) in total_visited.iter_mut().zip(&out.visited) {
            *t += v;
        }
        flops += out.flops;
        if let (Some(solution), Some(dist2)) = (out.solution, out.dist2) {
            return Ok(SdirsOutcome {
                solution,
                dist2,
                rounds_used: round,
                radius: radius.max(RADIUS_FLOOR),
                total_visited,
                flops,
            });
        }
    }
    Err(Error::Numeric("Babai-radius round returned no point".into()))
}
