//! Complex MIMO signal model: square QAM constellations on odd-integer
//! levels, Rayleigh channels, AWGN observations, the real-valued lattice
//! embedding and the network input layout.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Square QAM constellation whose real and imaginary parts take the
/// consecutive odd integers `{-(M-1), ..., -1, 1, ..., M-1}`.
///
/// Points are indexed `re_index * M + im_index`, with level indices
/// ascending. Lexicographic comparison of index vectors is the tie-break
/// rule used by every detector in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: u32,
    real_levels: Vec<i32>,
    avg_power: f64,
}

impl Constellation {
    pub fn new(order: u32) -> Result<Self> {
        let levels = match order {
            4 => 2,
            16 => 4,
            64 => 8,
            other => return Err(Error::UnsupportedConstellation(other)),
        };
        let real_levels: Vec<i32> = (0..levels).map(|i| 2 * i - (levels - 1)).collect();
        let points = levels * levels;
        let mut energy = 0.0;
        for &a in &real_levels {
            for &b in &real_levels {
                energy += f64::from(a * a + b * b);
            }
        }
        Ok(Self {
            order,
            real_levels,
            avg_power: energy / f64::from(points),
        })
    }

    pub fn qam4() -> Self {
        Self::new(4).expect("4-QAM is supported")
    }

    pub fn qam16() -> Self {
        Self::new(16).expect("16-QAM is supported")
    }

    pub fn qam64() -> Self {
        Self::new(64).expect("64-QAM is supported")
    }

    /// Number of complex points, `M^2`.
    pub fn order(&self) -> u32 {
        self.order
    }

    /// Levels per real dimension, `M`.
    pub fn levels_per_dim(&self) -> usize {
        self.real_levels.len()
    }

    pub fn real_levels(&self) -> &[i32] {
        &self.real_levels
    }

    /// Mean squared magnitude over all points (`σ_s²`).
    pub fn avg_power(&self) -> f64 {
        self.avg_power
    }

    pub fn bits_per_dim(&self) -> u32 {
        self.levels_per_dim().trailing_zeros()
    }

    pub fn bits_per_symbol(&self) -> u32 {
        2 * self.bits_per_dim()
    }

    pub fn level(&self, index: usize) -> f64 {
        f64::from(self.real_levels[index])
    }

    pub fn point(&self, index: usize) -> Complex64 {
        let l = self.levels_per_dim();
        Complex64::new(self.level(index / l), self.level(index % l))
    }

    pub fn points(&self) -> Vec<Complex64> {
        (0..self.order as usize).map(|i| self.point(i)).collect()
    }

    pub fn to_points(&self, indices: &[usize]) -> DVector<Complex64> {
        DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.point(i)))
    }

    /// Nearest level index to `x`, clamped to the constellation range.
    pub fn nearest_level(&self, x: f64) -> usize {
        let top = self.levels_per_dim() - 1;
        let idx = ((x + top as f64) / 2.0).round();
        if idx.is_nan() || idx <= 0.0 {
            0
        } else {
            (idx as usize).min(top)
        }
    }

    /// Nearest constellation point (per-real-dimension rounding).
    pub fn nearest(&self, c: Complex64) -> usize {
        self.nearest_level(c.re) * self.levels_per_dim() + self.nearest_level(c.im)
    }

    /// Index of an exact constellation point, if `c` is one.
    pub fn index_of(&self, c: Complex64) -> Option<usize> {
        let idx = self.nearest(c);
        (self.point(idx) == c).then_some(idx)
    }

    /// Bit errors between two point indices under per-dimension Gray labels.
    pub fn bit_errors(&self, a: usize, b: usize) -> u32 {
        let l = self.levels_per_dim();
        let gray = |i: usize| i ^ (i >> 1);
        let re = gray(a / l) ^ gray(b / l);
        let im = gray(a % l) ^ gray(b % l);
        re.count_ones() + im.count_ones()
    }

    pub fn draw_symbols<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Vec<usize> {
        (0..m).map(|_| rng.random_range(0..self.order as usize)).collect()
    }
}

/// One decoding instance `y = H s + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub h: DMatrix<Complex64>,
    pub y: DVector<Complex64>,
    /// Noise variance per complex dimension.
    pub sigma_w2: f64,
    pub truth: Option<DVector<Complex64>>,
}

impl Observation {
    pub fn new(
        h: DMatrix<Complex64>,
        y: DVector<Complex64>,
        sigma_w2: f64,
        truth: Option<DVector<Complex64>>,
    ) -> Result<Self> {
        let obs = Self { h, y, sigma_w2, truth };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.h.shape();
        if m == 0 || n < m {
            return Err(Error::Dimension(format!("H is {n}x{m}; need n >= m >= 1")));
        }
        if self.y.len() != n {
            return Err(Error::Dimension(format!("len(y) = {} but H has {n} rows", self.y.len())));
        }
        if !(self.sigma_w2 >= 0.0) || !self.sigma_w2.is_finite() {
            return Err(Error::Invalid(format!("sigma_w2 = {} must be finite and >= 0", self.sigma_w2)));
        }
        if let Some(t) = &self.truth {
            if t.len() != m {
                return Err(Error::Dimension(format!("len(truth) = {} but H has {m} columns", t.len())));
            }
        }
        Ok(())
    }

    /// Checks that every truth entry is a point of `constellation`.
    pub fn validate_truth(&self, constellation: &Constellation) -> Result<()> {
        if let Some(t) = &self.truth {
            for (i, &c) in t.iter().enumerate() {
                if constellation.index_of(c).is_none() {
                    return Err(Error::Invalid(format!("truth[{i}] = {c} is not a constellation point")));
                }
            }
        }
        Ok(())
    }

    /// Receive antennas.
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    /// Transmit antennas.
    pub fn m(&self) -> usize {
        self.h.ncols()
    }

    pub fn truth_indices(&self, constellation: &Constellation) -> Option<Vec<usize>> {
        self.truth
            .as_ref()
            .map(|t| t.iter().map(|&c| constellation.nearest(c)).collect())
    }

    /// `‖y − H s‖²` computed directly in the complex domain.
    pub fn distance2(&self, s: &DVector<Complex64>) -> f64 {
        (&self.y - &self.h * s).norm_squared()
    }

    pub fn distance2_indices(&self, constellation: &Constellation, indices: &[usize]) -> f64 {
        self.distance2(&constellation.to_points(indices))
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

/// I.i.d. `CN(0, 1)` channel matrix.
pub fn gen_channel<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Result<DMatrix<Complex64>> {
    if m == 0 || n < m {
        return Err(Error::Dimension(format!("channel {n}x{m}; need n >= m >= 1")));
    }
    // Row-major fill so the draw order matches the h_uv subscript order.
    let mut h = DMatrix::zeros(n, m);
    for u in 0..n {
        for v in 0..m {
            h[(u, v)] = complex_normal(rng, 1.0);
        }
    }
    Ok(h)
}

/// Noise variance for an average SNR `10 log10(m σ_s² / σ_w²)` in dB.
pub fn snr_to_sigma(snr_db: f64, m: usize, avg_power: f64) -> f64 {
    m as f64 * avg_power / 10f64.powf(snr_db / 10.0)
}

pub fn sigma_to_snr(sigma_w2: f64, m: usize, avg_power: f64) -> f64 {
    10.0 * (m as f64 * avg_power / sigma_w2).log10()
}

/// Linear average SNR `m σ_s² / σ_w²`.
pub fn snr_linear(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

/// Forms `y = H s + w` with `w ~ CN(0, σ_w² I)`.
pub fn observe<R: Rng + ?Sized>(
    h: &DMatrix<Complex64>,
    s: &DVector<Complex64>,
    rng: &mut R,
    sigma_w2: f64,
) -> Result<Observation> {
    if h.ncols() != s.len() {
        return Err(Error::Dimension(format!("H has {} columns, s has {} entries", h.ncols(), s.len())));
    }
    let mut y = h * s;
    for yi in y.iter_mut() {
        *yi += complex_normal(rng, sigma_w2);
    }
    Observation::new(h.clone(), y, sigma_w2, Some(s.clone()))
}

/// Draws `(H, s, w)` in that order from one stream and forms the observation.
pub fn draw_observation<R: Rng + ?Sized>(
    rng: &mut R,
    constellation: &Constellation,
    n: usize,
    m: usize,
    sigma_w2: f64,
) -> Result<Observation> {
    let h = gen_channel(rng, n, m)?;
    let idx = constellation.draw_symbols(rng, m);
    let s = constellation.to_points(&idx);
    observe(&h, &s, rng, sigma_w2)
}

/// Real-valued lattice form of an observation.
#[derive(Debug, Clone, PartialEq)]
pub struct RealEmbedding {
    pub y_r: DVector<f64>,
    pub h_r: DMatrix<f64>,
}

impl RealEmbedding {
    /// `[Re s; Im s]`
    pub fn stack(s: &DVector<Complex64>) -> DVector<f64> {
        let m = s.len();
        DVector::from_fn(2 * m, |i, _| if i < m { s[i].re } else { s[i - m].im })
    }
}

/// `y_r = [Re y; Im y]`, `H_r = [[Re H, -Im H], [Im H, Re H]]`.
pub fn real_embedding(obs: &Observation) -> RealEmbedding {
    let (n, m) = obs.h.shape();
    let y_r = RealEmbedding::stack(&obs.y);
    let mut h_r = DMatrix::zeros(2 * n, 2 * m);
    for u in 0..n {
        for v in 0..m {
            let h = obs.h[(u, v)];
            h_r[(u, v)] = h.re;
            h_r[(u, v + m)] = -h.im;
            h_r[(u + n, v)] = h.im;
            h_r[(u + n, v + m)] = h.re;
        }
    }
    RealEmbedding { y_r, h_r }
}

/// Network input `[Re y, Im y, Re h11, Im h11, ..., Re h_nm, Im h_nm]`.
pub fn stack_input(obs: &Observation) -> Vec<f64> {
    let (n, m) = obs.h.shape();
    let mut x = Vec::with_capacity(2 * n * (m + 1));
    x.extend(obs.y.iter().map(|c| c.re));
    x.extend(obs.y.iter().map(|c| c.im));
    for u in 0..n {
        for v in 0..m {
            let h = obs.h[(u, v)];
            x.push(h.re);
            x.push(h.im);
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn constellation_powers() {
        assert_eq!(Constellation::qam4().avg_power(), 2.0);
        assert_eq!(Constellation::qam16().avg_power(), 10.0);
        assert_eq!(Constellation::qam64().avg_power(), 42.0);
        assert_eq!(Constellation::qam16().real_levels(), &[-3, -1, 1, 3]);
        assert!(Constellation::new(8).is_err());
    }

    #[test]
    fn constellation_points_are_product_of_levels() {
        let k = Constellation::qam16();
        let pts = k.points();
        assert_eq!(pts.len(), 16);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(k.index_of(*p), Some(i));
        }
        let mean: f64 = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / 16.0;
        assert_eq!(mean, k.avg_power());
    }

    #[test]
    fn nearest_clamps() {
        let k = Constellation::qam4();
        assert_eq!(k.point(k.nearest(c(9.0, -9.0))), c(1.0, -1.0));
        assert_eq!(k.point(k.nearest(c(0.2, -0.1))), c(1.0, -1.0));
        let k = Constellation::qam16();
        assert_eq!(k.point(k.nearest(c(2.2, -1.9))), c(3.0, -1.0));
    }

    #[test]
    fn gray_bit_errors_adjacent_levels_cost_one_bit() {
        let k = Constellation::qam64();
        let l = k.levels_per_dim();
        for i in 0..l - 1 {
            assert_eq!(k.bit_errors(i * l, (i + 1) * l), 1);
            assert_eq!(k.bit_errors(i, i + 1), 1);
        }
        assert_eq!(k.bit_errors(5, 5), 0);
    }

    #[test]
    fn channel_shapes_and_determinism() {
        let h = gen_channel(&mut ChaCha8Rng::seed_from_u64(7), 1, 1).unwrap();
        assert_eq!(h.shape(), (1, 1));
        let a = gen_channel(&mut ChaCha8Rng::seed_from_u64(7), 2, 2).unwrap();
        let b = gen_channel(&mut ChaCha8Rng::seed_from_u64(7), 2, 2).unwrap();
        assert_eq!(a, b);
        assert!(gen_channel(&mut ChaCha8Rng::seed_from_u64(7), 1, 2).is_err());
        assert!(gen_channel(&mut ChaCha8Rng::seed_from_u64(7), 2, 0).is_err());
    }

    #[test]
    fn channel_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut acc = 0.0;
        let mut re2 = 0.0;
        let draws = 100_000 / 4;
        for _ in 0..draws {
            let h = gen_channel(&mut rng, 2, 2).unwrap();
            acc += h.iter().map(|z| z.norm_sqr()).sum::<f64>();
            re2 += h.iter().map(|z| z.re * z.re).sum::<f64>();
        }
        let var = acc / (4 * draws) as f64;
        let var_re = re2 / (4 * draws) as f64;
        assert!((0.99..=1.01).contains(&var), "variance {var}");
        assert!((var_re - 0.5).abs() < 0.01, "real-part variance {var_re}");
    }

    #[test]
    fn snr_examples() {
        assert!((snr_to_sigma(0.0, 1, 1.0) - 1.0).abs() < 1e-15);
        assert!((snr_to_sigma(10.0, 1, 1.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_sigma(20.0, 10, 10.0) - 1.0).abs() < 1e-12);
        for snr in [-5.0, 0.0, 7.3, 26.0] {
            let s = snr_to_sigma(snr, 4, 10.0);
            assert!((sigma_to_snr(s, 4, 10.0) - snr).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = Constellation::qam16();
        let h = gen_channel(&mut rng, 3, 2).unwrap();
        let s = k.to_points(&[3, 12]);
        let obs = observe(&h, &s, &mut rng, 0.0).unwrap();
        assert_eq!(obs.y, &h * &s);
        assert_eq!(obs.truth.as_ref(), Some(&s));

        let eye = DMatrix::<Complex64>::identity(2, 2);
        let obs = observe(&eye, &s, &mut rng, 0.0).unwrap();
        assert_eq!(obs.y, s);
    }

    #[test]
    fn noise_variance_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eye = DMatrix::<Complex64>::identity(1, 1);
        let s = DVector::from_element(1, c(1.0, 1.0));
        let sigma = 0.37;
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let obs = observe(&eye, &s, &mut rng, sigma).unwrap();
            acc += (obs.y[0] - s[0]).norm_sqr();
        }
        let est = acc / draws as f64;
        assert!((est - sigma).abs() / sigma < 0.01, "noise variance {est}");
    }

    #[test]
    fn observation_rejects_bad_shapes() {
        let h = DMatrix::<Complex64>::zeros(1, 2);
        let y = DVector::<Complex64>::zeros(1);
        assert!(Observation::new(h, y, 1.0, None).is_err());
        let h = DMatrix::<Complex64>::zeros(2, 2);
        let y = DVector::<Complex64>::zeros(3);
        assert!(Observation::new(h, y, 1.0, None).is_err());
        let truth = DVector::from_element(1, c(2.0, 1.0));
        let obs = Observation::new(DMatrix::identity(1, 1), DVector::zeros(1), 1.0, Some(truth)).unwrap();
        assert!(obs.validate_truth(&Constellation::qam4()).is_err());
    }

    #[test]
    fn embedding_identity() {
        let obs = Observation::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, c(1.0, 2.0)),
            1.0,
            None,
        )
        .unwrap();
        let e = real_embedding(&obs);
        assert_eq!(e.y_r.as_slice(), &[1.0, 2.0]);
        assert_eq!(e.h_r, DMatrix::identity(2, 2));
    }

    #[test]
    fn embedding_preserves_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = Constellation::qam16();
        for _ in 0..1000 {
            let obs = draw_observation(&mut rng, &k, 3, 2, 0.5).unwrap();
            let e = real_embedding(&obs);
            let s = k.to_points(&k.draw_symbols(&mut rng, 2));
            let complex = obs.distance2(&s);
            let real = (&e.y_r - &e.h_r * RealEmbedding::stack(&s)).norm_squared();
            assert!((complex - real).abs() <= 1e-10 * complex.max(1e-300));
        }
        // Purely real symbols.
        let obs = draw_observation(&mut rng, &k, 2, 2, 0.5).unwrap();
        let e = real_embedding(&obs);
        let s = DVector::from_vec(vec![c(3.0, 0.0), c(-1.0, 0.0)]);
        let real = (&e.y_r - &e.h_r * RealEmbedding::stack(&s)).norm_squared();
        assert!((obs.distance2(&s) - real).abs() < 1e-12 * real);
    }

    #[test]
    fn stack_input_layout() {
        let obs = Observation::new(
            DMatrix::from_element(1, 1, c(1.0, -2.0)),
            DVector::from_element(1, c(3.0, 4.0)),
            1.0,
            None,
        )
        .unwrap();
        assert_eq!(stack_input(&obs), vec![3.0, 4.0, 1.0, -2.0]);

        let h = DMatrix::from_row_slice(2, 2, &[c(1.0, 2.0), c(3.0, 4.0), c(5.0, 6.0), c(7.0, 8.0)]);
        let y = DVector::from_vec(vec![c(-1.0, -2.0), c(-3.0, -4.0)]);
        let x = stack_input(&Observation::new(h, y, 1.0, None).unwrap());
        assert_eq!(x, vec![-1.0, -3.0, -2.0, -4.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);

        let zero = Observation::new(DMatrix::zeros(3, 2), DVector::zeros(3), 1.0, None).unwrap();
        let x = stack_input(&zero);
        assert_eq!(x.len(), 2 * 3 * 3);
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
