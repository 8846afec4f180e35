//! Expected-complexity model for fixed-radius, increasing-radius and
//! learned-radius sphere decoding, measured in elementary operations.
//!
//! A lattice point whose half-spacing difference vector to the transmitted
//! point has squared norm `v` sits at squared distance `4v` in the odd-integer
//! constellation used here, so the gamma arguments below read
//! `d² / (σ_w² + 4v)`.

mod gamma;
mod psi;

pub use gamma::{gamma_pdf, inv_reg_lower_gamma, ln_gamma_int, reg_lower_gamma, reg_upper_gamma};
pub use psi::{psi, psi_row, psi_row_expanded, PsiRow, PsiTable};

use crate::error::{Error, Result};
use crate::mimo::Constellation;

/// Squared real distance per unit of `v` (levels are spaced by 2).
pub const DIFF_SCALE: f64 = 4.0;

/// Operations per visited node at complex depth `k` for `M²`-QAM.
pub fn f_sp(k: usize, levels_per_dim: usize) -> u64 {
    (8 * k + 20 + 4 * levels_per_dim) as u64
}

/// Operations for one MMSE detection: `m³ + 5m²/2 + nm² + 3mn − m/2`.
pub fn f_sb(m: usize, n: usize) -> u64 {
    let (m, n) = (m as u64, n as u64);
    // 5m²/2 − m/2 = m(5m − 1)/2, and m(5m − 1) is always even.
    m * m * m + n * m * m + 3 * m * n + m * (5 * m - 1) / 2
}

/// Operations for one forward pass: Σ 2 n_{i+1} n_i.
pub fn f_dn(layer_dims: &[usize]) -> u64 {
    layer_dims.windows(2).map(|w| 2 * (w[0] * w[1]) as u64).sum()
}

/// `ln C / ln m`.
pub fn complexity_exponent(c: f64, m: usize) -> f64 {
    c.ln() / (m as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncated {
    pub value: f64,
    /// Upper bound on the omitted tail `v > v_max`.
    pub tail_bound: f64,
}

/// Expected nodes at each complex depth `k = 1..=m` for a sphere of radius `d`.
pub fn expected_nodes_per_depth(
    m: usize,
    n: usize,
    sigma_w2: f64,
    d: f64,
    constellation: &Constellation,
) -> Result<Vec<f64>> {
    check_dims(m, n)?;
    let table = PsiTable::cached(constellation.order(), m)?;
    let d2 = d * d;
    Ok((1..=m)
        .map(|k| {
            let row = table.row(k);
            let shape = (n - m + k) as u32;
            (0..=row.max_v())
                .map(|v| row.value(v) * reg_lower_gamma(d2 / (sigma_w2 + DIFF_SCALE * v as f64), shape))
                .sum()
        })
        .collect())
}

/// Expected operations of one fixed-radius search:
/// `Σ_k F_sp(k) Σ_v γ(d²/(σ_w² + 4v), n−m+k) Ψ₂ₖ(v)`, summed over the full
/// (finite) support of Ψ.
pub fn expected_complexity_fixed_radius(
    m: usize,
    n: usize,
    sigma_w2: f64,
    d: f64,
    constellation: &Constellation,
) -> Result<f64> {
    let nodes = expected_nodes_per_depth(m, n, sigma_w2, d, constellation)?;
    let levels = constellation.levels_per_dim();
    Ok(nodes
        .iter()
        .enumerate()
        .map(|(i, &c)| f_sp(i + 1, levels) as f64 * c)
        .sum())
}

/// Same sum cut at `v ≤ v_max`, with a bound on what was dropped.
pub fn expected_complexity_fixed_radius_truncated(
    m: usize,
    n: usize,
    sigma_w2: f64,
    d: f64,
    constellation: &Constellation,
    v_max: usize,
) -> Result<Truncated> {
    check_dims(m, n)?;
    let table = PsiTable::cached(constellation.order(), m)?;
    let levels = constellation.levels_per_dim();
    let d2 = d * d;
    let mut value = 0.0;
    let mut tail_bound = 0.0;
    for k in 1..=m {
        let row = table.row(k);
        let shape = (n - m + k) as u32;
        let weight = f_sp(k, levels) as f64;
        let mut tail_mass = 0.0;
        for v in 0..=row.max_v() {
            if v <= v_max {
                value += weight * row.value(v) * reg_lower_gamma(d2 / (sigma_w2 + DIFF_SCALE * v as f64), shape);
            } else {
                tail_mass += row.value(v);
            }
        }
        // γ is decreasing in v, so the first omitted factor bounds the rest.
        let g = reg_lower_gamma(d2 / (sigma_w2 + DIFF_SCALE * (v_max + 1) as f64), shape);
        tail_bound += weight * g * tail_mass;
    }
    Ok(Truncated { value, tail_bound })
}

/// Expected operations of increasing-radius decoding with radii
/// `r_1 < ... < r_q`: `Σ_c (p_c − p_{c−1}) C(r_c)`, `p_c = γ(r_c²/σ_w², n)`.
pub fn expected_complexity_spi(
    m: usize,
    n: usize,
    sigma_w2: f64,
    radii: &[f64],
    constellation: &Constellation,
) -> Result<f64> {
    if radii.is_empty() {
        return Err(Error::Invalid("empty radius schedule".into()));
    }
    if radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("radii must be strictly increasing".into()));
    }
    let mut total = 0.0;
    let mut p_prev = 0.0;
    for &r in radii {
        let p = reg_lower_gamma(r * r / sigma_w2, n as u32);
        total += (p - p_prev) * expected_complexity_fixed_radius(m, n, sigma_w2, r, constellation)?;
        p_prev = p;
    }
    Ok(total)
}

/// Sample-mean expected operations of learned-radius decoding over `U`
/// predicted radius vectors (each ascending):
/// rounds weighted by `p̂_c − p̂_{c−1}`, plus `F_sb (1 − mean p̂_q)` for the
/// MMSE fallback and `F_dn` for the network.
pub fn expected_complexity_dl(
    samples: &[Vec<f64>],
    m: usize,
    n: usize,
    sigma_w2: f64,
    constellation: &Constellation,
    layer_dims: &[usize],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Invalid("no radius samples".into()));
    }
    let mut search = 0.0;
    let mut p_last = 0.0;
    for radii in samples {
        if radii.is_empty() {
            return Err(Error::Invalid("empty radius vector".into()));
        }
        let mut p_prev = 0.0;
        for &r in radii {
            let p = reg_lower_gamma(r * r / sigma_w2, n as u32);
            search += (p - p_prev) * expected_complexity_fixed_radius(m, n, sigma_w2, r, constellation)?;
            p_prev = p;
        }
        p_last += p_prev;
    }
    let u = samples.len() as f64;
    Ok(search / u + f_sb(m, n) as f64 * (1.0 - p_last / u) + f_dn(layer_dims) as f64)
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if m == 0 || n < m {
        return Err(Error::Dimension(format!("need n >= m >= 1, got n={n}, m={m}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flop_models() {
        assert_eq!(f_sp(1, 4), 44);
        assert_eq!(f_sp(1, 2), 36);
        assert_eq!(f_sp(10, 8), 132);
        assert_eq!(f_sb(2, 2), 37);
        assert_eq!(f_sb(1, 1), 7);
        assert_eq!(f_dn(&[12, 128, 3]), 3840);
        assert_eq!(f_dn(&[1, 1]), 2);
        assert_eq!(f_dn(&[5, 7, 3]), f_dn(&[3, 7, 5]));
    }

    #[test]
    fn f_sb_matches_rational_form_everywhere() {
        for m in 1..=64usize {
            for n in m..=64usize {
                let (mf, nf) = (m as f64, n as f64);
                let exact = mf.powi(3) + 2.5 * mf * mf + nf * mf * mf + 3.0 * mf * nf - 0.5 * mf;
                assert_eq!(exact.fract(), 0.0);
                assert_eq!(f_sb(m, n) as f64, exact);
            }
        }
    }

    #[test]
    fn exponent() {
        assert!((complexity_exponent(16.0, 4) - 2.0).abs() < 1e-15);
        assert_eq!(complexity_exponent(1.0, 7), 0.0);
        assert!((complexity_exponent(10f64.powf(3.5), 10) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn fixed_radius_limits_and_monotonicity() {
        let k = Constellation::qam4();
        let tiny = expected_complexity_fixed_radius(4, 4, 0.5, 1e-8, &k).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-13);
        let mut prev = 0.0;
        for i in 1..60 {
            let c = expected_complexity_fixed_radius(4, 4, 0.5, 0.1 * i as f64, &k).unwrap();
            assert!(c >= prev && c.is_finite());
            prev = c;
        }
        // Huge radius visits every partial vector: Σ_k F_sp(k) 4^k.
        let all: f64 = (1..=4).map(|kk| f_sp(kk, 2) as f64 * 4f64.powi(kk as i32)).sum();
        let big = expected_complexity_fixed_radius(4, 4, 0.5, 1e4, &k).unwrap();
        assert!((big - all).abs() < 1e-6 * all);
    }

    #[test]
    fn truncation_reports_tail() {
        let k = Constellation::qam16();
        let full = expected_complexity_fixed_radius(3, 3, 1.0, 4.0, &k).unwrap();
        let t = expected_complexity_fixed_radius_truncated(3, 3, 1.0, 4.0, &k, 10_000).unwrap();
        assert!((t.value - full).abs() < 1e-9 * full);
        assert_eq!(t.tail_bound, 0.0);
        let t = expected_complexity_fixed_radius_truncated(3, 3, 1.0, 4.0, &k, 3).unwrap();
        assert!(t.value < full);
        assert!(full - t.value <= t.tail_bound + 1e-9);
    }

    #[test]
    fn lower_bound_from_transmitted_point() {
        let k = Constellation::qam16();
        for d in [0.5, 1.0, 2.0, 4.0] {
            let c = expected_complexity_fixed_radius(3, 4, 0.7, d, &k).unwrap();
            let floor: f64 = (1..=3)
                .map(|kk| f_sp(kk, 4) as f64 * reg_lower_gamma(d * d / 0.7, (4 - 3 + kk) as u32))
                .sum();
            assert!(c >= floor);
        }
    }

    #[test]
    fn spi_reductions() {
        let k = Constellation::qam4();
        let (m, n, s2) = (3, 3, 0.4);
        let r1 = 1.3;
        let p1 = reg_lower_gamma(r1 * r1 / s2, n as u32);
        let c1 = expected_complexity_fixed_radius(m, n, s2, r1, &k).unwrap();
        let spi = expected_complexity_spi(m, n, s2, &[r1], &k).unwrap();
        assert!((spi - p1 * c1).abs() < 1e-12 * c1);

        let big = 40.0;
        let spi = expected_complexity_spi(m, n, s2, &[big], &k).unwrap();
        let fixed = expected_complexity_fixed_radius(m, n, s2, big, &k).unwrap();
        assert!((spi - fixed).abs() < 1e-9 * fixed);

        let base = expected_complexity_spi(m, n, s2, &[0.8, 1.2], &k).unwrap();
        let more = expected_complexity_spi(m, n, s2, &[0.8, 1.2, 1.9], &k).unwrap();
        assert!(more >= base);
        assert!(expected_complexity_spi(m, n, s2, &[1.2, 0.8], &k).is_err());
    }

    #[test]
    fn dl_limits() {
        let k = Constellation::qam4();
        let dims = [12, 128, 3];
        let (m, n, s2) = (2, 2, 0.3);
        let zero = vec![vec![1e-12, 2e-12, 3e-12]];
        let c = expected_complexity_dl(&zero, m, n, s2, &k, &dims).unwrap();
        let want = (f_sb(m, n) + f_dn(&dims)) as f64;
        assert!((c - want).abs() < 1e-6);

        let huge = vec![vec![1e3, 2e3, 3e3]];
        let c = expected_complexity_dl(&huge, m, n, s2, &k, &dims).unwrap();
        let round1 = expected_complexity_fixed_radius(m, n, s2, 1e3, &k).unwrap();
        assert!((c - round1 - f_dn(&dims) as f64).abs() < 1e-6 * c);

        let radii = vec![0.4, 0.9, 1.5];
        let c = expected_complexity_dl(&[radii.clone()], m, n, s2, &k, &dims).unwrap();
        let spi = expected_complexity_spi(m, n, s2, &radii, &k).unwrap();
        let pq = reg_lower_gamma(1.5 * 1.5 / s2, n as u32);
        let want = spi + f_dn(&dims) as f64 + f_sb(m, n) as f64 * (1.0 - pq);
        assert!((c - want).abs() < 1e-9 * want);

        assert!(expected_complexity_dl(&[], m, n, s2, &k, &dims).is_err());
    }
}
