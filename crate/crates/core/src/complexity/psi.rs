//! Ψ₂ₖ(v): the average number of constellation points whose half-spacing
//! squared distance to the transmitted point over `2k` real dimensions is
//! `v`. Computed with exact integer polynomial arithmetic.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Integer polynomial in λ, lowest degree first.
type Poly = Vec<i128>;

fn overflow(what: &str) -> Error {
    Error::Numeric(format!("integer overflow while expanding {what}"))
}

fn poly_mul(a: &[i128], b: &[i128]) -> Result<Poly> {
    let mut out = vec![0i128; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            let t = x.checked_mul(y).ok_or_else(|| overflow("polynomial product"))?;
            out[i + j] = out[i + j].checked_add(t).ok_or_else(|| overflow("polynomial product"))?;
        }
    }
    Ok(out)
}

fn poly_pow(base: &[i128], exp: usize) -> Result<Poly> {
    let mut acc = vec![1i128];
    for _ in 0..exp {
        acc = poly_mul(&acc, base)?;
    }
    Ok(acc)
}

fn poly_add_scaled(acc: &mut Poly, p: &[i128], scale: i128) -> Result<()> {
    if acc.len() < p.len() {
        acc.resize(p.len(), 0);
    }
    for (a, &x) in acc.iter_mut().zip(p) {
        let t = x.checked_mul(scale).ok_or_else(|| overflow("weighted sum"))?;
        *a = a.checked_add(t).ok_or_else(|| overflow("weighted sum"))?;
    }
    Ok(())
}

/// Σ_{e ∈ exps} λ^{e²}
fn sum_of_squares(exps: impl IntoIterator<Item = usize>) -> Poly {
    let mut p = Poly::new();
    for e in exps {
        let d = e * e;
        if p.len() <= d {
            p.resize(d + 1, 0);
        }
        p[d] += 1;
    }
    p
}

fn monomial(coeff: i128, degree: usize) -> Poly {
    let mut p = vec![0; degree + 1];
    p[degree] = coeff;
    p
}

fn binomial(n: usize, k: usize) -> i128 {
    let k = k.min(n - k);
    let mut r: i128 = 1;
    for i in 0..k {
        r = r * (n - i) as i128 / (i + 1) as i128;
    }
    r
}

fn multinomial(n: usize, parts: &[usize]) -> i128 {
    let mut rest = n;
    let mut r = 1i128;
    for &p in parts {
        r *= binomial(rest, p);
        rest -= p;
    }
    r
}

/// Per-source-level generating polynomials, one per distinct (up to mirror
/// symmetry) transmitted level, each weighted equally.
fn level_polys(order: u32) -> Result<Vec<Poly>> {
    let sum = |ps: &[Poly]| {
        let mut acc = Poly::new();
        for p in ps {
            poly_add_scaled(&mut acc, p, 1).expect("small coefficients");
        }
        acc
    };
    match order {
        // Outer level only: differences {0, 1}.
        4 => Ok(vec![vec![1, 1]]),
        // (1 + λ + λ⁴ + λ⁹) for outer levels, (1 + 2λ + λ⁴) for inner ones.
        16 => Ok(vec![sum_of_squares(0..4), vec![1, 2, 0, 0, 1]]),
        64 => {
            let p0 = sum_of_squares(0..8);
            let p1 = sum(&[monomial(1, 1), sum_of_squares(0..7)]);
            let p2 = sum(&[monomial(1, 1), monomial(1, 4), sum_of_squares(0..6)]);
            let mut p3 = sum(&[monomial(-1, 0), monomial(-1, 16)]);
            poly_add_scaled(&mut p3, &sum_of_squares(0..5), 2)?;
            Ok(vec![p0, p1, p2, p3])
        }
        other => Err(Error::UnsupportedConstellation(other)),
    }
}

/// Exact Ψ₂ₖ(v) = numerators[v] / denominator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsiRow {
    pub numerators: Vec<u128>,
    pub denominator: u128,
}

impl PsiRow {
    pub fn value(&self, v: usize) -> f64 {
        self.numerators.get(v).map_or(0.0, |&num| num as f64 / self.denominator as f64)
    }

    /// Largest `v` with a nonzero coefficient.
    pub fn max_v(&self) -> usize {
        self.numerators.iter().rposition(|&c| c != 0).unwrap_or(0)
    }

    fn from_poly(poly: Poly, denominator: u128) -> Result<Self> {
        let numerators = poly
            .into_iter()
            .map(|c| u128::try_from(c).map_err(|_| Error::Numeric("negative Ψ coefficient".into())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { numerators, denominator })
    }
}

/// Ψ₂ₖ as the `2k`-th power of the averaged per-dimension polynomial.
pub fn psi_row(order: u32, k: usize) -> Result<PsiRow> {
    if k == 0 {
        return Err(Error::Invalid("k must be >= 1".into()));
    }
    let polys = level_polys(order)?;
    let mut base = Poly::new();
    for p in &polys {
        poly_add_scaled(&mut base, p, 1)?;
    }
    let classes = polys.len() as u128;
    let denominator = classes
        .checked_pow(2 * k as u32)
        .ok_or_else(|| overflow("denominator"))?;
    PsiRow::from_poly(poly_pow(&base, 2 * k)?, denominator)
}

/// Ψ₂ₖ evaluated term by term as a binomial (16-QAM) or multinomial
/// (64-QAM) sum over how many of the `2k` dimensions sit at each class of
/// transmitted level. Agrees with [`psi_row`]; slower, kept as a cross-check.
pub fn psi_row_expanded(order: u32, k: usize) -> Result<PsiRow> {
    if k == 0 {
        return Err(Error::Invalid("k must be >= 1".into()));
    }
    let dims = 2 * k;
    let polys = level_polys(order)?;
    match order {
        4 => {
            let nums = (0..=dims).map(|v| binomial(dims, v)).collect();
            PsiRow::from_poly(nums, 1)
        }
        16 => {
            let mut acc = Poly::new();
            for j in 0..=dims {
                let term = poly_mul(&poly_pow(&polys[0], j)?, &poly_pow(&polys[1], dims - j)?)?;
                poly_add_scaled(&mut acc, &term, binomial(dims, j))?;
            }
            PsiRow::from_poly(acc, 1u128 << dims)
        }
        64 => {
            let powers: Vec<Vec<Poly>> = polys
                .iter()
                .map(|p| (0..=dims).map(|e| poly_pow(p, e)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?;
            let mut acc = Poly::new();
            for x0 in 0..=dims {
                for x1 in 0..=dims - x0 {
                    for x2 in 0..=dims - x0 - x1 {
                        let x3 = dims - x0 - x1 - x2;
                        let mut term = poly_mul(&powers[0][x0], &powers[1][x1])?;
                        term = poly_mul(&term, &powers[2][x2])?;
                        term = poly_mul(&term, &powers[3][x3])?;
                        poly_add_scaled(&mut acc, &term, multinomial(dims, &[x0, x1, x2, x3]))?;
                    }
                }
            }
            let den = 4u128.checked_pow(dims as u32).ok_or_else(|| overflow("denominator"))?;
            PsiRow::from_poly(acc, den)
        }
        other => Err(Error::UnsupportedConstellation(other)),
    }
}

/// Ψ₂ₖ rows for `k = 1..=k_max` of one constellation order.
#[derive(Debug, Clone)]
pub struct PsiTable {
    constellation_order: u32,
    rows: Vec<PsiRow>,
}

impl PsiTable {
    pub fn new(constellation_order: u32, k_max: usize) -> Result<Self> {
        let rows = (1..=k_max)
            .map(|k| psi_row(constellation_order, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { constellation_order, rows })
    }

    /// Shared, lazily built table. Built once per `(order, k_max)`.
    pub fn cached(constellation_order: u32, k_max: usize) -> Result<Arc<PsiTable>> {
        static CACHE: OnceLock<Mutex<HashMap<(u32, usize), Arc<PsiTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(t) = cache.lock().expect("psi cache poisoned").get(&(constellation_order, k_max)) {
            return Ok(Arc::clone(t));
        }
        let table = Arc::new(PsiTable::new(constellation_order, k_max)?);
        cache
            .lock()
            .expect("psi cache poisoned")
            .insert((constellation_order, k_max), Arc::clone(&table));
        Ok(table)
    }

    pub fn constellation_order(&self) -> u32 {
        self.constellation_order
    }

    pub fn k_max(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, k: usize) -> &PsiRow {
        &self.rows[k - 1]
    }

    pub fn value(&self, k: usize, v: usize) -> f64 {
        self.row(k).value(v)
    }
}

/// Ψ₂ₖ(v) as a float.
pub fn psi(constellation_order: u32, k: usize, v: usize) -> Result<f64> {
    Ok(PsiTable::cached(constellation_order, k)?.value(k, v))
}
