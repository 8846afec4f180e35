//! Regularized lower incomplete gamma function for integer shape, and its
//! inverse in the first argument.

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

/// `ln Γ(n)` for integer `n ≥ 1`.
pub fn ln_gamma_int(n: u32) -> f64 {
    (2..n).map(|i| f64::from(i).ln()).sum()
}

/// `P(n, x) = (1/Γ(n)) ∫₀ˣ t^{n−1} e^{−t} dt` for integer `n ≥ 1`.
///
/// Power series below `x < n + 1`, Lentz continued fraction for the
/// complement above.
pub fn reg_lower_gamma(x: f64, n: u32) -> f64 {
    assert!(n >= 1, "shape must be >= 1");
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    let a = f64::from(n);
    let log_prefactor = a * x.ln() - x - ln_gamma_int(n);
    if x < a + 1.0 {
        series(a, x, log_prefactor)
    } else {
        1.0 - continued_fraction(a, x, log_prefactor)
    }
}

/// Regularized upper incomplete gamma `Q(n, x) = 1 − P(n, x)`.
pub fn reg_upper_gamma(x: f64, n: u32) -> f64 {
    assert!(n >= 1, "shape must be >= 1");
    if x <= 0.0 {
        return 1.0;
    }
    let a = f64::from(n);
    let log_prefactor = a * x.ln() - x - ln_gamma_int(n);
    if x < a + 1.0 {
        1.0 - series(a, x, log_prefactor)
    } else {
        continued_fraction(a, x, log_prefactor)
    }
}

// Σ_k x^k / (a (a+1) ... (a+k)), scaled by x^a e^{-x} / Γ(a).
fn series(a: f64, x: f64, log_prefactor: f64) -> f64 {
    let mut denom = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum * log_prefactor.exp()).clamp(0.0, 1.0)
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn continued_fraction(a: f64, x: f64, log_prefactor: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (log_prefactor.exp() * h).clamp(0.0, 1.0)
}

/// Density `x^{n−1} e^{−x} / Γ(n)` of the unit-scale gamma law.
pub fn gamma_pdf(x: f64, n: u32) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return if n == 1 { 1.0 } else { 0.0 };
    }
    (f64::from(n - 1) * x.ln() - x - ln_gamma_int(n)).exp()
}

/// Solves `P(n, x) = p` for `x`, `0 ≤ p < 1`.
///
/// Brackets the root by doubling, then runs Newton steps that fall back to
/// bisection whenever they leave the bracket.
pub fn inv_reg_lower_gamma(p: f64, n: u32) -> f64 {
    assert!((0.0..1.0).contains(&p), "p = {p} outside [0, 1)");
    if p == 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = f64::from(n).max(1.0);
    while reg_lower_gamma(hi, n) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = reg_lower_gamma(x, n) - p;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = gamma_pdf(x, n);
        let newton = if pdf > 0.0 { x - f / pdf } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 1e-15 * next || hi - lo <= 4.0 * f64::EPSILON * hi {
            return next;
        }
        x = next;
    }
    x
}
