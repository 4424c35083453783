//! Special functions: log-gamma, regularized lower incomplete gamma, and the
//! χ² quantile obtained by inverting it.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "gamma_p requires a > 0");
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut term = sum;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Upper tail Q(a, x) by the modified Lentz continued fraction.
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
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
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// χ²_d CDF.
pub fn chi_square_cdf(dof: u32, q: f64) -> f64 {
    gamma_p(dof as f64 / 2.0, q / 2.0)
}

/// The p-th quantile of the χ² distribution with `dof` degrees of freedom:
/// the q with P(dof/2, q/2) = p, found by safeguarded Newton iteration inside
/// a bisection bracket.
pub fn chi_square_quantile(dof: u32, p: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::DomainError("χ² quantile needs dof ≥ 1".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DomainError(format!("χ² quantile needs p ∈ (0,1), got {p}")));
    }
    let a = dof as f64 / 2.0;
    let ln_norm = ln_gamma(a);
    let mut lo = 0.0;
    let mut hi = dof.max(1) as f64;
    while chi_square_cdf(dof, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi_square_cdf(dof, q) - p;
        if f.abs() <= 1e-14 {
            break;
        }
        if f < 0.0 {
            lo = q;
        } else {
            hi = q;
        }
        // density of χ²_d at q
        let x = q / 2.0;
        let dens = 0.5 * ((a - 1.0) * x.ln() - x - ln_norm).exp();
        let newton = q - f / dens;
        q = if dens.is_finite() && dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(q)
}

/// Arithmetic mean; NaN for an empty slice.
pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_and_sample_std() {
        let x = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean(&x), 5.0);
        assert_relative_eq!(std_dev(&x), (32.0_f64 / 7.0).sqrt(), epsilon = 1e-15);
        assert_eq!(std_dev(&[3.0]), 0.0);
    }

    #[test]
    fn ln_gamma_integers() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert_relative_eq!(ln_gamma(n as f64), fact.ln(), epsilon = 1e-12, max_relative = 1e-13);
            fact *= n as f64;
        }
        assert_relative_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
    }

    #[test]
    fn two_dof_closed_form() {
        let q = chi_square_quantile(2, 0.95).unwrap();
        assert_relative_eq!(q, -2.0 * 0.05f64.ln(), epsilon = 1e-10);
        assert!(q.to_string().starts_with("5.991"));
    }

    #[test]
    fn one_dof_median() {
        // square of the standard-normal 0.75 quantile 0.674489750196...
        let z = 0.674_489_750_196_081_7f64;
        let q = chi_square_quantile(1, 0.5).unwrap();
        assert_relative_eq!(q, z * z, epsilon = 1e-10);
    }

    #[test]
    fn thirty_two_dof() {
        let q = chi_square_quantile(32, 0.95).unwrap();
        assert!((46.19..46.20).contains(&q), "{q}");
        assert!((chi_square_cdf(32, q) - 0.95).abs() < 1e-10);
    }

    #[test]
    fn domain_errors() {
        assert!(chi_square_quantile(0, 0.5).is_err());
        assert!(chi_square_quantile(3, 0.0).is_err());
        assert!(chi_square_quantile(3, 1.0).is_err());
    }
}
