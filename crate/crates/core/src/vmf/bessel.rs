//! Logarithms of modified Bessel functions of the first kind, `log I_ν(x)`.
//!
//! Three regimes:
//! - power series for `x < ν + 10` (all terms positive, no cancellation);
//! - Hankel's large-argument expansion when `ν ≤ 2`;
//! - Debye's uniform expansion in `1/ν` when `ν > 2`.
//!
//! The series is kept in the form `I_ν(x) = (x/2)^ν / Γ(ν+1) · S_ν(x)` so the
//! normalizer stays finite and continuous as `x → 0`.

use std::sync::OnceLock;

use statrs::function::gamma::ln_gamma;

const SERIES_MARGIN: f64 = 10.0;
const HANKEL_MAX_ORDER: f64 = 2.0;
const DEBYE_TERMS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Regime {
    Series,
    Hankel,
    Debye,
}

pub(crate) fn regime(nu: f64, x: f64) -> Regime {
    if x < nu + SERIES_MARGIN {
        Regime::Series
    } else if nu <= HANKEL_MAX_ORDER {
        Regime::Hankel
    } else {
        Regime::Debye
    }
}

/// `log S_ν(x)` with `S_ν(x) = Σ_k (x²/4)^k / (k! (ν+1)_k)`.
pub(crate) fn log_series_tail(nu: f64, x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut log_scale = 0.0;
    let mut k = 0.0;
    loop {
        term *= q / ((k + 1.0) * (nu + 1.0 + k));
        sum += term;
        k += 1.0;
        if sum > 1e250 {
            log_scale += sum.ln();
            term /= sum;
            sum = 1.0;
        }
        if term < sum * 1e-17 && k > q.sqrt() {
            break;
        }
    }
    log_scale + sum.ln()
}

fn log_bessel_series(nu: f64, x: f64) -> f64 {
    nu * (0.5 * x).ln() - ln_gamma(nu + 1.0) + log_series_tail(nu, x)
}

fn log_bessel_hankel(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term: f64 = 1.0;
    let mut sum = 1.0;
    for k in 0..80 {
        let odd = (2 * k + 1) as f64;
        let next = -term * (mu - odd * odd) / (8.0 * (k as f64 + 1.0) * x);
        if next == 0.0 || next.abs() > term.abs() {
            break;
        }
        sum += next;
        term = next;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
}

/// Coefficients of Debye's polynomials `u_k(t)`, lowest degree first.
fn debye_polynomials() -> &'static Vec<Vec<f64>> {
    static POLYS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    POLYS.get_or_init(|| {
        // u_{k+1}(t) = ½ t² (1 − t²) u_k'(t) + ⅛ ∫₀ᵗ (1 − 5s²) u_k(s) ds
        let mut polys = vec![vec![1.0]];
        for k in 0..DEBYE_TERMS {
            let u = &polys[k];
            let mut next = vec![0.0; u.len() + 3];
            for (j, &c) in u.iter().enumerate().skip(1) {
                let d = c * j as f64;
                next[j + 1] += 0.5 * d;
                next[j + 3] -= 0.5 * d;
            }
            for (j, &c) in u.iter().enumerate() {
                next[j + 1] += 0.125 * c / (j as f64 + 1.0);
                next[j + 3] -= 0.125 * 5.0 * c / (j as f64 + 3.0);
            }
            polys.push(next);
        }
        polys
    })
}

fn log_bessel_debye(nu: f64, x: f64) -> f64 {
    let z = x / nu;
    let root = (1.0 + z * z).sqrt();
    let t = 1.0 / root;
    let eta = root + (z / (1.0 + root)).ln();
    let mut sum = 0.0;
    let mut nu_pow = 1.0;
    for poly in debye_polynomials() {
        let value = poly.iter().rev().fold(0.0, |acc, &c| acc * t + c);
        sum += value / nu_pow;
        nu_pow *= nu;
    }
    nu * eta - 0.5 * (2.0 * std::f64::consts::PI * nu).ln() - 0.25 * (1.0 + z * z).ln() + sum.ln()
}

/// `log I_ν(x)` for `ν ≥ 0`, `x > 0`.
pub fn log_bessel_i(nu: f64, x: f64) -> f64 {
    log_bessel_i_in(regime(nu, x), nu, x)
}

pub(crate) fn log_bessel_i_in(regime: Regime, nu: f64, x: f64) -> f64 {
    match regime {
        Regime::Series => log_bessel_series(nu, x),
        Regime::Hankel => log_bessel_hankel(nu, x),
        Regime::Debye => log_bessel_debye(nu, x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_half(x: f64) -> f64 {
        // I_{1/2}(x) = sqrt(2/(πx)) sinh x
        0.5 * (2.0 / (std::f64::consts::PI * x)).ln() + x + (-(-2.0 * x).exp()).ln_1p() - 2f64.ln()
    }

    #[test]
    fn debye_first_polynomial() {
        let u1 = &debye_polynomials()[1];
        assert!((u1[1] - 3.0 / 24.0).abs() < 1e-15);
        assert!((u1[3] + 5.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn half_order_matches_closed_form() {
        for &x in &[1e-3, 0.1, 1.0, 5.0, 10.4, 10.6, 30.0, 200.0, 700.0] {
            let got = log_bessel_i(0.5, x);
            let want = closed_half(x);
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn regimes_agree_at_switch() {
        for &nu in &[0.0, 0.5, 1.0, 2.0, 2.5, 7.0, 15.0, 63.0] {
            let x = nu + SERIES_MARGIN;
            let series = log_bessel_i_in(Regime::Series, nu, x);
            let asym = log_bessel_i(nu, x);
            assert!((series - asym).abs() <= 1e-8 * series.abs().max(1.0), "nu={nu}: {series} vs {asym}");
        }
    }

    #[test]
    fn asymptotic_matches_series_far_out() {
        for &nu in &[0.0, 1.5, 3.0, 7.0, 31.0] {
            for &x in &[nu + 20.0, nu + 80.0, 400.0] {
                let series = log_bessel_i_in(Regime::Series, nu, x);
                let asym = log_bessel_i(nu, x);
                assert!((series - asym).abs() <= 1e-9 * series.abs(), "nu={nu} x={x}");
            }
        }
    }
}
