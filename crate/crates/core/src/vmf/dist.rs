use rand::Rng;

use super::bessel::{self, Regime};
use super::sample::{self, SampleTrace};
use crate::autodiff::log_sum_exp;
use crate::error::{Error, Result};

/// Concentrations below this are treated as this value.
pub const KAPPA_FLOOR: f64 = 1e-6;

const UNIT_TOL: f64 = 1e-9;

fn check_dim(p: usize) -> Result<()> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("vMF needs dimension p >= 2, got {p}")));
    }
    Ok(())
}

/// `log C_p(κ)`, the log normalizer of the vMF density on `S^{p-1}`.
pub fn log_norm_const(p: usize, kappa: f64) -> Result<f64> {
    check_dim(p)?;
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidArgument(format!("kappa must be finite and >= 0, got {kappa}")));
    }
    let kappa = kappa.max(KAPPA_FLOOR);
    let nu = p as f64 / 2.0 - 1.0;
    let half_p_log_2pi = 0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(match bessel::regime(nu, kappa) {
        Regime::Series => {
            nu * std::f64::consts::LN_2 + statrs::function::gamma::ln_gamma(nu + 1.0)
                - half_p_log_2pi
                - bessel::log_series_tail(nu, kappa)
        }
        r => nu * kappa.ln() - half_p_log_2pi - bessel::log_bessel_i_in(r, nu, kappa),
    })
}

/// Mean resultant length `A_p(κ) = I_{p/2}(κ) / I_{p/2-1}(κ)`, equal to
/// `-d/dκ log C_p(κ)`.
pub fn mean_resultant_length(p: usize, kappa: f64) -> f64 {
    let kappa = kappa.max(KAPPA_FLOOR);
    let nu = p as f64 / 2.0 - 1.0;
    match bessel::regime(nu, kappa) {
        Regime::Series => {
            let log_ratio = (0.5 * kappa).ln() - (nu + 1.0).ln() + bessel::log_series_tail(nu + 1.0, kappa)
                - bessel::log_series_tail(nu, kappa);
            log_ratio.exp()
        }
        r => (bessel::log_bessel_i_in(r, nu + 1.0, kappa) - bessel::log_bessel_i_in(r, nu, kappa)).exp(),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_unit(what: &str, v: &[f64]) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidArgument(format!("{what} must be a unit vector, norm is {n}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct VonMisesFisher {
    mu: Vec<f64>,
    kappa: f64,
}

impl VonMisesFisher {
    pub fn new(mu: Vec<f64>, kappa: f64) -> Result<Self> {
        check_dim(mu.len())?;
        check_unit("mu", &mu)?;
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidArgument(format!("kappa must be finite and >= 0, got {kappa}")));
        }
        Ok(VonMisesFisher { mu, kappa })
    }

    /// Normalizes `direction` before construction.
    pub fn from_direction(direction: &[f64], kappa: f64) -> Result<Self> {
        let n = norm(direction);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument("direction must be non-zero and finite".into()));
        }
        Self::new(direction.iter().map(|x| x / n).collect(), kappa)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn log_norm_const(&self) -> f64 {
        log_norm_const(self.dim(), self.kappa).expect("validated at construction")
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::shape("vmf_log_pdf", format!("x has {} entries, mu {}", x.len(), self.dim())));
        }
        check_unit("x", x)?;
        Ok(self.log_norm_const() + self.kappa.max(KAPPA_FLOOR) * dot(&self.mu, x))
    }

    /// `n` samples and the accepted noise that produced them.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<(Vec<Vec<f64>>, SampleTrace)> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        let trace = sample::draw_noise(self.dim(), &vec![self.kappa; n], rng);
        let samples = (0..n).map(|i| sample::transform(&self.mu, self.kappa, trace.z[i], &trace.tangent[i])).collect();
        Ok((samples, trace))
    }
}

/// Log expected likelihood kernel `log ∫ vMF(x; a) vMF(x; b) dx`.
pub fn elk_sim(a: &VonMisesFisher, b: &VonMisesFisher) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("elk_sim", format!("dimensions {} and {}", a.dim(), b.dim())));
    }
    let combined: Vec<f64> = a.mu.iter().zip(&b.mu).map(|(x, y)| a.kappa * x + b.kappa * y).collect();
    Ok(a.log_norm_const() + b.log_norm_const() - log_norm_const(a.dim(), norm(&combined))?)
}

/// vMF whose direction and concentration are induced by per-axis scales:
/// the natural parameter is `Λ ∘ μ`.
#[derive(Clone, Debug, PartialEq)]
pub struct NonIsotropicVMF {
    mu: Vec<f64>,
    lambda: Vec<f64>,
}

impl NonIsotropicVMF {
    pub fn new(mu: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        check_dim(mu.len())?;
        check_unit("mu", &mu)?;
        if lambda.len() != mu.len() {
            return Err(Error::shape("nivmf", format!("lambda has {} entries, mu {}", lambda.len(), mu.len())));
        }
        if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("lambda entries must be positive and finite".into()));
        }
        Ok(NonIsotropicVMF { mu, lambda })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// The equivalent isotropic vMF.
    pub fn induced(&self) -> VonMisesFisher {
        let theta: Vec<f64> = self.mu.iter().zip(&self.lambda).map(|(m, l)| m * l).collect();
        let kappa = norm(&theta);
        VonMisesFisher { mu: theta.iter().map(|t| t / kappa).collect(), kappa }
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.induced().log_pdf(x)
    }
}

/// Monte-Carlo estimate of `log E_{x ~ post}[f_cls(x)]` from `n_samples` draws.
pub fn nivmf_approx_elk<R: Rng + ?Sized>(
    post: &VonMisesFisher,
    cls: &NonIsotropicVMF,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if post.dim() != cls.dim() {
        return Err(Error::shape("nivmf_approx_elk", format!("dimensions {} and {}", post.dim(), cls.dim())));
    }
    let (samples, _) = post.sample(n_samples, rng)?;
    let induced = cls.induced();
    let log_norm = induced.log_norm_const();
    let kappa = induced.kappa.max(KAPPA_FLOOR);
    let values: Vec<f64> = samples.iter().map(|x| log_norm + kappa * dot(&induced.mu, x)).collect();
    Ok(log_sum_exp(&values) - (n_samples as f64).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn closed_c3(kappa: f64) -> f64 {
        // log(κ / (4π sinh κ)) written to avoid overflow
        kappa.ln() - (4.0 * PI).ln() - kappa - (-(-2.0 * kappa).exp()).ln_1p() + 2f64.ln()
    }

    #[test]
    fn uniform_limit_p3() {
        assert!((log_norm_const(3, 0.0).unwrap() - (1.0 / (4.0 * PI)).ln()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_p3() {
        assert!((log_norm_const(3, 1.0).unwrap() - (-2.6925)).abs() < 5e-4);
        for &k in &[1e-3, 0.5, 1.0, 9.9, 10.5, 50.0, 100.0, 500.0] {
            let got = log_norm_const(3, k).unwrap();
            let want = closed_c3(k);
            assert!(((got - want) / want).abs() <= 1e-8, "kappa={k}");
        }
    }

    #[test]
    fn rejects_low_dimension() {
        assert!(log_norm_const(1, 1.0).is_err());
    }

    #[test]
    fn circle_normalizer() {
        // p = 2: C_2(κ) = 1 / (2π I_0(κ)); I_0(1) = 1.2660658777520082
        let want = -(2.0 * PI * 1.2660658777520082f64).ln();
        assert!((log_norm_const(2, 1.0).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn mean_resultant_length_p3() {
        // A_3(κ) = coth κ − 1/κ
        for &k in &[1e-3f64, 0.7, 5.0, 20.0, 300.0] {
            let want = 1.0 / k.tanh() - 1.0 / k;
            assert!((mean_resultant_length(3, k) - want).abs() < 1e-10, "kappa={k}");
        }
    }

    #[test]
    fn log_pdf_example() {
        let d = VonMisesFisher::new(vec![0.0, 0.0, 1.0], 2.0).unwrap();
        let x = [(0.75f64).sqrt(), 0.0, 0.5];
        assert!((d.log_pdf(&x).unwrap() - (closed_c3(2.0) + 1.0)).abs() < 1e-12);
        assert!(d.log_pdf(&[1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn elk_symmetry_and_alignment() {
        let a = VonMisesFisher::new(vec![1.0, 0.0, 0.0], 3.0).unwrap();
        let b = VonMisesFisher::new(vec![0.0, 1.0, 0.0], 7.0).unwrap();
        assert_eq!(elk_sim(&a, &b).unwrap(), elk_sim(&b, &a).unwrap());
        let same = VonMisesFisher::new(vec![1.0, 0.0, 0.0], 7.0).unwrap();
        let opposite = VonMisesFisher::new(vec![-1.0, 0.0, 0.0], 7.0).unwrap();
        assert!(elk_sim(&a, &same).unwrap() > elk_sim(&a, &opposite).unwrap());
        let c = VonMisesFisher::new(vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        assert!(elk_sim(&a, &c).is_err());
    }

    #[test]
    fn nivmf_deterministic() {
        let post = VonMisesFisher::new(vec![0.6, 0.8, 0.0], 4.0).unwrap();
        let cls = NonIsotropicVMF::new(vec![0.0, 1.0, 0.0], vec![2.0, 3.0, 1.0]).unwrap();
        let a = nivmf_approx_elk(&post, &cls, 16, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = nivmf_approx_elk(&post, &cls, 16, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn nivmf_isotropic_reduction() {
        let post = VonMisesFisher::new(vec![0.6, 0.8, 0.0], 4.0).unwrap();
        let cls = NonIsotropicVMF::new(vec![0.0, 1.0, 0.0], vec![2.5; 3]).unwrap();
        let exact = elk_sim(&post, &cls.induced()).unwrap();
        let approx = nivmf_approx_elk(&post, &cls, 200_000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!((approx - exact).abs() < 0.02, "{approx} vs {exact}");
    }
}
