//! Inhomogeneous spin distribution ρ(ω).
//!
//! The q-Gaussian `C·[1 − (1−q)(ω−ω_s)²/Δ²]^{1/(1−q)}` interpolates between a
//! Gaussian (q → 1) and a Lorentzian (q = 2). The two limits are also
//! available as their own kinds with closed-form normalization.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Default relative truncation level for frequency windows.
pub const DEFAULT_EPS: f64 = 1e-10;

/// Below this distance from q = 1 the q-Gaussian is evaluated as a Gaussian.
const GAUSSIAN_SWITCH: f64 = 1e-3;

const CDF_NODES: usize = 20_001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    QGaussian,
    Lorentzian,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDensity {
    kind: DensityKind,
    omega_s: f64,
    q: f64,
    delta: f64,
    norm_c: f64,
}

/// Closed-form branch actually used for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Power,
    Lorentzian,
    Gaussian,
}

/// FWHM `2Δ·sqrt((2^q − 2)/(2q − 2))`, continuous through q = 1.
pub fn fwhm(q: f64, delta: f64) -> f64 {
    2.0 * delta * fwhm_ratio(q).sqrt()
}

/// Inverse of [`fwhm`] for fixed `q`.
pub fn delta_from_fwhm(q: f64, gamma_q: f64) -> f64 {
    gamma_q / (2.0 * fwhm_ratio(q).sqrt())
}

fn fwhm_ratio(q: f64) -> f64 {
    // (2^q − 2)/(2q − 2) = expm1((q−1) ln 2)/(q − 1)
    let e = q - 1.0;
    if e == 0.0 {
        std::f64::consts::LN_2
    } else {
        (e * std::f64::consts::LN_2).exp_m1() / e
    }
}

/// Half-width (in units of Δ) at which the unit-peak q-Gaussian drops to `eps`.
fn q_window_halfwidth(q: f64, eps: f64) -> f64 {
    let e = q - 1.0;
    // [1 + e y²]^{-1/e} = eps  =>  y² = (eps^{-e} − 1)/e
    ((-e * eps.ln()).exp_m1() / e).sqrt()
}

/// Normalization constant `C` of the q-Gaussian with shape `q` and width `delta`.
///
/// Adaptive Gauss–Legendre over the `DEFAULT_EPS` truncation window plus the
/// two leading terms of the power-law tail beyond it.
pub fn normalization_constant(q: f64, delta: f64) -> Result<f64> {
    if !(q > 1.0 && q < 3.0) {
        return Err(Error::BadDensity(format!("q must lie in (1, 3), got {q}")));
    }
    if !(delta > 0.0) {
        return Err(Error::BadDensity(format!("delta must be positive, got {delta}")));
    }
    if q - 1.0 < GAUSSIAN_SWITCH {
        return Ok(1.0 / (delta * std::f64::consts::PI.sqrt()));
    }
    let e = q - 1.0;
    let p = 1.0 / e;
    let y_max = q_window_halfwidth(q, DEFAULT_EPS);
    let unit = |y: f64| (1.0 + e * y * y).powf(-p);
    // Split at a few widths so the bisection starts with sensible panels.
    let mut inner = 0.0;
    let mut lo = 0.0;
    let mut hi = 1.0_f64.min(y_max);
    while lo < y_max {
        inner += quadrature::adaptive(unit, lo, hi, 1e-16)?;
        lo = hi;
        hi = (hi * 4.0).min(y_max);
    }
    let tail = e.powf(-p)
        * (y_max.powf(1.0 - 2.0 * p) / (2.0 * p - 1.0)
            - p / e * y_max.powf(-1.0 - 2.0 * p) / (2.0 * p + 1.0));
    let total = 2.0 * (inner + tail);
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::QuadratureFailure(format!(
            "normalization integral not finite for q={q}"
        )));
    }
    Ok(1.0 / (delta * total))
}

impl SpectralDensity {
    pub fn q_gaussian(omega_s: f64, q: f64, delta: f64) -> Result<Self> {
        let norm_c = normalization_constant(q, delta)?;
        Ok(SpectralDensity {
            kind: DensityKind::QGaussian,
            omega_s,
            q,
            delta,
            norm_c,
        })
    }

    pub fn q_gaussian_from_fwhm(omega_s: f64, q: f64, fwhm: f64) -> Result<Self> {
        Self::q_gaussian(omega_s, q, delta_from_fwhm(q, fwhm))
    }

    /// Lorentzian with half-width at half-maximum `hwhm`.
    pub fn lorentzian(omega_s: f64, hwhm: f64) -> Result<Self> {
        check_delta(hwhm)?;
        Ok(SpectralDensity {
            kind: DensityKind::Lorentzian,
            omega_s,
            q: 2.0,
            delta: hwhm,
            norm_c: 1.0 / (std::f64::consts::PI * hwhm),
        })
    }

    pub fn lorentzian_from_fwhm(omega_s: f64, fwhm: f64) -> Result<Self> {
        Self::lorentzian(omega_s, 0.5 * fwhm)
    }

    /// Gaussian `exp(−(ω−ω_s)²/Δ²)/(Δ√π)`, the q → 1 limit.
    pub fn gaussian(omega_s: f64, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(SpectralDensity {
            kind: DensityKind::Gaussian,
            omega_s,
            q: 1.0,
            delta,
            norm_c: 1.0 / (delta * std::f64::consts::PI.sqrt()),
        })
    }

    pub fn gaussian_from_fwhm(omega_s: f64, fwhm: f64) -> Result<Self> {
        Self::gaussian(omega_s, fwhm / (2.0 * std::f64::consts::LN_2.sqrt()))
    }

    /// Same shape and width, different center.
    pub fn recentered(mut self, omega_s: f64) -> Self {
        self.omega_s = omega_s;
        self
    }

    pub fn kind(&self) -> DensityKind {
        self.kind
    }
    pub fn omega_s(&self) -> f64 {
        self.omega_s
    }
    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn norm_c(&self) -> f64 {
        self.norm_c
    }

    fn branch(&self) -> Branch {
        match self.kind {
            DensityKind::Lorentzian => Branch::Lorentzian,
            DensityKind::Gaussian => Branch::Gaussian,
            DensityKind::QGaussian if self.q - 1.0 < GAUSSIAN_SWITCH => Branch::Gaussian,
            DensityKind::QGaussian => Branch::Power,
        }
    }

    /// True for the Lorentzian kind, whose only singularities are the simple
    /// poles at `ω_s ± iΔ`.
    pub fn is_lorentzian(&self) -> bool {
        self.branch() == Branch::Lorentzian
    }

    pub fn fwhm(&self) -> f64 {
        match self.branch() {
            Branch::Lorentzian => 2.0 * self.delta,
            Branch::Gaussian => 2.0 * self.delta * std::f64::consts::LN_2.sqrt(),
            Branch::Power => fwhm(self.q, self.delta),
        }
    }

    /// ρ(ω) in ns/rad.
    pub fn density_at(&self, omega: f64) -> f64 {
        self.density_offset(omega - self.omega_s)
    }

    /// ρ(ω_s + x).
    pub fn density_offset(&self, x: f64) -> f64 {
        let y2 = (x / self.delta).powi(2);
        match self.branch() {
            Branch::Lorentzian => self.norm_c / (1.0 + y2),
            Branch::Gaussian => self.norm_c * (-y2).exp(),
            Branch::Power => {
                let b = 1.0 + (self.q - 1.0) * y2;
                if b <= 0.0 {
                    0.0
                } else {
                    self.norm_c * b.powf(1.0 / (1.0 - self.q))
                }
            }
        }
    }

    /// Analytic continuation of ρ(ω_s + z) off the real axis (principal branch).
    pub fn density_offset_complex(&self, z: Complex64) -> Complex64 {
        let y2 = (z / self.delta).powi(2);
        match self.branch() {
            Branch::Lorentzian => self.norm_c / (1.0 + y2),
            Branch::Gaussian => self.norm_c * (-y2).exp(),
            Branch::Power => self.norm_c * (1.0 + (self.q - 1.0) * y2).powf(1.0 / (1.0 - self.q)),
        }
    }

    /// d/dz of [`Self::density_offset_complex`].
    pub fn density_offset_complex_derivative(&self, z: Complex64) -> Complex64 {
        let d2 = self.delta * self.delta;
        match self.branch() {
            Branch::Lorentzian => {
                let b = 1.0 + z * z / d2;
                -self.norm_c * 2.0 * z / (d2 * b * b)
            }
            Branch::Gaussian => self.density_offset_complex(z) * (-2.0 * z / d2),
            Branch::Power => {
                let e = self.q - 1.0;
                let b = 1.0 + e * z * z / d2;
                // C·(-1/e)·b^{-1/e-1}·2 e z/Δ²
                -self.norm_c * b.powf(-1.0 / e - 1.0) * 2.0 * z / d2
            }
        }
    }

    /// Half-width `x` of the symmetric window outside which ρ < eps·ρ(ω_s).
    pub fn window_halfwidth(&self, eps: f64) -> f64 {
        if eps >= 1.0 {
            return 0.0;
        }
        let y = match self.branch() {
            Branch::Lorentzian => (1.0 / eps - 1.0).sqrt(),
            Branch::Gaussian => (-eps.ln()).sqrt(),
            Branch::Power => q_window_halfwidth(self.q, eps),
        };
        y * self.delta
    }

    /// `(omega_lo, omega_hi)` such that ρ < eps·ρ(ω_s) outside.
    pub fn support_window(&self, eps: f64) -> (f64, f64) {
        let h = self.window_halfwidth(eps);
        (self.omega_s - h, self.omega_s + h)
    }

    /// Tabulated CDF on the `DEFAULT_EPS` window, renormalized to the window.
    pub fn cdf_table(&self) -> CdfTable {
        CdfTable::build(self)
    }

    /// `n` i.i.d. frequencies by inverse-CDF transform; deterministic in `seed`.
    pub fn sample_frequencies(&self, n: usize, seed: u64) -> Vec<f64> {
        let table = self.cdf_table();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| self.omega_s + table.inverse(rng.random::<f64>()))
            .collect()
    }

    /// Deterministic quantiles `(k − ½)/n`, k = 1..n.
    pub fn stratified_frequencies(&self, n: usize) -> Vec<f64> {
        let table = self.cdf_table();
        (0..n)
            .map(|k| self.omega_s + table.inverse((k as f64 + 0.5) / n as f64))
            .collect()
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::BadDensity(format!("width must be positive, got {delta}")))
    }
}

/// Monotone cubic interpolant (Fritsch–Carlson) through increasing `xs`.
#[derive(Debug, Clone)]
struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl Pchip {
    fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let n = xs.len();
        let secants: Vec<f64> = (0..n - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();
        let mut ds = vec![0.0; n];
        ds[0] = secants[0];
        ds[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            let (a, b) = (secants[i - 1], secants[i]);
            if a * b <= 0.0 {
                ds[i] = 0.0;
            } else {
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                ds[i] = (w1 + w2) / (w1 / a + w2 / b);
            }
        }
        Pchip { xs, ys, ds }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&v| v <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.ds[i] + h01 * self.ys[i + 1] + h11 * h * self.ds[i + 1]
    }
}

/// CDF of a density tabulated on sinh-spaced offsets `x = ω − ω_s`.
#[derive(Debug, Clone)]
pub struct CdfTable {
    forward: Pchip,
    inverse: Pchip,
}

impl CdfTable {
    fn build(rho: &SpectralDensity) -> Self {
        let w = rho.window_halfwidth(DEFAULT_EPS);
        let scale = rho.delta / 8.0;
        let t_max = (w / scale).asinh();
        let xs: Vec<f64> = (0..CDF_NODES)
            .map(|i| {
                let t = -t_max + 2.0 * t_max * i as f64 / (CDF_NODES - 1) as f64;
                scale * t.sinh()
            })
            .collect();
        let (gx, gw) = quadrature::gauss_legendre(quadrature::PANEL_ORDER);
        let mut cdf = Vec::with_capacity(CDF_NODES);
        let mut acc = 0.0;
        cdf.push(0.0);
        for pair in xs.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            acc += half
                * gx.iter()
                    .zip(&gw)
                    .map(|(x, wt)| wt * rho.density_offset(mid + half * x))
                    .sum::<f64>();
            cdf.push(acc);
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        CdfTable {
            forward: Pchip::new(xs.clone(), cdf.clone()),
            inverse: Pchip::new(cdf, xs),
        }
    }

    /// Offset `x = ω − ω_s` at cumulative probability `u`.
    pub fn inverse(&self, u: f64) -> f64 {
        self.inverse.eval(u)
    }

    /// Cumulative probability at offset `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.forward.eval(x)
    }
}
