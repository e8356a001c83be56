//! Laplace-domain poles, closed-form decay rates, and the scalar observables
//! read off simulated trajectories (decay rate, Rabi period, enhancement).
//!
//! The dispersion function of the cavity amplitude is
//!
//! ```text
//! D(s) = s + κ + i(ω_c − ω_p) + Ω² f(s + γ),   f(σ) = ∫dω ρ(ω) / (σ + i(ω − ω_p)).
//! ```
//!
//! `f` as an integral is analytic for Re σ > 0 only. The damped normal modes
//! live at Re σ < 0, reached by continuing `f` through the real ω axis,
//! which adds the residue term `2π ρ(ω_p + iσ)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CavityTrajectory, SystemParams};
use crate::quadrature;
use crate::spectral::{SpectralDensity, DEFAULT_EPS};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const MAX_NEWTON: usize = 50;
const POLE_TOL: f64 = 1e-10;
/// Peaks below this fraction of the largest one are ignored by the fits
/// (1e-6 in amplitude).
const PEAK_FLOOR: f64 = 1e-12;
const STEADY_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolePair {
    /// Pole with the larger imaginary part.
    pub s_plus: Complex64,
    pub s_minus: Complex64,
    pub converged: bool,
    /// Largest `|D(s)|` of the two.
    pub residual: f64,
}

impl PolePair {
    /// Intensity decay rates `−2 Re s` of the two modes.
    pub fn decay_rates(&self) -> (f64, f64) {
        (-2.0 * self.s_plus.re, -2.0 * self.s_minus.re)
    }

    /// Mean intensity decay rate of the pair.
    pub fn gamma(&self) -> f64 {
        -(self.s_plus.re + self.s_minus.re)
    }

    pub fn rabi_splitting(&self) -> f64 {
        self.s_plus.im - self.s_minus.im
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisResult {
    /// Intensity decay rate (rad/ns).
    pub gamma: f64,
    /// Rabi splitting (rad/ns).
    pub omega_r: f64,
    /// Rabi period (ns).
    pub t_r: f64,
    pub enhancement: Option<f64>,
}

impl AnalysisResult {
    pub fn from_poles(poles: &PolePair) -> Self {
        let omega_r = poles.rabi_splitting();
        AnalysisResult {
            gamma: poles.gamma(),
            omega_r,
            t_r: 2.0 * PI / omega_r,
            enhancement: None,
        }
    }
}

/// ∫ρ(ω_s + x) / (σ + i(x + d))^power dx over the truncation window, with d = ω_s − ω_p.
fn window_integral(sigma: Complex64, d: f64, rho: &SpectralDensity, power: i32) -> Result<Complex64> {
    let w = rho.window_halfwidth(DEFAULT_EPS);
    let delta = rho.delta();
    // Real location and width of the near-singularity.
    let xp = -d - sigma.im;
    let width = sigma.re.abs().max(1e-9 * delta);
    let mut cuts = vec![-w, w, 0.0, -delta, delta, -10.0 * delta, 10.0 * delta];
    for k in [-30.0, -3.0, -1.0, 0.0, 1.0, 3.0, 30.0] {
        cuts.push(xp + k * width);
    }
    cuts.retain(|c| c.abs() <= w);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let scale = width.max(sigma.norm()).min(delta.max(sigma.norm())).powi(-power);
    let tol = 1e-13 * scale.max(1.0 / delta.powi(power));
    let term = |x: f64| rho.density_offset(x) / (sigma + I * (x + d)).powi(power);
    let mut total = Complex64::new(0.0, 0.0);
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a <= 0.0 {
            continue;
        }
        let re = quadrature::adaptive(|x| term(x).re, a, b, tol)?;
        let im = quadrature::adaptive(|x| term(x).im, a, b, tol)?;
        total += Complex64::new(re, im);
    }
    Ok(total)
}

/// `f(σ)` and `f'(σ)`; `continued` selects the sheet reached from Re σ > 0
/// through the real ω axis.
fn response_function(
    sigma: Complex64,
    params: &SystemParams,
    rho: &SpectralDensity,
    continued: bool,
) -> Result<(Complex64, Complex64)> {
    let d = rho.omega_s() - params.omega_p;
    if rho.is_lorentzian() {
        // The integral is 1/(σ ± Δ + i d), the sign fixed by the side of the cut.
        let delta = if continued || sigma.re > 0.0 { rho.delta() } else { -rho.delta() };
        let den = sigma + delta + I * d;
        return Ok((1.0 / den, -1.0 / (den * den)));
    }
    let mut f = window_integral(sigma, d, rho, 1)?;
    let mut df = -window_integral(sigma, d, rho, 2)?;
    if continued && sigma.re < 0.0 {
        let z = -d + I * sigma;
        f += 2.0 * PI * rho.density_offset_complex(z);
        df += 2.0 * PI * I * rho.density_offset_complex_derivative(z);
    }
    Ok((f, df))
}

/// D(s) with the spin integral taken literally along the real ω axis.
pub fn dispersion_value(s: Complex64, params: &SystemParams, rho: &SpectralDensity) -> Result<Complex64> {
    let (f, _) = response_function(s + params.gamma, params, rho, false)?;
    Ok(s + params.cavity_rate() + params.coupling.powi(2) * f)
}

/// D(s) continued across the spin band into Re(s + γ) < 0, where the damped
/// normal modes are.
pub fn dispersion_value_continued(s: Complex64, params: &SystemParams, rho: &SpectralDensity) -> Result<Complex64> {
    Ok(dispersion_with_derivative(s, params, rho)?.0)
}

/// Continued D(s) and dD/ds.
pub fn dispersion_with_derivative(
    s: Complex64,
    params: &SystemParams,
    rho: &SpectralDensity,
) -> Result<(Complex64, Complex64)> {
    let (f, df) = response_function(s + params.gamma, params, rho, true)?;
    let k2 = params.coupling.powi(2);
    Ok((s + params.cavity_rate() + k2 * f, 1.0 + k2 * df))
}

fn newton(mut s: Complex64, params: &SystemParams, rho: &SpectralDensity) -> Result<(Complex64, f64)> {
    let tol = POLE_TOL * params.coupling;
    for _ in 0..MAX_NEWTON {
        let (d, dd) = dispersion_with_derivative(s, params, rho)?;
        if d.norm() < tol {
            return Ok((s, d.norm()));
        }
        let step = d / dd;
        if !(step.re.is_finite() && step.im.is_finite()) {
            break;
        }
        s -= step;
    }
    let (d, _) = dispersion_with_derivative(s, params, rho)?;
    if d.norm() < tol {
        return Ok((s, d.norm()));
    }
    Err(Error::NoConvergence(format!(
        "Newton stalled at s = {s} with |D| = {:e}",
        d.norm()
    )))
}

/// The two dominant (normal-mode) poles of the cavity amplitude.
pub fn find_poles(params: &SystemParams, rho: &SpectralDensity) -> Result<PolePair> {
    let params = params.validate()?;
    let omega = params.coupling;
    let limit = 0.25 * rho.fwhm();
    if omega <= limit {
        return Err(Error::NotSplit { omega, limit });
    }
    let centre = -params.cavity_detuning();
    let guess = |sign: f64| {
        let damping = params.kappa + PI * omega * omega * rho.density_at(rho.omega_s() + sign * omega);
        Complex64::new(-0.5 * damping, centre + sign * omega)
    };
    let (a, ra) = newton(guess(1.0), &params, rho)?;
    let (b, rb) = newton(guess(-1.0), &params, rho)?;
    let (s_plus, s_minus) = if a.im >= b.im { (a, b) } else { (b, a) };
    Ok(PolePair { s_plus, s_minus, converged: true, residual: ra.max(rb) })
}

/// Strong-coupling limit `κ + πΩ²ρ(ω_s + Ω)` of the intensity decay rate.
pub fn gamma_asymptotic(params: &SystemParams, rho: &SpectralDensity) -> f64 {
    let omega = params.coupling;
    params.kappa + PI * omega * omega * rho.density_at(rho.omega_s() + omega)
}

/// Markovian (Purcell) intensity decay rate `2[κ + πΩ²ρ(ω_s)]`.
pub fn gamma_markov(params: &SystemParams, rho: &SpectralDensity) -> f64 {
    2.0 * (params.kappa + PI * params.coupling.powi(2) * rho.density_at(rho.omega_s()))
}

/// Poles of the resonant Lorentzian problem, `[−(Δ+κ) ± sqrt((Δ−κ)² − 4Ω²)]/2`.
/// The first value carries the root with non-negative imaginary part.
pub fn gamma_lorentzian(delta: f64, kappa: f64, omega: f64) -> (Complex64, Complex64) {
    let disc = Complex64::new(4.0 * (delta - kappa).powi(2) - 16.0 * omega * omega, 0.0).sqrt();
    let base = Complex64::new(-2.0 * (delta + kappa), 0.0);
    ((base + disc) / 4.0, (base - disc) / 4.0)
}

/// Local maxima of `values` on `(from, to]`, refined by a parabola through
/// the three samples around each.
fn peaks(times: &[f64], values: &[f64], from: f64, to: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 1..values.len().saturating_sub(1) {
        if times[i] <= from || times[i] > to {
            continue;
        }
        let (l, c, r) = (values[i - 1], values[i], values[i + 1]);
        if !(c > l && c >= r) {
            continue;
        }
        let curv = l - 2.0 * c + r;
        let (dx, v) = if curv < 0.0 {
            let dx = 0.5 * (l - r) / curv;
            (dx, c - 0.25 * (l - r) * dx)
        } else {
            (0.0, c)
        };
        let h = times[i + 1] - times[i];
        out.push((times[i] + dx * h, v));
    }
    out
}

fn above_floor(mut peaks: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let max = peaks.iter().map(|p| p.1).fold(0.0, f64::max);
    peaks.retain(|p| p.1 > PEAK_FLOOR * max);
    peaks
}

/// Least-squares slope of `y` against `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Intensity decay rate after a switch-off at `t_fit_start`, from the decay of
/// the |A|² maxima. Without at least three maxima, ln|A|² itself is fitted
/// until it has dropped by 10⁻³.
pub fn extract_decay_rate(traj: &CavityTrajectory, t_fit_start: f64) -> Result<f64> {
    let times = traj.times();
    let int = traj.intensity();
    let t_last = *times.last().unwrap_or(&t_fit_start);
    let maxima = above_floor(peaks(&times, &int, t_fit_start, t_last));
    if maxima.len() >= 3 {
        let x: Vec<f64> = maxima.iter().map(|p| p.0).collect();
        let y: Vec<f64> = maxima.iter().map(|p| p.1.ln()).collect();
        return Ok(-slope(&x, &y));
    }
    let start = times.iter().position(|&t| t >= t_fit_start).ok_or_else(|| {
        Error::InsufficientDecay(format!("no samples after t = {t_fit_start} ns"))
    })?;
    let i0 = int[start];
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for k in start..int.len() {
        if !(int[k] > 1e-3 * i0) {
            break;
        }
        x.push(times[k]);
        y.push(int[k].ln());
    }
    if x.len() < 3 {
        return Err(Error::InsufficientDecay(format!(
            "{} usable samples after t = {t_fit_start} ns",
            x.len()
        )));
    }
    Ok(-slope(&x, &y))
}

/// Rabi splitting and period from the mean spacing of |A|² maxima at or after
/// `t_from`.
pub fn extract_rabi(traj: &CavityTrajectory, t_from: f64) -> Result<(f64, f64)> {
    let times = traj.times();
    let int = traj.intensity();
    let t_last = *times.last().unwrap_or(&t_from);
    let maxima = above_floor(peaks(&times, &int, t_from, t_last));
    let minima = peaks(&times, &int.iter().map(|v| -v).collect::<Vec<_>>(), t_from, t_last).len();
    if maxima.len() < 2 || maxima.len() + minima < 3 {
        return Err(Error::NoOscillation(format!(
            "{} maxima and {minima} minima after t = {t_from} ns",
            maxima.len()
        )));
    }
    let t_r = (maxima[maxima.len() - 1].0 - maxima[0].0) / (maxima.len() - 1) as f64;
    Ok((2.0 * PI / t_r, t_r))
}

/// Mean of the last three |A|² maxima, which must agree within 5%.
pub fn late_peak_level(traj: &CavityTrajectory) -> Result<f64> {
    let times = traj.times();
    let int = traj.intensity();
    let maxima = peaks(&times, &int, f64::NEG_INFINITY, *times.last().unwrap());
    if maxima.len() < 3 {
        return Err(Error::NotSteady(format!("only {} maxima", maxima.len())));
    }
    let last: Vec<f64> = maxima[maxima.len() - 3..].iter().map(|p| p.1).collect();
    let mean = last.iter().sum::<f64>() / 3.0;
    if last.iter().any(|v| (v - mean).abs() > STEADY_TOL * mean) {
        return Err(Error::NotSteady(format!("last maxima {last:?} differ by more than 5%")));
    }
    Ok(mean)
}

/// Final |A|², required to be flat over the last tenth of the trace.
pub fn steady_level(traj: &CavityTrajectory) -> Result<f64> {
    let int = traj.intensity();
    let n = int.len();
    let last = int[n - 1];
    let tail = &int[n - 1 - (n - 1) / 10..];
    if !(last > 0.0) || tail.iter().any(|v| (v - last).abs() > STEADY_TOL * last) {
        return Err(Error::NotSteady(format!("|A|² not stationary at the end (last {last:e})")));
    }
    Ok(last)
}

/// Ratio of the late-time peak |A|² of a pulsed trace to the stationary |A|²
/// of a continuously driven one. A pulsed trace without maxima is compared
/// through its own final level.
pub fn enhancement_factor(traj_pulsed: &CavityTrajectory, traj_cw: &CavityTrajectory) -> Result<f64> {
    let reference = steady_level(traj_cw)?;
    let pulsed = match late_peak_level(traj_pulsed) {
        Ok(v) => v,
        Err(e) => match steady_level(traj_pulsed) {
            Ok(v) => v,
            Err(_) => return Err(e),
        },
    };
    Ok(pulsed / reference)
}
