//! Brute-force reference: the finite-N mean-field equations
//!
//! ```text
//! dA/dt   = −[κ + i(ω_c − ω_p)] A + Σ_k g_k B_k − η(t)
//! dB_k/dt = −[γ + i(ω_k − ω_p)] B_k − g_k A
//! ```
//!
//! integrated with classic fixed-step RK4 from the ground state.

use num_complex::Complex64;

use crate::drive::DriveProtocol;
use crate::error::{Error, Result};
use crate::model::{CavityTrajectory, SystemParams, TimeGrid};
use crate::spectral::SpectralDensity;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteEnsemble {
    pub omegas: Vec<f64>,
    pub couplings: Vec<f64>,
    /// `None` for stratified (quantile) sampling.
    pub seed: Option<u64>,
}

impl DiscreteEnsemble {
    /// `n` spins with equal couplings `Ω/√n`, frequencies drawn from ρ.
    pub fn random(rho: &SpectralDensity, n: usize, coupling: f64, seed: u64) -> Self {
        Self::with_frequencies(rho.sample_frequencies(n.max(1), seed), coupling, Some(seed))
    }

    /// Frequencies at the quantiles `(k − ½)/n` of ρ.
    pub fn stratified(rho: &SpectralDensity, n: usize, coupling: f64) -> Self {
        Self::with_frequencies(rho.stratified_frequencies(n.max(1)), coupling, None)
    }

    pub fn with_frequencies(omegas: Vec<f64>, coupling: f64, seed: Option<u64>) -> Self {
        let g = coupling / (omegas.len() as f64).sqrt();
        DiscreteEnsemble {
            couplings: vec![g; omegas.len()],
            omegas,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// `sqrt(Σ g_k²)`.
    pub fn collective_coupling(&self) -> f64 {
        self.couplings.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Same as [`DiscreteEnsemble::random`].
pub fn build_ensemble(rho: &SpectralDensity, n: usize, coupling: f64, seed: u64) -> DiscreteEnsemble {
    DiscreteEnsemble::random(rho, n, coupling, seed)
}

/// Kolmogorov–Smirnov distance between samples and a CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub a: Complex64,
    pub b: Vec<Complex64>,
}

impl EnsembleState {
    pub fn ground(n: usize) -> Self {
        EnsembleState { a: ZERO, b: vec![ZERO; n] }
    }
}

/// `|A|² + Σ|B_k|²`.
pub fn total_excitation(state: &EnsembleState) -> f64 {
    state.a.norm_sqr() + state.b.iter().map(|b| b.norm_sqr()).sum::<f64>()
}

struct Rhs<'a> {
    cavity: Complex64,
    spin: Vec<Complex64>,
    g: &'a [f64],
}

impl Rhs<'_> {
    fn eval(&self, a: Complex64, b: &[Complex64], eta: Complex64, da: &mut Complex64, db: &mut [Complex64]) {
        let mut sum = ZERO;
        for ((bk, gk), (dk, ck)) in b.iter().zip(self.g).zip(db.iter_mut().zip(&self.spin)) {
            sum += gk * bk;
            *dk = -ck * bk - gk * a;
        }
        *da = -self.cavity * a + sum - eta;
    }
}

/// RK4 from the ground state, one step per grid interval.
pub fn integrate(
    ensemble: &DiscreteEnsemble,
    params: &SystemParams,
    protocol: &DriveProtocol,
    grid: &TimeGrid,
) -> Result<(CavityTrajectory, EnsembleState)> {
    integrate_from(EnsembleState::ground(ensemble.len()), ensemble, params, protocol, grid, 1)
}

/// RK4 from `initial`, `substeps` internal steps per grid interval. Drive
/// switches must fall on grid points.
pub fn integrate_from(
    initial: EnsembleState,
    ensemble: &DiscreteEnsemble,
    params: &SystemParams,
    protocol: &DriveProtocol,
    grid: &TimeGrid,
    substeps: usize,
) -> Result<(CavityTrajectory, EnsembleState)> {
    let params = params.validate()?;
    let n = ensemble.len();
    if initial.b.len() != n {
        return Err(Error::validation("initial.b", format!("expected {n} spin amplitudes")));
    }
    let rhs = Rhs {
        cavity: params.cavity_rate(),
        spin: ensemble
            .omegas
            .iter()
            .map(|w| Complex64::new(params.gamma, w - params.omega_p))
            .collect(),
        g: &ensemble.couplings,
    };
    let h = grid.dt / substeps.max(1) as f64;
    let mut state = initial;
    let mut out = Vec::with_capacity(grid.len());
    out.push(state.a);

    let (mut k1a, mut k2a, mut k3a, mut k4a) = (ZERO, ZERO, ZERO, ZERO);
    let mut k1b = vec![ZERO; n];
    let mut k2b = vec![ZERO; n];
    let mut k3b = vec![ZERO; n];
    let mut k4b = vec![ZERO; n];
    let mut tmp = vec![ZERO; n];

    for i in 0..grid.len() - 1 {
        let t0 = grid.time(i);
        // Constant over the whole interval since switches sit on grid points.
        let eta = protocol.amplitude_at(t0 + 0.5 * grid.dt)?;
        for _ in 0..substeps.max(1) {
            let (a, b) = (state.a, &state.b);
            rhs.eval(a, b, eta, &mut k1a, &mut k1b);
            for ((t, bk), kk) in tmp.iter_mut().zip(b).zip(&k1b) {
                *t = bk + 0.5 * h * kk;
            }
            rhs.eval(a + 0.5 * h * k1a, &tmp, eta, &mut k2a, &mut k2b);
            for ((t, bk), kk) in tmp.iter_mut().zip(b).zip(&k2b) {
                *t = bk + 0.5 * h * kk;
            }
            rhs.eval(a + 0.5 * h * k2a, &tmp, eta, &mut k3a, &mut k3b);
            for ((t, bk), kk) in tmp.iter_mut().zip(b).zip(&k3b) {
                *t = bk + h * kk;
            }
            rhs.eval(a + h * k3a, &tmp, eta, &mut k4a, &mut k4b);
            state.a = a + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
            for (k, bk) in state.b.iter_mut().enumerate() {
                *bk += h / 6.0 * (k1b[k] + 2.0 * k2b[k] + 2.0 * k3b[k] + k4b[k]);
            }
        }
        if !(state.a.re.is_finite() && state.a.im.is_finite()) {
            return Err(Error::NonFinite(grid.time(i + 1)));
        }
        out.push(state.a);
    }
    Ok((CavityTrajectory::new(*grid, out)?, state))
}
