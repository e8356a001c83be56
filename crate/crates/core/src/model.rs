//! Shared parameter and trajectory types.
//!
//! Units throughout the crate: time in ns, every rate and frequency as an
//! angular frequency in rad/ns. `kappa` and `gamma` are amplitude decay rates
//! (half-widths); the empty cavity's intensity linewidth is `2 * kappa`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a frequency in MHz into an angular frequency in rad/ns.
pub fn mhz_to_angular(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f * 1e-3
}

/// Inverse of [`mhz_to_angular`].
pub fn angular_to_mhz(w: f64) -> f64 {
    w * 1e3 / (2.0 * std::f64::consts::PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Cavity frequency.
    pub omega_c: f64,
    /// Center of the spin distribution.
    pub omega_s: f64,
    /// Probe frequency; also the rotating-frame frequency.
    pub omega_p: f64,
    /// Cavity amplitude decay rate.
    pub kappa: f64,
    /// Spin amplitude decay rate.
    pub gamma: f64,
    /// Collective coupling strength, `Omega^2 = sum_k g_k^2`.
    pub coupling: f64,
}

impl SystemParams {
    /// Device parameters of the NV-ensemble / superconducting resonator
    /// experiment: 2.6899 GHz resonance, κ = 2π·0.8 MHz FWHM (so 2π·0.4 MHz
    /// amplitude rate), negligible spin loss, Ω = 2π·8.6 MHz.
    pub fn paper() -> Self {
        let w = mhz_to_angular(2689.9);
        SystemParams {
            omega_c: w,
            omega_s: w,
            omega_p: w,
            kappa: mhz_to_angular(0.4),
            gamma: 0.0,
            coupling: mhz_to_angular(8.6),
        }
    }

    pub fn validate(self) -> Result<Self> {
        for (name, value) in [
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("coupling", self.coupling),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::NegativeRate { name, value });
            }
        }
        for (name, value) in [
            ("omega_c", self.omega_c),
            ("omega_s", self.omega_s),
            ("omega_p", self.omega_p),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveFrequency { name, value });
            }
        }
        Ok(self)
    }

    /// `omega_c - omega_p`: cavity detuning seen in the rotating frame.
    pub fn cavity_detuning(&self) -> f64 {
        self.omega_c - self.omega_p
    }

    /// Complex cavity rate `kappa + i (omega_c - omega_p)` of the local term,
    /// so that a free cavity rotates like a spin of frequency omega_c.
    pub fn cavity_rate(&self) -> Complex64 {
        Complex64::new(self.kappa, self.cavity_detuning())
    }

    pub fn with_coupling(mut self, coupling: f64) -> Self {
        self.coupling = coupling;
        self
    }

    pub fn with_probe(mut self, omega_p: f64) -> Self {
        self.omega_p = omega_p;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::BadGrid(format!("dt must be positive, got {dt}")));
        }
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::BadGrid(format!(
                "t_end ({t_end}) must exceed t_start ({t_start})"
            )));
        }
        Ok(TimeGrid { t_start, t_end, dt })
    }

    pub fn len(&self) -> usize {
        // Small tolerance so that e.g. 1500/0.05 lands on 30000, not 29999.
        ((self.t_end - self.t_start) / self.dt + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t_start + i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.time(i))
    }

    /// Index of the grid point at `t`, if `t` sits on the lattice.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t_start) / self.dt;
        let k = x.round();
        if k < 0.0 || (x - k).abs() > 1e-6 {
            None
        } else {
            Some(k as usize)
        }
    }
}

/// Complex cavity amplitude A(t) sampled on a uniform grid, rotating frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CavityTrajectory {
    pub grid: TimeGrid,
    pub amplitude: Vec<Complex64>,
}

impl CavityTrajectory {
    pub fn new(grid: TimeGrid, amplitude: Vec<Complex64>) -> Result<Self> {
        if amplitude.len() != grid.len() {
            return Err(Error::BadGrid(format!(
                "{} samples for a grid of {}",
                amplitude.len(),
                grid.len()
            )));
        }
        if let Some(i) = amplitude.iter().position(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(Error::NonFinite(grid.time(i)));
        }
        Ok(CavityTrajectory { grid, amplitude })
    }

    pub fn len(&self) -> usize {
        self.amplitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitude.is_empty()
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.amplitude.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times().collect()
    }

    /// Leading part of the trajectory up to (and including) the grid point at
    /// or just below `t_end`.
    pub fn truncated(&self, t_end: f64) -> Result<Self> {
        let n = (((t_end - self.grid.t_start) / self.grid.dt + 1e-9).floor() as usize + 1).min(self.len());
        if t_end < self.grid.t_start || n < 2 {
            return Err(Error::BadGrid(format!("cannot truncate at {t_end} ns")));
        }
        let grid = TimeGrid::new(self.grid.t_start, self.grid.time(n - 1), self.grid.dt)?;
        CavityTrajectory::new(grid, self.amplitude[..grid.len().min(n)].to_vec())
    }

    /// Relative L2 distance `||self - reference|| / ||reference||`.
    pub fn relative_l2(&self, reference: &CavityTrajectory) -> f64 {
        let n = self.len().min(reference.len());
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            num += (self.amplitude[i] - reference.amplitude[i]).norm_sqr();
            den += reference.amplitude[i].norm_sqr();
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }
}
