//! Run configuration files.
//!
//! Configs are JSON in user units (MHz for frequencies and rates, ns for
//! times). Conversion to rad/ns happens here and nowhere else. Rates are
//! given as FWHM, so the amplitude rates are half of them.
//!
//! ```json
//! {
//!   "params":   { "omega_c_mhz": 2689.9, "kappa_fwhm_mhz": 0.8, "collective_coupling_mhz": 8.6 },
//!   "density":  { "kind": "q_gaussian", "q": 1.39, "fwhm_mhz": 9.4 },
//!   "protocol": { "type": "rectangular", "t_on": 0, "t_off": 800 },
//!   "grid":     { "t_end": 1500, "dt": 0.05 },
//!   "scan":     { "variable": "Omega", "min": 0.5, "max": 30, "steps": 60 },
//!   "output":   { "path": "out.csv", "format": "csv" }
//! }
//! ```
//!
//! For an `omega_p` scan, `min`/`max` are probe detunings `ω_p − ω_c` in MHz.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Deserialize;

use crate::drive::DriveProtocol;
use crate::error::{Error, Result};
use crate::model::{mhz_to_angular, SystemParams, TimeGrid};
use crate::spectral::{DensityKind, SpectralDensity};
use crate::volterra::MAX_COUPLING_STEP;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    params: Option<RawParams>,
    density: Option<RawDensity>,
    protocol: Option<RawProtocol>,
    grid: Option<RawGrid>,
    scan: Option<RawScan>,
    output: Option<RawOutput>,
    seed: Option<u64>,
    workers: Option<usize>,
    oracle: Option<RawOracle>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    omega_c_mhz: Option<f64>,
    omega_s_mhz: Option<f64>,
    omega_p_mhz: Option<f64>,
    kappa_fwhm_mhz: Option<f64>,
    gamma_fwhm_mhz: Option<f64>,
    collective_coupling_mhz: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDensity {
    kind: Option<DensityKind>,
    q: Option<f64>,
    fwhm_mhz: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    #[serde(rename = "type")]
    kind: Option<String>,
    eta_re: Option<f64>,
    eta_im: Option<f64>,
    t_on: Option<f64>,
    t_off: Option<f64>,
    tau: Option<f64>,
    n_pulses: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    t_start: Option<f64>,
    t_end: Option<f64>,
    dt: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScan {
    variable: Option<String>,
    min: Option<f64>,
    max: Option<f64>,
    steps: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: Option<PathBuf>,
    format: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    n_spins: Option<usize>,
    sampling: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProtocolSpec {
    Rectangular { eta: Complex64, t_on: f64, t_off: f64 },
    PhaseSwitchedTrain { eta: Complex64, tau: f64, n_pulses: usize },
}

impl ProtocolSpec {
    /// Drive on `[0, t_end]`.
    pub fn build(&self, t_end: f64) -> Result<DriveProtocol> {
        match *self {
            ProtocolSpec::Rectangular { eta, t_on, t_off } => DriveProtocol::rectangular(eta, t_on, t_off, t_end),
            ProtocolSpec::PhaseSwitchedTrain { eta, tau, n_pulses } => {
                DriveProtocol::phase_switched_train(eta, tau, n_pulses, t_end)
            }
        }
    }

    pub fn eta(&self) -> Complex64 {
        match *self {
            ProtocolSpec::Rectangular { eta, .. } | ProtocolSpec::PhaseSwitchedTrain { eta, .. } => eta,
        }
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        match *self {
            ProtocolSpec::PhaseSwitchedTrain { eta, n_pulses, .. } => {
                ProtocolSpec::PhaseSwitchedTrain { eta, tau, n_pulses }
            }
            other => other,
        }
    }

    /// End of the last driven segment.
    pub fn drive_end(&self) -> f64 {
        match *self {
            ProtocolSpec::Rectangular { t_off, .. } => t_off,
            ProtocolSpec::PhaseSwitchedTrain { tau, n_pulses, .. } => tau * n_pulses as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanVariable {
    OmegaP,
    Omega,
    Tau,
}

impl ScanVariable {
    pub fn name(&self) -> &'static str {
        match self {
            ScanVariable::OmegaP => "omega_p",
            ScanVariable::Omega => "Omega",
            ScanVariable::Tau => "tau",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanAxis {
    pub variable: ScanVariable,
    /// MHz for `omega_p` (detuning from ω_c) and `Omega`, ns for `tau`.
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl ScanAxis {
    pub fn values(&self) -> Vec<f64> {
        let h = (self.max - self.min) / (self.steps - 1) as f64;
        (0..self.steps).map(|k| self.min + h * k as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSpec {
    pub n_spins: usize,
    pub stratified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Converted to rad/ns.
    pub params: SystemParams,
    pub density: SpectralDensity,
    pub protocol: ProtocolSpec,
    pub grid: TimeGrid,
    pub scan: Option<ScanAxis>,
    pub output: OutputSpec,
    pub seed: u64,
    pub workers: usize,
    pub oracle: OracleSpec,
}

fn required<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::validation(field, "required field is missing"))
}

fn finite(v: f64, field: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::validation(field, "must be a finite number"))
    }
}

fn positive(v: f64, field: &str) -> Result<f64> {
    if finite(v, field)? > 0.0 {
        Ok(v)
    } else {
        Err(Error::validation(field, format!("must be > 0, got {v}")))
    }
}

fn non_negative(v: f64, field: &str) -> Result<f64> {
    if finite(v, field)? >= 0.0 {
        Ok(v)
    } else {
        Err(Error::validation(field, format!("must be >= 0, got {v}")))
    }
}

fn on_lattice(t: f64, grid: &TimeGrid, field: &str) -> Result<()> {
    let k = (t - grid.t_start) / grid.dt;
    if (k - k.round()).abs() > 1e-6 {
        return Err(Error::validation(field, format!("{t} ns is not a multiple of grid.dt = {} ns", grid.dt)));
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;

    let rp = required(raw.params, "params")?;
    let omega_c_mhz = positive(required(rp.omega_c_mhz, "params.omega_c_mhz")?, "params.omega_c_mhz")?;
    let omega_s_mhz = positive(rp.omega_s_mhz.unwrap_or(omega_c_mhz), "params.omega_s_mhz")?;
    let omega_p_mhz = positive(rp.omega_p_mhz.unwrap_or(omega_c_mhz), "params.omega_p_mhz")?;
    let kappa = non_negative(required(rp.kappa_fwhm_mhz, "params.kappa_fwhm_mhz")?, "params.kappa_fwhm_mhz")?;
    let gamma = non_negative(rp.gamma_fwhm_mhz.unwrap_or(0.0), "params.gamma_fwhm_mhz")?;
    let coupling = non_negative(
        required(rp.collective_coupling_mhz, "params.collective_coupling_mhz")?,
        "params.collective_coupling_mhz",
    )?;
    let params = SystemParams {
        omega_c: mhz_to_angular(omega_c_mhz),
        omega_s: mhz_to_angular(omega_s_mhz),
        omega_p: mhz_to_angular(omega_p_mhz),
        kappa: 0.5 * mhz_to_angular(kappa),
        gamma: 0.5 * mhz_to_angular(gamma),
        coupling: mhz_to_angular(coupling),
    }
    .validate()?;

    let rd = required(raw.density, "density")?;
    let kind = required(rd.kind, "density.kind")?;
    let fwhm = mhz_to_angular(positive(required(rd.fwhm_mhz, "density.fwhm_mhz")?, "density.fwhm_mhz")?);
    let density = match kind {
        DensityKind::QGaussian => {
            let q = required(rd.q, "density.q")?;
            if !(q > 1.0 && q < 3.0) {
                return Err(Error::validation("density.q", format!("must lie in (1, 3), got {q}")));
            }
            SpectralDensity::q_gaussian_from_fwhm(params.omega_s, q, fwhm)?
        }
        DensityKind::Lorentzian => SpectralDensity::lorentzian_from_fwhm(params.omega_s, fwhm)?,
        DensityKind::Gaussian => SpectralDensity::gaussian_from_fwhm(params.omega_s, fwhm)?,
    };

    let rg = required(raw.grid, "grid")?;
    let t_start = rg.t_start.unwrap_or(0.0);
    if t_start != 0.0 {
        return Err(Error::validation("grid.t_start", "simulations start at t = 0"));
    }
    let t_end = positive(required(rg.t_end, "grid.t_end")?, "grid.t_end")?;
    let dt = positive(required(rg.dt, "grid.dt")?, "grid.dt")?;
    if dt >= t_end {
        return Err(Error::validation("grid.dt", "must be smaller than grid.t_end"));
    }
    let grid = TimeGrid::new(t_start, t_end, dt)?;

    let rpr = required(raw.protocol, "protocol")?;
    let eta = Complex64::new(
        finite(rpr.eta_re.unwrap_or(1.0), "protocol.eta_re")?,
        finite(rpr.eta_im.unwrap_or(0.0), "protocol.eta_im")?,
    );
    let kind = required(rpr.kind, "protocol.type")?;
    let protocol = match kind.as_str() {
        "rectangular" => {
            let t_on = non_negative(rpr.t_on.unwrap_or(0.0), "protocol.t_on")?;
            let t_off = positive(required(rpr.t_off, "protocol.t_off")?, "protocol.t_off")?;
            if t_off <= t_on || t_off > t_end {
                return Err(Error::validation("protocol.t_off", "must satisfy t_on < t_off <= grid.t_end"));
            }
            on_lattice(t_on, &grid, "protocol.t_on")?;
            on_lattice(t_off, &grid, "protocol.t_off")?;
            ProtocolSpec::Rectangular { eta, t_on, t_off }
        }
        "phase_switched_train" => {
            let tau = positive(required(rpr.tau, "protocol.tau")?, "protocol.tau")?;
            let n_pulses = required(rpr.n_pulses, "protocol.n_pulses")?;
            if n_pulses == 0 {
                return Err(Error::validation("protocol.n_pulses", "must be >= 1"));
            }
            ProtocolSpec::PhaseSwitchedTrain { eta, tau, n_pulses }
        }
        other => {
            return Err(Error::validation(
                "protocol.type",
                format!("expected `rectangular` or `phase_switched_train`, got `{other}`"),
            ))
        }
    };

    let scan = match raw.scan {
        None => None,
        Some(rs) => {
            let variable = match required(rs.variable, "scan.variable")?.as_str() {
                "omega_p" => ScanVariable::OmegaP,
                "Omega" => ScanVariable::Omega,
                "tau" => ScanVariable::Tau,
                other => {
                    return Err(Error::validation(
                        "scan.variable",
                        format!("expected one of omega_p, Omega, tau; got `{other}`"),
                    ))
                }
            };
            let min = finite(required(rs.min, "scan.min")?, "scan.min")?;
            let max = finite(required(rs.max, "scan.max")?, "scan.max")?;
            let steps = required(rs.steps, "scan.steps")?;
            if steps < 2 {
                return Err(Error::validation("scan.steps", format!("must be >= 2, got {steps}")));
            }
            if max <= min {
                return Err(Error::validation("scan.max", "must exceed scan.min"));
            }
            Some(ScanAxis { variable, min, max, steps })
        }
    };

    // Every protocol the run will use must fit the grid.
    let mut max_coupling = params.coupling;
    match scan.map(|s| s.variable) {
        Some(ScanVariable::Tau) => {
            let axis = scan.expect("scan present");
            if !matches!(protocol, ProtocolSpec::PhaseSwitchedTrain { .. }) {
                return Err(Error::validation("scan.variable", "tau scans need protocol.type = phase_switched_train"));
            }
            if axis.min <= 0.0 {
                return Err(Error::validation("scan.min", "tau must be > 0"));
            }
            for tau in axis.values() {
                on_lattice(tau, &grid, "scan")?;
                let p = protocol.with_tau(tau);
                if p.drive_end() > t_end + 1e-9 * dt {
                    return Err(Error::validation("scan.max", format!("train with tau = {tau} ns exceeds grid.t_end")));
                }
            }
        }
        Some(ScanVariable::Omega) => {
            let axis = scan.expect("scan present");
            if axis.min < 0.0 {
                return Err(Error::validation("scan.min", "coupling must be >= 0"));
            }
            max_coupling = mhz_to_angular(axis.max);
        }
        _ => {}
    }
    if let ProtocolSpec::PhaseSwitchedTrain { tau, .. } = protocol {
        on_lattice(tau, &grid, "protocol.tau")?;
        if protocol.drive_end() > t_end + 1e-9 * dt {
            return Err(Error::validation("protocol.n_pulses", "n_pulses * tau exceeds grid.t_end"));
        }
    }
    if max_coupling * dt >= MAX_COUPLING_STEP {
        return Err(Error::validation(
            "grid.dt",
            format!("Omega * dt = {:.3} rad must stay below {MAX_COUPLING_STEP}", max_coupling * dt),
        ));
    }

    let output = match raw.output {
        None => OutputSpec { path: None, format: OutputFormat::Csv },
        Some(ro) => OutputSpec {
            path: ro.path,
            format: match ro.format.as_deref() {
                None | Some("csv") => OutputFormat::Csv,
                Some("json") => OutputFormat::Json,
                Some(other) => {
                    return Err(Error::validation("output.format", format!("expected csv or json, got `{other}`")))
                }
            },
        },
    };

    let workers = raw.workers.unwrap_or(1);
    if workers == 0 {
        return Err(Error::validation("workers", "must be >= 1"));
    }
    let oracle = match raw.oracle {
        None => OracleSpec { n_spins: 4000, stratified: true },
        Some(ro) => {
            let n_spins = ro.n_spins.unwrap_or(4000);
            if n_spins == 0 {
                return Err(Error::validation("oracle.n_spins", "must be >= 1"));
            }
            let stratified = match ro.sampling.as_deref() {
                None | Some("stratified") => true,
                Some("random") => false,
                Some(other) => {
                    return Err(Error::validation(
                        "oracle.sampling",
                        format!("expected stratified or random, got `{other}`"),
                    ))
                }
            };
            OracleSpec { n_spins, stratified }
        }
    };

    Ok(RunConfig {
        params,
        density,
        protocol,
        grid,
        scan,
        output,
        seed: raw.seed.unwrap_or(0),
        workers,
        oracle,
    })
}
