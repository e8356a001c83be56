//! Batch runner behind the command-line tool: single simulations, parameter
//! scans on a bounded worker pool, oracle validation and pole tables, plus
//! their CSV/JSON emission.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::analysis;
use crate::config::{OutputFormat, RunConfig, ScanAxis, ScanVariable};
use crate::drive::DriveProtocol;
use crate::error::{Error, Result};
use crate::model::{angular_to_mhz, mhz_to_angular, CavityTrajectory, SystemParams, TimeGrid};
use crate::oracle::{self, DiscreteEnsemble, EnsembleState};
use crate::spectral::SpectralDensity;
use crate::volterra::{self, FrequencyMethod, SharedResponse, SpectralResponse};

/// Relative L2 distance accepted between the Volterra and ODE trajectories.
pub const ORACLE_THRESHOLD: f64 = 2e-2;
/// Drift of the total excitation accepted in the lossless check.
pub const CONSERVATION_THRESHOLD: f64 = 1e-8;
/// Largest internal step of the ODE oracle (ns).
pub const ORACLE_MAX_STEP: f64 = 0.02;
/// Approximate spacing of the time axis in map outputs (ns).
const MAP_SPACING: f64 = 1.0;

/// Where and how results are written.
#[derive(Debug, Clone, PartialEq)]
pub struct Emit {
    pub path: PathBuf,
    pub format: OutputFormat,
    /// Drop the timestamp so identical runs give identical bytes.
    pub reproducible: bool,
}

/// Spectral responses keyed by everything they depend on. Scans build one
/// response up front and share it across workers.
#[derive(Debug, Default)]
pub struct ResponseCache {
    entries: Mutex<HashMap<(u64, usize), SharedResponse>>,
}

impl ResponseCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(
        &self,
        params: &SystemParams,
        rho: &SpectralDensity,
        grid: &TimeGrid,
    ) -> Result<SharedResponse> {
        let key = (SpectralResponse::key_for(params, rho, grid.dt, FrequencyMethod::Auto), grid.len());
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let built = Arc::new(SpectralResponse::build(params, rho, grid.dt, grid.len(), FrequencyMethod::Auto)?);
        self.entries.lock().expect("cache lock").insert(key, built.clone());
        Ok(built)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn solve_cached(
    params: &SystemParams,
    rho: &SpectralDensity,
    protocol: &DriveProtocol,
    grid: &TimeGrid,
    cache: Option<&ResponseCache>,
) -> Result<CavityTrajectory> {
    match cache {
        Some(c) => volterra::solve_with_response(params, rho, protocol, grid, &*c.get_or_build(params, rho, grid)?),
        None => volterra::solve(params, rho, protocol, grid),
    }
}

/// Index of the last grid point at or before `t`.
fn index_at(grid: &TimeGrid, t: f64) -> usize {
    let k = ((t - grid.t_start) / grid.dt + 1e-9).floor().max(0.0) as usize;
    k.min(grid.len() - 1)
}

fn map_stride(grid: &TimeGrid) -> usize {
    ((MAP_SPACING / grid.dt).round() as usize).max(1)
}

/// Result of a single simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub trajectory: CavityTrajectory,
    pub protocol: DriveProtocol,
}

pub fn simulate(config: &RunConfig) -> Result<Simulation> {
    let protocol = config.protocol.build(config.grid.t_end)?;
    let trajectory = volterra::solve(&config.params, &config.density, &protocol, &config.grid)?;
    Ok(Simulation { trajectory, protocol })
}

/// Runs the configured scenario and writes the trace.
pub fn run_simulate(config: &RunConfig, emit: &Emit) -> Result<Simulation> {
    if config.scan.is_some() {
        return Err(Error::validation("scan", "`simulate` takes a config without a scan axis"));
    }
    let sim = simulate(config)?;
    write_simulation(&sim, emit)?;
    Ok(sim)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRecord {
    pub axis: f64,
    pub values: Vec<Option<f64>>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub variable: ScanVariable,
    pub axis_name: &'static str,
    pub columns: Vec<&'static str>,
    /// One record per axis value, in axis order.
    pub records: Vec<ScanRecord>,
    /// `(axis, t_ns, |A|²)` rows for 2D maps, downsampled in time.
    pub map: Vec<(f64, f64, f64)>,
    pub summary: Vec<(&'static str, f64)>,
}

impl ScanResult {
    pub fn column(&self, name: &str) -> Vec<Option<f64>> {
        match self.columns.iter().position(|c| *c == name) {
            Some(k) => self.records.iter().map(|r| r.values[k]).collect(),
            None => vec![None; self.records.len()],
        }
    }

    pub fn summary_value(&self, name: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
    }
}

type PointOutput = (Vec<Option<f64>>, Vec<(f64, f64)>);

fn columns_for(variable: ScanVariable) -> (&'static str, Vec<&'static str>) {
    match variable {
        ScanVariable::OmegaP => ("detuning_mhz", vec!["omega_p_mhz", "steady_abs_A2"]),
        ScanVariable::Omega => (
            "Omega_mhz",
            vec![
                "gamma_sim_mhz",
                "gamma_pole_mhz",
                "gamma_markov_mhz",
                "gamma_lorentzian_1_mhz",
                "gamma_lorentzian_2_mhz",
                "gamma_asymptotic_mhz",
                "rabi_period_ns",
            ],
        ),
        ScanVariable::Tau => ("tau_ns", vec!["late_peak_abs_A2", "late_mean_peak_abs_A2", "enhancement"]),
    }
}

fn sampled(traj: &CavityTrajectory) -> Vec<(f64, f64)> {
    let stride = map_stride(&traj.grid);
    (0..traj.len())
        .step_by(stride)
        .map(|i| (traj.grid.time(i), traj.amplitude[i].norm_sqr()))
        .collect()
}

fn omega_p_point(config: &RunConfig, detuning: f64, cache: Option<&ResponseCache>) -> Result<PointOutput> {
    let params = config.params.with_probe(config.params.omega_c + mhz_to_angular(detuning));
    let protocol = config.protocol.build(config.grid.t_end)?;
    let traj = solve_cached(&params, &config.density, &protocol, &config.grid, cache)?;
    let k = index_at(&config.grid, config.protocol.drive_end());
    Ok((
        vec![Some(angular_to_mhz(params.omega_p)), Some(traj.amplitude[k].norm_sqr())],
        sampled(&traj),
    ))
}

fn omega_point(config: &RunConfig, coupling_mhz: f64, cache: Option<&ResponseCache>) -> Result<PointOutput> {
    let params = config.params.with_coupling(mhz_to_angular(coupling_mhz));
    let rho = &config.density;
    let protocol = config.protocol.build(config.grid.t_end)?;
    let traj = solve_cached(&params, rho, &protocol, &config.grid, cache)?;
    let off = config.protocol.drive_end();
    let sim = analysis::extract_decay_rate(&traj, off).ok().map(angular_to_mhz);
    let pole = analysis::find_poles(&params, rho).ok().map(|p| angular_to_mhz(p.gamma()));
    let (l1, l2) = analysis::gamma_lorentzian(0.5 * rho.fwhm() + params.gamma, params.kappa, params.coupling);
    let rabi = analysis::extract_rabi(&traj, off).ok().map(|r| r.1);
    Ok((
        vec![
            sim,
            pole,
            Some(angular_to_mhz(analysis::gamma_markov(&params, rho))),
            Some(angular_to_mhz(-2.0 * l1.re)),
            Some(angular_to_mhz(-2.0 * l2.re)),
            Some(angular_to_mhz(analysis::gamma_asymptotic(&params, rho))),
            rabi,
        ],
        Vec::new(),
    ))
}

/// Stationary |A|² under the protocol's drive amplitude held on for the
/// whole grid.
fn continuous_reference(config: &RunConfig, cache: Option<&ResponseCache>) -> Result<f64> {
    let protocol = DriveProtocol::rectangular(config.protocol.eta(), 0.0, config.grid.t_end, config.grid.t_end)?;
    let traj = solve_cached(&config.params, &config.density, &protocol, &config.grid, cache)?;
    analysis::steady_level(&traj)
}

fn tau_point(config: &RunConfig, tau: f64, reference: Option<f64>, cache: Option<&ResponseCache>) -> Result<PointOutput> {
    let spec = config.protocol.with_tau(tau);
    let protocol = spec.build(config.grid.t_end)?;
    let traj = solve_cached(&config.params, &config.density, &protocol, &config.grid, cache)?;
    let end = spec.drive_end();
    let lo = index_at(&config.grid, end - 2.0 * tau);
    let hi = index_at(&config.grid, end);
    let late = traj.amplitude[lo..=hi].iter().map(|a| a.norm_sqr()).fold(0.0, f64::max);
    let late_mean = traj.truncated(end).and_then(|t| analysis::late_peak_level(&t)).ok();
    Ok((
        vec![Some(late), late_mean, reference.map(|r| late / r)],
        sampled(&traj),
    ))
}

/// Positions of the two largest interior maxima of `y(x)`, refined by a
/// parabola through the neighbours.
fn two_peak_positions(x: &[f64], y: &[Option<f64>]) -> Option<(f64, f64)> {
    let mut found = Vec::new();
    for i in 1..y.len().saturating_sub(1) {
        let (Some(l), Some(c), Some(r)) = (y[i - 1], y[i], y[i + 1]) else {
            continue;
        };
        if c > l && c >= r {
            let curv = l - 2.0 * c + r;
            let dx = if curv < 0.0 { 0.5 * (l - r) / curv } else { 0.0 };
            found.push((x[i] + dx * (x[i + 1] - x[i]), c));
        }
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1));
    if found.len() < 2 {
        return None;
    }
    let (a, b) = (found[0].0, found[1].0);
    Some((a.min(b), a.max(b)))
}

fn summarize(axis: &ScanAxis, axis_values: &[f64], columns: &[&'static str], records: &[ScanRecord]) -> Vec<(&'static str, f64)> {
    let col = |name: &str| -> Vec<Option<f64>> {
        let k = columns.iter().position(|c| *c == name).expect("known column");
        records.iter().map(|r| r.values[k]).collect()
    };
    let argmax = |v: &[Option<f64>]| {
        v.iter()
            .enumerate()
            .filter_map(|(i, x)| x.map(|x| (i, x)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    };
    let mut out = Vec::new();
    match axis.variable {
        ScanVariable::OmegaP => {
            if let Some((lo, hi)) = two_peak_positions(axis_values, &col("steady_abs_A2")) {
                out.push(("lower_peak_mhz", lo));
                out.push(("upper_peak_mhz", hi));
                out.push(("splitting_mhz", hi - lo));
            }
        }
        ScanVariable::Omega => {
            if let Some((i, g)) = argmax(&col("gamma_sim_mhz")) {
                out.push(("gamma_max_mhz", g));
                out.push(("Omega_at_gamma_max_mhz", axis_values[i]));
            }
        }
        ScanVariable::Tau => {
            if let Some((i, v)) = argmax(&col("late_peak_abs_A2")) {
                out.push(("argmax_tau_ns", axis_values[i]));
                out.push(("max_late_peak_abs_A2", v));
            }
        }
    }
    out
}

/// Computes a scan; `use_cache = false` rebuilds the spectral response for
/// every point.
pub fn scan(config: &RunConfig, use_cache: bool) -> Result<ScanResult> {
    let axis = config
        .scan
        .ok_or_else(|| Error::validation("scan", "`scan` needs a scan axis in the config"))?;
    let cache = ResponseCache::new();
    let cache_ref = use_cache.then_some(&cache);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::validation("workers", e.to_string()))?;
    let values = axis.values();
    let (axis_name, columns) = columns_for(axis.variable);

    let outputs: Vec<Result<PointOutput>> = pool.install(|| -> Result<Vec<Result<PointOutput>>> {
        if use_cache {
            // Warm the cache before fanning out so workers never build twice.
            cache.get_or_build(&config.params, &config.density, &config.grid)?;
        }
        let reference = match axis.variable {
            ScanVariable::Tau => continuous_reference(config, cache_ref).ok(),
            _ => None,
        };
        Ok(values
            .par_iter()
            .map(|&v| match axis.variable {
                ScanVariable::OmegaP => omega_p_point(config, v, cache_ref),
                ScanVariable::Omega => omega_point(config, v, cache_ref),
                ScanVariable::Tau => tau_point(config, v, reference, cache_ref),
            })
            .collect())
    })?;

    let mut records = Vec::with_capacity(values.len());
    let mut map = Vec::new();
    for (&v, out) in values.iter().zip(outputs) {
        match out {
            Ok((vals, trace)) => {
                map.extend(trace.into_iter().map(|(t, i)| (v, t, i)));
                records.push(ScanRecord { axis: v, values: vals, status: "ok".into() });
            }
            Err(e) => records.push(ScanRecord {
                axis: v,
                values: vec![None; columns.len()],
                status: e.to_string(),
            }),
        }
    }
    let summary = summarize(&axis, &values, &columns, &records);
    Ok(ScanResult { variable: axis.variable, axis_name, columns, records, map, summary })
}

/// Runs the configured scan and writes the summary (and map, if any).
pub fn run_scan(config: &RunConfig, emit: &Emit) -> Result<ScanResult> {
    let result = scan(config, true)?;
    write_scan(&result, emit)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCheck {
    pub check: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_spins: usize,
    pub stratified: bool,
    pub relative_l2: f64,
    pub conservation_drift: f64,
    /// Relative L2 distance for a ladder of ensemble sizes, ending at `n_spins`.
    pub convergence: Vec<(usize, f64)>,
    pub checks: Vec<ValidationCheck>,
    pub pass: bool,
}

fn ensemble(config: &RunConfig, n: usize) -> DiscreteEnsemble {
    if config.oracle.stratified {
        DiscreteEnsemble::stratified(&config.density, n, config.params.coupling)
    } else {
        DiscreteEnsemble::random(&config.density, n, config.params.coupling, config.seed)
    }
}

fn oracle_substeps(grid: &TimeGrid) -> usize {
    ((grid.dt / ORACLE_MAX_STEP) - 1e-9).ceil().max(1.0) as usize
}

/// Lossless drift of the total excitation: drive for 10 ns, then free
/// evolution for up to 500 ns with κ = γ = 0.
pub fn conservation_drift(ens: &DiscreteEnsemble, params: &SystemParams, eta: Complex64, dt: f64) -> Result<f64> {
    let lossless = SystemParams { kappa: 0.0, gamma: 0.0, ..*params };
    let substeps = oracle_substeps(&TimeGrid::new(0.0, 1.0, dt)?);
    let kick = TimeGrid::new(0.0, 10.0, dt)?;
    let drive = DriveProtocol::rectangular(eta, 0.0, 10.0, 10.0)?;
    let (_, state) = oracle::integrate_from(EnsembleState::ground(ens.len()), ens, &lossless, &drive, &kick, substeps)?;
    let free = TimeGrid::new(0.0, 500.0, dt)?;
    let off = DriveProtocol::rectangular(Complex64::new(0.0, 0.0), 0.0, 500.0, 500.0)?;
    let e0 = oracle::total_excitation(&state);
    let (_, end) = oracle::integrate_from(state, ens, &lossless, &off, &free, substeps)?;
    Ok((oracle::total_excitation(&end) - e0).abs() / e0)
}

pub fn validate(config: &RunConfig) -> Result<ValidationReport> {
    let sim = simulate(config)?;
    let substeps = oracle_substeps(&config.grid);
    let n = config.oracle.n_spins;
    let mut ladder: Vec<usize> = [50, 500].into_iter().filter(|&m| m < n).collect();
    ladder.push(n);
    let mut convergence = Vec::new();
    for &m in &ladder {
        let ens = ensemble(config, m);
        let (traj, _) = oracle::integrate_from(
            EnsembleState::ground(m),
            &ens,
            &config.params,
            &sim.protocol,
            &config.grid,
            substeps,
        )?;
        convergence.push((m, sim.trajectory.relative_l2(&traj)));
    }
    let relative_l2 = convergence.last().expect("ladder is non-empty").1;
    let drift = conservation_drift(&ensemble(config, n), &config.params, config.protocol.eta(), config.grid.dt)?;

    let mut checks: Vec<ValidationCheck> = convergence
        .iter()
        .map(|&(m, d)| ValidationCheck {
            check: format!("relative_l2_n{m}"),
            value: d,
            threshold: ORACLE_THRESHOLD,
            pass: d < ORACLE_THRESHOLD,
        })
        .collect();
    checks.push(ValidationCheck {
        check: "conservation_drift".into(),
        value: drift,
        threshold: CONSERVATION_THRESHOLD,
        pass: drift < CONSERVATION_THRESHOLD,
    });
    let pass = relative_l2 < ORACLE_THRESHOLD && drift < CONSERVATION_THRESHOLD;
    Ok(ValidationReport {
        n_spins: n,
        stratified: config.oracle.stratified,
        relative_l2,
        conservation_drift: drift,
        convergence,
        checks,
        pass,
    })
}

pub fn run_validate(config: &RunConfig, emit: &Emit) -> Result<ValidationReport> {
    let report = validate(config)?;
    write_validation(&report, emit)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoleRow {
    pub omega_mhz: f64,
    pub poles: Option<analysis::PolePair>,
    pub gamma_markov_mhz: f64,
    pub gamma_asymptotic_mhz: f64,
    pub gamma_lorentzian_mhz: f64,
    pub status: String,
}

/// Dominant poles for the configured coupling, or for every coupling of an
/// `Omega` scan.
pub fn poles(config: &RunConfig) -> Result<Vec<PoleRow>> {
    let couplings = match config.scan {
        Some(axis) if axis.variable == ScanVariable::Omega => axis.values(),
        _ => vec![angular_to_mhz(config.params.coupling)],
    };
    let rho = &config.density;
    Ok(couplings
        .into_iter()
        .map(|om| {
            let params = config.params.with_coupling(mhz_to_angular(om));
            let found = analysis::find_poles(&params, rho);
            let (l1, _) = analysis::gamma_lorentzian(0.5 * rho.fwhm() + params.gamma, params.kappa, params.coupling);
            PoleRow {
                omega_mhz: om,
                status: match &found {
                    Ok(_) => "ok".into(),
                    Err(e) => e.to_string(),
                },
                poles: found.ok(),
                gamma_markov_mhz: angular_to_mhz(analysis::gamma_markov(&params, rho)),
                gamma_asymptotic_mhz: angular_to_mhz(analysis::gamma_asymptotic(&params, rho)),
                gamma_lorentzian_mhz: angular_to_mhz(-2.0 * l1.re),
            }
        })
        .collect())
}

pub fn run_poles(config: &RunConfig, emit: &Emit) -> Result<Vec<PoleRow>> {
    let rows = poles(config)?;
    write_poles(&rows, emit)?;
    Ok(rows)
}

// ---- emission ----

fn stamp_line() -> String {
    format!(
        "# cavityq {} generated {}",
        env!("CARGO_PKG_VERSION"),
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    )
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?,
    ))
}

fn write_csv(path: &Path, reproducible: bool, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut file = create(path)?;
    if !reproducible {
        writeln!(file, "{}", stamp_line())?;
    }
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, reproducible: bool, mut body: Map<String, Value>) -> Result<()> {
    if !reproducible {
        body.insert("generated".into(), Value::String(stamp_line()[2..].to_string()));
    }
    let mut file = create(path)?;
    serde_json::to_writer_pretty(&mut file, &Value::Object(body)).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(file)?;
    file.flush()?;
    Ok(())
}

fn records_json(header: &[&str], rows: Vec<Vec<String>>) -> Value {
    let to_value = |s: &String| -> Value {
        if s.is_empty() {
            Value::Null
        } else if let Ok(v) = s.parse::<f64>() {
            json!(v)
        } else {
            Value::String(s.clone())
        }
    };
    Value::Array(
        rows.iter()
            .map(|r| {
                Value::Object(header.iter().zip(r).map(|(h, v)| (h.to_string(), to_value(v))).collect())
            })
            .collect(),
    )
}

fn emit_table(emit: &Emit, path: &Path, kind: &str, header: &[&str], rows: Vec<Vec<String>>, extra: Map<String, Value>) -> Result<()> {
    match emit.format {
        OutputFormat::Csv => write_csv(path, emit.reproducible, header, rows),
        OutputFormat::Json => {
            let mut body = Map::new();
            body.insert("kind".into(), json!(kind));
            body.extend(extra);
            body.insert("records".into(), records_json(header, rows));
            write_json(path, emit.reproducible, body)
        }
    }
}

/// `<stem>_map.<ext>` next to `path`.
pub fn map_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scan");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_map.{ext}"))
}

pub fn write_simulation(sim: &Simulation, emit: &Emit) -> Result<()> {
    let traj = &sim.trajectory;
    let mut rows = Vec::with_capacity(traj.len());
    for (i, a) in traj.amplitude.iter().enumerate() {
        let t = traj.grid.time(i);
        let eta = sim.protocol.amplitude_at(t.min(sim.protocol.t_end()))?;
        rows.push(vec![num(t), num(a.re), num(a.im), num(a.norm_sqr()), num(eta.re), num(eta.im)]);
    }
    let header = ["t_ns", "re_A", "im_A", "abs_A2", "eta_re", "eta_im"];
    emit_table(emit, &emit.path, "simulate", &header, rows, Map::new())
}

pub fn write_scan(result: &ScanResult, emit: &Emit) -> Result<()> {
    let mut header = vec![result.axis_name];
    header.extend(result.columns.iter().copied());
    header.push("status");
    let rows = result
        .records
        .iter()
        .map(|r| {
            let mut row = vec![num(r.axis)];
            row.extend(r.values.iter().map(|v| opt(*v)));
            row.push(r.status.clone());
            row
        })
        .collect();
    let mut extra = Map::new();
    extra.insert("variable".into(), json!(result.variable.name()));
    extra.insert(
        "summary".into(),
        Value::Object(result.summary.iter().map(|(k, v)| (k.to_string(), json!(v))).collect()),
    );
    emit_table(emit, &emit.path, "scan", &header, rows, extra)?;
    if !result.map.is_empty() {
        let rows = result.map.iter().map(|(a, t, i)| vec![num(*a), num(*t), num(*i)]).collect();
        let header = [result.axis_name, "t_ns", "abs_A2"];
        emit_table(emit, &map_path(&emit.path), "scan_map", &header, rows, Map::new())?;
    }
    Ok(())
}

pub fn write_validation(report: &ValidationReport, emit: &Emit) -> Result<()> {
    let rows = report
        .checks
        .iter()
        .map(|c| vec![c.check.clone(), num(c.value), num(c.threshold), (if c.pass { "PASS" } else { "FAIL" }).into()])
        .collect();
    let mut extra = Map::new();
    extra.insert("n_spins".into(), json!(report.n_spins));
    extra.insert("stratified".into(), json!(report.stratified));
    extra.insert("pass".into(), json!(report.pass));
    emit_table(emit, &emit.path, "validate", &["check", "value", "threshold", "result"], rows, extra)
}

pub fn write_poles(rows: &[PoleRow], emit: &Emit) -> Result<()> {
    let header = [
        "Omega_mhz",
        "s_plus_re",
        "s_plus_im",
        "s_minus_re",
        "s_minus_im",
        "gamma_mhz",
        "omega_r_mhz",
        "t_r_ns",
        "gamma_markov_mhz",
        "gamma_asymptotic_mhz",
        "gamma_lorentzian_mhz",
        "status",
    ];
    let body = rows
        .iter()
        .map(|r| {
            let p = r.poles.as_ref();
            let result = p.map(analysis::AnalysisResult::from_poles);
            vec![
                num(r.omega_mhz),
                opt(p.map(|p| p.s_plus.re)),
                opt(p.map(|p| p.s_plus.im)),
                opt(p.map(|p| p.s_minus.re)),
                opt(p.map(|p| p.s_minus.im)),
                opt(result.map(|a| angular_to_mhz(a.gamma))),
                opt(result.map(|a| angular_to_mhz(a.omega_r))),
                opt(result.map(|a| a.t_r)),
                num(r.gamma_markov_mhz),
                num(r.gamma_asymptotic_mhz),
                num(r.gamma_lorentzian_mhz),
                r.status.clone(),
            ]
        })
        .collect();
    emit_table(emit, &emit.path, "poles", &header, body, Map::new())
}

/// Resolves the output path: command-line value, then config, then a default
/// named after the subcommand.
pub fn output_path(cli: Option<&Path>, config: &RunConfig, subcommand: &str) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| config.output.path.clone())
        .unwrap_or_else(|| {
            let ext = match config.output.format {
                OutputFormat::Csv => "csv",
                OutputFormat::Json => "json",
            };
            PathBuf::from(format!("{subcommand}.{ext}"))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn config(extra: &str) -> RunConfig {
        parse_config(&format!(
            r#"{{
            "params": {{ "omega_c_mhz": 2689.9, "kappa_fwhm_mhz": 0.8, "collective_coupling_mhz": 8.6 }},
            "density": {{ "kind": "lorentzian", "fwhm_mhz": 9.4 }},
            "grid": {{ "t_end": 200, "dt": 0.1 }}{extra}
        }}"#
        ))
        .unwrap()
    }

    fn emit(dir: &Path, name: &str) -> Emit {
        Emit { path: dir.join(name), format: OutputFormat::Csv, reproducible: true }
    }

    #[test]
    fn zero_drive_gives_zero_columns() {
        let cfg = config(r#", "protocol": { "type": "rectangular", "eta_re": 0, "t_off": 100 }"#);
        let dir = tempfile::tempdir().unwrap();
        let sim = run_simulate(&cfg, &emit(dir.path(), "z.csv")).unwrap();
        assert!(sim.trajectory.amplitude.iter().all(|a| a.norm() == 0.0));
        let text = std::fs::read_to_string(dir.path().join("z.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t_ns,re_A,im_A,abs_A2,eta_re,eta_im");
        assert_eq!(lines.count(), cfg.grid.len());
        assert!(text.lines().skip(1).all(|l| l.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0)));
    }

    #[test]
    fn scan_is_ordered_and_cache_transparent() {
        let cfg = config(
            r#", "protocol": { "type": "rectangular", "t_off": 100 },
                "scan": { "variable": "omega_p", "min": -5, "max": 5, "steps": 5 }, "workers": 3"#,
        );
        let cached = scan(&cfg, true).unwrap();
        let fresh = scan(&cfg, false).unwrap();
        let axis: Vec<f64> = cached.records.iter().map(|r| r.axis).collect();
        assert_eq!(axis, vec![-5.0, -2.5, 0.0, 2.5, 5.0]);
        for (a, b) in cached.records.iter().zip(&fresh.records) {
            for (x, y) in a.values.iter().zip(&b.values) {
                let (x, y) = (x.unwrap(), y.unwrap());
                assert!((x - y).abs() <= 1e-12 * y.abs());
            }
        }
    }

    #[test]
    fn failing_point_keeps_its_row() {
        // The largest coupling violates Omega*dt only inside the point, which
        // the per-point status reports without aborting the scan.
        let mut cfg = config(
            r#", "protocol": { "type": "rectangular", "t_off": 100 },
                "scan": { "variable": "Omega", "min": 1, "max": 10, "steps": 2 }"#,
        );
        cfg.scan = Some(ScanAxis { max: 200.0, ..cfg.scan.unwrap() });
        let res = scan(&cfg, true).unwrap();
        assert_eq!(res.records.len(), 2);
        assert_eq!(res.records[0].status, "ok");
        assert!(res.records[1].status.contains("time step too large"));
        assert!(res.records[1].values.iter().all(Option::is_none));
    }

    #[test]
    fn two_peaks_are_refined() {
        let x: Vec<f64> = (0..41).map(|k| -10.0 + 0.5 * k as f64).collect();
        let y: Vec<Option<f64>> = x
            .iter()
            .map(|v| Some((-(v - 3.1f64).powi(2)).exp() + (-(v + 3.1f64).powi(2)).exp()))
            .collect();
        let (lo, hi) = two_peak_positions(&x, &y).unwrap();
        assert!((hi - lo - 6.2).abs() < 0.1);
    }

    #[test]
    fn map_path_sits_next_to_output() {
        assert_eq!(map_path(Path::new("out/fig2a.csv")), PathBuf::from("out/fig2a_map.csv"));
    }
}
