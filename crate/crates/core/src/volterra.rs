//! Second-kind Volterra solver for the cavity amplitude.
//!
//! In the frame rotating at ω_p the cavity obeys
//!
//! ```text
//! A(t) = ∫₀ᵗ K(t−τ) A(τ) dτ − F(t),
//! K(u) = Ω² e^{−κ'u} ∫dω ρ(ω) [e^{−iX u} − 1]/(iX),   X = ω − ω_c − i(γ − κ),
//! F(t) = ∫₀ᵗ η(τ) e^{−κ'(t−τ)} dτ,                     κ' = κ + i(ω_c − ω_p).
//! ```
//!
//! The time axis is cut at every drive switch. Inside a segment only the
//! in-segment convolution is computed; everything earlier enters through
//! the boundary value A(T_n) and the per-frequency memory I_n(ω). With the
//! trapezoidal product rule and a common frequency rule for K and I_n, the
//! segmented scheme reproduces the unsegmented discretization up to rounding.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::drive::DriveProtocol;
use crate::error::{Error, Result};
use crate::model::{CavityTrajectory, SystemParams, TimeGrid};
use crate::quadrature;
use crate::spectral::{SpectralDensity, DEFAULT_EPS};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Largest accepted `Ω·dt` in rad.
pub const MAX_COUPLING_STEP: f64 = 0.05;
/// Relative sup-norm agreement required between successive panel doublings.
pub const KERNEL_TOL: f64 = 1e-9;
const INITIAL_PANELS: usize = 16;
const CHECK_STRIDE: usize = 4;
const MAX_DOUBLINGS: u32 = 12;
/// Nodes with `|X·dt|` below this are evaluated through `phi1` directly.
const SINGULAR_XDT: f64 = 1e-3;

/// `(e^z − 1)/z`, continuous at 0.
pub fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        Complex64::new(1.0, 0.0) + z * (0.5 + z * (1.0 / 6.0 + z / 24.0))
    } else {
        (z.exp() - 1.0) / z
    }
}

/// How the frequency integral over ρ(ω) is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FrequencyMethod {
    /// Composite Gauss–Legendre, except for the Lorentzian, which uses its
    /// pole at ω_s − iΔ (exact for integrands analytic and bounded in the
    /// lower half plane, which covers every integrand of the solver).
    #[default]
    Auto,
    /// Composite Gauss–Legendre over the truncation window for every kind.
    GaussLegendre,
}

/// Discrete frequency rule: `∫ρ(ω) f(ω) dω ≈ Σ_j weights[j]·f(ω_s + offsets[j])`.
/// Offsets may be complex (pole rule).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyRule {
    pub offsets: Vec<Complex64>,
    pub weights: Vec<Complex64>,
    pub panels: usize,
}

impl FrequencyRule {
    pub fn lorentzian_pole(rho: &SpectralDensity) -> Self {
        FrequencyRule {
            offsets: vec![Complex64::new(0.0, -rho.delta())],
            weights: vec![Complex64::new(1.0, 0.0)],
            panels: 0,
        }
    }

    pub fn gauss_legendre(rho: &SpectralDensity, eps: f64, panels: usize) -> Self {
        let w = rho.window_halfwidth(eps);
        let (xs, ws) = quadrature::composite_nodes(-w, w, panels);
        FrequencyRule {
            weights: xs
                .iter()
                .zip(&ws)
                .map(|(x, wt)| Complex64::new(wt * rho.density_offset(*x), 0.0))
                .collect(),
            offsets: xs.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
            panels,
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Accumulates `out[m] = Σ_j c_j·(e^{−iX_j u_m} − 1)/(iX_j)` for `u_m = m·dt`,
/// with `X_j = offset_j + shift`. Node chunks are fixed by the node count so
/// the summation order, and hence the result, never depends on scheduling.
pub(crate) fn response_sum(
    offsets: &[Complex64],
    coeffs: &[Complex64],
    shift: Complex64,
    dt: f64,
    len: usize,
) -> Vec<Complex64> {
    let n = offsets.len();
    let chunk = 256.max(n.div_ceil(64));
    let partials: Vec<Vec<Complex64>> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut out = vec![ZERO; len];
            let mut regular: Vec<(Complex64, Complex64)> = Vec::with_capacity(chunk);
            for j in c * chunk..((c + 1) * chunk).min(n) {
                let x = offsets[j] + shift;
                let cj = coeffs[j];
                if cj == ZERO {
                    continue;
                }
                if (x * dt).norm() < SINGULAR_XDT {
                    for (m, o) in out.iter_mut().enumerate() {
                        let u = m as f64 * dt;
                        *o -= cj * u * phi1(-I * x * u);
                    }
                } else {
                    regular.push(((-I * x * dt).exp(), cj / (I * x)));
                }
            }
            // Four independent recurrences per pass keep the multiply
            // pipeline busy.
            for block in regular.chunks(4) {
                let mut r = [ZERO; 4];
                let mut a = [ZERO; 4];
                let mut z = [ZERO; 4];
                for (b, (rb, ab)) in block.iter().enumerate() {
                    r[b] = *rb;
                    a[b] = *ab;
                    z[b] = *ab;
                }
                let offset: Complex64 = a.iter().sum();
                for o in out.iter_mut() {
                    *o += (z[0] + z[1]) + (z[2] + z[3]) - offset;
                    z[0] *= r[0];
                    z[1] *= r[1];
                    z[2] *= r[2];
                    z[3] *= r[3];
                }
            }
            out
        })
        .collect();
    let mut total = vec![ZERO; len];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Ω- and ω_p-independent part of the kernel,
/// `S(u_m) = ∫ρ(ω) [e^{−iXu_m} − 1]/(iX) dω`, together with the frequency
/// rule it was converged on. Shared by every solve with the same density,
/// `ω_s − ω_c`, `γ − κ` and `dt`.
#[derive(Debug, Clone)]
pub struct SpectralResponse {
    pub rule: FrequencyRule,
    pub dt: f64,
    /// `X_j = offset_j + shift`, `shift = (ω_s − ω_c) − i(γ − κ)`.
    pub shift: Complex64,
    pub sums: Vec<Complex64>,
    key: u64,
}

fn response_key(params: &SystemParams, rho: &SpectralDensity, dt: f64, method: FrequencyMethod) -> u64 {
    let mut h = DefaultHasher::new();
    rho.kind().hash(&mut h);
    for v in [
        rho.omega_s(),
        rho.q(),
        rho.delta(),
        rho.omega_s() - params.omega_c,
        params.gamma - params.kappa,
        dt,
    ] {
        v.to_bits().hash(&mut h);
    }
    method.hash(&mut h);
    h.finish()
}

fn params_key(params: &SystemParams, response_key: u64) -> u64 {
    let mut h = DefaultHasher::new();
    response_key.hash(&mut h);
    for v in [params.omega_c, params.omega_p, params.kappa, params.gamma, params.coupling] {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

impl SpectralResponse {
    /// Builds the response for `len` lattice points, doubling the panel count
    /// until two successive tables agree to [`KERNEL_TOL`] in relative sup norm.
    pub fn build(
        params: &SystemParams,
        rho: &SpectralDensity,
        dt: f64,
        len: usize,
        method: FrequencyMethod,
    ) -> Result<Self> {
        if !(dt > 0.0) || len == 0 {
            return Err(Error::BadGrid(format!("need dt > 0 and len > 0, got {dt}, {len}")));
        }
        let shift = Complex64::new(rho.omega_s() - params.omega_c, -(params.gamma - params.kappa));
        let key = response_key(params, rho, dt, method);
        if method == FrequencyMethod::Auto && rho.is_lorentzian() {
            let rule = FrequencyRule::lorentzian_pole(rho);
            let sums = response_sum(&rule.offsets, &rule.weights, shift, dt, len);
            return Ok(SpectralResponse { rule, dt, shift, sums, key });
        }
        // Doubling runs on every CHECK_STRIDE-th lag; the kept rule is the
        // coarser of the first pair that agrees, so its error is bounded by
        // the measured difference.
        let check_len = (len - 1) / CHECK_STRIDE + 1;
        let check_dt = dt * CHECK_STRIDE as f64;
        let mut panels = INITIAL_PANELS;
        let mut rule = FrequencyRule::gauss_legendre(rho, DEFAULT_EPS, panels);
        let mut coarse = response_sum(&rule.offsets, &rule.weights, shift, check_dt, check_len);
        for _ in 0..MAX_DOUBLINGS {
            let finer = FrequencyRule::gauss_legendre(rho, DEFAULT_EPS, panels * 2);
            let fine = response_sum(&finer.offsets, &finer.weights, shift, check_dt, check_len);
            let scale = fine.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let diff = fine
                .iter()
                .zip(&coarse)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            if diff <= KERNEL_TOL * scale.max(f64::MIN_POSITIVE) {
                let sums = response_sum(&rule.offsets, &rule.weights, shift, dt, len);
                return Ok(SpectralResponse { rule, dt, shift, sums, key });
            }
            panels *= 2;
            rule = finer;
            coarse = fine;
        }
        Err(Error::QuadratureFailure(format!(
            "kernel frequency integral not converged after {MAX_DOUBLINGS} doublings ({panels} panels)"
        )))
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// The key a response built from these inputs would carry.
    pub fn key_for(params: &SystemParams, rho: &SpectralDensity, dt: f64, method: FrequencyMethod) -> u64 {
        response_key(params, rho, dt, method)
    }

    /// Whether this response can serve a solve with these inputs.
    pub fn matches(&self, params: &SystemParams, rho: &SpectralDensity, dt: f64, method: FrequencyMethod) -> bool {
        self.key == response_key(params, rho, dt, method)
    }
}

/// Kernel K(m·dt), m = 0..M.
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub dt: f64,
    pub values: Vec<Complex64>,
    pub params_hash: u64,
}

impl KernelTable {
    pub fn from_response(params: &SystemParams, response: &SpectralResponse) -> Self {
        let k2 = params.coupling * params.coupling;
        let kp = params.cavity_rate();
        let values = response
            .sums
            .iter()
            .enumerate()
            .map(|(m, s)| {
                if m == 0 {
                    ZERO
                } else {
                    k2 * (-kp * (m as f64 * response.dt)).exp() * s
                }
            })
            .collect();
        KernelTable {
            dt: response.dt,
            values,
            params_hash: params_key(params, response.key),
        }
    }
}

/// `K(m·dt)` for all lattice points up to `horizon`.
pub fn kernel_table(
    params: &SystemParams,
    rho: &SpectralDensity,
    dt: f64,
    horizon: f64,
) -> Result<KernelTable> {
    kernel_table_with(params, rho, dt, horizon, FrequencyMethod::Auto)
}

pub fn kernel_table_with(
    params: &SystemParams,
    rho: &SpectralDensity,
    dt: f64,
    horizon: f64,
    method: FrequencyMethod,
) -> Result<KernelTable> {
    if !(horizon > 0.0) {
        return Err(Error::BadGrid(format!("horizon must be positive, got {horizon}")));
    }
    let len = (horizon / dt + 1e-9).floor() as usize + 1;
    let response = SpectralResponse::build(params, rho, dt, len, method)?;
    Ok(KernelTable::from_response(params, &response))
}

/// The drive integral `F(t) = ∫₀ᵗ η(τ) e^{−κ'(t−τ)} dτ`, evaluated exactly
/// segment by segment.
pub fn forcing(params: &SystemParams, protocol: &DriveProtocol, t: f64) -> Complex64 {
    let kp = params.cavity_rate();
    let mut f = ZERO;
    let mut at = protocol.t_start();
    for s in protocol.segments() {
        if s.t_start >= t {
            break;
        }
        let end = s.t_end.min(t);
        let len = end - s.t_start;
        // F(end) = F(start) e^{−κ'len} + η (1 − e^{−κ'len})/κ'
        f = f * (-kp * len).exp() + s.eta * len * phi1(-kp * len);
        at = end;
    }
    if t > at {
        f *= (-kp * (t - at)).exp();
    }
    f
}

/// Per-frequency memory carried across segment boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    /// `I_n(ω_j)` at every node of the frequency rule.
    pub i_values: Vec<Complex64>,
    /// A at the current segment boundary.
    pub a_last: Complex64,
}

impl MemoryState {
    pub fn initial(nodes: usize) -> Self {
        MemoryState {
            i_values: vec![ZERO; nodes],
            a_last: ZERO,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.a_last == ZERO && self.i_values.iter().all(|v| *v == ZERO)
    }

    /// `I_{n+1}(ω) = e^{−iν L} I_n(ω) + ∫ e^{−iν(T_{n+1}−τ)} A(τ) dτ` with
    /// `ν = ω − ω_p − iγ`, trapezoidal in τ over `piece` (both endpoints
    /// included, spacing `dt`).
    pub fn advance(
        &self,
        rule: &FrequencyRule,
        omega_s: f64,
        piece: &[Complex64],
        dt: f64,
        params: &SystemParams,
    ) -> MemoryState {
        let shift = Complex64::new(omega_s - params.omega_p, -params.gamma);
        let last = piece.len().saturating_sub(1);
        let weight = |i: usize| if i == 0 || i == last { 0.5 * dt } else { dt };
        let mut i_values = vec![ZERO; rule.len()];
        i_values
            .par_chunks_mut(4)
            .zip(rule.offsets.par_chunks(4))
            .zip(self.i_values.par_chunks(4))
            .for_each(|((out, xs), prev)| {
                let mut r = [ZERO; 4];
                let mut acc = [ZERO; 4];
                for b in 0..xs.len() {
                    r[b] = (-I * (xs[b] + shift) * dt).exp();
                    acc[b] = prev[b];
                }
                for (i, a) in piece.iter().enumerate() {
                    if i > 0 {
                        acc[0] *= r[0];
                        acc[1] *= r[1];
                        acc[2] *= r[2];
                        acc[3] *= r[3];
                    }
                    let wa = weight(i) * a;
                    acc[0] += wa;
                    acc[1] += wa;
                    acc[2] += wa;
                    acc[3] += wa;
                }
                out.copy_from_slice(&acc[..xs.len()]);
            });
        MemoryState {
            i_values,
            a_last: piece.last().copied().unwrap_or(self.a_last),
        }
    }
}

/// Free-function form of [`MemoryState::advance`].
pub fn advance_memory(
    state: &MemoryState,
    rule: &FrequencyRule,
    omega_s: f64,
    piece: &[Complex64],
    dt: f64,
    params: &SystemParams,
) -> MemoryState {
    state.advance(rule, omega_s, piece, dt, params)
}

/// Solves for A(t) on `grid`, building the spectral response on the fly.
pub fn solve(
    params: &SystemParams,
    rho: &SpectralDensity,
    protocol: &DriveProtocol,
    grid: &TimeGrid,
) -> Result<CavityTrajectory> {
    let response = SpectralResponse::build(params, rho, grid.dt, grid.len(), FrequencyMethod::Auto)?;
    solve_with_response(params, rho, protocol, grid, &response)
}

/// Lattice indices where segments start, clipped to the grid.
fn boundary_indices(protocol: &DriveProtocol, grid: &TimeGrid) -> Result<Vec<usize>> {
    let n = grid.len();
    let mut out = Vec::new();
    for s in protocol.segments() {
        if s.t_start >= grid.time(n - 1) - 1e-9 * grid.dt {
            break;
        }
        let idx = grid.index_of(s.t_start).ok_or_else(|| {
            Error::BadInterval(format!(
                "segment boundary {} ns is not on the dt = {} ns lattice",
                s.t_start, grid.dt
            ))
        })?;
        out.push(idx);
    }
    Ok(out)
}

pub fn solve_with_response(
    params: &SystemParams,
    rho: &SpectralDensity,
    protocol: &DriveProtocol,
    grid: &TimeGrid,
    response: &SpectralResponse,
) -> Result<CavityTrajectory> {
    let params = params.validate()?;
    let dt = grid.dt;
    if params.coupling * dt >= MAX_COUPLING_STEP {
        return Err(Error::StepTooLarge(params.coupling * dt));
    }
    if grid.t_start != 0.0 || protocol.t_start() != 0.0 {
        return Err(Error::BadGrid("grid and protocol must start at t = 0".into()));
    }
    let n = grid.len();
    if protocol.t_end() < grid.time(n - 1) - 1e-9 * dt {
        return Err(Error::OutOfRange {
            t: grid.time(n - 1),
            start: protocol.t_start(),
            end: protocol.t_end(),
        });
    }
    if !(response.matches(&params, rho, dt, FrequencyMethod::Auto)
        || response.matches(&params, rho, dt, FrequencyMethod::GaussLegendre))
    {
        return Err(Error::BadGrid(
            "spectral response was built for a different density, detuning, loss or dt".into(),
        ));
    }
    if response.dt != dt || response.len() < n {
        return Err(Error::BadGrid(format!(
            "spectral response built for dt = {} and {} points, grid needs dt = {dt} and {n}",
            response.dt,
            response.len()
        )));
    }
    let kernel = KernelTable::from_response(&params, response);
    let k = &kernel.values;
    let kp = params.cavity_rate();
    let k2 = params.coupling * params.coupling;
    let rule = &response.rule;

    let starts = boundary_indices(protocol, grid)?;
    let mut a = vec![ZERO; n];
    let mut memory = MemoryState::initial(rule.len());
    for (seg_no, &s) in starts.iter().enumerate() {
        let e = starts.get(seg_no + 1).copied().unwrap_or(n - 1).min(n - 1);
        if e <= s {
            continue;
        }
        let eta = protocol.segments()[seg_no].eta;
        let len = e - s;
        let a0 = a[s];

        // History term Ω² e^{−κ'h} Σ_j W_j I_j (e^{−iX_j h} − 1)/(iX_j).
        let history = if memory.is_zero() {
            None
        } else {
            let coeffs: Vec<Complex64> = rule
                .weights
                .iter()
                .zip(&memory.i_values)
                .map(|(w, iv)| w * iv)
                .collect();
            Some(response_sum(&rule.offsets, &coeffs, response.shift, dt, len + 1))
        };

        for step in 1..=len {
            let h = step as f64 * dt;
            let decay = (-kp * h).exp();
            let mut conv = 0.5 * k[step] * a0;
            for j in 1..step {
                conv += k[step - j] * a[s + j];
            }
            let mut v = conv * dt + a0 * decay - eta * h * phi1(-kp * h);
            if let Some(hist) = &history {
                v += k2 * decay * hist[step];
            }
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NonFinite(grid.time(s + step)));
            }
            a[s + step] = v;
        }
        if seg_no + 1 < starts.len() {
            memory = memory.advance(rule, rho.omega_s(), &a[s..=e], dt, &params);
        }
    }
    CavityTrajectory::new(*grid, a)
}

/// Shared handle so scans can reuse one response across workers.
pub type SharedResponse = Arc<SpectralResponse>;
