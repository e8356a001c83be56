//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr (not captured by the harness) and then asserts.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use cavityq::analysis::{
    enhancement_factor, extract_decay_rate, extract_rabi, find_poles, gamma_asymptotic, gamma_lorentzian,
};
use cavityq::config::{load_config, RunConfig};
use cavityq::quadrature;
use cavityq::scan::{self, Simulation};
use cavityq::volterra::{kernel_table, solve};
use cavityq::{
    angular_to_mhz, mhz_to_angular, CavityTrajectory, DriveProtocol, SpectralDensity, SystemParams, TimeGrid,
};
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};

fn report(criterion: u32, pass: bool, detail: String) {
    let line = format!("{} criterion {criterion}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn config(name: &str) -> RunConfig {
    load_config(&config_path(name)).unwrap()
}

fn with_lorentzian(mut config: RunConfig) -> RunConfig {
    config.density = SpectralDensity::lorentzian_from_fwhm(config.params.omega_s, config.density.fwhm()).unwrap();
    config
}

fn read_trace(path: &std::path::Path) -> CavityTrajectory {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let rows: Vec<(f64, Complex64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            let f = |i: usize| r[i].parse::<f64>().unwrap();
            (f(0), Complex64::new(f(1), f(2)))
        })
        .collect();
    let dt = rows[1].0 - rows[0].0;
    let grid = TimeGrid::new(rows[0].0, rows[rows.len() - 1].0, dt).unwrap();
    CavityTrajectory::new(grid, rows.into_iter().map(|r| r.1).collect()).unwrap()
}

#[test]
fn criterion_1_rabi_period() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig2b.csv");
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_cavityq"))
        .args(["simulate", "--workers", "1", "--reproducible", "--config"])
        .arg(config_path("fig2b.json"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let traj = read_trace(&out);
    let off = config("fig2b.json").protocol.drive_end();
    let (_, t_r) = extract_rabi(&traj, off).unwrap();
    let naive = std::f64::consts::PI / SystemParams::paper().coupling;
    let pass = (49.0..=55.0).contains(&t_r) && (t_r - naive).abs() > 3.0 && elapsed < 60.0;
    report(1, pass, format!("T_R = {t_r:.2} ns (pi/Omega = {naive:.2} ns), runtime {elapsed:.1} s"));
}

#[test]
fn criterion_2_mode_splitting() {
    let mut cfg = config("fig2a.json");
    cfg.workers = 8;
    let start = Instant::now();
    let result = scan::scan(&cfg, true).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let split = result.summary_value("splitting_mhz").unwrap_or(f64::NAN);
    let pass = (split - 19.2).abs() <= 1.0 && elapsed < 600.0;
    report(2, pass, format!("splitting = {split:.2} MHz, runtime {elapsed:.1} s"));
}

/// Smallest coupling at which the Lorentzian amplitude poles split.
fn lorentzian_critical_coupling(config: &RunConfig) -> f64 {
    let damping = 0.5 * config.density.fwhm() + config.params.gamma;
    (damping - config.params.kappa).abs() / 2.0
}

#[test]
fn criterion_3_cavity_protection() {
    let cfg = config("fig3.json");
    let result = scan::scan(&cfg, true).unwrap();
    let gammas: Vec<f64> = result.column("gamma_sim_mhz").into_iter().map(|g| g.unwrap_or(f64::NAN)).collect();
    let (imax, gmax) = gammas
        .iter()
        .copied()
        .enumerate()
        .filter(|g| g.1.is_finite())
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let non_monotonic = imax > 0 && imax + 1 < gammas.len() && gammas[gammas.len() - 1] < gmax;

    let mut point = cfg.clone();
    point.params = point.params.with_coupling(mhz_to_angular(8.6));
    point.scan = None;
    let Simulation { trajectory, .. } = scan::simulate(&point).unwrap();
    let g86 = angular_to_mhz(extract_decay_rate(&trajectory, point.protocol.drive_end()).unwrap());

    let lor = with_lorentzian(cfg);
    let strong = 2.0 * angular_to_mhz(lorentzian_critical_coupling(&lor));
    let lresult = scan::scan(&lor, true).unwrap();
    let branch: Vec<f64> = result
        .records
        .iter()
        .zip(lresult.column("gamma_sim_mhz"))
        .filter(|(r, _)| r.axis >= strong)
        .map(|(_, g)| g.unwrap_or(f64::NAN))
        .collect();
    let (lo, hi) = branch.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| (lo.min(*g), hi.max(*g)));
    let spread = (hi - lo) / lo;

    let pass = non_monotonic && g86 <= 0.55 * gmax && spread <= 0.05 && branch.len() > 10;
    report(
        3,
        pass,
        format!(
            "Gamma_max = {gmax:.3} MHz at Omega = {:.2} MHz, Gamma(8.6) = {g86:.3} MHz (ratio {:.3}); \
             lorentzian spread {:.2}% over {} points with Omega >= {strong:.2} MHz",
            result.records[imax].axis,
            g86 / gmax,
            100.0 * spread,
            branch.len()
        ),
    );
}

#[test]
fn criterion_4_asymptotics() {
    let params = SystemParams::paper().with_coupling(mhz_to_angular(30.0));
    let rho = SpectralDensity::q_gaussian_from_fwhm(params.omega_s, 1.39, mhz_to_angular(9.4)).unwrap();
    let poles = find_poles(&params, &rho).unwrap();
    let from_pole = -2.0 * poles.s_plus.re;
    let asym = gamma_asymptotic(&params, &rho);
    let rel = (from_pole / asym - 1.0).abs();

    let mut worst: f64 = 0.0;
    for (hwhm_mhz, coupling_mhz) in [(4.7, 8.6), (2.0, 5.0), (4.7, 30.0), (1.0, 12.0)] {
        let p = SystemParams::paper().with_coupling(mhz_to_angular(coupling_mhz));
        let hwhm = mhz_to_angular(hwhm_mhz);
        let rho = SpectralDensity::lorentzian(p.omega_s, hwhm).unwrap();
        let found = find_poles(&p, &rho).unwrap();
        let (a, b) = gamma_lorentzian(hwhm + p.gamma, p.kappa, p.coupling);
        worst = worst.max((found.s_plus - a).norm()).max((found.s_minus - b).norm());
    }
    let pass = rel <= 0.15 && worst <= 1e-10;
    report(
        4,
        pass,
        format!(
            "Omega = 30 MHz: -2 Re s = {:.3} MHz vs asymptotic {:.3} MHz ({:.1}%); lorentzian pole error {worst:.1e}",
            angular_to_mhz(from_pole),
            angular_to_mhz(asym),
            100.0 * rel
        ),
    );
}

fn enhancement(config: &RunConfig) -> f64 {
    let protocol = config.protocol.build(config.grid.t_end).unwrap();
    let pulsed = solve(&config.params, &config.density, &protocol, &config.grid).unwrap();
    let pulsed = pulsed.truncated(config.protocol.drive_end()).unwrap();
    let t_end = config.grid.t_end;
    let cw_protocol = DriveProtocol::rectangular(config.protocol.eta(), 0.0, t_end, t_end).unwrap();
    let cw = solve(&config.params, &config.density, &cw_protocol, &config.grid).unwrap();
    enhancement_factor(&pulsed, &cw).unwrap()
}

#[test]
fn criterion_5_pulse_train_enhancement() {
    let cfg = config("fig4b.json");
    let q = enhancement(&cfg);
    let l = enhancement(&with_lorentzian(cfg));
    let argmax = scan::scan(&config("fig4a.json"), true).unwrap().summary_value("argmax_tau_ns").unwrap();
    let pass = (30.0..=300.0).contains(&q) && q > l && (argmax - 52.0).abs() <= 3.0;
    report(5, pass, format!("enhancement {q:.1} (lorentzian {l:.1}), argmax tau = {argmax:.1} ns"));
}

#[test]
fn criterion_6_oracle_equivalence() {
    let report_ = scan::validate(&config("fig2b.json")).unwrap();
    let pass = report_.n_spins == 4000 && report_.relative_l2 < 2e-2 && report_.conservation_drift < 1e-8;
    report(
        6,
        pass,
        format!(
            "N = {}: relative L2 = {:.2e}, conservation drift = {:.2e}",
            report_.n_spins, report_.relative_l2, report_.conservation_drift
        ),
    );
}

fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn criterion_7_property_suite() {
    let base = SystemParams::paper();
    let rho = SpectralDensity::q_gaussian_from_fwhm(base.omega_s, 1.39, mhz_to_angular(9.4)).unwrap();
    let one = Complex64::new(1.0, 0.0);
    let mut failures = Vec::new();
    let mut runner = TestRunner::new(PropConfig { cases: 8, ..PropConfig::default() });

    let segmentation = runner.run(&(1usize..1999, -10.0f64..10.0), |(k, detuning)| {
        let params = base.with_probe(base.omega_c + mhz_to_angular(detuning));
        let grid = TimeGrid::new(0.0, 200.0, 0.1).unwrap();
        let protocol = DriveProtocol::rectangular(one, 0.0, 100.0, 200.0).unwrap();
        let whole = solve(&params, &rho, &protocol, &grid).unwrap();
        let cut = solve(&params, &rho, &protocol.with_split(grid.time(k)).unwrap(), &grid).unwrap();
        let scale = whole.amplitude.iter().map(|a| a.norm()).fold(0.0, f64::max);
        prop_assert!(max_abs_diff(&whole.amplitude, &cut.amplitude) <= 1e-8 * scale);
        Ok(())
    });
    if let Err(e) = segmentation {
        failures.push(format!("segmentation: {e}"));
    }

    let linearity = runner.run(&(-3.0f64..3.0, -3.0f64..3.0), |(re, im)| {
        let grid = TimeGrid::new(0.0, 300.0, 0.1).unwrap();
        let protocol = DriveProtocol::phase_switched_train(one, 52.0, 3, 300.0).unwrap();
        let c = Complex64::new(re, im);
        let unit = solve(&base, &rho, &protocol, &grid).unwrap();
        let scaled = solve(&base, &rho, &protocol.scaled(c), &grid).unwrap();
        let expected: Vec<Complex64> = unit.amplitude.iter().map(|a| a * c).collect();
        let scale = expected.iter().map(|a| a.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        prop_assert!(max_abs_diff(&scaled.amplitude, &expected) <= 1e-12 * scale);
        Ok(())
    });
    if let Err(e) = linearity {
        failures.push(format!("linearity: {e}"));
    }

    let k0 = kernel_table(&base, &rho, 0.05, 5.0).unwrap().values[0];
    if k0 != Complex64::new(0.0, 0.0) {
        failures.push(format!("K(0) = {k0}"));
    }

    // K(u) = Ω² e^{−κ'u} (e^{−iXu} − 1)/(iX) with X at the Lorentzian pole
    let params = base.with_probe(base.omega_c + mhz_to_angular(2.0));
    let hwhm = mhz_to_angular(4.7);
    let lor = SpectralDensity::lorentzian(params.omega_s, hwhm).unwrap();
    let table = kernel_table(&params, &lor, 0.05, 400.0).unwrap();
    let i = Complex64::new(0.0, 1.0);
    let x = Complex64::new(params.omega_s - params.omega_c, -hwhm - (params.gamma - params.kappa));
    let kp = params.cavity_rate();
    let kernel_err = table
        .values
        .iter()
        .enumerate()
        .map(|(m, v)| {
            let u = m as f64 * 0.05;
            let want = params.coupling.powi(2) * (-kp * u).exp() * ((-i * x * u).exp() - 1.0) / (i * x);
            (v - want).norm()
        })
        .fold(0.0, f64::max)
        / (params.coupling.powi(2) / x.norm());
    if kernel_err > 1e-8 {
        failures.push(format!("lorentzian kernel {kernel_err:e}"));
    }

    // ∫ρ over the whole line via ω = ω_s + Δ tan θ
    let mut norm_err: f64 = 0.0;
    let densities = [
        SpectralDensity::gaussian(0.0, 0.03).unwrap(),
        SpectralDensity::q_gaussian(0.0, 1.2, 0.03).unwrap(),
        SpectralDensity::q_gaussian(0.0, 1.39, 0.03).unwrap(),
        SpectralDensity::q_gaussian(0.0, 1.7, 0.03).unwrap(),
        SpectralDensity::q_gaussian(0.0, 2.0, 0.03).unwrap(),
        SpectralDensity::lorentzian(0.0, 0.03).unwrap(),
    ];
    for d in &densities {
        let h = 0.03;
        let half = std::f64::consts::FRAC_PI_2;
        let total = quadrature::adaptive(
            |t: f64| {
                let c = t.cos();
                if c <= 0.0 {
                    0.0
                } else {
                    d.density_at(h * t.tan()) * h / (c * c)
                }
            },
            -half,
            half,
            1e-12,
        )
        .unwrap();
        norm_err = norm_err.max((total - 1.0).abs());
    }
    if norm_err > 1e-9 {
        failures.push(format!("normalization {norm_err:e}"));
    }

    let q2 = SpectralDensity::q_gaussian(0.0, 2.0, 0.03).unwrap();
    let l2 = SpectralDensity::lorentzian(0.0, 0.03).unwrap();
    let q_err = (-2000..=2000)
        .map(|k| k as f64 * 1e-3)
        .map(|w| (q2.density_at(w) - l2.density_at(w)).abs())
        .fold(0.0, f64::max);
    if q_err > 1e-12 {
        failures.push(format!("q = 2 vs lorentzian {q_err:e}"));
    }

    let pass = failures.is_empty();
    report(
        7,
        pass,
        if pass {
            format!(
                "segmentation, linearity, K(0) = 0, lorentzian kernel {kernel_err:.1e}, \
                 normalization {norm_err:.1e}, q = 2 limit {q_err:.1e}"
            )
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn criterion_8_overshoot() {
    let cfg = config("fig2b.json");
    let sim = scan::simulate(&cfg).unwrap();
    let off = cfg.protocol.drive_end();
    let times = sim.trajectory.times();
    let int = sim.trajectory.intensity();
    let start = times.iter().position(|t| *t >= off).unwrap();
    // first revival: the first maximum after the first minimum following switch-off
    let mut first_min = None;
    let mut revival = None;
    for k in start.max(1)..int.len() - 1 {
        if first_min.is_none() && int[k] < int[k - 1] && int[k] <= int[k + 1] {
            first_min = Some((times[k], int[k]));
        } else if first_min.is_some() && int[k] > int[k - 1] && int[k] >= int[k + 1] {
            revival = Some((times[k], int[k]));
            break;
        }
    }
    let ((t_min, min), (t_max, max)) = (first_min.unwrap(), revival.unwrap());
    let ratio = max / min;
    report(
        8,
        ratio >= 2.0,
        format!("|A|^2 min {min:.3e} at {t_min:.1} ns, next max {max:.3e} at {t_max:.1} ns, ratio {ratio:.3e}"),
    );
}
