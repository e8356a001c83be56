//! Gauss–Legendre rules: fixed order, composite, and adaptive bisection.

use crate::error::{Error, Result};

/// Points per composite panel.
pub const PANEL_ORDER: usize = 8;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Composite rule: `panels` equal panels of [`PANEL_ORDER`] points on [a, b].
pub fn composite_nodes(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(PANEL_ORDER);
    let h = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(panels * PANEL_ORDER);
    let mut ws = Vec::with_capacity(panels * PANEL_ORDER);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(mid + 0.5 * h * x);
            ws.push(0.5 * h * w);
        }
    }
    (xs, ws)
}

fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, gx: &[f64], gw: &[f64]) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    gx.iter().zip(gw).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Adaptive bisection with a 10-point rule; each interval is accepted when
/// the single-panel value and the two-half-panel value agree to `abs_tol`
/// (scaled by the interval's share of the domain).
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    let (gx, gw) = gauss_legendre(10);
    let total = b - a;
    let mut stack = vec![(a, b, gl_panel(&f, a, b, &gx, &gw), 0u32)];
    let mut sum = 0.0;
    let mut compensation = 0.0;
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = gl_panel(&f, lo, mid, &gx, &gw);
        let right = gl_panel(&f, mid, hi, &gx, &gw);
        let err = (left + right - whole).abs();
        if err <= abs_tol * ((hi - lo) / total).max(1e-3) || depth >= 60 {
            if depth >= 60 && err > abs_tol {
                return Err(Error::QuadratureFailure(format!(
                    "adaptive bisection exhausted on [{lo}, {hi}], error {err:e}"
                )));
            }
            // Kahan summation: many small panels on long tails.
            let y = left + right - compensation;
            let t = sum + y;
            compensation = (t - sum) - y;
            sum = t;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    Ok(sum)
}
