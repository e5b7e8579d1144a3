//! Quadrature helpers: adaptive Gauss–Kronrod (7/15) on smooth integrands and
//! composite Simpson on sampled, possibly non-uniform grids.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss–Kronrod 15-point panel: (kronrod estimate, |kronrod − gauss|).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for (j, &x) in XGK.iter().take(7).enumerate() {
        let f1 = f(c - h * x);
        let f2 = f(c + h * x);
        k += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            g += WG[j / 2] * (f1 + f2);
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive Gauss–Kronrod quadrature of `f` over `[a, b]`.
///
/// Converges when the summed error estimate is at most
/// `max(abs_tol, rel_tol·|I|)`.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    const MAX_PANELS: usize = 4000;
    let (i0, e0) = gk15(&f, a, b);
    let mut panels = vec![(a, b, i0, e0)];
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::numeric(format!("non-finite integrand on [{a}, {b}]")));
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        if panels.len() >= MAX_PANELS {
            return Err(Error::numeric(format!(
                "quadrature on [{a}, {b}] did not converge (error estimate {err:e})"
            )));
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (pa, pb, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        let (il, el) = gk15(&f, pa, mid);
        let (ir, er) = gk15(&f, mid, pb);
        panels.push((pa, mid, il, el));
        panels.push((mid, pb, ir, er));
    }
}

/// Integral over `[x0, x1]` of the quadratic through three samples.
fn first_interval(x: [f64; 3], f: [f64; 3]) -> f64 {
    let h0 = x[1] - x[0];
    let h1 = x[2] - x[1];
    let b = (f[1] - f[0]) / h0;
    let c = ((f[2] - f[1]) / h1 - b) / (h0 + h1);
    f[0] * h0 + b * h0 * h0 / 2.0 - c * h0 * h0 * h0 / 6.0
}

/// Integral over `[x0, x2]` of the quadratic through three samples
/// (Simpson's rule for unequal spacing).
fn pair(x: [f64; 3], f: [f64; 3]) -> f64 {
    let h0 = x[1] - x[0];
    let h1 = x[2] - x[1];
    (h0 + h1) / 6.0 * ((2.0 - h1 / h0) * f[0] + (h0 + h1) * (h0 + h1) / (h0 * h1) * f[1] + (2.0 - h0 / h1) * f[2])
}

/// Cumulative composite Simpson integral of samples `f` over nodes `x`,
/// returning the running integral at every node (first entry 0).
///
/// Pairs of intervals are integrated with Simpson's rule; odd nodes inside a
/// pair and a trailing single interval use the same local quadratic.
pub fn cumulative_simpson(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * (x[1] - x[0]) * (f[0] + f[1]);
        return out;
    }
    let mut i = 0;
    while i + 2 < n {
        let xs = [x[i], x[i + 1], x[i + 2]];
        let fs = [f[i], f[i + 1], f[i + 2]];
        out[i + 1] = out[i] + first_interval(xs, fs);
        out[i + 2] = out[i] + pair(xs, fs);
        i += 2;
    }
    if i + 1 < n {
        // trailing interval [x[i], x[i+1]]: quadratic through the last three nodes
        let xs = [x[i - 1], x[i], x[i + 1]];
        let fs = [f[i - 1], f[i], f[i + 1]];
        out[i + 1] = out[i] + pair(xs, fs) - first_interval(xs, fs);
    }
    out
}

/// Composite Simpson integral of samples over nodes.
pub fn simpson(x: &[f64], f: &[f64]) -> f64 {
    cumulative_simpson(x, f).last().copied().unwrap_or(0.0)
}
