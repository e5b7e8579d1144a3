//! Verification of computed solutions, the action functional, periodic and
//! radial constructions, and artifact emission.

mod emit;

use std::sync::Arc;

use serde::Serialize;

pub use emit::{emit, render, Artifact, Format};

use crate::error::{Error, Result};
use crate::nonlin::{Nonlinearity, ScalarFn};
use crate::quad;
use crate::shooting::{Diagnostics, Problem, SolutionProfile};
use crate::weight::{Coefficient, Side, Weight, WeightParams};

/// Raw residuals of a sampled profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Residuals {
    pub ode_residual: f64,
    pub bc_residual: f64,
    pub med_residual: f64,
    pub positivity_margin: f64,
    /// `∫₀ᵀ q`.
    pub mean_integral: f64,
    /// `∫₀ᵀ (u'/g(u))² g'(u)`.
    pub med_integral: f64,
}

impl Residuals {
    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            ode_residual: self.ode_residual,
            bc_residual: self.bc_residual,
            med_residual: self.med_residual,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ChecksPassed {
    pub ode: bool,
    pub bc: bool,
    pub med: bool,
    pub positivity: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub ode_residual: f64,
    pub bc_residual: f64,
    pub med_residual: f64,
    pub positivity_margin: f64,
    pub mean_integral: f64,
    pub med_integral: f64,
    pub tol: f64,
    pub passed: ChecksPassed,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        let p = self.passed;
        p.ode && p.bc && p.med && p.positivity
    }
}

/// Splits node indices into pieces at the coefficient's breakpoints that
/// coincide with grid nodes.
fn pieces(grid: &[f64], breaks: &[f64]) -> Vec<(usize, usize)> {
    let n = grid.len();
    let scale = grid[n - 1].abs().max(grid[0].abs()).max(1.0);
    let mut cuts: Vec<usize> = breaks
        .iter()
        .filter_map(|&b| {
            let i = grid.partition_point(|&t| t < b - 1e-12 * scale);
            (i > 0 && i + 1 < n && (grid[i] - b).abs() <= 1e-12 * scale).then_some(i)
        })
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut out = Vec::new();
    let mut start = 0;
    for c in cuts {
        out.push((start, c));
        start = c;
    }
    out.push((start, n - 1));
    out
}

/// Piecewise cumulative Simpson of `f(i, side)` where `side` tells which
/// one-sided limit to use at the ends of each piece.
fn piecewise_cumulative(grid: &[f64], parts: &[(usize, usize)], f: impl Fn(usize, Side) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    let mut offset = 0.0;
    for &(a, b) in parts {
        let vals: Vec<f64> = (a..=b)
            .map(|i| {
                if i == b && b != a {
                    f(i, Side::Left)
                } else {
                    f(i, Side::Right)
                }
            })
            .collect();
        let cum = quad::cumulative_simpson(&grid[a..=b], &vals);
        for (k, c) in cum.iter().enumerate() {
            out[a + k] = offset + c;
        }
        offset += cum.last().copied().unwrap_or(0.0);
    }
    out
}

/// Residuals of a profile `(t, u, u')` against `u'' + q(t) g(u) = 0`.
///
/// The equation is checked in integrated form: both
/// `u(t) − u(0) − ∫₀ᵗ u'` and `u'(t) − u'(0) + ∫₀ᵗ q g(u)` must vanish, the
/// second re-evaluating the right-hand side at the samples. Integrals use
/// composite Simpson on the profile grid, split at the coefficient's
/// breakpoints. The maximum is normalised by `max(1, max|q| · max g(u))`.
pub fn residuals_with<Q: Coefficient + ?Sized>(
    n: &Nonlinearity,
    q: &Q,
    grid: &[f64],
    u: &[f64],
    up: &[f64],
) -> Residuals {
    let parts = pieces(grid, &q.breakpoints());
    let qv = |i: usize, s: Side| q.value(grid[i], s);
    let g = |i: usize| n.g_raw(u[i].max(0.0));
    let int_up = piecewise_cumulative(grid, &parts, |i, _| up[i]);
    let int_qg = piecewise_cumulative(grid, &parts, |i, s| qv(i, s) * g(i));
    let int_q = piecewise_cumulative(grid, &parts, qv);
    let med = piecewise_cumulative(grid, &parts, |i, _| {
        let gi = g(i);
        if gi > 0.0 {
            let y = up[i] / gi;
            y * y * n.g_prime_raw(u[i])
        } else {
            f64::NAN
        }
    });
    let mut qmax = 0.0f64;
    for &(a, b) in &parts {
        for i in a..=b {
            qmax = qmax.max(qv(i, Side::Left).abs()).max(qv(i, Side::Right).abs());
        }
    }
    let gmax = (0..grid.len()).map(g).fold(0.0, f64::max);
    let scale = (qmax * gmax).max(1.0);
    let mut ode = 0.0f64;
    for i in 0..grid.len() {
        let r1 = u[i] - u[0] - int_up[i];
        let r2 = up[i] - up[0] + int_qg[i];
        ode = ode.max(r1.abs()).max(r2.abs());
    }
    let last = grid.len() - 1;
    let mean = int_q[last];
    let med_int = med[last];
    Residuals {
        ode_residual: ode / scale,
        bc_residual: up[0].abs().max(up[last].abs()),
        med_residual: (mean + med_int).abs(),
        positivity_margin: u.iter().copied().fold(f64::INFINITY, f64::min),
        mean_integral: mean,
        med_integral: med_int,
    }
}

/// Residuals against the problem's weight at `(λ, μ)`.
pub fn residuals(problem: &Problem, p: WeightParams, grid: &[f64], u: &[f64], up: &[f64]) -> Residuals {
    residuals_with(
        problem.nonlinearity(),
        &problem.weight().forcing(p.lambda, p.mu),
        grid,
        u,
        up,
    )
}

fn check_profile(grid: &[f64], u: &[f64], up: &[f64]) -> Result<()> {
    if grid.len() < 64 {
        return Err(Error::domain(format!(
            "a profile needs at least 64 points, got {}",
            grid.len()
        )));
    }
    if u.len() != grid.len() || up.len() != grid.len() {
        return Err(Error::domain("profile columns have different lengths"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("profile grid must be strictly increasing"));
    }
    if grid.iter().chain(u).chain(up).any(|v| !v.is_finite()) {
        return Err(Error::domain("profile contains non-finite values"));
    }
    Ok(())
}

fn report_from(r: Residuals, tol: f64) -> VerificationReport {
    VerificationReport {
        ode_residual: r.ode_residual,
        bc_residual: r.bc_residual,
        med_residual: r.med_residual,
        positivity_margin: r.positivity_margin,
        mean_integral: r.mean_integral,
        med_integral: r.med_integral,
        tol,
        passed: ChecksPassed {
            ode: r.ode_residual <= tol,
            bc: r.bc_residual <= tol,
            med: r.med_residual <= tol,
            positivity: r.positivity_margin > 0.0,
        },
    }
}

/// Verifies a profile of the problem at its own `(λ, μ)`. Each residual
/// passes when it is at most `tol`; positivity needs `min u > 0`.
pub fn verify_solution(problem: &Problem, s: &SolutionProfile, tol: f64) -> Result<VerificationReport> {
    check_profile(&s.grid, &s.u, &s.up)?;
    let p = WeightParams::new(s.lambda, s.mu)?;
    if (s.grid[0]).abs() > 1e-12 || (s.grid[s.grid.len() - 1] - problem.weight().t_end()).abs() > 1e-9 {
        return Err(Error::domain("profile grid must span [0, T]"));
    }
    Ok(report_from(residuals(problem, p, &s.grid, &s.u, &s.up), tol))
}

/// `J(u) = ½∫(u')² − ∫ q G(u)` with `G(u) = ∫₀ᵘ g`. The derivative is taken
/// from the samples by second-order finite differences.
pub fn action_functional(problem: &Problem, p: WeightParams, grid: &[f64], u: &[f64]) -> Result<f64> {
    if grid.len() < 64 || u.len() != grid.len() {
        return Err(Error::domain("action functional needs at least 64 matching samples"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("profile grid must be strictly increasing"));
    }
    let n = problem.nonlinearity();
    let up = gradient(grid, u);
    let q = problem.weight().forcing(p.lambda, p.mu);
    let parts = pieces(grid, &q.breakpoints());
    let big_g: Vec<f64> = u
        .iter()
        .map(|&v| if v > 0.0 { n.primitive(v) } else { Ok(0.0) })
        .collect::<Result<_>>()?;
    let kinetic = quad::simpson(grid, &up.iter().map(|d| d * d).collect::<Vec<_>>());
    let potential = piecewise_cumulative(grid, &parts, |i, s| q.value(grid[i], s) * big_g[i]);
    Ok(0.5 * kinetic - potential[grid.len() - 1])
}

/// Second-order finite-difference derivative on a non-uniform grid.
fn gradient(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        d[i] = (h0 * h0 * f[i + 1] - h1 * h1 * f[i - 1] + (h1 * h1 - h0 * h0) * f[i]) / (h0 * h1 * (h0 + h1));
    }
    let (h0, h1) = (x[1] - x[0], x[2] - x[1]);
    d[0] = (-(2.0 * h0 + h1) * h1 * f[0] + (h0 + h1) * (h0 + h1) * f[1] - h0 * h0 * f[2]) / (h0 * h1 * (h0 + h1));
    let (h0, h1) = (x[n - 2] - x[n - 3], x[n - 1] - x[n - 2]);
    d[n - 1] = (h1 * h1 * f[n - 3] - (h0 + h1) * (h0 + h1) * f[n - 2] + (2.0 * h1 + h0) * h0 * f[n - 1])
        / (h0 * h1 * (h0 + h1));
    d
}

/// A solution extended evenly about `σ` to one period `[σ − L, σ + L]`,
/// `L` the length of the original interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeriodicProfile {
    pub sigma: f64,
    pub period: f64,
    pub lambda: f64,
    pub mu: f64,
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub up: Vec<f64>,
}

/// Even reflection of a Neumann solution about its left endpoint, placed at
/// `σ`: `u(σ + s) = u(|s|)`, `u'(σ + s) = sign(s) u'(|s|)`. Tiling this
/// window with period `2L` gives the periodic solution.
pub fn periodic_extend(s: &SolutionProfile, sigma: f64) -> Result<PeriodicProfile> {
    check_profile(&s.grid, &s.u, &s.up)?;
    if !sigma.is_finite() {
        return Err(Error::domain("sigma must be finite"));
    }
    let t0 = s.grid[0];
    let len = s.grid[s.grid.len() - 1] - t0;
    let n = s.grid.len();
    let mut grid = Vec::with_capacity(2 * n - 1);
    let mut u = Vec::with_capacity(2 * n - 1);
    let mut up = Vec::with_capacity(2 * n - 1);
    for i in (1..n).rev() {
        grid.push(sigma - (s.grid[i] - t0));
        u.push(s.u[i]);
        up.push(-s.up[i]);
    }
    for i in 0..n {
        grid.push(sigma + (s.grid[i] - t0));
        u.push(s.u[i]);
        up.push(if i == 0 { 0.0 } else { s.up[i] });
    }
    Ok(PeriodicProfile {
        sigma,
        period: 2.0 * len,
        lambda: s.lambda,
        mu: s.mu,
        grid,
        u,
        up,
    })
}

/// The weight of the extended equation, `q(|t − σ|)`, on `[σ − T, σ + T]`.
pub struct ReflectedWeight<'a> {
    pub weight: &'a Weight,
    pub params: WeightParams,
    pub sigma: f64,
}

impl Coefficient for ReflectedWeight<'_> {
    fn value(&self, t: f64, side: Side) -> f64 {
        let s = t - self.sigma;
        let q = self.weight.forcing(self.params.lambda, self.params.mu);
        // on the left half the time direction is reversed, so are the sides
        let (r, side) = if s >= 0.0 {
            (s, side)
        } else {
            (-s, if side == Side::Left { Side::Right } else { Side::Left })
        };
        // both limits at the reflection points come from inside [0, T]
        let t_end = self.weight.t_end();
        let side = if r <= 0.0 {
            Side::Right
        } else if r >= t_end {
            Side::Left
        } else {
            side
        };
        q.value(r.min(t_end), side)
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .weight
            .breakpoints()
            .iter()
            .flat_map(|&t| [self.sigma - t, self.sigma + t])
            .collect();
        b.push(self.sigma);
        b.sort_by(f64::total_cmp);
        b
    }
}

/// Integrated-form residual of an extended profile against the reflected
/// weight.
pub fn periodic_residual(problem: &Problem, ext: &PeriodicProfile) -> Result<Residuals> {
    check_profile(&ext.grid, &ext.u, &ext.up)?;
    let q = ReflectedWeight {
        weight: problem.weight(),
        params: WeightParams::new(ext.lambda, ext.mu)?,
        sigma: ext.sigma,
    };
    Ok(residuals_with(problem.nonlinearity(), &q, &ext.grid, &ext.u, &ext.up))
}

/// The Liouville substitution `t(r) = ∫_{r₁}^r s^{1−d} ds` turning radial
/// solutions of `Δ𝒰 + A(|x|) g(𝒰) = 0` on an annulus into solutions of
/// `v'' + b(t) g(v) = 0` on `[0, T_red]` with `b(t) = r^{2(d−1)} A(r)`.
#[derive(Clone)]
pub struct RadialReduction {
    pub dim: u32,
    pub r1: f64,
    pub r2: f64,
    pub t_red: f64,
    a: ScalarFn,
}

impl std::fmt::Debug for RadialReduction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RadialReduction")
            .field("dim", &self.dim)
            .field("r1", &self.r1)
            .field("r2", &self.r2)
            .field("t_red", &self.t_red)
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialProfile {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    /// `d𝒰/dr`.
    pub ur: Vec<f64>,
}

pub fn radial_reduce(
    dim: u32,
    r1: f64,
    r2: f64,
    a: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Result<RadialReduction> {
    if dim < 2 {
        return Err(Error::domain(format!("dimension must be at least 2, got {dim}")));
    }
    if !(r1 > 0.0 && r2 > r1 && r2.is_finite()) {
        return Err(Error::domain(format!("need 0 < r1 < r2, got ({r1}, {r2})")));
    }
    let mut red = RadialReduction {
        dim,
        r1,
        r2,
        t_red: 0.0,
        a: Arc::new(a),
    };
    red.t_red = red.t_of_r(r2);
    Ok(red)
}

impl RadialReduction {
    pub fn t_of_r(&self, r: f64) -> f64 {
        if self.dim == 2 {
            (r / self.r1).ln()
        } else {
            let k = self.dim as f64 - 2.0;
            (self.r1.powf(-k) - r.powf(-k)) / k
        }
    }

    pub fn r_of_t(&self, t: f64) -> f64 {
        if self.dim == 2 {
            self.r1 * t.exp()
        } else {
            let k = self.dim as f64 - 2.0;
            (self.r1.powf(-k) - k * t).powf(-1.0 / k)
        }
    }

    /// `b(t) = r(t)^{2(d−1)} A(r(t))`.
    pub fn b(&self, t: f64) -> f64 {
        let r = self.r_of_t(t);
        r.powi(2 * (self.dim as i32 - 1)) * (self.a)(r)
    }

    /// The reduced weight split at `τ` (`b ≥ 0` before, `b ≤ 0` after).
    pub fn weight(&self, tau: f64, breaks: Vec<f64>) -> Result<Weight> {
        let me = self.clone();
        Weight::from_signed(self.t_red, tau, move |t| me.b(t), breaks)
    }

    /// Maps a solution `v(t)` of the reduced problem back to `𝒰(r)`, with
    /// `𝒰'(r) = v'(t) r^{1−d}`.
    pub fn back_map(&self, grid: &[f64], v: &[f64], vp: &[f64]) -> RadialProfile {
        let r: Vec<f64> = grid.iter().map(|&t| self.r_of_t(t)).collect();
        let ur = r
            .iter()
            .zip(vp)
            .map(|(&r, &d)| d * r.powi(1 - self.dim as i32))
            .collect();
        RadialProfile { r, u: v.to_vec(), ur }
    }
}

impl Coefficient for RadialReduction {
    fn value(&self, t: f64, _side: Side) -> f64 {
        self.b(t)
    }

    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}
