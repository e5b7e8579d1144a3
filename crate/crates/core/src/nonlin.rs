//! The nonlinearity `g` and the change of variables `x = W(u)` that turns
//! `u'' + q(t) g(u) = 0` into the planar system `x' = y, y' = h(x) y² + q(t)`.
//!
//! `W(u) = −∫₁ᵘ dx / g(x)` is a strictly decreasing diffeomorphism of
//! `(0, ∞)` onto ℝ as soon as `1/g` is non-integrable at both ends, and
//! `h(x) = g'(W⁻¹(x))`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optim;
use crate::quad;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum NonlinearityKind {
    /// `g(u) = c1·u^α / (1 + c2·u^γ)` with `c1, c2 > 0` and `1 < α < γ`.
    Model { c1: f64, c2: f64, alpha: f64, gamma: f64 },
    /// User supplied `g` and `g'`.
    Custom { g: ScalarFn, g_prime: ScalarFn },
}

impl fmt::Debug for NonlinearityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonlinearityKind::Model { c1, c2, alpha, gamma } => f
                .debug_struct("Model")
                .field("c1", c1)
                .field("c2", c2)
                .field("alpha", alpha)
                .field("gamma", gamma)
                .finish(),
            NonlinearityKind::Custom { .. } => f.write_str("Custom"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Nonlinearity {
    kind: NonlinearityKind,
    /// Below `r`, `g' > 0`.
    r: f64,
    /// Above `big_r`, `g' < 0`.
    big_r: f64,
}

impl Nonlinearity {
    pub fn model(c1: f64, c2: f64, alpha: f64, gamma: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::domain("model nonlinearity needs c1, c2 > 0"));
        }
        if !(alpha > 1.0 && gamma > alpha) || !alpha.is_finite() || !gamma.is_finite() {
            return Err(Error::domain("model nonlinearity needs 1 < alpha < gamma"));
        }
        // g'(u) ∝ u^(α−1)·(α + c2(α−γ)u^γ): single zero at u^γ = α / (c2(γ−α)).
        let crit = (alpha / (c2 * (gamma - alpha))).powf(1.0 / gamma);
        Ok(Self {
            kind: NonlinearityKind::Model { c1, c2, alpha, gamma },
            r: crit,
            big_r: crit,
        })
    }

    /// The reference instance `u² / (1 + u³)`.
    pub fn reference() -> Self {
        Self::model(1.0, 1.0, 2.0, 3.0).expect("valid model")
    }

    pub fn custom(
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        r: f64,
        big_r: f64,
    ) -> Result<Self> {
        if !(r > 0.0 && big_r >= r) {
            return Err(Error::domain("custom nonlinearity needs 0 < r <= R"));
        }
        Ok(Self {
            kind: NonlinearityKind::Custom {
                g: Arc::new(g),
                g_prime: Arc::new(g_prime),
            },
            r,
            big_r,
        })
    }

    pub fn kind(&self) -> &NonlinearityKind {
        &self.kind
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn big_r(&self) -> f64 {
        self.big_r
    }

    pub fn eval_g(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(Error::domain(format!("g is defined on [0, inf), got u = {u}")));
        }
        Ok(self.g_raw(u))
    }

    pub fn eval_g_prime(&self, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::domain(format!("g' is evaluated on (0, inf), got u = {u}")));
        }
        Ok(self.g_prime_raw(u))
    }

    /// `g` on `[0, ∞)` without the domain check.
    pub(crate) fn g_raw(&self, u: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Model { c1, c2, alpha, gamma } => {
                if u == 0.0 {
                    0.0
                } else {
                    c1 * u.powf(*alpha) / (1.0 + c2 * u.powf(*gamma))
                }
            }
            NonlinearityKind::Custom { g, .. } => g(u),
        }
    }

    pub(crate) fn g_prime_raw(&self, u: f64) -> f64 {
        match &self.kind {
            NonlinearityKind::Model { c1, c2, alpha, gamma } => {
                if u == 0.0 {
                    return 0.0;
                }
                let v = c2 * u.powf(*gamma);
                c1 * u.powf(alpha - 1.0) * (alpha + (alpha - gamma) * v) / ((1.0 + v) * (1.0 + v))
            }
            NonlinearityKind::Custom { g_prime, .. } => g_prime(u),
        }
    }

    /// Odd extension of `g` to the real line. Runge–Kutta stages may probe
    /// slightly negative `u` right before a positivity event.
    pub(crate) fn g_odd(&self, u: f64) -> f64 {
        if u >= 0.0 {
            self.g_raw(u)
        } else {
            -self.g_raw(-u)
        }
    }

    /// Primitive `G(u) = ∫₀ᵘ g`.
    pub fn primitive(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(Error::domain(format!("G is defined on [0, inf), got u = {u}")));
        }
        if u == 0.0 {
            return Ok(0.0);
        }
        if let NonlinearityKind::Model { c1, c2, alpha, gamma } = &self.kind {
            if (gamma - alpha - 1.0).abs() < 1e-15 {
                return Ok(c1 / (c2 * gamma) * (c2 * u.powf(*gamma)).ln_1p());
            }
        }
        quad::adaptive(|s| self.g_raw(s), 0.0, u, 1e-14, 1e-12)
    }

    /// Closed-form `W` when the model admits an elementary antiderivative of
    /// `1/g = u^(−α)/c1 + (c2/c1)·u^(γ−α)`, which it does for every `α > 1`.
    fn w_closed(&self, u: f64) -> Option<f64> {
        match &self.kind {
            NonlinearityKind::Model { c1, c2, alpha, gamma } => {
                let p = 1.0 - alpha;
                let s = gamma - alpha + 1.0;
                let first = (u.powf(p) - 1.0) / (c1 * p);
                let second = c2 / c1 * (u.powf(s) - 1.0) / s;
                Some(-(first + second))
            }
            NonlinearityKind::Custom { .. } => None,
        }
    }

    /// Checks the structural hypotheses on sampled grids.
    pub fn validate_hypotheses(&self, grid: &SamplingSpec) -> HypothesisReport {
        validate(self, grid)
    }
}

/// Log-spaced sampling used by the hypothesis checks.
#[derive(Clone, Debug, Serialize)]
pub struct SamplingSpec {
    pub u_min: f64,
    pub u_max: f64,
    pub points: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            u_min: 1e-8,
            u_max: 1e8,
            points: 2000,
        }
    }
}

impl SamplingSpec {
    fn nodes(&self) -> Vec<f64> {
        log_space(self.u_min, self.u_max, self.points)
    }
}

pub(crate) fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub passed: bool,
    /// A sample point where the check failed, if any.
    pub witness: Option<f64>,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn validate(n: &Nonlinearity, grid: &SamplingSpec) -> HypothesisReport {
    let us = grid.nodes();
    let mut checks = Vec::new();

    let g0 = n.g_raw(0.0);
    checks.push(HypothesisCheck {
        name: "g_zero_at_origin",
        passed: g0 == 0.0,
        witness: (g0 != 0.0).then_some(0.0),
        detail: format!("g(0) = {g0:e}"),
    });

    let bad = us.iter().copied().find(|&u| !(n.g_raw(u) > 0.0));
    checks.push(HypothesisCheck {
        name: "g_positive",
        passed: bad.is_none(),
        witness: bad,
        detail: "g(u) > 0 on sampled u > 0".into(),
    });

    let bad = us
        .iter()
        .copied()
        .filter(|&u| u < n.r)
        .find(|&u| !(n.g_prime_raw(u) > 0.0));
    checks.push(HypothesisCheck {
        name: "g_prime_positive_below_r",
        passed: bad.is_none(),
        witness: bad,
        detail: format!("g'(u) > 0 on sampled (0, {})", n.r),
    });

    let bad = us
        .iter()
        .copied()
        .filter(|&u| u > n.big_r)
        .find(|&u| !(n.g_prime_raw(u) < 0.0));
    checks.push(HypothesisCheck {
        name: "g_prime_negative_above_R",
        passed: bad.is_none(),
        witness: bad,
        detail: format!("g'(u) < 0 on sampled ({}, {})", n.big_r, grid.u_max),
    });

    // g' -> 0 at both ends: the tail values must be small compared with the
    // peak of |g'| and shrinking towards the end of the grid.
    let gp: Vec<f64> = us.iter().map(|&u| n.g_prime_raw(u).abs()).collect();
    let peak = gp.iter().cloned().fold(0.0, f64::max);
    let k = (us.len() / 20).max(2);
    let head_ok = gp[0] <= 1e-3 * peak && gp[0] <= gp[k];
    let last = gp.len() - 1;
    let tail_ok = gp[last] <= 1e-3 * peak && gp[last] <= gp[last - k];
    checks.push(HypothesisCheck {
        name: "g_prime_vanishes_at_zero",
        passed: head_ok,
        witness: (!head_ok).then_some(us[0]),
        detail: format!("|g'({:e})| = {:e}, max |g'| = {:e}", us[0], gp[0], peak),
    });
    checks.push(HypothesisCheck {
        name: "g_prime_vanishes_at_infinity",
        passed: tail_ok,
        witness: (!tail_ok).then_some(us[last]),
        detail: format!("|g'({:e})| = {:e}, max |g'| = {:e}", us[last], gp[last], peak),
    });

    // Divergence of ∫ 1/g near 0 and near ∞: partial integrals over decades
    // must keep growing without geometric decay of the increments.
    let inv = |s: f64| 1.0 / n.g_raw(s);
    let decades_low: Vec<f64> = {
        let mut v = Vec::new();
        let mut a = 1.0;
        while a / 10.0 >= grid.u_min * (1.0 - 1e-12) {
            v.push(quad::adaptive(inv, a / 10.0, a, 1e-300, 1e-10).unwrap_or(f64::NAN));
            a /= 10.0;
        }
        v
    };
    let decades_high: Vec<f64> = {
        let mut v = Vec::new();
        let mut a = 1.0;
        while a * 10.0 <= grid.u_max * (1.0 + 1e-12) {
            v.push(quad::adaptive(inv, a, a * 10.0, 1e-300, 1e-10).unwrap_or(f64::NAN));
            a *= 10.0;
        }
        v
    };
    for (name, incs) in [
        ("inverse_g_diverges_at_zero", decades_low),
        ("inverse_g_diverges_at_infinity", decades_high),
    ] {
        let ok =
            incs.len() >= 2 && incs.iter().all(|v| v.is_finite() && *v > 0.0) && incs[incs.len() - 1] >= 0.5 * incs[0];
        checks.push(HypothesisCheck {
            name,
            passed: ok,
            witness: None,
            detail: format!("per-decade increments of the partial integrals: {incs:?}"),
        });
    }

    HypothesisReport { checks }
}

/// Tabulated change of variables `W`, its inverse and `h = g' ∘ W⁻¹`.
#[derive(Clone, Debug)]
pub struct ChangeOfVariables {
    owner: Nonlinearity,
    /// `(u, W(u))`, `u` increasing, `W` decreasing.
    table: Vec<(f64, f64)>,
    d: f64,
}

impl ChangeOfVariables {
    pub const DEFAULT_NODES: usize = 4096;
    pub const DEFAULT_U_MIN: f64 = 1e-8;
    pub const DEFAULT_U_MAX: f64 = 1e8;

    pub fn new(owner: Nonlinearity) -> Result<Self> {
        Self::with_range(owner, Self::DEFAULT_U_MIN, Self::DEFAULT_U_MAX, Self::DEFAULT_NODES)
    }

    pub fn with_range(owner: Nonlinearity, u_min: f64, u_max: f64, nodes: usize) -> Result<Self> {
        if !(u_min > 0.0 && u_max > u_min && u_min <= 1.0 && u_max >= 1.0 && nodes >= 2) {
            return Err(Error::domain("table range must satisfy 0 < u_min <= 1 <= u_max"));
        }
        let us = log_space(u_min, u_max, nodes);
        let ws = match owner.w_closed(1.0) {
            Some(_) => us.iter().map(|&u| owner.w_closed(u).unwrap()).collect(),
            None => tabulate_by_quadrature(&owner, &us)?,
        };
        let table: Vec<(f64, f64)> = us.into_iter().zip(ws).collect();
        if table.windows(2).any(|p| !(p[1].1 < p[0].1)) {
            return Err(Error::numeric("W is not strictly decreasing on the table"));
        }
        let mut cov = Self { owner, table, d: 0.0 };
        let wr = cov.eval_w(cov.owner.r)?;
        let wbig = cov.eval_w(cov.owner.big_r)?;
        cov.d = wr.abs().max(wbig.abs());
        Ok(cov)
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.owner
    }

    /// `d = max(|W(r)|, |W(R)|)`: beyond it, `h(x)·x > 0`.
    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn table_range(&self) -> (f64, f64) {
        (self.table[0].0, self.table[self.table.len() - 1].0)
    }

    pub fn eval_w(&self, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::domain(format!("W is defined on (0, inf), got u = {u}")));
        }
        if let Some(w) = self.owner.w_closed(u) {
            return Ok(w);
        }
        // Custom: integrate 1/g from the nearest table node.
        let idx = self.table.partition_point(|&(t, _)| t < u);
        let (u_ref, w_ref) = if idx == 0 {
            self.table[0]
        } else if idx >= self.table.len() {
            self.table[self.table.len() - 1]
        } else {
            let lo = self.table[idx - 1];
            let hi = self.table[idx];
            if (u / lo.0).ln() < (hi.0 / u).ln() {
                lo
            } else {
                hi
            }
        };
        let integral = quad::adaptive(|s| 1.0 / self.owner.g_raw(s), u_ref, u, 1e-12, 1e-13)?;
        Ok(w_ref - integral)
    }

    /// `W⁻¹(x)`: bracket in the table, then safeguarded Newton with
    /// `W'(u) = −1/g(u)`.
    pub fn invert_w(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::domain(format!("cannot invert W at {x}")));
        }
        let (w_first, w_last) = (self.table[0].1, self.table[self.table.len() - 1].1);
        if x > w_first || x < w_last {
            return Err(Error::numeric(format!(
                "x = {x:e} outside the tabulated W range [{w_last:e}, {w_first:e}]"
            )));
        }
        // first node with W <= x
        let idx = self.table.partition_point(|&(_, w)| w > x);
        if idx < self.table.len() && self.table[idx].1 == x {
            return Ok(self.table[idx].0);
        }
        let (lo, hi) = (self.table[idx - 1].0, self.table[idx].0);
        self.newton_in_bracket(x, lo, hi)
    }

    /// Like [`invert_w`](Self::invert_w) but grows the bracket past the table
    /// instead of failing. Used inside the planar right-hand side.
    pub(crate) fn invert_w_unbounded(&self, x: f64) -> Result<f64> {
        match self.invert_w(x) {
            Ok(u) => Ok(u),
            Err(Error::Numeric(_)) if x.is_finite() => {
                let (mut lo, mut hi) = self.table_range();
                if x > self.table[0].1 {
                    hi = lo;
                    for _ in 0..2000 {
                        lo *= 0.5;
                        if lo < f64::MIN_POSITIVE {
                            break;
                        }
                        if self.eval_w(lo)? >= x {
                            return self.newton_in_bracket(x, lo, hi);
                        }
                        hi = lo;
                    }
                } else {
                    lo = hi;
                    for _ in 0..2000 {
                        hi *= 2.0;
                        if !hi.is_finite() {
                            break;
                        }
                        if self.eval_w(hi)? <= x {
                            return self.newton_in_bracket(x, lo, hi);
                        }
                        lo = hi;
                    }
                }
                Err(Error::numeric(format!("cannot bracket W^-1({x:e})")))
            }
            Err(e) => Err(e),
        }
    }

    fn newton_in_bracket(&self, x: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
        // W decreasing: W(lo) >= x >= W(hi).
        let mut u = (lo * hi).sqrt();
        let tol = 1e-10 * (1.0 + x.abs());
        for _ in 0..100 {
            let w = self.eval_w(u)?;
            let r = w - x;
            if r > 0.0 {
                lo = u;
            } else if r < 0.0 {
                hi = u;
            } else {
                return Ok(u);
            }
            let step = r * self.owner.g_raw(u);
            let cand = u + step;
            let next = if cand > lo && cand < hi && cand.is_finite() {
                cand
            } else {
                (lo * hi).sqrt()
            };
            if (next - u).abs() <= 4.0 * f64::EPSILON * u {
                let w_next = self.eval_w(next)?;
                if (w_next - x).abs() <= tol || (w - x).abs() <= tol {
                    return Ok(if (w_next - x).abs() < (w - x).abs() { next } else { u });
                }
            }
            u = next;
            if hi / lo - 1.0 <= 4.0 * f64::EPSILON {
                break;
            }
        }
        let w = self.eval_w(u)?;
        if (w - x).abs() <= tol {
            Ok(u)
        } else {
            Err(Error::numeric(format!(
                "W^-1({x:e}) did not converge: residual {:e}",
                (w - x).abs()
            )))
        }
    }

    pub fn eval_h(&self, x: f64) -> Result<f64> {
        let u = self.invert_w(x)?;
        Ok(self.owner.g_prime_raw(u))
    }

    pub(crate) fn h_unbounded(&self, x: f64) -> Result<f64> {
        let u = self.invert_w_unbounded(x)?;
        Ok(self.owner.g_prime_raw(u))
    }
}

/// Table of `W` for a custom `g`: piecewise Gauss–Kronrod integrals summed
/// outward from `u = 1`.
fn tabulate_by_quadrature(n: &Nonlinearity, us: &[f64]) -> Result<Vec<f64>> {
    let inv = |s: f64| 1.0 / n.g_raw(s);
    let k = us.partition_point(|&u| u < 1.0);
    let mut ws = vec![0.0; us.len()];
    // nodes at and above 1
    let mut prev_u = 1.0;
    let mut acc = 0.0;
    for i in k..us.len() {
        acc -= quad::adaptive(inv, prev_u, us[i], 1e-14, 1e-13)?;
        ws[i] = acc;
        prev_u = us[i];
    }
    prev_u = 1.0;
    acc = 0.0;
    for i in (0..k).rev() {
        acc += quad::adaptive(inv, us[i], prev_u, 1e-14, 1e-13)?;
        ws[i] = acc;
        prev_u = us[i];
    }
    Ok(ws)
}

/// Minimum of `g` over `[a, b] ⊂ (0, ∞)`.
pub(crate) fn min_g_on(n: &Nonlinearity, a: f64, b: f64) -> f64 {
    optim::bounded_min(|u| n.g_raw(u), a, b, 257).1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle_w(u: f64) -> f64 {
        1.0 / u - u * u / 2.0 - 0.5
    }

    #[test]
    fn g_examples() {
        let n = Nonlinearity::reference();
        assert_eq!(n.eval_g(1.0).unwrap(), 0.5);
        assert_eq!(n.eval_g(0.0).unwrap(), 0.0);
        assert!((n.eval_g(2.0).unwrap() - 4.0 / 9.0).abs() < 1e-16);
        assert!(matches!(n.eval_g(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn g_prime_examples() {
        let n = Nonlinearity::reference();
        let crit = 2f64.powf(1.0 / 3.0);
        assert!(n.eval_g_prime(crit).unwrap().abs() < 1e-15);
        assert!((n.r() - crit).abs() < 1e-15 && (n.big_r() - crit).abs() < 1e-15);
        let at1 = n.eval_g_prime(1.0).unwrap();
        assert!((at1 - 0.25).abs() < 1e-15);
        let h = 1e-5;
        let fd = (n.g_raw(1.0 + h) - n.g_raw(1.0 - h)) / (2.0 * h);
        assert!((fd - 0.25).abs() < 1e-9);
        let g10 = n.eval_g_prime(10.0).unwrap();
        assert!(g10 < 0.0 && g10.abs() < n.eval_g_prime(2.0).unwrap().abs());
        assert!(matches!(n.eval_g_prime(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn primitive_closed_form_matches_quadrature() {
        let n = Nonlinearity::reference();
        for u in [0.1, 1.0, 3.0, 40.0] {
            let q = quad::adaptive(|s| n.g_raw(s), 0.0, u, 1e-14, 1e-13).unwrap();
            assert!((n.primitive(u).unwrap() - q).abs() < 1e-11 * (1.0 + q));
        }
        let m = Nonlinearity::model(2.0, 0.5, 1.5, 4.0).unwrap();
        let exact = quad::adaptive(|s| m.g_raw(s), 0.0, 2.0, 1e-14, 1e-13).unwrap();
        assert!((m.primitive(2.0).unwrap() - exact).abs() < 1e-11);
    }

    #[test]
    fn w_examples() {
        let c = ChangeOfVariables::new(Nonlinearity::reference()).unwrap();
        assert_eq!(c.eval_w(1.0).unwrap(), 0.0);
        assert!((c.eval_w(2.0).unwrap() + 2.0).abs() < 1e-14);
        assert!((c.eval_w(0.5).unwrap() - 1.375).abs() < 1e-14);
        let q = -quad::adaptive(|s| 1.0 / c.nonlinearity().g_raw(s), 1.0, 2.0, 1e-14, 1e-14).unwrap();
        assert!((q + 2.0).abs() < 1e-12);
        assert!(matches!(c.eval_w(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn inverse_examples() {
        let c = ChangeOfVariables::new(Nonlinearity::reference()).unwrap();
        assert!((c.invert_w(0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((c.invert_w(-2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((c.invert_w(1.375).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(c.invert_w(1e12), Err(Error::Numeric(_))));
        let far = c.invert_w_unbounded(1e12).unwrap();
        assert!((oracle_w(far) - 1e12).abs() < 1e-10 * 1e12);
    }

    #[test]
    fn h_examples() {
        let c = ChangeOfVariables::new(Nonlinearity::reference()).unwrap();
        let h0 = c.eval_h(0.0).unwrap();
        let fd = (c.nonlinearity().g_raw(1.0 + 1e-6) - c.nonlinearity().g_raw(1.0 - 1e-6)) / 2e-6;
        assert!((h0 - fd).abs() < 1e-8);
        let xc = oracle_w(2f64.powf(1.0 / 3.0));
        assert!((xc + 0.5).abs() < 1e-15);
        assert!(c.eval_h(xc).unwrap().abs() < 1e-9);
        assert!(c.eval_h(50.0).unwrap() > 0.0);
        assert!((c.d() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn custom_w_by_quadrature_matches_closed_form() {
        let m = Nonlinearity::reference();
        let (m1, m2) = (m.clone(), m.clone());
        let custom = Nonlinearity::custom(move |u| m1.g_raw(u), move |u| m2.g_prime_raw(u), m.r(), m.big_r()).unwrap();
        let c = ChangeOfVariables::with_range(custom, 1e-4, 1e4, 512).unwrap();
        for u in [1e-3, 0.37, 1.0, 2.0, 55.0] {
            let w = c.eval_w(u).unwrap();
            assert!((w - oracle_w(u)).abs() <= 1e-10 * (1.0 + oracle_w(u).abs()), "u={u}");
            let back = c.invert_w(w).unwrap();
            assert!((back - u).abs() <= 1e-8 * u);
        }
    }

    #[test]
    fn hypotheses_model_passes() {
        let rep = Nonlinearity::reference().validate_hypotheses(&SamplingSpec::default());
        assert!(rep.all_passed(), "{rep:#?}");
        let other = Nonlinearity::model(0.5, 3.0, 1.5, 2.5).unwrap();
        assert!(other.validate_hypotheses(&SamplingSpec::default()).all_passed());
    }

    #[test]
    fn hypotheses_linear_and_quadratic_fail_at_infinity() {
        let lin = Nonlinearity::custom(|u| u, |_| 1.0, 1.0, 1.0).unwrap();
        let rep = lin.validate_hypotheses(&SamplingSpec::default());
        assert!(!rep.get("g_prime_negative_above_R").unwrap().passed);
        let sq = Nonlinearity::custom(|u| u * u, |u| 2.0 * u, 1.0, 1.0).unwrap();
        let rep = sq.validate_hypotheses(&SamplingSpec::default());
        assert!(!rep.get("g_prime_negative_above_R").unwrap().passed);
        assert!(!rep.all_passed());
    }
}
