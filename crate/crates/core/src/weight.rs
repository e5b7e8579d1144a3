//! Indefinite weights `q_{λ,μ}(t) = λ a⁺(t) − μ a⁻(t)` with a single sign
//! switch at `τ`: `a⁺` lives on `[0, τ)`, `a⁻` on `[τ, T]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonlin::{self, Nonlinearity, ScalarFn};
use crate::quad;

/// Which one-sided limit to take at a discontinuity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// A time-dependent coefficient `q(t)`, piecewise smooth between breakpoints.
pub trait Coefficient: Send + Sync {
    /// Value at `t`; at a breakpoint, the limit from `side`.
    fn value(&self, t: f64, side: Side) -> f64;

    /// Interior points where `q` may jump or lose smoothness.
    fn breakpoints(&self) -> Vec<f64>;

    /// Upper bound of `|q|` on the interval between `a` and `b`.
    fn abs_bound(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let n = 64;
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .flat_map(|t| [self.value(t, Side::Left).abs(), self.value(t, Side::Right).abs()])
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub from: f64,
    pub to: f64,
    pub value: f64,
}

/// A nonnegative profile on part of the time axis.
#[derive(Clone)]
pub enum Profile {
    /// Sum of constant boxes `value·1_{[from, to)}`.
    Boxes(Vec<Piece>),
    /// Piecewise-linear interpolation of `(t, value)` samples, zero outside.
    Samples(Vec<(f64, f64)>),
    /// An arbitrary function on `[from, to]`, zero outside, with known
    /// non-smooth points.
    Function {
        f: ScalarFn,
        from: f64,
        to: f64,
        breaks: Vec<f64>,
    },
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Boxes(b) => f.debug_tuple("Boxes").field(b).finish(),
            Profile::Samples(s) => f.debug_tuple("Samples").field(&s.len()).finish(),
            Profile::Function { from, to, .. } => write!(f, "Function[{from}, {to}]"),
        }
    }
}

impl Profile {
    pub fn zero() -> Self {
        Profile::Boxes(Vec::new())
    }

    pub fn constant(from: f64, to: f64, value: f64) -> Self {
        Profile::Boxes(vec![Piece { from, to, value }])
    }

    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static, from: f64, to: f64) -> Self {
        Profile::Function {
            f: std::sync::Arc::new(f),
            from,
            to,
            breaks: Vec::new(),
        }
    }

    pub fn value(&self, t: f64, side: Side) -> f64 {
        match self {
            Profile::Boxes(pieces) => pieces
                .iter()
                .filter(|p| match side {
                    Side::Right => p.from <= t && t < p.to,
                    Side::Left => p.from < t && t <= p.to,
                })
                .map(|p| p.value)
                .sum(),
            Profile::Samples(s) => {
                if s.is_empty() || t < s[0].0 || t > s[s.len() - 1].0 {
                    return 0.0;
                }
                let i = s.partition_point(|&(x, _)| x <= t);
                if i == 0 {
                    return s[0].1;
                }
                if i >= s.len() {
                    return s[s.len() - 1].1;
                }
                let (t0, v0) = s[i - 1];
                let (t1, v1) = s[i];
                if t1 == t0 {
                    v1
                } else {
                    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                }
            }
            Profile::Function { f, from, to, .. } => {
                let inside = match side {
                    Side::Right => *from <= t && t < *to,
                    Side::Left => *from < t && t <= *to,
                };
                if inside {
                    f(t)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Profile::Boxes(p) => p.iter().flat_map(|p| [p.from, p.to]).collect(),
            Profile::Samples(s) => s.iter().map(|&(t, _)| t).collect(),
            Profile::Function { from, to, breaks, .. } => {
                let mut v = vec![*from, *to];
                v.extend(breaks.iter().copied());
                v
            }
        }
    }

    /// `∫_a^b` of the profile.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match self {
            Profile::Boxes(pieces) => pieces
                .iter()
                .map(|p| p.value * (p.to.min(b) - p.from.max(a)).max(0.0))
                .sum(),
            Profile::Samples(s) => {
                // trapezoid is exact for the interpolant; clip each segment
                s.windows(2)
                    .map(|w| {
                        let (t0, v0) = w[0];
                        let (t1, v1) = w[1];
                        let lo = t0.max(a);
                        let hi = t1.min(b);
                        if hi <= lo || t1 == t0 {
                            return 0.0;
                        }
                        let at = |t: f64| v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                        0.5 * (hi - lo) * (at(lo) + at(hi))
                    })
                    .sum()
            }
            Profile::Function { f, from, to, breaks } => {
                let lo = from.max(a);
                let hi = to.min(b);
                if hi <= lo {
                    return 0.0;
                }
                let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&x| x > lo && x < hi).collect();
                cuts.push(lo);
                cuts.push(hi);
                cuts.sort_by(f64::total_cmp);
                cuts.windows(2)
                    .map(|w| quad::adaptive(|t| f(t), w[0], w[1], 1e-15, 1e-14).unwrap_or(f64::NAN))
                    .sum()
            }
        }
    }

    fn min_value_sampled(&self, a: f64, b: f64) -> f64 {
        let n = 256;
        (0..=n)
            .map(|i| a + (b - a) * i as f64 / n as f64)
            .flat_map(|t| [self.value(t, Side::Left), self.value(t, Side::Right)])
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub struct Weight {
    t_end: f64,
    tau: f64,
    plus: Profile,
    minus: Profile,
}

impl Weight {
    /// Builds a weight on `[0, T]` with switch time `τ`. The profiles must be
    /// nonnegative; `a⁺` is only read on `[0, τ)` and `a⁻` on `[τ, T]`.
    /// Zero profiles are accepted here; [`Weight::check_sign_changing`] is the
    /// separate gate used by the solver.
    pub fn new(t_end: f64, tau: f64, plus: Profile, minus: Profile) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::domain(format!("T must be positive, got {t_end}")));
        }
        if !(0.0..=t_end).contains(&tau) {
            return Err(Error::domain(format!("tau = {tau} outside [0, {t_end}]")));
        }
        for (name, p, lo, hi) in [("plus", &plus, 0.0, tau), ("minus", &minus, tau, t_end)] {
            if let Profile::Boxes(pieces) = p {
                for piece in pieces {
                    if !(piece.from < piece.to) {
                        return Err(Error::domain(format!("{name} box has from >= to: {piece:?}")));
                    }
                    if piece.from < lo - 1e-12 || piece.to > hi + 1e-12 {
                        return Err(Error::domain(format!(
                            "{name} box {piece:?} leaves its window [{lo}, {hi}]"
                        )));
                    }
                }
            }
            if let Profile::Samples(s) = p {
                if s.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                    return Err(Error::domain(format!("{name} samples must have increasing times")));
                }
            }
            if hi > lo && p.min_value_sampled(lo, hi) < 0.0 {
                return Err(Error::domain(format!("{name} profile must be nonnegative")));
            }
        }
        Ok(Self {
            t_end,
            tau,
            plus,
            minus,
        })
    }

    /// Two-step weight: `a⁺ ≡ plus` on `[0, τ)`, `a⁻ ≡ minus` on `[τ, T]`.
    pub fn two_step(t_end: f64, tau: f64, plus: f64, minus: f64) -> Result<Self> {
        let p = if tau > 0.0 && plus != 0.0 {
            Profile::constant(0.0, tau, plus)
        } else {
            Profile::zero()
        };
        let m = if t_end > tau && minus != 0.0 {
            Profile::constant(tau, t_end, minus)
        } else {
            Profile::zero()
        };
        Self::new(t_end, tau, p, m)
    }

    /// The reference weight: `T = 2`, `τ = 1`, unit boxes.
    pub fn reference() -> Self {
        Self::two_step(2.0, 1.0, 1.0, 1.0).expect("valid weight")
    }

    /// Weight from a signed function `a(t)`: `a⁺ = max(a, 0)` on `[0, τ)`,
    /// `a⁻ = max(−a, 0)` on `[τ, T]`.
    pub fn from_signed(
        t_end: f64,
        tau: f64,
        a: impl Fn(f64) -> f64 + Send + Sync + Clone + 'static,
        breaks: Vec<f64>,
    ) -> Result<Self> {
        let a2 = a.clone();
        let plus = Profile::Function {
            f: std::sync::Arc::new(move |t| a(t).max(0.0)),
            from: 0.0,
            to: tau,
            breaks: breaks.iter().copied().filter(|&b| b > 0.0 && b < tau).collect(),
        };
        let minus = Profile::Function {
            f: std::sync::Arc::new(move |t| (-a2(t)).max(0.0)),
            from: tau,
            to: t_end,
            breaks: breaks.iter().copied().filter(|&b| b > tau && b < t_end).collect(),
        };
        Self::new(t_end, tau, plus, minus)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn plus_profile(&self) -> &Profile {
        &self.plus
    }

    pub fn minus_profile(&self) -> &Profile {
        &self.minus
    }

    pub fn a_plus(&self, t: f64, side: Side) -> f64 {
        let inside = match side {
            Side::Right => t < self.tau,
            Side::Left => t <= self.tau,
        };
        if inside && t >= 0.0 {
            self.plus.value(t, side)
        } else {
            0.0
        }
    }

    pub fn a_minus(&self, t: f64, side: Side) -> f64 {
        let inside = match side {
            Side::Right => t >= self.tau,
            Side::Left => t > self.tau,
        };
        if inside && t <= self.t_end {
            self.minus.value(t, side)
        } else {
            0.0
        }
    }

    /// `(∫₀ᵀ a⁺, ∫₀ᵀ a⁻)`.
    pub fn integrals(&self) -> (f64, f64) {
        (
            self.plus_integral(0.0, self.tau),
            self.minus_integral(self.tau, self.t_end),
        )
    }

    pub(crate) fn plus_integral(&self, a: f64, b: f64) -> f64 {
        self.plus.integral(a.max(0.0), b.min(self.tau))
    }

    pub(crate) fn minus_integral(&self, a: f64, b: f64) -> f64 {
        self.minus.integral(a.max(self.tau), b.min(self.t_end))
    }

    /// Fails unless both parts carry positive mass.
    pub fn check_sign_changing(&self) -> Result<()> {
        let (ap, am) = self.integrals();
        if !(ap > 0.0) {
            return Err(Error::DegenerateWeight("the positive part a+ has zero integral".into()));
        }
        if !(am > 0.0) {
            return Err(Error::DegenerateWeight("the negative part a- has zero integral".into()));
        }
        Ok(())
    }

    /// Sorted, deduplicated breakpoints in `(0, T)`, always containing `τ`
    /// when `0 < τ < T`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .plus
            .breakpoints()
            .into_iter()
            .filter(|&t| t > 0.0 && t < self.tau)
            .chain(
                self.minus
                    .breakpoints()
                    .into_iter()
                    .filter(|&t| t > self.tau && t < self.t_end),
            )
            .collect();
        if self.tau > 0.0 && self.tau < self.t_end {
            v.push(self.tau);
        }
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
        v
    }

    pub fn q_eval(&self, p: WeightParams, t: f64) -> Result<f64> {
        if !(0.0..=self.t_end).contains(&t) {
            return Err(Error::domain(format!("t = {t} outside [0, {}]", self.t_end)));
        }
        Ok(self.forcing(p.lambda, p.mu).value(t, Side::Right))
    }

    /// `μ₀(λ) = λ ∫a⁺ / ∫a⁻`: the `μ` at which `q_{λ,μ}` has zero mean.
    pub fn mu0(&self, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) {
            return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
        }
        let (ap, am) = self.integrals();
        if !(am > 0.0) {
            return Err(Error::DegenerateWeight("the negative part a- has zero integral".into()));
        }
        Ok(lambda * ap / am)
    }

    /// `∫₀ᵀ q_{λ,μ} = λ∫a⁺ − μ∫a⁻`.
    pub fn mean_integral(&self, p: WeightParams) -> f64 {
        let (ap, am) = self.integrals();
        p.lambda * ap - p.mu * am
    }

    /// The coefficient `λ a⁺ − μ a⁻` without positivity checks on the
    /// parameters (forward shooting only sees `λ`, backward only `μ`).
    pub fn forcing(&self, lambda: f64, mu: f64) -> Forcing<'_> {
        Forcing {
            weight: self,
            lambda,
            mu,
        }
    }

    /// Threshold above which forward shooting from the `x`-axis must break:
    /// the minimum over the `ε`-grid of `1 / (ε m_ε a_ε)` with
    /// `a_ε = ∫₀^{τ−ε} a⁺` and `m_ε = min g` over `[ε/τ, 1]`.
    pub fn lambda_star(&self, n: &Nonlinearity, eps_grid: &EpsGrid) -> Result<LambdaStar> {
        if !(self.tau > 0.0) {
            return Err(Error::domain("lambda* needs tau > 0"));
        }
        let eps = eps_grid.points(self.tau);
        if eps.is_empty() {
            return Err(Error::domain("empty epsilon grid"));
        }
        let mut best: Option<LambdaStar> = None;
        let mut any_positive_m = false;
        for e in eps {
            if !(e > 0.0 && e < self.tau) {
                return Err(Error::domain(format!("epsilon {e} outside (0, tau)")));
            }
            let a_eps = self.plus_integral(0.0, self.tau - e);
            if !(a_eps > 0.0) {
                return Err(Error::domain(format!("a_eps = 0 at epsilon = {e}")));
            }
            let lo = e / self.tau;
            let m_eps = nonlin::min_g_on(n, lo, 1.0);
            if !(m_eps > 0.0) {
                continue;
            }
            any_positive_m = true;
            let value = 1.0 / (e * m_eps * a_eps);
            if best.is_none_or(|b| value < b.lambda_star) {
                best = Some(LambdaStar {
                    lambda_star: value,
                    eps_opt: e,
                });
            }
        }
        match best {
            Some(b) if any_positive_m => Ok(b),
            _ => Err(Error::numeric("m_eps vanishes on the whole epsilon grid")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaStar {
    pub lambda_star: f64,
    pub eps_opt: f64,
}

/// Sampling of `ε ∈ (0, τ)`.
#[derive(Clone, Debug, PartialEq)]
pub enum EpsGrid {
    /// `count` log-spaced points in `[lo·τ, hi·τ]`.
    LogSpaced {
        count: usize,
        lo: f64,
        hi: f64,
    },
    Points(Vec<f64>),
}

impl Default for EpsGrid {
    fn default() -> Self {
        EpsGrid::LogSpaced {
            count: 200,
            lo: 1e-3,
            hi: 0.999,
        }
    }
}

impl EpsGrid {
    pub fn points(&self, tau: f64) -> Vec<f64> {
        match self {
            EpsGrid::LogSpaced { count, lo, hi } => {
                if *count == 0 {
                    return Vec::new();
                }
                nonlin::log_space(lo * tau, hi * tau, *count)
            }
            EpsGrid::Points(p) => p.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightParams {
    pub lambda: f64,
    pub mu: f64,
}

impl WeightParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda > 0.0 && mu > 0.0) || !lambda.is_finite() || !mu.is_finite() {
            return Err(Error::domain(format!(
                "lambda and mu must be positive, got ({lambda}, {mu})"
            )));
        }
        Ok(Self { lambda, mu })
    }
}

#[derive(Clone, Copy)]
pub struct Forcing<'a> {
    weight: &'a Weight,
    lambda: f64,
    mu: f64,
}

impl Coefficient for Forcing<'_> {
    fn value(&self, t: f64, side: Side) -> f64 {
        self.lambda * self.weight.a_plus(t, side) - self.mu * self.weight.a_minus(t, side)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.weight.breakpoints()
    }

    fn abs_bound(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let n = 64;
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .flat_map(|t| [self.value(t, Side::Left).abs(), self.value(t, Side::Right).abs()])
            .fold(0.0, f64::max)
    }
}

impl<F: Fn(f64) -> f64 + Send + Sync> Coefficient for (F, Vec<f64>) {
    fn value(&self, t: f64, _side: Side) -> f64 {
        (self.0)(t)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.1.clone()
    }
}
