//! Adaptive Dormand–Prince 5(4) integration of `u'' + q(t) g(u) = 0` and of
//! the planar system `x' = y, y' = h(x) y² + q(t)`, with positivity and
//! overflow events.
//!
//! Integration is always split at the coefficient's breakpoints, and on each
//! piece the coefficient is read with the one-sided limit belonging to that
//! piece, so no step straddles a jump.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlin::{ChangeOfVariables, Nonlinearity};
use crate::weight::{Coefficient, Side, Weight, WeightParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OriginalState {
    pub t: f64,
    pub u: f64,
    pub up: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlanarState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Frame {
    Original,
    Planar,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Termination {
    Reached(f64),
    PositivityLost(f64),
    Overflow(f64),
}

impl Termination {
    pub fn time(&self) -> f64 {
        match *self {
            Termination::Reached(t) | Termination::PositivityLost(t) | Termination::Overflow(t) => t,
        }
    }

    pub fn reached(&self) -> bool {
        matches!(self, Termination::Reached(_))
    }
}

/// Which states to keep.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Sampling {
    /// Every accepted step.
    #[default]
    Steps,
    /// Exactly the given times (the integrator stops on each of them), plus
    /// the start and the final state.
    Times(Vec<f64>),
    /// Start and final state only.
    EndOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IvpOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Positivity is lost once `u ≤ u_floor` (original frame).
    pub u_floor: f64,
    /// Overflow once a component exceeds this magnitude.
    pub cap: f64,
    pub max_steps: usize,
    pub sampling: Sampling,
}

impl Default for IvpOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            u_floor: 1e-8,
            cap: 1e8,
            max_steps: 2_000_000,
            sampling: Sampling::Steps,
        }
    }
}

impl IvpOptions {
    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub frame: Frame,
    pub times: Vec<f64>,
    /// `(u, u')` or `(x, y)` depending on `frame`.
    pub values: Vec<[f64; 2]>,
    pub termination: Termination,
    pub steps: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("trajectory has a start sample")
    }

    pub fn last_value(&self) -> [f64; 2] {
        *self.values.last().expect("trajectory has a start sample")
    }

    pub fn original_states(&self) -> Vec<OriginalState> {
        self.times
            .iter()
            .zip(&self.values)
            .map(|(&t, v)| OriginalState { t, u: v[0], up: v[1] })
            .collect()
    }

    pub fn planar_states(&self) -> Vec<PlanarState> {
        self.times
            .iter()
            .zip(&self.values)
            .map(|(&t, v)| PlanarState { t, x: v[0], y: v[1] })
            .collect()
    }

    /// Final state in the original frame.
    pub fn last_original(&self) -> OriginalState {
        let v = self.last_value();
        OriginalState {
            t: self.last_time(),
            u: v[0],
            up: v[1],
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

type State = [f64; 2];

/// One Dormand–Prince step: (5th-order solution, error estimate).
fn dp_step<F: Fn(f64, &State) -> State>(f: &F, t: f64, y: &State, h: f64) -> (State, State) {
    let mut k = [[0.0; 2]; 7];
    k[0] = f(t, y);
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                ys[0] += h * a * kj[0];
                ys[1] += h * a * kj[1];
            }
        }
        k[s] = f(t + C[s] * h, &ys);
    }
    let mut y5 = *y;
    let mut err = [0.0; 2];
    for s in 0..7 {
        for i in 0..2 {
            y5[i] += h * B5[s] * k[s][i];
            err[i] += h * (B5[s] - B4[s]) * k[s][i];
        }
    }
    (y5, err)
}

/// What stops an integration early. `margin(y) > 0` while the run is alive.
struct Event<'a> {
    margin: &'a dyn Fn(&State) -> f64,
    kind: fn(f64) -> Termination,
}

struct Engine<'a> {
    rtol: f64,
    atol: [f64; 2],
    max_steps: usize,
    events: Vec<Event<'a>>,
}

struct RawRun {
    times: Vec<f64>,
    values: Vec<State>,
    termination: Termination,
    steps: usize,
}

impl Engine<'_> {
    fn error_norm(&self, y0: &State, y1: &State, err: &State) -> f64 {
        let mut s = 0.0;
        for i in 0..2 {
            let sc = self.atol[i] + self.rtol * y0[i].abs().max(y1[i].abs());
            let e = err[i] / sc;
            s += e * e;
        }
        (s / 2.0).sqrt()
    }

    fn first_event(&self, y: &State) -> Option<usize> {
        self.events.iter().position(|e| !((e.margin)(y) > 0.0))
    }

    /// Integrates from `t0` to `t1` (either direction) stopping exactly on
    /// every point of `stops`. `rhs(t, y, lo, hi)` receives the current piece
    /// `[lo, hi]` so that it can take the right one-sided limits.
    fn run<F>(&self, rhs: F, t0: f64, y0: State, t1: f64, breaks: &[f64], sampling: &Sampling) -> Result<RawRun>
    where
        F: Fn(f64, &State, f64, f64) -> State,
    {
        let dir = if t1 >= t0 { 1.0 } else { -1.0 };
        let inside = |t: f64| (t - t0) * dir > 0.0 && (t1 - t) * dir > 0.0;
        let mut pieces: Vec<f64> = breaks.iter().copied().filter(|&t| inside(t)).collect();
        pieces.push(t1);
        pieces.sort_by(|a, b| (a * dir).total_cmp(&(b * dir)));
        pieces.dedup();

        let mut samples: Vec<f64> = match sampling {
            Sampling::Times(ts) => ts.iter().copied().filter(|&t| inside(t)).collect(),
            _ => Vec::new(),
        };
        samples.sort_by(|a, b| (a * dir).total_cmp(&(b * dir)));
        samples.dedup();

        let keep_steps = matches!(sampling, Sampling::Steps);
        let mut times = vec![t0];
        let mut values = vec![y0];
        let mut t = t0;
        let mut y = y0;
        let mut steps = 0usize;
        let span = (t1 - t0).abs();
        let mut h = if span > 0.0 { 0.01 * span } else { 0.0 };

        if let Some(i) = self.first_event(&y) {
            return Ok(RawRun {
                times,
                values,
                termination: (self.events[i].kind)(t0),
                steps,
            });
        }

        let mut sample_idx = 0;
        let mut piece_start = t0;
        for &piece_end in &pieces {
            let (lo, hi) = if dir > 0.0 {
                (piece_start, piece_end)
            } else {
                (piece_end, piece_start)
            };
            let f = |tt: f64, yy: &State| rhs(tt, yy, lo, hi);
            while (piece_end - t) * dir > 0.0 {
                steps += 1;
                if steps > self.max_steps {
                    return Err(Error::numeric(format!("step budget exhausted at t = {t}")));
                }
                // next hard stop: end of piece or next requested sample
                while sample_idx < samples.len() && (samples[sample_idx] - t) * dir <= 0.0 {
                    sample_idx += 1;
                }
                let mut stop = piece_end;
                if sample_idx < samples.len() && (samples[sample_idx] - piece_end) * dir < 0.0 {
                    stop = samples[sample_idx];
                }
                let remaining = (stop - t).abs();
                let mut hstep = h.min(remaining);
                let lands = hstep >= remaining * (1.0 - 1e-12);
                if lands {
                    hstep = remaining;
                }
                let min_h = 1e-14 * t.abs().max(1.0);
                if hstep < min_h && !lands {
                    return Err(Error::numeric(format!("step size underflow at t = {t}")));
                }
                let (y_new, err) = dp_step(&f, t, &y, dir * hstep);
                let finite = y_new.iter().all(|v| v.is_finite()) && err.iter().all(|v| v.is_finite());
                let en = if finite {
                    self.error_norm(&y, &y_new, &err)
                } else {
                    f64::INFINITY
                };
                if en > 1.0 {
                    let fac = if en.is_finite() {
                        (0.9 * en.powf(-0.2)).max(0.2)
                    } else {
                        0.25
                    };
                    h = hstep * fac;
                    if h < min_h {
                        return Err(Error::numeric(format!("step size underflow at t = {t}")));
                    }
                    continue;
                }
                let t_new = if lands { stop } else { t + dir * hstep };
                if let Some(ev) = self.first_event(&y_new) {
                    let (te, ye) = self.locate(&f, t, &y, dir * hstep, ev);
                    times.push(te);
                    values.push(ye);
                    return Ok(RawRun {
                        times,
                        values,
                        termination: (self.events[ev].kind)(te),
                        steps,
                    });
                }
                t = t_new;
                y = y_new;
                let is_sample = sample_idx < samples.len() && t == samples[sample_idx];
                if keep_steps || is_sample {
                    times.push(t);
                    values.push(y);
                }
                let grow = if en > 0.0 {
                    (0.9 * en.powf(-0.2)).min(10.0)
                } else {
                    10.0
                };
                let h_next = hstep * grow;
                // landing on a stop often truncates a step; do not let that shrink h
                h = if lands { h.max(h_next) } else { h_next };
            }
            piece_start = piece_end;
        }
        if *times.last().unwrap() != t {
            times.push(t);
            values.push(y);
        }
        Ok(RawRun {
            times,
            values,
            termination: Termination::Reached(t),
            steps,
        })
    }

    /// Bisects the accepted step `(t, y) → t + h` for the first point where
    /// event `ev` fires. Returns the time and state just past the event.
    fn locate<F: Fn(f64, &State) -> State>(&self, f: &F, t: f64, y: &State, h: f64, ev: usize) -> (f64, State) {
        let margin = self.events[ev].margin;
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        let mut y_hi = dp_step(f, t, y, h).0;
        while (hi - lo) * h.abs() > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            let ym = dp_step(f, t, y, mid * h).0;
            if margin(&ym) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
                y_hi = ym;
            }
        }
        (t + hi * h, y_hi)
    }
}

/// Reads `q` on the piece `[lo, hi]`: one-sided limits at the piece ends.
fn q_on_piece<Q: Coefficient + ?Sized>(q: &Q, t: f64, lo: f64, hi: f64) -> f64 {
    if t <= lo {
        q.value(lo, Side::Right)
    } else if t >= hi {
        q.value(hi, Side::Left)
    } else {
        q.value(t, Side::Right)
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain(format!("non-finite initial data {v:?}")))
    }
}

/// Integrates the original equation with weight `q_{λ,μ}` from `s0` to
/// `t_target`.
pub fn integrate_original(
    n: &Nonlinearity,
    w: &Weight,
    p: WeightParams,
    s0: OriginalState,
    t_target: f64,
    opts: &IvpOptions,
) -> Result<Trajectory> {
    if !(0.0..=w.t_end()).contains(&t_target) || !(0.0..=w.t_end()).contains(&s0.t) {
        return Err(Error::domain(format!("times must lie in [0, {}]", w.t_end())));
    }
    integrate_original_with(n, &w.forcing(p.lambda, p.mu), s0, t_target, opts)
}

/// Integrates `u'' = −q(t) g(u)` for an arbitrary coefficient.
///
/// Absolute tolerances are scaled to the initial data (`|u₀|` for `u`,
/// `max(|u'₀|, g(u₀))` for `u'`), which keeps the error control meaningful
/// for initial values spanning many decades.
pub fn integrate_original_with<Q: Coefficient + ?Sized>(
    n: &Nonlinearity,
    q: &Q,
    s0: OriginalState,
    t_target: f64,
    opts: &IvpOptions,
) -> Result<Trajectory> {
    check_finite(&[s0.t, s0.u, s0.up, t_target])?;
    if !(s0.u > 0.0) {
        return Err(Error::domain(format!("initial u must be positive, got {}", s0.u)));
    }
    let su = s0.u.abs();
    let sup = s0.up.abs().max(n.g_raw(s0.u)).max(f64::MIN_POSITIVE);
    let floor = opts.u_floor;
    let cap = opts.cap;
    let pos = move |y: &State| y[0] - floor;
    let over = move |y: &State| cap - y[0].abs().max(y[1].abs());
    let engine = Engine {
        rtol: opts.rtol,
        atol: [opts.atol * su, opts.atol * sup],
        max_steps: opts.max_steps,
        events: vec![
            Event {
                margin: &pos,
                kind: Termination::PositivityLost,
            },
            Event {
                margin: &over,
                kind: Termination::Overflow,
            },
        ],
    };
    let rhs = |t: f64, y: &State, lo: f64, hi: f64| [y[1], -q_on_piece(q, t, lo, hi) * n.g_odd(y[0])];
    let raw = engine.run(rhs, s0.t, [s0.u, s0.up], t_target, &q.breakpoints(), &opts.sampling)?;
    Ok(Trajectory {
        frame: Frame::Original,
        times: raw.times,
        values: raw.values,
        termination: raw.termination,
        steps: raw.steps,
    })
}

/// Integrates the planar system with weight `q_{λ,μ}`.
pub fn integrate_planar(
    c: &ChangeOfVariables,
    w: &Weight,
    p: WeightParams,
    s0: PlanarState,
    t_target: f64,
    opts: &IvpOptions,
) -> Result<Trajectory> {
    if !(0.0..=w.t_end()).contains(&t_target) || !(0.0..=w.t_end()).contains(&s0.t) {
        return Err(Error::domain(format!("times must lie in [0, {}]", w.t_end())));
    }
    integrate_planar_with(c, &w.forcing(p.lambda, p.mu), s0, t_target, opts)
}

/// Integrates `x' = y, y' = h(x) y² + q(t)`. Stops with `Overflow` once
/// `|x|` or `|y|` exceeds the cap, or once `x` leaves the range where
/// `W⁻¹` can be evaluated.
pub fn integrate_planar_with<Q: Coefficient + ?Sized>(
    c: &ChangeOfVariables,
    q: &Q,
    s0: PlanarState,
    t_target: f64,
    opts: &IvpOptions,
) -> Result<Trajectory> {
    check_finite(&[s0.t, s0.x, s0.y, t_target])?;
    let cap = opts.cap;
    let over = move |y: &State| {
        if y[0].is_finite() && y[1].is_finite() {
            cap - y[0].abs().max(y[1].abs())
        } else {
            -1.0
        }
    };
    let engine = Engine {
        rtol: opts.rtol,
        atol: [opts.atol * s0.x.abs().max(1.0), opts.atol * s0.y.abs().max(1.0)],
        max_steps: opts.max_steps,
        events: vec![Event {
            margin: &over,
            kind: Termination::Overflow,
        }],
    };
    let rhs = |t: f64, y: &State, lo: f64, hi: f64| {
        let h = c.h_unbounded(y[0]).unwrap_or(f64::NAN);
        [y[1], h * y[1] * y[1] + q_on_piece(q, t, lo, hi)]
    };
    let raw = engine.run(rhs, s0.t, [s0.x, s0.y], t_target, &q.breakpoints(), &opts.sampling)?;
    Ok(Trajectory {
        frame: Frame::Planar,
        times: raw.times,
        values: raw.values,
        termination: raw.termination,
        steps: raw.steps,
    })
}

/// `(u, u') ↦ (W(u), −u'/g(u))`.
pub fn transform_state(c: &ChangeOfVariables, s: OriginalState) -> Result<PlanarState> {
    if !(s.u > 0.0) {
        return Err(Error::domain(format!("u must be positive, got {}", s.u)));
    }
    let g = c.nonlinearity().eval_g(s.u)?;
    Ok(PlanarState {
        t: s.t,
        x: c.eval_w(s.u)?,
        y: -s.up / g,
    })
}

/// `(x, y) ↦ (W⁻¹(x), −y g(W⁻¹(x)))`.
pub fn inverse_transform_state(c: &ChangeOfVariables, s: PlanarState) -> Result<OriginalState> {
    let u = c.invert_w(s.x)?;
    let g = c.nonlinearity().eval_g(u)?;
    Ok(OriginalState {
        t: s.t,
        u,
        up: -s.y * g,
    })
}
