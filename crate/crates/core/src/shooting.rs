//! Shooting curves `Γ⁺_λ` (from `t = 0` to `τ`) and `Γ⁻_μ` (from `t = T`
//! back to `τ`), their blow-up gap, their intersections, and the Neumann
//! solutions those intersections stand for. A brute-force shooting over the
//! whole interval serves as an independent oracle.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ivp::{self, IvpOptions, OriginalState, PlanarState, Sampling, Termination};
use crate::nonlin::{self, ChangeOfVariables, Nonlinearity, SamplingSpec};
use crate::report;
use crate::weight::{Weight, WeightParams};

/// Numerical knobs shared by every shooting operation.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub ivp: IvpOptions,
    /// Number of log-spaced initial values per shooting curve.
    pub shoot_nodes: usize,
    /// Range of initial values `u₀` covered by the curves.
    pub u0_min: f64,
    pub u0_max: f64,
    /// Mismatch tolerance for refined intersections, relative to
    /// `max(1, |x|, |y|)`.
    pub refine: f64,
    /// Distinctness threshold (sup-norm) for solutions.
    pub dedup: f64,
    /// Bisection tolerance on the blow-up edges, relative to `max(1, |x₀|)`.
    pub edge_tol: f64,
    /// Extra curve nodes placed geometrically towards each blow-up edge.
    pub edge_nodes: usize,
    /// Target number of intervals of the solution profile grid.
    pub profile_intervals: usize,
    pub oracle_nodes: usize,
    /// Worker count; `None` uses `NBVP_THREADS` or the rayon default.
    pub threads: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            ivp: IvpOptions::default().with_sampling(Sampling::EndOnly),
            shoot_nodes: 512,
            u0_min: 1e-6,
            u0_max: 1e6,
            refine: 1e-9,
            dedup: 1e-6,
            edge_tol: 1e-10,
            edge_nodes: 30,
            profile_intervals: 4000,
            oracle_nodes: 2048,
            threads: None,
        }
    }
}

impl Settings {
    fn validate(&self) -> Result<()> {
        let ok = self.shoot_nodes >= 2
            && self.u0_min > 0.0
            && self.u0_max > self.u0_min
            && self.refine > 0.0
            && self.dedup > 0.0
            && self.edge_tol > 0.0
            && self.profile_intervals >= 64
            && self.oracle_nodes >= 2
            && self.ivp.rtol > 0.0
            && self.ivp.atol > 0.0
            && self.ivp.u_floor > 0.0
            && self.ivp.cap > 0.0
            && self.threads != Some(0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid solver settings: {self:?}")))
        }
    }

    /// Tighter tolerances used where single trajectories are refined.
    fn fine_ivp(&self) -> IvpOptions {
        let mut o = self.ivp.clone();
        o.rtol *= 1e-2;
        o.atol *= 1e-2;
        o.sampling = Sampling::EndOnly;
        o
    }
}

/// The solver environment: nonlinearity with its change of variables, the
/// weight, and the numerical settings.
#[derive(Clone)]
pub struct Problem {
    cov: Arc<ChangeOfVariables>,
    weight: Arc<Weight>,
    settings: Settings,
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("nonlinearity", self.cov.nonlinearity())
            .field("weight", &self.weight)
            .field("settings", &self.settings)
            .finish()
    }
}

/// Reads `NBVP_THREADS`; unset or empty means "no cap".
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("NBVP_THREADS") {
        Ok(s) if !s.trim().is_empty() => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "NBVP_THREADS must be a positive integer, got {s:?}"
            ))),
        },
        _ => Ok(None),
    }
}

impl Problem {
    /// Validates the hypotheses on `g` and the sign change of the weight.
    pub fn new(n: Nonlinearity, w: Weight, settings: Settings) -> Result<Self> {
        settings.validate()?;
        w.check_sign_changing()?;
        let report = n.validate_hypotheses(&SamplingSpec::default());
        if !report.all_passed() {
            let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
            return Err(Error::domain(format!("nonlinearity violates: {}", failed.join(", "))));
        }
        let cov = ChangeOfVariables::new(n)?;
        let threads = match settings.threads {
            Some(t) => Some(t),
            None => threads_from_env()?,
        };
        let pool = match threads {
            Some(t) => Some(Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?,
            )),
            None => None,
        };
        Ok(Self {
            cov: Arc::new(cov),
            weight: Arc::new(w),
            settings,
            pool,
        })
    }

    /// `g(u) = u²/(1+u³)` with the unit two-step weight on `[0, 2]`, `τ = 1`.
    pub fn reference() -> Self {
        Self::new(Nonlinearity::reference(), Weight::reference(), Settings::default()).expect("reference problem")
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        self.cov.nonlinearity()
    }

    pub fn change_of_variables(&self) -> &ChangeOfVariables {
        &self.cov
    }

    pub fn weight(&self) -> &Weight {
        &self.weight
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    /// Runs `f` inside this problem's worker pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    /// Order-preserving parallel map.
    pub(crate) fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        self.install(|| items.par_iter().map(&f).collect())
    }

    /// Initial values of the default curve grid, increasing in `x₀`
    /// (that is, decreasing in `u₀`).
    pub fn default_u0_grid(&self) -> Vec<f64> {
        let mut u = nonlin::log_space(self.settings.u0_min, self.settings.u0_max, self.settings.shoot_nodes);
        u.reverse();
        u
    }

    /// `x₀ = W(u₀)` over the default grid, increasing.
    pub fn default_x0_grid(&self) -> Result<Vec<f64>> {
        self.default_u0_grid().iter().map(|&u| self.cov.eval_w(u)).collect()
    }

    fn to_planar(&self, t: f64, u: f64, up: f64) -> Result<PlanarState> {
        ivp::transform_state(&self.cov, OriginalState { t, u, up })
    }

    /// `(u(τ), u'(τ))` of the forward shot from `(u₀, 0)`, or `None` when
    /// positivity is lost first.
    fn forward_end(&self, lambda: f64, u0: f64, opts: &IvpOptions) -> Result<Option<OriginalState>> {
        let q = self.weight.forcing(lambda, 0.0);
        let tr = ivp::integrate_original_with(
            self.nonlinearity(),
            &q,
            OriginalState { t: 0.0, u: u0, up: 0.0 },
            self.weight.tau(),
            opts,
        )?;
        Ok(match tr.termination {
            Termination::Reached(_) => Some(tr.last_original()),
            _ => None,
        })
    }

    fn backward_end(&self, mu: f64, v0: f64, opts: &IvpOptions) -> Result<OriginalState> {
        let q = self.weight.forcing(0.0, mu);
        let tr = ivp::integrate_original_with(
            self.nonlinearity(),
            &q,
            OriginalState {
                t: self.weight.t_end(),
                u: v0,
                up: 0.0,
            },
            self.weight.tau(),
            opts,
        )?;
        match tr.termination {
            Termination::Reached(_) => Ok(tr.last_original()),
            other => Err(Error::numeric(format!(
                "backward shot from u(T) = {v0} stopped early ({other:?}); tolerances are misconfigured"
            ))),
        }
    }

    /// `(u(T), u'(T))` of the shot over the whole interval, or `None` when
    /// positivity is lost.
    fn full_end(&self, p: WeightParams, u0: f64, opts: &IvpOptions) -> Result<Option<OriginalState>> {
        let q = self.weight.forcing(p.lambda, p.mu);
        let tr = ivp::integrate_original_with(
            self.nonlinearity(),
            &q,
            OriginalState { t: 0.0, u: u0, up: 0.0 },
            self.weight.t_end(),
            opts,
        )?;
        Ok(match tr.termination {
            Termination::Reached(_) => Some(tr.last_original()),
            _ => None,
        })
    }

    /// The normalised Neumann defect `y(T) = −u'(T)/g(u(T))` of the full shot.
    fn full_defect(&self, p: WeightParams, u0: f64, opts: &IvpOptions) -> Result<Option<f64>> {
        Ok(self
            .full_end(p, u0, opts)?
            .map(|s| -s.up / self.nonlinearity().g_raw(s.u)))
    }

    /// Planar forward endpoint as a function of `s = ln u₀`.
    fn forward_point(&self, lambda: f64, s: f64, opts: &IvpOptions) -> Option<PlanarState> {
        let end = self.forward_end(lambda, s.exp(), opts).ok()??;
        self.to_planar(end.t, end.u, end.up).ok()
    }

    fn backward_point(&self, mu: f64, s: f64, opts: &IvpOptions) -> Option<PlanarState> {
        let end = self.backward_end(mu, s.exp(), opts).ok()?;
        self.to_planar(end.t, end.u, end.up).ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Direction {
    Forward { lambda: f64 },
    Backward { mu: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NodeStatus {
    Ok,
    BlownUp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurveNode {
    pub x0: f64,
    pub u0: f64,
    /// Planar state at `t = τ`; NaN components for blown-up nodes.
    pub end: PlanarState,
    pub status: NodeStatus,
    /// Set when the integration itself failed rather than losing positivity.
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShootingCurve {
    pub direction: Direction,
    pub nodes: Vec<CurveNode>,
    /// `(x_*, x^*)`: outermost initial values known to blow up.
    pub gap: Option<(f64, f64)>,
}

impl ShootingCurve {
    /// Maximal runs of consecutive `Ok` nodes.
    pub fn branches(&self) -> Vec<&[CurveNode]> {
        self.nodes
            .split(|n| n.status != NodeStatus::Ok)
            .filter(|b| !b.is_empty())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BracketSpec {
    pub u_min: f64,
    pub u_max: f64,
    pub nodes: usize,
}

impl BracketSpec {
    pub fn from_settings(s: &Settings) -> Self {
        Self {
            u_min: s.u0_min,
            u_max: s.u0_max,
            nodes: s.shoot_nodes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Intersection {
    pub x0_fwd: f64,
    pub x0_bwd: f64,
    pub u0_fwd: f64,
    pub u0_bwd: f64,
    pub point: PlanarState,
    /// Final mismatch norm `|ζ_fwd − ζ_bwd|`.
    pub mismatch: f64,
    pub refined: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub ode_residual: f64,
    pub bc_residual: f64,
    pub med_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolutionProfile {
    pub lambda: f64,
    pub mu: f64,
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub up: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl SolutionProfile {
    pub fn u0(&self) -> f64 {
        self.u[0]
    }

    pub fn sup_distance(&self, other: &SolutionProfile) -> f64 {
        if self.grid == other.grid {
            return self
                .u
                .iter()
                .zip(&other.u)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        }
        self.grid
            .iter()
            .zip(&self.u)
            .map(|(&t, &u)| (u - other.interpolate(t)).abs())
            .fold(0.0, f64::max)
    }

    /// Piecewise-linear value of `u` at `t`.
    pub fn interpolate(&self, t: f64) -> f64 {
        let i = self.grid.partition_point(|&g| g <= t);
        if i == 0 {
            return self.u[0];
        }
        if i >= self.grid.len() {
            return *self.u.last().unwrap();
        }
        let (t0, t1) = (self.grid[i - 1], self.grid[i]);
        let (u0, u1) = (self.u[i - 1], self.u[i]);
        if t1 == t0 {
            u1
        } else {
            u0 + (u1 - u0) * (t - t0) / (t1 - t0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleResult {
    pub count: usize,
    pub u0_roots: Vec<f64>,
    pub solutions: Vec<SolutionProfile>,
}

/// `(grid, u, u')` of a sampled solution.
type Sampled = (Vec<f64>, Vec<f64>, Vec<f64>);

/// Blow-up gap and the last `Ok` initial values on either side.
type GapEdges = ((f64, f64), [Option<f64>; 2]);

/// Sorted ascending, strictly increasing check.
fn check_grid(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::domain("empty shooting grid"));
    }
    if x.iter().any(|v| !v.is_finite()) || x.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("shooting grid must be finite and strictly increasing"));
    }
    Ok(())
}

fn nan_state(t: f64) -> PlanarState {
    PlanarState {
        t,
        x: f64::NAN,
        y: f64::NAN,
    }
}

/// `Ok` when the blown-up nodes form one contiguous run.
fn contiguous_blowup(statuses: &[NodeStatus]) -> Result<Option<(usize, usize)>> {
    let first = statuses.iter().position(|s| *s == NodeStatus::BlownUp);
    let last = statuses.iter().rposition(|s| *s == NodeStatus::BlownUp);
    match (first, last) {
        (Some(a), Some(b)) => {
            if statuses[a..=b].contains(&NodeStatus::Ok) {
                return Err(Error::Structural(
                    "forward blow-up set is not an interval; the shot is neither globally defined nor singly gapped"
                        .into(),
                ));
            }
            Ok(Some((a, b)))
        }
        _ => Ok(None),
    }
}

impl Problem {
    fn forward_node(&self, lambda: f64, x0: f64, u0: Option<f64>) -> CurveNode {
        let tau = self.weight.tau();
        let u0 = match u0 {
            Some(u) => u,
            None => match self.cov.invert_w(x0) {
                Ok(u) => u,
                Err(_) => {
                    return CurveNode {
                        x0,
                        u0: f64::NAN,
                        end: nan_state(tau),
                        status: NodeStatus::BlownUp,
                        failed: true,
                    }
                }
            },
        };
        match self.forward_end(lambda, u0, &self.settings.ivp) {
            Ok(Some(end)) => match self.to_planar(end.t, end.u, end.up) {
                Ok(p) => CurveNode {
                    x0,
                    u0,
                    end: p,
                    status: NodeStatus::Ok,
                    failed: false,
                },
                Err(_) => CurveNode {
                    x0,
                    u0,
                    end: nan_state(tau),
                    status: NodeStatus::BlownUp,
                    failed: true,
                },
            },
            Ok(None) => CurveNode {
                x0,
                u0,
                end: nan_state(tau),
                status: NodeStatus::BlownUp,
                failed: false,
            },
            Err(_) => CurveNode {
                x0,
                u0,
                end: nan_state(tau),
                status: NodeStatus::BlownUp,
                failed: true,
            },
        }
    }

    fn forward_blows_up(&self, lambda: f64, x0: f64) -> bool {
        self.forward_node(lambda, x0, None).status == NodeStatus::BlownUp
    }

    /// Bisects between an `Ok` initial value and a blown-up one. Returns
    /// `(last ok, first blown)`.
    fn bisect_edge(&self, lambda: f64, x_ok: f64, x_blown: f64) -> (f64, f64) {
        let (mut ok, mut bl) = (x_ok, x_blown);
        for _ in 0..200 {
            if (ok - bl).abs() <= self.settings.edge_tol * ok.abs().max(bl.abs()).max(1.0) {
                break;
            }
            let mid = 0.5 * (ok + bl);
            if mid == ok || mid == bl {
                break;
            }
            if self.forward_blows_up(lambda, mid) {
                bl = mid;
            } else {
                ok = mid;
            }
        }
        (ok, bl)
    }

    /// Resolves the blow-up edges from a scanned grid. Returns
    /// `(gap, ok-side edge points)`.
    fn edges_from_scan(&self, lambda: f64, x0: &[f64], statuses: &[NodeStatus]) -> Result<Option<GapEdges>> {
        let Some((a, b)) = contiguous_blowup(statuses)? else {
            return Ok(None);
        };
        let (lo, lo_ok) = if a > 0 {
            let (ok, bl) = self.bisect_edge(lambda, x0[a - 1], x0[a]);
            (bl, Some(ok))
        } else {
            (x0[a], None)
        };
        let (hi, hi_ok) = if b + 1 < x0.len() {
            let (ok, bl) = self.bisect_edge(lambda, x0[b + 1], x0[b]);
            (bl, Some(ok))
        } else {
            (x0[b], None)
        };
        Ok(Some(((lo, hi), [lo_ok, hi_ok])))
    }

    /// Forward curve `Γ⁺_λ`: for each `x₀`, the `τ`-endpoint of the solution
    /// of `u'' + λa⁺ g(u) = 0` from `(W⁻¹(x₀), 0)`. When some nodes blow up,
    /// the gap edges are bisected and the curve is densified geometrically
    /// towards each edge, where the endpoints escape to infinity.
    pub fn forward_curve(&self, lambda: f64, x0_grid: &[f64]) -> Result<ShootingCurve> {
        check_grid(x0_grid)?;
        if !(lambda > 0.0) {
            return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
        }
        self.forward_curve_inner(lambda, x0_grid, None)
    }

    fn forward_curve_inner(&self, lambda: f64, x0_grid: &[f64], u0_grid: Option<&[f64]>) -> Result<ShootingCurve> {
        let idx: Vec<usize> = (0..x0_grid.len()).collect();
        let mut nodes = self.par_map(&idx, |&i| self.forward_node(lambda, x0_grid[i], u0_grid.map(|u| u[i])));
        let statuses: Vec<NodeStatus> = nodes.iter().map(|n| n.status).collect();
        let Some(((lo, hi), ok_edges)) = self.edges_from_scan(lambda, x0_grid, &statuses)? else {
            return Ok(ShootingCurve {
                direction: Direction::Forward { lambda },
                nodes,
                gap: None,
            });
        };
        let mut extra: Vec<f64> = Vec::new();
        let first_blown = statuses.iter().position(|s| *s == NodeStatus::BlownUp).unwrap();
        let last_blown = statuses.iter().rposition(|s| *s == NodeStatus::BlownUp).unwrap();
        let k = self.settings.edge_nodes;
        if let Some(edge_ok) = ok_edges[0] {
            let outer = x0_grid[first_blown - 1];
            extra.extend(towards_edge(outer, edge_ok, k));
            extra.push(edge_ok);
        }
        if let Some(edge_ok) = ok_edges[1] {
            let outer = x0_grid[last_blown + 1];
            extra.extend(towards_edge(outer, edge_ok, k));
            extra.push(edge_ok);
        }
        extra.retain(|x| !x0_grid.contains(x));
        let extra_nodes = self.par_map(&extra, |&x| self.forward_node(lambda, x, None));
        nodes.extend(extra_nodes);
        nodes.sort_by(|a, b| a.x0.total_cmp(&b.x0));
        nodes.dedup_by(|a, b| a.x0 == b.x0);
        // edge nodes must agree with the bisected gap
        for n in nodes.iter_mut() {
            let inside = n.x0 >= lo && n.x0 <= hi;
            if inside != (n.status == NodeStatus::BlownUp) {
                if inside {
                    return Err(Error::Structural(format!(
                        "node x0 = {} inside the blow-up gap [{lo}, {hi}] survives",
                        n.x0
                    )));
                }
                return Err(Error::Structural(format!(
                    "node x0 = {} outside the blow-up gap [{lo}, {hi}] blows up",
                    n.x0
                )));
            }
        }
        Ok(ShootingCurve {
            direction: Direction::Forward { lambda },
            nodes,
            gap: Some((lo, hi)),
        })
    }

    /// Backward curve `Γ⁻_μ`: `τ`-endpoints of the solutions of
    /// `u'' − μa⁻ g(u) = 0` started at `t = T` from `(W⁻¹(x₀), 0)`.
    pub fn backward_curve(&self, mu: f64, x0_grid: &[f64]) -> Result<ShootingCurve> {
        check_grid(x0_grid)?;
        if !(mu > 0.0) {
            return Err(Error::domain(format!("mu must be positive, got {mu}")));
        }
        self.backward_curve_inner(mu, x0_grid, None)
    }

    fn backward_curve_inner(&self, mu: f64, x0_grid: &[f64], u0_grid: Option<&[f64]>) -> Result<ShootingCurve> {
        let idx: Vec<usize> = (0..x0_grid.len()).collect();
        let nodes: Vec<Result<CurveNode>> = self.par_map(&idx, |&i| {
            let x0 = x0_grid[i];
            let v0 = match u0_grid {
                Some(u) => u[i],
                None => self.cov.invert_w(x0)?,
            };
            let end = self.backward_end(mu, v0, &self.settings.ivp)?;
            let p = self.to_planar(end.t, end.u, end.up)?;
            Ok(CurveNode {
                x0,
                u0: v0,
                end: p,
                status: NodeStatus::Ok,
                failed: false,
            })
        });
        Ok(ShootingCurve {
            direction: Direction::Backward { mu },
            nodes: nodes.into_iter().collect::<Result<_>>()?,
            gap: None,
        })
    }

    /// Both curves on the default grid.
    pub fn default_curves(&self, lambda: f64, mu: f64) -> Result<(ShootingCurve, ShootingCurve)> {
        Ok((self.default_forward_curve(lambda)?, self.default_backward_curve(mu)?))
    }

    pub fn default_forward_curve(&self, lambda: f64) -> Result<ShootingCurve> {
        if !(lambda > 0.0) {
            return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
        }
        let u0 = self.default_u0_grid();
        let x0 = self.default_x0_grid()?;
        self.forward_curve_inner(lambda, &x0, Some(&u0))
    }

    pub fn default_backward_curve(&self, mu: f64) -> Result<ShootingCurve> {
        if !(mu > 0.0) {
            return Err(Error::domain(format!("mu must be positive, got {mu}")));
        }
        let u0 = self.default_u0_grid();
        let x0 = self.default_x0_grid()?;
        self.backward_curve_inner(mu, &x0, Some(&u0))
    }

    /// Scans `search.nodes` log-spaced `u₀` values; returns the blown-up
    /// interval `[x_*, x^*]` with both edges bisected, or `None` when every
    /// forward shot reaches `τ`.
    pub fn blowup_interval(&self, lambda: f64, search: BracketSpec) -> Result<Option<(f64, f64)>> {
        if !(lambda > 0.0) {
            return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
        }
        if !(search.u_min > 0.0 && search.u_max > search.u_min && search.nodes >= 2) {
            return Err(Error::domain(format!("invalid bracket {search:?}")));
        }
        let mut u = nonlin::log_space(search.u_min, search.u_max, search.nodes);
        u.reverse();
        let x0: Vec<f64> = u.iter().map(|&v| self.cov.eval_w(v)).collect::<Result<_>>()?;
        let idx: Vec<usize> = (0..u.len()).collect();
        let statuses = self.par_map(&idx, |&i| self.forward_node(lambda, x0[i], Some(u[i])).status);
        Ok(self.edges_from_scan(lambda, &x0, &statuses)?.map(|(gap, _)| gap))
    }
}

/// `k` points between `outer` and `edge`, geometrically accumulating at
/// `edge` down to a relative offset of about `1e-9`.
fn towards_edge(outer: f64, edge: f64, k: usize) -> Vec<f64> {
    let d = (outer - edge).abs();
    let dmin = 1e-9 * edge.abs().max(1.0);
    if k == 0 || !(d > dmin) {
        return Vec::new();
    }
    let sign = (outer - edge).signum();
    (1..=k)
        .map(|j| {
            let frac = j as f64 / (k + 1) as f64;
            edge + sign * d * (dmin / d).powf(frac)
        })
        .collect()
}

/// Intersection of segments `p0p1` and `q0q1` as parameters `(a, b)`.
fn segment_crossing(
    p0: (f64, f64),
    p1: (f64, f64),
    q0: (f64, f64),
    q1: (f64, f64),
    last_p: bool,
    last_q: bool,
) -> Option<(f64, f64)> {
    let r = (p1.0 - p0.0, p1.1 - p0.1);
    let s = (q1.0 - q0.0, q1.1 - q0.1);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    let qp = (q0.0 - p0.0, q0.1 - p0.1);
    let a = (qp.0 * s.1 - qp.1 * s.0) / denom;
    let b = (qp.0 * r.1 - qp.1 * r.0) / denom;
    let a_ok = a >= 0.0 && (a < 1.0 || (last_p && a <= 1.0));
    let b_ok = b >= 0.0 && (b < 1.0 || (last_q && b <= 1.0));
    (a_ok && b_ok).then_some((a, b))
}

fn bbox_disjoint(p0: (f64, f64), p1: (f64, f64), q0: (f64, f64), q1: (f64, f64)) -> bool {
    p0.0.max(p1.0) < q0.0.min(q1.0)
        || q0.0.max(q1.0) < p0.0.min(p1.0)
        || p0.1.max(p1.1) < q0.1.min(q1.1)
        || q0.1.max(q1.1) < p0.1.min(p1.1)
}

/// A crossing between polyline segments, before refinement: ln u₀ brackets
/// and the linear interpolation inside them.
#[derive(Clone, Copy, Debug)]
struct RawCrossing {
    sf: (f64, f64),
    sb: (f64, f64),
    a: f64,
    b: f64,
}

fn solve2(j: [[f64; 2]; 2], r: [f64; 2]) -> Option<[f64; 2]> {
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([
        (r[0] * j[1][1] - r[1] * j[0][1]) / det,
        (j[0][0] * r[1] - j[1][0] * r[0]) / det,
    ])
}

impl Problem {
    fn raw_crossings(fwd: &ShootingCurve, bwd: &ShootingCurve) -> Vec<RawCrossing> {
        let pt = |n: &CurveNode| (n.end.x, n.end.y);
        let mut out = Vec::new();
        let bwd_nodes = &bwd.nodes;
        for branch in fwd.branches() {
            for (i, fw) in branch.windows(2).enumerate() {
                let (p0, p1) = (pt(&fw[0]), pt(&fw[1]));
                let last_p = i + 2 == branch.len();
                for (j, bw) in bwd_nodes.windows(2).enumerate() {
                    let (q0, q1) = (pt(&bw[0]), pt(&bw[1]));
                    if bbox_disjoint(p0, p1, q0, q1) {
                        continue;
                    }
                    let last_q = j + 2 == bwd_nodes.len();
                    if let Some((a, b)) = segment_crossing(p0, p1, q0, q1, last_p, last_q) {
                        out.push(RawCrossing {
                            sf: (fw[0].u0.ln(), fw[1].u0.ln()),
                            sb: (bw[0].u0.ln(), bw[1].u0.ln()),
                            a,
                            b,
                        });
                    }
                }
            }
        }
        out
    }

    /// Finds crossings of the polylines (per forward branch) and refines each
    /// by a damped Newton iteration on the mismatch
    /// `M(s_f, s_b) = ζ_fwd(τ; e^{s_f}) − ζ_bwd(τ; e^{s_b})` in the shooting
    /// parameters `s = ln u₀`, with a finite-difference Jacobian. Crossings
    /// that Newton cannot resolve fall back to bisection of the full-interval
    /// defect along the forward segment; whatever still fails is returned
    /// with `refined = false`.
    pub fn intersect(&self, fwd: &ShootingCurve, bwd: &ShootingCurve, refine: f64) -> Result<Vec<Intersection>> {
        let (Direction::Forward { lambda }, Direction::Backward { mu }) = (fwd.direction, bwd.direction) else {
            return Err(Error::domain("intersect expects a forward and a backward curve"));
        };
        let raw = Self::raw_crossings(fwd, bwd);
        let refined = self.par_map(&raw, |c| self.refine_crossing(lambda, mu, c, refine));
        let mut out: Vec<Intersection> = Vec::new();
        for r in refined {
            let r = r?;
            let dup = out.iter().any(|o| {
                o.refined == r.refined
                    && (o.x0_fwd - r.x0_fwd).abs() <= self.settings.dedup * (1.0 + r.x0_fwd.abs())
                    && (o.x0_bwd - r.x0_bwd).abs() <= self.settings.dedup * (1.0 + r.x0_bwd.abs())
            });
            if !dup {
                out.push(r);
            }
        }
        out.sort_by(|a, b| a.x0_fwd.total_cmp(&b.x0_fwd));
        Ok(out)
    }

    fn refine_crossing(&self, lambda: f64, mu: f64, c: &RawCrossing, refine: f64) -> Result<Intersection> {
        let opts = self.settings.fine_ivp();
        let sf0 = c.sf.0 + c.a * (c.sf.1 - c.sf.0);
        let sb0 = c.sb.0 + c.b * (c.sb.1 - c.sb.0);
        let wf = (c.sf.1 - c.sf.0).abs();
        let wb = (c.sb.1 - c.sb.0).abs();
        let fbox = (c.sf.0.min(c.sf.1) - wf, c.sf.0.max(c.sf.1) + wf);
        let bbox = (c.sb.0.min(c.sb.1) - wb, c.sb.0.max(c.sb.1) + wb);
        if let Some(hit) = self.newton(lambda, mu, sf0, sb0, fbox, bbox, refine, &opts) {
            return self.finish(hit, true);
        }
        // fallback: the full-interval defect changes sign along the forward segment
        let p = WeightParams { lambda, mu };
        let (ua, ub) = (c.sf.0.exp(), c.sf.1.exp());
        if let (Ok(Some(fa)), Ok(Some(fb))) = (self.full_defect(p, ua, &opts), self.full_defect(p, ub, &opts)) {
            if fa * fb <= 0.0 {
                let u_root = self.bisect_defect(p, ua, fa, ub, &opts);
                if let Ok(Some(end)) = self.full_end(p, u_root, &opts) {
                    if end.u > 0.0 {
                        if let Some(hit) = self.newton(
                            lambda,
                            mu,
                            u_root.ln(),
                            end.u.ln(),
                            fbox,
                            (f64::NEG_INFINITY, f64::INFINITY),
                            refine,
                            &opts,
                        ) {
                            return self.finish(hit, true);
                        }
                    }
                }
            }
        }
        let pf = self.forward_point(lambda, sf0, &opts);
        let pb = self.backward_point(mu, sb0, &opts);
        let (point, mismatch) = match (pf, pb) {
            (Some(a), Some(b)) => (a, (a.x - b.x).hypot(a.y - b.y)),
            _ => (nan_state(self.weight.tau()), f64::INFINITY),
        };
        self.finish((sf0, sb0, point, mismatch), false)
    }

    fn finish(&self, hit: (f64, f64, PlanarState, f64), refined: bool) -> Result<Intersection> {
        let (sf, sb, point, mismatch) = hit;
        let (u0f, u0b) = (sf.exp(), sb.exp());
        Ok(Intersection {
            x0_fwd: self.cov.eval_w(u0f)?,
            x0_bwd: self.cov.eval_w(u0b)?,
            u0_fwd: u0f,
            u0_bwd: u0b,
            point,
            mismatch,
            refined,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn newton(
        &self,
        lambda: f64,
        mu: f64,
        mut sf: f64,
        mut sb: f64,
        fbox: (f64, f64),
        bbox: (f64, f64),
        refine: f64,
        opts: &IvpOptions,
    ) -> Option<(f64, f64, PlanarState, f64)> {
        let eval = |sf: f64, sb: f64| -> Option<(PlanarState, [f64; 2])> {
            let a = self.forward_point(lambda, sf, opts)?;
            let b = self.backward_point(mu, sb, opts)?;
            Some((a, [a.x - b.x, a.y - b.y]))
        };
        let norm = |m: &[f64; 2]| m[0].hypot(m[1]);
        let tol = |p: &PlanarState| refine * p.x.abs().max(p.y.abs()).max(1.0);
        let (mut p, mut m) = eval(sf, sb)?;
        for _ in 0..60 {
            if norm(&m) <= tol(&p) {
                return Some((sf, sb, p, norm(&m)));
            }
            let hf = 1e-7 * sf.abs().max(1.0);
            let hb = 1e-7 * sb.abs().max(1.0);
            let df = central(|s| self.forward_point(lambda, s, opts), sf, hf)?;
            let db = central(|s| self.backward_point(mu, s, opts), sb, hb)?;
            let j = [[df[0], -db[0]], [df[1], -db[1]]];
            let step = solve2(j, [-m[0], -m[1]])?;
            let mut damping = 1.0;
            let mut accepted = false;
            while damping > 1e-4 {
                let nf = sf + damping * step[0];
                let nb = sb + damping * step[1];
                if nf >= fbox.0 && nf <= fbox.1 && nb >= bbox.0 && nb <= bbox.1 {
                    if let Some((np, nm)) = eval(nf, nb) {
                        if norm(&nm) < norm(&m) {
                            sf = nf;
                            sb = nb;
                            p = np;
                            m = nm;
                            accepted = true;
                            break;
                        }
                    }
                }
                damping *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (norm(&m) <= tol(&p)).then(|| (sf, sb, p, norm(&m)))
    }

    /// Bisection on the full-interval defect between `a` (defect `fa`) and `b`.
    fn bisect_defect(&self, p: WeightParams, a: f64, fa: f64, b: f64, opts: &IvpOptions) -> f64 {
        let (mut lo, mut hi, mut flo) = (a, b, fa);
        let mut best = (a, fa.abs());
        for _ in 0..200 {
            if (hi - lo).abs() <= 1e-13 * lo.abs().max(hi.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let Ok(Some(fm)) = self.full_defect(p, mid, opts) else {
                break;
            };
            if fm.abs() < best.1 {
                best = (mid, fm.abs());
            }
            if fm == 0.0 {
                return mid;
            }
            if (fm < 0.0) == (flo < 0.0) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        best.0
    }
}

/// Central difference of a planar map; one-sided when a side is undefined.
fn central(f: impl Fn(f64) -> Option<PlanarState>, s: f64, h: f64) -> Option<[f64; 2]> {
    match (f(s + h), f(s - h)) {
        (Some(a), Some(b)) => Some([(a.x - b.x) / (2.0 * h), (a.y - b.y) / (2.0 * h)]),
        (Some(a), None) => {
            let c = f(s)?;
            Some([(a.x - c.x) / h, (a.y - c.y) / h])
        }
        (None, Some(b)) => {
            let c = f(s)?;
            Some([(c.x - b.x) / h, (c.y - b.y) / h])
        }
        (None, None) => None,
    }
}

impl Problem {
    /// Profile grid on `[0, T]`: each piece between weight breakpoints gets an
    /// even number of uniform intervals, so Simpson pairs never straddle a
    /// jump of the weight.
    pub fn profile_grid(&self) -> Vec<f64> {
        let t_end = self.weight.t_end();
        let mut cuts = vec![0.0];
        cuts.extend(self.weight.breakpoints());
        cuts.push(t_end);
        let mut grid = vec![0.0];
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mut n = ((self.settings.profile_intervals as f64) * (b - a) / t_end).ceil() as usize;
            n = n.max(2);
            if n % 2 == 1 {
                n += 1;
            }
            for i in 1..=n {
                grid.push(if i == n { b } else { a + (b - a) * i as f64 / n as f64 });
            }
        }
        grid
    }

    /// Integrates from `(u₀, 0)` over `[0, T]` and samples on the profile
    /// grid. `None` when positivity is lost.
    fn sampled_profile(&self, p: WeightParams, u0: f64) -> Result<Option<Sampled>> {
        let grid = self.profile_grid();
        let mut opts = self.settings.fine_ivp();
        opts.sampling = Sampling::Times(grid.clone());
        let tr = ivp::integrate_original(
            self.nonlinearity(),
            &self.weight,
            p,
            OriginalState { t: 0.0, u: u0, up: 0.0 },
            self.weight.t_end(),
            &opts,
        )?;
        if !tr.termination.reached() || tr.times.len() != grid.len() {
            return Ok(None);
        }
        Ok(Some((
            grid,
            tr.values.iter().map(|v| v[0]).collect(),
            tr.values.iter().map(|v| v[1]).collect(),
        )))
    }

    /// Assembles a profile from a forward shot on `[0, τ]` and a backward
    /// shot on `[τ, T]`.
    fn two_sided_profile(&self, p: WeightParams, u0f: f64, u0b: f64) -> Result<Option<Sampled>> {
        let grid = self.profile_grid();
        let tau = self.weight.tau();
        let mut opts = self.settings.fine_ivp();
        opts.sampling = Sampling::Times(grid.clone());
        let f = ivp::integrate_original(
            self.nonlinearity(),
            &self.weight,
            p,
            OriginalState {
                t: 0.0,
                u: u0f,
                up: 0.0,
            },
            tau,
            &opts,
        )?;
        let b = ivp::integrate_original(
            self.nonlinearity(),
            &self.weight,
            p,
            OriginalState {
                t: self.weight.t_end(),
                u: u0b,
                up: 0.0,
            },
            tau,
            &opts,
        )?;
        if !f.termination.reached() || !b.termination.reached() {
            return Ok(None);
        }
        let mut times = f.times.clone();
        let mut vals = f.values.clone();
        for (t, v) in b.times.iter().zip(&b.values).rev() {
            if *t > tau {
                times.push(*t);
                vals.push(*v);
            }
        }
        if times.len() != grid.len() {
            return Ok(None);
        }
        Ok(Some((
            grid,
            vals.iter().map(|v| v[0]).collect(),
            vals.iter().map(|v| v[1]).collect(),
        )))
    }

    /// One-dimensional secant polish of `u₀` on the full-interval defect,
    /// kept only if it reduces `|u'(T)|`.
    fn polish_u0(&self, p: WeightParams, u0: f64) -> f64 {
        // same stops as the profile integration, so the polished defect is
        // the one the profile will show
        let mut opts = self.settings.fine_ivp();
        opts.sampling = Sampling::Times(self.profile_grid());
        let upt = |u: f64| self.full_end(p, u, &opts).ok().flatten().map(|s| s.up);
        let Some(mut f0) = upt(u0) else { return u0 };
        let mut best = (u0, f0.abs());
        let mut x0 = u0;
        let mut x1 = u0 * (1.0 + 1e-9);
        let Some(mut f1) = upt(x1) else { return u0 };
        for _ in 0..12 {
            if f1 == f0 {
                break;
            }
            let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
            if !(x2 > 0.0) || (x2 - u0).abs() > 1e-6 * u0 {
                break;
            }
            let Some(f2) = upt(x2) else { break };
            if f2.abs() < best.1 {
                best = (x2, f2.abs());
            }
            x0 = x1;
            f0 = f1;
            x1 = x2;
            f1 = f2;
            if f2 == 0.0 || (x1 - x0).abs() <= 1e-15 * x1 {
                break;
            }
        }
        best.0
    }

    fn build_profile(&self, p: WeightParams, u0f: f64, u0b: Option<f64>) -> Result<Option<SolutionProfile>> {
        let u0 = self.polish_u0(p, u0f);
        let sampled = match self.sampled_profile(p, u0)? {
            Some(s) => Some(s),
            None => match u0b {
                Some(v) => self.two_sided_profile(p, u0f, v)?,
                None => None,
            },
        };
        let Some((grid, u, up)) = sampled else {
            return Ok(None);
        };
        if u.iter().any(|&v| !(v > 0.0)) {
            return Ok(None);
        }
        let diagnostics = report::residuals(self, p, &grid, &u, &up).diagnostics();
        Ok(Some(SolutionProfile {
            lambda: p.lambda,
            mu: p.mu,
            grid,
            u,
            up,
            diagnostics,
        }))
    }

    fn dedup_profiles(&self, mut sols: Vec<SolutionProfile>) -> Vec<SolutionProfile> {
        sols.sort_by(|a, b| a.u0().total_cmp(&b.u0()));
        let mut out: Vec<SolutionProfile> = Vec::new();
        for s in sols {
            if !out.iter().any(|o| o.sup_distance(&s) < self.settings.dedup) {
                out.push(s);
            }
        }
        out
    }

    /// Neumann solutions at `(λ, μ)` from the intersections of the default
    /// curves, sorted by `u(0)`.
    pub fn solve_bvp(&self, lambda: f64, mu: f64) -> Result<Vec<SolutionProfile>> {
        let p = WeightParams::new(lambda, mu)?;
        let (fwd, bwd) = self.default_curves(p.lambda, p.mu)?;
        self.solve_with_curves(&fwd, &bwd)
    }

    /// As [`Problem::solve_bvp`], reusing already built curves.
    pub fn solve_with_curves(&self, fwd: &ShootingCurve, bwd: &ShootingCurve) -> Result<Vec<SolutionProfile>> {
        let (Direction::Forward { lambda }, Direction::Backward { mu }) = (fwd.direction, bwd.direction) else {
            return Err(Error::domain("solve expects a forward and a backward curve"));
        };
        let p = WeightParams::new(lambda, mu)?;
        let hits = self.intersect(fwd, bwd, self.settings.refine)?;
        let refined: Vec<Intersection> = hits.into_iter().filter(|h| h.refined).collect();
        let profiles = self.par_map(&refined, |h| self.build_profile(p, h.u0_fwd, Some(h.u0_bwd)));
        let mut sols = Vec::new();
        for pr in profiles {
            if let Some(s) = pr? {
                sols.push(s);
            }
        }
        Ok(self.dedup_profiles(sols))
    }

    /// Default oracle grid: `oracle_nodes` log-spaced `u₀` over the curve range.
    pub fn default_oracle_grid(&self) -> Vec<f64> {
        nonlin::log_space(self.settings.u0_min, self.settings.u0_max, self.settings.oracle_nodes)
    }

    /// Brute-force shooting over `[0, T]`: scans the defect
    /// `y(T) = −u'(T)/g(u(T))` over `u0_grid`, bisects every sign change,
    /// and resolves every transition between surviving and dying shots by
    /// bisecting the transition and sampling geometrically towards it.
    pub fn full_shooting_oracle(&self, lambda: f64, mu: f64, u0_grid: &[f64]) -> Result<OracleResult> {
        let p = WeightParams::new(lambda, mu)?;
        let mut grid: Vec<f64> = u0_grid.to_vec();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        if grid.is_empty() || grid[0] <= 0.0 {
            return Err(Error::domain("oracle grid must be nonempty and positive"));
        }
        let opts = self.settings.ivp.clone();
        let fine = self.settings.fine_ivp();
        let defects: Vec<Option<f64>> = self.par_map(&grid, |&u| self.full_defect(p, u, &opts).ok().flatten());

        let mut brackets: Vec<(f64, f64, f64)> = Vec::new();
        let mut transitions: Vec<(f64, f64, f64)> = Vec::new(); // (alive u, its defect, dead u)
        for i in 0..grid.len() - 1 {
            match (defects[i], defects[i + 1]) {
                (Some(a), Some(b)) if a * b <= 0.0 => brackets.push((grid[i], a, grid[i + 1])),
                (Some(a), None) => transitions.push((grid[i], a, grid[i + 1])),
                (None, Some(b)) => transitions.push((grid[i + 1], b, grid[i])),
                _ => {}
            }
        }
        let extra: Vec<Vec<(f64, f64, f64)>> = self.par_map(&transitions, |&(alive, fa, dead)| {
            self.boundary_brackets(p, alive, fa, dead, &opts)
        });
        brackets.extend(extra.into_iter().flatten());

        let mut roots: Vec<f64> = self.par_map(&brackets, |&(a, fa, b)| self.bisect_defect(p, a, fa, b, &fine));
        roots.sort_by(f64::total_cmp);
        roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());
        let profiles = self.par_map(&roots, |&u| self.build_profile(p, u, None));
        let mut sols = Vec::new();
        let mut kept_roots = Vec::new();
        for (pr, &u) in profiles.into_iter().zip(&roots) {
            if let Some(s) = pr? {
                kept_roots.push(u);
                sols.push(s);
            }
        }
        let sols = self.dedup_profiles(sols);
        let kept_roots = kept_roots
            .into_iter()
            .filter(|u| sols.iter().any(|s| (s.u0() - u).abs() <= 1e-6 * u))
            .collect();
        Ok(OracleResult {
            count: sols.len(),
            u0_roots: kept_roots,
            solutions: sols,
        })
    }

    /// Sign changes of the defect between a surviving initial value and the
    /// survival boundary next to it.
    fn boundary_brackets(
        &self,
        p: WeightParams,
        alive: f64,
        f_alive: f64,
        dead: f64,
        opts: &IvpOptions,
    ) -> Vec<(f64, f64, f64)> {
        let (mut a, mut d) = (alive, dead);
        let mut fa = f_alive;
        for _ in 0..80 {
            if (a - d).abs() <= 1e-13 * a.abs().max(d.abs()) {
                break;
            }
            let mid = 0.5 * (a + d);
            match self.full_defect(p, mid, opts).ok().flatten() {
                Some(fm) => {
                    a = mid;
                    fa = fm;
                }
                None => d = mid,
            }
        }
        let boundary = a;
        let span = (alive - boundary).abs();
        let dmin = (1e-12 * boundary).max(1.5 * (a - d).abs());
        if !(span > dmin) {
            return Vec::new();
        }
        let sign = (alive - boundary).signum();
        let n = 48;
        let mut pts: Vec<f64> = (0..=n)
            .map(|j| boundary + sign * span * (dmin / span).powf(j as f64 / n as f64))
            .collect();
        pts[0] = alive;
        let vals: Vec<Option<f64>> = pts
            .iter()
            .map(|&u| self.full_defect(p, u, opts).ok().flatten())
            .collect();
        let mut out = Vec::new();
        let mut prev: Option<(f64, f64)> = Some((alive, f_alive));
        for (u, v) in pts.iter().zip(&vals).skip(1) {
            match (prev, v) {
                (Some((pu, pv)), Some(cv)) => {
                    if pv * cv <= 0.0 {
                        out.push((pu, pv, *u));
                    }
                    prev = Some((*u, *cv));
                }
                (_, Some(cv)) => prev = Some((*u, *cv)),
                _ => prev = None,
            }
        }
        let _ = fa;
        out
    }
}
