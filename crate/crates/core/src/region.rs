//! Solution counts over a `(λ, μ)` grid and the boundaries `μ₋(λ) < μ₀(λ) <
//! μ₊(λ)` of the solvable set.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::shooting::{Problem, ShootingCurve};

/// Upper boundary: a finite estimate, or unbounded up to the search limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MuPlus {
    Finite(f64),
    Infinite,
}

impl MuPlus {
    pub fn is_infinite(&self) -> bool {
        matches!(self, MuPlus::Infinite)
    }

    pub fn value(&self) -> f64 {
        match *self {
            MuPlus::Finite(v) => v,
            MuPlus::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for MuPlus {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MuPlus::Finite(v) => s.serialize_f64(*v),
            MuPlus::Infinite => s.serialize_str("inf"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Boundaries {
    pub lambda: f64,
    pub mu0: f64,
    pub mu_minus: f64,
    pub mu_plus: MuPlus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundarySearch {
    /// Relative width at which the bisection stops.
    pub rel_tol: f64,
    /// `μ₊` is declared infinite when solutions persist up to this multiple
    /// of `μ₀`.
    pub infinity_factor: f64,
    /// Geometric step of the outward scan.
    pub scan_factor: f64,
    /// Lower limit of the downward scan, as a multiple of `μ₀`.
    pub floor_factor: f64,
}

impl Default for BoundarySearch {
    fn default() -> Self {
        Self {
            rel_tol: 1e-3,
            infinity_factor: 1e4,
            scan_factor: 2.0,
            floor_factor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionMap {
    pub lambda_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
    /// `counts[i][j]` at `(λᵢ, μⱼ)`; `-1` marks a failed cell.
    pub counts: Vec<Vec<i64>>,
    pub mu0_line: Vec<f64>,
    pub boundaries: Vec<Option<Boundaries>>,
}

fn check_grid(name: &str, g: &[f64]) -> Result<()> {
    if g.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || g.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain(format!(
            "{name} grid must be positive and strictly increasing"
        )));
    }
    Ok(())
}

/// Solution counts on the grid. Forward curves are shared along rows and
/// backward curves along columns; a failing cell is recorded as `-1`.
pub fn sweep(problem: &Problem, lambda_grid: &[f64], mu_grid: &[f64]) -> Result<RegionMap> {
    check_grid("lambda", lambda_grid)?;
    check_grid("mu", mu_grid)?;
    let mu0_line = lambda_grid
        .iter()
        .map(|&l| problem.weight().mu0(l))
        .collect::<Result<Vec<_>>>()?;
    if lambda_grid.is_empty() || mu_grid.is_empty() {
        return Ok(RegionMap {
            lambda_grid: lambda_grid.to_vec(),
            mu_grid: mu_grid.to_vec(),
            counts: vec![Vec::new(); lambda_grid.len()],
            mu0_line,
            boundaries: vec![None; lambda_grid.len()],
        });
    }
    let fwd: Vec<Option<ShootingCurve>> = problem.par_map(lambda_grid, |&l| problem.default_forward_curve(l).ok());
    let bwd: Vec<Option<ShootingCurve>> = problem.par_map(mu_grid, |&m| problem.default_backward_curve(m).ok());
    let cells: Vec<(usize, usize)> = (0..lambda_grid.len())
        .flat_map(|i| (0..mu_grid.len()).map(move |j| (i, j)))
        .collect();
    let flat = problem.par_map(&cells, |&(i, j)| match (&fwd[i], &bwd[j]) {
        (Some(f), Some(b)) => problem.solve_with_curves(f, b).map(|s| s.len() as i64).unwrap_or(-1),
        _ => -1,
    });
    let counts = flat.chunks(mu_grid.len()).map(|c| c.to_vec()).collect();
    Ok(RegionMap {
        lambda_grid: lambda_grid.to_vec(),
        mu_grid: mu_grid.to_vec(),
        counts,
        mu0_line,
        boundaries: vec![None; lambda_grid.len()],
    })
}

/// Fills the per-`λ` boundaries; a failed search leaves `None`.
pub fn with_boundaries(problem: &Problem, mut map: RegionMap, search: &BoundarySearch) -> RegionMap {
    map.boundaries = problem.par_map(&map.lambda_grid, |&l| mu_boundaries(problem, l, search).ok());
    map
}

/// Bisects the predicate "at least one solution" downward and upward from
/// `μ₀(λ)`. Returns an error with witnesses when the predicate is seen to
/// flip back just outside a boundary.
pub fn mu_boundaries(problem: &Problem, lambda: f64, search: &BoundarySearch) -> Result<Boundaries> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
    }
    if !(search.rel_tol > 0.0 && search.scan_factor > 1.0 && search.infinity_factor > 1.0 && search.floor_factor > 0.0)
    {
        return Err(Error::domain(format!("invalid boundary search {search:?}")));
    }
    let mu0 = problem.weight().mu0(lambda)?;
    let fwd = problem.default_forward_curve(lambda)?;
    let count = |mu: f64| -> Result<usize> {
        let bwd = problem.default_backward_curve(mu)?;
        Ok(problem.solve_with_curves(&fwd, &bwd)?.len())
    };
    if count(mu0)? == 0 {
        return Err(Error::numeric(format!("no solution found at mu0 = {mu0}")));
    }

    // lower boundary
    let mut hi = mu0;
    let mut lo = mu0 / search.scan_factor;
    loop {
        if lo < search.floor_factor * mu0 {
            return Err(Error::numeric(format!("solutions persist down to mu = {lo}")));
        }
        if count(lo)? == 0 {
            break;
        }
        hi = lo;
        lo /= search.scan_factor;
    }
    let (lo, hi) = bisect_geometric(lo, hi, search.rel_tol, |m| Ok(count(m)? >= 1), false)?;
    let below = lo / search.scan_factor;
    if count(below)? >= 1 {
        return Err(Error::NonMonotone {
            message: format!("solvable again below the lower boundary (lambda = {lambda})"),
            witnesses: vec![lo, below],
        });
    }
    let mu_minus = (lo * hi).sqrt();

    // upper boundary
    let limit = search.infinity_factor * mu0;
    let mut lo = mu0;
    let mut hi = mu0 * search.scan_factor;
    let mut last_count = 0;
    let mut unbounded = false;
    loop {
        let c = count(hi.min(limit))?;
        if c == 0 {
            break;
        }
        last_count = c;
        if hi >= limit {
            unbounded = true;
            break;
        }
        lo = hi;
        hi *= search.scan_factor;
    }
    let mu_plus = if unbounded {
        if last_count < 2 {
            return Err(Error::numeric(format!(
                "a single solution persists up to mu = {limit}; upper boundary undetermined"
            )));
        }
        MuPlus::Infinite
    } else {
        let hi = hi.min(limit);
        let (a, b) = bisect_geometric(lo, hi, search.rel_tol, |m| Ok(count(m)? >= 1), true)?;
        let above = b * search.scan_factor;
        if above <= limit && count(above)? >= 1 {
            return Err(Error::NonMonotone {
                message: format!("solvable again above the upper boundary (lambda = {lambda})"),
                witnesses: vec![b, above],
            });
        }
        MuPlus::Finite((a * b).sqrt())
    };
    Ok(Boundaries {
        lambda,
        mu0,
        mu_minus,
        mu_plus,
    })
}

/// Geometric bisection of a boolean predicate between `a` and `b` with
/// `pred(a) != pred(b)`. With `true_low` the predicate holds at the lower
/// end, otherwise at the upper end.
fn bisect_geometric(
    mut lo: f64,
    mut hi: f64,
    rel_tol: f64,
    mut pred: impl FnMut(f64) -> Result<bool>,
    true_low: bool,
) -> Result<(f64, f64)> {
    while hi / lo - 1.0 > rel_tol {
        let mid = (lo * hi).sqrt();
        if pred(mid)? == true_low {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_bisection_converges() {
        let (a, b) = bisect_geometric(1.0, 100.0, 1e-6, |m| Ok(m < 7.0), true).unwrap();
        assert!(a < 7.0 && b >= 7.0 && b / a - 1.0 <= 1e-6);
        let (a, b) = bisect_geometric(1.0, 100.0, 1e-6, |m| Ok(m > 7.0), false).unwrap();
        assert!(a <= 7.0 && b > 7.0);
    }

    #[test]
    fn empty_grids() {
        let pr = Problem::reference();
        let m = sweep(&pr, &[1.0], &[]).unwrap();
        assert_eq!(m.counts, vec![Vec::<i64>::new()]);
        let m = sweep(&pr, &[], &[]).unwrap();
        assert!(m.counts.is_empty());
        assert!(sweep(&pr, &[2.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn boundary_domain() {
        let pr = Problem::reference();
        assert!(matches!(
            mu_boundaries(&pr, 0.0, &BoundarySearch::default()),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            mu_boundaries(&pr, -1.0, &BoundarySearch::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn mu_plus_serialises_infinity() {
        assert_eq!(serde_json::to_string(&MuPlus::Infinite).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&MuPlus::Finite(2.0)).unwrap(), "2.0");
    }
}
