//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::nonlin::Nonlinearity;
use crate::region::BoundarySearch;
use crate::shooting::{Problem, Settings};
use crate::weight::{EpsGrid, Piece, Profile, Weight};

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NonlinearitySpec {
    Model { c1: f64, c2: f64, alpha: f64, gamma: f64 },
}

impl Default for NonlinearitySpec {
    fn default() -> Self {
        NonlinearitySpec::Model {
            c1: 1.0,
            c2: 1.0,
            alpha: 2.0,
            gamma: 3.0,
        }
    }
}

impl NonlinearitySpec {
    pub fn build(&self) -> Result<Nonlinearity> {
        match *self {
            NonlinearitySpec::Model { c1, c2, alpha, gamma } => Nonlinearity::model(c1, c2, alpha, gamma),
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    #[serde(rename = "T")]
    pub t_end: f64,
    pub tau: f64,
    #[serde(default)]
    pub plus: Option<Vec<Piece>>,
    #[serde(default)]
    pub minus: Option<Vec<Piece>>,
    /// Samples `[t, a(t)]` of a signed weight, interpolated linearly.
    #[serde(default)]
    pub samples: Option<Vec<[f64; 2]>>,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            t_end: 2.0,
            tau: 1.0,
            plus: Some(vec![Piece {
                from: 0.0,
                to: 1.0,
                value: 1.0,
            }]),
            minus: Some(vec![Piece {
                from: 1.0,
                to: 2.0,
                value: 1.0,
            }]),
            samples: None,
        }
    }
}

impl WeightSpec {
    pub fn build(&self) -> Result<Weight> {
        match (&self.samples, &self.plus, &self.minus) {
            (Some(s), None, None) => {
                if s.len() < 2 || s.windows(2).any(|w| !(w[0][0] < w[1][0])) {
                    return Err(Error::Config(
                        "weight.samples needs at least two points with increasing t".into(),
                    ));
                }
                let pts: Vec<(f64, f64)> = s.iter().map(|p| (p[0], p[1])).collect();
                let breaks: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let interp = move |t: f64| {
                    let i = pts.partition_point(|p| p.0 <= t);
                    if i == 0 {
                        return pts[0].1;
                    }
                    if i >= pts.len() {
                        return pts[pts.len() - 1].1;
                    }
                    let (t0, a0) = pts[i - 1];
                    let (t1, a1) = pts[i];
                    a0 + (a1 - a0) * (t - t0) / (t1 - t0)
                };
                Weight::from_signed(self.t_end, self.tau, interp, breaks)
            }
            (None, plus, minus) => Weight::new(
                self.t_end,
                self.tau,
                Profile::Boxes(plus.clone().unwrap_or_default()),
                Profile::Boxes(minus.clone().unwrap_or_default()),
            ),
            _ => Err(Error::Config(
                "weight takes either samples or plus/minus boxes, not both".into(),
            )),
        }
    }
}

/// A grid given explicitly or as a range.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Range(RangeSpec),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub from: f64,
    pub to: f64,
    pub count: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Log,
    Linear,
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            GridSpec::List(v) => Ok(v.clone()),
            GridSpec::Range(r) => {
                if r.count == 0 {
                    return Ok(Vec::new());
                }
                if r.count == 1 {
                    return Ok(vec![r.from]);
                }
                if !(r.from.is_finite() && r.to.is_finite()) {
                    return Err(Error::Config("grid range must be finite".into()));
                }
                let n = r.count - 1;
                Ok((0..=n)
                    .map(|i| {
                        let f = i as f64 / n as f64;
                        match r.spacing {
                            Spacing::Linear => r.from + (r.to - r.from) * f,
                            Spacing::Log => {
                                if i == n {
                                    r.to
                                } else {
                                    (r.from.ln() + (r.to.ln() - r.from.ln()) * f).exp()
                                }
                            }
                        }
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub u_floor: Option<f64>,
    pub cap: Option<f64>,
    pub refine: Option<f64>,
    pub dedup: Option<f64>,
    /// Pass threshold of the verification residuals.
    pub verify: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSizes {
    pub shoot_nodes: Option<usize>,
    pub u0_min: Option<f64>,
    pub u0_max: Option<f64>,
    pub oracle_nodes: Option<usize>,
    pub profile_intervals: Option<usize>,
    pub edge_nodes: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum EpsGridSpec {
    Points(Vec<f64>),
    Range { count: usize, lo: f64, hi: f64 },
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub rel_tol: Option<f64>,
    pub infinity_factor: Option<f64>,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self {
            enabled: true,
            rel_tol: None,
            infinity_factor: None,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RadialSpec {
    pub dim: u32,
    pub r1: f64,
    pub r2: f64,
    /// Radial weight `A(r)` as boxes in `r`.
    #[serde(default)]
    pub boxes: Option<Vec<Piece>>,
    /// Radial weight as samples `[r, A(r)]`.
    #[serde(default)]
    pub samples: Option<Vec<[f64; 2]>>,
    /// Number of `t` samples written for the reduced weight.
    #[serde(default = "radial_points")]
    pub points: usize,
}

fn radial_points() -> usize {
    257
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub nonlinearity: NonlinearitySpec,
    #[serde(default)]
    pub weight: WeightSpec,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub lambda_grid: Option<GridSpec>,
    pub mu_grid: Option<GridSpec>,
    /// Explicit `x₀` grid for the curves command.
    pub x0_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub grid: GridSizes,
    pub eps_grid: Option<EpsGridSpec>,
    #[serde(default)]
    pub boundaries: BoundarySpec,
    pub sigma: Option<f64>,
    pub radial: Option<RadialSpec>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn settings(&self) -> Settings {
        let mut s = Settings::default();
        let t = &self.tolerances;
        if let Some(v) = t.rtol {
            s.ivp.rtol = v;
        }
        if let Some(v) = t.atol {
            s.ivp.atol = v;
        }
        if let Some(v) = t.u_floor {
            s.ivp.u_floor = v;
        }
        if let Some(v) = t.cap {
            s.ivp.cap = v;
        }
        if let Some(v) = t.refine {
            s.refine = v;
        }
        if let Some(v) = t.dedup {
            s.dedup = v;
        }
        let g = &self.grid;
        if let Some(v) = g.shoot_nodes {
            s.shoot_nodes = v;
        }
        if let Some(v) = g.u0_min {
            s.u0_min = v;
        }
        if let Some(v) = g.u0_max {
            s.u0_max = v;
        }
        if let Some(v) = g.oracle_nodes {
            s.oracle_nodes = v;
        }
        if let Some(v) = g.profile_intervals {
            s.profile_intervals = v;
        }
        if let Some(v) = g.edge_nodes {
            s.edge_nodes = v;
        }
        s.threads = self.threads;
        s
    }

    pub fn verify_tol(&self) -> f64 {
        self.tolerances.verify.unwrap_or(1e-6)
    }

    pub fn eps_grid(&self) -> EpsGrid {
        match &self.eps_grid {
            None => EpsGrid::default(),
            Some(EpsGridSpec::Points(p)) => EpsGrid::Points(p.clone()),
            Some(EpsGridSpec::Range { count, lo, hi }) => EpsGrid::LogSpaced {
                count: *count,
                lo: *lo,
                hi: *hi,
            },
        }
    }

    pub fn boundary_search(&self) -> BoundarySearch {
        let mut b = BoundarySearch::default();
        if let Some(v) = self.boundaries.rel_tol {
            b.rel_tol = v;
        }
        if let Some(v) = self.boundaries.infinity_factor {
            b.infinity_factor = v;
        }
        b
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::new(self.nonlinearity.build()?, self.weight.build()?, self.settings())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_parses() {
        let c = RunConfig::parse(
            r#"{"nonlinearity":{"kind":"model","c1":1,"c2":1,"alpha":2,"gamma":3},
                "weight":{"T":2,"tau":1,"plus":[{"from":0,"to":1,"value":1}],"minus":[{"from":1,"to":2,"value":1}]},
                "lambda":1,"mu":1}"#,
        )
        .unwrap();
        assert_eq!(c.weight.build().unwrap().integrals(), (1.0, 1.0));
        assert_eq!(c.lambda, Some(1.0));
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let e = RunConfig::parse("{\n  \"lambda\": 1,\n  \"lamda\": 2\n}").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("lamda") && msg.contains("line 3"), "{msg}");
        assert!(RunConfig::parse(r#"{"weight":{"T":2,"tau":1,"extra":1}}"#).is_err());
    }

    #[test]
    fn sampled_weight() {
        let c =
            RunConfig::parse(r#"{"weight":{"T":2,"tau":1,"samples":[[0,1],[1,1],[1.0000001,-2],[2,-2]]}}"#).unwrap();
        let w = c.weight.build().unwrap();
        let (ap, am) = w.integrals();
        assert!((ap - 1.0).abs() < 1e-9 && (am - 2.0).abs() < 1e-6);
    }

    #[test]
    fn grid_ranges() {
        let g: GridSpec = serde_json::from_str(r#"{"from":1,"to":100,"count":3}"#).unwrap();
        let v = g.values().unwrap();
        assert!((v[1] - 10.0).abs() < 1e-12 && v[2] == 100.0);
        let g: GridSpec = serde_json::from_str(r#"{"from":0,"to":1,"count":5,"spacing":"linear"}"#).unwrap();
        assert_eq!(g.values().unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g: GridSpec = serde_json::from_str("[1, 2]").unwrap();
        assert_eq!(g.values().unwrap(), vec![1.0, 2.0]);
    }
}
