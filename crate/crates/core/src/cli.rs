//! Command-line driver. Every run prints one JSON summary line on stdout.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{RadialSpec, RunConfig};
use crate::error::{Error, Result};
use crate::optim;
use crate::region;
use crate::report::{self, emit, Artifact, Format};
use crate::shooting::{Diagnostics, SolutionProfile};
use crate::weight::{Piece, WeightParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NO_SOLUTIONS: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_NO_INPUT: i32 = 66;

#[derive(Debug, Parser)]
#[command(
    name = "nbvp",
    version,
    about = "Positive solutions of indefinite-weight Neumann problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the boundary value problem at a single (λ, μ) and verify each solution.
    Solve(Common),
    /// Forward and backward shooting curves with their intersections.
    Curves(Common),
    /// Solution counts over a (λ, μ) grid with the boundaries μ₋, μ₊.
    Region(Common),
    /// The blow-up threshold λ* and its minimizing ε.
    LambdaStar(Common),
    /// Re-verify a stored profile.
    Verify(ProfileArgs),
    /// Extend a stored profile to one period and check its residual.
    PeriodicExtend(PeriodicArgs),
    /// Reduce a radial annulus problem to one dimension.
    RadialReduce(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; defaults to the reference problem.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub common: Common,
    /// Profile CSV with columns t, u, up.
    #[arg(long)]
    pub profile: PathBuf,
}

#[derive(Debug, Args)]
pub struct PeriodicArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub sigma: Option<f64>,
}

pub struct Outcome {
    pub code: i32,
    pub summary: Value,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::DegenerateWeight(_) => EXIT_USAGE,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_NO_INPUT,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args`, runs the command and prints the summary. Returns the exit
/// code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let out = run(&cli);
    println!("{}", out.summary);
    out.code
}

pub fn run(cli: &Cli) -> Outcome {
    let name = command_name(&cli.command);
    let result = match &cli.command {
        Command::Solve(c) => load(c).and_then(|cfg| cmd_solve(&cfg)),
        Command::Curves(c) => load(c).and_then(|cfg| cmd_curves(&cfg)),
        Command::Region(c) => load(c).and_then(|cfg| cmd_region(&cfg)),
        Command::LambdaStar(c) => load(c).and_then(|cfg| cmd_lambda_star(&cfg)),
        Command::Verify(a) => load(&a.common).and_then(|cfg| cmd_verify(&cfg, &a.profile, a.common.out.is_some())),
        Command::PeriodicExtend(a) => load(&a.profile.common).and_then(|mut cfg| {
            if a.sigma.is_some() {
                cfg.sigma = a.sigma;
            }
            cmd_periodic_extend(&cfg, &a.profile.profile)
        }),
        Command::RadialReduce(c) => load(c).and_then(|cfg| cmd_radial_reduce(&cfg)),
    };
    match result {
        Ok(mut o) => {
            if let Value::Object(m) = &mut o.summary {
                m.insert("command".into(), json!(name));
                m.insert("exit_code".into(), json!(o.code));
            }
            o
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("nbvp {name}: {e}");
            Outcome {
                code,
                summary: json!({ "command": name, "status": "error", "exit_code": code, "error": e.to_string() }),
            }
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Solve(_) => "solve",
        Command::Curves(_) => "curves",
        Command::Region(_) => "region",
        Command::LambdaStar(_) => "lambda-star",
        Command::Verify(_) => "verify",
        Command::PeriodicExtend(_) => "periodic-extend",
        Command::RadialReduce(_) => "radial-reduce",
    }
}

/// Loads the configuration and applies the flag overrides.
pub fn load(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if c.lambda.is_some() {
        cfg.lambda = c.lambda;
    }
    if c.mu.is_some() {
        cfg.mu = c.mu;
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    Ok(cfg)
}

fn params(cfg: &RunConfig) -> Result<(f64, f64)> {
    match (cfg.lambda, cfg.mu) {
        (Some(l), Some(m)) => {
            WeightParams::new(l, m)?;
            Ok((l, m))
        }
        _ => Err(Error::Config("lambda and mu are required".into())),
    }
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<Outcome> {
    let (lambda, mu) = params(cfg)?;
    let problem = cfg.problem()?;
    let out = cfg.out_dir();
    let tol = cfg.verify_tol();
    let sols = problem.solve_bvp(lambda, mu)?;
    let mut entries = Vec::new();
    let mut all_passed = true;
    for (k, s) in sols.iter().enumerate() {
        let rep = report::verify_solution(&problem, s, tol)?;
        all_passed &= rep.all_passed();
        let csv = out.join(format!("solution_{k}.csv"));
        emit(&Artifact::Solution(s), Format::Csv, &csv)?;
        emit(
            &Artifact::Solution(s),
            Format::Json,
            &out.join(format!("solution_{k}.json")),
        )?;
        emit(
            &Artifact::Report(&rep),
            Format::Json,
            &out.join(format!("report_{k}.json")),
        )?;
        entries.push(json!({
            "u0": s.u0(),
            "profile": csv.display().to_string(),
            "med_residual": rep.med_residual,
            "ode_residual": rep.ode_residual,
            "passed": rep.all_passed(),
        }));
    }
    let (code, status) = if sols.is_empty() {
        (EXIT_NO_SOLUTIONS, "no_solutions")
    } else if all_passed {
        (EXIT_OK, "ok")
    } else {
        (EXIT_FAILURE, "verification_failed")
    };
    Ok(Outcome {
        code,
        summary: json!({
            "status": status,
            "lambda": lambda,
            "mu": mu,
            "solutions": sols.len(),
            "profiles": entries,
            "out": out.display().to_string(),
        }),
    })
}

pub fn cmd_curves(cfg: &RunConfig) -> Result<Outcome> {
    let (lambda, mu) = params(cfg)?;
    let problem = cfg.problem()?;
    let out = cfg.out_dir();
    let grid = match &cfg.x0_grid {
        Some(g) => g.clone(),
        None => problem.default_x0_grid()?,
    };
    let fwd = problem.forward_curve(lambda, &grid)?;
    let bwd = problem.backward_curve(mu, &grid)?;
    let hits = problem.intersect(&fwd, &bwd, problem.settings().refine)?;
    emit(&Artifact::Curve(&fwd), Format::Csv, &out.join("curve_forward.csv"))?;
    emit(&Artifact::Curve(&bwd), Format::Csv, &out.join("curve_backward.csv"))?;
    let pair = Artifact::CurvePair {
        fwd: &fwd,
        bwd: &bwd,
        intersections: &hits,
    };
    emit(&pair, Format::Svg, &out.join("curves.svg"))?;
    emit(&pair, Format::Json, &out.join("curves.json"))?;
    Ok(Outcome {
        code: EXIT_OK,
        summary: json!({
            "status": "ok",
            "lambda": lambda,
            "mu": mu,
            "forward_branches": fwd.branches().len(),
            "gap": fwd.gap,
            "intersections": hits.len(),
            "out": out.display().to_string(),
        }),
    })
}

pub fn cmd_region(cfg: &RunConfig) -> Result<Outcome> {
    let lg = cfg
        .lambda_grid
        .as_ref()
        .ok_or_else(|| Error::Config("region needs lambda_grid".into()))?
        .values()?;
    let mg = cfg
        .mu_grid
        .as_ref()
        .ok_or_else(|| Error::Config("region needs mu_grid".into()))?
        .values()?;
    let problem = cfg.problem()?;
    let out = cfg.out_dir();
    let mut map = region::sweep(&problem, &lg, &mg)?;
    if cfg.boundaries.enabled {
        map = region::with_boundaries(&problem, map, &cfg.boundary_search());
    }
    emit(&Artifact::Region(&map), Format::Csv, &out.join("region.csv"))?;
    emit(&Artifact::Region(&map), Format::Json, &out.join("region.json"))?;
    emit(&Artifact::Region(&map), Format::Svg, &out.join("region.svg"))?;
    let failed = map.counts.iter().flatten().filter(|&&c| c < 0).count();
    let unbounded = map
        .boundaries
        .iter()
        .flatten()
        .filter(|b| b.mu_plus.is_infinite())
        .count();
    Ok(Outcome {
        code: EXIT_OK,
        summary: json!({
            "status": "ok",
            "lambdas": lg.len(),
            "mus": mg.len(),
            "failed_cells": failed,
            "boundaries": map.boundaries,
            "unbounded_rows": unbounded,
            "out": out.display().to_string(),
        }),
    })
}

pub fn cmd_lambda_star(cfg: &RunConfig) -> Result<Outcome> {
    let n = cfg.nonlinearity.build()?;
    let w = cfg.weight.build()?;
    let ls = w.lambda_star(&n, &cfg.eps_grid())?;
    Ok(Outcome {
        code: EXIT_OK,
        summary: json!({ "status": "ok", "lambda_star": ls.lambda_star, "eps_opt": ls.eps_opt }),
    })
}

/// Reads a `t,u,up` CSV with a header line.
pub fn read_profile(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, what: &str| Error::Config(format!("{}:{}: {what}", path.display(), line + 1));
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(["t", "u", "up"]) => {}
        Some((i, _)) => return Err(bad(i, "expected header t,u,up")),
        None => return Err(bad(0, "empty profile")),
    }
    let (mut t, mut u, mut up) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines {
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(i, &format!("{e}")))?;
        if v.len() != 3 {
            return Err(bad(i, "expected 3 columns"));
        }
        t.push(v[0]);
        u.push(v[1]);
        up.push(v[2]);
    }
    Ok((t, u, up))
}

/// `λ, μ` from the configuration, else from the JSON written next to the
/// profile by `solve`.
fn profile_params(cfg: &RunConfig, path: &Path) -> Result<(f64, f64)> {
    if let (Some(l), Some(m)) = (cfg.lambda, cfg.mu) {
        return Ok((l, m));
    }
    let side = path.with_extension("json");
    let text = std::fs::read_to_string(&side)
        .map_err(|_| Error::Config("lambda and mu are required (no metadata next to the profile)".into()))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", side.display())))?;
    let l = cfg.lambda.or_else(|| v["lambda"].as_f64());
    let m = cfg.mu.or_else(|| v["mu"].as_f64());
    match (l, m) {
        (Some(l), Some(m)) => Ok((l, m)),
        _ => Err(Error::Config(format!("{}: missing lambda or mu", side.display()))),
    }
}

fn load_profile(cfg: &RunConfig, path: &Path) -> Result<SolutionProfile> {
    let (grid, u, up) = read_profile(path)?;
    let (lambda, mu) = profile_params(cfg, path)?;
    WeightParams::new(lambda, mu)?;
    let nan = f64::NAN;
    Ok(SolutionProfile {
        lambda,
        mu,
        grid,
        u,
        up,
        diagnostics: Diagnostics {
            ode_residual: nan,
            bc_residual: nan,
            med_residual: nan,
        },
    })
}

pub fn cmd_verify(cfg: &RunConfig, profile: &Path, write: bool) -> Result<Outcome> {
    let s = load_profile(cfg, profile)?;
    let problem = cfg.problem()?;
    let rep = report::verify_solution(&problem, &s, cfg.verify_tol())?;
    if write {
        emit(
            &Artifact::Report(&rep),
            Format::Json,
            &cfg.out_dir().join("verify_report.json"),
        )?;
    }
    let passed = rep.all_passed();
    Ok(Outcome {
        code: if passed { EXIT_OK } else { EXIT_FAILURE },
        summary: json!({
            "status": if passed { "ok" } else { "verification_failed" },
            "profile": profile.display().to_string(),
            "lambda": s.lambda,
            "mu": s.mu,
            "report": rep,
        }),
    })
}

pub fn cmd_periodic_extend(cfg: &RunConfig, profile: &Path) -> Result<Outcome> {
    let s = load_profile(cfg, profile)?;
    let problem = cfg.problem()?;
    let sigma = cfg.sigma.unwrap_or(0.0);
    let base = report::residuals(&problem, WeightParams::new(s.lambda, s.mu)?, &s.grid, &s.u, &s.up);
    let ext = report::periodic_extend(&s, sigma)?;
    let res = report::periodic_residual(&problem, &ext)?;
    let out = cfg.out_dir();
    emit(&Artifact::Periodic(&ext), Format::Csv, &out.join("periodic.csv"))?;
    emit(&Artifact::Periodic(&ext), Format::Json, &out.join("periodic.json"))?;
    let passed = res.ode_residual <= 10.0 * base.ode_residual.max(f64::EPSILON) && res.positivity_margin > 0.0;
    Ok(Outcome {
        code: if passed { EXIT_OK } else { EXIT_FAILURE },
        summary: json!({
            "status": if passed { "ok" } else { "residual_grew" },
            "sigma": sigma,
            "period": ext.period,
            "base_residual": base.ode_residual,
            "extended_residual": res.ode_residual,
            "out": out.display().to_string(),
        }),
    })
}

type RadialFn = std::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync>;

fn radial_coefficient(spec: &RadialSpec) -> Result<(RadialFn, Vec<f64>)> {
    match (&spec.boxes, &spec.samples) {
        (Some(boxes), None) => {
            let boxes: Vec<Piece> = boxes.clone();
            let breaks = boxes.iter().flat_map(|p| [p.from, p.to]).collect();
            let f = move |r: f64| boxes.iter().filter(|p| p.from <= r && r < p.to).map(|p| p.value).sum();
            Ok((std::sync::Arc::new(f), breaks))
        }
        (None, Some(s)) => {
            if s.len() < 2 || s.windows(2).any(|w| !(w[0][0] < w[1][0])) {
                return Err(Error::Config("radial.samples needs increasing r".into()));
            }
            let pts = s.clone();
            let breaks = pts.iter().map(|p| p[0]).collect();
            let f = move |r: f64| {
                let i = pts.partition_point(|p| p[0] <= r).clamp(1, pts.len() - 1);
                let (a, b) = (pts[i - 1], pts[i]);
                a[1] + (b[1] - a[1]) * ((r - a[0]) / (b[0] - a[0])).clamp(0.0, 1.0)
            };
            Ok((std::sync::Arc::new(f), breaks))
        }
        _ => Err(Error::Config("radial takes exactly one of boxes or samples".into())),
    }
}

pub fn cmd_radial_reduce(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg
        .radial
        .as_ref()
        .ok_or_else(|| Error::Config("radial-reduce needs a radial section".into()))?;
    if spec.points < 2 {
        return Err(Error::Config("radial.points must be at least 2".into()));
    }
    let (a, r_breaks) = radial_coefficient(spec)?;
    let red = report::radial_reduce(spec.dim, spec.r1, spec.r2, move |r| a(r))?;
    let n = spec.points - 1;
    let ts: Vec<f64> = (0..=n).map(|i| red.t_red * i as f64 / n as f64).collect();
    let mut csv = String::from("t,r,b\n");
    for &t in &ts {
        csv.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", t, red.r_of_t(t), red.b(t)));
    }
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let path = out.join("radial_weight.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;

    // A single + to - sign change of b gives a reduced weight of the solver's form.
    let signs: Vec<i8> = ts
        .iter()
        .map(|&t| red.b(t))
        .map(|b| {
            if b > 0.0 {
                1
            } else if b < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect();
    let nonzero: Vec<(usize, i8)> = signs.iter().copied().enumerate().filter(|&(_, s)| s != 0).collect();
    let changes: Vec<usize> = nonzero
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| w[0].0)
        .collect();
    let tau = match (changes.as_slice(), nonzero.first()) {
        ([i], Some(&(_, 1))) => {
            let (lo, hi) = (ts[*i], ts[*i + 1]);
            let b = |t: f64| red.b(t);
            let (a, c) = optim::bisect(b, lo, hi, 1e-14 * red.t_red.max(1.0), 200);
            Some(0.5 * (a + c))
        }
        _ => None,
    };
    let mut summary = json!({
        "status": "ok",
        "dim": spec.dim,
        "r1": spec.r1,
        "r2": spec.r2,
        "t_red": red.t_red,
        "tau": tau,
        "weight": path.display().to_string(),
    });
    if let Some(tau) = tau {
        let breaks: Vec<f64> = r_breaks
            .iter()
            .filter(|&&r| r > spec.r1 && r < spec.r2)
            .map(|&r| red.t_of_r(r))
            .collect();
        let w = red.weight(tau, breaks)?;
        let (ap, am) = w.integrals();
        summary["plus_integral"] = json!(ap);
        summary["minus_integral"] = json!(am);
    }
    Ok(Outcome { code: EXIT_OK, summary })
}
