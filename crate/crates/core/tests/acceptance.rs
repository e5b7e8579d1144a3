//! Acceptance criteria on the reference instance: `g(u) = u²/(1+u³)`,
//! `T = 2`, `τ = 1`, unit boxes, so `μ₀(λ) = λ`.
//!
//! All criteria run sequentially inside one test so that their runtimes are
//! measured without contention. Each prints one PASS/FAIL line.

use std::io::Write as _;
use std::process::Command;
use std::time::{Duration, Instant};

use nbvp::ivp::{self, IvpOptions, OriginalState, Sampling};
use nbvp::region::{self, BoundarySearch, MuPlus};
use nbvp::report;
use nbvp::shooting::BracketSpec;
use nbvp::weight::EpsGrid;
use nbvp::{ChangeOfVariables, Nonlinearity, Problem, SolutionProfile, Weight, WeightParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Ledger {
    failures: Vec<String>,
}

impl Ledger {
    fn run(&mut self, id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let res = f();
        let took = start.elapsed();
        let (ok, detail) = match res {
            Ok(d) if took <= limit => (true, d),
            Ok(d) => (false, format!("{d}; too slow")),
            Err(d) => (false, d),
        };
        let line = format!(
            "criterion {id:>2} {}: {name} [{:.2}s / {}s] {detail}",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs()
        );
        // bypass the test harness capture so the lines always show
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
        if !ok {
            self.failures.push(line);
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn g(u: f64) -> f64 {
    u * u / (1.0 + u * u * u)
}

/// `W(u) = ∫_u^1 ds / g(s) = 1/u − u²/2 − 1/2`.
fn w_exact(u: f64) -> f64 {
    1.0 / u - 0.5 * u * u - 0.5
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Random pairs with `λ ∈ [0.2, 30]` and `μ ∈ [0.1 μ₀, 10 μ₀]`.
fn random_pairs(seed: u64, n: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let l: f64 = rng.gen_range(0.2..30.0);
            (l, l * 10f64.powf(rng.gen_range(-1.0..1.0)))
        })
        .collect()
}

fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while b - a > 1e-10 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    0.5 * (a + b)
}

fn c1_change_of_variables() -> Outcome {
    let c = ChangeOfVariables::new(Nonlinearity::reference()).map_err(|e| e.to_string())?;
    let w1 = c.eval_w(1.0).unwrap();
    let w2 = c.eval_w(2.0).unwrap();
    check(w1.abs() < 1e-14 && (w2 + 2.0).abs() < 1e-13, || {
        format!("W(1) = {w1}, W(2) = {w2}")
    })?;
    let mut worst = 0.0f64;
    for u in log_grid(1e-6, 1e6, 200) {
        let x = c.eval_w(u).unwrap();
        check((x - w_exact(u)).abs() <= 1e-12 * x.abs().max(1.0), || {
            format!("W({u}) = {x}")
        })?;
        let back = c.invert_w(x).unwrap();
        worst = worst.max((back - u).abs() / u);
    }
    check(worst <= 1e-8, || format!("round trip error {worst:e}"))?;
    let d = w_exact(2f64.cbrt()).abs();
    check((d - 0.5).abs() < 1e-14 && (c.d() - d).abs() < 1e-12, || {
        format!("d = {}", c.d())
    })?;
    let mut sampled = 0;
    for s in log_grid(1e-6, 1e6, 400) {
        for x in [d + s, -(d + s)] {
            if let Ok(h) = c.eval_h(x) {
                sampled += 1;
                check(h * x > 0.0, || format!("h({x}) = {h}"))?;
            }
        }
    }
    check(sampled > 600, || format!("only {sampled} h samples inside the table"))?;
    Ok(format!(
        "round trip {worst:.1e}, d = {:.15}, {sampled} h samples",
        c.d()
    ))
}

fn c2_med_identity(pr: &Problem) -> Outcome {
    let mut worst = 0.0f64;
    let mut total = 0;
    for (l, m) in random_pairs(2, 20) {
        let sols = pr.solve_bvp(l, m).map_err(|e| format!("({l}, {m}): {e}"))?;
        for s in &sols {
            let rep = report::verify_solution(pr, s, 1e-6).unwrap();
            // independent check of the identity by the trapezoid rule
            let mut lhs = 0.0;
            for i in 1..s.grid.len() {
                let h = s.grid[i] - s.grid[i - 1];
                let f = |k: usize| {
                    let y = s.up[k] / g(s.u[k]);
                    let u = s.u[k];
                    let gp = u * (2.0 - u * u * u) / (1.0 + u * u * u).powi(2);
                    y * y * gp
                };
                lhs += 0.5 * h * (f(i) + f(i - 1));
            }
            let mean = l * 1.0 - m * 1.0;
            check((lhs + mean).abs() < 1e-5 * (1.0 + mean.abs()), || {
                format!("({l}, {m}) u0 = {}: trapezoid identity off by {:e}", s.u0(), lhs + mean)
            })?;
            worst = worst.max(rep.med_residual);
            total += 1;
            check(rep.med_residual < 1e-6, || {
                format!("({l}, {m}) u0 = {}: med {:e}", s.u0(), rep.med_residual)
            })?;
        }
    }
    check(total > 0, || "no solutions at all".into())?;
    Ok(format!("{total} solutions, max med residual {worst:.2e}"))
}

fn c3_local_picture(pr: &Problem) -> Outcome {
    let n1 = pr.solve_bvp(1.0, 1.0).map_err(|e| e.to_string())?.len();
    check(n1 >= 1, || "no solution at (1, 1)".into())?;
    let b = region::mu_boundaries(pr, 1.0, &BoundarySearch::default()).map_err(|e| e.to_string())?;
    let mu_plus = match b.mu_plus {
        MuPlus::Finite(v) => v,
        MuPlus::Infinite => return Err("mu_plus infinite at lambda = 1".into()),
    };
    check(0.0 < b.mu_minus && b.mu_minus < 1.0 && 1.0 < mu_plus, || {
        format!("{b:?}")
    })?;
    let delta = 0.05 * (1.0 - b.mu_minus).min(mu_plus - 1.0);
    let lo = pr.solve_bvp(1.0, 1.0 - delta).map_err(|e| e.to_string())?.len();
    let hi = pr.solve_bvp(1.0, 1.0 + delta).map_err(|e| e.to_string())?.len();
    check(lo >= 2 && hi >= 2, || format!("counts {lo}, {hi} at 1 -/+ {delta}"))?;
    Ok(format!(
        "mu- = {:.4}, mu+ = {:.4}, counts {n1} / {lo} / {hi} at delta = {delta:.4}",
        b.mu_minus, mu_plus
    ))
}

fn c4_nonexistence(pr: &Problem) -> Outcome {
    let grid = pr.default_oracle_grid();
    check(grid.len() == 2048, || format!("oracle grid has {} nodes", grid.len()))?;
    let mut parts = Vec::new();
    for mu in [1e-3, 1e3] {
        let n = pr.solve_bvp(1.0, mu).map_err(|e| e.to_string())?.len();
        let o = pr.full_shooting_oracle(1.0, mu, &grid).map_err(|e| e.to_string())?;
        check(n == 0 && o.count == 0, || {
            format!("mu = {mu}: solver {n}, oracle {}", o.count)
        })?;
        parts.push(format!("mu = {mu:e}: 0 / 0"));
    }
    Ok(parts.join(", "))
}

fn c5_lambda_star(pr: &Problem) -> Outcome {
    let ls = pr
        .weight()
        .lambda_star(pr.nonlinearity(), &EpsGrid::default())
        .map_err(|e| e.to_string())?;
    // with a⁺ ≡ 1 on [0, 1] and g increasing on [ε, 1]: (1 + ε³) / (ε³ (1 − ε))
    let f = |e: f64| (1.0 + e.powi(3)) / (e.powi(3) * (1.0 - e));
    let e_opt = golden(f, 1e-3, 0.999);
    let oracle = f(e_opt);
    check(
        (ls.lambda_star - oracle).abs() <= 0.1 && (oracle - 13.05).abs() <= 0.1,
        || format!("lambda* = {}, golden = {oracle}", ls.lambda_star),
    )?;
    let mut counts = Vec::new();
    for lambda in [14.0, 20.0, 30.0] {
        let gap = pr
            .blowup_interval(lambda, BracketSpec::from_settings(pr.settings()))
            .map_err(|e| e.to_string())?;
        check(gap.is_some(), || format!("no blow-up interval at lambda = {lambda}"))?;
        let mu = 10.0 * pr.weight().mu0(lambda).unwrap();
        let n = pr.solve_bvp(lambda, mu).map_err(|e| e.to_string())?.len();
        check(n >= 2, || format!("{n} solutions at ({lambda}, {mu})"))?;
        counts.push(n);
    }
    Ok(format!(
        "lambda* = {:.4} (golden {oracle:.4}), counts {counts:?}",
        ls.lambda_star
    ))
}

fn c6_tails(pr: &Problem) -> Outcome {
    let c = pr.change_of_variables();
    let mut worst = 0.0f64;
    for u0 in [1e-5, 1e5] {
        let x0 = c.eval_w(u0).unwrap();
        let f = pr.forward_curve(1.0, &[x0]).map_err(|e| e.to_string())?;
        let b = pr.backward_curve(1.0, &[x0]).map_err(|e| e.to_string())?;
        let (yf, yb) = (f.nodes[0].end.y, b.nodes[0].end.y);
        check((yf - 1.0).abs() < 0.1 && (yb - 1.0).abs() < 0.1, || {
            format!("u0 = {u0}: y+ = {yf}, y- = {yb}")
        })?;
        worst = worst.max((yf - 1.0).abs()).max((yb - 1.0).abs());
    }
    Ok(format!("max |y(tau) - 1| = {worst:.2e}"))
}

fn pair_up(a: &[SolutionProfile], b: &[SolutionProfile]) -> f64 {
    a.iter()
        .map(|s| b.iter().map(|o| s.sup_distance(o)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

fn c7_oracle_equivalence(pr: &Problem) -> Outcome {
    let grid = pr.default_oracle_grid();
    let mut worst = 0.0f64;
    let mut total = 0;
    for (l, m) in random_pairs(7, 20) {
        let s = pr.solve_bvp(l, m).map_err(|e| format!("({l}, {m}): {e}"))?;
        let o = pr
            .full_shooting_oracle(l, m, &grid)
            .map_err(|e| format!("({l}, {m}): {e}"))?;
        check(s.len() == o.count, || {
            format!("({l}, {m}): solver {}, oracle {}", s.len(), o.count)
        })?;
        let d = pair_up(&s, &o.solutions).max(pair_up(&o.solutions, &s));
        check(d <= 1e-5, || format!("({l}, {m}): sup distance {d:e}"))?;
        worst = worst.max(d);
        total += s.len();
    }
    Ok(format!("{total} solutions matched, max sup distance {worst:.2e}"))
}

fn c8_conjugacy() -> Outcome {
    let c = ChangeOfVariables::new(Nonlinearity::reference()).unwrap();
    let n = c.nonlinearity().clone();
    let w = Weight::reference();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let checkpoints: Vec<f64> = (1..=20).map(|i| 0.1 * i as f64).collect();
    let opts = IvpOptions::default()
        .with_tolerances(1e-11, 1e-13)
        .with_sampling(Sampling::Times(checkpoints.clone()));
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut tries = 0;
    while done < 10 {
        tries += 1;
        check(tries < 200, || "could not draw 10 positive trajectories".into())?;
        let u0 = 10f64.powf(rng.gen_range(-1.0..1.0));
        let up0 = rng.gen_range(-0.5..0.5) * g(u0);
        let p = WeightParams::new(rng.gen_range(0.5..5.0), rng.gen_range(0.5..5.0)).unwrap();
        let s0 = OriginalState { t: 0.0, u: u0, up: up0 };
        let orig = ivp::integrate_original(&n, &w, p, s0, 2.0, &opts).map_err(|e| e.to_string())?;
        if !orig.termination.reached() {
            continue;
        }
        let z0 = ivp::transform_state(&c, s0).unwrap();
        let plan = ivp::integrate_planar(&c, &w, p, z0, 2.0, &opts).map_err(|e| e.to_string())?;
        check(plan.termination.reached(), || {
            format!("planar run stopped: {:?}", plan.termination)
        })?;
        let os = orig.original_states();
        let ps = plan.planar_states();
        for &t in &checkpoints {
            let a = os.iter().find(|s| s.t == t).ok_or("missing original checkpoint")?;
            let b = ps.iter().find(|s| s.t == t).ok_or("missing planar checkpoint")?;
            let img = ivp::transform_state(&c, *a).unwrap();
            let scale = 1.0f64.max(img.x.abs()).max(img.y.abs());
            let err = (img.x - b.x).abs().max((img.y - b.y).abs()) / scale;
            check(err <= 1e-6, || format!("u0 = {u0}, t = {t}: mismatch {err:e}"))?;
            worst = worst.max(err);
        }
        done += 1;
    }
    Ok(format!("10 trajectories x 20 checkpoints, max mismatch {worst:.2e}"))
}

fn c9_radial_and_periodic(pr: &Problem) -> Outcome {
    let n = Nonlinearity::reference();
    let mut parts = Vec::new();
    for dim in [2u32, 3] {
        let (r1, r2) = (1.0, 2.0);
        let k = dim as f64 - 2.0;
        let t_of_r = move |r: f64| {
            if dim == 2 {
                (r / r1).ln()
            } else {
                (r1.powf(-k) - r.powf(-k)) / k
            }
        };
        let t_red = t_of_r(r2);
        // v(t) = 2 + cos(πt/T)/2 has v'(0) = v'(T) = 0; b = −v''/g(v)
        let om = std::f64::consts::PI / t_red;
        let v = move |t: f64| 2.0 + 0.5 * (om * t).cos();
        let vp = move |t: f64| -0.5 * om * (om * t).sin();
        let b = move |t: f64| 0.5 * om * om * (om * t).cos() / g(v(t));
        let a = move |r: f64| b(t_of_r(r)) / r.powi(2 * (dim as i32 - 1));
        let red = report::radial_reduce(dim, r1, r2, a).map_err(|e| e.to_string())?;
        check((red.t_red - t_red).abs() < 1e-14, || format!("T_red = {}", red.t_red))?;
        let m = 4000;
        let grid: Vec<f64> = (0..=m).map(|i| t_red * i as f64 / m as f64).collect();
        let vs: Vec<f64> = grid.iter().map(|&t| v(t)).collect();
        let vps: Vec<f64> = grid.iter().map(|&t| vp(t)).collect();
        let res = report::residuals_with(&n, &red, &grid, &vs, &vps);
        check(res.ode_residual < 1e-6, || {
            format!("dim {dim}: reduced residual {:e}", res.ode_residual)
        })?;
        // the annulus equation 𝒰'' + (d − 1)/r 𝒰' + A g(𝒰) = 0 on the back-mapped profile
        let prof = red.back_map(&grid, &vs, &vps);
        let mut worst = 0.0f64;
        for i in 1..grid.len() - 1 {
            let (r0, r, rr) = (prof.r[i - 1], prof.r[i], prof.r[i + 1]);
            let urr = (prof.ur[i + 1] - prof.ur[i - 1]) / (rr - r0);
            let e = urr + (dim as f64 - 1.0) / r * prof.ur[i] + a(r) * g(prof.u[i]);
            worst = worst.max(e.abs());
        }
        check(worst < 1e-4, || {
            format!("dim {dim}: radial equation residual {worst:e}")
        })?;
        parts.push(format!("dim {dim}: {:.1e} / radial {worst:.1e}", res.ode_residual));
    }
    for (l, m) in [(1.0, 1.0), (1.0, 1.5)] {
        for s in pr.solve_bvp(l, m).map_err(|e| e.to_string())? {
            let base = report::residuals(pr, WeightParams::new(l, m).unwrap(), &s.grid, &s.u, &s.up);
            for sigma in [0.0, 0.5, -2.0] {
                let ext = report::periodic_extend(&s, sigma).map_err(|e| e.to_string())?;
                let r = report::periodic_residual(pr, &ext).map_err(|e| e.to_string())?;
                check(
                    r.ode_residual <= 10.0 * base.ode_residual && r.med_residual <= 10.0 * base.med_residual.max(1e-15),
                    || {
                        format!(
                            "({l}, {m}) sigma {sigma}: {:e} vs base {:e}",
                            r.ode_residual, base.ode_residual
                        )
                    },
                )?;
            }
        }
    }
    parts.push("periodic within 10x".into());
    Ok(parts.join(", "))
}

fn c10_region_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("region.json");
    std::fs::write(
        &cfg,
        r#"{"lambda_grid": {"from": 0.2, "to": 30, "count": 10},
            "mu_grid": {"from": 0.1, "to": 300, "count": 20}}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut csvs = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = Command::new(env!("CARGO_BIN_EXE_nbvp"))
            .args([
                "region",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .env("NBVP_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        check(o.status.success(), || {
            format!("threads {threads}: {}", String::from_utf8_lossy(&o.stderr))
        })?;
        csvs.push(std::fs::read(out.join("region.csv")).map_err(|e| e.to_string())?);
    }
    check(csvs[0] == csvs[1], || {
        "region CSVs differ between 1 and 8 threads".into()
    })?;
    let text = String::from_utf8_lossy(&csvs[0]);
    let rows = text.lines().count() - 1;
    let cols = text.lines().next().map_or(0, |h| h.split(',').count());
    check(rows == 10 && cols == 20, || format!("{rows} x {cols} matrix"))?;
    Ok(format!("{rows}x{cols} CSV byte-identical ({} bytes)", csvs[0].len()))
}

#[test]
fn acceptance_criteria() {
    let pr = Problem::reference();
    let mut l = Ledger { failures: Vec::new() };
    let s = Duration::from_secs;
    l.run(1, "change of variables", s(1), c1_change_of_variables);
    l.run(2, "med identity on random pairs", s(30), || c2_med_identity(&pr));
    l.run(3, "local picture at lambda = 1", s(60), || c3_local_picture(&pr));
    l.run(4, "nonexistence at extreme mu", s(60), || c4_nonexistence(&pr));
    l.run(5, "lambda* and the unbounded regime", s(90), || c5_lambda_star(&pr));
    l.run(6, "tail asymptotics", s(5), || c6_tails(&pr));
    l.run(7, "oracle equivalence", s(300), || c7_oracle_equivalence(&pr));
    l.run(8, "conjugacy of the two frames", s(10), c8_conjugacy);
    l.run(9, "radial reduction and periodic extension", s(5), || {
        c9_radial_and_periodic(&pr)
    });
    l.run(10, "region map determinism", s(300), c10_region_determinism);
    assert!(l.failures.is_empty(), "failed:\n{}", l.failures.join("\n"));
}
