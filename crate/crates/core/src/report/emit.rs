use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::ivp::{Frame, Trajectory};
use crate::region::RegionMap;
use crate::report::{PeriodicProfile, VerificationReport};
use crate::shooting::{Intersection, NodeStatus, ShootingCurve, SolutionProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

pub enum Artifact<'a> {
    Trajectory(&'a Trajectory),
    Curve(&'a ShootingCurve),
    CurvePair {
        fwd: &'a ShootingCurve,
        bwd: &'a ShootingCurve,
        intersections: &'a [Intersection],
    },
    Solution(&'a SolutionProfile),
    Periodic(&'a PeriodicProfile),
    Region(&'a RegionMap),
    Report(&'a VerificationReport),
}

impl Artifact<'_> {
    fn name(&self) -> &'static str {
        match self {
            Artifact::Trajectory(_) => "trajectory",
            Artifact::Curve(_) => "shooting curve",
            Artifact::CurvePair { .. } => "curve pair",
            Artifact::Solution(_) => "solution profile",
            Artifact::Periodic(_) => "periodic profile",
            Artifact::Region(_) => "region map",
            Artifact::Report(_) => "verification report",
        }
    }
}

/// 17 significant digits.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_rows(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn status_str(s: NodeStatus) -> &'static str {
    match s {
        NodeStatus::Ok => "ok",
        NodeStatus::BlownUp => "blown_up",
    }
}

fn curve_csv(c: &ShootingCurve) -> String {
    csv_rows(
        &["x0", "x_tau", "y_tau", "status"],
        c.nodes
            .iter()
            .map(|n| vec![num(n.x0), num(n.end.x), num(n.end.y), status_str(n.status).to_string()]),
    )
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::numeric(format!("serialisation failed: {e}")))
}

fn solution_meta(s: &SolutionProfile) -> Value {
    json!({
        "lambda": s.lambda,
        "mu": s.mu,
        "u0": s.u0(),
        "u_min": s.u.iter().copied().fold(f64::INFINITY, f64::min),
        "u_max": s.u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "points": s.grid.len(),
        "diagnostics": s.diagnostics,
    })
}

/// Renders an artifact to text.
pub fn render(artifact: &Artifact<'_>, format: Format) -> Result<String> {
    match (artifact, format) {
        (Artifact::Trajectory(t), Format::Csv) => {
            let header: &[&str] = match t.frame {
                Frame::Original => &["t", "u", "up"],
                Frame::Planar => &["t", "x", "y"],
            };
            Ok(csv_rows(
                header,
                t.times
                    .iter()
                    .zip(&t.values)
                    .map(|(t, v)| vec![num(*t), num(v[0]), num(v[1])]),
            ))
        }
        (Artifact::Trajectory(t), Format::Json) => to_json(t),
        (Artifact::Curve(c), Format::Csv) => Ok(curve_csv(c)),
        (Artifact::Curve(c), Format::Json) => to_json(c),
        (
            Artifact::CurvePair {
                fwd,
                bwd,
                intersections,
            },
            Format::Svg,
        ) => Ok(svg::curves(fwd, bwd, intersections)),
        (
            Artifact::CurvePair {
                fwd,
                bwd,
                intersections,
            },
            Format::Json,
        ) => to_json(&json!({ "forward": fwd, "backward": bwd, "intersections": intersections })),
        (Artifact::Solution(s), Format::Csv) => Ok(csv_rows(
            &["t", "u", "up"],
            s.grid
                .iter()
                .zip(&s.u)
                .zip(&s.up)
                .map(|((t, u), up)| vec![num(*t), num(*u), num(*up)]),
        )),
        (Artifact::Solution(s), Format::Json) => to_json(&solution_meta(s)),
        (Artifact::Periodic(p), Format::Csv) => Ok(csv_rows(
            &["t", "u", "up"],
            p.grid
                .iter()
                .zip(&p.u)
                .zip(&p.up)
                .map(|((t, u), up)| vec![num(*t), num(*u), num(*up)]),
        )),
        (Artifact::Periodic(p), Format::Json) => to_json(&json!({
            "sigma": p.sigma, "period": p.period, "lambda": p.lambda, "mu": p.mu, "points": p.grid.len()
        })),
        (Artifact::Region(m), Format::Csv) => {
            let header: Vec<String> = m.mu_grid.iter().map(|&v| num(v)).collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            Ok(csv_rows(
                &header,
                m.counts.iter().map(|row| row.iter().map(|c| c.to_string()).collect()),
            ))
        }
        (Artifact::Region(m), Format::Json) => to_json(m),
        (Artifact::Region(m), Format::Svg) => Ok(svg::region(m)),
        (Artifact::Report(r), Format::Json) => to_json(r),
        (Artifact::Report(r), Format::Csv) => Ok(csv_rows(
            &[
                "ode_residual",
                "bc_residual",
                "med_residual",
                "positivity_margin",
                "passed",
            ],
            std::iter::once(vec![
                num(r.ode_residual),
                num(r.bc_residual),
                num(r.med_residual),
                num(r.positivity_margin),
                r.all_passed().to_string(),
            ]),
        )),
        (a, f) => Err(Error::Unsupported(format!("{} cannot be written as {f:?}", a.name()))),
    }
}

/// Writes an artifact to `path`. Output is deterministic.
pub fn emit(artifact: &Artifact<'_>, format: Format, path: &Path) -> Result<()> {
    let text = render(artifact, format)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

mod svg {
    use super::*;

    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 56.0;

    /// `sign(v) log10(1 + |v|)`: readable over many decades, finite at 0.
    fn symlog(v: f64) -> f64 {
        v.signum() * v.abs().ln_1p() / std::f64::consts::LN_10
    }

    struct Frame {
        x: (f64, f64),
        y: (f64, f64),
    }

    impl Frame {
        fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
            let mut x = (f64::INFINITY, f64::NEG_INFINITY);
            let mut y = (f64::INFINITY, f64::NEG_INFINITY);
            for (a, b) in points.filter(|p| p.0.is_finite() && p.1.is_finite()) {
                x = (x.0.min(a), x.1.max(a));
                y = (y.0.min(b), y.1.max(b));
            }
            let fix = |r: (f64, f64)| {
                if !r.0.is_finite() {
                    (0.0, 1.0)
                } else if r.1 - r.0 < 1e-12 {
                    (r.0 - 0.5, r.1 + 0.5)
                } else {
                    r
                }
            };
            Frame { x: fix(x), y: fix(y) }
        }

        fn px(&self, v: f64) -> f64 {
            PAD + (v - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
        }

        fn py(&self, v: f64) -> f64 {
            H - PAD - (v - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
        }
    }

    fn header(s: &mut String, title: &str) {
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0);
    }

    fn axes(s: &mut String, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#,
            W / 2.0,
            H - 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
            H / 2.0,
            H / 2.0
        );
    }

    fn polyline(s: &mut String, f: &Frame, pts: &[(f64, f64)], style: &str) {
        if pts.len() < 2 {
            return;
        }
        let mut d = String::new();
        for (a, b) in pts {
            let _ = write!(d, "{:.2},{:.2} ", f.px(*a), f.py(*b));
        }
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" {style}/>"#, d.trim_end());
    }

    pub fn curves(fwd: &ShootingCurve, bwd: &ShootingCurve, hits: &[Intersection]) -> String {
        let tr = |x: f64, y: f64| (symlog(x), symlog(y));
        let fwd_branches: Vec<Vec<(f64, f64)>> = fwd
            .branches()
            .iter()
            .map(|b| b.iter().map(|n| tr(n.end.x, n.end.y)).collect())
            .collect();
        let bwd_pts: Vec<(f64, f64)> = bwd.nodes.iter().map(|n| tr(n.end.x, n.end.y)).collect();
        let frame = Frame::fit(fwd_branches.iter().flatten().chain(bwd_pts.iter()).copied());
        let mut s = String::new();
        header(&mut s, "shooting curves at t = tau (symlog axes)");
        axes(&mut s, "x (symlog)", "y (symlog)");
        for b in &fwd_branches {
            polyline(
                &mut s,
                &frame,
                b,
                r##"stroke="#c0392b" stroke-width="1.5" stroke-dasharray="6 4" class="forward""##,
            );
        }
        polyline(
            &mut s,
            &frame,
            &bwd_pts,
            r##"stroke="#1f4e79" stroke-width="1.5" class="backward""##,
        );
        for h in hits {
            let (a, b) = tr(h.point.x, h.point.y);
            if a.is_finite() && b.is_finite() {
                let _ = writeln!(
                    s,
                    r#"<circle class="intersection" cx="{:.2}" cy="{:.2}" r="4" fill="black"/>"#,
                    frame.px(a),
                    frame.py(b)
                );
            }
        }
        let _ = writeln!(
            s,
            r##"<text x="{}" y="40" fill="#c0392b">forward (dashed)</text>"##,
            PAD + 8.0
        );
        let _ = writeln!(
            s,
            r##"<text x="{}" y="40" fill="#1f4e79">backward (solid)</text>"##,
            PAD + 160.0
        );
        s.push_str("</svg>\n");
        s
    }

    pub fn region(m: &RegionMap) -> String {
        let lx: Vec<f64> = m.lambda_grid.iter().map(|v| v.log10()).collect();
        let ly: Vec<f64> = m.mu_grid.iter().map(|v| v.log10()).collect();
        // cell edges halfway between grid points in log scale
        let edges = |v: &[f64]| -> Vec<f64> {
            if v.is_empty() {
                return Vec::new();
            }
            if v.len() == 1 {
                return vec![v[0] - 0.5, v[0] + 0.5];
            }
            let mut e = vec![v[0] - 0.5 * (v[1] - v[0])];
            for w in v.windows(2) {
                e.push(0.5 * (w[0] + w[1]));
            }
            e.push(v[v.len() - 1] + 0.5 * (v[v.len() - 1] - v[v.len() - 2]));
            e
        };
        let ex = edges(&lx);
        let ey = edges(&ly);
        let frame = Frame::fit(
            ex.first()
                .zip(ey.first())
                .map(|(a, b)| (*a, *b))
                .into_iter()
                .chain(ex.last().zip(ey.last()).map(|(a, b)| (*a, *b))),
        );
        let mut s = String::new();
        header(&mut s, "solution counts (log axes)");
        for (i, row) in m.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                let fill = match c {
                    c if c < 0 => "#9e9e9e",
                    0 => "#f7f7f7",
                    1 => "#9ecae1",
                    _ => "#08519c",
                };
                let (x0, x1) = (frame.px(ex[i]), frame.px(ex[i + 1]));
                let (y0, y1) = (frame.py(ey[j + 1]), frame.py(ey[j]));
                let _ = writeln!(
                    s,
                    r#"<rect class="cell" x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{fill}"><title>{c}</title></rect>"#,
                    x1 - x0,
                    y1 - y0
                );
            }
        }
        axes(&mut s, "lambda (log)", "mu (log)");
        let line: Vec<(f64, f64)> = m
            .lambda_grid
            .iter()
            .zip(&m.mu0_line)
            .map(|(l, m)| (l.log10(), m.log10()))
            .collect();
        polyline(&mut s, &frame, &line, r#"stroke="black" stroke-width="2" class="mu0""#);
        for b in m.boundaries.iter().flatten() {
            let x = frame.px(b.lambda.log10());
            let _ = writeln!(
                s,
                r#"<circle class="mu-minus" cx="{x:.2}" cy="{:.2}" r="3" fill="orange"/>"#,
                frame.py(b.mu_minus.log10())
            );
            if b.mu_plus.is_infinite() {
                let _ = writeln!(
                    s,
                    r#"<text class="mu-plus-inf" x="{x:.2}" y="{:.2}" text-anchor="middle">∞</text>"#,
                    PAD - 4.0
                );
            } else {
                let _ = writeln!(
                    s,
                    r#"<circle class="mu-plus" cx="{x:.2}" cy="{:.2}" r="3" fill="red"/>"#,
                    frame.py(b.mu_plus.value().log10())
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}
