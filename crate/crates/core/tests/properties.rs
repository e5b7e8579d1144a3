use nbvp::ivp::{self, IvpOptions, OriginalState, Sampling, Termination};
use nbvp::quad;
use nbvp::report;
use nbvp::shooting::BracketSpec;
use nbvp::weight::{EpsGrid, Profile};
use nbvp::{ChangeOfVariables, Nonlinearity, Problem, Settings, Weight, WeightParams};
use proptest::prelude::*;
use std::sync::OnceLock;

fn cov() -> &'static ChangeOfVariables {
    static C: OnceLock<ChangeOfVariables> = OnceLock::new();
    C.get_or_init(|| ChangeOfVariables::new(Nonlinearity::reference()).unwrap())
}

fn problem() -> &'static Problem {
    static P: OnceLock<Problem> = OnceLock::new();
    P.get_or_init(Problem::reference)
}

fn log_u(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.log10()..hi.log10()).prop_map(|e| 10f64.powf(e))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn w_is_strictly_decreasing(a in log_u(1e-6, 1e6), b in log_u(1e-6, 1e6)) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let c = cov();
        prop_assert!(c.eval_w(lo).unwrap() > c.eval_w(hi).unwrap());
    }

    #[test]
    fn w_round_trip(u in log_u(1e-6, 1e6)) {
        let c = cov();
        let back = c.invert_w(c.eval_w(u).unwrap()).unwrap();
        prop_assert!((back - u).abs() <= 1e-8 * u, "u = {u}, back = {back}");
    }

    #[test]
    fn g_prime_matches_finite_difference(u in log_u(1e-3, 1e3)) {
        let n = Nonlinearity::reference();
        let h = 1e-5 * u;
        let fd = (n.eval_g(u + h).unwrap() - n.eval_g(u - h).unwrap()) / (2.0 * h);
        let exact = n.eval_g_prime(u).unwrap();
        prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-12), "u = {u}: {fd} vs {exact}");
    }

    #[test]
    fn w_derivative_is_minus_reciprocal_g(u in log_u(1e-3, 1e3)) {
        let c = cov();
        let h = 1e-5 * u;
        let fd = (c.eval_w(u + h).unwrap() - c.eval_w(u - h).unwrap()) / (2.0 * h);
        let exact = -1.0 / Nonlinearity::reference().eval_g(u).unwrap();
        prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs(), "u = {u}: {fd} vs {exact}");
    }

    #[test]
    fn h_points_away_from_the_core(x in 0.0f64..1e3, neg in any::<bool>()) {
        let c = cov();
        let x = if neg { -(c.d() + 1e-6 + x) } else { c.d() + 1e-6 + x };
        let (u_lo, u_hi) = c.table_range();
        prop_assume!(x < c.eval_w(u_lo).unwrap() && x > c.eval_w(u_hi).unwrap());
        prop_assert!(c.eval_h(x).unwrap() * x > 0.0, "x = {x}");
    }

    #[test]
    fn mean_identity(ap in 0.1f64..5.0, am in 0.1f64..5.0, tau in 0.2f64..1.8, lambda in 0.1f64..50.0, k in 0.1f64..10.0) {
        let w = Weight::two_step(2.0, tau, ap, am).unwrap();
        let (ip, im) = w.integrals();
        prop_assert!((ip - ap * tau).abs() < 1e-12 && (im - am * (2.0 - tau)).abs() < 1e-12);
        let mu = k * w.mu0(lambda).unwrap();
        let mean = w.mean_integral(WeightParams::new(lambda, mu).unwrap());
        prop_assert!((mean - (lambda * ip - mu * im)).abs() < 1e-10 * (1.0 + lambda * ip));
        let at_mu0 = w.mean_integral(WeightParams::new(lambda, w.mu0(lambda).unwrap()).unwrap());
        prop_assert!(at_mu0.abs() < 1e-12 * (1.0 + lambda * ip));
        if k > 1.0 + 1e-9 { prop_assert!(mean < 0.0); }
        if k < 1.0 - 1e-9 { prop_assert!(mean > 0.0); }
    }

    #[test]
    fn q_eval_integrates_to_the_mean(lambda in 0.1f64..20.0, mu in 0.1f64..20.0, tau in 0.3f64..1.7) {
        let w = Weight::new(
            2.0,
            tau,
            Profile::Boxes(vec![
                nbvp::weight::Piece { from: 0.0, to: tau / 3.0, value: 2.0 },
                nbvp::weight::Piece { from: tau / 2.0, to: tau, value: 0.5 },
            ]),
            Profile::constant(tau, 2.0, 1.5),
        )
        .unwrap();
        let p = WeightParams::new(lambda, mu).unwrap();
        // composite midpoint on a grid aligned with every jump
        let jumps = [0.0, tau / 3.0, tau / 2.0, tau, 2.0];
        let mut total = 0.0;
        for seg in jumps.windows(2) {
            let n = 64;
            let h = (seg[1] - seg[0]) / n as f64;
            for i in 0..n {
                total += h * w.q_eval(p, seg[0] + (i as f64 + 0.5) * h).unwrap();
            }
        }
        let expected = lambda * (2.0 * tau / 3.0 + 0.5 * tau / 2.0) - mu * 1.5 * (2.0 - tau);
        prop_assert!((total - expected).abs() < 1e-10, "{total} vs {expected}");
        prop_assert!((w.mean_integral(p) - expected).abs() < 1e-10);
    }

    #[test]
    fn enlarging_a_plus_never_increases_lambda_star(tau in 0.3f64..1.7, base in 0.2f64..3.0, bump in 0.0f64..3.0, cut in 0.05f64..0.95) {
        let n = Nonlinearity::reference();
        let small = Weight::two_step(2.0, tau, base, 1.0).unwrap();
        let big = Weight::new(
            2.0,
            tau,
            Profile::Boxes(vec![
                nbvp::weight::Piece { from: 0.0, to: cut * tau, value: base + bump },
                nbvp::weight::Piece { from: cut * tau, to: tau, value: base },
            ]),
            Profile::constant(tau, 2.0, 1.0),
        )
        .unwrap();
        let grid = EpsGrid::default();
        let a = small.lambda_star(&n, &grid).unwrap().lambda_star;
        let b = big.lambda_star(&n, &grid).unwrap().lambda_star;
        prop_assert!(b <= a * (1.0 + 1e-12), "{b} > {a}");
    }
}

fn forward_opts() -> IvpOptions {
    IvpOptions::default().with_sampling(Sampling::Steps)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_window_is_concave(u0 in log_u(1e-4, 1e4), lambda in 0.1f64..40.0) {
        let n = Nonlinearity::reference();
        let w = Weight::reference();
        // only a⁺ is read on [0, τ]
        let p = WeightParams::new(lambda, 1.0).unwrap();
        let tr = ivp::integrate_original(&n, &w, p, OriginalState { t: 0.0, u: u0, up: 0.0 }, 1.0, &forward_opts()).unwrap();
        let st = tr.original_states();
        let scale = u0;
        for s in &st {
            prop_assert!(s.up <= 1e-10 * scale.max(1.0));
        }
        for k in 1..st.len() - 1 {
            let (a, b, c) = (st[k - 1], st[k], st[k + 1]);
            let (h0, h1) = (b.t - a.t, c.t - b.t);
            if h0 <= 0.0 || h1 <= 0.0 {
                continue;
            }
            let second = 2.0 * (h0 * c.u - (h0 + h1) * b.u + h1 * a.u) / (h0 * h1 * (h0 + h1));
            prop_assert!(second <= 1e-8 * scale.max(1.0) / (h0.min(h1)).max(1e-3), "u'' = {second} at t = {}", b.t);
        }
    }

    #[test]
    fn backward_window_stays_above_its_endpoint(u_end in log_u(1e-4, 1e4), mu in 0.1f64..40.0) {
        let n = Nonlinearity::reference();
        let w = Weight::reference();
        // only a⁻ is read on [τ, T]
        let p = WeightParams::new(1.0, mu).unwrap();
        let tr = ivp::integrate_original(&n, &w, p, OriginalState { t: 2.0, u: u_end, up: 0.0 }, 1.0, &forward_opts()).unwrap();
        prop_assert!(matches!(tr.termination, Termination::Reached(_)));
        for s in tr.original_states() {
            prop_assert!(s.u >= u_end * (1.0 - 1e-12));
        }
    }

    #[test]
    fn halving_tolerances_converges(u0 in log_u(1e-3, 1e3), lambda in 0.2f64..20.0, mu in 0.2f64..20.0) {
        let n = Nonlinearity::reference();
        let w = Weight::reference();
        let p = WeightParams::new(lambda, mu).unwrap();
        let s0 = OriginalState { t: 0.0, u: u0, up: 0.0 };
        let coarse = IvpOptions::default().with_sampling(Sampling::EndOnly);
        let fine = coarse.clone().with_tolerances(coarse.rtol / 2.0, coarse.atol / 2.0);
        let a = ivp::integrate_original(&n, &w, p, s0, 2.0, &coarse).unwrap();
        let b = ivp::integrate_original(&n, &w, p, s0, 2.0, &fine).unwrap();
        prop_assume!(a.termination.reached() && b.termination.reached());
        let (ea, eb) = (a.last_value(), b.last_value());
        let g0 = n.eval_g(u0).unwrap();
        let tol_u = 10.0 * (fine.rtol * eb[0].abs() + fine.atol * u0);
        let tol_up = 10.0 * (fine.rtol * eb[1].abs() + fine.atol * g0.max(1e-300));
        prop_assert!((ea[0] - eb[0]).abs() <= tol_u, "u: {} vs {}", ea[0], eb[0]);
        prop_assert!((ea[1] - eb[1]).abs() <= tol_up, "u': {} vs {}", ea[1], eb[1]);
    }

    #[test]
    fn planar_image_satisfies_the_planar_system(u0 in log_u(0.05, 20.0), lambda in 0.2f64..5.0, mu in 0.2f64..5.0) {
        let c = cov();
        let n = c.nonlinearity();
        let w = Weight::reference();
        let p = WeightParams::new(lambda, mu).unwrap();
        let times: Vec<f64> = (1..40).map(|i| i as f64 * 0.05).collect();
        let opts = IvpOptions::default().with_sampling(Sampling::Times(times.clone()));
        let tr = ivp::integrate_original(n, &w, p, OriginalState { t: 0.0, u: u0, up: 0.0 }, 2.0, &opts).unwrap();
        prop_assume!(tr.termination.reached());
        let fine = IvpOptions::default().with_tolerances(1e-12, 1e-14).with_sampling(Sampling::EndOnly);
        for s in tr.original_states().into_iter().filter(|s| times.contains(&s.t)) {
            // skip the jump of the weight
            if (s.t - 1.0).abs() < 0.06 { continue; }
            let dt = 1e-4;
            let step = |t: f64| ivp::integrate_original(n, &w, p, s, t, &fine).unwrap().last_original();
            let a = ivp::transform_state(c, step(s.t - dt)).unwrap();
            let b = ivp::transform_state(c, step(s.t + dt)).unwrap();
            let m = ivp::transform_state(c, s).unwrap();
            let dx = (b.x - a.x) / (2.0 * dt);
            let dy = (b.y - a.y) / (2.0 * dt);
            let rhs_y = c.eval_h(m.x).unwrap() * m.y * m.y + w.q_eval(p, s.t).unwrap();
            let scale = 1.0 + m.y.abs() + rhs_y.abs();
            prop_assert!((dx - m.y).abs() < 1e-5 * scale, "x' at t = {}: {dx} vs {}", s.t, m.y);
            prop_assert!((dy - rhs_y).abs() < 1e-5 * scale, "y' at t = {}: {dy} vs {rhs_y}", s.t);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tails_reach_the_weight_integrals(lambda in 0.2f64..3.0, mu in 0.2f64..3.0, big in any::<bool>()) {
        let pr = problem();
        let c = pr.change_of_variables();
        let u0 = if big { 1e5 } else { 1e-5 };
        let x0 = c.eval_w(u0).unwrap();
        let f = pr.forward_curve(lambda, &[x0]).unwrap();
        let b = pr.backward_curve(mu, &[x0]).unwrap();
        let (ap, am) = pr.weight().integrals();
        prop_assert!((f.nodes[0].end.y - lambda * ap).abs() < 0.1, "forward y = {}", f.nodes[0].end.y);
        prop_assert!((b.nodes[0].end.y - mu * am).abs() < 0.1, "backward y = {}", b.nodes[0].end.y);
    }

    #[test]
    fn lambda_star_forces_a_gap(k in 1.005f64..3.0) {
        let pr = problem();
        let ls = pr.weight().lambda_star(pr.nonlinearity(), &EpsGrid::default()).unwrap().lambda_star;
        let gap = pr.blowup_interval(k * ls, BracketSpec::from_settings(pr.settings())).unwrap();
        prop_assert!(gap.is_some());
        let (a, b) = gap.unwrap();
        prop_assert!(a < b);
    }

    #[test]
    fn solutions_cross_the_critical_level_as_the_mean_requires(lambda in 0.2f64..30.0, e in -1.0f64..1.0) {
        let pr = problem();
        let mu = lambda * 10f64.powf(e);
        let (r, big_r) = (pr.nonlinearity().r(), pr.nonlinearity().big_r());
        let mu0 = pr.weight().mu0(lambda).unwrap();
        for s in pr.solve_bvp(lambda, mu).unwrap() {
            let lo = s.u.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.u.iter().copied().fold(0.0, f64::max);
            // ∫q = −∫(u'/g)² g' ties the side of the solution to the sign of the mean
            if mu >= mu0 {
                prop_assert!(lo < big_r, "solution above R at ({lambda}, {mu})");
            }
            if mu <= mu0 {
                prop_assert!(hi > r, "solution below r at ({lambda}, {mu})");
            }
        }
    }

    #[test]
    fn blowup_set_is_a_single_interval(lambda in 0.5f64..60.0) {
        let pr = problem();
        let c = pr.default_forward_curve(lambda).unwrap();
        prop_assert!(c.branches().len() <= 2);
        let blown: Vec<usize> = c
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.status == nbvp::shooting::NodeStatus::BlownUp)
            .map(|(i, _)| i)
            .collect();
        if let (Some(&a), Some(&b)) = (blown.first(), blown.last()) {
            prop_assert_eq!(b - a + 1, blown.len());
        }
    }
}

#[test]
fn doubling_the_profile_grid_keeps_residuals_in_check() {
    let coarse = problem();
    let settings = Settings {
        profile_intervals: 2 * coarse.settings().profile_intervals,
        ..coarse.settings().clone()
    };
    let fine = Problem::new(Nonlinearity::reference(), Weight::reference(), settings).unwrap();
    let tol = 1e-6;
    for (lambda, mu) in [(1.0, 1.0), (1.0, 1.5), (20.0, 200.0)] {
        let a = coarse.solve_bvp(lambda, mu).unwrap();
        let b = fine.solve_bvp(lambda, mu).unwrap();
        assert_eq!(a.len(), b.len());
        for (sa, sb) in a.iter().zip(&b) {
            let ra = report::verify_solution(coarse, sa, tol).unwrap();
            let rb = report::verify_solution(&fine, sb, tol).unwrap();
            for (x, y) in [(ra.ode_residual, rb.ode_residual), (ra.med_residual, rb.med_residual)] {
                assert!(
                    (y - x).abs() < 0.5 * x || (x < tol && y < tol),
                    "({lambda}, {mu}): {x} -> {y}"
                );
            }
        }
    }
}

#[test]
fn simpson_converges_at_fourth_order() {
    let f = |t: f64| (3.0 * t).sin() + t * t;
    let exact = (1.0 - 6f64.cos()) / 3.0 + 8.0 / 3.0;
    let err = |n: usize| {
        let x: Vec<f64> = (0..=n).map(|i| 2.0 * i as f64 / n as f64).collect();
        let y: Vec<f64> = x.iter().map(|&t| f(t)).collect();
        (quad::simpson(&x, &y) - exact).abs()
    };
    let ratio = err(64) / err(128);
    assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
}
