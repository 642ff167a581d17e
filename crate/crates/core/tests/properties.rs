use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;

use drlines::dr::{
    dr_multivalued, dr_reversed, dr_two_lines_closed_form, dr_two_lines_compositional,
};
use drlines::experiments::{
    certified_step_bound, detect_cycle, rasterize, simulate, Bounds, BranchPolicy,
};
use drlines::geometry::{Line, DEFAULT_TIE_TOL};
use drlines::lyapunov::{
    certify, decrease_check, growth_factor, in_increase_set, increase_ball, sandwich_bounds,
    v_global, v_local, LyapunovCertificate,
};
use drlines::robust::{sigma, PerturbationSpec};
use drlines::{ProblemConfig, RegionLabel, Side, Vec2};

fn admissible() -> impl Strategy<Value = ProblemConfig> {
    (0.02..=FRAC_PI_2, 0.0..1.0f64).prop_filter_map("admissible", |(t1, u)| {
        let t2 = t1 + (0.01 + 0.98 * u) * (PI - t1);
        ProblemConfig::new(t1, t2).ok()
    })
}

fn certified() -> impl Strategy<Value = (ProblemConfig, LyapunovCertificate)> {
    admissible().prop_filter_map("certified", |cfg| {
        let cert = *certify(&cfg).certificate()?;
        Some((cfg, cert))
    })
}

fn point(half: f64) -> impl Strategy<Value = Vec2> {
    (-half..half, -half..half).prop_map(|(x, y)| Vec2::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn projection_and_reflection(a in point(2.0), theta in 0.0..PI, x in point(10.0)) {
        let line = Line::new(a, theta);
        let p = line.project(x);
        prop_assert!(line.distance(p) < 1e-12);
        prop_assert!(line.project(p).dist(p) < 1e-12);
        prop_assert!(line.reflect(line.reflect(x)).dist(x) < 1e-12);
        prop_assert!((line.distance(line.reflect(x)) - line.distance(x)).abs() < 1e-12);
    }

    #[test]
    fn closed_form_is_composition(a in -2.0..2.0f64, theta in 0.0..PI, x in point(10.0)) {
        let p = Vec2::new(a, 0.0);
        let t = dr_two_lines_closed_form(p, theta, x);
        prop_assert!(t.dist(dr_two_lines_compositional(&Line::new(p, theta), &Line::x_axis(), x)) < 1e-10);
        let v = (x - p).norm_sq();
        prop_assert!(((t - p).norm_sq() - theta.cos().powi(2) * v).abs() <= 1e-12 * (1.0 + v));
    }

    #[test]
    fn region_follows_nearest_line(cfg in admissible(), x in point(10.0)) {
        let (d1, d2) = (cfg.a1.distance(x), cfg.a2.distance(x));
        match cfg.classify_region(x, DEFAULT_TIE_TOL) {
            RegionLabel::D1 => prop_assert!(d1 < d2),
            RegionLabel::D2 => prop_assert!(d2 < d1),
            RegionLabel::D3 => prop_assert!((d1 - d2).abs() <= DEFAULT_TIE_TOL * (1.0 + x.norm())),
        }
        prop_assert!(cfg.distance_to_d3(x) <= cfg.bisector_data().distance(x) + 1e-12);
    }

    #[test]
    fn reversed_order_is_conjugate(cfg in admissible(), x in point(10.0)) {
        let b = Line::x_axis();
        let fwd = dr_multivalued(&cfg, x, DEFAULT_TIE_TOL);
        let rev = dr_reversed(&cfg, b.reflect(x), DEFAULT_TIE_TOL);
        prop_assert_eq!(fwd.outputs().len(), rev.outputs().len());
        for (&y, &z) in fwd.outputs().iter().zip(rev.outputs()) {
            prop_assert!(y.dist(b.reflect(z)) < 1e-10);
        }
        for side in Side::BOTH {
            let v = v_local(&cfg, side, x);
            prop_assert!((v_local(&cfg, side, b.reflect(x)) - v).abs() <= 1e-12 * (1.0 + v));
        }
    }

    #[test]
    fn certificate_is_sound((_, cert) in certified()) {
        prop_assert!(cert.gamma < 1.0);
        prop_assert!(cert.alpha >= cert.alpha_min && cert.alpha <= cert.alpha_max);
        prop_assert!(cert.condition_slack() >= -1e-12);
        let back = LyapunovCertificate::from_json(&cert.to_json()).unwrap();
        prop_assert_eq!(back, cert);
    }

    #[test]
    fn certified_decrease((cfg, cert) in certified(), x in point(10.0)) {
        prop_assert!(decrease_check(&cert, &cfg, x, DEFAULT_TIE_TOL));
    }

    #[test]
    fn sandwich_holds((cfg, cert) in certified(), x in point(10.0)) {
        let s = sandwich_bounds(&cert, &cfg, x);
        prop_assert!(s.contains(v_global(&cert, &cfg, x), 1e-12));
    }

    #[test]
    fn increase_ball_matches_definition(cfg in admissible(), scale in 1.0..3.0f64, u in point(1.4), side_one in any::<bool>()) {
        let side = if side_one { Side::One } else { Side::Two };
        let rho = scale * growth_factor(&cfg);
        let ball = increase_ball(&cfg, side, rho).unwrap();
        let x = ball.center + ball.radius * u;
        prop_assume!(x != cfg.anchor(side));
        prop_assume!((x.dist(ball.center) - ball.radius).abs() > 1e-8 * (1.0 + ball.radius));
        prop_assert_eq!(ball.contains(x), in_increase_set(&cfg, side, rho, x));
    }

    #[test]
    fn sigma_vanishes_only_on_solutions((cfg, cert) in certified(), x in point(5.0), eps in 0.001..0.1f64) {
        let Ok(spec) = PerturbationSpec::new(eps, &cert) else { return Ok(()) };
        prop_assert_eq!(sigma(&spec, &cfg, cfg.p1), 0.0);
        prop_assert_eq!(sigma(&spec, &cfg, cfg.p2), 0.0);
        prop_assume!(x != cfg.p1 && x != cfg.p2);
        prop_assert!(sigma(&spec, &cfg, x) > 0.0);
    }

    #[test]
    fn kl_bound_is_class_kl((_, cert) in certified(), s in 0.01..100.0f64, t in 0.0..500.0f64) {
        let Ok(spec) = PerturbationSpec::new(0.01, &cert) else { return Ok(()) };
        let beta = spec.kl_bound();
        prop_assert!(beta.eval(s * 1.1, t) > beta.eval(s, t));
        prop_assert!(beta.eval(s, t + 1.0) <= beta.eval(s, t));
    }

    #[test]
    fn certified_traces_converge_in_budget((cfg, cert) in certified(), x0 in point(10.0)) {
        let bound = certified_step_bound(&cert, &cfg, x0);
        prop_assume!(bound < 200_000);
        let t = simulate(&cfg, x0, BranchPolicy::FirstBranch, bound.max(1), DEFAULT_TIE_TOL);
        prop_assert!(t.verdict.is_converged(), "{:?}", t.verdict);
        let side = t.verdict.target().unwrap();
        prop_assert!(t.end.dist(cfg.anchor(side)) < cfg.distance_to_d3(cfg.anchor(side)));
    }

    #[test]
    fn cycles_are_minimal(period in 2usize..40, reps in 2usize..5, seed in any::<u64>()) {
        let base: Vec<Vec2> = (0..period)
            .map(|i| Vec2::new(((seed >> (i % 60)) & 0xff) as f64 + i as f64, i as f64 * 0.5))
            .collect();
        let window: Vec<Vec2> = (0..period * reps).map(|i| base[i % period]).collect();
        prop_assert_eq!(detect_cycle(&window, 1e-8), Some(period));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn raster_is_deterministic(cfg in admissible(), seed in any::<u64>()) {
        let b = Bounds::square(2.0).unwrap();
        let policy = BranchPolicy::SeededRandom { seed };
        let a = rasterize(&cfg, b, 10, 10, policy, 5_000).unwrap();
        let c = rasterize(&cfg, b, 10, 10, policy, 5_000).unwrap();
        prop_assert_eq!(a.to_pgm(), c.to_pgm());
        prop_assert_eq!(a.histogram().iter().sum::<usize>(), 100);
    }
}
