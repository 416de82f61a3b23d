use ips::config::ExperimentConfig;
use ips::grid::build_grid;
use ips::kernel;
use ips::needle::make_needle;
use ips::potential::Shape;
use ips::rates::{fit_rate, grows_monotonically};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    0.05f64..0.95
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [coord(), coord(), coord()]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rate_fit_recovers_power_laws(c in 0.01f64..100.0, p in -4.0f64..2.0, d0 in 0.05f64..1.0, q in 0.2f64..0.8, k in 4usize..9, neg in any::<bool>()) {
        let d: Vec<f64> = (0..k).map(|i| d0 * q.powi(i as i32)).collect();
        let s = if neg { -1.0 } else { 1.0 };
        let v: Vec<f64> = d.iter().map(|x| s * c * x.powf(p)).collect();
        let f = fit_rate(&d, &v).unwrap();
        prop_assert!((f.exponent - p).abs() < 1e-9);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-8 * (1.0 + c.ln().abs()) + 1e-8);
        prop_assert_eq!(f.sign, s);
        prop_assert!(!f.flagged && f.used == k);
    }

    #[test]
    fn increasing_magnitudes_grow(a in 0.1f64..10.0, r in 1.01f64..3.0, k in 2usize..8, neg in any::<bool>()) {
        let s = if neg { -1.0 } else { 1.0 };
        let v: Vec<f64> = (0..k).map(|i| s * a * r.powi(i as i32)).collect();
        prop_assert!(grows_monotonically(&v, k));
        let rev: Vec<f64> = v.iter().rev().cloned().collect();
        prop_assert!(!grows_monotonically(&rev, k));
    }

    #[test]
    fn kernel_gradient_matches_differences(z in point(), shift in point()) {
        let z = [z[0] - shift[0] + 0.013, z[1] - shift[1] - 0.007, z[2] - shift[2] + 0.011];
        let r = (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt();
        prop_assume!(r > 0.05);
        let h = 1e-5 * r;
        let gr = kernel::grad_g(z);
        let he = kernel::hess_g(z);
        for a in 0..3 {
            let (mut p, mut m) = (z, z);
            p[a] += h;
            m[a] -= h;
            let fd = (kernel::g(p) - kernel::g(m)) / (2.0 * h);
            prop_assert!((fd - gr[a]).abs() <= 1e-6 * gr.iter().map(|v| v.abs()).fold(0.0, f64::max));
            for b in 0..3 {
                let fdh = (kernel::grad_g(p)[b] - kernel::grad_g(m)[b]) / (2.0 * h);
                prop_assert!((fdh - he[a][b]).abs() <= 1e-5 * he.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max));
            }
        }
        let trace = he[0][0] + he[1][1] + he[2][2];
        prop_assert!(trace.abs() <= 1e-12 * he.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max));
    }

    #[test]
    fn probe_placement_stays_off_nodes(x in point(), n in 4usize..40) {
        let g = build_grid([1.0; 3], [n, n + 1, n + 2]).unwrap();
        let y = g.place_probe(x);
        prop_assert!(g.lattice_offset(y) >= 0.25 - 1e-9);
        let moved = ((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2) + (y[2] - x[2]).powi(2)).sqrt();
        prop_assert!(moved <= 0.25 * g.min_h() + 1e-12);
        if g.lattice_offset(x) >= 0.25 {
            prop_assert_eq!(y, x);
        }
    }

    #[test]
    fn ball_signed_distance_is_exact(c in point(), r in 0.01f64..0.3, z in point()) {
        let s = Shape::Ball { center: c, radius: r };
        let d = ((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2) + (z[2] - c[2]).powi(2)).sqrt() - r;
        prop_assert!((s.signed_distance(z) - d).abs() < 1e-14);
    }

    #[test]
    fn box_signed_distance_is_one_lipschitz(z in point(), w in point()) {
        let s = Shape::Box { lo: [0.3, 0.35, 0.4], hi: [0.6, 0.7, 0.55] };
        let dz = ((z[0] - w[0]).powi(2) + (z[1] - w[1]).powi(2) + (z[2] - w[2]).powi(2)).sqrt();
        prop_assert!((s.signed_distance(z) - s.signed_distance(w)).abs() <= dz + 1e-12);
        let inside = (0..3).all(|a| z[a] > 0.3 + 0.05 * a as f64 && z[a] < [0.6, 0.7, 0.55][a]);
        prop_assert_eq!(s.signed_distance(z) < 0.0, inside);
    }

    #[test]
    fn straight_needles_are_parametrised_by_arc_length(tip in point(), axis in 0usize..3, upper in any::<bool>(), t in 0.0f64..1.0) {
        let mut b = tip;
        b[axis] = if upper { 1.0 } else { 0.0 };
        let nd = make_needle([1.0; 3], b, &[], tip).unwrap();
        prop_assert_eq!(nd.point_at(0.0), b);
        let p = nd.point_at(t);
        prop_assert!(nd.distance(p) < 1e-12);
        prop_assert!((p[axis] - (b[axis] + t * (tip[axis] - b[axis]))).abs() < 1e-12);
        let e = nd.point_at(1.0);
        prop_assert!((0..3).all(|a| (e[a] - tip[a]).abs() < 1e-12));
    }

    #[test]
    fn configs_round_trip_through_json(n in 3usize..40, amp in -10.0f64..10.0, r in 0.05f64..0.3, seed in any::<u64>()) {
        prop_assume!(amp.abs() > 0.1);
        let text = format!(
            r#"{{ "name": "p", "grid": {{ "n": [{n}, {n}, {}] }}, "seed": {seed},
                 "obstacle": {{ "components": [{{ "shape": {{ "kind": "ball", "center": [0.5, 0.5, 0.5], "radius": {r} }}, "amplitude": {amp} }}] }} }}"#,
            n + 1
        );
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.seed = seed.wrapping_add(1);
        prop_assert_ne!(other.hash(), cfg.hash());
    }
}
