use std::f64::consts::PI;
use std::sync::Arc;

use hkflow::entropy::EntropySpec;
use hkflow::geometry::{check_kappa_concavity, q_p, reparam_beta, reparam_r, MetricSpaceProbe};
use hkflow::hk::{cone_distance, hk2_exact, hk_mass_lower_bound, ConePoint};
use hkflow::mdelta::in_m_delta;
use hkflow::measures::{DiscreteMeasure, GridDomain};
use hkflow::mm::scalar::el_residual;
use hkflow::mm::scalar_step;
use hkflow::runner::fmt_float;
use proptest::prelude::*;

fn measure(rho: Vec<f64>) -> DiscreteMeasure {
    let n = rho.len();
    DiscreteMeasure::new(Arc::new(GridDomain::interval(0.0, 2.0, n).unwrap()), rho).unwrap()
}

/// Sparse densities on a 6-node grid: each node is empty with probability 1/2.
fn sparse_density() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.1f64..3.0], 6)
        .prop_filter("nonzero", |v| v.iter().any(|&x| x > 0.0))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn hk_is_symmetric_and_bracketed(a in sparse_density(), b in sparse_density()) {
        let (ma, mb) = (measure(a), measure(b));
        let ab = hk2_exact(&ma, &mb).unwrap();
        let ba = hk2_exact(&mb, &ma).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab));
        prop_assert!(ab >= hk_mass_lower_bound(&ma, &mb) - 1e-9);
        prop_assert!(ab <= ma.mass() + mb.mass() + 1e-9);
    }

    #[test]
    fn two_diracs_follow_closed_form(a in 0.05f64..4.0, b in 0.05f64..4.0, d in 0.01f64..3.5) {
        let dom = Arc::new(GridDomain::interval(0.0, d, 2).unwrap());
        let m0 = DiscreteMeasure::from_masses(dom.clone(), &[a, 0.0]).unwrap();
        let m1 = DiscreteMeasure::from_masses(dom, &[0.0, b]).unwrap();
        let want = a + b - 2.0 * (a * b).sqrt() * d.min(PI / 2.0).cos();
        prop_assert!((hk2_exact(&m0, &m1).unwrap() - want).abs() <= 1e-8 * (1.0 + want));
    }

    #[test]
    fn cone_distance_is_law_of_cosines(x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, r0 in 0.0f64..3.0, r1 in 0.0f64..3.0) {
        let d = (x0 - x1).abs().min(PI);
        let want = (r0 * r0 + r1 * r1 - 2.0 * r0 * r1 * d.cos()).max(0.0).sqrt();
        let got = cone_distance(&ConePoint::new(vec![x0], r0), &ConePoint::new(vec![x1], r1));
        prop_assert!((got - want).abs() <= 1e-7 * (1.0 + want));
    }

    #[test]
    fn cone_geodesics_have_constant_speed(x0 in 0.0f64..PI, x1 in 0.0f64..PI, r0 in 0.0f64..3.0, r1 in 0.0f64..3.0) {
        let c = MetricSpaceProbe::cone(PI).unwrap();
        let g = c.geodesic(&[x0, r0], &[x1, r1]).unwrap();
        let ts: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        prop_assert!(g.sample(&ts).constant_speed_residual(&c) <= 1e-8);
    }

    #[test]
    fn reparametrizations(t in 0.0f64..=1.0, d in 0.01f64..3.13) {
        let b = reparam_beta(t, d).unwrap();
        prop_assert!((b + reparam_beta(1.0 - t, d).unwrap() - 1.0).abs() <= 1e-12);
        let r = reparam_r(t, d).unwrap();
        prop_assert!(((0.5 * d).cos() - 1e-12..=1.0 + 1e-12).contains(&r));
        if d <= 2.0 * PI / 3.0 {
            prop_assert!(r >= 0.5 - 1e-12);
        }
        prop_assert!((q_p(0.8, 1.0, d).unwrap() - 1.0).abs() <= 1e-13);
    }

    #[test]
    fn quadratics_are_exactly_concave_at_twice_leading_coefficient(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
        let rep = check_kappa_concavity(|t| a * t * t + b * t + c, 2.0 * a, 40);
        prop_assert!(rep.worst_violation.abs() <= 1e-12);
    }

    #[test]
    fn scalar_step_solves_euler_lagrange_and_moves_downhill(c0 in 0.05f64..5.0, tau in 0.001f64..0.3, gamma in -2.0f64..1.0) {
        let e = EntropySpec::power_mass(1.0, 2.0, gamma).unwrap();
        let c1 = scalar_step(c0, tau, &e).unwrap();
        prop_assert!(el_residual(c0, c1, tau, &e).abs() <= 1e-10);
        // E' has one sign on [min(c0,c1), max(c0,c1)] opposite to the motion.
        if e.de(c0) > 0.0 { prop_assert!(c1 <= c0); }
        if e.de(c0) < 0.0 { prop_assert!(c1 >= c0); }
        prop_assert!(e.e(c1) + (c1.sqrt() - c0.sqrt()).powi(2) / (2.0 * tau) <= e.e(c0) + 1e-12);
    }

    #[test]
    fn float_format_keeps_twelve_digits(v in prop::num::f64::NORMAL) {
        let back: f64 = fmt_float(v).parse().unwrap();
        prop_assert!((back - v).abs() <= 5e-12 * v.abs());
    }

    #[test]
    fn measure_json_roundtrip(rho in prop::collection::vec(0.0f64..10.0, 2..12)) {
        let m = measure(rho);
        let back = DiscreteMeasure::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(back.density(), m.density());
        prop_assert_eq!(back.domain().spec(), m.domain().spec());
    }

    #[test]
    fn entropy_config_roundtrip(alpha in 0.0f64..3.0, m in 1.1f64..4.0, gamma in -2.0f64..2.0, c in 0.01f64..5.0) {
        let e = EntropySpec::power_mass(alpha, m, gamma).unwrap();
        let back = EntropySpec::from_config(&e.to_config()).unwrap();
        prop_assert_eq!(back.e(c), e.e(c));
        prop_assert_eq!(back.lambda(), e.lambda());
    }

    #[test]
    fn constant_density_class(delta in 0.01f64..0.99, s in 0.0f64..=1.0) {
        let c = delta + s * (1.0 / delta - delta);
        let mu = measure(vec![c; 5]);
        prop_assert!(in_m_delta(&mu, delta));
        prop_assert!(!in_m_delta(&measure(vec![0.5 * delta; 5]), delta));
    }
}
