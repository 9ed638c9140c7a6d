use std::sync::Arc;

use fracheat_core::grid::{discretize, BallIndicator, GridField, GridSpec};
use fracheat_core::kernel::{build_kernel, KernelConfig};
use fracheat_core::nonlinearity::{build_calculus, Nonlinearity, QuadratureConfig};
use fracheat_core::semigroup::apply_semigroup;
use fracheat_core::solvability::{make_dcs, DcsKind, DcsSource};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn semigroup_preserves_order(vals in prop::collection::vec(0.0f64..5.0, 64), bump in prop::collection::vec(0.0f64..1.0, 64), t in 1e-3f64..0.5) {
        let k = build_kernel(1, 1.5, &KernelConfig::default()).unwrap();
        let spec = GridSpec::new(1, 16.0, 64).unwrap();
        let upper: Vec<f64> = vals.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let a = apply_semigroup(&k, &GridField::from_values(spec, vals, 0.0).unwrap(), t).unwrap();
        let b = apply_semigroup(&k, &GridField::from_values(spec, upper, 0.0).unwrap(), t).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!(*x <= *y + 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn psi_inverts_g(p in 1.5f64..6.0, lv in -2.0f64..8.0) {
        let c = build_calculus(&Nonlinearity::power(p).unwrap(), &QuadratureConfig::numeric()).unwrap();
        let v = 10f64.powf(lv);
        let u = c.eval_psi_f(v).unwrap();
        prop_assert!((c.eval_G(u).unwrap() - v).abs() <= 1e-8 * v);
    }

    // F(u) ~ e^{-u²}/(2u²) underflows past u ≈ 27
    #[test]
    fn f_is_decreasing(lu in -1.0f64..1.3, step in 0.01f64..1.0) {
        let c = build_calculus(&Nonlinearity::exp_n(1, 2.0).unwrap(), &QuadratureConfig::numeric()).unwrap();
        let u = 10f64.powf(lu);
        prop_assert!(c.eval_F(u * (1.0 + step)).unwrap() < c.eval_F(u).unwrap());
    }

    #[test]
    fn profiles_are_radially_decreasing(lambda in 0.1f64..100.0, r in 1e-6f64..0.5) {
        for (src, kind) in [
            (DcsSource::Exp, DcsKind::Exp),
            (DcsSource::PowerLog { p: 4.0, q: 1.0, l: 10.0 }, DcsKind::PowerLog),
            (DcsSource::ExpN { n: 2, p: 1.0 }, DcsKind::ExpN),
        ] {
            let d = make_dcs(&src, kind, 1, 2.0, lambda, None).unwrap();
            prop_assert!(d.eval_r(r) >= d.eval_r(1.1 * r));
        }
    }
}

#[test]
fn mass_is_conserved_inside_the_window() {
    let k = build_kernel(2, 2.0, &KernelConfig::default()).unwrap();
    let spec = GridSpec::new(2, 6.0, 128).unwrap();
    let u = discretize(Arc::new(BallIndicator { radius: 1.0, value: 2.0 }), spec).unwrap();
    let s = apply_semigroup(&k, &u, 0.1).unwrap();
    assert!((s.excess_mass() - u.excess_mass()).abs() < 1e-10 * u.excess_mass());
}
