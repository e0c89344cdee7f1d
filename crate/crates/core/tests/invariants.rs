use asymdiag::bvp::max_subinterval_integral;
use asymdiag::exprparse::parse;
use asymdiag::linalg::{inverse, omega, op_norm, CMatrix, C64};
use proptest::prelude::*;

fn matrix(dim: usize, vals: &[f64]) -> CMatrix {
    CMatrix::from_rows(dim, (0..dim * dim).map(|i| C64::new(vals[2 * i], vals[2 * i + 1])).collect())
}

proptest! {
    #[test]
    fn polynomial_derivative_is_exact(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, t in 0.0f64..1.0) {
        let e = parse(&format!("({a}) + ({b})*t + ({c})*t^2")).unwrap();
        let (v, d) = e.eval_dual(t).unwrap();
        prop_assert!((v.re - (a + b * t + c * t * t)).abs() < 1e-12);
        prop_assert!((d.re - (b + 2.0 * c * t)).abs() < 1e-12);
    }

    #[test]
    fn near_identity_inverse_round_trips(vals in prop::collection::vec(-0.2f64..0.2, 32)) {
        let a = &CMatrix::identity(4) + &matrix(4, &vals);
        let inv = inverse(&a).unwrap();
        let err = (&(&inv * &a) - &CMatrix::identity(4)).max_abs();
        prop_assert!(err < 1e-12);
    }

    #[test]
    fn numerical_range_bound_below_norm(vals in prop::collection::vec(-2.0f64..2.0, 18)) {
        let a = matrix(3, &vals);
        let norm = op_norm(&a).unwrap();
        prop_assert!(omega(&a).unwrap() <= norm + 1e-12);
        prop_assert!(a.max_abs() <= norm + 1e-12);
        // omega(A) + omega(-A) >= 0, with equality only for shifted skew-adjoint A
        prop_assert!(omega(&a).unwrap() + omega(&(-&a)).unwrap() >= -1e-12);
    }

    #[test]
    fn subinterval_maximum_matches_brute_force(profile in prop::collection::vec(-3.0f64..3.0, 2..40)) {
        let h = 1.0 / (profile.len() - 1) as f64;
        let mut brute = 0.0f64;
        for i in 0..profile.len() {
            let mut s = 0.0;
            for j in i + 1..profile.len() {
                s += 0.5 * h * (profile[j - 1] + profile[j]);
                brute = brute.max(s);
            }
        }
        let fast = max_subinterval_integral(&profile, h);
        prop_assert!((fast - brute).abs() <= 1e-12 * brute.max(1.0));
    }
}
