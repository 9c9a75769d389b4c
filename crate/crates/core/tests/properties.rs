use kgq_core::calculus::{gauss_legendre, volume_integral, BoxDomain, QuadratureRule};
use kgq_core::kernels::PeriodizedKernel;
use kgq_core::lattice::{
    character_value, compose, deck_apply, orbit_distance, reduce_to_cell, LatticeVector, ManifoldSpec, PinCharacter,
};
use kgq_core::specfun::{yukawa, KernelParams};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = ManifoldSpec> {
    prop_oneof![
        Just(ManifoldSpec::mobius(2, 1).unwrap()),
        Just(ManifoldSpec::mobius(3, 1).unwrap()),
        Just(ManifoldSpec::mobius(3, 2).unwrap()),
        Just(ManifoldSpec::klein(2).unwrap()),
    ]
}

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, n)
}

fn element(k: usize) -> impl Strategy<Value = LatticeVector> {
    prop::collection::vec(-3i64..=3, k).prop_map(LatticeVector)
}

fn setup() -> impl Strategy<Value = (ManifoldSpec, PinCharacter, Vec<f64>, Vec<f64>, LatticeVector)> {
    spec_strategy().prop_flat_map(|spec| {
        let k = spec.k();
        let n = spec.n();
        (
            Just(spec),
            prop::sample::subsequence((0..k).collect::<Vec<_>>(), 0..=k)
                .prop_map(move |s| PinCharacter::new(s, k).unwrap()),
            point(n),
            point(n),
            element(k),
        )
    })
}

fn kernel(spec: ManifoldSpec, chi: PinCharacter, alpha: f64) -> PeriodizedKernel {
    PeriodizedKernel::new(spec, chi, KernelParams::new(spec.n(), alpha).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn yukawa_is_negative_and_increasing(n in 2usize..=5, alpha in 0.2f64..4.0, r in 1e-3f64..20.0) {
        let p = KernelParams::new(n, alpha).unwrap();
        let a = yukawa(&p, r);
        let b = yukawa(&p, r * 1.01);
        prop_assert!(a < 0.0);
        prop_assert!(b > a);
    }

    #[test]
    fn deck_action_is_a_group_action((spec, _chi, x, _y, a) in setup(), b in element(3)) {
        let b = LatticeVector(b.0[..spec.k()].to_vec());
        let ab = compose(&spec, &a, &b).unwrap();
        let lhs = deck_apply(&spec, &ab, &x).unwrap();
        let rhs = deck_apply(&spec, &a, &deck_apply(&spec, &b, &x).unwrap()).unwrap();
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn characters_are_multiplicative((spec, chi, _x, _y, a) in setup(), b in element(3)) {
        let b = LatticeVector(b.0[..spec.k()].to_vec());
        let ab = compose(&spec, &a, &b).unwrap();
        prop_assert_eq!(character_value(&chi, &ab), character_value(&chi, &a) * character_value(&chi, &b));
    }

    #[test]
    fn cell_reduction_stays_in_orbit((spec, _chi, x, _y, _a) in setup()) {
        let r = reduce_to_cell(&spec, &x).unwrap();
        let again = reduce_to_cell(&spec, &r).unwrap();
        for (p, q) in r.iter().zip(&again) {
            prop_assert!((p - q).abs() < 1e-12);
        }
        prop_assert!(orbit_distance(&spec, &x, &r, 2).unwrap() < 1e-12);
    }

    #[test]
    fn one_point_kernel_is_pseudo_periodic((spec, chi, x, _y, g) in setup()) {
        let e = orbit_distance(&spec, &x, &vec![0.0; spec.n()], 3).unwrap();
        prop_assume!(e > 0.05);
        let k = kernel(spec, chi.clone(), 1.5);
        let moved = deck_apply(&spec, &g, &x).unwrap();
        let lhs = k.value(&moved).unwrap().value;
        let rhs = character_value(&chi, &g) as f64 * k.value(&x).unwrap().value;
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn two_point_kernel_symmetric_and_equivariant((spec, chi, x, y, g) in setup()) {
        prop_assume!(orbit_distance(&spec, &x, &y, 3).unwrap() > 0.05);
        let k = kernel(spec, chi.clone(), 1.5);
        let gxy = k.green(&x, &y).unwrap().value;
        prop_assert!((gxy - k.green(&y, &x).unwrap().value).abs() < 1e-12);
        let gx = deck_apply(&spec, &g, &x).unwrap();
        let moved = k.green(&gx, &y).unwrap().value;
        prop_assert!((moved - character_value(&chi, &g) as f64 * gxy).abs() < 1e-10);
    }

    #[test]
    fn gauss_legendre_exact_to_degree_2p_minus_1(p in 1usize..=12, seed in prop::collection::vec(-1.0f64..1.0, 24)) {
        let (x, w) = gauss_legendre(p);
        let coeffs = &seed[..2 * p];
        let exact: f64 = coeffs.iter().enumerate()
            .map(|(d, c)| if d % 2 == 0 { 2.0 * c / (d as f64 + 1.0) } else { 0.0 })
            .sum();
        let approx: f64 = x.iter().zip(&w)
            .map(|(xi, wi)| wi * coeffs.iter().rev().fold(0.0, |acc, c| acc * xi + c))
            .sum();
        prop_assert!((approx - exact).abs() < 1e-13 * (1.0 + exact.abs()));
    }

    #[test]
    fn box_quadrature_integrates_tensor_polynomials(
        lo in prop::collection::vec(-1.0f64..0.0, 3),
        len in prop::collection::vec(0.1f64..1.0, 3),
        deg in prop::collection::vec(0i32..=5, 3),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&len).map(|(a, l)| a + l).collect();
        let domain = BoxDomain::new(lo.clone(), hi.clone()).unwrap();
        let rule = QuadratureRule::new(1, 3).unwrap();
        let d = deg.clone();
        let got = volume_integral(move |y: &[f64]| (0..3).map(|i| y[i].powi(d[i])).product::<f64>(), &domain, &rule);
        let want: f64 = (0..3)
            .map(|i| (hi[i].powi(deg[i] + 1) - lo[i].powi(deg[i] + 1)) / (deg[i] + 1) as f64)
            .product();
        prop_assert!((got - want).abs() < 1e-12 * (1.0 + want.abs()));
    }
}
