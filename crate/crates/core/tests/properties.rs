use proptest::prelude::*;

use dap_core::guidance::{guidance_gradient, representativeness_energy};
use dap_core::kernels::{factorized_distance, gram_matrix, induced_distance, kernel_eval, Projection};
use dap_core::linalg::{min_eigenvalue, to_matrix};
use dap_core::{FeatureMap, KernelSpec};

fn kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![Just(KernelSpec::Linear), (0.2f64..3.0).prop_map(|b| KernelSpec::Rbf { bandwidth: b })]
}

fn points(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-4.0f64..4.0, dim), n)
}

fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..7).prop_flat_map(|d| points(3, d).prop_map(|p| (p[0].clone(), p[1].clone(), p[2].clone())))
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn induced_distance_is_a_metric(k in kernel(), (x, y, z) in triple()) {
        let d = |a: &[f64], b: &[f64]| induced_distance(&k, a, b).unwrap();
        prop_assert!(d(&x, &y) >= 0.0);
        prop_assert!(d(&x, &x) <= 1e-9);
        prop_assert!((d(&x, &y) - d(&y, &x)).abs() <= 1e-12);
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-9);
    }

    #[test]
    fn linear_distance_factorizes(pair in (1usize..10).prop_flat_map(|d| points(2, d))) {
        let a = induced_distance(&KernelSpec::Linear, &pair[0], &pair[1]).unwrap();
        let b = factorized_distance(&FeatureMap::Identity, &pair[0], &pair[1]).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn rbf_distance_bounded_by_sqrt2(b in 0.2f64..3.0, pair in (1usize..5).prop_flat_map(|d| points(2, d))) {
        let k = KernelSpec::Rbf { bandwidth: b };
        prop_assert!(induced_distance(&k, &pair[0], &pair[1]).unwrap() <= 2f64.sqrt());
        let far: Vec<f64> = pair[0].iter().map(|v| v + 1e3).collect();
        prop_assert!((induced_distance(&k, &pair[0], &far).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gram_is_symmetric_psd(k in kernel(), batch in (1usize..17, 1usize..5).prop_flat_map(|(n, d)| points(n, d))) {
        let g = gram_matrix(&k, &batch).unwrap();
        for i in 0..g.len() {
            for j in 0..g.len() {
                prop_assert_eq!(g[i][j], g[j][i]);
                prop_assert!((g[i][j] - kernel_eval(&k, &batch[i], &batch[j]).unwrap()).abs() < 1e-15);
            }
        }
        prop_assert!(min_eigenvalue(&to_matrix(&g)) >= -1e-8);
    }

    #[test]
    fn energy_is_permutation_invariant(k in kernel(), refs in points(6, 3), x in prop::collection::vec(-4.0f64..4.0, 3), rot in 0usize..6) {
        let mut shuffled = refs.clone();
        shuffled.rotate_left(rot);
        shuffled.reverse();
        let a = representativeness_energy(&k, &FeatureMap::Identity, &x, &refs).unwrap();
        let b = representativeness_energy(&k, &FeatureMap::Identity, &x, &shuffled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences(
        k in kernel(),
        x in prop::collection::vec(-3.0f64..3.0, 3),
        offsets in points(5, 3),
        seed in 0u64..100,
        project in any::<bool>(),
    ) {
        let proj = Projection::gaussian(4, 3, seed).unwrap();
        let map = if project { FeatureMap::Projection(&proj) } else { FeatureMap::Identity };
        // references close enough that RBF gradients stay above round-off
        let refs: Vec<Vec<f64>> = offsets.iter().map(|o| x.iter().zip(o).map(|(a, b)| a + 0.4 * b).collect()).collect();
        let g = guidance_gradient(&k, &map, &x, &refs).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..3).map(|i| {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let e = |v: &[f64]| representativeness_energy(&k, &map, v, &refs).unwrap();
            -(e(&xp) - e(&xm)) / (2.0 * h)
        }).collect();
        prop_assert!(relative_error(&g, &fd) < 1e-4, "g {:?} fd {:?}", g, fd);
    }

    #[test]
    fn small_guidance_step_lowers_energy(k in kernel(), x in prop::collection::vec(-3.0f64..3.0, 2), refs in points(4, 2)) {
        let g = guidance_gradient(&k, &FeatureMap::Identity, &x, &refs).unwrap();
        prop_assume!(g.iter().map(|v| v * v).sum::<f64>() > 1e-8);
        let stepped: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + 1e-4 * b).collect();
        let e = |v: &[f64]| representativeness_energy(&k, &FeatureMap::Identity, v, &refs).unwrap();
        prop_assert!(e(&stepped) < e(&x));
    }
}
