use nalgebra::DMatrix;
use proptest::prelude::*;
use skiplab::data::{sphere_dataset, TargetSpec};
use skiplab::kernelgram::{gram_matrix, min_eigenvalue};
use skiplab::landscape::{in_neighborhood, sample_in_neighborhood, ProbeMode};
use skiplab::netcore::{grad_risk, sample_init};
use skiplab::resnetlab::{path_norm, sample_resnet_init};
use skiplab::ActivationKind;

/// Cyclic Jacobi rotations; returns all eigenvalues of a symmetric matrix.
fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut a = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

fn activation() -> impl Strategy<Value = ActivationKind> {
    prop_oneof![Just(ActivationKind::Relu), Just(ActivationKind::Tanh)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn activations_are_one_lipschitz(act in activation(), u in -20.0f64..20.0, v in -20.0f64..20.0) {
        prop_assert!((act.eval(u) - act.eval(v)).abs() <= (u - v).abs() + 1e-15);
        prop_assert_eq!(act.eval(0.0), 0.0);
    }

    #[test]
    fn neighborhood_samples_are_members(
        d in 1usize..5, m in 1usize..5, depth in 2usize..40, c in 0.0f64..2.0, seed in 0u64..1000, interior in any::<bool>()
    ) {
        let p0 = sample_init(d, m, depth, seed).unwrap();
        let mode = if interior { ProbeMode::Interior } else { ProbeMode::Boundary };
        let p = sample_in_neighborhood(&p0, c, seed + 1, mode).unwrap();
        prop_assert!(in_neighborhood(&p, &p0, c));
        if c > 0.0 && !interior {
            prop_assert!(!in_neighborhood(&p, &p0, 0.99 * c));
        }
    }

    #[test]
    fn path_norm_ignores_signs(d in 1usize..5, m in 1usize..3, depth in 2usize..8, seed in 0u64..500, flips in any::<u64>()) {
        let mut p = sample_resnet_init(d, m, depth, seed, false).unwrap();
        for (k, u) in p.u.iter_mut().flatten().enumerate() {
            *u = 0.1 * ((k % 7) as f64 - 3.0);
        }
        let base = path_norm(&p);
        let mut q = p.clone();
        for (k, v) in q.u.iter_mut().flatten().chain(q.v.iter_mut().flatten()).enumerate() {
            if flips >> (k % 64) & 1 == 1 {
                *v = -*v;
            }
        }
        prop_assert!((path_norm(&q) - base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn gradients_are_deterministic(act in activation(), d in 1usize..5, m in 1usize..5, depth in 2usize..20, n in 1usize..12, seed in 0u64..500) {
        let data = sphere_dataset(d, n, TargetSpec::relu_first_coordinate(), seed).unwrap();
        let p = sample_init(d, m, depth, seed).unwrap();
        let (r1, g1) = grad_risk(&p, &data, act).unwrap();
        let (r2, g2) = grad_risk(&p, &data, act).unwrap();
        prop_assert_eq!(r1.to_bits(), r2.to_bits());
        prop_assert_eq!(g1, g2);
    }

    #[test]
    fn gram_is_symmetric_psd_and_eigensolver_matches_jacobi(
        act in activation(), d in 1usize..5, m in 1usize..5, depth in 2usize..12, n in 1usize..9, seed in 0u64..500
    ) {
        let data = sphere_dataset(d, n, TargetSpec::relu_first_coordinate(), seed).unwrap();
        let h = gram_matrix(&sample_init(d, m, depth, seed).unwrap(), &data, act).unwrap();
        prop_assert_eq!(&h, &h.transpose());
        let oracle = jacobi_eigenvalues(&h).into_iter().fold(f64::INFINITY, f64::min);
        let (lam, _) = min_eigenvalue(&h).unwrap();
        let scale = h.abs().max().max(1e-300);
        prop_assert!(oracle >= -1e-12 * scale);
        prop_assert!((lam - oracle).abs() <= 1e-10 * scale, "{} vs {}", lam, oracle);
    }
}
