use super::*;
use crate::activation::ActivationKind;
use crate::data::Dataset;
use crate::sampling::{rng_from_seed, unit_sphere};
use crate::Error;
use rand::Rng;

fn tiny(a: f64) -> ModelParams {
    let mut p = ModelParams::zeros(1, 1, 2).unwrap();
    p.layers[0] = LayerBlocks { a: vec![a], b: vec![1.0], c: vec![0.2], r: vec![0.0] };
    p
}

#[test]
fn hand_evaluated_two_layer_network() {
    let p = tiny(0.1);
    let tr = forward(&p, &[1.0], ActivationKind::Relu).unwrap();
    assert_eq!(tr.g(0), &[1.0]);
    assert!((tr.z(1)[0] - 1.2).abs() < 1e-15);
    assert!((tr.y(1) - 0.1).abs() < 1e-15);
    assert_eq!(tr.f, tr.y(1));

    let tr = forward(&tiny(-0.1), &[1.0], ActivationKind::Relu).unwrap();
    assert!((tr.f + 0.1).abs() < 1e-15);
}

#[test]
fn hand_evaluated_adjoints() {
    let p = tiny(0.1);
    let tr = forward(&p, &[1.0], ActivationKind::Relu).unwrap();
    let adj = backward(&p, &tr, ActivationKind::Relu).unwrap();
    assert!((adj.gamma(0)[0] - 0.1).abs() < 1e-15);
    assert!((adj.beta(0)[0] - 0.1).abs() < 1e-15);
    assert_eq!(adj.alpha(0), 1.0);
    assert_eq!(adj.alpha(1), 1.0);
    assert_eq!(adj.beta(1), &[0.0]);
}

#[test]
fn initialization_is_exact_identity_path() {
    let mut rng = rng_from_seed(4);
    for seed in 0..5 {
        let p = sample_init(4, 3, 12, seed).unwrap();
        let x = unit_sphere(&mut rng, 4);
        let tr = forward(&p, &x, ActivationKind::Relu).unwrap();
        let adj = backward(&p, &tr, ActivationKind::Relu).unwrap();
        assert_eq!(tr.f, 0.0);
        for k in 0..p.depth {
            assert_eq!(tr.z(k), &x[..]);
            assert_eq!(tr.y(k), 0.0);
            assert_eq!(adj.alpha(k), 1.0);
            assert!(adj.beta(k).iter().all(|&v| v == 0.0));
        }
        for (k, l) in p.layers.iter().enumerate() {
            assert!(adj.gamma(k).iter().all(|&v| v == 0.0));
            for (i, row) in l.b.chunks(4).enumerate() {
                assert_eq!(tr.g(k)[i], ActivationKind::Relu.eval(crate::sampling::dot(row, &x)));
            }
        }
    }
}

#[test]
fn top_adjoints_are_fixed_for_any_params() {
    let mut rng = rng_from_seed(5);
    let p = random_params(&mut rng, 3, 4, 6, 0.5);
    let x = unit_sphere(&mut rng, 3);
    let tr = forward(&p, &x, ActivationKind::Tanh).unwrap();
    let adj = backward(&p, &tr, ActivationKind::Tanh).unwrap();
    assert_eq!(adj.alpha(5), 1.0);
    assert_eq!(adj.beta(5), &[0.0; 3]);
}

#[test]
fn skip_path_ignores_zero_c() {
    let mut rng = rng_from_seed(6);
    let mut p = random_params(&mut rng, 3, 2, 5, 0.5);
    p.layers[2].c.fill(0.0);
    let x = unit_sphere(&mut rng, 3);
    let tr = forward(&p, &x, ActivationKind::Relu).unwrap();
    assert_eq!(tr.z(3), &x[..]);
}

#[test]
fn rejects_off_sphere_inputs_unless_warn() {
    let p = tiny(0.1);
    assert!(matches!(forward(&p, &[0.9], ActivationKind::Relu), Err(Error::Input(_))));
    assert!(forward_with(&p, &[0.9], ActivationKind::Relu, InputPolicy::Warn).is_ok());
    assert!(matches!(forward(&p, &[1.0, 0.0], ActivationKind::Relu), Err(Error::Dimension(_))));
}

#[test]
fn backward_rejects_mismatched_trace() {
    let p = tiny(0.1);
    let q = sample_init(1, 1, 3, 0).unwrap();
    let tr = forward(&q, &[1.0], ActivationKind::Relu).unwrap();
    assert!(matches!(backward(&p, &tr, ActivationKind::Relu), Err(Error::Dimension(_))));
}

#[test]
fn gradient_at_init() {
    let p = sample_init(3, 4, 7, 1).unwrap();
    let mut rng = rng_from_seed(2);
    let xs: Vec<Vec<f64>> = (0..5).map(|_| unit_sphere(&mut rng, 3)).collect();
    let ys: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ds = Dataset::from_table(xs.clone(), ys.clone()).unwrap();
    let (risk, g) = grad_risk(&p, &ds, ActivationKind::Relu).unwrap();
    let expected_risk = ys.iter().map(|y| y * y).sum::<f64>() / 10.0;
    assert!((risk - expected_risk).abs() < 1e-15);
    for (k, gl) in g.layers.iter().enumerate() {
        assert!(gl.b.iter().chain(&gl.c).chain(&gl.r).all(|&v| v == 0.0));
        for i in 0..4 {
            let row = &p.layers[k].b[i * 3..(i + 1) * 3];
            let expected: f64 = -xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| y * crate::sampling::dot(row, x).max(0.0))
                .sum::<f64>()
                / 5.0;
            assert!((gl.a[i] - expected).abs() < 1e-15);
        }
    }
}

#[test]
fn zero_residual_gives_zero_risk_and_gradient() {
    let mut rng = rng_from_seed(7);
    let p = random_params(&mut rng, 2, 3, 5, 0.3);
    let xs: Vec<Vec<f64>> = (0..4).map(|_| unit_sphere(&mut rng, 2)).collect();
    let ds = Dataset::from_table(xs, vec![0.0; 4]).unwrap();
    let ys = BatchPropagator::new(&p, &ds).forward(&p, ActivationKind::Tanh).to_vec();
    let ds = ds.with_labels(ys).unwrap();
    let (risk, g) = grad_risk(&p, &ds, ActivationKind::Tanh).unwrap();
    assert_eq!(risk, 0.0);
    assert_eq!(g.squared_norm(), 0.0);
}

#[test]
fn empty_dataset_is_rejected() {
    let p = tiny(0.1);
    let ds = Dataset { xs: vec![], ys: vec![], ..Dataset::from_table(vec![vec![1.0]], vec![0.0]).unwrap() };
    assert!(matches!(grad_risk(&p, &ds, ActivationKind::Relu), Err(Error::Input(_))));
}

pub(crate) fn random_params<R: Rng>(rng: &mut R, d: usize, m: usize, depth: usize, scale: f64) -> ModelParams {
    let mut p = ModelParams::zeros(d, m, depth).unwrap();
    for l in &mut p.layers {
        for v in l.a.iter_mut().chain(&mut l.b).chain(&mut l.c).chain(&mut l.r) {
            *v = rng.random_range(-scale..scale);
        }
    }
    p
}

fn params_entries(p: &mut ModelParams) -> Vec<&mut f64> {
    p.layers
        .iter_mut()
        .flat_map(|l| l.a.iter_mut().chain(l.b.iter_mut()).chain(l.c.iter_mut()).chain(l.r.iter_mut()))
        .collect()
}

fn grad_entries(g: &Gradients) -> Vec<f64> {
    g.layers.iter().flat_map(|l| l.a.iter().chain(&l.b).chain(&l.c).chain(&l.r).copied()).collect()
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = rng_from_seed(2024);
    let act = ActivationKind::Tanh;
    for _ in 0..50 {
        let d = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let depth = rng.random_range(2..=10);
        let n = rng.random_range(1..=4);
        let p = random_params(&mut rng, d, m, depth, 0.7);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| unit_sphere(&mut rng, d)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ds = Dataset::from_table(xs, ys).unwrap();
        let (_, g) = grad_risk(&p, &ds, act).unwrap();
        let analytic = grad_entries(&g);
        let h = 1e-5;
        for (idx, &ga) in analytic.iter().enumerate() {
            let mut plus = p.clone();
            *params_entries(&mut plus)[idx] += h;
            let mut minus = p.clone();
            *params_entries(&mut minus)[idx] -= h;
            let fd = (risk(&plus, &ds, act) - risk(&minus, &ds, act)) / (2.0 * h);
            let err = (fd - ga).abs();
            assert!(err <= 1e-5 * fd.abs().max(ga.abs()) || err <= 1e-8, "entry {idx}: fd {fd} vs {ga}");
        }
    }
}

#[test]
fn batched_and_per_sample_gradients_agree() {
    let mut rng = rng_from_seed(77);
    for act in [ActivationKind::Relu, ActivationKind::Tanh] {
        for _ in 0..20 {
            let d = rng.random_range(1..=5);
            let m = rng.random_range(1..=5);
            let depth = rng.random_range(2..=30);
            let n = rng.random_range(1..=11);
            let p = random_params(&mut rng, d, m, depth, 0.5);
            let xs: Vec<Vec<f64>> = (0..n).map(|_| unit_sphere(&mut rng, d)).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ds = Dataset::from_table(xs, ys).unwrap();
            let (risk_b, gb) = grad_risk(&p, &ds, act).unwrap();
            let mut gs = Gradients::zeros_like(&p);
            let risk_s = accumulate_risk_grad(&p, &ds, act, &mut Propagator::new(&p), &mut gs);
            assert!((risk_b - risk_s).abs() <= 1e-13 * risk_s.max(1e-300));
            let scale = grad_entries(&gs).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (a, b) in grad_entries(&gb).iter().zip(grad_entries(&gs)) {
                assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
            }
        }
    }
}
