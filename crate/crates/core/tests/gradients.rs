//! Analytic loss gradients against central finite differences (float64, h = 1e-5).

mod common;

use common::oracles::{random_matrix, rel_err};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssal_core::losses::*;
use ssal_core::model::ProbVector;
use ssal_core::tensor::Matrix;

const H: f64 = 1e-5;
const INSTANCES: usize = 25;
const TAU: f64 = 0.07;

fn worst_error(x: &Matrix<f64>, analytic: &Matrix<f64>, f: impl Fn(&Matrix<f64>) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.data().len() {
        let mut up = x.clone();
        up.data_mut()[i] += H;
        let mut down = x.clone();
        down.data_mut()[i] -= H;
        let numeric = (f(&up) - f(&down)) / (2.0 * H);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    worst
}

fn check(name: &str, mut make: impl FnMut(&mut ChaCha8Rng) -> f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    for _ in 0..INSTANCES {
        let worst = make(&mut rng);
        assert!(worst < 1e-4, "{name}: max relative error {worst}");
    }
}

#[test]
fn unsupervised_contrastive_gradient() {
    check("unsup", |rng| {
        let b = rng.random_range(1..=4);
        let z = Matrix::from_rows(&random_matrix(rng, 2 * b, 4, 1.0)).unwrap();
        let g = unsup_contrastive_loss(&z, TAU).unwrap();
        worst_error(&z, &g.grad, |z| unsup_contrastive_loss(z, TAU).unwrap().value)
    });
}

#[test]
fn supervised_contrastive_gradient() {
    check("supervised contrastive", |rng| {
        let b = rng.random_range(2..=4);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..2)).collect();
        let z = Matrix::from_rows(&random_matrix(rng, 2 * b, 4, 1.0)).unwrap();
        let g = sup_contrastive_loss(&z, &labels, TAU).unwrap();
        worst_error(&z, &g.grad, |z| sup_contrastive_loss(z, &labels, TAU).unwrap().value)
    });
}

#[test]
fn cross_entropy_gradient() {
    check("ce", |rng| {
        let b = rng.random_range(1..=5);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..4)).collect();
        let x = Matrix::from_rows(&random_matrix(rng, b, 4, 3.0)).unwrap();
        let g = cross_entropy_logits(&x, &labels).unwrap();
        worst_error(&x, &g.grad, |x| cross_entropy_logits(x, &labels).unwrap().value)
    });
}

#[test]
fn pseudo_label_gradient() {
    check("pseudo-label", |rng| {
        let b = rng.random_range(1..=5);
        let weak: Vec<ProbVector<f64>> = (0..b)
            .map(|_| {
                let l: Vec<f64> = (0..4).map(|_| rng.random_range(-6.0..6.0)).collect();
                ProbVector::from_logits(&l)
            })
            .collect();
        let x = Matrix::from_rows(&random_matrix(rng, b, 4, 3.0)).unwrap();
        let g = pseudo_label_loss_logits(&weak, &x, 0.6).unwrap();
        worst_error(&x, &g.loss.grad, |x| pseudo_label_loss_logits(&weak, x, 0.6).unwrap().loss.value)
    });
}

#[test]
fn weighted_total_gradient() {
    // The total gradient is the weighted sum of the parts' gradients; check it
    // on a shared logit matrix feeding both classification terms.
    check("total", |rng| {
        let b = rng.random_range(1..=4);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..3)).collect();
        let weak: Vec<ProbVector<f64>> = (0..b)
            .map(|_| ProbVector::from_logits(&[rng.random_range(-6.0..6.0), 0.0, 1.0]))
            .collect();
        let (l2, l4) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        let x = Matrix::from_rows(&random_matrix(rng, b, 3, 3.0)).unwrap();
        let total = |x: &Matrix<f64>| {
            let ce = cross_entropy_logits(x, &labels).unwrap();
            let pl = pseudo_label_loss_logits(&weak, x, 0.5).unwrap().loss;
            let parts = LossParts { supervised: ce.value, pseudo_label: pl.value, ..LossParts::default() };
            let w = LossWeights { lambda1: 0.0, lambda2: l2, lambda3: 0.0, lambda4: l4 };
            let mut g = ce.grad.clone();
            for (a, b) in g.data_mut().iter_mut().zip(pl.grad.data()) {
                *a = l2 * *a + l4 * b;
            }
            (total_loss(&parts, &w).unwrap(), g)
        };
        let (_, g) = total(&x);
        worst_error(&x, &g, |x| total(x).0)
    });
}
