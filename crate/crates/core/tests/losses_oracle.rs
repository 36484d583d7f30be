mod common;

use common::oracles;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssal_core::losses::*;
use ssal_core::model::ProbVector;
use ssal_core::tensor::Matrix;

const TOL: f64 = 1e-6;
const TRIALS: usize = 1000;

fn matrix(rows: &[Vec<f64>]) -> Matrix<f64> {
    Matrix::from_rows(rows).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

#[test]
fn generic_contrastive_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..TRIALS {
        let n = rng.random_range(2..=10);
        let d = rng.random_range(2..=6);
        let reps = oracles::random_matrix(&mut rng, n, d, 1.0);
        let anchor = rng.random_range(0..n);
        let mut others: Vec<usize> = (0..n).filter(|&i| i != anchor).collect();
        others.shuffle(&mut rng);
        let n_pos = rng.random_range(1..=others.len());
        let n_neg = rng.random_range(0..=others.len() - n_pos);
        let pos = others[..n_pos].to_vec();
        let neg = others[n_pos..n_pos + n_neg].to_vec();
        let tau = rng.random_range(0.05..1.0);
        let expect = oracles::contrastive(&reps, anchor, &pos, &neg, tau);
        let mut positives = vec![Vec::new(); n];
        let mut negatives = vec![Vec::new(); n];
        positives[anchor] = pos;
        negatives[anchor] = neg;
        let view = ContrastiveBatchView::new(matrix(&reps), positives, negatives, tau).unwrap();
        let got = contrastive_loss(&view, anchor).unwrap();
        assert!(close(got, expect), "{got} vs {expect}");
    }
}

#[test]
fn generic_contrastive_worked_example() {
    // anchor e0; positive at cosine 0.9; two negatives at cosine 0.1
    let s = |c: f64, axis: usize| {
        let mut v = vec![0.0; 4];
        v[0] = c;
        v[axis] = (1.0 - c * c).sqrt();
        v
    };
    let reps = vec![vec![1.0, 0.0, 0.0, 0.0], s(0.9, 1), s(0.1, 2), s(0.1, 3)];
    let expect = oracles::contrastive(&reps, 0, &[1], &[2, 3], 0.07);
    let hand = -((0.9f64 / 0.07).exp() / ((0.9f64 / 0.07).exp() + 2.0 * (0.1f64 / 0.07).exp())).ln();
    assert!((expect - hand).abs() < 1e-12);
    let view = ContrastiveBatchView::new(
        matrix(&reps),
        vec![vec![1], vec![], vec![], vec![]],
        vec![vec![2, 3], vec![], vec![], vec![]],
        0.07,
    )
    .unwrap();
    assert!(close(contrastive_loss(&view, 0).unwrap(), expect));
}

#[test]
fn unsupervised_contrastive_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..TRIALS {
        let b = rng.random_range(1..=8);
        let d = rng.random_range(2..=8);
        let reps = oracles::random_matrix(&mut rng, 2 * b, d, 1.0);
        let tau = rng.random_range(0.05..1.0);
        let got = unsup_contrastive_loss(&matrix(&reps), tau).unwrap().value;
        let expect = oracles::unsup(&reps, tau);
        assert!(close(got, expect), "B={b}: {got} vs {expect}");
    }
}

#[test]
fn unsupervised_contrastive_is_nt_xent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let b = rng.random_range(1..=8);
        let d = rng.random_range(2..=8);
        let first = oracles::random_matrix(&mut rng, b, d, 1.0);
        let second = oracles::random_matrix(&mut rng, b, d, 1.0);
        let interleaved: Vec<Vec<f64>> = (0..b).flat_map(|i| [first[i].clone(), second[i].clone()]).collect();
        let got = unsup_contrastive_loss(&matrix(&interleaved), 0.07).unwrap().value;
        let expect = oracles::nt_xent(&first, &second, 0.07);
        assert!(close(got, expect), "{got} vs {expect}");
    }
}

#[test]
fn cross_entropy_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..TRIALS {
        let b = rng.random_range(1..=8);
        let k = rng.random_range(2..=10);
        let logits = oracles::random_matrix(&mut rng, b, k, 5.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let probs: Vec<Vec<f64>> = logits.iter().map(|l| oracles::softmax(l)).collect();
        let expect = oracles::cross_entropy(&probs, &labels);
        let from_logits = cross_entropy_logits(&matrix(&logits), &labels).unwrap().value;
        let pv: Vec<ProbVector<f64>> = probs.iter().map(|p| ProbVector::new(p.clone())).collect();
        let from_probs = supervised_ce_loss(&pv, &labels).unwrap();
        assert!(close(from_logits, expect) && close(from_probs, expect));
    }
}

#[test]
fn supervised_contrastive_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..TRIALS {
        let b = rng.random_range(1..=8);
        let k = rng.random_range(1..=4);
        let d = rng.random_range(2..=8);
        let reps = oracles::random_matrix(&mut rng, 2 * b, d, 1.0);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
        let tau = rng.random_range(0.05..1.0);
        let got = sup_contrastive_loss(&matrix(&reps), &labels, tau).unwrap().value;
        let expect = oracles::sup(&reps, &labels, tau);
        assert!(close(got, expect), "{got} vs {expect}");
    }
}

#[test]
fn supervised_contrastive_worked_example() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let reps = oracles::random_matrix(&mut rng, 6, 5, 1.0);
    let labels = [0, 0, 1];
    let got = sup_contrastive_loss(&matrix(&reps), &labels, 0.07).unwrap().value;
    assert!(close(got, oracles::sup(&reps, &labels, 0.07)));
}

fn sharp_probs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let temp = rng.random_range(0.1..3.0);
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0) / temp).collect();
    oracles::softmax(&logits)
}

#[test]
fn pseudo_label_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut confident_seen = 0;
    for _ in 0..TRIALS {
        let b = rng.random_range(1..=8);
        let k = rng.random_range(2..=10);
        let weak: Vec<Vec<f64>> = (0..b).map(|_| sharp_probs(&mut rng, k)).collect();
        let strong_logits = oracles::random_matrix(&mut rng, b, k, 5.0);
        let strong: Vec<Vec<f64>> = strong_logits.iter().map(|l| oracles::softmax(l)).collect();
        let c = rng.random_range(0.3..0.99);
        let (expect, count) = oracles::pseudo_label(&weak, &strong, c);
        confident_seen += count;
        let wp: Vec<ProbVector<f64>> = weak.iter().map(|p| ProbVector::new(p.clone())).collect();
        let sp: Vec<ProbVector<f64>> = strong.iter().map(|p| ProbVector::new(p.clone())).collect();
        let (got, got_count) = pseudo_label_loss(&PseudoLabelBatch { weak: wp.clone(), strong: sp, threshold: c }).unwrap();
        assert!(close(got, expect) && got_count == count);
        let out = pseudo_label_loss_logits(&wp, &matrix(&strong_logits), c).unwrap();
        assert!(close(out.loss.value, expect) && out.confident == count);
    }
    assert!(confident_seen > TRIALS, "trials should exercise confident samples");
}

#[test]
fn total_loss_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..TRIALS {
        let p: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..10.0));
        let w: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..2.0));
        let parts = LossParts {
            unsup_contrastive: p[0],
            supervised: p[1],
            sup_contrastive: p[2],
            pseudo_label: p[3],
        };
        let weights = LossWeights { lambda1: w[0], lambda2: w[1], lambda3: w[2], lambda4: w[3] };
        assert!(close(total_loss(&parts, &weights).unwrap(), oracles::weighted(p, w)));
    }
}
