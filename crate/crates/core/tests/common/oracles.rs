//! Scalar float64 reference implementations of the losses, written directly
//! from the formulas with plain loops and no shared code with the crate.
#![allow(dead_code)]

use rand::Rng;

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Generic contrastive term for one anchor.
pub fn contrastive(reps: &[Vec<f64>], anchor: usize, pos: &[usize], neg: &[usize], tau: f64) -> f64 {
    let mut num = 0.0;
    for &p in pos {
        num += (cos(&reps[anchor], &reps[p]) / tau).exp();
    }
    let mut den = num;
    for &n in neg {
        den += (cos(&reps[anchor], &reps[n]) / tau).exp();
    }
    -(1.0 / pos.len() as f64) * (num / den).ln()
}

/// Unsupervised contrastive loss over sibling pairs `(2i, 2i+1)`.
pub fn unsup(reps: &[Vec<f64>], tau: f64) -> f64 {
    let n = reps.len();
    let mut total = 0.0;
    for i in 0..n {
        let sib = i ^ 1;
        let neg: Vec<usize> = (0..n).filter(|&j| j != i && j != sib).collect();
        total += contrastive(reps, i, &[sib], &neg, tau);
    }
    total / n as f64
}

/// Supervised contrastive loss; `labels[i]` labels views `2i` and `2i+1`.
pub fn sup(reps: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let n = reps.len();
    let mut total = 0.0;
    for i in 0..n {
        let pos: Vec<usize> = (0..n).filter(|&j| j != i && labels[j / 2] == labels[i / 2]).collect();
        let neg: Vec<usize> = (0..n).filter(|&j| labels[j / 2] != labels[i / 2]).collect();
        total += contrastive(reps, i, &pos, &neg, tau);
    }
    total / n as f64
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn cross_entropy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        total += -p[y].ln();
    }
    total / probs.len() as f64
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Pseudo-label loss and confident count.
pub fn pseudo_label(weak: &[Vec<f64>], strong: &[Vec<f64>], c: f64) -> (f64, usize) {
    let mut total = 0.0;
    let mut count = 0;
    for (w, s) in weak.iter().zip(strong) {
        let y = argmax(w);
        if w[y] > c {
            count += 1;
            total += -s[y].ln();
        }
    }
    (total / weak.len() as f64, count)
}

pub fn weighted(parts: [f64; 4], w: [f64; 4]) -> f64 {
    parts[0] * w[0] + parts[1] * w[1] + parts[2] * w[2] + parts[3] * w[3]
}

/// NT-Xent in the usual layout: `first[i]` and `second[i]` are two views of
/// sample `i`; each of the `2N` views is scored against every other view.
pub fn nt_xent(first: &[Vec<f64>], second: &[Vec<f64>], tau: f64) -> f64 {
    let n = first.len();
    let all: Vec<Vec<f64>> = first.iter().chain(second).map(|v| {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / norm).collect()
    }).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for i in 0..2 * n {
        let j = (i + n) % (2 * n);
        let mut den = 0.0;
        for k in 0..2 * n {
            if k != i {
                den += (dot(&all[i], &all[k]) / tau).exp();
            }
        }
        total += -((dot(&all[i], &all[j]) / tau).exp() / den).ln();
    }
    total / (2 * n) as f64
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

/// Elementwise relative error with a small absolute floor.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
