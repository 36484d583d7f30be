//! Contrastive, cross-entropy and pseudo-label losses with analytic gradients.
//!
//! The contrastive family is one formula. For an anchor `x` with positive set
//! `P` and negative set `N`, using cosine similarity `s(·,·)` and temperature τ:
//!
//! ```text
//! ℓ(x) = −(1/|P|) · log( Σ_{p∈P} exp(s(x,p)/τ) / Σ_{k∈P∪N} exp(s(x,k)/τ) )
//! ```
//!
//! The `1/|P|` factor multiplies the log of the summed ratio (not a sum of
//! per-positive logs). The unsupervised variant takes each view's sibling as
//! its only positive; the supervised variant takes every other view of the
//! same class. In both, every other view in the batch is in the denominator.
//!
//! Losses that train the network return the gradient w.r.t. their inputs: raw
//! projection outputs (normalization happens inside the loss, so contrastive
//! losses are invariant to rescaling a representation) or classifier logits.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProbVector;
use crate::tensor::{self, Matrix};

/// Loss value with its gradient w.r.t. the input matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<F> {
    pub value: F,
    pub grad: Matrix<F>,
}

#[inline]
fn cast<F: Float>(v: f64) -> F {
    F::from(v).unwrap()
}

pub fn cosine_sim<F: Float>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine similarity of vectors with different lengths"));
    }
    let na = tensor::dot(a, a).sqrt();
    let nb = tensor::dot(b, b).sqrt();
    if na == F::zero() || nb == F::zero() {
        return Err(Error::domain("cosine similarity of a zero vector"));
    }
    let s = tensor::dot(a, b) / (na * nb);
    Ok(s.max(-F::one()).min(F::one()))
}

fn check_tau<F: Float>(tau: F) -> Result<()> {
    if tau > F::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::config("temperature must be positive"))
    }
}

/// A batch of representations with explicit per-anchor positive and negative sets.
#[derive(Debug, Clone)]
pub struct ContrastiveBatchView<F> {
    reps: Matrix<F>,
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
    tau: F,
}

impl<F: Float> ContrastiveBatchView<F> {
    pub fn new(reps: Matrix<F>, positives: Vec<Vec<usize>>, negatives: Vec<Vec<usize>>, tau: F) -> Result<Self> {
        check_tau(tau)?;
        let n = reps.rows();
        if positives.len() != n || negatives.len() != n {
            return Err(Error::shape("one positive and one negative set per representation"));
        }
        for a in 0..n {
            for &i in positives[a].iter().chain(&negatives[a]) {
                if i >= n {
                    return Err(Error::shape(format!("index {i} out of range for {n} representations")));
                }
                if i == a {
                    return Err(Error::domain("an anchor cannot be its own positive or negative"));
                }
            }
            if positives[a].iter().any(|p| negatives[a].contains(p)) {
                return Err(Error::domain("positive and negative sets overlap"));
            }
        }
        Ok(ContrastiveBatchView {
            reps,
            positives,
            negatives,
            tau,
        })
    }

    pub fn len(&self) -> usize {
        self.reps.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.rows() == 0
    }

    pub fn tau(&self) -> F {
        self.tau
    }
}

/// The generic contrastive loss for one anchor of a view.
pub fn contrastive_loss<F: Float>(view: &ContrastiveBatchView<F>, anchor: usize) -> Result<F> {
    if anchor >= view.len() {
        return Err(Error::shape("anchor out of range"));
    }
    let pos = &view.positives[anchor];
    if pos.is_empty() {
        return Err(Error::domain("anchor has an empty positive set"));
    }
    let a = view.reps.row(anchor);
    let logit = |j: usize| cosine_sim(a, view.reps.row(j)).map(|s| s / view.tau);
    let pos_logits = pos.iter().map(|&j| logit(j)).collect::<Result<Vec<F>>>()?;
    let neg_logits = view.negatives[anchor]
        .iter()
        .map(|&j| logit(j))
        .collect::<Result<Vec<F>>>()?;
    let num = tensor::log_sum_exp(pos_logits.iter().copied());
    let den = tensor::log_sum_exp(pos_logits.iter().chain(&neg_logits).copied());
    let n_pos = cast::<F>(pos.len() as f64);
    Ok(((den - num) / n_pos).max(F::zero()))
}

/// Batched contrastive loss where anchor `i`'s positives are the other rows
/// with the same group id and its negatives are all rows of other groups.
/// Returns the mean over anchors and its gradient w.r.t. the raw rows.
pub fn grouped_contrastive<F: Float>(z: &Matrix<F>, groups: &[usize], tau: F) -> Result<LossGrad<F>> {
    check_tau(tau)?;
    let n = z.rows();
    if groups.len() != n {
        return Err(Error::shape("one group id per representation"));
    }
    if n == 0 {
        return Err(Error::shape("empty batch"));
    }
    let d = z.cols();
    let mut norms = Vec::with_capacity(n);
    let mut u = Matrix::zeros(n, d);
    for i in 0..n {
        let nr = tensor::dot(z.row(i), z.row(i)).sqrt();
        if nr == F::zero() || !nr.is_finite() {
            return Err(Error::domain("contrastive loss on a zero or non-finite representation"));
        }
        norms.push(nr);
        for (o, &v) in u.row_mut(i).iter_mut().zip(z.row(i)) {
            *o = v / nr;
        }
    }
    let inv_tau = F::one() / tau;
    let inv_n = cast::<F>(1.0 / n as f64);
    let mut total = F::zero();
    let mut du = Matrix::zeros(n, d);
    let mut sims = vec![F::zero(); n];
    let mut ex = vec![F::zero(); n];
    for a in 0..n {
        let ua = u.row(a);
        let mut m = F::neg_infinity();
        for (j, s) in sims.iter_mut().enumerate() {
            if j != a {
                *s = tensor::dot(ua, u.row(j)) * inv_tau;
                m = m.max(*s);
            }
        }
        let mut pos_sum = F::zero();
        let mut all_sum = F::zero();
        let mut n_pos = 0usize;
        for j in 0..n {
            if j == a {
                continue;
            }
            ex[j] = (sims[j] - m).exp();
            all_sum = all_sum + ex[j];
            if groups[j] == groups[a] {
                pos_sum = pos_sum + ex[j];
                n_pos += 1;
            }
        }
        // Every view has a sibling view of the same source image.
        debug_assert!(n_pos > 0, "anchor {a} has no positive");
        if n_pos == 0 {
            return Err(Error::domain("anchor has an empty positive set"));
        }
        let inv_pos = F::one() / cast(n_pos as f64);
        total = total + (all_sum.ln() - pos_sum.ln()) * inv_pos;
        // dℓ_a/ds_aj = −(1/|P|)(1[j∈P]·e_j/pos − e_j/all), scaled by 1/N and 1/τ.
        let scale = inv_pos * inv_n * inv_tau;
        for j in 0..n {
            if j == a {
                continue;
            }
            let mut g = ex[j] / all_sum;
            if groups[j] == groups[a] {
                g = g - ex[j] / pos_sum;
            }
            let g = g * scale;
            if g == F::zero() {
                continue;
            }
            let (ra, rj) = rows_pair(&mut du, a, j);
            for k in 0..d {
                ra[k] = ra[k] + g * u.row(j)[k];
                rj[k] = rj[k] + g * ua[k];
            }
        }
    }
    let mut grad = Matrix::zeros(n, d);
    for (i, &norm) in norms.iter().enumerate() {
        let ui = u.row(i);
        let dui = du.row(i);
        let radial = tensor::dot(ui, dui);
        for (k, o) in grad.row_mut(i).iter_mut().enumerate() {
            *o = (dui[k] - ui[k] * radial) / norm;
        }
    }
    Ok(LossGrad {
        value: (total * inv_n).max(F::zero()),
        grad,
    })
}

fn rows_pair<F: Float>(m: &mut Matrix<F>, a: usize, b: usize) -> (&mut [F], &mut [F]) {
    let cols = m.cols();
    let data = m.data_mut();
    if a < b {
        let (lo, hi) = data.split_at_mut(b * cols);
        (&mut lo[a * cols..(a + 1) * cols], &mut hi[..cols])
    } else {
        let (lo, hi) = data.split_at_mut(a * cols);
        (&mut hi[..cols], &mut lo[b * cols..(b + 1) * cols])
    }
}

/// Unsupervised contrastive loss over `2B` views laid out as sibling pairs
/// `(2i, 2i+1)`: each view's only positive is its sibling.
pub fn unsup_contrastive_loss<F: Float>(z: &Matrix<F>, tau: F) -> Result<LossGrad<F>> {
    if !z.rows().is_multiple_of(2) || z.rows() == 0 {
        return Err(Error::shape(format!(
            "expected an even, non-zero number of views, got {}",
            z.rows()
        )));
    }
    let groups: Vec<usize> = (0..z.rows()).map(|i| i / 2).collect();
    grouped_contrastive(z, &groups, tau)
}

/// Supervised contrastive loss over `2B` labeled views laid out as sibling
/// pairs; `labels[i]` is the label of views `2i` and `2i+1`.
pub fn sup_contrastive_loss<F: Float>(z: &Matrix<F>, labels: &[usize], tau: F) -> Result<LossGrad<F>> {
    if z.rows() != 2 * labels.len() || labels.is_empty() {
        return Err(Error::shape(format!(
            "expected {} views for {} labels, got {}",
            2 * labels.len(),
            labels.len(),
            z.rows()
        )));
    }
    let groups: Vec<usize> = (0..z.rows()).map(|i| labels[i / 2]).collect();
    grouped_contrastive(z, &groups, tau)
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= num_classes) {
        Some(y) => Err(Error::domain(format!("label {y} out of range for {num_classes} classes"))),
        None => Ok(()),
    }
}

/// Mean cross-entropy of predicted probabilities against hard labels.
pub fn supervised_ce_loss<F: Float>(preds: &[ProbVector<F>], labels: &[usize]) -> Result<F> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::shape("one prediction per label"));
    }
    let mut total = F::zero();
    for (p, &y) in preds.iter().zip(labels) {
        check_labels(&[y], p.probs.len())?;
        total = total - p.probs[y].ln();
    }
    Ok(total / cast(preds.len() as f64))
}

/// Mean cross-entropy computed from logits via log-softmax, with the gradient
/// w.r.t. the logits.
pub fn cross_entropy_logits<F: Float>(logits: &Matrix<F>, labels: &[usize]) -> Result<LossGrad<F>> {
    let n = logits.rows();
    if labels.len() != n || n == 0 {
        return Err(Error::shape("one logit row per label"));
    }
    check_labels(labels, logits.cols())?;
    let inv_n = cast::<F>(1.0 / n as f64);
    let mut grad = Matrix::zeros(n, logits.cols());
    let mut total = F::zero();
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let lse = tensor::log_sum_exp(row.iter().copied());
        total = total + (lse - row[y]);
        for (k, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = (row[k] - lse).exp() * inv_n;
        }
        grad.row_mut(r)[y] = grad.row(r)[y] - inv_n;
    }
    Ok(LossGrad {
        value: total * inv_n,
        grad,
    })
}

/// Weak/strong prediction pairs for the pseudo-label loss.
#[derive(Debug, Clone)]
pub struct PseudoLabelBatch<F> {
    pub weak: Vec<ProbVector<F>>,
    pub strong: Vec<ProbVector<F>>,
    pub threshold: F,
}

/// `(loss, confident count)`, with
/// `loss = (1/B) Σ 1(max qʷ > c) · H(argmax qʷ, qˢ)`.
/// The denominator is the full batch size, not the confident count.
pub fn pseudo_label_loss<F: Float>(batch: &PseudoLabelBatch<F>) -> Result<(F, usize)> {
    let n = batch.weak.len();
    if batch.strong.len() != n || n == 0 {
        return Err(Error::shape("weak and strong predictions must pair up"));
    }
    let mut total = F::zero();
    let mut confident = 0;
    for (w, s) in batch.weak.iter().zip(&batch.strong) {
        if w.probs.len() != s.probs.len() {
            return Err(Error::shape("weak and strong predictions differ in class count"));
        }
        if w.max() > batch.threshold {
            confident += 1;
            total = total - s.probs[w.argmax()].ln();
        }
    }
    Ok((total / cast(n as f64), confident))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelOutcome<F> {
    pub loss: LossGrad<F>,
    pub confident: usize,
}

/// Pseudo-label loss from strong-view logits. The weak predictions are fixed
/// targets, so the gradient flows only into `strong_logits`.
pub fn pseudo_label_loss_logits<F: Float>(
    weak: &[ProbVector<F>],
    strong_logits: &Matrix<F>,
    threshold: F,
) -> Result<PseudoLabelOutcome<F>> {
    let n = weak.len();
    if strong_logits.rows() != n || n == 0 {
        return Err(Error::shape("weak predictions and strong logits must pair up"));
    }
    let inv_n = cast::<F>(1.0 / n as f64);
    let mut grad = Matrix::zeros(n, strong_logits.cols());
    let mut total = F::zero();
    let mut confident = 0;
    for (r, w) in weak.iter().enumerate() {
        if w.probs.len() != strong_logits.cols() {
            return Err(Error::shape("weak predictions and strong logits differ in class count"));
        }
        if w.max().partial_cmp(&threshold) != Some(core::cmp::Ordering::Greater) {
            continue;
        }
        confident += 1;
        let y = w.argmax();
        let row = strong_logits.row(r);
        let lse = tensor::log_sum_exp(row.iter().copied());
        total = total + (lse - row[y]);
        for (k, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = (row[k] - lse).exp() * inv_n;
        }
        grad.row_mut(r)[y] = grad.row(r)[y] - inv_n;
    }
    Ok(PseudoLabelOutcome {
        loss: LossGrad {
            value: total * inv_n,
            grad,
        },
        confident,
    })
}

/// Weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Unsupervised contrastive.
    pub lambda1: f64,
    /// Supervised cross-entropy.
    pub lambda2: f64,
    /// Supervised contrastive.
    pub lambda3: f64,
    /// Pseudo-label.
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.08,
            lambda4: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::config("loss weights must be finite and non-negative"))
        }
    }
}

/// Values of the four loss terms at one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts<F> {
    pub unsup_contrastive: F,
    pub supervised: F,
    pub sup_contrastive: F,
    pub pseudo_label: F,
}

impl<F: Float> LossParts<F> {
    pub fn check_finite(&self) -> Result<()> {
        for (term, v) in [
            ("unsupervised contrastive loss", self.unsup_contrastive),
            ("supervised cross-entropy loss", self.supervised),
            ("supervised contrastive loss", self.sup_contrastive),
            ("pseudo-label loss", self.pseudo_label),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite { term });
            }
        }
        Ok(())
    }
}

/// `λ1·L_uc + λ2·L_ce + λ3·L_sc + λ4·L_pl`.
pub fn total_loss<F: Float>(parts: &LossParts<F>, w: &LossWeights) -> Result<F> {
    parts.check_finite()?;
    Ok(cast::<F>(w.lambda1) * parts.unsup_contrastive
        + cast::<F>(w.lambda2) * parts.supervised
        + cast::<F>(w.lambda3) * parts.sup_contrastive
        + cast::<F>(w.lambda4) * parts.pseudo_label)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cosine_similarity_cases() {
        let v = [0.3, -1.2, 2.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_sim(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_sim(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn empty_negatives_give_zero_loss() {
        let view = ContrastiveBatchView::new(m(&[&[1.0, 0.2], &[0.5, 0.5]]), vec![vec![1], vec![0]], vec![vec![], vec![]], 0.07)
            .unwrap();
        assert_eq!(contrastive_loss(&view, 0).unwrap(), 0.0);
    }

    #[test]
    fn equal_similarities_give_log_n() {
        // Anchor plus four others, all at the same similarity: loss = −log(1/4).
        let reps = m(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let view =
            ContrastiveBatchView::new(reps, vec![vec![1], vec![], vec![], vec![], vec![]], vec![vec![2, 3, 4], vec![], vec![], vec![], vec![]], 0.5)
                .unwrap();
        assert!((contrastive_loss(&view, 0).unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_view_rejects_bad_sets() {
        let reps = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(ContrastiveBatchView::new(reps.clone(), vec![vec![0], vec![]], vec![vec![], vec![]], 0.1).is_err());
        assert!(ContrastiveBatchView::new(reps.clone(), vec![vec![1], vec![]], vec![vec![1], vec![]], 0.1).is_err());
        assert!(matches!(
            ContrastiveBatchView::new(reps.clone(), vec![vec![1], vec![]], vec![vec![], vec![]], 0.0),
            Err(Error::Config(_))
        ));
        let view = ContrastiveBatchView::new(reps, vec![vec![1], vec![]], vec![vec![], vec![]], 0.1).unwrap();
        assert!(matches!(contrastive_loss(&view, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn odd_view_count_is_a_shape_error() {
        let z = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        assert!(matches!(unsup_contrastive_loss(&z, 0.07), Err(Error::Shape(_))));
    }

    #[test]
    fn single_class_supervised_contrastive_is_zero() {
        let z = m(&[&[1.0, 0.0], &[0.3, 1.0], &[-1.0, 0.2], &[0.5, 0.5]]);
        let out = sup_contrastive_loss(&z, &[4, 4], 0.07).unwrap();
        assert!(out.value.abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        let onehot = ProbVector::new(vec![0.0, 1.0, 0.0]);
        assert_eq!(supervised_ce_loss(&[onehot], &[1]).unwrap(), 0.0);
        let uniform = ProbVector::new(vec![0.1f64; 10]);
        assert!((supervised_ce_loss(&[uniform], &[7]).unwrap() - core::f64::consts::LN_10).abs() < 1e-6);
        let logits = Matrix::<f64>::zeros(1, 10);
        assert!((cross_entropy_logits(&logits, &[3]).unwrap().value - 10f64.ln()).abs() < 1e-12);
        assert!(matches!(cross_entropy_logits(&logits, &[10]), Err(Error::Domain(_))));
    }

    #[test]
    fn pseudo_label_threshold_is_strict() {
        let weak = vec![ProbVector::new(vec![0.94f64, 0.06]); 3];
        let strong = vec![ProbVector::new(vec![0.5, 0.5]); 3];
        let batch = PseudoLabelBatch { weak, strong, threshold: 0.95 };
        assert_eq!(pseudo_label_loss(&batch).unwrap(), (0.0, 0));

        let weak = vec![ProbVector::new(vec![0.96f64, 0.04]), ProbVector::new(vec![0.5, 0.5])];
        let strong = vec![ProbVector::new(vec![1.0, 0.0]), ProbVector::new(vec![0.3, 0.7])];
        let batch = PseudoLabelBatch { weak, strong, threshold: 0.95 };
        assert_eq!(pseudo_label_loss(&batch).unwrap(), (0.0, 1));
    }

    #[test]
    fn total_loss_cases() {
        let ones = LossParts { unsup_contrastive: 1.0, supervised: 1.0, sup_contrastive: 1.0, pseudo_label: 1.0 };
        let zero = LossWeights { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, lambda4: 0.0 };
        assert_eq!(total_loss(&ones, &zero).unwrap(), 0.0);
        assert!((total_loss(&ones, &LossWeights::default()).unwrap() - 3.08f64).abs() < 1e-12);
        let parts = LossParts { unsup_contrastive: 0.3, supervised: 1.7, sup_contrastive: 2.2, pseudo_label: 0.4 };
        let w = LossWeights::default();
        let doubled = LossWeights { lambda1: 2.0 * w.lambda1, lambda2: 2.0 * w.lambda2, lambda3: 2.0 * w.lambda3, lambda4: 2.0 * w.lambda4 };
        let (a, b) = (total_loss(&parts, &w).unwrap(), total_loss(&parts, &doubled).unwrap());
        assert!((b - 2.0 * a).abs() < 1e-12);
        let bad = LossParts { pseudo_label: f64::NAN, ..parts };
        assert_eq!(total_loss(&bad, &w), Err(Error::NonFinite { term: "pseudo-label loss" }));
    }
}
