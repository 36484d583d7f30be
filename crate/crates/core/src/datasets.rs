//! Datasets, the labeled/unlabeled split and seeded batch sampling.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::oracle::{validate_answer, LabelAnswer, LabelQuery, Oracle};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images with hidden ground-truth labels. Only oracles and evaluation read
/// the labels; training code sees labels through [`SplitState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<Image>,
    labels: Vec<usize>,
    num_classes: usize,
    class_names: Vec<String>,
    split: Split,
}

impl Dataset {
    pub fn new(
        images: Vec<Image>,
        labels: Vec<usize>,
        num_classes: usize,
        class_names: Vec<String>,
        split: Split,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if num_classes == 0 || class_names.len() != num_classes {
            return Err(Error::config("need one class name per class"));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|im| im.shape() != first.shape()) {
                return Err(Error::shape("images differ in shape"));
            }
        }
        if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::domain(format!("label {y} out of range for {num_classes} classes")));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            class_names,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn hidden_label(&self, i: usize) -> Option<usize> {
        self.labels.get(i).copied()
    }

    pub fn hidden_labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// `(height, width, channels)` shared by all images.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(Image::shape)
    }

    /// The first `n` images (or all, if fewer).
    pub fn truncated(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            split: self.split,
        }
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.fract() * 6.0).max(0.0);
    let i = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

const BLOB_BACKGROUND: f32 = 0.15;
const BLOB_NOISE: f32 = 0.12;

/// Class-conditional synthetic images: class `c` is a soft blob of hue
/// `c/num_classes` centred in row band `c`, with per-sample position and
/// intensity jitter and Gaussian pixel noise. Image `i` has label
/// `i % num_classes`. Class appearance does not depend on `seed`, so datasets
/// drawn with different seeds share one distribution.
pub fn make_synthetic_blobs(num_classes: usize, per_class: usize, image_side: usize, seed: u64) -> Result<Dataset> {
    if num_classes < 2 || per_class < 1 || image_side < 4 {
        return Err(Error::config(
            "synthetic blobs need num_classes >= 2, per_class >= 1, image_side >= 4",
        ));
    }
    let mut rng = rng::stream(seed, Stream::Synthetic, &[num_classes as u64, image_side as u64]);
    let noise = Normal::new(0.0f32, BLOB_NOISE).expect("valid noise scale");
    let side = image_side as f32;
    let radius = side / 5.0;
    let jitter = side / 8.0;
    let n = num_classes * per_class;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % num_classes;
        let color = hsv_to_rgb(c as f32 / num_classes as f32, 0.9, 0.9);
        let cy = (c as f32 + 0.5) * side / num_classes as f32 + rng.random_range(-jitter..=jitter);
        let cx = (side - 1.0) / 2.0 + rng.random_range(-jitter..=jitter);
        let amp = rng.random_range(0.7f32..=1.0);
        let mut img = Image::filled(image_side, image_side, 3, 0.0);
        for y in 0..image_side {
            for x in 0..image_side {
                let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                let g = amp * (-d2 / (2.0 * radius * radius)).exp();
                for (ch, &col) in color.iter().enumerate() {
                    let v = BLOB_BACKGROUND + g * (col - BLOB_BACKGROUND) + noise.sample(&mut rng);
                    img.set(y, x, ch, v.clamp(0.0, 1.0));
                }
            }
        }
        images.push(img);
        labels.push(c);
    }
    let class_names = (0..num_classes).map(|c| format!("blob-{c}")).collect();
    Dataset::new(images, labels, num_classes, class_names, Split::Train)
}

/// Same generator, marked as a test split.
pub fn make_synthetic_blobs_test(num_classes: usize, per_class: usize, image_side: usize, seed: u64) -> Result<Dataset> {
    let mut ds = make_synthetic_blobs(num_classes, per_class, image_side, seed)?;
    ds.split = Split::Test;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub labeled_batch_size: usize,
    pub unlabeled_batch_size: usize,
    pub seed: u64,
}

impl BatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.labeled_batch_size == 0 || self.unlabeled_batch_size == 0 {
            return Err(Error::config("batch sizes must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledEntry {
    pub label: usize,
    /// The answer this label came from.
    pub query_id: u64,
}

/// Disjoint labeled set and unlabeled pool over the training indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitState {
    labeled: BTreeMap<usize, LabeledEntry>,
    /// Sorted ascending.
    pool: Vec<usize>,
    total: usize,
    next_query_id: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct LabeledItem<'a> {
    pub index: usize,
    pub label: usize,
    pub image: &'a Image,
}

#[derive(Debug, Clone, Copy)]
pub struct UnlabeledItem<'a> {
    pub index: usize,
    pub image: &'a Image,
}

impl SplitState {
    /// Everything in the pool, nothing labeled.
    pub fn unlabeled(total: usize) -> Self {
        SplitState {
            labeled: BTreeMap::new(),
            pool: (0..total).collect(),
            total,
            next_query_id: 0,
        }
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    pub fn labeled(&self) -> &BTreeMap<usize, LabeledEntry> {
        &self.labeled
    }

    pub fn pool(&self) -> &[usize] {
        &self.pool
    }

    pub fn in_pool(&self, index: usize) -> bool {
        self.pool.binary_search(&index).is_ok()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Number of queries issued so far (answered or not).
    pub fn queries_issued(&self) -> u64 {
        self.next_query_id
    }

    /// Build a query for a pool index and reserve its id.
    pub fn issue_query(&mut self, ds: &Dataset, index: usize) -> Result<LabelQuery> {
        if !self.in_pool(index) {
            return Err(Error::State(format!("index {index} is not in the unlabeled pool")));
        }
        let query = LabelQuery {
            query_id: self.next_query_id,
            dataset_index: index,
            image: ds.image(index).clone(),
            class_names: ds.class_names().to_vec(),
        };
        self.next_query_id += 1;
        Ok(query)
    }

    /// Move the queried index from the pool to the labeled set.
    pub fn record_answer(&mut self, query: &LabelQuery, answer: &LabelAnswer) -> Result<()> {
        validate_answer(query, answer)?;
        let pos = self
            .pool
            .binary_search(&query.dataset_index)
            .map_err(|_| Error::State(format!("index {} is not in the unlabeled pool", query.dataset_index)))?;
        self.pool.remove(pos);
        self.labeled.insert(
            query.dataset_index,
            LabeledEntry {
                label: answer.label,
                query_id: answer.query_id,
            },
        );
        Ok(())
    }

    /// Labeled and pool indices are disjoint and together cover every index.
    pub fn is_conserved(&self) -> bool {
        if self.labeled.len() + self.pool.len() != self.total {
            return false;
        }
        if self.pool.windows(2).any(|w| w[0] >= w[1]) {
            return false;
        }
        self.pool.iter().all(|i| *i < self.total && !self.labeled.contains_key(i))
            && self.labeled.keys().all(|i| *i < self.total)
    }
}

/// Choose `n0` indices uniformly at random and label them through `oracle`.
pub fn init_split<O: Oracle + ?Sized>(ds: &Dataset, n0: usize, oracle: &mut O, seed: u64) -> Result<SplitState> {
    if n0 == 0 || n0 > ds.len() {
        return Err(Error::config(format!(
            "initial label count {n0} must be in 1..={}",
            ds.len()
        )));
    }
    let mut state = SplitState::unlabeled(ds.len());
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = rng::stream(seed, Stream::InitialSplit, &[]);
    let (chosen, _) = order.partial_shuffle(&mut rng, n0);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    for index in chosen {
        let query = state.issue_query(ds, index)?;
        let answer = oracle.ask(&query, None).map_err(Error::SplitInit)?;
        state.record_answer(&query, &answer).map_err(|e| match e {
            Error::Oracle(o) => Error::SplitInit(o),
            other => other,
        })?;
    }
    Ok(state)
}

/// Positions into a list of `len` items for batch number `step`: uniform with
/// replacement while `len < batch`, otherwise consecutive slices of a seeded
/// per-epoch permutation.
fn batch_positions(len: usize, batch: usize, seed: u64, stream: Stream, step: u64) -> Vec<usize> {
    if len < batch {
        let mut rng = rng::stream(seed, stream, &[step]);
        return (0..batch).map(|_| rng.random_range(0..len)).collect();
    }
    let per_epoch = (len / batch) as u64;
    let epoch = step / per_epoch;
    let slot = (step % per_epoch) as usize;
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut rng::stream(seed, stream, &[u64::MAX, epoch, len as u64]));
    perm[slot * batch..(slot + 1) * batch].to_vec()
}

/// Exactly `B_L` labeled examples for batch number `step`.
pub fn next_labeled_batch<'a>(
    state: &SplitState,
    ds: &'a Dataset,
    spec: &BatchSpec,
    step: u64,
) -> Result<Vec<LabeledItem<'a>>> {
    spec.validate()?;
    if state.labeled.is_empty() {
        return Err(Error::State("labeled set is empty".into()));
    }
    let entries: Vec<(usize, usize)> = state.labeled.iter().map(|(&i, e)| (i, e.label)).collect();
    Ok(batch_positions(entries.len(), spec.labeled_batch_size, spec.seed, Stream::LabeledBatch, step)
        .into_iter()
        .map(|p| {
            let (index, label) = entries[p];
            LabeledItem {
                index,
                label,
                image: ds.image(index),
            }
        })
        .collect())
}

/// Exactly `B_U` pool examples (with their dataset indices) for batch number `step`.
pub fn next_unlabeled_batch<'a>(
    state: &SplitState,
    ds: &'a Dataset,
    spec: &BatchSpec,
    step: u64,
) -> Result<Vec<UnlabeledItem<'a>>> {
    spec.validate()?;
    if state.pool.is_empty() {
        return Err(Error::State("unlabeled pool is empty".into()));
    }
    Ok(batch_positions(state.pool.len(), spec.unlabeled_batch_size, spec.seed, Stream::UnlabeledBatch, step)
        .into_iter()
        .map(|p| {
            let index = state.pool[p];
            UnlabeledItem {
                index,
                image: ds.image(index),
            }
        })
        .collect())
}
