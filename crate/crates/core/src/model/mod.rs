//! Encoder network with a projection head and a classification head.
//!
//! ```text
//! image ─► backbone ─► features ─┬─► projection head ─► z ─► z/|z|  (representation)
//!                                └─► classifier head ─► logits ─► softmax (prediction)
//! ```
//!
//! Gradients are computed by explicit backward passes. All parameters are
//! stored in one flat buffer so the optimizer and checkpoints treat them as a
//! single vector; [`EncoderNet::named_parameters`] recovers the per-array view.

mod layers;
mod optim;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use core::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};

pub use layers::{LayerSpec, Shape};
pub use optim::Sgd;

use layers::{Aux, Layer};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, Stream};
use crate::tensor::{self, Matrix};

/// Unit-length representation used by the contrastive losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation<F> {
    pub vec: Vec<F>,
}

impl<F: Float> Representation<F> {
    pub fn from_raw(raw: &[F]) -> Self {
        let norm = tensor::dot(raw, raw).sqrt().max(F::min_positive_value());
        Representation {
            vec: raw.iter().map(|&v| v / norm).collect(),
        }
    }
}

/// Per-image representations and class probabilities.
pub type Outputs<F> = (Vec<Representation<F>>, Vec<ProbVector<F>>);

/// Per-class probabilities (softmax output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector<F> {
    pub probs: Vec<F>,
}

impl<F: Float> ProbVector<F> {
    pub fn from_logits(logits: &[F]) -> Self {
        ProbVector {
            probs: tensor::softmax(logits),
        }
    }

    pub fn new(probs: Vec<F>) -> Self {
        ProbVector { probs }
    }

    pub fn argmax(&self) -> usize {
        tensor::argmax(&self.probs)
    }

    pub fn max(&self) -> F {
        self.probs.iter().copied().fold(F::neg_infinity(), F::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Stochastic layers active, driven by a stream derived from `dropout_seed`.
    Train { dropout_seed: u64 },
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Projection,
    Classifier,
}

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub backbone: Vec<LayerSpec>,
    pub projection_hidden: usize,
    pub projection_dim: usize,
}

impl ArchSpec {
    /// Dense + ReLU per hidden width.
    pub fn mlp(hidden: &[usize], projection_hidden: usize, projection_dim: usize) -> Self {
        let backbone = hidden
            .iter()
            .flat_map(|&h| [LayerSpec::Dense { out: h }, LayerSpec::Relu])
            .collect();
        ArchSpec {
            backbone,
            projection_hidden,
            projection_dim,
        }
    }

    /// conv-norm-relu-pool per channel width.
    pub fn conv(channels: &[usize], projection_hidden: usize, projection_dim: usize) -> Self {
        let backbone = channels
            .iter()
            .flat_map(|&c| {
                [
                    LayerSpec::Conv3x3 { out_channels: c },
                    LayerSpec::Norm,
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2,
                ]
            })
            .collect();
        ArchSpec {
            backbone,
            projection_hidden,
            projection_dim,
        }
    }

    /// Parse a backbone descriptor such as `mlp:64,64` or `conv:16,32,64,128`.
    pub fn parse(backbone: &str, projection_hidden: usize, projection_dim: usize) -> Result<Self> {
        let (kind, widths) = backbone
            .split_once(':')
            .ok_or_else(|| Error::config(format!("bad architecture `{backbone}`: expected kind:w1,w2,...")))?;
        let widths = widths
            .split(',')
            .map(|w| usize::from_str(w.trim()))
            .collect::<core::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::config(format!("bad layer widths in `{backbone}`")))?;
        match kind.trim() {
            "mlp" => Ok(Self::mlp(&widths, projection_hidden, projection_dim)),
            "conv" => Ok(Self::conv(&widths, projection_hidden, projection_dim)),
            other => Err(Error::config(format!("unknown architecture kind `{other}`"))),
        }
    }
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec::conv(&[16, 32, 64, 128], 128, 128)
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct StackCache<F> {
    inputs: Vec<Matrix<F>>,
    aux: Vec<Aux<F>>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Pass<F> {
    backbone: StackCache<F>,
    features: Matrix<F>,
    projection: StackCache<F>,
    z: Matrix<F>,
    classifier: StackCache<F>,
    logits: Matrix<F>,
}

impl<F: Float> Pass<F> {
    /// Raw projection outputs (before normalization).
    pub fn z(&self) -> &Matrix<F> {
        &self.z
    }

    pub fn logits(&self) -> &Matrix<F> {
        &self.logits
    }

    pub fn features(&self) -> &Matrix<F> {
        &self.features
    }

    pub fn representations(&self) -> Vec<Representation<F>> {
        (0..self.z.rows())
            .map(|r| Representation::from_raw(self.z.row(r)))
            .collect()
    }

    pub fn probabilities(&self) -> Vec<ProbVector<F>> {
        (0..self.logits.rows())
            .map(|r| ProbVector::from_logits(self.logits.row(r)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderNet<F> {
    arch: ArchSpec,
    input: (usize, usize, usize),
    num_classes: usize,
    backbone: Vec<Layer>,
    projection: Vec<Layer>,
    classifier: Vec<Layer>,
    params: Vec<F>,
}

fn build_stack(specs: &[LayerSpec], mut shape: Shape, offset: &mut usize) -> Result<(Vec<Layer>, Shape)> {
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let (layer, end) = Layer::build(spec.clone(), shape, *offset)?;
        shape = layer.output;
        *offset = end;
        layers.push(layer);
    }
    Ok((layers, shape))
}

impl<F: Float> EncoderNet<F> {
    /// Build and randomly initialize a network for `(height, width, channels)` images.
    pub fn new(arch: ArchSpec, input: (usize, usize, usize), num_classes: usize, seed: u64) -> Result<Self> {
        let mut net = Self::layout(arch, input, num_classes)?;
        let mut rng = rng::stream(seed, Stream::Init, &[]);
        let mut params = core::mem::take(&mut net.params);
        for layer in net.backbone.iter().chain(&net.projection).chain(&net.classifier) {
            layer.init(&mut params, &mut rng);
        }
        net.params = params;
        Ok(net)
    }

    /// Rebuild a network from its descriptor and a flat parameter vector.
    pub fn from_params(arch: ArchSpec, input: (usize, usize, usize), num_classes: usize, params: Vec<F>) -> Result<Self> {
        let mut net = Self::layout(arch, input, num_classes)?;
        if params.len() != net.params.len() {
            return Err(Error::shape(format!(
                "parameter vector has {} values, architecture needs {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    fn layout(arch: ArchSpec, input: (usize, usize, usize), num_classes: usize) -> Result<Self> {
        let (h, w, c) = input;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::config("input dimensions must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if arch.projection_dim == 0 || arch.projection_hidden == 0 {
            return Err(Error::config("projection head widths must be positive"));
        }
        let mut offset = 0;
        let (backbone, feat) = build_stack(&arch.backbone, Shape { c, h, w }, &mut offset)?;
        let (projection, _) = build_stack(
            &[
                LayerSpec::Dense {
                    out: arch.projection_hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    out: arch.projection_dim,
                },
            ],
            feat,
            &mut offset,
        )?;
        let (classifier, _) = build_stack(&[LayerSpec::Dense { out: num_classes }], feat, &mut offset)?;
        Ok(EncoderNet {
            arch,
            input,
            num_classes,
            backbone,
            projection,
            classifier,
            params: vec![F::zero(); offset],
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    /// `(height, width, channels)` of accepted images.
    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn projection_dim(&self) -> usize {
        self.arch.projection_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    fn stack(&self, group: ParamGroup) -> &[Layer] {
        match group {
            ParamGroup::Backbone => &self.backbone,
            ParamGroup::Projection => &self.projection,
            ParamGroup::Classifier => &self.classifier,
        }
    }

    /// Range of the flat parameter buffer owned by `group`.
    pub fn group_range(&self, group: ParamGroup) -> Range<usize> {
        let layers = self.stack(group);
        let start = layers.iter().find(|l| l.has_params()).map(|l| l.weight.start);
        let end = layers.iter().rev().find(|l| l.has_params()).map(|l| l.bias.end);
        match (start, end) {
            (Some(s), Some(e)) => s..e,
            _ => 0..0,
        }
    }

    /// Ranges subject to weight decay.
    pub fn decayed_ranges(&self) -> Vec<Range<usize>> {
        self.all_layers()
            .filter(|l| l.decayed())
            .map(|l| l.weight.clone())
            .collect()
    }

    fn all_layers(&self) -> impl Iterator<Item = &Layer> {
        self.backbone.iter().chain(&self.projection).chain(&self.classifier)
    }

    /// `(name, range)` for every parameter array, e.g. `backbone.0.weight`.
    pub fn named_parameters(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        for (prefix, layers) in [
            ("backbone", &self.backbone),
            ("projection", &self.projection),
            ("classifier", &self.classifier),
        ] {
            for (i, l) in layers.iter().enumerate().filter(|(_, l)| l.has_params()) {
                out.push((format!("{prefix}.{i}.weight"), l.weight.clone()));
                out.push((format!("{prefix}.{i}.bias"), l.bias.clone()));
            }
        }
        out
    }

    /// Stack images into a CHW-flattened input matrix.
    pub fn input_matrix<'a>(&self, images: impl IntoIterator<Item = &'a Image>) -> Result<Matrix<F>> {
        let (h, w, c) = self.input;
        let mut data = Vec::new();
        let mut rows = 0;
        for img in images {
            if img.shape() != (h, w, c) {
                return Err(Error::config(format!(
                    "image shape {:?} does not match network input {:?}",
                    img.shape(),
                    self.input
                )));
            }
            img.extend_chw(&mut data);
            rows += 1;
        }
        Matrix::from_vec(rows, h * w * c, data)
    }

    pub fn forward_pass(&self, x: &Matrix<F>, mode: Mode) -> Result<Pass<F>> {
        let (h, w, c) = self.input;
        if x.cols() != h * w * c {
            return Err(Error::config(format!(
                "input has {} features, network expects {}",
                x.cols(),
                h * w * c
            )));
        }
        let seed = match mode {
            Mode::Train { dropout_seed } => Some(dropout_seed),
            Mode::Eval => None,
        };
        let (features, backbone) = run_stack(&self.backbone, &self.params, x.clone(), seed, 0);
        let (z, projection) = run_stack(&self.projection, &self.params, features.clone(), seed, 1);
        let (logits, classifier) = run_stack(&self.classifier, &self.params, features.clone(), seed, 2);
        Ok(Pass {
            backbone,
            features,
            projection,
            z,
            classifier,
            logits,
        })
    }

    /// Gradient of a loss w.r.t. all parameters, given the loss gradients w.r.t.
    /// the raw projection outputs `dz` and the logits `dlogits`.
    pub fn backward(&self, pass: &Pass<F>, dz: Option<&Matrix<F>>, dlogits: Option<&Matrix<F>>) -> Vec<F> {
        let mut grads = vec![F::zero(); self.params.len()];
        let mut dfeat = Matrix::zeros(pass.features.rows(), pass.features.cols());
        for (d, layers, cache) in [
            (dz, &self.projection, &pass.projection),
            (dlogits, &self.classifier, &pass.classifier),
        ] {
            if let Some(d) = d {
                let g = back_stack(layers, &self.params, cache, d.clone(), &mut grads);
                for (a, &b) in dfeat.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + b;
                }
            }
        }
        back_stack(&self.backbone, &self.params, &pass.backbone, dfeat, &mut grads);
        grads
    }

    /// Representations and class probabilities for a batch of images.
    pub fn forward(&self, batch: &[Image], mode: Mode) -> Result<Outputs<F>> {
        let x = self.input_matrix(batch)?;
        let pass = self.forward_pass(&x, mode)?;
        Ok((pass.representations(), pass.probabilities()))
    }

    /// Same network with parameters converted to another float type.
    pub fn cast<G: Float>(&self) -> EncoderNet<G> {
        EncoderNet {
            arch: self.arch.clone(),
            input: self.input,
            num_classes: self.num_classes,
            backbone: self.backbone.clone(),
            projection: self.projection.clone(),
            classifier: self.classifier.clone(),
            params: self.params.iter().map(|&p| G::from(p).unwrap()).collect(),
        }
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (name, r) in self.named_parameters() {
            s.push_str(&name);
            s.push(' ');
            s.push_str(&r.len().to_string());
            s.push('\n');
        }
        s
    }
}

fn run_stack<F: Float>(
    layers: &[Layer],
    params: &[F],
    mut x: Matrix<F>,
    dropout_seed: Option<u64>,
    stack_id: u64,
) -> (Matrix<F>, StackCache<F>) {
    let mut cache = StackCache {
        inputs: Vec::with_capacity(layers.len()),
        aux: Vec::with_capacity(layers.len()),
    };
    for (i, layer) in layers.iter().enumerate() {
        let mut rng = dropout_seed.map(|s| rng::stream(s, Stream::Dropout, &[stack_id, i as u64]));
        let (y, aux) = layer.forward(params, &x, rng.as_mut());
        cache.inputs.push(x);
        cache.aux.push(aux);
        x = y;
    }
    (x, cache)
}

fn back_stack<F: Float>(
    layers: &[Layer],
    params: &[F],
    cache: &StackCache<F>,
    mut dy: Matrix<F>,
    grads: &mut [F],
) -> Matrix<F> {
    for (i, layer) in layers.iter().enumerate().rev() {
        dy = layer.backward(params, &cache.inputs[i], &cache.aux[i], &dy, grads);
    }
    dy
}
