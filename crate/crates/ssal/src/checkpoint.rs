//! Versioned JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "ssal-checkpoint", "version": 1, "reason": "query_event",
//!   "config": { "train": {...}, "data": {...} },
//!   "arch": {...}, "input_shape": [32, 32, 3], "num_classes": 10,
//!   "parameters": [{ "name": "backbone.0.weight", "data": [...] }, ...],
//!   "momentum_buffers": [ same names and lengths ],
//!   "momentum": 0.9, "weight_decay": 0.0005,
//!   "split": {...}, "progress": {...}
//! }
//! ```
//!
//! There is no generator state to save: every random draw is derived from
//! the seed in `config` and the counters in `progress`.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use ssal_core::datasets::SplitState;
use ssal_core::model::{ArchSpec, EncoderNet, Sgd};
use ssal_core::trainer::{CheckpointReason, Progress, TrainerState};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const FORMAT: &str = "ssal-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub reason: CheckpointReason,
    pub config: RunConfig,
    pub arch: ArchSpec,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub parameters: Vec<NamedArray>,
    pub momentum_buffers: Vec<NamedArray>,
    pub momentum: f32,
    pub weight_decay: f32,
    pub split: SplitState,
    pub progress: Progress,
}

fn split_named(net: &EncoderNet<f32>, flat: &[f32]) -> Vec<NamedArray> {
    net.named_parameters()
        .into_iter()
        .map(|(name, r)| NamedArray {
            name,
            data: flat[r].to_vec(),
        })
        .collect()
}

fn join_named(net: &EncoderNet<f32>, arrays: &[NamedArray], what: &str, path: &Path) -> Result<Vec<f32>> {
    let layout = net.named_parameters();
    if layout.len() != arrays.len() {
        return Err(Error::format(path, format!("{what}: expected {} arrays, found {}", layout.len(), arrays.len())));
    }
    let mut flat = vec![0.0; net.num_params()];
    for ((name, r), a) in layout.into_iter().zip(arrays) {
        if a.name != name || a.data.len() != r.len() {
            return Err(Error::format(
                path,
                format!("{what}: array `{}` ({} values) where `{name}` ({} values) was expected", a.name, a.data.len(), r.len()),
            ));
        }
        flat[r].copy_from_slice(&a.data);
    }
    Ok(flat)
}

impl Checkpoint {
    pub fn capture(state: &TrainerState, config: &RunConfig, reason: CheckpointReason) -> Self {
        let net = &state.net;
        let (h, w, c) = net.input_shape();
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            reason,
            config: config.clone(),
            arch: net.arch().clone(),
            input_shape: [h, w, c],
            num_classes: net.num_classes(),
            parameters: split_named(net, net.params()),
            momentum_buffers: split_named(net, state.optimizer.velocity()),
            momentum: state.optimizer.momentum,
            weight_decay: state.optimizer.weight_decay,
            split: state.split.clone(),
            progress: state.progress,
        }
    }

    fn shape(&self) -> (usize, usize, usize) {
        let [h, w, c] = self.input_shape;
        (h, w, c)
    }

    fn layout(&self) -> Result<EncoderNet<f32>> {
        Ok(EncoderNet::new(self.arch.clone(), self.shape(), self.num_classes, 0)?)
    }

    /// The saved network alone.
    pub fn network(&self) -> Result<EncoderNet<f32>> {
        let layout = self.layout()?;
        let params = join_named(&layout, &self.parameters, "parameters", Path::new("checkpoint"))?;
        Ok(EncoderNet::from_params(self.arch.clone(), self.shape(), self.num_classes, params)?)
    }

    /// Everything needed to continue the run.
    pub fn restore(&self) -> Result<TrainerState> {
        let net = self.network()?;
        let velocity = join_named(&net, &self.momentum_buffers, "momentum_buffers", Path::new("checkpoint"))?;
        Ok(TrainerState {
            optimizer: Sgd::from_velocity(self.momentum, self.weight_decay, velocity),
            net,
            split: self.split.clone(),
            progress: self.progress,
        })
    }

    /// Write atomically: a temporary sibling file is renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self).map_err(|e| Error::format(&tmp, e.to_string()))?;
        out.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(out);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint {} v{} (want {FORMAT} v{VERSION})", ck.format, ck.version),
            ));
        }
        let layout = ck.layout()?;
        join_named(&layout, &ck.parameters, "parameters", path)?;
        join_named(&layout, &ck.momentum_buffers, "momentum_buffers", path)?;
        Ok(ck)
    }
}
