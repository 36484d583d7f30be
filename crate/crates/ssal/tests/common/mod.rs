#![allow(dead_code)]

use ssal::config::RunConfig;

/// A run small enough for a test: 3 blob classes of 8×8 images, a 16-unit MLP,
/// 40 joint steps and 8 labels.
pub const TINY: &str = r#"
steps = 40
warmup_epochs = 1
eval_every = 10
seed = 5

[batch]
labeled = 4
unlabeled = 12

[active]
n0 = 3
b_smp = 5
budget = 8

[model]
backbone = "mlp:16"
projection_hidden = 8
projection_dim = 4

[data]
dataset = "blobs"
blobs_classes = 3
blobs_per_class = 10
blobs_test_per_class = 5
blobs_side = 8
blobs_seed = 1
"#;

pub fn tiny() -> RunConfig {
    RunConfig::from_toml_str(TINY, "tiny.toml".as_ref()).unwrap()
}
