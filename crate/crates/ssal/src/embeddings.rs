//! Projection-space embedding export.
//!
//! CSV with header `index,label,z0,...,z{d-1}`: one row per image, the hidden
//! label, and the unit-length representation computed in eval mode on the raw
//! image.

use std::path::Path;

use ssal_core::datasets::Dataset;
use ssal_core::model::{EncoderNet, Mode};

use crate::error::{Error, Result};

const CHUNK: usize = 256;

/// Write the embeddings of `ds` to `out`; returns the number of rows.
pub fn export_embeddings(net: &EncoderNet<f32>, ds: &Dataset, out: &Path) -> Result<usize> {
    let csv_err = |e: csv::Error| Error::Other(format!("{}: {e}", out.display()));
    let mut w = csv::Writer::from_path(out).map_err(csv_err)?;
    let mut header = vec!["index".to_string(), "label".to_string()];
    header.extend((0..net.projection_dim()).map(|i| format!("z{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (c, chunk) in ds.images().chunks(CHUNK).enumerate() {
        let (reps, _) = net.forward(chunk, Mode::Eval)?;
        for (i, r) in reps.iter().enumerate() {
            let index = c * CHUNK + i;
            let mut row = vec![index.to_string(), ds.hidden_label(index).unwrap_or_default().to_string()];
            row.extend(r.vec.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(ds.len())
}
