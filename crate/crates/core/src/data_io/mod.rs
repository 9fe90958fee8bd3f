//! Datasets, network files, I/O-set sampling, training and CSV output.

mod idx;
mod train;

pub use idx::{load_idx_images, load_idx_labels, parse_idx_images, parse_idx_labels, IMAGE_MAGIC, LABEL_MAGIC};
pub use train::{glorot_init, train_mlp, TrainConfig, TrainReport};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abstraction::AbstractionState;
use crate::error::{Error, Result};
use crate::network::{LabeledDataset, Network};
use crate::numerics::Vector;

pub fn load_dataset(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    LabeledDataset::new(load_idx_images(images)?, load_idx_labels(labels)?)
}

/// Writes a network as JSON. Floats use the shortest representation that
/// parses back to the identical value.
pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    save_json(net, path)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    load_json(path)
}

/// Version written to and required from abstraction sidecar files.
pub const STATE_FORMAT: u32 = 1;

#[derive(Serialize)]
struct SidecarOut<'a> {
    format: u32,
    #[serde(flatten)]
    state: &'a AbstractionState,
}

#[derive(Deserialize)]
struct SidecarIn {
    format: u32,
    #[serde(flatten)]
    state: AbstractionState,
}

/// Writes the full abstraction state (networks, records, D matrices) so
/// refinement can resume in another process.
pub fn save_state(state: &AbstractionState, path: impl AsRef<Path>) -> Result<()> {
    save_json(&SidecarOut { format: STATE_FORMAT, state }, path)
}

pub fn load_state(path: impl AsRef<Path>) -> Result<AbstractionState> {
    let side: SidecarIn = load_json(path)?;
    if side.format != STATE_FORMAT {
        return Err(Error::State(format!("unsupported sidecar format {}", side.format)));
    }
    Ok(side.state)
}

pub(crate) fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn load_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Indices of `n` examples drawn uniformly without replacement.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n} inputs from {len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, len, n).into_vec())
}

/// The I/O set: `n` training inputs drawn uniformly without replacement.
pub fn sample_io_set(data: &LabeledDataset, n: usize, seed: u64) -> Result<Vec<Vector>> {
    Ok(sample_indices(data.len(), n, seed)?
        .into_iter()
        .map(|i| data.inputs[i].clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub method: String,
    pub reduction_rate: f64,
    pub accuracy: f64,
    pub wall_time_s: f64,
}

pub const SWEEP_HEADER: [&str; 4] = ["method", "reduction_rate", "accuracy", "wall_time_s"];

pub fn write_sweep_csv<W: std::io::Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in records {
        w.write_record([
            r.method.clone(),
            format!("{}", r.reduction_rate),
            format!("{}", r.accuracy),
            format!("{:.3}", r.wall_time_s),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn write_csv(records: &[SweepRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_sweep_csv(records, file)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}
