//! File formats: the binary dataset container, model checkpoints, CSV
//! exports, and content hashing.
//!
//! Containers open with magic `SFML`, a format version, and a four-byte
//! record kind (`TRAJ` or `PAIR`), followed by a fixed header
//! (n_traj, len, dim, dt, seed) and a row-major little-endian f64 payload.
//! Checkpoints are a length-prefixed JSON header plus the raw parameter
//! blob; both formats round-trip bit-exactly.

use crate::dataset::{BatchPlan, PairStore};
use crate::error::{Error, Result};
use crate::evaluation::{ConditionalSamples, DriftDiffTable, EnsembleStats};
use crate::neural::{FmlModel, NetParams};
use crate::sde::TrajectoryDataset;
use crate::training::TrainHistory;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SFML";
pub const FORMAT_VERSION: u16 = 1;

const KIND_TRAJ: &[u8; 4] = b"TRAJ";
const KIND_PAIR: &[u8; 4] = b"PAIR";

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a file's content.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

/// Encoder-then-decoder parameters as little-endian bytes; the checksum and
/// checkpoint blob share this encoding.
pub fn params_le_bytes(model: &FmlModel) -> Vec<u8> {
    let params = model.params_concat();
    let mut bytes = Vec::with_capacity(params.len() * 8);
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    bytes
}

struct Header {
    n_traj: u64,
    len: u64,
    dim: u64,
    dt: f64,
    seed: u64,
}

fn write_preamble(w: &mut impl Write, kind: &[u8; 4], h: &Header) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(FORMAT_VERSION)?;
    w.write_all(kind)?;
    w.write_u64::<LittleEndian>(h.n_traj)?;
    w.write_u64::<LittleEndian>(h.len)?;
    w.write_u64::<LittleEndian>(h.dim)?;
    w.write_f64::<LittleEndian>(h.dt)?;
    w.write_u64::<LittleEndian>(h.seed)?;
    Ok(())
}

fn read_preamble(r: &mut impl Read, want_kind: &[u8; 4]) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Container(format!(
            "bad magic {magic:?}, not an SFML container"
        )));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Container(format!(
            "unsupported container version {version} (supported: {FORMAT_VERSION})"
        )));
    }
    let mut kind = [0u8; 4];
    r.read_exact(&mut kind)?;
    if &kind != want_kind {
        return Err(Error::Container(format!(
            "record kind {} where {} was expected",
            String::from_utf8_lossy(&kind),
            String::from_utf8_lossy(want_kind)
        )));
    }
    Ok(Header {
        n_traj: r.read_u64::<LittleEndian>()?,
        len: r.read_u64::<LittleEndian>()?,
        dim: r.read_u64::<LittleEndian>()?,
        dt: r.read_f64::<LittleEndian>()?,
        seed: r.read_u64::<LittleEndian>()?,
    })
}

fn payload_len(h: &Header, per_row: u64) -> Result<usize> {
    h.n_traj
        .checked_mul(per_row)
        .and_then(|v| v.checked_mul(h.dim))
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| Error::Container("header describes an impossibly large payload".into()))
}

fn write_floats(w: &mut impl Write, data: &[f64]) -> Result<()> {
    for v in data {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

pub fn save_trajectories(path: impl AsRef<Path>, ds: &TrajectoryDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_preamble(
        &mut w,
        KIND_TRAJ,
        &Header {
            n_traj: ds.n_traj() as u64,
            len: ds.len() as u64,
            dim: ds.dim() as u64,
            dt: ds.dt,
            seed: ds.seed,
        },
    )?;
    write_floats(&mut w, ds.states.as_slice().expect("states are contiguous"))?;
    w.flush()?;
    Ok(())
}

pub fn load_trajectories(path: impl AsRef<Path>) -> Result<TrajectoryDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let h = read_preamble(&mut r, KIND_TRAJ)?;
    let total = payload_len(&h, h.len + 1)?;
    let mut data = vec![0.0f64; total];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    let states = Array3::from_shape_vec(
        (h.n_traj as usize, h.len as usize + 1, h.dim as usize),
        data,
    )
    .map_err(|e| Error::Container(format!("payload shape: {e}")))?;
    Ok(TrajectoryDataset {
        states,
        dt: h.dt,
        seed: h.seed,
    })
}

/// Pairs serialize interleaved: each row is `x0_i` followed by `x1_i`.
pub fn save_pairs(path: impl AsRef<Path>, store: &PairStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_preamble(
        &mut w,
        KIND_PAIR,
        &Header {
            n_traj: store.n_traj() as u64,
            len: store.traj_len() as u64,
            dim: store.dim() as u64,
            dt: store.dt(),
            seed: store.seed(),
        },
    )?;
    let (x0, x1) = (store.x0(), store.x1());
    for i in 0..store.len() {
        write_floats(&mut w, x0.row(i).to_slice().expect("row is contiguous"))?;
        write_floats(&mut w, x1.row(i).to_slice().expect("row is contiguous"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<PairStore> {
    let mut r = BufReader::new(File::open(path)?);
    let h = read_preamble(&mut r, KIND_PAIR)?;
    let rows = h
        .n_traj
        .checked_mul(h.len)
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| Error::Container("header describes an impossibly large payload".into()))?;
    let d = usize::try_from(h.dim)
        .map_err(|_| Error::Container("header describes an impossibly large payload".into()))?;
    let total = rows
        .checked_mul(2)
        .and_then(|v| v.checked_mul(d))
        .ok_or_else(|| Error::Container("header describes an impossibly large payload".into()))?;
    let mut data = vec![0.0f64; total];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    let mut x0 = Array2::zeros((rows, d));
    let mut x1 = Array2::zeros((rows, d));
    for i in 0..rows {
        for k in 0..d {
            x0[(i, k)] = data[i * 2 * d + k];
            x1[(i, k)] = data[i * 2 * d + d + k];
        }
    }
    PairStore::from_parts(x0, x1, h.dt, h.seed, h.n_traj as usize, h.len as usize)
}

/// Checkpoint metadata stored ahead of the parameter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dim: usize,
    pub latent_dim: usize,
    pub dt: f64,
    pub encoder_sizes: Vec<usize>,
    pub decoder_sizes: Vec<usize>,
    pub activation: String,
    pub config_hash: String,
}

pub const ACTIVATION_TAG: &str = "elu1-hidden-linear-out";

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &FmlModel,
    config_hash: &str,
) -> Result<()> {
    let header = CheckpointHeader {
        dim: model.dim,
        latent_dim: model.latent_dim,
        dt: model.dt,
        encoder_sizes: model.encoder.layer_sizes.clone(),
        decoder_sizes: model.decoder.layer_sizes.clone(),
        activation: ACTIVATION_TAG.to_string(),
        config_hash: config_hash.to_string(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<LittleEndian>(u32::try_from(json.len()).expect("header fits"))?;
    w.write_all(&json)?;
    w.write_all(&params_le_bytes(model))?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(FmlModel, CheckpointHeader)> {
    let mut r = BufReader::new(File::open(path)?);
    let json_len = r.read_u32::<LittleEndian>()? as usize;
    if json_len > 1 << 20 {
        return Err(Error::Checkpoint(format!(
            "header length {json_len} exceeds the 1 MiB bound"
        )));
    }
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;

    if header.encoder_sizes.first() != Some(&(2 * header.dim))
        || header.encoder_sizes.last() != Some(&header.latent_dim)
        || header.decoder_sizes.first() != Some(&(header.dim + header.latent_dim))
        || header.decoder_sizes.last() != Some(&header.dim)
    {
        return Err(Error::Checkpoint(
            "layer sizes disagree with dim/latent_dim".into(),
        ));
    }

    let n_enc = NetParams::param_count_for(&header.encoder_sizes);
    let n_dec = NetParams::param_count_for(&header.decoder_sizes);
    let mut blob = vec![0.0f64; n_enc + n_dec];
    r.read_f64_into::<LittleEndian>(&mut blob)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameter blob".into()));
    }

    let model = FmlModel {
        encoder: NetParams {
            layer_sizes: header.encoder_sizes.clone(),
            params: blob[..n_enc].to_vec(),
        },
        decoder: NetParams {
            layer_sizes: header.decoder_sizes.clone(),
            params: blob[n_enc..].to_vec(),
        },
        dim: header.dim,
        latent_dim: header.latent_dim,
        dt: header.dt,
    };
    Ok((model, header))
}

fn csv_writer(path: impl AsRef<Path>) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_row(w: &mut impl Write, cells: impl IntoIterator<Item = String>) -> Result<()> {
    let mut first = true;
    for c in cells {
        if !first {
            w.write_all(b",")?;
        }
        w.write_all(c.as_bytes())?;
        first = false;
    }
    w.write_all(b"\n")?;
    Ok(())
}

fn numbered(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |k| format!("{prefix}_{k}"))
}

/// Columns: traj_id, step, x_1..x_d.
pub fn write_trajectories_csv(path: impl AsRef<Path>, ds: &TrajectoryDataset) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header = ["traj_id".to_string(), "step".to_string()]
        .into_iter()
        .chain(numbered("x", ds.dim()));
    write_row(&mut w, header)?;
    for t in 0..ds.n_traj() {
        for s in 0..=ds.len() {
            let state = ds.state(t, s);
            let cells = [t.to_string(), s.to_string()]
                .into_iter()
                .chain(state.iter().map(|v| v.to_string()));
            write_row(&mut w, cells)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns: epoch, mse, kde, moment, total, seconds.
pub fn write_history_csv(path: impl AsRef<Path>, history: &TrainHistory) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(
        &mut w,
        ["epoch", "mse", "kde", "moment", "total", "seconds"]
            .into_iter()
            .map(String::from),
    )?;
    for r in &history.records {
        write_row(
            &mut w,
            [
                r.epoch.to_string(),
                r.mse.to_string(),
                r.kde.to_string(),
                r.moment.to_string(),
                r.total.to_string(),
                r.seconds.to_string(),
            ],
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: step, time, mean_1..d, std_1..d.
pub fn write_ensemble_csv(path: impl AsRef<Path>, stats: &EnsembleStats) -> Result<()> {
    let mut w = csv_writer(path)?;
    let d = stats.mean.ncols();
    let header = ["step".to_string(), "time".to_string()]
        .into_iter()
        .chain(numbered("mean", d))
        .chain(numbered("std", d));
    write_row(&mut w, header)?;
    for (s, &t) in stats.times.iter().enumerate() {
        let mean = stats.mean.row(s);
        let std = stats.std.row(s);
        let cells = [s.to_string(), t.to_string()]
            .into_iter()
            .chain(mean.iter().map(|v| v.to_string()))
            .chain(std.iter().map(|v| v.to_string()));
        write_row(&mut w, cells)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: x_1..d, a_hat_1..d, b_hat_1..d.
pub fn write_drift_diff_csv(path: impl AsRef<Path>, table: &DriftDiffTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    let d = table.x_points.ncols();
    let header = numbered("x", d)
        .chain(numbered("a_hat", d))
        .chain(numbered("b_hat", d));
    write_row(&mut w, header)?;
    for i in 0..table.x_points.nrows() {
        let cells = table
            .x_points
            .row(i)
            .iter()
            .chain(table.a_hat.row(i).iter())
            .chain(table.b_hat.row(i).iter())
            .map(|v| v.to_string())
            .collect::<Vec<_>>();
        write_row(&mut w, cells)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns: batch_id, member_index.
pub fn write_batch_plan_csv(path: impl AsRef<Path>, plan: &BatchPlan) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, ["batch_id", "member_index"].into_iter().map(String::from))?;
    for (b, members) in plan.batches.iter().enumerate() {
        for &m in members {
            write_row(&mut w, [b.to_string(), m.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns: x_1..d (one sampled next state per row).
pub fn write_conditional_csv(path: impl AsRef<Path>, cond: &ConditionalSamples) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(&mut w, numbered("x", cond.samples.ncols()))?;
    for i in 0..cond.samples.nrows() {
        write_row(&mut w, cond.samples.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
