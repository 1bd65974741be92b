//! Binary tensor-map containers: training checkpoints and standalone weight
//! files (pretrained backbones) share one entry codec with a version header.
//!
//! Values are stored as little-endian f64 regardless of the in-memory scalar
//! type; f32 -> f64 -> f32 round-trips are exact, so checkpoints restore
//! bit-identical parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::Scalar;

const WEIGHTS_MAGIC: &[u8; 8] = b"ACNWGT01";
const CHECKPOINT_MAGIC: &[u8; 8] = b"ACNCKP01";
pub const FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::io(path, e)
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_string<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_string<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn write_entries<W: Write>(w: &mut W, entries: &[(String, ArrayD<f64>)]) -> std::io::Result<()> {
    write_u32(w, entries.len() as u32)?;
    for (name, arr) in entries {
        write_string(w, name)?;
        w.write_all(&[arr.ndim() as u8])?;
        for &d in arr.shape() {
            write_u64(w, d as u64)?;
        }
        for &v in arr.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_entries<R: Read>(r: &mut R) -> std::io::Result<Vec<(String, ArrayD<f64>)>> {
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(r)?;
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim)?;
        let mut dims = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            dims.push(read_u64(r)? as usize);
        }
        let numel: usize = dims.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        out.push((name, arr));
    }
    Ok(out)
}

/// Write a standalone name -> tensor map (pretrained weight file format).
pub fn write_weights(path: &Path, entries: &[(String, ArrayD<f64>)]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        write_u32(&mut w, FORMAT_VERSION)?;
        write_entries(&mut w, entries)?;
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn read_weights(path: &Path) -> Result<Vec<(String, ArrayD<f64>)>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a weight file (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r).map_err(|e| io_err(path, e))?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported weight file version {version} (expected {FORMAT_VERSION})"
        )));
    }
    read_entries(&mut r).map_err(|e| io_err(path, e))
}

pub struct CheckpointData {
    pub version: u32,
    pub fingerprint: String,
    pub epoch: usize,
    pub params: Vec<(String, ArrayD<f64>)>,
    pub adam_step: u64,
    pub adam_m: Vec<(String, ArrayD<f64>)>,
    pub adam_v: Vec<(String, ArrayD<f64>)>,
}

fn store_entries<S: Scalar>(store: &ParamStore<S>) -> Vec<(String, ArrayD<f64>)> {
    store
        .iter()
        .map(|p| (p.name.clone(), p.value.mapv(|v| v.to_f64())))
        .collect()
}

/// Save parameters, optimizer state, and the configuration fingerprint.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    store: &ParamStore<S>,
    adam: Option<&Adam<S>>,
    epoch: usize,
    fingerprint: &str,
) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u32(&mut w, FORMAT_VERSION)?;
        write_string(&mut w, fingerprint)?;
        write_u32(&mut w, epoch as u32)?;
        let (step, m, v) = match adam {
            Some(a) => {
                let (m, v) = a.state_entries(store);
                (a.step_count(), m, v)
            }
            None => (0, Vec::new(), Vec::new()),
        };
        write_u64(&mut w, step)?;
        write_entries(&mut w, &store_entries(store))?;
        write_entries(&mut w, &m)?;
        write_entries(&mut w, &v)?;
        w.flush()
    })()
    .map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    (|| -> std::io::Result<CheckpointData> {
        let version = read_u32(&mut r)?;
        let fingerprint = read_string(&mut r)?;
        let epoch = read_u32(&mut r)? as usize;
        let adam_step = read_u64(&mut r)?;
        let params = read_entries(&mut r)?;
        let adam_m = read_entries(&mut r)?;
        let adam_v = read_entries(&mut r)?;
        Ok(CheckpointData {
            version,
            fingerprint,
            epoch,
            params,
            adam_step,
            adam_m,
            adam_v,
        })
    })()
    .map_err(|e| io_err(path, e))
    .and_then(|data| {
        if data.version != FORMAT_VERSION {
            Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
                data.version
            )))
        } else {
            Ok(data)
        }
    })
}

/// Restore parameter values from a checkpoint. Every store parameter must be
/// present with a matching shape; mismatches are listed by name.
pub fn apply_params<S: Scalar>(store: &mut ParamStore<S>, data: &CheckpointData) -> Result<()> {
    let mut by_name: std::collections::HashMap<&str, &ArrayD<f64>> = data
        .params
        .iter()
        .map(|(n, a)| (n.as_str(), a))
        .collect();
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    let mut problems = Vec::new();
    for name in &names {
        match by_name.remove(name.as_str()) {
            None => problems.push(format!("{name} (missing from checkpoint)")),
            Some(arr) => {
                let id = store.find(name).expect("listed");
                if arr.shape() != store.value(id).shape() {
                    problems.push(format!(
                        "{name} (shape {:?}, expected {:?})",
                        arr.shape(),
                        store.value(id).shape()
                    ));
                }
            }
        }
    }
    for (name, _) in by_name {
        problems.push(format!("{name} (not part of the model)"));
    }
    if !problems.is_empty() {
        return Err(Error::UnmatchedWeights(problems.join(", ")));
    }
    for (name, arr) in &data.params {
        store.set_by_name(name, arr.mapv(S::from_f64))?;
    }
    Ok(())
}
