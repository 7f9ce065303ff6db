//! Checkpoint serialization.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "PFCK"
//! version u32      currently 1
//! meta    u64 length + UTF-8 JSON (model hyperparameters, vocab sizes, seed)
//! count   u64      number of records
//! record  u64 name length, UTF-8 name,
//!         u64 rank, rank * u64 dims,
//!         prod(dims) * f32 values
//! ```
//!
//! Parameters are written in registration order. Optimizer state rides along
//! under the `opt/` prefix (`opt/m/<name>`, `opt/v/<name>`, and the scalar
//! step counter `opt/step`) so training can resume exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"PFCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug)]
pub struct RawCheckpoint {
    pub meta: serde_json::Value,
    pub records: Vec<Record>,
}

impl RawCheckpoint {
    pub fn find(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }
}

/// Write the store (and optionally its Adam state) plus a JSON metadata
/// header. Output is a pure function of the inputs — no timestamps — so
/// identical runs produce byte-identical files.
pub fn save<T: Scalar>(
    path: &Path,
    store: &ParameterStore<T>,
    meta: &serde_json::Value,
    include_optimizer: bool,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta_bytes = serde_json::to_vec(meta).map_err(|e| Error::Checkpoint(format!("meta serialization: {e}")))?;
    w.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&meta_bytes)?;

    let n_params = store.n_entries() as u64;
    let count = if include_optimizer { n_params * 3 + 1 } else { n_params };
    w.write_all(&count.to_le_bytes())?;

    for id in store.ids() {
        write_record_t(&mut w, store.name(id), store.dims(id), store.value(id))?;
    }
    if include_optimizer {
        for id in store.ids() {
            let (m, v) = store.adam_state(id);
            write_record_t(&mut w, &format!("opt/m/{}", store.name(id)), store.dims(id), m)?;
            write_record_t(&mut w, &format!("opt/v/{}", store.name(id)), store.dims(id), v)?;
        }
        let step = store.adam_step_count() as f32;
        write_record_f32(&mut w, "opt/step", &[1], &[step])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint file without interpreting it against a model.
pub fn load(path: &Path) -> Result<RawCheckpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}, not a checkpoint file")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
    }
    let meta_len = read_u64(&mut r)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)?;
    let meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Checkpoint(format!("malformed metadata JSON: {e}")))?;

    let count = read_u64(&mut r)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Checkpoint(format!("record name is not UTF-8: {e}")))?;
        let rank = read_u64(&mut r)? as usize;
        if rank == 0 || rank > 3 {
            return Err(Error::Checkpoint(format!("record '{name}' has rank {rank}, expected 1..=3")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut r)? as usize);
        }
        let n: usize = dims.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("record '{name}' truncated: {e}")))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(Record { name, dims, values });
    }
    Ok(RawCheckpoint { meta, records })
}

/// Copy checkpoint values into an already-built store. Every registered
/// parameter must be present with matching dims; unexpected records (other
/// than skipped optimizer state) are an error.
pub fn load_into<T: Scalar>(
    raw: &RawCheckpoint,
    store: &mut ParameterStore<T>,
    with_optimizer: bool,
) -> Result<()> {
    use std::collections::HashSet;
    let mut used: HashSet<&str> = HashSet::new();
    let ids: Vec<_> = store.ids().collect();
    for id in &ids {
        let name = store.name(*id).to_string();
        let rec = raw
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
        if rec.dims != store.dims(*id) {
            return Err(Error::Checkpoint(format!(
                "parameter '{name}' has dims {:?} in file but {:?} in model",
                rec.dims,
                store.dims(*id)
            )));
        }
        used.insert(rec.name.as_str());
        for (dst, &src) in store.value_mut(*id).iter_mut().zip(&rec.values) {
            *dst = T::from_f32(src);
        }
    }
    if with_optimizer {
        for id in &ids {
            let name = store.name(*id).to_string();
            let m_rec = raw
                .find(&format!("opt/m/{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for '{name}'")))?;
            let v_rec = raw
                .find(&format!("opt/v/{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state for '{name}'")))?;
            let m: Vec<T> = m_rec.values.iter().map(|&x| T::from_f32(x)).collect();
            let v: Vec<T> = v_rec.values.iter().map(|&x| T::from_f32(x)).collect();
            store.set_adam_state(*id, &m, &v);
        }
        let step = raw
            .find("opt/step")
            .ok_or_else(|| Error::Checkpoint("missing optimizer step counter".into()))?;
        store.set_adam_step_count(step.values[0] as u64);
    }
    for rec in &raw.records {
        if rec.name.starts_with("opt/") || used.contains(rec.name.as_str()) {
            continue;
        }
        return Err(Error::Checkpoint(format!("unexpected record '{}' in checkpoint", rec.name)));
    }
    Ok(())
}

fn write_record_t<T: Scalar>(
    w: &mut impl Write,
    name: &str,
    dims: &[usize],
    values: &[T],
) -> Result<()> {
    let f32s: Vec<f32> = values.iter().map(|&v| Scalar::to_f32(v)).collect();
    write_record_f32(w, name, dims, &f32s)
}

fn write_record_f32(w: &mut impl Write, name: &str, dims: &[usize], values: &[f32]) -> Result<()> {
    w.write_all(&(name.len() as u64).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u64).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
