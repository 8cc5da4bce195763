//! Binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! b"KGCN"  u32 version
//! u64 users  u64 entities  u64 relation_rows  u64 dim  u64 hops  u32 architecture tag
//! f64 × (users·dim)           user table, row-major
//! f64 × (entities·dim)        entity table
//! f64 × (relation_rows·dim)   relation table (includes the self-relation row)
//! per hop: f64 × (dim·in_dim) weight, then f64 × dim bias
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::{ParamShape, ParameterStore};
use crate::error::{Error, Result};
use crate::model::Architecture;

const MAGIC: &[u8; 4] = b"KGCN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(
    mut out: W,
    params: &ParameterStore,
    arch: Architecture,
) -> std::io::Result<()> {
    let shape = params.shape();
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for n in [shape.users, shape.entities, shape.relations, shape.dim, shape.hops] {
        out.write_all(&(n as u64).to_le_bytes())?;
    }
    out.write_all(&arch.tag().to_le_bytes())?;
    for id in params.block_ids() {
        for x in params.block(id) {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(ParameterStore, Architecture)> {
    let bad = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(bad)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("missing KGCN magic bytes".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(bad)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf).map_err(bad)?;
        *d = usize::try_from(u64::from_le_bytes(buf))
            .map_err(|_| Error::Checkpoint("dimension overflows usize".into()))?;
    }
    input.read_exact(&mut word).map_err(bad)?;
    let arch = Architecture::from_tag(u32::from_le_bytes(word))
        .ok_or_else(|| Error::Checkpoint("unknown architecture tag".into()))?;
    let [users, entities, relations, dim, hops] = dims;
    let shape = ParamShape {
        users,
        entities,
        relations,
        dim,
        hops,
        hop_input_dim: arch.hop_input_dim(dim),
    };
    let mut params = ParameterStore::zeros(shape);
    let mut buf = [0u8; 8];
    for id in params.block_ids() {
        for x in params.block_mut(id) {
            input.read_exact(&mut buf).map_err(bad)?;
            *x = f64::from_le_bytes(buf);
        }
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing).map_err(bad)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok((params, arch))
}

pub fn save_checkpoint(path: &Path, params: &ParameterStore, arch: Architecture) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), params, arch).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore, Architecture)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
