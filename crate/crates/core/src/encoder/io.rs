//! Model files: a small binary container that round-trips bit-exactly.
//!
//! Layout (all little-endian):
//!   magic "SQMODEL1", u32 version,
//!   u8 tied, u8 similarity, u16 reserved,
//!   u64 buckets, u64 dim, u64 seed,
//!   u8 table-count, then each table as buckets*dim f64,
//!   u64 snapshot-length, snapshot bytes (JSON, caller-defined).
//!
//! The snapshot string carries the training config that produced the model;
//! fresh models store "{}".

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoder::{EncoderModel, EncoderParams, Similarity};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SQMODEL1";
const VERSION: u32 = 1;

fn similarity_byte(similarity: Similarity) -> u8 {
    match similarity {
        Similarity::Cosine => 0,
        Similarity::Dot => 1,
    }
}

fn similarity_from(byte: u8, path: &Path) -> Result<Similarity> {
    match byte {
        0 => Ok(Similarity::Cosine),
        1 => Ok(Similarity::Dot),
        other => Err(Error::ModelFormat {
            path: path.into(),
            message: format!("unknown similarity byte {other}"),
        }),
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &EncoderModel, snapshot: &str) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&[model.tied as u8, similarity_byte(model.similarity)])
        .map_err(io_err)?;
    w.write_all(&0u16.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(model.buckets as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(model.dim as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&model.seed.to_le_bytes()).map_err(io_err)?;
    w.write_all(&[model.table_count() as u8]).map_err(io_err)?;
    for table_index in 0..model.table_count() {
        for value in model.table(table_index) {
            w.write_all(&value.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.write_all(&(snapshot.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(snapshot.as_bytes()).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(EncoderModel, String)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |message: String| Error::ModelFormat {
        path: path.into(),
        message,
    };

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(bad("not a model file (bad magic)".into()));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut flags = [0u8; 2];
    read_exact(&mut r, &mut flags, path)?;
    let tied = match flags[0] {
        0 => false,
        1 => true,
        other => return Err(bad(format!("bad tied flag {other}"))),
    };
    let similarity = similarity_from(flags[1], path)?;
    let mut reserved = [0u8; 2];
    read_exact(&mut r, &mut reserved, path)?;
    let buckets = read_u64(&mut r, path)? as usize;
    let dim = read_u64(&mut r, path)? as usize;
    let seed = read_u64(&mut r, path)?;
    if buckets == 0 || dim == 0 || buckets.checked_mul(dim).is_none() {
        return Err(bad(format!("bad shape {buckets} x {dim}")));
    }
    let mut count = [0u8; 1];
    read_exact(&mut r, &mut count, path)?;
    let expected_tables = if tied { 1 } else { 2 };
    if count[0] != expected_tables {
        return Err(bad(format!(
            "tied flag says {expected_tables} table(s), file has {}",
            count[0]
        )));
    }

    let mut read_table = || -> Result<Vec<f64>> {
        let mut table = vec![0.0f64; buckets * dim];
        let mut buf = [0u8; 8];
        for slot in &mut table {
            read_exact(&mut r, &mut buf, path)?;
            *slot = f64::from_le_bytes(buf);
        }
        Ok(table)
    };
    let query_table = read_table()?;
    let doc_table = if tied { None } else { Some(read_table()?) };

    let snapshot_len = read_u64(&mut r, path)? as usize;
    let mut snapshot = vec![0u8; snapshot_len];
    read_exact(&mut r, &mut snapshot, path)?;
    let snapshot = String::from_utf8(snapshot)
        .map_err(|_| bad("snapshot is not valid UTF-8".into()))?;

    let model = EncoderModel::from_tables(
        EncoderParams {
            buckets,
            dim,
            tied,
            similarity,
            seed,
        },
        query_table,
        doc_table,
    )?;
    Ok((model, snapshot))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, path)?;
    Ok(u64::from_le_bytes(buf))
}
