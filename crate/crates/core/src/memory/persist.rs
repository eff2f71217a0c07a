//! Memory files.
//!
//! Layout (little-endian): magic `EMKV`, version `u32`, P `u32`, h `u32`,
//! entry count `u64`, then per entry: id `u64`, key block and value block as
//! P·h `f32` each (row-major), flattened key as h `f32`, then the question and
//! answer as `u32`-length-prefixed UTF-8.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{KeyValueMemory, MemoryEntry};
use crate::error::{Error, Result};
use crate::io::{read_bytes, read_f32, read_str, read_u32, read_u64, write_str};
use crate::model::flatten;
use crate::numerics::Matrix;

pub const MEMORY_MAGIC: &[u8; 4] = b"EMKV";
pub const MEMORY_VERSION: u32 = 1;

fn write_f32s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let bytes = read_bytes(r, n * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect())
}

pub fn write_memory<W: Write>(w: &mut W, memory: &KeyValueMemory) -> Result<()> {
    w.write_all(MEMORY_MAGIC)?;
    w.write_all(&MEMORY_VERSION.to_le_bytes())?;
    w.write_all(&(memory.prefix_len() as u32).to_le_bytes())?;
    w.write_all(&(memory.hidden() as u32).to_le_bytes())?;
    w.write_all(&(memory.len() as u64).to_le_bytes())?;
    for e in memory.entries() {
        w.write_all(&e.id.to_le_bytes())?;
        write_f32s(w, e.key_block.data())?;
        write_f32s(w, e.value_block.data())?;
        write_f32s(w, &e.key_flat)?;
        write_str(w, &e.question)?;
        write_str(w, &e.answer)?;
    }
    Ok(())
}

pub fn read_memory<R: Read>(r: &mut R) -> Result<KeyValueMemory> {
    if read_bytes(r, 4)? != MEMORY_MAGIC {
        return Err(Error::format("not a memory file (bad magic)"));
    }
    let version = read_u32(r)?;
    if version != MEMORY_VERSION {
        return Err(Error::format(format!("unsupported memory version {version}")));
    }
    let p = read_u32(r)? as usize;
    let h = read_u32(r)? as usize;
    if p == 0 || h == 0 {
        return Err(Error::format("memory dims must be positive"));
    }
    let count = read_u64(r)?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let id = read_u64(r)?;
        let key =
            Matrix::from_vec(p, h, read_f32s(r, p * h)?).map_err(|e| Error::format(format!("entry {id}: {e}")))?;
        let value =
            Matrix::from_vec(p, h, read_f32s(r, p * h)?).map_err(|e| Error::format(format!("entry {id}: {e}")))?;
        let stored_flat: Vec<f64> = (0..h).map(|_| read_f32(r).map(f64::from)).collect::<Result<_>>()?;
        let key_flat = flatten(&key);
        let drift = key_flat
            .iter()
            .zip(&stored_flat)
            .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
            .fold(0.0, f64::max);
        if drift > 1e-6 {
            return Err(Error::format(format!(
                "entry {id}: stored flat key disagrees with its block"
            )));
        }
        let question = read_str(r)?;
        let answer = read_str(r)?;
        entries.push(MemoryEntry {
            id,
            key_block: key,
            value_block: value,
            key_flat,
            question,
            answer,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::format("trailing bytes after the last entry"));
    }
    KeyValueMemory::from_entries(entries, p, h, 0).map_err(|e| Error::format(e.to_string()))
}

pub fn save_memory(memory: &KeyValueMemory, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_memory(&mut w, memory)?;
    w.flush()?;
    Ok(())
}

pub fn load_memory(path: impl AsRef<Path>) -> Result<KeyValueMemory> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    read_memory(&mut r)
}
