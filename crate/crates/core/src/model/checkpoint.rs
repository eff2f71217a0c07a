//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `EMAT`, version `u32`, config field count
//! `u32` then per field (`u32` name length, name, `u64` value), parameter
//! count `u32` then per parameter (`u32` name length, name, `u32` rows,
//! `u32` cols, `f64` data), then an optional vocabulary: token count `u32`
//! (zero when absent) and length-prefixed UTF-8 tokens.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::io::{read_bytes, read_str, read_u32, read_u64, write_str};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMAT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, model: &Model, vocab: Option<&Vocab>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let fields = model.config().fields();
    w.write_all(&(fields.len() as u32).to_le_bytes())?;
    for (name, value) in fields {
        write_str(w, name)?;
        w.write_all(&value.to_le_bytes())?;
    }
    let params = model.params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (_, name, m) in params.iter() {
        write_str(w, name)?;
        w.write_all(&(m.rows() as u32).to_le_bytes())?;
        w.write_all(&(m.cols() as u32).to_le_bytes())?;
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    match vocab {
        Some(v) => {
            w.write_all(&(v.len() as u32).to_le_bytes())?;
            for tok in v.tokens() {
                write_str(w, tok)?;
            }
        }
        None => w.write_all(&0u32.to_le_bytes())?,
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(Model, Option<Vocab>)> {
    let magic = read_bytes(r, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format("not a model checkpoint (bad magic)"));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let n_fields = read_u32(r)? as usize;
    let mut fields = Vec::with_capacity(n_fields);
    for _ in 0..n_fields {
        let name = read_str(r)?;
        fields.push((name, read_u64(r)?));
    }
    let config = ModelConfig::from_fields(&fields)?;

    let n_params = read_u32(r)? as usize;
    let mut loaded: HashMap<String, Matrix> = HashMap::with_capacity(n_params);
    for _ in 0..n_params {
        let name = read_str(r)?;
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let bytes = read_bytes(r, rows * cols * 8)?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let m = Matrix::from_vec(rows, cols, data).map_err(|e| Error::format(format!("parameter {name}: {e}")))?;
        loaded.insert(name, m);
    }

    let mut model = Model::new(config.clone(), 0)?;
    if loaded.len() != model.params().len() {
        return Err(Error::format(format!(
            "checkpoint holds {} parameters, model expects {}",
            loaded.len(),
            model.params().len()
        )));
    }
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        let name = model.params().name(id).to_string();
        let m = loaded
            .remove(&name)
            .ok_or_else(|| Error::format(format!("checkpoint lacks parameter {name}")))?;
        if m.shape() != model.params().get(id).shape() {
            return Err(Error::format(format!("parameter {name} has shape {:?}", m.shape())));
        }
        *model.params_mut().get_mut(id) = m;
    }

    let n_tokens = read_u32(r)? as usize;
    let vocab = if n_tokens == 0 {
        None
    } else {
        let tokens = (0..n_tokens).map(|_| read_str(r)).collect::<Result<Vec<_>>>()?;
        let vocab = Vocab::from_tokens(config.prefix_len, tokens)?;
        if vocab.len() != config.vocab_size {
            return Err(Error::format("vocabulary size disagrees with the model config"));
        }
        Some(vocab)
    };
    Ok((model, vocab))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, vocab: Option<&Vocab>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, model, vocab)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, Option<Vocab>)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut r)
}
