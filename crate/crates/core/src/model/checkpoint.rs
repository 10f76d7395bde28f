//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//! magic `BSAT`, format version `u32`, six `u32` config words (vocab_size,
//! dim, layers, heads, max_len, classes), a 32-byte SHA-256 of the
//! serialized vocabulary, then each parameter as
//! `(name_len u32, name bytes, rank u32, dims u32×rank, f32 data)`.

use crate::error::{Error, Result};
use crate::model::transformer::{ClassifierModel, ModelConfig};
use crate::numerics::Tensor;
use crate::vocab::Vocabulary;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BSAT";
const FORMAT_VERSION: u32 = 1;

pub fn save(model: &ClassifierModel<f32>, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let cfg = model.config();
    for word in [
        cfg.vocab_size,
        cfg.dim,
        cfg.layers,
        cfg.heads,
        cfg.max_len,
        cfg.classes,
    ] {
        w.write_all(&(word as u32).to_le_bytes())?;
    }
    w.write_all(&vocab.content_hash())?;

    let names = model.param_names();
    let tensors = model.param_tensors();
    w.write_all(&(names.len() as u32).to_le_bytes())?;
    for (name, tensor) in names.iter().zip(tensors) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint and verify it was trained against `vocab` (by hash).
pub fn load(path: &Path, vocab: &Vocabulary) -> Result<ClassifierModel<f32>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}; not a model checkpoint",
            magic
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let config = ModelConfig {
        vocab_size: read_u32(&mut r)? as usize,
        dim: read_u32(&mut r)? as usize,
        layers: read_u32(&mut r)? as usize,
        heads: read_u32(&mut r)? as usize,
        max_len: read_u32(&mut r)? as usize,
        classes: read_u32(&mut r)? as usize,
    };
    let mut stored_hash = [0u8; 32];
    r.read_exact(&mut stored_hash)?;
    if stored_hash != vocab.content_hash() {
        return Err(Error::Checkpoint(
            "vocabulary hash mismatch: this checkpoint was trained with a different vocabulary"
                .into(),
        ));
    }
    if config.vocab_size != vocab.len() {
        return Err(Error::Checkpoint(format!(
            "config vocab_size {} disagrees with vocabulary of {} tokens",
            config.vocab_size,
            vocab.len()
        )));
    }

    let mut model = ClassifierModel::<f32>::new(config, 0)?;
    let expected_names = model.param_names();
    let count = read_u32(&mut r)? as usize;
    if count != expected_names.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match architecture ({} expected)",
            expected_names.len()
        )));
    }
    for (expected_name, param) in expected_names.iter().zip(model.param_tensors_mut()) {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        if &name != expected_name {
            return Err(Error::Checkpoint(format!(
                "parameter order mismatch: found `{name}`, expected `{expected_name}`"
            )));
        }
        let rank = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r)? as usize);
        }
        if dims != param.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {dims:?}, expected {:?}",
                param.shape()
            )));
        }
        let mut data = vec![0f32; dims.iter().product()];
        for v in &mut data {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            *v = f32::from_le_bytes(buf);
        }
        *param = Tensor::new(dims, data)?;
    }
    Ok(model)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
