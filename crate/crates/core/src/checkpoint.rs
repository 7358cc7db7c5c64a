//! Named-block parameter checkpoints and guarded file writes.
//!
//! Layout (little-endian): 5-byte magic (`SVMR1` for stage 1, `SVMR2` for stage 2), `u32` version,
//! `u32` block count, then per block: `u32` name length, name bytes, `u32` rank, `u32` dims, and
//! the values as `f32`.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::nn::{HasParams, Param};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode_checkpoint(magic: &[u8; 5], params: &[&Param]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    out.write_u32::<LittleEndian>(CHECKPOINT_VERSION).unwrap();
    out.write_u32::<LittleEndian>(params.len() as u32).unwrap();
    for p in params {
        out.write_u32::<LittleEndian>(p.name.len() as u32).unwrap();
        out.extend_from_slice(p.name.as_bytes());
        out.write_u32::<LittleEndian>(p.shape.len() as u32).unwrap();
        for &d in &p.shape {
            out.write_u32::<LittleEndian>(d as u32).unwrap();
        }
        for &v in &p.value {
            out.write_f32::<LittleEndian>(v as f32).unwrap();
        }
    }
    out
}

pub fn decode_checkpoint(magic: &[u8; 5], bytes: &[u8], path: &Path) -> Result<Vec<Block>> {
    let mut cur = Cursor::new(bytes);
    let truncated = |_| Error::Truncated(path.into());
    let mut m = [0u8; 5];
    cur.read_exact(&mut m).map_err(truncated)?;
    if &m != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = cur.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.into(),
            version,
        });
    }
    let count = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut blocks = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if name_len > bytes.len() {
            return Err(Error::Truncated(path.into()));
        }
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format(format!("non-UTF-8 block name in {}", path.display())))?;
        let rank = cur.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(cur.read_u32::<LittleEndian>().map_err(truncated)? as usize);
        }
        let n: usize = shape.iter().product();
        if n * 4 > bytes.len() {
            return Err(Error::Truncated(path.into()));
        }
        let mut values = vec![0f32; n];
        cur.read_f32_into::<LittleEndian>(&mut values)
            .map_err(truncated)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint block {name}")));
        }
        blocks.push(Block {
            name,
            shape,
            values,
        });
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(Error::Format(format!(
            "trailing bytes in checkpoint {}",
            path.display()
        )));
    }
    Ok(blocks)
}

/// Copies blocks into a model by name; every model parameter must be present with its shape.
pub fn load_blocks_into<M: HasParams + ?Sized>(model: &mut M, blocks: &[Block]) -> Result<()> {
    for p in model.params_mut() {
        let block = blocks
            .iter()
            .find(|b| b.name == p.name)
            .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter {}", p.name)))?;
        let values: Vec<f64> = block.values.iter().map(|&v| v as f64).collect();
        p.assign(&block.shape, &values)?;
    }
    Ok(())
}

/// Writes `bytes` to `path` through a temporary file and rename, holding `<path>.lock` meanwhile.
pub fn guarded_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let lock = lock_path(path);
    let guard = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&lock)
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Data(format!("{} is locked by another writer", path.display()))
            } else {
                Error::io(&lock, e)
            }
        })?;
    let result = (|| {
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
        tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    })();
    drop(guard);
    let _ = fs::remove_file(&lock);
    result
}

fn lock_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".lock");
    PathBuf::from(s)
}

pub fn save_params<M: HasParams + ?Sized>(model: &M, magic: &[u8; 5], path: &Path) -> Result<()> {
    guarded_write(path, &encode_checkpoint(magic, &model.params()))
}

pub fn read_blocks(magic: &[u8; 5], path: &Path) -> Result<Vec<Block>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(magic, &bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let a = Param {
            name: "a.weight".into(),
            shape: vec![2, 3],
            value: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5],
        };
        let b = Param::zeros("a.bias", &[2]);
        let bytes = encode_checkpoint(b"SVMR1", &[&a, &b]);
        let p = Path::new("x");
        let blocks = decode_checkpoint(b"SVMR1", &bytes, p).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].shape, vec![2, 3]);
        assert_eq!(blocks[0].values[5], 6.5);
        assert!(matches!(
            decode_checkpoint(b"SVMR2", &bytes, p),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(
            decode_checkpoint(b"SVMR1", &bytes[..bytes.len() - 1], p),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn guarded_write_refuses_locked_target() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("m.ckpt");
        guarded_write(&target, b"one").unwrap();
        assert_eq!(fs::read(&target).unwrap(), b"one");
        fs::write(lock_path(&target), b"").unwrap();
        assert!(guarded_write(&target, b"two").is_err());
        assert_eq!(fs::read(&target).unwrap(), b"one");
    }
}
