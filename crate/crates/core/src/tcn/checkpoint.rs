//! Binary checkpoint format.
//!
//! ```text
//! magic   8 bytes  "CLDTCN\0\0"
//! version u32 LE
//! mlen    u32 LE   length of the JSON manifest
//! manifest         hyper-parameters, target, vocab, normalisation, tensor lengths
//! tensors          every parameter as f64 LE, in `Params::tensors` order
//! ```
//!
//! Loading rebuilds the layer structure from the manifest and verifies each
//! tensor length, so a file truncated or written by another layout fails
//! loudly instead of loading garbage.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, ForecastTarget, NormStats, TcnError, TcnHyperParams, TcnModel};
use crate::nn::Params;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CLDTCN\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TcnModel,
    pub stats: Option<NormStats>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    hp: TcnHyperParams,
    target: ForecastTarget,
    vocab_size: usize,
    stats: Option<NormStats>,
    tensor_lens: Vec<usize>,
}

pub fn write_checkpoint<W: Write>(model: &TcnModel, stats: Option<&NormStats>, mut w: W) -> Result<(), TcnError> {
    let manifest = Manifest {
        hp: model.hp,
        target: model.target,
        vocab_size: model.vocab_size,
        stats: stats.copied(),
        tensor_lens: model.tensors().iter().map(|t| t.len()).collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| TcnError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for t in model.tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, TcnError> {
    let bad = |m: String| TcnError::Checkpoint(m);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short for header".into()))?;
    if &magic != MAGIC {
        return Err(bad("not a model checkpoint".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json).map_err(|_| bad("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| bad(format!("manifest: {e}")))?;

    let mut model = build_model(&manifest.hp, manifest.target, manifest.vocab_size, 0)?;
    let expected: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    if expected != manifest.tensor_lens {
        return Err(bad(format!(
            "tensor layout {:?} does not match hyper-parameters ({:?})",
            manifest.tensor_lens, expected
        )));
    }
    let mut buf = [0u8; 8];
    for (ti, t) in model.tensors_mut().into_iter().enumerate() {
        for v in t.iter_mut() {
            r.read_exact(&mut buf).map_err(|_| bad(format!("truncated tensor {ti}")))?;
            *v = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes after tensors".into()));
    }
    Ok(Checkpoint {
        model,
        stats: manifest.stats,
    })
}

pub fn save_checkpoint(model: &TcnModel, stats: Option<&NormStats>, path: &Path) -> Result<(), TcnError> {
    write_checkpoint(model, stats, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TcnError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TcnModel {
        build_model(&TcnHyperParams::new(1, 3, 16, 4), ForecastTarget::ArrivalTime, 7, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, None, &mut buf).unwrap();
        let ck = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(ck.model, m);
        let a: Vec<u64> = m.flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = ck.model.flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, None, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(wrong.as_slice()).is_err());
        let mut ver = buf;
        ver[8] = 99;
        assert!(read_checkpoint(ver.as_slice()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, None, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap().model, m);
    }
}
