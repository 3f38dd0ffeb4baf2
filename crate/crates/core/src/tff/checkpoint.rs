//! `RASC` checkpoint layout, little-endian throughout:
//! magic, `u16` version, seven `u32` architecture fields, `u64` seed,
//! `u32` tensor count, then per tensor `u32` name length, UTF-8 name,
//! `u32` rows, `u32` cols and `f64` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{TffConfig, TffError, TffParams};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RASC";
pub const CHECKPOINT_VERSION: u16 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TffError + '_ {
    move |source| TffError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn to_bytes(params: &TffParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.param_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for (_, v) in params.config().architecture() {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&params.config().seed.to_le_bytes());
    out.extend_from_slice(&(params.names().len() as u32).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TffError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            TffError::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, TffError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8], expected: Option<&TffConfig>) -> Result<TffParams, TffError> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(TffError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(TffError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut arch = [0u64; 7];
    for slot in arch.iter_mut() {
        *slot = r.u32()? as u64;
    }
    let config = TffConfig {
        d_text_in: arch[0] as usize,
        d_patch_in: arch[1] as usize,
        d_model: arch[2] as usize,
        n_heads: arch[3] as usize,
        n_qformer_blocks: arch[4] as usize,
        n_self_blocks: arch[5] as usize,
        ff_multiplier: arch[6] as usize,
        seed: r.u64()?,
    };
    debug_assert_eq!(config.architecture().map(|(_, v)| v), arch);
    if let Some(want) = expected {
        for ((field, e), (_, f)) in want.architecture().into_iter().zip(config.architecture()) {
            if e != f {
                return Err(TffError::ConfigMismatch {
                    field,
                    expected: e,
                    found: f,
                });
            }
        }
    }
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| TffError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| TffError::Checkpoint(format!("tensor {name} is too large")))?;
        let data = r
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(rows, cols, data).map_err(|e| TffError::Checkpoint(format!("tensor {name}: {e}")))?;
        named.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(TffError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    TffParams::from_parts(config, named)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &TffParams) -> Result<(), TffError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("rasc.tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&to_bytes(params)).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Loads a checkpoint and checks it against the expected architecture.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: &TffConfig) -> Result<TffParams, TffError> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(io_err(path))?, Some(expected))
}

/// Loads a checkpoint with whatever architecture it records.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<TffParams, TffError> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(io_err(path))?, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::FeatureBag;
    use crate::tff::{forward, init_params};

    fn cfg() -> TffConfig {
        TffConfig {
            d_text_in: 6,
            d_patch_in: 5,
            d_model: 8,
            n_heads: 2,
            n_qformer_blocks: 1,
            n_self_blocks: 1,
            ff_multiplier: 2,
            seed: 21,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.rasc");
        let p = init_params(&cfg()).unwrap();
        save_checkpoint(&path, &p).unwrap();
        let q = load_checkpoint(&path, &cfg()).unwrap();
        assert!(p.bitwise_eq(&q));
        let text = FeatureBag::new(Tensor::from_fn(3, 6, |r, c| (r * 6 + c) as f64 * 0.1 - 0.7), None).unwrap();
        let patches = FeatureBag::new(Tensor::from_fn(4, 5, |r, c| ((r + 2 * c) as f64).sin()), None).unwrap();
        let a = forward(&p, &text, &patches).unwrap();
        let b = forward(&q, &text, &patches).unwrap();
        assert_eq!(a.y.to_bits(), b.y.to_bits());
    }

    #[test]
    fn wrong_width_names_the_field() {
        let p = init_params(&cfg()).unwrap();
        let bytes = to_bytes(&p);
        let other = TffConfig { d_model: 16, ..cfg() };
        match from_bytes(&bytes, Some(&other)) {
            Err(TffError::ConfigMismatch { field, expected, found }) => {
                assert_eq!(field, "d_model");
                assert_eq!((expected, found), (16, 8));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let p = init_params(&cfg()).unwrap();
        let bytes = to_bytes(&p);
        assert!(from_bytes(&bytes[..bytes.len() - 3], None).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad, None), Err(TffError::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra, None).is_err());
        assert!(from_bytes(&bytes, None).unwrap().bitwise_eq(&p));
    }
}
