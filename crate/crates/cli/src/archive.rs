//! The `.jket` model archive.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "JKET" version
//! len config-json
//! count { len token }          vocabulary, index order
//! len aux-json                 thresholds, type inventory, task list
//! count { len name rank dims... f32-le values... }
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use jket_core::{ParamStore, Tensor};

use crate::error::{CliError, CoreContext, Result};

pub const MAGIC: &[u8; 4] = b"JKET";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    /// Snapshot of the run configuration, as JSON.
    pub config: String,
    pub vocab: Vec<String>,
    /// Task metadata as JSON.
    pub aux: String,
    pub tensors: Vec<NamedTensor>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("archive field exceeds u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CliError::io(
                self.path,
                io::Error::new(io::ErrorKind::UnexpectedEof, format!("truncated archive at byte {}", self.pos)),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let at = self.pos;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.bad(format!("invalid UTF-8 at byte {at}")))
    }

    fn bad(&self, msg: impl Into<String>) -> CliError {
        CliError::format(self.path, None, msg)
    }
}

impl Archive {
    /// Every tensor of `store` under its canonical name, in registration
    /// order.
    pub fn from_store(store: &ParamStore<f32>, vocab: &[String], config: String, aux: String) -> Self {
        Archive {
            config,
            vocab: vocab.to_vec(),
            aux,
            tensors: store
                .entries()
                .map(|(_, name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize);
        put_str(&mut out, &self.config);
        put_u32(&mut out, self.vocab.len());
        for t in &self.vocab {
            put_str(&mut out, t);
        }
        put_str(&mut out, &self.aux);
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            put_u32(&mut out, t.shape.len());
            for &d in &t.shape {
                put_u32(&mut out, d);
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// `path` is only used in diagnostics.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0, path };
        if c.take(4)? != MAGIC {
            return Err(c.bad("not a JKET archive (bad magic)"));
        }
        let version = c.u32()?;
        if version != VERSION as usize {
            return Err(c.bad(format!("unsupported archive version {version}, expected {VERSION}")));
        }
        let config = c.string()?;
        let n_vocab = c.u32()?;
        let mut vocab = Vec::with_capacity(n_vocab.min(1 << 20));
        for _ in 0..n_vocab {
            vocab.push(c.string()?);
        }
        let aux = c.string()?;
        let n_tensors = c.u32()?;
        let mut tensors = Vec::with_capacity(n_tensors.min(1 << 16));
        for _ in 0..n_tensors {
            let name = c.string()?;
            let rank = c.u32()?;
            if rank == 0 {
                return Err(c.bad(format!("tensor {name} has rank 0")));
            }
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(c.u32()?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| if d == 0 { None } else { acc.checked_mul(d) })
                .ok_or_else(|| c.bad(format!("tensor {name} has an invalid shape {shape:?}")))?;
            let raw = c.take(len.checked_mul(4).ok_or_else(|| c.bad("tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if c.pos != bytes.len() {
            return Err(c.bad(format!("{} trailing bytes after the last tensor", bytes.len() - c.pos)));
        }
        Ok(Archive {
            config,
            vocab,
            aux,
            tensors,
        })
    }

    /// Write to a temporary sibling, then rename over `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Copy every archived tensor into the store registered under the same
    /// name. The store must hold exactly the archived tensors.
    pub fn restore(&self, store: &mut ParamStore<f32>, path: &Path) -> Result<()> {
        for t in &self.tensors {
            let id = store
                .id(&t.name)
                .ok_or_else(|| CliError::format(path, None, format!("archive tensor {} has no place in the model", t.name)))?;
            let value = Tensor::new(t.shape.clone(), t.data.clone()).during("load_model")?;
            store.set(id, value).during("load_model")?;
        }
        if store.len() != self.tensors.len() {
            return Err(CliError::format(
                path,
                None,
                format!("archive holds {} tensors, the model has {}", self.tensors.len(), store.len()),
            ));
        }
        Ok(())
    }
}

/// Write-temp-then-rename within the target directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}
