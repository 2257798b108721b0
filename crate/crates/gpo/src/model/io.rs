//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GPO1"            4 bytes
//! version           u32
//! config length     u32, then that many bytes of UTF-8 JSON (ModelConfig)
//! per parameter, in `param_specs` order:
//!   element count   u32
//!   values          count × f32
//! ```

use std::fs;
use std::path::Path;

use super::{param_specs, GpoModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 4] = b"GPO1";
pub const FORMAT_VERSION: u32 = 1;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return format_err(format!(
                "truncated file: needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

impl GpoModel<f32> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = serde_json::to_vec(&self.config)?;
        let mut out = Vec::with_capacity(12 + config.len() + 4 * (self.param_count() + self.params.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        for p in &self.params {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return format_err(format!("bad magic {magic:?}, expected {MAGIC:?}"));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return format_err(format!("unsupported model format version {version}"));
        }
        let len = r.u32("config length")? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(len, "config")?)
            .map_err(|e| Error::Format(format!("config blob: {e}")))?;
        config
            .validate()
            .map_err(|e| Error::Format(format!("config blob: {e}")))?;
        let mut params = Vec::new();
        for spec in param_specs(&config) {
            let count = r.u32(&spec.name)? as usize;
            if count != spec.len() {
                return format_err(format!(
                    "tensor {} declares {count} elements, expected {} for shape {:?}",
                    spec.name,
                    spec.len(),
                    spec.shape
                ));
            }
            let raw = r.take(4 * count, &spec.name)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.push(Tensor::new(spec.shape, data)?);
        }
        if r.pos != buf.len() {
            return format_err(format!("{} trailing bytes after last tensor", buf.len() - r.pos));
        }
        Ok(GpoModel { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
