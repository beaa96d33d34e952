//! Model file layout (all integers little-endian):
//!
//! ```text
//! magic "SPKSTAGE" | u32 version | u64 len | JSON ModelConfig
//! u64 tensor count | per tensor: u32 name len | name | u64 value count | f64 values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::params::Params;
use super::{ModelConfig, ModelError, ModelState, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"SPKSTAGE";
const VERSION: u32 = 1;

pub fn write_model<W: Write>(model: &ModelState, mut w: W) -> Result<()> {
    let config = serde_json::to_vec(&model.config).map_err(|e| ModelError::Format(e.to_string()))?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(config.len() as u64).to_le_bytes())?;
    w.write_all(&config)?;
    let tensors = model.params.tensors();
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.data.len() as u64).to_le_bytes())?;
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => ModelError::Format(format!("truncated while reading {what}")),
            _ => ModelError::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().expect("8 bytes")))
    }
}

const MAX_CONFIG_BYTES: u64 = 1 << 20;

pub fn read_model<R: Read>(r: R) -> Result<ModelState> {
    let mut r = Reader { inner: r };
    if r.bytes(8, "magic")? != MODEL_MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let clen = r.u64("config length")?;
    if clen > MAX_CONFIG_BYTES {
        return Err(ModelError::Format(format!("config length {clen} too large")));
    }
    let config: ModelConfig = serde_json::from_slice(&r.bytes(clen as usize, "config")?)
        .map_err(|e| ModelError::Format(format!("config: {e}")))?;
    config.validate()?;

    let mut params = Params::zeros(&config);
    let count = r.u64("tensor count")? as usize;
    let mut slots = params.tensors_mut();
    if count != slots.len() {
        return Err(ModelError::ConfigMismatch(format!(
            "file has {count} tensors, config implies {}",
            slots.len()
        )));
    }
    for (expected_name, t) in slots.iter_mut() {
        let nlen = r.u32("name length")? as usize;
        if nlen > 256 {
            return Err(ModelError::Format(format!("tensor name length {nlen}")));
        }
        let name = String::from_utf8(r.bytes(nlen, "tensor name")?)
            .map_err(|_| ModelError::Format("tensor name not UTF-8".into()))?;
        if &name != expected_name {
            return Err(ModelError::ConfigMismatch(format!("expected tensor {expected_name}, found {name}")));
        }
        let n = r.u64("value count")? as usize;
        if n != t.data.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "tensor {name} has {n} values, config implies {}",
                t.data.len()
            )));
        }
        let raw = r.bytes(n * 8, &name)?;
        for (v, c) in t.data.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
    }
    drop(slots);
    Ok(ModelState { config, params })
}

pub fn save_model(model: &ModelState, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    let bytes = std::fs::read(path)?;
    read_model(bytes.as_slice())
}

/// Loads and checks the stored config equals `expected`.
pub fn load_model_expecting(path: &Path, expected: &ModelConfig) -> Result<ModelState> {
    let m = load_model(path)?;
    if &m.config != expected {
        return Err(ModelError::ConfigMismatch(format!(
            "file config {:?} differs from expected {:?}",
            m.config, expected
        )));
    }
    Ok(m)
}
