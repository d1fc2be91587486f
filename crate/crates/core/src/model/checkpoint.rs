//! Binary checkpoint format.
//!
//! Layout: 8-byte magic, config header (u64 dims, u8 flag, f64 clip), then
//! each parameter matrix in the fixed layout order as name, shape, and
//! row-major little-endian f64 data. Loading validates the entire file
//! against the layout derived from the stored config, so a truncated or
//! inconsistent file never produces partial state.

use std::path::Path;

use ndarray::Array2;

use super::{layout, ModelConfig, ModelError, ModelParams};

const MAGIC: &[u8; 8] = b"ADVSRCK\x01";

pub(super) fn save(params: &ModelParams, path: &Path) -> Result<(), ModelError> {
    let cfg = &params.cfg;
    let mut buf: Vec<u8> = Vec::with_capacity(1024);
    buf.extend_from_slice(MAGIC);
    for v in [
        cfg.src_vocab,
        cfg.tgt_vocab,
        cfg.dim,
        cfg.heads,
        cfg.layers,
        cfg.ff_dim,
        cfg.max_len,
    ] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    buf.push(u8::from(cfg.use_positions));
    buf.extend_from_slice(&cfg.grad_clip.to_le_bytes());
    buf.extend_from_slice(&(params.values.len() as u64).to_le_bytes());
    for (name, value) in params.names.iter().zip(&params.values) {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
        for x in value.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::Corrupt {
                path: self.path.to_string(),
                reason: format!("unexpected end of file at byte {}", self.pos),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn corrupt(&self, reason: impl Into<String>) -> ModelError {
        ModelError::Corrupt {
            path: self.path.to_string(),
            reason: reason.into(),
        }
    }
}

pub(super) fn load(path: &Path) -> Result<ModelParams, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let display = path.display().to_string();
    let mut r = Reader {
        buf: &bytes,
        pos: 0,
        path: &display,
    };
    if r.take(8)? != MAGIC {
        return Err(r.corrupt("bad magic (not a checkpoint, or unsupported version)"));
    }
    let src_vocab = r.u64()? as usize;
    let tgt_vocab = r.u64()? as usize;
    let dim = r.u64()? as usize;
    let heads = r.u64()? as usize;
    let layers = r.u64()? as usize;
    let ff_dim = r.u64()? as usize;
    let max_len = r.u64()? as usize;
    let use_positions = r.take(1)?[0] != 0;
    let grad_clip = r.f64()?;
    let cfg = ModelConfig {
        src_vocab,
        tgt_vocab,
        dim,
        heads,
        layers,
        ff_dim,
        max_len,
        use_positions,
        grad_clip,
    };
    let expected = layout(&cfg);
    let count = r.u64()? as usize;
    if count != expected.len() {
        return Err(r.corrupt(format!(
            "parameter count {count} does not match config ({})",
            expected.len()
        )));
    }
    let mut names = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    for (want_name, (rows, cols)) in expected {
        let name_len = r.u64()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.corrupt("non-utf8 parameter name"))?
            .to_string();
        if name != want_name {
            return Err(r.corrupt(format!(
                "parameter {name:?} out of order (expected {want_name:?})"
            )));
        }
        let got_rows = r.u64()? as usize;
        let got_cols = r.u64()? as usize;
        if (got_rows, got_cols) != (rows, cols) {
            return Err(r.corrupt(format!(
                "parameter {name} has shape {got_rows}x{got_cols}, expected {rows}x{cols}"
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        names.push(name);
        values.push(
            Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| r.corrupt(format!("shape error: {e}")))?,
        );
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    ModelParams::from_parts(cfg, names, values)
}

/// Architecture compatibility: every structural field must match.
pub(super) fn check_compatible(
    found: &ModelConfig,
    expected: &ModelConfig,
) -> Result<(), ModelError> {
    let fields: [(&'static str, u64, u64); 8] = [
        ("src_vocab", found.src_vocab as u64, expected.src_vocab as u64),
        ("tgt_vocab", found.tgt_vocab as u64, expected.tgt_vocab as u64),
        ("dim", found.dim as u64, expected.dim as u64),
        ("heads", found.heads as u64, expected.heads as u64),
        ("layers", found.layers as u64, expected.layers as u64),
        ("ff_dim", found.ff_dim as u64, expected.ff_dim as u64),
        ("max_len", found.max_len as u64, expected.max_len as u64),
        (
            "use_positions",
            u64::from(found.use_positions),
            u64::from(expected.use_positions),
        ),
    ];
    for (field, found, expected) in fields {
        if found != expected {
            return Err(ModelError::DimensionMismatch {
                field,
                found,
                expected,
            });
        }
    }
    Ok(())
}
