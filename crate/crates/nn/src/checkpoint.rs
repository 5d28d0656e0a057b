//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"FNCK"
//! version u32
//! meta    u64 length + JSON bytes (model kind, spec, anything else)
//! params  u64 count of tensors that are trainable parameters
//! tensors u64 count, then per tensor:
//!         name (u64 len + bytes), ndim u64, dims u64*, data f32-LE
//! ```
//!
//! Tensors are stored params-first then buffers, in model order; loading
//! matches by position and verifies name and shape.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};

use crate::{Model, NnError, NnResult};

const MAGIC: &[u8; 4] = b"FNCK";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub param_count: usize,
    pub tensors: Vec<(String, ArrayD<f32>)>,
}

impl Checkpoint {
    /// Snapshot a model's parameters and buffers.
    pub fn from_model(meta: serde_json::Value, model: &mut dyn Model) -> Self {
        let params: Vec<(String, ArrayD<f32>)> = model
            .params_mut()
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        let param_count = params.len();
        let mut tensors = params;
        tensors.extend(
            model
                .buffers_mut()
                .iter()
                .map(|p| (p.name.clone(), p.value.clone())),
        );
        Checkpoint {
            meta,
            param_count,
            tensors,
        }
    }

    /// Copy stored tensors into a freshly constructed model. The model must
    /// present the same parameters and buffers, in order, with matching
    /// names and shapes.
    pub fn apply_to(&self, model: &mut dyn Model) -> NnResult<()> {
        let mut params = model.params_mut();
        let stored_params = &self.tensors[..self.param_count.min(self.tensors.len())];
        if params.len() != self.param_count {
            return Err(NnError::CheckpointMismatch(format!(
                "checkpoint has {} parameter tensors, model has {}",
                self.param_count,
                params.len()
            )));
        }
        for (p, (name, value)) in params.iter_mut().zip(stored_params) {
            if p.name != *name {
                return Err(NnError::CheckpointMismatch(format!(
                    "parameter name mismatch: checkpoint '{name}' vs model '{}'",
                    p.name
                )));
            }
            if p.value.shape() != value.shape() {
                return Err(NnError::CheckpointMismatch(format!(
                    "shape mismatch for '{name}': checkpoint {:?} vs model {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value.assign(value);
        }
        let mut buffers = model.buffers_mut();
        let stored_buffers = &self.tensors[self.param_count..];
        if buffers.len() != stored_buffers.len() {
            return Err(NnError::CheckpointMismatch(format!(
                "checkpoint has {} buffer tensors, model has {}",
                stored_buffers.len(),
                buffers.len()
            )));
        }
        for (p, (name, value)) in buffers.iter_mut().zip(stored_buffers) {
            if p.name != *name || p.value.shape() != value.shape() {
                return Err(NnError::CheckpointMismatch(format!(
                    "buffer mismatch for '{name}'"
                )));
            }
            p.value.assign(value);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> NnResult<()> {
        let io_err = |source| NnError::CheckpointIo {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io_err)?;
            }
        }
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        (|| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_u32::<LittleEndian>(VERSION)?;
            let meta = serde_json::to_vec(&self.meta).expect("meta serializes");
            w.write_u64::<LittleEndian>(meta.len() as u64)?;
            w.write_all(&meta)?;
            w.write_u64::<LittleEndian>(self.param_count as u64)?;
            w.write_u64::<LittleEndian>(self.tensors.len() as u64)?;
            for (name, value) in &self.tensors {
                let nb = name.as_bytes();
                w.write_u64::<LittleEndian>(nb.len() as u64)?;
                w.write_all(nb)?;
                w.write_u64::<LittleEndian>(value.ndim() as u64)?;
                for &d in value.shape() {
                    w.write_u64::<LittleEndian>(d as u64)?;
                }
                let slice = value
                    .as_slice()
                    .expect("checkpoint tensors are standard layout");
                for &v in slice {
                    w.write_f32::<LittleEndian>(v)?;
                }
            }
            w.flush()
        })()
        .map_err(io_err)
    }

    pub fn load(path: &Path) -> NnResult<Checkpoint> {
        let io_err = |source| NnError::CheckpointIo {
            path: path.display().to_string(),
            source,
        };
        let fmt_err = |msg: String| NnError::CheckpointFormat {
            path: path.display().to_string(),
            msg,
        };
        let mut r = BufReader::new(File::open(path).map_err(io_err)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(fmt_err("bad magic bytes".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
        if version != VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let meta_len = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        if meta_len > 64 << 20 {
            return Err(fmt_err("unreasonable metadata length".into()));
        }
        let mut meta_buf = vec![0u8; meta_len];
        r.read_exact(&mut meta_buf).map_err(io_err)?;
        let meta: serde_json::Value =
            serde_json::from_slice(&meta_buf).map_err(|e| fmt_err(format!("bad meta: {e}")))?;
        let param_count = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let tensor_count = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        if param_count > tensor_count {
            return Err(fmt_err("param count exceeds tensor count".into()));
        }
        let mut tensors = Vec::with_capacity(tensor_count);
        for _ in 0..tensor_count {
            let name_len = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
            if name_len > 4096 {
                return Err(fmt_err("unreasonable tensor name length".into()));
            }
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf).map_err(io_err)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| fmt_err("tensor name is not utf-8".into()))?;
            let ndim = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
            if ndim > 8 {
                return Err(fmt_err(format!("tensor '{name}' has ndim {ndim}")));
            }
            let mut dims = Vec::with_capacity(ndim);
            let mut len = 1usize;
            for _ in 0..ndim {
                let d = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
                len = len.saturating_mul(d);
                dims.push(d);
            }
            if len > 1 << 30 {
                return Err(fmt_err(format!("tensor '{name}' is unreasonably large")));
            }
            let mut data = vec![0f32; len];
            r.read_f32_into::<LittleEndian>(&mut data).map_err(io_err)?;
            let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| fmt_err(format!("tensor '{name}': {e}")))?;
            tensors.push((name, arr));
        }
        Ok(Checkpoint {
            meta,
            param_count,
            tensors,
        })
    }
}
