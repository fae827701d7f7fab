//! The on-disk tensor container used by every persistent artifact: dataset
//! scans, checkpoint parameters, and prediction volumes.
//!
//! Layout: the 8-byte magic `DSKT0001`, a little-endian `u32` header
//! length, a UTF-8 JSON header `{"shape": [...], "dtype": "f64", "order":
//! "row-major"}`, then the raw row-major payload as little-endian `f64`s.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use kseg_core::Tensor;
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"DSKT0001";

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:?}; not a DSKT0001 container")]
    BadMagic { found: Vec<u8> },
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("unsupported dtype {dtype:?} / order {order:?}")]
    Unsupported { dtype: String, order: String },
    #[error("payload holds {got} values but the shape wants {expected}")]
    PayloadLength { expected: usize, got: usize },
}

#[derive(Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    dtype: String,
    order: String,
}

pub fn write_tensor_to<W: Write>(mut w: W, tensor: &Tensor) -> Result<(), ContainerError> {
    let header = serde_json::to_vec(&Header {
        shape: tensor.shape().to_vec(),
        dtype: "f64".into(),
        order: "row-major".into(),
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for v in tensor.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor_from<R: Read>(mut r: R) -> Result<Tensor, ContainerError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ContainerError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header_bytes = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.dtype != "f64" || header.order != "row-major" {
        return Err(ContainerError::Unsupported {
            dtype: header.dtype,
            order: header.order,
        });
    }
    let expected: usize = header.shape.iter().product();
    let mut data = Vec::with_capacity(expected);
    let mut buf = [0u8; 8];
    loop {
        match r.read_exact(&mut buf) {
            Ok(()) => data.push(f64::from_le_bytes(buf)),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
    }
    if data.len() != expected {
        return Err(ContainerError::PayloadLength {
            expected,
            got: data.len(),
        });
    }
    Tensor::new(header.shape, data).map_err(|_| ContainerError::PayloadLength {
        expected,
        got: 0,
    })
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<(), ContainerError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor_to(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor, ContainerError> {
    read_tensor_from(BufReader::new(File::open(path)?))
}
