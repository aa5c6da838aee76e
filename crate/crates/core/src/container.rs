//! The SNFL binary array container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                         |
//! |--------------|---------------------------------|
//! | 4            | magic `SNFL`                    |
//! | 2            | format version (`u16`, = 1)     |
//! | 1            | dtype (`0` = f64, `1` = c128)   |
//! | 1            | rank                            |
//! | 8 · rank     | dims (`u64` each)               |
//! | payload      | row-major values; c128 as re,im |

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use num_complex::Complex64;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SNFL";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic {0:?}, expected \"SNFL\"")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("dtype mismatch: expected {expected:?}, found {found:?}")]
    DtypeMismatch { expected: Dtype, found: Dtype },
    #[error("rank mismatch: expected {expected}, found {found}")]
    RankMismatch { expected: usize, found: usize },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    C128,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F64 => 0,
            Dtype::C128 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self, ContainerError> {
        match code {
            0 => Ok(Dtype::F64),
            1 => Ok(Dtype::C128),
            c => Err(ContainerError::UnknownDtype(c)),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::C128 => 16,
        }
    }
}

/// An n-dimensional real or complex array as stored in a container.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Real(ArrayD<f64>),
    Complex(ArrayD<Complex64>),
}

impl Tensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            Tensor::Real(_) => Dtype::F64,
            Tensor::Complex(_) => Dtype::C128,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::Real(a) => a.shape(),
            Tensor::Complex(a) => a.shape(),
        }
    }

    pub fn into_real(self) -> Result<ArrayD<f64>, ContainerError> {
        match self {
            Tensor::Real(a) => Ok(a),
            t => Err(ContainerError::DtypeMismatch { expected: Dtype::F64, found: t.dtype() }),
        }
    }

    pub fn into_complex(self) -> Result<ArrayD<Complex64>, ContainerError> {
        match self {
            Tensor::Complex(a) => Ok(a),
            t => Err(ContainerError::DtypeMismatch { expected: Dtype::C128, found: t.dtype() }),
        }
    }
}

impl From<Array2<f64>> for Tensor {
    fn from(a: Array2<f64>) -> Self {
        Tensor::Real(a.into_dyn())
    }
}

impl From<Array2<Complex64>> for Tensor {
    fn from(a: Array2<Complex64>) -> Self {
        Tensor::Complex(a.into_dyn())
    }
}

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let shape = tensor.shape();
    let count: usize = shape.iter().product();
    let mut out = Vec::with_capacity(8 + 8 * shape.len() + count * tensor.dtype().width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(tensor.dtype().code());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match tensor {
        Tensor::Real(a) => {
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor::Complex(a) => {
            for v in a.iter() {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }
        }
    }
    out
}

fn take<'a>(buf: &mut &'a [u8], n: usize, expected_total: usize) -> Result<&'a [u8], ContainerError> {
    if buf.len() < n {
        return Err(ContainerError::Truncated { expected: expected_total, found: buf.len() });
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, ContainerError> {
    let mut buf = bytes;
    let magic: [u8; 4] = take(&mut buf, 4, 8)?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(take(&mut buf, 2, 8)?.try_into().unwrap());
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let dtype = Dtype::from_code(take(&mut buf, 1, 8)?[0])?;
    let rank = take(&mut buf, 1, 8)?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(take(&mut buf, 8, 8 + 8 * rank)?.try_into().unwrap());
        shape.push(d as usize);
    }
    let count: usize = shape.iter().product();
    let payload = count * dtype.width();
    if buf.len() < payload {
        return Err(ContainerError::Truncated { expected: payload, found: buf.len() });
    }
    if buf.len() > payload {
        return Err(ContainerError::TrailingBytes(buf.len() - payload));
    }
    let f64_at = |i: usize| f64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().unwrap());
    let tensor = match dtype {
        Dtype::F64 => {
            let data: Vec<f64> = (0..count).map(f64_at).collect();
            Tensor::Real(ArrayD::from_shape_vec(IxDyn(&shape), data).expect("shape matches count"))
        }
        Dtype::C128 => {
            let data: Vec<Complex64> =
                (0..count).map(|i| Complex64::new(f64_at(2 * i), f64_at(2 * i + 1))).collect();
            Tensor::Complex(ArrayD::from_shape_vec(IxDyn(&shape), data).expect("shape matches count"))
        }
    };
    Ok(tensor)
}

pub fn save_array(path: impl AsRef<Path>, tensor: &Tensor) -> Result<(), ContainerError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(tensor))?;
    Ok(())
}

pub fn load_array(path: impl AsRef<Path>) -> Result<Tensor, ContainerError> {
    decode(&fs::read(path)?)
}

pub fn load_real2(path: impl AsRef<Path>) -> Result<Array2<f64>, ContainerError> {
    let a = load_array(path)?.into_real()?;
    let rank = a.ndim();
    a.into_dimensionality().map_err(|_| ContainerError::RankMismatch { expected: 2, found: rank })
}

pub fn load_complex2(path: impl AsRef<Path>) -> Result<Array2<Complex64>, ContainerError> {
    let a = load_array(path)?.into_complex()?;
    let rank = a.ndim();
    a.into_dimensionality().map_err(|_| ContainerError::RankMismatch { expected: 2, found: rank })
}
