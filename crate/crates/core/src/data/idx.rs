//! IDX container format (the MNIST distribution format).
//!
//! Header: two zero bytes, a dtype byte, a dimension-count byte, then one
//! big-endian `u32` per dimension. Values follow in big-endian row-major
//! order.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("bad magic: first two bytes must be zero")]
    BadMagic,
    #[error("unsupported dtype code 0x{0:02x}")]
    UnsupportedDtype(u8),
    #[error("truncated input: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("element count {count} does not match dimensions {dims:?}")]
    ShapeMismatch { count: usize, dims: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxDtype {
    U8,
    I8,
    I16,
    I32,
    F32,
    F64,
}

impl IdxDtype {
    pub fn code(self) -> u8 {
        match self {
            IdxDtype::U8 => 0x08,
            IdxDtype::I8 => 0x09,
            IdxDtype::I16 => 0x0B,
            IdxDtype::I32 => 0x0C,
            IdxDtype::F32 => 0x0D,
            IdxDtype::F64 => 0x0E,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, IdxError> {
        Ok(match code {
            0x08 => IdxDtype::U8,
            0x09 => IdxDtype::I8,
            0x0B => IdxDtype::I16,
            0x0C => IdxDtype::I32,
            0x0D => IdxDtype::F32,
            0x0E => IdxDtype::F64,
            other => return Err(IdxError::UnsupportedDtype(other)),
        })
    }

    pub fn width(self) -> usize {
        match self {
            IdxDtype::U8 | IdxDtype::I8 => 1,
            IdxDtype::I16 => 2,
            IdxDtype::I32 | IdxDtype::F32 => 4,
            IdxDtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    I8(Vec<i8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl IdxData {
    pub fn dtype(&self) -> IdxDtype {
        match self {
            IdxData::U8(_) => IdxDtype::U8,
            IdxData::I8(_) => IdxDtype::I8,
            IdxData::I16(_) => IdxDtype::I16,
            IdxData::I32(_) => IdxDtype::I32,
            IdxData::F32(_) => IdxDtype::F32,
            IdxData::F64(_) => IdxDtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            IdxData::U8(v) => v.len(),
            IdxData::I8(v) => v.len(),
            IdxData::I16(v) => v.len(),
            IdxData::I32(v) => v.len(),
            IdxData::F32(v) => v.len(),
            IdxData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every element widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            IdxData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I8(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I16(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I32(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxTensor {
    dims: Vec<usize>,
    data: IdxData,
}

impl IdxTensor {
    pub fn new(dims: Vec<usize>, data: IdxData) -> Result<Self, IdxError> {
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(IdxError::ShapeMismatch {
                count: data.len(),
                dims,
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &IdxData {
        &self.data
    }

    pub fn dtype(&self) -> IdxDtype {
        self.data.dtype()
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::Truncated {
            expected: 4,
            found: bytes.len(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(IdxError::BadMagic);
    }
    let dtype = IdxDtype::from_code(bytes[2])?;
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(IdxError::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let expected = header + count * dtype.width();
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IdxError::TrailingBytes(bytes.len() - expected));
    }
    let body = &bytes[header..];
    let data = match dtype {
        IdxDtype::U8 => IdxData::U8(body.to_vec()),
        IdxDtype::I8 => IdxData::I8(body.iter().map(|&b| b as i8).collect()),
        IdxDtype::I16 => IdxData::I16(
            body.chunks_exact(2)
                .map(|c| i16::from_be_bytes(c.try_into().expect("2 bytes")))
                .collect(),
        ),
        IdxDtype::I32 => IdxData::I32(
            body.chunks_exact(4)
                .map(|c| i32::from_be_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        ),
        IdxDtype::F32 => IdxData::F32(
            body.chunks_exact(4)
                .map(|c| f32::from_be_bytes(c.try_into().expect("4 bytes")))
                .collect(),
        ),
        IdxDtype::F64 => IdxData::F64(
            body.chunks_exact(8)
                .map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        ),
    };
    IdxTensor::new(dims, data)
}

pub fn encode_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = vec![0, 0, t.dtype().code(), t.dims.len() as u8];
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    match &t.data {
        IdxData::U8(v) => out.extend_from_slice(v),
        IdxData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
        IdxData::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        IdxData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        IdxData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        IdxData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_image_and_label_headers() {
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
        bytes.extend((0..1568).map(|i| (i % 256) as u8));
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(t.dims(), &[2, 28, 28]);
        assert_eq!(t.dtype(), IdxDtype::U8);

        let labels = [0, 0, 8, 1, 0, 0, 0, 5, 3, 1, 4, 1, 5];
        let t = parse_idx(&labels).unwrap();
        assert_eq!(t.dims(), &[5]);
        assert_eq!(t.data(), &IdxData::U8(vec![3, 1, 4, 1, 5]));
    }

    #[test]
    fn rejects_malformed_input() {
        assert_eq!(
            parse_idx(&[0, 0, 8, 1, 0, 0, 0, 5, 1, 2]),
            Err(IdxError::Truncated {
                expected: 13,
                found: 10
            })
        );
        assert_eq!(parse_idx(&[1, 0, 8, 1]), Err(IdxError::BadMagic));
        assert_eq!(
            parse_idx(&[0, 0, 0x07, 1, 0, 0, 0, 0]),
            Err(IdxError::UnsupportedDtype(0x07))
        );
        assert_eq!(
            parse_idx(&[0, 0, 8, 1, 0, 0, 0, 1, 9, 9]),
            Err(IdxError::TrailingBytes(1))
        );
        assert!(matches!(parse_idx(&[0, 0]), Err(IdxError::Truncated { .. })));
    }

    fn tensor_strategy() -> impl Strategy<Value = IdxTensor> {
        (prop::collection::vec(1usize..4, 1..4), 0u8..6).prop_flat_map(|(dims, kind)| {
            let n: usize = dims.iter().product();
            let data = match kind {
                0 => prop::collection::vec(any::<u8>(), n).prop_map(IdxData::U8).boxed(),
                1 => prop::collection::vec(any::<i8>(), n).prop_map(IdxData::I8).boxed(),
                2 => prop::collection::vec(any::<i16>(), n).prop_map(IdxData::I16).boxed(),
                3 => prop::collection::vec(any::<i32>(), n).prop_map(IdxData::I32).boxed(),
                4 => prop::collection::vec(-1e6f32..1e6, n).prop_map(IdxData::F32).boxed(),
                _ => prop::collection::vec(-1e12f64..1e12, n).prop_map(IdxData::F64).boxed(),
            };
            data.prop_map(move |d| IdxTensor::new(dims.clone(), d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn parse_inverts_encode(t in tensor_strategy()) {
            prop_assert_eq!(parse_idx(&encode_idx(&t)).unwrap(), t);
        }
    }
}
