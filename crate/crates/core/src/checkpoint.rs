//! Binary checkpoint format for [`Dbm2Params`].
//!
//! Layout (little-endian): the 8-byte magic `CDBM0001`, then `Mx`, `My`,
//! `Mz` as `u32`, then `f64` arrays in row-major order: `W`, `V`, `a`, `b`,
//! `c`, `α`, `β`, `γ`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::model::Dbm2Params;

pub const MAGIC: &[u8; 8] = b"CDBM0001";

pub fn encode(m: &Dbm2Params) -> Vec<u8> {
    let s = m.sizes();
    let n_values = s.hidden1 * s.visible + s.hidden2 * s.hidden1 + 2 * s.total();
    let mut out = Vec::with_capacity(8 + 12 + 8 * n_values);
    out.extend_from_slice(MAGIC);
    for d in [s.visible, s.hidden1, s.hidden2] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    let values = m
        .w()
        .iter()
        .chain(m.v().iter())
        .chain(m.a())
        .chain(m.b())
        .chain(m.c())
        .chain(m.alpha())
        .chain(m.beta())
        .chain(m.gamma());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {end} bytes, file has {}",
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn vector(&mut self, n: usize) -> Result<Array1<f64>> {
        let b = self.take(8 * n)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let flat = self.vector(rows * cols)?;
        Ok(flat.into_shape_with_order((rows, cols)).expect("length checked"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Dbm2Params> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let (mx, my, mz) = (r.u32()?, r.u32()?, r.u32()?);
    let w = r.matrix(my, mx)?;
    let v = r.matrix(mz, my)?;
    let a = r.vector(mx)?;
    let b = r.vector(my)?;
    let c = r.vector(mz)?;
    let alpha = r.vector(mx)?;
    let beta = r.vector(my)?;
    let gamma = r.vector(mz)?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Dbm2Params::new(w, v, a, b, c, alpha, beta, gamma)
}

pub fn save(m: &Dbm2Params, path: &Path) -> Result<()> {
    write_atomic(path, &encode(m))
}

pub fn load(path: &Path) -> Result<Dbm2Params> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerSizes;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_layout_is_fixed() {
        let m = Dbm2Params::zeros(LayerSizes::new(3, 2, 1));
        let bytes = encode(&m);
        assert_eq!(&bytes[..8], b"CDBM0001");
        assert_eq!(&bytes[8..20], &[3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(bytes.len(), 20 + 8 * (6 + 2 + 3 + 2 + 1 + 3 + 2 + 1));
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let m = Dbm2Params::zeros(LayerSizes::new(2, 2, 2));
        let mut bytes = encode(&m);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(seed in any::<u64>(), mx in 1usize..6, my in 1usize..5, mz in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Dbm2Params::random(LayerSizes::new(mx, my, mz), 2.0, &mut rng);
            prop_assert_eq!(decode(&encode(&m)).unwrap(), m);
        }
    }
}
