//! Binary container for dense `f64` tensors.
//!
//! Layout: the 8-byte magic `DSPTNSR1`, a little-endian `u32` rank, one
//! little-endian `u64` per dimension, then the row-major values as
//! little-endian IEEE-754 doubles. Infinities round-trip exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};

const MAGIC: &[u8; 8] = b"DSPTNSR1";
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if len != Some(data.len()) {
            return invalid(format!("dims {dims:?} do not match {} values", data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a tensor file".into()));
        }
        let mut rank = [0u8; 4];
        r.read_exact(&mut rank)?;
        let rank = u32::from_le_bytes(rank);
        if rank > MAX_RANK {
            return Err(Error::Format(format!("rank {rank} too large")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            let mut d = [0u8; 8];
            r.read_exact(&mut d)?;
            dims.push(u64::from_le_bytes(d) as usize);
        }
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() != len * 8 {
            return Err(Error::Format(format!("expected {} payload bytes, found {}", len * 8, buf.len())));
        }
        let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_bits() {
        let t = Tensor::new(vec![2, 1, 3], vec![1.0, f64::INFINITY, -0.0, 5e-324, 0.25, f64::MAX]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 3 * 8 + 6 * 8);
        let back = Tensor::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.dims, t.dims);
        assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        buf.pop();
        assert!(Tensor::read_from(&mut buf.as_slice()).is_err());
        assert!(Tensor::read_from(&mut &b"nottensr...."[..]).is_err());
    }
}
