//! Binary cache of assembled operators keyed by the model hash.
//!
//! Layout (little endian): magic, dim u32, nodes u32, hash [u8; 32], mode u8, interior count u32,
//! interior indices u32, times f64, weights f64, condition number f64, then B, R and Q row-major
//! as (re, im) f64 pairs.

use num_complex::Complex64;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::operators::{Mode, OperatorSystem};

const MAGIC: &[u8; 8] = b"SPIOPS01";

fn io(e: std::io::Error) -> Error {
    Error::Cache(e.to_string())
}

pub fn write_system(path: &Path, sys: &OperatorSystem, hash: &[u8; 32]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(sys.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(sys.n_nodes() as u32).to_le_bytes());
    buf.extend_from_slice(hash);
    buf.push(match sys.mode() {
        Mode::Noisy => 0,
        Mode::Noiseless => 1,
    });
    buf.extend_from_slice(&(sys.interior_nodes().len() as u32).to_le_bytes());
    for &k in sys.interior_nodes() {
        buf.extend_from_slice(&(k as u32).to_le_bytes());
    }
    for v in sys.times().iter().chain(sys.weights()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&sys.condition_number_b().to_le_bytes());
    for m in [sys.b(), sys.r(), sys.q()] {
        for i in 0..m.nrows() {
            for k in 0..m.ncols() {
                buf.extend_from_slice(&m[(i, k)].re.to_le_bytes());
                buf.extend_from_slice(&m[(i, k)].im.to_le_bytes());
            }
        }
    }
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(io)?;
    file.write_all(&buf).map_err(io)?;
    file.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Cache("truncated cache file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads a cached system; `Ok(None)` when the file belongs to a different model.
pub fn read_system(path: &Path, hash: &[u8; 32]) -> Result<Option<OperatorSystem>> {
    let mut data = Vec::new();
    std::fs::File::open(path).map_err(io)?.read_to_end(&mut data).map_err(io)?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Cache("not an operator cache file".into()));
    }
    let dim = c.u32()?;
    let n = c.u32()?;
    if c.take(32)? != hash {
        return Ok(None);
    }
    let mode = match c.take(1)?[0] {
        0 => Mode::Noisy,
        1 => Mode::Noiseless,
        other => return Err(Error::Cache(format!("unknown mode tag {other}"))),
    };
    let n_int = c.u32()?;
    let interior = (0..n_int).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let times = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let weights = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let cond = c.f64()?;
    let size = n * dim;
    let mut mats = Vec::with_capacity(3);
    for _ in 0..3 {
        let mut m = CMatrix::zeros(size, size);
        for i in 0..size {
            for k in 0..size {
                let re = c.f64()?;
                let im = c.f64()?;
                m[(i, k)] = Complex64::new(re, im);
            }
        }
        mats.push(m);
    }
    let q = mats.pop().expect("three matrices");
    let r = mats.pop().expect("three matrices");
    let b = mats.pop().expect("three matrices");
    Ok(Some(OperatorSystem::from_parts(
        dim, mode, times, weights, interior, b, r, q, cond,
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::DensitySpec;
    use crate::grid::FrequencyGrid;
    use crate::missing::{Interval, MissingSet, TimeStep};
    use crate::operators::assemble_system;

    #[test]
    fn round_trip() {
        let grid = FrequencyGrid::new(16.0, 257).unwrap();
        let set = MissingSet::new(vec![Interval::new(-1.0, 0.0)], &grid, TimeStep::Matched).unwrap();
        let f = DensitySpec::ou(1.0, 1.0).build(&grid, 1, true).unwrap();
        let sys = assemble_system(&f, &f.scaled(0.5), &set, &grid, Mode::Noisy).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ops.bin");
        let hash = [7u8; 32];
        write_system(&path, &sys, &hash).unwrap();
        let back = read_system(&path, &hash).unwrap().unwrap();
        assert_eq!(back.b(), sys.b());
        assert_eq!(back.q(), sys.q());
        assert_eq!(back.interior_nodes(), sys.interior_nodes());
        assert!(read_system(&path, &[0u8; 32]).unwrap().is_none());
    }
}
