//! Binary IQ stream files.
//!
//! A 16-byte header (`JASSIQ01`, antenna count and sample count as
//! little-endian `u32`) followed by little-endian `f32` `(re, im)` pairs,
//! antenna-major within each sample.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use thiserror::Error;

use crate::detector::CVec;
use crate::B;

pub const MAGIC: &[u8; 8] = b"JASSIQ01";

#[derive(Debug, Error)]
pub enum IqError {
    #[error("bad magic, not an IQ stream file")]
    Magic,
    #[error("file has {0} antennas, expected {B}")]
    Antennas(u32),
    #[error("stream truncated: expected {expected} samples")]
    Truncated { expected: u32 },
    #[error("stream of {0} samples does not fit the header")]
    TooLong(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_iq<W: Write>(mut w: W, stream: &[CVec]) -> Result<(), IqError> {
    let n = u32::try_from(stream.len()).map_err(|_| IqError::TooLong(stream.len()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(B as u32).to_le_bytes())?;
    w.write_all(&n.to_le_bytes())?;
    for y in stream {
        for z in y {
            w.write_all(&(z.re as f32).to_le_bytes())?;
            w.write_all(&(z.im as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_iq<R: Read>(mut r: R) -> Result<Vec<CVec>, IqError> {
    let mut hdr = [0u8; 16];
    r.read_exact(&mut hdr).map_err(|_| IqError::Magic)?;
    if &hdr[..8] != MAGIC {
        return Err(IqError::Magic);
    }
    let b = u32::from_le_bytes(hdr[8..12].try_into().unwrap());
    let n = u32::from_le_bytes(hdr[12..16].try_into().unwrap());
    if b as usize != B {
        return Err(IqError::Antennas(b));
    }
    let mut buf = [0u8; 8 * B];
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => IqError::Truncated { expected: n },
            _ => IqError::Io(e),
        })?;
        out.push(std::array::from_fn(|i| {
            let re = f32::from_le_bytes(buf[8 * i..8 * i + 4].try_into().unwrap());
            let im = f32::from_le_bytes(buf[8 * i + 4..8 * i + 8].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        }));
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, stream: &[CVec]) -> Result<(), IqError> {
    write_iq(BufWriter::new(File::create(path)?), stream)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<CVec>, IqError> {
    read_iq(BufReader::new(File::open(path)?))
}
