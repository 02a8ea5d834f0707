//! CMX1 binary matrix container.
//!
//! ```text
//! magic      4 bytes   "CMX1"
//! tag        u8        0 = dense, 1 = lmf, 2 = hmf, 3 = csr
//! width      u8        scalar byte width (4 = f32, 8 = f64)
//! dims       u64 LE    dense: m n | lmf: m n r | hmf: m n j k | csr: m n nnz
//! payload              dense: A | lmf: U V | hmf: A' B C | csr: offsets indices values
//! ```
//!
//! Matrix blocks are row-major scalars of the declared width. CSR offsets
//! (`m + 1` of them) and column indices (`nnz`) are u64 LE. Trailing bytes are
//! rejected, so parse and serialize are exact inverses.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{CompressedMatrix, CsrMatrix, DenseMatrix, HmfMatrix, LmfMatrix};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"CMX1";

const TAG_DENSE: u8 = 0;
const TAG_LMF: u8 = 1;
const TAG_HMF: u8 = 2;
const TAG_CSR: u8 = 3;

/// A decoded matrix of either scalar width.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyMatrix {
    F32(CompressedMatrix<f32>),
    F64(CompressedMatrix<f64>),
}

impl AnyMatrix {
    /// Lossless widening to double precision.
    pub fn to_f64(&self) -> CompressedMatrix<f64> {
        match self {
            Self::F32(m) => m.cast(),
            Self::F64(m) => m.clone(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Self::F32(m) => encode(m),
            Self::F64(m) => encode(m),
        }
    }
}

pub fn encode<T: Scalar>(m: &CompressedMatrix<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 32 + m.param_count() * T::WIDTH as usize);
    out.extend_from_slice(MAGIC);
    let (tag, dims): (u8, Vec<usize>) = match m {
        CompressedMatrix::Dense(d) => (TAG_DENSE, vec![d.rows(), d.cols()]),
        CompressedMatrix::Lmf(l) => (TAG_LMF, vec![l.rows(), l.cols(), l.rank()]),
        CompressedMatrix::Hmf(h) => (TAG_HMF, vec![h.rows(), h.cols(), h.j(), h.k()]),
        CompressedMatrix::Csr(s) => (TAG_CSR, vec![s.rows(), s.cols(), s.nnz()]),
    };
    out.push(tag);
    out.push(T::WIDTH);
    for d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    if let CompressedMatrix::Csr(s) = m {
        for &o in s.row_offsets().iter().chain(s.col_indices()) {
            out.extend_from_slice(&(o as u64).to_le_bytes());
        }
    }
    for block in m.param_blocks() {
        for v in block {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Format(format!("dimension {v} overflows")))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Guards allocations against lying headers.
    fn ensure(&self, count: usize, width: usize) -> Result<()> {
        match count.checked_mul(width) {
            Some(bytes) if bytes <= self.remaining() => Ok(()),
            _ => Err(Error::Format(format!(
                "header declares {count} elements but only {} bytes remain",
                self.remaining()
            ))),
        }
    }

    fn scalars<T: Scalar>(&mut self, count: usize) -> Result<Vec<T>> {
        let w = T::WIDTH as usize;
        self.ensure(count, w)?;
        let bytes = self.take(count * w)?;
        Ok(bytes.chunks_exact(w).map(T::read_le).collect())
    }

    fn dense<T: Scalar>(&mut self, rows: usize, cols: usize) -> Result<DenseMatrix<T>> {
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("block size overflows".into()))?;
        let data = self.scalars(count)?;
        DenseMatrix::new(rows, cols, data).map_err(as_format)
    }

    fn indices(&mut self, count: usize) -> Result<Vec<usize>> {
        self.ensure(count, 8)?;
        (0..count).map(|_| self.u64()).collect()
    }
}

fn as_format(e: Error) -> Error {
    match e {
        Error::Format(_) => e,
        other => Error::Format(other.to_string()),
    }
}

/// Reads the header fields common to every representation.
fn header(bytes: &[u8]) -> Result<(u8, u8)> {
    if bytes.len() < 6 {
        return Err(Error::Format("file shorter than header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let (tag, width) = (bytes[4], bytes[5]);
    if tag > TAG_CSR {
        return Err(Error::Format(format!("unknown representation tag {tag}")));
    }
    if width != 4 && width != 8 {
        return Err(Error::Format(format!("unsupported scalar width {width}")));
    }
    Ok((tag, width))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<CompressedMatrix<T>> {
    let (tag, width) = header(bytes)?;
    if width != T::WIDTH {
        return Err(Error::Format(format!(
            "scalar width {width} does not match requested width {}",
            T::WIDTH
        )));
    }
    let mut r = Reader { buf: bytes, pos: 6 };
    let m = r.u64()?;
    let n = r.u64()?;
    let out: CompressedMatrix<T> = match tag {
        TAG_DENSE => {
            if m == 0 || n == 0 {
                return Err(Error::Format(format!("empty dense matrix {m}x{n}")));
            }
            r.dense(m, n)?.into()
        }
        TAG_LMF => {
            let rank = r.u64()?;
            let u = r.dense(m, rank)?;
            let v = r.dense(rank, n)?;
            LmfMatrix::new(u, v).map_err(as_format)?.into()
        }
        TAG_HMF => {
            let j = r.u64()?;
            let k = r.u64()?;
            if j > m {
                return Err(Error::Format(format!("j = {j} exceeds m = {m}")));
            }
            let top = r.dense(j, n)?;
            let b = r.dense(m - j, k)?;
            let c = r.dense(k, n)?;
            HmfMatrix::new(top, b, c).map_err(as_format)?.into()
        }
        _ => {
            let nnz = r.u64()?;
            let offsets = r.indices(m.checked_add(1).ok_or_else(|| Error::Format("m overflows".into()))?)?;
            let idx = r.indices(nnz)?;
            let values = r.scalars(nnz)?;
            CsrMatrix::new(m, n, offsets, idx, values).map_err(as_format)?.into()
        }
    };
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
    }
    Ok(out)
}

pub fn decode_any(bytes: &[u8]) -> Result<AnyMatrix> {
    let (_, width) = header(bytes)?;
    Ok(match width {
        4 => AnyMatrix::F32(decode(bytes)?),
        _ => AnyMatrix::F64(decode(bytes)?),
    })
}

pub fn write_file<T: Scalar>(path: impl AsRef<Path>, m: &CompressedMatrix<T>) -> Result<()> {
    std::fs::write(path, encode(m))?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<AnyMatrix> {
    let bytes = std::fs::read(path)?;
    decode_any(&bytes)
}
