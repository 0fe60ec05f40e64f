//! The EMB1 embedding file.
//!
//! Little-endian layout: magic `EMB1`, then `u32` format version (1), `u32`
//! count, `u32` dim, `u32` layer, `u8` dtype (1 = f32), three zero bytes,
//! and `count * dim` f32 values in row-major order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use mknn_core::EmbeddingSet;

use crate::error::{data, io, Error, Result};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 24;

const READ_CHUNK: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub count: u32,
    pub dim: u32,
    pub layer: u32,
}

impl Header {
    pub fn payload_len(&self) -> u64 {
        self.count as u64 * self.dim as u64 * 4
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&VERSION.to_le_bytes());
        out[8..12].copy_from_slice(&self.count.to_le_bytes());
        out[12..16].copy_from_slice(&self.dim.to_le_bytes());
        out[16..20].copy_from_slice(&self.layer.to_le_bytes());
        out[20] = DTYPE_F32;
        out
    }

    pub fn decode(bytes: &[u8; HEADER_LEN], path: &Path) -> Result<Self> {
        let malformed = |reason: String| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason,
        };
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        if bytes[..4] != MAGIC {
            return Err(malformed(format!("bad magic {:?}", &bytes[..4])));
        }
        if word(4) != VERSION {
            return Err(malformed(format!("unsupported format version {}", word(4))));
        }
        if bytes[20] != DTYPE_F32 {
            return Err(Error::DtypeMismatch {
                path: path.to_path_buf(),
                found: bytes[20],
            });
        }
        if bytes[21..24] != [0, 0, 0] {
            return Err(malformed("reserved bytes are not zero".into()));
        }
        Ok(Self {
            count: word(8),
            dim: word(12),
            layer: word(16),
        })
    }
}

/// Reads just the header.
pub fn read_header(path: &Path) -> Result<Header> {
    let mut file = File::open(path).map_err(io(path))?;
    read_header_from(&mut file, path)
}

fn read_header_from(r: &mut impl Read, path: &Path) -> Result<Header> {
    let mut bytes = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut bytes[filled..]).map_err(io(path))? {
            0 => {
                return Err(Error::MalformedHeader {
                    path: path.to_path_buf(),
                    reason: format!("file ends after {filled} of {HEADER_LEN} header bytes"),
                })
            }
            n => filled += n,
        }
    }
    Header::decode(&bytes, path)
}

/// Loads an embedding file. The result is never marked normalized.
pub fn read_embeddings(path: &Path, expect_dim: Option<usize>) -> Result<EmbeddingSet> {
    let mut file = File::open(path).map_err(io(path))?;
    let file_len = file.metadata().map_err(io(path))?.len();
    let header = read_header_from(&mut file, path)?;
    if let Some(expected) = expect_dim {
        if header.dim as usize != expected {
            return Err(Error::DimensionMismatch {
                path: path.to_path_buf(),
                expected,
                found: header.dim as usize,
            });
        }
    }
    let available = file_len.saturating_sub(HEADER_LEN as u64);
    let expected = header.payload_len();
    if available < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: available,
        });
    }
    if available > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra: available - expected,
        });
    }

    let total = header.count as usize * header.dim as usize;
    let mut values = Vec::with_capacity(total);
    let mut buf = vec![0u8; READ_CHUNK];
    while values.len() < total {
        let want = ((total - values.len()) * 4).min(READ_CHUNK);
        file.read_exact(&mut buf[..want])
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::TruncatedPayload {
                    path: path.to_path_buf(),
                    expected,
                    found: (values.len() * 4) as u64,
                },
                _ => Error::Io {
                    path: path.to_path_buf(),
                    source: e,
                },
            })?;
        values.extend(
            buf[..want]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
        );
    }
    EmbeddingSet::new(
        header.count as usize,
        header.dim as usize,
        header.layer,
        values,
    )
    .map_err(data(path))
}

/// Writes `set` in EMB1 format, replacing any existing file.
pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let too_big = |what: &str| Error::Invalid(format!("{}: {what} exceeds u32", path.display()));
    let header = Header {
        count: u32::try_from(set.count()).map_err(|_| too_big("row count"))?,
        dim: u32::try_from(set.dim()).map_err(|_| too_big("dimension"))?,
        layer: set.layer(),
    };
    let file = File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&header.encode()).map_err(io(path))?;
    for chunk in set.values().chunks(READ_CHUNK / 4) {
        let bytes: Vec<u8> = chunk.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes).map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// Loads and L2-normalizes, reporting the file on a zero-norm row.
pub fn read_normalized(path: &Path, expect_dim: Option<usize>) -> Result<EmbeddingSet> {
    read_embeddings(path, expect_dim)?
        .normalize()
        .map_err(data(path))
}
