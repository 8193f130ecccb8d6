//! The `.shfc` binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   magic        b"SHFC"
//! offset 4   version      u16 (currently 1)
//! offset 6   header_len   u64
//! offset 14  header       `header_len` bytes of UTF-8 JSON
//! ...        payload      raw blocks; a block's `offset` is relative to the payload start
//! ```
//!
//! The JSON header is `{"kind": .., "meta": .., "blocks": [{name, dtype, rows, cols, offset}]}`.
//! `f64` blocks are stored row-major as 8-byte IEEE-754 values, `u32` blocks as 4-byte integers.
//! Activation dumps, model checkpoints and corpora are all containers of different `kind`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const MAGIC: &[u8; 4] = b"SHFC";
pub const FORMAT_VERSION: u16 = 1;
/// Magic + version + header length.
pub const PREAMBLE_LEN: usize = 4 + 2 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F64,
    U32,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::U32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockData {
    F64(Matrix),
    U32 { rows: usize, cols: usize, values: Vec<u32> },
}

impl BlockData {
    pub fn dtype(&self) -> DType {
        match self {
            BlockData::F64(_) => DType::F64,
            BlockData::U32 { .. } => DType::U32,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            BlockData::F64(m) => m.shape(),
            BlockData::U32 { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn byte_len(&self) -> usize {
        let (r, c) = self.shape();
        r * c * self.dtype().size()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub data: BlockData,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    dtype: DType,
    rows: usize,
    cols: usize,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    blocks: Vec<BlockHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub blocks: Vec<Block>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            blocks: Vec::new(),
        }
    }

    pub fn push_f64(&mut self, name: impl Into<String>, m: Matrix) {
        self.blocks.push(Block {
            name: name.into(),
            data: BlockData::F64(m),
        });
    }

    pub fn push_u32(&mut self, name: impl Into<String>, values: Vec<u32>) {
        self.blocks.push(Block {
            name: name.into(),
            data: BlockData::U32 {
                rows: 1,
                cols: values.len(),
                values,
            },
        });
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("missing block `{name}`")))
    }

    pub fn f64_block(&self, name: &str) -> Result<&Matrix> {
        match &self.block(name)?.data {
            BlockData::F64(m) => Ok(m),
            _ => Err(Error::Format(format!("block `{name}` is not f64"))),
        }
    }

    pub fn u32_block(&self, name: &str) -> Result<&[u32]> {
        match &self.block(name)?.data {
            BlockData::U32 { values, .. } => Ok(values),
            _ => Err(Error::Format(format!("block `{name}` is not u32"))),
        }
    }

    /// Serialized size: preamble + header JSON + Σ block bytes.
    pub fn encoded_len(&self) -> Result<usize> {
        Ok(PREAMBLE_LEN + self.header_json()?.len() + self.payload_len())
    }

    fn payload_len(&self) -> usize {
        self.blocks.iter().map(|b| b.data.byte_len()).sum()
    }

    fn header_json(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let (rows, cols) = b.data.shape();
                let h = BlockHeader {
                    name: b.name.clone(),
                    dtype: b.data.dtype(),
                    rows,
                    cols,
                    offset,
                };
                offset += b.data.byte_len() as u64;
                h
            })
            .collect();
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            blocks,
        };
        Ok(serde_json::to_vec(&header)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = self.header_json()?;
        let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + self.payload_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for b in &self.blocks {
            match &b.data {
                BlockData::F64(m) => {
                    for v in m.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                BlockData::U32 { values, .. } => {
                    for v in values {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic; not a .shfc container".into()));
        }
        if bytes.len() < PREAMBLE_LEN {
            return Err(Error::Corruption {
                offset: bytes.len() as u64,
                detail: "file ends inside the preamble".into(),
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
        let header_end = PREAMBLE_LEN
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Corruption {
                offset: bytes.len() as u64,
                detail: format!("header of {header_len} bytes is truncated"),
            })?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE_LEN..header_end])
            .map_err(|e| Error::Format(format!("invalid header JSON: {e}")))?;

        let payload = &bytes[header_end..];
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for bh in header.blocks {
            let count = bh.rows.checked_mul(bh.cols).ok_or_else(|| {
                Error::Format(format!("block `{}` has an overflowing shape", bh.name))
            })?;
            let len = count * bh.dtype.size();
            let start = bh.offset as usize;
            let end = start.saturating_add(len);
            if end > payload.len() {
                return Err(Error::Corruption {
                    offset: (header_end + payload.len()) as u64,
                    detail: format!(
                        "block `{}` truncated: needs bytes {}..{} but file ends at {}",
                        bh.name,
                        header_end + start,
                        header_end + end,
                        header_end + payload.len()
                    ),
                });
            }
            let raw = &payload[start..end];
            let data = match bh.dtype {
                DType::F64 => {
                    let values: Vec<f64> = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    BlockData::F64(Matrix::new(bh.rows, bh.cols, values).map_err(|e| {
                        Error::Corruption {
                            offset: (header_end + start) as u64,
                            detail: format!("block `{}`: {e}", bh.name),
                        }
                    })?)
                }
                DType::U32 => BlockData::U32 {
                    rows: bh.rows,
                    cols: bh.cols,
                    values: raw
                        .chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                },
            };
            blocks.push(Block {
                name: bh.name,
                data,
            });
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            blocks,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Reads a container and checks its `kind`.
    pub fn read_kind(path: impl AsRef<Path>, kind: &str) -> Result<Self> {
        let c = Self::read(path)?;
        if c.kind != kind {
            return Err(Error::Format(format!(
                "expected a `{kind}` container, found `{}`",
                c.kind
            )));
        }
        Ok(c)
    }
}
