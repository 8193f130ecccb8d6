//! Persistence of per-layer token representations and pooling into sentence vectors.

mod container;
mod dump;
mod pool;

pub use container::{Block, BlockData, Container, DType, FORMAT_VERSION, MAGIC, PREAMBLE_LEN};
pub use dump::{read_dump, sentence_vectors, write_dump, ActivationDump, DUMP_KIND};
pub use pool::{pool, PoolingMethod};
pub(crate) use pool::{pool_rows, pool_rows_backward};
