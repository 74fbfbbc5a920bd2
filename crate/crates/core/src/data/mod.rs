//! Synthetic benchmark data, splits, and the embedding dump format.

pub mod dump;
mod splits;
mod synthetic;

pub use dump::{decode_dump, encode_dump, read_any, read_csv, read_dump, write_csv, write_dump};
pub use splits::{make_splits, DownstreamSplit, SplitConfig, Splits};
pub use synthetic::{generate_synthetic, stream_rng, Stream, SyntheticConfig, SyntheticDataset, SyntheticSample};
