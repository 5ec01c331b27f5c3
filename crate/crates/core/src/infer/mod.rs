//! Offline and streaming enhancement and the timing/memory benchmark.

mod bench;
mod stream;

pub use bench::{
    attention_activation_bytes, bench, offline_activation_bytes, rt_factor, write_bench_csv, AttentionLayer, BenchConfig,
    BenchRow, BENCH_HEADER,
};
pub use stream::{enhance_offline, enhance_streaming, persistent_bytes, StreamSession};
