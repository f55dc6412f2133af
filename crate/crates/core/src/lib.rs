pub mod describe;
pub mod digest;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod mix;
pub mod pipeline;
pub mod sample;
