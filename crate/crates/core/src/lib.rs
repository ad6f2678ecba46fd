//! Data preparation, task encoding, mixture sampling and evaluation for
//! vision-language models that read online handwriting.
//!
//! Ink flows through the crate as follows: [`ingest`] reads raw files,
//! [`raster`] turns ink into a time/distance colored image, [`codec`] builds
//! prompts and segmentation targets, [`mixture`] draws a balanced training
//! stream, [`client`] queries an external model and [`metrics`] scores its
//! answers. [`pipeline`] connects the last three.

pub mod client;
pub mod codec;
pub mod example;
pub mod ingest;
pub mod ink;
pub mod metrics;
pub mod mixture;
pub mod pipeline;
pub mod raster;
