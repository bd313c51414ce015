//! Toolkit for building and benchmarking semantically aligned inpainting datasets.
//!
//! The crate is organised around a JSONL [`manifest`] that every stage reads and
//! writes:
//!
//! * [`saor`] asks a chat model to pick an object from an image's inventory and
//!   write an inpainting prompt for it.
//! * [`gateway`] talks to the neural workers (segmentation, captioning,
//!   inpainting, scoring) over a small JSON protocol and schedules the
//!   single/double inpainting rounds.
//! * [`ugda`] runs the two-stage, order-reversed realism judgment with a
//!   vision-chat model.
//! * [`metrics`] and [`eval`] compute the forensic localization/detection
//!   metrics and grouped benchmark reports.
//! * [`human_bench`] backs the human study: batch assignment, annotation
//!   storage, aggregation and demographic statistics.

pub mod chat;
pub mod eval;
pub mod gateway;
pub mod human_bench;
pub mod imageio;
pub mod manifest;
pub mod metrics;
pub mod saor;
pub mod serve;
pub mod synthetic;
pub mod ugda;
