//! # locodec
//!
//! Continuous decoding of locomotion speed from multichannel EEG.
//!
//! ```text
//! canonical csv / bin ──► session::ingest ──► inclusion gate (speed IQR)
//!                                  │
//!              split 80/10/10 ─────┤──► z-score (train stats) ──► 20-sample windows
//!                                  │                                   │
//!                    dsp::band_isolate (optional)          decoders (linear, forest,
//!                                                          ffnn, lstm, transformer)
//!                                                                      │
//!                                          trainer (adam + early stopping, head-only fine-tune)
//!                                                                      │
//!                         protocols (single-session, transfer, region, band, offset)
//!                                                                      │
//!                                      stats (r, R², Friedman, Wilcoxon, bootstrap)
//! ```
//!
//! Everything runs on `f64` and is deterministic for a fixed seed.

pub mod autodiff;
pub mod config;
pub mod decoders;
pub mod dsp;
pub mod error;
pub mod protocols;
pub mod session;
pub mod stats;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
