//! Multi-exit (BranchyNet-style) intent classification.
//!
//! A backbone — feed-forward over mean-pooled embeddings, or a stacked LSTM —
//! carries a softmax exit head after every layer. All exits train jointly;
//! at inference a query leaves at the first exit whose prediction entropy
//! drops below that exit's calibrated threshold.
//!
//! ```no_run
//! use branchy::{data, engine, persist};
//!
//! let saved = persist::load_model("model.bin")?;
//! let tokens = saved.vocab.encode(&data::tokenize("play some jazz"));
//! let trace = engine::infer_early_exit(&saved.model, &tokens)?;
//! println!("{} via exit {}", saved.labels[trace.prediction], trace.chosen_exit);
//! # Ok::<(), branchy::Error>(())
//! ```

pub mod config;
pub mod cost;
pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod models;
pub mod persist;
pub mod report;
pub mod tensor;
pub mod workflow;

pub use config::RunConfig;
pub use engine::{BranchyModel, ExitTrace, ThresholdSet};
pub use error::{Error, ErrorKind, Result};
pub use persist::SavedModel;
