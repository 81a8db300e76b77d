//! Std companion to `ptylab-core`: dataset and field files, phase images,
//! model-service clients, the human evaluation queue, on-disk discovery
//! sessions with checkpoint/resume, the HTTP evaluation service and the
//! command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod http;
pub mod human;
pub mod llm;
pub mod server;
pub mod session;
pub mod vlm;

pub use error::{AppError, AppResult};
