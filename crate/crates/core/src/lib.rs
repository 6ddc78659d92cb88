//! Timed-game abstractions of switched control systems built from level-set partitions.

pub mod bounds;
pub mod config;
pub mod conformance;
pub mod exec;
pub mod expr;
pub mod game;
pub mod grid;
pub mod model;
pub mod partition;
pub mod pipeline;
pub mod sim;
pub mod spec_file;
pub mod tga;

pub use config::Config;
pub use exec::Execution;
pub use pipeline::{Analysis, Error};
pub use spec_file::SystemSpecFile;
