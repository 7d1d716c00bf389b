//! Service shell around `darklabel-core`: a directory store with an action
//! log, the shared operation layer, an HTTP API and a CLI.

pub mod cli;
pub mod config;
pub mod error;
pub mod http;
pub mod ops;
pub mod store;

pub use config::{ProviderKind, ServerConfig};
pub use error::{ErrorBody, Result, ServiceError};
pub use ops::{Op, Service};
pub use store::{Actor, Store};
