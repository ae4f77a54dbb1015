//! Service, log files and command line around `gamediag-core`.
//!
//! * [`jsonl`] reads and writes JSON Lines logs.
//! * [`service`] keeps one append-only log per child, deduplicates
//!   deliveries and derives reports; [`http`] exposes it over HTTP/JSON.
//! * [`config`] is the service configuration document.

pub mod config;
pub mod http;
pub mod jsonl;
pub mod service;

pub use config::{ChildSpec, ServiceConfig};
pub use service::{replay, replay_file, Ack, ChildRegistry, Service, ServiceError};
