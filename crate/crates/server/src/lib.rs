//! Session storage, the HTTP API and the `vislabel` command line on top of
//! `vislabel-core`.

pub mod api;
pub mod commands;
pub mod store;

pub use store::{Store, StoreError, DATA_DIR_ENV};
