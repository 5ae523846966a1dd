//! The untrusted cloud: an append-only ciphertext store that decompresses
//! blocks on request.
//!
//! This crate depends only on the key-free sensing and recovery code, so it
//! has no way to name keys, bases or plaintext.

pub mod protocol;
pub mod record;
pub mod server;
pub mod store;

pub use protocol::{Op, Query, Reply, Status};
pub use record::{CiphertextRecord, Geometry, RecordError};
pub use server::{Client, Server, ShutdownHandle};
pub use store::{Decompressed, OptionsPolicy, Store, StoreConfig, StoreError};
