//! Wire protocol, server and client for out-of-process agents.

pub mod client;
pub mod codec;
pub mod http;
pub mod server;

pub use client::{ClientError, RemoteEnv};
pub use codec::{Control, Decoder, ErrorCode, Message, Role, DEFAULT_PORT, PROTOCOL_VERSION};
pub use server::{Server, ServerConfig, ServerHandle};

