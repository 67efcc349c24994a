//! Framed request/response protocol over TCP.
//!
//! A frame is a 4-byte big-endian length followed by a UTF-8 JSON body.
//! Requests carry `{"request_id", "kind", "payload"}`; responses echo the
//! `request_id` with either a `payload` or an `error`.

mod client;
mod frame;
mod protocol;

pub use client::{pool, rpc_call, ClientPool, RpcClient, RpcError};
pub use frame::{decode_frame, encode_frame, write_frame, FrameError, MAX_READ_FRAME};
pub use protocol::{ErrorCode, RemoteError, RpcKind, RpcRequest, RpcResponse};
