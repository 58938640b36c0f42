use thiserror::Error;

use crate::{Micros, NodeId};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("topology error: {0}")]
    Topology(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("opportunity span {span} us exceeds the control bound {limit} us")]
    BoundViolation { span: Micros, limit: Micros },

    #[error("unknown node id {0}")]
    UnknownNode(NodeId),

    #[error("malformed packet: {0}")]
    Packet(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
