//! Distributed channels: broker-backed queues and point-to-point pipes.
//!
//! Queues live at a broker process; any number of producers and consumers
//! connect by endpoint address and channel id. Items are durably buffered at
//! the broker before the put is acknowledged, the buffer is bounded (puts
//! block while it is full), and consumers see broker-arrival FIFO order.
//! Pipes are direct connections between exactly two endpoints with
//! per-direction sequence numbering.

pub mod broker;
pub mod pipe;

pub use broker::{DistQueue, QueueBroker, DEFAULT_QUEUE_CAPACITY};
pub use pipe::{Pipe, PipeListener};

#[derive(Debug, Clone, thiserror::Error)]
pub enum ChannelError {
    /// The queue was closed; puts fail immediately, gets fail once drained.
    #[error("queue is closed")]
    QueueClosed,
    /// The pipe was closed deliberately by one of its endpoints.
    #[error("pipe is closed")]
    PipeClosed,
    /// The pipe's peer vanished without closing, or violated the protocol.
    #[error("pipe broken: {0}")]
    PipeBroken(String),
    /// Transport failure talking to the broker.
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    /// The peer sent something that is not legal at this point.
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl From<crate::wire::ConnError> for ChannelError {
    fn from(e: crate::wire::ConnError) -> Self {
        use crate::wire::ConnError;
        match e {
            ConnError::Wire(w) => ChannelError::Protocol(w.to_string()),
            other => ChannelError::ConnectionLost(other.to_string()),
        }
    }
}
