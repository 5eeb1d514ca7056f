//! Queue broker: owns bounded buffers and serves puts/gets over the wire.
//!
//! Queue operations ride `Data` frames. A put is a `Data` frame carrying the
//! item (the client's own seq numbering is informational); the broker
//! acknowledges with `Control(Ack)` once the item is buffered, deferring the
//! ack while the buffer is full — that deferral is the backpressure that
//! blocks producers. A get is a `Data` frame with seq [`GET_SENTINEL`] and an
//! empty payload, answered with a `Data` frame carrying the item and the
//! broker's delivery seq, or `Control(Shutdown)` when the queue is closed and
//! drained. Close is seq [`CLOSE_SENTINEL`]; it is idempotent and always
//! acknowledged. Requests on one connection are strictly serial, so a parked
//! operation simply holds its connection until it can be answered.

use std::collections::{HashMap, VecDeque};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread;

use super::ChannelError;
use crate::wire::{self, Control, FrameReceiver, FrameSender, Message};

/// Data-frame seq value that marks a get request.
pub const GET_SENTINEL: u64 = u64::MAX;
/// Data-frame seq value that marks a close request.
pub const CLOSE_SENTINEL: u64 = u64::MAX - 1;

pub const DEFAULT_QUEUE_CAPACITY: usize = 4096;

enum GetReply {
    Item(u64, Vec<u8>),
    Closed,
}

enum PutReply {
    Acked,
    Closed,
}

struct ParkedPut {
    item: Vec<u8>,
    wake: SyncSender<PutReply>,
}

struct ChannelState {
    capacity: usize,
    buf: VecDeque<Vec<u8>>,
    closed: bool,
    next_delivery_seq: u64,
    waiting_gets: VecDeque<SyncSender<GetReply>>,
    waiting_puts: VecDeque<ParkedPut>,
}

impl ChannelState {
    fn new(capacity: usize) -> Self {
        ChannelState {
            capacity,
            buf: VecDeque::new(),
            closed: false,
            next_delivery_seq: 0,
            waiting_gets: VecDeque::new(),
            waiting_puts: VecDeque::new(),
        }
    }

    /// Hands buffered items to parked getters and admits parked puts into
    /// freed slots. Call after any mutation.
    fn settle(&mut self) {
        loop {
            if !self.buf.is_empty() {
                if let Some(waiter) = self.waiting_gets.pop_front() {
                    let item = self.buf.pop_front().unwrap();
                    let seq = self.next_delivery_seq;
                    self.next_delivery_seq += 1;
                    let _ = waiter.send(GetReply::Item(seq, item));
                    continue;
                }
            }
            if self.buf.len() < self.capacity {
                if let Some(parked) = self.waiting_puts.pop_front() {
                    self.buf.push_back(parked.item);
                    let _ = parked.wake.send(PutReply::Acked);
                    continue;
                }
            }
            break;
        }
        if self.closed {
            for parked in self.waiting_puts.drain(..) {
                let _ = parked.wake.send(PutReply::Closed);
            }
            if self.buf.is_empty() {
                for waiter in self.waiting_gets.drain(..) {
                    let _ = waiter.send(GetReply::Closed);
                }
            }
        }
    }
}

struct BrokerState {
    channels: Mutex<HashMap<u32, ChannelState>>,
    next_channel: AtomicU32,
    stopped: AtomicBool,
    conns: Mutex<Vec<TcpStream>>,
}

/// Broker process half: accepts connections and serves queue operations.
pub struct QueueBroker {
    state: Arc<BrokerState>,
    addr: SocketAddr,
}

impl QueueBroker {
    /// Binds and starts serving. Use port 0 for an ephemeral port.
    pub fn bind(addr: &str) -> Result<QueueBroker, ChannelError> {
        let listener = TcpListener::bind(addr)
            .map_err(|e| ChannelError::ConnectionLost(format!("bind {addr}: {e}")))?;
        let local = listener.local_addr().expect("listener has a local addr");
        let state = Arc::new(BrokerState {
            channels: Mutex::new(HashMap::new()),
            next_channel: AtomicU32::new(1),
            stopped: AtomicBool::new(false),
            conns: Mutex::new(Vec::new()),
        });
        let accept_state = Arc::clone(&state);
        thread::Builder::new()
            .name("queue-broker-accept".into())
            .spawn(move || accept_loop(listener, accept_state))
            .expect("spawn broker accept thread");
        Ok(QueueBroker { state, addr: local })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Allocates a new queue and returns a connected handle to it.
    pub fn create_queue(&self) -> DistQueue {
        self.create_queue_with_capacity(DEFAULT_QUEUE_CAPACITY)
    }

    pub fn create_queue_with_capacity(&self, capacity: usize) -> DistQueue {
        let capacity = capacity.max(1);
        let id = self.state.next_channel.fetch_add(1, Ordering::Relaxed);
        self.state.channels.lock().unwrap().insert(id, ChannelState::new(capacity));
        DistQueue::new(self.addr, id, Some(capacity))
    }

    /// Broker-side buffer depth, for tests and monitoring.
    pub fn depth(&self, channel: u32) -> Option<usize> {
        self.state.channels.lock().unwrap().get(&channel).map(|c| c.buf.len())
    }

    /// Closes every queue and tears down connections.
    pub fn shutdown(&self) {
        if self.state.stopped.swap(true, Ordering::SeqCst) {
            return;
        }
        {
            let mut channels = self.state.channels.lock().unwrap();
            for chan in channels.values_mut() {
                chan.closed = true;
                chan.settle();
            }
        }
        // connect once to unblock the accept loop
        let _ = TcpStream::connect(self.addr);
        for conn in self.state.conns.lock().unwrap().drain(..) {
            let _ = conn.shutdown(std::net::Shutdown::Both);
        }
    }
}

impl Drop for QueueBroker {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, state: Arc<BrokerState>) {
    loop {
        let Ok((stream, _)) = listener.accept() else { break };
        if state.stopped.load(Ordering::SeqCst) {
            break;
        }
        if let Ok(clone) = stream.try_clone() {
            state.conns.lock().unwrap().push(clone);
        }
        let conn_state = Arc::clone(&state);
        let _ = thread::Builder::new()
            .name("queue-broker-conn".into())
            .spawn(move || {
                if let Ok((tx, rx)) = wire::split(stream) {
                    serve_conn(tx, rx, conn_state);
                }
            });
    }
}

fn serve_conn(tx: FrameSender, mut rx: FrameReceiver, state: Arc<BrokerState>) {
    loop {
        let msg = match rx.recv() {
            Ok(m) => m,
            Err(_) => return,
        };
        let reply = match msg {
            Message::Data { channel, seq: GET_SENTINEL, .. } => serve_get(&state, channel),
            Message::Data { channel, seq: CLOSE_SENTINEL, .. } => serve_close(&state, channel),
            Message::Data { channel, payload, .. } => serve_put(&state, channel, payload),
            Message::Control(Control::Shutdown) => return,
            _ => Message::Control(Control::Shutdown),
        };
        if tx.send(&reply).is_err() {
            return;
        }
    }
}

fn serve_put(state: &BrokerState, channel: u32, item: Vec<u8>) -> Message {
    let wake_rx;
    {
        let mut channels = state.channels.lock().unwrap();
        let Some(chan) = channels.get_mut(&channel) else {
            return Message::Control(Control::Shutdown);
        };
        if chan.closed {
            return Message::Control(Control::Shutdown);
        }
        if chan.buf.len() < chan.capacity {
            chan.buf.push_back(item);
            chan.settle();
            return Message::Control(Control::Ack);
        }
        let (wake, rx) = sync_channel(1);
        chan.waiting_puts.push_back(ParkedPut { item, wake });
        wake_rx = rx;
    }
    match wake_rx.recv() {
        Ok(PutReply::Acked) => Message::Control(Control::Ack),
        _ => Message::Control(Control::Shutdown),
    }
}

fn serve_get(state: &BrokerState, channel: u32) -> Message {
    let wake_rx;
    {
        let mut channels = state.channels.lock().unwrap();
        let Some(chan) = channels.get_mut(&channel) else {
            return Message::Control(Control::Shutdown);
        };
        if let Some(item) = chan.buf.pop_front() {
            let seq = chan.next_delivery_seq;
            chan.next_delivery_seq += 1;
            chan.settle();
            return Message::Data { channel, seq, payload: item };
        }
        if chan.closed {
            return Message::Control(Control::Shutdown);
        }
        let (wake, rx) = sync_channel(1);
        chan.waiting_gets.push_back(wake);
        wake_rx = rx;
    }
    match wake_rx.recv() {
        Ok(GetReply::Item(seq, item)) => Message::Data { channel, seq, payload: item },
        _ => Message::Control(Control::Shutdown),
    }
}

fn serve_close(state: &BrokerState, channel: u32) -> Message {
    let mut channels = state.channels.lock().unwrap();
    if let Some(chan) = channels.get_mut(&channel) {
        chan.closed = true;
        chan.settle();
    }
    Message::Control(Control::Ack)
}

/// Client handle to one broker-hosted queue. Cheap to clone; each clone
/// maintains its own connection, opened lazily on first use.
pub struct DistQueue {
    endpoint: SocketAddr,
    channel: u32,
    capacity: Option<usize>,
    conn: Mutex<Option<(FrameSender, FrameReceiver)>>,
    put_seq: AtomicU64,
}

impl DistQueue {
    fn new(endpoint: SocketAddr, channel: u32, capacity: Option<usize>) -> Self {
        DistQueue {
            endpoint,
            channel,
            capacity,
            conn: Mutex::new(None),
            put_seq: AtomicU64::new(0),
        }
    }

    /// Handle to an existing queue at a remote broker.
    pub fn connect(endpoint: SocketAddr, channel: u32) -> Self {
        DistQueue::new(endpoint, channel, None)
    }

    pub fn channel(&self) -> u32 {
        self.channel
    }

    pub fn endpoint(&self) -> SocketAddr {
        self.endpoint
    }

    /// Buffer bound, if this handle was minted by the broker that knows it.
    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    fn request(&self, req: &Message) -> Result<Message, ChannelError> {
        let mut guard = self.conn.lock().unwrap();
        if guard.is_none() {
            let stream = TcpStream::connect(self.endpoint).map_err(|e| {
                ChannelError::ConnectionLost(format!("connect {}: {e}", self.endpoint))
            })?;
            let pair = wire::split(stream)
                .map_err(|e| ChannelError::ConnectionLost(e.to_string()))?;
            *guard = Some(pair);
        }
        let (tx, rx) = guard.as_mut().unwrap();
        let out = tx.send(req).and_then(|_| rx.recv());
        match out {
            Ok(reply) => Ok(reply),
            Err(e) => {
                *guard = None;
                Err(e.into())
            }
        }
    }

    /// Appends one item. Blocks while the queue is at capacity; the item is
    /// buffered at the broker when this returns.
    pub fn put(&self, item: &[u8]) -> Result<(), ChannelError> {
        let seq = self.put_seq.fetch_add(1, Ordering::Relaxed);
        let req = Message::Data { channel: self.channel, seq, payload: item.to_vec() };
        match self.request(&req)? {
            Message::Control(Control::Ack) => Ok(()),
            Message::Control(Control::Shutdown) => Err(ChannelError::QueueClosed),
            other => Err(ChannelError::Protocol(format!("unexpected put reply: {other:?}"))),
        }
    }

    /// Removes and returns one item, blocking while the queue is empty.
    /// Once the queue is closed and drained, reports `QueueClosed`.
    pub fn get(&self) -> Result<Vec<u8>, ChannelError> {
        let req =
            Message::Data { channel: self.channel, seq: GET_SENTINEL, payload: Vec::new() };
        match self.request(&req)? {
            Message::Data { payload, .. } => Ok(payload),
            Message::Control(Control::Shutdown) => Err(ChannelError::QueueClosed),
            other => Err(ChannelError::Protocol(format!("unexpected get reply: {other:?}"))),
        }
    }

    /// Closes the queue for all holders. Idempotent. Already-buffered items
    /// remain gettable; new puts fail.
    pub fn close(&self) -> Result<(), ChannelError> {
        let req =
            Message::Data { channel: self.channel, seq: CLOSE_SENTINEL, payload: Vec::new() };
        match self.request(&req)? {
            Message::Control(Control::Ack) => Ok(()),
            Message::Control(Control::Shutdown) => Ok(()),
            other => Err(ChannelError::Protocol(format!("unexpected close reply: {other:?}"))),
        }
    }
}

impl Clone for DistQueue {
    fn clone(&self) -> Self {
        DistQueue::new(self.endpoint, self.channel, self.capacity)
    }
}

impl std::fmt::Debug for DistQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistQueue")
            .field("endpoint", &self.endpoint)
            .field("channel", &self.channel)
            .field("capacity", &self.capacity)
            .finish()
    }
}
