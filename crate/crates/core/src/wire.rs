//! Wire protocol: length-prefixed frames over stream sockets.
//!
//! Every frame is `len: u32` (big-endian, counting every byte after the
//! length field) followed by `version: u8`, `msg_type: u8`, and a
//! type-specific payload. All integers on the wire are big-endian. The
//! payload is capped at 16 MiB; `len` is therefore at least 2 (version and
//! type bytes) and at most `2 + 16 MiB`.
//!
//! Message types:
//!
//! | type | message   | payload layout                                      |
//! |------|-----------|------------------------------------------------------|
//! | 1    | Task      | id u64, function u32, attempt u32, args (rest)      |
//! | 2    | Result    | id u64, worker u32, tag u8 (0 ok / 1 err), body      |
//! | 3    | Data      | channel u32, seq u64, payload (rest)                 |
//! | 4    | Heartbeat | worker u32, uptime_ms u64                            |
//! | 5    | Control   | kind u8 (0 shutdown / 1 ack / 2 hello), kind fields  |
//! | 6    | Kv        | op u8, op-specific fields                            |
//!
//! Strings and variable-length byte fields inside Kv payloads are written as
//! `len: u32` followed by the raw bytes; strings must be UTF-8. The layouts
//! are frozen by golden-byte tests below and documented with hex examples in
//! `docs/PROTOCOL.md`. For example, `Control(Shutdown)` encodes as
//! `00 00 00 03 01 05 00`.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex};

use crate::registry::FunctionId;
use crate::task::{TaskId, TaskOutcome, TaskResult, TaskSpec, WorkerId};

pub const PROTOCOL_VERSION: u8 = 1;
/// Maximum payload bytes per frame (excludes the version and type bytes).
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;
/// Fixed bytes counted by `len` besides the payload: version + msg_type.
const HEADER_AFTER_LEN: usize = 2;

const TYPE_TASK: u8 = 1;
const TYPE_RESULT: u8 = 2;
const TYPE_DATA: u8 = 3;
const TYPE_HEARTBEAT: u8 = 4;
const TYPE_CONTROL: u8 = 5;
const TYPE_KV: u8 = 6;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("payload of {0} bytes exceeds the 16 MiB frame cap")]
    PayloadTooLarge(usize),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("frame length {0} is shorter than the fixed header")]
    BadLength(u32),
    #[error("insufficient data: need {needed} bytes, have {have}")]
    Incomplete { needed: usize, have: usize },
    #[error("stream ended mid-frame")]
    TruncatedStream,
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Task(TaskSpec),
    Result(TaskResult),
    Data { channel: u32, seq: u64, payload: Vec<u8> },
    Heartbeat { worker: WorkerId, uptime_ms: u64 },
    Control(Control),
    Kv(KvMessage),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Shutdown,
    Ack,
    Hello { worker: WorkerId },
}

const CONTROL_SHUTDOWN: u8 = 0;
const CONTROL_ACK: u8 = 1;
const CONTROL_HELLO: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum KvMessage {
    PutReq { key: String, value: Vec<u8> },
    PutResp { version: u64 },
    GetReq { key: String },
    GetResp { value: Vec<u8>, version: u64 },
    ErrResp { code: KvErrorCode, message: String },
    ProxyCreateReq { type_name: String, args: Vec<u8> },
    ProxyCreateResp { object_id: u64 },
    ProxyCallReq { object_id: u64, method: String, args: Vec<u8> },
    ProxyCallResp { result: Vec<u8> },
    ProxyReleaseReq { object_id: u64 },
    ProxyReleaseResp,
}

const KV_PUT_REQ: u8 = 0;
const KV_PUT_RESP: u8 = 1;
const KV_GET_REQ: u8 = 2;
const KV_GET_RESP: u8 = 3;
const KV_ERR_RESP: u8 = 4;
const KV_PROXY_CREATE_REQ: u8 = 5;
const KV_PROXY_CREATE_RESP: u8 = 6;
const KV_PROXY_CALL_REQ: u8 = 7;
const KV_PROXY_CALL_RESP: u8 = 8;
const KV_PROXY_RELEASE_REQ: u8 = 9;
const KV_PROXY_RELEASE_RESP: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvErrorCode {
    KeyNotFound = 0,
    UnknownType = 1,
    UnknownObject = 2,
    UnknownMethod = 3,
    MethodError = 4,
}

impl KvErrorCode {
    fn from_byte(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            0 => KvErrorCode::KeyNotFound,
            1 => KvErrorCode::UnknownType,
            2 => KvErrorCode::UnknownObject,
            3 => KvErrorCode::UnknownMethod,
            4 => KvErrorCode::MethodError,
            _ => return Err(WireError::Malformed("kv error code")),
        })
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_be_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_be_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    put_u32(buf, b.len() as u32);
    buf.extend_from_slice(b);
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_bytes(buf, s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::Malformed(what));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, WireError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn bytes(&mut self, what: &'static str) -> Result<Vec<u8>, WireError> {
        let len = self.u32(what)? as usize;
        Ok(self.take(len, what)?.to_vec())
    }

    fn string(&mut self, what: &'static str) -> Result<String, WireError> {
        String::from_utf8(self.bytes(what)?).map_err(|_| WireError::Malformed(what))
    }

    fn rest(&mut self) -> Vec<u8> {
        let out = self.buf[self.pos..].to_vec();
        self.pos = self.buf.len();
        out
    }

    fn finish(&self, what: &'static str) -> Result<(), WireError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(WireError::Malformed(what))
        }
    }
}

fn encode_payload(msg: &Message, buf: &mut Vec<u8>) {
    match msg {
        Message::Task(spec) => {
            put_u64(buf, spec.id.value());
            put_u32(buf, spec.function.value());
            put_u32(buf, spec.attempt);
            buf.extend_from_slice(&spec.args);
        }
        Message::Result(res) => {
            put_u64(buf, res.id.value());
            put_u32(buf, res.worker.value());
            match &res.outcome {
                TaskOutcome::Success(bytes) => {
                    buf.push(0);
                    buf.extend_from_slice(bytes);
                }
                TaskOutcome::TaskError(msg) => {
                    buf.push(1);
                    buf.extend_from_slice(msg.as_bytes());
                }
            }
        }
        Message::Data { channel, seq, payload } => {
            put_u32(buf, *channel);
            put_u64(buf, *seq);
            buf.extend_from_slice(payload);
        }
        Message::Heartbeat { worker, uptime_ms } => {
            put_u32(buf, worker.value());
            put_u64(buf, *uptime_ms);
        }
        Message::Control(ctl) => match ctl {
            Control::Shutdown => buf.push(CONTROL_SHUTDOWN),
            Control::Ack => buf.push(CONTROL_ACK),
            Control::Hello { worker } => {
                buf.push(CONTROL_HELLO);
                put_u32(buf, worker.value());
            }
        },
        Message::Kv(kv) => match kv {
            KvMessage::PutReq { key, value } => {
                buf.push(KV_PUT_REQ);
                put_str(buf, key);
                put_bytes(buf, value);
            }
            KvMessage::PutResp { version } => {
                buf.push(KV_PUT_RESP);
                put_u64(buf, *version);
            }
            KvMessage::GetReq { key } => {
                buf.push(KV_GET_REQ);
                put_str(buf, key);
            }
            KvMessage::GetResp { value, version } => {
                buf.push(KV_GET_RESP);
                put_bytes(buf, value);
                put_u64(buf, *version);
            }
            KvMessage::ErrResp { code, message } => {
                buf.push(KV_ERR_RESP);
                buf.push(*code as u8);
                put_str(buf, message);
            }
            KvMessage::ProxyCreateReq { type_name, args } => {
                buf.push(KV_PROXY_CREATE_REQ);
                put_str(buf, type_name);
                put_bytes(buf, args);
            }
            KvMessage::ProxyCreateResp { object_id } => {
                buf.push(KV_PROXY_CREATE_RESP);
                put_u64(buf, *object_id);
            }
            KvMessage::ProxyCallReq { object_id, method, args } => {
                buf.push(KV_PROXY_CALL_REQ);
                put_u64(buf, *object_id);
                put_str(buf, method);
                put_bytes(buf, args);
            }
            KvMessage::ProxyCallResp { result } => {
                buf.push(KV_PROXY_CALL_RESP);
                put_bytes(buf, result);
            }
            KvMessage::ProxyReleaseReq { object_id } => {
                buf.push(KV_PROXY_RELEASE_REQ);
                put_u64(buf, *object_id);
            }
            KvMessage::ProxyReleaseResp => buf.push(KV_PROXY_RELEASE_RESP),
        },
    }
}

fn msg_type(msg: &Message) -> u8 {
    match msg {
        Message::Task(_) => TYPE_TASK,
        Message::Result(_) => TYPE_RESULT,
        Message::Data { .. } => TYPE_DATA,
        Message::Heartbeat { .. } => TYPE_HEARTBEAT,
        Message::Control(_) => TYPE_CONTROL,
        Message::Kv(_) => TYPE_KV,
    }
}

/// Encodes one message as a complete frame, length prefix included.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, WireError> {
    let mut payload = Vec::new();
    encode_payload(msg, &mut payload);
    if payload.len() > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(payload.len()));
    }
    let mut frame = Vec::with_capacity(4 + HEADER_AFTER_LEN + payload.len());
    put_u32(&mut frame, (HEADER_AFTER_LEN + payload.len()) as u32);
    frame.push(PROTOCOL_VERSION);
    frame.push(msg_type(msg));
    frame.extend_from_slice(&payload);
    Ok(frame)
}

fn decode_payload(ty: u8, payload: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader::new(payload);
    let msg = match ty {
        TYPE_TASK => Message::Task(TaskSpec {
            id: TaskId::new(r.u64("task id")?),
            function: FunctionId::new(r.u32("task function")?),
            attempt: r.u32("task attempt")?,
            args: r.rest(),
        }),
        TYPE_RESULT => {
            let id = TaskId::new(r.u64("result id")?);
            let worker = WorkerId::new(r.u32("result worker")?);
            let outcome = match r.u8("result tag")? {
                0 => TaskOutcome::Success(r.rest()),
                1 => TaskOutcome::TaskError(
                    String::from_utf8(r.rest()).map_err(|_| WireError::Malformed("result error"))?,
                ),
                _ => return Err(WireError::Malformed("result tag")),
            };
            Message::Result(TaskResult { id, worker, outcome })
        }
        TYPE_DATA => Message::Data {
            channel: r.u32("data channel")?,
            seq: r.u64("data seq")?,
            payload: r.rest(),
        },
        TYPE_HEARTBEAT => Message::Heartbeat {
            worker: WorkerId::new(r.u32("heartbeat worker")?),
            uptime_ms: r.u64("heartbeat uptime")?,
        },
        TYPE_CONTROL => Message::Control(match r.u8("control kind")? {
            CONTROL_SHUTDOWN => Control::Shutdown,
            CONTROL_ACK => Control::Ack,
            CONTROL_HELLO => Control::Hello { worker: WorkerId::new(r.u32("hello worker")?) },
            _ => return Err(WireError::Malformed("control kind")),
        }),
        TYPE_KV => {
            let op = r.u8("kv op")?;
            Message::Kv(match op {
                KV_PUT_REQ => KvMessage::PutReq {
                    key: r.string("kv key")?,
                    value: r.bytes("kv value")?,
                },
                KV_PUT_RESP => KvMessage::PutResp { version: r.u64("kv version")? },
                KV_GET_REQ => KvMessage::GetReq { key: r.string("kv key")? },
                KV_GET_RESP => KvMessage::GetResp {
                    value: r.bytes("kv value")?,
                    version: r.u64("kv version")?,
                },
                KV_ERR_RESP => KvMessage::ErrResp {
                    code: KvErrorCode::from_byte(r.u8("kv error code")?)?,
                    message: r.string("kv error message")?,
                },
                KV_PROXY_CREATE_REQ => KvMessage::ProxyCreateReq {
                    type_name: r.string("proxy type")?,
                    args: r.bytes("proxy args")?,
                },
                KV_PROXY_CREATE_RESP => {
                    KvMessage::ProxyCreateResp { object_id: r.u64("proxy object id")? }
                }
                KV_PROXY_CALL_REQ => KvMessage::ProxyCallReq {
                    object_id: r.u64("proxy object id")?,
                    method: r.string("proxy method")?,
                    args: r.bytes("proxy args")?,
                },
                KV_PROXY_CALL_RESP => KvMessage::ProxyCallResp { result: r.bytes("proxy result")? },
                KV_PROXY_RELEASE_REQ => {
                    KvMessage::ProxyReleaseReq { object_id: r.u64("proxy object id")? }
                }
                KV_PROXY_RELEASE_RESP => KvMessage::ProxyReleaseResp,
                _ => return Err(WireError::Malformed("kv op")),
            })
        }
        other => return Err(WireError::UnknownMsgType(other)),
    };
    r.finish("trailing bytes")?;
    Ok(msg)
}

/// Decodes one frame from the front of `bytes`, returning the message and
/// the number of bytes consumed. `Incomplete` means more input is needed;
/// every other error is fatal for the stream.
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize), WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Incomplete { needed: 4, have: bytes.len() });
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if (len as usize) < HEADER_AFTER_LEN {
        return Err(WireError::BadLength(len));
    }
    if len as usize - HEADER_AFTER_LEN > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(len as usize - HEADER_AFTER_LEN));
    }
    let total = 4 + len as usize;
    if bytes.len() < total {
        return Err(WireError::Incomplete { needed: total, have: bytes.len() });
    }
    let version = bytes[4];
    if version != PROTOCOL_VERSION {
        return Err(WireError::BadVersion(version));
    }
    let msg = decode_payload(bytes[5], &bytes[6..total])?;
    Ok((msg, total))
}

/// Incremental frame decoder for data arriving in arbitrary chunks.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
    start: usize,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Decodes the next complete frame, or `Ok(None)` if more input is
    /// needed. Frame boundaries are independent of how input was chunked.
    pub fn try_next(&mut self) -> Result<Option<Message>, WireError> {
        match decode_frame(&self.buf[self.start..]) {
            Ok((msg, used)) => {
                self.start += used;
                if self.start == self.buf.len() {
                    self.buf.clear();
                    self.start = 0;
                } else if self.start > 64 * 1024 {
                    self.buf.drain(..self.start);
                    self.start = 0;
                }
                Ok(Some(msg))
            }
            Err(WireError::Incomplete { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.start
    }

    /// Call at end of input: leftover bytes mean the stream died mid-frame.
    pub fn finish(&self) -> Result<(), WireError> {
        if self.buffered() == 0 {
            Ok(())
        } else {
            Err(WireError::TruncatedStream)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConnError {
    /// Peer closed the connection at a frame boundary.
    #[error("connection closed")]
    Closed,
    /// Peer vanished mid-frame.
    #[error("connection truncated mid-frame")]
    Truncated,
    #[error("wire error: {0}")]
    Wire(#[from] WireError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Write half of a framed connection. Cloneable; writes are serialized by an
/// internal lock so multiple threads may send on one socket.
#[derive(Clone)]
pub struct FrameSender {
    stream: Arc<Mutex<TcpStream>>,
}

impl FrameSender {
    pub fn send(&self, msg: &Message) -> Result<(), ConnError> {
        let frame = encode_frame(msg)?;
        let mut stream = self.stream.lock().unwrap();
        stream.write_all(&frame)?;
        Ok(())
    }

    /// Sends several frames in one write to amortize syscall cost.
    pub fn send_all(&self, msgs: &[Message]) -> Result<(), ConnError> {
        let mut batch = Vec::new();
        for msg in msgs {
            batch.extend_from_slice(&encode_frame(msg)?);
        }
        let mut stream = self.stream.lock().unwrap();
        stream.write_all(&batch)?;
        Ok(())
    }

    /// Tears down both directions; the peer and any local reader observe EOF.
    pub fn shutdown(&self) {
        let stream = self.stream.lock().unwrap();
        let _ = stream.shutdown(std::net::Shutdown::Both);
    }
}

/// Read half of a framed connection.
pub struct FrameReceiver {
    stream: TcpStream,
    reader: FrameReader,
}

impl FrameReceiver {
    /// Bounds how long `recv` blocks; a timeout surfaces as an `Io` error of
    /// kind `WouldBlock`/`TimedOut` and the receiver stays usable.
    pub fn set_read_timeout(&self, dur: Option<std::time::Duration>) -> std::io::Result<()> {
        self.stream.set_read_timeout(dur)
    }

    /// Blocks until one full frame arrives. `Closed` on clean EOF at a frame
    /// boundary, `Truncated` if the stream dies mid-frame.
    pub fn recv(&mut self) -> Result<Message, ConnError> {
        let mut chunk = [0u8; 16 * 1024];
        loop {
            if let Some(msg) = self.reader.try_next()? {
                return Ok(msg);
            }
            let n = self.stream.read(&mut chunk)?;
            if n == 0 {
                return if self.reader.finish().is_ok() {
                    Err(ConnError::Closed)
                } else {
                    Err(ConnError::Truncated)
                };
            }
            self.reader.feed(&chunk[..n]);
        }
    }
}

/// Splits a stream into a cloneable sender and a single receiver.
pub fn split(stream: TcpStream) -> std::io::Result<(FrameSender, FrameReceiver)> {
    stream.set_nodelay(true)?;
    let write_half = stream.try_clone()?;
    Ok((
        FrameSender { stream: Arc::new(Mutex::new(write_half)) },
        FrameReceiver { stream, reader: FrameReader::new() },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_task() -> Message {
        Message::Task(TaskSpec {
            id: TaskId::new(1),
            function: FunctionId::new(2),
            attempt: 0,
            args: vec![0xAA, 0xBB],
        })
    }

    #[test]
    fn golden_control_shutdown() {
        let frame = encode_frame(&Message::Control(Control::Shutdown)).unwrap();
        assert_eq!(frame, [0x00, 0x00, 0x00, 0x03, 0x01, 0x05, 0x00]);
    }

    #[test]
    fn golden_control_ack() {
        let frame = encode_frame(&Message::Control(Control::Ack)).unwrap();
        assert_eq!(frame, [0x00, 0x00, 0x00, 0x03, 0x01, 0x05, 0x01]);
    }

    #[test]
    fn golden_control_hello() {
        let frame =
            encode_frame(&Message::Control(Control::Hello { worker: WorkerId::new(7) })).unwrap();
        assert_eq!(
            frame,
            [0x00, 0x00, 0x00, 0x07, 0x01, 0x05, 0x02, 0x00, 0x00, 0x00, 0x07]
        );
    }

    #[test]
    fn golden_task() {
        let frame = encode_frame(&sample_task()).unwrap();
        assert_eq!(
            frame,
            [
                0x00, 0x00, 0x00, 0x14, // len = 2 + 18
                0x01, 0x01, // version, type
                0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, // id
                0x00, 0x00, 0x00, 0x02, // function
                0x00, 0x00, 0x00, 0x00, // attempt
                0xAA, 0xBB, // args
            ]
        );
    }

    #[test]
    fn golden_result_success() {
        let frame = encode_frame(&Message::Result(TaskResult {
            id: TaskId::new(1),
            worker: WorkerId::new(3),
            outcome: TaskOutcome::Success(vec![0x2A]),
        }))
        .unwrap();
        assert_eq!(
            frame,
            [
                0x00, 0x00, 0x00, 0x10, // len = 2 + 14
                0x01, 0x02, // version, type
                0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, // id
                0x00, 0x00, 0x00, 0x03, // worker
                0x00, // success tag
                0x2A, // body
            ]
        );
    }

    #[test]
    fn golden_data() {
        let frame =
            encode_frame(&Message::Data { channel: 9, seq: 4, payload: b"hi".to_vec() }).unwrap();
        assert_eq!(
            frame,
            [
                0x00, 0x00, 0x00, 0x10, // len = 2 + 14
                0x01, 0x03, // version, type
                0x00, 0x00, 0x00, 0x09, // channel
                0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x04, // seq
                0x68, 0x69, // "hi"
            ]
        );
    }

    #[test]
    fn golden_heartbeat() {
        let frame =
            encode_frame(&Message::Heartbeat { worker: WorkerId::new(2), uptime_ms: 1000 })
                .unwrap();
        assert_eq!(
            frame,
            [
                0x00, 0x00, 0x00, 0x0E, // len = 2 + 12
                0x01, 0x04, // version, type
                0x00, 0x00, 0x00, 0x02, // worker
                0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x03, 0xE8, // uptime
            ]
        );
    }

    #[test]
    fn golden_kv_get_req() {
        let frame = encode_frame(&Message::Kv(KvMessage::GetReq { key: "pi".into() })).unwrap();
        assert_eq!(
            frame,
            [
                0x00, 0x00, 0x00, 0x09, // len = 2 + 7
                0x01, 0x06, // version, type
                0x02, // op = GetReq
                0x00, 0x00, 0x00, 0x02, 0x70, 0x69, // "pi"
            ]
        );
    }

    #[test]
    fn decode_rejects_bad_version() {
        let mut frame = encode_frame(&sample_task()).unwrap();
        frame[4] = 2;
        assert!(matches!(decode_frame(&frame), Err(WireError::BadVersion(2))));
    }

    #[test]
    fn decode_rejects_unknown_type() {
        let mut frame = encode_frame(&sample_task()).unwrap();
        frame[5] = 99;
        assert!(matches!(decode_frame(&frame), Err(WireError::UnknownMsgType(99))));
    }

    #[test]
    fn decode_rejects_undersized_length() {
        for len in [0u32, 1] {
            let mut frame = len.to_be_bytes().to_vec();
            frame.extend_from_slice(&[0x01, 0x05, 0x00]);
            assert!(matches!(decode_frame(&frame), Err(WireError::BadLength(l)) if l == len));
        }
    }

    #[test]
    fn decode_partial_buffer_reports_incomplete() {
        let frame = encode_frame(&sample_task()).unwrap();
        for cut in 0..frame.len() {
            match decode_frame(&frame[..cut]) {
                Err(WireError::Incomplete { .. }) => {}
                other => panic!("prefix of {cut} bytes decoded as {other:?}"),
            }
        }
    }

    #[test]
    fn max_payload_boundary() {
        let msg = Message::Data { channel: 0, seq: 0, payload: vec![0; MAX_PAYLOAD - 12] };
        let frame = encode_frame(&msg).unwrap();
        let (decoded, used) = decode_frame(&frame).unwrap();
        assert_eq!(used, frame.len());
        assert_eq!(decoded, msg);

        let over = Message::Data { channel: 0, seq: 0, payload: vec![0; MAX_PAYLOAD - 11] };
        assert!(matches!(encode_frame(&over), Err(WireError::PayloadTooLarge(_))));
    }

    #[test]
    fn decode_rejects_oversized_declared_length() {
        let mut frame = ((HEADER_AFTER_LEN + MAX_PAYLOAD + 1) as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(&[0x01, 0x03]);
        assert!(matches!(decode_frame(&frame), Err(WireError::PayloadTooLarge(_))));
    }

    #[test]
    fn reader_finish_after_partial_frame_is_truncated() {
        let frame = encode_frame(&sample_task()).unwrap();
        let mut reader = FrameReader::new();
        reader.feed(&frame[..frame.len() - 1]);
        assert!(reader.try_next().unwrap().is_none());
        assert!(matches!(reader.finish(), Err(WireError::TruncatedStream)));
    }

    #[test]
    fn reader_handles_split_and_coalesced_frames() {
        let msgs = vec![
            sample_task(),
            Message::Control(Control::Ack),
            Message::Data { channel: 1, seq: 0, payload: vec![7; 100] },
        ];
        let mut bytes = Vec::new();
        for m in &msgs {
            bytes.extend_from_slice(&encode_frame(m).unwrap());
        }
        // one byte at a time
        let mut reader = FrameReader::new();
        let mut got = Vec::new();
        for b in &bytes {
            reader.feed(std::slice::from_ref(b));
            while let Some(m) = reader.try_next().unwrap() {
                got.push(m);
            }
        }
        assert_eq!(got, msgs);
        reader.finish().unwrap();
        // all at once
        let mut reader = FrameReader::new();
        reader.feed(&bytes);
        let mut got = Vec::new();
        while let Some(m) = reader.try_next().unwrap() {
            got.push(m);
        }
        assert_eq!(got, msgs);
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        let bytes = proptest::collection::vec(any::<u8>(), 0..300);
        let short = "[a-z0-9_./-]{0,24}";
        prop_oneof![
            (any::<u64>(), any::<u32>(), 0u32..10, bytes.clone()).prop_map(
                |(id, f, attempt, args)| {
                    Message::Task(TaskSpec {
                        id: TaskId::new(id),
                        function: FunctionId::new(f),
                        attempt,
                        args,
                    })
                }
            ),
            (any::<u64>(), any::<u32>(), bytes.clone()).prop_map(|(id, w, body)| {
                Message::Result(TaskResult {
                    id: TaskId::new(id),
                    worker: WorkerId::new(w),
                    outcome: TaskOutcome::Success(body),
                })
            }),
            (any::<u64>(), any::<u32>(), short).prop_map(|(id, w, msg)| {
                Message::Result(TaskResult {
                    id: TaskId::new(id),
                    worker: WorkerId::new(w),
                    outcome: TaskOutcome::TaskError(msg),
                })
            }),
            (any::<u32>(), any::<u64>(), bytes.clone())
                .prop_map(|(channel, seq, payload)| Message::Data { channel, seq, payload }),
            (any::<u32>(), any::<u64>()).prop_map(|(w, uptime_ms)| Message::Heartbeat {
                worker: WorkerId::new(w),
                uptime_ms,
            }),
            Just(Message::Control(Control::Shutdown)),
            Just(Message::Control(Control::Ack)),
            any::<u32>()
                .prop_map(|w| Message::Control(Control::Hello { worker: WorkerId::new(w) })),
            (short, bytes.clone())
                .prop_map(|(key, value)| Message::Kv(KvMessage::PutReq { key, value })),
            any::<u64>().prop_map(|version| Message::Kv(KvMessage::PutResp { version })),
            short.prop_map(|key| Message::Kv(KvMessage::GetReq { key })),
            (bytes.clone(), any::<u64>())
                .prop_map(|(value, version)| Message::Kv(KvMessage::GetResp { value, version })),
            (0u8..5, short).prop_map(|(code, message)| {
                Message::Kv(KvMessage::ErrResp {
                    code: KvErrorCode::from_byte(code).unwrap(),
                    message,
                })
            }),
            (short, bytes.clone())
                .prop_map(|(t, args)| Message::Kv(KvMessage::ProxyCreateReq { type_name: t, args })),
            (any::<u64>(), short, bytes.clone()).prop_map(|(object_id, method, args)| {
                Message::Kv(KvMessage::ProxyCallReq { object_id, method, args })
            }),
            bytes.prop_map(|result| Message::Kv(KvMessage::ProxyCallResp { result })),
            any::<u64>().prop_map(|object_id| {
                Message::Kv(KvMessage::ProxyReleaseReq { object_id })
            }),
            Just(Message::Kv(KvMessage::ProxyReleaseResp)),
        ]
    }

    proptest! {
        #[test]
        fn roundtrip_any_message(msg in arb_message()) {
            let frame = encode_frame(&msg).unwrap();
            let (decoded, used) = decode_frame(&frame).unwrap();
            prop_assert_eq!(used, frame.len());
            prop_assert_eq!(decoded, msg);
        }

        #[test]
        fn no_proper_prefix_decodes(msg in arb_message()) {
            let frame = encode_frame(&msg).unwrap();
            for cut in 0..frame.len() {
                let incomplete =
                    matches!(decode_frame(&frame[..cut]), Err(WireError::Incomplete { .. }));
                prop_assert!(incomplete, "prefix of {} bytes decoded", cut);
            }
        }

        #[test]
        fn reader_is_chunking_independent(
            msgs in proptest::collection::vec(arb_message(), 1..20),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut bytes = Vec::new();
            for m in &msgs {
                bytes.extend_from_slice(&encode_frame(m).unwrap());
            }
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut reader = FrameReader::new();
            let mut got = Vec::new();
            let mut pos = 0;
            while pos < bytes.len() {
                let n = rng.random_range(1..=64.min(bytes.len() - pos));
                reader.feed(&bytes[pos..pos + n]);
                pos += n;
                while let Some(m) = reader.try_next().unwrap() {
                    got.push(m);
                }
            }
            reader.finish().unwrap();
            prop_assert_eq!(got, msgs);
        }
    }
}
