//! Pipes: direct framed connections between exactly two endpoints.
//!
//! Each direction numbers its `Data` frames 0, 1, 2, ... and the receiver
//! enforces that ordering, so a pipe either delivers exactly what was sent in
//! the order it was sent or surfaces `PipeBroken`. A deliberate close sends
//! `Control(Shutdown)`; the peer drains whatever was already in flight and
//! then sees `PipeClosed`. A connection that dies without the shutdown frame
//! is `PipeBroken`.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread;

use super::ChannelError;
use crate::wire::{self, ConnError, Control, FrameSender, Message};

/// Pipes carry a single stream per connection; the channel id is fixed.
const PIPE_CHANNEL: u32 = 0;

enum InboxItem {
    Item(Vec<u8>),
    Closed,
    Broken(String),
}

struct PipeShared {
    peer_gone: AtomicBool,
}

pub struct PipeListener {
    listener: TcpListener,
    addr: SocketAddr,
}

impl PipeListener {
    pub fn bind(addr: &str) -> Result<PipeListener, ChannelError> {
        let listener = TcpListener::bind(addr)
            .map_err(|e| ChannelError::ConnectionLost(format!("bind {addr}: {e}")))?;
        let addr = listener.local_addr().expect("listener has a local addr");
        Ok(PipeListener { listener, addr })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until one peer connects.
    pub fn accept(&self) -> Result<Pipe, ChannelError> {
        let (stream, _) = self
            .listener
            .accept()
            .map_err(|e| ChannelError::ConnectionLost(format!("accept: {e}")))?;
        Pipe::from_stream(stream)
    }
}

pub struct Pipe {
    sender: FrameSender,
    send_seq: u64,
    inbox: Receiver<InboxItem>,
    shared: Arc<PipeShared>,
    closed_local: bool,
    terminal: Option<ChannelError>,
}

impl Pipe {
    pub fn connect(addr: SocketAddr) -> Result<Pipe, ChannelError> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| ChannelError::ConnectionLost(format!("connect {addr}: {e}")))?;
        Pipe::from_stream(stream)
    }

    /// Connected pair over loopback, for tests and local plumbing.
    pub fn pair() -> Result<(Pipe, Pipe), ChannelError> {
        let listener = PipeListener::bind("127.0.0.1:0")?;
        let addr = listener.addr();
        let join = thread::spawn(move || listener.accept());
        let near = Pipe::connect(addr)?;
        let far = join.join().expect("accept thread panicked")?;
        Ok((near, far))
    }

    fn from_stream(stream: TcpStream) -> Result<Pipe, ChannelError> {
        let (tx, rx) = wire::split(stream).map_err(|e| ChannelError::ConnectionLost(e.to_string()))?;
        let shared = Arc::new(PipeShared { peer_gone: AtomicBool::new(false) });
        let (inbox_tx, inbox_rx) = std::sync::mpsc::channel();
        let reader_shared = Arc::clone(&shared);
        thread::Builder::new()
            .name("pipe-reader".into())
            .spawn(move || reader_loop(rx, inbox_tx, reader_shared))
            .expect("spawn pipe reader");
        Ok(Pipe {
            sender: tx,
            send_seq: 0,
            inbox: inbox_rx,
            shared,
            closed_local: false,
            terminal: None,
        })
    }

    /// Sends one message. Fails with `PipeBroken` once the peer is gone and
    /// `PipeClosed` after a local close.
    pub fn send(&mut self, payload: &[u8]) -> Result<(), ChannelError> {
        if self.closed_local {
            return Err(ChannelError::PipeClosed);
        }
        if self.shared.peer_gone.load(Ordering::SeqCst) {
            return Err(ChannelError::PipeBroken("peer endpoint is gone".into()));
        }
        let msg = Message::Data {
            channel: PIPE_CHANNEL,
            seq: self.send_seq,
            payload: payload.to_vec(),
        };
        self.sender
            .send(&msg)
            .map_err(|e| ChannelError::PipeBroken(e.to_string()))?;
        self.send_seq += 1;
        Ok(())
    }

    /// Receives the next message in send order. After a close (either side),
    /// in-flight messages drain first, then `PipeClosed`.
    pub fn recv(&mut self) -> Result<Vec<u8>, ChannelError> {
        match self.inbox.try_recv() {
            Ok(item) => self.note(item),
            Err(TryRecvError::Empty) => {
                if let Some(t) = &self.terminal {
                    return Err(t.clone());
                }
                if self.closed_local {
                    return Err(ChannelError::PipeClosed);
                }
                match self.inbox.recv() {
                    Ok(item) => self.note(item),
                    Err(_) => Err(self.reader_vanished()),
                }
            }
            Err(TryRecvError::Disconnected) => Err(self.reader_vanished()),
        }
    }

    fn note(&mut self, item: InboxItem) -> Result<Vec<u8>, ChannelError> {
        match item {
            InboxItem::Item(payload) => Ok(payload),
            InboxItem::Closed => {
                self.terminal = Some(ChannelError::PipeClosed);
                Err(ChannelError::PipeClosed)
            }
            InboxItem::Broken(detail) => {
                let err = ChannelError::PipeBroken(detail);
                self.terminal = Some(err.clone());
                Err(err)
            }
        }
    }

    fn reader_vanished(&self) -> ChannelError {
        self.terminal
            .clone()
            .unwrap_or_else(|| ChannelError::PipeBroken("reader vanished".into()))
    }

    /// Tells the peer this side is done. Idempotent. The peer can still
    /// drain messages sent before the close.
    pub fn close(&mut self) {
        if self.closed_local {
            return;
        }
        self.closed_local = true;
        let _ = self.sender.send(&Message::Control(Control::Shutdown));
    }
}

impl Drop for Pipe {
    fn drop(&mut self) {
        self.close();
        // unblock and reap our reader thread
        self.sender.shutdown();
    }
}

fn reader_loop(
    mut rx: wire::FrameReceiver,
    inbox: Sender<InboxItem>,
    shared: Arc<PipeShared>,
) {
    let mut expected_seq = 0u64;
    loop {
        match rx.recv() {
            Ok(Message::Data { seq, payload, .. }) => {
                if seq != expected_seq {
                    shared.peer_gone.store(true, Ordering::SeqCst);
                    let _ = inbox.send(InboxItem::Broken(format!(
                        "out-of-order seq {seq}, expected {expected_seq}"
                    )));
                    return;
                }
                expected_seq += 1;
                if inbox.send(InboxItem::Item(payload)).is_err() {
                    return;
                }
            }
            Ok(Message::Control(Control::Shutdown)) => {
                shared.peer_gone.store(true, Ordering::SeqCst);
                let _ = inbox.send(InboxItem::Closed);
                return;
            }
            Ok(_) => {
                shared.peer_gone.store(true, Ordering::SeqCst);
                let _ = inbox.send(InboxItem::Broken("unexpected message type".into()));
                return;
            }
            Err(e) => {
                shared.peer_gone.store(true, Ordering::SeqCst);
                let detail = match e {
                    ConnError::Closed => "peer disconnected without close".to_string(),
                    other => other.to_string(),
                };
                let _ = inbox.send(InboxItem::Broken(detail));
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_arrive_in_send_order() {
        let (mut a, mut b) = Pipe::pair().unwrap();
        a.send(b"1").unwrap();
        a.send(b"2").unwrap();
        a.send(b"3").unwrap();
        assert_eq!(b.recv().unwrap(), b"1");
        assert_eq!(b.recv().unwrap(), b"2");
        assert_eq!(b.recv().unwrap(), b"3");
    }

    #[test]
    fn directions_are_independent() {
        let (mut a, mut b) = Pipe::pair().unwrap();
        a.send(b"to-b").unwrap();
        b.send(b"to-a").unwrap();
        assert_eq!(a.recv().unwrap(), b"to-a");
        assert_eq!(b.recv().unwrap(), b"to-b");
    }

    #[test]
    fn close_drains_then_reports_closed() {
        let (mut a, mut b) = Pipe::pair().unwrap();
        a.send(b"x").unwrap();
        a.send(b"y").unwrap();
        a.close();
        assert_eq!(b.recv().unwrap(), b"x");
        assert_eq!(b.recv().unwrap(), b"y");
        assert!(matches!(b.recv(), Err(ChannelError::PipeClosed)));
        assert!(matches!(b.recv(), Err(ChannelError::PipeClosed)), "closed is sticky");
    }

    #[test]
    fn send_after_peer_close_is_broken() {
        let (mut a, mut b) = Pipe::pair().unwrap();
        a.close();
        // let the shutdown frame land
        assert!(matches!(b.recv(), Err(ChannelError::PipeClosed)));
        assert!(matches!(b.send(b"x"), Err(ChannelError::PipeBroken(_))));
    }

    #[test]
    fn send_after_local_close_is_closed() {
        let (mut a, _b) = Pipe::pair().unwrap();
        a.close();
        assert!(matches!(a.send(b"x"), Err(ChannelError::PipeClosed)));
    }

    #[test]
    fn abrupt_peer_death_is_broken() {
        let (mut a, b) = Pipe::pair().unwrap();
        b.sender.shutdown(); // kill the socket; the polite close frame can never arrive
        drop(b);
        match a.recv() {
            Err(ChannelError::PipeBroken(_)) => {}
            other => panic!("expected PipeBroken, got {other:?}"),
        }
    }

    #[test]
    fn ten_thousand_random_payloads_fifo() {
        use rand::{Rng, SeedableRng};
        let (mut a, mut b) = Pipe::pair().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let payloads: Vec<Vec<u8>> = (0..10_000)
            .map(|_| {
                let len = rng.random_range(0..64);
                (0..len).map(|_| rng.random()).collect()
            })
            .collect();
        let expected = payloads.clone();
        let writer = thread::spawn(move || {
            for p in &payloads {
                a.send(p).unwrap();
            }
            a.close();
        });
        for want in &expected {
            assert_eq!(&b.recv().unwrap(), want);
        }
        assert!(matches!(b.recv(), Err(ChannelError::PipeClosed)));
        writer.join().unwrap();
    }
}
