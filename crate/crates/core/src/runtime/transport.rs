//! Frame transports: in-process channels and TCP streams.
//!
//! Both carry the same encoded frames, so the in-process cluster exercises
//! the exact byte format used over sockets.

use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, Sender};

use super::wire::{read_frame, WireMessage};
use crate::error::{Error, Result};

pub trait FrameSink: Send {
    fn send(&mut self, msg: &WireMessage) -> Result<()>;
}

pub trait FrameSource: Send {
    /// `Ok(None)` once the peer has gone away.
    fn recv(&mut self) -> Result<Option<WireMessage>>;
}

/// One end of a bidirectional connection.
pub struct Link {
    pub sink: Box<dyn FrameSink>,
    pub source: Box<dyn FrameSource>,
}

impl std::fmt::Debug for Link {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Link")
    }
}

struct ChannelSink(Sender<Vec<u8>>);

impl FrameSink for ChannelSink {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.0
            .send(msg.to_frame())
            .map_err(|_| Error::Io(std::io::Error::new(std::io::ErrorKind::BrokenPipe, "peer dropped")))
    }
}

struct ChannelSource(Receiver<Vec<u8>>);

impl FrameSource for ChannelSource {
    fn recv(&mut self) -> Result<Option<WireMessage>> {
        match self.0.recv() {
            Ok(frame) => WireMessage::from_frame(&frame).map(|(m, _)| Some(m)),
            Err(_) => Ok(None),
        }
    }
}

/// Two connected in-process endpoints.
pub fn in_process_pair() -> (Link, Link) {
    let (a_tx, a_rx) = mpsc::channel();
    let (b_tx, b_rx) = mpsc::channel();
    (
        Link { sink: Box::new(ChannelSink(a_tx)), source: Box::new(ChannelSource(b_rx)) },
        Link { sink: Box::new(ChannelSink(b_tx)), source: Box::new(ChannelSource(a_rx)) },
    )
}

struct TcpSink(BufWriter<TcpStream>);

impl FrameSink for TcpSink {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.0.write_all(&msg.to_frame())?;
        self.0.flush()?;
        Ok(())
    }
}

struct TcpSource(BufReader<TcpStream>);

impl FrameSource for TcpSource {
    fn recv(&mut self) -> Result<Option<WireMessage>> {
        match read_frame(&mut self.0) {
            Err(Error::Io(e)) if is_disconnect(&e) => Ok(None),
            other => other,
        }
    }
}

fn is_disconnect(e: &std::io::Error) -> bool {
    use std::io::ErrorKind::*;
    matches!(e.kind(), ConnectionReset | ConnectionAborted | BrokenPipe | UnexpectedEof)
}

pub fn tcp_link(stream: TcpStream) -> Result<Link> {
    stream.set_nodelay(true)?;
    let read_half = stream.try_clone()?;
    Ok(Link {
        sink: Box::new(TcpSink(BufWriter::new(stream))),
        source: Box::new(TcpSource(BufReader::new(read_half))),
    })
}

pub fn connect(addr: impl ToSocketAddrs) -> Result<Link> {
    let stream = TcpStream::connect(addr).map_err(|e| Error::Environment(format!("connect failed: {e}")))?;
    tcp_link(stream)
}

pub fn bind(addr: impl ToSocketAddrs) -> Result<TcpListener> {
    TcpListener::bind(addr).map_err(|e| Error::Environment(format!("cannot bind listener: {e}")))
}

/// Accepts exactly `n` connections.
pub fn accept(listener: &TcpListener, n: usize) -> Result<Vec<Link>> {
    (0..n)
        .map(|_| {
            let (stream, peer) = listener.accept()?;
            log::debug!("accepted worker connection from {peer}");
            tcp_link(stream)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_pair_carries_frames() {
        let (mut a, mut b) = in_process_pair();
        a.sink.send(&WireMessage::Cancel { iter: 4 }).unwrap();
        assert_eq!(b.source.recv().unwrap(), Some(WireMessage::Cancel { iter: 4 }));
        drop(a);
        assert_eq!(b.source.recv().unwrap(), None);
        assert!(b.sink.send(&WireMessage::Shutdown).is_err());
    }

    #[test]
    fn tcp_loopback_round_trip() {
        let listener = bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let client = std::thread::spawn(move || {
            let mut link = connect(addr).unwrap();
            link.sink.send(&WireMessage::Register { worker_id: 9 }).unwrap();
            link.source.recv().unwrap()
        });
        let mut links = accept(&listener, 1).unwrap();
        assert_eq!(links[0].source.recv().unwrap(), Some(WireMessage::Register { worker_id: 9 }));
        links[0].sink.send(&WireMessage::Shutdown).unwrap();
        assert_eq!(client.join().unwrap(), Some(WireMessage::Shutdown));
    }
}
