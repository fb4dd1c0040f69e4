//! Object store between serializers and the trainer: a bounded in-process
//! queue, or a Unix socket pair carrying the same frames.

use std::io::{Read, Write};
use std::os::unix::net::UnixStream;
use std::sync::{Arc, Mutex};

use crossbeam::channel::{bounded, Receiver, Sender};
use serde::Serialize;

use super::codec::frame_len;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    #[default]
    InProcess,
    Socket,
}

impl std::str::FromStr for Transport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_process" | "inprocess" | "queue" => Ok(Transport::InProcess),
            "socket" => Ok(Transport::Socket),
            _ => Err(Error::config(format!("unknown transport `{s}`"))),
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<object store socket>", e)
}

#[derive(Clone)]
pub enum StoreSender {
    Queue(Sender<Vec<u8>>),
    Socket(Arc<Mutex<UnixStream>>),
}

impl StoreSender {
    /// Blocks while the store is full.
    pub fn put(&self, frame: Vec<u8>) -> Result<()> {
        match self {
            StoreSender::Queue(tx) => tx.send(frame).map_err(|_| Error::data("object store closed")),
            StoreSender::Socket(s) => {
                let mut s = s.lock().map_err(|_| Error::data("object store writer poisoned"))?;
                s.write_all(&frame).map_err(io_err)
            }
        }
    }
}

pub enum StoreReceiver {
    Queue(Receiver<Vec<u8>>),
    Socket(UnixStream),
}

impl StoreReceiver {
    /// Next frame, or `None` once every sender is gone.
    pub fn get(&mut self) -> Result<Option<Vec<u8>>> {
        match self {
            StoreReceiver::Queue(rx) => Ok(rx.recv().ok()),
            StoreReceiver::Socket(s) => {
                let mut prefix = [0u8; 4];
                match s.read_exact(&mut prefix) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
                    Err(e) => return Err(io_err(e)),
                }
                let len = frame_len(&prefix).expect("prefix has 4 bytes");
                let mut frame = vec![0u8; len];
                frame[..4].copy_from_slice(&prefix);
                s.read_exact(&mut frame[4..]).map_err(io_err)?;
                Ok(Some(frame))
            }
        }
    }
}

/// A store holding at most `capacity` queued frames (the socket variant is
/// bounded by the kernel buffer instead).
pub fn object_store(transport: Transport, capacity: usize) -> Result<(StoreSender, StoreReceiver)> {
    match transport {
        Transport::InProcess => {
            let (tx, rx) = bounded(capacity.max(1));
            Ok((StoreSender::Queue(tx), StoreReceiver::Queue(rx)))
        }
        Transport::Socket => {
            let (a, b) = UnixStream::pair().map_err(io_err)?;
            Ok((StoreSender::Socket(Arc::new(Mutex::new(a))), StoreReceiver::Socket(b)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::codec::{deserialize, serialize, RolloutPayload};

    fn roundtrip(transport: Transport) {
        let (tx, mut rx) = object_store(transport, 2).unwrap();
        let frames: Vec<Vec<u8>> = (0..6)
            .map(|id| {
                serialize(&RolloutPayload {
                    id,
                    step: 0,
                    tokens: vec![id as u32; 3],
                    logprobs: vec![-1.0; 3],
                    blob: vec![id as u8; 300_000],
                    completed_us: 0,
                })
            })
            .collect();
        let expected = frames.clone();
        let writer = std::thread::spawn(move || {
            for f in frames {
                tx.put(f).unwrap();
            }
        });
        let mut got = Vec::new();
        while let Some(f) = rx.get().unwrap() {
            got.push(f);
        }
        writer.join().unwrap();
        assert_eq!(got, expected);
        assert_eq!(deserialize(&got[5]).unwrap().id, 5);
    }

    #[test]
    fn queue_transport_delivers_in_order() {
        roundtrip(Transport::InProcess);
    }

    #[test]
    fn socket_transport_delivers_in_order() {
        roundtrip(Transport::Socket);
    }
}
