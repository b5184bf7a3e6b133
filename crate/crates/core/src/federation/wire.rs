//! Wire format and transports. Every message is a JSON document
//! `{round, origin, kind, payload, schema_version}`; floats are written in
//! shortest round-trip form, so decoding reproduces every bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::site_ops::{Request, Response};

pub const SCHEMA_VERSION: u32 = 1;
pub const COORDINATOR: &str = "coordinator";

pub fn site_origin(k: usize) -> String {
    format!("site{k}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    /// Coordinator broadcast to `sites`.
    Request { sites: Vec<usize>, request: Request },
    /// A site's answer.
    Response { response: Response },
    /// A site could not answer; the message carries only the error text.
    Failure { site: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round: u64,
    pub origin: String,
    pub kind: String,
    pub payload: Payload,
    pub schema_version: u32,
}

impl Message {
    pub fn new(round: u64, origin: impl Into<String>, kind: impl Into<String>, payload: Payload) -> Self {
        Self { round, origin: origin.into(), kind: kind.into(), payload, schema_version: SCHEMA_VERSION }
    }

    /// `<round>_<origin>_<kind>.json`, with the round zero-padded so that
    /// lexical order is round order.
    pub fn file_name(&self) -> String {
        file_name(self.round, &self.origin, &self.kind)
    }

    pub fn encode(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn decode(text: &str) -> Result<Self> {
        let msg: Message = serde_json::from_str(text)
            .map_err(|e| Error::ProtocolViolation(format!("undecodable message: {e}")))?;
        if msg.schema_version != SCHEMA_VERSION {
            return Err(Error::ProtocolViolation(format!(
                "schema version {} (expected {SCHEMA_VERSION})",
                msg.schema_version
            )));
        }
        Ok(msg)
    }
}

pub fn file_name(round: u64, origin: &str, kind: &str) -> String {
    format!("{round:06}_{origin}_{kind}.json")
}

/// A synchronous channel addressed by `(round, origin, kind)`.
pub trait Transport: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;
    fn receive(&mut self, round: u64, origin: &str, kind: &str) -> Result<Message>;
    /// Every message sent so far, in send order.
    fn transcript(&self) -> Result<Vec<Message>>;
}

/// In-process queue. Messages are stored encoded, so a round trip through
/// this transport exercises the same serialization as the file transport.
#[derive(Debug, Default)]
pub struct MemoryTransport {
    mailbox: BTreeMap<String, String>,
    order: Vec<String>,
}

impl MemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for MemoryTransport {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let name = msg.file_name();
        if self.mailbox.insert(name.clone(), msg.encode()?).is_some() {
            return Err(Error::ProtocolViolation(format!("duplicate message {name}")));
        }
        self.order.push(name);
        Ok(())
    }

    fn receive(&mut self, round: u64, origin: &str, kind: &str) -> Result<Message> {
        let name = file_name(round, origin, kind);
        let text = self
            .mailbox
            .get(&name)
            .ok_or_else(|| Error::ProtocolViolation(format!("missing message {name}")))?;
        Message::decode(text)
    }

    fn transcript(&self) -> Result<Vec<Message>> {
        self.order.iter().map(|n| Message::decode(&self.mailbox[n])).collect()
    }
}

/// Directory of JSON files under `<root>/outbox/`.
#[derive(Debug)]
pub struct FileTransport {
    outbox: PathBuf,
    order: Vec<String>,
}

impl FileTransport {
    /// Creates `<root>/outbox`, which must not already contain messages.
    pub fn new(root: &Path) -> Result<Self> {
        let outbox = root.join("outbox");
        std::fs::create_dir_all(&outbox)?;
        if std::fs::read_dir(&outbox)?.next().is_some() {
            return Err(Error::Config(format!("{} is not empty", outbox.display())));
        }
        Ok(Self { outbox, order: Vec::new() })
    }

    pub fn outbox(&self) -> &Path {
        &self.outbox
    }
}

impl Transport for FileTransport {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let name = msg.file_name();
        let path = self.outbox.join(&name);
        if path.exists() {
            return Err(Error::ProtocolViolation(format!("duplicate message {name}")));
        }
        std::fs::write(&path, msg.encode()?)?;
        self.order.push(name);
        Ok(())
    }

    fn receive(&mut self, round: u64, origin: &str, kind: &str) -> Result<Message> {
        let name = file_name(round, origin, kind);
        let text = std::fs::read_to_string(self.outbox.join(&name))
            .map_err(|_| Error::ProtocolViolation(format!("missing message {name}")))?;
        Message::decode(&text)
    }

    fn transcript(&self) -> Result<Vec<Message>> {
        self.order
            .iter()
            .map(|n| Message::decode(&std::fs::read_to_string(self.outbox.join(n))?))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::site_ops::Aggregate;

    fn awkward_aggregate() -> Message {
        let mut a = Aggregate::new(2);
        for v in [0.1 + 0.2, 1.0 / 3.0, -2.5e-310, 1e300, std::f64::consts::PI, f64::MIN_POSITIVE] {
            a.push("v", v, 7);
        }
        Message::new(3, site_origin(2), "eif_sums_reply", Payload::Response { response: Response::Aggregate(a) })
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let msg = awkward_aggregate();
        let back = Message::decode(&msg.encode().unwrap()).unwrap();
        assert_eq!(msg, back);
        let (Payload::Response { response: Response::Aggregate(a) }, Payload::Response { response: Response::Aggregate(b) }) =
            (&msg.payload, &back.payload)
        else {
            panic!("wrong payload")
        };
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!(x.value.to_bits(), y.value.to_bits());
        }
    }

    #[test]
    fn file_names_sort_by_round() {
        assert_eq!(file_name(12, "site3", "aggregate"), "000012_site3_aggregate.json");
        assert!(file_name(9, "a", "b") < file_name(10, "a", "b"));
    }

    #[test]
    fn transports_deliver_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut transports: Vec<Box<dyn Transport>> =
            vec![Box::new(MemoryTransport::new()), Box::new(FileTransport::new(dir.path()).unwrap())];
        for t in transports.iter_mut() {
            let msg = awkward_aggregate();
            t.send(&msg).unwrap();
            assert!(t.send(&msg).is_err());
            assert_eq!(t.receive(3, "site2", "eif_sums_reply").unwrap(), msg);
            assert!(matches!(t.receive(4, "site2", "eif_sums_reply"), Err(Error::ProtocolViolation(_))));
            assert_eq!(t.transcript().unwrap(), vec![msg]);
        }
        assert!(dir.path().join("outbox/000003_site2_eif_sums_reply.json").exists());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut msg = awkward_aggregate();
        msg.schema_version = 99;
        assert!(matches!(Message::decode(&msg.encode().unwrap()), Err(Error::ProtocolViolation(_))));
    }
}
