//! Site nodes and the message-passing implementation of [`SiteAccess`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::wire::{site_origin, Message, Payload, Transport, COORDINATOR};
use crate::access::{resample_site, SiteAccess};
use crate::data::{MultiSiteData, SiteDataset};
use crate::error::{Error, Result};
use crate::site_ops::{handle, Request, Response};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Received,
    Sent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub round: u64,
    pub direction: Direction,
    pub kind: String,
}

/// One site: its rows never leave this struct; it answers requests with
/// parameters and aggregates only.
#[derive(Debug, Clone)]
pub struct SiteNode {
    data: SiteDataset,
    working: Option<SiteDataset>,
    log: Vec<LogEntry>,
}

impl SiteNode {
    pub fn new(data: SiteDataset) -> Self {
        Self { data, working: None, log: Vec::new() }
    }

    pub fn site_id(&self) -> usize {
        self.data.site_id()
    }

    /// Append-only record of the messages this node handled.
    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    fn answer(&mut self, request: &Request) -> Result<Response> {
        let k = self.site_id();
        match request {
            Request::Resample { seed, replicate } => {
                self.working = Some(resample_site(&self.data, *seed, *replicate));
                Ok(Response::Ack { site: k })
            }
            Request::Restore => {
                self.working = None;
                Ok(Response::Ack { site: k })
            }
            other => handle(self.working.as_ref().unwrap_or(&self.data), other),
        }
    }
}

pub fn reply_kind(request_kind: &str) -> String {
    format!("{request_kind}_reply")
}

/// Coordinator-side access that routes every round through a transport.
pub struct FederatedAccess<T: Transport> {
    nodes: BTreeMap<usize, SiteNode>,
    transport: T,
    round: u64,
}

impl<T: Transport> FederatedAccess<T> {
    pub fn new(data: &MultiSiteData, transport: T) -> Self {
        let nodes = data.sites().map(|s| (s.site_id(), SiteNode::new(s.clone()))).collect();
        Self { nodes, transport, round: 0 }
    }

    pub fn from_nodes(nodes: Vec<SiteNode>, transport: T) -> Self {
        Self { nodes: nodes.into_iter().map(|n| (n.site_id(), n)).collect(), transport, round: 0 }
    }

    pub fn rounds(&self) -> u64 {
        self.round
    }

    pub fn node(&self, k: usize) -> Option<&SiteNode> {
        self.nodes.get(&k)
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transcript(&self) -> Result<Vec<Message>> {
        self.transport.transcript()
    }
}

impl<T: Transport> SiteAccess for FederatedAccess<T> {
    fn site_ids(&self) -> Vec<usize> {
        self.nodes.keys().copied().collect()
    }

    fn round(&mut self, sites: &[usize], req: &Request) -> Result<Vec<Response>> {
        for &k in sites {
            if !self.nodes.contains_key(&k) {
                return Err(Error::ProtocolViolation(format!("site {k} is not reachable")));
            }
        }
        self.round += 1;
        let round = self.round;
        let kind = req.kind();
        self.transport.send(&Message::new(
            round,
            COORDINATOR,
            kind,
            Payload::Request { sites: sites.to_vec(), request: req.clone() },
        ))?;

        // Each addressed node reads the broadcast; nodes then work concurrently.
        let delivered = self.transport.receive(round, COORDINATOR, kind)?;
        let Payload::Request { sites: addressed, request } = delivered.payload else {
            return Err(Error::ProtocolViolation("coordinator message without a request".into()));
        };
        let mut active: Vec<&mut SiteNode> =
            self.nodes.iter_mut().filter(|(k, _)| addressed.contains(k)).map(|(_, n)| n).collect();
        let answers: Vec<(usize, Result<Response>)> = active
            .par_iter_mut()
            .map(|node| {
                node.log.push(LogEntry { round, direction: Direction::Received, kind: kind.to_string() });
                (node.site_id(), node.answer(&request))
            })
            .collect();

        let reply = reply_kind(kind);
        let mut first_error = None;
        for (k, answer) in answers {
            let payload = match &answer {
                Ok(r) => Payload::Response { response: r.clone() },
                Err(e) => Payload::Failure { site: k, message: e.to_string() },
            };
            self.transport.send(&Message::new(round, site_origin(k), reply.clone(), payload))?;
            self.nodes.get_mut(&k).expect("addressed node").log.push(LogEntry {
                round,
                direction: Direction::Sent,
                kind: reply.clone(),
            });
            if let Err(e) = answer {
                first_error.get_or_insert(e);
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }

        sites
            .iter()
            .map(|&k| match self.transport.receive(round, &site_origin(k), &reply)?.payload {
                Payload::Response { response } => Ok(response),
                _ => Err(Error::ProtocolViolation(format!("site {k} sent no response in round {round}"))),
            })
            .collect()
    }
}
