//! Site access: the only way estimators reach data. `LocalAccess` answers
//! requests in process; the federation module provides a message-passing
//! implementation that runs the same site handler behind a transport.

use std::borrow::Cow;

use rand::Rng;

use crate::data::{MultiSiteData, SiteDataset};
use crate::error::{Error, Result};
use crate::seeds::rng_for;
use crate::site_ops::{handle, Request, Response};

pub trait SiteAccess {
    /// Sites reachable through this access, ascending.
    fn site_ids(&self) -> Vec<usize>;

    /// One synchronous round: `req` is answered by each of `sites`, and the
    /// responses come back in the order of `sites`.
    fn round(&mut self, sites: &[usize], req: &Request) -> Result<Vec<Response>>;
}

/// With-replacement resample of one site's rows, deterministic in
/// `(seed, replicate, site)`; the site size is preserved.
pub fn resample_site(site: &SiteDataset, seed: u64, replicate: u64) -> SiteDataset {
    let mut rng = rng_for(seed, &[replicate, site.site_id() as u64]);
    let n = site.n();
    let rows = (0..n).map(|_| site.rows()[rng.gen_range(0..n)].clone()).collect();
    SiteDataset::new(site.site_id(), rows).expect("resample of a valid site is valid")
}

/// In-process access over a [`MultiSiteData`].
#[derive(Debug, Clone)]
pub struct LocalAccess<'a> {
    original: Cow<'a, MultiSiteData>,
    working: Option<MultiSiteData>,
}

impl<'a> LocalAccess<'a> {
    pub fn new(data: &'a MultiSiteData) -> Self {
        Self { original: Cow::Borrowed(data), working: None }
    }

    pub fn owned(data: MultiSiteData) -> LocalAccess<'static> {
        LocalAccess { original: Cow::Owned(data), working: None }
    }

    pub fn data(&self) -> &MultiSiteData {
        self.working.as_ref().unwrap_or(&self.original)
    }
}

impl SiteAccess for LocalAccess<'_> {
    fn site_ids(&self) -> Vec<usize> {
        self.original.site_ids()
    }

    fn round(&mut self, sites: &[usize], req: &Request) -> Result<Vec<Response>> {
        match req {
            Request::Resample { seed, replicate } => {
                let resampled = self
                    .original
                    .sites()
                    .map(|s| resample_site(s, *seed, *replicate))
                    .collect::<Vec<_>>();
                self.working = Some(MultiSiteData::new(resampled));
                Ok(sites.iter().map(|&k| Response::Ack { site: k }).collect())
            }
            Request::Restore => {
                self.working = None;
                Ok(sites.iter().map(|&k| Response::Ack { site: k }).collect())
            }
            _ => {
                let data = self.working.as_ref().unwrap_or(&self.original);
                sites
                    .iter()
                    .map(|&k| handle(data.site(k).ok_or(Error::UnknownSite(k))?, req))
                    .collect()
            }
        }
    }
}
