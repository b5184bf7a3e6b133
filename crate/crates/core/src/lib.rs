//! Federated multiply robust estimation of relative causal measures.
//!
//! A target site (site 0) borrows information from source sites without
//! pooling rows: every cross-site quantity is computed from model parameters
//! and fixed-size aggregates exchanged through [`access::SiteAccess`].

pub mod access;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod federation;
pub mod measure;
pub mod nuisance;
pub mod pfws;
pub mod report;
pub mod seeds;
pub mod sim;
pub mod site_ops;

pub use data::{Individual, MultiSiteData, SiteDataset};
pub use error::{Error, Result};
pub use measure::CausalMeasure;
pub use report::{EstimateReport, Method};
