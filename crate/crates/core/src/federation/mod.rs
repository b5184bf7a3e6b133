//! Site-isolated execution: nodes exchange only model parameters and
//! aggregates; the coordinator assembles the weighting loss and solves for
//! the federated weights.

pub mod audit;
pub mod gram;
pub mod lambda;
pub mod node;
pub mod solver;
pub mod weighting;
pub mod wire;

pub use audit::{audit_outbox, audit_transcript, AuditReport};
pub use gram::{GramSums, Moments};
pub use lambda::{default_lambda_grid, select_lambda, LambdaRule, LambdaSelection};
pub use node::{FederatedAccess, SiteNode};
pub use solver::{project_simplex, solve_weights, FederatedWeights, QuadraticLoss, SolverConfig};
pub use weighting::{estimate_fw, fit_federated, pairwise_estimate, FederatedFit, FederationConfig, PairFits, PairwiseEstimate};
pub use wire::{FileTransport, MemoryTransport, Message, Payload, Transport, SCHEMA_VERSION};
