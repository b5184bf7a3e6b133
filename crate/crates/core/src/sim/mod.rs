//! Simulation design, scenarios, Monte Carlo runner and summary tables.

pub mod dgp;
pub mod monte_carlo;
pub mod scenario;
pub mod table;

pub use dgp::{generate, oracle_bundle, true_psi, true_psi_numeric, DgpParams, SiteLaw, SiteSampling, TruePsi};
pub use monte_carlo::{run_monte_carlo, run_replicate, summarize, McOutcome, ReplicateRecord};
pub use scenario::{ScenarioSpec, BUILTIN_IDS};
pub use table::{emit_table, MetricsRow, MetricsTable, TableFormat};
