//! Simulation and diagnostics for multi-company market models whose
//! relative capitalizations live on the unit simplex.

pub mod balance_diag;
pub mod growth_opt;
pub mod jump_markets;
pub mod market_model;
pub mod sde_engine;

/// Engine version recorded in run summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
