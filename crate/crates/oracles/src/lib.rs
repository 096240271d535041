//! Slow, straightforward reference implementations used by the test suites.
//!
//! Nothing in `relu-lab` depends on this crate; it sits strictly downstream so
//! production code cannot call an oracle. Each routine here is written the
//! obvious way (plain loops, textbook decompositions) and shares no code path
//! with the routine it checks.

pub mod finite_diff;
pub mod linalg;
pub mod network;

pub use finite_diff::{fd_gradient, Coord, FdOutcome, KINK_GUARD};
pub use linalg::{dense_svd, dense_sym_eig, ORACLE_MAX_DIM};
pub use network::{average_bundles, loop_backward, loop_forward, mc_gram_entry};
