//! Gaussian belief propagation for distributed linear-Gaussian estimation,
//! with diagnostics for the convergence of the message information matrices.

pub mod analysis;
pub mod cli;
pub mod cone;
pub mod engine;
pub mod error;
pub mod network;
pub mod oracle;

pub use cone::{BlockDiagonal, ConeTolerance, SymMatrix};
pub use engine::{run, Belief, Init, MessageState, RunOutcome, ScheduleConfig};
pub use error::{Error, Result};
pub use network::{DirectedEdge, GaussianNetwork, NodeSpec, Rule, Violation};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
