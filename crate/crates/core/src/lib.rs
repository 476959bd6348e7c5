//! Scale-free adaptive deadzone protocol for bounded-disturbance coherent
//! state synchronization of identical linear agents.
//!
//! - [`graph`]: weighted digraphs, Laplacians, Vicsek fractal and circulant generators
//! - [`linalg`]: Riccati solver, stabilizability and image tests
//! - [`protocol`]: coherence thresholds, gain adaptation and control law
//! - [`signals`]: bounded disturbance generators
//! - [`sim`]: fixed-step closed-loop simulation
//! - [`analysis`]: coherency, settling and gain convergence checks

// `!(x > 0.0)` style guards are used so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod graph;
pub mod linalg;
pub mod protocol;
pub mod signals;
pub mod sim;

pub use analysis::{
    check_delta_level, coherence_levels, gain_report, settling_time, RunSummary, SettlingReport,
};
pub use graph::{
    algebraic_connectivity, circulant, from_edge_list, has_directed_spanning_tree, laplacian,
    vicsek_fractal, LaplacianMatrix, WeightedDigraph,
};
pub use linalg::{
    image_containment, is_stabilizable, min_eigenvalue_sym, solve_care, solve_care_weighted,
    AgentModel, RiccatiSolution,
};
pub use protocol::{control, make_spec, rho_dot, zeta, CoherenceSpec, ProtocolParams};
pub use signals::DisturbanceSignal;
pub use sim::{
    rhs, simulate, sweep, AssumptionClause, NetworkState, SimConfig, SimError, SimOverride,
    Trajectory,
};
