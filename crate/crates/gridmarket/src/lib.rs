//! Simulation library for coupled grid-market-participant dynamics on
//! linearized power networks.
//!
//! The closed loop couples three blocks exchanging signals in continuous
//! time: swing dynamics on the network, market pricing/dispatch updates, and
//! rational bidding by generators. Four market mechanisms are implemented:
//!
//! * quantity bidding (dispatch follows quantity bids),
//! * aligned price bidding (bids respond to local dispatch),
//! * misaligned price bidding (bids respond to clearing prices; unstable),
//! * the regularized market that restores convergence under misaligned
//!   bidding for a regularization weight `rho` below `4 min_j c_j`.
//!
//! A planner QP oracle solves the underlying dispatch problem directly and
//! checks KKT conditions, serving as ground truth for every equilibrium
//! claim. Stability tooling linearizes the closed loop, computes eigenvalues,
//! assembles the dissipation certificate matrix, and evaluates the quadratic
//! Lyapunov function along trajectories.
//!
//! Entry points: [`network::load_network`], [`planner::solve_planner`],
//! [`dynamics::simulate`], [`stability::linearize`]. The `gridmarket` binary
//! and the `examples/` directory drive the same APIs end to end.

pub mod cli;
pub mod csv;
pub mod dynamics;
pub mod network;
pub mod planner;
pub mod stability;
pub mod svg;

pub use dynamics::{
    clearing_prices, project_plus, simulate, steady_state_detect, Mechanism, MechanismVariant,
    Scenario, SimulationStatus, SystemState, TimeConstants, Trajectory,
};
pub use network::{
    derive_matrices, flows_from_injection, load_network, parse_network, CostModel, DerivedMatrices,
    NetworkModel,
};
pub use planner::{kkt_residual, lagrangian_value, solve_edp, solve_planner, PlannerSolution};
pub use stability::{build_w_sigma, eigenvalues, linearize, lyapunov_value, rho_bound};
