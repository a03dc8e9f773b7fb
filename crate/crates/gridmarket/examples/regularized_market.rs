//! The regularized market accommodates misaligned price bidding: a virtual
//! dispatch state smooths the clearing, and for any regularization weight
//! below 4 min_j c_j the loop converges back to the planner optimum.

use std::collections::BTreeMap;

use gridmarket::dynamics::{
    map_to_planner_point, simulate, Mechanism, MechanismVariant, Scenario, SimulationStatus,
};
use gridmarket::network::{derive_matrices, parse_network};
use gridmarket::planner::{kkt_residual, solve_planner};
use gridmarket::stability::rho_bound_net;

fn main() {
    let net = parse_network(
        r#"{"buses": [{"id": "bus", "inertia": 1.0, "damping": 1.0, "demand": 1.0, "cost": {"c": 1.0, "c_bar": 0.0}}], "lines": []}"#,
    )
    .unwrap();
    let mats = derive_matrices(&net).unwrap();
    let oracle = solve_planner(&net, &mats, 1e-10).unwrap();
    println!("guaranteed range: rho in (0, {})", rho_bound_net(&net));
    println!("\n  rho    status      final |omega|   KKT residual");

    for rho in [0.1, 0.5, 1.0, 2.0, 3.9, 8.0] {
        let mech = Mechanism::new(MechanismVariant::PriceMisalignedRegularized { rho });
        for warning in mech.validate(&net).unwrap() {
            println!("  note: {warning}");
        }
        let scenario = Scenario {
            demand_step: BTreeMap::new(),
            horizon: 150.0,
            dt: 0.01,
            mechanism: mech,
            initial_state: None,
        };
        let traj = simulate(&net, &mats, &scenario, Some(&oracle)).unwrap();
        let end = traj.final_state();
        let status = match traj.status {
            SimulationStatus::Completed => "completed",
            SimulationStatus::Diverged { .. } => "diverged ",
        };
        let point = map_to_planner_point(end, &net, &mats, &scenario.mechanism).unwrap();
        let residual = kkt_residual(&net, &mats, &point).unwrap().overall();
        println!(
            "  {rho:<5}  {status}   {:12.3e}   {residual:.3e}",
            end.omega.abs().max()
        );
    }
}
