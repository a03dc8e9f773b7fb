//! Locational price formation under congestion: with a binding line limit
//! the clearing prices split across buses into the balance component,
//! the congestion component, and the (vanishing) frequency component.

use std::collections::BTreeMap;

use gridmarket::dynamics::{clearing_prices, simulate, Mechanism, MechanismVariant, Scenario};
use gridmarket::network::{derive_matrices, parse_network};
use gridmarket::planner::solve_planner;

fn main() {
    let net = parse_network(
        r#"{
        "buses": [
            {"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}},
            {"id": "b2", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}}
        ],
        "lines": [
            {"from": "b2", "to": "b1", "susceptance": 1.0, "flow_min": -10.0, "flow_max": 0.25}
        ]
        }"#,
    )
    .unwrap();
    let mats = derive_matrices(&net).unwrap();
    let scenario = Scenario {
        demand_step: BTreeMap::from([("b1".to_string(), 1.0)]),
        horizon: 200.0,
        dt: 0.01,
        mechanism: Mechanism::new(MechanismVariant::Quantity),
        initial_state: None,
    };

    let stepped = scenario.stepped_network(&net);
    let sol = solve_planner(&stepped, &mats, 1e-8).unwrap();
    println!("planner optimum with the line capped at 0.25 pu:");
    println!("  dispatch:        {:?}", sol.q_star.as_slice());
    println!("  prices:          {:?}", sol.pi_star.as_slice());
    println!("  congestion dual: {:?}", sol.eta_star.as_slice());

    let traj = simulate(&net, &mats, &scenario, Some(&sol)).unwrap();
    let end = traj.final_state();
    let pi = clearing_prices(end.lambda, &end.eta, &end.omega, &mats).unwrap();
    let h_eta = &mats.stacked_shift * &end.eta;
    println!("\nsteady state reached by the quantity-bidding loop:");
    println!(
        "  flow:            {:.6} (limit 0.25)",
        traj.flows.last().unwrap()[0]
    );
    for (j, bus) in net.buses().iter().enumerate() {
        println!(
            "  pi_{} = {:.5} = lambda {:.5} - congestion {:+.5} - omega {:+.1e}",
            bus.id, pi[j], end.lambda, h_eta[j], end.omega[j]
        );
    }
}
