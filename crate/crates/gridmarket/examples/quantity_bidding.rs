//! Quantity bidding on a two-bus network: generators bid output levels, the
//! market prices imbalance and congestion, and the closed loop settles on
//! the planner optimum after a 1 pu demand step.

use std::collections::BTreeMap;

use gridmarket::dynamics::{simulate, Mechanism, MechanismVariant, Scenario};
use gridmarket::network::{derive_matrices, parse_network};
use gridmarket::planner::solve_planner;

fn main() {
    let net = parse_network(
        r#"{
        "buses": [
            {"id": "north", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}},
            {"id": "south", "inertia": 1.5, "damping": 1.2, "demand": 0.0, "cost": {"c": 2.0, "c_bar": 0.0}}
        ],
        "lines": [
            {"from": "south", "to": "north", "susceptance": 1.0, "flow_min": -2.0, "flow_max": 2.0}
        ]
        }"#,
    )
    .unwrap();
    let mats = derive_matrices(&net).unwrap();

    let scenario = Scenario {
        demand_step: BTreeMap::from([("north".to_string(), 1.0)]),
        horizon: 120.0,
        dt: 0.01,
        mechanism: Mechanism::new(MechanismVariant::Quantity),
        initial_state: None,
    };

    let stepped = scenario.stepped_network(&net);
    let oracle = solve_planner(&stepped, &mats, 1e-8).unwrap();
    let traj = simulate(&net, &mats, &scenario, Some(&oracle)).unwrap();

    println!("t [s]   omega_north   p_north   p_south   lambda");
    for &t in &[0.0, 1.0, 5.0, 20.0, 60.0, 120.0] {
        let k = (t / scenario.dt).round() as usize;
        let s = &traj.states[k.min(traj.states.len() - 1)];
        let p = match &s.bids {
            gridmarket::dynamics::BidState::Quantity { p } => p,
            _ => unreachable!(),
        };
        println!(
            "{t:6.1}  {:12.6}  {:8.5}  {:8.5}  {:7.5}",
            s.omega[0], p[0], p[1], s.lambda
        );
    }
    let end = traj.final_state();
    println!("\noracle dispatch: {:?}", oracle.q_star.as_slice());
    println!(
        "final bids:      {:?}",
        match &end.bids {
            gridmarket::dynamics::BidState::Quantity { p } => p.as_slice(),
            _ => unreachable!(),
        }
    );
    println!(
        "balance price:   {:.6} (oracle {:.6})",
        end.lambda, oracle.lambda_star
    );
}
