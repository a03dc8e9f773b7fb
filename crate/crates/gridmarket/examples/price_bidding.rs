//! Aligned price bidding: generators bid unit prices, the market schedules
//! dispatch from the bids, and bids converge to the local clearing prices.

use std::collections::BTreeMap;

use gridmarket::dynamics::{simulate, BidState, Mechanism, MechanismVariant, Scenario};
use gridmarket::network::{derive_matrices, parse_network};

fn main() {
    let net = parse_network(
        r#"{
        "buses": [
            {"id": "a", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 0.8, "c_bar": 0.1}},
            {"id": "b", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.6, "c_bar": 0.0}},
            {"id": "c", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.2, "c_bar": 0.05}}
        ],
        "lines": [
            {"from": "a", "to": "b", "susceptance": 1.0, "flow_min": -3.0, "flow_max": 3.0},
            {"from": "b", "to": "c", "susceptance": 1.5, "flow_min": -3.0, "flow_max": 3.0}
        ]
        }"#,
    )
    .unwrap();
    let mats = derive_matrices(&net).unwrap();
    let scenario = Scenario {
        demand_step: BTreeMap::from([("b".to_string(), 0.9)]),
        horizon: 150.0,
        dt: 0.01,
        mechanism: Mechanism::new(MechanismVariant::PriceAligned),
        initial_state: None,
    };
    let traj = simulate(&net, &mats, &scenario, None).unwrap();

    println!("bid-versus-price gap |alpha - pi| over time:");
    for &t in &[1.0, 10.0, 50.0, 150.0] {
        let k = ((t / scenario.dt).round() as usize).min(traj.states.len() - 1);
        let alpha = match &traj.states[k].bids {
            BidState::Price { alpha, .. } => alpha,
            _ => unreachable!(),
        };
        let gap = (alpha - &traj.prices[k]).abs().max();
        println!("  t = {t:6.1} s   gap = {gap:.2e}");
    }
    let end = traj.final_state();
    println!("\nfinal price bids: {:?}", end.alpha().unwrap().as_slice());
    println!(
        "final prices:     {:?}",
        traj.prices.last().unwrap().as_slice()
    );
}
