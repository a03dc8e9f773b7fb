//! The misaligned price-bidding strategy reacts to clearing prices instead
//! of local bids. On a single bus with unit parameters the closed loop has
//! an unstable complex eigenvalue pair and oscillations grow until the run
//! is flagged as diverged.

use gridmarket::dynamics::{
    simulate, Mechanism, MechanismVariant, Scenario, SimulationStatus, SystemState,
};
use gridmarket::network::{derive_matrices, parse_network};
use gridmarket::stability::{eigenvalues, linearize};
use std::collections::BTreeMap;

fn main() {
    let net = parse_network(
        r#"{"buses": [{"id": "bus", "inertia": 1.0, "damping": 1.0, "demand": 1.0, "cost": {"c": 1.0, "c_bar": 0.0}}], "lines": []}"#,
    )
    .unwrap();
    let mats = derive_matrices(&net).unwrap();
    let mech = Mechanism::new(MechanismVariant::PriceMisalignedNaive);

    let lin = linearize(&net, &mats, &mech, &SystemState::zero(&mech.variant, 1, 0)).unwrap();
    println!("closed-loop state: {:?}", lin.labels);
    println!("system matrix:\n{:.0}", lin.a);
    println!("eigenvalues:");
    for ev in eigenvalues(&lin.a).unwrap() {
        println!("  {:+.4} {:+.4}i", ev.re, ev.im);
    }

    let scenario = Scenario {
        demand_step: BTreeMap::new(),
        horizon: 150.0,
        dt: 0.01,
        mechanism: mech,
        initial_state: None,
    };
    let traj = simulate(&net, &mats, &scenario, None).unwrap();
    match traj.status {
        SimulationStatus::Diverged { t } => {
            println!("\nsimulation diverged at t = {t:.1} s");
        }
        SimulationStatus::Completed => println!("\nsimulation unexpectedly completed"),
    }
    println!("peak |omega| early vs late:");
    for window in [(10.0, 14.0), (50.0, 54.0), (90.0, 94.0)] {
        let peak = traj
            .times
            .iter()
            .zip(traj.states.iter())
            .filter(|(t, _)| **t >= window.0 && **t <= window.1)
            .map(|(_, s)| s.omega.abs().max())
            .fold(0.0f64, f64::max);
        println!(
            "  t in [{:>4.0}, {:>4.0}] s: {peak:.3e}",
            window.0, window.1
        );
    }
}
