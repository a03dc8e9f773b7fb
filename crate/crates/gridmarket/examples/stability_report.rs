//! Eigenvalue analysis of all four mechanisms at the planner equilibrium,
//! plus the dissipation certificate for the regularized market.

use gridmarket::dynamics::{Mechanism, MechanismVariant};
use gridmarket::network::{derive_matrices, parse_network};
use gridmarket::stability::{analyze, build_w_sigma, rho_bound_net};

fn main() {
    let net = parse_network(
        r#"{
        "buses": [
            {"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": 0.5, "cost": {"c": 1.0, "c_bar": 0.0}},
            {"id": "b2", "inertia": 1.0, "damping": 1.0, "demand": 0.2, "cost": {"c": 2.0, "c_bar": 0.0}}
        ],
        "lines": [
            {"from": "b1", "to": "b2", "susceptance": 1.0, "flow_min": -2.0, "flow_max": 2.0}
        ]
        }"#,
    )
    .unwrap();
    let mats = derive_matrices(&net).unwrap();
    let bound = rho_bound_net(&net);
    println!("regularization bound 4 min c = {bound}");

    for mech in [
        Mechanism::new(MechanismVariant::Quantity),
        Mechanism::new(MechanismVariant::PriceAligned),
        Mechanism::new(MechanismVariant::PriceMisalignedNaive),
        Mechanism::new(MechanismVariant::PriceMisalignedRegularized { rho: 0.9 * bound }),
    ] {
        let report = analyze(&net, &mats, &mech, 1e-8).unwrap();
        println!("\nmechanism: {}", report.mechanism);
        println!("  verdict: {:?}", report.verdict);
        for ev in &report.eigenvalues {
            let tag = if ev.structural { "  (structural)" } else { "" };
            println!("  {:+.4} {:+.4}i{tag}", ev.re, ev.im);
        }
        if let Some(min_eig) = report.w_sigma_min_eigenvalue {
            println!("  certificate min eigenvalue: {min_eig:.3e}");
        }
    }

    let w = build_w_sigma(&net, &mats, 0.5 * bound).unwrap();
    println!(
        "\ncertificate matrix at rho = {}: {}x{}, symmetric, min eigenvalue {:.3e}",
        w.rho,
        w.matrix.nrows(),
        w.matrix.ncols(),
        w.min_eigenvalue()
    );
}
