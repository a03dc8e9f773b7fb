//! Export a simulation as CSV and render SVG charts of frequencies and
//! line flows (with dashed thermal limits), the same artifacts the
//! `gridmarket` binary produces.

use std::collections::BTreeMap;

use gridmarket::csv::{write_trajectory, TrajectoryTable};
use gridmarket::dynamics::{simulate, Mechanism, MechanismVariant, Scenario};
use gridmarket::network::{derive_matrices, parse_network};
use gridmarket::svg::render_chart;

fn main() {
    let net = parse_network(
        r#"{
        "buses": [
            {"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}},
            {"id": "b2", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}}
        ],
        "lines": [
            {"from": "b2", "to": "b1", "susceptance": 1.0, "flow_min": -0.25, "flow_max": 0.25}
        ]
        }"#,
    )
    .unwrap();
    let mats = derive_matrices(&net).unwrap();
    let scenario = Scenario {
        demand_step: BTreeMap::from([("b1".to_string(), 1.0)]),
        horizon: 60.0,
        dt: 0.01,
        mechanism: Mechanism::new(MechanismVariant::PriceAligned),
        initial_state: None,
    };
    let traj = simulate(&net, &mats, &scenario, None).unwrap();
    let csv = write_trajectory(&net, &mats, &scenario.mechanism.variant, &traj);

    let dir = std::env::temp_dir().join("gridmarket_trajectory_export");
    std::fs::create_dir_all(&dir).unwrap();
    let csv_path = dir.join("price_bidding.csv");
    std::fs::write(&csv_path, &csv).unwrap();

    let table = TrajectoryTable::parse(&csv).unwrap();
    for (name, columns) in [
        ("frequencies", "omega_*"),
        ("flows", "flow_*"),
        ("prices", "pi_*"),
    ] {
        let svg = render_chart(&table, columns, Some(&net)).unwrap();
        let path = dir.join(format!("{name}.svg"));
        std::fs::write(&path, svg).unwrap();
        println!("wrote {}", path.display());
    }
    println!("wrote {} ({} rows)", csv_path.display(), table.n_rows());
}
