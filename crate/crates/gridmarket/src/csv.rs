//! Trajectory CSV format: one row per integrator step, 12 significant
//! digits, fixed column order
//! `t, omega_*, p_*, q_*, alpha_*, lambda, eta_*, pi_*, flow_*, V`.
//!
//! The bid columns record the planner-coordinate view of each mechanism:
//! `p` is the participant's scheduled or desired output, `q` the dispatch
//! implemented on the network, `alpha` the (implicit) price bid. The `V`
//! column is empty unless the run was anchored at a reference equilibrium.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::DVector;

use crate::dynamics::{BidState, MechanismVariant, SystemState, Trajectory};
use crate::network::{DerivedMatrices, NetworkModel};
use crate::planner::PrimalDualPoint;

#[derive(Debug)]
pub enum CsvError {
    MalformedCsv(String),
    UnknownColumn(String),
}

impl fmt::Display for CsvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CsvError::MalformedCsv(m) => write!(f, "MalformedCsv: {m}"),
            CsvError::UnknownColumn(m) => write!(f, "UnknownColumn: {m}"),
        }
    }
}

impl std::error::Error for CsvError {}

fn fmt_value(x: f64) -> String {
    format!("{x:.11e}")
}

/// Scheduled/desired output, implemented dispatch, and price bid per bus for
/// one state, in planner coordinates.
fn bid_columns(
    state: &SystemState,
    prices: &DVector<f64>,
    net: &NetworkModel,
    mats: &DerivedMatrices,
    variant: &MechanismVariant,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let q = state.dispatch(mats, variant);
    match &state.bids {
        BidState::Quantity { p } => {
            let alpha = net.cost_gradient(p);
            (p.clone(), q, alpha)
        }
        BidState::Price { alpha, .. } => {
            let p = match variant {
                MechanismVariant::PriceAligned => net.cost_inverse_gradient(alpha),
                _ => net.cost_inverse_gradient(prices),
            };
            (p, q, alpha.clone())
        }
        BidState::Regularized { alpha, .. } => {
            let p = net.cost_inverse_gradient(prices);
            (p, q, alpha.clone())
        }
    }
}

pub fn header(net: &NetworkModel) -> String {
    let mut cols = vec!["t".to_string()];
    for bus in net.buses() {
        cols.push(format!("omega_{}", bus.id));
    }
    for bus in net.buses() {
        cols.push(format!("p_{}", bus.id));
    }
    for bus in net.buses() {
        cols.push(format!("q_{}", bus.id));
    }
    for bus in net.buses() {
        cols.push(format!("alpha_{}", bus.id));
    }
    cols.push("lambda".to_string());
    for k in 0..2 * net.n_lines() {
        cols.push(format!("eta_{k}"));
    }
    for bus in net.buses() {
        cols.push(format!("pi_{}", bus.id));
    }
    for line in net.lines() {
        cols.push(format!("flow_{}", line.label()));
    }
    cols.push("V".to_string());
    cols.join(",")
}

pub fn write_trajectory(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    variant: &MechanismVariant,
    traj: &Trajectory,
) -> String {
    let mut out = String::new();
    out.push_str(&header(net));
    out.push('\n');
    for (k, state) in traj.states.iter().enumerate() {
        let prices = &traj.prices[k];
        let flows = &traj.flows[k];
        let (p, q, alpha) = bid_columns(state, prices, net, mats, variant);
        let mut row: Vec<String> = Vec::new();
        row.push(fmt_value(traj.times[k]));
        row.extend(state.omega.iter().map(|&x| fmt_value(x)));
        row.extend(p.iter().map(|&x| fmt_value(x)));
        row.extend(q.iter().map(|&x| fmt_value(x)));
        row.extend(alpha.iter().map(|&x| fmt_value(x)));
        row.push(fmt_value(state.lambda));
        row.extend(state.eta.iter().map(|&x| fmt_value(x)));
        row.extend(prices.iter().map(|&x| fmt_value(x)));
        row.extend(flows.iter().map(|&x| fmt_value(x)));
        row.push(match &traj.lyapunov {
            Some(values) => fmt_value(values[k]),
            None => String::new(),
        });
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Parsed trajectory CSV. Empty cells become NaN.
#[derive(Debug, Clone)]
pub struct TrajectoryTable {
    pub columns: Vec<String>,
    /// Column-major values, one inner vector per column.
    pub values: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn parse(text: &str) -> Result<Self, CsvError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CsvError::MalformedCsv("empty file".into()))?;
        let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        if columns.first().map(String::as_str) != Some("t") {
            return Err(CsvError::MalformedCsv("first column must be t".into()));
        }
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != columns.len() {
                return Err(CsvError::MalformedCsv(format!(
                    "row {}: {} cells, expected {}",
                    lineno + 2,
                    cells.len(),
                    columns.len()
                )));
            }
            for (col, cell) in cells.iter().enumerate() {
                let v = if cell.trim().is_empty() {
                    f64::NAN
                } else {
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|e| CsvError::MalformedCsv(format!("row {}: {e}", lineno + 2)))?
                };
                values[col].push(v);
            }
        }
        if values[0].is_empty() {
            return Err(CsvError::MalformedCsv("no data rows".into()));
        }
        Ok(TrajectoryTable { columns, values })
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.values[i].as_slice())
    }

    pub fn n_rows(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Index of the sample closest to `time`.
    pub fn row_at_time(&self, time: f64) -> Result<usize, CsvError> {
        let t = self
            .column("t")
            .ok_or_else(|| CsvError::MalformedCsv("missing t column".into()))?;
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, &ti) in t.iter().enumerate() {
            let d = (ti - time).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        Ok(best)
    }

    /// Rebuild a full primal-dual candidate from one CSV row. Angle
    /// differences come from the recorded flows divided by susceptance; the
    /// frequency column doubles as the local imbalance price.
    pub fn planner_point(
        &self,
        net: &NetworkModel,
        row: usize,
    ) -> Result<PrimalDualPoint, CsvError> {
        let m = net.n_lines();
        let fetch = |name: &str| -> Result<f64, CsvError> {
            let col = self
                .column(name)
                .ok_or_else(|| CsvError::UnknownColumn(name.to_string()))?;
            Ok(col[row])
        };
        let fetch_vec = |prefix: &str, ids: Vec<String>| -> Result<DVector<f64>, CsvError> {
            let mut out = DVector::zeros(ids.len());
            for (i, id) in ids.iter().enumerate() {
                out[i] = fetch(&format!("{prefix}_{id}"))?;
            }
            Ok(out)
        };
        let bus_ids: Vec<String> = net.buses().iter().map(|b| b.id.clone()).collect();
        let omega = fetch_vec("omega", bus_ids.clone())?;
        let p = fetch_vec("p", bus_ids.clone())?;
        let q = fetch_vec("q", bus_ids.clone())?;
        let alpha = fetch_vec("alpha", bus_ids)?;
        let lambda = fetch("lambda")?;
        let mut eta = DVector::zeros(2 * m);
        for k in 0..2 * m {
            eta[k] = fetch(&format!("eta_{k}"))?;
        }
        let mut theta_tilde = DVector::zeros(m);
        for (e, line) in net.lines().iter().enumerate() {
            theta_tilde[e] = fetch(&format!("flow_{}", line.label()))? / line.susceptance;
        }
        Ok(PrimalDualPoint {
            p,
            q,
            nu: omega.clone(),
            omega,
            theta_tilde,
            alpha,
            lambda,
            eta,
        })
    }
}

/// Glob match with `*` wildcards, as used by `--columns` selectors.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    fn rec(p: &[u8], s: &[u8]) -> bool {
        match p.first() {
            None => s.is_empty(),
            Some(b'*') => (0..=s.len()).any(|i| rec(&p[1..], &s[i..])),
            Some(&c) => s.first() == Some(&c) && rec(&p[1..], &s[1..]),
        }
    }
    rec(pattern.as_bytes(), name.as_bytes())
}

/// Expand a comma-separated list of glob patterns against the table columns,
/// keeping table order. The `t` column never matches a wildcard.
pub fn select_columns(table: &TrajectoryTable, selector: &str) -> Result<Vec<usize>, CsvError> {
    let patterns: Vec<&str> = selector
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if patterns.is_empty() {
        return Err(CsvError::UnknownColumn("empty column selector".into()));
    }
    let mut picked = Vec::new();
    for (i, name) in table.columns.iter().enumerate() {
        if name == "t" {
            continue;
        }
        if patterns.iter().any(|p| glob_match(p, name)) && !picked.contains(&i) {
            picked.push(i);
        }
    }
    if picked.is_empty() {
        return Err(CsvError::UnknownColumn(format!(
            "no column matches {selector:?}"
        )));
    }
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, Mechanism, MechanismVariant, Scenario};
    use crate::network::{derive_matrices, parse_network};
    use std::collections::BTreeMap;

    fn quick_traj() -> (crate::network::NetworkModel, TrajectoryTable, String) {
        let net = parse_network(
            r#"{
            "buses": [
                {"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": 1.0, "cost": {"c": 1.0, "c_bar": 0.0}},
                {"id": "b2", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}}
            ],
            "lines": [
                {"from": "b2", "to": "b1", "susceptance": 1.0, "flow_min": -10.0, "flow_max": 10.0}
            ]
            }"#,
        )
        .unwrap();
        let mats = derive_matrices(&net).unwrap();
        let sc = Scenario {
            demand_step: BTreeMap::new(),
            horizon: 1.0,
            dt: 0.1,
            mechanism: Mechanism::new(MechanismVariant::Quantity),
            initial_state: None,
        };
        let traj = simulate(&net, &mats, &sc, None).unwrap();
        let text = write_trajectory(&net, &mats, &sc.mechanism.variant, &traj);
        let table = TrajectoryTable::parse(&text).unwrap();
        (net, table, text)
    }

    #[test]
    fn roundtrip_columns_and_rows() {
        let (net, table, text) = quick_traj();
        assert_eq!(table.n_rows(), 11);
        assert!(table.column("omega_b1").is_some());
        assert!(table.column("flow_b2_b1").is_some());
        assert!(table.column("V").is_some());
        assert!(text.starts_with("t,omega_b1,omega_b2,p_b1,p_b2,q_b1,q_b2,"));
        let point = table.planner_point(&net, table.n_rows() - 1).unwrap();
        assert_eq!(point.p.len(), 2);
        assert_eq!(point.eta.len(), 2);
    }

    #[test]
    fn glob_and_selection() {
        assert!(glob_match("omega_*", "omega_b1"));
        assert!(glob_match("*", "lambda"));
        assert!(!glob_match("omega_*", "p_b1"));
        assert!(glob_match("flow_b2_b1", "flow_b2_b1"));

        let (_, table, _) = quick_traj();
        let picked = select_columns(&table, "omega_*").unwrap();
        assert_eq!(picked.len(), 2);
        assert!(matches!(
            select_columns(&table, ""),
            Err(CsvError::UnknownColumn(_))
        ));
        assert!(matches!(
            select_columns(&table, "bogus_*"),
            Err(CsvError::UnknownColumn(_))
        ));
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(matches!(
            TrajectoryTable::parse("a,b\n1,2"),
            Err(CsvError::MalformedCsv(_))
        ));
        assert!(matches!(
            TrajectoryTable::parse("t,x\n1"),
            Err(CsvError::MalformedCsv(_))
        ));
        assert!(matches!(
            TrajectoryTable::parse("t,x\n1,zap"),
            Err(CsvError::MalformedCsv(_))
        ));
    }

    #[test]
    fn twelve_significant_digits() {
        let (.., text) = quick_traj();
        let second_line = text.lines().nth(1).unwrap();
        let first = second_line.split(',').next().unwrap();
        assert!(first.contains('e'), "scientific notation: {first}");
        let mantissa = first.split('e').next().unwrap();
        let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
        assert_eq!(digits, 12);
    }
}
