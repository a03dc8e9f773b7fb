//! Power network model: buses, oriented lines, generator costs, and the
//! constant matrices derived from the graph (incidence, weighted Laplacian,
//! pseudoinverse, injection shift factors, stacked limits).
//!
//! All quantities are deviations from nominal operating values; no absolute
//! operating point is modeled. Bus and line vector indices follow file order,
//! so trajectories and solutions are reproducible bit-for-bit.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Relative eigenvalue cutoff for the Laplacian pseudoinverse.
pub const PINV_EIGENVALUE_CUTOFF: f64 = 1e-9;

/// Injections handed to [`flows_from_injection`] must sum to zero within this.
pub const INJECTION_BALANCE_TOL: f64 = 1e-9;

#[derive(Debug)]
pub enum NetworkError {
    /// File missing or not valid JSON for the network/scenario schema.
    Parse(String),
    /// Structural or sign constraint violated.
    Validation(String),
    /// Derived matrices inconsistent (e.g. Laplacian with more than one
    /// near-zero eigenvalue, which signals a disconnected graph).
    Numerical(String),
    /// Injection vector does not sum to zero; line flows are undefined.
    UnbalancedInjection(f64),
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkError::Parse(m) => write!(f, "ParseError: {m}"),
            NetworkError::Validation(m) => write!(f, "ValidationError: {m}"),
            NetworkError::Numerical(m) => write!(f, "NumericalError: {m}"),
            NetworkError::UnbalancedInjection(s) => {
                write!(f, "UnbalancedInjection: injection sums to {s:e}")
            }
        }
    }
}

impl std::error::Error for NetworkError {}

/// Strictly convex, twice differentiable generation cost with callable
/// gradient and inverse gradient.
pub struct GenericCost {
    pub value: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub gradient: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub inverse_gradient: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for GenericCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("GenericCost {{ .. }}")
    }
}

/// Per-generator cost on the deviation of generation.
///
/// The quadratic form is `c/2 q^2 + c_bar q` with `c > 0`. Network files only
/// carry quadratic costs; generic convex costs are built programmatically.
#[derive(Debug, Clone)]
pub enum CostModel {
    Quadratic { c: f64, c_bar: f64 },
    Generic(Arc<GenericCost>),
}

impl CostModel {
    pub fn quadratic(c: f64, c_bar: f64) -> Self {
        CostModel::Quadratic { c, c_bar }
    }

    /// Generic convex cost from value/gradient/inverse-gradient callables.
    pub fn generic(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(f64) -> f64 + Send + Sync + 'static,
        inverse_gradient: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CostModel::Generic(Arc::new(GenericCost {
            value: Box::new(value),
            gradient: Box::new(gradient),
            inverse_gradient: Box::new(inverse_gradient),
        }))
    }

    pub fn value(&self, q: f64) -> f64 {
        match self {
            CostModel::Quadratic { c, c_bar } => 0.5 * c * q * q + c_bar * q,
            CostModel::Generic(g) => (g.value)(q),
        }
    }

    /// Marginal cost `dJ/dq`, strictly increasing.
    pub fn gradient(&self, q: f64) -> f64 {
        match self {
            CostModel::Quadratic { c, c_bar } => c * q + c_bar,
            CostModel::Generic(g) => (g.gradient)(q),
        }
    }

    /// Output level whose marginal cost equals `price`.
    pub fn inverse_gradient(&self, price: f64) -> f64 {
        match self {
            CostModel::Quadratic { c, c_bar } => (price - c_bar) / c,
            CostModel::Generic(g) => (g.inverse_gradient)(price),
        }
    }

    pub fn quadratic_coefficients(&self) -> Option<(f64, f64)> {
        match self {
            CostModel::Quadratic { c, c_bar } => Some((*c, *c_bar)),
            CostModel::Generic(_) => None,
        }
    }

    fn validate(&self, bus: &str) -> Result<(), NetworkError> {
        if let CostModel::Quadratic { c, c_bar } = self {
            if !(c.is_finite() && *c > 0.0) {
                return Err(NetworkError::Validation(format!(
                    "bus {bus}: quadratic cost coefficient c must be positive, got {c}"
                )));
            }
            if !c_bar.is_finite() {
                return Err(NetworkError::Validation(format!(
                    "bus {bus}: cost coefficient c_bar must be finite"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Bus {
    pub id: String,
    /// Inertia M_j > 0 [s^2 pu].
    pub inertia: f64,
    /// Damping / frequency-dependent demand D_j > 0 [pu/(rad/s)].
    pub damping: f64,
    /// Demand deviation d_j [pu].
    pub demand: f64,
    pub cost: CostModel,
}

#[derive(Debug, Clone)]
pub struct Line {
    pub from: String,
    pub to: String,
    /// Index of the sending bus in file order.
    pub from_bus: usize,
    pub to_bus: usize,
    /// Susceptance B_e > 0 [pu/rad].
    pub susceptance: f64,
    /// Lower/upper thermal limits on the flow deviation [pu].
    pub flow_min: f64,
    pub flow_max: f64,
}

impl Line {
    pub fn label(&self) -> String {
        format!("{}_{}", self.from, self.to)
    }
}

/// Validated power network: connected oriented graph with one aggregate
/// generator per bus. Immutable after construction.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    index: HashMap<String, usize>,
}

// Raw file schema; validation happens when converting into NetworkModel.
#[derive(Deserialize, Serialize)]
struct NetworkFile {
    buses: Vec<BusFile>,
    lines: Vec<LineFile>,
}

#[derive(Deserialize, Serialize)]
struct BusFile {
    id: String,
    inertia: f64,
    damping: f64,
    demand: f64,
    cost: CostFile,
}

#[derive(Deserialize, Serialize)]
struct CostFile {
    c: f64,
    c_bar: f64,
}

#[derive(Deserialize, Serialize)]
struct LineFile {
    from: String,
    to: String,
    susceptance: f64,
    flow_min: f64,
    flow_max: f64,
}

impl NetworkModel {
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>) -> Result<Self, NetworkError> {
        let mut index = HashMap::new();
        if buses.is_empty() {
            return Err(NetworkError::Validation("network has no buses".into()));
        }
        for (j, bus) in buses.iter().enumerate() {
            if index.insert(bus.id.clone(), j).is_some() {
                return Err(NetworkError::Validation(format!(
                    "duplicate bus id {}",
                    bus.id
                )));
            }
            if !(bus.inertia.is_finite() && bus.inertia > 0.0) {
                return Err(NetworkError::Validation(format!(
                    "bus {}: inertia must be positive, got {}",
                    bus.id, bus.inertia
                )));
            }
            if !(bus.damping.is_finite() && bus.damping > 0.0) {
                return Err(NetworkError::Validation(format!(
                    "bus {}: damping must be positive, got {}",
                    bus.id, bus.damping
                )));
            }
            if !bus.demand.is_finite() {
                return Err(NetworkError::Validation(format!(
                    "bus {}: demand must be finite",
                    bus.id
                )));
            }
            bus.cost.validate(&bus.id)?;
        }

        let mut lines = lines;
        let mut seen = HashMap::new();
        for (e, line) in lines.iter_mut().enumerate() {
            let from = *index.get(&line.from).ok_or_else(|| {
                NetworkError::Validation(format!("line {e}: unknown bus {}", line.from))
            })?;
            let to = *index.get(&line.to).ok_or_else(|| {
                NetworkError::Validation(format!("line {e}: unknown bus {}", line.to))
            })?;
            if from == to {
                return Err(NetworkError::Validation(format!(
                    "line {e}: self-loop at bus {}",
                    line.from
                )));
            }
            // One orientation per bus pair: (j,k) in E implies (k,j) not in E.
            if seen.insert((from.min(to), from.max(to)), e).is_some() {
                return Err(NetworkError::Validation(format!(
                    "duplicate oriented edge between {} and {}",
                    line.from, line.to
                )));
            }
            if !(line.susceptance.is_finite() && line.susceptance > 0.0) {
                return Err(NetworkError::Validation(format!(
                    "line {e}: susceptance must be positive, got {}",
                    line.susceptance
                )));
            }
            if !(line.flow_min.is_finite() && line.flow_max.is_finite())
                || line.flow_min >= line.flow_max
            {
                return Err(NetworkError::Validation(format!(
                    "line {e}: flow limits must satisfy flow_min < flow_max"
                )));
            }
            line.from_bus = from;
            line.to_bus = to;
        }

        let model = NetworkModel {
            buses,
            lines,
            index,
        };
        if !model.is_connected() {
            return Err(NetworkError::Validation("graph is not connected".into()));
        }
        Ok(model)
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut reached = vec![false; n];
        let mut stack = vec![0usize];
        reached[0] = true;
        while let Some(j) = stack.pop() {
            for line in &self.lines {
                let other = if line.from_bus == j {
                    line.to_bus
                } else if line.to_bus == j {
                    line.from_bus
                } else {
                    continue;
                };
                if !reached[other] {
                    reached[other] = true;
                    stack.push(other);
                }
            }
        }
        reached.into_iter().all(|r| r)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Demand deviation vector in bus file order.
    pub fn demand(&self) -> DVector<f64> {
        DVector::from_iterator(self.buses.len(), self.buses.iter().map(|b| b.demand))
    }

    pub fn inertia(&self) -> DVector<f64> {
        DVector::from_iterator(self.buses.len(), self.buses.iter().map(|b| b.inertia))
    }

    pub fn damping(&self) -> DVector<f64> {
        DVector::from_iterator(self.buses.len(), self.buses.iter().map(|b| b.damping))
    }

    /// Element-wise marginal cost of a dispatch vector.
    pub fn cost_gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.buses.len(),
            self.buses
                .iter()
                .zip(q.iter())
                .map(|(b, &x)| b.cost.gradient(x)),
        )
    }

    pub fn cost_inverse_gradient(&self, price: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.buses.len(),
            self.buses
                .iter()
                .zip(price.iter())
                .map(|(b, &x)| b.cost.inverse_gradient(x)),
        )
    }

    pub fn total_cost(&self, q: &DVector<f64>) -> f64 {
        self.buses
            .iter()
            .zip(q.iter())
            .map(|(b, &x)| b.cost.value(x))
            .sum()
    }

    pub fn all_costs_quadratic(&self) -> bool {
        self.buses
            .iter()
            .all(|b| b.cost.quadratic_coefficients().is_some())
    }

    /// Copy with the given demand deviation vector (used to apply scenario
    /// demand steps before solving or simulating).
    pub fn with_demand(&self, demand: &DVector<f64>) -> NetworkModel {
        let mut net = self.clone();
        for (bus, &d) in net.buses.iter_mut().zip(demand.iter()) {
            bus.demand = d;
        }
        net
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            buses: self
                .buses
                .iter()
                .map(|b| {
                    let (c, c_bar) = b
                        .cost
                        .quadratic_coefficients()
                        .expect("only quadratic costs serialize to JSON");
                    BusFile {
                        id: b.id.clone(),
                        inertia: b.inertia,
                        damping: b.damping,
                        demand: b.demand,
                        cost: CostFile { c, c_bar },
                    }
                })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineFile {
                    from: l.from.clone(),
                    to: l.to.clone(),
                    susceptance: l.susceptance,
                    flow_min: l.flow_min,
                    flow_max: l.flow_max,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serialization cannot fail")
    }
}

/// Parse and validate a network JSON string.
pub fn parse_network(text: &str) -> Result<NetworkModel, NetworkError> {
    let file: NetworkFile =
        serde_json::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
    let buses = file
        .buses
        .into_iter()
        .map(|b| Bus {
            id: b.id,
            inertia: b.inertia,
            damping: b.damping,
            demand: b.demand,
            cost: CostModel::quadratic(b.cost.c, b.cost.c_bar),
        })
        .collect();
    let lines = file
        .lines
        .into_iter()
        .map(|l| Line {
            from: l.from,
            to: l.to,
            from_bus: 0,
            to_bus: 0,
            susceptance: l.susceptance,
            flow_min: l.flow_min,
            flow_max: l.flow_max,
        })
        .collect();
    NetworkModel::new(buses, lines)
}

/// Load and validate a network JSON file.
pub fn load_network(path: &Path) -> Result<NetworkModel, NetworkError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| NetworkError::Parse(format!("{}: {e}", path.display())))?;
    parse_network(&text)
}

/// Constant matrices derived from a validated network.
///
/// `shift` maps balanced bus injections to line flows; `stacked_shift` is the
/// matrix `H` with `H^T = [shift; -shift]`, so `H^T (q - d) <= F` expresses
/// both flow directions against `F = [F_max; -F_min]`.
#[derive(Debug, Clone)]
pub struct DerivedMatrices {
    /// Incidence matrix C, |N| x |E|, entries in {-1, 0, +1}.
    pub incidence: DMatrix<f64>,
    /// Diagonal of the susceptance matrix, length |E|.
    pub susceptance: DVector<f64>,
    /// Weighted Laplacian L = C B C^T.
    pub laplacian: DMatrix<f64>,
    /// Moore-Penrose pseudoinverse of L.
    pub laplacian_pinv: DMatrix<f64>,
    /// Power injection shift matrix B C^T L^+, |E| x |N|.
    pub shift: DMatrix<f64>,
    /// Stacked shift matrix H, |N| x 2|E|.
    pub stacked_shift: DMatrix<f64>,
    /// Stacked thermal limit vector F = [F_max; -F_min], length 2|E|.
    pub stacked_limits: DVector<f64>,
}

impl DerivedMatrices {
    pub fn n_buses(&self) -> usize {
        self.incidence.nrows()
    }

    pub fn n_lines(&self) -> usize {
        self.incidence.ncols()
    }

    /// H^T (q - d) as used by the stacked flow constraints.
    pub fn stacked_flow(&self, injection: &DVector<f64>) -> DVector<f64> {
        self.stacked_shift.transpose() * injection
    }
}

/// Assemble all derived matrices. The pseudoinverse comes from an
/// eigendecomposition of the symmetric Laplacian with eigenvalues below
/// `1e-9 * lambda_max` treated as zero; a connected graph must produce
/// exactly one such eigenvalue.
pub fn derive_matrices(net: &NetworkModel) -> Result<DerivedMatrices, NetworkError> {
    let n = net.n_buses();
    let m = net.n_lines();

    let mut incidence = DMatrix::zeros(n, m);
    let mut susceptance = DVector::zeros(m);
    for (e, line) in net.lines().iter().enumerate() {
        incidence[(line.from_bus, e)] = 1.0;
        incidence[(line.to_bus, e)] = -1.0;
        susceptance[e] = line.susceptance;
    }

    let b_diag = DMatrix::from_diagonal(&susceptance);
    let laplacian = &incidence * &b_diag * incidence.transpose();

    let eig = laplacian.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = PINV_EIGENVALUE_CUTOFF * lambda_max;
    let zero_count = eig.eigenvalues.iter().filter(|&&ev| ev <= cutoff).count();
    if zero_count != 1 {
        return Err(NetworkError::Numerical(format!(
            "Laplacian has {zero_count} near-zero eigenvalues; expected exactly 1"
        )));
    }
    let inv_diag = DVector::from_iterator(
        n,
        eig.eigenvalues
            .iter()
            .map(|&ev| if ev <= cutoff { 0.0 } else { 1.0 / ev }),
    );
    let laplacian_pinv =
        &eig.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eig.eigenvectors.transpose();

    let shift = &b_diag * incidence.transpose() * &laplacian_pinv;

    let mut stacked_shift = DMatrix::zeros(n, 2 * m);
    stacked_shift
        .view_mut((0, 0), (n, m))
        .copy_from(&shift.transpose());
    stacked_shift
        .view_mut((0, m), (n, m))
        .copy_from(&(-shift.transpose()));

    let mut stacked_limits = DVector::zeros(2 * m);
    for (e, line) in net.lines().iter().enumerate() {
        stacked_limits[e] = line.flow_max;
        stacked_limits[m + e] = -line.flow_min;
    }

    Ok(DerivedMatrices {
        incidence,
        susceptance,
        laplacian,
        laplacian_pinv,
        shift,
        stacked_shift,
        stacked_limits,
    })
}

/// Line flows produced by a balanced injection vector.
pub fn flows_from_injection(
    mats: &DerivedMatrices,
    injection: &DVector<f64>,
) -> Result<DVector<f64>, NetworkError> {
    if injection.len() != mats.n_buses() {
        return Err(NetworkError::Validation(format!(
            "injection length {} does not match {} buses",
            injection.len(),
            mats.n_buses()
        )));
    }
    let total: f64 = injection.iter().sum();
    if total.abs() > INJECTION_BALANCE_TOL {
        return Err(NetworkError::UnbalancedInjection(total));
    }
    Ok(&mats.shift * injection)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bus_json() -> &'static str {
        r#"{
            "buses": [
                {"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}},
                {"id": "b2", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}}
            ],
            "lines": [
                {"from": "b1", "to": "b2", "susceptance": 1.0, "flow_min": -10.0, "flow_max": 10.0}
            ]
        }"#
    }

    #[test]
    fn minimal_two_bus_network_parses() {
        let net = parse_network(two_bus_json()).unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.n_lines(), 1);
        assert_eq!(net.bus_index("b2"), Some(1));
    }

    #[test]
    fn reversed_duplicate_edge_rejected() {
        let text = r#"{
            "buses": [
                {"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}},
                {"id": "b2", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}}
            ],
            "lines": [
                {"from": "b1", "to": "b2", "susceptance": 1.0, "flow_min": -1.0, "flow_max": 1.0},
                {"from": "b2", "to": "b1", "susceptance": 1.0, "flow_min": -1.0, "flow_max": 1.0}
            ]
        }"#;
        match parse_network(text) {
            Err(NetworkError::Validation(_)) => {}
            other => panic!("expected ValidationError, got {other:?}"),
        }
    }

    #[test]
    fn nonpositive_inertia_rejected() {
        let text = two_bus_json().replace(
            r#""inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}}"#,
            r#""inertia": 0.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}}"#,
        );
        match parse_network(&text) {
            Err(NetworkError::Validation(m)) => assert!(m.contains("inertia")),
            other => panic!("expected ValidationError, got {other:?}"),
        }
    }

    #[test]
    fn disconnected_graph_rejected() {
        let text = r#"{
            "buses": [
                {"id": "a", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}},
                {"id": "b", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}},
                {"id": "c", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}}
            ],
            "lines": [
                {"from": "a", "to": "b", "susceptance": 1.0, "flow_min": -1.0, "flow_max": 1.0}
            ]
        }"#;
        assert!(matches!(
            parse_network(text),
            Err(NetworkError::Validation(_))
        ));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(
            parse_network("{not json"),
            Err(NetworkError::Parse(_))
        ));
    }

    #[test]
    fn two_bus_laplacian_and_pinv() {
        let net = parse_network(two_bus_json()).unwrap();
        let mats = derive_matrices(&net).unwrap();
        // L = [[1,-1],[-1,1]] by definition of C B C^T.
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!((mats.laplacian.clone() - &expected).abs().max() < 1e-14);
        // Hand eigendecomposition: eigenvalues {0, 2}, invert the nonzero one.
        let pinv = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((mats.laplacian_pinv.clone() - &pinv).abs().max() < 1e-12);
        let shift = DMatrix::from_row_slice(1, 2, &[0.5, -0.5]);
        assert!((mats.shift.clone() - &shift).abs().max() < 1e-12);
    }

    #[test]
    fn two_bus_unit_injection_flow() {
        let net = parse_network(two_bus_json()).unwrap();
        let mats = derive_matrices(&net).unwrap();
        let inj = DVector::from_vec(vec![1.0, -1.0]);
        let flows = flows_from_injection(&mats, &inj).unwrap();
        // shift = [0.5, -0.5] gives 0.5 - (-0.5) = 1.
        assert!((flows[0] - 1.0).abs() < 1e-12);
        // H^T injection = [flows; -flows]
        let stacked = mats.stacked_flow(&inj);
        assert!((stacked[0] - 1.0).abs() < 1e-12);
        assert!((stacked[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_injection_zero_flow() {
        let net = parse_network(two_bus_json()).unwrap();
        let mats = derive_matrices(&net).unwrap();
        let flows = flows_from_injection(&mats, &DVector::zeros(2)).unwrap();
        assert_eq!(flows.abs().max(), 0.0);
    }

    #[test]
    fn unbalanced_injection_rejected() {
        let net = parse_network(two_bus_json()).unwrap();
        let mats = derive_matrices(&net).unwrap();
        let inj = DVector::from_vec(vec![1.0, -0.5]);
        assert!(matches!(
            flows_from_injection(&mats, &inj),
            Err(NetworkError::UnbalancedInjection(_))
        ));
    }

    pub(crate) fn triangle_json() -> &'static str {
        r#"{
            "buses": [
                {"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}},
                {"id": "b2", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}},
                {"id": "b3", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}}
            ],
            "lines": [
                {"from": "b1", "to": "b2", "susceptance": 1.0, "flow_min": -10.0, "flow_max": 10.0},
                {"from": "b1", "to": "b3", "susceptance": 1.0, "flow_min": -10.0, "flow_max": 10.0},
                {"from": "b2", "to": "b3", "susceptance": 1.0, "flow_min": -10.0, "flow_max": 10.0}
            ]
        }"#
    }

    #[test]
    fn triangle_laplacian_structure() {
        let net = parse_network(triangle_json()).unwrap();
        let mats = derive_matrices(&net).unwrap();
        // Dense brute-force assembly as an independent check.
        let mut dense = DMatrix::zeros(3, 3);
        for line in net.lines() {
            let (j, k) = (line.from_bus, line.to_bus);
            dense[(j, j)] += line.susceptance;
            dense[(k, k)] += line.susceptance;
            dense[(j, k)] -= line.susceptance;
            dense[(k, j)] -= line.susceptance;
        }
        assert!((mats.laplacian.clone() - &dense).abs().max() < 1e-14);
        for j in 0..3 {
            assert!((mats.laplacian[(j, j)] - 2.0).abs() < 1e-14);
        }
        // 1^T H = 0
        let ones = DVector::from_element(3, 1.0);
        let row = mats.stacked_shift.transpose() * ones;
        assert!(row.abs().max() < 1e-12);
    }

    #[test]
    fn triangle_flow_split() {
        let net = parse_network(triangle_json()).unwrap();
        let mats = derive_matrices(&net).unwrap();
        let inj = DVector::from_vec(vec![1.0, -1.0, 0.0]);
        let flows = flows_from_injection(&mats, &inj).unwrap();
        // Independent dense route: solve L theta = injection on the balanced
        // subspace, read off B C^T theta.
        let theta = &mats.laplacian_pinv * &inj;
        let direct = DMatrix::from_diagonal(&mats.susceptance) * mats.incidence.transpose() * theta;
        assert!((flows.clone() - direct).abs().max() < 1e-12);
        // Lines in file order (b1->b2, b1->b3, b2->b3).
        let expected = [2.0 / 3.0, 1.0 / 3.0, -1.0 / 3.0];
        for (e, want) in expected.iter().enumerate() {
            assert!((flows[e] - want).abs() < 1e-12, "line {e}");
        }
    }

    #[test]
    fn single_bus_has_empty_line_structures() {
        let text = r#"{
            "buses": [{"id": "only", "inertia": 1.0, "damping": 1.0, "demand": 1.0, "cost": {"c": 1.0, "c_bar": 0.0}}],
            "lines": []
        }"#;
        let net = parse_network(text).unwrap();
        let mats = derive_matrices(&net).unwrap();
        assert_eq!(mats.n_lines(), 0);
        assert_eq!(mats.stacked_limits.len(), 0);
        assert_eq!(mats.laplacian_pinv[(0, 0)], 0.0);
    }

    #[test]
    fn quadratic_inverse_gradient_roundtrip() {
        let cost = CostModel::quadratic(2.5, -0.75);
        for k in 0..100 {
            let q = -5.0 + 0.1 * k as f64;
            let back = cost.inverse_gradient(cost.gradient(q));
            assert!((back - q).abs() < 1e-12);
        }
    }

    #[test]
    fn random_network_matrix_identities() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..30 {
            let n = rng.gen_range(2..=8);
            let mut buses = Vec::new();
            for j in 0..n {
                buses.push(Bus {
                    id: format!("n{j}"),
                    inertia: 1.0,
                    damping: 1.0,
                    demand: 0.0,
                    cost: CostModel::quadratic(1.0, 0.0),
                });
            }
            let mut lines = Vec::new();
            let mut pairs = std::collections::HashSet::new();
            for j in 1..n {
                let k = rng.gen_range(0..j);
                pairs.insert((k, j));
            }
            for j in 0..n {
                for k in (j + 1)..n {
                    if rng.gen_bool(0.3) {
                        pairs.insert((j, k));
                    }
                }
            }
            for (j, k) in pairs {
                lines.push(Line {
                    from: format!("n{j}"),
                    to: format!("n{k}"),
                    from_bus: 0,
                    to_bus: 0,
                    susceptance: rng.gen_range(0.2..3.0),
                    flow_min: -10.0,
                    flow_max: 10.0,
                });
            }
            let net = NetworkModel::new(buses, lines).unwrap();
            let mats = derive_matrices(&net).unwrap();
            let ones = DVector::from_element(n, 1.0);

            // Column sums of the incidence matrix vanish exactly.
            for e in 0..net.n_lines() {
                let col_sum: f64 = (0..n).map(|j| mats.incidence[(j, e)]).sum();
                assert_eq!(col_sum, 0.0);
            }
            assert!((&mats.laplacian * &ones).abs().max() < 1e-12);
            assert!((&mats.laplacian_pinv * &ones).abs().max() < 1e-10);
            assert!((mats.stacked_shift.transpose() * &ones).abs().max() < 1e-10);

            // Nodal balance round trip: theta = C^T L^+ x reproduces any
            // balanced injection through C B theta.
            let mut x = DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(-1.0..1.0)));
            let mean = x.iter().sum::<f64>() / n as f64;
            for v in x.iter_mut() {
                *v -= mean;
            }
            let theta = mats.incidence.transpose() * &mats.laplacian_pinv * &x;
            let back = &mats.incidence * (DMatrix::from_diagonal(&mats.susceptance) * theta);
            assert!((&x - back).abs().max() < 1e-9);
        }
    }
}
