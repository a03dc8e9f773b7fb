//! Closed-loop linearization and eigenvalue analysis, the regularization
//! bound, the dissipation certificate matrix with its PSD check, and the
//! quadratic Lyapunov function used along trajectories.

use std::fmt;

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{
    equilibrium_state, vector_field, BidState, Mechanism, MechanismVariant, SystemState,
};
use crate::network::{DerivedMatrices, NetworkModel};

/// Eigenvalues with modulus below this are structural zero modes (e.g. the
/// cycle-space angle directions) and are excluded from stability verdicts.
pub const STRUCTURAL_MODE_TOL: f64 = 1e-8;

const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug)]
pub enum StabilityError {
    /// Some multiplier sits at zero with a vanishing inner term; the vector
    /// field has no well-defined smooth branch there.
    ProjectionBoundary(String),
    ConvergenceFailure(String),
    DimensionMismatch(String),
    Validation(String),
}

impl fmt::Display for StabilityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StabilityError::ProjectionBoundary(m) => write!(f, "ProjectionBoundary: {m}"),
            StabilityError::ConvergenceFailure(m) => write!(f, "ConvergenceFailure: {m}"),
            StabilityError::DimensionMismatch(m) => write!(f, "DimensionMismatch: {m}"),
            StabilityError::Validation(m) => write!(f, "ValidationError: {m}"),
        }
    }
}

impl std::error::Error for StabilityError {}

/// Exact affine form `xdot = A x + constant` of the smooth branch of the
/// closed-loop field at a point, for quadratic costs.
///
/// Multipliers pinned at zero with strictly inward fields are frozen and
/// dropped from the state; `labels` names the remaining coordinates in
/// order: angles, frequencies, bid blocks, balance price, kept multipliers.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub a: DMatrix<f64>,
    pub constant: DVector<f64>,
    pub labels: Vec<String>,
}

/// Upper end of the regularization range with guaranteed convergence,
/// `4 min_j c_j` over the quadratic cost coefficients.
pub fn rho_bound(costs: &[f64]) -> f64 {
    costs.iter().cloned().fold(f64::INFINITY, f64::min) * 4.0
}

/// [`rho_bound`] over a network's quadratic coefficients; infinite when no
/// quadratic coefficients are available.
pub fn rho_bound_net(net: &NetworkModel) -> f64 {
    let cs: Vec<f64> = net
        .buses()
        .iter()
        .filter_map(|b| b.cost.quadratic_coefficients().map(|(c, _)| c))
        .collect();
    if cs.len() == net.n_buses() {
        rho_bound(&cs)
    } else {
        f64::INFINITY
    }
}

fn quadratic_coefficients(
    net: &NetworkModel,
) -> Result<(DVector<f64>, DVector<f64>), StabilityError> {
    let n = net.n_buses();
    let mut c = DVector::zeros(n);
    let mut c_bar = DVector::zeros(n);
    for (j, bus) in net.buses().iter().enumerate() {
        let (cj, cbj) = bus.cost.quadratic_coefficients().ok_or_else(|| {
            StabilityError::Validation(format!(
                "bus {}: linearization requires quadratic costs",
                bus.id
            ))
        })?;
        c[j] = cj;
        c_bar[j] = cbj;
    }
    Ok((c, c_bar))
}

/// Exact Jacobian of the active branch of the closed-loop field at `point`.
///
/// All field components are affine for quadratic costs, so the matrix is
/// assembled analytically; the constant follows from evaluating the field at
/// the point itself.
pub fn linearize(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    mech: &Mechanism,
    point: &SystemState,
) -> Result<LinearizedSystem, StabilityError> {
    let n = net.n_buses();
    let m = net.n_lines();
    let (c, _) = quadratic_coefficients(net)?;
    let tc = &mech.time_constants;

    // Classify multiplier coordinates against the projection boundary.
    let d = net.demand();
    let q_point = point.dispatch(mats, &mech.variant);
    let gap = mats.stacked_flow(&(q_point - &d)) - &mats.stacked_limits;
    let mut kept = Vec::new();
    for e in 0..2 * m {
        if point.eta[e] > BOUNDARY_TOL || gap[e] > BOUNDARY_TOL {
            kept.push(e);
        } else if gap[e] >= -BOUNDARY_TOL {
            return Err(StabilityError::ProjectionBoundary(format!(
                "eta[{e}] = 0 with vanishing inner term; Jacobian undefined"
            )));
        }
    }
    let ka = kept.len();

    // Column layout of the reduced state.
    let bid_cols = match mech.variant {
        MechanismVariant::Quantity => 1,
        _ => 2,
    };
    let dim = m + n + bid_cols * n + 1 + ka;
    let at_theta = 0;
    let at_omega = m;
    let at_bid0 = m + n; // p or alpha
    let at_bid1 = m + 2 * n; // q or q_hat
    let at_lambda = m + n + bid_cols * n;
    let at_eta = at_lambda + 1;

    let mut labels = Vec::with_capacity(dim);
    for line in net.lines() {
        labels.push(format!("theta_{}", line.label()));
    }
    for bus in net.buses() {
        labels.push(format!("omega_{}", bus.id));
    }
    match mech.variant {
        MechanismVariant::Quantity => {
            for bus in net.buses() {
                labels.push(format!("p_{}", bus.id));
            }
        }
        MechanismVariant::PriceAligned | MechanismVariant::PriceMisalignedNaive => {
            for bus in net.buses() {
                labels.push(format!("alpha_{}", bus.id));
            }
            for bus in net.buses() {
                labels.push(format!("q_{}", bus.id));
            }
        }
        MechanismVariant::PriceMisalignedRegularized { .. } => {
            for bus in net.buses() {
                labels.push(format!("alpha_{}", bus.id));
            }
            for bus in net.buses() {
                labels.push(format!("q_hat_{}", bus.id));
            }
        }
    }
    labels.push("lambda".into());
    for &e in &kept {
        labels.push(format!("eta_{e}"));
    }

    let h = &mats.stacked_shift; // n x 2m
    let hk = DMatrix::from_fn(n, ka, |j, i| h[(j, kept[i])]);

    // Sensitivity of the clearing price pi = lambda 1 - H eta - omega.
    // d(pi)/d(omega) = -I, d(pi)/d(lambda) = 1, d(pi)/d(eta_k) = -Hk.

    // Sensitivity of the resolved dispatch q.
    // Columns: theta, omega, bid0, bid1, lambda, eta_kept.
    let mut dq = DMatrix::zeros(n, dim);
    match mech.variant {
        MechanismVariant::Quantity => {
            for j in 0..n {
                dq[(j, at_bid0 + j)] = 1.0;
            }
        }
        MechanismVariant::PriceAligned | MechanismVariant::PriceMisalignedNaive => {
            for j in 0..n {
                dq[(j, at_bid1 + j)] = 1.0;
            }
        }
        MechanismVariant::PriceMisalignedRegularized { rho } => {
            // q = (pi - alpha)/rho + q_hat
            for j in 0..n {
                dq[(j, at_omega + j)] = -1.0 / rho;
                dq[(j, at_bid0 + j)] = -1.0 / rho;
                dq[(j, at_bid1 + j)] = 1.0;
                dq[(j, at_lambda)] = 1.0 / rho;
            }
            for i in 0..ka {
                for j in 0..n {
                    dq[(j, at_eta + i)] = -hk[(j, i)] / rho;
                }
            }
        }
    }

    let mut a = DMatrix::zeros(dim, dim);

    // theta rows: dtheta = C^T omega.
    for e in 0..m {
        for j in 0..n {
            a[(at_theta + e, at_omega + j)] = mats.incidence[(j, e)];
        }
    }

    // omega rows: M domega = q - d - D omega - C B theta.
    let cb = &mats.incidence * DMatrix::from_diagonal(&mats.susceptance); // n x m
    for j in 0..n {
        let minv = 1.0 / net.buses()[j].inertia;
        for col in 0..dim {
            a[(at_omega + j, col)] += minv * dq[(j, col)];
        }
        a[(at_omega + j, at_omega + j)] -= minv * net.buses()[j].damping;
        for e in 0..m {
            a[(at_omega + j, at_theta + e)] -= minv * cb[(j, e)];
        }
    }

    // Helper: add beta * d(pi)/dx to row.
    let add_dpi = |a: &mut DMatrix<f64>, row: usize, j: usize, beta: f64| {
        a[(row, at_omega + j)] -= beta;
        a[(row, at_lambda)] += beta;
        for i in 0..ka {
            a[(row, at_eta + i)] -= beta * hk[(j, i)];
        }
    };

    match mech.variant {
        MechanismVariant::Quantity => {
            // tau_p dp = pi - (c p + c_bar)
            for j in 0..n {
                let row = at_bid0 + j;
                add_dpi(&mut a, row, j, 1.0 / tc.p);
                a[(row, at_bid0 + j)] -= c[j] / tc.p;
            }
        }
        MechanismVariant::PriceAligned => {
            // tau_a dalpha = q - (alpha - c_bar)/c ; tau_q dq = pi - alpha
            for j in 0..n {
                let row = at_bid0 + j;
                a[(row, at_bid1 + j)] += 1.0 / tc.alpha;
                a[(row, at_bid0 + j)] -= 1.0 / (c[j] * tc.alpha);
                let row = at_bid1 + j;
                add_dpi(&mut a, row, j, 1.0 / tc.q);
                a[(row, at_bid0 + j)] -= 1.0 / tc.q;
            }
        }
        MechanismVariant::PriceMisalignedNaive => {
            // tau_a dalpha = q - (pi - c_bar)/c ; tau_q dq = pi - alpha
            for j in 0..n {
                let row = at_bid0 + j;
                a[(row, at_bid1 + j)] += 1.0 / tc.alpha;
                add_dpi(&mut a, row, j, -1.0 / (c[j] * tc.alpha));
                let row = at_bid1 + j;
                add_dpi(&mut a, row, j, 1.0 / tc.q);
                a[(row, at_bid0 + j)] -= 1.0 / tc.q;
            }
        }
        MechanismVariant::PriceMisalignedRegularized { .. } => {
            // tau_a dalpha = q_res - (pi - c_bar)/c ; tau_qh dq_hat = pi - alpha
            for j in 0..n {
                let row = at_bid0 + j;
                for col in 0..dim {
                    a[(row, col)] += dq[(j, col)] / tc.alpha;
                }
                add_dpi(&mut a, row, j, -1.0 / (c[j] * tc.alpha));
                let row = at_bid1 + j;
                add_dpi(&mut a, row, j, 1.0 / tc.q_hat);
                a[(row, at_bid0 + j)] -= 1.0 / tc.q_hat;
            }
        }
    }

    // lambda row: tau_l dlambda = -1^T (q - d).
    for col in 0..dim {
        let sum: f64 = (0..n).map(|j| dq[(j, col)]).sum();
        a[(at_lambda, col)] = -sum / tc.lambda;
    }

    // kept eta rows: tau_e deta = Hk^T (q - d) - Fk (projection passes).
    for i in 0..ka {
        for col in 0..dim {
            let mut sum = 0.0;
            for j in 0..n {
                sum += hk[(j, i)] * dq[(j, col)];
            }
            a[(at_eta + i, col)] = sum / tc.eta;
        }
    }

    // Constant from the affine identity: const = f(x) - A x.
    let field = vector_field(point, net, mats, mech)
        .map_err(|e| StabilityError::Validation(e.to_string()))?;
    let x = pack_reduced(point, &kept, mech);
    let f = pack_reduced(&field, &kept, mech);
    let constant = f - &a * x;

    Ok(LinearizedSystem {
        a,
        constant,
        labels,
    })
}

fn pack_reduced(state: &SystemState, kept: &[usize], _mech: &Mechanism) -> DVector<f64> {
    let mut data: Vec<f64> = Vec::new();
    data.extend(state.theta_tilde.iter());
    data.extend(state.omega.iter());
    match &state.bids {
        BidState::Quantity { p } => data.extend(p.iter()),
        BidState::Price { alpha, q } => {
            data.extend(alpha.iter());
            data.extend(q.iter());
        }
        BidState::Regularized { alpha, q_hat } => {
            data.extend(alpha.iter());
            data.extend(q_hat.iter());
        }
    }
    data.push(state.lambda);
    for &e in kept {
        data.push(state.eta[e]);
    }
    DVector::from_vec(data)
}

/// All eigenvalues of a real square matrix, sorted by real part then
/// imaginary part for reproducible output.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, StabilityError> {
    if a.nrows() != a.ncols() {
        return Err(StabilityError::DimensionMismatch(format!(
            "matrix is {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(StabilityError::Validation(
            "matrix has non-finite entries".into(),
        ));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), 1e-14, 100_000).ok_or_else(|| {
        StabilityError::ConvergenceFailure("Schur iteration did not converge".into())
    })?;
    let mut eigs: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().cloned().collect();
    eigs.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    Ok(eigs)
}

/// |det(A - lambda I)|, the characteristic residual used as an independent
/// check on returned eigenvalues of small matrices.
pub fn char_poly_residual(a: &DMatrix<f64>, lambda: Complex<f64>) -> f64 {
    let n = a.nrows();
    let mut shifted = DMatrix::<Complex<f64>>::from_fn(n, n, |r, c| Complex::new(a[(r, c)], 0.0));
    for j in 0..n {
        shifted[(j, j)] -= lambda;
    }
    shifted.lu().determinant().norm()
}

/// Dissipation certificate matrix for the regularized market, ordered by
/// (balance price, frequencies, price bids, multipliers), together with the
/// diagonal contraction factor `R = I - rho/2 diag(1/c)`.
#[derive(Debug, Clone)]
pub struct WSigma {
    pub matrix: DMatrix<f64>,
    pub rho: f64,
    pub r_diag: DVector<f64>,
}

impl WSigma {
    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Assemble the certificate matrix block by block. Positive semidefiniteness
/// for `rho` below [`rho_bound`] is certified numerically through
/// [`WSigma::min_eigenvalue`] rather than by the algebraic factorization.
pub fn build_w_sigma(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    rho: f64,
) -> Result<WSigma, StabilityError> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(StabilityError::Validation(format!(
            "rho must be positive, got {rho}"
        )));
    }
    let (c, _) = quadratic_coefficients(net)?;
    let n = net.n_buses();
    let m2 = 2 * net.n_lines();
    let dim = 1 + 2 * n + m2;
    let ri = 1.0 / rho;
    let h = &mats.stacked_shift;
    let damping = net.damping();

    let mut w = DMatrix::zeros(dim, dim);
    let at_omega = 1;
    let at_alpha = 1 + n;
    let at_eta = 1 + 2 * n;

    w[(0, 0)] = n as f64 * ri;
    for j in 0..n {
        w[(0, at_omega + j)] = -ri;
        w[(at_omega + j, 0)] = -ri;
        w[(0, at_alpha + j)] = 0.5 / c[j] - ri;
        w[(at_alpha + j, 0)] = 0.5 / c[j] - ri;
        w[(at_omega + j, at_omega + j)] = ri + damping[j];
        w[(at_omega + j, at_alpha + j)] = ri - 0.5 / c[j];
        w[(at_alpha + j, at_omega + j)] = ri - 0.5 / c[j];
        w[(at_alpha + j, at_alpha + j)] = ri;
    }
    for k in 0..m2 {
        let mut lambda_eta = 0.0;
        for j in 0..n {
            lambda_eta += h[(j, k)];
            w[(at_omega + j, at_eta + k)] = ri * h[(j, k)];
            w[(at_eta + k, at_omega + j)] = ri * h[(j, k)];
            let scaled = (ri - 0.5 / c[j]) * h[(j, k)];
            w[(at_alpha + j, at_eta + k)] = scaled;
            w[(at_eta + k, at_alpha + j)] = scaled;
        }
        w[(0, at_eta + k)] = -ri * lambda_eta;
        w[(at_eta + k, 0)] = -ri * lambda_eta;
        for l in 0..m2 {
            let mut hth = 0.0;
            for j in 0..n {
                hth += h[(j, k)] * h[(j, l)];
            }
            w[(at_eta + k, at_eta + l)] = ri * hth;
        }
    }

    let r_diag = DVector::from_iterator(n, c.iter().map(|&cj| 1.0 - 0.5 * rho / cj));
    debug_assert!((w.clone() - w.transpose()).abs().max() < 1e-12);
    Ok(WSigma {
        matrix: w,
        rho,
        r_diag,
    })
}

/// Quadratic Lyapunov value `1/2 (x - x*)^T diag(T) (x - x*)` over the
/// dynamic variables, anchored at `reference`. Angle differences are weighted
/// by line susceptance and frequencies by inertia; the market and bid states
/// use the mechanism's time constants.
pub fn lyapunov_value(
    net: &NetworkModel,
    mech: &Mechanism,
    point: &SystemState,
    reference: &SystemState,
) -> Result<f64, crate::dynamics::DynamicsError> {
    use crate::dynamics::DynamicsError;
    let tc = &mech.time_constants;
    let same_shape = std::mem::discriminant(&point.bids) == std::mem::discriminant(&reference.bids)
        && point.theta_tilde.len() == reference.theta_tilde.len()
        && point.omega.len() == reference.omega.len()
        && point.eta.len() == reference.eta.len();
    if !same_shape {
        return Err(DynamicsError::DimensionMismatch(
            "point and reference do not share the mechanism's active subset".into(),
        ));
    }
    let mut total = 0.0;
    for (e, line) in net.lines().iter().enumerate() {
        let dx = point.theta_tilde[e] - reference.theta_tilde[e];
        total += line.susceptance * dx * dx;
    }
    for (j, bus) in net.buses().iter().enumerate() {
        let dx = point.omega[j] - reference.omega[j];
        total += bus.inertia * dx * dx;
    }
    match (&point.bids, &reference.bids) {
        (BidState::Quantity { p }, BidState::Quantity { p: pr }) => {
            for (x, r) in p.iter().zip(pr.iter()) {
                total += tc.p * (x - r) * (x - r);
            }
        }
        (BidState::Price { alpha, q }, BidState::Price { alpha: ar, q: qr }) => {
            for (x, r) in alpha.iter().zip(ar.iter()) {
                total += tc.alpha * (x - r) * (x - r);
            }
            for (x, r) in q.iter().zip(qr.iter()) {
                total += tc.q * (x - r) * (x - r);
            }
        }
        (
            BidState::Regularized { alpha, q_hat },
            BidState::Regularized {
                alpha: ar,
                q_hat: qr,
            },
        ) => {
            for (x, r) in alpha.iter().zip(ar.iter()) {
                total += tc.alpha * (x - r) * (x - r);
            }
            for (x, r) in q_hat.iter().zip(qr.iter()) {
                total += tc.q_hat * (x - r) * (x - r);
            }
        }
        _ => unreachable!("discriminants checked above"),
    }
    let dl = point.lambda - reference.lambda;
    total += tc.lambda * dl * dl;
    for (x, r) in point.eta.iter().zip(reference.eta.iter()) {
        total += tc.eta * (x - r) * (x - r);
    }
    Ok(0.5 * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Indeterminate,
}

/// Eigenvalue report for a mechanism at the planner equilibrium.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub mechanism: String,
    pub eigenvalues: Vec<EigenvalueEntry>,
    pub rho_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_sigma_min_eigenvalue: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenvalueEntry {
    pub re: f64,
    pub im: f64,
    /// Structural zero mode, excluded from the verdict.
    pub structural: bool,
}

/// Linearize the mechanism at the planner equilibrium and classify it.
/// Eigenvalues with positive real part give `Unstable`; all strictly
/// negative (excluding structural zero modes) give `Stable`; marginal
/// spectra are reported as `Indeterminate` since the certificate argument,
/// not the linearization, decides those cases.
pub fn analyze(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    mech: &Mechanism,
    tol: f64,
) -> Result<StabilityReport, StabilityError> {
    let sol = crate::planner::solve_planner(net, mats, tol)
        .map_err(|e| StabilityError::ConvergenceFailure(e.to_string()))?;
    let point = equilibrium_state(&mech.variant, &sol);
    let lin = linearize(net, mats, mech, &point)?;
    let eigs = eigenvalues(&lin.a)?;

    let entries: Vec<EigenvalueEntry> = eigs
        .iter()
        .map(|ev| EigenvalueEntry {
            re: ev.re,
            im: ev.im,
            structural: ev.norm() < STRUCTURAL_MODE_TOL,
        })
        .collect();

    let mut max_re = f64::NEG_INFINITY;
    for entry in entries.iter().filter(|e| !e.structural) {
        max_re = max_re.max(entry.re);
    }
    let verdict = if max_re > STRUCTURAL_MODE_TOL {
        Verdict::Unstable
    } else if max_re < -STRUCTURAL_MODE_TOL {
        Verdict::Stable
    } else {
        Verdict::Indeterminate
    };

    let w_sigma_min_eigenvalue = match mech.variant.rho() {
        Some(rho) if net.all_costs_quadratic() => {
            Some(build_w_sigma(net, mats, rho)?.min_eigenvalue())
        }
        _ => None,
    };

    Ok(StabilityReport {
        mechanism: mech.variant.name().to_string(),
        eigenvalues: entries,
        rho_bound: rho_bound_net(net),
        w_sigma_min_eigenvalue,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Mechanism, MechanismVariant, SystemState};
    use crate::network::{derive_matrices, parse_network};

    fn single_bus(demand: f64) -> NetworkModel {
        parse_network(&format!(
            r#"{{"buses": [{{"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": {demand}, "cost": {{"c": 1.0, "c_bar": 0.0}}}}], "lines": []}}"#
        ))
        .unwrap()
    }

    #[test]
    fn naive_single_bus_matches_compact_matrix() {
        let net = single_bus(1.0);
        let mats = derive_matrices(&net).unwrap();
        let mech = Mechanism::new(MechanismVariant::PriceMisalignedNaive);
        let point = SystemState::zero(&mech.variant, 1, 0);
        let lin = linearize(&net, &mats, &mech, &point).unwrap();
        let want = DMatrix::from_row_slice(
            4,
            4,
            &[
                -1.0, 0.0, 1.0, 0.0, //
                1.0, 0.0, 1.0, -1.0, //
                -1.0, -1.0, 0.0, 1.0, //
                0.0, 0.0, -1.0, 0.0,
            ],
        );
        assert!((lin.a.clone() - &want).abs().max() < 1e-14, "{}", lin.a);
        assert_eq!(lin.labels, vec!["omega_b1", "alpha_b1", "q_b1", "lambda"]);
    }

    #[test]
    fn quantity_single_bus_jacobian() {
        let net = single_bus(1.0);
        let mats = derive_matrices(&net).unwrap();
        let mech = Mechanism::new(MechanismVariant::Quantity);
        let point = SystemState::zero(&mech.variant, 1, 0);
        let lin = linearize(&net, &mats, &mech, &point).unwrap();
        // Direct differentiation: omega' = p - omega, p' = lambda - omega - p,
        // lambda' = -p.
        let want =
            DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, -1.0, -1.0, 1.0, 0.0, -1.0, 0.0]);
        assert!((lin.a.clone() - &want).abs().max() < 1e-14);
    }

    #[test]
    fn demand_shift_only_moves_constant() {
        let a1 = {
            let net = single_bus(1.0);
            let mats = derive_matrices(&net).unwrap();
            let mech = Mechanism::new(MechanismVariant::PriceMisalignedNaive);
            linearize(&net, &mats, &mech, &SystemState::zero(&mech.variant, 1, 0)).unwrap()
        };
        let a2 = {
            let net = single_bus(2.5);
            let mats = derive_matrices(&net).unwrap();
            let mech = Mechanism::new(MechanismVariant::PriceMisalignedNaive);
            linearize(&net, &mats, &mech, &SystemState::zero(&mech.variant, 1, 0)).unwrap()
        };
        assert!((a1.a - a2.a).abs().max() < 1e-14);
        assert!((a1.constant - a2.constant).abs().max() > 1.0);
    }

    #[test]
    fn finite_difference_cross_check() {
        use crate::dynamics::vector_field;
        let net = parse_network(
            r#"{
            "buses": [
                {"id": "b1", "inertia": 2.0, "damping": 0.5, "demand": 1.0, "cost": {"c": 1.0, "c_bar": 0.1}},
                {"id": "b2", "inertia": 1.0, "damping": 1.5, "demand": 0.0, "cost": {"c": 2.0, "c_bar": 0.0}}
            ],
            "lines": [
                {"from": "b2", "to": "b1", "susceptance": 2.0, "flow_min": -5.0, "flow_max": 5.0}
            ]
            }"#,
        )
        .unwrap();
        let mats = derive_matrices(&net).unwrap();
        for variant in [
            MechanismVariant::Quantity,
            MechanismVariant::PriceAligned,
            MechanismVariant::PriceMisalignedNaive,
            MechanismVariant::PriceMisalignedRegularized { rho: 0.8 },
        ] {
            let mut mech = Mechanism::new(variant);
            mech.time_constants.alpha = 0.5;
            mech.time_constants.lambda = 2.0;
            // Interior point: push eta strictly positive so every multiplier
            // coordinate is kept and smooth.
            let mut point = SystemState::zero(&variant, 2, 1);
            point.eta = nalgebra::DVector::from_vec(vec![0.2, 0.3]);
            point.omega[0] = 0.1;
            let lin = linearize(&net, &mats, &mech, &point).unwrap();
            let x0 = point.pack();
            let f0 = vector_field(&point, &net, &mats, &mech).unwrap().pack();
            let h = 1e-6;
            for k in 0..x0.len() {
                let mut xp = x0.clone();
                xp[k] += h;
                let sp = SystemState::unpack(&point, &xp);
                let fp = vector_field(&sp, &net, &mats, &mech).unwrap().pack();
                for r in 0..x0.len() {
                    let fd = (fp[r] - f0[r]) / h;
                    assert!(
                        (lin.a[(r, k)] - fd).abs() < 1e-6,
                        "{}: A[{r},{k}] = {} vs fd {}",
                        variant.name(),
                        lin.a[(r, k)],
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn projection_boundary_refused() {
        // Flow exactly at the limit with eta = 0: no smooth branch.
        let net = parse_network(
            r#"{
            "buses": [
                {"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}},
                {"id": "b2", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.0, "c_bar": 0.0}}
            ],
            "lines": [
                {"from": "b1", "to": "b2", "susceptance": 1.0, "flow_min": -1.0, "flow_max": 0.0}
            ]
            }"#,
        )
        .unwrap();
        let mats = derive_matrices(&net).unwrap();
        let mech = Mechanism::new(MechanismVariant::Quantity);
        let point = SystemState::zero(&mech.variant, 2, 1);
        assert!(matches!(
            linearize(&net, &mats, &mech, &point),
            Err(StabilityError::ProjectionBoundary(_))
        ));
    }

    #[test]
    fn paper_eigenvalue_pair() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, -1.0, -1.0, -1.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0,
            ],
        );
        let eigs = eigenvalues(&a).unwrap();
        let unstable: Vec<_> = eigs.iter().filter(|e| e.re > 0.0).collect();
        assert_eq!(unstable.len(), 2);
        for ev in &unstable {
            assert!((ev.re - 0.16).abs() < 0.01);
            assert!((ev.im.abs() - 1.75).abs() < 0.01);
        }
        // Characteristic residual as the independent certificate.
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let bound = 1e-6 * norm.powi(4);
        for ev in &eigs {
            assert!(char_poly_residual(&a, *ev) < bound);
        }
    }

    #[test]
    fn identity_and_rotation_eigenvalues() {
        let id = DMatrix::<f64>::identity(3, 3);
        for ev in eigenvalues(&id).unwrap() {
            assert!((ev.re - 1.0).abs() < 1e-12 && ev.im.abs() < 1e-12);
        }
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let eigs = eigenvalues(&rot).unwrap();
        assert!((eigs[0].im + 1.0).abs() < 1e-12);
        assert!((eigs[1].im - 1.0).abs() < 1e-12);
        assert!(eigs.iter().all(|e| e.re.abs() < 1e-12));
    }

    #[test]
    fn rho_bound_cases() {
        assert_eq!(rho_bound(&[1.0]), 4.0);
        assert_eq!(rho_bound(&[0.5, 2.0, 3.0]), 2.0);
        let kappa = 1.7;
        assert_eq!(rho_bound(&[kappa, kappa, kappa]), 4.0 * kappa);
    }

    #[test]
    fn w_sigma_single_bus_hand_values() {
        let net = single_bus(1.0);
        let mats = derive_matrices(&net).unwrap();
        let w = build_w_sigma(&net, &mats, 1.0).unwrap();
        // |N| = 1, no lines: 3x3 block over (lambda, omega, alpha).
        let want =
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, -0.5, -1.0, 2.0, 0.5, -0.5, 0.5, 1.0]);
        assert!((w.matrix.clone() - &want).abs().max() < 1e-12);
        assert!(w.min_eigenvalue() > -1e-12);
        assert!((w.r_diag[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn r_factor_hits_minus_one_at_bound() {
        let net = single_bus(1.0);
        let mats = derive_matrices(&net).unwrap();
        let rho = rho_bound(&[1.0]);
        let w = build_w_sigma(&net, &mats, rho).unwrap();
        assert!((w.r_diag[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_value_basics() {
        let net = single_bus(1.0);
        let mech = Mechanism::new(MechanismVariant::Quantity);
        let reference = SystemState::zero(&mech.variant, 1, 0);
        assert_eq!(
            lyapunov_value(&net, &mech, &reference, &reference).unwrap(),
            0.0
        );
        let mut point = reference.clone();
        point.lambda = 0.3;
        let v = lyapunov_value(&net, &mech, &point, &reference).unwrap();
        assert!((v - 0.5 * 0.3 * 0.3).abs() < 1e-15);

        let mut doubled = Mechanism::new(MechanismVariant::Quantity);
        doubled.time_constants.lambda = 2.0;
        let v2 = lyapunov_value(&net, &doubled, &point, &reference).unwrap();
        assert!((v2 - 2.0 * v).abs() < 1e-15);
    }

    #[test]
    fn verdicts_for_single_bus_mechanisms() {
        let net = single_bus(1.0);
        let mats = derive_matrices(&net).unwrap();
        let naive = analyze(
            &net,
            &mats,
            &Mechanism::new(MechanismVariant::PriceMisalignedNaive),
            1e-8,
        )
        .unwrap();
        assert_eq!(naive.verdict, Verdict::Unstable);

        for rho in [0.1, 0.5, 1.0, 2.0, 3.9] {
            let report = analyze(
                &net,
                &mats,
                &Mechanism::new(MechanismVariant::PriceMisalignedRegularized { rho }),
                1e-8,
            )
            .unwrap();
            let max_re = report
                .eigenvalues
                .iter()
                .filter(|e| !e.structural)
                .map(|e| e.re)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max_re <= 1e-9, "rho = {rho}: max re {max_re}");
            assert!(report.w_sigma_min_eigenvalue.unwrap() > -1e-8);
        }
    }

    #[test]
    fn congested_triangle_spectrum_with_binding_multiplier() {
        // One binding limit at the optimum: the active multiplier stays in
        // the linearization, the pinned ones drop out, and the quantity loop
        // spectrum has no growing mode. The cycle of the triangle adds a
        // structural zero (angle direction in the kernel of C B).
        let net = parse_network(
            r#"{
            "buses": [
                {"id": "b1", "inertia": 1.0, "damping": 1.0, "demand": 1.0, "cost": {"c": 1.0, "c_bar": 0.0}},
                {"id": "b2", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 2.0, "c_bar": 0.0}},
                {"id": "b3", "inertia": 1.0, "damping": 1.0, "demand": 0.0, "cost": {"c": 1.5, "c_bar": 0.0}}
            ],
            "lines": [
                {"from": "b1", "to": "b2", "susceptance": 1.0, "flow_min": -5.0, "flow_max": 5.0},
                {"from": "b1", "to": "b3", "susceptance": 1.0, "flow_min": -0.2, "flow_max": 5.0},
                {"from": "b2", "to": "b3", "susceptance": 1.0, "flow_min": -5.0, "flow_max": 5.0}
            ]
            }"#,
        )
        .unwrap();
        let mats = derive_matrices(&net).unwrap();
        let report = analyze(&net, &mats, &Mechanism::new(MechanismVariant::Quantity), 1e-8).unwrap();
        // theta(3) + omega(3) + p(3) + lambda + one active eta.
        assert_eq!(report.eigenvalues.len(), 11);
        assert!(report.eigenvalues.iter().any(|e| e.structural));
        let max_re = report
            .eigenvalues
            .iter()
            .filter(|e| !e.structural)
            .map(|e| e.re)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(max_re < -1e-6, "max re {max_re}");
        assert_eq!(report.verdict, Verdict::Stable);
    }
}
