//! Planner QP oracle: solves the dispatch problem directly, independently of
//! the closed-loop dynamics, and verifies KKT conditions.
//!
//! Two routes are provided and cross-checked against each other:
//!
//! * [`solve_edp`] works on the reduced dispatch formulation (dispatch vector
//!   only) via dual projected-gradient ascent on `(lambda, eta)` with the
//!   closed-form inner minimizer, followed by an active-set polish.
//! * [`solve_planner`] works on the full planner formulation whose inner
//!   problem keeps the frequency variables: the inner minimization couples
//!   dispatch and frequency through the damping-weighted balance, so `omega`
//!   and `nu` are computed, not asserted zero.
//!
//! Both finish with the same exit test: the max-norm residual over the full
//! set of KKT conditions must not exceed the requested tolerance.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::network::{DerivedMatrices, NetworkModel};

pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_ASCENT_ITERS: usize = 10_000_000;
const ETA_DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug)]
pub enum PlannerError {
    /// No dispatch satisfies balance and line limits; detected when dual
    /// ascent diverges with monotonically growing multipliers.
    Infeasible(String),
    /// Solver failed to reach the tolerance; carries the best KKT residual.
    MaxIterations {
        best_residual: f64,
    },
    DimensionMismatch(String),
}

impl fmt::Display for PlannerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlannerError::Infeasible(m) => write!(f, "Infeasible: {m}"),
            PlannerError::MaxIterations { best_residual } => {
                write!(f, "MaxIterations: best KKT residual {best_residual:e}")
            }
            PlannerError::DimensionMismatch(m) => write!(f, "DimensionMismatch: {m}"),
        }
    }
}

impl std::error::Error for PlannerError {}

/// A full primal-dual candidate for the planner problem, in bus/line file
/// order. Feed to [`kkt_residual`] or [`lagrangian_value`].
#[derive(Debug, Clone)]
pub struct PrimalDualPoint {
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub omega: DVector<f64>,
    pub theta_tilde: DVector<f64>,
    pub alpha: DVector<f64>,
    pub lambda: f64,
    pub eta: DVector<f64>,
    pub nu: DVector<f64>,
}

/// Primal-dual optimum of the planner problem with its KKT residual.
#[derive(Debug, Clone)]
pub struct PlannerSolution {
    pub q_star: DVector<f64>,
    pub p_star: DVector<f64>,
    pub omega_star: DVector<f64>,
    pub theta_tilde_star: DVector<f64>,
    pub lambda_star: f64,
    pub eta_star: DVector<f64>,
    pub nu_star: DVector<f64>,
    pub alpha_star: DVector<f64>,
    /// Clearing prices `lambda 1 - H eta - nu`.
    pub pi_star: DVector<f64>,
    pub kkt_residual: f64,
}

impl PlannerSolution {
    pub fn as_point(&self) -> PrimalDualPoint {
        PrimalDualPoint {
            p: self.p_star.clone(),
            q: self.q_star.clone(),
            omega: self.omega_star.clone(),
            theta_tilde: self.theta_tilde_star.clone(),
            alpha: self.alpha_star.clone(),
            lambda: self.lambda_star,
            eta: self.eta_star.clone(),
            nu: self.nu_star.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let file = SolutionFile {
            q_star: self.q_star.iter().cloned().collect(),
            p_star: self.p_star.iter().cloned().collect(),
            omega_star: self.omega_star.iter().cloned().collect(),
            theta_tilde_star: self.theta_tilde_star.iter().cloned().collect(),
            lambda_star: self.lambda_star,
            eta_star: self.eta_star.iter().cloned().collect(),
            nu_star: self.nu_star.iter().cloned().collect(),
            alpha_star: self.alpha_star.iter().cloned().collect(),
            pi_star: self.pi_star.iter().cloned().collect(),
            kkt_residual: self.kkt_residual,
        };
        serde_json::to_string_pretty(&file).expect("solution serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, PlannerError> {
        let file: SolutionFile = serde_json::from_str(text)
            .map_err(|e| PlannerError::DimensionMismatch(format!("solution JSON: {e}")))?;
        Ok(PlannerSolution {
            q_star: DVector::from_vec(file.q_star),
            p_star: DVector::from_vec(file.p_star),
            omega_star: DVector::from_vec(file.omega_star),
            theta_tilde_star: DVector::from_vec(file.theta_tilde_star),
            lambda_star: file.lambda_star,
            eta_star: DVector::from_vec(file.eta_star),
            nu_star: DVector::from_vec(file.nu_star),
            alpha_star: DVector::from_vec(file.alpha_star),
            pi_star: DVector::from_vec(file.pi_star),
            kkt_residual: file.kkt_residual,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    q_star: Vec<f64>,
    p_star: Vec<f64>,
    omega_star: Vec<f64>,
    theta_tilde_star: Vec<f64>,
    lambda_star: f64,
    eta_star: Vec<f64>,
    nu_star: Vec<f64>,
    alpha_star: Vec<f64>,
    pi_star: Vec<f64>,
    kkt_residual: f64,
}

/// Named residuals for each KKT condition group of the planner problem.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// marginal cost vs price bid
    pub stationarity_p: f64,
    /// price bid vs clearing price decomposition
    pub stationarity_q: f64,
    /// frequency vs local imbalance price identification
    pub stationarity_omega: f64,
    /// imbalance prices uniform across the network
    pub stationarity_theta: f64,
    /// dispatch equals scheduled output
    pub primal_dispatch: f64,
    /// network power balance
    pub primal_balance: f64,
    /// stacked flow limit violation
    pub primal_flow: f64,
    /// nodal power balance with damping
    pub primal_nodal: f64,
    /// negative congestion multipliers
    pub dual_feasibility: f64,
    pub complementary_slackness: f64,
}

impl KktReport {
    pub fn overall(&self) -> f64 {
        [
            self.stationarity_p,
            self.stationarity_q,
            self.stationarity_omega,
            self.stationarity_theta,
            self.primal_dispatch,
            self.primal_balance,
            self.primal_flow,
            self.primal_nodal,
            self.dual_feasibility,
            self.complementary_slackness,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("stationarity_p", self.stationarity_p),
            ("stationarity_q", self.stationarity_q),
            ("stationarity_omega", self.stationarity_omega),
            ("stationarity_theta", self.stationarity_theta),
            ("primal_dispatch", self.primal_dispatch),
            ("primal_balance", self.primal_balance),
            ("primal_flow", self.primal_flow),
            ("primal_nodal", self.primal_nodal),
            ("dual_feasibility", self.dual_feasibility),
            ("complementary_slackness", self.complementary_slackness),
        ]
    }
}

impl fmt::Display for KktReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, value) in self.named() {
            writeln!(f, "{name:<24} {value:.3e}")?;
        }
        write!(f, "{:<24} {:.3e}", "overall", self.overall())
    }
}

/// Per-condition residual report for a primal-dual candidate.
pub fn kkt_residual(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    point: &PrimalDualPoint,
) -> Result<KktReport, PlannerError> {
    let n = net.n_buses();
    let m = net.n_lines();
    check_dims(point, n, m)?;

    let d = net.demand();
    let damping = net.damping();
    let injection = &point.q - &d;

    let grad = net.cost_gradient(&point.p);
    let stationarity_p = (&grad - &point.alpha).abs().max();

    let h_eta = &mats.stacked_shift * &point.eta;
    let ones = DVector::from_element(n, 1.0);
    let stationarity_q = (&point.alpha - &ones * point.lambda + &h_eta + &point.nu)
        .abs()
        .max();

    let stationarity_omega = (0..n)
        .map(|j| (damping[j] * (point.omega[j] - point.nu[j])).abs())
        .fold(0.0, f64::max);

    // B C^T nu = 0: imbalance prices constant across a connected graph.
    let bc_nu = DMatrix::from_diagonal(&mats.susceptance) * mats.incidence.transpose() * &point.nu;
    let stationarity_theta = bc_nu.abs().max();

    let primal_dispatch = (&point.q - &point.p).abs().max();
    let primal_balance = injection.iter().sum::<f64>().abs();

    let slack = mats.stacked_flow(&injection) - &mats.stacked_limits;
    let primal_flow = slack.iter().cloned().fold(0.0, f64::max);

    let line_flow =
        &mats.incidence * (DMatrix::from_diagonal(&mats.susceptance) * &point.theta_tilde);
    let primal_nodal = (0..n)
        .map(|j| (injection[j] - damping[j] * point.omega[j] - line_flow[j]).abs())
        .fold(0.0, f64::max);

    let dual_feasibility = point.eta.iter().map(|&e| (-e).max(0.0)).fold(0.0, f64::max);

    let complementary_slackness = point
        .eta
        .iter()
        .zip(slack.iter())
        .map(|(&e, &s)| (e * s).abs())
        .fold(0.0, f64::max);

    Ok(KktReport {
        stationarity_p,
        stationarity_q,
        stationarity_omega,
        stationarity_theta,
        primal_dispatch,
        primal_balance,
        primal_flow,
        primal_nodal,
        dual_feasibility,
        complementary_slackness,
    })
}

fn check_dims(point: &PrimalDualPoint, n: usize, m: usize) -> Result<(), PlannerError> {
    let want = [
        ("p", point.p.len(), n),
        ("q", point.q.len(), n),
        ("omega", point.omega.len(), n),
        ("alpha", point.alpha.len(), n),
        ("nu", point.nu.len(), n),
        ("theta_tilde", point.theta_tilde.len(), m),
        ("eta", point.eta.len(), 2 * m),
    ];
    for (name, got, expect) in want {
        if got != expect {
            return Err(PlannerError::DimensionMismatch(format!(
                "{name} has length {got}, expected {expect}"
            )));
        }
    }
    Ok(())
}

/// Value of the planner Lagrangian at a full primal-dual point.
pub fn lagrangian_value(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    point: &PrimalDualPoint,
) -> Result<f64, PlannerError> {
    let n = net.n_buses();
    let m = net.n_lines();
    check_dims(point, n, m)?;

    let d = net.demand();
    let damping = net.damping();
    let injection = &point.q - &d;

    let generation: f64 = net.total_cost(&point.p);
    let freq_penalty: f64 = 0.5
        * (0..n)
            .map(|j| damping[j] * point.omega[j] * point.omega[j])
            .sum::<f64>();
    let line_flow =
        &mats.incidence * (DMatrix::from_diagonal(&mats.susceptance) * &point.theta_tilde);
    let nodal: f64 = (0..n)
        .map(|j| point.nu[j] * (injection[j] - damping[j] * point.omega[j] - line_flow[j]))
        .sum();
    let coupling: f64 = point.alpha.dot(&(&point.q - &point.p));
    let balance: f64 = point.lambda * injection.iter().sum::<f64>();
    let congestion: f64 = point
        .eta
        .dot(&(mats.stacked_flow(&injection) - &mats.stacked_limits));

    Ok(generation + freq_penalty + nodal + coupling - balance + congestion)
}

/// Inner dispatch minimizer shared by both solver routes.
///
/// `price_shift` is the uniform addition to `lambda` coming from the
/// frequency coupling (zero for the reduced route).
fn inner_dispatch(
    net: &NetworkModel,
    h_eta: &DVector<f64>,
    lambda: f64,
    price_shift: f64,
) -> DVector<f64> {
    DVector::from_iterator(
        net.n_buses(),
        net.buses()
            .iter()
            .zip(h_eta.iter())
            .map(|(bus, &he)| bus.cost.inverse_gradient(lambda + price_shift - he)),
    )
}

/// Root of `sum(q(mu) - d) + mu * sum(D) = 0` in `mu`: the multiplier of the
/// damping-weighted balance in the planner inner problem. Closed form for
/// quadratic costs; otherwise strictly increasing, so bisection is safe.
fn solve_coupling(net: &NetworkModel, h_eta: &DVector<f64>, lambda: f64, d_sum: f64) -> f64 {
    let demand_total: f64 = net.demand().iter().sum();
    if net.all_costs_quadratic() {
        let mut inv_c_sum = 0.0;
        let mut base_sum = 0.0;
        for (bus, &he) in net.buses().iter().zip(h_eta.iter()) {
            let (c, c_bar) = bus.cost.quadratic_coefficients().unwrap();
            inv_c_sum += 1.0 / c;
            base_sum += (lambda - he - c_bar) / c;
        }
        return (demand_total - base_sum) / (inv_c_sum + d_sum);
    }
    let phi = |mu: f64| -> f64 {
        let q = inner_dispatch(net, h_eta, lambda, mu);
        q.iter().sum::<f64>() - demand_total + mu * d_sum
    };
    let f0 = phi(0.0);
    if f0 == 0.0 {
        return 0.0;
    }
    // Bracket the root.
    let mut step = 1.0;
    let (mut lo, mut hi) = if f0 > 0.0 { (-1.0, 0.0) } else { (0.0, 1.0) };
    for _ in 0..200 {
        if phi(lo) <= 0.0 && phi(hi) >= 0.0 {
            break;
        }
        step *= 2.0;
        lo -= step;
        hi += step;
    }
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = phi(mid);
        if v.abs() < 1e-14 {
            return mid;
        }
        if v > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimum-norm least-squares solve via SVD; ties at degenerate optima are
/// broken deterministically by the smallest multiplier vector.
fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let eps = if smax > 0.0 { 1e-12 * smax } else { 1e-12 };
    svd.solve(b, eps).ok()
}

struct AscentState {
    lambda: f64,
    eta: DVector<f64>,
}

/// Step size from the dual Hessian bound `|K^T diag(1/c) K|` with
/// `K = [1 | -H]`; for generic costs the curvature is sampled numerically.
fn dual_step_size(net: &NetworkModel, mats: &DerivedMatrices) -> f64 {
    let n = net.n_buses();
    let m2 = 2 * net.n_lines();
    let mut k = DMatrix::zeros(n, 1 + m2);
    for j in 0..n {
        k[(j, 0)] = 1.0;
    }
    k.view_mut((0, 1), (n, m2))
        .copy_from(&(-&mats.stacked_shift));
    let inv_curvature = DVector::from_iterator(
        n,
        net.buses().iter().map(|bus| {
            match bus.cost.quadratic_coefficients() {
                Some((c, _)) => 1.0 / c,
                None => {
                    // Sampled sensitivity of the inverse gradient near zero.
                    let h = 1e-4;
                    let base = bus.cost.gradient(0.0);
                    let slope = (bus.cost.inverse_gradient(base + h)
                        - bus.cost.inverse_gradient(base - h))
                        / (2.0 * h);
                    slope.abs().max(1e-12)
                }
            }
        }),
    );
    let hess = k.transpose() * DMatrix::from_diagonal(&inv_curvature) * k;
    let lip = hess
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    if lip > 0.0 {
        1.0 / lip
    } else {
        1.0
    }
}

enum Route {
    /// Reduced dispatch formulation: inner minimizer over dispatch only.
    Reduced,
    /// Full planner formulation: inner minimizer couples dispatch and
    /// frequency through the damping-weighted balance.
    FrequencyCoupled,
}

fn dual_ascent(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    route: &Route,
    tol: f64,
) -> Result<AscentState, PlannerError> {
    let d = net.demand();
    let f = &mats.stacked_limits;
    let d_sum: f64 = net.damping().iter().sum();
    let step = dual_step_size(net, mats);
    let target = (tol * 10.0).max(1e-7);

    let mut lambda = 0.0f64;
    let mut eta = DVector::zeros(f.len());
    let mut eta_peak = 0.0f64;
    let mut growth_streak = 0usize;

    let n = net.n_buses();
    let mut h_eta = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    let mut grad_eta = DVector::zeros(f.len());

    for iter in 0..MAX_ASCENT_ITERS {
        h_eta.gemv(1.0, &mats.stacked_shift, &eta, 0.0);
        let mu = match route {
            Route::Reduced => 0.0,
            Route::FrequencyCoupled => solve_coupling(net, &h_eta, lambda, d_sum),
        };
        for (j, bus) in net.buses().iter().enumerate() {
            q[j] = bus.cost.inverse_gradient(lambda + mu - h_eta[j]);
        }
        let mut balance = 0.0;
        for j in 0..n {
            q[j] -= d[j]; // q now holds the injection
            balance += q[j];
        }
        let grad_lambda = -balance;
        grad_eta.gemv_tr(1.0, &mats.stacked_shift, &q, 0.0);
        grad_eta -= f;

        // Projected-gradient residual: eta components pinned at zero with
        // inward gradient do not count.
        let eta_res = eta
            .iter()
            .zip(grad_eta.iter())
            .map(|(&e, &g)| if e <= 0.0 && g < 0.0 { 0.0 } else { g.abs() })
            .fold(0.0, f64::max);
        if grad_lambda.abs().max(eta_res) < target {
            return Ok(AscentState { lambda, eta });
        }

        lambda += step * grad_lambda;
        for e in 0..eta.len() {
            eta[e] = (eta[e] + step * grad_eta[e]).max(0.0);
        }

        if iter % 200 == 199 {
            let norm = eta.abs().max();
            if norm > eta_peak {
                growth_streak += 1;
                eta_peak = norm;
            } else {
                growth_streak = 0;
            }
            if norm > ETA_DIVERGENCE_LIMIT && growth_streak >= 10 {
                return Err(PlannerError::Infeasible(format!(
                    "dual ascent diverged, |eta| = {norm:e}"
                )));
            }
        }
    }
    Ok(AscentState { lambda, eta })
}

/// Active-set polish: exact solve of the stationarity system restricted to
/// the working set discovered by the ascent. For the frequency-coupled route
/// the coupling multiplier is an extra unknown, recovering `omega` and `nu`.
fn active_set_polish(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    route: &Route,
    state: &AscentState,
    tol: f64,
) -> (f64, DVector<f64>, f64) {
    let m2 = mats.stacked_limits.len();
    let d = net.demand();
    let f = &mats.stacked_limits;
    let d_sum: f64 = net.damping().iter().sum();
    let act_tol = (tol * 100.0).max(1e-6);

    let h_eta0 = &mats.stacked_shift * &state.eta;
    let q0 = inner_dispatch(net, &h_eta0, state.lambda, 0.0);
    let slack0 = mats.stacked_flow(&(q0 - &d)) - f;
    let mut active: Vec<usize> = (0..m2)
        .filter(|&e| state.eta[e] > act_tol || slack0[e] > -act_tol)
        .collect();

    let mut best = (state.lambda, state.eta.clone(), 0.0);
    for _ in 0..60 {
        let (lambda, eta_a, mu) = match solve_working_set(net, mats, route, &active, d_sum) {
            Some(sol) => sol,
            None => break,
        };

        // Drop negative multipliers first, then admit violated constraints.
        if let Some((worst, _)) = active
            .iter()
            .enumerate()
            .map(|(i, _)| (i, eta_a[i]))
            .filter(|&(_, v)| v < -1e-10)
            .min_by(|a, b| a.1.total_cmp(&b.1))
        {
            active.remove(worst);
            continue;
        }

        let mut eta = DVector::zeros(m2);
        for (i, &e) in active.iter().enumerate() {
            eta[e] = eta_a[i].max(0.0);
        }
        let h_eta = &mats.stacked_shift * &eta;
        let q = inner_dispatch(net, &h_eta, lambda, mu);
        let slack = mats.stacked_flow(&(q - &d)) - f;
        best = (lambda, eta.clone(), mu);

        match (0..m2)
            .filter(|e| !active.contains(e))
            .map(|e| (e, slack[e]))
            .filter(|&(_, s)| s > 1e-10)
            .max_by(|a, b| a.1.total_cmp(&b.1))
        {
            Some((e, _)) => active.push(e),
            None => break,
        }
    }
    best
}

/// Solve the equality system on a working set: balance, active flows, and
/// (for the coupled route) the damping-weighted balance that defines `mu`.
/// Quadratic costs make the system affine, so one least-squares solve is
/// exact; generic costs take damped Newton steps on the same residual.
fn solve_working_set(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    route: &Route,
    active: &[usize],
    d_sum: f64,
) -> Option<(f64, DVector<f64>, f64)> {
    let na = active.len();
    let coupled = matches!(route, Route::FrequencyCoupled);
    let dim = 1 + na + usize::from(coupled);
    let d = net.demand();
    let f = &mats.stacked_limits;

    let residual = |u: &DVector<f64>| -> DVector<f64> {
        let lambda = u[0];
        let mu = if coupled { u[dim - 1] } else { 0.0 };
        let mut eta = DVector::zeros(f.len());
        for (i, &e) in active.iter().enumerate() {
            eta[e] = u[1 + i];
        }
        let h_eta = &mats.stacked_shift * &eta;
        let q = inner_dispatch(net, &h_eta, lambda, mu);
        let injection = &q - &d;
        let stacked = mats.stacked_flow(&injection);
        let mut r = DVector::zeros(dim);
        r[0] = injection.iter().sum::<f64>();
        for (i, &e) in active.iter().enumerate() {
            r[1 + i] = stacked[e] - f[e];
        }
        if coupled {
            r[dim - 1] = injection.iter().sum::<f64>() + mu * d_sum;
        }
        r
    };

    let quadratic = net.all_costs_quadratic();
    let mut u = DVector::zeros(dim);
    let steps = if quadratic { 1 } else { 30 };
    for _ in 0..steps {
        let r = residual(&u);
        if !quadratic && r.abs().max() < 1e-13 {
            break;
        }
        // Finite-difference Jacobian. The residual is affine for quadratic
        // costs, so a unit probe step is exact there and avoids cancellation.
        let mut jac = DMatrix::zeros(dim, dim);
        let h = if quadratic { 1.0 } else { 1e-6 };
        for k in 0..dim {
            let mut up = u.clone();
            up[k] += h;
            let mut dn = u.clone();
            dn[k] -= h;
            let col = (residual(&up) - residual(&dn)) / (2.0 * h);
            jac.set_column(k, &col);
        }
        if quadratic {
            // Affine system r(u) = r(0) + J u: solve J u = J u0 - r(u0) for
            // the minimum-norm solution.
            let rhs = &jac * &u - &r;
            u = min_norm_solve(&jac, &rhs)?;
        } else {
            let delta = min_norm_solve(&jac, &(-&r))?;
            u += delta;
        }
    }

    let lambda = u[0];
    let mu = if coupled { u[dim - 1] } else { 0.0 };
    let eta_a = DVector::from_iterator(na, (0..na).map(|i| u[1 + i]));
    Some((lambda, eta_a, mu))
}

fn assemble_solution(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    lambda: f64,
    eta: &DVector<f64>,
    mu: f64,
) -> PlannerSolution {
    let n = net.n_buses();
    let h_eta = &mats.stacked_shift * eta;
    let q = inner_dispatch(net, &h_eta, lambda, mu);
    let d = net.demand();
    let theta_tilde = mats.incidence.transpose() * &mats.laplacian_pinv * (&q - &d);
    let omega = DVector::from_element(n, -mu);
    let nu = omega.clone();
    let alpha = net.cost_gradient(&q);
    let ones = DVector::from_element(n, 1.0);
    let pi = &ones * lambda - &h_eta - &nu;
    PlannerSolution {
        p_star: q.clone(),
        q_star: q,
        omega_star: omega,
        theta_tilde_star: theta_tilde,
        lambda_star: lambda,
        eta_star: eta.clone(),
        nu_star: nu,
        alpha_star: alpha,
        pi_star: pi,
        kkt_residual: f64::NAN,
    }
}

fn solve_route(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    route: Route,
    tol: f64,
) -> Result<PlannerSolution, PlannerError> {
    let mut best_residual = f64::INFINITY;
    let mut best: Option<PlannerSolution> = None;
    let mut current_tol = tol;

    for round in 0..5 {
        let state = dual_ascent(net, mats, &route, current_tol)?;
        let (lambda, eta, mu) = active_set_polish(net, mats, &route, &state, tol);
        let mut sol = assemble_solution(net, mats, lambda, &eta, mu);
        let report = kkt_residual(net, mats, &sol.as_point()).expect("dimensions consistent");
        sol.kkt_residual = report.overall();
        if sol.kkt_residual < best_residual {
            best_residual = sol.kkt_residual;
            best = Some(sol);
        }
        if best_residual <= tol {
            return Ok(best.unwrap());
        }
        // Tighten the ascent before retrying the polish.
        current_tol /= 100.0;
        let _ = round;
    }

    Err(PlannerError::MaxIterations { best_residual })
}

/// Solve the full planner problem. Frequencies and local imbalance prices
/// are computed by the inner problem of the dual; the result satisfies the
/// KKT conditions within `tol`.
pub fn solve_planner(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    tol: f64,
) -> Result<PlannerSolution, PlannerError> {
    solve_route(net, mats, Route::FrequencyCoupled, tol)
}

/// Solve the reduced dispatch problem and complete the point with the angle
/// reconstruction. Cross-check oracle for [`solve_planner`].
pub fn solve_edp(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    tol: f64,
) -> Result<PlannerSolution, PlannerError> {
    solve_route(net, mats, Route::Reduced, tol)
}
