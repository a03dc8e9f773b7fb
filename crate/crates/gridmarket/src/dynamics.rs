//! Closed-loop vector fields for the four market mechanisms, the element-wise
//! projection that keeps congestion multipliers nonnegative, clearing prices,
//! and a fixed-step RK4 integrator producing trajectories.
//!
//! The closed loop couples swing dynamics on the network with market pricing
//! and dispatch updates and with each generator's bidding rule. Which state
//! blocks exist depends on the mechanism:
//!
//! * quantity bidding: quantity bids `p` are a state, dispatch `q == p`;
//! * aligned price bidding: price bids `alpha` and dispatch `q` are states,
//!   bids respond to the local dispatch gap;
//! * misaligned price bidding: same states, but bids respond to the clearing
//!   price instead of the local bid (destabilizes the loop);
//! * regularized market: virtual dispatch `q_hat` replaces `q` as the state
//!   and real dispatch is the proximal closed form
//!   `q = (pi - alpha)/rho + q_hat`.
//!
//! Frequencies stand in for the local imbalance price everywhere (the swing
//! dynamics enforce the identification even in transient), so no separate
//! `nu` state exists.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::network::{DerivedMatrices, NetworkModel};
use crate::planner::{PlannerSolution, PrimalDualPoint};

/// Simulation aborts with `Diverged` once the state max-norm passes this.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_HORIZON: f64 = 150.0;
pub const DEFAULT_DETECT_WINDOW: f64 = 5.0;
pub const DEFAULT_DETECT_TOL: f64 = 1e-5;

#[derive(Debug)]
pub enum DynamicsError {
    DimensionMismatch(String),
    /// State carries the wrong blocks for the requested mechanism.
    MechanismStateMismatch(String),
    /// NaN or infinity produced by an integrator step.
    NonFiniteState {
        t: f64,
    },
    Validation(String),
}

impl fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsError::DimensionMismatch(m) => write!(f, "DimensionMismatch: {m}"),
            DynamicsError::MechanismStateMismatch(m) => {
                write!(f, "MechanismStateMismatch: {m}")
            }
            DynamicsError::NonFiniteState { t } => {
                write!(f, "NonFiniteState: non-finite state at t = {t}")
            }
            DynamicsError::Validation(m) => write!(f, "ValidationError: {m}"),
        }
    }
}

impl std::error::Error for DynamicsError {}

/// Market-dynamics variant governing the closed-loop vector field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum MechanismVariant {
    Quantity,
    PriceAligned,
    PriceMisalignedNaive,
    PriceMisalignedRegularized { rho: f64 },
}

impl MechanismVariant {
    pub fn name(&self) -> &'static str {
        match self {
            MechanismVariant::Quantity => "quantity",
            MechanismVariant::PriceAligned => "price_aligned",
            MechanismVariant::PriceMisalignedNaive => "price_misaligned_naive",
            MechanismVariant::PriceMisalignedRegularized { .. } => "price_misaligned_regularized",
        }
    }

    pub fn rho(&self) -> Option<f64> {
        match self {
            MechanismVariant::PriceMisalignedRegularized { rho } => Some(*rho),
            _ => None,
        }
    }
}

/// Positive time constants, one per dynamic variable class. Inertia and the
/// susceptance-weighted angle rates come from the network itself.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeConstants {
    pub p: f64,
    pub alpha: f64,
    pub q: f64,
    pub q_hat: f64,
    pub lambda: f64,
    pub eta: f64,
}

impl Default for TimeConstants {
    fn default() -> Self {
        TimeConstants {
            p: 1.0,
            alpha: 1.0,
            q: 1.0,
            q_hat: 1.0,
            lambda: 1.0,
            eta: 1.0,
        }
    }
}

impl TimeConstants {
    fn validate(&self) -> Result<(), DynamicsError> {
        for (name, v) in [
            ("p", self.p),
            ("alpha", self.alpha),
            ("q", self.q),
            ("q_hat", self.q_hat),
            ("lambda", self.lambda),
            ("eta", self.eta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::Validation(format!(
                    "time constant {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Mechanism {
    pub variant: MechanismVariant,
    pub time_constants: TimeConstants,
}

impl Mechanism {
    pub fn new(variant: MechanismVariant) -> Self {
        Mechanism {
            variant,
            time_constants: TimeConstants::default(),
        }
    }

    /// Check tunables against the network. Returns human-readable warnings
    /// for configurations that fall outside the stability guarantee but are
    /// still simulated.
    pub fn validate(&self, net: &NetworkModel) -> Result<Vec<String>, DynamicsError> {
        self.time_constants.validate()?;
        let mut warnings = Vec::new();
        if let MechanismVariant::PriceMisalignedRegularized { rho } = self.variant {
            if !(rho.is_finite() && rho > 0.0) {
                return Err(DynamicsError::Validation(format!(
                    "regularization coefficient rho must be positive, got {rho}"
                )));
            }
            if !net.all_costs_quadratic() {
                return Err(DynamicsError::Validation(
                    "the regularized market requires quadratic costs".into(),
                ));
            }
            let bound = crate::stability::rho_bound_net(net);
            if rho >= bound {
                warnings.push(format!(
                    "rho = {rho} is outside the guaranteed range (0, {bound}); \
                     convergence is not assured"
                ));
            }
        }
        Ok(warnings)
    }
}

/// Full closed-loop state. The bid block depends on the mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    /// Angle differences across lines [rad], length |E|.
    pub theta_tilde: DVector<f64>,
    /// Bus frequency deviations [rad/s]; double as the local imbalance price.
    pub omega: DVector<f64>,
    pub bids: BidState,
    /// Scalar balance price.
    pub lambda: f64,
    /// Congestion multipliers, length 2|E|, nonnegative along trajectories.
    pub eta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BidState {
    /// Quantity bids; dispatch follows them identically.
    Quantity { p: DVector<f64> },
    /// Price bids plus market dispatch state (aligned and naive variants).
    Price {
        alpha: DVector<f64>,
        q: DVector<f64>,
    },
    /// Price bids plus the market-internal virtual dispatch.
    Regularized {
        alpha: DVector<f64>,
        q_hat: DVector<f64>,
    },
}

impl SystemState {
    /// All-zero deviation state with `eta = 0`, inside the admissible initial
    /// set, shaped for the given mechanism.
    pub fn zero(variant: &MechanismVariant, n: usize, m: usize) -> Self {
        let bids = match variant {
            MechanismVariant::Quantity => BidState::Quantity {
                p: DVector::zeros(n),
            },
            MechanismVariant::PriceAligned | MechanismVariant::PriceMisalignedNaive => {
                BidState::Price {
                    alpha: DVector::zeros(n),
                    q: DVector::zeros(n),
                }
            }
            MechanismVariant::PriceMisalignedRegularized { .. } => BidState::Regularized {
                alpha: DVector::zeros(n),
                q_hat: DVector::zeros(n),
            },
        };
        SystemState {
            theta_tilde: DVector::zeros(m),
            omega: DVector::zeros(n),
            bids,
            lambda: 0.0,
            eta: DVector::zeros(2 * m),
        }
    }

    fn check_shape(
        &self,
        variant: &MechanismVariant,
        n: usize,
        m: usize,
    ) -> Result<(), DynamicsError> {
        let bid_ok = matches!(
            (&self.bids, variant),
            (BidState::Quantity { .. }, MechanismVariant::Quantity)
                | (BidState::Price { .. }, MechanismVariant::PriceAligned)
                | (
                    BidState::Price { .. },
                    MechanismVariant::PriceMisalignedNaive
                )
                | (
                    BidState::Regularized { .. },
                    MechanismVariant::PriceMisalignedRegularized { .. }
                )
        );
        if !bid_ok {
            return Err(DynamicsError::MechanismStateMismatch(format!(
                "state bid block does not match mechanism {}",
                variant.name()
            )));
        }
        let lens_ok = self.theta_tilde.len() == m
            && self.omega.len() == n
            && self.eta.len() == 2 * m
            && match &self.bids {
                BidState::Quantity { p } => p.len() == n,
                BidState::Price { alpha, q } => alpha.len() == n && q.len() == n,
                BidState::Regularized { alpha, q_hat } => alpha.len() == n && q_hat.len() == n,
            };
        if !lens_ok {
            return Err(DynamicsError::DimensionMismatch(
                "state block lengths do not match the network".into(),
            ));
        }
        Ok(())
    }

    /// Flat packed layout: theta, omega, bid blocks, lambda, eta.
    pub fn pack(&self) -> DVector<f64> {
        let mut data = Vec::with_capacity(self.dim());
        data.extend(self.theta_tilde.iter());
        data.extend(self.omega.iter());
        match &self.bids {
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
        data.push(self.lambda);
        data.extend(self.eta.iter());
        DVector::from_vec(data)
    }

    pub fn unpack(template: &SystemState, packed: &DVector<f64>) -> SystemState {
        let m = template.theta_tilde.len();
        let n = template.omega.len();
        let mut at = 0usize;
        let take = |at: &mut usize, len: usize| {
            let start = *at;
            let v = DVector::from_iterator(len, (start..start + len).map(|i| packed[i]));
            *at += len;
            v
        };
        let theta_tilde = take(&mut at, m);
        let omega = take(&mut at, n);
        let bids = match &template.bids {
            BidState::Quantity { .. } => BidState::Quantity {
                p: take(&mut at, n),
            },
            BidState::Price { .. } => BidState::Price {
                alpha: take(&mut at, n),
                q: take(&mut at, n),
            },
            BidState::Regularized { .. } => BidState::Regularized {
                alpha: take(&mut at, n),
                q_hat: take(&mut at, n),
            },
        };
        let lambda = packed[at];
        at += 1;
        let eta = take(&mut at, 2 * m);
        SystemState {
            theta_tilde,
            omega,
            bids,
            lambda,
            eta,
        }
    }

    pub fn dim(&self) -> usize {
        let bid_len = match &self.bids {
            BidState::Quantity { p } => p.len(),
            BidState::Price { alpha, q } => alpha.len() + q.len(),
            BidState::Regularized { alpha, q_hat } => alpha.len() + q_hat.len(),
        };
        self.theta_tilde.len() + self.omega.len() + bid_len + 1 + self.eta.len()
    }

    pub fn max_norm(&self) -> f64 {
        self.pack().abs().max()
    }

    pub fn is_finite(&self) -> bool {
        self.pack().iter().all(|x| x.is_finite())
    }

    pub fn alpha(&self) -> Option<&DVector<f64>> {
        match &self.bids {
            BidState::Quantity { .. } => None,
            BidState::Price { alpha, .. } | BidState::Regularized { alpha, .. } => Some(alpha),
        }
    }

    /// Dispatch implemented on the network, resolved per mechanism.
    pub fn dispatch(&self, mats: &DerivedMatrices, variant: &MechanismVariant) -> DVector<f64> {
        match (&self.bids, variant) {
            (BidState::Quantity { p }, _) => p.clone(),
            (BidState::Price { q, .. }, _) => q.clone(),
            (
                BidState::Regularized { alpha, q_hat },
                MechanismVariant::PriceMisalignedRegularized { rho },
            ) => {
                let pi = clearing_prices_unchecked(self.lambda, &self.eta, &self.omega, mats);
                (pi - alpha) / *rho + q_hat
            }
            (BidState::Regularized { q_hat, .. }, _) => q_hat.clone(),
        }
    }

    fn to_json_value(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        let vec_json = |v: &DVector<f64>| {
            serde_json::Value::Array(
                v.iter()
                    .map(|&x| serde_json::Value::from(x))
                    .collect::<Vec<_>>(),
            )
        };
        map.insert("theta_tilde".into(), vec_json(&self.theta_tilde));
        map.insert("omega".into(), vec_json(&self.omega));
        match &self.bids {
            BidState::Quantity { p } => {
                map.insert("p".into(), vec_json(p));
            }
            BidState::Price { alpha, q } => {
                map.insert("alpha".into(), vec_json(alpha));
                map.insert("q".into(), vec_json(q));
            }
            BidState::Regularized { alpha, q_hat } => {
                map.insert("alpha".into(), vec_json(alpha));
                map.insert("q_hat".into(), vec_json(q_hat));
            }
        }
        map.insert("lambda".into(), serde_json::Value::from(self.lambda));
        map.insert("eta".into(), vec_json(&self.eta));
        serde_json::Value::Object(map)
    }

    fn from_json_value(
        value: &serde_json::Value,
        variant: &MechanismVariant,
        n: usize,
        m: usize,
    ) -> Result<Self, DynamicsError> {
        let get_vec = |key: &str, len: usize| -> Result<DVector<f64>, DynamicsError> {
            match value.get(key) {
                None => Ok(DVector::zeros(len)),
                Some(serde_json::Value::Array(a)) => {
                    let vals: Option<Vec<f64>> = a.iter().map(|x| x.as_f64()).collect();
                    let vals = vals.ok_or_else(|| {
                        DynamicsError::Validation(format!("initial_state.{key}: expected numbers"))
                    })?;
                    if vals.len() != len {
                        return Err(DynamicsError::DimensionMismatch(format!(
                            "initial_state.{key} has length {}, expected {len}",
                            vals.len()
                        )));
                    }
                    Ok(DVector::from_vec(vals))
                }
                Some(_) => Err(DynamicsError::Validation(format!(
                    "initial_state.{key}: expected an array"
                ))),
            }
        };
        let mut state = SystemState::zero(variant, n, m);
        state.theta_tilde = get_vec("theta_tilde", m)?;
        state.omega = get_vec("omega", n)?;
        state.lambda = value
            .get("lambda")
            .map(|x| x.as_f64().unwrap_or(0.0))
            .unwrap_or(0.0);
        state.eta = get_vec("eta", 2 * m)?;
        state.bids = match variant {
            MechanismVariant::Quantity => BidState::Quantity {
                p: get_vec("p", n)?,
            },
            MechanismVariant::PriceAligned | MechanismVariant::PriceMisalignedNaive => {
                BidState::Price {
                    alpha: get_vec("alpha", n)?,
                    q: get_vec("q", n)?,
                }
            }
            MechanismVariant::PriceMisalignedRegularized { .. } => BidState::Regularized {
                alpha: get_vec("alpha", n)?,
                q_hat: get_vec("q_hat", n)?,
            },
        };
        Ok(state)
    }
}

/// Simulation scenario: demand step at t = 0, horizon, integrator step, the
/// mechanism with its time constants, and an optional explicit initial state.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub demand_step: BTreeMap<String, f64>,
    pub horizon: f64,
    pub dt: f64,
    pub mechanism: Mechanism,
    pub initial_state: Option<SystemState>,
}

#[derive(Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    demand_step: BTreeMap<String, f64>,
    horizon: f64,
    dt: f64,
    mechanism: MechanismVariant,
    #[serde(default)]
    time_constants: TimeConstants,
    #[serde(default)]
    initial_state: Option<serde_json::Value>,
}

impl Scenario {
    pub fn parse(text: &str, net: &NetworkModel) -> Result<Self, DynamicsError> {
        let file: ScenarioFile = serde_json::from_str(text)
            .map_err(|e| DynamicsError::Validation(format!("scenario JSON: {e}")))?;
        let mechanism = Mechanism {
            variant: file.mechanism,
            time_constants: file.time_constants,
        };
        let initial_state = match file.initial_state {
            None => None,
            Some(v) => Some(SystemState::from_json_value(
                &v,
                &mechanism.variant,
                net.n_buses(),
                net.n_lines(),
            )?),
        };
        let scenario = Scenario {
            demand_step: file.demand_step,
            horizon: file.horizon,
            dt: file.dt,
            mechanism,
            initial_state,
        };
        scenario.validate(net)?;
        Ok(scenario)
    }

    pub fn load(path: &std::path::Path, net: &NetworkModel) -> Result<Self, DynamicsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DynamicsError::Validation(format!("{}: {e}", path.display())))?;
        Self::parse(&text, net)
    }

    /// Returns mechanism warnings (e.g. rho outside the guaranteed range).
    pub fn validate(&self, net: &NetworkModel) -> Result<Vec<String>, DynamicsError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(DynamicsError::Validation(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(DynamicsError::Validation(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        for bus in self.demand_step.keys() {
            if net.bus_index(bus).is_none() {
                return Err(DynamicsError::Validation(format!(
                    "demand_step references unknown bus {bus}"
                )));
            }
        }
        if let Some(state) = &self.initial_state {
            state.check_shape(&self.mechanism.variant, net.n_buses(), net.n_lines())?;
            if state.eta.iter().any(|&e| e < 0.0) {
                return Err(DynamicsError::Validation(
                    "initial eta must be nonnegative".into(),
                ));
            }
        }
        self.mechanism.validate(net)
    }

    /// Network with the demand step applied; simulations and reference
    /// solutions both use this effective demand.
    pub fn stepped_network(&self, net: &NetworkModel) -> NetworkModel {
        let mut demand = net.demand();
        for (bus, delta) in &self.demand_step {
            if let Some(j) = net.bus_index(bus) {
                demand[j] += delta;
            }
        }
        net.with_demand(&demand)
    }
}

/// Element-wise projection: passes `y_j` when `y_j > 0` or `u_j > 0`, else 0.
/// Keeps multiplier trajectories nonnegative without a discontinuity at
/// interior points.
pub fn project_plus(y: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
    if y.len() != u.len() {
        return Err(DynamicsError::DimensionMismatch(format!(
            "project_plus: y has length {}, u has length {}",
            y.len(),
            u.len()
        )));
    }
    Ok(DVector::from_iterator(
        y.len(),
        y.iter()
            .zip(u.iter())
            .map(|(&yj, &uj)| if yj > 0.0 || uj > 0.0 { yj } else { 0.0 }),
    ))
}

fn clearing_prices_unchecked(
    lambda: f64,
    eta: &DVector<f64>,
    omega: &DVector<f64>,
    mats: &DerivedMatrices,
) -> DVector<f64> {
    let n = omega.len();
    let h_eta = &mats.stacked_shift * eta;
    DVector::from_iterator(n, (0..n).map(|j| lambda - h_eta[j] - omega[j]))
}

/// Transient locational marginal prices `pi = lambda 1 - H eta - omega`.
pub fn clearing_prices(
    lambda: f64,
    eta: &DVector<f64>,
    omega: &DVector<f64>,
    mats: &DerivedMatrices,
) -> Result<DVector<f64>, DynamicsError> {
    if eta.len() != 2 * mats.n_lines() || omega.len() != mats.n_buses() {
        return Err(DynamicsError::DimensionMismatch(format!(
            "clearing_prices: eta length {}, omega length {} for {} lines / {} buses",
            eta.len(),
            omega.len(),
            mats.n_lines(),
            mats.n_buses()
        )));
    }
    Ok(clearing_prices_unchecked(lambda, eta, omega, mats))
}

/// Time derivative of the closed-loop state under the given mechanism.
pub fn vector_field(
    state: &SystemState,
    net: &NetworkModel,
    mats: &DerivedMatrices,
    mech: &Mechanism,
) -> Result<SystemState, DynamicsError> {
    let n = net.n_buses();
    let m = net.n_lines();
    state.check_shape(&mech.variant, n, m)?;

    let tc = &mech.time_constants;
    let d = net.demand();
    let pi = clearing_prices_unchecked(state.lambda, &state.eta, &state.omega, mats);
    let q = state.dispatch(mats, &mech.variant);
    let injection = &q - &d;

    // Swing dynamics.
    let d_theta = mats.incidence.transpose() * &state.omega;
    let line_flow = &mats.incidence
        * DVector::from_iterator(
            m,
            state
                .theta_tilde
                .iter()
                .zip(mats.susceptance.iter())
                .map(|(&th, &b)| b * th),
        );
    let d_omega = DVector::from_iterator(
        n,
        (0..n).map(|j| {
            (injection[j] - net.buses()[j].damping * state.omega[j] - line_flow[j])
                / net.buses()[j].inertia
        }),
    );

    // Market pricing.
    let d_lambda = -injection.iter().sum::<f64>() / tc.lambda;
    let congestion_gap = mats.stacked_flow(&injection) - &mats.stacked_limits;
    let d_eta = project_plus(&congestion_gap, &state.eta)? / tc.eta;

    // Bidding and dispatch updates.
    let d_bids = match (&state.bids, &mech.variant) {
        (BidState::Quantity { p }, MechanismVariant::Quantity) => {
            let marginal = net.cost_gradient(p);
            BidState::Quantity {
                p: (&pi - marginal) / tc.p,
            }
        }
        (BidState::Price { alpha, q: qs }, MechanismVariant::PriceAligned) => {
            let desired = net.cost_inverse_gradient(alpha);
            BidState::Price {
                alpha: (qs - desired) / tc.alpha,
                q: (&pi - alpha) / tc.q,
            }
        }
        (BidState::Price { alpha, q: qs }, MechanismVariant::PriceMisalignedNaive) => {
            let desired = net.cost_inverse_gradient(&pi);
            BidState::Price {
                alpha: (qs - desired) / tc.alpha,
                q: (&pi - alpha) / tc.q,
            }
        }
        (
            BidState::Regularized { alpha, .. },
            MechanismVariant::PriceMisalignedRegularized { .. },
        ) => {
            let desired = net.cost_inverse_gradient(&pi);
            BidState::Regularized {
                alpha: (&q - desired) / tc.alpha,
                q_hat: (&pi - alpha) / tc.q_hat,
            }
        }
        _ => unreachable!("shape checked above"),
    };

    Ok(SystemState {
        theta_tilde: d_theta,
        omega: d_omega,
        bids: d_bids,
        lambda: d_lambda,
        eta: d_eta,
    })
}

/// One classical RK4 step followed by a component-wise clamp `eta >= 0`.
/// Deterministic; errors with `NonFiniteState` on NaN or infinity.
pub fn step(
    state: &SystemState,
    net: &NetworkModel,
    mats: &DerivedMatrices,
    mech: &Mechanism,
    dt: f64,
) -> Result<SystemState, DynamicsError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DynamicsError::Validation(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let eval = |packed: &DVector<f64>| -> Result<DVector<f64>, DynamicsError> {
        let s = SystemState::unpack(state, packed);
        Ok(vector_field(&s, net, mats, mech)?.pack())
    };
    let x = state.pack();
    let k1 = eval(&x)?;
    let k2 = eval(&(&x + &k1 * (dt / 2.0)))?;
    let k3 = eval(&(&x + &k2 * (dt / 2.0)))?;
    let k4 = eval(&(&x + &k3 * dt))?;
    let next = &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

    let mut next_state = SystemState::unpack(state, &next);
    for e in next_state.eta.iter_mut() {
        *e = e.max(0.0);
    }
    if !next_state.is_finite() {
        return Err(DynamicsError::NonFiniteState { t: f64::NAN });
    }
    Ok(next_state)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimulationStatus {
    Completed,
    /// State max-norm passed [`DIVERGENCE_LIMIT`] at the given time.
    Diverged {
        t: f64,
    },
}

/// Uniformly sampled closed-loop trajectory with derived series.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    /// Clearing prices per sample.
    pub prices: Vec<DVector<f64>>,
    /// Line flows per sample.
    pub flows: Vec<DVector<f64>>,
    /// Lyapunov value per sample when a reference equilibrium was supplied.
    pub lyapunov: Option<Vec<f64>>,
    pub status: SimulationStatus,
}

impl Trajectory {
    pub fn final_state(&self) -> &SystemState {
        self.states.last().expect("trajectory holds initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds initial state")
    }
}

/// Integrate the closed loop over `[0, horizon]`. The scenario's demand step
/// is applied to the network demand for the whole run. When `reference` is
/// supplied the Lyapunov value anchored at that equilibrium is recorded.
pub fn simulate(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    scenario: &Scenario,
    reference: Option<&PlannerSolution>,
) -> Result<Trajectory, DynamicsError> {
    scenario.validate(net)?;
    let stepped = scenario.stepped_network(net);
    let mech = &scenario.mechanism;
    let n = stepped.n_buses();
    let m = stepped.n_lines();

    let mut state = match &scenario.initial_state {
        Some(s) => s.clone(),
        None => SystemState::zero(&mech.variant, n, m),
    };

    let reference_state = reference.map(|sol| equilibrium_state(&mech.variant, sol));

    let steps = (scenario.horizon / scenario.dt).round() as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        prices: Vec::with_capacity(steps + 1),
        flows: Vec::with_capacity(steps + 1),
        lyapunov: reference_state
            .as_ref()
            .map(|_| Vec::with_capacity(steps + 1)),
        status: SimulationStatus::Completed,
    };

    let record =
        |traj: &mut Trajectory, t: f64, state: &SystemState| -> Result<(), DynamicsError> {
            traj.times.push(t);
            traj.prices.push(clearing_prices_unchecked(
                state.lambda,
                &state.eta,
                &state.omega,
                mats,
            ));
            traj.flows.push(DVector::from_iterator(
                m,
                state
                    .theta_tilde
                    .iter()
                    .zip(mats.susceptance.iter())
                    .map(|(&th, &b)| b * th),
            ));
            if let (Some(values), Some(reference)) = (traj.lyapunov.as_mut(), &reference_state) {
                values.push(crate::stability::lyapunov_value(
                    &stepped, mech, state, reference,
                )?);
            }
            traj.states.push(state.clone());
            Ok(())
        };

    record(&mut traj, 0.0, &state)?;
    for k in 0..steps {
        let t = (k + 1) as f64 * scenario.dt;
        state = match step(&state, &stepped, mats, mech, scenario.dt) {
            Ok(s) => s,
            Err(DynamicsError::NonFiniteState { .. }) => {
                return Err(DynamicsError::NonFiniteState { t })
            }
            Err(e) => return Err(e),
        };
        record(&mut traj, t, &state)?;
        if state.max_norm() > DIVERGENCE_LIMIT {
            traj.status = SimulationStatus::Diverged { t };
            break;
        }
    }
    Ok(traj)
}

/// Converged iff the field max-norm stays below `tol` over the trailing
/// `window` seconds. Returns the flag and the final state.
pub fn steady_state_detect(
    net: &NetworkModel,
    mats: &DerivedMatrices,
    scenario: &Scenario,
    traj: &Trajectory,
    window: f64,
    tol: f64,
) -> Result<(bool, SystemState), DynamicsError> {
    let final_state = traj.final_state().clone();
    if traj.status != SimulationStatus::Completed {
        return Ok((false, final_state));
    }
    let stepped = scenario.stepped_network(net);
    let t_end = traj.final_time();
    let mut worst = 0.0f64;
    for (t, state) in traj.times.iter().zip(traj.states.iter()) {
        if *t < t_end - window {
            continue;
        }
        let f = vector_field(state, &stepped, mats, &scenario.mechanism)?;
        worst = worst.max(f.max_norm());
    }
    Ok((worst < tol, final_state))
}

/// Map a closed-loop state into full planner coordinates for KKT checking.
/// Frequencies stand in for the imbalance price; the price bid of the
/// quantity mechanism is implicit and equals the clearing price.
pub fn map_to_planner_point(
    state: &SystemState,
    net: &NetworkModel,
    mats: &DerivedMatrices,
    mech: &Mechanism,
) -> Result<PrimalDualPoint, DynamicsError> {
    state.check_shape(&mech.variant, net.n_buses(), net.n_lines())?;
    let pi = clearing_prices_unchecked(state.lambda, &state.eta, &state.omega, mats);
    let q = state.dispatch(mats, &mech.variant);
    let (p, alpha) = match &state.bids {
        BidState::Quantity { p } => (p.clone(), pi.clone()),
        BidState::Price { alpha, .. } | BidState::Regularized { alpha, .. } => {
            (net.cost_inverse_gradient(alpha), alpha.clone())
        }
    };
    Ok(PrimalDualPoint {
        p,
        q,
        omega: state.omega.clone(),
        theta_tilde: state.theta_tilde.clone(),
        alpha,
        lambda: state.lambda,
        eta: state.eta.clone(),
        nu: state.omega.clone(),
    })
}

/// Closed-loop state corresponding to a planner optimum: every mechanism has
/// this point as an equilibrium of its vector field.
pub fn equilibrium_state(variant: &MechanismVariant, sol: &PlannerSolution) -> SystemState {
    let bids = match variant {
        MechanismVariant::Quantity => BidState::Quantity {
            p: sol.q_star.clone(),
        },
        MechanismVariant::PriceAligned | MechanismVariant::PriceMisalignedNaive => {
            BidState::Price {
                alpha: sol.alpha_star.clone(),
                q: sol.q_star.clone(),
            }
        }
        MechanismVariant::PriceMisalignedRegularized { .. } => BidState::Regularized {
            alpha: sol.alpha_star.clone(),
            q_hat: sol.q_star.clone(),
        },
    };
    SystemState {
        theta_tilde: sol.theta_tilde_star.clone(),
        omega: sol.omega_star.clone(),
        bids,
        lambda: sol.lambda_star,
        eta: sol.eta_star.clone(),
    }
}

/// Serialize a state for scenario `initial_state` blocks.
pub fn state_to_json(state: &SystemState) -> serde_json::Value {
    state.to_json_value()
}
