//! Multi-rate Erlang loss systems under complete sharing.
//!
//! A [`LossSystem`] has `K` subcarriers and a set of Poisson classes, each
//! asking for a fixed number of subcarriers. Its stationary law has product
//! form over the feasible occupancy vectors. Three evaluators are provided
//! (see [`evaluator`]): explicit enumeration, the occupancy recursion, and a
//! global-balance solve of the rate matrix.

pub mod discount;
pub mod evaluator;
pub mod model;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use discount::{default_discounts, HoppedDiscount, RelayOutcome};
pub use evaluator::{default_evaluators, LossEvaluator, Occupancy};
pub use model::{
    bs_system, compose_report, evaluate_blocking, rsms_system, BlockingDetail, BlockingReport, LossInputs,
    TailMasses, TrafficSpec,
};

/// Default cap on enumerated state counts.
pub const DEFAULT_MAX_STATES: usize = 200_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErlangError {
    #[error("state space exceeds {max_states} states")]
    TooLarge { max_states: usize },
    #[error("invalid loss system: {0}")]
    Invalid(String),
    #[error("singular balance equations")]
    Singular,
    #[error(transparent)]
    UnknownStrategy(#[from] crate::registry::UnknownStrategy),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassOrigin {
    Direct,
    Hopped,
    /// BS class carrying both direct and hopped calls of one demand.
    Merged,
    Unlabelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossClass {
    pub demand: u32,
    /// Offered load in erlangs.
    pub load: f64,
    pub origin: ClassOrigin,
}

impl LossClass {
    pub fn new(demand: u32, load: f64) -> Self {
        Self {
            demand,
            load,
            origin: ClassOrigin::Unlabelled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSystem {
    pub capacity: u32,
    pub classes: Vec<LossClass>,
}

impl LossSystem {
    pub fn new(capacity: u32, classes: Vec<LossClass>) -> Result<Self, ErlangError> {
        if capacity == 0 {
            return Err(ErlangError::Invalid("capacity must be at least 1".into()));
        }
        for c in &classes {
            if c.demand == 0 {
                return Err(ErlangError::Invalid("class demand must be at least 1".into()));
            }
            if !(c.load >= 0.0 && c.load.is_finite()) {
                return Err(ErlangError::Invalid(format!("class load must be finite and >= 0, got {}", c.load)));
            }
        }
        Ok(Self { capacity, classes })
    }

    pub fn from_pairs(capacity: u32, pairs: &[(u32, f64)]) -> Result<Self, ErlangError> {
        Self::new(capacity, pairs.iter().map(|&(d, l)| LossClass::new(d, l)).collect())
    }

    pub fn demands(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.iter().map(|c| c.demand)
    }

    pub fn occupancy_of(&self, state: &[u32]) -> u32 {
        state.iter().zip(&self.classes).map(|(u, c)| u * c.demand).sum()
    }

    /// Every loss rate scaled by `factor` (loads are unchanged).
    pub fn with_scaled_loads(&self, factor: f64) -> Self {
        Self {
            capacity: self.capacity,
            classes: self
                .classes
                .iter()
                .map(|c| LossClass {
                    load: c.load * factor,
                    ..*c
                })
                .collect(),
        }
    }
}

/// All occupancy vectors `U ≥ 0` with `Σ M_c U_c ≤ K`, in lexicographic order.
pub fn enumerate_states(sys: &LossSystem, max_states: usize) -> Result<Vec<Vec<u32>>, ErlangError> {
    fn walk(
        sys: &LossSystem,
        class: usize,
        remaining: u32,
        current: &mut Vec<u32>,
        out: &mut Vec<Vec<u32>>,
        max_states: usize,
    ) -> Result<(), ErlangError> {
        if class == sys.classes.len() {
            if out.len() == max_states {
                return Err(ErlangError::TooLarge { max_states });
            }
            out.push(current.clone());
            return Ok(());
        }
        let demand = sys.classes[class].demand;
        for u in 0..=remaining / demand {
            current.push(u);
            walk(sys, class + 1, remaining - u * demand, current, out, max_states)?;
            current.pop();
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(sys, 0, sys.capacity, &mut Vec::with_capacity(sys.classes.len()), &mut out, max_states)?;
    Ok(out)
}

/// Unnormalised log product-form weight `Σ_c (U_c ln ρ_c − ln U_c!)`.
fn log_weight(sys: &LossSystem, state: &[u32]) -> f64 {
    state
        .iter()
        .zip(&sys.classes)
        .map(|(&u, c)| {
            if u == 0 {
                0.0
            } else if c.load == 0.0 {
                f64::NEG_INFINITY
            } else {
                u as f64 * c.load.ln() - ln_factorial(u)
            }
        })
        .sum()
}

pub(crate) fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    pub states: Vec<Vec<u32>>,
    pub probabilities: Vec<f64>,
}

impl StateDistribution {
    pub fn probability(&self, state: &[u32]) -> Option<f64> {
        self.states.iter().position(|s| s == state).map(|i| self.probabilities[i])
    }
}

/// Product-form stationary law `P(U) ∝ Π ρ_c^{U_c}/U_c!` over the feasible set.
pub fn product_form_probabilities(sys: &LossSystem, max_states: usize) -> Result<StateDistribution, ErlangError> {
    let states = enumerate_states(sys, max_states)?;
    let logs: Vec<f64> = states.iter().map(|s| log_weight(sys, s)).collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(StateDistribution {
        states,
        probabilities: weights.into_iter().map(|w| w / total).collect(),
    })
}

/// States in which an arriving call of `class` does not fit.
pub fn blocking_set(sys: &LossSystem, class: usize, states: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let demand = sys.classes[class].demand;
    states
        .iter()
        .filter(|s| sys.occupancy_of(s) + demand > sys.capacity)
        .cloned()
        .collect()
}

/// Per-class blocking and its mixture over the class-membership law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockingVector {
    pub per_class: Vec<f64>,
    pub average: f64,
}

impl BlockingVector {
    /// `average = blocked_mass + Σ_c weights[c]·per_class[c]`.
    pub fn mixture(per_class: Vec<f64>, weights: &[f64], blocked_mass: f64) -> Self {
        debug_assert_eq!(per_class.len(), weights.len());
        let average = blocked_mass + per_class.iter().zip(weights).map(|(b, w)| b * w).sum::<f64>();
        Self { per_class, average }
    }
}

/// Classical Erlang-B via the stable recurrence `B(k) = ρB(k−1)/(k + ρB(k−1))`.
pub fn erlang_b(servers: u32, load: f64) -> f64 {
    (1..=servers).fold(1.0, |b, k| load * b / (k as f64 + load * b))
}
