//! Decoupled RS and BS loss systems and the composed blocking report.
//!
//! The RS-MS system is solved first. Its blocking discounts the hopped stream
//! offered to the BS, where direct and hopped calls of equal demand share one
//! class. Hopped blocking combines both legs; overall blocking mixes direct
//! and hopped calls by the direct fraction `f`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::discount::{HoppedDiscount, RelayOutcome};
use super::evaluator::{LossEvaluator, Occupancy};
use super::{BlockingVector, ClassOrigin, ErlangError, LossClass, LossSystem};
use crate::classes::{hopped_joint_distribution, DemandPmf};
use crate::geometry::RELAYS_PER_CELL;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    /// Cell arrival rate λ.
    pub lambda: f64,
    /// Service rate μ (mean holding time 1/μ).
    pub mu: f64,
    /// Fraction of calls served directly by the BS.
    pub f: f64,
    /// Whether each RS sees `λ_H/6` (true) or the whole `λ_H` (false).
    pub per_rs_split: bool,
}

impl TrafficSpec {
    pub fn new(lambda: f64, mu: f64, f: f64, per_rs_split: bool) -> Result<Self, ErlangError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ErlangError::Invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(ErlangError::Invalid(format!("mu must be positive, got {mu}")));
        }
        if !(0.0..=1.0).contains(&f) {
            return Err(ErlangError::Invalid(format!("f must lie in [0, 1], got {f}")));
        }
        Ok(Self {
            lambda,
            mu,
            f,
            per_rs_split,
        })
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn direct_rate(&self) -> f64 {
        self.f * self.lambda
    }

    pub fn hopped_rate(&self) -> f64 {
        (1.0 - self.f) * self.lambda
    }

    /// Hopped arrival rate offered to one RS.
    pub fn hopped_rate_per_rs(&self) -> f64 {
        if self.per_rs_split {
            self.hopped_rate() / RELAYS_PER_CELL as f64
        } else {
            self.hopped_rate()
        }
    }
}

/// RS-MS loss system of one relay: one class per RS-MS demand.
pub fn rsms_system(traffic: &TrafficSpec, p_rsms: &DemandPmf, k_rs: u32) -> Result<LossSystem, ErlangError> {
    let rate = traffic.hopped_rate_per_rs();
    LossSystem::new(
        k_rs,
        p_rsms
            .entries
            .iter()
            .map(|&(demand, p)| LossClass {
                demand,
                load: rate * p / traffic.mu,
                origin: ClassOrigin::Hopped,
            })
            .collect(),
    )
}

/// BS loss system: direct BS-MS classes merged by demand with hopped BS-RS
/// classes, the latter thinned by `rsms_blocking(demand)`.
pub fn bs_system(
    traffic: &TrafficSpec,
    p_bsms: &DemandPmf,
    p_bsrs: &DemandPmf,
    rsms_blocking: impl Fn(u32) -> f64,
    k_bs: u32,
) -> Result<LossSystem, ErlangError> {
    let mut merged: BTreeMap<u32, (f64, bool, bool)> = BTreeMap::new();
    for &(m, p) in &p_bsms.entries {
        let e = merged.entry(m).or_insert((0.0, false, false));
        e.0 += traffic.direct_rate() * p / traffic.mu;
        e.1 = true;
    }
    for &(m, p) in &p_bsrs.entries {
        let e = merged.entry(m).or_insert((0.0, false, false));
        e.0 += (1.0 - rsms_blocking(m)) * traffic.hopped_rate() * p / traffic.mu;
        e.2 = true;
    }
    LossSystem::new(
        k_bs,
        merged
            .into_iter()
            .map(|(demand, (load, direct, hopped))| LossClass {
                demand,
                load,
                origin: match (direct, hopped) {
                    (true, true) => ClassOrigin::Merged,
                    (true, false) => ClassOrigin::Direct,
                    _ => ClassOrigin::Hopped,
                },
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TailMasses {
    pub bs_ms: f64,
    pub bs_rs: f64,
    pub rs_ms: f64,
}

/// Blocking figures for one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockingReport {
    pub lambda: f64,
    pub p_b_d: f64,
    pub p_b_hbr: f64,
    pub p_b_hrm: f64,
    pub p_b_h: f64,
    pub p_b_overall: f64,
    pub tail_block_bs_ms: f64,
    pub tail_block_bs_rs: f64,
    pub tail_block_rs_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_hash: Option<String>,
}

/// Link blockings (tail-blocked mass already included) to report fields.
pub fn compose_report(
    traffic: &TrafficSpec,
    p_b_d: f64,
    p_b_hbr: f64,
    p_b_hrm: f64,
    tails: TailMasses,
) -> BlockingReport {
    let p_b_h = 1.0 - (1.0 - p_b_hbr) * (1.0 - p_b_hrm);
    BlockingReport {
        lambda: traffic.lambda,
        p_b_d,
        p_b_hbr,
        p_b_hrm,
        p_b_h,
        p_b_overall: traffic.f * p_b_d + (1.0 - traffic.f) * p_b_h,
        tail_block_bs_ms: tails.bs_ms,
        tail_block_bs_rs: tails.bs_rs,
        tail_block_rs_ms: tails.rs_ms,
        scenario_hash: None,
    }
}

/// Everything the decoupled analysis needs for one operating point.
#[derive(Debug, Clone)]
pub struct LossInputs {
    pub traffic: TrafficSpec,
    pub k_bs: u32,
    pub k_rs: u32,
    pub p_bsms: DemandPmf,
    pub p_bsrs: DemandPmf,
    pub p_rsms: DemandPmf,
    pub evaluator: Arc<dyn LossEvaluator>,
    pub discount: Arc<dyn HoppedDiscount>,
}

#[derive(Debug, Clone)]
pub struct BlockingDetail {
    pub report: BlockingReport,
    pub rs_system: LossSystem,
    pub bs_system: LossSystem,
    pub rs_occupancy: Occupancy,
    pub bs_occupancy: Occupancy,
    /// Per RS-MS class, mixed over `p_rsms`.
    pub rsms: BlockingVector,
    /// Per BS-MS class, mixed over `p_bsms`.
    pub direct: BlockingVector,
    /// Per BS-RS class, mixed over `p_bsrs`.
    pub hopped_bs: BlockingVector,
}

fn link_vector(pmf: &DemandPmf, occ: &Occupancy) -> BlockingVector {
    let per_class = pmf.entries.iter().map(|(d, _)| occ.blocking(*d)).collect();
    let weights: Vec<f64> = pmf.entries.iter().map(|(_, p)| *p).collect();
    BlockingVector::mixture(per_class, &weights, pmf.blocked_mass)
}

pub fn evaluate_blocking(inputs: &LossInputs) -> Result<BlockingDetail, ErlangError> {
    let rs_system = rsms_system(&inputs.traffic, &inputs.p_rsms, inputs.k_rs)?;
    let rs_occupancy = inputs.evaluator.occupancy(&rs_system)?;
    let rsms = link_vector(&inputs.p_rsms, &rs_occupancy);

    let joint = hopped_joint_distribution(&inputs.p_bsrs, &inputs.p_rsms);
    let outcome = RelayOutcome {
        occupancy: &rs_occupancy,
        p_bsrs: &inputs.p_bsrs,
        p_rsms: &inputs.p_rsms,
        joint: &joint,
        average_blocking: rsms.average,
    };
    let bs_system = bs_system(
        &inputs.traffic,
        &inputs.p_bsms,
        &inputs.p_bsrs,
        |a| inputs.discount.rsms_blocking(&outcome, a),
        inputs.k_bs,
    )?;
    let bs_occupancy = inputs.evaluator.occupancy(&bs_system)?;
    let direct = link_vector(&inputs.p_bsms, &bs_occupancy);
    let hopped_bs = link_vector(&inputs.p_bsrs, &bs_occupancy);

    let report = compose_report(
        &inputs.traffic,
        direct.average,
        hopped_bs.average,
        rsms.average,
        TailMasses {
            bs_ms: inputs.p_bsms.blocked_mass,
            bs_rs: inputs.p_bsrs.blocked_mass,
            rs_ms: inputs.p_rsms.blocked_mass,
        },
    );
    Ok(BlockingDetail {
        report,
        rs_system,
        bs_system,
        rs_occupancy,
        bs_occupancy,
        rsms,
        direct,
        hopped_bs,
    })
}
