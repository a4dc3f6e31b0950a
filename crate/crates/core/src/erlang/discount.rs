//! How RS-MS blocking thins the hopped stream offered to the BS.
//!
//! The BS sees hopped calls of BS-RS demand `a` at rate
//! `(1 − disc(a))·λ_H·P_BS-RS(a)`. The blocking formula indexes `disc` by
//! the BS class although the two legs have distinct demands, so several
//! readings are offered.

use std::fmt;
use std::sync::Arc;

use super::evaluator::Occupancy;
use crate::classes::{DemandPmf, HoppedDemand};
use crate::registry::{Named, Registry};

/// RS-side results needed to discount the hopped stream.
#[derive(Debug, Clone, Copy)]
pub struct RelayOutcome<'a> {
    pub occupancy: &'a Occupancy,
    pub p_bsrs: &'a DemandPmf,
    pub p_rsms: &'a DemandPmf,
    pub joint: &'a HoppedDemand,
    /// Average RS-MS blocking of a hopped call, tail-blocked mass included.
    pub average_blocking: f64,
}

pub trait HoppedDiscount: Named + Send + Sync + fmt::Debug {
    /// RS-MS blocking applied to hopped calls of BS-RS demand `bs_rs_demand`.
    fn rsms_blocking(&self, outcome: &RelayOutcome<'_>, bs_rs_demand: u32) -> f64;
}

/// Every BS-RS demand is discounted by the average RS-MS blocking.
#[derive(Debug, Clone, Copy, Default)]
pub struct Aggregate;

impl Named for Aggregate {
    fn name(&self) -> &'static str {
        "aggregate"
    }
}

impl HoppedDiscount for Aggregate {
    fn rsms_blocking(&self, outcome: &RelayOutcome<'_>, _bs_rs_demand: u32) -> f64 {
        outcome.average_blocking
    }
}

/// Conditions on the BS-RS demand through the joint pair law:
/// `Σ_b P(b | a)·B_RS(b)`, with RS-MS tail mass counted as blocked.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerPair;

impl Named for PerPair {
    fn name(&self) -> &'static str {
        "per-pair"
    }
}

impl HoppedDiscount for PerPair {
    fn rsms_blocking(&self, outcome: &RelayOutcome<'_>, a: u32) -> f64 {
        let pa = outcome.p_bsrs.probability(a);
        if pa <= 0.0 {
            return outcome.average_blocking;
        }
        let (mut admitted, mut blocked) = (0.0, 0.0);
        for (&(_, b), &p) in outcome.joint.pairs.range((a, 0)..=(a, u32::MAX)) {
            admitted += p;
            blocked += p * outcome.occupancy.blocking(b);
        }
        ((blocked + (pa - admitted).max(0.0)) / pa).min(1.0)
    }
}

/// Takes the RS blocking of a call whose RS-MS demand equals the BS class
/// demand, `B_RS(a)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LiteralIndex;

impl Named for LiteralIndex {
    fn name(&self) -> &'static str {
        "literal-index"
    }
}

impl HoppedDiscount for LiteralIndex {
    fn rsms_blocking(&self, outcome: &RelayOutcome<'_>, a: u32) -> f64 {
        outcome.occupancy.blocking(a)
    }
}

pub fn default_discounts() -> Registry<dyn HoppedDiscount> {
    let mut reg: Registry<dyn HoppedDiscount> = Registry::new("discount mode");
    reg.register(Arc::new(Aggregate))
        .register(Arc::new(PerPair))
        .register(Arc::new(LiteralIndex));
    reg
}
