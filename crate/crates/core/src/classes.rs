//! Subcarrier demand classes.
//!
//! A user with ISR `I` needs `M = ⌈A / log₁₀(1 + 1/I)⌉` subcarriers, with
//! `A = (R/W)·log₁₀2`. The largest ISR that `M` subcarriers can serve is
//! `T(M) = (10^(A/M) − 1)⁻¹`, so demand `M` owns the ISR interval
//! `(T(M−1), T(M)]` with `T(0) = 0`. Class probabilities follow from the
//! fitted ISR CDF evaluated at these thresholds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interference::{IsrModel, LinkKind};

/// Demand search stops once the remaining mass is below this.
const DEMAND_TAIL_CUTOFF: f64 = 1e-15;
const MAX_DEMAND_SCAN: u64 = 1_000_000;

pub const DEFAULT_CLASS_EPSILON: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("no demand has probability >= {epsilon}")]
    EmptyRange { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub rate_bps: f64,
    pub subcarrier_bandwidth_hz: f64,
}

impl RateSpec {
    pub fn new(rate_bps: f64, subcarrier_bandwidth_hz: f64) -> Result<Self, ClassError> {
        if !(rate_bps > 0.0 && rate_bps.is_finite()) {
            return Err(ClassError::InvalidParameter {
                name: "rate",
                reason: format!("must be positive, got {rate_bps}"),
            });
        }
        if !(subcarrier_bandwidth_hz > 0.0 && subcarrier_bandwidth_hz.is_finite()) {
            return Err(ClassError::InvalidParameter {
                name: "subcarrier_bandwidth",
                reason: format!("must be positive, got {subcarrier_bandwidth_hz}"),
            });
        }
        Ok(Self {
            rate_bps,
            subcarrier_bandwidth_hz,
        })
    }

    /// `A = (R/W)·log₁₀2`
    pub fn a(&self) -> f64 {
        self.rate_bps / self.subcarrier_bandwidth_hz * std::f64::consts::LOG10_2
    }

    /// Largest ISR that `demand` subcarriers can serve; `T(0) = 0`.
    pub fn isr_threshold(&self, demand: u64) -> f64 {
        if demand == 0 {
            return 0.0;
        }
        let exponent = self.a() * std::f64::consts::LN_10 / demand as f64;
        1.0 / exponent.exp_m1()
    }
}

/// Number of subcarriers needed at ISR `isr`. The result agrees exactly with
/// [`RateSpec::isr_threshold`]: `T(M−1) < isr <= T(M)`.
pub fn subcarriers_required(isr: f64, rate: &RateSpec) -> u64 {
    debug_assert!(isr > 0.0);
    let estimate = rate.a() / (1.0 / isr).ln_1p() * std::f64::consts::LN_10;
    let mut m = if estimate.is_finite() {
        (estimate.ceil() as u64).max(1)
    } else {
        1
    };
    while m > 1 && isr <= rate.isr_threshold(m - 1) {
        m -= 1;
    }
    while isr > rate.isr_threshold(m) {
        m += 1;
    }
    m
}

/// Consecutive integer demands `offset + 1 ..= offset + count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassScheme {
    pub offset: u32,
    pub count: u32,
}

impl ClassScheme {
    pub fn new(offset: u32, count: u32) -> Result<Self, ClassError> {
        if count == 0 {
            return Err(ClassError::InvalidParameter {
                name: "class_count",
                reason: "at least one class is required".into(),
            });
        }
        Ok(Self { offset, count })
    }

    /// Classes spanning `min..=max`, truncated to `max_classes` from below.
    pub fn from_range(min_demand: u32, max_demand: u32, max_classes: u32) -> Result<Self, ClassError> {
        if min_demand == 0 || max_demand < min_demand {
            return Err(ClassError::InvalidParameter {
                name: "demand_range",
                reason: format!("invalid range {min_demand}..={max_demand}"),
            });
        }
        Self::new(min_demand - 1, (max_demand - min_demand + 1).min(max_classes))
    }

    pub fn demand(&self, class: usize) -> u32 {
        self.offset + 1 + class as u32
    }

    pub fn demands(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.count).map(|r| self.offset + 1 + r)
    }

    pub fn min_demand(&self) -> u32 {
        self.offset + 1
    }

    pub fn max_demand(&self) -> u32 {
        self.offset + self.count
    }
}

/// ISR thresholds for a scheme: `b[0] = T(M¹ − 1)` and `b[r] = T(M^r)` for
/// `r = 1..=l`. Class `r` owns `(b[r−1], b[r]]`.
pub fn class_boundaries(rate: &RateSpec, scheme: &ClassScheme) -> Vec<f64> {
    std::iter::once(scheme.min_demand() as u64 - 1)
        .chain(scheme.demands().map(u64::from))
        .map(|m| rate.isr_threshold(m))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub link: LinkKind,
    pub scheme: ClassScheme,
    pub probabilities: Vec<f64>,
    /// Users needing fewer subcarriers than the lowest class.
    pub head_mass: f64,
    /// Users needing more subcarriers than the highest class.
    pub tail_mass: f64,
}

pub fn class_distribution(
    link: LinkKind,
    model: &IsrModel,
    rate: &RateSpec,
    scheme: &ClassScheme,
) -> ClassDistribution {
    let cdf: Vec<f64> = class_boundaries(rate, scheme)
        .into_iter()
        .map(|b| model.cdf_closed(b))
        .collect();
    ClassDistribution {
        link,
        scheme: *scheme,
        probabilities: cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect(),
        head_mass: cdf[0],
        tail_mass: 1.0 - cdf[cdf.len() - 1],
    }
}

/// What happens to users outside the class range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailPolicy {
    /// Tail users are blocked on arrival; head users join the lowest class.
    #[default]
    Block,
    /// Head users join the lowest class, tail users the highest.
    TruncateRenormalize,
}

impl TailPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            TailPolicy::Block => "block",
            TailPolicy::TruncateRenormalize => "truncate-renormalize",
        }
    }
}

/// Demand law seen by the loss model: probability per admitted demand plus
/// the mass blocked before admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandPmf {
    pub entries: Vec<(u32, f64)>,
    pub blocked_mass: f64,
}

impl DemandPmf {
    pub fn point(demand: u32) -> Self {
        Self {
            entries: vec![(demand, 1.0)],
            blocked_mass: 0.0,
        }
    }

    pub fn from_entries(entries: Vec<(u32, f64)>) -> Self {
        Self {
            entries,
            blocked_mass: 0.0,
        }
    }

    pub fn probability(&self, demand: u32) -> f64 {
        self.entries
            .iter()
            .filter(|(d, _)| *d == demand)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum::<f64>() + self.blocked_mass
    }

    pub fn max_demand(&self) -> u32 {
        self.entries.iter().map(|(d, _)| *d).max().unwrap_or(0)
    }

    pub fn mean_demand(&self) -> f64 {
        self.entries.iter().map(|(d, p)| *d as f64 * p).sum()
    }
}

impl ClassDistribution {
    pub fn total_mass(&self) -> f64 {
        self.probabilities.iter().sum::<f64>() + self.head_mass + self.tail_mass
    }

    pub fn demands(&self) -> impl Iterator<Item = u32> + '_ {
        self.scheme.demands()
    }

    pub fn effective(&self, policy: TailPolicy) -> DemandPmf {
        let mut probs = self.probabilities.clone();
        probs[0] += self.head_mass;
        let blocked_mass = match policy {
            TailPolicy::Block => self.tail_mass,
            TailPolicy::TruncateRenormalize => {
                let last = probs.len() - 1;
                probs[last] += self.tail_mass;
                0.0
            }
        };
        DemandPmf {
            entries: self.scheme.demands().zip(probs).collect(),
            blocked_mass,
        }
    }
}

/// Law of the demand over all integers `1, 2, …`; `probabilities[m − 1]` is
/// `P(M = m)`. Scanning stops when the remaining mass drops below 1e-15.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandDistribution {
    pub probabilities: Vec<f64>,
    pub residual: f64,
}

impl DemandDistribution {
    pub fn from_model(model: &IsrModel, rate: &RateSpec) -> Self {
        let mut probabilities = Vec::new();
        let mut prev = 0.0;
        for m in 1..=MAX_DEMAND_SCAN {
            let cdf = model.cdf_closed(rate.isr_threshold(m));
            probabilities.push((cdf - prev).max(0.0));
            prev = cdf;
            if 1.0 - cdf < DEMAND_TAIL_CUTOFF {
                break;
            }
        }
        Self {
            probabilities,
            residual: (1.0 - prev).max(0.0),
        }
    }

    pub fn probability(&self, demand: u32) -> f64 {
        demand
            .checked_sub(1)
            .and_then(|i| self.probabilities.get(i as usize))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Smallest and largest demand whose probability reaches `epsilon`.
pub fn detect_class_range(dist: &DemandDistribution, epsilon: f64) -> Result<(u32, u32), ClassError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(ClassError::InvalidParameter {
            name: "epsilon",
            reason: format!("must lie in (0, 1), got {epsilon}"),
        });
    }
    let hit = |(_, p): &(usize, &f64)| **p >= epsilon;
    let min = dist.probabilities.iter().enumerate().find(hit);
    let max = dist.probabilities.iter().enumerate().rev().find(hit);
    match (min, max) {
        (Some((lo, _)), Some((hi, _))) => Ok((lo as u32 + 1, hi as u32 + 1)),
        _ => Err(ClassError::EmptyRange { epsilon }),
    }
}

/// Joint BS-RS / RS-MS demand of a hopped call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoppedDemand {
    pub pairs: BTreeMap<(u32, u32), f64>,
    pub totals: BTreeMap<u32, f64>,
    /// Mass of calls with either leg blocked before admission.
    pub blocked_mass: f64,
}

impl HoppedDemand {
    /// `P(rs-ms demand = b | bs-rs demand = a)` over admitted pairs.
    pub fn conditional_rsms(&self, bs_rs_demand: u32) -> Vec<(u32, f64)> {
        let row: Vec<(u32, f64)> = self
            .pairs
            .range((bs_rs_demand, 0)..=(bs_rs_demand, u32::MAX))
            .map(|(&(_, b), &p)| (b, p))
            .collect();
        let total: f64 = row.iter().map(|(_, p)| p).sum();
        if total > 0.0 {
            row.into_iter().map(|(b, p)| (b, p / total)).collect()
        } else {
            row
        }
    }
}

/// Independent legs: `P(a, b) = P_BS-RS(a)·P_RS-MS(b)`; totals by convolution.
pub fn hopped_joint_distribution(p_bsrs: &DemandPmf, p_rsms: &DemandPmf) -> HoppedDemand {
    let mut pairs = BTreeMap::new();
    let mut totals = BTreeMap::new();
    for &(a, pa) in &p_bsrs.entries {
        for &(b, pb) in &p_rsms.entries {
            let p = pa * pb;
            *pairs.entry((a, b)).or_insert(0.0) += p;
            *totals.entry(a + b).or_insert(0.0) += p;
        }
    }
    let admitted_a: f64 = p_bsrs.entries.iter().map(|(_, p)| p).sum();
    let admitted_b: f64 = p_rsms.entries.iter().map(|(_, p)| p).sum();
    HoppedDemand {
        pairs,
        totals,
        blocked_mass: 1.0 - admitted_a * admitted_b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interference::{lognormal_fit, IsrMoments};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model(mu: f64, sigma: f64) -> IsrModel {
        IsrModel {
            mu,
            sigma,
            source_moments: IsrMoments { m1: 0.0, m2: 0.0 },
        }
    }

    /// `A = 1` exactly.
    fn unit_a() -> RateSpec {
        RateSpec::new(1.0, std::f64::consts::LOG10_2).unwrap()
    }

    #[test]
    fn a_is_consistent_with_rate_and_bandwidth() {
        let r = RateSpec::new(64e3, 15e3).unwrap();
        assert_relative_eq!(r.a(), 64.0 / 15.0 * 2f64.log10(), max_relative = 1e-12);
        assert!(RateSpec::new(0.0, 15e3).is_err());
        assert!(RateSpec::new(64e3, -1.0).is_err());
    }

    #[test]
    fn requirement_examples() {
        let r = unit_a();
        assert_relative_eq!(r.a(), 1.0, max_relative = 1e-15);
        assert_eq!(subcarriers_required(1e-12, &r), 1);
        assert_eq!(subcarriers_required(1.0, &r), 4);
        // ceil(1/log10 2) = ceil(3.3219…)
        assert_eq!((1.0 / 2f64.log10()).ceil() as u64, 4);
    }

    #[test]
    fn boundary_examples() {
        let r = unit_a();
        let scheme = ClassScheme::new(0, 5).unwrap();
        let b = class_boundaries(&r, &scheme);
        assert_eq!(b.len(), 6);
        assert_eq!(b[0], 0.0);
        assert_relative_eq!(b[1], 1.0 / 9.0, max_relative = 1e-14);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn boundaries_are_owned_by_their_class() {
        for rate in [64e3, 128e3, 256e3, 1024e3] {
            for w in [15e3, 30e3, 60e3] {
                let r = RateSpec::new(rate, w).unwrap();
                let scheme = ClassScheme::new(0, 60).unwrap();
                let b = class_boundaries(&r, &scheme);
                for (i, m) in scheme.demands().enumerate() {
                    assert_eq!(subcarriers_required(b[i + 1], &r), m as u64);
                    let above = b[i + 1] * (1.0 + 1e-12);
                    assert_eq!(subcarriers_required(above, &r), m as u64 + 1);
                }
            }
        }
    }

    #[test]
    fn requirement_is_constant_inside_each_interval() {
        let r = RateSpec::new(64e3, 15e3).unwrap();
        let scheme = ClassScheme::new(0, 40).unwrap();
        let b = class_boundaries(&r, &scheme);
        for (i, m) in scheme.demands().enumerate() {
            let (lo, hi) = (b[i], b[i + 1]);
            for k in 1..=1000 {
                let isr = lo + (hi - lo) * k as f64 / 1000.0;
                assert_eq!(subcarriers_required(isr, &r), m as u64, "isr {isr}");
            }
        }
    }

    #[test]
    fn single_wide_class_has_all_mass() {
        let r = RateSpec::new(64e3, 15e3).unwrap();
        let scheme = ClassScheme::new(0, 1).unwrap();
        // an ISR law concentrated far below T(1)
        let d = class_distribution(LinkKind::BsMs, &model(-40.0, 0.5), &r, &scheme);
        assert_relative_eq!(d.probabilities[0], 1.0, epsilon = 1e-12);
        assert_eq!(d.head_mass, 0.0);
    }

    #[test]
    fn point_mass_isr_falls_in_one_class() {
        let r = RateSpec::new(256e3, 15e3).unwrap();
        let isr = 0.37;
        let m = subcarriers_required(isr, &r) as u32;
        let point = lognormal_fit(isr, isr * isr).unwrap();
        let scheme = ClassScheme::new(0, m + 5).unwrap();
        let d = class_distribution(LinkKind::BsRs, &point, &r, &scheme);
        for (i, p) in d.probabilities.iter().enumerate() {
            assert_eq!(*p, if scheme.demand(i) == m { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn detect_range_examples() {
        let point = DemandDistribution {
            probabilities: vec![0.0, 0.0, 1.0],
            residual: 0.0,
        };
        assert_eq!(detect_class_range(&point, 0.5).unwrap(), (3, 3));

        let mut probabilities = vec![0.0; 4];
        probabilities.extend(std::iter::repeat(1.0 / 31.0).take(31));
        let uniform = DemandDistribution {
            probabilities,
            residual: 0.0,
        };
        let (lo, hi) = detect_class_range(&uniform, 0.03).unwrap();
        assert_eq!((lo, hi), (5, 35));
        let scheme = ClassScheme::from_range(lo, hi, 64).unwrap();
        assert_eq!((scheme.offset, scheme.count), (4, 31));

        assert_eq!(
            detect_class_range(&uniform, 0.5),
            Err(ClassError::EmptyRange { epsilon: 0.5 })
        );
        assert!(detect_class_range(&uniform, 0.0).is_err());
        assert!(detect_class_range(&uniform, 1.0).is_err());
    }

    #[test]
    fn scheme_truncates_to_max_classes() {
        let s = ClassScheme::from_range(5, 35, 15).unwrap();
        assert_eq!((s.min_demand(), s.max_demand()), (5, 19));
        assert!(ClassScheme::from_range(0, 3, 10).is_err());
        assert!(ClassScheme::new(2, 0).is_err());
    }

    #[test]
    fn effective_pmf_policies() {
        let d = ClassDistribution {
            link: LinkKind::RsMs,
            scheme: ClassScheme::new(1, 3).unwrap(),
            probabilities: vec![0.3, 0.4, 0.2],
            head_mass: 0.04,
            tail_mass: 0.06,
        };
        let blocked = d.effective(TailPolicy::Block);
        assert_eq!(blocked.entries[0].0, 2);
        assert_relative_eq!(blocked.entries[0].1, 0.34, epsilon = 1e-15);
        assert_eq!(blocked.blocked_mass, 0.06);
        assert_relative_eq!(blocked.total(), 1.0, epsilon = 1e-15);
        let folded = d.effective(TailPolicy::TruncateRenormalize);
        assert_relative_eq!(folded.entries[2].1, 0.26, epsilon = 1e-15);
        assert_eq!(folded.blocked_mass, 0.0);
        assert_relative_eq!(folded.total(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn hopped_joint_examples() {
        let half = DemandPmf::from_entries(vec![(1, 0.5), (2, 0.5)]);
        let j = hopped_joint_distribution(&half, &half);
        assert_relative_eq!(j.totals[&3], 0.5, epsilon = 1e-15);
        assert_relative_eq!(j.pairs[&(1, 2)] + j.pairs[&(2, 1)], 0.5, epsilon = 1e-15);

        let j = hopped_joint_distribution(&DemandPmf::point(2), &DemandPmf::point(1));
        assert_eq!(j.totals.len(), 1);
        assert_eq!(j.totals[&3], 1.0);
        assert_eq!(j.conditional_rsms(2), vec![(1, 1.0)]);
    }

    proptest! {
        #[test]
        fn class_mass_is_conserved(mu in -8.0f64..3.0, sigma in 0.0f64..3.0,
                                   offset in 0u32..20, count in 1u32..40,
                                   rate in 16e3f64..2e6) {
            let r = RateSpec::new(rate, 15e3).unwrap();
            let scheme = ClassScheme::new(offset, count).unwrap();
            let d = class_distribution(LinkKind::BsMs, &model(mu, sigma), &r, &scheme);
            prop_assert!((d.total_mass() - 1.0).abs() < 1e-10);
            prop_assert!(d.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
            if offset == 0 {
                prop_assert_eq!(d.head_mass, 0.0);
            }
        }

        #[test]
        fn joint_totals_are_a_convolution(
            a in proptest::collection::vec(0.0f64..1.0, 1..6),
            b in proptest::collection::vec(0.0f64..1.0, 1..6),
        ) {
            let norm = |v: &[f64], off: u32| {
                let s: f64 = v.iter().sum::<f64>().max(1e-12);
                DemandPmf::from_entries(v.iter().enumerate().map(|(i, p)| (i as u32 + off, p / s)).collect())
            };
            let (pa, pb) = (norm(&a, 1), norm(&b, 2));
            let j = hopped_joint_distribution(&pa, &pb);
            let mut direct = BTreeMap::new();
            for (x, px) in &pa.entries {
                for (y, py) in &pb.entries {
                    *direct.entry(x + y).or_insert(0.0) += px * py;
                }
            }
            for (t, p) in &direct {
                prop_assert!((j.totals[t] - p).abs() < 1e-15);
            }
            let sum: f64 = j.totals.values().sum();
            let pair_sum: f64 = j.pairs.values().sum();
            prop_assert!((sum - pair_sum).abs() < 1e-12);
            if a.iter().sum::<f64>() > 1e-9 && b.iter().sum::<f64>() > 1e-9 {
                prop_assert!((sum - 1.0).abs() < 1e-10);
            }
        }

        #[test]
        fn higher_rate_never_lowers_min_demand(mu in -6.0f64..1.0, sigma in 0.2f64..2.5,
                                               r1 in 16e3f64..1e6, factor in 1.0f64..8.0) {
            let m = model(mu, sigma);
            let lo = DemandDistribution::from_model(&m, &RateSpec::new(r1, 15e3).unwrap());
            let hi = DemandDistribution::from_model(&m, &RateSpec::new(r1 * factor, 15e3).unwrap());
            let (min_lo, _) = detect_class_range(&lo, 1e-4).unwrap();
            let (min_hi, _) = detect_class_range(&hi, 1e-4).unwrap();
            prop_assert!(min_hi >= min_lo);
        }
    }
}
