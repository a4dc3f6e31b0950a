//! End-to-end analysis: layout, per-link ISR fits, class tables, then the
//! decoupled loss model at each arrival rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{
    class_distribution, detect_class_range, ClassDistribution, ClassError, ClassScheme, DemandDistribution,
    DemandPmf, RateSpec, TailPolicy, DEFAULT_CLASS_EPSILON,
};
use crate::erlang::{
    default_discounts, default_evaluators, evaluate_blocking, BlockingDetail, BlockingReport, ErlangError,
    LossInputs, TrafficSpec,
};
use crate::geometry::{build_layout_with, CellLayout, GeometryError, LayoutOptions, FIRST_TIER_CELLS, RELAYS_PER_CELL};
use crate::interference::{
    converged_spatial_moments, isr_moments, lognormal_fit, shadow_ratio_moments, InterferenceError, LinkGeometry,
    LinkKind, LinkModel, RsInterfererSet, ShadowingSpec, DEFAULT_SUBDIVISIONS, QUADRATURE_TOLERANCE,
};
use crate::registry::UnknownStrategy;
use crate::simulator::{HoppedLaw, SimScenario};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("constraint `{name}` violated: {detail}")]
    Constraint { name: &'static str, detail: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Interference(#[from] InterferenceError),
    #[error("{link}: {source}")]
    Class { link: LinkKind, source: ClassError },
    #[error(transparent)]
    Erlang(#[from] ErlangError),
    #[error(transparent)]
    Strategy(#[from] UnknownStrategy),
}

/// Shadowing standard deviation per link, dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSigmas {
    pub bs_ms: f64,
    pub bs_rs: f64,
    pub rs_ms: f64,
}

impl LinkSigmas {
    pub fn get(&self, link: LinkKind) -> f64 {
        match link {
            LinkKind::BsMs => self.bs_ms,
            LinkKind::BsRs => self.bs_rs,
            LinkKind::RsMs => self.rs_ms,
        }
    }
}

/// Demand laws that replace the fitted ones, e.g. for hand-built examples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedDemands {
    pub bs_ms: Option<Vec<(u32, f64)>>,
    pub bs_rs: Option<Vec<(u32, f64)>>,
    pub rs_ms: Option<Vec<(u32, f64)>>,
}

impl FixedDemands {
    pub fn get(&self, link: LinkKind) -> Option<&[(u32, f64)]> {
        match link {
            LinkKind::BsMs => self.bs_ms.as_deref(),
            LinkKind::BsRs => self.bs_rs.as_deref(),
            LinkKind::RsMs => self.rs_ms.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSettings {
    pub start_subdivisions: usize,
    pub tolerance: f64,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            start_subdivisions: DEFAULT_SUBDIVISIONS,
            tolerance: QUADRATURE_TOLERANCE,
        }
    }
}

/// Everything except the arrival rate. Defaults: 1732 m sites, 10 MHz in
/// 15 kHz subcarriers, 480 BS and 30 RS subcarriers, R = 64 kbps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub inter_bs_distance: f64,
    /// `None` keeps the equal-area sub-cell size.
    pub subcell_circumradius: Option<f64>,
    pub system_bandwidth_hz: f64,
    pub subcarrier_bandwidth_hz: f64,
    pub k_bs: u32,
    pub k_rs: u32,
    pub interferers: usize,
    pub path_loss_exponent: f64,
    pub sigma_db: LinkSigmas,
    pub rate_bps: f64,
    pub direct_fraction: f64,
    pub mu: f64,
    pub per_rs_split: bool,
    pub class_epsilon: f64,
    pub max_classes: u32,
    pub tail_policy: TailPolicy,
    pub discount: String,
    pub evaluator: String,
    pub rs_interferers: RsInterfererSet,
    pub quadrature: QuadratureSettings,
    pub fixed_demands: FixedDemands,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            inter_bs_distance: 1732.0,
            subcell_circumradius: None,
            system_bandwidth_hz: 10e6,
            subcarrier_bandwidth_hz: 15e3,
            k_bs: 480,
            k_rs: 30,
            interferers: FIRST_TIER_CELLS,
            path_loss_exponent: 3.5,
            sigma_db: LinkSigmas {
                bs_ms: 8.0,
                bs_rs: 4.0,
                rs_ms: 8.0,
            },
            rate_bps: 64e3,
            direct_fraction: 0.5,
            mu: 1.0,
            per_rs_split: true,
            class_epsilon: DEFAULT_CLASS_EPSILON,
            max_classes: 64,
            tail_policy: TailPolicy::Block,
            discount: "aggregate".into(),
            evaluator: "recursion".into(),
            rs_interferers: RsInterfererSet::SameOffset,
            quadrature: QuadratureSettings::default(),
            fixed_demands: FixedDemands::default(),
        }
    }
}

fn constraint(name: &'static str, ok: bool, detail: impl FnOnce() -> String) -> Result<(), PipelineError> {
    if ok {
        Ok(())
    } else {
        Err(PipelineError::Constraint { name, detail: detail() })
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("inter_bs_distance", self.inter_bs_distance),
            ("system_bandwidth", self.system_bandwidth_hz),
            ("subcarrier_bandwidth", self.subcarrier_bandwidth_hz),
            ("rate", self.rate_bps),
            ("mu", self.mu),
            ("quadrature.tolerance", self.quadrature.tolerance),
        ];
        for (name, v) in positive {
            constraint(name, v > 0.0 && v.is_finite(), || format!("must be positive and finite, got {v}"))?;
        }
        constraint("k_bs", self.k_bs > 0, || "must be at least 1".into())?;
        constraint("k_rs", self.k_rs > 0, || "must be at least 1".into())?;
        let available = self.system_bandwidth_hz / self.subcarrier_bandwidth_hz;
        let used = self.k_bs as f64 + RELAYS_PER_CELL as f64 * self.k_rs as f64;
        constraint("subcarrier_budget", used <= available + 1e-9, || {
            format!("K_BS + 6·K_RS = {used} exceeds system_bandwidth / W = {available}")
        })?;
        constraint("interferers", (1..=FIRST_TIER_CELLS).contains(&self.interferers), || {
            format!("must lie in 1..={FIRST_TIER_CELLS}, got {}", self.interferers)
        })?;
        constraint("beta", self.path_loss_exponent > 2.0, || {
            format!("path-loss exponent must exceed 2, got {}", self.path_loss_exponent)
        })?;
        for link in LinkKind::ALL {
            let s = self.sigma_db.get(link);
            constraint("sigma", s >= 0.0 && s.is_finite(), || format!("{link} sigma must be >= 0, got {s}"))?;
        }
        constraint("f", (0.0..=1.0).contains(&self.direct_fraction), || {
            format!("direct fraction must lie in [0, 1], got {}", self.direct_fraction)
        })?;
        constraint("class_epsilon", self.class_epsilon > 0.0 && self.class_epsilon < 1.0, || {
            format!("must lie in (0, 1), got {}", self.class_epsilon)
        })?;
        constraint("max_classes", self.max_classes >= 1, || "must be at least 1".into())?;
        constraint("quadrature.start_subdivisions", self.quadrature.start_subdivisions >= 1, || {
            "must be at least 1".into()
        })?;
        for link in LinkKind::ALL {
            if let Some(entries) = self.fixed_demands.get(link) {
                let total: f64 = entries.iter().map(|(_, p)| p).sum();
                let ok = !entries.is_empty()
                    && entries.iter().all(|(_, p)| *p >= 0.0)
                    && (total - 1.0).abs() < 1e-9;
                constraint("fixed_demands", ok, || format!("{link} law must be non-negative and sum to 1"))?;
            }
        }
        default_evaluators().get(&self.evaluator)?;
        default_discounts().get(&self.discount)?;
        Ok(())
    }

    pub fn layout(&self) -> Result<CellLayout, PipelineError> {
        let options = LayoutOptions {
            subcell_circumradius: self.subcell_circumradius,
        };
        Ok(build_layout_with(self.inter_bs_distance, options)?)
    }

    pub fn rate(&self) -> Result<RateSpec, PipelineError> {
        RateSpec::new(self.rate_bps, self.subcarrier_bandwidth_hz).map_err(|source| PipelineError::Class {
            link: LinkKind::BsMs,
            source,
        })
    }

    pub fn traffic(&self, lambda: f64) -> Result<TrafficSpec, PipelineError> {
        Ok(TrafficSpec::new(lambda, self.mu, self.direct_fraction, self.per_rs_split)?)
    }

    /// Geometry of one link (relay 0 stands for all six by symmetry).
    pub fn link_geometry(&self, layout: &CellLayout, link: LinkKind) -> Result<LinkGeometry, PipelineError> {
        let shadowing = ShadowingSpec::uniform(self.sigma_db.get(link))?;
        let beta = self.path_loss_exponent;
        let mut geom = match link {
            LinkKind::BsMs => LinkGeometry::bs_ms(layout, beta, shadowing)?,
            LinkKind::BsRs => LinkGeometry::bs_rs(layout, 0, beta, shadowing)?,
            LinkKind::RsMs => LinkGeometry::rs_ms(layout, 0, self.rs_interferers, beta, shadowing)?,
        };
        geom.interferers.truncate(self.interferers);
        Ok(geom)
    }
}

/// Class table of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkClasses {
    pub link: LinkKind,
    pub demand: DemandDistribution,
    pub range: (u32, u32),
    pub distribution: ClassDistribution,
    /// Law handed to the loss model after the tail policy.
    pub pmf: DemandPmf,
}

/// Lognormal fit of one link with quadrature refined to tolerance.
pub fn fit_link_converged(geom: &LinkGeometry, settings: &QuadratureSettings) -> Result<LinkModel, PipelineError> {
    let (spatial, _) = converged_spatial_moments(geom, settings.start_subdivisions, settings.tolerance)?;
    let shadow = shadow_ratio_moments(geom.shadowing);
    let m = isr_moments(&spatial, &shadow);
    Ok(LinkModel {
        link: geom.kind,
        spatial,
        shadow,
        model: lognormal_fit(m.m1, m.m2)?,
    })
}

pub fn link_classes(scenario: &Scenario, model: &LinkModel) -> Result<LinkClasses, PipelineError> {
    let link = model.link;
    let wrap = |source| PipelineError::Class { link, source };
    let rate = scenario.rate()?;
    let demand = DemandDistribution::from_model(&model.model, &rate);
    let (range, distribution, pmf) = match scenario.fixed_demands.get(link) {
        Some(entries) => {
            let pmf = DemandPmf::from_entries(entries.to_vec());
            let lo = entries.iter().map(|e| e.0).min().unwrap_or(1).max(1);
            let hi = pmf.max_demand().max(lo);
            let scheme = ClassScheme::new(lo - 1, hi - lo + 1).map_err(wrap)?;
            let probabilities = scheme.demands().map(|d| pmf.probability(d)).collect();
            let distribution = ClassDistribution {
                link,
                scheme,
                probabilities,
                head_mass: 0.0,
                tail_mass: 0.0,
            };
            ((lo, hi), distribution, pmf)
        }
        None => {
            let range = detect_class_range(&demand, scenario.class_epsilon).map_err(wrap)?;
            let scheme = ClassScheme::from_range(range.0, range.1, scenario.max_classes).map_err(wrap)?;
            let distribution = class_distribution(link, &model.model, &rate, &scheme);
            let pmf = distribution.effective(scenario.tail_policy);
            (range, distribution, pmf)
        }
    };
    Ok(LinkClasses {
        link,
        demand,
        range,
        distribution,
        pmf,
    })
}

/// Fitted models and class tables for a scenario; evaluating an arrival rate
/// only runs the loss model.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub scenario: Scenario,
    pub layout: CellLayout,
    /// In [`LinkKind::ALL`] order.
    pub links: Vec<LinkModel>,
    pub classes: Vec<LinkClasses>,
}

impl Analysis {
    pub fn prepare(scenario: &Scenario) -> Result<Self, PipelineError> {
        scenario.validate()?;
        let layout = scenario.layout()?;
        let links = LinkKind::ALL
            .iter()
            .map(|&k| fit_link_converged(&scenario.link_geometry(&layout, k)?, &scenario.quadrature))
            .collect::<Result<Vec<_>, _>>()?;
        let classes = links
            .iter()
            .map(|m| link_classes(scenario, m))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            scenario: scenario.clone(),
            layout,
            links,
            classes,
        })
    }

    pub fn link(&self, link: LinkKind) -> &LinkClasses {
        &self.classes[link as usize]
    }

    pub fn pmf(&self, link: LinkKind) -> &DemandPmf {
        &self.link(link).pmf
    }

    pub fn loss_inputs(&self, lambda: f64) -> Result<LossInputs, PipelineError> {
        Ok(LossInputs {
            traffic: self.scenario.traffic(lambda)?,
            k_bs: self.scenario.k_bs,
            k_rs: self.scenario.k_rs,
            p_bsms: self.pmf(LinkKind::BsMs).clone(),
            p_bsrs: self.pmf(LinkKind::BsRs).clone(),
            p_rsms: self.pmf(LinkKind::RsMs).clone(),
            evaluator: default_evaluators().get(&self.scenario.evaluator)?,
            discount: default_discounts().get(&self.scenario.discount)?,
        })
    }

    pub fn evaluate(&self, lambda: f64) -> Result<BlockingDetail, PipelineError> {
        Ok(evaluate_blocking(&self.loss_inputs(lambda)?)?)
    }

    /// Independent evaluations, in input order.
    pub fn sweep(&self, lambdas: &[f64]) -> Result<Vec<BlockingReport>, PipelineError> {
        lambdas
            .par_iter()
            .map(|&l| self.evaluate(l).map(|d| d.report))
            .collect()
    }

    /// Simulation counterpart. Without the per-relay split every relay sees
    /// the whole hopped stream, which only a single-relay cell reproduces.
    pub fn sim_scenario(&self, lambda: f64) -> Result<SimScenario, PipelineError> {
        Ok(SimScenario {
            traffic: self.scenario.traffic(lambda)?,
            k_bs: self.scenario.k_bs,
            k_rs: self.scenario.k_rs,
            relays: if self.scenario.per_rs_split { RELAYS_PER_CELL } else { 1 },
            direct: self.pmf(LinkKind::BsMs).clone(),
            hopped: HoppedLaw::Independent {
                bs_rs: self.pmf(LinkKind::BsRs).clone(),
                rs_ms: self.pmf(LinkKind::RsMs).clone(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erlang::erlang_b;

    #[test]
    fn defaults_validate() {
        Scenario::default().validate().unwrap();
    }

    #[test]
    fn budget_violation_is_named() {
        let sc = Scenario {
            k_bs: 600,
            ..Scenario::default()
        };
        match sc.validate() {
            Err(PipelineError::Constraint { name, .. }) => assert_eq!(name, "subcarrier_budget"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_strategy_is_rejected() {
        let sc = Scenario {
            evaluator: "magic".into(),
            ..Scenario::default()
        };
        assert!(matches!(sc.validate(), Err(PipelineError::Strategy(_))));
    }

    #[test]
    fn table_defaults_give_sane_classes() {
        let a = Analysis::prepare(&Scenario::default()).unwrap();
        for c in &a.classes {
            let total = c.distribution.probabilities.iter().sum::<f64>()
                + c.distribution.head_mass
                + c.distribution.tail_mass;
            assert!((total - 1.0).abs() < 1e-10, "{}: {total}", c.link);
            assert!(c.range.0 >= 1 && c.range.0 <= c.range.1);
            assert!((c.pmf.total() - 1.0).abs() < 1e-10);
        }
        // a fixed relay sees less spread than a random user
        assert!(a.links[LinkKind::BsRs as usize].model.sigma < a.links[LinkKind::BsMs as usize].model.sigma);
    }

    #[test]
    fn point_mass_direct_only_is_erlang_b() {
        let sc = Scenario {
            k_bs: 10,
            direct_fraction: 1.0,
            fixed_demands: FixedDemands {
                bs_ms: Some(vec![(1, 1.0)]),
                ..FixedDemands::default()
            },
            ..Scenario::default()
        };
        let a = Analysis::prepare(&sc).unwrap();
        for (lambda, r) in [1.0, 5.0, 8.0, 20.0].iter().zip(a.sweep(&[1.0, 5.0, 8.0, 20.0]).unwrap()) {
            assert!((r.p_b_overall - erlang_b(10, *lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn simulation_relay_count_follows_load_split() {
        let a = Analysis::prepare(&Scenario::default()).unwrap();
        assert_eq!(a.sim_scenario(3.0).unwrap().relays, RELAYS_PER_CELL);
        let a = Analysis::prepare(&Scenario {
            per_rs_split: false,
            ..Scenario::default()
        })
        .unwrap();
        assert_eq!(a.sim_scenario(3.0).unwrap().relays, 1);
    }
}
