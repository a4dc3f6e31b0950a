//! Discrete-event simulation of the BS and RS subcarrier pools.
//!
//! Calls arrive as a Poisson stream; each is direct with probability `f`,
//! otherwise hopped and routed uniformly to one relay. Demands are drawn from
//! the per-link laws and holding times are exponential. Two admission modes
//! are supported:
//!
//! * `coupled`: a hopped call is admitted only if both its BS-RS and RS-MS
//!   demands fit at once;
//! * `decoupled`: the RS admits a hopped leg against its own pool; legs that
//!   pass are then offered to the BS. By default a leg blocked at the BS
//!   gives its RS subcarriers back at once; [`RsLegPolicy::Hold`] keeps them
//!   for the leg's holding time instead, which makes the RS pool a loss
//!   system fed by the whole hopped stream.
//!
//! Every random purpose (arrivals, routing, demands, holding) has its own
//! generator so that both modes see identical call sequences.

mod stats;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{DemandPmf, HoppedDemand};
use crate::erlang::{BlockingReport, TrafficSpec};
use crate::geometry::RELAYS_PER_CELL;

pub use stats::{student_t_half_width, BlockingEstimate, ModeComparison, StreamEstimate, StreamGap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    #[default]
    Decoupled,
    Coupled,
}

impl SimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SimMode::Decoupled => "decoupled",
            SimMode::Coupled => "coupled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HoldingModel {
    /// One holding time per call; both legs leave together.
    #[default]
    Single,
    /// Independent holding times for the BS-RS and RS-MS legs.
    SplitHolding,
}

/// Fate of a decoupled-mode RS seizure whose BS leg is blocked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RsLegPolicy {
    #[default]
    Release,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: SimMode,
    pub horizon: f64,
    pub warmup: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub holding: HoldingModel,
    pub rs_leg: RsLegPolicy,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.warmup >= 0.0 && self.warmup.is_finite()) {
            return Err(SimError::InvalidConfig(format!("warmup must be finite and >= 0, got {}", self.warmup)));
        }
        if !(self.horizon > self.warmup && self.horizon.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "horizon ({}) must exceed warmup ({})",
                self.horizon, self.warmup
            )));
        }
        if self.replications == 0 {
            return Err(SimError::InvalidConfig("at least one replication is required".into()));
        }
        Ok(())
    }
}

/// Law of a hopped call's `(BS-RS, RS-MS)` demand. `None` marks a leg that
/// falls outside the class range and is blocked on arrival.
#[derive(Debug, Clone, PartialEq)]
pub enum HoppedLaw {
    Independent { bs_rs: DemandPmf, rs_ms: DemandPmf },
    /// Explicit pair probabilities; need not factorise.
    Joint(Vec<((u32, u32), f64)>),
}

impl HoppedLaw {
    pub fn from_joint(joint: &HoppedDemand) -> Self {
        HoppedLaw::Joint(joint.pairs.iter().map(|(&k, &p)| (k, p)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub traffic: TrafficSpec,
    pub k_bs: u32,
    pub k_rs: u32,
    /// Number of relays sharing the hopped stream.
    pub relays: usize,
    pub direct: DemandPmf,
    pub hopped: HoppedLaw,
}

impl SimScenario {
    pub fn new(
        traffic: TrafficSpec,
        k_bs: u32,
        k_rs: u32,
        direct: DemandPmf,
        p_bsrs: DemandPmf,
        p_rsms: DemandPmf,
    ) -> Self {
        Self {
            traffic,
            k_bs,
            k_rs,
            relays: RELAYS_PER_CELL,
            direct,
            hopped: HoppedLaw::Independent {
                bs_rs: p_bsrs,
                rs_ms: p_rsms,
            },
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.relays == 0 {
            return Err(SimError::InvalidScenario("at least one relay is required".into()));
        }
        if self.k_bs == 0 || self.k_rs == 0 {
            return Err(SimError::InvalidScenario("pool capacities must be positive".into()));
        }
        Ok(())
    }
}

/// Sampler over demands with a trailing "blocked" outcome.
#[derive(Debug, Clone)]
struct DemandSampler {
    outcomes: Vec<Option<u32>>,
    index: Option<WeightedIndex<f64>>,
}

impl DemandSampler {
    fn new(pmf: &DemandPmf) -> Result<Self, SimError> {
        let mut outcomes: Vec<Option<u32>> = pmf.entries.iter().map(|(d, _)| Some(*d)).collect();
        let mut weights: Vec<f64> = pmf.entries.iter().map(|(_, p)| *p).collect();
        if pmf.blocked_mass > 0.0 {
            outcomes.push(None);
            weights.push(pmf.blocked_mass);
        }
        let index = if weights.iter().any(|w| *w > 0.0) {
            Some(WeightedIndex::new(&weights).map_err(|e| SimError::InvalidScenario(e.to_string()))?)
        } else {
            None
        };
        Ok(Self { outcomes, index })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Option<u32> {
        match &self.index {
            Some(ix) => self.outcomes[ix.sample(rng)],
            None => None,
        }
    }
}

#[derive(Debug, Clone)]
enum HoppedSampler {
    Independent(DemandSampler, DemandSampler),
    Joint(Vec<(u32, u32)>, WeightedIndex<f64>),
}

impl HoppedSampler {
    fn new(law: &HoppedLaw) -> Result<Self, SimError> {
        match law {
            HoppedLaw::Independent { bs_rs, rs_ms } => {
                Ok(HoppedSampler::Independent(DemandSampler::new(bs_rs)?, DemandSampler::new(rs_ms)?))
            }
            HoppedLaw::Joint(pairs) => {
                let ix = WeightedIndex::new(pairs.iter().map(|(_, p)| *p))
                    .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
                Ok(HoppedSampler::Joint(pairs.iter().map(|(k, _)| *k).collect(), ix))
            }
        }
    }

    /// Draws `(BS-RS, RS-MS)`; the RS-MS leg is drawn first in both arms so
    /// the number of draws per call is fixed.
    fn sample<R: Rng>(&self, rng: &mut R) -> (Option<u32>, Option<u32>) {
        match self {
            HoppedSampler::Independent(a, b) => {
                let rm = b.sample(rng);
                let br = a.sample(rng);
                (br, rm)
            }
            HoppedSampler::Joint(pairs, ix) => {
                let (a, b) = pairs[ix.sample(rng)];
                (Some(a), Some(b))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Direct,
    Hopped,
    HoppedBsRs,
    HoppedRsMs,
    Overall,
}

impl Stream {
    pub const ALL: [Stream; 5] = [
        Stream::Direct,
        Stream::Hopped,
        Stream::HoppedBsRs,
        Stream::HoppedRsMs,
        Stream::Overall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Direct => "direct",
            Stream::Hopped => "hopped",
            Stream::HoppedBsRs => "hopped_bs_rs",
            Stream::HoppedRsMs => "hopped_rs_ms",
            Stream::Overall => "overall",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Matching analytical figure.
    pub fn analytical(self, report: &BlockingReport) -> f64 {
        match self {
            Stream::Direct => report.p_b_d,
            Stream::Hopped => report.p_b_h,
            Stream::HoppedBsRs => report.p_b_hbr,
            Stream::HoppedRsMs => report.p_b_hrm,
            Stream::Overall => report.p_b_overall,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub offered: u64,
    pub blocked: u64,
}

impl Counts {
    pub fn carried(&self) -> u64 {
        self.offered - self.blocked
    }

    pub fn fraction(&self) -> Option<f64> {
        (self.offered > 0).then(|| self.blocked as f64 / self.offered as f64)
    }
}

/// Raw per-replication outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationCounts {
    pub replication: usize,
    pub seed: u64,
    pub streams: [Counts; 5],
    /// Time spent with `j` BS subcarriers busy, after warmup.
    pub bs_busy_time: Vec<f64>,
    pub observed_time: f64,
    pub events: u64,
}

impl ReplicationCounts {
    pub fn stream(&self, s: Stream) -> Counts {
        self.streams[s.index()]
    }

    /// Time-average probability that fewer than `demand` BS subcarriers are
    /// free.
    pub fn bs_time_blocking(&self, demand: u32) -> f64 {
        let k = self.bs_busy_time.len() - 1;
        if demand as usize > k {
            return 1.0;
        }
        let first = k + 1 - demand as usize;
        self.bs_busy_time[first..].iter().sum::<f64>() / self.observed_time
    }
}

/// Free subcarriers at the BS and at each relay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourcePools {
    pub bs_capacity: u32,
    pub rs_capacity: u32,
    pub bs_free: u32,
    pub rs_free: Vec<u32>,
}

impl ResourcePools {
    fn new(k_bs: u32, k_rs: u32, relays: usize) -> Self {
        Self {
            bs_capacity: k_bs,
            rs_capacity: k_rs,
            bs_free: k_bs,
            rs_free: vec![k_rs; relays],
        }
    }

    pub fn bs_used(&self) -> u32 {
        self.bs_capacity - self.bs_free
    }

    pub fn rs_used(&self, relay: usize) -> u32 {
        self.rs_capacity - self.rs_free[relay]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKind {
    Direct,
    Hopped { relay: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    /// Demand outside the class range.
    TailBlocked,
    BlockedAtRs,
    BlockedAtBs,
    /// Decoupled mode with [`RsLegPolicy::Hold`]: RS leg kept, BS leg blocked.
    RsOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Arrival {
        kind: CallKind,
        bs_demand: Option<u32>,
        rs_demand: Option<u32>,
        admission: Admission,
    },
    Departure {
        bs_release: u32,
        rs_release: Option<(usize, u32)>,
    },
}

/// Snapshot passed to trace observers after each event.
#[derive(Debug, Clone)]
pub struct TraceEvent<'a> {
    pub time: f64,
    pub kind: EventKind,
    pub pools: &'a ResourcePools,
    /// Hopped calls currently holding BS subcarriers.
    pub hopped_at_bs: u32,
    /// Hopped calls currently holding subcarriers at each relay.
    pub hopped_at_rs: &'a [u32],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Departure {
    time: f64,
    seq: u64,
    bs_release: u32,
    /// BS subcarriers held by a hopped call.
    hopped_bs: bool,
    rs_release: Option<(usize, u32)>,
}

impl Eq for Departure {}

impl Ord for Departure {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, seq)
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Departure {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Per-purpose generators for one replication.
struct Streams {
    arrivals: ChaCha8Rng,
    routing: ChaCha8Rng,
    demands: ChaCha8Rng,
    holding: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let make = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            rng
        };
        Self {
            arrivals: make(1),
            routing: make(2),
            demands: make(3),
            holding: make(4),
        }
    }
}

struct Engine<'a> {
    scenario: &'a SimScenario,
    config: &'a SimConfig,
    direct: DemandSampler,
    hopped: HoppedSampler,
    pools: ResourcePools,
    bs_held: u32,
    rs_held: Vec<u32>,
    hopped_at_bs: u32,
    hopped_at_rs: Vec<u32>,
    queue: BinaryHeap<Departure>,
    seq: u64,
    counts: [Counts; 5],
    bs_busy_time: Vec<f64>,
    last_time: f64,
    events: u64,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a SimScenario, config: &'a SimConfig) -> Result<Self, SimError> {
        Ok(Self {
            scenario,
            config,
            direct: DemandSampler::new(&scenario.direct)?,
            hopped: HoppedSampler::new(&scenario.hopped)?,
            pools: ResourcePools::new(scenario.k_bs, scenario.k_rs, scenario.relays),
            bs_held: 0,
            rs_held: vec![0; scenario.relays],
            hopped_at_bs: 0,
            hopped_at_rs: vec![0; scenario.relays],
            queue: BinaryHeap::new(),
            seq: 0,
            counts: [Counts::default(); 5],
            bs_busy_time: vec![0.0; scenario.k_bs as usize + 1],
            last_time: 0.0,
            events: 0,
        })
    }

    fn advance_clock(&mut self, t: f64) {
        let from = self.last_time.max(self.config.warmup);
        if t > from {
            self.bs_busy_time[self.pools.bs_used() as usize] += t - from;
        }
        self.last_time = t;
    }

    fn record(&mut self, stream: Stream, blocked: bool, t: f64) {
        if t >= self.config.warmup {
            let c = &mut self.counts[stream.index()];
            c.offered += 1;
            c.blocked += blocked as u64;
        }
    }

    fn schedule(&mut self, time: f64, bs_release: u32, hopped_bs: bool, rs_release: Option<(usize, u32)>) {
        self.seq += 1;
        self.queue.push(Departure {
            time,
            seq: self.seq,
            bs_release,
            hopped_bs,
            rs_release,
        });
    }

    fn seize_bs(&mut self, m: u32, hopped: bool) {
        self.pools.bs_free -= m;
        self.bs_held += m;
        self.hopped_at_bs += hopped as u32;
    }

    fn seize_rs(&mut self, relay: usize, m: u32) {
        self.pools.rs_free[relay] -= m;
        self.rs_held[relay] += m;
        self.hopped_at_rs[relay] += 1;
    }

    fn audit(&self) {
        debug_assert_eq!(self.pools.bs_free + self.bs_held, self.pools.bs_capacity);
        for (free, held) in self.pools.rs_free.iter().zip(&self.rs_held) {
            debug_assert_eq!(free + held, self.pools.rs_capacity);
        }
    }

    fn depart(&mut self, d: Departure) -> EventKind {
        self.pools.bs_free += d.bs_release;
        self.bs_held -= d.bs_release;
        if d.hopped_bs {
            self.hopped_at_bs -= 1;
        }
        if let Some((relay, m)) = d.rs_release {
            self.pools.rs_free[relay] += m;
            self.rs_held[relay] -= m;
            self.hopped_at_rs[relay] -= 1;
        }
        EventKind::Departure {
            bs_release: d.bs_release,
            rs_release: d.rs_release,
        }
    }

    fn arrive(&mut self, t: f64, rng: &mut Streams, exp_hold: &Exp<f64>) -> EventKind {
        let is_direct = rng.routing.random::<f64>() < self.scenario.traffic.f;
        let relay = rng.routing.random_range(0..self.scenario.relays);
        let direct_demand = self.direct.sample(&mut rng.demands);
        let (bs_rs, rs_ms) = self.hopped.sample(&mut rng.demands);
        let hold_a = t + exp_hold.sample(&mut rng.holding);
        let hold_b = t + exp_hold.sample(&mut rng.holding);
        let rs_hold = match self.config.holding {
            HoldingModel::Single => hold_a,
            HoldingModel::SplitHolding => hold_b,
        };

        if is_direct {
            let admission = match direct_demand {
                None => Admission::TailBlocked,
                Some(m) if m <= self.pools.bs_free => {
                    self.seize_bs(m, false);
                    self.schedule(hold_a, m, false, None);
                    Admission::Admitted
                }
                Some(_) => Admission::BlockedAtBs,
            };
            let blocked = admission != Admission::Admitted;
            self.record(Stream::Direct, blocked, t);
            self.record(Stream::Overall, blocked, t);
            return EventKind::Arrival {
                kind: CallKind::Direct,
                bs_demand: direct_demand,
                rs_demand: None,
                admission,
            };
        }

        let rs_fits = matches!(rs_ms, Some(m) if m <= self.pools.rs_free[relay]);
        let bs_fits = matches!(bs_rs, Some(m) if m <= self.pools.bs_free);
        let admission = match (self.config.mode, rs_fits, bs_fits) {
            (_, false, _) => {
                if rs_ms.is_none() {
                    Admission::TailBlocked
                } else {
                    Admission::BlockedAtRs
                }
            }
            (SimMode::Decoupled, true, false) if self.config.rs_leg == RsLegPolicy::Hold => Admission::RsOnly,
            (_, true, false) => Admission::BlockedAtBs,
            (_, true, true) => Admission::Admitted,
        };
        let (br, rm) = (bs_rs.unwrap_or(0), rs_ms.unwrap_or(0));
        match admission {
            Admission::Admitted => {
                self.seize_rs(relay, rm);
                self.seize_bs(br, true);
                match self.config.holding {
                    HoldingModel::Single => self.schedule(hold_a, br, true, Some((relay, rm))),
                    HoldingModel::SplitHolding => {
                        self.schedule(hold_a, br, true, None);
                        self.schedule(rs_hold, 0, false, Some((relay, rm)));
                    }
                }
            }
            Admission::RsOnly => {
                self.seize_rs(relay, rm);
                self.schedule(rs_hold, 0, false, Some((relay, rm)));
            }
            _ => {}
        }
        let rs_blocked = !rs_fits;
        self.record(Stream::HoppedRsMs, rs_blocked, t);
        if !rs_blocked {
            self.record(Stream::HoppedBsRs, !bs_fits, t);
        }
        let blocked = admission != Admission::Admitted;
        self.record(Stream::Hopped, blocked, t);
        self.record(Stream::Overall, blocked, t);
        EventKind::Arrival {
            kind: CallKind::Hopped { relay },
            bs_demand: bs_rs,
            rs_demand: rs_ms,
            admission,
        }
    }

    fn snapshot(&self, time: f64, kind: EventKind) -> TraceEvent<'_> {
        TraceEvent {
            time,
            kind,
            pools: &self.pools,
            hopped_at_bs: self.hopped_at_bs,
            hopped_at_rs: &self.hopped_at_rs,
        }
    }
}

/// Runs one replication; `observer` sees every event after it is applied.
pub fn run_replication(
    scenario: &SimScenario,
    config: &SimConfig,
    replication: usize,
    observer: &mut dyn FnMut(&TraceEvent<'_>),
) -> Result<ReplicationCounts, SimError> {
    config.validate()?;
    scenario.validate()?;
    let seed = config.base_seed.wrapping_add(replication as u64);
    let mut rng = Streams::new(seed);
    let mut engine = Engine::new(scenario, config)?;
    let lambda = scenario.traffic.lambda;
    let exp_hold = Exp::new(scenario.traffic.mu).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let exp_arrival = (lambda > 0.0)
        .then(|| Exp::new(lambda))
        .transpose()
        .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
    let mut next_arrival = match &exp_arrival {
        Some(e) => e.sample(&mut rng.arrivals),
        None => f64::INFINITY,
    };

    loop {
        let next_departure = engine.queue.peek().map_or(f64::INFINITY, |d| d.time);
        let t = next_departure.min(next_arrival);
        if t > config.horizon {
            break;
        }
        engine.advance_clock(t);
        // departures first on ties
        let kind = if next_departure <= next_arrival {
            let d = engine.queue.pop().expect("peeked");
            engine.depart(d)
        } else {
            let kind = engine.arrive(t, &mut rng, &exp_hold);
            next_arrival = t + exp_arrival.as_ref().expect("arrivals enabled").sample(&mut rng.arrivals);
            kind
        };
        engine.events += 1;
        engine.audit();
        observer(&engine.snapshot(t, kind));
    }
    engine.advance_clock(config.horizon);

    Ok(ReplicationCounts {
        replication,
        seed,
        streams: engine.counts,
        bs_busy_time: engine.bs_busy_time,
        observed_time: config.horizon - config.warmup,
        events: engine.events,
    })
}

/// All replications, merged into per-stream estimates. Replications run in
/// parallel; merging is in replication order, so the result does not depend
/// on scheduling.
pub fn run(scenario: &SimScenario, config: &SimConfig) -> Result<BlockingEstimate, SimError> {
    config.validate()?;
    scenario.validate()?;
    let reps: Vec<ReplicationCounts> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(scenario, config, r, &mut |_| {}))
        .collect::<Result<_, _>>()?;
    Ok(BlockingEstimate::from_replications(config.mode, reps))
}

/// Coupled and decoupled runs on common random numbers next to the
/// analytical report for the same scenario.
pub fn compare_modes(
    scenario: &SimScenario,
    config: &SimConfig,
    analytical: &BlockingReport,
) -> Result<ModeComparison, SimError> {
    let coupled = run(
        scenario,
        &SimConfig {
            mode: SimMode::Coupled,
            ..*config
        },
    )?;
    let decoupled = run(
        scenario,
        &SimConfig {
            mode: SimMode::Decoupled,
            ..*config
        },
    )?;
    Ok(ModeComparison::new(coupled, decoupled, analytical.clone()))
}
