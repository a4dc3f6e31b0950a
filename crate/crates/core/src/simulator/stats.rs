//! Merging replications into interval estimates.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{Counts, ReplicationCounts, SimMode, Stream};
use crate::erlang::BlockingReport;

const CONFIDENCE: f64 = 0.95;

/// Half-width of the two-sided 95% Student-t interval for the mean of
/// `samples`. Infinite with fewer than two samples.
pub fn student_t_half_width(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .expect("dof >= 1")
        .inverse_cdf(0.5 + CONFIDENCE / 2.0);
    t * (var / nf).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEstimate {
    pub stream: Stream,
    /// Mean over replications with at least one offered call.
    pub fraction: f64,
    pub half_width: f64,
    pub offered: u64,
    pub blocked: u64,
    /// No call of this stream was offered after warmup.
    pub empty: bool,
}

impl StreamEstimate {
    fn from_samples(stream: Stream, reps: &[ReplicationCounts]) -> Self {
        let counts: Vec<Counts> = reps.iter().map(|r| r.stream(stream)).collect();
        let offered: u64 = counts.iter().map(|c| c.offered).sum();
        let blocked: u64 = counts.iter().map(|c| c.blocked).sum();
        let fractions: Vec<f64> = counts.iter().filter_map(Counts::fraction).collect();
        if fractions.is_empty() {
            return Self {
                stream,
                fraction: 0.0,
                half_width: 0.0,
                offered,
                blocked,
                empty: true,
            };
        }
        let fraction = fractions.iter().sum::<f64>() / fractions.len() as f64;
        let mut half_width = student_t_half_width(&fractions);
        if blocked == 0 {
            // No blocking seen: the t interval collapses to a point. Fall back
            // to the exact binomial 95% upper bound for zero events.
            half_width = half_width.max(1.0 - 0.05f64.powf(1.0 / offered as f64));
        }
        Self {
            stream,
            fraction,
            half_width,
            offered,
            blocked,
            empty: false,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        (value - self.fraction).abs() <= self.half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockingEstimate {
    pub mode: SimMode,
    pub streams: Vec<StreamEstimate>,
    pub replications: Vec<ReplicationCounts>,
}

impl BlockingEstimate {
    pub fn from_replications(mode: SimMode, replications: Vec<ReplicationCounts>) -> Self {
        let streams = Stream::ALL
            .iter()
            .map(|&s| StreamEstimate::from_samples(s, &replications))
            .collect();
        Self {
            mode,
            streams,
            replications,
        }
    }

    pub fn stream(&self, s: Stream) -> &StreamEstimate {
        &self.streams[s.index()]
    }

    /// CSV with one row per replication and stream, then the merged rows
    /// (replication `merged`, fraction = mean of replication fractions).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("replication,stream,offered,blocked,fraction\n");
        for rep in &self.replications {
            for s in Stream::ALL {
                let c = rep.stream(s);
                let frac = c.fraction().map_or_else(|| "".to_string(), fmt_float);
                out.push_str(&format!("{},{},{},{},{}\n", rep.replication, s.as_str(), c.offered, c.blocked, frac));
            }
        }
        for est in &self.streams {
            out.push_str(&format!(
                "merged,{},{},{},{}\n",
                est.stream.as_str(),
                est.offered,
                est.blocked,
                fmt_float(est.fraction)
            ));
        }
        out
    }
}

/// Lossless float rendering used in every CSV this crate writes.
pub(crate) fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamGap {
    pub stream: Stream,
    pub analytical: f64,
    pub coupled: f64,
    pub decoupled: f64,
    /// Mean and 95% half-width of the paired per-replication difference
    /// `decoupled − coupled`.
    pub paired_difference: f64,
    pub paired_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub coupled: BlockingEstimate,
    pub decoupled: BlockingEstimate,
    pub analytical: BlockingReport,
    pub gaps: Vec<StreamGap>,
}

impl ModeComparison {
    pub fn new(coupled: BlockingEstimate, decoupled: BlockingEstimate, analytical: BlockingReport) -> Self {
        let gaps = Stream::ALL
            .iter()
            .map(|&s| {
                let diffs: Vec<f64> = coupled
                    .replications
                    .iter()
                    .zip(&decoupled.replications)
                    .filter_map(|(c, d)| Some(d.stream(s).fraction()? - c.stream(s).fraction()?))
                    .collect();
                let mean = if diffs.is_empty() {
                    0.0
                } else {
                    diffs.iter().sum::<f64>() / diffs.len() as f64
                };
                StreamGap {
                    stream: s,
                    analytical: s.analytical(&analytical),
                    coupled: coupled.stream(s).fraction,
                    decoupled: decoupled.stream(s).fraction,
                    paired_difference: mean,
                    paired_half_width: student_t_half_width(&diffs),
                }
            })
            .collect();
        Self {
            coupled,
            decoupled,
            analytical,
            gaps,
        }
    }
}
