//! Scenario files: TOML with one table per section, every key optional,
//! unknown keys rejected.

use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use relay_blocking::classes::{TailPolicy, DEFAULT_CLASS_EPSILON};
use relay_blocking::interference::{RsInterfererSet, DEFAULT_SUBDIVISIONS, QUADRATURE_TOLERANCE};
use relay_blocking::pipeline::{FixedDemands, LinkSigmas, QuadratureSettings, Scenario};
use relay_blocking::simulator::{HoldingModel, RsLegPolicy, SimConfig, SimMode};

/// Default subcarrier counts at 15 kHz spacing; other spacings scale them.
const REFERENCE_W: f64 = 15e3;
const REFERENCE_K_BS: f64 = 480.0;
const REFERENCE_K_RS: f64 = 30.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Unanchored { path: String, message: String },
}

/// Arrival rates: one value, an explicit list, or `"start:stop:step"`.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSpec {
    Scalar(f64),
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl LambdaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            LambdaSpec::Scalar(x) => vec![*x],
            LambdaSpec::List(v) => v.clone(),
            LambdaSpec::Range { start, stop, step } => {
                let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
                (0..n).map(|i| start + i as f64 * step).collect()
            }
        }
    }

    fn parse_range(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        let [a, b, c] = parts[..] else {
            return Err(format!("lambda range `{text}` must have the form start:stop:step"));
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| format!("lambda range `{text}`: `{s}` is not a number"))
        };
        let (start, stop, step) = (num(a)?, num(b)?, num(c)?);
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(format!("lambda range `{text}` must be finite"));
        }
        if step <= 0.0 {
            return Err(format!("lambda range `{text}`: step must be positive"));
        }
        if stop < start {
            return Err(format!("lambda range `{text}`: stop is below start"));
        }
        Ok(LambdaSpec::Range { start, stop, step })
    }
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::Range {
            start: 1.0,
            stop: 80.0,
            step: 1.0,
        }
    }
}

impl Serialize for LambdaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LambdaSpec::Scalar(x) => s.serialize_f64(*x),
            LambdaSpec::List(v) => v.serialize(s),
            LambdaSpec::Range { start, stop, step } => s.serialize_str(&format!("{start:?}:{stop:?}:{step:?}")),
        }
    }
}

impl<'de> Deserialize<'de> for LambdaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = LambdaSpec;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number, a list of numbers, or \"start:stop:step\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<LambdaSpec, E> {
                Ok(LambdaSpec::Scalar(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<LambdaSpec, E> {
                Ok(LambdaSpec::Scalar(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<LambdaSpec, E> {
                Ok(LambdaSpec::Scalar(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<LambdaSpec, E> {
                LambdaSpec::parse_range(v).map_err(E::custom)
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<LambdaSpec, A::Error> {
                let mut out = Vec::new();
                while let Some(x) = seq.next_element::<f64>()? {
                    out.push(x);
                }
                if out.is_empty() {
                    return Err(de::Error::custom("lambda list is empty"));
                }
                Ok(LambdaSpec::List(out))
            }
        }
        let spec = d.deserialize_any(V)?;
        if let Some(bad) = spec.values().into_iter().find(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(de::Error::custom(format!("lambda values must be finite and >= 0, got {bad}")));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellSection {
    /// Metres.
    pub inter_bs_distance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subcell_circumradius: Option<f64>,
}

impl Default for CellSection {
    fn default() -> Self {
        Self {
            inter_bs_distance: 1732.0,
            subcell_circumradius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    /// Hz.
    pub system_bandwidth: f64,
    /// Hz.
    pub subcarrier_bandwidth: f64,
    /// Defaults scale 480 / 30 at 15 kHz with W.
    pub k_bs: Option<u32>,
    pub k_rs: Option<u32>,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            system_bandwidth: 10e6,
            subcarrier_bandwidth: REFERENCE_W,
            k_bs: None,
            k_rs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterferenceSection {
    pub interferers: usize,
    pub beta: f64,
    /// dB.
    pub sigma_bs_ms: f64,
    pub sigma_bs_rs: f64,
    pub sigma_rs_ms: f64,
    pub rs_interferers: RsInterfererSet,
    pub quadrature_subdivisions: usize,
    pub quadrature_tolerance: f64,
}

impl Default for InterferenceSection {
    fn default() -> Self {
        Self {
            interferers: 6,
            beta: 3.5,
            sigma_bs_ms: 8.0,
            sigma_bs_rs: 4.0,
            sigma_rs_ms: 8.0,
            rs_interferers: RsInterfererSet::default(),
            quadrature_subdivisions: DEFAULT_SUBDIVISIONS,
            quadrature_tolerance: QUADRATURE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSection {
    /// bits/s.
    pub rate: f64,
    /// Fraction of calls served directly.
    pub f: f64,
    pub lambda: LambdaSpec,
    pub mu: f64,
    pub per_rs_split: bool,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self {
            rate: 64e3,
            f: 0.5,
            lambda: LambdaSpec::default(),
            mu: 1.0,
            per_rs_split: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassesSection {
    pub epsilon: f64,
    pub max_classes: u32,
    pub tail_policy: TailPolicy,
}

impl Default for ClassesSection {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_CLASS_EPSILON,
            max_classes: 64,
            tail_policy: TailPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub evaluator: String,
    pub discount: String,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            evaluator: "recursion".into(),
            discount: "aggregate".into(),
        }
    }
}

/// Hand-written demand laws, `[[demand, probability], ...]`, replacing the
/// fitted ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bs_ms: Option<Vec<(u32, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bs_rs: Option<Vec<(u32, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rs_ms: Option<Vec<(u32, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub horizon: f64,
    pub warmup: f64,
    pub replications: usize,
    pub holding: HoldingModel,
    pub rs_leg: RsLegPolicy,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            horizon: 400.0,
            warmup: 20.0,
            replications: 20,
            holding: HoldingModel::default(),
            rs_leg: RsLegPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Exact ISR draws behind the KS column.
    pub ks_samples: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        Self { ks_samples: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Base seed for simulation and sampling.
    pub seed: u64,
    pub cell: CellSection,
    pub spectrum: SpectrumSection,
    pub interference: InterferenceSection,
    pub traffic: TrafficSection,
    pub classes: ClassesSection,
    pub analysis: AnalysisSection,
    pub demands: DemandsSection,
    pub simulation: SimulationSection,
    pub fit: FitSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            cell: CellSection::default(),
            spectrum: SpectrumSection::default(),
            interference: InterferenceSection::default(),
            traffic: TrafficSection::default(),
            classes: ClassesSection::default(),
            analysis: AnalysisSection::default(),
            demands: DemandsSection::default(),
            simulation: SimulationSection::default(),
            fit: FitSection::default(),
        }
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl ScenarioConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let mut config: ScenarioConfig = toml::from_str(text).map_err(|e| match e.span() {
            Some(span) => {
                let (line, column) = line_column(text, span.start);
                ConfigError::Syntax {
                    path: path.to_string(),
                    line,
                    column,
                    message: e.message().trim().to_string(),
                }
            }
            None => ConfigError::Unanchored {
                path: path.to_string(),
                message: e.message().trim().to_string(),
            },
        })?;
        config.materialize();
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::parse(&text, &shown)
    }

    /// Fills the defaults that depend on other keys.
    fn materialize(&mut self) {
        let scale = REFERENCE_W / self.spectrum.subcarrier_bandwidth;
        let scaled = |k: f64| {
            let v = (k * scale).floor();
            if v.is_finite() && v >= 0.0 {
                v.min(u32::MAX as f64) as u32
            } else {
                0
            }
        };
        self.spectrum.k_bs.get_or_insert(scaled(REFERENCE_K_BS));
        self.spectrum.k_rs.get_or_insert(scaled(REFERENCE_K_RS));
    }

    /// The effective configuration with every default written out.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.traffic.lambda.values()
    }

    pub fn scenario(&self) -> Scenario {
        let i = &self.interference;
        Scenario {
            inter_bs_distance: self.cell.inter_bs_distance,
            subcell_circumradius: self.cell.subcell_circumradius,
            system_bandwidth_hz: self.spectrum.system_bandwidth,
            subcarrier_bandwidth_hz: self.spectrum.subcarrier_bandwidth,
            k_bs: self.spectrum.k_bs.unwrap_or(0),
            k_rs: self.spectrum.k_rs.unwrap_or(0),
            interferers: i.interferers,
            path_loss_exponent: i.beta,
            sigma_db: LinkSigmas {
                bs_ms: i.sigma_bs_ms,
                bs_rs: i.sigma_bs_rs,
                rs_ms: i.sigma_rs_ms,
            },
            rate_bps: self.traffic.rate,
            direct_fraction: self.traffic.f,
            mu: self.traffic.mu,
            per_rs_split: self.traffic.per_rs_split,
            class_epsilon: self.classes.epsilon,
            max_classes: self.classes.max_classes,
            tail_policy: self.classes.tail_policy,
            discount: self.analysis.discount.clone(),
            evaluator: self.analysis.evaluator.clone(),
            rs_interferers: i.rs_interferers,
            quadrature: QuadratureSettings {
                start_subdivisions: i.quadrature_subdivisions,
                tolerance: i.quadrature_tolerance,
            },
            fixed_demands: FixedDemands {
                bs_ms: self.demands.bs_ms.clone(),
                bs_rs: self.demands.bs_rs.clone(),
                rs_ms: self.demands.rs_ms.clone(),
            },
        }
    }

    pub fn sim_config(&self, mode: SimMode) -> SimConfig {
        let s = &self.simulation;
        SimConfig {
            mode,
            horizon: s.horizon,
            warmup: s.warmup,
            replications: s.replications,
            base_seed: self.seed,
            holding: s.holding,
            rs_leg: s.rs_leg,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let c = ScenarioConfig::parse("", "x").unwrap();
        assert_eq!(c.spectrum.k_bs, Some(480));
        assert_eq!(c.spectrum.k_rs, Some(30));
        assert_eq!(c.lambdas().len(), 80);
        assert_eq!(c.scenario(), Scenario::default());
    }

    #[test]
    fn subcarrier_counts_scale_with_spacing() {
        let c = ScenarioConfig::parse("[spectrum]\nsubcarrier_bandwidth = 30e3\n", "x").unwrap();
        assert_eq!((c.spectrum.k_bs, c.spectrum.k_rs), (Some(240), Some(15)));
        let c = ScenarioConfig::parse("[spectrum]\nsubcarrier_bandwidth = 60e3\n", "x").unwrap();
        assert_eq!((c.spectrum.k_bs, c.spectrum.k_rs), (Some(120), Some(7)));
        let c = ScenarioConfig::parse("[spectrum]\nsubcarrier_bandwidth = 30e3\nk_rs = 10\n", "x").unwrap();
        assert_eq!((c.spectrum.k_bs, c.spectrum.k_rs), (Some(240), Some(10)));
    }

    #[test]
    fn lambda_forms() {
        let get = |v: &str| {
            ScenarioConfig::parse(&format!("[traffic]\nlambda = {v}\n"), "x")
                .unwrap()
                .lambdas()
        };
        assert_eq!(get("5"), vec![5.0]);
        assert_eq!(get("2.5"), vec![2.5]);
        assert_eq!(get("[1, 2.5, 7]"), vec![1.0, 2.5, 7.0]);
        assert_eq!(get("\"10:20:5\""), vec![10.0, 15.0, 20.0]);
        assert_eq!(get("\"0:1:0.1\"").len(), 11);
        assert_eq!(get("\"1:2:5\""), vec![1.0]);
    }

    #[test]
    fn dotted_keys_and_tables_are_equivalent() {
        let a = ScenarioConfig::parse("traffic.rate = 128e3\nspectrum.k_bs = 400\n", "x").unwrap();
        let b = ScenarioConfig::parse("[traffic]\nrate = 128000\n[spectrum]\nk_bs = 400\n", "x").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn errors_point_at_the_offending_line() {
        let cases = [
            ("seed = 3\n[traffic]\nrat = 64000\n", 3),
            ("[traffic]\nrate = 64000\nlambda = \"5:1:1\"\n", 3),
            ("[traffic]\n\n\nlambda = [1, -2]\n", 4),
            ("[classes]\ntail_policy = \"drop\"\n", 2),
            ("[spectrum]\nk_bs = \"many\"\n", 2),
            ("[bogus]\nx = 1\n", 1),
            ("[cell]\ninter_bs_distance = \n", 2),
        ];
        for (text, line) in cases {
            match ScenarioConfig::parse(text, "s.toml") {
                Err(ConfigError::Syntax { line: got, .. }) => assert_eq!(got, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn canonical_echo_is_a_fixed_point() {
        let text = "seed = 9\n[traffic]\nlambda = \"1:9:2\"\nrate = 256e3\n[demands]\nrs_ms = [[1, 0.6], [2, 0.4]]\n";
        let c = ScenarioConfig::parse(text, "x").unwrap();
        let echo = c.canonical();
        let again = ScenarioConfig::parse(&echo, "echo").unwrap();
        assert_eq!(again, c);
        assert_eq!(again.canonical(), echo);
        assert_eq!(again.hash(), c.hash());
        assert_ne!(c.hash(), ScenarioConfig::default().hash());
    }
}
