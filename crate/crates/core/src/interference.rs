//! Interference-to-signal ratio (ISR) statistics on the three links.
//!
//! For a target at position `p`, the ISR is `I = Σ Bᵢ Cᵢ` with the spatial
//! factor `Bᵢ = (d/dᵢ)^β` and the shadowing factor `Cᵢ = 10^((ξᵢ − ξ)/10)`.
//! The first two moments of `I` are assembled from spatial moments (area
//! averages over the target region) and shadowing moments, then matched to a
//! lognormal law whose CDF drives the class model.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::erfc;
use thiserror::Error;

use crate::geometry::{make_quadrature, CellLayout, GeometryError, Hexagon, Point2D, QuadratureRule};

/// `ln(10)/10`: converts a dB exponent to a natural-log exponent.
pub const DB_TO_NEPER: f64 = std::f64::consts::LN_10 / 10.0;

/// Relative change between successive quadrature refinements at which the
/// spatial moments are considered converged.
pub const QUADRATURE_TOLERANCE: f64 = 1e-4;

/// Sub-triangle refinement that meets [`QUADRATURE_TOLERANCE`] on the
/// default layout.
pub const DEFAULT_SUBDIVISIONS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterferenceError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("singular geometry: {0}")]
    SingularGeometry(String),
    #[error("invalid link geometry: {0}")]
    InvalidGeometry(String),
    #[error("quadrature rule does not target the link's region")]
    QuadratureMismatch,
    #[error("invalid moments m1 = {m1}, m2 = {m2}: need m1 > 0 and m2 >= m1^2")]
    InvalidMoments { m1: f64, m2: f64 },
    #[error("ISR CDF is defined for x > 0, got {0}")]
    Domain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinkKind {
    #[serde(rename = "BS-MS")]
    BsMs,
    #[serde(rename = "BS-RS")]
    BsRs,
    #[serde(rename = "RS-MS")]
    RsMs,
}

impl LinkKind {
    pub const ALL: [LinkKind; 3] = [LinkKind::BsMs, LinkKind::BsRs, LinkKind::RsMs];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::BsMs => "BS-MS",
            LinkKind::BsRs => "BS-RS",
            LinkKind::RsMs => "RS-MS",
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shadowing standard deviations in dB. All interferers of a link share
/// `sigma_interferer_db`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowingSpec {
    pub sigma_serving_db: f64,
    pub sigma_interferer_db: f64,
}

impl ShadowingSpec {
    pub fn new(sigma_serving_db: f64, sigma_interferer_db: f64) -> Result<Self, InterferenceError> {
        for s in [sigma_serving_db, sigma_interferer_db] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(InterferenceError::InvalidGeometry(format!(
                    "shadowing sigma must be finite and >= 0, got {s}"
                )));
            }
        }
        Ok(Self {
            sigma_serving_db,
            sigma_interferer_db,
        })
    }

    /// Same deviation on the serving and interfering paths.
    pub fn uniform(sigma_db: f64) -> Result<Self, InterferenceError> {
        Self::new(sigma_db, sigma_db)
    }
}

/// Which neighbour-cell relay interferes on an RS-MS subcarrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RsInterfererSet {
    /// The relay at the same offset in every neighbour cell.
    #[default]
    SameOffset,
    /// The relay of every neighbour cell closest to the serving relay.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Target uniformly distributed over a region.
    Region(Hexagon),
    /// Deterministic target position.
    Point(Point2D),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    pub kind: LinkKind,
    pub target: Target,
    pub serving: Point2D,
    pub interferers: Vec<Point2D>,
    pub path_loss_exponent: f64,
    pub shadowing: ShadowingSpec,
}

impl LinkGeometry {
    pub fn new(
        kind: LinkKind,
        target: Target,
        serving: Point2D,
        interferers: Vec<Point2D>,
        path_loss_exponent: f64,
        shadowing: ShadowingSpec,
    ) -> Result<Self, InterferenceError> {
        if interferers.is_empty() {
            return Err(InterferenceError::InvalidGeometry("at least one interferer is required".into()));
        }
        if !(path_loss_exponent > 2.0 && path_loss_exponent.is_finite()) {
            return Err(InterferenceError::InvalidGeometry(format!(
                "path-loss exponent must exceed 2, got {path_loss_exponent}"
            )));
        }
        match target {
            Target::Region(region) => {
                if let Some(p) = interferers.iter().find(|p| region.contains(**p)) {
                    return Err(InterferenceError::SingularGeometry(format!(
                        "interferer at ({}, {}) lies inside the target region",
                        p.x, p.y
                    )));
                }
            }
            Target::Point(t) => {
                if t == serving {
                    return Err(InterferenceError::SingularGeometry(
                        "fixed target coincides with the serving node".into(),
                    ));
                }
                if let Some(p) = interferers.iter().find(|p| **p == t) {
                    return Err(InterferenceError::SingularGeometry(format!(
                        "fixed target coincides with interferer at ({}, {})",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(Self {
            kind,
            target,
            serving,
            interferers,
            path_loss_exponent,
            shadowing,
        })
    }

    /// Users in the base region served by the reference BS; interferers are
    /// the first-tier BSs.
    pub fn bs_ms(layout: &CellLayout, beta: f64, shadowing: ShadowingSpec) -> Result<Self, InterferenceError> {
        Self::new(
            LinkKind::BsMs,
            Target::Region(layout.base_region),
            layout.bs_position(),
            layout.neighbor_bs_positions.clone(),
            beta,
            shadowing,
        )
    }

    /// Reference BS to relay `relay`; interferers are the first-tier BSs.
    pub fn bs_rs(
        layout: &CellLayout,
        relay: usize,
        beta: f64,
        shadowing: ShadowingSpec,
    ) -> Result<Self, InterferenceError> {
        Self::new(
            LinkKind::BsRs,
            Target::Point(layout.rs_positions[relay]),
            layout.bs_position(),
            layout.neighbor_bs_positions.clone(),
            beta,
            shadowing,
        )
    }

    /// Users in relay region `relay` served by its RS; one interfering relay
    /// per neighbour cell, chosen by `set`.
    pub fn rs_ms(
        layout: &CellLayout,
        relay: usize,
        set: RsInterfererSet,
        beta: f64,
        shadowing: ShadowingSpec,
    ) -> Result<Self, InterferenceError> {
        let serving = layout.rs_positions[relay];
        let interferers = layout
            .neighbor_rs_positions
            .iter()
            .map(|cell| match set {
                RsInterfererSet::SameOffset => cell[relay],
                RsInterfererSet::Nearest => *cell
                    .iter()
                    .min_by(|a, b| a.distance_sq(serving).total_cmp(&b.distance_sq(serving)))
                    .expect("six relays per cell"),
            })
            .collect();
        Self::new(
            LinkKind::RsMs,
            Target::Region(layout.relay_regions[relay]),
            serving,
            interferers,
            beta,
            shadowing,
        )
    }

    /// Spatial factors `Bᵢ = (d/dᵢ)^β` for a target at `p`.
    pub fn spatial_factors(&self, p: Point2D) -> impl Iterator<Item = f64> + '_ {
        let d_sq = p.distance_sq(self.serving);
        let half_beta = 0.5 * self.path_loss_exponent;
        self.interferers
            .iter()
            .map(move |q| (d_sq / p.distance_sq(*q)).powf(half_beta))
    }
}

/// Area averages of the spatial factors over the target position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialMoments {
    /// `E[Σ Bᵢ]`
    pub mean_sum_b: f64,
    /// `E[(Σ Bᵢ)²]`
    pub mean_sum_b_sq: f64,
    /// `E[Σ Bᵢ²]`
    pub mean_sum_bsq: f64,
}

/// Moments of the shadowing ratios `Cᵢ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowRatioMoments {
    /// `E[Cᵢ]`
    pub e_c: f64,
    /// `E[Cᵢ²]`
    pub e_c2: f64,
    /// `E[Cᵢ Cⱼ]`, `i ≠ j`
    pub e_cc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsrMoments {
    pub m1: f64,
    pub m2: f64,
}

/// Lognormal law of the ISR, `ln I ~ N(mu, sigma²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsrModel {
    pub mu: f64,
    pub sigma: f64,
    pub source_moments: IsrMoments,
}

impl IsrModel {
    pub fn cdf(&self, x: f64) -> Result<f64, InterferenceError> {
        isr_cdf(self, x)
    }

    /// CDF extended to `x = 0` (value 0) and `x = ∞` (value 1).
    pub fn cdf_closed(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x == f64::INFINITY {
            1.0
        } else {
            self.cdf(x).expect("x > 0")
        }
    }

    /// `P(I < x)`; differs from [`cdf_closed`](Self::cdf_closed) only at the
    /// `σ = 0` atom.
    pub fn cdf_left(&self, x: f64) -> f64 {
        if self.sigma == 0.0 && x > 0.0 && x.is_finite() {
            let slack = POINT_MASS_SLACK * (1.0 + self.mu.abs());
            return if x.ln() > self.mu + slack { 1.0 } else { 0.0 };
        }
        self.cdf_closed(x)
    }

    pub fn median(&self) -> f64 {
        self.mu.exp()
    }
}

/// Shadowing-ratio moments. `Cᵢ` is lognormal with log-variance
/// `a²(σᵢ² + σ²)`; `CᵢCⱼ` carries the common serving term twice, hence the
/// `4σ²` in its log-variance.
pub fn shadow_ratio_moments(spec: ShadowingSpec) -> ShadowRatioMoments {
    let a2 = DB_TO_NEPER * DB_TO_NEPER;
    let s2 = spec.sigma_serving_db * spec.sigma_serving_db;
    let si2 = spec.sigma_interferer_db * spec.sigma_interferer_db;
    ShadowRatioMoments {
        e_c: (0.5 * a2 * (si2 + s2)).exp(),
        e_c2: (2.0 * a2 * (si2 + s2)).exp(),
        e_cc: (0.5 * a2 * (2.0 * si2 + 4.0 * s2)).exp(),
    }
}

fn same_region(a: &Hexagon, b: &Hexagon) -> bool {
    let scale = a.circumradius.max(b.circumradius);
    a.center.distance(b.center) <= 1e-9 * scale
        && (a.circumradius - b.circumradius).abs() <= 1e-12 * scale
        && (a.orientation - b.orientation).abs() <= 1e-12
}

/// Spatial moments of a link. A region target needs a quadrature rule over
/// that region; a fixed target needs none.
pub fn spatial_moments(
    geom: &LinkGeometry,
    quad: Option<&QuadratureRule>,
) -> Result<SpatialMoments, InterferenceError> {
    match geom.target {
        Target::Point(p) => {
            let sum: f64 = geom.spatial_factors(p).sum();
            let sum_sq: f64 = geom.spatial_factors(p).map(|b| b * b).sum();
            Ok(SpatialMoments {
                mean_sum_b: sum,
                mean_sum_b_sq: sum * sum,
                mean_sum_bsq: sum_sq,
            })
        }
        Target::Region(region) => {
            let quad = quad.ok_or(InterferenceError::QuadratureMismatch)?;
            if !same_region(&region, &quad.target_region) {
                return Err(InterferenceError::QuadratureMismatch);
            }
            let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
            for (&p, &w) in quad.nodes.iter().zip(&quad.weights) {
                let (mut sum, mut sum_sq) = (0.0, 0.0);
                for b in geom.spatial_factors(p) {
                    sum += b;
                    sum_sq += b * b;
                }
                s1 += w * sum;
                s2 += w * sum * sum;
                s3 += w * sum_sq;
            }
            let area = region.area();
            Ok(SpatialMoments {
                mean_sum_b: s1 / area,
                mean_sum_b_sq: s2 / area,
                mean_sum_bsq: s3 / area,
            })
        }
    }
}

fn max_relative_change(a: &SpatialMoments, b: &SpatialMoments) -> f64 {
    [
        (a.mean_sum_b, b.mean_sum_b),
        (a.mean_sum_b_sq, b.mean_sum_b_sq),
        (a.mean_sum_bsq, b.mean_sum_bsq),
    ]
    .iter()
    .map(|(x, y)| ((x - y) / y).abs())
    .fold(0.0, f64::max)
}

/// Spatial moments with refinement: the subdivision count doubles from
/// `start` until two successive results differ by less than `tolerance`
/// (relative) in every component. Returns the moments and the subdivision
/// count that produced them.
pub fn converged_spatial_moments(
    geom: &LinkGeometry,
    start: usize,
    tolerance: f64,
) -> Result<(SpatialMoments, usize), InterferenceError> {
    let region = match geom.target {
        Target::Point(_) => return spatial_moments(geom, None).map(|m| (m, 0)),
        Target::Region(r) => r,
    };
    let mut n = start.max(1);
    let mut prev = spatial_moments(geom, Some(&make_quadrature(region, n)?))?;
    loop {
        let next_n = n * 2;
        let next = spatial_moments(geom, Some(&make_quadrature(region, next_n)?))?;
        if max_relative_change(&prev, &next) < tolerance || next_n >= 1024 {
            return Ok((next, next_n));
        }
        prev = next;
        n = next_n;
    }
}

/// First and second moments of the ISR.
pub fn isr_moments(sm: &SpatialMoments, cm: &ShadowRatioMoments) -> IsrMoments {
    IsrMoments {
        m1: cm.e_c * sm.mean_sum_b,
        m2: cm.e_c2 * sm.mean_sum_bsq + cm.e_cc * (sm.mean_sum_b_sq - sm.mean_sum_bsq),
    }
}

/// Moment-matched lognormal: `σ² = ln m2 − 2 ln m1`, `μ = 2 ln m1 − ½ ln m2`.
pub fn lognormal_fit(m1: f64, m2: f64) -> Result<IsrModel, InterferenceError> {
    if !(m1 > 0.0 && m1.is_finite() && m2.is_finite()) {
        return Err(InterferenceError::InvalidMoments { m1, m2 });
    }
    let (l1, l2) = (m1.ln(), m2.ln());
    let mut var = l2 - 2.0 * l1;
    // rounding in m2 = m1² cases (deterministic ISR)
    if var.abs() <= 1e-12 * (1.0 + l2.abs()) {
        var = 0.0;
    } else if var < 0.0 {
        return Err(InterferenceError::InvalidMoments { m1, m2 });
    }
    Ok(IsrModel {
        mu: 2.0 * l1 - 0.5 * l2,
        sigma: var.sqrt(),
        source_moments: IsrMoments { m1, m2 },
    })
}

/// Log-scale tolerance of the degenerate (`σ = 0`) CDF step.
const POINT_MASS_SLACK: f64 = 1e-12;

pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `Φ((ln x − μ)/σ)`. With `σ = 0` the law is a point mass at `e^μ` and the
/// CDF is the right-continuous step there; `μ` itself comes out of moment
/// arithmetic, so the step sits a few ulps early.
pub fn isr_cdf(model: &IsrModel, x: f64) -> Result<f64, InterferenceError> {
    if !(x > 0.0) || x.is_nan() {
        return Err(InterferenceError::Domain(x));
    }
    let lx = x.ln();
    if model.sigma == 0.0 {
        let slack = POINT_MASS_SLACK * (1.0 + model.mu.abs());
        return Ok(if lx >= model.mu - slack { 1.0 } else { 0.0 });
    }
    Ok(standard_normal_cdf((lx - model.mu) / model.sigma))
}

/// Exact ISR sampler: uniform target position (or the fixed target), Gaussian
/// dB shadows on the serving path and on each interferer.
#[derive(Debug, Clone)]
pub struct IsrSampler<'a> {
    geom: &'a LinkGeometry,
    serving_shadow: Normal<f64>,
    interferer_shadow: Normal<f64>,
}

impl<'a> IsrSampler<'a> {
    pub fn new(geom: &'a LinkGeometry) -> Self {
        Self {
            geom,
            serving_shadow: Normal::new(0.0, geom.shadowing.sigma_serving_db).expect("sigma >= 0"),
            interferer_shadow: Normal::new(0.0, geom.shadowing.sigma_interferer_db).expect("sigma >= 0"),
        }
    }

    pub fn sample_position<R: Rng + ?Sized>(&self, rng: &mut R) -> Point2D {
        match self.geom.target {
            Target::Point(p) => p,
            Target::Region(region) => uniform_in_hexagon(&region, rng),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let p = self.sample_position(rng);
        let xi = self.serving_shadow.sample(rng);
        self.geom
            .spatial_factors(p)
            .map(|b| {
                let xi_i = self.interferer_shadow.sample(rng);
                b * (DB_TO_NEPER * (xi_i - xi)).exp()
            })
            .sum()
    }
}

/// Rejection sampling from the bounding box.
pub fn uniform_in_hexagon<R: Rng + ?Sized>(region: &Hexagon, rng: &mut R) -> Point2D {
    let a = region.circumradius;
    loop {
        let p = Point2D::new(rng.random_range(-a..=a), rng.random_range(-a..=a));
        let candidate = region.center + p;
        if region.contains(candidate) {
            return candidate;
        }
    }
}

/// One exact ISR draw; the same seed always yields the same value.
pub fn sample_isr_exact(geom: &LinkGeometry, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    IsrSampler::new(geom).sample(&mut rng)
}

const BATCH_CHUNK: usize = 1 << 16;

/// `n` exact ISR draws. Chunks use independent ChaCha streams keyed by
/// chunk index, so the output does not depend on the thread count.
pub fn sample_isr_batch(geom: &LinkGeometry, n: usize, seed: u64) -> Vec<f64> {
    let sampler = IsrSampler::new(geom);
    let chunks = n.div_ceil(BATCH_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            let len = BATCH_CHUNK.min(n - c * BATCH_CHUNK);
            let sampler = &sampler;
            (0..len).map(move |_| sampler.sample(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Kolmogorov–Smirnov distance between the fitted CDF and the empirical CDF
/// of `samples`. Ties and the `σ = 0` atom are handled by comparing the left
/// limit of the fitted CDF with the empirical mass strictly below each value.
pub fn ks_distance(model: &IsrModel, samples: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut worst = 0.0f64;
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == x {
            j += 1;
        }
        let below = i as f64 / n;
        let at = (j + 1) as f64 / n;
        worst = worst
            .max((model.cdf_left(x) - below).abs())
            .max((model.cdf_closed(x) - at).abs());
        i = j + 1;
    }
    worst
}

/// Fitted model for one link together with the moments it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub link: LinkKind,
    pub spatial: SpatialMoments,
    pub shadow: ShadowRatioMoments,
    pub model: IsrModel,
}

pub fn fit_link(geom: &LinkGeometry, quad: Option<&QuadratureRule>) -> Result<LinkModel, InterferenceError> {
    let spatial = spatial_moments(geom, quad)?;
    let shadow = shadow_ratio_moments(geom.shadowing);
    let m = isr_moments(&spatial, &shadow);
    Ok(LinkModel {
        link: geom.kind,
        spatial,
        shadow,
        model: lognormal_fit(m.m1, m.m2)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_layout;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn single_interferer(d: f64, di: f64, sigma: f64) -> LinkGeometry {
        LinkGeometry::new(
            LinkKind::BsRs,
            Target::Point(Point2D::new(d, 0.0)),
            Point2D::ORIGIN,
            vec![Point2D::new(d + di, 0.0)],
            3.5,
            ShadowingSpec::uniform(sigma).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_link_fits_a_point_mass() {
        let geom = single_interferer(900.0, 1300.0, 0.0);
        let fit = fit_link(&geom, None).unwrap();
        assert_eq!(fit.model.sigma, 0.0);
        let exact = (900.0f64 / 1300.0).powf(3.5);
        assert_relative_eq!(fit.model.median(), exact, max_relative = 1e-12);
        assert_eq!(ks_distance(&fit.model, &sample_isr_batch(&geom, 1000, 3)), 0.0);
        assert_eq!(fit.model.cdf_closed(exact * (1.0 - 1e-9)), 0.0);
    }

    #[test]
    fn no_shadowing_gives_unit_ratio_moments() {
        let m = shadow_ratio_moments(ShadowingSpec::uniform(0.0).unwrap());
        assert_eq!((m.e_c, m.e_c2, m.e_cc), (1.0, 1.0, 1.0));
    }

    #[test]
    fn correlation_ratio_identity() {
        for (s, si) in [(8.0, 8.0), (4.0, 4.0), (3.0, 6.0), (0.0, 5.0)] {
            let m = shadow_ratio_moments(ShadowingSpec::new(s, si).unwrap());
            let expected = (DB_TO_NEPER * DB_TO_NEPER * s * s).exp();
            assert_relative_eq!(m.e_cc / (m.e_c * m.e_c), expected, max_relative = 1e-12);
            assert!(m.e_c2 >= m.e_c * m.e_c * (1.0 - 1e-15));
            assert!(m.e_cc >= m.e_c * m.e_c * (1.0 - 1e-15));
        }
    }

    #[test]
    fn fixed_target_single_interferer_moments() {
        let g = single_interferer(300.0, 900.0, 0.0);
        let sm = spatial_moments(&g, None).unwrap();
        let b = (300.0f64 / 900.0).powf(3.5);
        assert_relative_eq!(sm.mean_sum_b, b, max_relative = 1e-13);
        assert_relative_eq!(sm.mean_sum_b_sq, b * b, max_relative = 1e-13);
        assert_relative_eq!(sm.mean_sum_bsq, b * b, max_relative = 1e-13);
        let m = isr_moments(&sm, &shadow_ratio_moments(g.shadowing));
        assert_relative_eq!(m.m1, b, max_relative = 1e-13);
        assert_relative_eq!(m.m2, b * b, max_relative = 1e-13);
        let fit = lognormal_fit(m.m1, m.m2).unwrap();
        assert_eq!(fit.sigma, 0.0);
        for seed in [0, 1, 99] {
            assert_relative_eq!(sample_isr_exact(&g, seed), b, max_relative = 1e-13);
        }
    }

    #[test]
    fn tiny_region_converges_to_point_target() {
        let layout = build_layout(1732.0).unwrap();
        let centre = Point2D::new(200.0, 100.0);
        let sh = ShadowingSpec::uniform(0.0).unwrap();
        let point = LinkGeometry::new(
            LinkKind::BsMs,
            Target::Point(centre),
            Point2D::ORIGIN,
            layout.neighbor_bs_positions.clone(),
            3.5,
            sh,
        )
        .unwrap();
        let exact = spatial_moments(&point, None).unwrap();
        let region = Hexagon::new(centre, 1e-3, 0.0).unwrap();
        let tiny = LinkGeometry {
            target: Target::Region(region),
            ..point.clone()
        };
        let quad = make_quadrature(region, 2).unwrap();
        let sm = spatial_moments(&tiny, Some(&quad)).unwrap();
        assert_relative_eq!(sm.mean_sum_b, exact.mean_sum_b, max_relative = 1e-5);
        assert_relative_eq!(sm.mean_sum_b_sq, exact.mean_sum_b_sq, max_relative = 1e-5);
        assert_relative_eq!(sm.mean_sum_bsq, exact.mean_sum_bsq, max_relative = 1e-5);
    }

    #[test]
    fn region_moments_respect_jensen() {
        let layout = build_layout(1732.0).unwrap();
        let g = LinkGeometry::bs_ms(&layout, 3.5, ShadowingSpec::uniform(8.0).unwrap()).unwrap();
        let quad = make_quadrature(layout.base_region, 8).unwrap();
        let sm = spatial_moments(&g, Some(&quad)).unwrap();
        assert!(sm.mean_sum_b > 0.0);
        assert!(sm.mean_sum_b_sq >= sm.mean_sum_bsq);
        assert!(sm.mean_sum_b_sq >= sm.mean_sum_b * sm.mean_sum_b);
        let m = isr_moments(&sm, &shadow_ratio_moments(g.shadowing));
        assert!(m.m2 >= m.m1 * m.m1);
    }

    #[test]
    fn quadrature_refinement_settles() {
        let layout = build_layout(1732.0).unwrap();
        let sh = ShadowingSpec::uniform(8.0).unwrap();
        let links = [
            LinkGeometry::bs_ms(&layout, 3.5, sh).unwrap(),
            LinkGeometry::rs_ms(&layout, 0, RsInterfererSet::SameOffset, 3.5, sh).unwrap(),
        ];
        for g in &links {
            let Target::Region(region) = g.target else { unreachable!() };
            let at = |n| spatial_moments(g, Some(&make_quadrature(region, n).unwrap())).unwrap();
            let changes: Vec<f64> = [2, 4, 8, 16]
                .windows(2)
                .map(|w| max_relative_change(&at(w[0]), &at(w[1])))
                .collect();
            assert!(changes.windows(2).all(|c| c[1] <= c[0]), "{changes:?}");
            let d = max_relative_change(&at(DEFAULT_SUBDIVISIONS), &at(2 * DEFAULT_SUBDIVISIONS));
            assert!(d < QUADRATURE_TOLERANCE, "{} change {d}", g.kind);
        }
    }

    #[test]
    fn relay_links_are_rotation_symmetric() {
        let layout = build_layout(1732.0).unwrap();
        let sh = ShadowingSpec::uniform(8.0).unwrap();
        for set in [RsInterfererSet::SameOffset, RsInterfererSet::Nearest] {
            let fits: Vec<LinkModel> = (0..6)
                .map(|k| {
                    let g = LinkGeometry::rs_ms(&layout, k, set, 3.5, sh).unwrap();
                    let quad = make_quadrature(layout.relay_regions[k], 6).unwrap();
                    fit_link(&g, Some(&quad)).unwrap()
                })
                .collect();
            for f in &fits[1..] {
                assert_relative_eq!(f.model.mu, fits[0].model.mu, max_relative = 1e-9);
                assert_relative_eq!(f.model.sigma, fits[0].model.sigma, max_relative = 1e-9);
            }
        }
        let bsrs: Vec<f64> = (0..6)
            .map(|k| {
                let g = LinkGeometry::bs_rs(&layout, k, 3.5, ShadowingSpec::uniform(4.0).unwrap()).unwrap();
                spatial_moments(&g, None).unwrap().mean_sum_b
            })
            .collect();
        for b in &bsrs {
            assert_relative_eq!(*b, bsrs[0], max_relative = 1e-12);
        }
    }

    #[test]
    fn singular_geometries_are_rejected() {
        let t = Point2D::new(10.0, 0.0);
        let sh = ShadowingSpec::uniform(0.0).unwrap();
        let err = LinkGeometry::new(LinkKind::BsRs, Target::Point(t), Point2D::ORIGIN, vec![t], 3.5, sh);
        assert!(matches!(err, Err(InterferenceError::SingularGeometry(_))));
        let region = Hexagon::new(Point2D::ORIGIN, 5.0, 0.0).unwrap();
        let err = LinkGeometry::new(
            LinkKind::BsMs,
            Target::Region(region),
            Point2D::ORIGIN,
            vec![Point2D::new(1.0, 1.0)],
            3.5,
            sh,
        );
        assert!(matches!(err, Err(InterferenceError::SingularGeometry(_))));
        let err = LinkGeometry::new(LinkKind::BsRs, Target::Point(t), Point2D::ORIGIN, vec![], 3.5, sh);
        assert!(err.is_err());
        let err = LinkGeometry::new(LinkKind::BsRs, Target::Point(t), Point2D::ORIGIN, vec![t * 3.0], 2.0, sh);
        assert!(err.is_err());
    }

    #[test]
    fn region_target_needs_matching_quadrature() {
        let layout = build_layout(1732.0).unwrap();
        let g = LinkGeometry::bs_ms(&layout, 3.5, ShadowingSpec::uniform(8.0).unwrap()).unwrap();
        assert_eq!(spatial_moments(&g, None), Err(InterferenceError::QuadratureMismatch));
        let other = make_quadrature(layout.relay_regions[0], 2).unwrap();
        assert_eq!(spatial_moments(&g, Some(&other)), Err(InterferenceError::QuadratureMismatch));
    }

    #[test]
    fn lognormal_fit_examples() {
        let fit = lognormal_fit(1.0, 1.0).unwrap();
        assert_eq!((fit.mu, fit.sigma), (0.0, 0.0));
        let fit = lognormal_fit(1.5f64.exp(), 4f64.exp()).unwrap();
        assert_relative_eq!(fit.mu, 1.0, epsilon = 1e-14);
        assert_relative_eq!(fit.sigma, 1.0, epsilon = 1e-14);
        assert!(matches!(lognormal_fit(2.0, 3.0), Err(InterferenceError::InvalidMoments { .. })));
        assert!(lognormal_fit(0.0, 1.0).is_err());
    }

    #[test]
    fn cdf_examples() {
        let m = lognormal_fit(1.5f64.exp(), 4f64.exp()).unwrap();
        assert_relative_eq!(isr_cdf(&m, m.median()).unwrap(), 0.5, epsilon = 1e-14);
        let std = IsrModel {
            mu: 0.0,
            sigma: 1.0,
            source_moments: IsrMoments { m1: 0.0, m2: 0.0 },
        };
        assert_relative_eq!(isr_cdf(&std, std::f64::consts::E).unwrap(), 0.841_344_746_068_543, epsilon = 1e-12);
        assert!(matches!(isr_cdf(&std, 0.0), Err(InterferenceError::Domain(_))));
        assert!(isr_cdf(&std, -1.0).is_err());
        assert!(isr_cdf(&std, 1e-300).unwrap() < 1e-12);
        assert!(isr_cdf(&std, 1e300).unwrap() > 1.0 - 1e-12);
        let point = lognormal_fit(2.0, 4.0).unwrap();
        assert_eq!(isr_cdf(&point, 1.999).unwrap(), 0.0);
        assert_eq!(isr_cdf(&point, 2.0001).unwrap(), 1.0);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let layout = build_layout(1732.0).unwrap();
        let g = LinkGeometry::bs_ms(&layout, 3.5, ShadowingSpec::uniform(8.0).unwrap()).unwrap();
        assert_eq!(sample_isr_exact(&g, 42), sample_isr_exact(&g, 42));
        assert_ne!(sample_isr_exact(&g, 42), sample_isr_exact(&g, 43));
        assert_eq!(sample_isr_batch(&g, 70_000, 5), sample_isr_batch(&g, 70_000, 5));
    }

    #[test]
    fn ks_distance_of_exact_lognormal_samples_is_small() {
        let model = IsrModel {
            mu: -1.0,
            sigma: 0.7,
            source_moments: IsrMoments { m1: 0.0, m2: 0.0 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..20_000).map(|_| (model.mu + model.sigma * rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)).exp()).collect();
        assert!(ks_distance(&model, &xs) < 0.015);
    }

    proptest! {
        #[test]
        fn fit_round_trip(mu in -12.0f64..4.0, sigma in 0.0f64..3.0) {
            let m1 = (mu + 0.5 * sigma * sigma).exp();
            let m2 = (2.0 * mu + 2.0 * sigma * sigma).exp();
            let fit = lognormal_fit(m1, m2).unwrap();
            prop_assert!((fit.mu - mu).abs() <= 1e-10 * (1.0 + mu.abs()));
            prop_assert!((fit.sigma - sigma).abs() <= 1e-7);
            let back1 = (fit.mu + 0.5 * fit.sigma * fit.sigma).exp();
            let back2 = (2.0 * fit.mu + 2.0 * fit.sigma * fit.sigma).exp();
            prop_assert!(((back1 - m1) / m1).abs() < 1e-10);
            prop_assert!(((back2 - m2) / m2).abs() < 1e-10);
        }

        #[test]
        fn cdf_is_monotone(mu in -5.0f64..2.0, sigma in 0.01f64..3.0, a in 1e-6f64..1e3, b in 1e-6f64..1e3) {
            let m = IsrModel { mu, sigma, source_moments: IsrMoments { m1: 0.0, m2: 0.0 } };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(isr_cdf(&m, lo).unwrap() <= isr_cdf(&m, hi).unwrap());
        }
    }
}
