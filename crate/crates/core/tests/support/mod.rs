//! Independent oracles used by the integration tests. Nothing here calls the
//! library routine it is checking.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use relay_blocking::geometry::{Hexagon, Point2D};
use relay_blocking::interference::{LinkGeometry, Target, DB_TO_NEPER};

/// Erlang-B by the textbook recurrence `B_k = ρB_{k−1} / (k + ρB_{k−1})`.
pub fn erlang_b_recurrence(servers: u32, load: f64) -> f64 {
    let mut b = 1.0;
    for k in 1..=servers {
        b = load * b / (k as f64 + load * b);
    }
    b
}

/// Per-class blocking by brute force over all occupancy vectors, with the
/// product-form weights accumulated in log space.
pub fn brute_force_blocking(capacity: u32, classes: &[(u32, f64)]) -> Vec<f64> {
    fn walk(
        c: usize,
        used: u32,
        log_w: f64,
        capacity: u32,
        classes: &[(u32, f64)],
        out: &mut Vec<(u32, f64)>,
    ) {
        if c == classes.len() {
            out.push((used, log_w));
            return;
        }
        let (m, rho) = classes[c];
        let mut u = 0u32;
        let mut lw = log_w;
        while used + u * m <= capacity {
            walk(c + 1, used + u * m, lw, capacity, classes, out);
            u += 1;
            if rho == 0.0 {
                break;
            }
            lw += rho.ln() - (u as f64).ln();
        }
    }
    let mut states = Vec::new();
    walk(0, 0, 0.0, capacity, classes, &mut states);
    let top = states.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = states.iter().map(|s| (s.1 - top).exp()).sum();
    classes
        .iter()
        .map(|&(m, _)| {
            states
                .iter()
                .filter(|(used, _)| used + m > capacity)
                .map(|s| (s.1 - top).exp())
                .sum::<f64>()
                / total
        })
        .collect()
}

/// Random loss system: `K ∈ 1..=30`, one to four classes with demand in
/// `1..=K` and load in `[0, 10]`.
pub fn random_loss_system<R: Rng>(rng: &mut R) -> (u32, Vec<(u32, f64)>) {
    let k = rng.random_range(1..=30u32);
    let n = rng.random_range(1..=4usize);
    let classes = (0..n)
        .map(|_| (rng.random_range(1..=k.min(8)), rng.random_range(0.0..=10.0)))
        .collect();
    (k, classes)
}

#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    fn from_sums(n: usize, sum: f64, sum_sq: f64) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = (sum_sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
        Self {
            mean,
            std_error: (var / nf).sqrt(),
        }
    }

    pub fn z_score(&self, value: f64) -> f64 {
        (value - self.mean) / self.std_error
    }
}

/// Uniform point in a hexagon by rejection from its bounding square.
pub fn uniform_point<R: Rng>(h: &Hexagon, rng: &mut R) -> Point2D {
    let r = h.circumradius;
    loop {
        let p = Point2D::new(
            h.center.x + r * (2.0 * rng.random::<f64>() - 1.0),
            h.center.y + r * (2.0 * rng.random::<f64>() - 1.0),
        );
        if h.contains(p) {
            return p;
        }
    }
}

fn target_point<R: Rng>(geom: &LinkGeometry, rng: &mut R) -> Point2D {
    match geom.target {
        Target::Point(p) => p,
        Target::Region(h) => uniform_point(&h, rng),
    }
}

/// `B_i = (d / d_i)^β` written out from distances.
fn factors(geom: &LinkGeometry, p: Point2D) -> Vec<f64> {
    let d = ((p.x - geom.serving.x).powi(2) + (p.y - geom.serving.y).powi(2)).sqrt();
    geom.interferers
        .iter()
        .map(|q| {
            let di = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt();
            (d / di).powf(geom.path_loss_exponent)
        })
        .collect()
}

const CHUNK: usize = 1 << 16;

fn chunked<F>(n: usize, seed: u64, f: F) -> Vec<(usize, f64, f64)>
where
    F: Fn(&mut ChaCha8Rng, usize) -> (f64, f64) + Sync,
{
    (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            let len = CHUNK.min(n - c * CHUNK);
            let (s, s2) = f(&mut rng, len);
            (len, s, s2)
        })
        .collect()
}

/// Area-sampled `E[ΣB]`, `E[(ΣB)²]`, `E[ΣB²]`.
pub fn area_sampled_spatial(geom: &LinkGeometry, n: usize, seed: u64) -> [Estimate; 3] {
    let parts: Vec<[(f64, f64); 3]> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            let mut acc = [(0.0, 0.0); 3];
            for _ in 0..CHUNK.min(n - c * CHUNK) {
                let b = factors(geom, target_point(geom, &mut rng));
                let sum: f64 = b.iter().sum();
                let vals = [sum, sum * sum, b.iter().map(|x| x * x).sum()];
                for (a, v) in acc.iter_mut().zip(vals) {
                    a.0 += v;
                    a.1 += v * v;
                }
            }
            acc
        })
        .collect();
    let mut out = [Estimate {
        mean: 0.0,
        std_error: 0.0,
    }; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let s: f64 = parts.iter().map(|p| p[k].0).sum();
        let s2: f64 = parts.iter().map(|p| p[k].1).sum();
        *o = Estimate::from_sums(n, s, s2);
    }
    out
}

/// Monte Carlo estimate of `E[I^k]` for `I = Σ B_i 10^{(X_i − X_0)/10}`,
/// sampling the target position and the interferer shadowings `X_i`.
///
/// Plain sampling of `I^k` is hopeless for 8 dB shadowing (the estimator's
/// own variance involves `e^{4k²s²}`), so the Gaussians are importance
/// sampled. Tilting `X_0` by `−k s_0²` (nepers) turns `e^{−kX_0}` times its
/// likelihood ratio into the constant `e^{k²s_0²/2}`, so `X_0` needs no draw.
/// The interferers come from a defensive mixture that shifts one of them by
/// `k s_i²`, chosen with probability ∝ `B_i^k`. The weighted estimator is
/// unbiased and bounded.
pub fn mc_isr_moment(geom: &LinkGeometry, k: u32, n: usize, seed: u64) -> Estimate {
    let s0 = DB_TO_NEPER * geom.shadowing.sigma_serving_db;
    let si = DB_TO_NEPER * geom.shadowing.sigma_interferer_db;
    let kf = k as f64;
    let shift = kf * si * si;
    let defensive = 0.1;
    let parts = chunked(n, seed, |rng, len| {
        let (mut s, mut s2) = (0.0, 0.0);
        let mut y = vec![0.0; geom.interferers.len()];
        for _ in 0..len {
            let b = factors(geom, target_point(geom, rng));
            let bk: Vec<f64> = b.iter().map(|x| x.powf(kf)).collect();
            let bk_total: f64 = bk.iter().sum();
            // pick the mixture component
            let u: f64 = rng.random();
            let mut chosen = None;
            if u >= defensive {
                let mut acc = defensive;
                for (i, w) in bk.iter().enumerate() {
                    acc += (1.0 - defensive) * w / bk_total;
                    if u < acc {
                        chosen = Some(i);
                        break;
                    }
                }
                chosen.get_or_insert(bk.len() - 1);
            }
            for (i, yi) in y.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                *yi = si * z + if chosen == Some(i) { shift } else { 0.0 };
            }
            // under the tilt, e^{−kY_0} times its likelihood ratio is constant
            let serving = (kf * kf * s0 * s0 / 2.0).exp();
            let density_ratio = if si > 0.0 {
                defensive
                    + (1.0 - defensive)
                        * bk.iter()
                            .zip(&y)
                            .map(|(w, yi)| w / bk_total * (kf * yi - kf * kf * si * si / 2.0).exp())
                            .sum::<f64>()
            } else {
                1.0
            };
            let isr: f64 = b.iter().zip(&y).map(|(bi, yi)| bi * yi.exp()).sum();
            let v = serving * isr.powf(kf) / density_ratio;
            s += v;
            s2 += v * v;
        }
        (s, s2)
    });
    let s: f64 = parts.iter().map(|p| p.1).sum();
    let s2: f64 = parts.iter().map(|p| p.2).sum();
    Estimate::from_sums(n, s, s2)
}

/// `E[I]`, `E[I²]` of a lognormal with parameters `(μ, σ)`.
pub fn lognormal_moments(mu: f64, sigma: f64) -> (f64, f64) {
    ((mu + sigma * sigma / 2.0).exp(), (2.0 * mu + 2.0 * sigma * sigma).exp())
}

/// The sign-flipped inversion, `μ = 2 ln m1 + ½ ln m2`, kept to show it fails.
pub fn sign_flipped_inversion(m1: f64, m2: f64) -> (f64, f64) {
    (2.0 * m1.ln() + 0.5 * m2.ln(), -2.0 * m1.ln() + m2.ln())
}

/// `ceil(A / log10(1 + 1/I))` evaluated directly.
pub fn requirement_direct(isr: f64, a: f64) -> u64 {
    (a / (1.0 + 1.0 / isr).log10()).ceil().max(1.0) as u64
}
