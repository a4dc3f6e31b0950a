//! Interchangeable evaluators for a [`LossSystem`], registered by name.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{blocking_set, product_form_probabilities, ErlangError, LossSystem, DEFAULT_MAX_STATES};
use crate::registry::{Named, Registry};

/// Rescaling threshold for the occupancy recursion.
const RESCALE_ABOVE: f64 = 1e200;

/// Largest state space solved by dense LU; bigger ones use Gauss-Seidel.
pub const GLOBAL_BALANCE_DENSE_LIMIT: usize = 2_500;

/// Gauss-Seidel stops once a sweep moves no probability by more than this
/// (relative to the largest one).
const GAUSS_SEIDEL_TOLERANCE: f64 = 1e-15;
const GAUSS_SEIDEL_MAX_SWEEPS: usize = 200_000;

/// Distribution of busy subcarriers, `q[j] = P(j in use)`, `j = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    pub q: Vec<f64>,
}

impl Occupancy {
    pub fn capacity(&self) -> u32 {
        (self.q.len() - 1) as u32
    }

    /// Probability that fewer than `demand` subcarriers are free.
    pub fn blocking(&self, demand: u32) -> f64 {
        let k = self.capacity();
        if demand > k {
            return 1.0;
        }
        let first = (k - demand + 1) as usize;
        self.q[first..].iter().sum::<f64>().min(1.0)
    }

    pub fn mean(&self) -> f64 {
        self.q.iter().enumerate().map(|(j, p)| j as f64 * p).sum()
    }
}

pub trait LossEvaluator: Named + Send + Sync + fmt::Debug {
    fn occupancy(&self, sys: &LossSystem) -> Result<Occupancy, ErlangError>;

    fn per_class_blocking(&self, sys: &LossSystem) -> Result<Vec<f64>, ErlangError> {
        let occ = self.occupancy(sys)?;
        Ok(sys.demands().map(|d| occ.blocking(d)).collect())
    }
}

/// Sums product-form state probabilities; per-class blocking is the mass of
/// each class's blocking set.
#[derive(Debug, Clone, Copy)]
pub struct Enumeration {
    pub max_states: usize,
}

impl Default for Enumeration {
    fn default() -> Self {
        Self {
            max_states: DEFAULT_MAX_STATES,
        }
    }
}

impl Named for Enumeration {
    fn name(&self) -> &'static str {
        "enumeration"
    }
}

impl LossEvaluator for Enumeration {
    fn occupancy(&self, sys: &LossSystem) -> Result<Occupancy, ErlangError> {
        let dist = product_form_probabilities(sys, self.max_states)?;
        let mut q = vec![0.0; sys.capacity as usize + 1];
        for (s, p) in dist.states.iter().zip(&dist.probabilities) {
            q[sys.occupancy_of(s) as usize] += p;
        }
        Ok(Occupancy { q })
    }

    fn per_class_blocking(&self, sys: &LossSystem) -> Result<Vec<f64>, ErlangError> {
        let dist = product_form_probabilities(sys, self.max_states)?;
        let index: HashMap<&[u32], f64> = dist
            .states
            .iter()
            .map(Vec::as_slice)
            .zip(dist.probabilities.iter().copied())
            .collect();
        Ok((0..sys.classes.len())
            .map(|c| {
                blocking_set(sys, c, &dist.states)
                    .iter()
                    .map(|s| index[s.as_slice()])
                    .sum::<f64>()
                    .min(1.0)
            })
            .collect())
    }
}

/// Occupancy recursion `j·q(j) = Σ_c M_c ρ_c q(j − M_c)`, rescaled on the fly
/// so large capacities and loads stay within floating-point range.
#[derive(Debug, Clone, Copy, Default)]
pub struct Recursion;

impl Named for Recursion {
    fn name(&self) -> &'static str {
        "recursion"
    }
}

impl LossEvaluator for Recursion {
    fn occupancy(&self, sys: &LossSystem) -> Result<Occupancy, ErlangError> {
        Ok(occupancy_recursion(sys))
    }
}

pub fn occupancy_recursion(sys: &LossSystem) -> Occupancy {
    let k = sys.capacity as usize;
    let active: Vec<(usize, f64)> = sys
        .classes
        .iter()
        .filter(|c| c.demand as usize <= k && c.load > 0.0)
        .map(|c| (c.demand as usize, c.demand as f64 * c.load))
        .collect();
    let mut q = vec![0.0; k + 1];
    q[0] = 1.0;
    for j in 1..=k {
        let s: f64 = active
            .iter()
            .filter(|(m, _)| *m <= j)
            .map(|(m, a)| a * q[j - m])
            .sum();
        q[j] = s / j as f64;
        if q[j] > RESCALE_ABOVE {
            let scale = 1.0 / q[j];
            q[..=j].iter_mut().for_each(|v| *v *= scale);
        }
    }
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    Occupancy { q }
}

/// Builds the continuous-time rate matrix over the feasible states and solves
/// `πQ = 0, Σπ = 1`: dense LU up to `dense_limit` states, Gauss-Seidel on the
/// sparse balance equations beyond. Independent of the product form.
#[derive(Debug, Clone, Copy)]
pub struct GlobalBalance {
    pub max_states: usize,
    pub dense_limit: usize,
}

impl Default for GlobalBalance {
    fn default() -> Self {
        Self {
            max_states: DEFAULT_MAX_STATES,
            dense_limit: GLOBAL_BALANCE_DENSE_LIMIT,
        }
    }
}

impl Named for GlobalBalance {
    fn name(&self) -> &'static str {
        "global-balance"
    }
}

/// Transitions into each state, plus each state's total outflow.
struct Generator {
    inflow: Vec<Vec<(usize, f64)>>,
    outflow: Vec<f64>,
}

fn generator(sys: &LossSystem, states: &[Vec<u32>]) -> Generator {
    let n = states.len();
    let index: HashMap<&[u32], usize> = states.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();
    let mut inflow = vec![Vec::new(); n];
    let mut outflow = vec![0.0; n];
    let mut next = Vec::with_capacity(sys.classes.len());
    for (i, s) in states.iter().enumerate() {
        let used = sys.occupancy_of(s);
        for (c, class) in sys.classes.iter().enumerate() {
            if class.load > 0.0 && used + class.demand <= sys.capacity {
                next.clear();
                next.extend_from_slice(s);
                next[c] += 1;
                inflow[index[next.as_slice()]].push((i, class.load));
                outflow[i] += class.load;
            }
            if s[c] > 0 {
                next.clear();
                next.extend_from_slice(s);
                next[c] -= 1;
                inflow[index[next.as_slice()]].push((i, s[c] as f64));
                outflow[i] += s[c] as f64;
            }
        }
    }
    Generator { inflow, outflow }
}

fn solve_dense(g: &Generator) -> Result<Vec<f64>, ErlangError> {
    let n = g.outflow.len();
    // a[(to, from)] = rate from -> to; diagonal holds minus the outflow
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (j, ins) in g.inflow.iter().enumerate() {
        for &(i, r) in ins {
            a[(j, i)] += r;
        }
        a[(j, j)] -= g.outflow[j];
    }
    for col in 0..n {
        a[(n - 1, col)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a.lu().solve(&rhs).ok_or(ErlangError::Singular)?;
    Ok(pi.iter().copied().collect())
}

fn solve_gauss_seidel(g: &Generator) -> Result<Vec<f64>, ErlangError> {
    let n = g.outflow.len();
    let mut pi = vec![1.0 / n as f64; n];
    // the empty state (index 0) has no outflow only in a system with no
    // admissible class, in which case it holds all the mass
    for _ in 0..GAUSS_SEIDEL_MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for j in 0..n {
            if g.outflow[j] == 0.0 {
                continue;
            }
            let v = g.inflow[j].iter().map(|&(i, r)| pi[i] * r).sum::<f64>() / g.outflow[j];
            change = change.max((v - pi[j]).abs());
            pi[j] = v;
        }
        let total: f64 = pi.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(ErlangError::Singular);
        }
        pi.iter_mut().for_each(|p| *p /= total);
        let top = pi.iter().cloned().fold(0.0, f64::max);
        if change / total <= GAUSS_SEIDEL_TOLERANCE * top {
            return Ok(pi);
        }
    }
    Err(ErlangError::Singular)
}

impl GlobalBalance {
    pub fn stationary(&self, sys: &LossSystem) -> Result<(Vec<Vec<u32>>, Vec<f64>), ErlangError> {
        let states = super::enumerate_states(sys, self.max_states)?;
        if states.len() == 1 {
            return Ok((states, vec![1.0]));
        }
        let g = generator(sys, &states);
        let pi = if states.len() <= self.dense_limit {
            solve_dense(&g)?
        } else {
            solve_gauss_seidel(&g)?
        };
        Ok((states, pi))
    }
}

impl LossEvaluator for GlobalBalance {
    fn occupancy(&self, sys: &LossSystem) -> Result<Occupancy, ErlangError> {
        let (states, pi) = self.stationary(sys)?;
        let mut q = vec![0.0; sys.capacity as usize + 1];
        for (s, p) in states.iter().zip(&pi) {
            q[sys.occupancy_of(s) as usize] += p;
        }
        Ok(Occupancy { q })
    }
}

/// Registry holding `enumeration`, `recursion` and `global-balance`.
pub fn default_evaluators() -> Registry<dyn LossEvaluator> {
    let mut reg: Registry<dyn LossEvaluator> = Registry::new("evaluator");
    reg.register(Arc::new(Enumeration::default()))
        .register(Arc::new(Recursion))
        .register(Arc::new(GlobalBalance::default()));
    reg
}
