//! Exact Bayesian posterior over the bright-state occupation on a uniform
//! grid: log-space likelihood accumulation, log-sum-exp normalization, and
//! moment extraction. Serves as the E-step engine and the network's training
//! oracle.

use serde::{Deserialize, Serialize};

use crate::counts::{count_histogram, SuperPoissonParams};
use crate::error::{Error, Result};

/// Default number of grid nodes, endpoints included.
pub const DEFAULT_GRID_SIZE: usize = 1001;

/// Prior over the occupation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorSpec {
    /// Flat prior; the default for all inference paths.
    Uniform,
    /// Explicit per-node masses (non-negative, summing to 1).
    Grid(Vec<f64>),
}

impl PriorSpec {
    fn validate(&self, grid_size: usize) -> Result<()> {
        match self {
            PriorSpec::Uniform => Ok(()),
            PriorSpec::Grid(masses) => {
                if masses.len() != grid_size {
                    return Err(Error::GridMismatch {
                        expected: grid_size,
                        got: masses.len(),
                    });
                }
                if masses.iter().any(|&m| !m.is_finite() || m < 0.0) {
                    return Err(Error::InvariantViolation(
                        "prior masses must be finite and non-negative".into(),
                    ));
                }
                let total: f64 = masses.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvariantViolation(format!(
                        "prior masses sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Discretized posterior `P(l | {n_i})`: uniform nodes on [0, 1], normalized
/// masses, and the first two moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    nodes: Vec<f64>,
    masses: Vec<f64>,
    mean: f64,
    sd: f64,
}

impl PosteriorGrid {
    /// Build a grid from raw masses, normalizing and computing moments.
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        if masses.len() < 2 {
            return Err(Error::Domain("grid needs at least 2 nodes".into()));
        }
        if masses.iter().any(|&m| !m.is_finite() || m < 0.0) {
            return Err(Error::Numerical("masses must be finite and non-negative".into()));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(Error::Numerical("total posterior mass is zero".into()));
        }
        let nodes = grid_nodes(masses.len());
        let masses: Vec<f64> = masses.into_iter().map(|m| m / total).collect();
        let (mean, sd) = moments(&nodes, &masses);
        Ok(Self {
            nodes,
            masses,
            mean,
            sd,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Posterior mean occupation.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Posterior standard deviation.
    pub fn sd(&self) -> f64 {
        self.sd
    }
}

/// Uniform nodes on [0, 1] inclusive of both endpoints.
pub fn grid_nodes(grid_size: usize) -> Vec<f64> {
    let step = 1.0 / (grid_size - 1) as f64;
    (0..grid_size).map(|k| k as f64 * step).collect()
}

/// Discrete mean and SD of a normalized grid.
///
/// Errors when the masses do not sum to 1, as required of posterior input.
pub fn posterior_moments(nodes: &[f64], masses: &[f64]) -> Result<(f64, f64)> {
    if nodes.len() != masses.len() {
        return Err(Error::GridMismatch {
            expected: nodes.len(),
            got: masses.len(),
        });
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > 1e-7 {
        return Err(Error::InvariantViolation(format!(
            "masses sum to {total}, expected 1"
        )));
    }
    Ok(moments(nodes, masses))
}

fn moments(nodes: &[f64], masses: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    for (node, mass) in nodes.iter().zip(masses) {
        mean += node * mass;
    }
    let mut var = 0.0;
    for (node, mass) in nodes.iter().zip(masses) {
        let d = node - mean;
        var += mass * d * d;
    }
    (mean, var.max(0.0).sqrt())
}

/// How per-shot likelihood terms are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Accumulation {
    /// Collapse duplicate counts and weight by multiplicity (default; the
    /// main single-thread optimization, exact by construction).
    UniqueCounts,
    /// Evaluate every shot individually. Used by the timing benchmark, where
    /// per-shot cost is the quantity under study.
    PerShot,
}

/// Compute the grid posterior of Bayes' rule for the binary mixture:
/// at node `l`, accumulate `Σ_i ln[(1-l) g(n_i) + l f(n_i)]` plus the log
/// prior, then normalize with log-sum-exp. Empty `counts` returns the prior.
pub fn compute_posterior(
    counts: &[u32],
    g: &SuperPoissonParams,
    f: &SuperPoissonParams,
    prior: &PriorSpec,
    grid_size: usize,
) -> Result<PosteriorGrid> {
    compute_posterior_opts(counts, g, f, prior, grid_size, Accumulation::UniqueCounts)
}

/// `compute_posterior` with an explicit accumulation strategy.
pub fn compute_posterior_opts(
    counts: &[u32],
    g: &SuperPoissonParams,
    f: &SuperPoissonParams,
    prior: &PriorSpec,
    grid_size: usize,
    accumulation: Accumulation,
) -> Result<PosteriorGrid> {
    if grid_size < 2 {
        return Err(Error::Domain(format!("grid size must be >= 2, got {grid_size}")));
    }
    prior.validate(grid_size)?;

    let nodes = grid_nodes(grid_size);
    let mut log_post = vec![0.0f64; grid_size];

    match accumulation {
        Accumulation::UniqueCounts => {
            // Ascending unique counts fix the summation order for bit
            // reproducibility.
            for &(n, mult) in &count_histogram(counts) {
                accumulate_count(&mut log_post, &nodes, g, f, n, mult as f64);
            }
        }
        Accumulation::PerShot => {
            for &n in counts {
                accumulate_count(&mut log_post, &nodes, g, f, n, 1.0);
            }
        }
    }

    match prior {
        PriorSpec::Uniform => {}
        PriorSpec::Grid(masses) => {
            for (lp, &m) in log_post.iter_mut().zip(masses) {
                *lp = if m > 0.0 { *lp + m.ln() } else { f64::NEG_INFINITY };
            }
        }
    }

    normalize_log_masses(log_post)
}

/// Add `mult * ln[(1-l) g(n) + l f(n)]` to every node.
///
/// The mixture is evaluated relative to the larger of the two log masses so
/// that neither term underflows; endpoints use the exact single-component
/// log mass directly.
fn accumulate_count(
    log_post: &mut [f64],
    nodes: &[f64],
    g: &SuperPoissonParams,
    f: &SuperPoissonParams,
    n: u32,
    mult: f64,
) {
    let ln_g = g.ln_pmf(n);
    let ln_f = f.ln_pmf(n);
    let scale = ln_g.max(ln_f);
    let g_rel = (ln_g - scale).exp();
    let f_rel = (ln_f - scale).exp();

    let last = log_post.len() - 1;
    log_post[0] += mult * ln_g;
    log_post[last] += mult * ln_f;
    for k in 1..last {
        let l = nodes[k];
        log_post[k] += mult * (scale + ((1.0 - l) * g_rel + l * f_rel).ln());
    }
}

fn normalize_log_masses(log_post: Vec<f64>) -> Result<PosteriorGrid> {
    let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical(format!(
            "log-likelihood peak is {max}; cannot normalize"
        )));
    }
    let masses: Vec<f64> = log_post.iter().map(|&lp| (lp - max).exp()).collect();
    PosteriorGrid::from_masses(masses)
}
