//! Exact belief propagation on the tree.
//!
//! Classification runs a single leaf-to-root sweep over indicator leaf
//! beliefs. Denoising initializes the leaves with Gaussian likelihoods, runs
//! the same leaf-to-root sweep, then a root-to-leaf sweep that reuses the
//! cached child-to-parent messages instead of recomputing subtree products.
//! Every belief is renormalized after each node update; the scale factors are
//! accumulated so the evidence is still available.
//!
//! The root marginal is kept separate from the layer-1 tables and multiplied
//! in at the root, so stored beliefs are prior-free subtree likelihoods and
//! the posterior applies the prior once.

use crate::error::{GhmError, Result};
use crate::params::GhmParams;

/// Per-node probability vectors indexed `[layer][offset]`.
pub type BeliefLayers = Vec<Vec<Vec<f64>>>;

/// Output of the classification sweep.
#[derive(Debug, Clone)]
pub struct ClassifyBeliefs {
    /// Normalized prior-free beliefs for every node.
    pub beliefs: BeliefLayers,
    /// Posterior over the root label, prior applied.
    pub posterior: Vec<f64>,
    /// Log marginal probability of the observed leaves.
    pub log_evidence: f64,
}

/// Output of the denoising sweeps.
#[derive(Debug, Clone)]
pub struct DenoiseBeliefs {
    /// Leaf-to-root beliefs (prior-free).
    pub down: BeliefLayers,
    /// Root-to-leaf beliefs; the root entry is the root marginal.
    pub up: BeliefLayers,
    /// Posterior over each leaf state.
    pub leaf_posterior: Vec<Vec<f64>>,
    /// Posterior mean per leaf.
    pub mean: Vec<f64>,
    /// Posterior over the root label given the observation.
    pub root_posterior: Vec<f64>,
}

/// Bayes classifier posterior over the root label.
pub fn classify(params: &GhmParams, leaves: &[usize]) -> Result<Vec<f64>> {
    Ok(classify_full(params, leaves)?.posterior)
}

/// Classification sweep retaining every node belief.
pub fn classify_full(params: &GhmParams, leaves: &[usize]) -> Result<ClassifyBeliefs> {
    let init = indicator_init(params, leaves)?;
    let sweep = downward_sweep(params, init);
    let (posterior, root_log_sum) = apply_prior(params, &sweep.beliefs[0][0]);
    Ok(ClassifyBeliefs {
        beliefs: sweep.beliefs,
        posterior,
        log_evidence: sweep.log_scale + root_log_sum,
    })
}

/// Bayes denoiser: per-leaf posteriors and posterior mean given `z`.
pub fn denoise(params: &GhmParams, z: &[f64], noise_variance: f64) -> Result<DenoiseBeliefs> {
    let init = gaussian_init(params, z, noise_variance)?;
    Ok(denoise_with_init(params, init))
}

/// Denoising sweeps over an arbitrary (unnormalized, nonnegative) leaf
/// likelihood. Used with indicator likelihoods to cross-check the
/// classification path.
pub(crate) fn denoise_with_init(params: &GhmParams, init: Vec<Vec<f64>>) -> DenoiseBeliefs {
    let s = params.states();
    let topology = params.topology();
    let depth = topology.depth();
    let likelihood = init.clone();
    let sweep = downward_sweep(params, init);
    let (root_posterior, _) = apply_prior(params, &sweep.beliefs[0][0]);

    // Root-to-leaf sweep. The root's upward belief is the prior itself.
    let mut up: BeliefLayers = (0..=depth)
        .map(|l| vec![Vec::new(); topology.layer_size(l)])
        .collect();
    up[0][0] = params.root_marginal().to_vec();
    for layer in 1..=depth {
        let m = topology.branching(layer);
        for parent_offset in 0..topology.layer_size(layer - 1) {
            let family: Vec<&[f64]> = (0..m)
                .map(|k| sweep.messages[layer][parent_offset * m + k].as_slice())
                .collect();
            // Prefix/suffix products over sibling messages avoid dividing by
            // a message that may be zero under degenerate tables.
            let mut prefix = vec![vec![1.0; s]; m + 1];
            for k in 0..m {
                for b in 0..s {
                    prefix[k + 1][b] = prefix[k][b] * family[k][b];
                }
            }
            let mut suffix = vec![vec![1.0; s]; m + 1];
            for k in (0..m).rev() {
                for b in 0..s {
                    suffix[k][b] = suffix[k + 1][b] * family[k][b];
                }
            }
            let parent_up = up[layer - 1][parent_offset].clone();
            for k in 0..m {
                let offset = parent_offset * m + k;
                let table = params.psi(layer, k + 1);
                let mut belief = vec![0.0; s];
                for x in 1..=s {
                    let mut acc = 0.0;
                    for b in 1..=s {
                        let exclusive = prefix[k][b - 1] * suffix[k + 1][b - 1];
                        acc += table.prob(b, x) * parent_up[b - 1] * exclusive;
                    }
                    belief[x - 1] = acc;
                }
                normalize_in_place(&mut belief);
                up[layer][offset] = belief;
            }
        }
    }

    let d = topology.num_leaves();
    let mut leaf_posterior = Vec::with_capacity(d);
    let mut mean = Vec::with_capacity(d);
    for v in 0..d {
        let mut post: Vec<f64> = up[depth][v]
            .iter()
            .zip(&likelihood[v])
            .map(|(&u, &w)| u * w)
            .collect();
        normalize_in_place(&mut post);
        mean.push(
            post.iter()
                .enumerate()
                .map(|(j, &p)| (j + 1) as f64 * p)
                .sum(),
        );
        leaf_posterior.push(post);
    }

    DenoiseBeliefs {
        down: sweep.beliefs,
        up,
        leaf_posterior,
        mean,
        root_posterior,
    }
}

struct DownwardSweep {
    beliefs: BeliefLayers,
    /// `messages[layer][offset]` is the child-to-parent message of that node,
    /// `msg_v(b) = sum_a psi(b, a) * belief_v(a)`. Empty at the root layer.
    messages: BeliefLayers,
    /// Accumulated log normalization factors (evidence bookkeeping).
    log_scale: f64,
}

/// Leaf-to-root sweep from arbitrary nonnegative leaf beliefs.
fn downward_sweep(params: &GhmParams, leaf_init: Vec<Vec<f64>>) -> DownwardSweep {
    let s = params.states();
    let topology = params.topology();
    let depth = topology.depth();
    let mut beliefs: BeliefLayers = (0..=depth)
        .map(|l| vec![Vec::new(); topology.layer_size(l)])
        .collect();
    let mut messages: BeliefLayers = (0..=depth)
        .map(|l| vec![Vec::new(); topology.layer_size(l)])
        .collect();
    let mut log_scale = 0.0;

    for (offset, mut belief) in leaf_init.into_iter().enumerate() {
        log_scale += normalize_in_place(&mut belief);
        beliefs[depth][offset] = belief;
    }

    // Messages to the parent layer, then the parent beliefs.
    for layer in (1..=depth).rev() {
        let m = topology.branching(layer);
        for offset in 0..topology.layer_size(layer) {
            let table = params.psi(layer, offset % m + 1);
            let belief = &beliefs[layer][offset];
            let mut msg = vec![0.0; s];
            for b in 1..=s {
                let row = table.row(b);
                msg[b - 1] = row.iter().zip(belief).map(|(&p, &q)| p * q).sum();
            }
            messages[layer][offset] = msg;
        }
        for parent_offset in 0..topology.layer_size(layer - 1) {
            let mut belief = vec![1.0; s];
            for k in 0..m {
                let msg = &messages[layer][parent_offset * m + k];
                for b in 0..s {
                    belief[b] *= msg[b];
                }
            }
            log_scale += normalize_in_place(&mut belief);
            beliefs[layer - 1][parent_offset] = belief;
        }
    }

    DownwardSweep {
        beliefs,
        messages,
        log_scale,
    }
}

/// Multiplies the root marginal into a prior-free root belief. Returns the
/// posterior and the log of the pre-normalization sum.
fn apply_prior(params: &GhmParams, root_belief: &[f64]) -> (Vec<f64>, f64) {
    let mut posterior: Vec<f64> = params
        .root_marginal()
        .iter()
        .zip(root_belief)
        .map(|(&p, &b)| p * b)
        .collect();
    let log_sum = normalize_in_place(&mut posterior);
    (posterior, log_sum)
}

/// Divides by the sum; returns the log of the sum.
fn normalize_in_place(v: &mut [f64]) -> f64 {
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        for x in v.iter_mut() {
            *x /= sum;
        }
        sum.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn indicator_init(params: &GhmParams, leaves: &[usize]) -> Result<Vec<Vec<f64>>> {
    let s = params.states();
    let d = params.topology().num_leaves();
    if leaves.len() != d {
        return Err(GhmError::DimensionMismatch {
            expected: d,
            got: leaves.len(),
        });
    }
    leaves
        .iter()
        .map(|&x| {
            if x < 1 || x > s {
                return Err(GhmError::InvalidSample(format!(
                    "leaf state {x} outside 1..={s}"
                )));
            }
            let mut v = vec![0.0; s];
            v[x - 1] = 1.0;
            Ok(v)
        })
        .collect()
}

pub(crate) fn gaussian_init(
    params: &GhmParams,
    z: &[f64],
    noise_variance: f64,
) -> Result<Vec<Vec<f64>>> {
    let s = params.states();
    let d = params.topology().num_leaves();
    if z.len() != d {
        return Err(GhmError::DimensionMismatch {
            expected: d,
            got: z.len(),
        });
    }
    if !(noise_variance > 0.0) {
        return Err(GhmError::InvalidNoise(noise_variance));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(GhmError::Numeric("non-finite observation".into()));
    }
    Ok(z.iter()
        .map(|&zv| {
            // Stabilized: subtract the max exponent before exponentiating.
            let logs: Vec<f64> = (1..=s)
                .map(|x| {
                    let dev = x as f64 - zv;
                    -dev * dev / (2.0 * noise_variance)
                })
                .collect();
            let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            logs.iter().map(|&l| (l - max).exp()).collect()
        })
        .collect())
}
