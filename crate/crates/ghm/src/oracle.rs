//! Brute-force ground truth by exhaustive enumeration.
//!
//! Every inference path in this crate is validated against these functions
//! at desk scale. They deliberately avoid any factorization tricks: each
//! configuration of the unobserved nodes is visited once and weighed by the
//! plain product of model terms, in the log domain with a running
//! max-rescaled accumulator so that joint masses near `2^-40` survive.

use crate::error::{GhmError, Result};
use crate::params::GhmParams;

/// Hard cap on enumerated configuration counts. Overridable through the
/// `*_capped` variants.
pub const DEFAULT_ENUMERATION_LIMIT: u64 = 10_000_000;

/// Online log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
struct LogSumAcc {
    max: f64,
    sum: f64,
}

impl LogSumAcc {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn add(&mut self, lp: f64) {
        if lp == f64::NEG_INFINITY {
            return;
        }
        if lp <= self.max {
            self.sum += (lp - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - lp).exp() + 1.0;
            self.max = lp;
        }
    }

    fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Per-leaf posteriors and posterior mean for the denoising task.
#[derive(Debug, Clone)]
pub struct DenoisePosterior {
    /// `marginals[v][s - 1]` is the posterior probability of leaf `v` being
    /// in state `s` given the noisy observation.
    pub marginals: Vec<Vec<f64>>,
    /// Posterior mean per leaf; every coordinate lies in `[1, S]`.
    pub mean: Vec<f64>,
}

/// Exact posterior over the root label given the leaves, by enumerating all
/// root and hidden-layer configurations.
pub fn posterior_label(params: &GhmParams, leaves: &[usize]) -> Result<Vec<f64>> {
    posterior_label_capped(params, leaves, DEFAULT_ENUMERATION_LIMIT)
}

pub fn posterior_label_capped(
    params: &GhmParams,
    leaves: &[usize],
    limit: u64,
) -> Result<Vec<f64>> {
    Ok(posterior_label_full(params, leaves, limit)?.0)
}

/// Posterior together with the log evidence `log p(leaves)`.
pub fn posterior_label_full(
    params: &GhmParams,
    leaves: &[usize],
    limit: u64,
) -> Result<(Vec<f64>, f64)> {
    let topology = params.topology();
    let s = params.states();
    check_leaves(params, leaves)?;

    // Unobserved nodes: root plus layers 1..L-1, breadth-first.
    let hidden_count: usize = 1 + (1..topology.depth())
        .map(|l| topology.layer_size(l))
        .sum::<usize>();
    check_budget(s, hidden_count, limit)?;

    let mut acc = vec![LogSumAcc::new(); s];
    let mut states = vec![1usize; hidden_count];
    loop {
        let lp = log_weight_hidden(params, &states, leaves);
        acc[states[0] - 1].add(lp);
        if !advance(&mut states, s) {
            break;
        }
    }
    let logs: Vec<f64> = acc.iter().map(|a| a.value()).collect();
    let mut total = LogSumAcc::new();
    for &lp in &logs {
        total.add(lp);
    }
    let log_evidence = total.value();
    let probs = logs.iter().map(|&lp| (lp - log_evidence).exp()).collect();
    Ok((probs, log_evidence))
}

/// Log marginal probability of a full leaf configuration.
pub fn leaf_log_marginal(params: &GhmParams, leaves: &[usize], limit: u64) -> Result<f64> {
    Ok(posterior_label_full(params, leaves, limit)?.1)
}

/// Exact per-leaf posteriors and posterior mean given Gaussian-corrupted
/// leaves, by enumerating every node configuration.
pub fn posterior_denoise(
    params: &GhmParams,
    z: &[f64],
    noise_variance: f64,
) -> Result<DenoisePosterior> {
    posterior_denoise_capped(params, z, noise_variance, DEFAULT_ENUMERATION_LIMIT)
}

pub fn posterior_denoise_capped(
    params: &GhmParams,
    z: &[f64],
    noise_variance: f64,
    limit: u64,
) -> Result<DenoisePosterior> {
    let topology = params.topology();
    let s = params.states();
    let d = topology.num_leaves();
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
    let node_count = topology.num_nodes();
    check_budget(s, node_count, limit)?;

    let mut total = LogSumAcc::new();
    let mut per_leaf = vec![LogSumAcc::new(); d * s];
    let mut states = vec![1usize; node_count];
    let leaf_base = node_count - d;
    loop {
        let leaves = &states[leaf_base..];
        let mut lp = log_weight_hidden(params, &states[..leaf_base], leaves);
        for (zv, &xv) in z.iter().zip(leaves) {
            let dev = xv as f64 - zv;
            lp -= dev * dev / (2.0 * noise_variance);
        }
        total.add(lp);
        for (v, &xv) in leaves.iter().enumerate() {
            per_leaf[v * s + (xv - 1)].add(lp);
        }
        if !advance(&mut states, s) {
            break;
        }
    }
    let log_evidence = total.value();
    let mut marginals = Vec::with_capacity(d);
    let mut mean = Vec::with_capacity(d);
    for v in 0..d {
        let probs: Vec<f64> = (0..s)
            .map(|j| (per_leaf[v * s + j].value() - log_evidence).exp())
            .collect();
        mean.push(
            probs
                .iter()
                .enumerate()
                .map(|(j, &p)| (j + 1) as f64 * p)
                .sum(),
        );
        marginals.push(probs);
    }
    Ok(DenoisePosterior { marginals, mean })
}

/// Log weight of one configuration: the joint mass of the hidden states
/// (breadth-first over the root and layers `1..L-1`) together with the
/// observed leaves.
fn log_weight_hidden(params: &GhmParams, hidden: &[usize], leaves: &[usize]) -> f64 {
    let topology = params.topology();
    let depth = topology.depth();
    let mut lp = params.log_root_marginal()[hidden[0] - 1];
    let mut layer_start = 1usize;
    let mut parent_start = 0usize;
    for layer in 1..=depth {
        let m = topology.branching(layer);
        let size = topology.layer_size(layer);
        let states: &[usize] = if layer == depth {
            leaves
        } else {
            &hidden[layer_start..layer_start + size]
        };
        let parents: &[usize] = &hidden[parent_start..layer_start.min(hidden.len())];
        for (offset, &state) in states.iter().enumerate() {
            let parent_state = parents[offset / m];
            lp += params.psi(layer, offset % m + 1).log_prob(parent_state, state);
        }
        parent_start = layer_start;
        layer_start += size;
    }
    lp
}

fn advance(states: &mut [usize], s: usize) -> bool {
    for v in states.iter_mut().rev() {
        if *v < s {
            *v += 1;
            return true;
        }
        *v = 1;
    }
    false
}

fn check_budget(s: usize, nodes: usize, limit: u64) -> Result<()> {
    let required = (s as f64).powi(nodes as i32);
    if !(required <= limit as f64) {
        return Err(GhmError::EnumerationLimit { required, limit });
    }
    Ok(())
}

fn check_leaves(params: &GhmParams, leaves: &[usize]) -> Result<()> {
    let d = params.topology().num_leaves();
    if leaves.len() != d {
        return Err(GhmError::DimensionMismatch {
            expected: d,
            got: leaves.len(),
        });
    }
    if leaves.iter().any(|&x| x < 1 || x > params.states()) {
        return Err(GhmError::InvalidSample(format!(
            "leaf state outside 1..={}",
            params.states()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{PsiMode, PsiTable};
    use crate::topology::TreeTopology;

    fn copy_chain(depth: usize, branching: &[usize], s: usize) -> GhmParams {
        let topology = TreeTopology::build(depth, branching).unwrap();
        let mut entries = vec![0.0; s * s];
        for state in 0..s {
            entries[state * s + state] = 1.0;
        }
        let tables = branching
            .iter()
            .map(|&m| vec![PsiTable::new(s, entries.clone()).unwrap(); m])
            .collect();
        GhmParams::explicit_relaxed(
            topology,
            s,
            f64::INFINITY,
            vec![1.0 / s as f64; s],
            tables,
        )
        .unwrap()
    }

    #[test]
    fn uniform_model_gives_uniform_posterior() {
        let t = TreeTopology::build(2, &[2, 2]).unwrap();
        let p = GhmParams::generate(t, 2, 2.0, PsiMode::Uniform, 0).unwrap();
        let post = posterior_label(&p, &[1, 2, 1, 2]).unwrap();
        for q in post {
            assert!((q - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn copy_chain_concentrates_on_the_common_value() {
        let p = copy_chain(2, &[2, 1], 2);
        let post = posterior_label(&p, &[1, 1]).unwrap();
        assert!((post[0] - 1.0).abs() < 1e-14);
        assert!(post[1] < 1e-14);
    }

    #[test]
    fn posterior_sums_to_one() {
        let t = TreeTopology::build(2, &[3, 2]).unwrap();
        let p = GhmParams::random(t, 3, 4.0, 3).unwrap();
        let post = posterior_label(&p, &[1, 3, 2, 2, 1, 3]).unwrap();
        let sum: f64 = post.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invariant_under_sibling_subtree_reorder() {
        // Rank tables coincide, so swapping the two sibling subtrees of the
        // root must leave the label posterior unchanged.
        let t = TreeTopology::build(2, &[2, 2]).unwrap();
        let base = GhmParams::random(t.clone(), 2, 4.0, 11).unwrap();
        let shared = base.psi(1, 1).clone();
        let shared2 = base.psi(2, 1).clone();
        let p = GhmParams::explicit(
            t,
            2,
            4.0,
            base.root_marginal().to_vec(),
            vec![vec![shared.clone(), shared], vec![shared2.clone(), shared2]],
        )
        .unwrap();
        let a = posterior_label(&p, &[1, 2, 2, 1]).unwrap();
        let b = posterior_label(&p, &[2, 1, 1, 2]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn denoise_matches_two_point_gaussian_formula() {
        // Uniform model, two independent leaves: the per-leaf posterior is
        // the single-variable two-point Gaussian posterior.
        let t = TreeTopology::build(1, &[2]).unwrap();
        let p = GhmParams::generate(t, 2, 2.0, PsiMode::Uniform, 0).unwrap();
        let sigma2 = 0.8;
        let z = vec![1.3, 1.9];
        let post = posterior_denoise(&p, &z, sigma2).unwrap();
        for (v, &zv) in z.iter().enumerate() {
            let w1 = (-(1.0 - zv) * (1.0 - zv) / (2.0 * sigma2)).exp();
            let w2 = (-(2.0 - zv) * (2.0 - zv) / (2.0 * sigma2)).exp();
            let q2 = w2 / (w1 + w2);
            assert!((post.marginals[v][1] - q2).abs() < 1e-12);
            assert!((post.mean[v] - (1.0 + q2)).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_observations_pin_the_top_state() {
        let t = TreeTopology::build(1, &[2]).unwrap();
        let p = GhmParams::random(t, 2, 4.0, 1).unwrap();
        let post = posterior_denoise(&p, &[60.0, 60.0], 1.0).unwrap();
        for v in 0..2 {
            assert!((post.mean[v] - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vanishing_noise_recovers_lattice_points() {
        let t = TreeTopology::build(2, &[2, 1]).unwrap();
        let p = GhmParams::random(t, 2, 4.0, 2).unwrap();
        let clean = [2.0, 1.0];
        let post = posterior_denoise(&p, &clean, 1e-6).unwrap();
        assert!((post.mean[0] - 2.0).abs() < 1e-9);
        assert!((post.mean[1] - 1.0).abs() < 1e-9);
        assert!((post.marginals[0][1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn enumeration_limit_is_enforced() {
        let t = TreeTopology::build(2, &[30, 1]).unwrap();
        let p = GhmParams::random(t, 3, 4.0, 0).unwrap();
        let leaves = vec![1usize; 30];
        match posterior_label(&p, &leaves) {
            Err(GhmError::EnumerationLimit { .. }) => {}
            other => panic!("expected enumeration limit error, got {other:?}"),
        }
    }

    #[test]
    fn leaf_marginals_sum_to_one_over_all_configurations() {
        let t = TreeTopology::build(2, &[2, 2]).unwrap();
        let p = GhmParams::random(t, 2, 4.0, 17).unwrap();
        let mut total = 0.0;
        for code in 0..16u32 {
            let leaves: Vec<usize> = (0..4).map(|i| ((code >> i) & 1) as usize + 1).collect();
            total += leaf_log_marginal(&p, &leaves, DEFAULT_ENUMERATION_LIMIT)
                .unwrap()
                .exp();
        }
        assert!((total - 1.0).abs() < 1e-12);
    }
}
