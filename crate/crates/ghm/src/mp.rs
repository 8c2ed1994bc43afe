//! Log-domain message passing and the generic approximate engine.
//!
//! One layer-synchronous engine drives the exact classification and
//! denoising recursions as well as their approximate variants: the per-edge
//! maps are supplied as a [`MessageFns`] collection, so swapping exact
//! log-sum-exp maps for surrogates changes nothing else. Intermediate
//! messages are retained in the returned state for node-level equivalence
//! and error-propagation checks.
//!
//! The two recursions place `normalize` differently and the engine mirrors
//! each exactly: classification normalizes after pooling, denoising
//! normalizes the input of each map.

use crate::error::{GhmError, Result};
use crate::params::GhmParams;

/// Subtract-the-max normalization; the output maximum is exactly 0.
/// 2-Lipschitz in the sup norm.
pub fn normalize(h: &[f64]) -> Result<Vec<f64>> {
    if h.iter().any(|v| v.is_nan()) {
        return Err(GhmError::Numeric("normalize received NaN".into()));
    }
    Ok(normalize_unchecked(h))
}

#[inline]
pub(crate) fn normalize_unchecked(h: &[f64]) -> Vec<f64> {
    let max = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    h.iter().map(|&v| v - max).collect()
}

/// Numerically stable `softmax`.
pub fn softmax(h: &[f64]) -> Vec<f64> {
    let max = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = h.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Exact downward map: `f(h)_s = log sum_a psi(s, a) exp(h_a)`.
pub fn lse_down(table_row: impl Fn(usize, usize) -> f64, s: usize, h: &[f64]) -> Vec<f64> {
    let max = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (1..=s)
        .map(|i| {
            let mut acc = 0.0;
            for (a, &ha) in h.iter().enumerate() {
                acc += table_row(i, a + 1) * (ha - max).exp();
            }
            acc.ln() + max
        })
        .collect()
}

/// A per-(direction, layer, rank) map from an S-vector to an S-vector.
pub trait MessageFn: Send + Sync {
    fn eval(&self, h: &[f64]) -> Vec<f64>;
}

impl<F: Fn(&[f64]) -> Vec<f64> + Send + Sync> MessageFn for F {
    fn eval(&self, h: &[f64]) -> Vec<f64> {
        self(h)
    }
}

/// A per-(layer, rank) map from a leaf symbol to an S-vector (classification
/// leaf layer).
pub trait LeafFn: Send + Sync {
    fn eval(&self, x: usize) -> Vec<f64>;
}

impl<F: Fn(usize) -> Vec<f64> + Send + Sync> LeafFn for F {
    fn eval(&self, x: usize) -> Vec<f64> {
        self(x)
    }
}

/// Map collection for the classification recursion: leaf maps at layer `L`,
/// interior maps at layers `1..L`.
pub struct ClassifyFns {
    /// `leaf[rank - 1]`
    pub leaf: Vec<Box<dyn LeafFn>>,
    /// `interior[layer - 1][rank - 1]` for layers `1..=L-1`
    pub interior: Vec<Vec<Box<dyn MessageFn>>>,
}

/// Map collection for the denoising recursion: one downward and one upward
/// map per (layer, rank).
pub struct DenoiseFns {
    /// `down[layer - 1][rank - 1]`
    pub down: Vec<Vec<Box<dyn MessageFn>>>,
    /// `up[layer - 1][rank - 1]`
    pub up: Vec<Vec<Box<dyn MessageFn>>>,
}

/// Engine options.
#[derive(Debug, Clone, Copy)]
pub struct MpOptions {
    /// Apply the subtract-the-max normalization steps. The recursions are
    /// shift-equivariant, so disabling this changes no posterior.
    pub normalize: bool,
}

impl Default for MpOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

/// Messages retained by a classification run. Indexed `[layer][offset]`.
#[derive(Debug, Clone)]
pub struct ClassifyState {
    /// Pooled messages `h` per node (layers `0..=L-1`; the leaf layer holds
    /// the raw symbols and is not stored).
    pub h: Vec<Vec<Vec<f64>>>,
    /// Per-node map outputs `q` (layers `1..=L`).
    pub q: Vec<Vec<Vec<f64>>>,
    /// Root logits with the log prior applied.
    pub logits: Vec<f64>,
    /// `softmax(logits)`.
    pub posterior: Vec<f64>,
}

/// Messages retained by a denoising run. Indexed `[layer][offset]`.
#[derive(Debug, Clone)]
pub struct DenoiseState {
    pub h_down: Vec<Vec<Vec<f64>>>,
    pub q_down: Vec<Vec<Vec<f64>>>,
    pub b_up: Vec<Vec<Vec<f64>>>,
    /// Leaf posteriors `softmax(b_up)` at layer `L`.
    pub leaf_posterior: Vec<Vec<f64>>,
    /// Posterior mean per leaf.
    pub mean: Vec<f64>,
}

/// Exact classification message passing.
pub fn classify(params: &GhmParams, leaves: &[usize]) -> Result<Vec<f64>> {
    Ok(classify_full(params, leaves, MpOptions::default())?.posterior)
}

pub fn classify_full(
    params: &GhmParams,
    leaves: &[usize],
    options: MpOptions,
) -> Result<ClassifyState> {
    let fns = exact_classify_fns(params);
    run_classify(params, &fns, leaves, options)
}

/// Exact denoising message passing.
pub fn denoise(params: &GhmParams, z: &[f64], noise_variance: f64) -> Result<DenoiseState> {
    denoise_full(params, z, noise_variance, MpOptions::default())
}

pub fn denoise_full(
    params: &GhmParams,
    z: &[f64],
    noise_variance: f64,
    options: MpOptions,
) -> Result<DenoiseState> {
    let fns = exact_denoise_fns(params);
    let init = leaf_log_likelihood(params, z, noise_variance)?;
    run_denoise(
        params.topology(),
        params.states(),
        &fns,
        init,
        params.log_root_marginal(),
        options,
    )
}

/// Exact per-(layer, rank) maps of the classification recursion.
pub fn exact_classify_fns(params: &GhmParams) -> ClassifyFns {
    let s = params.states();
    let depth = params.topology().depth();
    let leaf = (1..=params.topology().branching(depth))
        .map(|rank| {
            let table = params.psi(depth, rank).clone();
            Box::new(move |x: usize| (1..=s).map(|i| table.log_prob(i, x)).collect())
                as Box<dyn LeafFn>
        })
        .collect();
    let interior = (1..depth)
        .map(|layer| {
            (1..=params.topology().branching(layer))
                .map(|rank| {
                    let table = params.psi(layer, rank).clone();
                    Box::new(move |h: &[f64]| {
                        lse_down(|i, a| table.prob(i, a), table.states(), h)
                    }) as Box<dyn MessageFn>
                })
                .collect()
        })
        .collect();
    ClassifyFns { leaf, interior }
}

/// Exact per-(direction, layer, rank) maps of the denoising recursion.
pub fn exact_denoise_fns(params: &GhmParams) -> DenoiseFns {
    let depth = params.topology().depth();
    let mut down = Vec::with_capacity(depth);
    let mut up = Vec::with_capacity(depth);
    for layer in 1..=depth {
        let mut down_layer: Vec<Box<dyn MessageFn>> = Vec::new();
        let mut up_layer: Vec<Box<dyn MessageFn>> = Vec::new();
        for rank in 1..=params.topology().branching(layer) {
            let t_down = params.psi(layer, rank).clone();
            let t_up = params.psi(layer, rank).clone();
            down_layer.push(Box::new(move |h: &[f64]| {
                lse_down(|i, a| t_down.prob(i, a), t_down.states(), h)
            }));
            // Upward maps contract against the transposed table.
            up_layer.push(Box::new(move |h: &[f64]| {
                lse_down(|i, a| t_up.prob(a, i), t_up.states(), h)
            }));
        }
        down.push(down_layer);
        up.push(up_layer);
    }
    DenoiseFns { down, up }
}

/// Leaf initialization for denoising: `h_v = (-(x - z_v)^2 / (2 sigma^2))_x`.
pub fn leaf_log_likelihood(
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
            (1..=s)
                .map(|x| {
                    let dev = x as f64 - zv;
                    -dev * dev / (2.0 * noise_variance)
                })
                .collect()
        })
        .collect())
}

/// The classification engine: leaf maps, then pooled-and-normalized interior
/// maps up to the root; the log prior is applied to the root logits.
pub fn run_classify(
    params: &GhmParams,
    fns: &ClassifyFns,
    leaves: &[usize],
    options: MpOptions,
) -> Result<ClassifyState> {
    let topology = params.topology();
    let s = params.states();
    let depth = topology.depth();
    let d = topology.num_leaves();
    if leaves.len() != d {
        return Err(GhmError::DimensionMismatch {
            expected: d,
            got: leaves.len(),
        });
    }
    if leaves.iter().any(|&x| x < 1 || x > s) {
        return Err(GhmError::InvalidSample(format!("leaf state outside 1..={s}")));
    }
    if fns.leaf.len() != topology.branching(depth) || fns.interior.len() != depth - 1 {
        return Err(GhmError::MissingMessageFn(
            "classification map collection does not cover every (layer, rank)".into(),
        ));
    }
    for (l, layer_fns) in fns.interior.iter().enumerate() {
        if layer_fns.len() != topology.branching(l + 1) {
            return Err(GhmError::MissingMessageFn(format!(
                "interior maps at layer {}",
                l + 1
            )));
        }
    }

    let mut h: Vec<Vec<Vec<f64>>> = (0..depth)
        .map(|l| vec![Vec::new(); topology.layer_size(l)])
        .collect();
    let mut q: Vec<Vec<Vec<f64>>> = (0..=depth)
        .map(|l| vec![Vec::new(); topology.layer_size(l)])
        .collect();

    for layer in (1..=depth).rev() {
        let m = topology.branching(layer);
        for offset in 0..topology.layer_size(layer) {
            let rank = offset % m;
            q[layer][offset] = if layer == depth {
                fns.leaf[rank].eval(leaves[offset])
            } else {
                fns.interior[layer - 1][rank].eval(&h[layer][offset])
            };
        }
        for parent_offset in 0..topology.layer_size(layer - 1) {
            let mut pooled = vec![0.0; s];
            for k in 0..m {
                for (p, v) in pooled.iter_mut().zip(&q[layer][parent_offset * m + k]) {
                    *p += v;
                }
            }
            h[layer - 1][parent_offset] = if options.normalize {
                normalize_unchecked(&pooled)
            } else {
                pooled
            };
        }
    }

    let logits: Vec<f64> = h[0][0]
        .iter()
        .zip(params.log_root_marginal())
        .map(|(&a, &b)| a + b)
        .collect();
    let posterior = softmax(&logits);
    Ok(ClassifyState {
        h,
        q,
        logits,
        posterior,
    })
}

/// The denoising engine: encoder sweep (map, pool), decoder sweep
/// (up-sample, map, skip-add), posterior means at the leaves. The log prior
/// enters once, at the decoder root.
pub fn run_denoise(
    topology: &crate::topology::TreeTopology,
    s: usize,
    fns: &DenoiseFns,
    leaf_init: Vec<Vec<f64>>,
    log_root_marginal: &[f64],
    options: MpOptions,
) -> Result<DenoiseState> {
    let depth = topology.depth();
    if fns.down.len() != depth || fns.up.len() != depth {
        return Err(GhmError::MissingMessageFn(
            "denoising map collection does not cover every layer".into(),
        ));
    }
    for layer in 1..=depth {
        if fns.down[layer - 1].len() != topology.branching(layer)
            || fns.up[layer - 1].len() != topology.branching(layer)
        {
            return Err(GhmError::MissingMessageFn(format!(
                "denoising maps at layer {layer}"
            )));
        }
    }

    let mut h_down: Vec<Vec<Vec<f64>>> = (0..=depth)
        .map(|l| vec![Vec::new(); topology.layer_size(l)])
        .collect();
    let mut q_down: Vec<Vec<Vec<f64>>> = (0..=depth)
        .map(|l| vec![Vec::new(); topology.layer_size(l)])
        .collect();
    h_down[depth] = leaf_init;

    // Encoder: leaf layer to root.
    for layer in (1..=depth).rev() {
        let m = topology.branching(layer);
        for offset in 0..topology.layer_size(layer) {
            let input = if options.normalize {
                normalize_unchecked(&h_down[layer][offset])
            } else {
                h_down[layer][offset].clone()
            };
            q_down[layer][offset] = fns.down[layer - 1][offset % m].eval(&input);
        }
        for parent_offset in 0..topology.layer_size(layer - 1) {
            let mut pooled = vec![0.0; s];
            for k in 0..m {
                for (p, v) in pooled.iter_mut().zip(&q_down[layer][parent_offset * m + k]) {
                    *p += v;
                }
            }
            h_down[layer - 1][parent_offset] = pooled;
        }
    }

    // Decoder: root to leaf layer, reusing encoder activations through the
    // skip additions.
    let mut b_up: Vec<Vec<Vec<f64>>> = (0..=depth)
        .map(|l| vec![Vec::new(); topology.layer_size(l)])
        .collect();
    b_up[0][0] = h_down[0][0]
        .iter()
        .zip(log_root_marginal)
        .map(|(&a, &b)| a + b)
        .collect();
    for layer in 1..=depth {
        let m = topology.branching(layer);
        for offset in 0..topology.layer_size(layer) {
            let upsampled = &b_up[layer - 1][offset / m];
            let diff: Vec<f64> = upsampled
                .iter()
                .zip(&q_down[layer][offset])
                .map(|(&u, &q)| u - q)
                .collect();
            let input = if options.normalize {
                normalize_unchecked(&diff)
            } else {
                diff
            };
            let mapped = fns.up[layer - 1][offset % m].eval(&input);
            b_up[layer][offset] = mapped
                .iter()
                .zip(&h_down[layer][offset])
                .map(|(&a, &b)| a + b)
                .collect();
        }
    }

    let d = topology.num_leaves();
    let mut leaf_posterior = Vec::with_capacity(d);
    let mut mean = Vec::with_capacity(d);
    for offset in 0..d {
        let post = softmax(&b_up[depth][offset]);
        mean.push(
            post.iter()
                .enumerate()
                .map(|(j, &p)| (j + 1) as f64 * p)
                .sum(),
        );
        leaf_posterior.push(post);
    }

    Ok(DenoiseState {
        h_down,
        q_down,
        b_up,
        leaf_posterior,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp;
    use crate::params::PsiMode;
    use crate::topology::TreeTopology;

    fn random_instance(branching: &[usize], s: usize, seed: u64) -> GhmParams {
        let t = TreeTopology::build(branching.len(), branching).unwrap();
        GhmParams::random(t, s, 4.0, seed).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[1.0, 3.0]).unwrap(), vec![-2.0, 0.0]);
        assert_eq!(normalize(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(normalize(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn normalize_is_two_lipschitz() {
        let mut rng = crate::seeding::stream(0, "normalize-lipschitz");
        use rand::Rng;
        for _ in 0..1000 {
            let h1: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let h2: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let n1 = normalize_unchecked(&h1);
            let n2 = normalize_unchecked(&h2);
            let lhs = n1
                .iter()
                .zip(&n2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let rhs = h1
                .iter()
                .zip(&h2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(lhs <= 2.0 * rhs + 1e-15);
        }
    }

    #[test]
    fn lse_maps_are_nonexpansive() {
        let p = random_instance(&[2], 3, 1);
        let table = p.psi(1, 1).clone();
        let f = |h: &[f64]| lse_down(|i, a| table.prob(i, a), 3, h);
        let mut rng = crate::seeding::stream(1, "lse-nonexpansive");
        use rand::Rng;
        for _ in 0..1000 {
            let h1: Vec<f64> = (0..3).map(|_| rng.random_range(-8.0..2.0)).collect();
            let h2: Vec<f64> = (0..3).map(|_| rng.random_range(-8.0..2.0)).collect();
            let lhs = f(&h1)
                .iter()
                .zip(&f(&h2))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let rhs = h1
                .iter()
                .zip(&h2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn classify_matches_bp_at_every_node() {
        for seed in 0..10 {
            let p = random_instance(&[2, 3], 2, seed);
            let sample = p.sample_seeded(seed + 50);
            let x = sample.leaves();
            let state = classify_full(&p, x, MpOptions::default()).unwrap();
            let beliefs = bp::classify_full(&p, x).unwrap();
            for layer in 0..2 {
                for offset in 0..p.topology().layer_size(layer) {
                    let via_mp = softmax(&state.h[layer][offset]);
                    for (a, b) in via_mp.iter().zip(&beliefs.beliefs[layer][offset]) {
                        assert!((a - b).abs() < 1e-10, "layer {layer} offset {offset}");
                    }
                }
            }
            for (a, b) in state.posterior.iter().zip(&beliefs.posterior) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn denoise_matches_bp_at_every_node() {
        for seed in 0..10 {
            let p = random_instance(&[2, 2], 2, seed);
            let mut rng = crate::seeding::stream(seed, "mp-denoise-test");
            let sample = p.sample(&mut rng);
            let z = crate::params::corrupt(sample.leaves(), 1.0, &mut rng);
            let state = denoise(&p, &z, 1.0).unwrap();
            let beliefs = bp::denoise(&p, &z, 1.0).unwrap();
            let depth = p.topology().depth();
            for layer in 0..=depth {
                for offset in 0..p.topology().layer_size(layer) {
                    let down = softmax(&state.h_down[layer][offset]);
                    for (a, b) in down.iter().zip(&beliefs.down[layer][offset]) {
                        assert!((a - b).abs() < 1e-10);
                    }
                    let up_logits: Vec<f64> = state.b_up[layer][offset]
                        .iter()
                        .zip(&state.h_down[layer][offset])
                        .map(|(&b, &h)| b - h)
                        .collect();
                    let up = softmax(&up_logits);
                    for (a, b) in up.iter().zip(&beliefs.up[layer][offset]) {
                        assert!((a - b).abs() < 1e-10);
                    }
                }
            }
            for v in 0..z.len() {
                assert!((state.mean[v] - beliefs.mean[v]).abs() < 1e-10);
                for (a, b) in state.leaf_posterior[v].iter().zip(&beliefs.leaf_posterior[v]) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn normalization_is_nonessential() {
        let p = random_instance(&[2, 2], 2, 3);
        let x = vec![1, 2, 2, 1];
        let with = classify_full(&p, &x, MpOptions { normalize: true }).unwrap();
        let without = classify_full(&p, &x, MpOptions { normalize: false }).unwrap();
        for (a, b) in with.posterior.iter().zip(&without.posterior) {
            assert!((a - b).abs() < 1e-10);
        }

        let z = vec![1.2, 0.4, 2.2, 1.7];
        let dn_with = denoise_full(&p, &z, 1.0, MpOptions { normalize: true }).unwrap();
        let dn_without = denoise_full(&p, &z, 1.0, MpOptions { normalize: false }).unwrap();
        for (a, b) in dn_with.mean.iter().zip(&dn_without.mean) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_model_gives_uniform_posterior() {
        let t = TreeTopology::build(2, &[2, 2]).unwrap();
        let p = GhmParams::generate(t, 2, 2.0, PsiMode::Uniform, 0).unwrap();
        let post = classify(&p, &[2, 1, 1, 2]).unwrap();
        for q in post {
            assert!((q - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn single_leaf_uniform_midpoint() {
        let t = TreeTopology::build(1, &[1]).unwrap();
        let p = GhmParams::generate(t, 2, 2.0, PsiMode::Uniform, 0).unwrap();
        let out = denoise(&p, &[1.5], 1.0).unwrap();
        assert!((out.mean[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn perturbed_maps_respect_propagation_bounds() {
        // Classification: per-map sup error delta must not amplify beyond
        // delta * prod(2 m + 1) at the root.
        let delta = 1e-3;
        let p = random_instance(&[2, 2], 2, 7);
        let x = vec![1, 2, 1, 1];
        let exact = classify_full(&p, &x, MpOptions::default()).unwrap();

        let base = exact_classify_fns(&p);
        let leaf: Vec<Box<dyn LeafFn>> = base
            .leaf
            .into_iter()
            .map(|f| {
                Box::new(move |x: usize| {
                    let mut v = f.eval(x);
                    v[0] += delta;
                    v
                }) as Box<dyn LeafFn>
            })
            .collect();
        let interior: Vec<Vec<Box<dyn MessageFn>>> = base
            .interior
            .into_iter()
            .map(|layer| {
                layer
                    .into_iter()
                    .map(|f| {
                        Box::new(move |h: &[f64]| {
                            let mut v = f.eval(h);
                            v[0] += delta;
                            v
                        }) as Box<dyn MessageFn>
                    })
                    .collect()
            })
            .collect();
        let perturbed = run_classify(
            &p,
            &ClassifyFns { leaf, interior },
            &x,
            MpOptions::default(),
        )
        .unwrap();
        let dev = exact
            .h[0][0]
            .iter()
            .zip(&perturbed.h[0][0])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let bound: f64 = delta * 5.0 * 5.0; // prod over layers of (2m + 1)
        assert!(dev <= bound, "dev {dev} exceeds bound {bound}");
    }
}
