//! Model parameters and sampling.
//!
//! A model instance is a tree topology together with per-(layer, rank)
//! transition tables `psi` and a root marginal. Tables are parametrized as
//! row-stochastic conditionals: `psi[l][rank](parent_state, child_state)` is
//! the probability of the child state given the parent state, so ancestral
//! sampling is exact and the joint probability is a plain product. All
//! entries are required to lie in `[1/K, K]` for the boundedness constant `K`
//! unless a table is built through the relaxed constructor, which exists for
//! degenerate oracle fixtures (copy chains and the like).
//!
//! States are the integers `1..=S` and enter real arithmetic as those values.

use crate::error::{GhmError, Result};
use crate::topology::TreeTopology;
use rand::Rng;
use rand_distr::StandardNormal;

const ROW_SUM_TOL: f64 = 1e-9;
const BOUND_TOL: f64 = 1e-9;

/// One S x S transition table, row-major with rows indexed by parent state.
/// Logarithms are cached at construction for the log-domain passes.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiTable {
    s: usize,
    entries: Vec<f64>,
    log_entries: Vec<f64>,
}

impl PsiTable {
    pub fn new(s: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != s * s {
            return Err(GhmError::InvalidParams(format!(
                "psi table needs {} entries, got {}",
                s * s,
                entries.len()
            )));
        }
        let log_entries = entries.iter().map(|&p| p.ln()).collect();
        Ok(Self {
            s,
            entries,
            log_entries,
        })
    }

    pub fn uniform(s: usize) -> Self {
        Self::new(s, vec![1.0 / s as f64; s * s]).unwrap()
    }

    pub fn states(&self) -> usize {
        self.s
    }

    /// Transition probability for 1-based `parent` and `child` states.
    #[inline]
    pub fn prob(&self, parent: usize, child: usize) -> f64 {
        self.entries[(parent - 1) * self.s + (child - 1)]
    }

    /// Row of transition probabilities for a 1-based parent state.
    #[inline]
    pub fn row(&self, parent: usize) -> &[f64] {
        &self.entries[(parent - 1) * self.s..parent * self.s]
    }

    /// Log transition probability for 1-based `parent` and `child` states.
    #[inline]
    pub fn log_prob(&self, parent: usize, child: usize) -> f64 {
        self.log_entries[(parent - 1) * self.s + (child - 1)]
    }

    /// Row of log transition probabilities for a 1-based parent state.
    #[inline]
    pub fn log_row(&self, parent: usize) -> &[f64] {
        &self.log_entries[(parent - 1) * self.s..parent * self.s]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn check_row_stochastic(&self) -> Result<()> {
        for parent in 1..=self.s {
            let row = self.row(parent);
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(GhmError::InvalidParams(format!(
                    "psi row for parent state {parent} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(GhmError::InvalidParams(format!(
                    "psi row for parent state {parent} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    fn check_bounds(&self, k: f64) -> Result<()> {
        let lo = 1.0 / k - BOUND_TOL;
        let hi = k + BOUND_TOL;
        for (i, &p) in self.entries.iter().enumerate() {
            if p < lo || p > hi {
                return Err(GhmError::InvalidParams(format!(
                    "psi entry {p} at flat index {i} violates the bound [1/{k}, {k}]"
                )));
            }
        }
        Ok(())
    }
}

/// How the transition tables of a model instance are produced.
#[derive(Debug, Clone)]
pub enum PsiMode {
    /// Every table and the root marginal uniform; the bound holds with K = S.
    Uniform,
    /// Dirichlet rows projected onto the `[1/K, K]` box intersected with the
    /// simplex. This generator is this artifact's convention; no canonical
    /// distribution over instances exists.
    Random,
    /// Caller-supplied tables, validated.
    Explicit {
        root_marginal: Vec<f64>,
        tables: Vec<Vec<PsiTable>>,
    },
}

/// A full model instance.
#[derive(Debug, Clone)]
pub struct GhmParams {
    topology: TreeTopology,
    s: usize,
    k_bound: f64,
    root_marginal: Vec<f64>,
    log_root_marginal: Vec<f64>,
    /// `psi[l - 1][rank - 1]` for layer `l` in `1..=L`.
    psi: Vec<Vec<PsiTable>>,
}

impl GhmParams {
    /// Builds an instance in the requested mode. `k` must satisfy `k >= S`,
    /// since a row-stochastic table with entries at least `1/k` needs
    /// `S / k <= 1`.
    pub fn generate(
        topology: TreeTopology,
        s: usize,
        k: f64,
        mode: PsiMode,
        seed: u64,
    ) -> Result<Self> {
        if s < 2 {
            return Err(GhmError::InvalidParams("alphabet size must be >= 2".into()));
        }
        match mode {
            PsiMode::Uniform => {
                let tables = topology
                    .branching_factors()
                    .iter()
                    .map(|&m| vec![PsiTable::uniform(s); m])
                    .collect();
                Self::explicit(topology, s, s as f64, vec![1.0 / s as f64; s], tables)
            }
            PsiMode::Random => Self::random(topology, s, k, seed),
            PsiMode::Explicit {
                root_marginal,
                tables,
            } => Self::explicit(topology, s, k, root_marginal, tables),
        }
    }

    /// Random instance: iid Dirichlet(1, ..., 1) rows projected onto the
    /// feasible box; the result is validated, not assumed.
    pub fn random(topology: TreeTopology, s: usize, k: f64, seed: u64) -> Result<Self> {
        if !(k > 1.0) {
            return Err(GhmError::InvalidParams(format!(
                "bound K = {k} must exceed 1"
            )));
        }
        if (k as f64) < s as f64 {
            return Err(GhmError::InvalidParams(format!(
                "bound K = {k} is infeasible for S = {s}: a stochastic row needs K >= S"
            )));
        }
        let mut rng = crate::seeding::stream(seed, "psi-tables");
        let lo = 1.0 / k;
        let hi = k;
        let mut tables = Vec::with_capacity(topology.depth());
        for &m in topology.branching_factors() {
            let mut layer = Vec::with_capacity(m);
            for _ in 0..m {
                let mut entries = Vec::with_capacity(s * s);
                for _ in 0..s {
                    let row = random_bounded_row(s, lo, hi, &mut rng);
                    entries.extend_from_slice(&row);
                }
                layer.push(PsiTable::new(s, entries)?);
            }
            tables.push(layer);
        }
        // Root marginal gets a mild floor so log-domain passes stay finite.
        let root = random_bounded_row(s, 1.0 / (k * s as f64), 1.0, &mut rng);
        Self::explicit(topology, s, k, root, tables)
    }

    /// Explicit tables, fully validated: row-stochastic, within `[1/K, K]`,
    /// root marginal a probability vector.
    pub fn explicit(
        topology: TreeTopology,
        s: usize,
        k: f64,
        root_marginal: Vec<f64>,
        tables: Vec<Vec<PsiTable>>,
    ) -> Result<Self> {
        let params = Self::explicit_relaxed(topology, s, k, root_marginal, tables)?;
        if !(params.k_bound > 1.0) {
            return Err(GhmError::InvalidParams(format!(
                "bound K = {} must exceed 1",
                params.k_bound
            )));
        }
        for layer in &params.psi {
            for table in layer {
                table.check_bounds(params.k_bound)?;
            }
        }
        Ok(params)
    }

    /// Explicit tables without the boundedness check. Rows must still be
    /// stochastic; zero entries are allowed. Intended for degenerate test
    /// fixtures only.
    pub fn explicit_relaxed(
        topology: TreeTopology,
        s: usize,
        k: f64,
        root_marginal: Vec<f64>,
        tables: Vec<Vec<PsiTable>>,
    ) -> Result<Self> {
        if s < 2 {
            return Err(GhmError::InvalidParams("alphabet size must be >= 2".into()));
        }
        if tables.len() != topology.depth() {
            return Err(GhmError::InvalidParams(format!(
                "expected tables for {} layers, got {}",
                topology.depth(),
                tables.len()
            )));
        }
        for (l, layer) in tables.iter().enumerate() {
            let m = topology.branching(l + 1);
            if layer.len() != m {
                return Err(GhmError::InvalidParams(format!(
                    "layer {} needs {} rank tables, got {}",
                    l + 1,
                    m,
                    layer.len()
                )));
            }
            for table in layer {
                if table.states() != s {
                    return Err(GhmError::InvalidParams(format!(
                        "table at layer {} has alphabet {}, expected {}",
                        l + 1,
                        table.states(),
                        s
                    )));
                }
                table.check_row_stochastic()?;
            }
        }
        if root_marginal.len() != s {
            return Err(GhmError::InvalidParams(format!(
                "root marginal has {} entries, expected {}",
                root_marginal.len(),
                s
            )));
        }
        if root_marginal.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(GhmError::InvalidParams(
                "root marginal has a negative or non-finite entry".into(),
            ));
        }
        let sum: f64 = root_marginal.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(GhmError::InvalidParams(format!(
                "root marginal sums to {sum}, expected 1"
            )));
        }
        let log_root_marginal = root_marginal.iter().map(|&p| p.ln()).collect();
        Ok(Self {
            topology,
            s,
            k_bound: k,
            root_marginal,
            log_root_marginal,
            psi: tables,
        })
    }

    pub fn topology(&self) -> &TreeTopology {
        &self.topology
    }

    pub fn states(&self) -> usize {
        self.s
    }

    pub fn k_bound(&self) -> f64 {
        self.k_bound
    }

    pub fn root_marginal(&self) -> &[f64] {
        &self.root_marginal
    }

    pub fn log_root_marginal(&self) -> &[f64] {
        &self.log_root_marginal
    }

    /// Table for 1-based `layer` and `rank`.
    #[inline]
    pub fn psi(&self, layer: usize, rank: usize) -> &PsiTable {
        &self.psi[layer - 1][rank - 1]
    }

    /// Ancestral sampling, top-down, one categorical draw per node in
    /// breadth-first order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let mut states: Vec<Vec<usize>> = Vec::with_capacity(self.topology.depth() + 1);
        states.push(vec![draw_categorical(&self.root_marginal, rng)]);
        for layer in 1..=self.topology.depth() {
            let m = self.topology.branching(layer);
            let mut current = Vec::with_capacity(self.topology.layer_size(layer));
            for parent_offset in 0..self.topology.layer_size(layer - 1) {
                let parent_state = states[layer - 1][parent_offset];
                for rank in 1..=m {
                    let row = self.psi(layer, rank).row(parent_state);
                    current.push(draw_categorical(row, rng));
                }
            }
            states.push(current);
        }
        Sample { states }
    }

    /// Convenience wrapper drawing from a dedicated stream.
    pub fn sample_seeded(&self, seed: u64) -> Sample {
        let mut rng = crate::seeding::stream(seed, "ghm-sample");
        self.sample(&mut rng)
    }

    /// Log joint probability of a full configuration.
    pub fn log_joint_prob(&self, sample: &Sample) -> Result<f64> {
        self.check_sample(sample)?;
        Ok(self.log_joint_unchecked(sample))
    }

    pub(crate) fn log_joint_unchecked(&self, sample: &Sample) -> f64 {
        let mut lp = self.log_root_marginal[sample.states[0][0] - 1];
        for layer in 1..=self.topology.depth() {
            let m = self.topology.branching(layer);
            for (offset, &state) in sample.states[layer].iter().enumerate() {
                let parent_state = sample.states[layer - 1][offset / m];
                let rank = offset % m + 1;
                lp += self.psi(layer, rank).log_prob(parent_state, state);
            }
        }
        lp
    }

    /// Joint probability, computed in the log domain and exponentiated.
    pub fn joint_prob(&self, sample: &Sample) -> Result<f64> {
        Ok(self.log_joint_prob(sample)?.exp())
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.states.len() != self.topology.depth() + 1 {
            return Err(GhmError::InvalidSample(format!(
                "sample has {} layers, expected {}",
                sample.states.len(),
                self.topology.depth() + 1
            )));
        }
        for (layer, states) in sample.states.iter().enumerate() {
            if states.len() != self.topology.layer_size(layer) {
                return Err(GhmError::InvalidSample(format!(
                    "layer {layer} has {} states, expected {}",
                    states.len(),
                    self.topology.layer_size(layer)
                )));
            }
            if let Some(&bad) = states.iter().find(|&&x| x < 1 || x > self.s) {
                return Err(GhmError::InvalidSample(format!(
                    "state {bad} at layer {layer} is outside 1..={}",
                    self.s
                )));
            }
        }
        Ok(())
    }
}

/// Gaussian corruption of leaves: `z_v = x_v + sigma * g_v`.
pub fn corrupt<R: Rng + ?Sized>(leaves: &[usize], noise_scale: f64, rng: &mut R) -> Vec<f64> {
    leaves
        .iter()
        .map(|&x| {
            let g: f64 = rng.sample(StandardNormal);
            x as f64 + noise_scale * g
        })
        .collect()
}

/// One configuration of every node in the tree. `states[0]` is the root
/// label, `states[L]` the leaves.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sample {
    pub states: Vec<Vec<usize>>,
}

impl Sample {
    pub fn label(&self) -> usize {
        self.states[0][0]
    }

    pub fn leaves(&self) -> &[usize] {
        self.states.last().unwrap()
    }
}

#[inline]
fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    probs.len()
}

/// Dirichlet(1,...,1) draw projected onto `{x : sum x = 1, lo <= x <= hi}`.
///
/// The projection solves `x_i = clamp(y_i + lambda, lo, hi)` with the shift
/// chosen by bisection so the entries sum to one; the feasible set is
/// nonempty whenever `S * lo <= 1 <= S * hi`.
fn random_bounded_row<R: Rng + ?Sized>(s: usize, lo: f64, hi: f64, rng: &mut R) -> Vec<f64> {
    let mut y: Vec<f64> = (0..s)
        .map(|_| {
            let u: f64 = rng.random();
            -(1.0 - u).ln()
        })
        .collect();
    let total: f64 = y.iter().sum();
    for v in &mut y {
        *v /= total;
    }
    project_row(&y, lo, hi)
}

fn project_row(y: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let sum_at = |lambda: f64| -> f64 { y.iter().map(|&v| (v + lambda).clamp(lo, hi)).sum() };
    let max_y = y.iter().cloned().fold(f64::MIN, f64::max);
    let min_y = y.iter().cloned().fold(f64::MAX, f64::min);
    let mut a = lo - max_y;
    let mut b = hi - min_y;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if sum_at(mid) < 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let lambda = 0.5 * (a + b);
    let mut row: Vec<f64> = y.iter().map(|&v| (v + lambda).clamp(lo, hi)).collect();
    // Push the leftover mass (order 1e-15) onto an interior entry.
    let residual = 1.0 - row.iter().sum::<f64>();
    if let Some(v) = row
        .iter_mut()
        .find(|v| **v + residual >= lo && **v + residual <= hi)
    {
        *v += residual;
    }
    row
}
