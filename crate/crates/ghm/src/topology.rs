//! Tree layout: layers, branching factors, and breadth-first node indexing.
//!
//! Nodes are addressed as `(layer, offset)` with offsets dense within each
//! layer. Children of the node at offset `j` occupy offsets
//! `j * m .. (j + 1) * m` in the next layer, so parent/child/rank lookups are
//! plain integer arithmetic.

use crate::error::{GhmError, Result};

/// A node address: layer index (0 = root) and offset within the layer.
pub type NodeId = (usize, usize);

/// Immutable description of the tree: depth, per-layer branching factors and
/// the derived layer sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    depth: usize,
    branching: Vec<usize>,
    layer_sizes: Vec<usize>,
}

impl TreeTopology {
    /// Builds a tree of height `depth` where every node at layer `l - 1` has
    /// `branching[l - 1]` children.
    pub fn build(depth: usize, branching: &[usize]) -> Result<Self> {
        if depth == 0 || branching.is_empty() {
            return Err(GhmError::InvalidTopology(
                "depth must be at least 1 with one branching factor per layer".into(),
            ));
        }
        if branching.len() != depth {
            return Err(GhmError::InvalidTopology(format!(
                "expected {depth} branching factors, got {}",
                branching.len()
            )));
        }
        if let Some(pos) = branching.iter().position(|&m| m == 0) {
            return Err(GhmError::InvalidTopology(format!(
                "branching factor at layer {} is zero",
                pos + 1
            )));
        }
        let mut layer_sizes = Vec::with_capacity(depth + 1);
        layer_sizes.push(1usize);
        for &m in branching {
            let prev = *layer_sizes.last().unwrap();
            let next = prev.checked_mul(m).ok_or_else(|| {
                GhmError::InvalidTopology("layer size overflows usize".into())
            })?;
            layer_sizes.push(next);
        }
        Ok(Self {
            depth,
            branching: branching.to_vec(),
            layer_sizes,
        })
    }

    /// Tree height `L`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Branching factor of layer `layer` (children per node at `layer - 1`),
    /// for `layer` in `1..=depth`.
    pub fn branching(&self, layer: usize) -> usize {
        self.branching[layer - 1]
    }

    /// All branching factors, index 0 holding layer 1.
    pub fn branching_factors(&self) -> &[usize] {
        &self.branching
    }

    /// Number of nodes at `layer`, for `layer` in `0..=depth`.
    pub fn layer_size(&self, layer: usize) -> usize {
        self.layer_sizes[layer]
    }

    /// All layer sizes, index 0 holding the root layer.
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of leaves `d`.
    pub fn num_leaves(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total node count across all layers.
    pub fn num_nodes(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Sum of branching factors.
    pub fn branching_l1(&self) -> usize {
        self.branching.iter().sum()
    }

    pub fn root(&self) -> NodeId {
        (0, 0)
    }

    pub fn is_root(&self, v: NodeId) -> bool {
        v.0 == 0
    }

    /// Parent of a non-root node.
    pub fn parent(&self, v: NodeId) -> NodeId {
        let (layer, offset) = v;
        debug_assert!(layer >= 1 && offset < self.layer_sizes[layer]);
        (layer - 1, offset / self.branching[layer - 1])
    }

    /// Child of `v` with 1-based rank `rank`.
    pub fn child(&self, v: NodeId, rank: usize) -> NodeId {
        let (layer, offset) = v;
        let m = self.branching[layer];
        debug_assert!(rank >= 1 && rank <= m);
        (layer + 1, offset * m + rank - 1)
    }

    /// Children of `v` in rank order.
    pub fn children(&self, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        let (layer, offset) = v;
        let m = self.branching[layer];
        (0..m).map(move |k| (layer + 1, offset * m + k))
    }

    /// 1-based rank of a non-root node among its siblings.
    pub fn rank(&self, v: NodeId) -> usize {
        let (layer, offset) = v;
        offset % self.branching[layer - 1] + 1
    }

    /// Siblings of `v` (children of its parent excluding `v`), in rank order.
    pub fn siblings(&self, v: NodeId) -> Result<Vec<NodeId>> {
        if self.is_root(v) {
            return Err(GhmError::RootHasNoSiblings);
        }
        let pa = self.parent(v);
        Ok(self.children(pa).filter(|&u| u != v).collect())
    }
}
