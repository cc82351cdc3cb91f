//! Exact fixed-radius search in kernel-weighted space.
//!
//! Because `k(x, y) >= δ` is equivalent to `||w ⊙ (x - y)|| <= sqrt(-ln δ)`,
//! kernel neighborhoods are balls in the space of weighted states and can be
//! answered exactly by a kd-tree. The tree only prunes; membership is decided
//! by evaluating the kernel itself so results match a brute-force scan bit
//! for bit.

use crate::kernel::{kernel_exact, weighted_sq_dist};

const LEAF_SIZE: usize = 16;
/// Relative slack on the pruning radius; absorbs rounding between
/// `w⊙x - w⊙y` and `w⊙(x - y)`.
const PRUNE_SLACK: f64 = 1e-9;

/// Distance radius equivalent to similarity threshold `delta`.
///
/// Returns `None` for `delta` outside `(0, 1]`.
pub fn radius_from_delta(delta: f64) -> Option<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return None;
    }
    let r2 = -delta.ln();
    Some(if r2 <= 0.0 { 0.0 } else { r2.sqrt() })
}

#[derive(Debug, Clone)]
struct KdNode {
    lo: Vec<f64>,
    hi: Vec<f64>,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

/// Static kd-tree over points given as a flat row-major buffer.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    /// Point ids in leaf order.
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl KdTree {
    pub fn build(points: &[Vec<f64>]) -> Self {
        let dim = points.first().map_or(0, |p| p.len());
        let coords: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        let mut tree = Self {
            dim,
            coords,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    #[inline]
    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let d = self.dim;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in &self.order[start..end] {
            for k in 0..d {
                let v = self.coords[i * d + k];
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(KdNode {
            lo: lo.clone(),
            hi: hi.clone(),
            kind: NodeKind::Leaf { start, end },
        });
        let (axis, spread) = (0..d)
            .map(|k| (k, hi[k] - lo[k]))
            .fold((0, -1.0), |best, c| if c.1 > best.1 { c } else { best });
        if end - start <= LEAF_SIZE || spread <= 0.0 {
            return id;
        }
        let mid = (start + end) / 2;
        let coords = &self.coords;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * d + axis]
                .total_cmp(&coords[b * d + axis])
                .then(a.cmp(&b))
        });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id].kind = NodeKind::Inner { left, right };
        id
    }

    fn box_sq_dist(node: &KdNode, q: &[f64]) -> f64 {
        q.iter()
            .zip(node.lo.iter().zip(&node.hi))
            .map(|(v, (l, h))| {
                let d = if v < l {
                    l - v
                } else if v > h {
                    v - h
                } else {
                    0.0
                };
                d * d
            })
            .sum()
    }

    /// Visit every point whose squared distance to `q` may be within
    /// `r2` (a superset; callers filter).
    pub fn for_each_candidate<F: FnMut(usize)>(&self, q: &[f64], r2: f64, mut f: F) {
        if self.nodes.is_empty() {
            return;
        }
        let bound = r2 * (1.0 + PRUNE_SLACK) + 1e-12;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if Self::box_sq_dist(node, q) > bound {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let dist: f64 = self
                            .point(i)
                            .iter()
                            .zip(q)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        if dist <= bound {
                            f(i);
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
    }

    /// Nearest point to `q` by Euclidean distance; ties go to the lowest id.
    pub fn nearest(&self, q: &[f64]) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: (usize, f64) = (usize::MAX, f64::INFINITY);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if Self::box_sq_dist(node, q) > best.1 {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let dist: f64 = self
                            .point(i)
                            .iter()
                            .zip(q)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        if dist < best.1 || (dist == best.1 && i < best.0) {
                            best = (i, dist);
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = Self::box_sq_dist(&self.nodes[left], q);
                    let dr = Self::box_sq_dist(&self.nodes[right], q);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        Some((best.0, best.1.sqrt()))
    }
}

/// Kernel-neighborhood index over a fixed reference set of states.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    weights: Vec<f64>,
    points: Vec<Vec<f64>>,
    tree: KdTree,
}

impl NeighborIndex {
    /// `points` live in the kernel's input space; the tree is built over
    /// `w ⊙ x`.
    pub fn build(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Self {
        let weighted: Vec<Vec<f64>> = points
            .iter()
            .map(|p| p.iter().zip(&weights).map(|(v, w)| v * w).collect())
            .collect();
        let tree = KdTree::build(&weighted);
        Self {
            weights,
            points,
            tree,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    /// Ids of reference points with `k(query, x) >= delta`, ascending,
    /// skipping `exclude` (the query's own id when it is in the index).
    ///
    /// Panics if `query` has the wrong dimension or `delta` is outside
    /// `(0, 1]`; use [`crate::decision_points::find_neighbors`] for the
    /// checked variant.
    pub fn within(&self, query: &[f64], delta: f64, exclude: Option<usize>) -> Vec<usize> {
        let r = radius_from_delta(delta).expect("delta in (0, 1]");
        assert_eq!(query.len(), self.dim(), "query dimension");
        let wq: Vec<f64> = query.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
        let mut out = Vec::new();
        self.tree.for_each_candidate(&wq, r * r, |i| {
            if Some(i) != exclude && self.similarity(query, i) >= delta {
                out.push(i);
            }
        });
        out.sort_unstable();
        out
    }

    #[inline]
    pub fn similarity(&self, query: &[f64], i: usize) -> f64 {
        (-weighted_sq_dist(query, &self.points[i], &self.weights)).exp()
    }

    /// Reference implementation: scan every point with [`kernel_exact`].
    pub fn brute_force_within(&self, query: &[f64], delta: f64, exclude: Option<usize>) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| Some(i) != exclude)
            .filter(|&i| kernel_exact(query, &self.points[i], &self.weights).unwrap() >= delta)
            .collect()
    }
}
