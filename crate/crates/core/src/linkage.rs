//! Agglomerative clustering by the nearest-neighbor-chain algorithm.
//!
//! Output follows the usual linkage-matrix convention: leaves are
//! `0..n`, and merge `i` (sorted by height) creates node `n + i`.
//! Ward linkage is computed from cluster centroids and sizes, so it needs
//! only `O(n·d)` memory; complete and average linkage keep a condensed
//! distance matrix.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkageMethod {
    Ward,
    Complete,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linkage {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

impl Linkage {
    pub fn root(&self) -> usize {
        self.n_leaves + self.merges.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.n_leaves + self.merges.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.n_leaves
    }

    pub fn children(&self, node: usize) -> Option<(usize, usize)> {
        (node >= self.n_leaves).then(|| {
            let m = &self.merges[node - self.n_leaves];
            (m.left, m.right)
        })
    }

    /// Leaves under `node`, in left-to-right order.
    pub fn leaves(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            match self.children(n) {
                Some((l, r)) => {
                    stack.push(r);
                    stack.push(l);
                }
                None => out.push(n),
            }
        }
        out
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

trait Dissimilarity {
    fn dist(&self, a: usize, b: usize) -> f64;
    /// Merge slot `a` into slot `b`; slot `a` becomes inactive.
    fn merge(&mut self, a: usize, b: usize, active: &[bool]);
}

struct WardCentroids {
    dim: usize,
    centroid: Vec<f64>,
    size: Vec<f64>,
}

impl Dissimilarity for WardCentroids {
    fn dist(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (self.size[a], self.size[b]);
        let d = euclid(
            &self.centroid[a * self.dim..(a + 1) * self.dim],
            &self.centroid[b * self.dim..(b + 1) * self.dim],
        );
        (2.0 * na * nb / (na + nb)).sqrt() * d
    }

    fn merge(&mut self, a: usize, b: usize, _active: &[bool]) {
        let (na, nb) = (self.size[a], self.size[b]);
        let n = na + nb;
        for k in 0..self.dim {
            let ca = self.centroid[a * self.dim + k];
            let cb = &mut self.centroid[b * self.dim + k];
            *cb = (na * ca + nb * *cb) / n;
        }
        self.size[b] = n;
    }
}

struct Condensed {
    n: usize,
    d: Vec<f64>,
    size: Vec<f64>,
    complete: bool,
}

impl Condensed {
    #[inline]
    fn idx(&self, a: usize, b: usize) -> usize {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.n * i - i * (i + 1) / 2 + (j - i - 1)
    }
}

impl Dissimilarity for Condensed {
    fn dist(&self, a: usize, b: usize) -> f64 {
        self.d[self.idx(a, b)]
    }

    fn merge(&mut self, a: usize, b: usize, active: &[bool]) {
        let (na, nb) = (self.size[a], self.size[b]);
        for c in 0..self.n {
            if !active[c] || c == a || c == b {
                continue;
            }
            let (dac, dbc) = (self.dist(a, c), self.dist(b, c));
            let v = if self.complete {
                dac.max(dbc)
            } else {
                (na * dac + nb * dbc) / (na + nb)
            };
            let i = self.idx(b, c);
            self.d[i] = v;
        }
        self.size[b] = na + nb;
    }
}

fn nn_chain<D: Dissimilarity>(n: usize, diss: &mut D) -> Vec<(usize, usize, f64)> {
    let mut active = vec![true; n];
    let mut sizes = vec![1usize; n];
    let mut raw = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).unwrap());
        }
        loop {
            let a = *chain.last().unwrap();
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            let mut best = prev.map(|p| (p, diss.dist(a, p)));
            for c in 0..n {
                if !active[c] || c == a {
                    continue;
                }
                let dc = diss.dist(a, c);
                if best.is_none_or(|(_, bd)| dc < bd) {
                    best = Some((c, dc));
                }
            }
            let (b, h) = best.unwrap();
            if Some(b) == prev {
                chain.pop();
                chain.pop();
                // merged cluster lives in the higher slot
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                raw.push((lo, hi, h));
                diss.merge(lo, hi, &active);
                active[lo] = false;
                sizes[hi] += sizes[lo];
                remaining -= 1;
                break;
            }
            chain.push(b);
        }
    }
    raw
}

/// Full merge sequence over `points` under Euclidean distance.
///
/// Panics if fewer than two points are given.
pub fn build_linkage(points: &[Vec<f64>], method: LinkageMethod) -> Linkage {
    let n = points.len();
    assert!(n >= 2, "linkage needs at least two points");
    let raw = match method {
        LinkageMethod::Ward => {
            let dim = points[0].len();
            let mut w = WardCentroids {
                dim,
                centroid: points.iter().flat_map(|p| p.iter().copied()).collect(),
                size: vec![1.0; n],
            };
            nn_chain(n, &mut w)
        }
        LinkageMethod::Complete | LinkageMethod::Average => {
            let mut d = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    d.push(euclid(&points[i], &points[j]));
                }
            }
            let mut c = Condensed {
                n,
                d,
                size: vec![1.0; n],
                complete: method == LinkageMethod::Complete,
            };
            nn_chain(n, &mut c)
        }
    };

    // stable sort keeps creation order among equal heights
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].2.total_cmp(&raw[b].2));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut node_of: Vec<usize> = (0..n).collect();
    let mut size_of = vec![1usize; n];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n - 1);
    for (k, &i) in order.iter().enumerate() {
        let (a, b, h) = raw[i];
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let (na, nb) = (node_of[ra], node_of[rb]);
        let size = size_of[ra] + size_of[rb];
        parent[ra] = rb;
        node_of[rb] = n + k;
        size_of[rb] = size;
        merges.push(Merge {
            left: na.min(nb),
            right: na.max(nb),
            height: h,
            size,
        });
    }
    Linkage { n_leaves: n, merges }
}
