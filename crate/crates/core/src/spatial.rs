//! Static 2-d k-d tree for exact k-nearest-neighbour queries.
//!
//! Points are identified by their insertion index. Every node records the
//! smallest index stored beneath it, which lets a query restrict itself to
//! points with index below a limit (the "previously ordered" points of a
//! Vecchia ordering) without scanning the excluded part of the tree.
//!
//! Ties in distance are broken by the lower index, so results are a pure
//! function of the input.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 12;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Node {
    start: usize,
    end: usize,
    bbox: [f64; 4],
    min_id: usize,
    left: usize,
    right: usize,
}

/// Exact nearest-neighbour index over planar points.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 2]>,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    d2: f64,
    id: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

impl KdTree {
    /// Builds the tree. Coordinates must be finite.
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        let n = points.len();
        let mut tree = KdTree {
            points,
            perm: (0..n).collect(),
            nodes: Vec::with_capacity(2 * n / LEAF_SIZE + 1),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> [f64; 2] {
        self.points[id]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let mut min_id = NONE;
        for &id in &self.perm[start..end] {
            let p = self.points[id];
            bbox[0] = bbox[0].min(p[0]);
            bbox[1] = bbox[1].min(p[1]);
            bbox[2] = bbox[2].max(p[0]);
            bbox[3] = bbox[3].max(p[1]);
            min_id = min_id.min(id);
        }
        let node_idx = self.nodes.len();
        self.nodes.push(Node { start, end, bbox, min_id, left: NONE, right: NONE });
        if end - start > LEAF_SIZE {
            let axis = if bbox[2] - bbox[0] >= bbox[3] - bbox[1] { 0 } else { 1 };
            let mid = start + (end - start) / 2;
            let points = &self.points;
            self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
            });
            let left = self.build(start, mid);
            let right = self.build(mid, end);
            self.nodes[node_idx].left = left;
            self.nodes[node_idx].right = right;
        }
        node_idx
    }

    /// The `k` nearest points to `query`, sorted by (distance, index).
    ///
    /// Returns `(index, squared distance)` pairs.
    pub fn nearest(&self, query: [f64; 2], k: usize) -> Vec<(usize, f64)> {
        self.nearest_below(query, k, usize::MAX)
    }

    /// Like [`KdTree::nearest`] but only considers points whose index is
    /// strictly below `limit`.
    pub fn nearest_below(&self, query: [f64; 2], k: usize, limit: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, limit, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.id, c.d2)).collect()
    }

    fn search(
        &self,
        node_idx: usize,
        q: [f64; 2],
        k: usize,
        limit: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let node = &self.nodes[node_idx];
        if node.min_id >= limit {
            return;
        }
        if heap.len() == k {
            let worst = heap.peek().map(|c| c.d2).unwrap_or(f64::INFINITY);
            // Equal distance may still hold a lower-index tie, so only prune strictly.
            if bbox_dist2(&node.bbox, q) > worst {
                return;
            }
        }
        if node.left == NONE {
            for &id in &self.perm[node.start..node.end] {
                if id >= limit {
                    continue;
                }
                let p = self.points[id];
                let dx = p[0] - q[0];
                let dy = p[1] - q[1];
                let cand = Candidate { d2: dx * dx + dy * dy, id };
                if heap.len() < k {
                    heap.push(cand);
                } else if let Some(top) = heap.peek() {
                    if cand < *top {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            return;
        }
        let (l, r) = (node.left, node.right);
        let dl = bbox_dist2(&self.nodes[l].bbox, q);
        let dr = bbox_dist2(&self.nodes[r].bbox, q);
        if dl <= dr {
            self.search(l, q, k, limit, heap);
            self.search(r, q, k, limit, heap);
        } else {
            self.search(r, q, k, limit, heap);
            self.search(l, q, k, limit, heap);
        }
    }
}

fn bbox_dist2(b: &[f64; 4], q: [f64; 2]) -> f64 {
    let dx = (b[0] - q[0]).max(0.0).max(q[0] - b[2]);
    let dy = (b[1] - q[1]).max(0.0).max(q[1] - b[3]);
    dx * dx + dy * dy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn brute(points: &[[f64; 2]], q: [f64; 2], k: usize, limit: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| *i < limit)
            .map(|(i, p)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = seeded(3);
        let pts: Vec<[f64; 2]> = (0..500).map(|_| [rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0]).collect();
        let tree = KdTree::new(pts.clone());
        for _ in 0..100 {
            let q = [rng.random::<f64>() * 12.0 - 1.0, rng.random::<f64>() * 12.0 - 1.0];
            let limit = rng.random_range(0..600);
            let got: Vec<usize> = tree.nearest_below(q, 7, limit).into_iter().map(|(i, _)| i).collect();
            assert_eq!(got, brute(&pts, q, 7, limit));
        }
    }

    #[test]
    fn ties_prefer_lower_index() {
        // Lattice points give many exact distance ties.
        let pts: Vec<[f64; 2]> = (0..100).map(|i| [(i % 10) as f64, (i / 10) as f64]).collect();
        let tree = KdTree::new(pts.clone());
        for q in [[4.5, 4.5], [0.0, 0.0], [5.0, 5.0]] {
            let got: Vec<usize> = tree.nearest(q, 9).into_iter().map(|(i, _)| i).collect();
            assert_eq!(got, brute(&pts, q, 9, usize::MAX));
        }
    }

    #[test]
    fn empty_and_small() {
        let tree = KdTree::new(vec![]);
        assert!(tree.nearest([0.0, 0.0], 3).is_empty());
        let tree = KdTree::new(vec![[1.0, 1.0]]);
        assert_eq!(tree.nearest([0.0, 0.0], 3).len(), 1);
        assert!(tree.nearest_below([0.0, 0.0], 3, 0).is_empty());
    }
}
