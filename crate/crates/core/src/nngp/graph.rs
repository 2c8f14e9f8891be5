use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{NngpError, Result};
use crate::spatial::KdTree;

/// Shift applied to repeated sites by [`jitter_duplicates`], in km.
pub const JITTER_KM: f64 = 1e-6;

/// Vecchia conditioning sets.
///
/// `ordering[p]` is the input index of the point at ordered position `p`.
/// `neighbors[p]` lists ordered positions, all below `p`, nearest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborGraph {
    pub ordering: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
    pub k: usize,
}

impl NeighborGraph {
    pub fn n(&self) -> usize {
        self.ordering.len()
    }

    /// Coordinates rearranged into ordered positions.
    pub fn ordered<T: Copy>(&self, values: &[T]) -> Vec<T> {
        self.ordering.iter().map(|&i| values[i]).collect()
    }
}

/// Orders points by x (then y, then input index) and finds each point's
/// `k` nearest predecessors exactly. `k` is clamped to `n - 1`.
pub fn build_neighbor_graph(coords: &[[f64; 2]], k: usize) -> Result<NeighborGraph> {
    let mut ordering: Vec<usize> = (0..coords.len()).collect();
    ordering.sort_by(|&a, &b| {
        coords[a][0]
            .total_cmp(&coords[b][0])
            .then(coords[a][1].total_cmp(&coords[b][1]))
            .then(a.cmp(&b))
    });
    graph_from_ordering(coords, ordering, k)
}

/// Neighbour sets for a caller-supplied ordering, which must be a
/// permutation of `0..n`. `k` is clamped to `n - 1`.
pub fn graph_from_ordering(coords: &[[f64; 2]], ordering: Vec<usize>, k: usize) -> Result<NeighborGraph> {
    let n = coords.len();
    if n == 0 {
        return Err(NngpError::Empty);
    }
    if k == 0 {
        return Err(NngpError::InvalidK);
    }
    if let Some(i) = coords.iter().position(|c| !(c[0].is_finite() && c[1].is_finite())) {
        return Err(NngpError::NonFiniteCoordinate(i));
    }
    let mut seen = vec![false; n];
    if ordering.len() != n || !ordering.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true)) {
        return Err(NngpError::InvalidParameter(format!("ordering is not a permutation of 0..{n}")));
    }
    let k = k.min(n - 1);
    let ordered: Vec<[f64; 2]> = ordering.iter().map(|&i| coords[i]).collect();
    let tree = KdTree::new(ordered.clone());
    let neighbors = (0..n)
        .into_par_iter()
        .map(|p| tree.nearest_below(ordered[p], k, p).into_iter().map(|(id, _)| id).collect())
        .collect();
    Ok(NeighborGraph { ordering, neighbors, k })
}

/// Moves every repeat of an exactly duplicated site `j * JITTER_KM` along x,
/// `j` being its rank among the copies (input order). Returns the new
/// coordinates and the number of points moved.
pub fn jitter_duplicates(coords: &[[f64; 2]]) -> (Vec<[f64; 2]>, usize) {
    let mut idx: Vec<usize> = (0..coords.len()).collect();
    idx.sort_by(|&a, &b| {
        coords[a][0]
            .total_cmp(&coords[b][0])
            .then(coords[a][1].total_cmp(&coords[b][1]))
            .then(a.cmp(&b))
    });
    let mut out = coords.to_vec();
    let mut moved = 0;
    let mut rank = 0usize;
    for w in 1..idx.len() {
        if coords[idx[w]] == coords[idx[w - 1]] {
            rank += 1;
            out[idx[w]][0] += rank as f64 * JITTER_KM;
            moved += 1;
        } else {
            rank = 0;
        }
    }
    (out, moved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn brute_force(ordered: &[[f64; 2]], p: usize, k: usize) -> Vec<usize> {
        let q = ordered[p];
        let mut c: Vec<(f64, usize)> =
            (0..p).map(|j| ((ordered[j][0] - q[0]).powi(2) + (ordered[j][1] - q[1]).powi(2), j)).collect();
        c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        c.into_iter().take(k).map(|(_, j)| j).collect()
    }

    #[test]
    fn collinear_three_points() {
        let g = build_neighbor_graph(&[[2.0, 0.0], [0.0, 0.0], [1.0, 0.0]], 2).unwrap();
        assert_eq!(g.ordering, vec![1, 2, 0]);
        assert_eq!(g.neighbors, vec![vec![], vec![0], vec![1, 0]]);
    }

    #[test]
    fn ordering_ties_break_on_y_then_index() {
        let g = build_neighbor_graph(&[[0.0, 1.0], [0.0, 0.0], [0.0, 1.0]], 1).unwrap();
        assert_eq!(g.ordering, vec![1, 0, 2]);
    }

    #[test]
    fn full_conditioning_uses_all_predecessors() {
        let mut rng = seeded(3);
        let pts: Vec<[f64; 2]> = (0..25).map(|_| [rng.random(), rng.random()]).collect();
        let g = build_neighbor_graph(&pts, 1000).unwrap();
        assert_eq!(g.k, 24);
        for (p, nb) in g.neighbors.iter().enumerate() {
            let mut s = nb.clone();
            s.sort_unstable();
            assert_eq!(s, (0..p).collect::<Vec<_>>());
        }
    }

    #[test]
    fn custom_ordering_is_respected() {
        let mut rng = seeded(9);
        let pts: Vec<[f64; 2]> = (0..60).map(|_| [rng.random(), rng.random()]).collect();
        let ordering: Vec<usize> = (0..60).rev().collect();
        let g = graph_from_ordering(&pts, ordering.clone(), 4).unwrap();
        let ordered = g.ordered(&pts);
        assert_eq!(g.ordering, ordering);
        for p in 0..60 {
            assert_eq!(g.neighbors[p], brute_force(&ordered, p, 4));
        }
        assert!(graph_from_ordering(&pts, vec![0; 60], 4).is_err());
        assert!(graph_from_ordering(&pts, (0..59).collect(), 4).is_err());
    }

    #[test]
    fn matches_brute_force_scan() {
        let mut rng = seeded(4);
        let pts: Vec<[f64; 2]> = (0..100).map(|_| [rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0]).collect();
        let g = build_neighbor_graph(&pts, 10).unwrap();
        let ordered = g.ordered(&pts);
        for p in 0..100 {
            assert_eq!(g.neighbors[p].len(), p.min(10));
            assert_eq!(g.neighbors[p], brute_force(&ordered, p, 10));
        }
        for w in ordered.windows(2) {
            assert!(w[0][0] <= w[1][0]);
        }
    }

    #[test]
    fn lattice_ties_match_brute_force() {
        let pts: Vec<[f64; 2]> = (0..64).map(|i| [(i % 8) as f64, (i / 8) as f64]).collect();
        let g = build_neighbor_graph(&pts, 6).unwrap();
        let ordered = g.ordered(&pts);
        for p in 0..64 {
            assert_eq!(g.neighbors[p], brute_force(&ordered, p, 6));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(build_neighbor_graph(&[], 3).unwrap_err(), NngpError::Empty);
        assert_eq!(build_neighbor_graph(&[[0.0, 0.0]], 0).unwrap_err(), NngpError::InvalidK);
        assert_eq!(
            build_neighbor_graph(&[[0.0, 0.0], [f64::NAN, 1.0]], 1).unwrap_err(),
            NngpError::NonFiniteCoordinate(1)
        );
        let g = build_neighbor_graph(&[[0.0, 0.0]], 5).unwrap();
        assert_eq!(g.neighbors, vec![Vec::<usize>::new()]);
    }

    #[test]
    fn jitter_moves_only_repeats() {
        let pts = [[1.0, 1.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]];
        let (out, moved) = jitter_duplicates(&pts);
        assert_eq!(moved, 2);
        assert_eq!(out[0], [1.0, 1.0]);
        assert_eq!(out[1], [0.0, 0.0]);
        assert_eq!(out[2], [1.0 + JITTER_KM, 1.0]);
        assert_eq!(out[3], [1.0 + 2.0 * JITTER_KM, 1.0]);
    }
}
