use std::collections::BTreeMap;

use crate::types::{NodeId, PacketId};

/// A vertex of the coding graph: one queued packet tagged with the
/// neighbour it is forwarded to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vertex {
    /// Position among the candidate packets, 0 = head of queue.
    pub queue_index: usize,
    pub id: PacketId,
    pub dest_tag: NodeId,
}

/// Weighted directed graph over queued packets. `w_ij` is the probability
/// that `dest(i)` decodes packet `i` when it is XORed with packet `j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodingGraph {
    pub vertices: Vec<Vertex>,
    pub weights: BTreeMap<(usize, usize), f64>,
}

impl CodingGraph {
    pub fn new(vertices: Vec<Vertex>) -> CodingGraph {
        CodingGraph {
            vertices,
            weights: BTreeMap::new(),
        }
    }

    /// Adds `i -> j`. Zero weights and same-destination pairs are not edges.
    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) {
        assert!(i != j, "self loop");
        assert!((0.0..=1.0).contains(&w), "weight {w} outside [0,1]");
        if w > 0.0 && self.vertices[i].dest_tag != self.vertices[j].dest_tag {
            self.weights.insert((i, j), w);
        }
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.weights.get(&(i, j)).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.weights.len()
    }

    /// Undirected reduction: `g_ij = w_ij + w_ji` where both directions exist.
    pub fn to_gain_graph(&self) -> CodingGainGraph {
        let mut weights = BTreeMap::new();
        for (&(i, j), &w) in &self.weights {
            if i < j {
                if let Some(back) = self.weight(j, i) {
                    weights.insert((i, j), w + back);
                }
            }
        }
        CodingGainGraph {
            vertices: self.vertices.clone(),
            weights,
        }
    }
}

/// Undirected coding gain graph, keys stored with `i < j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodingGainGraph {
    pub vertices: Vec<Vertex>,
    pub weights: BTreeMap<(usize, usize), f64>,
}

impl CodingGainGraph {
    pub fn gain(&self, i: usize, j: usize) -> Option<f64> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.weights.get(&key).copied()
    }

    /// Keeps exactly the edges with gain `>= theta`; every vertex survives.
    pub fn threshold(&self, theta: f64) -> SimpleGraph {
        let mut g = SimpleGraph::new(self.vertices.len());
        for (&(i, j), &w) in &self.weights {
            if w >= theta {
                g.add_edge(i, j);
            }
        }
        g
    }
}

/// Unweighted undirected graph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimpleGraph {
    adj: Vec<Vec<bool>>,
}

impl SimpleGraph {
    pub fn new(n: usize) -> SimpleGraph {
        SimpleGraph {
            adj: vec![vec![false; n]; n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> SimpleGraph {
        let mut g = SimpleGraph::new(n);
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    pub fn complete(n: usize) -> SimpleGraph {
        let mut g = SimpleGraph::new(n);
        for a in 0..n {
            for b in a + 1..n {
                g.add_edge(a, b);
            }
        }
        g
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        self.adj[a][b] = true;
        self.adj[b][a] = true;
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a][b]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].iter().filter(|e| **e).count()
    }

    pub fn edge_count(&self) -> usize {
        (0..self.len()).map(|v| self.degree(v)).sum::<usize>() / 2
    }

    pub fn neighbours(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[v].iter().enumerate().filter(|(_, e)| **e).map(|(u, _)| u)
    }

    /// True if every pair in `set` is adjacent.
    pub fn is_clique(&self, set: &[usize]) -> bool {
        set.iter()
            .enumerate()
            .all(|(k, &a)| set[k + 1..].iter().all(|&b| a != b && self.has_edge(a, b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vertices(dests: &[u16]) -> Vec<Vertex> {
        dests
            .iter()
            .enumerate()
            .map(|(k, d)| Vertex {
                queue_index: k,
                id: PacketId(k as u16),
                dest_tag: NodeId(*d),
            })
            .collect()
    }

    #[test]
    fn gain_is_sum_of_both_directions() {
        let mut g = CodingGraph::new(vertices(&[1, 2, 3]));
        g.set_weight(0, 1, 0.9);
        g.set_weight(1, 0, 0.8);
        g.set_weight(0, 2, 0.7);
        let gain = g.to_gain_graph();
        assert!((gain.gain(0, 1).unwrap() - 1.7).abs() < 1e-12);
        assert!((gain.gain(1, 0).unwrap() - 1.7).abs() < 1e-12);
        // only one direction: no undirected edge
        assert_eq!(gain.gain(0, 2), None);
    }

    #[test]
    fn complete_unit_graph_has_gain_two_everywhere() {
        let mut g = CodingGraph::new(vertices(&[1, 2, 3, 4]));
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    g.set_weight(i, j, 1.0);
                }
            }
        }
        let gain = g.to_gain_graph();
        assert_eq!(gain.weights.len(), 6);
        assert!(gain.weights.values().all(|w| *w == 2.0));
    }

    #[test]
    fn same_destination_and_zero_weight_are_not_edges() {
        let mut g = CodingGraph::new(vertices(&[1, 1, 2]));
        g.set_weight(0, 1, 1.0);
        g.set_weight(1, 0, 1.0);
        g.set_weight(0, 2, 0.0);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn threshold_keeps_boundary() {
        let gain = CodingGainGraph {
            vertices: vertices(&[1, 2, 3, 4]),
            weights: [((0, 1), 1.7), ((1, 2), 1.4), ((2, 3), 1.5)].into_iter().collect(),
        };
        let g = gain.threshold(1.5);
        assert!(g.has_edge(0, 1));
        assert!(!g.has_edge(1, 2));
        assert!(g.has_edge(2, 3));
        assert_eq!(g.len(), 4);

        let all = gain.threshold(0.0);
        assert_eq!(all.edge_count(), 3);
    }

    #[test]
    fn threshold_two_keeps_only_perfect_edges() {
        let gain = CodingGainGraph {
            vertices: vertices(&[1, 2, 3]),
            weights: [((0, 1), 2.0), ((0, 2), 1.999_999), ((1, 2), 1.0)]
                .into_iter()
                .collect(),
        };
        let g = gain.threshold(2.0);
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(0, 1));
    }
}
