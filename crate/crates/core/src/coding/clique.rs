use super::graph::SimpleGraph;
use crate::error::UsageError;

/// Largest graph the exact oracle accepts.
pub const EXACT_CLIQUE_LIMIT: usize = 20;

/// Greedy clique heuristic.
///
/// Vertices are indexed in queue order (0 is the head). The seed is the
/// head if it has any edge, otherwise the highest-degree vertex; the clique
/// then grows by the highest-degree vertex adjacent to every member. Ties
/// go to the lower index. An edgeless graph yields the head alone.
pub fn greedy_max_clique(g: &SimpleGraph) -> Vec<usize> {
    let n = g.len();
    if n == 0 {
        return Vec::new();
    }
    let degree: Vec<usize> = (0..n).map(|v| g.degree(v)).collect();
    if degree.iter().all(|d| *d == 0) {
        return vec![0];
    }
    let seed = if degree[0] > 0 {
        0
    } else {
        best_by_degree(0..n, &degree).expect("non-empty")
    };
    let mut clique = vec![seed];
    loop {
        let next = best_by_degree(
            (0..n).filter(|&v| !clique.contains(&v) && clique.iter().all(|&m| g.has_edge(m, v))),
            &degree,
        );
        match next {
            Some(v) => clique.push(v),
            None => break,
        }
    }
    clique.sort_unstable();
    clique
}

fn best_by_degree(candidates: impl Iterator<Item = usize>, degree: &[usize]) -> Option<usize> {
    // max_by_key keeps the last maximum; reverse the comparison on index so
    // the lowest index wins ties
    candidates.max_by(|&a, &b| degree[a].cmp(&degree[b]).then(b.cmp(&a)))
}

/// Maximum-cardinality clique by branch and bound. Among maximum cliques
/// the lexicographically smallest sorted vertex list is returned.
pub fn exact_max_clique(g: &SimpleGraph) -> Result<Vec<usize>, UsageError> {
    let n = g.len();
    if n > EXACT_CLIQUE_LIMIT {
        return Err(UsageError::OracleTooLarge {
            limit: EXACT_CLIQUE_LIMIT,
            got: n,
        });
    }
    let adj: Vec<u32> = (0..n)
        .map(|v| g.neighbours(v).fold(0u32, |m, u| m | (1 << u)))
        .collect();
    let mut best = Vec::new();
    let mut current = Vec::new();
    let all = if n == 0 { 0 } else { (1u32 << n) - 1 };
    expand(&adj, &mut current, all, &mut best);
    Ok(best)
}

fn expand(adj: &[u32], current: &mut Vec<usize>, mut candidates: u32, best: &mut Vec<usize>) {
    if current.len() > best.len() {
        *best = current.clone();
    }
    while candidates != 0 {
        if current.len() + candidates.count_ones() as usize <= best.len() {
            return;
        }
        let v = candidates.trailing_zeros() as usize;
        candidates &= !(1 << v);
        current.push(v);
        // only higher-indexed vertices, so each clique is visited once in
        // lexicographic pre-order
        expand(adj, current, candidates & adj[v], best);
        current.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn petersen() -> SimpleGraph {
        let mut edges = Vec::new();
        for i in 0..5 {
            edges.push((i, (i + 1) % 5));
            edges.push((i, i + 5));
            edges.push((5 + i, 5 + (i + 2) % 5));
        }
        SimpleGraph::from_edges(10, &edges)
    }

    #[test]
    fn greedy_edgeless_returns_head() {
        assert_eq!(greedy_max_clique(&SimpleGraph::new(3)), vec![0]);
        assert!(greedy_max_clique(&SimpleGraph::new(0)).is_empty());
    }

    #[test]
    fn greedy_triangle() {
        assert_eq!(greedy_max_clique(&SimpleGraph::complete(3)), vec![0, 1, 2]);
    }

    #[test]
    fn greedy_seeds_at_head_when_possible() {
        // head has one edge to 1; {2,3,4} is a larger triangle elsewhere
        let g = SimpleGraph::from_edges(5, &[(0, 1), (2, 3), (3, 4), (2, 4)]);
        assert_eq!(greedy_max_clique(&g), vec![0, 1]);
        // isolated head: seed at the highest degree vertex
        let g = SimpleGraph::from_edges(5, &[(1, 2), (2, 3), (3, 4), (2, 4)]);
        assert_eq!(greedy_max_clique(&g), vec![2, 3, 4]);
    }

    #[test]
    fn exact_small_cases() {
        assert_eq!(exact_max_clique(&SimpleGraph::new(1)).unwrap(), vec![0]);
        assert_eq!(
            exact_max_clique(&SimpleGraph::complete(5)).unwrap(),
            vec![0, 1, 2, 3, 4]
        );
        assert!(exact_max_clique(&SimpleGraph::new(0)).unwrap().is_empty());
        assert!(matches!(
            exact_max_clique(&SimpleGraph::new(21)),
            Err(UsageError::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn exact_on_petersen_is_an_edge() {
        let g = petersen();
        let c = exact_max_clique(&g).unwrap();
        assert_eq!(c.len(), 2);
        assert!(g.is_clique(&c));
        // lowest indices among all edges
        assert_eq!(c, vec![0, 1]);
        // no triangle exists at all
        for a in 0..10 {
            for b in a + 1..10 {
                for d in b + 1..10 {
                    assert!(!g.is_clique(&[a, b, d]));
                }
            }
        }
    }

    #[test]
    fn exact_prefers_lowest_indices_on_ties() {
        let g = SimpleGraph::from_edges(6, &[(3, 4), (4, 5), (3, 5), (0, 2), (2, 1), (0, 1)]);
        assert_eq!(exact_max_clique(&g).unwrap(), vec![0, 1, 2]);
    }
}
