//! Dependency structure of a sum W = Σ_j X^(j) whose summands are functions
//! of subsets M_j of M underlying independent variables.
//!
//! Two summands are dependent only if their subsets intersect, which induces
//! an intersection graph on the summand indices.  The graph yields the
//! neighborhood statistics entering the error bounds and the index sets of
//! the decompositions W = W^(j) + Z^(j) and W^(j) = W^(j,k) + Z^(j,k), where
//! W^(j) drops the neighborhood of j and W^(j,k) additionally drops the
//! neighborhood of k.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Intersection graph of the summand subsets M_j over M underlying
/// variables: j ~ k iff M_j and M_k share a variable.  Immutable after
/// construction; adjacency and inverted index are stored sorted so all
/// derived sets are reproducible.
#[derive(Debug, Clone)]
pub struct IntersectionGraph {
    subsets: Vec<Vec<usize>>,
    adjacency: Vec<Vec<usize>>,
    var_to_summands: Vec<Vec<usize>>,
}

impl IntersectionGraph {
    /// Number of summands n.
    pub fn num_summands(&self) -> usize {
        self.subsets.len()
    }

    /// Number of underlying independent variables M.
    pub fn num_vars(&self) -> usize {
        self.var_to_summands.len()
    }

    /// The variable subset M_j, sorted.
    pub fn subset(&self, j: usize) -> &[usize] {
        &self.subsets[j]
    }

    /// The neighbor set N_j = {k != j : M_j and M_k intersect}, sorted.
    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.adjacency[j]
    }

    /// The summands whose subsets contain variable l (the set L_l), sorted.
    pub fn summands_containing(&self, l: usize) -> &[usize] {
        &self.var_to_summands[l]
    }

    pub fn degree(&self, j: usize) -> usize {
        self.adjacency[j].len()
    }

    pub fn are_adjacent(&self, j: usize, k: usize) -> bool {
        self.adjacency[j].binary_search(&k).is_ok()
    }

    /// All variables on which the summands excluded from W^(j,k) depend:
    /// the union of M_{j'} over j' in {j} u N_j u {k} u N_k.  A coupling
    /// confined to the remaining variables leaves W^(j,k) untouched.
    pub fn dependent_vars(&self, j: usize, k: Option<usize>) -> Result<BTreeSet<usize>> {
        self.check_pair(j, k)?;
        let mut excluded: BTreeSet<usize> = BTreeSet::new();
        let mut summands: BTreeSet<usize> = BTreeSet::new();
        summands.insert(j);
        summands.extend(self.adjacency[j].iter().copied());
        if let Some(k) = k {
            summands.insert(k);
            summands.extend(self.adjacency[k].iter().copied());
        }
        for jp in summands {
            excluded.extend(self.subsets[jp].iter().copied());
        }
        Ok(excluded)
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.num_summands() {
            return Err(Error::domain(format!(
                "summand index {j} out of range for a graph with {} summands",
                self.num_summands()
            )));
        }
        Ok(())
    }

    fn check_pair(&self, j: usize, k: Option<usize>) -> Result<()> {
        self.check_index(j)?;
        if let Some(k) = k {
            self.check_index(k)?;
            if k != j && !self.are_adjacent(j, k) {
                return Err(Error::domain(format!(
                    "summands {j} and {k} are not adjacent in the intersection graph"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the intersection graph of `subsets` over `num_vars` underlying
/// variables, in O(Σ|M_j| + edges) via the inverted index l -> L_l.
pub fn build_intersection_graph(
    num_vars: usize,
    subsets: &[impl AsRef<[usize]>],
) -> Result<IntersectionGraph> {
    if subsets.is_empty() {
        return Err(Error::domain(
            "build_intersection_graph: need at least one subset",
        ));
    }
    let n = subsets.len();
    let mut clean: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut var_to_summands: Vec<Vec<usize>> = vec![Vec::new(); num_vars];
    for (j, m_j) in subsets.iter().enumerate() {
        let set: BTreeSet<usize> = m_j.as_ref().iter().copied().collect();
        for &l in &set {
            if l >= num_vars {
                return Err(Error::domain(format!(
                    "build_intersection_graph: subset {j} contains variable {l}, \
                     but only {num_vars} variables exist"
                )));
            }
            var_to_summands[l].push(j);
        }
        clean.push(set.into_iter().collect());
    }
    let mut neighbor_sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for shared in &var_to_summands {
        for (a, &j) in shared.iter().enumerate() {
            for &k in &shared[a + 1..] {
                neighbor_sets[j].insert(k);
                neighbor_sets[k].insert(j);
            }
        }
    }
    let adjacency = neighbor_sets
        .into_iter()
        .map(|s| s.into_iter().collect())
        .collect();
    Ok(IntersectionGraph {
        subsets: clean,
        adjacency,
        var_to_summands,
    })
}

/// Parses one subset per non-blank line, whitespace-separated variable
/// indices, and builds the graph over max index + 1 variables.
pub fn intersection_graph_from_text(text: &str) -> Result<IntersectionGraph> {
    let mut subsets: Vec<Vec<usize>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut subset = Vec::new();
        for tok in line.split_whitespace() {
            let l: usize = tok.parse().map_err(|_| {
                Error::domain(format!(
                    "line {}: expected a variable index, got {tok:?}",
                    lineno + 1
                ))
            })?;
            subset.push(l);
        }
        subsets.push(subset);
    }
    let num_vars = subsets
        .iter()
        .flat_map(|s| s.iter().copied())
        .max()
        .map_or(0, |m| m + 1);
    build_intersection_graph(num_vars, &subsets)
}

/// Degree list and the normalized squared-neighborhood sum
/// D̄² = m^{-1} Σ_j (D_j + 1)².
#[derive(Debug, Clone)]
pub struct NeighborhoodStats {
    pub degrees: Vec<usize>,
    pub dbar2: f64,
    pub m_used: u64,
}

/// Computes D̄² with the sum in exact integer arithmetic and the division
/// by m performed last.
pub fn neighborhood_stats(graph: &IntersectionGraph, m: u64) -> Result<NeighborhoodStats> {
    if m < 1 {
        return Err(Error::domain("neighborhood_stats: m must be at least 1"));
    }
    let degrees: Vec<usize> = (0..graph.num_summands()).map(|j| graph.degree(j)).collect();
    let sum: u128 = degrees.iter().map(|&d| (d as u128 + 1).pow(2)).sum();
    Ok(NeighborhoodStats {
        degrees,
        dbar2: sum as f64 / m as f64,
        m_used: m,
    })
}

/// Summand index sets of the decompositions around j (and k, when given):
/// `zj` = {j} u N_j and `wj` its complement, so W = W^(j) + Z^(j); for an
/// adjacent k, `wjk` = [n] \ (N_j u N_k) and `zjk` = wj \ wjk, so
/// W^(j) = W^(j,k) + Z^(j,k).  For k = j the refinement is trivial:
/// `wjk` = `wj` and `zjk` is empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompositionSets {
    pub zj: Vec<usize>,
    pub wj: Vec<usize>,
    pub wjk: Option<Vec<usize>>,
    pub zjk: Option<Vec<usize>>,
}

pub fn decomposition_sets(
    graph: &IntersectionGraph,
    j: usize,
    k: Option<usize>,
) -> Result<DecompositionSets> {
    graph.check_pair(j, k)?;
    let n = graph.num_summands();
    let mut in_zj = vec![false; n];
    in_zj[j] = true;
    for &nb in graph.neighbors(j) {
        in_zj[nb] = true;
    }
    let zj: Vec<usize> = (0..n).filter(|&i| in_zj[i]).collect();
    let wj: Vec<usize> = (0..n).filter(|&i| !in_zj[i]).collect();

    let (wjk, zjk) = match k {
        None => (None, None),
        Some(k) if k == j => (Some(wj.clone()), Some(Vec::new())),
        Some(k) => {
            let mut dropped = vec![false; n];
            for &nb in graph.neighbors(j) {
                dropped[nb] = true;
            }
            for &nb in graph.neighbors(k) {
                dropped[nb] = true;
            }
            let wjk: Vec<usize> = (0..n).filter(|&i| !dropped[i]).collect();
            let zjk: Vec<usize> = wj
                .iter()
                .copied()
                .filter(|&i| dropped[i])
                .collect();
            (Some(wjk), Some(zjk))
        }
    };
    Ok(DecompositionSets { zj, wj, wjk, zjk })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::make_rng;

    fn five_cycle_line_graph() -> IntersectionGraph {
        let subsets: Vec<Vec<usize>> = (0..5).map(|i| vec![i, (i + 1) % 5]).collect();
        build_intersection_graph(5, &subsets).unwrap()
    }

    #[test]
    fn disjoint_subsets_give_an_edgeless_graph() {
        let subsets = vec![vec![0], vec![1], vec![2]];
        let g = build_intersection_graph(3, &subsets).unwrap();
        for j in 0..3 {
            assert!(g.neighbors(j).is_empty());
        }
    }

    #[test]
    fn a_shared_element_gives_a_complete_graph() {
        let subsets = vec![vec![0]; 4];
        let g = build_intersection_graph(1, &subsets).unwrap();
        for j in 0..4 {
            let expected: Vec<usize> = (0..4).filter(|&k| k != j).collect();
            assert_eq!(g.neighbors(j), expected.as_slice());
        }
    }

    #[test]
    fn edges_of_a_five_cycle_have_two_neighbors_each() {
        let g = five_cycle_line_graph();
        for j in 0..5 {
            assert_eq!(g.degree(j), 2, "edge {j}");
        }
        assert_eq!(g.neighbors(0), &[1, 4]);
    }

    #[test]
    fn out_of_range_elements_are_rejected() {
        assert!(build_intersection_graph(3, &[vec![0], vec![3]]).is_err());
        assert!(build_intersection_graph(0, &[vec![0usize]]).is_err());
        let empty: Vec<Vec<usize>> = Vec::new();
        assert!(build_intersection_graph(3, &empty).is_err());
    }

    #[test]
    fn adjacency_matches_direct_set_intersection_on_random_graphs() {
        let mut rng = make_rng(17, 0);
        for _ in 0..20 {
            let num_vars = 12;
            let n = 2 + (rng.uniform() * 9.0) as usize;
            let subsets: Vec<Vec<usize>> = (0..n)
                .map(|_| {
                    (0..num_vars)
                        .filter(|_| rng.uniform() < 0.25)
                        .collect::<Vec<usize>>()
                })
                .collect();
            let g = build_intersection_graph(num_vars, &subsets).unwrap();
            for j in 0..n {
                assert!(!g.are_adjacent(j, j));
                for k in 0..n {
                    if j == k {
                        continue;
                    }
                    let intersects = subsets[j].iter().any(|l| subsets[k].contains(l));
                    assert_eq!(g.are_adjacent(j, k), intersects, "pair ({j},{k})");
                    assert_eq!(g.are_adjacent(j, k), g.are_adjacent(k, j));
                }
            }
        }
    }

    #[test]
    fn stats_on_an_edgeless_graph() {
        let subsets: Vec<Vec<usize>> = (0..10).map(|i| vec![i]).collect();
        let g = build_intersection_graph(10, &subsets).unwrap();
        let stats = neighborhood_stats(&g, 10).unwrap();
        assert_eq!(stats.dbar2, 1.0);
        assert!(stats.degrees.iter().all(|&d| d == 0));
    }

    #[test]
    fn stats_on_the_five_cycle_line_graph() {
        let g = five_cycle_line_graph();
        let stats = neighborhood_stats(&g, 5).unwrap();
        assert_eq!(stats.dbar2, 9.0);
    }

    #[test]
    fn stats_on_a_four_edge_star() {
        let subsets = vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![0, 4]];
        let g = build_intersection_graph(5, &subsets).unwrap();
        let stats = neighborhood_stats(&g, 4).unwrap();
        assert_eq!(stats.dbar2, 16.0);
        assert!(neighborhood_stats(&g, 0).is_err());
    }

    #[test]
    fn isolated_vertex_decomposition() {
        let subsets: Vec<Vec<usize>> = (0..6).map(|i| vec![i]).collect();
        let g = build_intersection_graph(6, &subsets).unwrap();
        let sets = decomposition_sets(&g, 3, None).unwrap();
        assert_eq!(sets.zj, vec![3]);
        assert_eq!(sets.wj, vec![0, 1, 2, 4, 5]);
        assert_eq!(sets.wjk, None);
    }

    #[test]
    fn five_cycle_pair_decomposition() {
        let g = five_cycle_line_graph();
        let sets = decomposition_sets(&g, 0, Some(1)).unwrap();
        assert_eq!(sets.zj, vec![0, 1, 4]);
        assert_eq!(sets.wj, vec![2, 3]);
        assert_eq!(sets.wjk.unwrap(), vec![3]);
        assert_eq!(sets.zjk.unwrap(), vec![2]);
    }

    #[test]
    fn equal_indices_give_the_trivial_refinement() {
        let g = five_cycle_line_graph();
        let sets = decomposition_sets(&g, 2, Some(2)).unwrap();
        assert_eq!(sets.wjk.as_deref(), Some(sets.wj.as_slice()));
        assert_eq!(sets.zjk.unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn non_adjacent_pairs_are_rejected() {
        let g = five_cycle_line_graph();
        assert!(decomposition_sets(&g, 0, Some(2)).is_err());
        assert!(decomposition_sets(&g, 0, Some(9)).is_err());
        assert!(decomposition_sets(&g, 9, None).is_err());
    }

    #[test]
    fn the_three_sets_partition_the_summands() {
        let mut rng = make_rng(18, 0);
        for _ in 0..20 {
            let num_vars = 10;
            let n = 3 + (rng.uniform() * 8.0) as usize;
            let subsets: Vec<Vec<usize>> = (0..n)
                .map(|_| {
                    let mut s: Vec<usize> = (0..num_vars)
                        .filter(|_| rng.uniform() < 0.3)
                        .collect();
                    if s.is_empty() {
                        s.push((rng.uniform() * num_vars as f64) as usize);
                    }
                    s
                })
                .collect();
            let g = build_intersection_graph(num_vars, &subsets).unwrap();
            for j in 0..n {
                for &k in g.neighbors(j) {
                    let sets = decomposition_sets(&g, j, Some(k)).unwrap();
                    let mut all: Vec<usize> = sets.zj.clone();
                    all.extend(sets.zjk.as_ref().unwrap());
                    all.extend(sets.wjk.as_ref().unwrap());
                    all.sort_unstable();
                    let expected: Vec<usize> = (0..n).collect();
                    assert_eq!(all, expected, "pair ({j},{k})");
                }
            }
        }
    }

    #[test]
    fn dependent_vars_cover_the_dropped_summands() {
        let g = five_cycle_line_graph();
        // Around j=0, k=1 the dropped summands are {0,1,2,4}; their subsets
        // cover variables {0,1,2,3,4} minus nothing except those of summand 3.
        let vars = g.dependent_vars(0, Some(1)).unwrap();
        assert_eq!(vars, BTreeSet::from([0, 1, 2, 3, 4]));
        let vars_j = g.dependent_vars(0, None).unwrap();
        assert_eq!(vars_j, BTreeSet::from([0, 1, 2, 4]));
    }

    #[test]
    fn text_ingestion_round_trips() {
        let text = "0 1\n1 2\n\n2 0\n";
        let g = intersection_graph_from_text(text).unwrap();
        assert_eq!(g.num_summands(), 3);
        assert_eq!(g.num_vars(), 3);
        for j in 0..3 {
            assert_eq!(g.degree(j), 2);
        }
        assert!(intersection_graph_from_text("0 x\n").is_err());
    }
}
