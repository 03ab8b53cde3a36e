//! Multilevel aggregate hierarchies by recursive balanced graph splitting.
//!
//! This is the in-house replacement for an external graph partitioner: each
//! aggregate is split into `2^d` balanced connected parts by repeated 2-way
//! cuts (greedy BFS region growing from a peripheral seed, boundary-move
//! refinement, connectivity repair). Every greedy choice breaks ties toward
//! the lowest element index, so the whole hierarchy is a pure function of the
//! input graph.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::meshgraph::ElementGraph;

/// Nested aggregate levels: `levels[0]` maps every element to its own
/// aggregate; `levels[k]` for growing `k` maps to ever coarser aggregates;
/// the last level has at most `2^d` aggregates. Aggregate ids at level `k+1`
/// group consecutive runs of level-`k` ids (parent-major numbering), which
/// keeps coarse dof blocks contiguous downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AggregateHierarchy {
    /// Spatial dimension controlling the splitting arity `2^d`.
    pub d: usize,
    /// Aggregates per level, finest (`n_elements`) first.
    pub counts: Vec<usize>,
    /// `levels[k][element]` = aggregate id of the element at level `k`.
    pub levels: Vec<Vec<usize>>,
}

impl AggregateHierarchy {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Member elements of every aggregate at `level`, in aggregate-id order.
    pub fn members(&self, level: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.counts[level]];
        for (e, &a) in self.levels[level].iter().enumerate() {
            out[a].push(e);
        }
        out
    }

    /// Check the structural invariants against the graph that produced the
    /// hierarchy: level-0 singletons, nesting, per-aggregate connectivity,
    /// and the coarsest-level count.
    pub fn validate(&self, graph: &ElementGraph) -> Result<()> {
        let n = graph.n_elements();
        if self.levels.is_empty() || self.levels[0] != (0..n).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(
                "hierarchy level 0 must assign each element its own aggregate".into(),
            ));
        }
        for (k, labels) in self.levels.iter().enumerate() {
            if labels.len() != n {
                return Err(Error::Dimension(format!(
                    "level {k} labels cover {} elements, graph has {n}",
                    labels.len()
                )));
            }
            let count = self.counts[k];
            if labels.iter().any(|&a| a >= count) {
                return Err(Error::InvalidArgument(format!(
                    "level {k} label out of range"
                )));
            }
            for members in self.members(k) {
                if members.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "level {k} has an empty aggregate"
                    )));
                }
                if !subset_connected(graph, &members) {
                    return Err(Error::InvalidArgument(format!(
                        "level {k} aggregate is disconnected"
                    )));
                }
            }
        }
        for k in 0..self.n_levels() - 1 {
            let fine = &self.levels[k];
            let coarse = &self.levels[k + 1];
            let mut parent = vec![usize::MAX; self.counts[k]];
            for e in 0..n {
                let p = parent[fine[e]];
                if p == usize::MAX {
                    parent[fine[e]] = coarse[e];
                } else if p != coarse[e] {
                    return Err(Error::InvalidArgument(format!(
                        "nesting violated between levels {k} and {}",
                        k + 1
                    )));
                }
            }
        }
        let arity = 1usize << self.d;
        let coarsest = *self.counts.last().unwrap();
        if coarsest > arity && n > arity {
            return Err(Error::InvalidArgument(format!(
                "coarsest level has {coarsest} aggregates, expected at most {arity}"
            )));
        }
        Ok(())
    }
}

/// Split `subset` (a connected node set of `graph`) into `parts` balanced
/// connected parts. Returns one label in `0..parts` per subset entry,
/// positionally aligned with `subset`. When `parts` does not divide the
/// subset size, the lower-indexed parts take the remainders.
pub fn kway_split(graph: &ElementGraph, subset: &[usize], parts: usize) -> Result<Vec<usize>> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("kway_split: empty subset".into()));
    }
    if parts == 0 {
        return Err(Error::InvalidArgument("kway_split: parts must be ≥ 1".into()));
    }
    let mut order: Vec<usize> = subset.to_vec();
    order.sort_unstable();
    let mut labels = vec![0usize; order.len()];
    split_recursive(graph, &order, parts, 0, &mut |node, label| {
        // order is sorted, so the position lookup is a binary search
        let pos = order.binary_search(&node).expect("node from its own subset");
        labels[pos] = label;
    });
    // map back to the caller's subset order
    let mut out = vec![0usize; subset.len()];
    for (i, &node) in subset.iter().enumerate() {
        let pos = order.binary_search(&node).unwrap();
        out[i] = labels[pos];
    }
    Ok(out)
}

/// Recursive 2-way splitting: `parts` is divided into halves, the subset is
/// cut once with proportional size targets, and each side recurses.
fn split_recursive(
    graph: &ElementGraph,
    subset: &[usize],
    parts: usize,
    label_base: usize,
    assign: &mut impl FnMut(usize, usize),
) {
    if parts == 1 || subset.len() == 1 {
        for &node in subset {
            assign(node, label_base);
        }
        return;
    }
    let left_parts = parts / 2;
    let right_parts = parts - left_parts;
    // per-part target sizes: base + 1 for the first `rem` parts
    let n = subset.len();
    let (base, rem) = (n / parts, n % parts);
    let target_left: usize = (0..left_parts).map(|i| base + usize::from(i < rem)).sum();
    let (left, right) = two_way_split(graph, subset, target_left);
    split_recursive(graph, &left, left_parts, label_base, assign);
    split_recursive(graph, &right, right_parts, label_base + left_parts, assign);
}

/// One balanced 2-way cut of a connected subset. Returns (side A, side B)
/// with |A| as close to `target` as connectivity allows, both sides sorted.
fn two_way_split(graph: &ElementGraph, subset: &[usize], target: usize) -> (Vec<usize>, Vec<usize>) {
    let n = subset.len();
    debug_assert!(subset.windows(2).all(|w| w[0] < w[1]), "subset sorted");
    let local = |node: usize| subset.binary_search(&node).ok();

    // local adjacency restricted to the subset
    let adj: Vec<Vec<usize>> = subset
        .iter()
        .map(|&node| {
            graph.adjacency[node]
                .iter()
                .filter_map(|&nb| local(nb))
                .collect()
        })
        .collect();

    // peripheral seed: BFS from the lowest-index node, take the farthest
    // node (lowest index on distance ties)
    let dist = bfs_distances(&adj, 0);
    let seed = (0..n)
        .max_by(|&a, &b| dist[a].cmp(&dist[b]).then(b.cmp(&a)))
        .unwrap();

    // greedy region growing: add the frontier node with the most neighbors
    // already inside, tie toward the lowest element index
    let mut in_a = vec![false; n];
    let mut internal = vec![0usize; n]; // neighbors inside A, for frontier nodes
    let mut frontier: Vec<usize> = Vec::new();
    in_a[seed] = true;
    let mut size_a = 1usize;
    for &nb in &adj[seed] {
        internal[nb] += 1;
        if internal[nb] == 1 {
            frontier.push(nb);
        }
    }
    while size_a < target {
        let Some(pick_pos) = frontier
            .iter()
            .enumerate()
            .max_by(|(_, &x), (_, &y)| internal[x].cmp(&internal[y]).then(y.cmp(&x)))
            .map(|(pos, _)| pos)
        else {
            break; // subset exhausted (cannot happen for connected subsets)
        };
        let pick = frontier.swap_remove(pick_pos);
        in_a[pick] = true;
        size_a += 1;
        for &nb in &adj[pick] {
            if !in_a[nb] {
                internal[nb] += 1;
                if internal[nb] == 1 {
                    frontier.push(nb);
                }
            }
        }
    }

    refine_cut(&adj, &mut in_a, target);
    repair_connectivity(&adj, &mut in_a);

    let mut a = Vec::with_capacity(target);
    let mut b = Vec::with_capacity(n - target);
    for (i, &node) in subset.iter().enumerate() {
        if in_a[i] {
            a.push(node);
        } else {
            b.push(node);
        }
    }
    // a degenerate repair could empty one side; fall back to a trivial
    // balanced cut in index order (still deterministic, caller re-splits)
    if a.is_empty() || b.is_empty() {
        a.clear();
        b.clear();
        for (i, &node) in subset.iter().enumerate() {
            if i < target {
                a.push(node);
            } else {
                b.push(node);
            }
        }
    }
    (a, b)
}

fn bfs_distances(adj: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut queue = std::collections::VecDeque::new();
    dist[start] = 0;
    queue.push_back(start);
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    for d in dist.iter_mut() {
        if *d == usize::MAX {
            *d = 0; // unreachable nodes never win the periphery argmax
        }
    }
    dist
}

/// Greedy boundary moves that strictly reduce the edge cut while keeping both
/// side sizes within ±1 of their targets. Terminates because the cut strictly
/// decreases; ties break toward the lowest index.
fn refine_cut(adj: &[Vec<usize>], in_a: &mut [bool], target: usize) {
    let n = adj.len();
    let mut size_a = in_a.iter().filter(|&&x| x).count();
    let lo_a = target.saturating_sub(1);
    let hi_a = (target + 1).min(n);
    for _ in 0..2 * n {
        let mut best: Option<(i64, usize)> = None; // (gain, node)
        for i in 0..n {
            let new_size = if in_a[i] { size_a - 1 } else { size_a + 1 };
            if new_size < lo_a || new_size > hi_a {
                continue;
            }
            let mut same = 0i64;
            let mut other = 0i64;
            for &j in &adj[i] {
                if in_a[j] == in_a[i] {
                    same += 1;
                } else {
                    other += 1;
                }
            }
            if other == 0 {
                continue; // not a boundary node
            }
            let gain = other - same;
            if gain > 0 && best.map_or(true, |(g, _)| gain > g) {
                best = Some((gain, i));
            }
        }
        match best {
            Some((_, i)) => {
                in_a[i] = !in_a[i];
                size_a = if in_a[i] { size_a + 1 } else { size_a - 1 };
            }
            None => break,
        }
    }
}

/// Reassign disconnected fragments: each side keeps only its largest
/// component (lowest-index tiebreak); every other fragment joins the opposite
/// side, whose connectivity it necessarily touches.
fn repair_connectivity(adj: &[Vec<usize>], in_a: &mut [bool]) {
    for side in [true, false] {
        let comps = side_components(adj, in_a, side);
        if comps.len() <= 1 {
            continue;
        }
        let keep = comps
            .iter()
            .enumerate()
            .max_by(|(i, x), (j, y)| x.len().cmp(&y.len()).then(j.cmp(i)))
            .map(|(i, _)| i)
            .unwrap();
        for (ci, comp) in comps.iter().enumerate() {
            if ci == keep {
                continue;
            }
            for &node in comp {
                in_a[node] = !side;
            }
        }
    }
}

fn side_components(adj: &[Vec<usize>], in_a: &[bool], side: bool) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for start in 0..n {
        if seen[start] || in_a[start] != side {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            for &j in &adj[i] {
                if !seen[j] && in_a[j] == side {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

fn subset_connected(graph: &ElementGraph, members: &[usize]) -> bool {
    if members.is_empty() {
        return false;
    }
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    let local = |node: usize| sorted.binary_search(&node).ok();
    let mut seen = vec![false; sorted.len()];
    let mut queue = std::collections::VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1usize;
    while let Some(i) = queue.pop_front() {
        for &nb in &graph.adjacency[sorted[i]] {
            if let Some(j) = local(nb) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
    }
    count == sorted.len()
}

/// Build the nested hierarchy by top-down recursive `2^d`-way splitting;
/// aggregates of at most `2^d` elements split into singletons, and the
/// recursion stops once everything is a singleton.
pub fn build_hierarchy(graph: &ElementGraph, d: usize) -> Result<AggregateHierarchy> {
    if !(1..=3).contains(&d) {
        return Err(Error::InvalidArgument(format!("d must be 1, 2 or 3, got {d}")));
    }
    if !graph.is_connected() {
        return Err(Error::InvalidArgument(
            "build_hierarchy requires a connected graph".into(),
        ));
    }
    let n = graph.n_elements();
    let arity = 1usize << d;

    // generations of aggregates, coarsest first; each generation is a list of
    // member sets in aggregate-id order (parent-major by construction)
    let mut generations: Vec<Vec<Vec<usize>>> = Vec::new();
    let mut groups: Vec<Vec<usize>> = vec![(0..n).collect()];
    while groups.iter().any(|g| g.len() > 1) {
        let mut next: Vec<Vec<usize>> = Vec::new();
        for g in &groups {
            if g.len() <= arity {
                // fewer than 2^d elements: split into singletons
                let mut sorted = g.clone();
                sorted.sort_unstable();
                for node in sorted {
                    next.push(vec![node]);
                }
            } else {
                let labels = kway_split(graph, g, arity)?;
                let mut parts: Vec<Vec<usize>> = vec![Vec::new(); arity];
                for (&node, &l) in g.iter().zip(&labels) {
                    parts[l].push(node);
                }
                for mut p in parts {
                    if !p.is_empty() {
                        p.sort_unstable();
                        next.push(p);
                    }
                }
            }
        }
        generations.push(next.clone());
        groups = next;
    }

    // translate generations (coarsest-first member lists) into finest-first
    // label maps; level 0 is the identity
    let mut levels: Vec<Vec<usize>> = Vec::with_capacity(generations.len().max(1));
    let mut counts: Vec<usize> = Vec::new();
    levels.push((0..n).collect());
    counts.push(n);
    for gen in generations.iter().rev().skip(1) {
        let mut labels = vec![0usize; n];
        for (agg, members) in gen.iter().enumerate() {
            for &e in members {
                labels[e] = agg;
            }
        }
        counts.push(gen.len());
        levels.push(labels);
    }
    Ok(AggregateHierarchy { d, counts, levels })
}

/// Collapse a labeled graph: one node per aggregate, an edge wherever any two
/// member elements are adjacent, dof counts summed.
pub fn aggregate_graph(graph: &ElementGraph, labels: &[usize], n_aggregates: usize) -> ElementGraph {
    assert_eq!(labels.len(), graph.n_elements(), "labels per element");
    let mut dof_counts = vec![0usize; n_aggregates];
    for (e, &a) in labels.iter().enumerate() {
        dof_counts[a] += graph.dof_counts[e];
    }
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n_aggregates];
    for e in 0..graph.n_elements() {
        for &nb in &graph.adjacency[e] {
            let (a, b) = (labels[e], labels[nb]);
            if a != b {
                adjacency[a].push(b);
            }
        }
    }
    for list in adjacency.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    ElementGraph {
        adjacency,
        dof_counts,
    }
}
