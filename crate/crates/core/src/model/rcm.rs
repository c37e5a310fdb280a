use std::collections::VecDeque;

use super::Topology;

fn neighbours(t: &Topology) -> Vec<Vec<usize>> {
    let k = t.size();
    (0..k)
        .map(|i| (0..k).filter(|&j| j != i && (t.get(i, j) || t.get(j, i))).collect())
        .collect()
}

/// BFS levels from `start`, restricted to unvisited nodes.
fn level_structure(adj: &[Vec<usize>], start: usize, done: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = done.to_vec();
    seen[start] = true;
    let mut levels = vec![vec![start]];
    loop {
        let mut next = Vec::new();
        for &u in levels.last().unwrap() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

/// George-Liu pseudo-peripheral node search.
fn peripheral(adj: &[Vec<usize>], start: usize, done: &[bool]) -> usize {
    let mut node = start;
    let mut depth = level_structure(adj, node, done).len();
    loop {
        let levels = level_structure(adj, node, done);
        let last = levels.last().unwrap();
        let candidate = *last
            .iter()
            .min_by_key(|&&v| (adj[v].len(), v))
            .unwrap();
        let d = level_structure(adj, candidate, done).len();
        if d <= depth {
            return node;
        }
        node = candidate;
        depth = d;
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized topology. Connected
/// components are ordered by their smallest member, so the identity
/// topology yields the identity permutation.
pub fn rcm_order(topology: &Topology) -> Vec<usize> {
    let k = topology.size();
    let adj = neighbours(topology);
    let mut done = vec![false; k];
    let mut order = Vec::with_capacity(k);
    for root in 0..k {
        if done[root] {
            continue;
        }
        let start = peripheral(&adj, root, &done);
        let mut component = Vec::new();
        let mut queue = VecDeque::from([start]);
        done[start] = true;
        while let Some(u) = queue.pop_front() {
            component.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&v| !done[v]).collect();
            next.sort_by_key(|&v| (adj[v].len(), v));
            for v in next {
                done[v] = true;
                queue.push_back(v);
            }
        }
        component.reverse();
        order.extend(component);
    }
    order
}

/// Bandwidth of the symmetrized topology after reordering by `perm`.
pub fn bandwidth(topology: &Topology, perm: &[usize]) -> usize {
    let k = topology.size();
    let mut pos = vec![0; k];
    for (p, &i) in perm.iter().enumerate() {
        pos[i] = p;
    }
    let mut bw = 0;
    for i in 0..k {
        for j in 0..k {
            if i != j && topology.get(i, j) {
                bw = bw.max(pos[i].abs_diff(pos[j]));
            }
        }
    }
    bw
}
