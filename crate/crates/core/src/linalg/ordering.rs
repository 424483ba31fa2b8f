use std::collections::VecDeque;

/// Reverse Cuthill-McKee ordering of an undirected graph given as adjacency
/// lists. Returns `order` with `order[k]` = node placed at position `k`.
/// Ties are broken by node index so the result is deterministic.
pub fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited node exists");
        let start = peripheral_node(adj, &degree, seed);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            next.dedup();
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Pseudo-peripheral node search (George-Liu) restricted to `seed`'s component.
fn peripheral_node(adj: &[Vec<usize>], degree: &[usize], seed: usize) -> usize {
    let mut root = seed;
    let mut ecc = 0;
    for _ in 0..adj.len().max(1) {
        let levels = bfs_levels(adj, root);
        let depth = levels.iter().filter_map(|l| *l).max().unwrap_or(0);
        if depth <= ecc && ecc > 0 {
            break;
        }
        ecc = depth;
        let candidate = (0..adj.len())
            .filter(|&i| levels[i] == Some(depth))
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(root);
        if candidate == root {
            break;
        }
        root = candidate;
    }
    root
}

fn bfs_levels(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap_or(0);
        for &w in &adj[u] {
            if level[w].is_none() {
                level[w] = Some(lu + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bandwidth(adj: &[Vec<usize>], order: &[usize]) -> usize {
        let mut pos = vec![0; order.len()];
        for (k, &u) in order.iter().enumerate() {
            pos[u] = k;
        }
        adj.iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().map(move |&w| (u, w)))
            .map(|(u, w)| pos[u].abs_diff(pos[w]))
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn path_graph_in_scrambled_labels_gets_bandwidth_one() {
        // path 0-5-2-7-1-4-6-3
        let path = [0usize, 5, 2, 7, 1, 4, 6, 3];
        let mut adj = vec![Vec::new(); 8];
        for w in path.windows(2) {
            adj[w[0]].push(w[1]);
            adj[w[1]].push(w[0]);
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        assert_eq!(bandwidth(&adj, &order), 1);
    }

    #[test]
    fn handles_disconnected_components() {
        let adj = vec![vec![1], vec![0], vec![], vec![4], vec![3]];
        let order = reverse_cuthill_mckee(&adj);
        assert_eq!(order.len(), 5);
        assert!(bandwidth(&adj, &order) <= 1);
    }
}
