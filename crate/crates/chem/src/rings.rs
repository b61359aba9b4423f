//! Ring membership of bonds. A bond lies on a cycle exactly when removing it
//! does not disconnect its endpoints, i.e. when it is not a bridge.

/// Flags each edge of an undirected simple graph that is a bridge.
pub fn bridges(num_nodes: usize, edges: &[(usize, usize)]) -> Vec<bool> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_nodes];
    for (e, &(u, v)) in edges.iter().enumerate() {
        adj[u].push((v, e));
        adj[v].push((u, e));
    }
    let mut disc = vec![usize::MAX; num_nodes];
    let mut low = vec![0; num_nodes];
    let mut is_bridge = vec![false; edges.len()];
    let mut timer = 0;

    // Iterative DFS: (node, edge used to enter it, next adjacency slot).
    for root in 0..num_nodes {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        while let Some(&mut (node, parent_edge, ref mut slot)) = stack.last_mut() {
            if *slot < adj[node].len() {
                let (next, e) = adj[node][*slot];
                *slot += 1;
                if e == parent_edge {
                    continue;
                }
                if disc[next] == usize::MAX {
                    disc[next] = timer;
                    low[next] = timer;
                    timer += 1;
                    stack.push((next, e, 0));
                } else {
                    low[node] = low[node].min(disc[next]);
                }
            } else {
                stack.pop();
                if let Some(&(parent, _, _)) = stack.last() {
                    low[parent] = low[parent].min(low[node]);
                    if low[node] > disc[parent] {
                        is_bridge[parent_edge] = true;
                    }
                }
            }
        }
    }
    is_bridge
}
