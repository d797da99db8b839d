use std::collections::BTreeSet;

/// Reference d-separation by enumerating every simple trail.
pub struct Oracle {
    n: usize,
    adj: Vec<Vec<bool>>,
    desc: Vec<Vec<bool>>,
}

impl Oracle {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![vec![false; n]; n];
        for &(a, b) in edges {
            adj[a][b] = true;
        }
        let mut desc = adj.clone();
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if desc[i][k] && desc[k][j] {
                        desc[i][j] = true;
                    }
                }
            }
        }
        Self { n, adj, desc }
    }

    fn open(&self, path: &[usize], z: &BTreeSet<usize>) -> bool {
        for w in path.windows(3) {
            let (a, v, b) = (w[0], w[1], w[2]);
            let collider = self.adj[a][v] && self.adj[b][v];
            if collider {
                let active = z.contains(&v) || z.iter().any(|&t| self.desc[v][t]);
                if !active {
                    return false;
                }
            } else if z.contains(&v) {
                return false;
            }
        }
        true
    }

    fn search(&self, path: &mut Vec<usize>, b: &BTreeSet<usize>, z: &BTreeSet<usize>) -> bool {
        let last = *path.last().unwrap();
        if path.len() > 1 && b.contains(&last) {
            return self.open(path, z);
        }
        for next in 0..self.n {
            if (self.adj[last][next] || self.adj[next][last]) && !path.contains(&next) {
                path.push(next);
                let found = self.search(path, b, z);
                path.pop();
                if found {
                    return true;
                }
            }
        }
        false
    }

    pub fn d_separated(&self, a: &BTreeSet<usize>, b: &BTreeSet<usize>, z: &BTreeSet<usize>) -> bool {
        !a.iter().any(|&s| self.search(&mut vec![s], b, z))
    }
}

/// Edge lists of every DAG on `n` vertices whose edges follow the vertex order.
pub fn all_dags(n: usize) -> impl Iterator<Item = Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    (0u32..1 << pairs.len()).map(move |mask| {
        pairs
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &p)| p)
            .collect()
    })
}
