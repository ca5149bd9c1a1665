//! Graph container and the Laplacian-family operators built from it.

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// A node-classification graph. Edges are stored once per undirected pair,
/// as `(u, v)` with `u < v`, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub n_nodes: usize,
    pub n_classes: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

impl GraphDataset {
    /// Symmetrizes `edges`, drops self-loops and checks every invariant of
    /// the container.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        n_nodes: usize,
        n_classes: usize,
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Vec<usize>,
        train_mask: Vec<bool>,
        val_mask: Vec<bool>,
        test_mask: Vec<bool>,
    ) -> Result<Self> {
        let mut edges = symmetrize(edges, n_nodes)?;
        edges.retain(|&(u, v)| u != v);

        if features.rows() != n_nodes {
            return Err(Error::Consistency(format!(
                "{} feature rows for {n_nodes} nodes",
                features.rows()
            )));
        }
        for (what, len) in [
            ("labels", labels.len()),
            ("train mask", train_mask.len()),
            ("val mask", val_mask.len()),
            ("test mask", test_mask.len()),
        ] {
            if len != n_nodes {
                return Err(Error::Consistency(format!(
                    "{len} {what} entries for {n_nodes} nodes"
                )));
            }
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(Error::Validation(format!(
                "node {i} has label {y}, expected < {n_classes}"
            )));
        }
        for i in 0..n_nodes {
            let hits = [train_mask[i], val_mask[i], test_mask[i]]
                .iter()
                .filter(|&&m| m)
                .count();
            if hits > 1 {
                return Err(Error::Validation(format!(
                    "node {i} belongs to more than one split"
                )));
            }
        }

        Ok(GraphDataset {
            name: name.into(),
            n_nodes,
            n_classes,
            edges,
            features,
            labels,
            train_mask,
            val_mask,
            test_mask,
        })
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    /// Number of neighbors of every node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Symmetric 0/1 adjacency matrix.
    pub fn adjacency(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.n_nodes,
            self.n_nodes,
            self.edges
                .iter()
                .flat_map(|&(u, v)| [(u, v, 1.0), (v, u, 1.0)]),
        )
        .expect("edges were validated against n_nodes")
    }

    /// Node-index connected-component id of every node.
    pub fn components(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n_nodes).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(u, v) in &self.edges {
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut ids = vec![usize::MAX; self.n_nodes];
        let mut next = 0;
        (0..self.n_nodes)
            .map(|i| {
                let root = find(&mut parent, i);
                if ids[root] == usize::MAX {
                    ids[root] = next;
                    next += 1;
                }
                ids[root]
            })
            .collect()
    }

    /// Copy with nodes relabeled so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<GraphDataset> {
        if perm.len() != self.n_nodes {
            return Err(Error::shape(
                "permuted",
                format!("{} entries for {} nodes", perm.len(), self.n_nodes),
            ));
        }
        let mut seen = vec![false; self.n_nodes];
        for &p in perm {
            if p >= self.n_nodes || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Parameter("not a permutation".into()));
            }
        }
        let mut features = Matrix::zeros(self.n_nodes, self.n_features());
        let mut labels = vec![0; self.n_nodes];
        let mut masks = [
            vec![false; self.n_nodes],
            vec![false; self.n_nodes],
            vec![false; self.n_nodes],
        ];
        for (old, &new) in perm.iter().enumerate() {
            features.row_mut(new).copy_from_slice(self.features.row(old));
            labels[new] = self.labels[old];
            masks[0][new] = self.train_mask[old];
            masks[1][new] = self.val_mask[old];
            masks[2][new] = self.test_mask[old];
        }
        let edges: Vec<_> = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let [train, val, test] = masks;
        GraphDataset::new(
            self.name.clone(),
            self.n_nodes,
            self.n_classes,
            &edges,
            features,
            labels,
            train,
            val,
            test,
        )
    }
}

/// Canonical undirected edge list: every pair as `(min, max)`, sorted and
/// deduplicated.
pub fn symmetrize(edges: &[(usize, usize)], n: usize) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    for &(u, v) in edges {
        for w in [u, v] {
            if w >= n {
                return Err(Error::Index { index: w, bound: n });
            }
        }
        out.push((u.min(v), u.max(v)));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Which adjacency the Laplacian is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjacency {
    /// `A` as given.
    #[default]
    Plain,
    /// `A + I` (the renormalization trick).
    SelfLoops,
}

/// `L = I − D^{-1/2} A D^{-1/2}`. Degree-zero nodes keep `L_ii = 1` and an
/// otherwise empty row.
pub fn normalized_laplacian(data: &GraphDataset) -> SparseMatrix {
    laplacian_with(data, Adjacency::Plain)
}

pub fn laplacian_with(data: &GraphDataset, adjacency: Adjacency) -> SparseMatrix {
    let n = data.n_nodes;
    let loops = matches!(adjacency, Adjacency::SelfLoops);
    let inv_sqrt: Vec<f64> = data
        .degrees()
        .into_iter()
        .map(|d| {
            let d = d + usize::from(loops);
            if d == 0 {
                0.0
            } else {
                1.0 / (d as f64).sqrt()
            }
        })
        .collect();
    let off_diagonal = data.edges.iter().flat_map(|&(u, v)| {
        let w = -(inv_sqrt[u] * inv_sqrt[v]);
        [(u, v, w), (v, u, w)]
    });
    let diagonal = (0..n).map(|i| {
        let own = if loops { inv_sqrt[i] * inv_sqrt[i] } else { 0.0 };
        (i, i, 1.0 - own)
    });
    SparseMatrix::from_triplets(n, n, off_diagonal.chain(diagonal))
        .expect("edges were validated against n_nodes")
}

/// `S = I − L`.
pub fn propagation_operator(laplacian: &SparseMatrix) -> Result<SparseMatrix> {
    laplacian.identity_minus()
}
