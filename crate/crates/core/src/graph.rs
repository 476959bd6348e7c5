//! Weighted directed communication graphs and their Laplacians.
//!
//! Convention: `a[(i, j)] > 0` means node `i` receives information from
//! node `j`, i.e. an edge `j -> i` with that weight. Indices are 0-based in
//! the Rust API and 1-based in the text edge-list format.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, Schur, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("eigensolver did not converge on a {0}x{0} Laplacian")]
    EigenNoConvergence(usize),
    #[error("edge list parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A weighted digraph stored as its dense adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    weights: DMatrix<f64>,
}

impl WeightedDigraph {
    /// Validates nonnegative finite weights and a zero diagonal.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        if weights.nrows() == 0 || weights.nrows() != weights.ncols() {
            return Err(GraphError::Argument(format!(
                "adjacency matrix must be square and nonempty, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        for i in 0..weights.nrows() {
            for j in 0..weights.ncols() {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(GraphError::Argument(format!(
                        "weight a[{i}][{j}] = {w} must be finite and nonnegative"
                    )));
                }
                if i == j && w != 0.0 {
                    return Err(GraphError::Argument(format!("self-loop at node {i}")));
                }
            }
        }
        Ok(Self { weights })
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Result<Self, GraphError> {
        Self::from_weights(DMatrix::zeros(n, n))
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Weight of the edge `from -> to` (0 when absent).
    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[(to, from)]
    }

    pub fn is_symmetric(&self) -> bool {
        self.weights == self.weights.transpose()
    }

    /// Edges as `(from, to, weight)`, 0-based, in row-major order of the receiver.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for to in 0..n {
            for from in 0..n {
                let w = self.weights[(to, from)];
                if w > 0.0 {
                    out.push((from, to, w));
                }
            }
        }
        out
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.n_nodes();
        check_permutation(perm, n)?;
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                w[(perm[i], perm[j])] = self.weights[(i, j)];
            }
        }
        Ok(Self { weights: w })
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<(), GraphError> {
    if perm.len() != n {
        return Err(GraphError::Argument(format!(
            "permutation has length {}, expected {n}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(GraphError::Argument("not a permutation".into()));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Graph Laplacian `L = D - A`; every row sums to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    entries: DMatrix<f64>,
}

impl LaplacianMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n_nodes(&self) -> usize {
        self.entries.nrows()
    }

    /// Nonzero entries per row as `(column, value)`, diagonal included.
    pub fn sparse_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let n = self.n_nodes();
        (0..n)
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let v = self.entries[(i, j)];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect()
    }

    /// All eigenvalues as `(re, im)` sorted by real part, then imaginary part.
    pub fn eigenvalues(&self) -> Result<Vec<(f64, f64)>, GraphError> {
        let n = self.n_nodes();
        let mut eig: Vec<(f64, f64)> = if self.entries == self.entries.transpose() {
            SymmetricEigen::try_new(self.entries.clone(), f64::EPSILON, 10_000)
                .ok_or(GraphError::EigenNoConvergence(n))?
                .eigenvalues
                .iter()
                .map(|&v| (v, 0.0))
                .collect()
        } else {
            // block-triangular after grouping strongly connected components
            let mut eig = Vec::with_capacity(n);
            for comp in strong_components(&self.entries) {
                if comp.len() == 1 {
                    eig.push((self.entries[(comp[0], comp[0])], 0.0));
                    continue;
                }
                let block = DMatrix::from_fn(comp.len(), comp.len(), |r, c| {
                    self.entries[(comp[r], comp[c])]
                });
                let schur = Schur::try_new(block, f64::EPSILON, 10_000)
                    .ok_or(GraphError::EigenNoConvergence(n))?;
                eig.extend(schur.complex_eigenvalues().iter().map(|c| (c.re, c.im)));
            }
            eig
        };
        eig.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Ok(eig)
    }
}

/// Strongly connected components of the nonzero pattern of `m`.
fn strong_components(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let reach: Vec<Vec<bool>> = (0..n)
        .map(|start| {
            let mut seen = vec![false; n];
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for v in 0..n {
                    if !seen[v] && m[(u, v)] != 0.0 {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen
        })
        .collect();
    let mut assigned = vec![false; n];
    let mut comps = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let comp: Vec<usize> = (i..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &comp {
            assigned[j] = true;
        }
        comps.push(comp);
    }
    comps
}

pub fn laplacian(g: &WeightedDigraph) -> LaplacianMatrix {
    let n = g.n_nodes();
    let a = g.weights();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut degree = 0.0;
        for j in 0..n {
            if i != j {
                degree += a[(i, j)];
                l[(i, j)] = -a[(i, j)];
            }
        }
        l[(i, i)] = degree;
    }
    LaplacianMatrix { entries: l }
}

/// Nodes reachable from `root` following edge directions.
fn reachable_from(g: &WeightedDigraph, root: usize) -> Vec<bool> {
    let n = g.n_nodes();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if !seen[v] && g.weights[(v, u)] > 0.0 {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Smallest-index node that reaches every other node, if any.
pub fn spanning_tree_root(g: &WeightedDigraph) -> Option<usize> {
    (0..g.n_nodes()).find(|&r| reachable_from(g, r).into_iter().all(|s| s))
}

pub fn has_directed_spanning_tree(g: &WeightedDigraph) -> bool {
    spanning_tree_root(g).is_some()
}

/// Real part of the Laplacian eigenvalue with the second-smallest real part.
pub fn algebraic_connectivity(g: &WeightedDigraph) -> Result<f64, GraphError> {
    if g.n_nodes() < 2 {
        return Err(GraphError::Argument(
            "algebraic connectivity needs at least 2 nodes".into(),
        ));
    }
    Ok(laplacian(g).eigenvalues()?[1].0)
}

/// Vicsek fractal tree of the given generation with unit weights.
///
/// Generation 1 is a star: the center plus four arms. Generation `g` places
/// five copies of generation `g - 1` in a plus shape. For `g = 2` each outer
/// copy is joined to the central copy by one edge between the facing arm
/// tips (25 nodes). From `g = 3` on the facing arm tips coincide and are
/// merged into a single node (121 nodes for `g = 3`).
///
/// Node 0 is always the global center. The directed variant orients every
/// edge away from the center, so node 0 is the spanning-tree root.
pub fn vicsek_fractal(generation: u32, directed: bool) -> Result<WeightedDigraph, GraphError> {
    if generation == 0 {
        return Err(GraphError::Argument(
            "Vicsek generation must be >= 1".into(),
        ));
    }
    if generation > 6 {
        return Err(GraphError::Argument(format!(
            "Vicsek generation {generation} is too large for dense storage"
        )));
    }
    const ARMS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

    let mut nodes: Vec<(i64, i64)> = vec![(0, 0)];
    nodes.extend(ARMS);
    let mut edges: Vec<(usize, usize)> = (1..5).map(|k| (0, k)).collect();
    // distance from the center to an arm tip
    let mut reach: i64 = 1;

    for gen in 2..=generation {
        let merge = gen >= 3;
        let shift = if merge { 2 * reach } else { 2 * reach + 1 };
        let mut index: HashMap<(i64, i64), usize> = HashMap::new();
        let mut new_nodes = Vec::new();
        let mut new_edges = Vec::new();
        let offsets =
            std::iter::once((0, 0)).chain(ARMS.iter().map(|&(x, y)| (x * shift, y * shift)));
        for (ox, oy) in offsets {
            let local: Vec<usize> = nodes
                .iter()
                .map(|&(x, y)| {
                    let p = (x + ox, y + oy);
                    *index.entry(p).or_insert_with(|| {
                        new_nodes.push(p);
                        new_nodes.len() - 1
                    })
                })
                .collect();
            new_edges.extend(edges.iter().map(|&(a, b)| (local[a], local[b])));
        }
        if !merge {
            for &(dx, dy) in &ARMS {
                let inner = index[&(dx * reach, dy * reach)];
                let outer = index[&(dx * (shift - reach), dy * (shift - reach))];
                new_edges.push((inner, outer));
            }
        }
        nodes = new_nodes;
        edges = new_edges;
        reach += shift;
    }

    let n = nodes.len();
    let mut w = DMatrix::zeros(n, n);
    if directed {
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for &v in &neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    w[(v, u)] = 1.0;
                    queue.push_back(v);
                }
            }
        }
    } else {
        for &(a, b) in &edges {
            w[(a, b)] = 1.0;
            w[(b, a)] = 1.0;
        }
    }
    WeightedDigraph::from_weights(w)
}

/// Circulant graph: node `i` receives an edge from `(i + k) mod n` for every offset `k`.
pub fn circulant(
    n: usize,
    offsets: &[usize],
    directed: bool,
) -> Result<WeightedDigraph, GraphError> {
    if n < 2 {
        return Err(GraphError::Argument(format!(
            "circulant graph needs n >= 2, got {n}"
        )));
    }
    if offsets.is_empty() {
        return Err(GraphError::Argument("circulant offset set is empty".into()));
    }
    if let Some(&k) = offsets.iter().find(|&&k| k == 0 || k >= n) {
        return Err(GraphError::Argument(format!(
            "circulant offset {k} outside [1, {}]",
            n - 1
        )));
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for &k in offsets {
            let j = (i + k) % n;
            w[(i, j)] = 1.0;
            if !directed {
                w[(j, i)] = 1.0;
            }
        }
    }
    WeightedDigraph::from_weights(w)
}

/// Builds a graph from 1-based `(from, to, weight)` triples; later duplicates win.
pub fn from_edge_list(
    n: usize,
    edges: &[(usize, usize, f64)],
) -> Result<WeightedDigraph, GraphError> {
    if n == 0 {
        return Err(GraphError::Argument("graph needs at least one node".into()));
    }
    let mut w = DMatrix::zeros(n, n);
    for &(from, to, weight) in edges {
        if from == 0 || from > n || to == 0 || to > n {
            return Err(GraphError::Argument(format!(
                "edge ({from}, {to}) has a node index outside [1, {n}]"
            )));
        }
        if from == to {
            return Err(GraphError::Argument(format!("self-loop at node {from}")));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(GraphError::Argument(format!(
                "edge ({from}, {to}) weight {weight} must be positive"
            )));
        }
        w[(to - 1, from - 1)] = weight;
    }
    WeightedDigraph::from_weights(w)
}

/// Parses the text edge-list format: `#` comments, a `nodes N` header, then
/// one `from to [weight]` line per edge with 1-based indices; weights default to 1.
pub fn parse_edge_list(text: &str) -> Result<WeightedDigraph, GraphError> {
    let mut n: Option<usize> = None;
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| GraphError::Parse {
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        match n {
            None => {
                if fields.len() != 2 || fields[0] != "nodes" {
                    return Err(err(format!("expected `nodes N`, found `{line}`")));
                }
                n = Some(
                    fields[1]
                        .parse()
                        .map_err(|e| err(format!("bad node count: {e}")))?,
                );
            }
            Some(_) => {
                if !(2..=3).contains(&fields.len()) {
                    return Err(err(format!("expected `from to [weight]`, found `{line}`")));
                }
                let from: usize = fields[0]
                    .parse()
                    .map_err(|e| err(format!("bad index: {e}")))?;
                let to: usize = fields[1]
                    .parse()
                    .map_err(|e| err(format!("bad index: {e}")))?;
                let weight: f64 = match fields.get(2) {
                    Some(w) => w.parse().map_err(|e| err(format!("bad weight: {e}")))?,
                    None => 1.0,
                };
                edges.push((from, to, weight));
            }
        }
    }
    let n = n.ok_or(GraphError::Parse {
        line: 0,
        msg: "missing `nodes N` header".into(),
    })?;
    from_edge_list(n, &edges)
}

pub fn write_edge_list(g: &WeightedDigraph) -> String {
    let mut out = format!("nodes {}\n", g.n_nodes());
    for (from, to, w) in g.edges() {
        let _ = writeln!(out, "{} {} {}", from + 1, to + 1, w);
    }
    out
}
