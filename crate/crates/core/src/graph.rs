//! Areal adjacency graphs and the scaled CAR precision `c(D_W − αW)`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{param, Error, Result};
use crate::linalg::{cholesky_spd, spd_inverse};

/// Undirected, connected adjacency graph with lexicographically ordered labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    labels: Vec<String>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

/// Outcome of parsing an edge list.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: AdjacencyGraph,
    /// Rows that repeated an already seen edge (in either orientation).
    pub duplicate_rows: usize,
}

impl AdjacencyGraph {
    /// Builds a graph from labels and index pairs. Labels are re-sorted, so
    /// the resulting indices may differ from the input ones.
    pub fn from_edges(labels: Vec<String>, pairs: &[(usize, usize)]) -> Result<Self> {
        let named: Vec<(String, String)> = pairs
            .iter()
            .map(|&(i, j)| {
                let get = |k: usize| {
                    labels
                        .get(k)
                        .cloned()
                        .ok_or_else(|| param(format!("edge index {k} out of range for {} labels", labels.len())))
                };
                Ok((get(i)?, get(j)?))
            })
            .collect::<Result<_>>()?;
        let mut all: BTreeSet<String> = labels.into_iter().collect();
        for (a, b) in &named {
            all.insert(a.clone());
            all.insert(b.clone());
        }
        let (graph, _) = Self::assemble(all, named.into_iter().enumerate().map(|(r, (a, b))| (r + 1, a, b)))?;
        Ok(graph)
    }

    fn assemble(
        labels: BTreeSet<String>,
        rows: impl Iterator<Item = (usize, String, String)>,
    ) -> Result<(Self, usize)> {
        let labels: Vec<String> = labels.into_iter().collect();
        let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut edge_set = BTreeSet::new();
        let mut duplicates = 0;
        for (row, a, b) in rows {
            if a.is_empty() || b.is_empty() {
                return Err(Error::AdjacencyRow { row, message: "blank region label".into() });
            }
            if a == b {
                return Err(Error::SelfEdge { label: a, row });
            }
            let (i, j) = (index[a.as_str()], index[b.as_str()]);
            if !edge_set.insert((i.min(j), i.max(j))) {
                duplicates += 1;
            }
        }
        if labels.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let edges: Vec<(usize, usize)> = edge_set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); labels.len()];
        for &(i, j) in &edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        let graph = Self { labels, edges, neighbors };
        graph.check_connected()?;
        Ok((graph, duplicates))
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.n();
        let mut component = vec![usize::MAX; n];
        let mut representatives = Vec::new();
        for start in 0..n {
            if component[start] != usize::MAX {
                continue;
            }
            let id = representatives.len();
            representatives.push(self.labels[start].clone());
            component[start] = id;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &self.neighbors[v] {
                    if component[w] == usize::MAX {
                        component[w] = id;
                        queue.push_back(w);
                    }
                }
            }
        }
        if representatives.len() > 1 {
            return Err(Error::Disconnected { components: representatives.len(), representatives });
        }
        Ok(())
    }

    /// Number of regions.
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Edges `(i, j)` with `i < j`, sorted lexicographically.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    /// Dense 0/1 adjacency matrix `W`.
    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut w = DMatrix::zeros(n, n);
        for &(i, j) in &self.edges {
            w[(i, j)] = 1.0;
            w[(j, i)] = 1.0;
        }
        w
    }

    /// `D_W − αW`.
    pub fn car_kernel(&self, alpha: f64) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.degree(i) as f64;
        }
        for &(i, j) in &self.edges {
            m[(i, j)] = -alpha;
            m[(j, i)] = -alpha;
        }
        m
    }
}

/// Rook-adjacency lattice with `rows × cols` cells labelled `rRRcCC`
/// (zero padded so that lexicographic order is row-major order).
pub fn lattice(rows: usize, cols: usize) -> Result<AdjacencyGraph> {
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyGraph);
    }
    let wr = rows.to_string().len();
    let wc = cols.to_string().len();
    let label = |r: usize, c: usize| format!("r{r:0wr$}c{c:0wc$}");
    let mut labels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            labels.push(label(r, c));
        }
    }
    let mut pairs = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            if c + 1 < cols {
                pairs.push((k, k + 1));
            }
            if r + 1 < rows {
                pairs.push((k, k + cols));
            }
        }
    }
    AdjacencyGraph::from_edges(labels, &pairs)
}

/// Parses a headerless two-column edge list.
pub fn load_adjacency_reader<R: Read>(reader: R) -> Result<LoadedGraph> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut labels = BTreeSet::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| Error::AdjacencyRow { row, message: e.to_string() })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::AdjacencyRow {
                row,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let (a, b) = (record[0].to_string(), record[1].to_string());
        if a.is_empty() || b.is_empty() {
            return Err(Error::AdjacencyRow { row, message: "blank region label".into() });
        }
        labels.insert(a.clone());
        labels.insert(b.clone());
        rows.push((row, a, b));
    }
    let (graph, duplicate_rows) = AdjacencyGraph::assemble(labels, rows.into_iter())?;
    if duplicate_rows > 0 {
        log::warn!("adjacency list: ignored {duplicate_rows} duplicate edge rows");
    }
    Ok(LoadedGraph { graph, duplicate_rows })
}

/// Loads an edge-list file.
pub fn load_adjacency(path: impl AsRef<Path>) -> Result<LoadedGraph> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    load_adjacency_reader(std::io::BufReader::new(file))
}

/// Scaled CAR precision `V_φ⁻¹ = c(D_W − αW)`.
#[derive(Debug, Clone)]
pub struct CarStructure {
    pub alpha: f64,
    pub c: f64,
    pub precision: DMatrix<f64>,
}

impl CarStructure {
    pub fn n(&self) -> usize {
        self.precision.nrows()
    }

    /// Prior covariance `V_φ`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.precision)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(param(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

pub fn build_car_precision(g: &AdjacencyGraph, alpha: f64, c: f64) -> Result<CarStructure> {
    check_alpha(alpha)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(param(format!("scaling factor must be positive, got {c}")));
    }
    let precision = g.car_kernel(alpha) * c;
    cholesky_spd(&precision)?;
    Ok(CarStructure { alpha, c, precision })
}

/// Geometric mean of the diagonal of `(D_W − αW)⁻¹`.
pub fn compute_scaling_factor(g: &AdjacencyGraph, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let inv = spd_inverse(&g.car_kernel(alpha))?;
    let n = inv.nrows();
    let mean_log = (0..n).map(|i| inv[(i, i)].ln()).sum::<f64>() / n as f64;
    Ok(mean_log.exp())
}

/// Neighbouring pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn neighbor_pairs(g: &AdjacencyGraph) -> Vec<(usize, usize)> {
    g.edges.clone()
}
