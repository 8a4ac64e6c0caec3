//! Undirected areal graphs, lattice construction and CAR precision matrices.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Undirected simple graph over `n` areal units.
#[derive(Clone, Debug)]
pub struct ArealGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    adjacency: DMatrix<f64>,
    degrees: Vec<f64>,
    lattice: Option<(usize, usize)>,
}

impl ArealGraph {
    /// Build from an edge list. Pairs are normalized to `i < j`; self loops and duplicates are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adjacency = DMatrix::zeros(n, n);
        let mut neighbors = vec![Vec::new(); n];
        let mut norm = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a}, {b}) out of range for n = {n}")));
            }
            if a == b {
                return Err(Error::invalid(format!("self loop at vertex {a}")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if adjacency[(i, j)] != 0.0 {
                return Err(Error::invalid(format!("duplicate edge ({i}, {j})")));
            }
            adjacency[(i, j)] = 1.0;
            adjacency[(j, i)] = 1.0;
            neighbors[i].push(j);
            neighbors[j].push(i);
            norm.push((i, j));
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        let degrees = neighbors.iter().map(|v| v.len() as f64).collect();
        Ok(Self {
            n,
            edges: norm,
            neighbors,
            adjacency,
            degrees,
            lattice: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// `1'A1`, twice the edge count.
    pub fn total_weight(&self) -> f64 {
        2.0 * self.edges.len() as f64
    }

    /// `(rows, cols)` when the graph was built as a lattice.
    pub fn lattice_shape(&self) -> Option<(usize, usize)> {
        self.lattice
    }

    /// Largest `|i - j|` over the edges.
    pub fn bandwidth(&self) -> usize {
        self.edges.iter().map(|&(i, j)| j - i).max().unwrap_or(0)
    }

    /// `A v` using the neighbor lists.
    pub fn adjacency_mul(&self, v: &[f64]) -> Vec<f64> {
        self.neighbors
            .iter()
            .map(|nb| nb.iter().map(|&j| v[j]).sum())
            .collect()
    }

    /// Apply a vertex relabeling: vertex `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::dim("permutation length differs from vertex count"));
        }
        let edges: Vec<_> = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        Self::from_edges(self.n, &edges)
    }

    pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::parse_edge_list(std::io::BufReader::new(file))
    }

    /// Parse the `n=<count>` header followed by one 0-based `i j` pair per line.
    pub fn parse_edge_list(reader: impl BufRead) -> Result<Self> {
        let mut n = None;
        let mut edges = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if n.is_none() {
                let count = t
                    .strip_prefix("n=")
                    .ok_or_else(|| Error::Parse(format!("line {}: expected header n=<count>", lineno + 1)))?;
                n = Some(
                    count
                        .trim()
                        .parse::<usize>()
                        .map_err(|e| Error::Parse(format!("bad vertex count: {e}")))?,
                );
                continue;
            }
            let mut it = t.split_whitespace();
            let mut next = || -> Result<usize> {
                it.next()
                    .ok_or_else(|| Error::Parse(format!("line {}: expected `i j`", lineno + 1)))?
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
            };
            let i = next()?;
            let j = next()?;
            edges.push((i, j));
        }
        let n = n.ok_or_else(|| Error::Parse("missing n=<count> header".into()))?;
        Self::from_edges(n, &edges)
    }

    pub fn write_edge_list(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "n={}", self.n)?;
        for &(i, j) in &self.edges {
            writeln!(w, "{i} {j}")?;
        }
        Ok(())
    }

    pub fn save_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_edge_list(std::io::BufWriter::new(f))
    }
}

/// A rook-adjacency lattice together with its planar coordinates.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub rows: usize,
    pub cols: usize,
    pub graph: ArealGraph,
    /// x coordinate (column direction), scaled to [-0.5, 0.5].
    pub x: Vec<f64>,
    /// y coordinate (row direction), scaled to [-0.5, 0.5].
    pub y: Vec<f64>,
}

fn unit_coord(k: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        -0.5 + k as f64 / (len - 1) as f64
    }
}

/// Rook-adjacency `rows × cols` lattice, vertices indexed row-major, coordinates
/// on the unit square centered at the origin.
pub fn build_lattice(rows: usize, cols: usize) -> Result<Lattice> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("lattice dimensions must be positive"));
    }
    let idx = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::with_capacity(2 * rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((idx(r, c), idx(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((idx(r, c), idx(r + 1, c)));
            }
        }
    }
    let mut graph = ArealGraph::from_edges(rows * cols, &edges)?;
    graph.lattice = Some((rows, cols));
    let mut x = Vec::with_capacity(rows * cols);
    let mut y = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            x.push(unit_coord(c, cols));
            y.push(unit_coord(r, rows));
        }
    }
    Ok(Lattice {
        rows,
        cols,
        graph,
        x,
        y,
    })
}

fn precision_unchecked(graph: &ArealGraph, rho: f64) -> DMatrix<f64> {
    let mut q = graph.adjacency() * (-rho);
    for (i, d) in graph.degrees().iter().enumerate() {
        q[(i, i)] = *d;
    }
    q
}

/// Proper CAR precision `diag(A1) - ρA` for `ρ ∈ [0, 1)`.
pub fn car_precision(graph: &ArealGraph, rho: f64) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid(format!(
            "CAR dependence parameter must lie in [0, 1), got {rho}; use laplacian() for rho = 1"
        )));
    }
    Ok(precision_unchecked(graph, rho))
}

/// Graph Laplacian `diag(A1) - A`, the `ρ = 1` limit of the CAR precision.
pub fn laplacian(graph: &ArealGraph) -> DMatrix<f64> {
    precision_unchecked(graph, 1.0)
}
