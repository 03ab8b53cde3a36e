//! Structured Cartesian DG meshes, element adjacency graphs, and dof layout.
//!
//! The solver setup only ever sees an [`ElementGraph`] — vertices are mesh
//! elements, edges connect elements sharing a face — plus per-element dof
//! counts. Structured meshes come from [`build_cartesian`]; unstructured
//! meshes can be supplied through the adjacency file format (see
//! [`read_graph`]), since only connectivity and dof counts matter to the
//! aggregation machinery.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BlockPartition;

/// Structured mesh description: `2^refinement` elements per axis on an
/// axis-aligned box, tensor-product polynomial degree `degree` per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartesianMeshSpec {
    /// Spatial dimension, 1 to 3.
    pub dimension: usize,
    /// Refinement level M; the mesh has `2^M` elements along each axis.
    pub refinement: u32,
    /// Polynomial degree p ≥ 0; each element carries `(p+1)^d` dofs.
    /// (Discretizations may impose their own lower bounds on p.)
    pub degree: usize,
    /// Lower box corner, one entry per axis.
    pub lo: Vec<f64>,
    /// Upper box corner, one entry per axis.
    pub hi: Vec<f64>,
}

impl CartesianMeshSpec {
    /// Mesh on the default box `[-1, 1]^d`.
    pub fn unit_box(dimension: usize, refinement: u32, degree: usize) -> Self {
        CartesianMeshSpec {
            dimension,
            refinement,
            degree,
            lo: vec![-1.0; dimension],
            hi: vec![1.0; dimension],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dimension) {
            return Err(Error::InvalidArgument(format!(
                "dimension must be 1, 2 or 3, got {}",
                self.dimension
            )));
        }
        if self.lo.len() != self.dimension || self.hi.len() != self.dimension {
            return Err(Error::InvalidArgument(
                "box corners must have one entry per axis".into(),
            ));
        }
        if self.lo.iter().zip(&self.hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidArgument("box must have positive widths".into()));
        }
        Ok(())
    }

    /// Elements along each axis (`2^M`).
    pub fn cells_per_axis(&self) -> usize {
        1usize << self.refinement
    }

    pub fn n_elements(&self) -> usize {
        self.cells_per_axis().pow(self.dimension as u32)
    }

    pub fn dofs_per_element(&self) -> usize {
        (self.degree + 1).pow(self.dimension as u32)
    }

    pub fn n_dofs(&self) -> usize {
        self.n_elements() * self.dofs_per_element()
    }

    /// Element width along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.cells_per_axis() as f64
    }

    /// Lexicographic element ordering with axis 0 varying fastest.
    pub fn element_coords(&self, e: usize) -> [usize; 3] {
        let n = self.cells_per_axis();
        let mut c = [0usize; 3];
        let mut rem = e;
        for a in 0..self.dimension {
            c[a] = rem % n;
            rem /= n;
        }
        c
    }

    pub fn element_index(&self, coords: &[usize; 3]) -> usize {
        let n = self.cells_per_axis();
        let mut e = 0usize;
        for a in (0..self.dimension).rev() {
            e = e * n + coords[a];
        }
        e
    }

    /// Face neighbor of `e` in direction `dir` (−1 or +1) along `axis`, if any.
    pub fn neighbor(&self, e: usize, axis: usize, dir: i32) -> Option<usize> {
        let n = self.cells_per_axis();
        let mut c = self.element_coords(e);
        let x = c[axis] as i64 + dir as i64;
        if x < 0 || x >= n as i64 {
            return None;
        }
        c[axis] = x as usize;
        Some(self.element_index(&c))
    }

    /// Lower corner coordinate of element `e` along `axis`.
    pub fn lower_corner(&self, e: usize, axis: usize) -> f64 {
        self.lo[axis] + self.element_coords(e)[axis] as f64 * self.spacing(axis)
    }
}

/// Element adjacency graph with per-element dof counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementGraph {
    /// Sorted face-neighbor lists, one per element.
    pub adjacency: Vec<Vec<usize>>,
    /// Dofs carried by each element; all ≥ 1.
    pub dof_counts: Vec<usize>,
}

impl ElementGraph {
    pub fn n_elements(&self) -> usize {
        self.adjacency.len()
    }

    pub fn total_dofs(&self) -> usize {
        self.dof_counts.iter().sum()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(|a| a.len()).sum::<usize>() / 2
    }

    /// Check symmetry, absence of self-loops, sortedness, dof counts, and
    /// connectivity.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_elements();
        if self.dof_counts.len() != n {
            return Err(Error::Dimension(format!(
                "graph has {n} elements but {} dof counts",
                self.dof_counts.len()
            )));
        }
        if let Some(i) = self.dof_counts.iter().position(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "element {i} has zero dofs"
            )));
        }
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            for w in nbrs.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidArgument(format!(
                        "neighbor list of element {i} not sorted/unique"
                    )));
                }
            }
            for &j in nbrs {
                if j >= n {
                    return Err(Error::InvalidArgument(format!(
                        "element {i} lists out-of-range neighbor {j}"
                    )));
                }
                if j == i {
                    return Err(Error::InvalidArgument(format!(
                        "self-loop at element {i}"
                    )));
                }
                if self.adjacency[j].binary_search(&i).is_err() {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric adjacency at element {i} (neighbor {j} does not list it back)"
                    )));
                }
            }
        }
        if !self.is_connected() {
            return Err(Error::InvalidArgument("graph is disconnected".into()));
        }
        Ok(())
    }

    /// Breadth-first reachability from element 0.
    pub fn is_connected(&self) -> bool {
        let n = self.n_elements();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        seen[0] = true;
        queue.push_back(0usize);
        let mut count = 1usize;
        while let Some(i) = queue.pop_front() {
            for &j in &self.adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == n
    }
}

/// Per-element geometry of a structured mesh: lower corners and the (uniform)
/// spacing per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryTable {
    pub dimension: usize,
    /// Element width along each axis.
    pub spacing: Vec<f64>,
    /// `lower_corners[e]` has one coordinate per axis.
    pub lower_corners: Vec<Vec<f64>>,
}

/// Contiguous element-major dof layout: element `e` owns
/// `offsets[e]..offsets[e+1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    offsets: Vec<usize>,
}

impl DofMap {
    pub fn from_dof_counts(counts: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        offsets.push(0usize);
        let mut acc = 0usize;
        for &c in counts {
            acc += c;
            offsets.push(acc);
        }
        DofMap { offsets }
    }

    pub fn n_elements(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn first_dof(&self, e: usize) -> usize {
        self.offsets[e]
    }

    pub fn dof_count(&self, e: usize) -> usize {
        self.offsets[e + 1] - self.offsets[e]
    }

    pub fn element_range(&self, e: usize) -> std::ops::Range<usize> {
        self.offsets[e]..self.offsets[e + 1]
    }

    pub fn total_dofs(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// The matching block partition (element blocks in element order), as
    /// consumed by the block-Jacobi smoother.
    pub fn to_block_partition(&self) -> BlockPartition {
        BlockPartition {
            block_offsets: self.offsets.clone(),
        }
    }
}

/// Build the element graph and geometry table of a structured mesh.
/// Elements are ordered lexicographically (axis 0 fastest); edges connect
/// face neighbors only, so degrees never exceed `2d`.
pub fn build_cartesian(spec: &CartesianMeshSpec) -> Result<(ElementGraph, GeometryTable)> {
    spec.validate()?;
    let n = spec.n_elements();
    let dof = spec.dofs_per_element();
    let mut adjacency = Vec::with_capacity(n);
    let mut lower_corners = Vec::with_capacity(n);
    for e in 0..n {
        let mut nbrs = Vec::with_capacity(2 * spec.dimension);
        for axis in 0..spec.dimension {
            for dir in [-1, 1] {
                if let Some(j) = spec.neighbor(e, axis, dir) {
                    nbrs.push(j);
                }
            }
        }
        nbrs.sort_unstable();
        adjacency.push(nbrs);
        lower_corners.push((0..spec.dimension).map(|a| spec.lower_corner(e, a)).collect());
    }
    let graph = ElementGraph {
        adjacency,
        dof_counts: vec![dof; n],
    };
    let geo = GeometryTable {
        dimension: spec.dimension,
        spacing: (0..spec.dimension).map(|a| spec.spacing(a)).collect(),
        lower_corners,
    };
    Ok((graph, geo))
}

/// Read the adjacency file format: line 1 is `n_elements`, then one line per
/// element with `dof_count k nbr_1 … nbr_k` (0-based neighbor indices).
pub fn read_graph<R: BufRead>(r: &mut R) -> Result<ElementGraph> {
    let mut lines = r.lines();
    let n: usize = match lines.next() {
        Some(l) => {
            let l = l?;
            l.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad element count line: {l}")))?
        }
        None => return Err(Error::Parse("empty graph file".into())),
    };
    let mut adjacency = Vec::with_capacity(n);
    let mut dof_counts = Vec::with_capacity(n);
    for e in 0..n {
        let line = match lines.next() {
            Some(l) => l?,
            None => {
                return Err(Error::Parse(format!(
                    "graph file ends early: expected {n} element lines, got {e}"
                )))
            }
        };
        let fields: Vec<usize> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad field `{t}` on element line {e}")))
            })
            .collect::<Result<_>>()?;
        if fields.len() < 2 {
            return Err(Error::Parse(format!(
                "element line {e} needs at least `dof_count k`"
            )));
        }
        let (dof, k) = (fields[0], fields[1]);
        if fields.len() != 2 + k {
            return Err(Error::Parse(format!(
                "element line {e} promises {k} neighbors but lists {}",
                fields.len() - 2
            )));
        }
        let mut nbrs = fields[2..].to_vec();
        nbrs.sort_unstable();
        adjacency.push(nbrs);
        dof_counts.push(dof);
    }
    let graph = ElementGraph {
        adjacency,
        dof_counts,
    };
    graph.validate()?;
    Ok(graph)
}

/// Write the adjacency file format emitted by [`read_graph`]'s parser.
pub fn write_graph<W: Write>(w: &mut W, g: &ElementGraph) -> Result<()> {
    writeln!(w, "{}", g.n_elements())?;
    for e in 0..g.n_elements() {
        write!(w, "{} {}", g.dof_counts[e], g.adjacency[e].len())?;
        for &j in &g.adjacency[e] {
            write!(w, " {j}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<ElementGraph> {
    let file = std::fs::File::open(path)?;
    read_graph(&mut std::io::BufReader::new(file))
}

pub fn save_graph(path: &Path, g: &ElementGraph) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_graph(&mut file, g)
}
