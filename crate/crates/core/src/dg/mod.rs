//! Discontinuous Galerkin discretizations on structured Cartesian meshes.
//!
//! Supports symmetric interior-penalty (IP) and minimal-dissipation LDG
//! diffusion, upwind (Godunov) convection, and convection–diffusion, in one
//! to three dimensions with tensor-product Gauss–Lobatto nodal bases and
//! Gauss–Legendre quadrature (`p+1` points per axis, exact for every
//! bilinear form on these affine elements; `p+2` for data quadrature).
//!
//! Every assembled problem carries manufactured data derived from
//! `u(x) = exp(Π_a sin πx_a) − 1`: the volume forcing is chosen so that `u`
//! solves the PDE of the requested kind, and boundary data are read off `u`
//! and its normal derivative. The mass matrix is absorbed into the
//! right-hand side, so the system is simply `A u = f`.
//!
//! Sparsity conventions: IP and convection matrices are assembled on the
//! full `2d+1`-block stencil per element with periodic-wrap block columns at
//! boundaries stored as explicit zeros, so the pattern depends only on the
//! mesh, not the data. The LDG primal operator is formed from sparse
//! products of the flux matrices and keeps whatever pattern those produce
//! (a plus-stencil on Cartesian meshes).

pub mod basis;
pub mod local;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, BlockDiagonalLu, BlockPartition, DenseMatrix, SparseMatrix};
use crate::meshgraph::{build_cartesian, CartesianMeshSpec, DofMap};

use self::basis::{gauss_legendre, gauss_lobatto};
use self::local::{outer, tensor_block, AxisTables};

/// Which PDE and which flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// −μΔu = f with the symmetric interior-penalty flux.
    PoissonIp,
    /// −μΔu = f with the minimal-dissipation LDG flux.
    PoissonLdg,
    /// v·∇u = f with the upwind (Godunov) flux.
    Convection,
    /// −μΔu + v·∇u = f: LDG diffusion plus upwind convection.
    ConvectionDiffusion,
}

/// Boundary condition attached to one face of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

/// Full description of a model problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub mesh: CartesianMeshSpec,
    /// Diffusion coefficient μ (> 0 for the Poisson kinds, ≥ 0 for
    /// convection–diffusion, ignored for pure convection).
    pub diffusion: f64,
    /// Convection velocity, one entry per axis; ignored by the Poisson kinds.
    pub velocity: Vec<f64>,
    /// Per-face conditions ordered `[x_lo, x_hi, y_lo, y_hi, z_lo, z_hi]`,
    /// truncated to `2d` entries.
    pub boundary: Vec<BoundaryCondition>,
    /// Interior-penalty coefficient override (IP only). `None` takes the
    /// per-face default `(p+1)²/(2h)` with `h` the face-normal element
    /// width.
    pub penalty: Option<f64>,
}

/// Velocity used by the convection model problems: `(1, 2, 3)` truncated to
/// `d` entries and normalized.
fn reference_velocity(dimension: usize) -> Vec<f64> {
    let v: Vec<f64> = [1.0, 2.0, 3.0][..dimension].to_vec();
    let n = norm2(&v);
    v.iter().map(|x| x / n).collect()
}

fn poisson_boundary(dimension: usize) -> Vec<BoundaryCondition> {
    // Dirichlet on the x_lo face, Neumann everywhere else
    let mut b = vec![BoundaryCondition::Neumann; 2 * dimension];
    b[0] = BoundaryCondition::Dirichlet;
    b
}

impl ProblemSpec {
    /// Poisson with the interior-penalty flux on the `[-1,1]^d` box:
    /// Dirichlet on the `x` lower face, Neumann on the rest.
    pub fn poisson_ip(dimension: usize, refinement: u32, degree: usize) -> Self {
        ProblemSpec {
            kind: ProblemKind::PoissonIp,
            mesh: CartesianMeshSpec::unit_box(dimension, refinement, degree),
            diffusion: 1.0,
            velocity: vec![0.0; dimension],
            boundary: poisson_boundary(dimension),
            penalty: None,
        }
    }

    /// Poisson with the minimal-dissipation LDG flux; boundaries as in
    /// [`ProblemSpec::poisson_ip`].
    pub fn poisson_ldg(dimension: usize, refinement: u32, degree: usize) -> Self {
        ProblemSpec {
            kind: ProblemKind::PoissonLdg,
            ..ProblemSpec::poisson_ip(dimension, refinement, degree)
        }
    }

    /// Pure linear convection with the reference velocity and Dirichlet
    /// (inflow) data on every face.
    pub fn convection(dimension: usize, refinement: u32, degree: usize) -> Self {
        ProblemSpec {
            kind: ProblemKind::Convection,
            mesh: CartesianMeshSpec::unit_box(dimension, refinement, degree),
            diffusion: 0.0,
            velocity: reference_velocity(dimension),
            boundary: vec![BoundaryCondition::Dirichlet; 2 * dimension],
            penalty: None,
        }
    }

    /// Convection–diffusion: LDG diffusion with coefficient `diffusion` plus
    /// upwind convection; all-Dirichlet boundary.
    pub fn convection_diffusion(
        dimension: usize,
        refinement: u32,
        degree: usize,
        diffusion: f64,
    ) -> Self {
        ProblemSpec {
            kind: ProblemKind::ConvectionDiffusion,
            diffusion,
            ..ProblemSpec::convection(dimension, refinement, degree)
        }
    }

    /// Interior-penalty coefficient for a face normal to `axis`: the
    /// explicit override if set, otherwise `(p+1)²/(2h)` with `h` the
    /// face-normal element width. The width-scaled form is what keeps the
    /// method coercive — and the L² error optimal — as the mesh refines.
    pub fn ip_penalty(&self, axis: usize) -> f64 {
        self.penalty.unwrap_or_else(|| self.width_penalty(axis))
    }

    /// Stabilization on LDG Dirichlet faces; same rule as the default
    /// interior penalty (no override — only the IP flux takes one).
    pub fn ldg_stabilization(&self, axis: usize) -> f64 {
        self.penalty.unwrap_or_else(|| self.width_penalty(axis))
    }

    fn width_penalty(&self, axis: usize) -> f64 {
        let p1 = (self.mesh.degree + 1) as f64;
        p1 * p1 / (2.0 * self.mesh.spacing(axis))
    }

    /// True when the spec assembles a diffusive term.
    fn has_diffusion(&self) -> bool {
        match self.kind {
            ProblemKind::PoissonIp | ProblemKind::PoissonLdg => true,
            ProblemKind::ConvectionDiffusion => self.diffusion > 0.0,
            ProblemKind::Convection => false,
        }
    }

    fn has_convection(&self) -> bool {
        matches!(
            self.kind,
            ProblemKind::Convection | ProblemKind::ConvectionDiffusion
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        let d = self.mesh.dimension;
        if self.boundary.len() != 2 * d {
            return Err(Error::InvalidArgument(format!(
                "expected {} boundary conditions (two per axis), got {}",
                2 * d,
                self.boundary.len()
            )));
        }
        if !self.diffusion.is_finite() || self.diffusion < 0.0 {
            return Err(Error::InvalidArgument(
                "diffusion coefficient must be finite and nonnegative".into(),
            ));
        }
        if matches!(self.kind, ProblemKind::PoissonIp | ProblemKind::PoissonLdg)
            && self.diffusion == 0.0
        {
            return Err(Error::InvalidArgument(
                "Poisson kinds require a positive diffusion coefficient".into(),
            ));
        }
        if self.has_convection() {
            if self.velocity.len() != d {
                return Err(Error::InvalidArgument(format!(
                    "velocity must have {} entries, got {}",
                    d,
                    self.velocity.len()
                )));
            }
            if self.velocity.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(
                    "convection kinds require a finite velocity".into(),
                ));
            }
            // zero velocity is tolerated only while diffusion keeps the
            // operator nontrivial (the vanishing-Péclet limit); without it
            // the system would be identically zero
            if norm2(&self.velocity) == 0.0 && !self.has_diffusion() {
                return Err(Error::InvalidArgument(
                    "convection without diffusion requires a nonzero velocity".into(),
                ));
            }
        }
        if self.has_diffusion() {
            if self.mesh.degree == 0 {
                return Err(Error::InvalidArgument(
                    "diffusive kinds need polynomial degree at least 1".into(),
                ));
            }
            if let Some(pen) = self.penalty {
                if !(pen > 0.0) {
                    return Err(Error::InvalidArgument(
                        "an explicit interior penalty must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Closed-form reference solution `u(x) = exp(Π_a sin πx_a) − 1`. It
/// vanishes on every face of the `[-1,1]^d` box, which keeps the default
/// Dirichlet data homogeneous there; on other boxes the data paths see
/// genuinely nonzero traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedSolution {
    pub dimension: usize,
}

impl ManufacturedSolution {
    pub fn new(dimension: usize) -> Self {
        ManufacturedSolution { dimension }
    }

    fn inner(&self, x: &[f64]) -> f64 {
        x[..self.dimension]
            .iter()
            .map(|&xi| (std::f64::consts::PI * xi).sin())
            .product()
    }

    /// Partial derivatives of the inner product-of-sines factor.
    fn inner_gradient(&self, x: &[f64]) -> Vec<f64> {
        let pi = std::f64::consts::PI;
        (0..self.dimension)
            .map(|a| {
                let mut da = pi * (pi * x[a]).cos();
                for b in 0..self.dimension {
                    if b != a {
                        da *= (pi * x[b]).sin();
                    }
                }
                da
            })
            .collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.inner(x).exp_m1()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let eg = self.inner(x).exp();
        self.inner_gradient(x).into_iter().map(|d| eg * d).collect()
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let pi = std::f64::consts::PI;
        let g = self.inner(x);
        let grad = self.inner_gradient(x);
        let sum_sq: f64 = grad.iter().map(|d| d * d).sum();
        g.exp() * (sum_sq - self.dimension as f64 * pi * pi * g)
    }
}

/// Assembled linear system plus the layout information the solver stack
/// needs (element dof map and block partition) and, when available, the
/// exact-solution evaluator behind the manufactured data.
#[derive(Debug, Clone)]
pub struct DgSystem {
    pub a: SparseMatrix,
    pub f: Vec<f64>,
    pub dofmap: DofMap,
    pub blocks: BlockPartition,
    pub exact_solution: Option<ManufacturedSolution>,
    pub spec: ProblemSpec,
}

impl DgSystem {
    pub fn n_dofs(&self) -> usize {
        self.dofmap.total_dofs()
    }

    /// Nodal interpolant of the exact solution.
    pub fn interpolate_exact(&self) -> Result<Vec<f64>> {
        let sol = self.exact_solution.as_ref().ok_or_else(|| {
            Error::InvalidArgument("no exact solution attached to this system".into())
        })?;
        let mesh = &self.spec.mesh;
        let d = mesh.dimension;
        let pdim = mesh.degree + 1;
        let nodes = gauss_lobatto(mesh.degree);
        let mut out = vec![0.0; self.n_dofs()];
        let mut x = [0.0f64; 3];
        for e in 0..mesh.n_elements() {
            let first = self.dofmap.first_dof(e);
            for i in 0..mesh.dofs_per_element() {
                for (a, xa) in x.iter_mut().enumerate().take(d) {
                    let ia = (i / pdim.pow(a as u32)) % pdim;
                    *xa = mesh.lower_corner(e, a) + (nodes[ia] + 1.0) * 0.5 * mesh.spacing(a);
                }
                out[first + i] = sol.value(&x[..d]);
            }
        }
        Ok(out)
    }

    /// L² distance between the coefficient vector `u` and the exact
    /// solution, integrated with `p+2` Gauss points per axis.
    pub fn l2_error(&self, u: &[f64]) -> Result<f64> {
        let sol = self.exact_solution.as_ref().ok_or_else(|| {
            Error::InvalidArgument("no exact solution attached to this system".into())
        })?;
        if u.len() != self.n_dofs() {
            return Err(Error::Dimension(format!(
                "solution vector has length {}, system has {} dofs",
                u.len(),
                self.n_dofs()
            )));
        }
        let w = Workspace::new(&self.spec, &self.dofmap);
        let mesh = &self.spec.mesh;
        let d = w.d;
        let nq = w.qx.len();
        let nqv = nq.pow(d as u32);
        let jac: f64 = (0..d).map(|a| mesh.spacing(a) / 2.0).product();
        let mut err2 = 0.0;
        let mut x = [0.0f64; 3];
        for e in 0..mesh.n_elements() {
            let first = self.dofmap.first_dof(e);
            for q in 0..nqv {
                let mut wq = jac;
                for (a, xa) in x.iter_mut().enumerate().take(d) {
                    let qa = (q / nq.pow(a as u32)) % nq;
                    *xa = mesh.lower_corner(e, a) + (w.qx[qa] + 1.0) * 0.5 * mesh.spacing(a);
                    wq *= w.qw[qa];
                }
                let mut uh = 0.0;
                for i in 0..w.np {
                    let mut phi = 1.0;
                    for a in 0..d {
                        let ia = w.axis_component(i, a);
                        let qa = (q / nq.pow(a as u32)) % nq;
                        phi *= w.qvals.get(ia, qa);
                    }
                    uh += u[first + i] * phi;
                }
                let diff = uh - sol.value(&x[..d]);
                err2 += wq * diff * diff;
            }
        }
        Ok(err2.sqrt())
    }
}

/// Péclet number of the problem: `‖v‖ L / μ` with `L` the largest box
/// extent (2 on the reference box), `+∞` for vanishing diffusion and for
/// the pure-convection kind. Errors for the Poisson kinds.
pub fn peclet(spec: &ProblemSpec) -> Result<f64> {
    match spec.kind {
        ProblemKind::Convection => Ok(f64::INFINITY),
        ProblemKind::ConvectionDiffusion => {
            if spec.diffusion == 0.0 {
                return Ok(f64::INFINITY);
            }
            let extent = spec
                .mesh
                .lo
                .iter()
                .zip(&spec.mesh.hi)
                .map(|(a, b)| b - a)
                .fold(0.0f64, f64::max);
            Ok(norm2(&spec.velocity) * extent / spec.diffusion)
        }
        _ => Err(Error::InvalidArgument(
            "Peclet number is defined for the convection kinds".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// assembly machinery
// ---------------------------------------------------------------------------

/// Block accumulator: per row element, a sorted list of column elements and
/// one dense block per column. Conversion to CSR keeps every allocated
/// block entry, explicit zeros included.
struct BlockAssembler {
    np: usize,
    slots: Vec<Vec<usize>>,
    blocks: Vec<Vec<DenseMatrix>>,
}

impl BlockAssembler {
    fn new(n_elements: usize, np: usize) -> Self {
        BlockAssembler {
            np,
            slots: vec![Vec::new(); n_elements],
            blocks: vec![Vec::new(); n_elements],
        }
    }

    /// Make sure block (`e`, `col`) exists; returns its slot index.
    fn ensure(&mut self, e: usize, col: usize) -> usize {
        match self.slots[e].binary_search(&col) {
            Ok(k) => k,
            Err(k) => {
                self.slots[e].insert(k, col);
                self.blocks[e].insert(k, DenseMatrix::zeros(self.np, self.np));
                k
            }
        }
    }

    /// `block(e, col) += s · m`.
    fn add(&mut self, e: usize, col: usize, m: &DenseMatrix, s: f64) {
        let k = self.ensure(e, col);
        self.blocks[e][k].add_scaled(m, s);
    }

    fn into_csr(self, dofmap: &DofMap) -> SparseMatrix {
        let n = dofmap.total_dofs();
        let np = self.np;
        let nnz = self.slots.iter().map(Vec::len).sum::<usize>() * np * np;
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_offsets.push(0);
        for (e, slots) in self.slots.iter().enumerate() {
            for r in 0..np {
                for (k, &ce) in slots.iter().enumerate() {
                    let base = dofmap.first_dof(ce);
                    let block = &self.blocks[e][k];
                    for c in 0..np {
                        col_indices.push(base + c);
                        values.push(block.get(r, c));
                    }
                }
                row_offsets.push(col_indices.len());
            }
        }
        SparseMatrix::new(n, n, row_offsets, col_indices, values)
            .expect("block-assembled CSR is structurally valid")
    }
}

/// Shared per-assembly context: operator tables, physical scalings, and the
/// data-quadrature rule.
struct Workspace<'a> {
    spec: &'a ProblemSpec,
    dofmap: &'a DofMap,
    d: usize,
    pdim: usize,
    np: usize,
    tables: AxisTables,
    /// Physical per-axis mass `(h_a/2)·M_ref`.
    pmass: Vec<DenseMatrix>,
    /// Physical per-axis stiffness `(2/h_a)·S_ref`.
    pstiff: Vec<DenseMatrix>,
    /// Data-quadrature nodes/weights (`p+2` Gauss points) and basis values
    /// at the nodes.
    qx: Vec<f64>,
    qw: Vec<f64>,
    qvals: DenseMatrix,
    sol: ManufacturedSolution,
}

impl<'a> Workspace<'a> {
    fn new(spec: &'a ProblemSpec, dofmap: &'a DofMap) -> Self {
        let mesh = &spec.mesh;
        let d = mesh.dimension;
        let p = mesh.degree;
        let tables = AxisTables::new(p);
        let pmass: Vec<DenseMatrix> = (0..d)
            .map(|a| tables.mass.scaled(mesh.spacing(a) / 2.0))
            .collect();
        let pstiff: Vec<DenseMatrix> = (0..d)
            .map(|a| tables.stiff.scaled(2.0 / mesh.spacing(a)))
            .collect();
        let (qx, qw) = gauss_legendre(p + 2);
        let qvals = DenseMatrix::from_fn(p + 1, qx.len(), |i, q| tables.basis.value(i, qx[q]));
        Workspace {
            spec,
            dofmap,
            d,
            pdim: p + 1,
            np: mesh.dofs_per_element(),
            tables,
            pmass,
            pstiff,
            qx,
            qw,
            qvals,
            sol: ManufacturedSolution::new(d),
        }
    }

    fn axis_component(&self, i: usize, axis: usize) -> usize {
        (i / self.pdim.pow(axis as u32)) % self.pdim
    }

    /// Tensor block with factor `f` on `axis` and physical mass elsewhere.
    fn tensor_with_axis(&self, axis: usize, f: &DenseMatrix) -> DenseMatrix {
        let refs: Vec<&DenseMatrix> = (0..self.d)
            .map(|b| if b == axis { f } else { &self.pmass[b] })
            .collect();
        tensor_block(&refs)
    }

    fn boundary_elements(&self, axis: usize, side: usize) -> Vec<usize> {
        let mesh = &self.spec.mesh;
        let want = if side == 0 { 0 } else { mesh.cells_per_axis() - 1 };
        (0..mesh.n_elements())
            .filter(|&e| mesh.element_coords(e)[axis] == want)
            .collect()
    }

    /// Volume forcing `∫ f φ_i` for the manufactured solution of this kind.
    fn volume_forcing(&self) -> Vec<f64> {
        let mesh = &self.spec.mesh;
        let d = self.d;
        let nq = self.qx.len();
        let nqv = nq.pow(d as u32);
        let jac: f64 = (0..d).map(|a| mesh.spacing(a) / 2.0).product();
        let mut rhs = vec![0.0; self.dofmap.total_dofs()];
        let mut x = [0.0f64; 3];
        for e in 0..mesh.n_elements() {
            let first = self.dofmap.first_dof(e);
            for q in 0..nqv {
                let mut wq = jac;
                for (a, xa) in x.iter_mut().enumerate().take(d) {
                    let qa = (q / nq.pow(a as u32)) % nq;
                    *xa = mesh.lower_corner(e, a) + (self.qx[qa] + 1.0) * 0.5 * mesh.spacing(a);
                    wq *= self.qw[qa];
                }
                let fx = self.forcing(&x[..d]);
                for i in 0..self.np {
                    let mut phi = 1.0;
                    for a in 0..d {
                        let ia = self.axis_component(i, a);
                        let qa = (q / nq.pow(a as u32)) % nq;
                        phi *= self.qvals.get(ia, qa);
                    }
                    rhs[first + i] += wq * fx * phi;
                }
            }
        }
        rhs
    }

    /// Pointwise manufactured forcing for the requested kind.
    fn forcing(&self, x: &[f64]) -> f64 {
        let mut f = 0.0;
        if self.spec.has_diffusion() {
            f -= self.spec.diffusion * self.sol.laplacian(x);
        }
        if self.spec.has_convection() {
            let grad = self.sol.gradient(x);
            f += self
                .spec
                .velocity
                .iter()
                .zip(&grad)
                .map(|(v, g)| v * g)
                .sum::<f64>();
        }
        f
    }

    /// Visit the data-quadrature points of one boundary face: calls
    /// `f(x, w, tf)` with the physical point, the face weight (tangent
    /// Jacobians included), and per-dof tangent factors
    /// `tf[i] = Π_{b≠axis} ℓ_{i_b}(ξ_b)`.
    fn for_each_face_point(
        &self,
        e: usize,
        axis: usize,
        side: usize,
        mut f: impl FnMut(&[f64], f64, &[f64]),
    ) {
        let mesh = &self.spec.mesh;
        let nq = self.qx.len();
        let taxes: Vec<usize> = (0..self.d).filter(|&b| b != axis).collect();
        let nfq = nq.pow(taxes.len() as u32);
        let mut x = [0.0f64; 3];
        x[axis] = mesh.lower_corner(e, axis)
            + if side == 1 { mesh.spacing(axis) } else { 0.0 };
        let mut tf = vec![0.0; self.np];
        for q in 0..nfq {
            let mut wq = 1.0;
            for (k, &b) in taxes.iter().enumerate() {
                let qb = (q / nq.pow(k as u32)) % nq;
                x[b] = mesh.lower_corner(e, b) + (self.qx[qb] + 1.0) * 0.5 * mesh.spacing(b);
                wq *= self.qw[qb] * mesh.spacing(b) * 0.5;
            }
            for (i, t) in tf.iter_mut().enumerate() {
                let mut v = 1.0;
                for (k, &b) in taxes.iter().enumerate() {
                    let ib = self.axis_component(i, b);
                    let qb = (q / nq.pow(k as u32)) % nq;
                    v *= self.qvals.get(ib, qb);
                }
                *t = v;
            }
            f(&x[..self.d], wq, &tf);
        }
    }
}

/// Allocate the full `2d+1`-block stencil for every element, with
/// periodic-wrap column blocks at the boundary (stored as explicit zeros).
fn allocate_wrap_stencil(asm: &mut BlockAssembler, mesh: &CartesianMeshSpec) {
    let n = mesh.cells_per_axis();
    for e in 0..mesh.n_elements() {
        asm.ensure(e, e);
        let coords = mesh.element_coords(e);
        for axis in 0..mesh.dimension {
            for delta in [n - 1, 1] {
                let mut c = coords;
                c[axis] = (c[axis] + delta) % n;
                asm.ensure(e, mesh.element_index(&c));
            }
        }
    }
}

/// Interior-penalty Poisson operator and its boundary-data contribution to
/// the right-hand side.
fn assemble_ip(w: &Workspace) -> (SparseMatrix, Vec<f64>) {
    let mesh = &w.spec.mesh;
    let mu = w.spec.diffusion;
    let mut asm = BlockAssembler::new(mesh.n_elements(), w.np);
    allocate_wrap_stencil(&mut asm, mesh);
    let mut rhs = vec![0.0; w.dofmap.total_dofs()];

    // volume: μ Σ_a stiffness on axis a, mass on the others
    let mut vol = DenseMatrix::zeros(w.np, w.np);
    for a in 0..w.d {
        vol.add_scaled(&w.tensor_with_axis(a, &w.pstiff[a]), 1.0);
    }
    for e in 0..mesh.n_elements() {
        asm.add(e, e, &vol, mu);
    }

    for axis in 0..w.d {
        let hscale = 2.0 / mesh.spacing(axis);
        let mu_pen = w.spec.ip_penalty(axis);
        // side 0 is the lower element at the face (trace at its hi end, jump
        // sign +1), side 1 the upper element; derivatives are plain ∂/∂x_a
        let sides = [
            (
                w.tables.trace_hi.clone(),
                w.tables.dtrace_hi.iter().map(|v| v * hscale).collect::<Vec<_>>(),
                1.0,
            ),
            (
                w.tables.trace_lo.clone(),
                w.tables.dtrace_lo.iter().map(|v| v * hscale).collect::<Vec<_>>(),
                -1.0,
            ),
        ];
        // the four (test side, trial side) combinations of
        // −⟨{∂_n u},[v]⟩ − ⟨[u],{∂_n v}⟩ + μ_pen ⟨[u],[v]⟩
        let mut combos = Vec::with_capacity(4);
        for (tv, gv, sv) in &sides {
            for (tu, gu, su) in &sides {
                let mut m = outer(tv, gu).scaled(-0.5 * sv);
                m.add_scaled(&outer(gv, tu), -0.5 * su);
                m.add_scaled(&outer(tv, tu), mu_pen * sv * su);
                combos.push(w.tensor_with_axis(axis, &m));
            }
        }
        for e in 0..mesh.n_elements() {
            if let Some(hi) = mesh.neighbor(e, axis, 1) {
                let els = [e, hi];
                for iv in 0..2 {
                    for iu in 0..2 {
                        asm.add(els[iv], els[iu], &combos[2 * iv + iu], mu);
                    }
                }
            }
        }

        // boundary faces on this axis
        for side in 0..2 {
            let dir = if side == 0 { -1.0 } else { 1.0 };
            let bc = w.spec.boundary[2 * axis + side];
            let t = if side == 0 {
                w.tables.trace_lo.clone()
            } else {
                w.tables.trace_hi.clone()
            };
            let dt = if side == 0 { &w.tables.dtrace_lo } else { &w.tables.dtrace_hi };
            // outward-normal derivative trace
            let gn: Vec<f64> = dt.iter().map(|v| v * dir * hscale).collect();
            match bc {
                BoundaryCondition::Dirichlet => {
                    let mut m = outer(&t, &gn).scaled(-1.0);
                    m.add_scaled(&outer(&gn, &t), -1.0);
                    m.add_scaled(&outer(&t, &t), mu_pen);
                    let block = w.tensor_with_axis(axis, &m);
                    for e in w.boundary_elements(axis, side) {
                        asm.add(e, e, &block, mu);
                        let first = w.dofmap.first_dof(e);
                        w.for_each_face_point(e, axis, side, |x, wq, tf| {
                            let g = w.sol.value(x);
                            for (i, tfi) in tf.iter().enumerate() {
                                let ia = w.axis_component(i, axis);
                                rhs[first + i] +=
                                    mu * wq * g * (mu_pen * t[ia] - gn[ia]) * tfi;
                            }
                        });
                    }
                }
                BoundaryCondition::Neumann => {
                    for e in w.boundary_elements(axis, side) {
                        let first = w.dofmap.first_dof(e);
                        w.for_each_face_point(e, axis, side, |x, wq, tf| {
                            let gn_data = dir * w.sol.gradient(x)[axis];
                            for (i, tfi) in tf.iter().enumerate() {
                                let ia = w.axis_component(i, axis);
                                rhs[first + i] += mu * wq * gn_data * t[ia] * tfi;
                            }
                        });
                    }
                }
            }
        }
    }
    (asm.into_csr(w.dofmap), rhs)
}

/// Upwind convection operator and the inflow-data contribution to the
/// right-hand side.
fn assemble_convection(w: &Workspace) -> (SparseMatrix, Vec<f64>) {
    let mesh = &w.spec.mesh;
    let v = &w.spec.velocity;
    let mut asm = BlockAssembler::new(mesh.n_elements(), w.np);
    allocate_wrap_stencil(&mut asm, mesh);
    let mut rhs = vec![0.0; w.dofmap.total_dofs()];

    // volume: −Σ_a v_a ⟨u, ∂_a v⟩, i.e. the transposed derivative pairing
    let convt = w.tables.conv.transpose();
    let mut vol = DenseMatrix::zeros(w.np, w.np);
    for a in 0..w.d {
        vol.add_scaled(&w.tensor_with_axis(a, &convt), -v[a]);
    }
    for e in 0..mesh.n_elements() {
        asm.add(e, e, &vol, 1.0);
    }

    for axis in 0..w.d {
        let t_lo_el = &w.tables.trace_hi; // lower element's trace at the face
        let t_hi_el = &w.tables.trace_lo; // upper element's trace at the face
        // upwind trace: the side the velocity component comes from
        let t_up = if v[axis] >= 0.0 { t_lo_el } else { t_hi_el };
        let m_lo = w.tensor_with_axis(axis, &outer(t_lo_el, t_up));
        let m_hi = w.tensor_with_axis(axis, &outer(t_hi_el, t_up));
        if v[axis] != 0.0 {
            for e in 0..mesh.n_elements() {
                if let Some(hi) = mesh.neighbor(e, axis, 1) {
                    let up = if v[axis] >= 0.0 { e } else { hi };
                    asm.add(e, up, &m_lo, v[axis]);
                    asm.add(hi, up, &m_hi, -v[axis]);
                }
            }
        }

        for side in 0..2 {
            let dir = if side == 0 { -1.0 } else { 1.0 };
            let coef = v[axis] * dir;
            let t = if side == 0 { t_hi_el } else { t_lo_el };
            if coef > 0.0 {
                // outflow: flux takes the interior value
                let block = w.tensor_with_axis(axis, &outer(t, t));
                for e in w.boundary_elements(axis, side) {
                    asm.add(e, e, &block, coef);
                }
            } else if coef < 0.0
                && w.spec.boundary[2 * axis + side] == BoundaryCondition::Dirichlet
            {
                // inflow with data; without Dirichlet data the exterior
                // value is zero and there is nothing to add
                for e in w.boundary_elements(axis, side) {
                    let first = w.dofmap.first_dof(e);
                    w.for_each_face_point(e, axis, side, |x, wq, tf| {
                        let g = w.sol.value(x);
                        for (i, tfi) in tf.iter().enumerate() {
                            let ia = w.axis_component(i, axis);
                            rhs[first + i] += -coef * wq * g * t[ia] * tfi;
                        }
                    });
                }
            }
        }
    }
    (asm.into_csr(w.dofmap), rhs)
}

/// LDG primal Poisson operator `μ(Σ_a B_aᵀ M⁻¹ B_a + τ_D P)` and its
/// boundary-data right-hand side.
fn assemble_ldg(w: &Workspace) -> Result<(SparseMatrix, Vec<f64>)> {
    let mesh = &w.spec.mesh;
    let mu = w.spec.diffusion;
    let n = w.dofmap.total_dofs();

    // block-diagonal mass matrix and its factorization
    let mass_block = {
        let refs: Vec<&DenseMatrix> = (0..w.d).map(|a| &w.pmass[a]).collect();
        tensor_block(&refs)
    };
    let mut masm = BlockAssembler::new(mesh.n_elements(), w.np);
    for e in 0..mesh.n_elements() {
        masm.add(e, e, &mass_block, 1.0);
    }
    let mass = masm.into_csr(w.dofmap);
    let partition = w.dofmap.to_block_partition();
    let mlu = BlockDiagonalLu::factor(&mass, &partition)?;

    let mut rhs = vec![0.0; n];
    let mut total: Option<SparseMatrix> = None;
    for axis in 0..w.d {
        let (b, bg) = flux_matrix(w, axis);
        let minv_b = mlu.solve_matrix(&b)?;
        let bt = b.transpose();
        let a_axis = bt.sparse_product(&minv_b)?;
        total = Some(match total {
            None => a_axis,
            Some(acc) => acc.add_scaled(1.0, &a_axis, 1.0)?,
        });
        // data lift: −Bᵀ M⁻¹ b_g
        let corr = bt.spmv(&mlu.apply_inv(&bg))?;
        for (r, c) in rhs.iter_mut().zip(&corr) {
            *r -= c;
        }
    }

    // Dirichlet face stabilization and data; Neumann flux data
    let mut pasm = BlockAssembler::new(mesh.n_elements(), w.np);
    for axis in 0..w.d {
        let tau = w.spec.ldg_stabilization(axis);
        for side in 0..2 {
            let dir = if side == 0 { -1.0 } else { 1.0 };
            let t = if side == 0 { &w.tables.trace_lo } else { &w.tables.trace_hi };
            match w.spec.boundary[2 * axis + side] {
                BoundaryCondition::Dirichlet => {
                    let block = w.tensor_with_axis(axis, &outer(t, t));
                    for e in w.boundary_elements(axis, side) {
                        pasm.add(e, e, &block, tau);
                        let first = w.dofmap.first_dof(e);
                        w.for_each_face_point(e, axis, side, |x, wq, tf| {
                            let g = w.sol.value(x);
                            for (i, tfi) in tf.iter().enumerate() {
                                let ia = w.axis_component(i, axis);
                                rhs[first + i] += tau * wq * g * t[ia] * tfi;
                            }
                        });
                    }
                }
                BoundaryCondition::Neumann => {
                    for e in w.boundary_elements(axis, side) {
                        let first = w.dofmap.first_dof(e);
                        w.for_each_face_point(e, axis, side, |x, wq, tf| {
                            let gn_data = dir * w.sol.gradient(x)[axis];
                            for (i, tfi) in tf.iter().enumerate() {
                                let ia = w.axis_component(i, axis);
                                rhs[first + i] += wq * gn_data * t[ia] * tfi;
                            }
                        });
                    }
                }
            }
        }
    }
    let penalty = pasm.into_csr(w.dofmap);
    let a = total
        .expect("at least one axis")
        .add_scaled(1.0, &penalty, 1.0)?
        .scaled(mu);
    for r in rhs.iter_mut() {
        *r *= mu;
    }
    Ok((a, rhs))
}

/// Flux matrix `B_a` of the LDG gradient reconstruction `M q_a = B_a u + b_g`
/// (volume derivative plus one-sided lifting), together with the Dirichlet
/// data vector `b_g`.
fn flux_matrix(w: &Workspace, axis: usize) -> (SparseMatrix, Vec<f64>) {
    let mesh = &w.spec.mesh;
    let mut asm = BlockAssembler::new(mesh.n_elements(), w.np);
    let mut bg = vec![0.0; w.dofmap.total_dofs()];

    // volume: ∫ ∂_a u τ
    let vol = w.tensor_with_axis(axis, &w.tables.conv);
    for e in 0..mesh.n_elements() {
        asm.add(e, e, &vol, 1.0);
    }

    // interior faces: û is the trace from the upper element, so the lift
    // (û − u⁻) lands on the lower element's rows only
    let t_lo_el = &w.tables.trace_hi;
    let t_hi_el = &w.tables.trace_lo;
    let lift_self = w.tensor_with_axis(axis, &outer(t_lo_el, t_lo_el));
    let lift_nbr = w.tensor_with_axis(axis, &outer(t_lo_el, t_hi_el));
    for e in 0..mesh.n_elements() {
        if let Some(hi) = mesh.neighbor(e, axis, 1) {
            asm.add(e, e, &lift_self, -1.0);
            asm.add(e, hi, &lift_nbr, 1.0);
        }
    }

    // Dirichlet faces: û = g, lift (g − u⁻)·n_out on the boundary element
    for side in 0..2 {
        if w.spec.boundary[2 * axis + side] != BoundaryCondition::Dirichlet {
            continue;
        }
        let dir = if side == 0 { -1.0 } else { 1.0 };
        let t = if side == 0 { &w.tables.trace_lo } else { &w.tables.trace_hi };
        let block = w.tensor_with_axis(axis, &outer(t, t));
        for e in w.boundary_elements(axis, side) {
            asm.add(e, e, &block, -dir);
            let first = w.dofmap.first_dof(e);
            w.for_each_face_point(e, axis, side, |x, wq, tf| {
                let g = w.sol.value(x);
                for (i, tfi) in tf.iter().enumerate() {
                    let ia = w.axis_component(i, axis);
                    bg[first + i] += dir * wq * g * t[ia] * tfi;
                }
            });
        }
    }
    (asm.into_csr(w.dofmap), bg)
}

/// Assemble the system for a model problem: operator, manufactured
/// right-hand side, dof layout, and the exact-solution evaluator.
pub fn assemble(spec: &ProblemSpec) -> Result<DgSystem> {
    spec.validate()?;
    let (graph, _geometry) = build_cartesian(&spec.mesh)?;
    let dofmap = DofMap::from_dof_counts(&graph.dof_counts);
    let w = Workspace::new(spec, &dofmap);
    let mut f = w.volume_forcing();
    let add_to = |f: &mut Vec<f64>, data: &[f64]| {
        for (t, s) in f.iter_mut().zip(data) {
            *t += s;
        }
    };
    let a = match spec.kind {
        ProblemKind::PoissonIp => {
            let (a, data) = assemble_ip(&w);
            add_to(&mut f, &data);
            a
        }
        ProblemKind::PoissonLdg => {
            let (a, data) = assemble_ldg(&w)?;
            add_to(&mut f, &data);
            a
        }
        ProblemKind::Convection => {
            let (a, data) = assemble_convection(&w);
            add_to(&mut f, &data);
            a
        }
        ProblemKind::ConvectionDiffusion => {
            let (ac, dc) = assemble_convection(&w);
            add_to(&mut f, &dc);
            if spec.diffusion > 0.0 {
                let (al, dl) = assemble_ldg(&w)?;
                add_to(&mut f, &dl);
                ac.add_scaled(1.0, &al, 1.0)?
            } else {
                ac
            }
        }
    };
    let sol = w.sol.clone();
    drop(w);
    let blocks = dofmap.to_block_partition();
    Ok(DgSystem {
        a,
        f,
        dofmap,
        blocks,
        exact_solution: Some(sol),
        spec: spec.clone(),
    })
}

/// Manufactured right-hand side and exact-solution evaluator for a Poisson
/// problem; equals the `f` stored by [`assemble`] for the same spec.
pub fn manufactured_rhs(
    spec: &ProblemSpec,
    system: &DgSystem,
) -> Result<(Vec<f64>, ManufacturedSolution)> {
    if !matches!(spec.kind, ProblemKind::PoissonIp | ProblemKind::PoissonLdg) {
        return Err(Error::InvalidArgument(
            "manufactured right-hand sides are defined for the Poisson kinds".into(),
        ));
    }
    spec.validate()?;
    if system.n_dofs() != spec.mesh.n_dofs() {
        return Err(Error::Dimension(format!(
            "system has {} dofs but the spec implies {}",
            system.n_dofs(),
            spec.mesh.n_dofs()
        )));
    }
    let (graph, _geometry) = build_cartesian(&spec.mesh)?;
    let dofmap = DofMap::from_dof_counts(&graph.dof_counts);
    let w = Workspace::new(spec, &dofmap);
    let mut f = w.volume_forcing();
    let data = match spec.kind {
        ProblemKind::PoissonIp => assemble_ip(&w).1,
        _ => assemble_ldg(&w)?.1,
    };
    for (t, s) in f.iter_mut().zip(&data) {
        *t += s;
    }
    Ok((f, w.sol.clone()))
}
