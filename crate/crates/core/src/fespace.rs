//! Continuous piecewise (bi)linear finite element spaces on a [`Mesh`].

use std::sync::{Arc, OnceLock};

use crate::assembly;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::linalg::{pcg_solve, CsrPattern, SolverConfig, SparseMatrix};
use crate::mesh::{quad_jacobian, BoundaryTag, Mesh, Point};

/// Tolerance on reference coordinates when deciding whether a point lies in an element.
const REF_TOL: f64 = 1e-12;

/// Tensor-product Gauss-Legendre rule on the reference element `[-1, 1]^dim`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let g = 1.0 / 3f64.sqrt();
            (vec![-g, g], vec![1.0, 1.0])
        }
        3 => {
            let g = (3.0f64 / 5.0).sqrt();
            (vec![-g, 0.0, g], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let wa = (18.0 + 30f64.sqrt()) / 36.0;
            let wb = (18.0 - 30f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        _ => {
            let a = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
            let b = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
            let wa = (322.0 + 13.0 * 70f64.sqrt()) / 900.0;
            let wb = (322.0 - 13.0 * 70f64.sqrt()) / 900.0;
            (vec![-b, -a, 0.0, a, b], vec![wb, wa, 128.0 / 225.0, wa, wb])
        }
    }
}

impl QuadratureRule {
    /// `n` points per direction, `1 <= n <= 5`.
    pub fn gauss(dim: usize, n: usize) -> Self {
        let (x, w) = gauss_legendre(n.clamp(1, 5));
        if dim == 1 {
            return QuadratureRule { points: x.iter().map(|&p| [p, 0.0]).collect(), weights: w };
        }
        let mut points = Vec::with_capacity(x.len() * x.len());
        let mut weights = Vec::with_capacity(x.len() * x.len());
        for (j, &eta) in x.iter().enumerate() {
            for (i, &xi) in x.iter().enumerate() {
                points.push([xi, eta]);
                weights.push(w[i] * w[j]);
            }
        }
        QuadratureRule { points, weights }
    }

    /// Default rule for assembly: 3 points on segments, 2x2 on quads.
    pub fn default_for(dim: usize) -> Self {
        if dim == 1 {
            Self::gauss(1, 3)
        } else {
            Self::gauss(2, 2)
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Reference shape functions. Segments use `[left, right]`, quads are counterclockwise.
pub fn shape_values(dim: usize, r: [f64; 2]) -> [f64; 4] {
    let [xi, eta] = r;
    if dim == 1 {
        [(1.0 - xi) / 2.0, (1.0 + xi) / 2.0, 0.0, 0.0]
    } else {
        [
            (1.0 - xi) * (1.0 - eta) / 4.0,
            (1.0 + xi) * (1.0 - eta) / 4.0,
            (1.0 + xi) * (1.0 + eta) / 4.0,
            (1.0 - xi) * (1.0 + eta) / 4.0,
        ]
    }
}

fn shape_ref_grads(dim: usize, r: [f64; 2]) -> [[f64; 2]; 4] {
    let [xi, eta] = r;
    if dim == 1 {
        [[-0.5, 0.0], [0.5, 0.0], [0.0; 2], [0.0; 2]]
    } else {
        [
            [-(1.0 - eta) / 4.0, -(1.0 - xi) / 4.0],
            [(1.0 - eta) / 4.0, -(1.0 + xi) / 4.0],
            [(1.0 + eta) / 4.0, (1.0 + xi) / 4.0],
            [-(1.0 + eta) / 4.0, (1.0 - xi) / 4.0],
        ]
    }
}

/// Geometry of every element evaluated at the points of a quadrature rule.
#[derive(Clone, Debug)]
pub struct ElementQuadrature {
    n_qp: usize,
    npe: usize,
    /// `[q * npe + a]`, identical on every element.
    shape: Vec<f64>,
    /// `[e * n_qp + q]`: weight times Jacobian determinant.
    jxw: Vec<f64>,
    /// `[(e * n_qp + q) * npe + a]`: physical shape gradients.
    grads: Vec<[f64; 2]>,
    /// `[e * n_qp + q]`: physical quadrature points.
    points: Vec<Point>,
}

impl ElementQuadrature {
    pub fn new(mesh: &Mesh, rule: &QuadratureRule) -> Self {
        let dim = mesh.dim();
        let npe = mesh.nodes_per_element();
        let n_qp = rule.len();
        let ne = mesh.n_elements();
        let mut shape = Vec::with_capacity(n_qp * npe);
        for p in &rule.points {
            shape.extend_from_slice(&shape_values(dim, *p)[..npe]);
        }
        let mut jxw = Vec::with_capacity(ne * n_qp);
        let mut grads = Vec::with_capacity(ne * n_qp * npe);
        let mut points = Vec::with_capacity(ne * n_qp);
        for e in 0..ne {
            let c = mesh.element_coords(e);
            for (q, r) in rule.points.iter().enumerate() {
                let n = &shape[q * npe..(q + 1) * npe];
                let mut x = [0.0; 2];
                for a in 0..npe {
                    x[0] += n[a] * c[a][0];
                    x[1] += n[a] * c[a][1];
                }
                points.push(x);
                let dref = shape_ref_grads(dim, *r);
                if dim == 1 {
                    let len = c[1][0] - c[0][0];
                    jxw.push(rule.weights[q] * len / 2.0);
                    for g in dref.iter().take(npe) {
                        grads.push([g[0] * 2.0 / len, 0.0]);
                    }
                } else {
                    let jac = quad_jacobian(&c, r[0], r[1]);
                    let m = jac.m;
                    let inv_det = 1.0 / jac.det;
                    jxw.push(rule.weights[q] * jac.det);
                    // grad = J^{-T} grad_ref
                    for g in dref.iter().take(npe) {
                        grads.push([
                            inv_det * (m[1][1] * g[0] - m[1][0] * g[1]),
                            inv_det * (-m[0][1] * g[0] + m[0][0] * g[1]),
                        ]);
                    }
                }
            }
        }
        ElementQuadrature { n_qp, npe, shape, jxw, grads, points }
    }

    pub fn n_qp(&self) -> usize {
        self.n_qp
    }

    pub fn shape(&self, q: usize) -> &[f64] {
        &self.shape[q * self.npe..(q + 1) * self.npe]
    }

    pub fn jxw(&self, e: usize, q: usize) -> f64 {
        self.jxw[e * self.n_qp + q]
    }

    pub fn grads(&self, e: usize, q: usize) -> &[[f64; 2]] {
        let k = (e * self.n_qp + q) * self.npe;
        &self.grads[k..k + self.npe]
    }

    pub fn point(&self, e: usize, q: usize) -> Point {
        self.points[e * self.n_qp + q]
    }
}

/// Bucket grid over element bounding boxes for point location.
#[derive(Debug)]
struct Locator {
    origin: [f64; 2],
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn new(mesh: &Mesh) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in mesh.nodes() {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let ne = mesh.n_elements().max(1);
        let dims = if mesh.dim() == 1 {
            [ne, 1]
        } else {
            let s = (ne as f64).sqrt().ceil() as usize;
            [s, s]
        };
        let cell = [
            ((hi[0] - lo[0]) / dims[0] as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / dims[1] as f64).max(f64::MIN_POSITIVE),
        ];
        let mut loc = Locator { origin: lo, cell, dims, buckets: vec![Vec::new(); dims[0] * dims[1]] };
        for e in 0..mesh.n_elements() {
            let mut blo = [f64::INFINITY; 2];
            let mut bhi = [f64::NEG_INFINITY; 2];
            for &i in mesh.element(e) {
                let p = mesh.node(i);
                for d in 0..2 {
                    blo[d] = blo[d].min(p[d]);
                    bhi[d] = bhi[d].max(p[d]);
                }
            }
            let (i0, j0) = loc.bucket_of(blo, -1e-9);
            let (i1, j1) = loc.bucket_of(bhi, 1e-9);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    loc.buckets[j * dims[0] + i].push(e);
                }
            }
        }
        loc
    }

    fn bucket_of(&self, p: Point, pad: f64) -> (usize, usize) {
        let idx = |d: usize| {
            let s = (p[d] - self.origin[d]) / self.cell[d] + pad;
            (s.floor().max(0.0) as usize).min(self.dims[d] - 1)
        };
        (idx(0), idx(1))
    }

    fn candidates(&self, p: Point) -> &[usize] {
        let (i, j) = self.bucket_of(p, 0.0);
        &self.buckets[j * self.dims[0] + i]
    }
}

/// Reference coordinates of `p` in element `e`, if `p` lies inside it.
fn inverse_map(mesh: &Mesh, e: usize, p: Point) -> Option<[f64; 2]> {
    let c = mesh.element_coords(e);
    if mesh.dim() == 1 {
        let (xl, xr) = (c[0][0], c[1][0]);
        let xi = (2.0 * p[0] - xl - xr) / (xr - xl);
        return (xi.abs() <= 1.0 + REF_TOL).then_some([xi.clamp(-1.0, 1.0), 0.0]);
    }
    let mut r = [0.0, 0.0];
    for _ in 0..30 {
        let n = shape_values(2, r);
        let mut f = [-p[0], -p[1]];
        for a in 0..4 {
            f[0] += n[a] * c[a][0];
            f[1] += n[a] * c[a][1];
        }
        let jac = quad_jacobian(&c, r[0], r[1]);
        let m = jac.m;
        let dxi = (m[1][1] * f[0] - m[0][1] * f[1]) / jac.det;
        let deta = (-m[1][0] * f[0] + m[0][0] * f[1]) / jac.det;
        r[0] -= dxi;
        r[1] -= deta;
        if dxi.abs().max(deta.abs()) < 1e-15 {
            break;
        }
        if r[0].abs() > 3.0 || r[1].abs() > 3.0 {
            return None;
        }
    }
    (r[0].abs() <= 1.0 + REF_TOL && r[1].abs() <= 1.0 + REF_TOL)
        .then_some([r[0].clamp(-1.0, 1.0), r[1].clamp(-1.0, 1.0)])
}

/// P1 (1D) or Q1 (2D) Lagrange space with one degree of freedom per mesh node.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    dirichlet: Vec<usize>,
    is_dirichlet: Vec<bool>,
    pattern: Arc<CsrPattern>,
    /// `[e * npe * npe + a * npe + b]`: value slot of local entry `(a, b)`.
    scatter: Vec<usize>,
    quadrature: ElementQuadrature,
    locator: OnceLock<Locator>,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let n = mesh.n_nodes();
        let mut is_dirichlet = vec![false; n];
        for f in mesh.facets_with(BoundaryTag::Dirichlet) {
            for &i in &f.nodes {
                is_dirichlet[i] = true;
            }
        }
        let dirichlet = (0..n).filter(|&i| is_dirichlet[i]).collect();

        let mut rows = vec![Vec::new(); n];
        for el in mesh.elements() {
            for &i in el {
                rows[i].extend_from_slice(el);
            }
        }
        let pattern = Arc::new(CsrPattern::from_rows(n, rows));
        let npe = mesh.nodes_per_element();
        let mut scatter = Vec::with_capacity(mesh.n_elements() * npe * npe);
        for el in mesh.elements() {
            for &i in el {
                for &j in el {
                    scatter.push(pattern.position(i, j).expect("element pair in pattern"));
                }
            }
        }
        let quadrature = ElementQuadrature::new(&mesh, &QuadratureRule::default_for(mesh.dim()));
        FeSpace { mesh, dirichlet, is_dirichlet, pattern, scatter, quadrature, locator: OnceLock::new() }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_nodes()
    }

    /// Nodes on Dirichlet-tagged facets, ascending.
    pub fn dirichlet_dofs(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.is_dirichlet
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn quadrature(&self) -> &ElementQuadrature {
        &self.quadrature
    }

    pub(crate) fn scatter(&self, e: usize) -> &[usize] {
        let npe2 = self.mesh.nodes_per_element().pow(2);
        &self.scatter[e * npe2..(e + 1) * npe2]
    }

    pub fn h(&self) -> f64 {
        self.mesh.h_max()
    }

    /// Element containing `p` and the reference coordinates of `p` in it.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 2])> {
        let loc = self.locator.get_or_init(|| Locator::new(&self.mesh));
        loc.candidates(p).iter().find_map(|&e| inverse_map(&self.mesh, e, p).map(|r| (e, r)))
    }

    /// Sets the Dirichlet entries of `v` to zero.
    pub fn zero_dirichlet(&self, v: &mut [f64]) {
        for &i in &self.dirichlet {
            v[i] = 0.0;
        }
    }
}

/// Coefficient vector of a function in an [`FeSpace`].
#[derive(Clone, Debug)]
pub struct FeFunction {
    space: Arc<FeSpace>,
    dofs: Vec<f64>,
}

impl FeFunction {
    pub fn new(space: Arc<FeSpace>, dofs: Vec<f64>) -> Result<Self> {
        if dofs.len() != space.n_dofs() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for a space with {} dofs",
                dofs.len(),
                space.n_dofs()
            )));
        }
        Ok(FeFunction { space, dofs })
    }

    pub fn zeros(space: Arc<FeSpace>) -> Self {
        let n = space.n_dofs();
        FeFunction { space, dofs: vec![0.0; n] }
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn dofs(&self) -> &[f64] {
        &self.dofs
    }

    pub fn dofs_mut(&mut self) -> &mut [f64] {
        &mut self.dofs
    }

    pub fn into_dofs(self) -> Vec<f64> {
        self.dofs
    }

    /// Point value of the piecewise (bi)linear interpolant.
    pub fn eval(&self, p: Point) -> Result<f64> {
        eval(self, p)
    }
}

/// Point value of `f` at `p`.
pub fn eval(f: &FeFunction, p: Point) -> Result<f64> {
    let space = &f.space;
    let (e, r) = space.locate(p).ok_or(Error::OutOfDomain { x: p[0], y: p[1] })?;
    let n = shape_values(space.dim(), r);
    Ok(space.mesh.element(e).iter().zip(n).map(|(&i, s)| s * f.dofs[i]).sum())
}

/// Nodal interpolant `dofs_i = g(node_i)`.
pub fn nodal_interpolate<G: Fn(Point) -> f64>(space: &Arc<FeSpace>, g: G) -> Result<FeFunction> {
    let mut dofs = Vec::with_capacity(space.n_dofs());
    for (i, &p) in space.mesh.nodes().iter().enumerate() {
        let v = g(p);
        if !v.is_finite() {
            return Err(Error::InvalidData(format!("interpolated function is {v} at node {i}")));
        }
        dofs.push(v);
    }
    FeFunction::new(space.clone(), dofs)
}

/// Nodal interpolant into `S_h`: Dirichlet dofs are set to zero afterwards.
pub fn nodal_interpolate_sh<G: Fn(Point) -> f64>(space: &Arc<FeSpace>, g: G) -> Result<FeFunction> {
    let mut f = nodal_interpolate(space, g)?;
    space.zero_dirichlet(&mut f.dofs);
    Ok(f)
}

/// Ritz projection: `(grad R_h u, grad phi) = (grad u, grad phi)` for all
/// `phi` in `S_h`, given the exact gradient of `u`.
pub fn ritz_project<G>(space: &Arc<FeSpace>, grad_u: G) -> Result<FeFunction>
where
    G: Fn(Point) -> [f64; 2] + Sync + Send,
{
    let cfg = SolverConfig { tol: 1e-12, ..SolverConfig::default() };
    ritz_project_with(space, grad_u, &cfg)
}

pub fn ritz_project_with<G>(space: &Arc<FeSpace>, grad_u: G, cfg: &SolverConfig) -> Result<FeFunction>
where
    G: Fn(Point) -> [f64; 2] + Sync + Send,
{
    if space.dirichlet.is_empty() {
        return Err(Error::InvalidArgument("Ritz projection needs a nonempty Dirichlet boundary".into()));
    }
    let k = assembly::stiffness(space);
    let b = assembly::gradient_load(space, cfg.exec, &grad_u);
    let (k, b) = assembly::apply_dirichlet(k, b, space.dirichlet_dofs());
    let mut x = vec![0.0; space.n_dofs()];
    pcg_solve(&k, &b, &mut x, cfg)?;
    space.zero_dirichlet(&mut x);
    FeFunction::new(space.clone(), x)
}

/// Interpolation operator from `coarse` to the nodes of `fine`, as an
/// `n_fine x n_coarse` matrix.
pub fn transfer_matrix(coarse: &FeSpace, fine: &FeSpace) -> Result<SparseMatrix> {
    let dim = coarse.dim();
    let rows = Exec::default().map_collect(fine.n_dofs(), |i| {
        let p = fine.mesh.node(i);
        coarse.locate(p).map(|(e, r)| {
            let n = shape_values(dim, r);
            coarse.mesh.element(e).iter().zip(n).map(|(&j, s)| (j, s)).collect::<Vec<_>>()
        })
    });
    let mut triplets = Vec::with_capacity(fine.n_dofs() * coarse.mesh.nodes_per_element());
    for (i, row) in rows.into_iter().enumerate() {
        let p = fine.mesh.node(i);
        let row = row.ok_or(Error::OutOfDomain { x: p[0], y: p[1] })?;
        triplets.extend(row.into_iter().filter(|&(_, s)| s != 0.0).map(|(j, s)| (i, j, s)));
    }
    SparseMatrix::from_triplets(fine.n_dofs(), coarse.n_dofs(), &triplets)
}

/// Evaluates `f` at every node of `fine`.
pub fn transfer(f: &FeFunction, fine: &Arc<FeSpace>) -> Result<FeFunction> {
    if Arc::ptr_eq(&f.space, fine) {
        return Ok(f.clone());
    }
    let p = transfer_matrix(&f.space, fine)?;
    FeFunction::new(fine.clone(), p.spmv(&f.dofs)?)
}
