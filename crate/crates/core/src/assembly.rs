//! Assembly of the semi-discrete operators: stiffness, weighted mass, boundary
//! mass, volume and boundary loads, and homogeneous Dirichlet elimination.
//!
//! Element contributions are computed independently (in parallel when the
//! `parallel` feature is on) and scattered into the global matrix in element
//! order, so the result does not depend on the execution policy.

use crate::exec::Exec;
use crate::fespace::FeSpace;
use crate::linalg::SparseMatrix;
use crate::mesh::{distance, BoundaryTag, Point};

/// Element matrix; only the leading `npe x npe` block is used.
pub type LocalMatrix = [[f64; 4]; 4];

/// A coefficient evaluated at quadrature points.
#[derive(Clone, Copy)]
pub enum CoefficientField<'a> {
    Constant(f64),
    /// Nodal values of a function in the space, interpolated at quadrature points.
    Nodal(&'a [f64]),
    /// Evaluated directly at the physical quadrature points.
    Function(&'a (dyn Fn(Point) -> f64 + Sync)),
}

impl<'a> CoefficientField<'a> {
    #[inline]
    pub fn at(&self, space: &FeSpace, e: usize, q: usize) -> f64 {
        match *self {
            CoefficientField::Constant(c) => c,
            CoefficientField::Nodal(d) => interpolate_at(space, d, e, q),
            CoefficientField::Function(f) => f(space.quadrature().point(e, q)),
        }
    }
}

/// Interpolates nodal values `d` at quadrature point `q` of element `e`.
#[inline]
pub fn interpolate_at(space: &FeSpace, d: &[f64], e: usize, q: usize) -> f64 {
    let n = space.quadrature().shape(q);
    space.mesh().element(e).iter().zip(n).map(|(&i, s)| s * d[i]).sum()
}

impl<'a> From<&'a crate::fespace::FeFunction> for CoefficientField<'a> {
    fn from(f: &'a crate::fespace::FeFunction) -> Self {
        CoefficientField::Nodal(f.dofs())
    }
}

pub fn local_stiffness(space: &FeSpace, e: usize) -> LocalMatrix {
    let quad = space.quadrature();
    let npe = space.mesh().nodes_per_element();
    let mut k = [[0.0; 4]; 4];
    for q in 0..quad.n_qp() {
        let w = quad.jxw(e, q);
        let g = quad.grads(e, q);
        for a in 0..npe {
            for b in 0..npe {
                k[a][b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
    }
    k
}

/// Element mass matrix weighted by `weight(q)` at each quadrature point.
#[inline]
pub fn local_weighted_mass(space: &FeSpace, e: usize, weight: impl Fn(usize) -> f64) -> LocalMatrix {
    let quad = space.quadrature();
    let npe = space.mesh().nodes_per_element();
    let mut m = [[0.0; 4]; 4];
    for q in 0..quad.n_qp() {
        let w = quad.jxw(e, q) * weight(q);
        let n = quad.shape(q);
        for a in 0..npe {
            let wa = w * n[a];
            for b in 0..npe {
                m[a][b] += wa * n[b];
            }
        }
    }
    m
}

/// Assembles `local(e)` over `elements` (all elements when `None`).
pub fn assemble_matrix<F>(space: &FeSpace, exec: Exec, elements: Option<&[usize]>, local: F) -> SparseMatrix
where
    F: Fn(usize) -> LocalMatrix + Sync + Send,
{
    let npe = space.mesh().nodes_per_element();
    let ids: Vec<usize> = match elements {
        Some(ids) => ids.to_vec(),
        None => (0..space.mesh().n_elements()).collect(),
    };
    let locals = exec.map_collect(ids.len(), |k| local(ids[k]));
    let mut m = SparseMatrix::zeros(space.pattern().clone());
    let values = m.values_mut();
    for (&e, lm) in ids.iter().zip(&locals) {
        let slots = space.scatter(e);
        for a in 0..npe {
            for b in 0..npe {
                values[slots[a * npe + b]] += lm[a][b];
            }
        }
    }
    m
}

/// `K_ij = (grad phi_i, grad phi_j)`, without the `c^2` factor.
pub fn stiffness(space: &FeSpace) -> SparseMatrix {
    stiffness_with(space, Exec::default())
}

pub fn stiffness_with(space: &FeSpace, exec: Exec) -> SparseMatrix {
    assemble_matrix(space, exec, None, |e| local_stiffness(space, e))
}

/// Unweighted mass matrix `(phi_i, phi_j)`.
pub fn mass(space: &FeSpace) -> SparseMatrix {
    weighted_mass(space, CoefficientField::Constant(1.0))
}

/// `M(w)_ij = (w phi_i, phi_j)`.
pub fn weighted_mass(space: &FeSpace, w: CoefficientField<'_>) -> SparseMatrix {
    weighted_mass_with(space, Exec::default(), w)
}

pub fn weighted_mass_with(space: &FeSpace, exec: Exec, w: CoefficientField<'_>) -> SparseMatrix {
    weighted_mass_by(space, exec, |e, q| w.at(space, e, q))
}

/// Weighted mass matrix with the weight given per `(element, quadrature point)`.
pub fn weighted_mass_by<W>(space: &FeSpace, exec: Exec, weight: W) -> SparseMatrix
where
    W: Fn(usize, usize) -> f64 + Sync + Send,
{
    assemble_matrix(space, exec, None, |e| local_weighted_mass(space, e, |q| weight(e, q)))
}

/// `B_ij = int_{Gamma_tag} phi_i phi_j ds`. All zeros if no facet carries `tag`.
pub fn boundary_mass(space: &FeSpace, tag: BoundaryTag) -> SparseMatrix {
    let mesh = space.mesh();
    let mut m = SparseMatrix::zeros(space.pattern().clone());
    let pattern = space.pattern().clone();
    let values = m.values_mut();
    for f in mesh.facets_with(tag) {
        match *f.nodes.as_slice() {
            [i] => values[pattern.position(i, i).expect("diagonal")] += 1.0,
            [i, j] => {
                let len = distance(mesh.node(i), mesh.node(j));
                values[pattern.position(i, i).expect("diagonal")] += len / 3.0;
                values[pattern.position(j, j).expect("diagonal")] += len / 3.0;
                values[pattern.position(i, j).expect("edge in pattern")] += len / 6.0;
                values[pattern.position(j, i).expect("edge in pattern")] += len / 6.0;
            }
            _ => unreachable!("facets have one or two nodes"),
        }
    }
    m
}

/// `b_i = (f, phi_i)`.
pub fn load(space: &FeSpace, f: CoefficientField<'_>) -> Vec<f64> {
    load_with(space, Exec::default(), f)
}

pub fn load_with(space: &FeSpace, exec: Exec, f: CoefficientField<'_>) -> Vec<f64> {
    load_by(space, exec, |e, q| f.at(space, e, q))
}

/// Load vector with the integrand given per `(element, quadrature point)`.
pub fn load_by<F>(space: &FeSpace, exec: Exec, f: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    let quad = space.quadrature();
    let npe = space.mesh().nodes_per_element();
    let locals = exec.map_collect(space.mesh().n_elements(), |e| {
        let mut b = [0.0; 4];
        for q in 0..quad.n_qp() {
            let w = quad.jxw(e, q) * f(e, q);
            for (ba, na) in b.iter_mut().zip(quad.shape(q)) {
                *ba += w * na;
            }
        }
        b
    });
    scatter_vector(space, &locals, npe)
}

/// `b_i = (grad_u, grad phi_i)` for a vector field given pointwise.
pub fn gradient_load<G>(space: &FeSpace, exec: Exec, grad_u: &G) -> Vec<f64>
where
    G: Fn(Point) -> [f64; 2] + Sync + Send,
{
    let quad = space.quadrature();
    let npe = space.mesh().nodes_per_element();
    let locals = exec.map_collect(space.mesh().n_elements(), |e| {
        let mut b = [0.0; 4];
        for q in 0..quad.n_qp() {
            let w = quad.jxw(e, q);
            let g = grad_u(quad.point(e, q));
            for (ba, gr) in b.iter_mut().zip(quad.grads(e, q)) {
                *ba += w * (g[0] * gr[0] + g[1] * gr[1]);
            }
        }
        b
    });
    scatter_vector(space, &locals, npe)
}

fn scatter_vector(space: &FeSpace, locals: &[[f64; 4]], npe: usize) -> Vec<f64> {
    let mut out = vec![0.0; space.n_dofs()];
    for (el, b) in space.mesh().elements().zip(locals) {
        for a in 0..npe {
            out[el[a]] += b[a];
        }
    }
    out
}

/// `b_i = g * int_{Gamma_tag} phi_i ds` for a spatially constant flux `g`.
pub fn neumann_load(space: &FeSpace, tag: BoundaryTag, g: f64) -> Vec<f64> {
    let mesh = space.mesh();
    let mut b = vec![0.0; space.n_dofs()];
    for f in mesh.facets_with(tag) {
        match *f.nodes.as_slice() {
            [i] => b[i] += g,
            [i, j] => {
                let half = 0.5 * distance(mesh.node(i), mesh.node(j));
                b[i] += g * half;
                b[j] += g * half;
            }
            _ => unreachable!("facets have one or two nodes"),
        }
    }
    b
}

/// Symmetric elimination of homogeneous Dirichlet dofs: rows and columns are
/// zeroed, the diagonal set to one and the right-hand side entry to zero.
pub fn apply_dirichlet(mut a: SparseMatrix, mut b: Vec<f64>, dofs: &[usize]) -> (SparseMatrix, Vec<f64>) {
    let mut mask = vec![false; a.n_rows()];
    for &i in dofs {
        mask[i] = true;
    }
    apply_dirichlet_mask(&mut a, &mut b, &mask);
    (a, b)
}

pub fn apply_dirichlet_mask(a: &mut SparseMatrix, b: &mut [f64], mask: &[bool]) {
    if !mask.iter().any(|&m| m) {
        return;
    }
    let pattern = a.pattern().clone();
    let cols = pattern.col_indices();
    let values = a.values_mut();
    for (i, &mi) in mask.iter().enumerate() {
        for k in pattern.row(i) {
            let j = cols[k];
            if mi || mask[j] {
                values[k] = if i == j { 1.0 } else { 0.0 };
            }
        }
        if mi {
            b[i] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::FeSpace;
    use crate::linalg::pcg;
    use crate::mesh::{focus_arc_length, focus_mesh, interval_mesh, rectangle_mesh, Mesh};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn interval(n: usize) -> FeSpace {
        FeSpace::new(Arc::new(interval_mesh(1.0, n, BoundaryTag::Dirichlet).unwrap()))
    }

    fn assert_dense_eq(a: &SparseMatrix, expected: &[[f64; 3]; 3], tol: f64) {
        let d = a.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert!((d[i][j] - expected[i][j]).abs() <= tol, "({i},{j}): {} vs {}", d[i][j], expected[i][j]);
            }
        }
    }

    #[test]
    fn stiffness_two_elements() {
        let k = stiffness(&interval(2));
        assert_dense_eq(&k, &[[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]], 1e-13);
        let ones = vec![1.0; 3];
        assert!(k.spmv(&ones).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn stiffness_unit_square() {
        let space = FeSpace::new(Arc::new(rectangle_mesh(0.0, 1.0, 0.0, 1.0, 1, 1, BoundaryTag::Dirichlet).unwrap()));
        let k = stiffness(&space);
        for d in k.diagonal() {
            assert_relative_eq!(d, 2.0 / 3.0, max_relative = 1e-14);
        }
        assert_relative_eq!(k.get(0, 1), -1.0 / 6.0, max_relative = 1e-13);
        assert_relative_eq!(k.get(0, 2), -1.0 / 6.0, max_relative = 1e-13);
        assert_relative_eq!(k.get(0, 3), -1.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn mass_two_elements() {
        let m = mass(&interval(2));
        let e = [[2.0 / 12.0, 1.0 / 12.0, 0.0], [1.0 / 12.0, 4.0 / 12.0, 1.0 / 12.0], [0.0, 1.0 / 12.0, 2.0 / 12.0]];
        assert_dense_eq(&m, &e, 1e-15);
        let total: f64 = m.values().iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn weighted_mass_linear_weight() {
        let space = interval(1);
        let w = |p: Point| p[0];
        let m = weighted_mass(&space, CoefficientField::Function(&w));
        // int_0^1 x (1-x)^2 = 1/12, int x^2 (1-x) = 1/12, int x^3 = 1/4
        assert_relative_eq!(m.get(0, 0), 1.0 / 12.0, max_relative = 1e-14);
        assert_relative_eq!(m.get(0, 1), 1.0 / 12.0, max_relative = 1e-14);
        assert_relative_eq!(m.get(1, 1), 1.0 / 4.0, max_relative = 1e-14);
        let nodal = [0.0, 1.0];
        let mn = weighted_mass(&space, CoefficientField::Nodal(&nodal));
        for (a, b) in m.values().iter().zip(mn.values()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-14);
        }
    }

    #[test]
    fn weighted_mass_with_unit_weight_is_mass() {
        let space = FeSpace::new(Arc::new(focus_mesh(1).unwrap()));
        let ones = vec![1.0; space.n_dofs()];
        let a = weighted_mass(&space, CoefficientField::Nodal(&ones));
        let b = mass(&space);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-14 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn boundary_mass_examples() {
        let space = interval(3);
        let b = boundary_mass(&space, BoundaryTag::Dirichlet);
        assert_eq!(b.get(0, 0), 1.0);
        assert_eq!(b.get(3, 3), 1.0);
        assert_eq!(b.values().iter().filter(|v| **v != 0.0).count(), 2);
        assert!(boundary_mass(&space, BoundaryTag::Absorbing).values().iter().all(|&v| v == 0.0));

        let l = 2.5;
        let sq = FeSpace::new(Arc::new(rectangle_mesh(0.0, l, 0.0, 1.0, 1, 1, BoundaryTag::Absorbing).unwrap()));
        let bm = boundary_mass(&sq, BoundaryTag::Absorbing);
        // node 0 touches the bottom edge (length l) and the left edge (length 1)
        assert_relative_eq!(bm.get(0, 1), l / 6.0, max_relative = 1e-15);
        assert_relative_eq!(bm.get(0, 0), (l + 1.0) / 3.0, max_relative = 1e-15);
        let total: f64 = bm.values().iter().sum();
        assert_relative_eq!(total, 2.0 * l + 2.0, max_relative = 1e-14);
    }

    #[test]
    fn boundary_mass_single_edge_block() {
        let nodes = vec![[0.0, 0.0], [3.0, 0.0], [3.0, 1.0], [0.0, 1.0]];
        let facets = vec![crate::mesh::Facet { nodes: vec![0, 1], tag: BoundaryTag::NeumannSource }];
        let mesh = Mesh::new(2, nodes, vec![vec![0, 1, 2, 3]], facets).unwrap();
        let space = FeSpace::new(Arc::new(mesh));
        let b = boundary_mass(&space, BoundaryTag::NeumannSource);
        assert_relative_eq!(b.get(0, 0), 1.0, max_relative = 1e-15);
        assert_relative_eq!(b.get(1, 1), 1.0, max_relative = 1e-15);
        assert_relative_eq!(b.get(0, 1), 0.5, max_relative = 1e-15);
        assert_eq!(b.get(2, 2), 0.0);
    }

    #[test]
    fn load_examples() {
        let space = interval(2);
        assert!(load(&space, CoefficientField::Constant(0.0)).iter().all(|&v| v == 0.0));
        let ones = load(&space, CoefficientField::Constant(1.0));
        assert_relative_eq!(ones.iter().sum::<f64>(), 1.0, max_relative = 1e-15);
        let x = |p: Point| p[0];
        let b = load(&space, CoefficientField::Function(&x));
        assert_relative_eq!(b[0], 1.0 / 24.0, max_relative = 1e-14);
        assert_relative_eq!(b[1], 1.0 / 4.0, max_relative = 1e-14);
        assert_relative_eq!(b[2], 5.0 / 24.0, max_relative = 1e-14);
    }

    #[test]
    fn neumann_load_examples() {
        let space = FeSpace::new(Arc::new(focus_mesh(1).unwrap()));
        assert!(neumann_load(&space, BoundaryTag::NeumannSource, 0.0).iter().all(|&v| v == 0.0));
        let b = neumann_load(&space, BoundaryTag::NeumannSource, 1.0);
        let total: f64 = b.iter().sum();
        // 20 chords of the arc: relative chord deficit ~ (dtheta)^2 / 24
        assert_relative_eq!(total, focus_arc_length(), max_relative = 2e-4);
        assert!(total < focus_arc_length());

        let sq = FeSpace::new(Arc::new(rectangle_mesh(0.0, 1.5, 0.0, 1.0, 3, 2, BoundaryTag::NeumannSource).unwrap()));
        let s: f64 = neumann_load(&sq, BoundaryTag::NeumannSource, 1.0).iter().sum();
        assert_relative_eq!(s, 5.0, max_relative = 1e-14);
    }

    #[test]
    fn dirichlet_elimination() {
        let space = interval(4);
        let k = stiffness(&space);
        let b = load(&space, CoefficientField::Constant(1.0));

        let (a0, b0) = apply_dirichlet(k.clone(), b.clone(), &[]);
        assert_eq!(a0, k);
        assert_eq!(b0, b);

        let all: Vec<usize> = (0..5).collect();
        let (ai, bi) = apply_dirichlet(k.clone(), b.clone(), &all);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(ai.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!(bi.iter().all(|&v| v == 0.0));

        let (a, rhs) = apply_dirichlet(k, b, space.dirichlet_dofs());
        assert!(a.is_symmetric(0.0));
        let (x, _) = pcg(&a, &rhs, 1e-12, 100).unwrap();
        assert_eq!(x[0], 0.0);
        assert_eq!(x[4], 0.0);
    }
}
