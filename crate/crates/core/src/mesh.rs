//! Interval meshes and structured quadrilateral meshes with tagged boundaries.

use std::fmt;
use std::io::{self, Write};

use crate::error::{Error, Result};

/// A point in the plane. One-dimensional meshes store `y = 0`.
pub type Point = [f64; 2];

/// Channel length of the 1D propagation experiment (m).
pub const CHANNEL_LENGTH: f64 = 0.2;
/// Elements of the coarsest channel mesh.
pub const CHANNEL_BASE_ELEMENTS: usize = 100;

/// Focus domain: `[0, FOCUS_WIDTH] x [arc, FOCUS_HEIGHT]`.
pub const FOCUS_WIDTH: f64 = 0.04;
pub const FOCUS_HEIGHT: f64 = 0.05;
/// Centre of the transducer circle (m).
pub const FOCUS_CENTER: Point = [0.02, 0.04];
/// Squared radius of the transducer circle (m^2).
pub const FOCUS_RADIUS_SQ: f64 = 0.002;
/// Cells across (x) and along the propagation direction (y) on level 1.
pub const FOCUS_BASE_CELLS: (usize, usize) = (20, 35);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Dirichlet,
    NeumannSource,
    Absorbing,
}

impl BoundaryTag {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Dirichlet => "dirichlet",
            BoundaryTag::NeumannSource => "neumann",
            BoundaryTag::Absorbing => "absorbing",
        }
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A boundary facet: a single node in 1D, an edge (two nodes) in 2D.
#[derive(Clone, Debug, PartialEq)]
pub struct Facet {
    pub nodes: Vec<usize>,
    pub tag: BoundaryTag,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    nodes: Vec<Point>,
    /// Flat connectivity, `nodes_per_element` entries per element.
    connectivity: Vec<usize>,
    facets: Vec<Facet>,
    h_max: f64,
}

impl Mesh {
    /// Builds a mesh from raw parts and checks its invariants.
    ///
    /// Segments are given as `[left, right]`, quads counterclockwise.
    pub fn new(dim: usize, nodes: Vec<Point>, elements: Vec<Vec<usize>>, facets: Vec<Facet>) -> Result<Self> {
        let npe = match dim {
            1 => 2,
            2 => 4,
            _ => return Err(Error::InvalidArgument(format!("unsupported dimension {dim}"))),
        };
        let mut connectivity = Vec::with_capacity(elements.len() * npe);
        for (e, el) in elements.iter().enumerate() {
            if el.len() != npe {
                return Err(Error::InvalidArgument(format!("element {e} has {} nodes, expected {npe}", el.len())));
            }
            connectivity.extend_from_slice(el);
        }
        let mut mesh = Mesh { dim, nodes, connectivity, facets, h_max: 0.0 };
        mesh.h_max = mesh.compute_h_max();
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes_per_element(&self) -> usize {
        if self.dim == 1 {
            2
        } else {
            4
        }
    }

    pub fn n_elements(&self) -> usize {
        self.connectivity.len() / self.nodes_per_element()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.nodes_per_element();
        &self.connectivity[e * npe..(e + 1) * npe]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.connectivity.chunks_exact(self.nodes_per_element())
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn facets_with(&self, tag: BoundaryTag) -> impl Iterator<Item = &Facet> + '_ {
        self.facets.iter().filter(move |f| f.tag == tag)
    }

    /// Maximum element diameter.
    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn element_diameter(&self, e: usize) -> f64 {
        let el = self.element(e);
        let mut d: f64 = 0.0;
        for (a, &i) in el.iter().enumerate() {
            for &j in &el[a + 1..] {
                d = d.max(distance(self.nodes[i], self.nodes[j]));
            }
        }
        d
    }

    fn compute_h_max(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.element_diameter(e)).fold(0.0, f64::max)
    }

    /// Corner coordinates of element `e`.
    pub fn element_coords(&self, e: usize) -> [Point; 4] {
        let mut out = [[0.0; 2]; 4];
        for (o, &i) in out.iter_mut().zip(self.element(e)) {
            *o = self.nodes[i];
        }
        out
    }

    /// Checks positivity of every element, facet validity and the stored `h_max`.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.connectivity.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument("element references a missing node".into()));
        }
        for e in 0..self.n_elements() {
            if !self.element_is_positive(e) {
                return Err(Error::InvalidArgument(format!("element {e} has non-positive measure")));
            }
        }
        let boundary = self.boundary_entities();
        for f in &self.facets {
            if f.nodes.len() != self.dim || f.nodes.iter().any(|&i| i >= n) {
                return Err(Error::InvalidArgument(format!("malformed facet {:?}", f.nodes)));
            }
            if !boundary.contains(&sorted_key(&f.nodes)) {
                return Err(Error::InvalidArgument(format!("facet {:?} is not on the boundary", f.nodes)));
            }
        }
        if (self.h_max - self.compute_h_max()).abs() > 0.0 {
            return Err(Error::InvalidArgument("stale h_max".into()));
        }
        Ok(())
    }

    fn element_is_positive(&self, e: usize) -> bool {
        let c = self.element_coords(e);
        if self.dim == 1 {
            return c[1][0] > c[0][0];
        }
        // The bilinear Jacobian determinant is affine in each reference
        // coordinate, so its minimum is attained at a corner.
        let g = 1.0 / 3f64.sqrt();
        let corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
        let gauss = [(-g, -g), (g, -g), (g, g), (-g, g)];
        corners.iter().chain(gauss.iter()).all(|&(xi, eta)| quad_jacobian(&c, xi, eta).det > 0.0)
    }

    /// Boundary entities as sorted node keys: end nodes in 1D, edges used by
    /// exactly one element in 2D.
    pub fn boundary_entities(&self) -> std::collections::HashSet<Vec<usize>> {
        use std::collections::HashMap;
        let mut count: HashMap<Vec<usize>, usize> = HashMap::new();
        for el in self.elements() {
            if self.dim == 1 {
                for &i in el {
                    *count.entry(vec![i]).or_default() += 1;
                }
            } else {
                for k in 0..4 {
                    *count.entry(sorted_key(&[el[k], el[(k + 1) % 4]])).or_default() += 1;
                }
            }
        }
        count.into_iter().filter(|(_, c)| *c == 1).map(|(k, _)| k).collect()
    }

    /// Writes the plain-text mesh dump: a header `dim n_nodes n_elems n_facets`,
    /// then node, element and facet lines.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{} {} {} {}", self.dim, self.n_nodes(), self.n_elements(), self.facets.len())?;
        for p in &self.nodes {
            if self.dim == 1 {
                writeln!(w, "{}", p[0])?;
            } else {
                writeln!(w, "{} {}", p[0], p[1])?;
            }
        }
        for el in self.elements() {
            let line: Vec<String> = el.iter().map(|i| i.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        for f in &self.facets {
            let line: Vec<String> = f.nodes.iter().map(|i| i.to_string()).collect();
            writeln!(w, "{} {}", f.tag, line.join(" "))?;
        }
        Ok(())
    }
}

fn sorted_key(nodes: &[usize]) -> Vec<usize> {
    let mut k = nodes.to_vec();
    k.sort_unstable();
    k
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Jacobian of the bilinear map at a reference point.
#[derive(Clone, Copy, Debug)]
pub struct Jacobian {
    /// `[[dx/dxi, dx/deta], [dy/dxi, dy/deta]]`
    pub m: [[f64; 2]; 2],
    pub det: f64,
}

pub fn quad_jacobian(c: &[Point; 4], xi: f64, eta: f64) -> Jacobian {
    let dxi = [-(1.0 - eta) / 4.0, (1.0 - eta) / 4.0, (1.0 + eta) / 4.0, -(1.0 + eta) / 4.0];
    let deta = [-(1.0 - xi) / 4.0, -(1.0 + xi) / 4.0, (1.0 + xi) / 4.0, (1.0 - xi) / 4.0];
    let mut m = [[0.0; 2]; 2];
    for a in 0..4 {
        for d in 0..2 {
            m[d][0] += c[a][d] * dxi[a];
            m[d][1] += c[a][d] * deta[a];
        }
    }
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    Jacobian { m, det }
}

/// Uniform interval mesh `[0, length]` with both end nodes tagged `tag_ends`.
pub fn interval_mesh(length: f64, n_elems: usize, tag_ends: BoundaryTag) -> Result<Mesh> {
    if !(length > 0.0) || !length.is_finite() {
        return Err(Error::InvalidArgument(format!("interval length must be positive, got {length}")));
    }
    if n_elems == 0 {
        return Err(Error::InvalidArgument("interval mesh needs at least one element".into()));
    }
    let h = length / n_elems as f64;
    let nodes: Vec<Point> = (0..=n_elems).map(|i| [i as f64 * h, 0.0]).collect();
    let elements = (0..n_elems).map(|e| vec![e, e + 1]).collect();
    let facets = vec![Facet { nodes: vec![0], tag: tag_ends }, Facet { nodes: vec![n_elems], tag: tag_ends }];
    Mesh::new(1, nodes, elements, facets)
}

/// Channel mesh on level `level`: `100 * 2^(level-1)` elements over 0.2 m.
pub fn channel_mesh(level: usize) -> Result<Mesh> {
    if level < 1 {
        return Err(Error::InvalidArgument("channel level must be at least 1".into()));
    }
    interval_mesh(CHANNEL_LENGTH, CHANNEL_BASE_ELEMENTS << (level - 1), BoundaryTag::Dirichlet)
}

/// Lower boundary of the focus domain: the transducer arc.
pub fn focus_arc(x: f64) -> f64 {
    let dx = x - FOCUS_CENTER[0];
    FOCUS_CENTER[1] - (FOCUS_RADIUS_SQ - dx * dx).sqrt()
}

/// Analytic length of the transducer arc between the two bottom corners.
pub fn focus_arc_length() -> f64 {
    let r = FOCUS_RADIUS_SQ.sqrt();
    let half_angle = (FOCUS_CENTER[0] / r).asin();
    2.0 * half_angle * r
}

/// Structured quadrilateral mesh of the focused-ultrasound domain on `level`.
///
/// The bottom row of nodes sits on the transducer arc and the remaining rows
/// are blended linearly towards the straight top edge. The bottom edges are
/// tagged as the Neumann source; the two sides and the top are absorbing.
pub fn focus_mesh(level: usize) -> Result<Mesh> {
    if level < 1 {
        return Err(Error::InvalidArgument("focus level must be at least 1".into()));
    }
    let nx = FOCUS_BASE_CELLS.0 << (level - 1);
    let ny = FOCUS_BASE_CELLS.1 << (level - 1);
    structured_focus_grid(nx, ny)
}

pub(crate) fn structured_focus_grid(nx: usize, ny: usize) -> Result<Mesh> {
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let s = j as f64 / ny as f64;
        for i in 0..=nx {
            let x = FOCUS_WIDTH * i as f64 / nx as f64;
            let bottom = focus_arc(x);
            nodes.push([x, (1.0 - s) * bottom + s * FOCUS_HEIGHT]);
        }
    }
    let mut elements = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push(vec![idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let mut facets = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        facets.push(Facet { nodes: vec![idx(i, 0), idx(i + 1, 0)], tag: BoundaryTag::NeumannSource });
    }
    for j in 0..ny {
        facets.push(Facet { nodes: vec![idx(nx, j), idx(nx, j + 1)], tag: BoundaryTag::Absorbing });
    }
    for i in (0..nx).rev() {
        facets.push(Facet { nodes: vec![idx(i + 1, ny), idx(i, ny)], tag: BoundaryTag::Absorbing });
    }
    for j in (0..ny).rev() {
        facets.push(Facet { nodes: vec![idx(0, j + 1), idx(0, j)], tag: BoundaryTag::Absorbing });
    }
    Mesh::new(2, nodes, elements, facets)
}

/// Structured mesh of the axis-aligned rectangle `[x0, x1] x [y0, y1]`, all
/// sides tagged `tag`.
pub fn rectangle_mesh(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize, tag: BoundaryTag) -> Result<Mesh> {
    if !(x1 > x0 && y1 > y0) || nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("degenerate rectangle".into()));
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([x0 + (x1 - x0) * i as f64 / nx as f64, y0 + (y1 - y0) * j as f64 / ny as f64]);
        }
    }
    let mut elements = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push(vec![idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let mut facets = Vec::new();
    for i in 0..nx {
        facets.push(Facet { nodes: vec![idx(i, 0), idx(i + 1, 0)], tag });
        facets.push(Facet { nodes: vec![idx(i + 1, ny), idx(i, ny)], tag });
    }
    for j in 0..ny {
        facets.push(Facet { nodes: vec![idx(nx, j), idx(nx, j + 1)], tag });
        facets.push(Facet { nodes: vec![idx(0, j + 1), idx(0, j)], tag });
    }
    Mesh::new(2, nodes, elements, facets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interval_mesh_examples() {
        let m = interval_mesh(0.2, 100, BoundaryTag::Dirichlet).unwrap();
        assert_eq!(m.n_nodes(), 101);
        assert_relative_eq!(m.h_max(), 0.002, max_relative = 1e-12);

        let m = interval_mesh(1.0, 1, BoundaryTag::Dirichlet).unwrap();
        assert_eq!(m.nodes(), &[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(m.h_max(), 1.0);

        let fine = interval_mesh(0.2, 200, BoundaryTag::Dirichlet).unwrap();
        assert_relative_eq!(fine.h_max(), 0.001, max_relative = 1e-12);
    }

    #[test]
    fn interval_nodes_are_exact_multiples() {
        let m = interval_mesh(0.2, 37, BoundaryTag::Dirichlet).unwrap();
        let h = 0.2 / 37.0;
        for (i, p) in m.nodes().iter().enumerate() {
            assert_eq!(p[0].to_bits(), (i as f64 * h).to_bits());
        }
    }

    #[test]
    fn interval_mesh_rejects_bad_input() {
        assert!(matches!(interval_mesh(0.0, 4, BoundaryTag::Dirichlet), Err(Error::InvalidArgument(_))));
        assert!(matches!(interval_mesh(-1.0, 4, BoundaryTag::Dirichlet), Err(Error::InvalidArgument(_))));
        assert!(matches!(interval_mesh(1.0, 0, BoundaryTag::Dirichlet), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn channel_levels() {
        assert_eq!(channel_mesh(1).unwrap().n_elements(), 100);
        assert_eq!(channel_mesh(6).unwrap().n_elements(), 3200);
        assert_eq!(channel_mesh(8).unwrap().n_elements(), 12800);
        assert!(channel_mesh(0).is_err());
        assert_relative_eq!(channel_mesh(1).unwrap().h_max(), 0.002, max_relative = 1e-12);
    }

    #[test]
    fn focus_level_one_counts() {
        let m = focus_mesh(1).unwrap();
        assert_eq!(m.n_elements(), 700);
        assert_eq!(m.n_nodes(), 21 * 36);
        assert!(focus_mesh(0).is_err());
    }

    #[test]
    fn focus_arc_values() {
        assert!(focus_arc(0.0).abs() < 1e-15);
        assert!(focus_arc(0.04).abs() < 1e-15);
        assert_relative_eq!(focus_arc(0.02), 0.04 - 0.002f64.sqrt(), max_relative = 1e-15);
        assert!((focus_arc(0.02) + 0.004721).abs() < 1e-6);
    }

    #[test]
    fn focus_bottom_row_on_circle() {
        for level in 1..=3 {
            let m = focus_mesh(level).unwrap();
            let nx = 20 << (level - 1);
            for p in &m.nodes()[..=nx] {
                let r2 = (p[0] - 0.02).powi(2) + (p[1] - 0.04).powi(2);
                assert!((r2 - 0.002).abs() <= 1e-12 * 0.002, "r2 = {r2}");
            }
        }
    }

    #[test]
    fn focus_tags_partition_boundary() {
        let m = focus_mesh(2).unwrap();
        let boundary = m.boundary_entities();
        assert_eq!(boundary.len(), m.facets().len());
        let mut keys: Vec<_> = m.facets().iter().map(|f| sorted_key(&f.nodes)).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), m.facets().len());
        let source = m.facets_with(BoundaryTag::NeumannSource).count();
        assert_eq!(source, 40);
    }

    #[test]
    fn unit_square_diameter() {
        let m = rectangle_mesh(0.0, 1.0, 0.0, 1.0, 1, 1, BoundaryTag::Dirichlet).unwrap();
        assert_relative_eq!(m.h_max(), 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn focus_refinement_halves_h() {
        let hs: Vec<f64> = (1..=5).map(|l| focus_mesh(l).unwrap().h_max()).collect();
        for w in hs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.9..=2.1).contains(&ratio), "ratio {ratio}");
            assert!((w[1] - w[0] / 2.0).abs() <= 0.05 * w[0] / 2.0);
        }
    }

    #[test]
    fn rejects_inverted_quad() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let r = Mesh::new(2, nodes, vec![vec![0, 3, 2, 1]], vec![]);
        assert!(r.is_err());
    }

    #[test]
    fn dump_header() {
        let m = interval_mesh(1.0, 2, BoundaryTag::Dirichlet).unwrap();
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "1 3 2 2\n0\n0.5\n1\n0 1\n1 2\ndirichlet 0\ndirichlet 2\n");
    }
}
