//! Structured triangulations of the unit square and the L-shaped domain.
//!
//! Both domains live on a lattice of spacing `h = 2^-(level+1)`. Every lattice
//! cell inside the domain is cut along its bottom-left to top-right diagonal,
//! so level `l + 1` is exactly the red refinement of level `l`.

use crate::error::{Error, Result};

pub const MAX_LEVEL: u32 = 10;

const ABSENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// `(0,1)^2`
    UnitSquare,
    /// `(-1,1)^2 \ [0,1]x[-1,0]`, re-entrant corner at the origin.
    LShape,
}

impl Domain {
    pub fn area(self) -> f64 {
        match self {
            Domain::UnitSquare => 1.0,
            Domain::LShape => 3.0,
        }
    }

    pub fn perimeter(self) -> f64 {
        match self {
            Domain::UnitSquare => 4.0,
            Domain::LShape => 8.0,
        }
    }

    fn origin(self) -> [f64; 2] {
        match self {
            Domain::UnitSquare => [0.0, 0.0],
            Domain::LShape => [-1.0, -1.0],
        }
    }

    fn side(self) -> f64 {
        match self {
            Domain::UnitSquare => 1.0,
            Domain::LShape => 2.0,
        }
    }

    /// Whether the lattice cell with lower-left corner `(i, j)` belongs to the domain.
    fn contains_cell(self, n: usize, i: usize, j: usize) -> bool {
        match self {
            Domain::UnitSquare => i < n && j < n,
            Domain::LShape => i < n && j < n && !(i >= n / 2 && j < n / 2),
        }
    }

    /// Polygon corners in lattice units, counter-clockwise.
    fn corners(self, n: usize) -> Vec<[usize; 2]> {
        match self {
            Domain::UnitSquare => vec![[0, 0], [n, 0], [n, n], [0, n]],
            Domain::LShape => {
                let m = n / 2;
                vec![[0, 0], [m, 0], [m, m], [n, m], [n, n], [0, n]]
            }
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::UnitSquare => write!(f, "unit square"),
            Domain::LShape => write!(f, "L-shape"),
        }
    }
}

/// Conforming P1 triangulation on a uniform lattice.
#[derive(Debug, Clone)]
pub struct Mesh {
    domain: Domain,
    level: u32,
    /// Lattice cells per side of the bounding square.
    cells: usize,
    h: f64,
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_mask: Vec<bool>,
    boundary: Vec<usize>,
    interior: Vec<usize>,
    lattice_index: Vec<u32>,
    lattice_coords: Vec<[u32; 2]>,
}

/// Build the level-`level` mesh of `domain`.
///
/// ```
/// use energy_vi::mesh::{build_mesh, Domain};
/// let m = build_mesh(Domain::UnitSquare, 1).unwrap();
/// assert_eq!((m.num_nodes(), m.num_triangles()), (25, 32));
/// ```
pub fn build_mesh(domain: Domain, level: u32) -> Result<Mesh> {
    if level > MAX_LEVEL {
        return Err(Error::LevelOutOfRange {
            level,
            max: MAX_LEVEL,
        });
    }
    let n = (domain.side() as usize) << (level + 1);
    let h = domain.side() / n as f64;
    let origin = domain.origin();
    let stride = n + 1;
    let cell = |i: isize, j: isize| {
        i >= 0 && j >= 0 && domain.contains_cell(n, i as usize, j as usize)
    };

    let mut lattice_index = vec![ABSENT; stride * stride];
    let mut lattice_coords = Vec::new();
    let mut nodes = Vec::new();
    let mut boundary_mask = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let (si, sj) = (i as isize, j as isize);
            let around = [
                cell(si - 1, sj - 1),
                cell(si, sj - 1),
                cell(si - 1, sj),
                cell(si, sj),
            ];
            if !around.iter().any(|&c| c) {
                continue;
            }
            lattice_index[j * stride + i] = nodes.len() as u32;
            lattice_coords.push([i as u32, j as u32]);
            nodes.push([origin[0] + i as f64 * h, origin[1] + j as f64 * h]);
            boundary_mask.push(!around.iter().all(|&c| c));
        }
    }

    let at = |i: usize, j: usize| lattice_index[j * stride + i] as usize;
    let mut triangles = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if !domain.contains_cell(n, i, j) {
                continue;
            }
            let (a, b, c, d) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }

    let corners = domain.corners(n);
    let mut boundary = Vec::new();
    for k in 0..corners.len() {
        let [x0, y0] = corners[k];
        let [x1, y1] = corners[(k + 1) % corners.len()];
        let steps = x0.abs_diff(x1) + y0.abs_diff(y1);
        for s in 0..steps {
            let x = step_towards(x0, x1, s);
            let y = step_towards(y0, y1, s);
            boundary.push(at(x, y));
        }
    }
    let interior = (0..nodes.len()).filter(|&v| !boundary_mask[v]).collect();

    Ok(Mesh {
        domain,
        level,
        cells: n,
        h,
        nodes,
        triangles,
        boundary_mask,
        boundary,
        interior,
        lattice_index,
        lattice_coords,
    })
}

fn step_towards(from: usize, to: usize, s: usize) -> usize {
    if to >= from { from + s.min(to - from) } else { from - s.min(from - to) }
}

/// Boundary node indices in counter-clockwise traversal order.
pub fn boundary_nodes(mesh: &Mesh) -> &[usize] {
    &mesh.boundary
}

impl Mesh {
    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary_mask
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary_mask[node]
    }

    /// Boundary nodes in traversal order (closed loop, first node not repeated).
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    /// Interior nodes in increasing index order.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// Signed area of triangle `t`.
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|v| self.nodes[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Node at lattice position `(i, j)` if it belongs to the mesh.
    pub fn node_at(&self, i: usize, j: usize) -> Option<usize> {
        if i > self.cells || j > self.cells {
            return None;
        }
        match self.lattice_index[j * (self.cells + 1) + i] {
            ABSENT => None,
            v => Some(v as usize),
        }
    }

    /// Lattice cells per side of the bounding square.
    pub fn cells_per_side(&self) -> usize {
        self.cells
    }

    /// Whether lattice cell `(i, j)` is part of the triangulation.
    pub fn has_cell(&self, i: usize, j: usize) -> bool {
        self.domain.contains_cell(self.cells, i, j)
    }

    pub fn lattice_position(&self, node: usize) -> [usize; 2] {
        self.lattice_coords[node].map(|c| c as usize)
    }

    /// The mesh one level finer.
    pub fn refine(&self) -> Result<Mesh> {
        build_mesh(self.domain, self.level + 1)
    }

    /// Whether `fine` is a refinement descendant of `self`.
    pub fn is_ancestor_of(&self, fine: &Mesh) -> bool {
        self.domain == fine.domain && self.level <= fine.level
    }

    /// Index in `fine` of every node of `self`.
    pub fn embedding_into(&self, fine: &Mesh) -> Result<Vec<usize>> {
        if !self.is_ancestor_of(fine) {
            return Err(Error::Structure(format!(
                "level {} {} mesh is not nested in level {} {} mesh",
                self.level, self.domain, fine.level, fine.domain
            )));
        }
        let scale = 1usize << (fine.level - self.level);
        self.lattice_coords
            .iter()
            .map(|&[i, j]| {
                fine.node_at(i as usize * scale, j as usize * scale)
                    .ok_or_else(|| Error::Internal("coarse node missing on fine mesh".into()))
            })
            .collect()
    }

    /// Edges of the boundary polygon as consecutive node pairs along the traversal.
    pub fn boundary_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let b = &self.boundary;
        (0..b.len()).map(move |k| (b[k], b[(k + 1) % b.len()]))
    }
}
