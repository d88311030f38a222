//! P1 finite elements: assembly, interpolation, prolongation and norms.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{CsrMatrix, dot};

/// A real function of position, used for sources, targets and obstacles.
#[derive(Clone)]
pub struct ScalarField {
    label: Arc<str>,
    f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl ScalarField {
    pub fn new(label: impl Into<Arc<str>>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn constant(c: f64) -> Self {
        ScalarField::new(format!("{c}"), move |_, _| c)
    }

    pub fn zero() -> Self {
        ScalarField::constant(0.0)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    fn eval_finite(&self, x: f64, y: f64) -> Result<f64> {
        let value = self.eval(x, y);
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite { x, y, value })
        }
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarField({})", self.label)
    }
}

/// Nodal coefficients of a continuous piecewise linear function.
#[derive(Debug, Clone)]
pub struct FeFunction {
    mesh: Arc<Mesh>,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: Arc<Mesh>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != mesh.num_nodes() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a mesh with {} nodes",
                coeffs.len(),
                mesh.num_nodes()
            )));
        }
        Ok(FeFunction { mesh, coeffs })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_nodes();
        FeFunction {
            mesh,
            coeffs: vec![0.0; n],
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficients at the listed nodes.
    pub fn restrict(&self, nodes: &[usize]) -> Vec<f64> {
        nodes.iter().map(|&v| self.coeffs[v]).collect()
    }

    /// Constant gradient on triangle `t`.
    pub fn gradient_on(&self, t: usize) -> [f64; 2] {
        let (grads, _) = local_gradients(&self.mesh, t);
        let tri = self.mesh.triangles()[t];
        let mut g = [0.0; 2];
        for k in 0..3 {
            g[0] += self.coeffs[tri[k]] * grads[k][0];
            g[1] += self.coeffs[tri[k]] * grads[k][1];
        }
        g
    }

    pub fn max(&self) -> f64 {
        self.coeffs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The bilinear form `a(., .)` of the state equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BilinearForm {
    /// `(grad y, grad v)`
    GradGrad,
    /// `(grad y, grad v) + (y, v)`
    GradGradPlusMass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    H1Semi,
    H1,
    L2Gamma,
}

/// Barycentric gradients and area of triangle `t`.
pub fn local_gradients(mesh: &Mesh, t: usize) -> ([[f64; 2]; 3], f64) {
    let [p0, p1, p2] = mesh.triangles()[t].map(|v| mesh.nodes()[v]);
    let area = mesh.triangle_area(t);
    let s = 1.0 / (2.0 * area);
    let grads = [
        [(p1[1] - p2[1]) * s, (p2[0] - p1[0]) * s],
        [(p2[1] - p0[1]) * s, (p0[0] - p2[0]) * s],
        [(p0[1] - p1[1]) * s, (p1[0] - p0[0]) * s],
    ];
    (grads, area)
}

pub fn local_stiffness(mesh: &Mesh, t: usize) -> [[f64; 3]; 3] {
    let (g, area) = local_gradients(mesh, t);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    k
}

pub fn local_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// Zero matrix carrying the P1 node-adjacency pattern of `mesh`.
pub fn p1_pattern(mesh: &Mesh) -> CsrMatrix {
    let n = mesh.num_nodes();
    let mut rows: Vec<Vec<usize>> = vec![Vec::with_capacity(7); n];
    for tri in mesh.triangles() {
        for &a in tri {
            for &b in tri {
                rows[a].push(b);
            }
        }
    }
    for row in &mut rows {
        row.sort_unstable();
        row.dedup();
    }
    CsrMatrix::from_pattern(n, n, rows)
}

/// Scatter one 3x3 element matrix into a matrix with the P1 pattern.
pub fn scatter(matrix: &mut CsrMatrix, tri: [usize; 3], local: &[[f64; 3]; 3]) {
    for i in 0..3 {
        for j in 0..3 {
            matrix.add_to(tri[i], tri[j], local[i][j]);
        }
    }
}

/// Stiffness matrix `K_ij = (grad psi_i, grad psi_j)`.
pub fn assemble_stiffness(mesh: &Mesh) -> CsrMatrix {
    let mut k = p1_pattern(mesh);
    for t in 0..mesh.num_triangles() {
        scatter(&mut k, mesh.triangles()[t], &local_stiffness(mesh, t));
    }
    k
}

/// Mass matrix `B_ij = (psi_i, psi_j)`.
pub fn assemble_mass(mesh: &Mesh) -> CsrMatrix {
    let mut m = p1_pattern(mesh);
    for t in 0..mesh.num_triangles() {
        scatter(&mut m, mesh.triangles()[t], &local_mass(mesh.triangle_area(t)));
    }
    m
}

/// Matrix of the bilinear form `a`.
pub fn assemble_operator(mesh: &Mesh, form: BilinearForm) -> CsrMatrix {
    let mut a = p1_pattern(mesh);
    for t in 0..mesh.num_triangles() {
        let mut local = local_stiffness(mesh, t);
        if form == BilinearForm::GradGradPlusMass {
            let m = local_mass(mesh.triangle_area(t));
            for i in 0..3 {
                for j in 0..3 {
                    local[i][j] += m[i][j];
                }
            }
        }
        scatter(&mut a, mesh.triangles()[t], &local);
    }
    a
}

/// One-dimensional P1 mass matrix on the boundary, indexed by position in
/// [`Mesh::boundary`].
pub fn assemble_boundary_mass(mesh: &Mesh) -> CsrMatrix {
    let b = mesh.boundary();
    let m = b.len();
    let mut t = Vec::with_capacity(4 * m);
    for k in 0..m {
        let next = (k + 1) % m;
        let (p, q) = (mesh.nodes()[b[k]], mesh.nodes()[b[next]]);
        let len = (q[0] - p[0]).hypot(q[1] - p[1]);
        t.push((k, k, len / 3.0));
        t.push((next, next, len / 3.0));
        t.push((k, next, len / 6.0));
        t.push((next, k, len / 6.0));
    }
    CsrMatrix::from_triplets(m, m, &t)
}

/// Load vector `F_i = (g, psi_i)` by the edge-midpoint rule.
pub fn assemble_load(mesh: &Mesh, g: &ScalarField) -> Result<Vec<f64>> {
    let mut f = vec![0.0; mesh.num_nodes()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        let p = tri.map(|v| mesh.nodes()[v]);
        let mid = |a: usize, b: usize| {
            let (x, y) = (0.5 * (p[a][0] + p[b][0]), 0.5 * (p[a][1] + p[b][1]));
            g.eval_finite(x, y)
        };
        let m01 = mid(0, 1)?;
        let m12 = mid(1, 2)?;
        let m20 = mid(2, 0)?;
        let w = area / 6.0;
        f[tri[0]] += w * (m01 + m20);
        f[tri[1]] += w * (m01 + m12);
        f[tri[2]] += w * (m12 + m20);
    }
    Ok(f)
}

/// Lagrange interpolant of `g`.
pub fn interpolate_nodal(mesh: &Arc<Mesh>, g: &ScalarField) -> Result<FeFunction> {
    let coeffs = mesh
        .nodes()
        .iter()
        .map(|p| g.eval_finite(p[0], p[1]))
        .collect::<Result<Vec<_>>>()?;
    FeFunction::new(mesh.clone(), coeffs)
}

/// Exact P1 interpolation of `u` onto the nested finer mesh `fine`.
pub fn prolong(u: &FeFunction, fine: &Arc<Mesh>) -> Result<FeFunction> {
    let coarse = u.mesh();
    if !coarse.is_ancestor_of(fine) {
        return Err(Error::Structure(format!(
            "cannot prolong from level {} {} to level {} {}",
            coarse.level(),
            coarse.domain(),
            fine.level(),
            fine.domain()
        )));
    }
    let s = 1usize << (fine.level() - coarse.level());
    let inv = 1.0 / s as f64;
    let n = coarse.cells_per_side();
    let c = u.coeffs();
    let coeffs = (0..fine.num_nodes())
        .map(|v| {
            let [fi, fj] = fine.lattice_position(v);
            if fi % s == 0 && fj % s == 0 {
                let node = coarse.node_at(fi / s, fj / s).expect("nested node");
                return c[node];
            }
            for ci in [fi / s, (fi / s).wrapping_sub(1)] {
                for cj in [fj / s, (fj / s).wrapping_sub(1)] {
                    if ci >= n || cj >= n || !coarse.has_cell(ci, cj) {
                        continue;
                    }
                    let xi = (fi - ci * s) as f64 * inv;
                    let eta = (fj - cj * s) as f64 * inv;
                    if xi > 1.0 || eta > 1.0 {
                        continue;
                    }
                    let at = |i, j| c[coarse.node_at(i, j).expect("cell corner")];
                    let a = at(ci, cj);
                    let diag = at(ci + 1, cj + 1);
                    return if xi >= eta {
                        (1.0 - xi) * a + (xi - eta) * at(ci + 1, cj) + eta * diag
                    } else {
                        (1.0 - eta) * a + xi * diag + (eta - xi) * at(ci, cj + 1)
                    };
                }
            }
            unreachable!("fine node outside coarse triangulation")
        })
        .collect();
    FeFunction::new(fine.clone(), coeffs)
}

/// Matrices needed for norms on one mesh.
#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    stiffness: CsrMatrix,
    mass: CsrMatrix,
    boundary_mass: CsrMatrix,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        FeSpace {
            stiffness: assemble_stiffness(&mesh),
            mass: assemble_mass(&mesh),
            boundary_mass: assemble_boundary_mass(&mesh),
            mesh,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn boundary_mass(&self) -> &CsrMatrix {
        &self.boundary_mass
    }

    /// Norm of the P1 function with nodal coefficients `u`.
    pub fn norm(&self, u: &[f64], which: NormKind) -> Result<f64> {
        if u.len() != self.mesh.num_nodes() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a mesh with {} nodes",
                u.len(),
                self.mesh.num_nodes()
            )));
        }
        let q = match which {
            NormKind::L2 => self.mass.quadratic_form(u),
            NormKind::H1Semi => self.stiffness.quadratic_form(u),
            NormKind::H1 => self.mass.quadratic_form(u) + self.stiffness.quadratic_form(u),
            NormKind::L2Gamma => {
                let trace: Vec<f64> = self.mesh.boundary().iter().map(|&v| u[v]).collect();
                self.boundary_mass.quadratic_form(&trace)
            }
        };
        Ok(q.max(0.0).sqrt())
    }

    /// `L2(Gamma)` norm of values given in boundary traversal order.
    pub fn boundary_norm(&self, trace: &[f64]) -> Result<f64> {
        if trace.len() != self.mesh.boundary().len() {
            return Err(Error::Dimension(format!(
                "{} boundary values for {} boundary nodes",
                trace.len(),
                self.mesh.boundary().len()
            )));
        }
        Ok(self.boundary_mass.quadratic_form(trace).max(0.0).sqrt())
    }
}

/// Norm of `u`, assembling the needed matrix on the fly.
pub fn norm(u: &FeFunction, which: NormKind) -> Result<f64> {
    let mesh = u.mesh();
    let c = u.coeffs();
    let q = match which {
        NormKind::L2 => assemble_mass(mesh).quadratic_form(c),
        NormKind::H1Semi => assemble_stiffness(mesh).quadratic_form(c),
        NormKind::H1 => assemble_operator(mesh, BilinearForm::GradGradPlusMass).quadratic_form(c),
        NormKind::L2Gamma => {
            let trace = u.restrict(mesh.boundary());
            assemble_boundary_mass(mesh).quadratic_form(&trace)
        }
    };
    Ok(q.max(0.0).sqrt())
}

// Seven-point degree-five rule on the reference triangle (barycentric, weight).
const QUAD7: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const W1: f64 = 0.132_394_152_788_506;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W2: f64 = 0.125_939_180_544_827;
    const T: f64 = 1.0 / 3.0;
    [
        ([T, T, T], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// `L2` and `H1`-seminorm errors of `u` against a known smooth function.
pub fn error_against_exact(
    u: &FeFunction,
    exact: impl Fn(f64, f64) -> f64,
    exact_grad: impl Fn(f64, f64) -> [f64; 2],
) -> (f64, f64) {
    let mesh = u.mesh();
    let c = u.coeffs();
    let (mut l2, mut h1) = (0.0, 0.0);
    for t in 0..mesh.num_triangles() {
        let tri = mesh.triangles()[t];
        let p = tri.map(|v| mesh.nodes()[v]);
        let area = mesh.triangle_area(t);
        let g = u.gradient_on(t);
        for (bary, w) in QUAD7 {
            let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
            let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
            let uh = bary[0] * c[tri[0]] + bary[1] * c[tri[1]] + bary[2] * c[tri[2]];
            let ge = exact_grad(x, y);
            l2 += w * area * (exact(x, y) - uh).powi(2);
            h1 += w * area * ((ge[0] - g[0]).powi(2) + (ge[1] - g[1]).powi(2));
        }
    }
    (l2.sqrt(), h1.sqrt())
}

/// `u^T A v` for coefficient vectors.
pub fn energy_product(a: &CsrMatrix, u: &[f64], v: &[f64]) -> f64 {
    dot(u, &a.mul_vec(v))
}
