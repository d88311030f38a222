//! Registered test cases and the discrete variational inequalities they induce.
//!
//! Eliminating the control turns every problem into a quadratic program in
//! the state: minimize `1/2 Y^T (alpha L + B) Y - f^T Y` subject to `Y <= psi`
//! (and, for boundary control, `L(interior, :) Y = 0`). The problem is stored
//! as the projection equation `X = P(X - (S X + b))`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{
    BilinearForm, FeFunction, ScalarField, assemble_load, assemble_mass, assemble_operator,
    assemble_stiffness,
};
use crate::linsolve::solve_spd;
use crate::mesh::{Domain, Mesh};
use crate::sparse::{CsrMatrix, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Distributed,
    DirichletBc,
    NeumannBc,
    GradientConstrained,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Distributed => "distributed",
            ProblemKind::DirichletBc => "dirichlet",
            ProblemKind::NeumannBc => "neumann",
            ProblemKind::GradientConstrained => "gradient",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            ProblemKind::Distributed,
            ProblemKind::DirichletBc,
            ProblemKind::NeumannBc,
            ProblemKind::GradientConstrained,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }

    pub fn form(self) -> BilinearForm {
        match self {
            ProblemKind::NeumannBc => BilinearForm::GradGradPlusMass,
            _ => BilinearForm::GradGrad,
        }
    }

    /// Whether the state carries a saddle-point (kernel) constraint.
    pub fn is_boundary_control(self) -> bool {
        matches!(self, ProblemKind::DirichletBc | ProblemKind::NeumannBc)
    }
}

/// Data of one optimal control problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub domain: Domain,
    pub alpha: f64,
    pub y_d: ScalarField,
    pub y_b: ScalarField,
    pub f: ScalarField,
    pub case_id: String,
}

impl ProblemSpec {
    pub fn new(
        kind: ProblemKind,
        domain: Domain,
        alpha: f64,
        y_d: ScalarField,
        y_b: ScalarField,
        case_id: impl Into<String>,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        Ok(ProblemSpec {
            kind,
            domain,
            alpha,
            y_d,
            y_b,
            f: ScalarField::zero(),
            case_id: case_id.into(),
        })
    }

    pub fn with_source(mut self, f: ScalarField) -> Self {
        self.f = f;
        self
    }

    /// Registry label such as `distributed:2`.
    pub fn label(&self) -> String {
        format!("{}:{}", self.kind.name(), self.case_id)
    }
}

/// All registered case labels.
pub const REGISTRY: &[&str] = &[
    "distributed:1",
    "distributed:2",
    "distributed:3",
    "distributed:4",
    "distributed:5",
    "distributed:5s",
    "dirichlet:1",
    "dirichlet:2",
    "dirichlet:3",
    "neumann:1",
    "gradient:1",
];

fn unknown(label: &str) -> Error {
    Error::UnknownCase(label.to_string(), REGISTRY.join(", "))
}

/// Look up a case by `kind:case` label.
pub fn parse_case(label: &str) -> Result<ProblemSpec> {
    let (kind, case) = label.split_once(':').ok_or_else(|| unknown(label))?;
    let kind = ProblemKind::from_name(kind).ok_or_else(|| unknown(label))?;
    get_case(kind, case)
}

/// Polar angle in `[0, 2 pi)`; on the L-shape this covers `[0, 3 pi / 2]`.
fn angle(x: f64, y: f64) -> f64 {
    let t = y.atan2(x);
    if t < 0.0 { t + 2.0 * PI } else { t }
}

/// Corner-singular target `r^(-1/3) g(2 theta / 3)`, zero at the origin and
/// clamped to `|y_d| <= 1e6`.
fn corner_target(g: fn(f64) -> f64) -> impl Fn(f64, f64) -> f64 + Send + Sync {
    move |x, y| {
        let r = x.hypot(y);
        if r < 1e-12 {
            return 0.0;
        }
        let v = r.powf(-1.0 / 3.0) * g(2.0 * angle(x, y) / 3.0);
        if v.is_nan() { 0.0 } else { v.clamp(-1e6, 1e6) }
    }
}

/// The registered problem `kind`/`case_id`.
pub fn get_case(kind: ProblemKind, case_id: &str) -> Result<ProblemSpec> {
    use Domain::*;
    use ProblemKind::*;
    let sin_sin = || ScalarField::new("sin(pi x)sin(pi y)", |x, y| (PI * x).sin() * (PI * y).sin());
    let sin2pi = || ScalarField::new("sin(2 pi x y)", |x, y| (2.0 * PI * x * y).sin());
    let ten = || ScalarField::new("10(sin(2x)+y)", |x, y| 10.0 * ((2.0 * x).sin() + y));
    let c = ScalarField::constant;
    let (domain, alpha, y_d, y_b) = match (kind, case_id) {
        (Distributed, "1") => (
            UnitSquare,
            1e-4,
            ScalarField::new("sin(4 pi x y)+1.5", |x, y| (4.0 * PI * x * y).sin() + 1.5),
            c(1.0),
        ),
        (Distributed, "2") => (UnitSquare, 1e-3, sin2pi(), c(0.1)),
        (Distributed, "3") => (UnitSquare, 0.1, ten(), c(0.01)),
        (Distributed, "4") => (UnitSquare, 0.1, sin_sin(), c(0.1)),
        (Distributed, "5") => (
            LShape,
            0.1,
            ScalarField::new("r^(-1/3)tan(2 theta/3)", corner_target(f64::tan)),
            c(0.5),
        ),
        (Distributed, "5s") => (
            LShape,
            0.1,
            ScalarField::new("r^(-1/3)sin(2 theta/3)", corner_target(f64::sin)),
            c(0.5),
        ),
        (DirichletBc, "1") => (UnitSquare, 0.01, sin_sin(), c(0.4)),
        (DirichletBc, "2") => (UnitSquare, 1e-3, sin2pi(), c(0.1)),
        (DirichletBc, "3") => (UnitSquare, 0.1, ten(), c(0.01)),
        (NeumannBc, "1") => (UnitSquare, 0.01, sin_sin(), c(0.4)),
        (GradientConstrained, "1") => (
            UnitSquare,
            0.1,
            ScalarField::new("2sin(pi x)sin(pi y)", |x, y| 2.0 * (PI * x).sin() * (PI * y).sin()),
            c(1.0),
        ),
        _ => return Err(unknown(&format!("{}:{}", kind.name(), case_id))),
    };
    ProblemSpec::new(kind, domain, alpha, y_d, y_b, case_id)
}

/// Discrete solution of the uncontrolled state equation `a(y_f, v) = (f, v)`.
///
/// Dirichlet-type problems use zero boundary values and the gradient form;
/// the Neumann problem solves on all nodes with the full `H^1` form.
pub fn compute_yf(spec: &ProblemSpec, mesh: &Arc<Mesh>) -> Result<FeFunction> {
    let load = assemble_load(mesh, &spec.f)?;
    if load.iter().all(|&v| v == 0.0) {
        return Ok(FeFunction::zeros(mesh.clone()));
    }
    let coeffs = match spec.kind.form() {
        BilinearForm::GradGradPlusMass => {
            solve_spd(&assemble_operator(mesh, BilinearForm::GradGradPlusMass), &load, None)?
        }
        BilinearForm::GradGrad => {
            let fixed: Vec<(usize, f64)> = mesh.boundary().iter().map(|&v| (v, 0.0)).collect();
            solve_spd(&assemble_stiffness(mesh), &load, Some(&fixed))?
        }
    };
    FeFunction::new(mesh.clone(), coeffs)
}

/// Blocks needed by PDHG on boundary-control systems.
#[derive(Debug, Clone)]
pub struct SaddleParts {
    pub alpha: f64,
    /// `L_h` over all nodes.
    pub operator: CsrMatrix,
    /// `(grad p, grad q)` over interior nodes, the dual proximal metric.
    pub dual_metric: CsrMatrix,
}

/// Finite element provenance of a system, used to turn algebraic solutions
/// back into functions.
#[derive(Debug, Clone)]
pub struct FeContext {
    pub kind: ProblemKind,
    pub mesh: Arc<Mesh>,
    pub yf: FeFunction,
    /// Mesh node of every state dof.
    pub state_nodes: Vec<usize>,
    /// Mesh node of every adjoint dof.
    pub adjoint_nodes: Vec<usize>,
}

/// `X = P(X - (S X + b))` with `S = [[A, -C^T], [C, 0]]` (or just `A`) and
/// the box `X_i <= upper_i` (`+inf` marks a free dof).
#[derive(Debug, Clone)]
pub struct ViSystem {
    state_block: CsrMatrix,
    coupling: Option<CsrMatrix>,
    offset: Vec<f64>,
    upper: Vec<f64>,
    context: Option<FeContext>,
    saddle: Option<SaddleParts>,
}

/// Algebraic solution of a [`ViSystem`].
#[derive(Debug, Clone)]
pub struct ViSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    pub history: Vec<f64>,
}

/// Solution fields of a finite element problem.
#[derive(Debug, Clone)]
pub struct FeSolutionBundle {
    /// State `y_u + y_f`.
    pub y_h: FeFunction,
    pub y_u_h: FeFunction,
    /// Adjoint (boundary control only), zero on the boundary.
    pub p_h: Option<FeFunction>,
    /// Multiplier estimate per state dof (`S X + b` on the state rows).
    pub multiplier: Vec<f64>,
    pub iterations: usize,
    pub final_residual: f64,
}

impl ViSystem {
    /// Box-constrained system `S = A`.
    pub fn box_constrained(a: CsrMatrix, offset: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || offset.len() != n || upper.len() != n {
            return Err(Error::Dimension(format!(
                "operator {}x{}, offset {}, bounds {}",
                a.nrows(),
                a.ncols(),
                offset.len(),
                upper.len()
            )));
        }
        check_bounds(&upper)?;
        Ok(ViSystem {
            state_block: a,
            coupling: None,
            offset,
            upper,
            context: None,
            saddle: None,
        })
    }

    /// Saddle system with state block `a` and coupling rows `c`.
    /// `upper` covers the state dofs; adjoint dofs are always free.
    pub fn saddle(a: CsrMatrix, c: CsrMatrix, offset: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = c.nrows();
        if a.ncols() != n || c.ncols() != n || offset.len() != n + m || upper.len() != n {
            return Err(Error::Dimension(format!(
                "state block {}x{}, coupling {}x{}, offset {}, bounds {}",
                a.nrows(),
                a.ncols(),
                c.nrows(),
                c.ncols(),
                offset.len(),
                upper.len()
            )));
        }
        check_bounds(&upper)?;
        let mut upper = upper;
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));
        Ok(ViSystem {
            state_block: a,
            coupling: Some(c),
            offset,
            upper,
            context: None,
            saddle: None,
        })
    }

    pub fn n_state(&self) -> usize {
        self.state_block.nrows()
    }

    pub fn n_adjoint(&self) -> usize {
        self.coupling.as_ref().map_or(0, CsrMatrix::nrows)
    }

    pub fn dim(&self) -> usize {
        self.n_state() + self.n_adjoint()
    }

    pub fn state_block(&self) -> &CsrMatrix {
        &self.state_block
    }

    pub fn coupling(&self) -> Option<&CsrMatrix> {
        self.coupling.as_ref()
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub(crate) fn offset_mut(&mut self) -> &mut [f64] {
        &mut self.offset
    }

    /// Upper bound per dof, `+inf` where free.
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_constrained(&self, i: usize) -> bool {
        self.upper[i].is_finite()
    }

    pub fn constrained_dofs(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.is_constrained(i)).collect()
    }

    pub fn context(&self) -> Option<&FeContext> {
        self.context.as_ref()
    }

    pub fn saddle_parts(&self) -> Option<&SaddleParts> {
        self.saddle.as_ref()
    }

    /// The same system with `S` and `b` multiplied by `c`.
    pub fn scaled(&self, c: f64) -> ViSystem {
        let mut s = self.clone();
        s.state_block = s.state_block.scaled(c);
        s.coupling = s.coupling.map(|m| m.scaled(c));
        s.offset.iter_mut().for_each(|v| *v *= c);
        s
    }

    /// `S x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let n = self.n_state();
        let (y, p) = x.split_at(n);
        let mut out = self.state_block.mul_vec(y);
        if let Some(c) = &self.coupling {
            c.add_transpose_mul(-1.0, p, &mut out);
            out.extend(c.mul_vec(y));
        }
        out
    }

    /// `S^T x`
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let n = self.n_state();
        let (y, p) = x.split_at(n);
        let mut out = vec![0.0; n];
        self.state_block.add_transpose_mul(1.0, y, &mut out);
        if let Some(c) = &self.coupling {
            let cy = c.mul_vec(y);
            c.add_transpose_mul(1.0, p, &mut out);
            out.extend(cy.into_iter().map(|v| -v));
        }
        out
    }

    /// `S x + b`
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.apply(x);
        for (gi, bi) in g.iter_mut().zip(&self.offset) {
            *gi += bi;
        }
        g
    }

    /// Projection onto the box.
    pub fn project_in_place(&self, x: &mut [f64]) {
        for (xi, &u) in x.iter_mut().zip(&self.upper) {
            if *xi > u {
                *xi = u;
            }
        }
    }

    /// `X - P(X - (S X + b))`
    pub fn natural_residual(&self, x: &[f64]) -> Vec<f64> {
        let g = self.gradient(x);
        let mut z: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
        self.project_in_place(&mut z);
        x.iter().zip(&z).map(|(a, b)| a - b).collect()
    }

    /// `||X - P(X - (S X + b))||_2`
    pub fn fixed_point_residual(&self, x: &[f64]) -> f64 {
        norm2(&self.natural_residual(x))
    }

    /// Dense copy of `S`.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut d = vec![vec![0.0; n]; n];
        for (j, col) in (0..n).map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            (j, self.apply(&e))
        }) {
            for i in 0..n {
                d[i][j] = col[i];
            }
        }
        d
    }

    /// Turn an algebraic solution into finite element fields.
    pub fn to_bundle(&self, sol: &ViSolution) -> Result<FeSolutionBundle> {
        let ctx = self
            .context
            .as_ref()
            .ok_or_else(|| Error::Unsupported("system has no finite element context".into()))?;
        if sol.x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "solution of length {} for a system of dimension {}",
                sol.x.len(),
                self.dim()
            )));
        }
        let mesh = &ctx.mesh;
        let n = self.n_state();
        let mut yu = vec![0.0; mesh.num_nodes()];
        for (k, &v) in ctx.state_nodes.iter().enumerate() {
            yu[v] = sol.x[k];
        }
        let p_h = if self.coupling.is_some() {
            let mut p = vec![0.0; mesh.num_nodes()];
            for (k, &v) in ctx.adjoint_nodes.iter().enumerate() {
                p[v] = sol.x[n + k];
            }
            Some(FeFunction::new(mesh.clone(), p)?)
        } else {
            None
        };
        let y: Vec<f64> = yu.iter().zip(ctx.yf.coeffs()).map(|(a, b)| a + b).collect();
        let g = self.gradient(&sol.x);
        Ok(FeSolutionBundle {
            y_h: FeFunction::new(mesh.clone(), y)?,
            y_u_h: FeFunction::new(mesh.clone(), yu)?,
            p_h,
            multiplier: g[..n].to_vec(),
            iterations: sol.iterations,
            final_residual: sol.final_residual,
        })
    }
}

fn check_bounds(upper: &[f64]) -> Result<()> {
    match upper.iter().find(|u| u.is_nan() || **u == f64::NEG_INFINITY) {
        Some(u) => Err(Error::InvalidArgument(format!("invalid upper bound {u}"))),
        None => Ok(()),
    }
}

/// Assemble the discrete variational inequality of `spec` on `mesh`.
///
/// ```
/// use std::sync::Arc;
/// use energy_vi::mesh::{build_mesh, Domain};
/// use energy_vi::problems::{build_vi_system, compute_yf, parse_case};
///
/// let spec = parse_case("dirichlet:1").unwrap();
/// let mesh = Arc::new(build_mesh(Domain::UnitSquare, 0).unwrap());
/// let yf = compute_yf(&spec, &mesh).unwrap();
/// let sys = build_vi_system(&spec, &mesh, &yf).unwrap();
/// assert_eq!((sys.n_state(), sys.n_adjoint()), (9, 1));
/// ```
pub fn build_vi_system(spec: &ProblemSpec, mesh: &Arc<Mesh>, yf: &FeFunction) -> Result<ViSystem> {
    if spec.kind == ProblemKind::GradientConstrained {
        return Err(Error::Unsupported(
            "gradient constraints are not a box-constrained system; use the penalized Newton solver".into(),
        ));
    }
    if yf.coeffs().len() != mesh.num_nodes() {
        return Err(Error::Dimension("y_f does not live on this mesh".into()));
    }
    let l = assemble_operator(mesh, spec.kind.form());
    let b = assemble_mass(mesh);
    let a_full = l.linear_combination(spec.alpha, &b, 1.0)?;
    let mut f = assemble_load(mesh, &spec.y_d)?;
    let b_yf = b.mul_vec(yf.coeffs());
    for (fi, v) in f.iter_mut().zip(&b_yf) {
        *fi -= v;
    }
    let interior = mesh.interior().to_vec();
    let state_nodes: Vec<usize> = if spec.kind.is_boundary_control() {
        (0..mesh.num_nodes()).collect()
    } else {
        interior.clone()
    };
    let mut upper = Vec::with_capacity(state_nodes.len());
    for &v in &state_nodes {
        let [x, y] = mesh.nodes()[v];
        let yb = spec.y_b.eval(x, y);
        if yb.is_nan() || yb == f64::NEG_INFINITY {
            return Err(Error::NonFinite { x, y, value: yb });
        }
        upper.push(yb - yf.coeffs()[v]);
    }
    let offset_state: Vec<f64> = state_nodes.iter().map(|&v| -f[v]).collect();

    let mut sys = if spec.kind.is_boundary_control() {
        let coupling = l.select(&interior, &state_nodes);
        let mut offset = offset_state;
        offset.extend(std::iter::repeat_n(0.0, interior.len()));
        let mut sys = ViSystem::saddle(a_full, coupling, offset, upper)?;
        sys.saddle = Some(SaddleParts {
            alpha: spec.alpha,
            dual_metric: assemble_stiffness(mesh).select(&interior, &interior),
            operator: l,
        });
        sys
    } else {
        let a = a_full.select(&interior, &interior);
        ViSystem::box_constrained(a, offset_state, upper)?
    };
    sys.context = Some(FeContext {
        kind: spec.kind,
        mesh: mesh.clone(),
        yf: yf.clone(),
        adjoint_nodes: if spec.kind.is_boundary_control() { interior } else { Vec::new() },
        state_nodes,
    });
    Ok(sys)
}
