//! Gradient state constraints `|grad y| <= y_b` by penalization and
//! semismooth Newton iteration.
//!
//! For a penalty `gamma` the state minimizes
//!
//! ```text
//! J(y) = 1/2 (alpha |grad y|^2 + y^2) - (y_d, y) + gamma/2 max(0, |grad y|^2 - y_b^2)^2
//! ```
//!
//! over `H^1_0`. Gradients of P1 functions are constant per triangle, so the
//! active set is a set of triangles. Each Newton step solves
//!
//! ```text
//! (alpha + 2 gamma chi (|g|^2 - y_b^2)) (grad y', grad v) + 4 gamma chi (grad y' . g)(g . grad v) + (y', v)
//!     = 4 gamma chi |g|^2 (g . grad v) + (y_d, v)
//! ```
//!
//! with `g` the gradient of the current iterate, which is Newton's method for
//! `J' = 0` with the generalized derivative of `max(0, .)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{
    BilinearForm, FeFunction, ScalarField, assemble_load, assemble_operator, local_gradients, local_mass,
    p1_pattern, scatter,
};
use crate::linsolve::SparseLdlt;
use crate::mesh::Mesh;
use crate::problems::{FeSolutionBundle, ProblemKind, ProblemSpec};
use crate::sparse::CsrMatrix;

/// Penalty values and Newton stopping rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationSchedule {
    pub gamma_values: Vec<f64>,
    /// Stop a Newton loop once the `H^1` norm of the increment drops below this.
    pub newton_tol: f64,
    pub newton_max: usize,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        ContinuationSchedule {
            gamma_values: vec![1.0, 10.0, 100.0, 1e3, 1e4, 1e5],
            newton_tol: 1e-10,
            newton_max: 50,
        }
    }
}

impl ContinuationSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_values.is_empty() {
            return Err(Error::InvalidArgument("empty penalty schedule".into()));
        }
        if self.gamma_values.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidArgument("penalties must be positive and finite".into()));
        }
        if self.gamma_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("penalties must increase strictly".into()));
        }
        if !(self.newton_tol > 0.0) || self.newton_max == 0 {
            return Err(Error::InvalidArgument("Newton tolerance and step cap must be positive".into()));
        }
        Ok(())
    }
}

/// Current Newton iterate together with its active triangles.
#[derive(Debug, Clone)]
pub struct PenaltyState {
    pub gamma: f64,
    pub y: FeFunction,
    /// `|grad y|^2 > y_b^2` on the triangle.
    pub active_elements: Vec<bool>,
}

impl PenaltyState {
    pub fn new(gamma: f64, y: FeFunction, y_b: &ScalarField) -> Self {
        let bound = bound_squared(y.mesh(), y_b);
        let active_elements = active_set(&y, &bound);
        PenaltyState {
            gamma,
            y,
            active_elements,
        }
    }

    pub fn refresh_active(&mut self, y_b: &ScalarField) {
        self.active_elements = active_set(&self.y, &bound_squared(self.y.mesh(), y_b));
    }

    pub fn num_active(&self) -> usize {
        self.active_elements.iter().filter(|&&a| a).count()
    }
}

/// `y_b^2` at triangle centroids.
fn bound_squared(mesh: &Mesh, y_b: &ScalarField) -> Vec<f64> {
    mesh.triangles()
        .iter()
        .map(|tri| {
            let [a, b, c] = tri.map(|v| mesh.nodes()[v]);
            y_b.eval((a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0).powi(2)
        })
        .collect()
}

fn active_set(y: &FeFunction, bound: &[f64]) -> Vec<bool> {
    (0..y.mesh().num_triangles())
        .map(|t| {
            let g = y.gradient_on(t);
            g[0] * g[0] + g[1] * g[1] > bound[t]
        })
        .collect()
}

/// Largest pointwise excess `max_T (|grad y| - y_b)^+`.
pub fn gradient_violation(y: &FeFunction, y_b: &ScalarField) -> f64 {
    let bound = bound_squared(y.mesh(), y_b);
    (0..y.mesh().num_triangles())
        .map(|t| {
            let g = y.gradient_on(t);
            (g[0].hypot(g[1]) - bound[t].sqrt()).max(0.0)
        })
        .fold(0.0, f64::max)
}

struct ElementTerms {
    matrix: [[f64; 3]; 3],
    rhs: [f64; 3],
}

fn element_terms(grads: &[[f64; 2]; 3], area: f64, g: [f64; 2], bound: f64, alpha: f64, gamma: f64) -> ElementTerms {
    let norm2 = g[0] * g[0] + g[1] * g[1];
    let active = norm2 > bound;
    let weight = if active { alpha + 2.0 * gamma * (norm2 - bound) } else { alpha };
    let mass = local_mass(area);
    let gdot: [f64; 3] = std::array::from_fn(|i| grads[i][0] * g[0] + grads[i][1] * g[1]);
    let mut matrix = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            let kij = grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1];
            matrix[i][j] = area * weight * kij + mass[i][j];
            if active {
                matrix[i][j] += area * 4.0 * gamma * gdot[i] * gdot[j];
            }
        }
        if active {
            rhs[i] = area * 4.0 * gamma * norm2 * gdot[i];
        }
    }
    ElementTerms { matrix, rhs }
}

/// Reusable data for assembling Newton systems on one mesh.
struct NewtonAssembler {
    mesh: Arc<Mesh>,
    alpha: f64,
    bound: Vec<f64>,
    load: Vec<f64>,
    interior: Vec<usize>,
}

impl NewtonAssembler {
    fn new(spec: &ProblemSpec, mesh: &Arc<Mesh>) -> Result<Self> {
        Ok(NewtonAssembler {
            mesh: mesh.clone(),
            alpha: spec.alpha,
            bound: bound_squared(mesh, &spec.y_b),
            load: assemble_load(mesh, &spec.y_d)?,
            interior: mesh.interior().to_vec(),
        })
    }

    /// Newton matrix and right-hand side restricted to interior nodes.
    fn assemble(&self, y: &[f64], gamma: f64) -> (CsrMatrix, Vec<f64>) {
        let mesh = &self.mesh;
        let mut a = p1_pattern(mesh);
        let mut rhs = self.load.clone();
        for t in 0..mesh.num_triangles() {
            let tri = mesh.triangles()[t];
            let (grads, area) = local_gradients(mesh, t);
            let mut g = [0.0; 2];
            for k in 0..3 {
                g[0] += y[tri[k]] * grads[k][0];
                g[1] += y[tri[k]] * grads[k][1];
            }
            let e = element_terms(&grads, area, g, self.bound[t], self.alpha, gamma);
            scatter(&mut a, tri, &e.matrix);
            for k in 0..3 {
                rhs[tri[k]] += e.rhs[k];
            }
        }
        let rhs = self.interior.iter().map(|&v| rhs[v]).collect();
        (a.select(&self.interior, &self.interior), rhs)
    }

    fn extend(&self, interior_values: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.mesh.num_nodes()];
        for (&v, &x) in self.interior.iter().zip(interior_values) {
            full[v] = x;
        }
        full
    }
}

/// Newton system for the current state, with boundary dofs eliminated.
///
/// ```
/// use std::sync::Arc;
/// use energy_vi::fem::FeFunction;
/// use energy_vi::gradient_ssn::{newton_step_assemble, PenaltyState};
/// use energy_vi::mesh::{build_mesh, Domain};
/// use energy_vi::problems::parse_case;
///
/// let spec = parse_case("gradient:1").unwrap();
/// let mesh = Arc::new(build_mesh(Domain::UnitSquare, 1).unwrap());
/// let state = PenaltyState::new(1.0, FeFunction::zeros(mesh.clone()), &spec.y_b);
/// let (a, rhs) = newton_step_assemble(&mesh, &state, &spec).unwrap();
/// assert_eq!((a.nrows(), rhs.len()), (9, 9));
/// ```
pub fn newton_step_assemble(
    mesh: &Arc<Mesh>,
    state: &PenaltyState,
    spec: &ProblemSpec,
) -> Result<(CsrMatrix, Vec<f64>)> {
    if state.y.coeffs().len() != mesh.num_nodes() {
        return Err(Error::Dimension("state does not live on this mesh".into()));
    }
    let asm = NewtonAssembler::new(spec, mesh)?;
    Ok(asm.assemble(state.y.coeffs(), state.gamma))
}

/// Progress of the Newton loop for one penalty value.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaStep {
    pub gamma: f64,
    pub newton_steps: usize,
    /// `H^1` norm of the last increment.
    pub last_increment: f64,
    pub converged: bool,
    pub active_elements: usize,
    pub violation: f64,
}

#[derive(Debug, Clone)]
pub struct SsnSolution {
    pub bundle: FeSolutionBundle,
    pub steps: Vec<GammaStep>,
    /// `max_T (|grad y| - y_b)^+` of the final state.
    pub violation: f64,
}

/// Number of consecutive increment growths treated as divergence.
const GROWTH_LIMIT: usize = 5;

/// Solve the gradient-constrained problem by penalty continuation.
pub fn ssn_penalized_solve(spec: &ProblemSpec, mesh: &Arc<Mesh>, sched: &ContinuationSchedule) -> Result<SsnSolution> {
    if spec.kind != ProblemKind::GradientConstrained {
        return Err(Error::Unsupported(format!(
            "the penalized Newton solver handles gradient constraints, not {}",
            spec.kind.name()
        )));
    }
    if mesh.domain() != spec.domain {
        return Err(Error::InvalidArgument(format!("{} mesh for a problem posed on {}", mesh.domain(), spec.domain)));
    }
    sched.validate()?;
    if assemble_load(mesh, &spec.f)?.iter().any(|&v| v != 0.0) {
        return Err(Error::Unsupported("gradient constraints with a nonzero source".into()));
    }
    let asm = NewtonAssembler::new(spec, mesh)?;
    let h1 = assemble_operator(mesh, BilinearForm::GradGradPlusMass).select(&asm.interior, &asm.interior);

    // With gamma = 0 the penalty drops out and the step is the unconstrained solve.
    let (a0, rhs0) = asm.assemble(&vec![0.0; mesh.num_nodes()], 0.0);
    let mut factor = SparseLdlt::new(&a0, None)?;
    let mut y_int = factor.solve(&rhs0);
    let mut y = asm.extend(&y_int);

    let mut steps = Vec::with_capacity(sched.gamma_values.len());
    let mut total = 0;
    let mut last_increment = 0.0;
    for &gamma in &sched.gamma_values {
        let mut prev = f64::INFINITY;
        let mut growth = 0;
        let mut k = 0;
        let mut converged = false;
        while k < sched.newton_max {
            let (a, rhs) = asm.assemble(&y, gamma);
            factor.refactor(&a)?;
            let next = factor.solve(&rhs);
            let inc: Vec<f64> = next.iter().zip(&y_int).map(|(a, b)| a - b).collect();
            last_increment = h1.quadratic_form(&inc).max(0.0).sqrt();
            y_int = next;
            y = asm.extend(&y_int);
            k += 1;
            if !last_increment.is_finite() {
                return Err(Error::Divergence {
                    solver: "semismooth Newton",
                    iteration: k,
                    gamma,
                });
            }
            if last_increment < sched.newton_tol {
                converged = true;
                break;
            }
            growth = if last_increment > prev { growth + 1 } else { 0 };
            if growth >= GROWTH_LIMIT {
                return Err(Error::Divergence {
                    solver: "semismooth Newton",
                    iteration: k,
                    gamma,
                });
            }
            prev = last_increment;
        }
        total += k;
        let f = FeFunction::new(mesh.clone(), y.clone())?;
        steps.push(GammaStep {
            gamma,
            newton_steps: k,
            last_increment,
            converged,
            active_elements: active_set(&f, &asm.bound).iter().filter(|&&a| a).count(),
            violation: gradient_violation(&f, &spec.y_b),
        });
    }

    let y_h = FeFunction::new(mesh.clone(), y)?;
    let violation = gradient_violation(&y_h, &spec.y_b);
    Ok(SsnSolution {
        bundle: FeSolutionBundle {
            y_u_h: y_h.clone(),
            y_h,
            p_h: None,
            multiplier: Vec::new(),
            iterations: total,
            final_residual: last_increment,
        },
        steps,
        violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble_mass;
    use crate::fem::assemble_stiffness;
    use crate::linsolve::solve_spd;
    use crate::mesh::{Domain, build_mesh};
    use crate::problems::parse_case;

    fn mesh(level: u32) -> Arc<Mesh> {
        Arc::new(build_mesh(Domain::UnitSquare, level).unwrap())
    }

    fn spec_with(y_b: f64, y_d: ScalarField) -> ProblemSpec {
        ProblemSpec::new(
            ProblemKind::GradientConstrained,
            Domain::UnitSquare,
            0.1,
            y_d,
            ScalarField::constant(y_b),
            "t",
        )
        .unwrap()
    }

    /// `J'(y)` on interior nodes, assembled directly from the functional.
    fn penalty_gradient(asm: &NewtonAssembler, y: &[f64], gamma: f64) -> Vec<f64> {
        let mesh = &asm.mesh;
        let mut out: Vec<f64> = assemble_mass(mesh).mul_vec(y).iter().zip(&asm.load).map(|(a, b)| a - b).collect();
        for t in 0..mesh.num_triangles() {
            let tri = mesh.triangles()[t];
            let (grads, area) = local_gradients(mesh, t);
            let g = [0, 1].map(|d| (0..3).map(|k| y[tri[k]] * grads[k][d]).sum::<f64>());
            let n2 = g[0] * g[0] + g[1] * g[1];
            let w = asm.alpha + 2.0 * gamma * (n2 - asm.bound[t]).max(0.0);
            for k in 0..3 {
                out[tri[k]] += area * w * (g[0] * grads[k][0] + g[1] * grads[k][1]);
            }
        }
        asm.interior.iter().map(|&v| out[v]).collect()
    }

    fn wavy(m: &Mesh, amp: f64) -> Vec<f64> {
        m.nodes()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if m.is_boundary(i) {
                    0.0
                } else {
                    amp * ((3.0 * p[0]).sin() * (2.0 * p[1] + 0.3).cos() + 0.2 * (i as f64).sin())
                }
            })
            .collect()
    }

    #[test]
    fn inactive_constraint_reduces_to_regularized_operator() {
        let m = mesh(2);
        let spec = parse_case("gradient:1").unwrap();
        let state = PenaltyState::new(1e3, FeFunction::zeros(m.clone()), &spec.y_b);
        assert_eq!(state.num_active(), 0);
        let (a, rhs) = newton_step_assemble(&m, &state, &spec).unwrap();
        let expected = assemble_operator(&m, BilinearForm::GradGrad)
            .linear_combination(0.1, &assemble_mass(&m), 1.0)
            .unwrap()
            .select(m.interior(), m.interior());
        assert_eq!(a.indices(), expected.indices());
        for (u, v) in a.values().iter().zip(expected.values()) {
            assert!((u - v).abs() < 1e-15);
        }
        let load = assemble_load(&m, &spec.y_d).unwrap();
        for (k, &v) in m.interior().iter().enumerate() {
            assert_eq!(rhs[k], load[v]);
        }
    }

    #[test]
    fn single_active_element_weights() {
        let grads = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let (alpha, gamma, area) = (0.1, 7.0, 0.5);
        let e = element_terms(&grads, area, [1.0, 0.0], 0.0, alpha, gamma);
        let mass = local_mass(area);
        for i in 0..3 {
            for j in 0..3 {
                let kij = grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1];
                let outer = 4.0 * gamma * grads[i][0] * grads[j][0];
                let want = area * ((alpha + 2.0 * gamma) * kij + outer) + mass[i][j];
                assert!((e.matrix[i][j] - want).abs() < 1e-13);
            }
            assert!((e.rhs[i] - area * 4.0 * gamma * grads[i][0]).abs() < 1e-13);
        }
        let idle = element_terms(&grads, area, [0.5, 0.0], 1.0, alpha, gamma);
        assert_eq!(idle.rhs, [0.0; 3]);
    }

    #[test]
    fn newton_matrix_is_jacobian_of_penalized_gradient() {
        let m = mesh(2);
        let spec = spec_with(0.6, ScalarField::new("bump", |x, y| 3.0 * x * y));
        let asm = NewtonAssembler::new(&spec, &m).unwrap();
        let y = wavy(&m, 1.0);
        let gamma = 40.0;
        let (a, rhs) = asm.assemble(&y, gamma);
        assert!(a.max_asymmetry() < 1e-13 * a.norm_inf());

        // Consistency: A(y) y - rhs(y) = J'(y).
        let yi: Vec<f64> = m.interior().iter().map(|&v| y[v]).collect();
        let ay = a.mul_vec(&yi);
        let grad = penalty_gradient(&asm, &y, gamma);
        for k in 0..yi.len() {
            assert!((ay[k] - rhs[k] - grad[k]).abs() < 1e-10 * (1.0 + grad[k].abs()));
        }

        // Central differences of J' reproduce the matrix away from the kink.
        let eps = 1e-7;
        let dense = a.to_dense();
        for (col, &v) in m.interior().iter().enumerate() {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[v] += eps;
            ym[v] -= eps;
            let before = active_set(&FeFunction::new(m.clone(), ym.clone()).unwrap(), &asm.bound);
            let after = active_set(&FeFunction::new(m.clone(), yp.clone()).unwrap(), &asm.bound);
            if before != after {
                continue;
            }
            let gp = penalty_gradient(&asm, &yp, gamma);
            let gm = penalty_gradient(&asm, &ym, gamma);
            for row in 0..yi.len() {
                let fd = (gp[row] - gm[row]) / (2.0 * eps);
                let scale = 1.0 + dense[row][col].abs();
                assert!((fd - dense[row][col]).abs() < 1e-5 * scale, "({row},{col}) {fd} vs {}", dense[row][col]);
            }
        }
    }

    #[test]
    fn loose_bound_gives_unconstrained_solution() {
        let m = mesh(3);
        let mut spec = parse_case("gradient:1").unwrap();
        spec.y_b = ScalarField::constant(10.0);
        let sol = ssn_penalized_solve(&spec, &m, &ContinuationSchedule::default()).unwrap();
        let k = assemble_stiffness(&m).linear_combination(spec.alpha, &assemble_mass(&m), 1.0).unwrap();
        let load = assemble_load(&m, &spec.y_d).unwrap();
        let fixed: Vec<(usize, f64)> = m.boundary().iter().map(|&v| (v, 0.0)).collect();
        let direct = solve_spd(&k, &load, Some(&fixed)).unwrap();
        for (u, v) in sol.bundle.y_h.coeffs().iter().zip(&direct) {
            assert!((u - v).abs() < 1e-10);
        }
        assert!(sol.steps.iter().all(|s| s.active_elements == 0));
    }

    #[test]
    fn zero_target_gives_zero_state() {
        let m = mesh(2);
        let spec = spec_with(1.0, ScalarField::zero());
        let sol = ssn_penalized_solve(&spec, &m, &ContinuationSchedule::default()).unwrap();
        assert!(sol.bundle.y_h.coeffs().iter().all(|&v| v == 0.0));
        assert_eq!(sol.violation, 0.0);
    }

    #[test]
    fn violation_decreases_along_schedule() {
        let m = mesh(3);
        let spec = parse_case("gradient:1").unwrap();
        let sol = ssn_penalized_solve(&spec, &m, &ContinuationSchedule::default()).unwrap();
        assert_eq!(sol.steps.len(), 6);
        assert!(sol.steps[0].violation > 0.0);
        for w in sol.steps.windows(2) {
            assert!(w[1].violation <= w[0].violation + 1e-8, "{:?}", sol.steps);
        }
        assert!(sol.violation < 1e-2);
    }

    #[test]
    fn rejects_other_kinds_and_bad_schedules() {
        let m = mesh(1);
        let spec = parse_case("distributed:2").unwrap();
        assert!(matches!(
            ssn_penalized_solve(&spec, &m, &ContinuationSchedule::default()),
            Err(Error::Unsupported(_))
        ));
        let spec = parse_case("gradient:1").unwrap();
        let bad = ContinuationSchedule {
            gamma_values: vec![10.0, 1.0],
            ..Default::default()
        };
        assert!(ssn_penalized_solve(&spec, &m, &bad).is_err());
    }
}
