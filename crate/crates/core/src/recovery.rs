//! Discrete controls recovered from a discrete state.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{
    BilinearForm, FeFunction, ScalarField, assemble_boundary_mass, assemble_load, assemble_mass, assemble_operator,
    local_gradients,
};
use crate::linsolve::solve_spd;
use crate::mesh::Mesh;
use crate::problems::ProblemKind;

/// A recovered control: a function vanishing on the boundary for distributed
/// problems, or nodal values along the boundary traversal for boundary control.
#[derive(Debug, Clone)]
pub enum RecoveredControl {
    Distributed(FeFunction),
    Boundary { mesh: Arc<Mesh>, values: Vec<f64> },
}

impl RecoveredControl {
    pub fn mesh(&self) -> &Arc<Mesh> {
        match self {
            RecoveredControl::Distributed(u) => u.mesh(),
            RecoveredControl::Boundary { mesh, .. } => mesh,
        }
    }

    pub fn is_boundary(&self) -> bool {
        matches!(self, RecoveredControl::Boundary { .. })
    }

    /// Interior values or boundary values, in mesh interior or boundary order.
    pub fn values(&self) -> Vec<f64> {
        match self {
            RecoveredControl::Distributed(u) => u.restrict(u.mesh().interior()),
            RecoveredControl::Boundary { values, .. } => values.clone(),
        }
    }

    /// P1 function on the whole mesh; boundary controls are extended by zero.
    pub fn to_function(&self) -> FeFunction {
        match self {
            RecoveredControl::Distributed(u) => u.clone(),
            RecoveredControl::Boundary { mesh, values } => {
                let mut c = vec![0.0; mesh.num_nodes()];
                for (&v, &x) in mesh.boundary().iter().zip(values) {
                    c[v] = x;
                }
                FeFunction::new(mesh.clone(), c).expect("one value per node")
            }
        }
    }
}

fn check_mesh(mesh: &Arc<Mesh>, y_h: &FeFunction) -> Result<()> {
    if y_h.coeffs().len() != mesh.num_nodes() {
        return Err(Error::Dimension(format!(
            "state with {} coefficients on a mesh with {} nodes",
            y_h.coeffs().len(),
            mesh.num_nodes()
        )));
    }
    Ok(())
}

/// `(u_h, v) = (grad y_h, grad v) - (f, v)` for all interior test functions.
pub fn recover_control_distributed(mesh: &Arc<Mesh>, y_h: &FeFunction, f: &ScalarField) -> Result<RecoveredControl> {
    check_mesh(mesh, y_h)?;
    let interior = mesh.interior();
    let k = assemble_operator(mesh, BilinearForm::GradGrad);
    let ky = k.mul_vec(y_h.coeffs());
    let load = assemble_load(mesh, f)?;
    let rhs: Vec<f64> = interior.iter().map(|&v| ky[v] - load[v]).collect();
    let mass = assemble_mass(mesh).select(interior, interior);
    let u = solve_spd(&mass, &rhs, None)?;
    let mut c = vec![0.0; mesh.num_nodes()];
    for (&v, &x) in interior.iter().zip(&u) {
        c[v] = x;
    }
    Ok(RecoveredControl::Distributed(FeFunction::new(mesh.clone(), c)?))
}

/// The Dirichlet control is the trace of the state.
pub fn recover_control_dirichlet(mesh: &Arc<Mesh>, y_h: &FeFunction) -> Result<RecoveredControl> {
    check_mesh(mesh, y_h)?;
    Ok(RecoveredControl::Boundary {
        mesh: mesh.clone(),
        values: y_h.restrict(mesh.boundary()),
    })
}

/// `<u_h, v>_Gamma = a(y_h, v) - (f, v)` for the boundary test functions, with
/// `a` the full `H^1` form.
pub fn recover_control_neumann(mesh: &Arc<Mesh>, y_h: &FeFunction, f: &ScalarField) -> Result<RecoveredControl> {
    check_mesh(mesh, y_h)?;
    let ay = assemble_operator(mesh, BilinearForm::GradGradPlusMass).mul_vec(y_h.coeffs());
    let load = assemble_load(mesh, f)?;
    let rhs: Vec<f64> = mesh.boundary().iter().map(|&v| ay[v] - load[v]).collect();
    let values = solve_spd(&assemble_boundary_mass(mesh), &rhs, None)?;
    Ok(RecoveredControl::Boundary {
        mesh: mesh.clone(),
        values,
    })
}

/// Normal derivative of `y_h` at boundary nodes, averaging the two adjacent
/// boundary edges weighted by length. Elementwise normal traces jump at
/// nodes, so this is a diagnostic rather than the recovery used in studies.
pub fn recover_control_neumann_flux(mesh: &Arc<Mesh>, y_h: &FeFunction) -> Result<RecoveredControl> {
    check_mesh(mesh, y_h)?;
    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if mesh.is_boundary(a) && mesh.is_boundary(b) {
                owner.insert((a.min(b), a.max(b)), t);
            }
        }
    }
    let nb = mesh.boundary().len();
    let mut flux = vec![0.0; nb];
    let mut weight = vec![0.0; nb];
    for (k, (a, b)) in mesh.boundary_edges().enumerate() {
        let t = *owner
            .get(&(a.min(b), a.max(b)))
            .ok_or_else(|| Error::Internal("boundary edge without a triangle".into()))?;
        let (grads, _) = local_gradients(mesh, t);
        let tri = mesh.triangles()[t];
        let mut g = [0.0; 2];
        for i in 0..3 {
            g[0] += y_h.coeffs()[tri[i]] * grads[i][0];
            g[1] += y_h.coeffs()[tri[i]] * grads[i][1];
        }
        let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
        let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
        let len = dx.hypot(dy);
        // Counter-clockwise traversal: the outward normal is the edge rotated clockwise.
        let dn = (g[0] * dy - g[1] * dx) / len;
        for node in [k, (k + 1) % nb] {
            flux[node] += len * dn;
            weight[node] += len;
        }
    }
    let values = flux.iter().zip(&weight).map(|(f, w)| f / w).collect();
    Ok(RecoveredControl::Boundary {
        mesh: mesh.clone(),
        values,
    })
}

/// The recovery used for each problem kind.
pub fn recover_control(kind: ProblemKind, mesh: &Arc<Mesh>, y_h: &FeFunction, f: &ScalarField) -> Result<RecoveredControl> {
    match kind {
        ProblemKind::Distributed | ProblemKind::GradientConstrained => recover_control_distributed(mesh, y_h, f),
        ProblemKind::DirichletBc => recover_control_dirichlet(mesh, y_h),
        ProblemKind::NeumannBc => recover_control_neumann(mesh, y_h, f),
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::fem::{FeSpace, NormKind, assemble_stiffness, interpolate_nodal};
    use crate::mesh::{Domain, build_mesh};

    fn mesh(level: u32) -> Arc<Mesh> {
        Arc::new(build_mesh(Domain::UnitSquare, level).unwrap())
    }

    #[test]
    fn zero_state_gives_zero_controls() {
        let m = mesh(2);
        let zero = FeFunction::zeros(m.clone());
        let f = ScalarField::zero();
        for kind in [ProblemKind::Distributed, ProblemKind::DirichletBc, ProblemKind::NeumannBc] {
            let u = recover_control(kind, &m, &zero, &f).unwrap();
            assert!(u.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn distributed_round_trip() {
        let m = mesh(4);
        let target = ScalarField::new("u", |x, y| (PI * x).sin() * (PI * y).sin());
        let load = assemble_load(&m, &target).unwrap();
        let fixed: Vec<(usize, f64)> = m.boundary().iter().map(|&v| (v, 0.0)).collect();
        let y = solve_spd(&assemble_stiffness(&m), &load, Some(&fixed)).unwrap();
        let y = FeFunction::new(m.clone(), y).unwrap();
        let u = recover_control_distributed(&m, &y, &ScalarField::zero()).unwrap().to_function();

        // The mass system is solved to a small residual.
        let interior = m.interior();
        let mu = assemble_mass(&m).mul_vec(u.coeffs());
        let ky = assemble_stiffness(&m).mul_vec(y.coeffs());
        for &v in interior {
            assert!((mu[v] - ky[v]).abs() < 1e-10);
        }
        let exact = interpolate_nodal(&m, &target).unwrap();
        let diff: Vec<f64> = u.coeffs().iter().zip(exact.coeffs()).map(|(a, b)| a - b).collect();
        let err = FeSpace::new(m.clone()).norm(&diff, NormKind::L2).unwrap();
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn dirichlet_trace() {
        let m = mesh(2);
        let c = interpolate_nodal(&m, &ScalarField::constant(0.7)).unwrap();
        let u = recover_control_dirichlet(&m, &c).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.7));
        let x = interpolate_nodal(&m, &ScalarField::new("x", |x, _| x)).unwrap();
        let u = recover_control_dirichlet(&m, &x).unwrap();
        for (&v, &val) in m.boundary().iter().zip(&u.values()) {
            assert_eq!(val, m.nodes()[v][0]);
        }
        let back = u.to_function();
        for &v in m.interior() {
            assert_eq!(back.coeffs()[v], 0.0);
        }
    }

    #[test]
    fn neumann_of_constant_state() {
        let m = mesh(3);
        let one = interpolate_nodal(&m, &ScalarField::constant(1.0)).unwrap();
        let u = recover_control_neumann(&m, &one, &ScalarField::constant(1.0)).unwrap();
        assert!(u.values().iter().all(|v| v.abs() < 1e-12));
    }

    fn neumann_error(level: u32, flux: bool) -> f64 {
        // y = x^2: -y'' + y = x^2 - 2, outward derivative 2 on x = 1 and 0 elsewhere.
        let m = mesh(level);
        let y = interpolate_nodal(&m, &ScalarField::new("x^2", |x, _| x * x)).unwrap();
        let f = ScalarField::new("f", |x, _| x * x - 2.0);
        let u = if flux {
            recover_control_neumann_flux(&m, &y).unwrap()
        } else {
            recover_control_neumann(&m, &y, &f).unwrap()
        };
        let exact: Vec<f64> = m
            .boundary()
            .iter()
            .map(|&v| {
                let [x, y] = m.nodes()[v];
                if x == 1.0 && y > 0.0 && y < 1.0 { 2.0 } else if x == 1.0 { 1.0 } else { 0.0 }
            })
            .collect();
        let diff: Vec<f64> = u.values().iter().zip(&exact).map(|(a, b)| a - b).collect();
        FeSpace::new(m).boundary_norm(&diff).unwrap()
    }

    #[test]
    fn neumann_recovers_normal_derivative() {
        let (coarse, fine) = (neumann_error(2, false), neumann_error(5, false));
        assert!(fine < 0.5 * coarse && fine < 0.2, "{coarse} {fine}");
        let (coarse, fine) = (neumann_error(2, true), neumann_error(5, true));
        assert!(fine < 0.5 * coarse && fine < 0.2, "{coarse} {fine}");
    }
}
