use super::{DIVERGENCE_GUARD, SolverConfig, projection_gradient_from};
use crate::error::{Error, Result};
use crate::linsolve::SparseLdlt;
use crate::problems::{ViSolution, ViSystem};

/// Primal-dual hybrid gradient iteration for boundary-control saddle systems.
///
/// Primal step: the obstacle problem
/// `((alpha + gamma) L + B) y - gamma L y_k - C^T p_k - f` with `y <= psi`,
/// solved by the projection gradient method to `tol / 10`.
/// Dual step: `s K p_{k+1} = s K p_k - C (2 y_{k+1} - y_k)` with `K` the
/// interior stiffness matrix. Stops on the fixed-point residual of the full
/// system.
pub fn pdhg_solve(sys: &ViSystem, cfg: &SolverConfig) -> Result<ViSolution> {
    cfg.validate()?;
    let parts = sys
        .saddle_parts()
        .ok_or_else(|| Error::Unsupported("PDHG needs a boundary-control saddle system".into()))?;
    let coupling = sys.coupling().expect("saddle system has coupling rows");
    let n = sys.n_state();
    let m = sys.n_adjoint();
    let gamma = cfg.pdhg_prox_y.unwrap_or(10.0 * parts.alpha);
    let s = cfg.pdhg_prox_p.unwrap_or((2.0 / gamma).max(1.0));

    let primal_matrix = parts.operator.linear_combination(gamma, sys.state_block(), 1.0)?;
    let state_offset = &sys.offset()[..n];
    let upper = sys.upper()[..n].to_vec();
    let dual = SparseLdlt::new(&parts.dual_metric, None)?;
    let inner = SolverConfig {
        tol: cfg.tol / 10.0,
        record_history: false,
        ..cfg.clone()
    };

    let mut sub = ViSystem::box_constrained(primal_matrix, vec![0.0; n], upper.clone())?;
    let mut y: Vec<f64> = upper.iter().map(|&u| u.min(0.0)).collect();
    let mut p = vec![0.0; m];
    let mut x = vec![0.0; n + m];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        x[..n].copy_from_slice(&y);
        x[n..].copy_from_slice(&p);
        let residual = sys.fixed_point_residual(&x);
        if cfg.record_history {
            history.push(residual);
        }
        if residual < cfg.tol {
            return Ok(ViSolution {
                x,
                iterations,
                final_residual: residual,
                history,
            });
        }
        if !residual.is_finite() || residual > DIVERGENCE_GUARD {
            return Err(Error::Divergence {
                solver: "PDHG",
                iteration: iterations,
                gamma,
            });
        }
        if iterations >= cfg.max_iter {
            return Err(Error::NonConvergence {
                solver: "PDHG",
                iterations,
                residual,
                history,
            });
        }

        let ly = parts.operator.mul_vec(&y);
        let offset = sub.offset_mut();
        for i in 0..n {
            offset[i] = state_offset[i] - gamma * ly[i];
        }
        coupling.add_transpose_mul(-1.0, &p, offset);
        let y_next = projection_gradient_from(&sub, &inner, Some(&y))?.x;

        let extrapolated: Vec<f64> = y_next.iter().zip(&y).map(|(a, b)| 2.0 * a - b).collect();
        let dp = dual.solve(&coupling.mul_vec(&extrapolated));
        for (pi, d) in p.iter_mut().zip(dp) {
            *pi -= d / s;
        }
        y = y_next;
        iterations += 1;
    }
}
