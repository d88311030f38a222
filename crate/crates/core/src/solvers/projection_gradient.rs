use super::{DIVERGENCE_GUARD, SolverConfig};
use crate::error::{Error, Result};
use crate::problems::{ViSolution, ViSystem};
use crate::sparse::dot;

/// Projection gradient iteration from the projection of the origin.
///
/// Each step computes `g = S X + b`, `e = X - P(X - g)`, `d = S^T e + g`,
/// `rho = |e|^2 / |(S^T + I) e|^2` and sets `X = P(X - rho d)`.
///
/// ```
/// use energy_vi::problems::ViSystem;
/// use energy_vi::solvers::{projection_gradient_solve, SolverConfig};
/// use energy_vi::sparse::CsrMatrix;
///
/// let sys = ViSystem::box_constrained(
///     CsrMatrix::from_diagonal(&[2.0, 2.0]),
///     vec![-2.0, -2.0],
///     vec![0.5, f64::INFINITY],
/// ).unwrap();
/// let sol = projection_gradient_solve(&sys, &SolverConfig::default()).unwrap();
/// assert!((sol.x[0] - 0.5).abs() < 1e-7 && (sol.x[1] - 1.0).abs() < 1e-7);
/// ```
pub fn projection_gradient_solve(sys: &ViSystem, cfg: &SolverConfig) -> Result<ViSolution> {
    projection_gradient_from(sys, cfg, None)
}

/// Projection gradient iteration from a given starting point.
pub fn projection_gradient_from(sys: &ViSystem, cfg: &SolverConfig, x0: Option<&[f64]>) -> Result<ViSolution> {
    cfg.validate()?;
    let n = sys.dim();
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        Some(x0) => {
            return Err(Error::Dimension(format!("start of length {} for dimension {n}", x0.len())));
        }
        None => vec![0.0; n],
    };
    sys.project_in_place(&mut x);
    let mut history = Vec::new();
    let mut e = vec![0.0; n];
    let mut step = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let g = sys.gradient(&x);
        for i in 0..n {
            e[i] = x[i] - (x[i] - g[i]).min(sys.upper()[i]);
        }
        let ee = dot(&e, &e);
        let residual = ee.sqrt();
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
                solver: "projection gradient",
                iteration: iterations,
                gamma: 0.0,
            });
        }
        if iterations >= cfg.max_iter {
            return Err(Error::NonConvergence {
                solver: "projection gradient",
                iterations,
                residual,
                history,
            });
        }
        let ste = sys.apply_transpose(&e);
        let mut denom = 0.0;
        for i in 0..n {
            let v = ste[i] + e[i];
            denom += v * v;
            step[i] = ste[i] + g[i];
        }
        let rho = ee / denom;
        for i in 0..n {
            x[i] = (x[i] - rho * step[i]).min(sys.upper()[i]);
        }
        iterations += 1;
    }
}
