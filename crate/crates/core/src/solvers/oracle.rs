use crate::error::{Error, Result};
use crate::linsolve::dense_solve;
use crate::problems::ViSystem;

pub const MAX_CONSTRAINED: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub x: Vec<f64>,
    /// Constrained dofs held at their bound.
    pub active: Vec<usize>,
    /// `S X + b` on the active dofs.
    pub multiplier: Vec<f64>,
}

/// Exhaustive active-set search for systems with at most 16 constrained dofs.
///
/// For each subset `A` the rows in `A` are replaced by `X_i = upper_i` and the
/// remaining rows (adjoint rows included) by `(S X + b)_i = 0`. The first
/// candidate that is feasible with `S X + b <= 1e-12` on `A` is returned.
pub fn active_set_oracle(sys: &ViSystem) -> Result<OracleSolution> {
    let constrained = sys.constrained_dofs();
    let m = constrained.len();
    if m > MAX_CONSTRAINED {
        return Err(Error::TooLarge(m));
    }
    let n = sys.dim();
    let s = sys.dense();
    let b = sys.offset();
    let upper = sys.upper();
    let feas_tol = 1e-12 * (1.0 + constrained.iter().map(|&i| upper[i].abs()).fold(0.0, f64::max));
    for mask in 0u32..(1u32 << m) {
        let active: Vec<usize> = (0..m).filter(|k| mask >> k & 1 == 1).map(|k| constrained[k]).collect();
        let mut rows = s.clone();
        let mut rhs: Vec<f64> = b.iter().map(|v| -v).collect();
        for &i in &active {
            rows[i] = vec![0.0; n];
            rows[i][i] = 1.0;
            rhs[i] = upper[i];
        }
        let Some(x) = dense_solve(&rows, &rhs) else {
            continue;
        };
        if constrained.iter().any(|&i| x[i] > upper[i] + feas_tol) {
            continue;
        }
        let g = sys.gradient(&x);
        let multiplier: Vec<f64> = active.iter().map(|&i| g[i]).collect();
        if multiplier.iter().all(|&l| l <= 1e-12) {
            let mut x = x;
            for &i in &active {
                x[i] = upper[i];
            }
            return Ok(OracleSolution { x, active, multiplier });
        }
    }
    Err(Error::Internal("no active set satisfies the optimality conditions".into()))
}
