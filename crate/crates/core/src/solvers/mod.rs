//! Solvers for the discrete variational inequality `X = P(X - (S X + b))`.

mod interior_point;
mod oracle;
mod pdhg;
mod projection_gradient;

pub use interior_point::{InteriorPointConfig, interior_point_solve};
pub use oracle::{MAX_CONSTRAINED, OracleSolution, active_set_oracle};
pub use pdhg::pdhg_solve;
pub use projection_gradient::{projection_gradient_from, projection_gradient_solve};

use crate::error::{Error, Result};
use crate::problems::{FeSolutionBundle, ViSolution, ViSystem};
use crate::sparse::norm2;

pub const DEFAULT_TOL: f64 = 5.0e-8;
pub const DEFAULT_MAX_ITER: usize = 200_000;
pub const DIVERGENCE_GUARD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// PDHG primal proximal weight; `None` means `10 alpha`.
    pub pdhg_prox_y: Option<f64>,
    /// PDHG dual proximal weight; `None` means `max(1, 2 / gamma)` so that
    /// `gamma * s >= 2`.
    pub pdhg_prox_p: Option<f64>,
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            pdhg_prox_y: None,
            pdhg_prox_p: None,
            record_history: false,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.pdhg_prox_y.is_some_and(|g| !(g > 0.0)) || self.pdhg_prox_p.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("proximal weights must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    /// Projection gradient iteration.
    ProjectionGradient,
    /// Primal-dual hybrid gradient (boundary control only).
    Pdhg,
    /// Penalized semismooth Newton (gradient constraints only).
    Ssn,
    /// Primal-dual interior point with sparse direct solves.
    InteriorPoint,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::ProjectionGradient => "pg",
            SolverKind::Pdhg => "pdhg",
            SolverKind::Ssn => "ssn",
            SolverKind::InteriorPoint => "ipm",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            SolverKind::ProjectionGradient,
            SolverKind::Pdhg,
            SolverKind::Ssn,
            SolverKind::InteriorPoint,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }
}

/// Solve a box or saddle system with the requested algorithm.
pub fn solve_vi(sys: &ViSystem, kind: SolverKind, cfg: &SolverConfig) -> Result<ViSolution> {
    cfg.validate()?;
    match kind {
        SolverKind::ProjectionGradient => projection_gradient_solve(sys, cfg),
        SolverKind::Pdhg => pdhg_solve(sys, cfg),
        SolverKind::InteriorPoint => interior_point_solve(sys, cfg, &InteriorPointConfig::default()),
        SolverKind::Ssn => Err(Error::Unsupported(
            "the penalized Newton solver applies to gradient constraints only".into(),
        )),
    }
}

/// [`solve_vi`] followed by conversion to finite element fields.
pub fn solve_fe(sys: &ViSystem, kind: SolverKind, cfg: &SolverConfig) -> Result<FeSolutionBundle> {
    let sol = solve_vi(sys, kind, cfg)?;
    sys.to_bundle(&sol)
}

/// Optimality diagnostics of a candidate `X`. The multiplier is
/// `lambda = S X + b` on constrained dofs and must be nonpositive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub feasibility_violation: f64,
    pub stationarity_residual: f64,
    pub complementarity: f64,
    pub multiplier_sign_violation: f64,
}

impl KktReport {
    pub fn max_field(&self) -> f64 {
        self.feasibility_violation
            .max(self.stationarity_residual)
            .max(self.complementarity)
            .max(self.multiplier_sign_violation)
    }
}

pub fn check_kkt(sys: &ViSystem, x: &[f64]) -> Result<KktReport> {
    if x.len() != sys.dim() {
        return Err(Error::Dimension(format!(
            "vector of length {} for a system of dimension {}",
            x.len(),
            sys.dim()
        )));
    }
    let g = sys.gradient(x);
    let mut report = KktReport {
        feasibility_violation: 0.0,
        stationarity_residual: norm2(&sys.natural_residual(x)),
        complementarity: 0.0,
        multiplier_sign_violation: 0.0,
    };
    for i in sys.constrained_dofs() {
        let slack = sys.upper()[i] - x[i];
        report.feasibility_violation = report.feasibility_violation.max((x[i] - sys.upper()[i]).max(0.0));
        report.complementarity += (g[i] * slack).abs();
        report.multiplier_sign_violation = report.multiplier_sign_violation.max(g[i]);
    }
    Ok(report)
}
