//! Convergence studies against a fine-mesh reference solution.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{FeFunction, FeSpace, NormKind, ScalarField, assemble_load, assemble_stiffness, error_against_exact, prolong};
use crate::gradient_ssn::{ContinuationSchedule, ssn_penalized_solve};
use crate::linsolve::solve_spd;
use crate::mesh::{Domain, MAX_LEVEL, Mesh, build_mesh};
use crate::problems::{FeSolutionBundle, ProblemKind, ProblemSpec, build_vi_system, compute_yf};
use crate::recovery::{RecoveredControl, recover_control};
use crate::solvers::{
    KktReport, MAX_CONSTRAINED as MAX_ORACLE_DOFS, SolverConfig, SolverKind, active_set_oracle, check_kkt, solve_vi,
};

/// How each level is solved.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub solver: SolverKind,
    pub cfg: SolverConfig,
    pub schedule: ContinuationSchedule,
}

impl SolveOptions {
    pub fn new(solver: SolverKind) -> Self {
        SolveOptions {
            solver,
            cfg: SolverConfig {
                record_history: true,
                ..SolverConfig::default()
            },
            schedule: ContinuationSchedule::default(),
        }
    }

    /// Projection gradient for obstacle problems, penalized Newton for
    /// gradient constraints.
    pub fn default_for(kind: ProblemKind) -> Self {
        Self::new(default_solver(kind))
    }
}

pub fn default_solver(kind: ProblemKind) -> SolverKind {
    match kind {
        ProblemKind::GradientConstrained => SolverKind::Ssn,
        _ => SolverKind::ProjectionGradient,
    }
}

/// Whether `solver` can handle problems of `kind`.
pub fn check_solver(kind: ProblemKind, solver: SolverKind) -> Result<()> {
    let ok = match solver {
        SolverKind::Ssn => kind == ProblemKind::GradientConstrained,
        SolverKind::Pdhg => kind.is_boundary_control(),
        SolverKind::ProjectionGradient | SolverKind::InteriorPoint => kind != ProblemKind::GradientConstrained,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "solver {} does not apply to {} problems",
            solver.name(),
            kind.name()
        )))
    }
}

/// Everything computed for one case on one mesh.
#[derive(Debug, Clone)]
pub struct LevelSolution {
    pub level: u32,
    pub mesh: Arc<Mesh>,
    pub bundle: FeSolutionBundle,
    pub control: RecoveredControl,
    /// Residual per iteration (empty for the Newton solver).
    pub history: Vec<f64>,
    /// `max_T (|grad y| - y_b)^+` for gradient constraints.
    pub gradient_violation: Option<f64>,
}

impl LevelSolution {
    /// Unknown count reported in tables: interior nodes for distributed
    /// controls, all nodes for boundary controls.
    pub fn dofs(&self) -> usize {
        reported_dofs(self.bundle.y_h.mesh(), self.control.is_boundary())
    }
}

fn reported_dofs(mesh: &Mesh, boundary_control: bool) -> usize {
    if boundary_control { mesh.num_nodes() } else { mesh.interior().len() }
}

/// Solve `spec` on the given level and recover its control.
pub fn solve_case(spec: &ProblemSpec, level: u32, opts: &SolveOptions) -> Result<LevelSolution> {
    check_solver(spec.kind, opts.solver)?;
    let mesh = Arc::new(build_mesh(spec.domain, level)?);
    let (bundle, history, gradient_violation) = if spec.kind == ProblemKind::GradientConstrained {
        let sol = ssn_penalized_solve(spec, &mesh, &opts.schedule)?;
        (sol.bundle, Vec::new(), Some(sol.violation))
    } else {
        let yf = compute_yf(spec, &mesh)?;
        let sys = build_vi_system(spec, &mesh, &yf)?;
        let sol = solve_vi(&sys, opts.solver, &opts.cfg)?;
        (sys.to_bundle(&sol)?, sol.history, None)
    };
    let control = recover_control(spec.kind, &mesh, &bundle.y_h, &spec.f)?;
    Ok(LevelSolution {
        level,
        mesh,
        bundle,
        control,
        history,
        gradient_violation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub level: u32,
    pub dofs: usize,
    pub err_u: Option<f64>,
    pub order_u: Option<f64>,
    pub err_y_l2: f64,
    pub order_y_l2: Option<f64>,
    pub err_y_h1: f64,
    pub order_y_h1: Option<f64>,
    pub iterations: usize,
    pub final_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub case: String,
    pub alpha: f64,
    pub ref_level: Option<u32>,
    pub solver: String,
    pub tol: f64,
    pub rows: Vec<TableRow>,
}

pub const TABLE_HEADER: &str = "level,dofs,err_u,order_u,err_y_l2,order_y_l2,err_y_h1,order_y_h1";

/// `log2(e_prev / e)` per level step.
pub fn observed_order(prev: f64, next: f64, level_gap: u32) -> f64 {
    (prev / next).log2() / level_gap as f64
}

/// Orders of a sequence of errors on consecutive levels; the first is `None`.
pub fn order_estimates(errors: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None; errors.len().min(1)];
    out.extend(errors.windows(2).map(|w| Some(observed_order(w[0], w[1], 1))));
    out
}

impl ConvergenceTable {
    pub fn new(case: impl Into<String>, alpha: f64, ref_level: Option<u32>, solver: impl Into<String>, tol: f64) -> Self {
        ConvergenceTable {
            case: case.into(),
            alpha,
            ref_level,
            solver: solver.into(),
            tol,
            rows: Vec::new(),
        }
    }

    /// Append a row, filling the orders from the previous row.
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        level: u32,
        dofs: usize,
        err_u: Option<f64>,
        err_y_l2: f64,
        err_y_h1: f64,
        iterations: usize,
        final_residual: f64,
    ) {
        let (order_u, order_y_l2, order_y_h1) = match self.rows.last() {
            Some(prev) if level > prev.level => {
                let gap = level - prev.level;
                (
                    prev.err_u.zip(err_u).map(|(a, b)| observed_order(a, b, gap)),
                    Some(observed_order(prev.err_y_l2, err_y_l2, gap)),
                    Some(observed_order(prev.err_y_h1, err_y_h1, gap)),
                )
            }
            _ => (None, None, None),
        };
        self.rows.push(TableRow {
            level,
            dofs,
            err_u,
            order_u,
            err_y_l2,
            order_y_l2,
            err_y_h1,
            order_y_h1,
            iterations,
            final_residual,
        });
    }

    pub fn orders_y_h1(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order_y_h1).collect()
    }

    pub fn orders_y_l2(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order_y_l2).collect()
    }

    pub fn orders_u(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order_u).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(TABLE_HEADER.split(',')).expect("writing to memory");
        for r in &self.rows {
            w.write_record([
                r.level.to_string(),
                r.dofs.to_string(),
                fmt_opt(r.err_u),
                fmt_opt(r.order_u),
                fmt_num(r.err_y_l2),
                fmt_opt(r.order_y_l2),
                fmt_num(r.err_y_h1),
                fmt_opt(r.order_y_h1),
            ])
            .expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("writing to memory")).expect("ascii output")
    }
}

impl fmt::Display for ConvergenceTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (alpha = {}, solver {}, tol {:e}", self.case, self.alpha, self.solver, self.tol)?;
        if let Some(r) = self.ref_level {
            write!(f, ", reference level {r}")?;
        }
        writeln!(f, ")")?;
        writeln!(
            f,
            "{:>5} {:>8} {:>12} {:>8} {:>12} {:>8} {:>12} {:>8}",
            "level", "dofs", "err_u", "order", "err_y_l2", "order", "err_y_h1", "order"
        )?;
        let o = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        for r in &self.rows {
            writeln!(
                f,
                "{:>5} {:>8} {:>12} {:>8} {:>12.5e} {:>8} {:>12.5e} {:>8}",
                r.level,
                r.dofs,
                r.err_u.map_or_else(|| "-".to_string(), |e| format!("{e:.5e}")),
                o(r.order_u),
                r.err_y_l2,
                o(r.order_y_l2),
                r.err_y_h1,
                o(r.order_y_h1)
            )?;
        }
        Ok(())
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.5e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// A study that stopped early, with the rows completed so far.
#[derive(Debug)]
pub struct StudyError {
    pub partial: ConvergenceTable,
    pub level: u32,
    pub source: Error,
}

impl fmt::Display for StudyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "study of {} stopped at level {}: {}", self.partial.case, self.level, self.source)
    }
}

impl std::error::Error for StudyError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<StudyError> for Error {
    fn from(e: StudyError) -> Error {
        e.source
    }
}

/// Errors of a coarse solution against the reference, measured on the
/// reference mesh after prolongation.
struct Reference {
    space: FeSpace,
    y: Vec<f64>,
    u: FeFunction,
    boundary_control: bool,
}

impl Reference {
    fn new(sol: &LevelSolution) -> Self {
        Reference {
            space: FeSpace::new(sol.mesh.clone()),
            y: sol.bundle.y_h.coeffs().to_vec(),
            u: sol.control.to_function(),
            boundary_control: sol.control.is_boundary(),
        }
    }

    fn errors(&self, sol: &LevelSolution) -> Result<(f64, f64, f64)> {
        let fine = self.space.mesh();
        let y = prolong(&sol.bundle.y_h, fine)?;
        let dy: Vec<f64> = y.coeffs().iter().zip(&self.y).map(|(a, b)| a - b).collect();
        let u = prolong(&sol.control.to_function(), fine)?;
        let du: Vec<f64> = u.coeffs().iter().zip(self.u.coeffs()).map(|(a, b)| a - b).collect();
        let err_u = if self.boundary_control {
            self.space.norm(&du, NormKind::L2Gamma)?
        } else {
            self.space.norm(&du, NormKind::L2)?
        };
        Ok((
            err_u,
            self.space.norm(&dy, NormKind::L2)?,
            self.space.norm(&dy, NormKind::H1Semi)?,
        ))
    }
}

/// Solve on each level and compare with a solution on `ref_level`.
///
/// The reference is solved first; each coarse state and control is then
/// prolonged to the reference mesh, where the state error is measured in
/// `L2` and the `H1` seminorm and the control error in `L2(Omega)` or
/// `L2(Gamma)`.
pub fn run_convergence_study(
    spec: &ProblemSpec,
    levels: &[u32],
    ref_level: u32,
    opts: &SolveOptions,
) -> std::result::Result<ConvergenceTable, StudyError> {
    run_study_keeping_finest(spec, levels, ref_level, opts).map(|(table, _)| table)
}

/// [`run_convergence_study`], also returning the solution on the finest
/// study level.
pub fn run_study_keeping_finest(
    spec: &ProblemSpec,
    levels: &[u32],
    ref_level: u32,
    opts: &SolveOptions,
) -> std::result::Result<(ConvergenceTable, LevelSolution), StudyError> {
    let mut table = ConvergenceTable::new(spec.label(), spec.alpha, Some(ref_level), opts.solver.name(), opts.cfg.tol);
    let fail = |table: &ConvergenceTable, level, source| StudyError {
        partial: table.clone(),
        level,
        source,
    };
    if let Err(e) = check_levels(levels, Some(ref_level)) {
        return Err(fail(&table, ref_level, e));
    }
    let reference = solve_case(spec, ref_level, opts).map_err(|e| fail(&table, ref_level, e))?;
    let reference = Reference::new(&reference);
    let mut last = None;
    for &level in levels {
        let sol = solve_case(spec, level, opts).map_err(|e| fail(&table, level, e))?;
        let (eu, el2, eh1) = reference.errors(&sol).map_err(|e| fail(&table, level, e))?;
        table.push(level, sol.dofs(), Some(eu), el2, eh1, sol.bundle.iterations, sol.bundle.final_residual);
        last = Some(sol);
    }
    Ok((table, last.expect("levels are nonempty")))
}

/// Levels must be strictly increasing and below the reference level.
pub fn check_levels(levels: &[u32], ref_level: Option<u32>) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("no levels given".into()));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("levels must increase".into()));
    }
    if let Some(r) = ref_level {
        let top = *levels.last().unwrap();
        if r <= top {
            return Err(Error::InvalidArgument(format!(
                "reference level {r} must exceed the finest study level {top}"
            )));
        }
    }
    Ok(())
}

/// Projection gradient against the exhaustive active-set search.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub case: String,
    pub level: u32,
    pub constrained: usize,
    /// `max |Y_pg - Y_oracle|` over the state block.
    pub max_difference: f64,
    /// Same over the adjoint block. When the adjoint only couples to active
    /// rows it is not unique, so this is reported but not checked.
    pub adjoint_difference: Option<f64>,
    pub pg_iterations: usize,
    pub kkt: KktReport,
}

impl OracleCheck {
    /// Agreement within `agree` and every KKT field within `kkt_tol`.
    pub fn passes(&self, agree: f64, kkt_tol: f64) -> bool {
        self.max_difference <= agree && self.kkt.max_field() <= kkt_tol
    }
}

impl fmt::Display for OracleCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} level {}: {} constrained dofs", self.case, self.level, self.constrained)?;
        writeln!(f, "  max |Y_pg - Y_oracle|   {:.3e}", self.max_difference)?;
        if let Some(d) = self.adjoint_difference {
            writeln!(f, "  max |P_pg - P_oracle|   {d:.3e}")?;
        }
        writeln!(f, "  pg iterations           {}", self.pg_iterations)?;
        writeln!(f, "  feasibility violation   {:.3e}", self.kkt.feasibility_violation)?;
        writeln!(f, "  stationarity residual   {:.3e}", self.kkt.stationarity_residual)?;
        writeln!(f, "  complementarity         {:.3e}", self.kkt.complementarity)?;
        write!(f, "  multiplier sign         {:.3e}", self.kkt.multiplier_sign_violation)
    }
}

/// Finest level whose system is small enough for the exhaustive oracle.
pub fn largest_oracle_level(spec: &ProblemSpec) -> Result<u32> {
    if spec.kind == ProblemKind::GradientConstrained {
        return Err(Error::Unsupported("gradient constraints have no box oracle".into()));
    }
    let mut best = None;
    for level in 0..=MAX_LEVEL {
        let mesh = build_mesh(spec.domain, level)?;
        let n = if spec.kind.is_boundary_control() { mesh.num_nodes() } else { mesh.interior().len() };
        if n > MAX_ORACLE_DOFS {
            break;
        }
        best = Some(level);
    }
    best.ok_or_else(|| Error::TooLarge(MAX_ORACLE_DOFS + 1))
}

/// Solve `spec` on `level` with projection gradient and compare with the
/// oracle.
pub fn check_against_oracle(spec: &ProblemSpec, level: u32, cfg: &SolverConfig) -> Result<OracleCheck> {
    if spec.kind == ProblemKind::GradientConstrained {
        return Err(Error::Unsupported("gradient constraints have no box oracle".into()));
    }
    let mesh = Arc::new(build_mesh(spec.domain, level)?);
    let yf = compute_yf(spec, &mesh)?;
    let sys = build_vi_system(spec, &mesh, &yf)?;
    let oracle = active_set_oracle(&sys)?;
    let pg = solve_vi(&sys, SolverKind::ProjectionGradient, cfg)?;
    let diff = |r: std::ops::Range<usize>| {
        pg.x[r.clone()].iter().zip(&oracle.x[r]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let ns = sys.n_state();
    Ok(OracleCheck {
        case: spec.label(),
        level,
        constrained: sys.constrained_dofs().len(),
        max_difference: diff(0..ns),
        adjoint_difference: (sys.n_adjoint() > 0).then(|| diff(ns..sys.dim())),
        pg_iterations: pg.iterations,
        kkt: check_kkt(&sys, &pg.x)?,
    })
}

/// `-Laplace y = 2 pi^2 sin(pi x) sin(pi y)` on the unit square with zero
/// boundary values, against its exact solution.
pub fn manufactured_poisson_study(levels: &[u32]) -> Result<ConvergenceTable> {
    check_levels(levels, None)?;
    let f = ScalarField::new("2 pi^2 sin(pi x) sin(pi y)", |x, y| {
        2.0 * PI * PI * (PI * x).sin() * (PI * y).sin()
    });
    let exact = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
    let grad = |x: f64, y: f64| [PI * (PI * x).cos() * (PI * y).sin(), PI * (PI * x).sin() * (PI * y).cos()];
    let mut table = ConvergenceTable::new("poisson:manufactured", 0.0, None, "pcg", crate::linsolve::PCG_TOL);
    for &level in levels {
        let mesh = Arc::new(build_mesh(Domain::UnitSquare, level)?);
        let load = assemble_load(&mesh, &f)?;
        let fixed: Vec<(usize, f64)> = mesh.boundary().iter().map(|&v| (v, 0.0)).collect();
        let y = solve_spd(&assemble_stiffness(&mesh), &load, Some(&fixed))?;
        let y = FeFunction::new(mesh.clone(), y)?;
        let (l2, h1) = error_against_exact(&y, exact, grad);
        table.push(level, mesh.interior().len(), None, l2, h1, 0, 0.0);
    }
    Ok(table)
}

/// Write `table.csv` and, when given, `state.csv` and `control.csv`.
pub fn write_outputs(table: &ConvergenceTable, fields: Option<&LevelSolution>, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    write_file(&out_dir.join("table.csv"), table.to_csv())?;
    if let Some(sol) = fields {
        write_fields(sol, out_dir)?;
    }
    Ok(())
}

/// Nodal dumps of the state and the control with columns `x,y,value`.
pub fn write_fields(sol: &LevelSolution, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    let mesh = &sol.mesh;
    let all: Vec<usize> = (0..mesh.num_nodes()).collect();
    write_file(&out_dir.join("state.csv"), field_csv(mesh, &all, sol.bundle.y_h.coeffs()))?;
    let control = match &sol.control {
        RecoveredControl::Distributed(u) => field_csv(mesh, &all, u.coeffs()),
        RecoveredControl::Boundary { values, .. } => {
            let mut full = vec![0.0; mesh.num_nodes()];
            for (&v, &x) in mesh.boundary().iter().zip(values) {
                full[v] = x;
            }
            field_csv(mesh, mesh.boundary(), &full)
        }
    };
    write_file(&out_dir.join("control.csv"), control)
}

fn field_csv(mesh: &Mesh, nodes: &[usize], values: &[f64]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "y", "value"]).expect("writing to memory");
    for &v in nodes {
        let [x, y] = mesh.nodes()[v];
        w.write_record([format!("{x}"), format!("{y}"), format!("{:e}", values[v])])
            .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("ascii output")
}

/// `iteration,residual` per solver iteration.
pub fn write_residual_history(history: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "residual"]).expect("writing to memory");
    for (k, r) in history.iter().enumerate() {
        w.write_record([k.to_string(), format!("{r:e}")]).expect("writing to memory");
    }
    let text = String::from_utf8(w.into_inner().expect("writing to memory")).expect("ascii output");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    write_file(path, text)
}

fn write_file(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
