//! Primal-dual interior point method for the state QP behind a [`ViSystem`].
//!
//! The system `X = P(X - (S X + b))` is the optimality condition of
//!
//! ```text
//! minimize 1/2 x^T A x + c^T x   subject to   C x = 0,  x_i <= u_i  (i constrained)
//! ```
//!
//! with `X = (x, -y)` where `y` is the multiplier of `C x = 0`. Mehrotra
//! predictor-corrector steps are computed from the reduced KKT matrix
//! `[[A + Z/S, C^T], [C, 0]]`, factorized after equilibration with a small
//! shift on the dual block and used as a preconditioner for iterative
//! refinement. The symbolic analysis is shared by all iterations. Once the residual of the
//! projection equation is small the identified active set is fixed and the
//! resulting linear system solved directly, which usually lands on the exact
//! discrete solution.

use super::SolverConfig;
use crate::error::{Error, Result};
use crate::linsolve::SparseLdlt;
use crate::problems::{ViSolution, ViSystem};
use crate::sparse::{CsrMatrix, dot, norm_inf};

#[derive(Debug, Clone, PartialEq)]
pub struct InteriorPointConfig {
    pub max_iter: usize,
    /// Fixed-point residual at which iterations stop; `None` uses `tol * 1e-3`.
    pub residual_target: Option<f64>,
    /// Try the active-set polish once the iteration has converged.
    pub crossover: bool,
}

impl Default for InteriorPointConfig {
    fn default() -> Self {
        InteriorPointConfig {
            max_iter: 150,
            residual_target: None,
            crossover: true,
        }
    }
}

struct Kkt<'a> {
    sys: &'a ViSystem,
    n: usize,
    m: usize,
    /// Full symmetric storage of `[[A, C^T], [C, 0]]` with the dual diagonal
    /// kept in the pattern.
    base: CsrMatrix,
    /// Position of `(i, i)` for every constrained state dof.
    diag_pos: Vec<usize>,
    constrained: Vec<usize>,
}

impl<'a> Kkt<'a> {
    fn new(sys: &'a ViSystem) -> Self {
        let n = sys.n_state();
        let m = sys.n_adjoint();
        let a = sys.state_block();
        let mut t = Vec::with_capacity(a.nnz() + 2 * sys.coupling().map_or(0, CsrMatrix::nnz) + m);
        for i in 0..n {
            t.extend(a.row(i).map(|(j, v)| (i, j, v)));
        }
        if let Some(c) = sys.coupling() {
            for r in 0..m {
                for (j, v) in c.row(r) {
                    t.push((n + r, j, v));
                    t.push((j, n + r, v));
                }
            }
        }
        let mut pattern: Vec<Vec<usize>> = vec![Vec::new(); n + m];
        for &(i, j, _) in &t {
            pattern[i].push(j);
        }
        for (i, row) in pattern.iter_mut().enumerate() {
            row.push(i);
            row.sort_unstable();
            row.dedup();
        }
        let mut base = CsrMatrix::from_pattern(n + m, n + m, pattern);
        for (i, j, v) in t {
            base.add_to(i, j, v);
        }
        let constrained: Vec<usize> = (0..n).filter(|&i| sys.is_constrained(i)).collect();
        let diag_pos = constrained.iter().map(|&i| base.position(i, i).unwrap()).collect();
        Kkt {
            sys,
            n,
            m,
            base,
            diag_pos,
            constrained,
        }
    }

    fn with_barrier(&self, d: &[f64]) -> CsrMatrix {
        let mut k = self.base.clone();
        for (&p, &di) in self.diag_pos.iter().zip(d) {
            k.values_mut()[p] += di;
        }
        k
    }
}

/// `L D L^T` of the equilibrated KKT matrix with a small negative shift on the
/// dual block, used as a preconditioner for iterative refinement against the
/// exact matrix.
struct ScaledFactor {
    n: usize,
    ldlt: Option<SparseLdlt>,
    scale: Vec<f64>,
    dual_diag: Vec<usize>,
}

const DUAL_SHIFT: f64 = 1e-8;
const EQUILIBRATION_PASSES: usize = 8;
const REFINEMENT_STEPS: usize = 30;

impl ScaledFactor {
    fn new(kkt: &Kkt) -> Self {
        ScaledFactor {
            n: kkt.n,
            ldlt: None,
            scale: vec![1.0; kkt.n + kkt.m],
            dual_diag: (kkt.n..kkt.n + kkt.m).map(|i| kkt.base.position(i, i).unwrap()).collect(),
        }
    }

    fn factor(&mut self, k: &CsrMatrix) -> Result<()> {
        let dim = k.nrows();
        let mut scale = vec![1.0; dim];
        let mut row_max = vec![0.0f64; dim];
        for _ in 0..EQUILIBRATION_PASSES {
            for (i, rm) in row_max.iter_mut().enumerate() {
                *rm = k.row(i).map(|(j, v)| (scale[i] * v * scale[j]).abs()).fold(0.0, f64::max);
            }
            for (s, rm) in scale.iter_mut().zip(&row_max) {
                if *rm > 0.0 {
                    *s /= rm.sqrt();
                }
            }
        }
        let mut scaled = k.clone();
        for i in 0..dim {
            let span = k.indptr()[i]..k.indptr()[i + 1];
            for p in span {
                let j = k.indices()[p];
                scaled.values_mut()[p] *= scale[i] * scale[j];
            }
        }
        for &p in &self.dual_diag {
            scaled.values_mut()[p] -= DUAL_SHIFT;
        }
        self.scale = scale;
        match self.ldlt.as_mut() {
            Some(f) => f.refactor(&scaled),
            None => {
                let signs = (!self.dual_diag.is_empty()).then(|| (0..dim).map(|i| if i < self.n { 1 } else { -1 }).collect());
                self.ldlt = Some(SparseLdlt::new(&scaled, signs)?);
                Ok(())
            }
        }
    }

    fn apply_inverse(&self, r: &[f64]) -> Vec<f64> {
        let f = self.ldlt.as_ref().expect("factorized before solving");
        let scaled: Vec<f64> = r.iter().zip(&self.scale).map(|(v, s)| v * s).collect();
        let mut x = f.solve(&scaled);
        for (v, s) in x.iter_mut().zip(&self.scale) {
            *v *= s;
        }
        x
    }

    /// Solve `k x = rhs` by refinement preconditioned with the factor.
    fn solve(&self, k: &CsrMatrix, rhs: &[f64]) -> Vec<f64> {
        let mut x = self.apply_inverse(rhs);
        let floor = 1e-15 * norm_inf(rhs);
        let mut best = f64::INFINITY;
        for _ in 0..REFINEMENT_STEPS {
            let kx = k.mul_vec(&x);
            let r: Vec<f64> = rhs.iter().zip(&kx).map(|(b, a)| b - a).collect();
            let rn = norm_inf(&r);
            if rn <= floor || rn >= best {
                break;
            }
            best = rn;
            for (xi, d) in x.iter_mut().zip(self.apply_inverse(&r)) {
                *xi += d;
            }
        }
        x
    }
}

/// Solve the system by a primal-dual interior point method followed by an
/// active-set polish. The result satisfies the same fixed-point residual
/// contract as the projection gradient method.
pub fn interior_point_solve(sys: &ViSystem, cfg: &SolverConfig, ipm: &InteriorPointConfig) -> Result<ViSolution> {
    cfg.validate()?;
    let kkt = Kkt::new(sys);
    let (n, m) = (kkt.n, kkt.m);
    let mc = kkt.constrained.len();
    let a = sys.state_block();
    let c = &sys.offset()[..n];
    let upper: Vec<f64> = kkt.constrained.iter().map(|&i| sys.upper()[i]).collect();
    let target = ipm.residual_target.unwrap_or(cfg.tol * 1e-3);

    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m];
    let (mut s, mut z) = initial_slacks(&upper, &kkt.constrained, c, a);

    let mut factor = ScaledFactor::new(&kkt);
    let mut factored = false;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let candidate = assemble_x(sys, &x, &y);
        let residual = sys.fixed_point_residual(&candidate);
        if cfg.record_history {
            history.push(residual);
        }
        if !residual.is_finite() {
            return Err(Error::Divergence {
                solver: "interior point",
                iteration: iterations,
                gamma: 0.0,
            });
        }
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, candidate));
        }
        if residual <= target || iterations >= ipm.max_iter {
            break;
        }

        // Residuals of the optimality system.
        let mut rd = a.mul_vec(&x);
        for i in 0..n {
            rd[i] += c[i];
        }
        let mut re = vec![0.0; m];
        if let Some(cp) = sys.coupling() {
            cp.add_transpose_mul(1.0, &y, &mut rd);
            re = cp.mul_vec(&x);
            for r in 0..m {
                re[r] += sys.offset()[n + r];
            }
        }
        for (k, &i) in kkt.constrained.iter().enumerate() {
            rd[i] += z[k];
        }
        let rp: Vec<f64> = (0..mc).map(|k| x[kkt.constrained[k]] + s[k] - upper[k]).collect();
        let mu = if mc > 0 { dot(&s, &z) / mc as f64 } else { 0.0 };

        let d: Vec<f64> = z.iter().zip(&s).map(|(z, s)| z / s).collect();
        let k = kkt.with_barrier(&d);
        factor.factor(&k)?;
        factored = true;
        let f = &factor;
        let solve = |rc: &[f64]| {
            let mut rhs = vec![0.0; n + m];
            for i in 0..n {
                rhs[i] = -rd[i];
            }
            for (k, &i) in kkt.constrained.iter().enumerate() {
                rhs[i] -= (-rc[k] + z[k] * rp[k]) / s[k];
            }
            for r in 0..m {
                rhs[n + r] = -re[r];
            }
            let sol = f.solve(&k, &rhs);
            let dx = sol[..n].to_vec();
            let dy = sol[n..].to_vec();
            let ds: Vec<f64> = (0..mc).map(|k| -rp[k] - dx[kkt.constrained[k]]).collect();
            let dz: Vec<f64> = (0..mc).map(|k| (-rc[k] - z[k] * ds[k]) / s[k]).collect();
            (dx, dy, ds, dz)
        };

        // Predictor.
        let rc_aff: Vec<f64> = s.iter().zip(&z).map(|(s, z)| s * z).collect();
        let (_, _, ds_a, dz_a) = solve(&rc_aff);
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a)).min(1.0);
        let sigma = if mc > 0 && mu > 0.0 {
            let mu_aff = (0..mc)
                .map(|k| (s[k] + alpha_aff * ds_a[k]) * (z[k] + alpha_aff * dz_a[k]))
                .sum::<f64>()
                / mc as f64;
            (mu_aff / mu).powi(3).min(1.0)
        } else {
            0.0
        };

        // Corrector.
        let rc: Vec<f64> = (0..mc)
            .map(|k| s[k] * z[k] + ds_a[k] * dz_a[k] - sigma * mu)
            .collect();
        let (dx, dy, ds, dz) = solve(&rc);
        let alpha = (0.995 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        for i in 0..n {
            x[i] += alpha * dx[i];
        }
        for r in 0..m {
            y[r] += alpha * dy[r];
        }
        for k in 0..mc {
            s[k] += alpha * ds[k];
            z[k] += alpha * dz[k];
        }
        iterations += 1;
    }

    let (mut residual, mut xbest) = best.expect("at least one iterate");
    if ipm.crossover && mc > 0 {
        if factored {
            if let Some(polished) = crossover(&kkt, &mut factor, &s, &z)? {
                let r = sys.fixed_point_residual(&polished);
                if r < residual {
                    residual = r;
                    xbest = polished;
                }
            }
        }
    }
    if residual < cfg.tol {
        Ok(ViSolution {
            x: xbest,
            iterations,
            final_residual: residual,
            history,
        })
    } else {
        Err(Error::NonConvergence {
            solver: "interior point",
            iterations,
            residual,
            history,
        })
    }
}

/// `X = (min(x, u), -y)`
fn assemble_x(sys: &ViSystem, x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = x.to_vec();
    out.extend(y.iter().map(|v| -v));
    sys.project_in_place(&mut out);
    out
}

/// Mehrotra's shifted starting slacks for `x = 0`.
fn initial_slacks(upper: &[f64], constrained: &[usize], c: &[f64], a: &CsrMatrix) -> (Vec<f64>, Vec<f64>) {
    let mut s = upper.to_vec();
    let mut z: Vec<f64> = constrained.iter().map(|&i| -c[i]).collect();
    if s.is_empty() {
        return (s, z);
    }
    let s_floor = 1e-2 * norm_inf(upper).max(1e-8);
    let z_floor = 1e-2 * norm_inf(c).max(1e-8 * a.norm_inf()).max(f64::MIN_POSITIVE);
    let shift = |v: &mut Vec<f64>| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let d = (-1.5 * lo).max(0.0);
        v.iter_mut().for_each(|e| *e += d);
    };
    shift(&mut s);
    shift(&mut z);
    let sz = dot(&s, &z);
    let (ss, zs) = (s.iter().sum::<f64>(), z.iter().sum::<f64>());
    if sz > 0.0 && ss > 0.0 && zs > 0.0 {
        let ds = 0.5 * sz / zs;
        let dz = 0.5 * sz / ss;
        s.iter_mut().for_each(|e| *e += ds);
        z.iter_mut().for_each(|e| *e += dz);
    }
    s.iter_mut().for_each(|e| *e = e.max(s_floor));
    z.iter_mut().for_each(|e| *e = e.max(z_floor));
    (s, z)
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

/// Fix the dofs the iterate identifies as active and solve the remaining
/// equality-constrained problem exactly.
fn crossover(kkt: &Kkt, factor: &mut ScaledFactor, s: &[f64], z: &[f64]) -> Result<Option<Vec<f64>>> {
    let (n, m) = (kkt.n, kkt.m);
    let sys = kkt.sys;
    let s_ref = norm_inf(s).max(f64::MIN_POSITIVE);
    let z_ref = norm_inf(z).max(f64::MIN_POSITIVE);
    let mut active = vec![false; n];
    for (k, &i) in kkt.constrained.iter().enumerate() {
        active[i] = s[k] / s_ref < z[k] / z_ref;
    }
    let fixed = |i: usize| i < n && active[i];

    let mut k = kkt.base.clone();
    let mut rhs: Vec<f64> = sys.offset().iter().map(|v| -v).collect();
    for r in 0..n + m {
        let span = k.indptr()[r]..k.indptr()[r + 1];
        for p in span {
            let col = k.indices()[p];
            let v = k.values()[p];
            if fixed(col) && !fixed(r) {
                rhs[r] -= v * sys.upper()[col];
            }
            if fixed(r) || fixed(col) {
                k.values_mut()[p] = if r == col { 1.0 } else { 0.0 };
            }
        }
        if fixed(r) {
            rhs[r] = sys.upper()[r];
        }
    }
    factor.factor(&k)?;
    let sol = factor.solve(&k, &rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    Ok(Some(assemble_x(sys, &sol[..n], &sol[n..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::active_set_oracle;

    fn tridiagonal(n: usize, d: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, d));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn box_qp_matches_oracle() {
        let a = tridiagonal(8, 2.5);
        let b: Vec<f64> = (0..8).map(|i| -1.0 - (i as f64 * 0.7).sin()).collect();
        let upper: Vec<f64> = (0..8).map(|i| if i % 3 == 0 { f64::INFINITY } else { 0.6 }).collect();
        let sys = ViSystem::box_constrained(a, b, upper).unwrap();
        let sol = interior_point_solve(&sys, &SolverConfig::default(), &Default::default()).unwrap();
        let oracle = active_set_oracle(&sys).unwrap();
        for (u, v) in sol.x.iter().zip(&oracle.x) {
            assert!((u - v).abs() < 1e-12, "{u} vs {v}");
        }
        assert!(sol.final_residual < 1e-12);
    }

    #[test]
    fn saddle_qp_matches_oracle() {
        let a = tridiagonal(6, 3.0);
        let c = CsrMatrix::from_triplets(2, 6, &[(0, 0, 1.0), (0, 1, -1.0), (1, 3, 1.0), (1, 4, 1.0), (1, 5, -1.0)]);
        let mut b: Vec<f64> = (0..6).map(|i| -(1.0 + i as f64)).collect();
        b.extend([0.0, 0.0]);
        let sys = ViSystem::saddle(a, c, b, vec![1.0; 6]).unwrap();
        let sol = interior_point_solve(&sys, &SolverConfig::default(), &Default::default()).unwrap();
        let oracle = active_set_oracle(&sys).unwrap();
        for (u, v) in sol.x.iter().zip(&oracle.x) {
            assert!((u - v).abs() < 1e-10, "{u} vs {v}");
        }
    }

    #[test]
    fn unconstrained_is_one_newton_step() {
        let sys = ViSystem::box_constrained(tridiagonal(5, 3.0), vec![-1.0; 5], vec![f64::INFINITY; 5]).unwrap();
        let sol = interior_point_solve(&sys, &SolverConfig::default(), &Default::default()).unwrap();
        assert!(sol.iterations <= 1);
        assert!(sys.fixed_point_residual(&sol.x) < 1e-14);
    }
}
