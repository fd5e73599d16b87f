use std::io::Write;

use serde::{Deserialize, Serialize};

use super::affine::AffineProjector;
use super::cones::{project_psd_svec_in_place, project_soc_in_place, rank1_gap, HermitianMatrix};
use super::program::{Cone, ConicProgram, VarId};
use super::SolverError;

/// Penalty and stopping settings for [`admm_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ADMMParams {
    pub penalty: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Residual balancing: double or halve the penalty when one residual
    /// exceeds the other by a factor of 10.
    pub adaptive: bool,
    /// Over-relaxation factor in (0, 2); 1 is plain ADMM.
    pub relaxation: f64,
    /// Anderson acceleration memory on the `(z, u)` fixed-point map; 0 disables it.
    pub anderson: usize,
    pub trace: bool,
}

impl Default for ADMMParams {
    fn default() -> Self {
        Self {
            penalty: 1.0,
            eps_abs: 1e-4,
            eps_rel: 1e-3,
            max_iter: 5_000,
            adaptive: true,
            relaxation: 1.0,
            anderson: 0,
            trace: false,
        }
    }
}

impl ADMMParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return Err(SolverError::Params(format!("penalty must be positive, got {}", self.penalty)));
        }
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return Err(SolverError::Params("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(SolverError::Params("max_iter must be at least 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(SolverError::Params(format!("relaxation must lie in (0, 2), got {}", self.relaxation)));
        }
        Ok(())
    }
}

/// Iterate snapshot. `x` is the cone/box copy, `z` the affine copy.
#[derive(Debug, Clone, PartialEq)]
pub struct ADMMState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub iter: usize,
    pub penalty: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Affine copy of the variables: satisfies every equality row to rounding.
    pub values: Vec<f64>,
    /// Cone/box copy: satisfies bounds and cone memberships exactly.
    pub cone_values: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    pub max_equality_residual: f64,
    pub max_rank1_gap: f64,
    pub trace: Vec<TraceRow>,
    /// Penalty at exit and unscaled multipliers, enough to restart from.
    pub penalty: f64,
    pub lambda: Vec<f64>,
}

impl Solution {
    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    pub fn cone_value(&self, v: VarId) -> f64 {
        self.cone_values[v.0]
    }

    pub fn state(&self) -> ADMMState {
        ADMMState {
            x: self.cone_values.clone(),
            z: self.values.clone(),
            lambda: self.lambda.clone(),
            iter: self.iterations,
            penalty: self.penalty,
            primal_residual: self.primal_residual,
            dual_residual: self.dual_residual,
        }
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iter", "primal_residual", "dual_residual", "objective"])?;
        for row in &self.trace {
            wr.write_record([
                row.iter.to_string(),
                row.primal_residual.to_string(),
                row.dual_residual.to_string(),
                row.objective.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

enum Block {
    Soc(Vec<usize>),
    Psd { dim: usize, complex: bool, idx: Vec<usize> },
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Solves a [`ConicProgram`] by ADMM on the splitting `x = z`, where `x` lives
/// in the product of boxes and cones and `z` in the affine set `A z = b`.
///
/// Each iteration: `x <- prox(z - u)` blockwise (closed-form scalar prox for
/// boxed variables, Euclidean cone projection for cone blocks), `z <- P_A(x + u)`,
/// `u <- u + x - z`; `lambda = penalty * u`.
pub fn admm_solve(prog: &ConicProgram, params: &ADMMParams) -> Result<Solution, SolverError> {
    admm_solve_from(prog, params, None)
}

pub fn admm_solve_from(
    prog: &ConicProgram,
    params: &ADMMParams,
    warm: Option<&ADMMState>,
) -> Result<Solution, SolverError> {
    params.validate()?;
    let owner = prog.validate()?;
    let n = prog.num_vars();
    let projector = AffineProjector::new(n, &prog.rows)?;

    let free: Vec<usize> = (0..n).filter(|&i| owner[i].is_none()).collect();
    let blocks: Vec<Block> = prog
        .cones
        .iter()
        .map(|c| match c {
            Cone::Soc { t, u } => Block::Soc(std::iter::once(t.0).chain(u.iter().map(|v| v.0)).collect()),
            Cone::Psd { dim, complex, entries } => {
                Block::Psd { dim: *dim, complex: *complex, idx: entries.iter().map(|v| v.0).collect() }
            }
        })
        .collect();

    let mut rho = params.penalty;
    let (mut x, mut z, mut u) = match warm {
        Some(s) if s.x.len() == n && s.z.len() == n && s.lambda.len() == n => {
            rho = s.penalty;
            (s.x.clone(), s.z.clone(), s.lambda.iter().map(|l| l / s.penalty).collect::<Vec<_>>())
        }
        Some(_) => return Err(SolverError::Dimension("warm-start state does not match the program".into())),
        None => (vec![0.0; n], vec![0.0; n], vec![0.0; n]),
    };
    let mut x_next = x.clone();
    let mut z_next = z.clone();
    let mut u_next = u.clone();
    let mut w = vec![0.0; n];
    let mut buf: Vec<f64> = Vec::new();
    let alpha = params.relaxation;
    let sqrt_n = (n as f64).sqrt();
    let mut accel = Anderson::new(params.anderson, 2 * n);
    // last plain iterate and its fixed-point residual, for the safeguard
    let mut plain: Option<(Vec<f64>, Vec<f64>, f64)> = None;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut it = 0;
    let (mut r_norm, mut s_norm, mut eps_pri, mut eps_dual) = (f64::INFINITY, f64::INFINITY, 0.0, 0.0);

    while it < params.max_iter {
        it += 1;
        // x-update
        for &i in &free {
            let target = z[i] - u[i];
            let xi = (rho * target - prog.linear[i]) / (rho + prog.quadratic[i]);
            x_next[i] = xi.clamp(prog.lower[i], prog.upper[i]);
        }
        for blk in &blocks {
            let idx = match blk {
                Block::Soc(idx) => idx,
                Block::Psd { idx, .. } => idx,
            };
            buf.clear();
            buf.extend(idx.iter().map(|&i| z[i] - u[i] - prog.linear[i] / rho));
            match blk {
                Block::Soc(_) => project_soc_in_place(&mut buf),
                Block::Psd { dim, complex, .. } => project_psd_svec_in_place(*dim, *complex, &mut buf),
            }
            for (k, &i) in idx.iter().enumerate() {
                x_next[i] = buf[k];
            }
        }

        // z-update
        for i in 0..n {
            w[i] = alpha * x_next[i] + (1.0 - alpha) * z[i] + u[i];
        }
        z_next.copy_from_slice(&w);
        projector.project(&mut z_next);

        // dual update
        for i in 0..n {
            u_next[i] = w[i] - z_next[i];
        }

        let mut rr = 0.0;
        let mut ss = 0.0;
        let mut gg = 0.0;
        for i in 0..n {
            rr += (x_next[i] - z_next[i]) * (x_next[i] - z_next[i]);
            let dz = z_next[i] - z[i];
            let du = u_next[i] - u[i];
            ss += dz * dz;
            gg += dz * dz + du * du;
        }
        r_norm = rr.sqrt();
        s_norm = rho * ss.sqrt();
        let g_norm = gg.sqrt();
        if !(r_norm.is_finite() && s_norm.is_finite()) {
            return Err(SolverError::Divergence { iteration: it });
        }
        eps_pri = sqrt_n * params.eps_abs + params.eps_rel * norm(&x_next).max(norm(&z_next));
        eps_dual = sqrt_n * params.eps_abs + params.eps_rel * rho * norm(&u_next);
        if params.trace {
            trace.push(TraceRow {
                iter: it,
                primal_residual: r_norm,
                dual_residual: s_norm,
                objective: prog.objective_value(&z_next),
            });
        }
        x.copy_from_slice(&x_next);
        if r_norm <= eps_pri && s_norm <= eps_dual {
            converged = true;
            z.copy_from_slice(&z_next);
            u.copy_from_slice(&u_next);
            break;
        }

        let mut rescale = 1.0;
        if params.adaptive && it % ADAPT_EVERY == 0 {
            // compare residuals relative to their own tolerance scales
            let r_rel = r_norm / (eps_pri - sqrt_n * params.eps_abs).max(f64::MIN_POSITIVE);
            let s_rel = s_norm / (eps_dual - sqrt_n * params.eps_abs).max(f64::MIN_POSITIVE);
            if r_rel > 10.0 * s_rel {
                rescale = 0.5;
            } else if s_rel > 10.0 * r_rel {
                rescale = 2.0;
            }
        }

        if accel.enabled() {
            // reject an extrapolated point that made the residual grow
            if let Some((pz, pu, pg)) = plain.take() {
                if g_norm > SAFEGUARD * pg {
                    z.copy_from_slice(&pz);
                    u.copy_from_slice(&pu);
                    accel.reset();
                    continue;
                }
            }
            if rescale != 1.0 {
                accel.reset();
                z.copy_from_slice(&z_next);
                u.copy_from_slice(&u_next);
            } else {
                accel.push(&z, &u, &z_next, &u_next);
                plain = Some((z_next.clone(), u_next.clone(), g_norm));
                let (ez, eu) = accel.extrapolate(&z_next, &u_next);
                z.copy_from_slice(&ez);
                u.copy_from_slice(&eu);
            }
        } else {
            z.copy_from_slice(&z_next);
            u.copy_from_slice(&u_next);
        }
        if rescale != 1.0 {
            rho /= rescale;
            u.iter_mut().for_each(|v| *v *= rescale);
            plain = None;
        }
    }
    let z = z_next;
    let lambda: Vec<f64> = u_next.iter().map(|v| v * rho).collect();

    let max_rank1_gap = blocks
        .iter()
        .filter_map(|b| match b {
            Block::Psd { dim, complex, idx } => {
                let vals: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
                Some(rank1_gap(&HermitianMatrix::from_svec(*dim, *complex, &vals)))
            }
            Block::Soc(_) => None,
        })
        .fold(0.0, f64::max);

    Ok(Solution {
        objective: prog.objective_value(&z),
        max_equality_residual: projector.max_residual(&z),
        values: z,
        cone_values: x,
        penalty: rho,
        lambda,
        converged,
        iterations: it,
        primal_residual: r_norm,
        dual_residual: s_norm,
        primal_tolerance: eps_pri,
        dual_tolerance: eps_dual,
        max_rank1_gap,
        trace,
    })
}

const SAFEGUARD: f64 = 1.0;
const ADAPT_EVERY: usize = 25;

/// Type-II Anderson acceleration over the stacked `(z, u)` iterate.
struct Anderson {
    mem: usize,
    dim: usize,
    /// differences of map outputs `T(y_k) - T(y_{k-1})`
    dt: Vec<Vec<f64>>,
    /// differences of residuals `g_k - g_{k-1}`
    dg: Vec<Vec<f64>>,
    last_t: Option<Vec<f64>>,
    last_g: Option<Vec<f64>>,
    g: Vec<f64>,
}

impl Anderson {
    fn new(mem: usize, dim: usize) -> Self {
        Self { mem, dim, dt: Vec::new(), dg: Vec::new(), last_t: None, last_g: None, g: vec![0.0; dim] }
    }

    fn enabled(&self) -> bool {
        self.mem > 0
    }

    fn reset(&mut self) {
        self.dt.clear();
        self.dg.clear();
        self.last_t = None;
        self.last_g = None;
    }

    fn push(&mut self, z: &[f64], u: &[f64], tz: &[f64], tu: &[f64]) {
        let n = z.len();
        let t: Vec<f64> = tz.iter().chain(tu).copied().collect();
        for i in 0..n {
            self.g[i] = tz[i] - z[i];
            self.g[n + i] = tu[i] - u[i];
        }
        if let (Some(lt), Some(lg)) = (self.last_t.as_ref(), self.last_g.as_ref()) {
            if self.dt.len() == self.mem {
                self.dt.remove(0);
                self.dg.remove(0);
            }
            self.dt.push(t.iter().zip(lt).map(|(a, b)| a - b).collect());
            self.dg.push(self.g.iter().zip(lg).map(|(a, b)| a - b).collect());
        }
        self.last_t = Some(t);
        self.last_g = Some(self.g.clone());
    }

    fn extrapolate(&self, tz: &[f64], tu: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = tz.len();
        let m = self.dg.len();
        let mut out: Vec<f64> = tz.iter().chain(tu).copied().collect();
        if m == 0 {
            return (out[..n].to_vec(), out[n..].to_vec());
        }
        let mut gram = nalgebra::DMatrix::<f64>::zeros(m, m);
        let mut rhs = nalgebra::DVector::<f64>::zeros(m);
        for a in 0..m {
            for b in a..m {
                let d: f64 = self.dg[a].iter().zip(&self.dg[b]).map(|(p, q)| p * q).sum();
                gram[(a, b)] = d;
                gram[(b, a)] = d;
            }
            rhs[a] = self.dg[a].iter().zip(&self.g).map(|(p, q)| p * q).sum();
        }
        let scale = (0..m).map(|a| gram[(a, a)]).fold(0.0, f64::max);
        for a in 0..m {
            gram[(a, a)] += 1e-10 * scale.max(f64::MIN_POSITIVE);
        }
        let Some(chol) = nalgebra::Cholesky::new(gram) else {
            return (out[..n].to_vec(), out[n..].to_vec());
        };
        let gamma = chol.solve(&rhs);
        if gamma.iter().any(|v| !v.is_finite()) {
            return (out[..n].to_vec(), out[n..].to_vec());
        }
        for a in 0..m {
            let ga = gamma[a];
            for (o, d) in out.iter_mut().zip(&self.dt[a]) {
                *o -= ga * d;
            }
        }
        debug_assert_eq!(out.len(), self.dim);
        (out[..n].to_vec(), out[n..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight() -> ADMMParams {
        ADMMParams { eps_abs: 1e-10, eps_rel: 1e-10, max_iter: 100_000, ..ADMMParams::default() }
    }

    #[test]
    fn consensus_of_two_copies() {
        // (x1 - 3)^2 split evenly across two copies tied by x1 = x2
        let mut p = ConicProgram::new();
        let a = p.add_var("a");
        let b = p.add_var("b");
        for v in [a, b] {
            p.set_quadratic(v, 1.0);
            p.set_linear(v, -3.0);
        }
        p.add_equality(vec![(a, 1.0), (b, -1.0)], 0.0);
        let sol = admm_solve(&p, &tight()).unwrap();
        assert!(sol.converged);
        assert!((sol.value(a) - 3.0).abs() < 1e-6);
        assert!((sol.value(b) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn active_lower_bound() {
        let mut p = ConicProgram::new();
        let x = p.add_bounded("x", 2.0, f64::INFINITY);
        let y = p.add_var("y");
        p.set_linear(x, 1.0);
        p.add_equality(vec![(x, 1.0), (y, -1.0)], 0.0);
        let sol = admm_solve(&p, &tight()).unwrap();
        assert!(sol.converged);
        assert!((sol.cone_value(x) - 2.0).abs() < 1e-12);
        assert!((sol.objective - 2.0).abs() < 1e-6);
    }

    #[test]
    fn converged_means_below_tolerance() {
        let mut p = ConicProgram::new();
        let t = p.add_var("t");
        let u: Vec<VarId> = (0..2).map(|k| p.add_var(format!("u{k}"))).collect();
        let a = p.add_bounded("a", 1.0, 1.0);
        p.set_linear(t, 1.0);
        p.add_equality(vec![(u[0], 1.0), (a, -1.0)], 0.0);
        p.add_equality(vec![(u[1], 1.0)], 0.5);
        p.add_soc(t, u);
        let sol = admm_solve(&p, &ADMMParams::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.primal_residual <= sol.primal_tolerance);
        assert!(sol.dual_residual <= sol.dual_tolerance);
        assert!((sol.objective - 1.25f64.sqrt()).abs() < 1e-2);
    }

    #[test]
    fn anderson_agrees_with_plain() {
        let mut p = ConicProgram::new();
        let t = p.add_var("t");
        let u: Vec<VarId> = (0..2).map(|k| p.add_var(format!("u{k}"))).collect();
        let a = p.add_bounded("a", 0.0, 4.0);
        p.set_linear(t, 1.0);
        p.set_linear(a, -0.5);
        p.add_equality(vec![(u[0], 1.0), (a, -1.0)], 0.0);
        p.add_equality(vec![(u[1], 1.0)], 1.0);
        p.add_soc(t, u);
        let plain = admm_solve(&p, &tight()).unwrap();
        let fast = admm_solve(&p, &ADMMParams { anderson: 5, ..tight() }).unwrap();
        assert!(plain.converged && fast.converged);
        assert!((plain.objective - fast.objective).abs() < 1e-6);
        assert!((plain.value(a) - fast.value(a)).abs() < 1e-5);
    }

    #[test]
    fn bad_params_rejected() {
        let p = ConicProgram::new();
        assert!(matches!(
            admm_solve(&p, &ADMMParams { penalty: 0.0, ..Default::default() }),
            Err(SolverError::Params(_))
        ));
        assert!(matches!(
            admm_solve(&p, &ADMMParams { max_iter: 0, ..Default::default() }),
            Err(SolverError::Params(_))
        ));
    }

    #[test]
    fn undeclared_variable_is_program_error() {
        let mut p = ConicProgram::new();
        p.add_var("a");
        p.add_equality(vec![(VarId(5), 1.0)], 0.0);
        assert!(matches!(admm_solve(&p, &ADMMParams::default()), Err(SolverError::Program(_))));
    }

    #[test]
    fn dependent_rows_rejected() {
        let mut p = ConicProgram::new();
        let a = p.add_var("a");
        let b = p.add_var("b");
        p.add_equality(vec![(a, 1.0), (b, 1.0)], 1.0);
        p.add_equality(vec![(a, 2.0), (b, 2.0)], 2.0);
        assert!(matches!(admm_solve(&p, &ADMMParams::default()), Err(SolverError::Program(_))));
    }

    #[test]
    fn warm_start_resumes() {
        let mut p = ConicProgram::new();
        let a = p.add_var("a");
        let b = p.add_var("b");
        for v in [a, b] {
            p.set_quadratic(v, 1.0);
            p.set_linear(v, -3.0);
        }
        p.add_equality(vec![(a, 1.0), (b, -1.0)], 0.0);
        let first = admm_solve(&p, &tight()).unwrap();
        let again = admm_solve_from(&p, &tight(), Some(&first.state())).unwrap();
        assert!(again.iterations <= 2);
        let bad = ADMMState { x: vec![0.0], ..first.state() };
        assert!(matches!(admm_solve_from(&p, &tight(), Some(&bad)), Err(SolverError::Dimension(_))));
    }

    #[test]
    fn trace_csv_header() {
        let mut p = ConicProgram::new();
        let a = p.add_bounded("a", 0.0, 1.0);
        p.set_linear(a, 1.0);
        let sol = admm_solve(&p, &ADMMParams { trace: true, ..Default::default() }).unwrap();
        let mut out = Vec::new();
        sol.write_trace_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("iter,primal_residual,dual_residual,objective\n1,"));
        assert_eq!(text.lines().count(), sol.iterations + 1);
    }
}
