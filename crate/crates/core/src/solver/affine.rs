use faer::linalg::solvers::SolveCore;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Conj, Side};

use super::program::AffineRow;
use super::SolverError;

/// Orthogonal projector onto `{ z : A z = b }`.
///
/// The n-by-n system is never formed: `z = w - A^T (A A^T)^{-1} (A w - b)`
/// with the sparse Gram matrix `A A^T` factored once (fill-reducing ordering
/// chosen by the factorization).
pub(crate) struct AffineProjector {
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    /// indices of non-empty rows, in factor order
    active: Vec<usize>,
    chol: Option<faer::sparse::linalg::solvers::Llt<usize, f64>>,
}

impl std::fmt::Debug for AffineProjector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AffineProjector").field("rows", &self.rows.len()).finish()
    }
}

fn dependent() -> SolverError {
    SolverError::Program("equality rows are linearly dependent".to_string())
}

impl AffineProjector {
    pub(crate) fn new(n: usize, rows: &[AffineRow]) -> Result<Self, SolverError> {
        let mut merged: Vec<Vec<(usize, f64)>> = Vec::with_capacity(rows.len());
        for row in rows {
            let mut coeffs: Vec<(usize, f64)> = row.coeffs.iter().map(|&(v, c)| (v.0, c)).collect();
            coeffs.sort_by_key(|e| e.0);
            let mut out: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
            for (v, c) in coeffs {
                match out.last_mut() {
                    Some(last) if last.0 == v => last.1 += c,
                    _ => out.push((v, c)),
                }
            }
            out.retain(|e| e.1 != 0.0);
            merged.push(out);
        }
        let rhs: Vec<f64> = rows.iter().map(|r| r.rhs).collect();
        for (k, row) in merged.iter().enumerate() {
            if row.is_empty() && rhs[k] != 0.0 {
                return Err(SolverError::Program(format!("row {k} reads 0 = {}", rhs[k])));
            }
        }
        let active: Vec<usize> = (0..merged.len()).filter(|&r| !merged[r].is_empty()).collect();
        if active.is_empty() {
            return Ok(Self { rows: merged, rhs, active, chol: None });
        }

        // Gram entries through the variable -> rows incidence
        let mut by_var: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (a, &r) in active.iter().enumerate() {
            for &(v, c) in &merged[r] {
                by_var[v].push((a, c));
            }
        }
        let m = active.len();
        let mut acc: std::collections::BTreeMap<(usize, usize), f64> = Default::default();
        for col in &by_var {
            for &(a, ca) in col {
                for &(b, cb) in col {
                    if b <= a {
                        *acc.entry((a, b)).or_insert(0.0) += ca * cb;
                    }
                }
            }
        }
        let max_diag = (0..m).map(|a| acc.get(&(a, a)).copied().unwrap_or(0.0)).fold(0.0, f64::max);
        let trips: Vec<Triplet<usize, usize, f64>> = acc.into_iter().map(|((a, b), v)| Triplet::new(a, b, v)).collect();
        let gram = SparseColMat::<usize, f64>::try_new_from_triplets(m, m, &trips)
            .map_err(|e| SolverError::Program(format!("cannot assemble the row Gram matrix: {e:?}")))?;
        let chol = gram.sp_cholesky(Side::Lower).map_err(|_| dependent())?;
        let proj = Self { rows: merged, rhs, active, chol: Some(chol) };

        // a factor can succeed on numerically dependent rows; check it reproduces
        // a right-hand side of the Gram system
        let probe: Vec<f64> = (0..m).map(|a| 1.0 + (a % 7) as f64 * 0.25).collect();
        let mut y = Col::<f64>::from_fn(m, |a| probe[a]);
        proj.chol.as_ref().unwrap().solve_in_place_with_conj(Conj::No, y.as_mat_mut());
        let mut back = vec![0.0; m];
        for col in &by_var {
            let s: f64 = col.iter().map(|&(a, c)| c * y[a]).sum();
            for &(a, c) in col {
                back[a] += c * s;
            }
        }
        let err = back.iter().zip(&probe).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ynorm = (0..m).map(|a| y[a].abs()).fold(0.0, f64::max);
        if !(err <= 1e-6 * probe.iter().fold(0.0f64, |a, b| a.max(*b))) || ynorm > 1e10 / max_diag.max(1e-300) {
            return Err(dependent());
        }
        Ok(proj)
    }

    /// Overwrites `w` with its projection.
    pub(crate) fn project(&self, w: &mut [f64]) {
        let Some(chol) = &self.chol else { return };
        let mut resid = Col::<f64>::from_fn(self.active.len(), |a| {
            let r = self.active[a];
            self.rows[r].iter().map(|&(v, c)| c * w[v]).sum::<f64>() - self.rhs[r]
        });
        chol.solve_in_place_with_conj(Conj::No, resid.as_mat_mut());
        for (a, &r) in self.active.iter().enumerate() {
            let ya = resid[a];
            for &(v, c) in &self.rows[r] {
                w[v] -= c * ya;
            }
        }
    }

    pub(crate) fn max_residual(&self, z: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| (row.iter().map(|&(v, c)| c * z[v]).sum::<f64>() - b).abs())
            .fold(0.0, f64::max)
    }
}
