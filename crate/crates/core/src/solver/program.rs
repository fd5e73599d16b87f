use std::fmt;

use super::SolverError;

/// Index of a scalar variable inside a [`ConicProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// Cone membership of a block of variables.
///
/// PSD blocks use the scaled half-vectorization: the `n` diagonal entries come
/// first, then for every `i < j` the off-diagonal part multiplied by `sqrt(2)`
/// (one entry for real blocks, a real/imaginary pair for Hermitian blocks).
/// With that scaling the Euclidean norm of the block equals the Frobenius norm
/// of the matrix, so projecting the block is a Euclidean projection.
#[derive(Debug, Clone, PartialEq)]
pub enum Cone {
    Soc { t: VarId, u: Vec<VarId> },
    Psd { dim: usize, complex: bool, entries: Vec<VarId> },
}

impl Cone {
    pub fn vars(&self) -> Vec<VarId> {
        match self {
            Cone::Soc { t, u } => std::iter::once(*t).chain(u.iter().copied()).collect(),
            Cone::Psd { entries, .. } => entries.clone(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Cone::Soc { .. } => "SOC",
            Cone::Psd { .. } => "PSD",
        }
    }
}

/// Number of scalar entries of a PSD block in scaled half-vectorized form.
pub fn psd_block_len(dim: usize, complex: bool) -> usize {
    let off = dim * (dim.saturating_sub(1)) / 2;
    dim + if complex { 2 * off } else { off }
}

/// One affine equality row `sum(coeff * var) = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub coeffs: Vec<(VarId, f64)>,
    pub rhs: f64,
}

/// A separable conic program
///
/// ```text
/// minimize   sum_i c_i x_i + q_i x_i^2 / 2 + constant
/// subject to A x = b,  lo <= x <= hi,  blocks of x in SOC / PSD cones
/// ```
///
/// Each variable is either in a box (possibly unbounded) or in exactly one
/// cone block. Cone variables must be unbounded with no quadratic term; affine
/// images of original variables are expressed through auxiliary variables
/// tied by equality rows.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub(crate) names: Vec<String>,
    pub(crate) linear: Vec<f64>,
    pub(crate) quadratic: Vec<f64>,
    pub(crate) lower: Vec<f64>,
    pub(crate) upper: Vec<f64>,
    pub(crate) rows: Vec<AffineRow>,
    pub(crate) cones: Vec<Cone>,
    pub(crate) constant: f64,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> VarId {
        self.add_bounded(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn add_bounded(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> VarId {
        let id = VarId(self.names.len());
        self.names.push(name.into());
        self.linear.push(0.0);
        self.quadratic.push(0.0);
        self.lower.push(lo);
        self.upper.push(hi);
        id
    }

    pub fn set_bounds(&mut self, v: VarId, lo: f64, hi: f64) {
        self.lower[v.0] = lo;
        self.upper[v.0] = hi;
    }

    pub fn set_linear(&mut self, v: VarId, c: f64) {
        self.linear[v.0] = c;
    }

    pub fn set_quadratic(&mut self, v: VarId, q: f64) {
        self.quadratic[v.0] = q;
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    pub fn add_equality(&mut self, coeffs: Vec<(VarId, f64)>, rhs: f64) {
        self.rows.push(AffineRow { coeffs, rhs });
    }

    pub fn add_soc(&mut self, t: VarId, u: Vec<VarId>) {
        self.cones.push(Cone::Soc { t, u });
    }

    pub fn add_psd(&mut self, dim: usize, complex: bool, entries: Vec<VarId>) {
        self.cones.push(Cone::Psd { dim, complex, entries });
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    pub fn rows(&self) -> &[AffineRow] {
        &self.rows
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.names[v.0]
    }

    pub fn bounds(&self, v: VarId) -> (f64, f64) {
        (self.lower[v.0], self.upper[v.0])
    }

    pub fn count_cones(&self, tag: &str) -> usize {
        self.cones.iter().filter(|c| c.tag() == tag).count()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let mut f = self.constant;
        for i in 0..x.len() {
            f += self.linear[i] * x[i] + 0.5 * self.quadratic[i] * x[i] * x[i];
        }
        f
    }

    /// Check structural consistency and return, per variable, the cone index
    /// it belongs to.
    pub fn validate(&self) -> Result<Vec<Option<usize>>, SolverError> {
        let n = self.num_vars();
        let check = |v: VarId| {
            if v.0 >= n {
                Err(SolverError::Program(format!("reference to undeclared variable {v}")))
            } else {
                Ok(())
            }
        };
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(SolverError::Program(format!("row {r} has non-finite rhs")));
            }
            for &(v, c) in &row.coeffs {
                check(v)?;
                if !c.is_finite() {
                    return Err(SolverError::Program(format!("row {r} has non-finite coefficient")));
                }
            }
        }
        for i in 0..n {
            if self.lower[i] > self.upper[i] {
                return Err(SolverError::Program(format!(
                    "variable {} has empty box [{}, {}]",
                    self.names[i], self.lower[i], self.upper[i]
                )));
            }
            if self.quadratic[i] < 0.0 || !self.quadratic[i].is_finite() || !self.linear[i].is_finite() {
                return Err(SolverError::Program(format!("variable {} has an invalid objective term", self.names[i])));
            }
        }
        let mut owner = vec![None; n];
        for (k, cone) in self.cones.iter().enumerate() {
            if let Cone::Psd { dim, complex, entries } = cone {
                if *dim == 0 || entries.len() != psd_block_len(*dim, *complex) {
                    return Err(SolverError::Program(format!(
                        "PSD block {k} has {} entries, expected {}",
                        entries.len(),
                        psd_block_len(*dim, *complex)
                    )));
                }
            }
            for v in cone.vars() {
                check(v)?;
                if owner[v.0].is_some() {
                    return Err(SolverError::Program(format!(
                        "variable {} belongs to more than one cone",
                        self.names[v.0]
                    )));
                }
                if self.lower[v.0].is_finite() || self.upper[v.0].is_finite() || self.quadratic[v.0] != 0.0 {
                    return Err(SolverError::Program(format!(
                        "cone variable {} must be free with a linear objective only",
                        self.names[v.0]
                    )));
                }
                owner[v.0] = Some(k);
            }
        }
        Ok(owner)
    }
}
