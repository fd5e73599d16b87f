//! Euclidean projections onto the second-order and positive-semidefinite
//! cones, plus the rank-one gap used to judge relaxation exactness.

use nalgebra::{DMatrix, SymmetricEigen};

use super::SolverError;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Project `(t, u)` onto `{ (t, u) : ||u|| <= t }`.
pub fn project_soc(t: f64, u: &[f64]) -> (f64, Vec<f64>) {
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= t {
        (t, u.to_vec())
    } else if norm <= -t {
        (0.0, vec![0.0; u.len()])
    } else {
        let a = 0.5 * (t + norm);
        (a, u.iter().map(|v| a * v / norm).collect())
    }
}

pub(crate) fn project_soc_in_place(block: &mut [f64]) {
    let (t, u) = block.split_first_mut().expect("empty SOC block");
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= *t {
        return;
    }
    if norm <= -*t {
        *t = 0.0;
        u.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let a = 0.5 * (*t + norm);
    *t = a;
    let s = a / norm;
    u.iter_mut().for_each(|v| *v *= s);
}

/// Dense Hermitian matrix stored as real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

impl HermitianMatrix {
    /// Builds the matrix and symmetrizes it (`(M + M^H) / 2`).
    pub fn new(re: DMatrix<f64>, im: DMatrix<f64>) -> Result<Self, SolverError> {
        if !re.is_square() || re.shape() != im.shape() {
            return Err(SolverError::Dimension(format!(
                "Hermitian block needs square parts of equal shape, got {:?} and {:?}",
                re.shape(),
                im.shape()
            )));
        }
        let re = (&re + re.transpose()) * 0.5;
        let im = (&im - im.transpose()) * 0.5;
        Ok(Self { re, im })
    }

    pub fn real(re: DMatrix<f64>) -> Result<Self, SolverError> {
        let (r, c) = re.shape();
        Self::new(re, DMatrix::zeros(r, c))
    }

    pub fn identity(n: usize) -> Self {
        Self { re: DMatrix::identity(n, n), im: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.re.nrows()
    }

    fn embedding(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut e = DMatrix::zeros(2 * n, 2 * n);
        e.view_mut((0, 0), (n, n)).copy_from(&self.re);
        e.view_mut((n, n), (n, n)).copy_from(&self.re);
        e.view_mut((n, 0), (n, n)).copy_from(&self.im);
        e.view_mut((0, n), (n, n)).copy_from(&(-&self.im));
        e
    }

    /// Eigenvalues in descending order.
    ///
    /// Computed on the real symmetric embedding `[[Re, -Im], [Im, Re]]`, whose
    /// spectrum repeats every Hermitian eigenvalue twice.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.dim();
        let mut ev: Vec<f64> = SymmetricEigen::new(self.embedding()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        (0..n).map(|k| ev[2 * k]).collect()
    }

    pub fn frobenius_distance(&self, other: &HermitianMatrix) -> f64 {
        ((&self.re - &other.re).norm_squared() + (&self.im - &other.im).norm_squared()).sqrt()
    }

    /// Scaled half-vectorization (see [`super::Cone::Psd`]).
    pub fn to_svec(&self, complex: bool) -> Vec<f64> {
        let n = self.dim();
        let mut out: Vec<f64> = (0..n).map(|i| self.re[(i, i)]).collect();
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(SQRT2 * self.re[(i, j)]);
                if complex {
                    out.push(SQRT2 * self.im[(i, j)]);
                }
            }
        }
        out
    }

    pub fn from_svec(dim: usize, complex: bool, v: &[f64]) -> Self {
        let mut re = DMatrix::zeros(dim, dim);
        let mut im = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            re[(i, i)] = v[i];
        }
        let mut k = dim;
        for i in 0..dim {
            for j in (i + 1)..dim {
                re[(i, j)] = v[k] / SQRT2;
                re[(j, i)] = v[k] / SQRT2;
                k += 1;
                if complex {
                    im[(i, j)] = v[k] / SQRT2;
                    im[(j, i)] = -v[k] / SQRT2;
                    k += 1;
                }
            }
        }
        Self { re, im }
    }
}

/// Frobenius-nearest PSD matrix: eigendecomposition with negative eigenvalues
/// clipped to zero.
pub fn project_psd(m: &HermitianMatrix) -> HermitianMatrix {
    let n = m.dim();
    let eig = SymmetricEigen::new(m.embedding());
    let mut e = DMatrix::zeros(2 * n, 2 * n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            e += lam * &v * v.transpose();
        }
    }
    let re = e.view((0, 0), (n, n)).into_owned();
    let im = e.view((n, 0), (n, n)).into_owned();
    HermitianMatrix { re: (&re + re.transpose()) * 0.5, im: (&im - im.transpose()) * 0.5 }
}

/// PSD projection of a real square matrix (symmetrized first).
pub fn project_psd_real(m: &DMatrix<f64>) -> Result<DMatrix<f64>, SolverError> {
    let h = HermitianMatrix::real(m.clone())?;
    Ok(project_psd(&h).re)
}

/// Projects a 2x2 Hermitian block `[[a, c], [conj(c), b]]` given in scaled
/// half-vectorized form `[a, b, sqrt2*re(c), sqrt2*im(c)]` (or without the
/// imaginary entry for real blocks).
///
/// Uses `P = l1 (M - l2 I) / (l1 - l2)` when exactly one eigenvalue is
/// positive.
pub(crate) fn project_psd2_in_place(block: &mut [f64]) {
    let a = block[0];
    let b = block[1];
    let cr = block[2] / SQRT2;
    let ci = if block.len() > 3 { block[3] / SQRT2 } else { 0.0 };
    let mid = 0.5 * (a + b);
    let rad = (0.25 * (a - b) * (a - b) + cr * cr + ci * ci).sqrt();
    let l1 = mid + rad;
    let l2 = mid - rad;
    if l2 >= 0.0 {
        return;
    }
    if l1 <= 0.0 {
        block.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let s = l1 / (l1 - l2);
    block[0] = s * (a - l2);
    block[1] = s * (b - l2);
    block[2] *= s;
    if block.len() > 3 {
        block[3] *= s;
    }
}

pub(crate) fn project_psd_svec_in_place(dim: usize, complex: bool, block: &mut [f64]) {
    if dim == 1 {
        block[0] = block[0].max(0.0);
    } else if dim == 2 {
        project_psd2_in_place(block);
    } else {
        let m = HermitianMatrix::from_svec(dim, complex, block);
        block.copy_from_slice(&project_psd(&m).to_svec(complex));
    }
}

/// Ratio of the second-largest to the largest eigenvalue; `0` for the zero
/// matrix and for 1x1 blocks.
pub fn rank1_gap(m: &HermitianMatrix) -> f64 {
    let ev = m.eigenvalues();
    if ev.len() < 2 {
        return 0.0;
    }
    let l1 = ev[0];
    if l1 <= f64::MIN_POSITIVE {
        return 0.0;
    }
    (ev[1].max(0.0) / l1).min(1.0)
}
