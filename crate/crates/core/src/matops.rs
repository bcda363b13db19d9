//! Dense matrix primitives: Kronecker products, column vectorization, the
//! symmetric half-vectorization `vech` with its duplication matrix Γ, the
//! quadratic-form feature map, and symmetric eigenvalue utilities.
//!
//! # The `vech` convention
//!
//! Unlike the usual half-vectorization, [`vech`] *doubles* the strict upper
//! triangle:
//!
//! ```text
//! vech(V) = [v11, 2 v12, ..., 2 v1n, v22, 2 v23, ..., 2 v(n-1)n, vnn]
//! ```
//!
//! so the duplication matrix returned by [`gamma_matrix`] carries `1/2` in the
//! off-diagonal columns: `Γ · vech(V) = vec(V)`. With this convention the
//! quadratic form is a plain inner product, `νᵀVν = mcal(ν) · vech(V)`, and
//! [`mcal`] holds products `ν_i ν_j` with no factor of two.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::ops::Deref;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance for accepting a nearly symmetric matrix as [`SymMat`].
pub const SYMMETRY_RTOL: f64 = 1e-9;
/// Relative margin used by the (semi)definiteness tests.
pub const PD_RTOL: f64 = 1e-10;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITERS: usize = 10_000;

/// Returns an error naming the first non-finite entry of `a`.
pub fn ensure_finite(a: &Mat, what: &'static str) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(Error::NonFinite {
                    what,
                    row: i,
                    col: j,
                });
            }
        }
    }
    Ok(())
}

/// A square matrix that is exactly symmetric.
///
/// Construction accepts asymmetry up to `1e-9·(1+‖V‖_F)` and stores
/// `(V+Vᵀ)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat(Mat);

impl SymMat {
    pub fn new(v: Mat) -> Result<Self> {
        Self::named(v, "symmetric matrix")
    }

    /// Like [`SymMat::new`], with `what` used in error messages.
    pub fn named(v: Mat, what: &'static str) -> Result<Self> {
        if !v.is_square() {
            return Err(Error::Dimension(format!(
                "{what}: expected a square matrix, got {}×{}",
                v.nrows(),
                v.ncols()
            )));
        }
        ensure_finite(&v, what)?;
        let tolerance = SYMMETRY_RTOL * (1.0 + v.norm());
        let asymmetry = (&v - v.transpose()).amax();
        if asymmetry > tolerance {
            return Err(Error::NotSymmetric {
                what,
                asymmetry,
                tolerance,
            });
        }
        Ok(Self::symmetrize(&v))
    }

    /// `(V+Vᵀ)/2` without any tolerance check.
    pub fn symmetrize(v: &Mat) -> Self {
        Self((v + v.transpose()) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        Self(Mat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Mat::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(Mat::from_diagonal(&Vector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }
}

impl Deref for SymMat {
    type Target = Mat;

    fn deref(&self) -> &Mat {
        &self.0
    }
}

/// Kronecker product: block `(i, j)` of the result is `a[(i, j)] · b`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Mat::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for q in 0..bc {
                for p in 0..br {
                    out[(i * br + p, j * bc + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Column-stacking vectorization.
pub fn vec(a: &Mat) -> Vector {
    // nalgebra storage is column-major, which is exactly the stacking order.
    Vector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Mat> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "unvec: length {} does not match {rows}×{cols}",
            v.len()
        )));
    }
    Ok(Mat::from_column_slice(rows, cols, v.as_slice()))
}

/// `n(n+1)/2`.
pub const fn vech_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Row-by-row upper triangle with doubled off-diagonals.
pub fn vech(v: &SymMat) -> Vector {
    let n = v.dim();
    let mut out = Vec::with_capacity(vech_len(n));
    for i in 0..n {
        out.push(v[(i, i)]);
        for j in i + 1..n {
            out.push(2.0 * v[(i, j)]);
        }
    }
    Vector::from_vec(out)
}

/// Inverse of [`vech`]; halves the off-diagonal entries back.
pub fn unvech(v: &Vector, n: usize) -> Result<SymMat> {
    if v.len() != vech_len(n) {
        return Err(Error::Dimension(format!(
            "unvech: length {} does not match n = {n} (expected {})",
            v.len(),
            vech_len(n)
        )));
    }
    let mut out = Mat::zeros(n, n);
    let mut c = 0;
    for i in 0..n {
        out[(i, i)] = v[c];
        c += 1;
        for j in i + 1..n {
            let half = 0.5 * v[c];
            out[(i, j)] = half;
            out[(j, i)] = half;
            c += 1;
        }
    }
    Ok(SymMat(out))
}

/// The `n² × n(n+1)/2` matrix with `Γ · vech(V) = vec(V)` for symmetric `V`.
pub fn gamma_matrix(n: usize) -> Mat {
    let mut g = Mat::zeros(n * n, vech_len(n));
    let mut c = 0;
    for i in 0..n {
        g[(i + i * n, c)] = 1.0;
        c += 1;
        for j in i + 1..n {
            g[(i + j * n, c)] = 0.5;
            g[(j + i * n, c)] = 0.5;
            c += 1;
        }
    }
    g
}

/// Quadratic-form features: `mcal(ν) · vech(V) = νᵀVν`.
///
/// Equal to `(νᵀ⊗νᵀ)Γ`; returned as a column vector.
pub fn mcal(v: &[f64]) -> Vector {
    let n = v.len();
    let mut out = Vec::with_capacity(vech_len(n));
    for i in 0..n {
        for j in i..n {
            out.push(v[i] * v[j]);
        }
    }
    Vector::from_vec(out)
}

/// Features of the second-moment matrix `S`: the row `vec(S)ᵀΓ`.
///
/// For `S = E[ννᵀ]` this is `E[mcal(ν)]`.
pub fn mcal_moment(s: &Mat) -> Vector {
    let n = s.nrows();
    let mut out = Vec::with_capacity(vech_len(n));
    for i in 0..n {
        out.push(s[(i, i)]);
        for j in i + 1..n {
            out.push(0.5 * (s[(i, j)] + s[(j, i)]));
        }
    }
    Vector::from_vec(out)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Columns are unit eigenvectors matching `values`.
    pub vectors: Mat,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn reconstruct(&self) -> Mat {
        let d = Mat::from_diagonal(&Vector::from_column_slice(&self.values));
        &self.vectors * d * self.vectors.transpose()
    }
}

pub fn eig_sym(v: &SymMat) -> Result<SymEigen> {
    let n = v.dim();
    if n == 0 {
        return Err(Error::Dimension("eig_sym: empty matrix".into()));
    }
    let eig = SymmetricEigen::try_new(v.0.clone(), EIGEN_EPS, EIGEN_MAX_ITERS)
        .ok_or(Error::EigenNoConvergence)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigen { values, vectors })
}

/// Smallest eigenvalue λ₁.
pub fn lambda_min(v: &SymMat) -> Result<f64> {
    eig_sym(v).map(|e| e.min())
}

/// Largest eigenvalue λₙ.
pub fn lambda_max(v: &SymMat) -> Result<f64> {
    eig_sym(v).map(|e| e.max())
}

/// `√λ_max(aᵀa)`.
pub fn spectral_norm(a: &Mat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

pub fn trace(a: &Mat) -> f64 {
    a.trace()
}

pub fn fro_norm(a: &Mat) -> f64 {
    a.norm()
}

fn pd_margin(v: &SymMat) -> f64 {
    PD_RTOL * (1.0 + spectral_norm(v))
}

/// `λ₁(V) > 1e-10·(1+‖V‖₂)`.
pub fn is_positive_definite(v: &SymMat) -> bool {
    match lambda_min(v) {
        Ok(l) => l > pd_margin(v),
        Err(_) => false,
    }
}

/// `λ₁(V) ≥ −1e-10·(1+‖V‖₂)`.
pub fn is_positive_semidefinite(v: &SymMat) -> bool {
    match lambda_min(v) {
        Ok(l) => l >= -pd_margin(v),
        Err(_) => false,
    }
}
