//! The plant `dX = (AX + Bu)dt + (CX + Du)dW` with scalar Brownian motion,
//! the discounted quadratic objective, and the Lyapunov machinery that
//! decides mean-square stability and evaluates costs.
//!
//! Lyapunov equations are solved through their Kronecker linearization
//! `L(K) vec(P) = −vec(Λ)` with
//! `L(K) = I⊗(A+BK)ᵀ + (A+BK)ᵀ⊗I + (C+DK)ᵀ⊗(C+DK)ᵀ`, a dense `n²×n²` system.
//! That is O(n⁶) and intended for small plants (n ≤ 10).

use nalgebra::linalg::{Schur, LU};
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::matops::{
    eig_sym, ensure_finite, fro_norm, is_positive_definite, kron, unvec, vec, Mat, SymMat,
};

/// Relative residual accepted from a Lyapunov solve.
pub const LYAP_RTOL: f64 = 1e-10;

// Pivot ratio below which the generator is treated as singular.
const SINGULAR_PIVOT_RATIO: f64 = 1e-14;

/// The coefficient quadruple `[A, C; B, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticLinearSystem {
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
}

impl StochasticLinearSystem {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if n == 0 || m == 0 {
            return Err(Error::Dimension("state and control dimensions must be ≥ 1".into()));
        }
        let check = |name: &str, mat: &Mat, rows: usize, cols: usize| {
            if mat.shape() != (rows, cols) {
                Err(Error::Dimension(format!(
                    "{name}: expected {rows}×{cols}, got {}×{}",
                    mat.nrows(),
                    mat.ncols()
                )))
            } else {
                Ok(())
            }
        };
        check("A", &a, n, n)?;
        check("B", &b, n, m)?;
        check("C", &c, n, n)?;
        check("D", &d, n, m)?;
        ensure_finite(&a, "A")?;
        ensure_finite(&b, "B")?;
        ensure_finite(&c, "C")?;
        ensure_finite(&d, "D")?;
        Ok(Self { a, b, c, d })
    }

    /// Builds a system from row-major slices.
    pub fn from_rows(n: usize, m: usize, a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Self> {
        let mk = |rows, cols, data: &[f64], name: &str| {
            if data.len() != rows * cols {
                return Err(Error::Dimension(format!(
                    "{name}: {} entries for a {rows}×{cols} matrix",
                    data.len()
                )));
            }
            Ok(Mat::from_row_slice(rows, cols, data))
        };
        Self::new(mk(n, n, a, "A")?, mk(n, m, b, "B")?, mk(n, n, c, "C")?, mk(n, m, d, "D")?)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }

    pub fn d(&self) -> &Mat {
        &self.d
    }

    /// `[A − αI, C; B, D]`, the dynamics of the exponentially weighted state.
    pub fn shift(&self, alpha: f64) -> Self {
        let n = self.n();
        Self {
            a: &self.a - Mat::identity(n, n) * alpha,
            ..self.clone()
        }
    }

    /// `(A+BK, C+DK)`.
    pub fn closed_loop(&self, k: &FeedbackGain) -> Result<(Mat, Mat)> {
        self.check_gain(k)?;
        Ok((&self.a + &self.b * &k.0, &self.c + &self.d * &k.0))
    }

    /// `L(K) = I⊗(A+BK)ᵀ + (A+BK)ᵀ⊗I + (C+DK)ᵀ⊗(C+DK)ᵀ`, acting on `vec(P)`.
    pub fn closed_loop_generator(&self, k: &FeedbackGain) -> Result<Mat> {
        let (acl, ccl) = self.closed_loop(k)?;
        let n = self.n();
        let eye = Mat::identity(n, n);
        let at = acl.transpose();
        let ct = ccl.transpose();
        Ok(kron(&eye, &at) + kron(&at, &eye) + kron(&ct, &ct))
    }

    fn check_gain(&self, k: &FeedbackGain) -> Result<()> {
        if k.0.shape() != (self.m(), self.n()) {
            return Err(Error::Dimension(format!(
                "gain is {}×{}, system expects {}×{}",
                k.0.nrows(),
                k.0.ncols(),
                self.m(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// Weights of the discounted objective plus the initial second moment and
/// the cost-inflation factor ζ used by the discount decrement.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: SymMat,
    r: SymMat,
    sigma0: SymMat,
    zeta: f64,
}

impl CostSpec {
    pub fn new(q: SymMat, r: SymMat, sigma0: SymMat, zeta: f64) -> Result<Self> {
        if !is_positive_definite(&q) {
            return Err(Error::InvalidParameter("Q must be positive definite".into()));
        }
        if !is_positive_definite(&r) {
            return Err(Error::InvalidParameter("R must be positive definite".into()));
        }
        if !is_positive_definite(&sigma0) {
            return Err(Error::InvalidParameter("Σ₀ must be positive definite".into()));
        }
        if sigma0.dim() != q.dim() {
            return Err(Error::Dimension(format!(
                "Σ₀ is {0}×{0} but Q is {1}×{1}",
                sigma0.dim(),
                q.dim()
            )));
        }
        if !(zeta > 1.0 && zeta.is_finite()) {
            return Err(Error::InvalidParameter(format!("ζ must be > 1, got {zeta}")));
        }
        Ok(Self { q, r, sigma0, zeta })
    }

    pub fn q(&self) -> &SymMat {
        &self.q
    }

    pub fn r(&self) -> &SymMat {
        &self.r
    }

    pub fn sigma0(&self) -> &SymMat {
        &self.sigma0
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Same weights with a different initial second moment.
    pub fn with_sigma0(&self, sigma0: SymMat) -> Result<Self> {
        Self::new(self.q.clone(), self.r.clone(), sigma0, self.zeta)
    }

    /// `Q + KᵀRK`.
    pub fn stage_weight(&self, k: &FeedbackGain) -> SymMat {
        SymMat::symmetrize(&(self.q.as_mat() + k.0.transpose() * self.r.as_mat() * &k.0))
    }

    pub fn check_dims(&self, sys: &StochasticLinearSystem) -> Result<()> {
        if self.q.dim() != sys.n() || self.r.dim() != sys.m() {
            return Err(Error::Dimension(format!(
                "cost weights are Q {}×{}, R {}×{}; system has n = {}, m = {}",
                self.q.dim(),
                self.q.dim(),
                self.r.dim(),
                self.r.dim(),
                sys.n(),
                sys.m()
            )));
        }
        Ok(())
    }
}

/// A state-feedback gain `u = KX` (`m×n`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain(Mat);

impl FeedbackGain {
    pub fn new(k: Mat) -> Result<Self> {
        ensure_finite(&k, "gain")?;
        Ok(Self(k))
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self(Mat::zeros(m, n))
    }

    pub fn from_rows(m: usize, n: usize, row_major: &[f64]) -> Result<Self> {
        if row_major.len() != m * n {
            return Err(Error::Dimension(format!(
                "gain: {} entries for a {m}×{n} matrix",
                row_major.len()
            )));
        }
        Self::new(Mat::from_row_slice(m, n, row_major))
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    /// Entries in row-major order.
    pub fn row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.0.len());
        for i in 0..self.0.nrows() {
            out.extend(self.0.row(i).iter());
        }
        out
    }

    /// Largest entrywise absolute difference.
    pub fn max_abs_diff(&self, other: &FeedbackGain) -> f64 {
        (&self.0 - &other.0).amax()
    }
}

impl Deref for FeedbackGain {
    type Target = Mat;

    fn deref(&self) -> &Mat {
        &self.0
    }
}

/// Symmetric solution `P` of a Lyapunov equation; `X ↦ XᵀPX` is the value.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMatrix(SymMat);

impl ValueMatrix {
    pub fn new(p: SymMat) -> Self {
        Self(p)
    }

    pub fn sym(&self) -> &SymMat {
        &self.0
    }
}

impl Deref for ValueMatrix {
    type Target = SymMat;

    fn deref(&self) -> &SymMat {
        &self.0
    }
}

/// `(A+BK)ᵀP + P(A+BK) + (C+DK)ᵀP(C+DK) + Λ`.
pub fn lyapunov_residual(
    sys: &StochasticLinearSystem,
    k: &FeedbackGain,
    p: &Mat,
    lambda: &Mat,
) -> Result<Mat> {
    let (acl, ccl) = sys.closed_loop(k)?;
    Ok(acl.transpose() * p + p * &acl + ccl.transpose() * p * &ccl + lambda)
}

fn solve_generator(l: &Mat, rhs: &nalgebra::DVector<f64>) -> Result<nalgebra::DVector<f64>> {
    let lu = LU::new(l.clone());
    let u = lu.u();
    let diag = u.diagonal();
    let max_pivot = diag.amax();
    let min_pivot = diag.iter().fold(f64::INFINITY, |acc, x| acc.min(x.abs()));
    if !(max_pivot > 0.0) || min_pivot < SINGULAR_PIVOT_RATIO * max_pivot {
        return Err(Error::SingularGenerator);
    }
    let mut x = lu.solve(rhs).ok_or(Error::SingularGenerator)?;
    // one step of iterative refinement
    let r = rhs - l * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularGenerator);
    }
    Ok(x)
}

/// Unique symmetric `P` with `(A+BK)ᵀP + P(A+BK) + (C+DK)ᵀP(C+DK) + Λ = 0`.
///
/// A non-stabilizing gain shows up as [`Error::SingularGenerator`] or, when
/// `Λ` is positive definite, as [`Error::NonPositiveSolution`].
pub fn solve_lyapunov(
    sys: &StochasticLinearSystem,
    k: &FeedbackGain,
    lambda: &SymMat,
) -> Result<ValueMatrix> {
    if lambda.dim() != sys.n() {
        return Err(Error::Dimension(format!(
            "Λ is {0}×{0}, system has n = {1}",
            lambda.dim(),
            sys.n()
        )));
    }
    let l = sys.closed_loop_generator(k)?;
    let x = solve_generator(&l, &(-vec(lambda)))?;
    let p = SymMat::symmetrize(&unvec(&x, sys.n(), sys.n())?);
    let residual = fro_norm(&lyapunov_residual(sys, k, &p, lambda)?);
    if residual > LYAP_RTOL * (1.0 + fro_norm(lambda)) * (1.0 + fro_norm(&p)) {
        return Err(Error::SingularGenerator);
    }
    if is_positive_definite(lambda) && !is_positive_definite(&p) {
        let min_eigenvalue = eig_sym(&p).map(|e| e.min()).unwrap_or(f64::NAN);
        return Err(Error::NonPositiveSolution { min_eigenvalue });
    }
    Ok(ValueMatrix(p))
}

/// Unique symmetric `Y` with `(A+BK)Y + Y(A+BK)ᵀ + (C+DK)Y(C+DK)ᵀ + V = 0`.
///
/// Dual to [`solve_lyapunov`]: `Tr(P V) = Tr(Y Λ)`.
pub fn solve_dual_lyapunov(
    sys: &StochasticLinearSystem,
    k: &FeedbackGain,
    v: &SymMat,
) -> Result<SymMat> {
    if v.dim() != sys.n() {
        return Err(Error::Dimension(format!(
            "V is {0}×{0}, system has n = {1}",
            v.dim(),
            sys.n()
        )));
    }
    let l = sys.closed_loop_generator(k)?.transpose();
    let x = solve_generator(&l, &(-vec(v)))?;
    let y = SymMat::symmetrize(&unvec(&x, sys.n(), sys.n())?);
    let (acl, ccl) = sys.closed_loop(k)?;
    let res = &acl * y.as_mat() + y.as_mat() * acl.transpose() + &ccl * y.as_mat() * ccl.transpose() + v.as_mat();
    if fro_norm(&res) > LYAP_RTOL * (1.0 + fro_norm(v)) * (1.0 + fro_norm(&y)) {
        return Err(Error::SingularGenerator);
    }
    if is_positive_definite(v) && !is_positive_definite(&y) {
        let min_eigenvalue = eig_sym(&y).map(|e| e.min()).unwrap_or(f64::NAN);
        return Err(Error::NonPositiveSolution { min_eigenvalue });
    }
    Ok(y)
}

/// Largest real part among the eigenvalues of a general square matrix.
pub fn spectral_abscissa(m: &Mat) -> Result<f64> {
    let schur = Schur::try_new(m.clone(), 1e-15, 100_000).ok_or(Error::EigenNoConvergence)?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Mean-square stabilizer test: `solve_lyapunov(sys, K, I)` succeeds with
/// a positive definite solution.
pub fn is_ms_stabilizer(sys: &StochasticLinearSystem, k: &FeedbackGain) -> bool {
    let n = sys.n();
    let verdict = solve_lyapunov(sys, k, &SymMat::identity(n)).is_ok();
    #[cfg(debug_assertions)]
    if let Ok(l) = sys.closed_loop_generator(k) {
        if let Ok(abscissa) = spectral_abscissa(&l) {
            // Only compare away from the stability boundary.
            if abscissa.abs() > 1e-6 * (1.0 + fro_norm(&l)) {
                debug_assert_eq!(
                    verdict,
                    abscissa < 0.0,
                    "Lyapunov and spectral stabilizer tests disagree (abscissa {abscissa:e})"
                );
            }
        }
    }
    verdict
}

/// Both stabilizer tests plus the Lyapunov certificate, for reporting.
#[derive(Debug, Clone)]
pub struct StabilizerReport {
    pub verdict: bool,
    pub spectral_abscissa: f64,
    /// Eigenvalues of `P` solving the Lyapunov equation with `Λ = I`, when
    /// the linear solve succeeded.
    pub lyapunov_eigenvalues: Option<Vec<f64>>,
}

pub fn stabilizer_report(sys: &StochasticLinearSystem, k: &FeedbackGain) -> Result<StabilizerReport> {
    let generator = sys.closed_loop_generator(k)?;
    let spectral_abscissa = spectral_abscissa(&generator)?;
    let n = sys.n();
    let (verdict, lyapunov_eigenvalues) = match solve_lyapunov(sys, k, &SymMat::identity(n)) {
        Ok(p) => (true, Some(eig_sym(&p)?.values)),
        Err(Error::NonPositiveSolution { .. }) => {
            // Report the indefinite solution too.
            let x = solve_generator(&generator, &(-vec(&SymMat::identity(n))))?;
            let p = SymMat::symmetrize(&unvec(&x, n, n)?);
            (false, Some(eig_sym(&p)?.values))
        }
        Err(Error::SingularGenerator) => (false, None),
        Err(e) => return Err(e),
    };
    Ok(StabilizerReport {
        verdict,
        spectral_abscissa,
        lyapunov_eigenvalues,
    })
}

/// `J_α(K) = Tr(P_α Σ₀)` where `P_α` solves the Lyapunov equation with
/// `Λ = Q + KᵀRK` for the (already shifted) system.
pub fn cost(sys_alpha: &StochasticLinearSystem, k: &FeedbackGain, spec: &CostSpec) -> Result<f64> {
    cost_with_value(sys_alpha, k, spec).map(|(j, _)| j)
}

/// [`cost`] together with the value matrix it was computed from.
pub fn cost_with_value(
    sys_alpha: &StochasticLinearSystem,
    k: &FeedbackGain,
    spec: &CostSpec,
) -> Result<(f64, ValueMatrix)> {
    spec.check_dims(sys_alpha)?;
    let p = solve_lyapunov(sys_alpha, k, &spec.stage_weight(k))?;
    let j = (p.as_mat() * spec.sigma0().as_mat()).trace();
    Ok((j, p))
}
