//! Model-free policy iteration from trajectory data.
//!
//! For a gain `Kᵢ` the unknowns `vech(P)`, `vec(M)` and `vech(H)` solve the
//! linear regression `Φᵢ x = 𝕁ᵢ`, where
//!
//! ```text
//! Φᵢ = [Ξ, 2(𝕀ₓᵤ − 𝕀ₓₓ(I ⊗ Kᵢᵀ)), 𝕄ₖₓ − 𝕄ᵤ]
//! ```
//!
//! and the next gain is `(R + H)⁻¹M`. Only `𝕄ₖₓ` and `𝕁ᵢ` depend on `Kᵢ`,
//! and both are functions of `∫E[XXᵀ]`, so one batch serves every
//! iteration.

mod driver;

pub use driver::{
    batch_file_name, run_model_free, stabilize_model_free, verify_run, CollectedData, DataCollector, DataSource, ModelFreeRun, OracleCollector,
    OuterDiagnostics, ReplayCollector, Sigma0Rule, SimulationCollector,
};

use nalgebra::SVD;

use crate::error::{Error, Result};
use crate::exact::inner_matrix_solve;
use crate::matops::{fro_norm, kron, lambda_min, unvec, unvech, vech_len, Mat, SymMat, Vector};
use crate::sde::{policy_matrices, AdpDataMatrices, PolicyMatrices, RowMoments};
use crate::sysmodel::{FeedbackGain, ValueMatrix};

/// Relative singular-value threshold below which `Φ` counts as rank deficient.
pub const RANK_TOL: f64 = 1e-8;
/// Relative tolerance on negative eigenvalues of the recovered `H`.
pub const H_PSD_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdpSettings {
    /// Lower bound on the stopping threshold for `‖P⁽ⁱ⁺¹⁾ − P⁽ⁱ⁾‖_F`.
    pub eps: f64,
    pub max_inner_iters: usize,
    pub max_outer_iters: usize,
    pub rank_tol: f64,
    /// Iterations compared when looking for a stalled sequence.
    pub plateau_window: usize,
}

impl Default for AdpSettings {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_inner_iters: 200,
            max_outer_iters: 10_000,
            rank_tol: RANK_TOL,
            plateau_window: 5,
        }
    }
}

impl AdpSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::InvalidParameter("adp eps must be > 0 and rank_tol in (0, 1)".into()));
        }
        if self.max_inner_iters == 0 || self.max_outer_iters == 0 || self.plateau_window == 0 {
            return Err(Error::InvalidParameter("adp iteration caps and window must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Least-squares solution of one regression.
#[derive(Debug, Clone)]
pub struct AdpSolution {
    pub p: ValueMatrix,
    /// `(R + DᵀPD)K⁽ⁱ⁺¹⁾`.
    pub m: Mat,
    /// `DᵀPD`.
    pub h: SymMat,
    /// `‖Φx − 𝕁‖₂`.
    pub residual: f64,
    /// Condition number of `ΦᵀΦ`.
    pub condition: f64,
    /// `σ_min(Φ)/σ_max(Φ)`.
    pub rank_ratio: f64,
    /// Whether `H` is PSD to [`H_PSD_RTOL`].
    pub h_psd: bool,
}

/// Regression data for one discount: the static blocks plus the moments
/// needed to rebuild the policy blocks for any gain.
#[derive(Debug, Clone)]
pub struct AdpData {
    pub static_m: AdpDataMatrices,
    pub moments: Vec<RowMoments>,
}

impl AdpData {
    pub fn from_moments(moments: Vec<RowMoments>) -> Result<Self> {
        Ok(Self {
            static_m: AdpDataMatrices::from_moments(&moments)?,
            moments,
        })
    }

    pub fn n(&self) -> usize {
        self.moments[0].n()
    }

    pub fn m(&self) -> usize {
        self.moments[0].m()
    }

    pub fn policy(&self, k: &FeedbackGain, q: &SymMat, r: &SymMat) -> Result<PolicyMatrices> {
        policy_matrices(&self.moments, k, q, r)
    }
}

pub fn unknown_count(n: usize, m: usize) -> usize {
    vech_len(n) + n * m + vech_len(m)
}

/// `[Ξ, 2(𝕀ₓᵤ − 𝕀ₓₓ(I⊗Kᵀ)), 𝕄ₖₓ − 𝕄ᵤ]`; `policy` must belong to `k`.
pub fn assemble_phi(static_m: &AdpDataMatrices, policy: &PolicyMatrices, k: &FeedbackGain) -> Result<Mat> {
    let (l, n, m) = (static_m.l(), static_m.n(), static_m.m());
    if k.nrows() != m || k.ncols() != n || policy.m_kx.shape() != static_m.m_u.shape() || policy.j_k.len() != l {
        return Err(Error::Dimension("policy blocks do not match the data matrices".into()));
    }
    let (np, nm) = (vech_len(n), n * m);
    let mut phi = Mat::zeros(l, unknown_count(n, m));
    phi.columns_mut(0, np).copy_from(&static_m.xi);
    let cross = (&static_m.i_xu - &static_m.i_xx * kron(&Mat::identity(n, n), &k.transpose())) * 2.0;
    phi.columns_mut(np, nm).copy_from(&cross);
    phi.columns_mut(np + nm, vech_len(m))
        .copy_from(&(&policy.m_kx - &static_m.m_u));
    Ok(phi)
}

/// Minimum-norm least-squares solve of `Φx = 𝕁` by SVD, then unpack.
pub fn solve_pmh(phi: &Mat, j_k: &Vector, n: usize, m: usize, rank_tol: f64) -> Result<AdpSolution> {
    if phi.ncols() != unknown_count(n, m) || phi.nrows() != j_k.len() {
        return Err(Error::Dimension(format!(
            "Φ is {}×{}, 𝕁 has {} rows, expected {} columns",
            phi.nrows(),
            phi.ncols(),
            j_k.len(),
            unknown_count(n, m)
        )));
    }
    if phi.nrows() < phi.ncols() {
        return Err(Error::RankDeficient {
            ratio: 0.0,
            tolerance: rank_tol,
        });
    }
    let svd = SVD::new(phi.clone(), true, true);
    let s = &svd.singular_values;
    let max = s.max();
    let min = s.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(ratio >= rank_tol) {
        return Err(Error::RankDeficient {
            ratio,
            tolerance: rank_tol,
        });
    }
    let x = svd
        .solve(j_k, 0.0)
        .map_err(|e| Error::InvariantViolation(format!("SVD solve failed: {e}")))?;
    let residual = (phi * &x - j_k).norm();

    let (np, nm) = (vech_len(n), n * m);
    let p = unvech(&x.rows(0, np).into_owned(), n)?;
    let mm = unvec(&x.rows(np, nm).into_owned(), m, n)?;
    let h = unvech(&x.rows(np + nm, vech_len(m)).into_owned(), m)?;
    let h_psd = lambda_min(&h)? >= -H_PSD_RTOL * (1.0 + fro_norm(&h));
    Ok(AdpSolution {
        p: ValueMatrix::new(p),
        m: mm,
        h,
        residual,
        condition: (max / min).powi(2),
        rank_ratio: ratio,
        h_psd,
    })
}

/// `K = (R + H)⁻¹M`.
pub fn adp_policy_update(sol: &AdpSolution, r: &SymMat) -> Result<FeedbackGain> {
    if r.dim() != sol.h.dim() {
        return Err(Error::Dimension("R and H differ in size".into()));
    }
    let inner = r.as_mat() + sol.h.as_mat();
    FeedbackGain::new(inner_matrix_solve(&inner, &sol.m)?)
}

/// One regression solve at gain `k`.
pub fn adp_step(data: &AdpData, k: &FeedbackGain, q: &SymMat, r: &SymMat, rank_tol: f64) -> Result<AdpSolution> {
    let policy = data.policy(k, q, r)?;
    let phi = assemble_phi(&data.static_m, &policy, k)?;
    solve_pmh(&phi, &policy.j_k, data.n(), data.m(), rank_tol)
}

#[derive(Debug, Clone)]
pub struct AdpIterate {
    pub evaluated: FeedbackGain,
    pub solution: AdpSolution,
    pub improved: FeedbackGain,
}

#[derive(Debug, Clone)]
pub struct AdpPiOutcome {
    pub gain: FeedbackGain,
    /// Value estimate of the last evaluated gain.
    pub value: ValueMatrix,
    pub iterations: usize,
    pub history: Vec<AdpIterate>,
    /// Plateau level of `‖ΔP‖_F`, when the sequence stalled before `eps`.
    pub floor: Option<f64>,
}

/// Policy iteration on a single batch, starting from `k0`.
pub fn adp_pi(
    data: &AdpData,
    k0: &FeedbackGain,
    q: &SymMat,
    r: &SymMat,
    settings: &AdpSettings,
) -> Result<AdpPiOutcome> {
    settings.validate()?;
    let mut k = k0.clone();
    let mut history: Vec<AdpIterate> = Vec::new();
    let mut changes: Vec<f64> = Vec::new();
    for i in 0..settings.max_inner_iters {
        let solution = adp_step(data, &k, q, r, settings.rank_tol)?;
        let improved = adp_policy_update(&solution, r)?;
        let change = history
            .last()
            .map(|prev| fro_norm(&(solution.p.as_mat() - prev.solution.p.as_mat())));
        let value = solution.p.clone();
        history.push(AdpIterate {
            evaluated: k,
            solution,
            improved: improved.clone(),
        });
        k = improved;
        let Some(change) = change else { continue };
        changes.push(change);

        let floor = plateau(&changes, settings.plateau_window);
        let eps = floor.map_or(settings.eps, |f| settings.eps.max(3.0 * f));
        if change < eps {
            return Ok(AdpPiOutcome {
                gain: k,
                value,
                iterations: i + 1,
                history,
                floor,
            });
        }
        if let Some(floor) = floor {
            return Err(Error::NonConvergence { floor, eps });
        }
    }
    Err(Error::MaxItersExceeded {
        iterations: settings.max_inner_iters,
        last_change: changes.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Smallest recent change if the last `window` changes made no real
/// progress over the `window` before them.
fn plateau(changes: &[f64], window: usize) -> Option<f64> {
    if changes.len() < 2 * window {
        return None;
    }
    let (older, recent) = changes[changes.len() - 2 * window..].split_at(window);
    let min = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
    let recent_min = min(recent);
    (recent_min > 0.5 * min(older)).then_some(recent_min)
}
