//! Model-based discount method.
//!
//! Start from a discount α₀ large enough that `K = 0` stabilizes the
//! shifted plant `[A − α₀I, C; B, D]`. At each outer step, solve the
//! discounted problem by policy iteration (warm-started at the previous
//! gain), then lower α by
//!
//! ```text
//! Δα = λ₁(Σ₀) λ₁(Q) (ζ − 1) / (2 J_α(K) ζ)
//! ```
//!
//! which keeps the current gain stabilizing at `α − Δα` and inflates its cost
//! by at most ζ. The loop stops once α ≤ 0; the last gain then stabilizes the
//! original plant.

use crate::error::{Error, Result};
use crate::matops::{fro_norm, lambda_max, lambda_min, spectral_norm, Mat, SymMat};
use crate::sysmodel::{
    cost_with_value, is_ms_stabilizer, solve_lyapunov, CostSpec, FeedbackGain,
    StochasticLinearSystem, ValueMatrix,
};

/// Policy-iteration stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiSettings {
    /// Stop once `‖P⁽ⁱ⁺¹⁾ − P⁽ⁱ⁾‖_F < eps`.
    pub eps: f64,
    pub max_inner_iters: usize,
    /// Safety cap on the discount schedule length.
    pub max_outer_iters: usize,
}

impl Default for PiSettings {
    fn default() -> Self {
        Self {
            eps: 1e-8,
            max_inner_iters: 200,
            max_outer_iters: 10_000,
        }
    }
}

impl PiSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.max_inner_iters == 0 || self.max_outer_iters == 0 {
            return Err(Error::InvalidParameter("iteration caps must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Riccati residual tolerance `1e-7·(1+‖Q‖_F)`.
pub fn riccati_tol(q: &SymMat) -> f64 {
    1e-7 * (1.0 + fro_norm(q))
}

/// One outer step of the discount schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountRecord {
    pub iter: usize,
    pub alpha: f64,
    /// `J_α(K)` of the gain found at this α.
    pub cost: f64,
    pub delta_alpha: f64,
    pub gain: FeedbackGain,
    pub inner_iters: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiscountSchedule {
    pub records: Vec<DiscountRecord>,
}

impl DiscountSchedule {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// α strictly decreasing, every Δα > 0, and the final step crosses 0.
    pub fn check_integrity(&self) -> bool {
        let decreasing = self.records.windows(2).all(|w| w[1].alpha < w[0].alpha);
        let positive = self.records.iter().all(|r| r.delta_alpha > 0.0);
        let crosses = self
            .records
            .last()
            .map_or(true, |r| r.alpha - r.delta_alpha <= 0.0);
        decreasing && positive && crosses
    }
}

#[derive(Debug, Clone)]
pub struct StabilizationResult {
    pub gain: FeedbackGain,
    pub schedule: DiscountSchedule,
    /// Value matrix of `gain` at the last discount visited.
    pub final_value: ValueMatrix,
    /// Riccati residual of the converged PI value at the last discount.
    pub riccati_residual: f64,
    /// The undiscounted optimum, when polishing was requested.
    pub polished: Option<PiOutcome>,
}

/// `½(λₙ(A+Aᵀ) + ‖C‖₂²)`; any α₀ above it makes `K = 0` stabilizing.
pub fn lyapunov_bound(sys: &StochasticLinearSystem) -> Result<f64> {
    let sym = SymMat::symmetrize(&(sys.a() + sys.a().transpose()));
    Ok(0.5 * (lambda_max(&sym)? + spectral_norm(sys.c()).powi(2)))
}

/// [`lyapunov_bound`] plus `margin`.
pub fn initial_alpha(sys: &StochasticLinearSystem, margin: f64) -> Result<f64> {
    if !(margin > 0.0) {
        return Err(Error::InvalidParameter(format!("margin must be > 0, got {margin}")));
    }
    Ok(lyapunov_bound(sys)? + margin)
}

pub(crate) fn inner_matrix_solve(inner: &Mat, rhs: &Mat) -> Result<Mat> {
    if let Some(chol) = inner.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let lu = inner.clone().lu();
    let diag = lu.u().diagonal();
    let max = diag.amax();
    let min = diag.iter().fold(f64::INFINITY, |a, x| a.min(x.abs()));
    if !(max > 0.0) || min < 1e-13 * max {
        return Err(Error::SingularInnerMatrix);
    }
    lu.solve(rhs).ok_or(Error::SingularInnerMatrix)
}

/// Policy improvement `K = −(R + DᵀPD)⁻¹(BᵀP + DᵀPC)`.
pub fn pi_improve(sys_alpha: &StochasticLinearSystem, p: &ValueMatrix, r: &SymMat) -> Result<FeedbackGain> {
    let pm = p.as_mat();
    let dt = sys_alpha.d().transpose();
    let inner = r.as_mat() + &dt * pm * sys_alpha.d();
    let rhs = -(sys_alpha.b().transpose() * pm + &dt * pm * sys_alpha.c());
    FeedbackGain::new(inner_matrix_solve(&inner, &rhs)?)
}

/// Residual norm of the algebraic Riccati equation
/// `AᵀP + PA + CᵀPC + Q − (PB + CᵀPD)(R + DᵀPD)⁻¹(BᵀP + DᵀPC) = 0`
/// for the (already shifted) system.
pub fn riccati_residual(
    sys_alpha: &StochasticLinearSystem,
    p: &SymMat,
    q: &SymMat,
    r: &SymMat,
) -> Result<f64> {
    let pm = p.as_mat();
    let (a, b, c, d) = (sys_alpha.a(), sys_alpha.b(), sys_alpha.c(), sys_alpha.d());
    let cross = b.transpose() * pm + d.transpose() * pm * c;
    let inner = r.as_mat() + d.transpose() * pm * d;
    let sol = inner_matrix_solve(&inner, &cross)?;
    let res = a.transpose() * pm + pm * a + c.transpose() * pm * c + q.as_mat()
        - cross.transpose() * sol;
    Ok(fro_norm(&res))
}

/// One policy-evaluation/improvement pair.
#[derive(Debug, Clone)]
pub struct PiStep {
    /// Gain that was evaluated.
    pub evaluated: FeedbackGain,
    /// Its value matrix.
    pub value: ValueMatrix,
    /// `Tr(P Σ₀)`: the cost of `evaluated`.
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct PiOutcome {
    pub gain: FeedbackGain,
    pub value: ValueMatrix,
    pub iterations: usize,
    pub history: Vec<PiStep>,
}

/// Policy iteration on the shifted system, starting from a stabilizing `k0`.
///
/// Returns the improved gain of the last evaluated value `P`, where
/// `‖P − P_prev‖_F < eps`, or where the change has stopped shrinking below
/// `ROUNDOFF_RTOL·‖P‖_F`.
pub const ROUNDOFF_RTOL: f64 = 1e-8;

pub fn pi_solve(
    sys_alpha: &StochasticLinearSystem,
    k0: &FeedbackGain,
    spec: &CostSpec,
    settings: &PiSettings,
) -> Result<PiOutcome> {
    spec.check_dims(sys_alpha)?;
    settings.validate()?;
    let mut k = k0.clone();
    let mut prev: Option<ValueMatrix> = None;
    let mut history = Vec::new();
    let mut last_change = f64::INFINITY;
    for i in 0..settings.max_inner_iters {
        let p = solve_lyapunov(sys_alpha, &k, &spec.stage_weight(&k)).map_err(|e| match e {
            Error::SingularGenerator | Error::NonPositiveSolution { .. } if i == 0 => Error::NotStabilizing,
            other => other,
        })?;
        let next = pi_improve(sys_alpha, &p, spec.r())?;
        history.push(PiStep {
            evaluated: k,
            cost: (p.as_mat() * spec.sigma0().as_mat()).trace(),
            value: p.clone(),
        });
        k = next;
        if let Some(prev) = &prev {
            let change = fro_norm(&(p.as_mat() - prev.as_mat()));
            // PI contracts; a change that stops shrinking while already tiny
            // relative to P is rounding noise from an ill-conditioned solve.
            let stalled = change >= last_change && change <= ROUNDOFF_RTOL * fro_norm(p.as_mat());
            last_change = change;
            if change < settings.eps || stalled {
                return Ok(PiOutcome {
                    gain: k,
                    value: p,
                    iterations: i + 1,
                    history,
                });
            }
        }
        prev = Some(p);
    }
    Err(Error::MaxItersExceeded {
        iterations: settings.max_inner_iters,
        last_change,
    })
}

/// `λ₁(Σ₀)·λ₁(Q)·(ζ−1) / (2·J·ζ)`.
pub fn delta_alpha(cost_value: f64, spec: &CostSpec) -> Result<f64> {
    delta_alpha_with(cost_value, spec.q(), spec.sigma0(), spec.zeta())
}

pub(crate) fn delta_alpha_with(cost_value: f64, q: &SymMat, sigma0: &SymMat, zeta: f64) -> Result<f64> {
    if !(cost_value > 0.0) || !cost_value.is_finite() {
        return Err(Error::NonPositiveCost(cost_value));
    }
    if !(zeta > 1.0) {
        return Err(Error::InvalidParameter(format!("ζ must be > 1, got {zeta}")));
    }
    Ok(lambda_min(sigma0)? * lambda_min(q)? * (zeta - 1.0) / (2.0 * cost_value * zeta))
}

#[derive(Debug, Clone, Copy)]
pub struct StabilizeOptions {
    /// Run one more policy iteration at α = 0 after the schedule ends.
    pub polish: bool,
    /// Check the decrement guarantees after every outer step and fail with
    /// [`Error::InvariantViolation`] if one breaks.
    pub check_invariants: bool,
}

impl Default for StabilizeOptions {
    fn default() -> Self {
        Self {
            polish: false,
            check_invariants: true,
        }
    }
}

/// The model-based discount method.
pub fn stabilize(
    sys: &StochasticLinearSystem,
    spec: &CostSpec,
    settings: &PiSettings,
    alpha0: f64,
    options: StabilizeOptions,
) -> Result<StabilizationResult> {
    spec.check_dims(sys)?;
    settings.validate()?;
    let mut k = FeedbackGain::zeros(sys.m(), sys.n());
    if !alpha0.is_finite() || !is_ms_stabilizer(&sys.shift(alpha0), &k) {
        return Err(Error::InvalidInitialAlpha { alpha0 });
    }

    let mut alpha = alpha0;
    let mut schedule = DiscountSchedule::default();
    let mut final_value = None;
    let mut riccati = 0.0;
    while alpha > 0.0 {
        if schedule.len() >= settings.max_outer_iters {
            return Err(Error::MaxOuterItersExceeded {
                iterations: schedule.len(),
                alpha,
            });
        }
        let shifted = sys.shift(alpha);
        let pi = pi_solve(&shifted, &k, spec, settings)?;
        riccati = riccati_residual(&shifted, &pi.value, spec.q(), spec.r())?;
        k = pi.gain;
        let (j, value) = cost_with_value(&shifted, &k, spec)?;
        let step = delta_alpha(j, spec)?;
        let next_alpha = alpha - step;

        if options.check_invariants {
            check_decrement(sys, spec, &k, alpha, next_alpha, j)?;
            if riccati > riccati_tol(spec.q()) {
                return Err(Error::InvariantViolation(format!(
                    "Riccati residual {riccati:e} above tolerance at α = {alpha}"
                )));
            }
        }

        schedule.records.push(DiscountRecord {
            iter: schedule.len(),
            alpha,
            cost: j,
            delta_alpha: step,
            gain: k.clone(),
            inner_iters: pi.iterations,
        });
        final_value = Some(value);
        alpha = next_alpha;
    }

    if !is_ms_stabilizer(sys, &k) {
        return Err(Error::VerificationFailed);
    }
    let final_value = match final_value {
        Some(v) => v,
        None => solve_lyapunov(sys, &k, &spec.stage_weight(&k))?,
    };
    let polished = if options.polish {
        Some(pi_solve(sys, &k, spec, settings)?)
    } else {
        None
    };
    Ok(StabilizationResult {
        gain: k,
        schedule,
        final_value,
        riccati_residual: riccati,
        polished,
    })
}

/// The decrement guarantees: `K` still stabilizes at the new discount and
/// its cost grows by at most ζ.
pub fn check_decrement(
    sys: &StochasticLinearSystem,
    spec: &CostSpec,
    k: &FeedbackGain,
    alpha: f64,
    next_alpha: f64,
    cost_at_alpha: f64,
) -> Result<()> {
    let shifted = sys.shift(next_alpha);
    if !is_ms_stabilizer(&shifted, k) {
        return Err(Error::InvariantViolation(format!(
            "gain stops stabilizing when α drops from {alpha} to {next_alpha}"
        )));
    }
    let (j_next, _) = cost_with_value(&shifted, k, spec)?;
    if j_next > spec.zeta() * cost_at_alpha * (1.0 + 1e-8) {
        return Err(Error::InvariantViolation(format!(
            "cost grew from {cost_at_alpha} to {j_next}, more than ζ = {}",
            spec.zeta()
        )));
    }
    Ok(())
}

/// Finite-termination bound `⌈α₀/α̃⌉` with `α̃` built from the undiscounted
/// optimal cost `J*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminationBound {
    pub optimal_cost: f64,
    pub alpha_tilde: f64,
    pub max_iterations: usize,
}

/// Computes [`TerminationBound`] post hoc, running policy iteration at α = 0
/// from a known stabilizer.
pub fn termination_bound(
    sys: &StochasticLinearSystem,
    spec: &CostSpec,
    settings: &PiSettings,
    alpha0: f64,
    stabilizer: &FeedbackGain,
) -> Result<TerminationBound> {
    let pi = pi_solve(sys, stabilizer, spec, settings)?;
    let (optimal_cost, _) = cost_with_value(sys, &pi.gain, spec)?;
    let alpha_tilde = delta_alpha(optimal_cost, spec)?;
    let max_iterations = (alpha0 / alpha_tilde).ceil().max(0.0) as usize;
    Ok(TerminationBound {
        optimal_cost,
        alpha_tilde,
        max_iterations,
    })
}
