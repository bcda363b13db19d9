//! Fixtures and randomized property checks shared by the integration tests.
//! Every check takes a case seed and returns `Err` with a description when
//! the property fails.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stab_synth::exact::{
    check_decrement, initial_alpha, pi_solve, riccati_residual, riccati_tol, termination_bound,
};
use stab_synth::matops::{
    eig_sym, gamma_matrix, kron, lambda_max, lambda_min, mcal, trace, unvech, vec, vech, Mat, SymMat, Vector,
};
use stab_synth::sysmodel::{cost, solve_dual_lyapunov, solve_lyapunov};
use stab_synth::{
    is_ms_stabilizer, stabilize, CostSpec, FeedbackGain, PiSettings, StabilizeOptions, StochasticLinearSystem,
};

pub type Check = Result<(), String>;

pub fn demo_system() -> StochasticLinearSystem {
    StochasticLinearSystem::from_rows(2, 1, &[3., 6., 11., -7.], &[7., 2.], &[0.6, 0.1, -0.3, 0.7], &[0.2, 0.1])
        .unwrap()
}

pub fn demo_spec() -> CostSpec {
    CostSpec::new(
        SymMat::from_diagonal(&[7., 3.]),
        SymMat::from_diagonal(&[2.]),
        SymMat::identity(2),
        10.0,
    )
    .unwrap()
}

pub fn remark_system() -> StochasticLinearSystem {
    StochasticLinearSystem::from_rows(2, 1, &[4., 7., 5., -13.], &[6., 1.], &[5., -1., -3., 4.], &[2., 8.]).unwrap()
}

pub fn remark_spec() -> CostSpec {
    CostSpec::new(
        SymMat::from_diagonal(&[6., 3.]),
        SymMat::from_diagonal(&[2.]),
        SymMat::identity(2),
        10.0,
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymMat {
    let g = gaussian(rng, n, n);
    SymMat::symmetrize(&(&g + g.transpose()))
}

/// `GᵀG + shift·I`.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> SymMat {
    let g = gaussian(rng, n, n);
    SymMat::symmetrize(&(g.transpose() * g + Mat::identity(n, n) * shift))
}

/// A random plant with a known mean-square stabilizer `K_s`: the closed loop
/// under `K_s` has drift `S − (GGᵀ + c·I)` with `S` skew and a diffusion
/// whose squared norm stays below `c`, so `P = I` certifies it.
pub struct RandomPlant {
    pub sys: StochasticLinearSystem,
    pub spec: CostSpec,
    pub stabilizer: FeedbackGain,
}

pub fn random_plant(seed: u64) -> RandomPlant {
    let mut r = rng(seed);
    let n = r.random_range(1..=4);
    let m = r.random_range(1..=2);
    let c_margin = r.random_range(0.2..2.0);
    let g = gaussian(&mut r, n, n) * 0.5;
    let s = gaussian(&mut r, n, n);
    let a_s = (&s - s.transpose()) * 0.5 - &g * g.transpose() - Mat::identity(n, n) * c_margin;
    let mut c_s = gaussian(&mut r, n, n);
    let norm = c_s.norm().max(1e-12);
    c_s *= r.random_range(0.0..0.95) * c_margin.sqrt() / norm;
    let b = gaussian(&mut r, n, m);
    let d = gaussian(&mut r, n, m) * 0.5;
    let k_s = gaussian(&mut r, m, n);
    let a = &a_s - &b * &k_s;
    let c = &c_s - &d * &k_s;
    let sys = StochasticLinearSystem::new(a, b, c, d).unwrap();
    let spec = CostSpec::new(
        random_pd(&mut r, n, 0.5),
        random_pd(&mut r, m, 0.5),
        random_pd(&mut r, n, 0.5),
        r.random_range(1.5..20.0),
    )
    .unwrap();
    RandomPlant {
        sys,
        spec,
        stabilizer: FeedbackGain::new(k_s).unwrap(),
    }
}

fn ok_or(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// The Δα step keeps the current gain a stabilizer, and its cost grows by
/// at most ζ. Checked at every step of a full schedule.
pub fn check_decrement_safety(seed: u64) -> Check {
    let p = random_plant(seed);
    let mut rr = rng(seed ^ 0xa1);
    let alpha0 = initial_alpha(&p.sys, rr.random_range(0.1..3.0)).map_err(|e| e.to_string())?;
    let res = stabilize(
        &p.sys,
        &p.spec,
        &PiSettings::default(),
        alpha0,
        StabilizeOptions {
            polish: false,
            check_invariants: false,
        },
    )
    .map_err(|e| format!("stabilize: {e}"))?;
    for r in &res.schedule.records {
        let next = r.alpha - r.delta_alpha;
        check_decrement(&p.sys, &p.spec, &r.gain, r.alpha, next, r.cost)
            .map_err(|e| format!("step {} (α {} → {next}): {e}", r.iter, r.alpha))?;
        // Independently of check_decrement.
        let shifted = p.sys.shift(next);
        ok_or(is_ms_stabilizer(&shifted, &r.gain), || format!("gain of step {} lost stability", r.iter))?;
        let j_next = cost(&shifted, &r.gain, &p.spec).map_err(|e| e.to_string())?;
        ok_or(j_next <= p.spec.zeta() * r.cost * (1.0 + 1e-8), || {
            format!("step {}: cost {} → {j_next} exceeds ζ = {}", r.iter, r.cost, p.spec.zeta())
        })?;
    }
    Ok(())
}

/// A stabilizer at α stays one at every larger α, with a cost that does not
/// increase.
pub fn check_nesting(seed: u64) -> Check {
    let p = random_plant(seed);
    let mut r = rng(seed ^ 0xb2);
    let (m, n) = (p.sys.m(), p.sys.n());
    let k = if r.random_bool(0.5) {
        FeedbackGain::new(gaussian(&mut r, m, n)).unwrap()
    } else {
        p.stabilizer.clone()
    };
    // Above the closed-loop Lyapunov bound every gain stabilizes.
    let (a_cl, c_cl) = p.sys.closed_loop(&k).unwrap();
    let open = StochasticLinearSystem::new(a_cl, Mat::zeros(n, m), c_cl, Mat::zeros(n, m)).unwrap();
    let top = initial_alpha(&open, 0.5).unwrap().max(1.0);
    let mut grid: Vec<f64> = (0..12).map(|_| r.random_range(0.0..top)).collect();
    grid.push(0.0);
    grid.push(top);
    grid.sort_by(f64::total_cmp);
    let mut seen: Option<(f64, f64)> = None;
    for &alpha in &grid {
        let shifted = p.sys.shift(alpha);
        let stable = is_ms_stabilizer(&shifted, &k);
        match seen {
            Some((a_prev, j_prev)) => {
                ok_or(stable, || format!("stabilizer at α = {a_prev} but not at α = {alpha}"))?;
                let j = cost(&shifted, &k, &p.spec).map_err(|e| e.to_string())?;
                ok_or(j <= j_prev * (1.0 + 1e-9), || {
                    format!("cost rose from {j_prev} (α = {a_prev}) to {j} (α = {alpha})")
                })?;
                seen = Some((alpha, j));
            }
            None if stable => {
                let j = cost(&shifted, &k, &p.spec).map_err(|e| e.to_string())?;
                seen = Some((alpha, j));
            }
            None => {}
        }
    }
    ok_or(seen.is_some(), || format!("not a stabilizer even at α = {top}"))
}

/// Outer iterations never exceed `⌈α₀/α̃⌉`.
pub fn check_termination_bound(seed: u64) -> Check {
    let p = random_plant(seed);
    let mut r = rng(seed ^ 0xc3);
    let alpha0 = initial_alpha(&p.sys, r.random_range(0.1..5.0)).unwrap();
    let settings = PiSettings::default();
    let res = stabilize(&p.sys, &p.spec, &settings, alpha0, StabilizeOptions::default())
        .map_err(|e| format!("stabilize: {e}"))?;
    let bound = termination_bound(&p.sys, &p.spec, &settings, alpha0, &res.gain).map_err(|e| e.to_string())?;
    ok_or(res.schedule.len() <= bound.max_iterations, || {
        format!("{} iterations, bound {}", res.schedule.len(), bound.max_iterations)
    })
}

/// `λ₁(M₁)Tr(M₂) ≤ Tr(M₁M₂) ≤ λₙ(M₁)Tr(M₂)` for PSD pairs, and eigenvalue
/// sub/superadditivity for symmetric pairs.
pub fn check_eigen_inequalities(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(1..=6);
    let m1 = random_pd(&mut r, n, 0.0);
    let m2 = random_pd(&mut r, n, 0.0);
    let t = trace(&(m1.as_mat() * m2.as_mat()));
    let tr2 = trace(m2.as_mat());
    let (lo, hi) = (lambda_min(&m1).unwrap(), lambda_max(&m1).unwrap());
    let slack = 1e-10 * (1.0 + hi.abs() * tr2);
    ok_or(lo * tr2 <= t + slack && t <= hi * tr2 + slack, || {
        format!("trace bounds: {lo}·{tr2} ≤ {t} ≤ {hi}·{tr2} fails")
    })?;

    let s1 = random_sym(&mut r, n);
    let s2 = random_sym(&mut r, n);
    let sum = SymMat::symmetrize(&(s1.as_mat() + s2.as_mat()));
    let e = |s: &SymMat| eig_sym(s).unwrap();
    let (e1, e2, es) = (e(&s1), e(&s2), e(&sum));
    let slack = 1e-10 * (1.0 + s1.as_mat().norm() + s2.as_mat().norm());
    ok_or(es.max() <= e1.max() + e2.max() + slack, || "λₙ subadditivity fails".into())?;
    ok_or(es.min() >= e1.min() + e2.min() - slack, || "λ₁ superadditivity fails".into())
}

/// `Γ·vech(V) = vec(V)`, `unvech ∘ vech = id`, `mcal(ν)·vech(V) = νᵀVν`,
/// and the Kronecker mixed product.
pub fn check_vectorization_identities(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(1..=6);
    let v = random_sym(&mut r, n);
    let h = vech(&v);
    let roundtrip = gamma_matrix(n) * &h - vec(v.as_mat());
    let scale = 1.0 + v.as_mat().norm();
    ok_or(roundtrip.amax() <= 1e-14 * scale, || format!("Γ·vech − vec = {:e}", roundtrip.amax()))?;
    let back = unvech(&h, n).map_err(|e| e.to_string())?;
    ok_or((back.as_mat() - v.as_mat()).amax() <= 1e-14 * scale, || "unvech(vech(V)) ≠ V".into())?;

    let nu: Vector = Vector::from_fn(n, |_, _| r.sample(StandardNormal));
    let quad = (nu.transpose() * v.as_mat() * &nu)[(0, 0)];
    let feat = mcal(nu.as_slice()).dot(&h);
    ok_or((quad - feat).abs() <= 1e-12 * (1.0 + quad.abs()) * scale, || {
        format!("νᵀVν = {quad}, mcal(ν)·vech(V) = {feat}")
    })?;

    let (p, q, s) = (r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=3));
    let a = gaussian(&mut r, p, q);
    let c = gaussian(&mut r, q, s);
    let b = gaussian(&mut r, s, p);
    let d = gaussian(&mut r, p, q);
    let lhs = kron(&a, &b) * kron(&c, &d);
    let rhs = kron(&(&a * &c), &(&b * &d));
    ok_or((lhs - &rhs).amax() <= 1e-12 * (1.0 + rhs.amax()), || "Kronecker mixed product fails".into())
}

/// `Tr(PV) = Tr(YΛ)` for the primal/dual Lyapunov pair of a stabilizer.
pub fn check_dual_trace(seed: u64) -> Check {
    let p = random_plant(seed);
    let mut r = rng(seed ^ 0xd4);
    let n = p.sys.n();
    let lambda = random_pd(&mut r, n, 0.1);
    let v = random_pd(&mut r, n, 0.1);
    let pm = solve_lyapunov(&p.sys, &p.stabilizer, &lambda).map_err(|e| e.to_string())?;
    let y = solve_dual_lyapunov(&p.sys, &p.stabilizer, &v).map_err(|e| e.to_string())?;
    let lhs = trace(&(pm.as_mat() * v.as_mat()));
    let rhs = trace(&(y.as_mat() * lambda.as_mat()));
    ok_or((lhs - rhs).abs() <= 1e-8 * (1.0 + lhs.abs()), || format!("Tr(PV) = {lhs}, Tr(YΛ) = {rhs}"))
}

/// Riccati residual at every policy-iteration convergence along a schedule
/// and at α = 0.
pub fn check_riccati_residual(seed: u64) -> Check {
    let p = random_plant(seed);
    let settings = PiSettings::default();
    let tol = riccati_tol(p.spec.q());
    let alpha0 = initial_alpha(&p.sys, 1.0).unwrap();
    let res = stabilize(
        &p.sys,
        &p.spec,
        &settings,
        alpha0,
        StabilizeOptions {
            polish: true,
            check_invariants: false,
        },
    )
    .map_err(|e| format!("stabilize: {e}"))?;
    let mut k = FeedbackGain::zeros(p.sys.m(), p.sys.n());
    for rec in &res.schedule.records {
        let shifted = p.sys.shift(rec.alpha);
        let pi = pi_solve(&shifted, &k, &p.spec, &settings).map_err(|e| e.to_string())?;
        let resid = riccati_residual(&shifted, &pi.value, p.spec.q(), p.spec.r()).map_err(|e| e.to_string())?;
        ok_or(resid <= tol, || format!("residual {resid:e} > {tol:e} at α = {}", rec.alpha))?;
        k = pi.gain;
    }
    let polished = res.polished.expect("polish requested");
    let resid = riccati_residual(&p.sys, &polished.value, p.spec.q(), p.spec.r()).map_err(|e| e.to_string())?;
    ok_or(resid <= tol, || format!("residual {resid:e} > {tol:e} at α = 0"))
}

/// Runs `check` on `cases` seeds and reports the first failures.
pub fn run_cases(cases: u64, base: u64, check: fn(u64) -> Check) -> Result<u64, Vec<String>> {
    let failures: Vec<String> = (0..cases)
        .filter_map(|i| {
            let seed = base.wrapping_add(i);
            check(seed).err().map(|e| format!("seed {seed}: {e}"))
        })
        .take(5)
        .collect();
    if failures.is_empty() {
        Ok(cases)
    } else {
        Err(failures)
    }
}
