use super::estimators::RowMoments;
use super::noise::ExplorationNoise;
use super::sim::{InitialState, Quadrature, SimConfig};
use crate::error::{Error, Result};
use crate::matops::{spectral_norm, Mat, Vector};
use crate::sysmodel::{FeedbackGain, StochasticLinearSystem};

/// What the oracle integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// True time integrals of the moments.
    Exact,
    /// Exact moments at the quadrature nodes of `cfg.quadrature`, weighted
    /// like the Monte Carlo estimator; isolates the sampling error.
    Nodes,
}

struct Dynamics<'a> {
    a_cl: Mat,
    c_cl: Mat,
    b: &'a Mat,
    d: &'a Mat,
    k: &'a Mat,
    noise: &'a ExplorationNoise,
}

#[derive(Clone)]
struct Moments {
    mu: Vector,
    s: Mat,
}

#[derive(Clone)]
struct Integrals {
    xx: Mat,
    ux: Mat,
    uu: Mat,
}

impl<'a> Dynamics<'a> {
    fn derivative(&self, t: f64, y: &Moments) -> Moments {
        let e = self.noise.eval(t);
        let be = self.b * &e;
        let de = self.d * &e;
        let cmu = &self.c_cl * &y.mu;
        let mu = &self.a_cl * &y.mu + &be;
        let a_s = &self.a_cl * &y.s;
        let cross = &be * y.mu.transpose();
        let ito_cross = &cmu * de.transpose();
        let s = &a_s
            + a_s.transpose()
            + &cross
            + cross.transpose()
            + &self.c_cl * &y.s * self.c_cl.transpose()
            + &ito_cross
            + ito_cross.transpose()
            + &de * de.transpose();
        Moments { mu, s }
    }

    fn integrands(&self, t: f64, y: &Moments) -> Integrals {
        let e = self.noise.eval(t);
        let ks = self.k * &y.s;
        let e_mu = &e * y.mu.transpose();
        let k_mu_e = self.k * &y.mu * e.transpose();
        Integrals {
            xx: y.s.clone(),
            ux: &ks + &e_mu,
            uu: &ks * self.k.transpose() + &k_mu_e + k_mu_e.transpose() + &e * e.transpose(),
        }
    }

    fn rk4(&self, t: f64, h: f64, y: &Moments) -> Moments {
        let axpy = |y: &Moments, k: &Moments, c: f64| Moments {
            mu: &y.mu + &k.mu * c,
            s: &y.s + &k.s * c,
        };
        let k1 = self.derivative(t, y);
        let k2 = self.derivative(t + 0.5 * h, &axpy(y, &k1, 0.5 * h));
        let k3 = self.derivative(t + 0.5 * h, &axpy(y, &k2, 0.5 * h));
        let k4 = self.derivative(t + h, &axpy(y, &k3, h));
        Moments {
            mu: &y.mu + (k1.mu + k2.mu * 2.0 + k3.mu * 2.0 + k4.mu) * (h / 6.0),
            s: &y.s + (k1.s + k2.s * 2.0 + k3.s * 2.0 + k4.s) * (h / 6.0),
        }
    }

    /// RK4 on the moments together with their running integrals.
    fn rk4_augmented(&self, t: f64, h: f64, y: &Moments, acc: &mut Integrals) -> Moments {
        let axpy = |y: &Moments, k: &Moments, c: f64| Moments {
            mu: &y.mu + &k.mu * c,
            s: &y.s + &k.s * c,
        };
        let k1 = self.derivative(t, y);
        let y2 = axpy(y, &k1, 0.5 * h);
        let k2 = self.derivative(t + 0.5 * h, &y2);
        let y3 = axpy(y, &k2, 0.5 * h);
        let k3 = self.derivative(t + 0.5 * h, &y3);
        let y4 = axpy(y, &k3, h);
        let k4 = self.derivative(t + h, &y4);
        let g1 = self.integrands(t, y);
        let g2 = self.integrands(t + 0.5 * h, &y2);
        let g3 = self.integrands(t + 0.5 * h, &y3);
        let g4 = self.integrands(t + h, &y4);
        let w = h / 6.0;
        acc.xx += (g1.xx + g2.xx * 2.0 + g3.xx * 2.0 + g4.xx) * w;
        acc.ux += (g1.ux + g2.ux * 2.0 + g3.ux * 2.0 + g4.ux) * w;
        acc.uu += (g1.uu + g2.uu * 2.0 + g3.uu * 2.0 + g4.uu) * w;
        Moments {
            mu: &y.mu + (k1.mu + k2.mu * 2.0 + k3.mu * 2.0 + k4.mu) * w,
            s: &y.s + (k1.s + k2.s * 2.0 + k3.s * 2.0 + k4.s) * w,
        }
    }

    /// Largest RK4 step that keeps the scheme well inside its accuracy
    /// region for both the moment dynamics and the forcing.
    fn max_step(&self) -> f64 {
        let rate = 2.0 * spectral_norm(&self.a_cl) + spectral_norm(&self.c_cl).powi(2);
        let freq = self
            .noise
            .channels()
            .iter()
            .flat_map(|c| c.frequencies.iter())
            .fold(0.0f64, |a, f| a.max(f.abs()));
        (0.01 / rate.max(1e-12)).min(0.05 / freq.max(1e-12))
    }
}

/// Noise-free counterpart of the Monte Carlo row moments, from the closed
/// ODEs for `E[X]` and `E[XXᵀ]` under `u = k0·X + e_h(t)`.
pub fn moment_ode_oracle(
    sys_alpha: &StochasticLinearSystem,
    k0: &FeedbackGain,
    noises: &[ExplorationNoise],
    init: &InitialState,
    cfg: &SimConfig,
    mode: OracleMode,
) -> Result<Vec<RowMoments>> {
    let (n, m) = (sys_alpha.n(), sys_alpha.m());
    cfg.validate(n, m)?;
    init.validate(n)?;
    if noises.len() != cfg.l || noises.iter().any(|e| e.m() != m) {
        return Err(Error::Dimension(format!(
            "need {} exploration signals with {m} channels each",
            cfg.l
        )));
    }
    let (a_cl, c_cl) = sys_alpha.closed_loop(k0)?;
    noises
        .iter()
        .enumerate()
        .map(|(h, noise)| {
            let dynamics = Dynamics {
                a_cl: a_cl.clone(),
                c_cl: c_cl.clone(),
                b: sys_alpha.b(),
                d: sys_alpha.d(),
                k: k0.as_mat(),
                noise,
            };
            let (mu, s) = init.moments(h);
            let y0 = Moments { mu, s };
            match mode {
                OracleMode::Exact => exact_row(&dynamics, y0, cfg, n, m),
                OracleMode::Nodes => node_row(&dynamics, y0, cfg, n, m),
            }
        })
        .collect()
}

fn steps_for(span: f64, max_step: f64) -> usize {
    ((span / max_step).ceil() as usize).max(1)
}

fn exact_row(dy: &Dynamics<'_>, y0: Moments, cfg: &SimConfig, n: usize, m: usize) -> Result<RowMoments> {
    let steps = steps_for(cfg.t0, dy.max_step());
    let h = cfg.t0 / steps as f64;
    let mut acc = Integrals {
        xx: Mat::zeros(n, n),
        ux: Mat::zeros(m, n),
        uu: Mat::zeros(m, m),
    };
    let mut y = y0.clone();
    for i in 0..steps {
        y = dy.rk4_augmented(i as f64 * h, h, &y, &mut acc);
    }
    Ok(RowMoments {
        start: y0.s,
        end: y.s,
        int_xx: acc.xx,
        int_ux: acc.ux,
        int_uu: acc.uu,
    })
}

fn node_row(dy: &Dynamics<'_>, y0: Moments, cfg: &SimConfig, n: usize, m: usize) -> Result<RowMoments> {
    let (nodes, spacing) = match cfg.quadrature {
        Quadrature::Substep => (cfg.total_steps(), cfg.dt()),
        Quadrature::LeftEndpoint | Quadrature::Trapezoid => (cfg.n_grid, cfg.grid_step()),
    };
    let inner = steps_for(spacing, dy.max_step());
    let h = spacing / inner as f64;
    let mut row = RowMoments::zeros(n, m);
    row.start = y0.s.clone();
    let mut y = y0;
    for q in 0..=nodes {
        let t = q as f64 * spacing;
        let w = match cfg.quadrature {
            Quadrature::Substep | Quadrature::LeftEndpoint if q == nodes => 0.0,
            Quadrature::Trapezoid if q == 0 || q == nodes => 0.5 * spacing,
            _ => spacing,
        };
        if w != 0.0 {
            let g = dy.integrands(t, &y);
            row.int_xx += g.xx * w;
            row.int_ux += g.ux * w;
            row.int_uu += g.uu * w;
        }
        if q == nodes {
            break;
        }
        for i in 0..inner {
            y = dy.rk4(t + i as f64 * h, h, &y);
        }
    }
    row.end = y.s;
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::batch::collect_moments;
    use crate::sde::noise::{NoiseDesign, NoiseSpec};

    fn cfg(l: usize, quadrature: Quadrature) -> SimConfig {
        SimConfig {
            t0: 1.0,
            n_grid: 20,
            substeps: 10,
            n_traj: 1,
            l,
            master_seed: 0,
            quadrature,
        }
    }

    #[test]
    fn scalar_geometric_moment_grows_exponentially() {
        let sys = StochasticLinearSystem::from_rows(1, 1, &[0.0], &[0.0], &[1.0], &[0.0]).unwrap();
        let c = cfg(3, Quadrature::Substep);
        let noises = vec![ExplorationNoise::silent(1); 3];
        let init = InitialState::Fixed(vec![Vector::from_vec(vec![2.0])]);
        let rows = moment_ode_oracle(&sys, &FeedbackGain::zeros(1, 1), &noises, &init, &c, OracleMode::Exact).unwrap();
        let e = 1f64.exp();
        assert!((rows[0].end[(0, 0)] - 4.0 * e).abs() < 1e-9);
        assert!((rows[0].int_xx[(0, 0)] - 4.0 * (e - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn deterministic_decay_has_closed_form_integrals() {
        // x' = -x + u, u = e(t) = sin(t): check against the explicit solution
        let sys = StochasticLinearSystem::from_rows(1, 1, &[-1.0], &[1.0], &[0.0], &[0.0]).unwrap();
        let c = cfg(3, Quadrature::Substep);
        let sine = ExplorationNoise::broadcast(NoiseSpec::new(vec![1.0], vec![1.0], vec![0.0]).unwrap(), 1).unwrap();
        let noises = vec![sine; 3];
        let init = InitialState::Fixed(vec![Vector::from_vec(vec![1.0])]);
        let rows = moment_ode_oracle(&sys, &FeedbackGain::zeros(1, 1), &noises, &init, &c, OracleMode::Exact).unwrap();
        let x = |t: f64| 1.5 * (-t).exp() + 0.5 * (t.sin() - t.cos());
        let n = 200_000;
        let h = 1.0 / n as f64;
        let (mut ixx, mut iux) = (0.0, 0.0);
        for i in 0..n {
            let t = (i as f64 + 0.5) * h;
            ixx += x(t).powi(2) * h;
            iux += t.sin() * x(t) * h;
        }
        assert!((rows[0].end[(0, 0)] - x(1.0).powi(2)).abs() < 1e-9);
        assert!((rows[0].int_xx[(0, 0)] - ixx).abs() < 1e-8);
        assert!((rows[0].int_ux[(0, 0)] - iux).abs() < 1e-8);
    }

    #[test]
    fn node_mode_approaches_exact_as_nodes_refine() {
        let sys = StochasticLinearSystem::from_rows(
            2,
            1,
            &[3.0, 6.0, 11.0, -7.0],
            &[7.0, 2.0],
            &[0.6, 0.1, -0.3, 0.7],
            &[0.2, 0.1],
        )
        .unwrap()
        .shift(9.0);
        let k0 = FeedbackGain::zeros(1, 2);
        let c = SimConfig {
            l: 6,
            ..cfg(6, Quadrature::LeftEndpoint)
        };
        let noises = NoiseDesign::default().draw(1, 6);
        let init = InitialState::standard_normal(2);
        let exact = moment_ode_oracle(&sys, &k0, &noises, &init, &c, OracleMode::Exact).unwrap();
        let coarse = moment_ode_oracle(&sys, &k0, &noises, &init, &c, OracleMode::Nodes).unwrap();
        let fine_cfg = SimConfig {
            quadrature: Quadrature::Substep,
            ..c.clone()
        };
        let fine = moment_ode_oracle(&sys, &k0, &noises, &init, &fine_cfg, OracleMode::Nodes).unwrap();
        let err = |rows: &[RowMoments]| rows.iter().zip(&exact).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max);
        assert!(err(&fine) < err(&coarse) / 5.0, "{} vs {}", err(&fine), err(&coarse));
        assert!((exact[0].end.clone() - fine[0].end.clone()).amax() < 1e-9);
    }

    #[test]
    fn monte_carlo_agrees_with_oracle_nodes() {
        let sys = StochasticLinearSystem::from_rows(1, 1, &[-1.0], &[1.0], &[0.3], &[0.2]).unwrap();
        let k0 = FeedbackGain::from_rows(1, 1, &[-0.5]).unwrap();
        let c = SimConfig {
            t0: 0.5,
            n_grid: 10,
            substeps: 4,
            n_traj: 4000,
            l: 3,
            master_seed: 5,
            quadrature: Quadrature::Substep,
        };
        let noises = NoiseDesign::default().draw(1, 3);
        let init = InitialState::standard_normal(1);
        let mc = collect_moments(&sys, &k0, &noises, &init, &c).unwrap();
        let oracle = moment_ode_oracle(&sys, &k0, &noises, &init, &c, OracleMode::Nodes).unwrap();
        for (a, b) in mc.moments.iter().zip(&oracle) {
            // second moments of O(1) quantities: a few standard errors at 4000 paths
            assert!(a.max_abs_diff(b) < 0.15, "{}", a.max_abs_diff(b));
        }
    }
}
