//! Monte Carlo row moments against exact expectations at the same
//! quadrature nodes, for growing path counts. The relative error should fall
//! like 1/√N.
//!
//! `cargo run --release --example estimator_convergence -- [max_exponent] [seed]`

use stab_synth::sde::{collect_moments, moment_ode_oracle, InitialState, NoiseDesign, OracleMode, SimConfig};
use stab_synth::{FeedbackGain, StochasticLinearSystem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let max_exp: u32 = args.next().map_or(Ok(4), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;
    let sys = StochasticLinearSystem::from_rows(
        2,
        1,
        &[3., 6., 11., -7.],
        &[7., 2.],
        &[0.6, 0.1, -0.3, 0.7],
        &[0.2, 0.1],
    )?
    .shift(9.0);
    let k0 = FeedbackGain::zeros(1, 2);
    let init = InitialState::standard_normal(2);
    let base = SimConfig::default_for(2, 1);
    let noises = NoiseDesign::default().draw(1, base.l);

    let exact: Vec<f64> = moment_ode_oracle(&sys, &k0, &noises, &init, &base, OracleMode::Nodes)?
        .iter()
        .flat_map(|r| r.flatten())
        .collect();
    let norm = exact.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut points = Vec::new();
    for e in 2..=max_exp {
        let cfg = SimConfig {
            n_traj: 10usize.pow(e),
            master_seed: seed,
            ..base.clone()
        };
        let mc = collect_moments(&sys, &k0, &noises, &init, &cfg)?;
        let err = mc
            .moments
            .iter()
            .flat_map(|r| r.flatten())
            .zip(&exact)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            / norm;
        println!("N = {:>6}: relative error {err:.3e}", cfg.n_traj);
        points.push(((cfg.n_traj as f64).ln(), err.ln()));
    }
    if points.len() >= 2 {
        let n = points.len() as f64;
        let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
        let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        println!("log-log slope {:.3}", sxy / sxx);
    }
    Ok(())
}
