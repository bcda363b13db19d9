//! Model-free stabilization of the 2×2 demonstration plant from simulated
//! trajectories only (10⁴ paths per sub-batch, 100 grid points, t₀ = 1).
//!
//! `cargo run --release --example model_free_monte_carlo -- [alpha0] [seed]`

use std::time::Instant;

use stab_synth::adp::{run_model_free, AdpSettings, SimulationCollector};
use stab_synth::sde::{InitialState, NoiseDesign, SimConfig};
use stab_synth::{is_ms_stabilizer, CostSpec, FeedbackGain, StochasticLinearSystem, SymMat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let alpha0: f64 = args.next().map_or(Ok(9.0), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(2024), |s| s.parse())?;

    let sys = StochasticLinearSystem::from_rows(
        2,
        1,
        &[3., 6., 11., -7.],
        &[7., 2.],
        &[0.6, 0.1, -0.3, 0.7],
        &[0.2, 0.1],
    )?;
    let spec = CostSpec::new(
        SymMat::from_diagonal(&[7., 3.]),
        SymMat::from_diagonal(&[2.]),
        SymMat::identity(2),
        10.0,
    )?;
    let cfg = SimConfig {
        master_seed: seed,
        ..SimConfig::default_for(2, 1)
    };
    let noises = NoiseDesign {
        seed,
        ..NoiseDesign::default()
    }
    .draw(1, cfg.l);
    let mut collector = SimulationCollector::new(sys.clone(), InitialState::standard_normal(2), noises, cfg)?;

    let start = Instant::now();
    let run = run_model_free(
        &mut collector,
        &FeedbackGain::zeros(1, 2),
        spec.q(),
        spec.r(),
        spec.zeta(),
        alpha0,
        &AdpSettings::default(),
    )?;
    println!("iter  alpha      cost       delta      K");
    for r in &run.schedule.records {
        println!(
            "{:>4}  {:<9.4}  {:<9.5}  {:<9.5}  {:?}",
            r.iter,
            r.alpha,
            r.cost,
            r.delta_alpha,
            r.gain.row_major()
        );
    }
    println!(
        "{} outer iterations in {:.1?}; final K = {:?}; stabilizes the plant: {}",
        run.schedule.len(),
        start.elapsed(),
        run.gain.row_major(),
        is_ms_stabilizer(&sys, &run.gain)
    );
    Ok(())
}
