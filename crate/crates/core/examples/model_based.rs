//! Model-based discount schedule on the 2×2 demonstration plant.
//!
//! `cargo run --release --example model_based`

use std::time::Instant;

use stab_synth::exact::termination_bound;
use stab_synth::{is_ms_stabilizer, stabilize, CostSpec, PiSettings, StabilizeOptions, StochasticLinearSystem, SymMat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
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
    let settings = PiSettings::default();

    let start = Instant::now();
    let res = stabilize(&sys, &spec, &settings, 9.0, StabilizeOptions::default())?;
    let took = start.elapsed();

    println!("iter  alpha     delta     cost      PI  K");
    for r in &res.schedule.records {
        println!(
            "{:>4}  {:<8.4}  {:<8.4}  {:<8.5}  {:>2}  {:?}",
            r.iter,
            r.alpha,
            r.delta_alpha,
            r.cost,
            r.inner_iters,
            r.gain.row_major()
        );
    }
    let bound = termination_bound(&sys, &spec, &settings, 9.0, &res.gain)?;
    println!(
        "{} iterations (bound {}) in {took:.2?}; stabilizes: {}; Riccati residual {:.2e}",
        res.schedule.len(),
        bound.max_iterations,
        is_ms_stabilizer(&sys, &res.gain),
        res.riccati_residual
    );
    Ok(())
}
