//! The model-free loop fed with exact expectations instead of Monte Carlo
//! data. Its schedule should match the model-based one to solver accuracy.

use std::time::Instant;

use stab_synth::adp::{stabilize_model_free, AdpSettings, DataSource};
use stab_synth::sde::{InitialState, NoiseDesign, OracleMode, SimConfig};
use stab_synth::{stabilize, CostSpec, PiSettings, StabilizeOptions, StochasticLinearSystem, SymMat};

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
    let cfg = SimConfig::default_for(2, 1);
    let noises = NoiseDesign::default().draw(1, cfg.l);

    let start = Instant::now();
    let mf = stabilize_model_free(
        &sys,
        &spec,
        &cfg,
        &noises,
        &InitialState::standard_normal(2),
        &AdpSettings::default(),
        9.0,
        DataSource::Oracle(OracleMode::Exact),
    )?;
    let took = start.elapsed();
    let mb = stabilize(&sys, &spec, &PiSettings::default(), 9.0, StabilizeOptions::default())?;

    for (a, b) in mf.schedule.records.iter().zip(&mb.schedule.records) {
        println!(
            "iter {}: alpha {:.6} vs {:.6}, max |ΔK| = {:.1e}",
            a.iter,
            a.alpha,
            b.alpha,
            a.gain.max_abs_diff(&b.gain)
        );
    }
    println!(
        "{} vs {} outer iterations; oracle run took {took:.2?}",
        mf.schedule.len(),
        mb.schedule.len()
    );
    Ok(())
}
