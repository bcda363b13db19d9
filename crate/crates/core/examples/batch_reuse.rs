//! Saved trajectory batches: reloaded from disk, re-summarized with a
//! different quadrature, and a whole model-free run replayed without the
//! plant.

use stab_synth::adp::{run_model_free, AdpSettings, ReplayCollector, Sigma0Rule, SimulationCollector};
use stab_synth::sde::{collect_batch, InitialState, NoiseDesign, Quadrature, SimConfig, TrajectoryBatch};
use stab_synth::{CostSpec, FeedbackGain, StochasticLinearSystem, SymMat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sys = StochasticLinearSystem::from_rows(1, 1, &[1.0], &[1.0], &[0.3], &[0.1])?;
    let spec = CostSpec::new(SymMat::identity(1), SymMat::identity(1), SymMat::identity(1), 10.0)?;
    let cfg = SimConfig {
        n_traj: 2000,
        n_grid: 50,
        substeps: 20,
        l: 4,
        master_seed: 11,
        ..SimConfig::default_for(1, 1)
    };
    let noises = NoiseDesign::default().draw(1, cfg.l);
    let init = InitialState::standard_normal(1);
    let alpha0 = 3.0;

    let dir = tempdir()?;
    let path = dir.join("batch_000.bin");
    let batch = collect_batch(&sys.shift(alpha0), &FeedbackGain::zeros(1, 1), &noises, &init, &cfg)?;
    batch.save(&path)?;
    let loaded = TrajectoryBatch::load(&path)?;
    println!(
        "saved {} bytes; reload identical: {}",
        std::fs::metadata(&path)?.len(),
        loaded.summary().moments == batch.summary().moments
    );

    let a = &loaded.summary_with(Quadrature::Substep).moments[0];
    let b = &loaded.summary_with(Quadrature::Trapezoid).moments[0];
    println!(
        "row 0 ∫E[x²]: every step {:.5}, trapezoid on the grid {:.5}",
        a.int_xx[(0, 0)],
        b.int_xx[(0, 0)]
    );

    let run_dir = dir.join("run");
    let mut live = SimulationCollector::new(sys.clone(), init, noises, cfg)?.save_batches_to(&run_dir);
    let k0 = FeedbackGain::zeros(1, 1);
    let settings = AdpSettings::default();
    let first = run_model_free(&mut live, &k0, spec.q(), spec.r(), spec.zeta(), alpha0, &settings)?;
    let mut replay = ReplayCollector::from_dir(&run_dir, Sigma0Rule::Estimate)?;
    let again = run_model_free(&mut replay, &k0, spec.q(), spec.r(), spec.zeta(), alpha0, &settings)?;
    println!(
        "live run: {} outer steps, K = {:?}; replay from {} files: K = {:?}",
        first.schedule.len(),
        first.gain.row_major(),
        first.schedule.len(),
        again.gain.row_major()
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempdir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("stab-synth-batch-reuse-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
