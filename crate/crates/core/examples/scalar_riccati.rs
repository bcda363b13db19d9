//! dx = (x + u)dt with unit weights: policy iteration against the closed form
//! p = 1 + √2, k = −(1 + √2).

use stab_synth::exact::pi_solve;
use stab_synth::{CostSpec, FeedbackGain, PiSettings, StochasticLinearSystem, SymMat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sys = StochasticLinearSystem::from_rows(1, 1, &[1.0], &[1.0], &[0.0], &[0.0])?;
    let spec = CostSpec::new(SymMat::identity(1), SymMat::identity(1), SymMat::identity(1), 10.0)?;
    let settings = PiSettings {
        eps: 1e-13,
        ..PiSettings::default()
    };
    let exact = 1.0 + 2f64.sqrt();
    for k0 in [-1.5, -3.0, -20.0] {
        let pi = pi_solve(&sys, &FeedbackGain::from_rows(1, 1, &[k0])?, &spec, &settings)?;
        let p = pi.value.as_mat()[(0, 0)];
        let k = pi.gain.as_mat()[(0, 0)];
        println!(
            "k0 = {k0:>6}: {} steps, p - (1+√2) = {:+.1e}, k + (1+√2) = {:+.1e}",
            pi.iterations,
            p - exact,
            k + exact
        );
    }
    Ok(())
}
