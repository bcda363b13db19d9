//! Mean-square stabilizer checks for a few gains, via the Lyapunov equation
//! and the spectrum of the closed-loop second-moment generator.

use stab_synth::sysmodel::stabilizer_report;
use stab_synth::{FeedbackGain, StochasticLinearSystem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let demo = StochasticLinearSystem::from_rows(
        2,
        1,
        &[3., 6., 11., -7.],
        &[7., 2.],
        &[0.6, 0.1, -0.3, 0.7],
        &[0.2, 0.1],
    )?;
    let remark = StochasticLinearSystem::from_rows(
        2,
        1,
        &[4., 7., 5., -13.],
        &[6., 1.],
        &[5., -1., -3., 4.],
        &[2., 8.],
    )?;
    let cases = [
        ("demo, K = 0", &demo, vec![0.0, 0.0]),
        ("demo, K = (-2.731, -1.027)", &demo, vec![-2.731, -1.027]),
        ("remark, K = (-0.41059, -0.17726)", &remark, vec![-0.41059, -0.17726]),
    ];
    for (name, sys, k) in cases {
        let r = stabilizer_report(sys, &FeedbackGain::from_rows(1, 2, &k)?)?;
        println!(
            "{name:<34} stabilizer {:<5}  abscissa {:>10.4}  Lyapunov eigenvalues {:?}",
            r.verdict, r.spectral_abscissa, r.lyapunov_eigenvalues
        );
    }
    Ok(())
}
