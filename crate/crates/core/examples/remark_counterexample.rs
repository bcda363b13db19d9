//! The optimal discounted gain need not stabilize the undiscounted plant.
//!
//! Policy iteration from K = 0 at the first admissible discount converges to
//! a gain for which A + BK has an eigenvalue in the right half plane.

use stab_synth::exact::{initial_alpha, lyapunov_bound, pi_solve};
use stab_synth::sysmodel::stabilizer_report;
use stab_synth::{CostSpec, FeedbackGain, PiSettings, StochasticLinearSystem, SymMat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sys = StochasticLinearSystem::from_rows(
        2,
        1,
        &[4., 7., 5., -13.],
        &[6., 1.],
        &[5., -1., -3., 4.],
        &[2., 8.],
    )?;
    let spec = CostSpec::new(
        SymMat::from_diagonal(&[6., 3.]),
        SymMat::from_diagonal(&[2.]),
        SymMat::identity(2),
        10.0,
    )?;

    let alpha0 = initial_alpha(&sys, 1.0)?;
    println!("bound {:.4}, alpha0 = {alpha0:.4}", lyapunov_bound(&sys)?);
    let pi = pi_solve(&sys.shift(alpha0), &FeedbackGain::zeros(1, 2), &spec, &PiSettings::default())?;
    println!("K*(alpha0) = {:?} after {} PI steps", pi.gain.row_major(), pi.iterations);

    let drift = sys.a() + sys.b() * pi.gain.as_mat();
    let max_re = drift.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    println!("max Re λ(A + BK) = {max_re:.4}");

    let report = stabilizer_report(&sys, &pi.gain)?;
    println!(
        "mean-square stabilizer: {} (spectral abscissa {:.4})",
        report.verdict, report.spectral_abscissa
    );
    Ok(())
}
