//! Run a configuration end to end and write its artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::adp::{run_model_free, verify_run, DataCollector, OracleCollector, SimulationCollector};
use crate::config::{ConfigError, Mode, RunConfig};
use crate::error::Error;
use crate::exact::{stabilize, termination_bound, DiscountSchedule, StabilizationResult, StabilizeOptions};
use crate::matops::Mat;
use crate::sde::OracleMode;
use crate::sysmodel::{stabilizer_report, FeedbackGain, StabilizerReport, StochasticLinearSystem};

pub const RESULT_FORMAT: &str = "stab-synth-result/1";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const RESULT_FILE: &str = "result.json";
pub const BATCH_DIR: &str = "batches";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Algorithm(#[from] Error),
}

impl RunError {
    /// 2 for configuration and I/O problems, 3 for algorithm failures,
    /// 4 when an internal guarantee broke.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io { .. } => 2,
            RunError::Algorithm(e) => match e {
                Error::VerificationFailed | Error::InvariantViolation(_) => 4,
                Error::InvalidParameter(_) | Error::Dimension(_) | Error::Io(_) | Error::BatchFormat(_) => 2,
                Error::InvalidInitialAlpha { .. } => 2,
                _ => 3,
            },
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// Command-line adjustments applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub alpha0: Option<f64>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        if let Some(a) = self.alpha0 {
            if !(a.is_finite() && a > 0.0) {
                return Err(ConfigError::Invalid {
                    field: "alpha0".into(),
                    reason: format!("must be a positive number, got {a}"),
                });
            }
            cfg.alpha0 = crate::config::Alpha0::Value(a);
        }
        if let Some(s) = self.seed {
            cfg.sim.master_seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub alpha0: f64,
    /// The polished optimum when requested, else the last schedule gain.
    pub gain: FeedbackGain,
    pub result: StabilizationResult,
    pub report: StabilizerReport,
    pub result_json: Value,
    pub schedule_path: PathBuf,
    pub result_path: PathBuf,
}

/// Runs `cfg` and writes `schedule.csv` and `result.json` into its output
/// directory. With `save_batches`, model-free simulation keeps every batch
/// under `batches/`.
pub fn run(cfg: &RunConfig, save_batches: bool) -> Result<RunOutcome, RunError> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(format!("creating {}", out.display())))?;
    let alpha0 = cfg.resolve_alpha0()?;

    let mut diagnostics = Value::Null;
    let result = match cfg.mode {
        Mode::ModelBased => stabilize(
            &cfg.system,
            &cfg.spec,
            &cfg.pi,
            alpha0,
            StabilizeOptions {
                polish: cfg.polish,
                ..StabilizeOptions::default()
            },
        )?,
        Mode::ModelFree | Mode::ModelFreeOracle => {
            cfg.spec.check_dims(&cfg.system)?;
            let noises = cfg.noises();
            let mut collector: Box<dyn DataCollector> = if cfg.mode == Mode::ModelFree {
                let c = SimulationCollector::new(
                    cfg.system.clone(),
                    cfg.initial_state.clone(),
                    noises,
                    cfg.sim.clone(),
                )?;
                if save_batches {
                    let dir = out.join(BATCH_DIR);
                    std::fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
                    Box::new(c.save_batches_to(dir))
                } else {
                    Box::new(c)
                }
            } else {
                Box::new(OracleCollector::new(
                    cfg.system.clone(),
                    cfg.initial_state.clone(),
                    noises,
                    cfg.sim.clone(),
                    OracleMode::Exact,
                )?)
            };
            let k0 = FeedbackGain::zeros(cfg.system.m(), cfg.system.n());
            let mf = run_model_free(
                collector.as_mut(),
                &k0,
                cfg.spec.q(),
                cfg.spec.r(),
                cfg.spec.zeta(),
                alpha0,
                &cfg.adp,
            )?;
            diagnostics = Value::Array(
                mf.diagnostics
                    .iter()
                    .map(|d| {
                        json!({
                            "iter": d.iter,
                            "rank_ratio": d.rank_ratio,
                            "condition": d.condition,
                            "residual": d.residual,
                            "h_psd": d.h_psd,
                            "floor": d.floor,
                            "sigma0": rows(d.sigma0.as_mat()),
                        })
                    })
                    .collect(),
            );
            verify_run(&cfg.system, &cfg.spec, mf)?
        }
    };

    let polished = result.polished.as_ref();
    let final_gain = polished.map_or(&result.gain, |p| &p.gain);
    let report = stabilizer_report(&cfg.system, final_gain)?;
    if !report.verdict {
        return Err(Error::VerificationFailed.into());
    }
    let bound = termination_bound(&cfg.system, &cfg.spec, &cfg.pi, alpha0, &result.gain)?;
    let actual = result.schedule.len();

    let schedule_path = out.join(SCHEDULE_FILE);
    std::fs::write(&schedule_path, schedule_csv(&result.schedule))
        .map_err(io_err(format!("writing {}", schedule_path.display())))?;

    let result_json = json!({
        "format": RESULT_FORMAT,
        "mode": cfg.mode.as_str(),
        "alpha0": alpha0,
        "seed": cfg.sim.master_seed,
        "gain": rows(final_gain.as_mat()),
        "schedule_gain": rows(result.gain.as_mat()),
        "polished": polished.is_some(),
        "outer_iterations": actual,
        "stabilizer": report_json(&report),
        "riccati_residual": result.riccati_residual,
        "final_value": rows(polished.map_or(&result.final_value, |p| &p.value).as_mat()),
        "iteration_bound": {
            "optimal_cost": bound.optimal_cost,
            "alpha_tilde": bound.alpha_tilde,
            "bound": bound.max_iterations,
            "actual": actual,
            "within": actual <= bound.max_iterations,
        },
        "diagnostics": diagnostics,
    });
    let result_path = out.join(RESULT_FILE);
    let text = serde_json::to_string_pretty(&result_json).expect("JSON values always serialize");
    std::fs::write(&result_path, text + "\n").map_err(io_err(format!("writing {}", result_path.display())))?;

    Ok(RunOutcome {
        alpha0,
        gain: final_gain.clone(),
        result,
        report,
        result_json,
        schedule_path,
        result_path,
    })
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn report_json(r: &StabilizerReport) -> Value {
    json!({
        "verdict": r.verdict,
        "spectral_abscissa": r.spectral_abscissa,
        "lyapunov_eigenvalues": r.lyapunov_eigenvalues,
    })
}

/// One row per outer iteration; gain entries row-major as `k_i_j`.
pub fn schedule_csv(schedule: &DiscountSchedule) -> String {
    let mut s = String::from("iter,alpha,delta_alpha,cost,inner_iters");
    if let Some(first) = schedule.records.first() {
        let k = first.gain.as_mat();
        for i in 0..k.nrows() {
            for j in 0..k.ncols() {
                let _ = write!(s, ",k_{}_{}", i + 1, j + 1);
            }
        }
    }
    s.push('\n');
    for r in &schedule.records {
        let _ = write!(s, "{},{},{},{},{}", r.iter, r.alpha, r.delta_alpha, r.cost, r.inner_iters);
        for v in r.gain.row_major() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Reads a gain from JSON: either a bare row list or an object with a
/// `gain` key (so `result.json` itself works).
pub fn read_gain(path: &Path, m: usize, n: usize) -> Result<FeedbackGain, RunError> {
    let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    let bad = |reason: String| ConfigError::Parse {
        path: path.display().to_string(),
        message: reason,
    };
    let value: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let gain = value.get("gain").unwrap_or(&value);
    let parsed: Vec<Vec<f64>> =
        serde_json::from_value(gain.clone()).map_err(|e| bad(format!("gain must be a list of rows: {e}")))?;
    if parsed.len() != m || parsed.iter().any(|r| r.len() != n) {
        return Err(ConfigError::Dimension(format!(
            "gain in {} is not {m}×{n}",
            path.display()
        ))
        .into());
    }
    let flat: Vec<f64> = parsed.into_iter().flatten().collect();
    Ok(FeedbackGain::from_rows(m, n, &flat)?)
}

/// Stabilizer report of `k` on `sys` shifted by `alpha`.
pub fn verify(sys: &StochasticLinearSystem, k: &FeedbackGain, alpha: f64) -> Result<StabilizerReport, RunError> {
    Ok(stabilizer_report(&sys.shift(alpha), k)?)
}

pub fn format_report(r: &StabilizerReport) -> String {
    let eig = match &r.lyapunov_eigenvalues {
        Some(v) => v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", "),
        None => "unavailable (singular generator)".into(),
    };
    format!(
        "stabilizer: {}\nspectral abscissa: {:.6e}\nlyapunov eigenvalues: [{eig}]\n",
        r.verdict, r.spectral_abscissa
    )
}
