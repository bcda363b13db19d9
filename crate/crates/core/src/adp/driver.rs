use std::path::{Path, PathBuf};

use super::{adp_pi, adp_step, AdpData, AdpSettings};
use crate::error::{Error, Result};
use crate::exact::{delta_alpha_with, riccati_residual, DiscountRecord, DiscountSchedule, StabilizationResult};
use crate::matops::{trace, SymMat};
use crate::sde::{
    collect_batch, collect_moments, estimate_sigma0, mix_seed, moment_ode_oracle, ExplorationNoise, InitialState,
    OracleMode, RowMoments, SimConfig, TrajectoryBatch,
};
use crate::sysmodel::{is_ms_stabilizer, CostSpec, FeedbackGain, StochasticLinearSystem, ValueMatrix};

/// How `Σ₀` is obtained from collected data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sigma0Rule {
    /// Sample second moment of the initial draws.
    Estimate,
    /// `Σ₀ = I`, for deterministic initial states.
    Identity,
}

impl Sigma0Rule {
    pub fn for_initial_state(init: &InitialState) -> Self {
        match init {
            InitialState::Gaussian(_) => Self::Estimate,
            InitialState::Fixed(_) => Self::Identity,
        }
    }

    fn apply(self, n: usize, initial_states: &[crate::matops::Vector]) -> Result<SymMat> {
        match self {
            Self::Estimate => estimate_sigma0(initial_states),
            Self::Identity => Ok(SymMat::identity(n)),
        }
    }
}

/// Everything one outer iteration needs from the data.
#[derive(Debug, Clone)]
pub struct CollectedData {
    pub moments: Vec<RowMoments>,
    pub sigma0: SymMat,
}

/// Source of regression data. Implementations decide how data is
/// produced; the model-free loop only ever sees [`CollectedData`].
pub trait DataCollector {
    /// Data for outer iteration `iteration` at discount `alpha`, generated
    /// under the behavior gain `behavior`.
    fn collect(&mut self, iteration: usize, alpha: f64, behavior: &FeedbackGain) -> Result<CollectedData>;
}

/// Euler–Maruyama simulation of the shifted plant.
pub struct SimulationCollector {
    sys: StochasticLinearSystem,
    init: InitialState,
    noises: Vec<ExplorationNoise>,
    cfg: SimConfig,
    sigma0: Sigma0Rule,
    save_dir: Option<PathBuf>,
}

impl SimulationCollector {
    pub fn new(
        sys: StochasticLinearSystem,
        init: InitialState,
        noises: Vec<ExplorationNoise>,
        cfg: SimConfig,
    ) -> Result<Self> {
        cfg.validate(sys.n(), sys.m())?;
        init.validate(sys.n())?;
        Ok(Self {
            sigma0: Sigma0Rule::for_initial_state(&init),
            sys,
            init,
            noises,
            cfg,
            save_dir: None,
        })
    }

    /// Keep every batch as `batch_NNN.bin` in `dir`.
    pub fn save_batches_to(mut self, dir: impl Into<PathBuf>) -> Self {
        self.save_dir = Some(dir.into());
        self
    }

    /// Per-iteration configuration; paths of different iterations use
    /// independent seeds.
    pub fn config_for(&self, iteration: usize) -> SimConfig {
        SimConfig {
            master_seed: mix_seed(self.cfg.master_seed, iteration as u64),
            ..self.cfg.clone()
        }
    }
}

pub fn batch_file_name(iteration: usize) -> String {
    format!("batch_{iteration:03}.bin")
}

impl DataCollector for SimulationCollector {
    fn collect(&mut self, iteration: usize, alpha: f64, behavior: &FeedbackGain) -> Result<CollectedData> {
        let shifted = self.sys.shift(alpha);
        let cfg = self.config_for(iteration);
        let summary = match &self.save_dir {
            Some(dir) => {
                let batch = collect_batch(&shifted, behavior, &self.noises, &self.init, &cfg)?;
                std::fs::create_dir_all(dir)?;
                batch.save(&dir.join(batch_file_name(iteration)))?;
                batch.summary()
            }
            None => collect_moments(&shifted, behavior, &self.noises, &self.init, &cfg)?,
        };
        Ok(CollectedData {
            sigma0: self.sigma0.apply(self.sys.n(), &summary.initial_states)?,
            moments: summary.moments,
        })
    }
}

/// Exact expectations from the moment ODEs, in place of Monte Carlo.
pub struct OracleCollector {
    sys: StochasticLinearSystem,
    init: InitialState,
    noises: Vec<ExplorationNoise>,
    cfg: SimConfig,
    mode: OracleMode,
}

impl OracleCollector {
    pub fn new(
        sys: StochasticLinearSystem,
        init: InitialState,
        noises: Vec<ExplorationNoise>,
        cfg: SimConfig,
        mode: OracleMode,
    ) -> Result<Self> {
        cfg.validate(sys.n(), sys.m())?;
        init.validate(sys.n())?;
        Ok(Self {
            sys,
            init,
            noises,
            cfg,
            mode,
        })
    }
}

impl DataCollector for OracleCollector {
    fn collect(&mut self, _iteration: usize, alpha: f64, behavior: &FeedbackGain) -> Result<CollectedData> {
        let moments = moment_ode_oracle(
            &self.sys.shift(alpha),
            behavior,
            &self.noises,
            &self.init,
            &self.cfg,
            self.mode,
        )?;
        let sigma0 = match &self.init {
            InitialState::Gaussian(s) => s.clone(),
            InitialState::Fixed(_) => SymMat::identity(self.sys.n()),
        };
        Ok(CollectedData { moments, sigma0 })
    }
}

/// Batches recorded earlier, one file per outer iteration. Holds no model.
pub struct ReplayCollector {
    files: Vec<PathBuf>,
    sigma0: Sigma0Rule,
}

impl ReplayCollector {
    pub fn new(files: Vec<PathBuf>, sigma0: Sigma0Rule) -> Self {
        Self { files, sigma0 }
    }

    /// All `batch_NNN.bin` files in `dir`, in iteration order.
    pub fn from_dir(dir: &Path, sigma0: Sigma0Rule) -> Result<Self> {
        let mut files = Vec::new();
        while dir.join(batch_file_name(files.len())).exists() {
            files.push(dir.join(batch_file_name(files.len())));
        }
        Ok(Self::new(files, sigma0))
    }
}

impl DataCollector for ReplayCollector {
    fn collect(&mut self, iteration: usize, _alpha: f64, behavior: &FeedbackGain) -> Result<CollectedData> {
        let path = self
            .files
            .get(iteration)
            .ok_or_else(|| Error::BatchFormat(format!("no recorded batch for outer iteration {iteration}")))?;
        let batch = TrajectoryBatch::load(path)?;
        if batch.behavior_gain().max_abs_diff(behavior) != 0.0 {
            return Err(Error::InvariantViolation(format!(
                "{} was recorded under a different behavior gain",
                path.display()
            )));
        }
        let summary = batch.summary();
        Ok(CollectedData {
            sigma0: self.sigma0.apply(batch.n(), &summary.initial_states)?,
            moments: summary.moments,
        })
    }
}

/// Data-quality figures of one outer iteration.
#[derive(Debug, Clone)]
pub struct OuterDiagnostics {
    pub iter: usize,
    pub rank_ratio: f64,
    pub condition: f64,
    pub residual: f64,
    pub h_psd: bool,
    pub floor: Option<f64>,
    pub sigma0: SymMat,
}

#[derive(Debug, Clone)]
pub struct ModelFreeRun {
    pub gain: FeedbackGain,
    pub schedule: DiscountSchedule,
    /// Data-based value matrix of `gain` at the last discount visited.
    pub final_value: ValueMatrix,
    pub diagnostics: Vec<OuterDiagnostics>,
}

/// The model-free discount method, driven purely by `collector`.
#[allow(clippy::too_many_arguments)]
pub fn run_model_free(
    collector: &mut dyn DataCollector,
    k0: &FeedbackGain,
    q: &SymMat,
    r: &SymMat,
    zeta: f64,
    alpha0: f64,
    settings: &AdpSettings,
) -> Result<ModelFreeRun> {
    settings.validate()?;
    if !(alpha0.is_finite() && alpha0 > 0.0) {
        return Err(Error::InvalidInitialAlpha { alpha0 });
    }
    let mut k = k0.clone();
    let mut alpha = alpha0;
    let mut schedule = DiscountSchedule::default();
    let mut diagnostics = Vec::new();
    let mut final_value = None;
    while alpha > 0.0 {
        let j = schedule.len();
        if j >= settings.max_outer_iters {
            return Err(Error::MaxOuterItersExceeded { iterations: j, alpha });
        }
        let data = collector.collect(j, alpha, &k)?;
        let adp = AdpData::from_moments(data.moments)?;
        let pi = adp_pi(&adp, &k, q, r, settings)?;
        let eval = adp_step(&adp, &pi.gain, q, r, settings.rank_tol)?;
        let cost = trace(&(eval.p.as_mat() * data.sigma0.as_mat()));
        let step = delta_alpha_with(cost, q, &data.sigma0, zeta)?;
        k = pi.gain;
        schedule.records.push(DiscountRecord {
            iter: j,
            alpha,
            cost,
            delta_alpha: step,
            gain: k.clone(),
            inner_iters: pi.iterations,
        });
        diagnostics.push(OuterDiagnostics {
            iter: j,
            rank_ratio: eval.rank_ratio,
            condition: eval.condition,
            residual: eval.residual,
            h_psd: eval.h_psd && pi.history.iter().all(|it| it.solution.h_psd),
            floor: pi.floor,
            sigma0: data.sigma0,
        });
        final_value = Some(eval.p);
        alpha -= step;
    }
    Ok(ModelFreeRun {
        gain: k,
        schedule,
        final_value: final_value.ok_or_else(|| Error::InvariantViolation("empty discount schedule".into()))?,
        diagnostics,
    })
}

/// Where [`stabilize_model_free`] takes its data from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSource {
    Simulate,
    Oracle(OracleMode),
}

/// Model-free stabilization of `sys`, followed by a check of the final gain
/// against the true matrices.
#[allow(clippy::too_many_arguments)]
pub fn stabilize_model_free(
    sys: &StochasticLinearSystem,
    spec: &CostSpec,
    sim: &SimConfig,
    noises: &[ExplorationNoise],
    init: &InitialState,
    settings: &AdpSettings,
    alpha0: f64,
    source: DataSource,
) -> Result<StabilizationResult> {
    spec.check_dims(sys)?;
    let k0 = FeedbackGain::zeros(sys.m(), sys.n());
    let mut collector: Box<dyn DataCollector> = match source {
        DataSource::Simulate => Box::new(SimulationCollector::new(
            sys.clone(),
            init.clone(),
            noises.to_vec(),
            sim.clone(),
        )?),
        DataSource::Oracle(mode) => {
            if !is_ms_stabilizer(&sys.shift(alpha0), &k0) {
                return Err(Error::InvalidInitialAlpha { alpha0 });
            }
            Box::new(OracleCollector::new(
                sys.clone(),
                init.clone(),
                noises.to_vec(),
                sim.clone(),
                mode,
            )?)
        }
    };
    let run = run_model_free(
        collector.as_mut(),
        &k0,
        spec.q(),
        spec.r(),
        spec.zeta(),
        alpha0,
        settings,
    )?;
    verify_run(sys, spec, run)
}

/// Attach the true-model checks to a finished run.
pub fn verify_run(
    sys: &StochasticLinearSystem,
    spec: &CostSpec,
    run: ModelFreeRun,
) -> Result<StabilizationResult> {
    if !is_ms_stabilizer(sys, &run.gain) {
        return Err(Error::VerificationFailed);
    }
    let last_alpha = run.schedule.records.last().map_or(0.0, |r| r.alpha);
    let riccati = riccati_residual(&sys.shift(last_alpha), &run.final_value, spec.q(), spec.r())?;
    Ok(StabilizationResult {
        gain: run.gain,
        schedule: run.schedule,
        final_value: run.final_value,
        riccati_residual: riccati,
        polished: None,
    })
}
