//! TOML run configuration.
//!
//! ```toml
//! format = "stab-synth/1"
//! mode = "model_based"          # model_free | model_free_oracle
//! alpha0 = 9.0                  # or "auto" (bound + alpha0_margin)
//!
//! [system]
//! a = [[3.0, 6.0], [11.0, -7.0]]
//! b = [[7.0], [2.0]]
//! c = [[0.6, 0.1], [-0.3, 0.7]]
//! d = [[0.2], [0.1]]
//!
//! [cost]
//! q = [[7.0, 0.0], [0.0, 3.0]]
//! r = [[2.0]]
//! zeta = 10.0
//! ```
//!
//! Every other table is optional; see `examples/config.schema.json`.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::adp::AdpSettings;
use crate::exact::{initial_alpha, PiSettings};
use crate::matops::{is_positive_definite, Mat, SymMat, Vector};
use crate::sde::{ExplorationNoise, InitialState, NoiseDesign, NoiseSpec, Quadrature, SimConfig};
use crate::sysmodel::{CostSpec, StochasticLinearSystem};

pub const CONFIG_FORMAT: &str = "stab-synth/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ModelBased,
    ModelFree,
    ModelFreeOracle,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ModelBased => "model_based",
            Mode::ModelFree => "model_free",
            Mode::ModelFreeOracle => "model_free_oracle",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model_based" => Ok(Mode::ModelBased),
            "model_free" => Ok(Mode::ModelFree),
            "model_free_oracle" => Ok(Mode::ModelFreeOracle),
            other => Err(invalid(
                "mode",
                format!("unknown mode `{other}` (model_based, model_free, model_free_oracle)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Alpha0 {
    /// Lyapunov bound plus `margin`.
    Auto { margin: f64 },
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseChoice {
    /// Random sinusoid sums, one per sub-batch and channel.
    Design(NoiseDesign),
    /// Signals given verbatim: one (all channels, all sub-batches), `m`
    /// (per channel) or `l·m` (per sub-batch, then channel).
    Explicit(Vec<NoiseSpec>),
}

/// A validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: StochasticLinearSystem,
    pub spec: CostSpec,
    pub initial_state: InitialState,
    pub mode: Mode,
    pub alpha0: Alpha0,
    pub pi: PiSettings,
    /// Model-based only: after the schedule, run PI once more at α = 0 and
    /// report that optimum as the final gain.
    pub polish: bool,
    pub adp: AdpSettings,
    pub sim: SimConfig,
    pub noise: NoiseChoice,
    pub output_dir: PathBuf,
}

type Rows = Vec<Vec<f64>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    format: Option<String>,
    mode: Option<Mode>,
    alpha0: Option<toml::Value>,
    alpha0_margin: Option<f64>,
    system: RawSystem,
    cost: RawCost,
    #[serde(default)]
    initial_state: RawInitial,
    #[serde(default)]
    pi: RawPi,
    #[serde(default)]
    adp: RawAdp,
    #[serde(default)]
    sim: RawSim,
    #[serde(default)]
    noise: RawNoise,
    output_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    a: Option<Rows>,
    b: Option<Rows>,
    c: Option<Rows>,
    d: Option<Rows>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    q: Rows,
    r: Rows,
    zeta: f64,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    distribution: Option<String>,
    sigma0: Option<Rows>,
    vectors: Option<Rows>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPi {
    eps: Option<f64>,
    max_inner_iters: Option<usize>,
    max_outer_iters: Option<usize>,
    polish: Option<bool>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawAdp {
    eps: Option<f64>,
    rank_tol: Option<f64>,
    plateau_window: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSim {
    t0: Option<f64>,
    n_grid: Option<usize>,
    dt: Option<f64>,
    n_traj: Option<usize>,
    l: Option<usize>,
    master_seed: Option<u64>,
    quadrature: Option<Quadrature>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    components: Option<usize>,
    amplitude: Option<f64>,
    freq_min: Option<f64>,
    freq_max: Option<f64>,
    seed: Option<u64>,
    signals: Option<Vec<NoiseSpec>>,
}

fn matrix(field: &str, rows: &Rows) -> Result<Mat, ConfigError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(ConfigError::Dimension(format!("{field} is empty")));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(ConfigError::Dimension(format!(
            "{field}: row {i} has {} entries, row 0 has {ncols}",
            rows[i].len()
        )));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid(field, "entries must be finite"));
    }
    Ok(Mat::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

fn pd_matrix(field: &str, rows: &Rows, dim: usize) -> Result<SymMat, ConfigError> {
    let m = matrix(field, rows)?;
    if m.shape() != (dim, dim) {
        return Err(ConfigError::Dimension(format!(
            "{field} is {}×{}, expected {dim}×{dim}",
            m.nrows(),
            m.ncols()
        )));
    }
    let s = SymMat::new(m).map_err(|_| invalid(field, "must be symmetric"))?;
    if !is_positive_definite(&s) {
        return Err(invalid(field, "must be positive definite"));
    }
    Ok(s)
}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be a positive number, got {v}")))
    }
}

fn at_least_one(field: &str, v: usize) -> Result<usize, ConfigError> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(invalid(field, "must be ≥ 1"))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_named(&text, &path.display().to_string())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_named(text, "<config>")
    }

    fn parse_named(text: &str, path: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        if let Some(f) = &raw.format {
            if f != CONFIG_FORMAT {
                return Err(invalid("format", format!("expected \"{CONFIG_FORMAT}\", got \"{f}\"")));
            }
        }
        let get = |name: &str, m: &Option<Rows>| -> Result<Mat, ConfigError> {
            let field = format!("system.{name}");
            match m {
                Some(rows) => matrix(&field, rows),
                None => Err(ConfigError::Dimension(format!("{field} is missing"))),
            }
        };
        let (a, b, c, d) = (
            get("a", &raw.system.a)?,
            get("b", &raw.system.b)?,
            get("c", &raw.system.c)?,
            get("d", &raw.system.d)?,
        );
        let system = StochasticLinearSystem::new(a, b, c, d).map_err(|e| ConfigError::Dimension(e.to_string()))?;
        let (n, m) = (system.n(), system.m());

        let q = pd_matrix("cost.q", &raw.cost.q, n)?;
        let r = pd_matrix("cost.r", &raw.cost.r, m)?;
        if !(raw.cost.zeta.is_finite() && raw.cost.zeta > 1.0) {
            return Err(invalid("cost.zeta", format!("must be > 1, got {}", raw.cost.zeta)));
        }

        let initial_state = match raw.initial_state.distribution.as_deref().unwrap_or("standard_normal") {
            "standard_normal" => InitialState::standard_normal(n),
            "gaussian" => {
                let rows = raw
                    .initial_state
                    .sigma0
                    .as_ref()
                    .ok_or_else(|| invalid("initial_state.sigma0", "required for distribution = \"gaussian\""))?;
                InitialState::Gaussian(pd_matrix("initial_state.sigma0", rows, n)?)
            }
            "fixed" => {
                let rows = raw
                    .initial_state
                    .vectors
                    .as_ref()
                    .ok_or_else(|| invalid("initial_state.vectors", "required for distribution = \"fixed\""))?;
                if rows.is_empty() {
                    return Err(invalid("initial_state.vectors", "must list at least one vector"));
                }
                let mut vs = Vec::with_capacity(rows.len());
                for (i, v) in rows.iter().enumerate() {
                    if v.len() != n {
                        return Err(ConfigError::Dimension(format!(
                            "initial_state.vectors[{i}] has length {}, expected {n}",
                            v.len()
                        )));
                    }
                    vs.push(Vector::from_column_slice(v));
                }
                InitialState::Fixed(vs)
            }
            other => {
                return Err(invalid(
                    "initial_state.distribution",
                    format!("unknown distribution `{other}` (standard_normal, gaussian, fixed)"),
                ))
            }
        };
        let sigma0 = match &initial_state {
            InitialState::Gaussian(s) => s.clone(),
            InitialState::Fixed(_) => SymMat::identity(n),
        };
        let spec = CostSpec::new(q, r, sigma0, raw.cost.zeta).map_err(|e| invalid("cost", e.to_string()))?;

        let alpha0 = match &raw.alpha0 {
            None => Alpha0::Auto {
                margin: positive("alpha0_margin", raw.alpha0_margin.unwrap_or(1.0))?,
            },
            Some(toml::Value::String(s)) if s == "auto" => Alpha0::Auto {
                margin: positive("alpha0_margin", raw.alpha0_margin.unwrap_or(1.0))?,
            },
            Some(v) => {
                let x = v
                    .as_float()
                    .or_else(|| v.as_integer().map(|i| i as f64))
                    .ok_or_else(|| invalid("alpha0", "must be a number or \"auto\""))?;
                Alpha0::Value(positive("alpha0", x)?)
            }
        };

        let pi_default = PiSettings::default();
        let pi = PiSettings {
            eps: positive("pi.eps", raw.pi.eps.unwrap_or(pi_default.eps))?,
            max_inner_iters: at_least_one(
                "pi.max_inner_iters",
                raw.pi.max_inner_iters.unwrap_or(pi_default.max_inner_iters),
            )?,
            max_outer_iters: at_least_one(
                "pi.max_outer_iters",
                raw.pi.max_outer_iters.unwrap_or(pi_default.max_outer_iters),
            )?,
        };
        let adp_default = AdpSettings::default();
        let adp = AdpSettings {
            eps: positive("adp.eps", raw.adp.eps.unwrap_or(adp_default.eps))?,
            max_inner_iters: pi.max_inner_iters,
            max_outer_iters: pi.max_outer_iters,
            rank_tol: positive("adp.rank_tol", raw.adp.rank_tol.unwrap_or(adp_default.rank_tol))?,
            plateau_window: at_least_one(
                "adp.plateau_window",
                raw.adp.plateau_window.unwrap_or(adp_default.plateau_window),
            )?,
        };
        if adp.rank_tol >= 1.0 {
            return Err(invalid("adp.rank_tol", "must be below 1"));
        }

        let sim = Self::sim_from_raw(&raw.sim, n, m)?;
        let noise = Self::noise_from_raw(&raw.noise, &sim, m)?;

        Ok(Self {
            system,
            spec,
            initial_state,
            mode: raw.mode.unwrap_or(Mode::ModelBased),
            alpha0,
            pi,
            polish: raw.pi.polish.unwrap_or(false),
            adp,
            sim,
            noise,
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("out")),
        })
    }

    fn sim_from_raw(raw: &RawSim, n: usize, m: usize) -> Result<SimConfig, ConfigError> {
        let default = SimConfig::default_for(n, m);
        let t0 = positive("sim.t0", raw.t0.unwrap_or(default.t0))?;
        let n_grid = at_least_one("sim.n_grid", raw.n_grid.unwrap_or(default.n_grid))?;
        let substeps = match raw.dt {
            None => default.substeps,
            Some(dt) => {
                let dt = positive("sim.dt", dt)?;
                let ratio = t0 / n_grid as f64 / dt;
                let k = ratio.round();
                if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
                    return Err(invalid(
                        "sim.dt",
                        format!("must divide the grid spacing t0/n_grid = {}", t0 / n_grid as f64),
                    ));
                }
                k as usize
            }
        };
        let l = raw.l.unwrap_or(default.l);
        let need = SimConfig::min_rows(n, m);
        if l < need {
            return Err(invalid("sim.l", format!("must be ≥ {need} for n = {n}, m = {m}, got {l}")));
        }
        Ok(SimConfig {
            t0,
            n_grid,
            substeps,
            n_traj: at_least_one("sim.n_traj", raw.n_traj.unwrap_or(default.n_traj))?,
            l,
            master_seed: raw.master_seed.unwrap_or(default.master_seed),
            quadrature: raw.quadrature.unwrap_or(default.quadrature),
        })
    }

    fn noise_from_raw(raw: &RawNoise, sim: &SimConfig, m: usize) -> Result<NoiseChoice, ConfigError> {
        if let Some(signals) = &raw.signals {
            if raw.components.is_some() || raw.amplitude.is_some() || raw.freq_min.is_some() || raw.freq_max.is_some()
            {
                return Err(invalid("noise.signals", "cannot be combined with a random design"));
            }
            let ok = signals.len() == 1 || signals.len() == m || signals.len() == sim.l * m;
            if !ok {
                return Err(ConfigError::Dimension(format!(
                    "noise.signals has {} entries; expected 1, {m} or {}",
                    signals.len(),
                    sim.l * m
                )));
            }
            for (i, s) in signals.iter().enumerate() {
                s.validate().map_err(|e| invalid(&format!("noise.signals[{i}]"), e.to_string()))?;
            }
            return Ok(NoiseChoice::Explicit(signals.clone()));
        }
        let default = NoiseDesign::default();
        let design = NoiseDesign {
            components: raw.components.unwrap_or(default.components),
            amplitude: raw.amplitude.unwrap_or(default.amplitude),
            freq_min: raw.freq_min.unwrap_or(default.freq_min),
            freq_max: raw.freq_max.unwrap_or(default.freq_max),
            seed: raw.seed.unwrap_or(default.seed),
        };
        design.validate().map_err(|e| invalid("noise", e.to_string()))?;
        Ok(NoiseChoice::Design(design))
    }

    /// The exploration signal of every sub-batch.
    pub fn noises(&self) -> Vec<ExplorationNoise> {
        let m = self.system.m();
        let l = self.sim.l;
        match &self.noise {
            NoiseChoice::Design(d) => d.draw(m, l),
            NoiseChoice::Explicit(signals) => (0..l)
                .map(|h| {
                    let channels = (0..m)
                        .map(|ch| match signals.len() {
                            1 => signals[0].clone(),
                            len if len == m => signals[ch].clone(),
                            _ => signals[h * m + ch].clone(),
                        })
                        .collect();
                    ExplorationNoise::new(channels).expect("signals validated at parse time")
                })
                .collect(),
        }
    }

    pub fn resolve_alpha0(&self) -> crate::Result<f64> {
        match self.alpha0 {
            Alpha0::Value(v) => Ok(v),
            Alpha0::Auto { margin } => initial_alpha(&self.system, margin),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEC4: &str = r#"
        format = "stab-synth/1"
        alpha0 = 9
        [system]
        a = [[3.0, 6.0], [11.0, -7.0]]
        b = [[7.0], [2.0]]
        c = [[0.6, 0.1], [-0.3, 0.7]]
        d = [[0.2], [0.1]]
        [cost]
        q = [[7.0, 0.0], [0.0, 3.0]]
        r = [[2.0]]
        zeta = 10.0
    "#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = RunConfig::parse(SEC4).unwrap();
        assert_eq!(cfg.alpha0, Alpha0::Value(9.0));
        assert_eq!(cfg.spec.zeta(), 10.0);
        assert_eq!(cfg.mode, Mode::ModelBased);
        assert_eq!(cfg.sim.l, 8);
        assert_eq!(cfg.sim.substeps, 100);
        assert_eq!(cfg.noises().len(), 8);
    }

    #[test]
    fn indefinite_q_names_the_field() {
        let text = SEC4.replace("q = [[7.0, 0.0], [0.0, 3.0]]", "q = [[7.0, 0.0], [0.0, -3.0]]");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { field, .. } if field == "cost.q"), "{err}");
    }

    #[test]
    fn missing_d_is_a_dimension_error() {
        let text = SEC4.replace("d = [[0.2], [0.1]]", "");
        assert!(matches!(RunConfig::parse(&text), Err(ConfigError::Dimension(_))));
    }

    #[test]
    fn syntax_errors_carry_a_location() {
        let err = RunConfig::parse("alpha0 = = 3").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, ConfigError::Parse { .. }));
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn dt_must_divide_grid_spacing() {
        let ok = format!("{SEC4}\n[sim]\ndt = 0.0005\n");
        assert_eq!(RunConfig::parse(&ok).unwrap().sim.substeps, 20);
        let bad = format!("{SEC4}\n[sim]\ndt = 0.003\n");
        let err = RunConfig::parse(&bad).unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { field, .. } if field == "sim.dt"));
    }

    #[test]
    fn explicit_signals_are_broadcast() {
        let text = format!(
            "{SEC4}\n[[noise.signals]]\namplitudes = [1.0]\nfrequencies = [2.0]\nphases = [0.0]\n"
        );
        let cfg = RunConfig::parse(&text).unwrap();
        let noises = cfg.noises();
        assert_eq!(noises.len(), cfg.sim.l);
        assert!((noises[3].eval(0.25)[0] - 0.5f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn auto_alpha_uses_the_bound() {
        let text = SEC4.replace("alpha0 = 9", "alpha0 = \"auto\"\nalpha0_margin = 0.5");
        let cfg = RunConfig::parse(&text).unwrap();
        let expect = initial_alpha(&cfg.system, 0.5).unwrap();
        assert_eq!(cfg.resolve_alpha0().unwrap(), expect);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SEC4.replace("zeta = 10.0", "zeta = 10.0\nzetta = 3");
        assert!(matches!(RunConfig::parse(&text), Err(ConfigError::Parse { .. })));
    }
}
