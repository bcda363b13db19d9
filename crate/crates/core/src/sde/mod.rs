//! Trajectory generation and the expectation estimators fed to the
//! model-free algorithm.

mod batch;
mod estimators;
mod noise;
mod oracle;
mod sim;

pub use batch::{
    build_policy_matrices, build_static_matrices, collect_batch, collect_moments, BatchSummary, SubBatch,
    TrajectoryBatch, BATCH_FORMAT_VERSION,
};
pub use estimators::{estimate_sigma0, policy_matrices, AdpDataMatrices, PolicyMatrices, RowMoments};
pub use noise::{exploration_noise, ExplorationNoise, NoiseDesign, NoiseSpec};
pub use oracle::{moment_ode_oracle, OracleMode};
pub use sim::{euler_maruyama, mix_seed, path_seed, InitialState, Quadrature, SampledPath, SimConfig, BLOWUP_LIMIT};
