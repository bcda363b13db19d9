use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimators::{policy_matrices, AdpDataMatrices, PolicyMatrices, RowMoments};
use super::noise::ExplorationNoise;
use super::sim::{
    feedback_control, integrate, integrate_feedback, path_seed, FineIntegrals, InitialSamplerHandle, InitialState, Plant, Quadrature,
    SimConfig, BLOWUP_LIMIT,
};
use crate::error::{Error, Result};
use crate::matops::{SymMat, Vector};
use crate::sysmodel::{FeedbackGain, StochasticLinearSystem};

const MAGIC: &[u8; 8] = b"STABSYNB";
pub const BATCH_FORMAT_VERSION: u32 = 1;

/// Paths of one sub-batch, stored flat: grid samples are
/// `[path][grid point][component]`, the fine integrals `[path][entry]`
/// with each matrix column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBatch {
    pub seeds: Vec<u64>,
    pub states: Vec<f64>,
    pub inputs: Vec<f64>,
    pub fine_xx: Vec<f64>,
    pub fine_ux: Vec<f64>,
    pub fine_uu: Vec<f64>,
}

/// Sampled data of one collection round.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    n: usize,
    m: usize,
    config: SimConfig,
    behavior_gain: FeedbackGain,
    noises: Vec<ExplorationNoise>,
    sub_batches: Vec<SubBatch>,
}

/// Row moments plus the initial draws, without the paths themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub moments: Vec<RowMoments>,
    pub initial_states: Vec<Vector>,
}

struct PathData {
    seed: u64,
    states: Vec<f64>,
    inputs: Vec<f64>,
    fine: FineIntegrals,
}

struct PathView<'a> {
    states: &'a [f64],
    inputs: &'a [f64],
    xx: &'a [f64],
    ux: &'a [f64],
    uu: &'a [f64],
}

impl PathData {
    fn view(&self) -> PathView<'_> {
        PathView {
            states: &self.states,
            inputs: &self.inputs,
            xx: &self.fine.xx,
            ux: &self.fine.ux,
            uu: &self.fine.uu,
        }
    }
}

fn add_outer(acc: &mut [f64], a: &[f64], b: &[f64], w: f64) {
    // acc (column-major, len(a) × len(b)) += w · a bᵀ
    let rows = a.len();
    for (j, bj) in b.iter().enumerate() {
        for (i, ai) in a.iter().enumerate() {
            acc[j * rows + i] += w * ai * bj;
        }
    }
}

fn accumulate(acc: &mut RowMoments, p: &PathView<'_>, cfg: &SimConfig, n: usize, m: usize) {
    let nq = cfg.n_grid;
    let x = |q: usize| &p.states[q * n..(q + 1) * n];
    let u = |q: usize| &p.inputs[q * m..(q + 1) * m];
    add_outer(acc.start.as_mut_slice(), x(0), x(0), 1.0);
    add_outer(acc.end.as_mut_slice(), x(nq), x(nq), 1.0);
    match cfg.quadrature {
        Quadrature::Substep => {
            for (a, v) in acc.int_xx.as_mut_slice().iter_mut().zip(p.xx) {
                *a += v;
            }
            for (a, v) in acc.int_ux.as_mut_slice().iter_mut().zip(p.ux) {
                *a += v;
            }
            for (a, v) in acc.int_uu.as_mut_slice().iter_mut().zip(p.uu) {
                *a += v;
            }
        }
        Quadrature::LeftEndpoint | Quadrature::Trapezoid => {
            let h = cfg.grid_step();
            for q in 0..=nq {
                let w = match (cfg.quadrature, q) {
                    (Quadrature::LeftEndpoint, q) if q == nq => continue,
                    (Quadrature::Trapezoid, q) if q == 0 || q == nq => 0.5 * h,
                    _ => h,
                };
                add_outer(acc.int_xx.as_mut_slice(), x(q), x(q), w);
                add_outer(acc.int_ux.as_mut_slice(), u(q), x(q), w);
                add_outer(acc.int_uu.as_mut_slice(), u(q), u(q), w);
            }
        }
    }
}

fn noise_table(noise: &ExplorationNoise, cfg: &SimConfig) -> Vec<f64> {
    let m = noise.m();
    let dt = cfg.dt();
    let steps = cfg.total_steps();
    let mut table = vec![0.0; (steps + 1) * m];
    for s in 0..=steps {
        noise.eval_into(s as f64 * dt, &mut table[s * m..(s + 1) * m]);
    }
    table
}

struct Collection<'a> {
    plant: Plant,
    cfg: &'a SimConfig,
    k: Vec<f64>,
    sampler: InitialSamplerHandle,
    noises: &'a [ExplorationNoise],
    n: usize,
    m: usize,
}

impl<'a> Collection<'a> {
    fn new(
        sys_alpha: &StochasticLinearSystem,
        k0: &FeedbackGain,
        noises: &'a [ExplorationNoise],
        init: &InitialState,
        cfg: &'a SimConfig,
    ) -> Result<Self> {
        let (n, m) = (sys_alpha.n(), sys_alpha.m());
        cfg.validate(n, m)?;
        init.validate(n)?;
        if k0.nrows() != m || k0.ncols() != n {
            return Err(Error::Dimension(format!(
                "behavior gain is {}×{}, expected {m}×{n}",
                k0.nrows(),
                k0.ncols()
            )));
        }
        if noises.len() != cfg.l {
            return Err(Error::Dimension(format!(
                "{} exploration signals for {} sub-batches",
                noises.len(),
                cfg.l
            )));
        }
        if let Some(e) = noises.iter().find(|e| e.m() != m) {
            return Err(Error::Dimension(format!("exploration signal has {} channels, expected {m}", e.m())));
        }
        Ok(Self {
            plant: Plant::new(sys_alpha),
            cfg,
            k: k0.row_major(),
            sampler: InitialSamplerHandle::new(init)?,
            noises,
            n,
            m,
        })
    }

    fn sub_batch(&self, h: usize) -> Result<Vec<PathData>> {
        let table = noise_table(&self.noises[h], self.cfg);
        let points = self.cfg.n_grid + 1;
        (0..self.cfg.n_traj)
            .into_par_iter()
            .map(|k| {
                let seed = path_seed(self.cfg.master_seed, h, k);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut x0 = vec![0.0; self.n];
                self.sampler.draw(h, &mut rng, &mut x0);
                let mut states = vec![0.0; points * self.n];
                let mut inputs = vec![0.0; points * self.m];
                let mut fine = FineIntegrals::zeros(self.n, self.m);
                macro_rules! fixed {
                    ($n:literal, $m:literal) => {
                        integrate_feedback::<$n, $m>(
                            &self.plant,
                            self.cfg,
                            &x0,
                            &mut rng,
                            &self.k,
                            &table,
                            &mut states,
                            &mut inputs,
                            &mut fine,
                        )
                    };
                }
                let outcome = match (self.n, self.m) {
                    (1, 1) => fixed!(1, 1),
                    (2, 1) => fixed!(2, 1),
                    (2, 2) => fixed!(2, 2),
                    (3, 1) => fixed!(3, 1),
                    (3, 2) => fixed!(3, 2),
                    (4, 1) => fixed!(4, 1),
                    (4, 2) => fixed!(4, 2),
                    _ => integrate(
                        &self.plant,
                        self.cfg,
                        &x0,
                        &mut rng,
                        feedback_control(&self.k, &table, self.n, self.m),
                        &mut states,
                        &mut inputs,
                        Some(&mut fine),
                    ),
                };
                outcome.map_err(|b| Error::Blowup {
                    sub_batch: h,
                    path: k,
                    time: b.time,
                    limit: BLOWUP_LIMIT,
                })?;
                Ok(PathData {
                    seed,
                    states,
                    inputs,
                    fine,
                })
            })
            .collect()
    }
}

fn summarize_paths<'p>(
    paths: impl Iterator<Item = PathView<'p>>,
    cfg: &SimConfig,
    n: usize,
    m: usize,
    initial_states: &mut Vec<Vector>,
) -> RowMoments {
    let mut acc = RowMoments::zeros(n, m);
    for p in paths {
        initial_states.push(Vector::from_column_slice(&p.states[..n]));
        accumulate(&mut acc, &p, cfg, n, m);
    }
    acc.scale(1.0 / cfg.n_traj as f64);
    acc
}

/// Simulate `l` sub-batches under `u = k0·x + e_h(t)` and keep every path.
pub fn collect_batch(
    sys_alpha: &StochasticLinearSystem,
    k0: &FeedbackGain,
    noises: &[ExplorationNoise],
    init: &InitialState,
    cfg: &SimConfig,
) -> Result<TrajectoryBatch> {
    let c = Collection::new(sys_alpha, k0, noises, init, cfg)?;
    let mut sub_batches = Vec::with_capacity(cfg.l);
    for h in 0..cfg.l {
        let paths = c.sub_batch(h)?;
        let mut sb = SubBatch {
            seeds: Vec::with_capacity(paths.len()),
            states: Vec::with_capacity(paths.len() * paths[0].states.len()),
            inputs: Vec::with_capacity(paths.len() * paths[0].inputs.len()),
            fine_xx: Vec::new(),
            fine_ux: Vec::new(),
            fine_uu: Vec::new(),
        };
        for p in paths {
            sb.seeds.push(p.seed);
            sb.states.extend_from_slice(&p.states);
            sb.inputs.extend_from_slice(&p.inputs);
            sb.fine_xx.extend_from_slice(&p.fine.xx);
            sb.fine_ux.extend_from_slice(&p.fine.ux);
            sb.fine_uu.extend_from_slice(&p.fine.uu);
        }
        sub_batches.push(sb);
    }
    Ok(TrajectoryBatch {
        n: c.n,
        m: c.m,
        config: cfg.clone(),
        behavior_gain: k0.clone(),
        noises: noises.to_vec(),
        sub_batches,
    })
}

/// Same simulation as [`collect_batch`], reduced to row moments on the fly.
/// The result equals `collect_batch(..).summary()` bit for bit.
pub fn collect_moments(
    sys_alpha: &StochasticLinearSystem,
    k0: &FeedbackGain,
    noises: &[ExplorationNoise],
    init: &InitialState,
    cfg: &SimConfig,
) -> Result<BatchSummary> {
    let c = Collection::new(sys_alpha, k0, noises, init, cfg)?;
    let mut initial_states = Vec::with_capacity(cfg.l * cfg.n_traj);
    let mut moments = Vec::with_capacity(cfg.l);
    for h in 0..cfg.l {
        let paths = c.sub_batch(h)?;
        moments.push(summarize_paths(
            paths.iter().map(PathData::view),
            cfg,
            c.n,
            c.m,
            &mut initial_states,
        ));
    }
    Ok(BatchSummary {
        moments,
        initial_states,
    })
}

impl TrajectoryBatch {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn behavior_gain(&self) -> &FeedbackGain {
        &self.behavior_gain
    }

    pub fn noises(&self) -> &[ExplorationNoise] {
        &self.noises
    }

    pub fn sub_batches(&self) -> &[SubBatch] {
        &self.sub_batches
    }

    fn path_len(&self) -> (usize, usize) {
        let points = self.config.n_grid + 1;
        (points * self.n, points * self.m)
    }

    /// Grid states of path `k` in sub-batch `h`, one row per grid point.
    pub fn path_states(&self, h: usize, k: usize) -> &[f64] {
        let (sl, _) = self.path_len();
        &self.sub_batches[h].states[k * sl..(k + 1) * sl]
    }

    pub fn path_inputs(&self, h: usize, k: usize) -> &[f64] {
        let (_, il) = self.path_len();
        &self.sub_batches[h].inputs[k * il..(k + 1) * il]
    }

    fn view(&self, h: usize, k: usize) -> PathView<'_> {
        let (n, m) = (self.n, self.m);
        let sb = &self.sub_batches[h];
        PathView {
            states: self.path_states(h, k),
            inputs: self.path_inputs(h, k),
            xx: &sb.fine_xx[k * n * n..(k + 1) * n * n],
            ux: &sb.fine_ux[k * m * n..(k + 1) * m * n],
            uu: &sb.fine_uu[k * m * m..(k + 1) * m * m],
        }
    }

    /// Initial draws of every path, sub-batch by sub-batch.
    pub fn initial_states(&self) -> Vec<Vector> {
        (0..self.sub_batches.len())
            .flat_map(|h| (0..self.config.n_traj).map(move |k| (h, k)))
            .map(|(h, k)| Vector::from_column_slice(&self.path_states(h, k)[..self.n]))
            .collect()
    }

    pub fn summary(&self) -> BatchSummary {
        self.summary_with(self.config.quadrature)
    }

    /// Row moments under a quadrature other than the one the batch was
    /// configured with.
    pub fn summary_with(&self, quadrature: Quadrature) -> BatchSummary {
        let cfg = SimConfig {
            quadrature,
            ..self.config.clone()
        };
        let mut initial_states = Vec::with_capacity(self.sub_batches.len() * cfg.n_traj);
        let moments = (0..self.sub_batches.len())
            .map(|h| {
                summarize_paths(
                    (0..cfg.n_traj).map(|k| self.view(h, k)),
                    &cfg,
                    self.n,
                    self.m,
                    &mut initial_states,
                )
            })
            .collect();
        BatchSummary {
            moments,
            initial_states,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = Header {
            n: self.n,
            m: self.m,
            config: self.config.clone(),
            behavior_gain: self.behavior_gain.row_major(),
            noises: self.noises.clone(),
            grid: (0..=self.config.n_grid).map(|q| q as f64 * self.config.grid_step()).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::BatchFormat(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(BATCH_FORMAT_VERSION)?;
        w.write_u64::<LittleEndian>(json.len() as u64)?;
        w.write_all(&json)?;
        for sb in &self.sub_batches {
            for s in &sb.seeds {
                w.write_u64::<LittleEndian>(*s)?;
            }
            for block in [&sb.states, &sb.inputs, &sb.fine_xx, &sb.fine_ux, &sb.fine_uu] {
                for v in block.iter() {
                    w.write_f64::<LittleEndian>(*v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::BatchFormat("not a trajectory batch file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != BATCH_FORMAT_VERSION {
            return Err(Error::BatchFormat(format!(
                "unsupported format version {version} (expected {BATCH_FORMAT_VERSION})"
            )));
        }
        let len = r.read_u64::<LittleEndian>()? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| Error::BatchFormat(e.to_string()))?;
        let (n, m, cfg) = (header.n, header.m, header.config);
        let behavior_gain = FeedbackGain::from_rows(m, n, &header.behavior_gain)?;
        let points = cfg.n_grid + 1;
        let read_f64s = |r: &mut R, count: usize| -> Result<Vec<f64>> {
            let mut v = vec![0.0; count];
            r.read_f64_into::<LittleEndian>(&mut v)?;
            Ok(v)
        };
        let mut sub_batches = Vec::with_capacity(cfg.l);
        for _ in 0..cfg.l {
            let mut seeds = vec![0u64; cfg.n_traj];
            r.read_u64_into::<LittleEndian>(&mut seeds)?;
            sub_batches.push(SubBatch {
                seeds,
                states: read_f64s(r, cfg.n_traj * points * n)?,
                inputs: read_f64s(r, cfg.n_traj * points * m)?,
                fine_xx: read_f64s(r, cfg.n_traj * n * n)?,
                fine_ux: read_f64s(r, cfg.n_traj * m * n)?,
                fine_uu: read_f64s(r, cfg.n_traj * m * m)?,
            });
        }
        Ok(Self {
            n,
            m,
            config: cfg,
            behavior_gain,
            noises: header.noises,
            sub_batches,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    m: usize,
    config: SimConfig,
    behavior_gain: Vec<f64>,
    noises: Vec<ExplorationNoise>,
    grid: Vec<f64>,
}

pub fn build_static_matrices(batch: &TrajectoryBatch) -> Result<AdpDataMatrices> {
    AdpDataMatrices::from_moments(&batch.summary().moments)
}

pub fn build_policy_matrices(
    batch: &TrajectoryBatch,
    k: &FeedbackGain,
    q: &SymMat,
    r: &SymMat,
) -> Result<PolicyMatrices> {
    policy_matrices(&batch.summary().moments, k, q, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::estimate_sigma0;
    use crate::sde::noise::NoiseDesign;

    fn sec4_alpha(alpha: f64) -> StochasticLinearSystem {
        StochasticLinearSystem::from_rows(
            2,
            1,
            &[3.0, 6.0, 11.0, -7.0],
            &[7.0, 2.0],
            &[0.6, 0.1, -0.3, 0.7],
            &[0.2, 0.1],
        )
        .unwrap()
        .shift(alpha)
    }

    fn small_cfg(quadrature: Quadrature) -> SimConfig {
        SimConfig {
            t0: 0.2,
            n_grid: 10,
            substeps: 10,
            n_traj: 50,
            l: 6,
            master_seed: 42,
            quadrature,
        }
    }

    #[test]
    fn streaming_matches_stored_batch_and_is_deterministic() {
        let sys = sec4_alpha(9.0);
        let k0 = FeedbackGain::zeros(1, 2);
        let cfg = small_cfg(Quadrature::Substep);
        let noises = NoiseDesign::default().draw(1, cfg.l);
        let init = InitialState::standard_normal(2);
        let a = collect_batch(&sys, &k0, &noises, &init, &cfg).unwrap();
        let b = collect_batch(&sys, &k0, &noises, &init, &cfg).unwrap();
        assert_eq!(a, b);
        let streamed = collect_moments(&sys, &k0, &noises, &init, &cfg).unwrap();
        assert_eq!(streamed, a.summary());
        assert_ne!(a.sub_batches()[0].states, a.sub_batches()[1].states);
    }

    #[test]
    fn inputs_follow_behavior_policy_on_grid() {
        let sys = sec4_alpha(9.0);
        let k0 = FeedbackGain::from_rows(1, 2, &[-1.0, 0.5]).unwrap();
        let cfg = small_cfg(Quadrature::LeftEndpoint);
        let noises = NoiseDesign::default().draw(1, cfg.l);
        let batch = collect_batch(&sys, &k0, &noises, &InitialState::standard_normal(2), &cfg).unwrap();
        let (h, k) = (3, 7);
        let xs = batch.path_states(h, k);
        let us = batch.path_inputs(h, k);
        for q in 0..=cfg.n_grid {
            let t = q as f64 * cfg.grid_step();
            let expect = -xs[2 * q] + 0.5 * xs[2 * q + 1] + noises[h].eval(t)[0];
            assert!((us[q] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn left_endpoint_single_interval() {
        let sys = sec4_alpha(9.0);
        let k0 = FeedbackGain::zeros(1, 2);
        let cfg = SimConfig {
            n_grid: 1,
            n_traj: 1,
            ..small_cfg(Quadrature::LeftEndpoint)
        };
        let noises = NoiseDesign::default().draw(1, cfg.l);
        let batch = collect_batch(&sys, &k0, &noises, &InitialState::standard_normal(2), &cfg).unwrap();
        let d = build_static_matrices(&batch).unwrap();
        let x0 = batch.path_states(0, 0);
        let u0 = batch.path_inputs(0, 0)[0];
        for i in 0..2 {
            assert!((d.i_xu[(0, i)] - cfg.t0 * x0[i] * u0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigma0_estimate_and_round_trip() {
        let sys = sec4_alpha(9.0);
        let k0 = FeedbackGain::zeros(1, 2);
        let cfg = SimConfig {
            n_traj: 2000,
            n_grid: 2,
            substeps: 2,
            l: 6,
            ..small_cfg(Quadrature::Trapezoid)
        };
        let noises = NoiseDesign::default().draw(1, cfg.l);
        let batch = collect_batch(&sys, &k0, &noises, &InitialState::standard_normal(2), &cfg).unwrap();
        let s = estimate_sigma0(&batch.initial_states()).unwrap();
        assert!((s.as_mat() - crate::matops::Mat::identity(2, 2)).amax() < 0.05);

        let mut buf = Vec::new();
        batch.write_to(&mut buf).unwrap();
        let back = TrajectoryBatch::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, batch);
        buf[0] = b'x';
        assert!(matches!(
            TrajectoryBatch::read_from(&mut buf.as_slice()),
            Err(Error::BatchFormat(_))
        ));
    }

    #[test]
    fn noise_count_must_match_rows() {
        let sys = sec4_alpha(9.0);
        let cfg = small_cfg(Quadrature::Substep);
        let noises = NoiseDesign::default().draw(1, 2);
        let err = collect_moments(&sys, &FeedbackGain::zeros(1, 2), &noises, &InitialState::standard_normal(2), &cfg)
            .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
