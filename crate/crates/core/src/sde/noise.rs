use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::Vector;

/// A sum of sinusoids `Σⱼ ampⱼ · sin(freqⱼ·t + phaseⱼ)` for one input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub amplitudes: Vec<f64>,
    /// Angular frequencies (rad per unit time).
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(amplitudes: Vec<f64>, frequencies: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        let spec = Self {
            amplitudes,
            frequencies,
            phases,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.amplitudes.len();
        if len == 0 || self.frequencies.len() != len || self.phases.len() != len {
            return Err(Error::InvalidParameter(format!(
                "noise spec needs equal, non-empty component lists (got {}, {}, {})",
                len,
                self.frequencies.len(),
                self.phases.len()
            )));
        }
        let finite = self
            .amplitudes
            .iter()
            .chain(&self.frequencies)
            .chain(&self.phases)
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("noise spec has non-finite entries".into()));
        }
        Ok(())
    }

    /// A single zero-amplitude component.
    pub fn silent() -> Self {
        Self {
            amplitudes: vec![0.0],
            frequencies: vec![1.0],
            phases: vec![0.0],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.amplitudes
            .iter()
            .zip(&self.frequencies)
            .zip(&self.phases)
            .map(|((a, f), p)| a * (f * t + p).sin())
            .sum()
    }
}

/// The same sinusoid sum on every one of `m` input channels.
pub fn exploration_noise(t: f64, spec: &NoiseSpec, m: usize) -> Vector {
    Vector::from_element(m, spec.eval(t))
}

/// Exploration signal `e(t) ∈ ℝᵐ`, one [`NoiseSpec`] per input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationNoise {
    channels: Vec<NoiseSpec>,
}

impl ExplorationNoise {
    pub fn new(channels: Vec<NoiseSpec>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidParameter("exploration noise needs ≥ 1 channel".into()));
        }
        for c in &channels {
            c.validate()?;
        }
        Ok(Self { channels })
    }

    pub fn broadcast(spec: NoiseSpec, m: usize) -> Result<Self> {
        Self::new(vec![spec; m])
    }

    pub fn silent(m: usize) -> Self {
        Self {
            channels: vec![NoiseSpec::silent(); m],
        }
    }

    pub fn channels(&self) -> &[NoiseSpec] {
        &self.channels
    }

    pub fn m(&self) -> usize {
        self.channels.len()
    }

    pub fn eval(&self, t: f64) -> Vector {
        Vector::from_iterator(self.m(), self.channels.iter().map(|c| c.eval(t)))
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.channels) {
            *o = c.eval(t);
        }
    }
}

/// Recipe for drawing exploration signals: `components` sinusoids per
/// channel, amplitude `amplitude` each, frequencies uniform in
/// `[freq_min, freq_max]`, phases uniform in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDesign {
    pub components: usize,
    pub amplitude: f64,
    pub freq_min: f64,
    pub freq_max: f64,
    pub seed: u64,
}

impl Default for NoiseDesign {
    fn default() -> Self {
        Self {
            components: 10,
            amplitude: 1.0,
            freq_min: 0.5,
            freq_max: 50.0,
            seed: 0x5eed_0f_e0,
        }
    }
}

impl NoiseDesign {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::InvalidParameter("noise design needs ≥ 1 component".into()));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::InvalidParameter("noise amplitude must be finite and ≥ 0".into()));
        }
        if !(self.freq_min > 0.0 && self.freq_max >= self.freq_min && self.freq_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise frequency range [{}, {}] is invalid",
                self.freq_min, self.freq_max
            )));
        }
        Ok(())
    }

    /// One independent signal per sub-batch, each with independent channels.
    pub fn draw(&self, m: usize, sub_batches: usize) -> Vec<ExplorationNoise> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..sub_batches)
            .map(|_| {
                let channels = (0..m)
                    .map(|_| {
                        let frequencies = (0..self.components)
                            .map(|_| rng.random_range(self.freq_min..=self.freq_max))
                            .collect();
                        let phases = (0..self.components)
                            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                            .collect();
                        NoiseSpec {
                            amplitudes: vec![self.amplitude; self.components],
                            frequencies,
                            phases,
                        }
                    })
                    .collect();
                ExplorationNoise { channels }
            })
            .collect()
    }
}
