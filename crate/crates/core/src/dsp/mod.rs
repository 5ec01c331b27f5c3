//! Waveform I/O, degradation, time-frequency transforms and evaluation
//! metrics.

mod filter;
mod metrics;
mod stats;
mod stft;
mod wav;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use filter::{degrade, design_lowpass, FirFilter, HIGH_RATE, LOW_RATE};
pub use metrics::{
    band_energy_above, lsd, lsd_signal, write_metric_csv, MetricRow, LSD_EPSILON, LSD_STFT,
};
pub use stats::{mann_whitney_u, MannWhitney, SIGNIFICANCE_LEVEL};
pub(crate) use stft::padded_source;
pub use stft::{
    hann_periodic, istft, istft_signal, reflect_index, stft, stft_signal, ComplexSpectrogram,
    StftConfig, StftPlan,
};
pub use wav::{load_wav, read_wav, save_wav, write_wav, BitDepth};

/// Multichannel sampled waveform.
///
/// Channels are stored planar; every channel has the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer<T> {
    channels: Vec<Vec<T>>,
    sample_rate: u32,
}

impl<T: Scalar> AudioBuffer<T> {
    pub fn new(channels: Vec<Vec<T>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::arg("audio buffer needs at least one channel"));
        }
        if sample_rate == 0 {
            return Err(Error::arg("sample rate must be positive"));
        }
        let len = channels[0].len();
        if let Some((i, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != len) {
            return Err(Error::arg(format!(
                "channel {i} has {} samples, channel 0 has {len}",
                c.len()
            )));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn silence(num_channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![vec![T::zero(); len]; num_channels.max(1)], sample_rate)
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, index: usize) -> &[T] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<T>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<T>> {
        self.channels
    }

    /// Applies `f` to every channel independently (in parallel) and
    /// reassembles the result at `sample_rate`.
    pub fn try_map_channels<F>(&self, sample_rate: u32, f: F) -> Result<Self>
    where
        F: Fn(&[T]) -> Result<Vec<T>> + Sync,
    {
        let channels = self
            .channels
            .par_iter()
            .map(|c| f(c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(channels, sample_rate)
    }

    /// Returns a copy with every sample multiplied by `gain`.
    pub fn scaled(&self, gain: T) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&v| v * gain).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn convert<U: Scalar>(&self) -> AudioBuffer<U> {
        AudioBuffer {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&v| U::from_f64_lossy(v.to_f64_lossy())).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Sub-range `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(Error::arg(format!(
                "slice {start}..{end} out of range for length {}",
                self.len()
            )));
        }
        Self::new(
            self.channels.iter().map(|c| c[start..end].to_vec()).collect(),
            self.sample_rate,
        )
    }

    pub fn rms(&self) -> f64 {
        let n = (self.len() * self.num_channels()).max(1) as f64;
        let sum: f64 = self
            .channels
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| {
                let v = v.to_f64_lossy();
                v * v
            })
            .sum();
        (sum / n).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.channels
            .iter()
            .all(|c| c.iter().all(|v| v.is_finite()))
    }
}
